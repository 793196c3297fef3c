//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use coin_core::nn::gradcheck::{grad_check, GradCheckReport};
use coin_core::nn::{
    gelu, gelu_grad, Batch, DetectorHead, Encoder, EncoderConfig, EncoderLayer, LayerNorm, Linear, LmHead,
    Parameters, ParametersExt, SelfAttention, Sequence,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_EPS: f64 = 1e-4;

pub fn randn(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Redraws every parameter from N(0, scale²) so that checks do not run at a
/// degenerate initialization (unit gains, zero biases).
pub fn scramble<M: Parameters<f64>>(model: &mut M, scale: f64, rng: &mut ChaCha8Rng) {
    model.visit_mut("", &mut |_, data| {
        for v in data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        }
    });
}

/// A module together with its input, both treated as differentiable.
#[derive(Clone)]
pub struct Probe<M> {
    pub module: M,
    pub input: Array2<f64>,
}

impl<M: Parameters<f64>> Parameters<f64> for Probe<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.module.visit(&format!("{prefix}module"), f);
        f("input", self.input.shape(), self.input.as_slice().expect("standard layout"));
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.module.visit_mut(&format!("{prefix}module"), f);
        f("input", self.input.as_slice_mut().expect("standard layout"));
    }
}

/// Checks `L = Σ R ⊙ forward(x)` for a fixed random projection `R`.
fn check_projected<M, Fwd, Bwd>(probe: Probe<M>, out_shape: (usize, usize), forward: Fwd, backward: Bwd, rng: &mut ChaCha8Rng) -> GradCheckReport
where
    M: Parameters<f64> + Clone,
    Fwd: Fn(&Probe<M>) -> Array2<f64>,
    Bwd: Fn(&Probe<M>, &Array2<f64>, &mut Probe<M>),
{
    let r = randn(out_shape.0, out_shape.1, 1.0, rng);
    let mut grad = probe.zeroed();
    backward(&probe, &r, &mut grad);
    grad_check(&probe, &grad, |p| (forward(p) * &r).sum(), FD_EPS)
}

pub fn check_linear(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = Linear::<f64>::new(6, 5, 1.0, &mut rng);
    scramble(&mut module, 0.5, &mut rng);
    let probe = Probe { module, input: randn(4, 6, 1.0, &mut rng) };
    check_projected(
        probe,
        (4, 5),
        |p| p.module.forward(p.input.view()),
        |p, r, g| g.input = p.module.backward(p.input.view(), r.view(), &mut g.module),
        &mut rng,
    )
}

pub fn check_layer_norm(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = LayerNorm::<f64>::new(8);
    scramble(&mut module, 1.0, &mut rng);
    let probe = Probe { module, input: randn(5, 8, 1.5, &mut rng) };
    check_projected(
        probe,
        (5, 8),
        |p| p.module.forward(p.input.view()).0,
        |p, r, g| {
            let (_, cache) = p.module.forward(p.input.view());
            g.input = p.module.backward(&cache, r.view(), &mut g.module);
        },
        &mut rng,
    )
}

/// Two packed sequences so that the per-span masking is exercised.
pub fn check_attention(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = SelfAttention::<f64>::new(8, 2, 1.0, &mut rng);
    scramble(&mut module, 0.4, &mut rng);
    let spans = vec![0..3, 3..7];
    let probe = Probe { module, input: randn(7, 8, 1.0, &mut rng) };
    let s2 = spans.clone();
    check_projected(
        probe,
        (7, 8),
        move |p| p.module.forward(p.input.view(), &spans).0,
        move |p, r, g| {
            let (_, cache) = p.module.forward(p.input.view(), &s2);
            g.input = p.module.backward(&cache, r.view(), &s2, &mut g.module);
        },
        &mut rng,
    )
}

#[derive(Clone)]
pub struct Ffn {
    pub w_in: Linear<f64>,
    pub w_out: Linear<f64>,
}

impl Parameters<f64> for Ffn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.w_in.visit(&format!("{prefix}in"), f);
        self.w_out.visit(&format!("{prefix}out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.w_in.visit_mut(&format!("{prefix}in"), f);
        self.w_out.visit_mut(&format!("{prefix}out"), f);
    }
}

/// Position-wise feed-forward block `GELU(x W1 + b1) W2 + b2`.
pub fn check_ffn(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = Ffn {
        w_in: Linear::new(8, 16, 1.0, &mut rng),
        w_out: Linear::new(16, 8, 1.0, &mut rng),
    };
    scramble(&mut module, 0.4, &mut rng);
    let probe = Probe { module, input: randn(5, 8, 1.0, &mut rng) };
    check_projected(
        probe,
        (5, 8),
        |p| {
            let u = p.module.w_in.forward(p.input.view());
            p.module.w_out.forward(u.mapv(gelu).view())
        },
        |p, r, g| {
            let u = p.module.w_in.forward(p.input.view());
            let mut da = p.module.w_out.backward(u.mapv(gelu).view(), r.view(), &mut g.module.w_out);
            da.zip_mut_with(&u, |d, &x| *d *= gelu_grad(x));
            g.input = p.module.w_in.backward(p.input.view(), da.view(), &mut g.module.w_in);
        },
        &mut rng,
    )
}

pub fn tiny_encoder_config(n_layers: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_layers,
        n_heads: 2,
        d_ffn: 16,
        max_len: 16,
        dropout: 0.0,
        init_std: 0.5,
    }
}

pub fn check_encoder_layer(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = EncoderLayer::<f64>::new(&tiny_encoder_config(1), &mut rng);
    scramble(&mut module, 0.4, &mut rng);
    let spans = vec![0..4, 4..6];
    let probe = Probe { module, input: randn(6, 8, 1.0, &mut rng) };
    let s2 = spans.clone();
    check_projected(
        probe,
        (6, 8),
        move |p| p.module.forward(p.input.view(), &spans, None).0,
        move |p, r, g| {
            let (_, cache) = p.module.forward(p.input.view(), &s2, None);
            g.input = p.module.backward(&cache, r.view(), &s2, &mut g.module);
        },
        &mut rng,
    )
}

pub fn sample_batch(rng: &mut ChaCha8Rng, vocab: usize) -> Batch<f64> {
    let seqs = [5usize, 7].map(|n| Sequence {
        tokens: (0..n).map(|_| rng.random_range(0..vocab)).collect(),
        segments: Some((0..n).map(|i| (i >= n / 2) as usize).collect()),
        positions: Some((0..n).map(|i| (i * 2) % 9).collect()),
        channel_offsets: Some((0..n).map(|i| if i % 3 == 0 { 0.7 } else { 0.0 }).collect()),
    });
    Batch::from_sequences(seqs.iter()).expect("valid batch")
}

/// Embedding tables and their normalization, through a zero-layer encoder.
pub fn check_embeddings(seed: u64) -> GradCheckReport {
    check_encoder_stack(seed, 0)
}

pub fn check_encoder_stack(seed: u64, n_layers: usize) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::<f64>::new(tiny_encoder_config(n_layers), 11, &mut rng).expect("valid config");
    scramble(&mut enc, 0.5, &mut rng);
    let batch = sample_batch(&mut rng, 11);
    let r = randn(batch.rows(), 8, 1.0, &mut rng);
    let mut grad = enc.zeroed();
    let (_, cache) = enc.forward_train(&batch, None).expect("valid batch");
    enc.backward(&batch, &cache, r.clone(), &mut grad);
    grad_check(&enc, &grad, |e| (e.encode(&batch).expect("valid batch") * &r).sum(), FD_EPS)
}

/// Classification head including its GELU and layer normalization.
pub fn check_detector_head(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = DetectorHead::<f64>::new(8, 1.0, &mut rng);
    scramble(&mut module, 0.5, &mut rng);
    let probe = Probe { module, input: randn(6, 8, 1.0, &mut rng) };
    let r: Array1<f64> = randn(1, 6, 1.0, &mut rng).row(0).to_owned();
    let mut grad = probe.zeroed();
    let (_, cache) = probe.module.forward(probe.input.view());
    grad.input = probe.module.backward(&cache, &r, &mut grad.module);
    grad_check(&probe, &grad, |p| (p.module.forward(p.input.view()).0 * &r).sum(), FD_EPS)
}

#[derive(Clone)]
pub struct LmProbe {
    pub head: LmHead<f64>,
    pub token_embedding: Array2<f64>,
    pub input: Array2<f64>,
}

impl Parameters<f64> for LmProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.head.visit(&format!("{prefix}head"), f);
        f("token_embedding", self.token_embedding.shape(), self.token_embedding.as_slice().expect("standard layout"));
        f("input", self.input.shape(), self.input.as_slice().expect("standard layout"));
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.head.visit_mut(&format!("{prefix}head"), f);
        f("token_embedding", self.token_embedding.as_slice_mut().expect("standard layout"));
        f("input", self.input.as_slice_mut().expect("standard layout"));
    }
}

/// Vocabulary projection, tied to the token embedding or with its own weight.
pub fn check_lm_head(seed: u64, tied: bool) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = LmProbe {
        head: LmHead::new(8, 9, tied, 1.0, &mut rng),
        token_embedding: randn(9, 8, 0.5, &mut rng),
        input: randn(4, 8, 1.0, &mut rng),
    };
    scramble(&mut probe.head, 0.5, &mut rng);
    let r = randn(4, 9, 1.0, &mut rng);
    let mut grad = probe.zeroed();
    let LmProbe { head: gh, token_embedding: gt, input: gi } = &mut grad;
    *gi = probe.head.backward(probe.input.view(), r.view(), &probe.token_embedding, gh, gt);
    grad_check(
        &probe,
        &grad,
        |p| (p.head.forward(p.input.view(), &p.token_embedding) * &r).sum(),
        FD_EPS,
    )
}

/// Every parameterized component, by name.
pub fn component_checks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("linear", check_linear(seed)),
        ("embedding", check_embeddings(seed)),
        ("attention", check_attention(seed)),
        ("ffn", check_ffn(seed)),
        ("layer_norm", check_layer_norm(seed)),
        ("encoder_layer", check_encoder_layer(seed)),
        ("detector_head", check_detector_head(seed)),
        ("lm_head_tied", check_lm_head(seed, true)),
        ("lm_head_untied", check_lm_head(seed, false)),
    ]
}

/// Counts recomputed from set definitions: a hit at detection level compares
/// the edited position set with the gold error set.
pub fn metrics_oracle(corpus: &[(Vec<char>, Vec<char>, Vec<char>)], detection: bool) -> (f64, f64, f64) {
    use std::collections::BTreeSet;
    let diff = |a: &[char], b: &[char]| -> BTreeSet<usize> { (0..a.len()).filter(|&i| a[i] != b[i]).collect() };
    let mut tp = 0.0;
    let mut pred = 0.0;
    let mut gold = 0.0;
    for (x, yhat, y) in corpus {
        let edits = diff(x, yhat);
        let errors = diff(x, y);
        if !edits.is_empty() {
            pred += 1.0;
        }
        if !errors.is_empty() {
            gold += 1.0;
        }
        let hit = if detection { edits == errors } else { yhat == y };
        if !edits.is_empty() && hit {
            tp += 1.0;
        }
    }
    let p = if pred > 0.0 { tp / pred } else { 0.0 };
    let r = if gold > 0.0 { tp / gold } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Random corpus over a 3-letter alphabet: up to 6 sentences of length up to 8.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<(Vec<char>, Vec<char>, Vec<char>)> {
    fn draw(base: &[char], p: f64, rng: &mut ChaCha8Rng) -> Vec<char> {
        let alphabet = ['a', 'b', 'c'];
        base.iter()
            .map(|&c| if rng.random_bool(p) { alphabet[rng.random_range(0..3)] } else { c })
            .collect()
    }
    let n = rng.random_range(1..=6);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=8);
            let y = draw(&vec!['a'; len], 1.0, rng);
            let x = draw(&y, 0.25, rng);
            let yhat = if rng.random_bool(0.3) { x.clone() } else { draw(&y, 0.2, rng) };
            (x, yhat, y)
        })
        .collect()
}

/// A configuration small enough to run a whole experiment in seconds.
pub fn tiny_experiment_config() -> coin_core::CoinConfig {
    let mut cfg = coin_core::CoinConfig::default();
    cfg.data.n_train = 60;
    cfg.data.n_dev = 30;
    cfg.data.n_test = 20;
    cfg.encoder = EncoderConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ffn: 32,
        max_len: 48,
        dropout: 0.0,
        init_std: 0.02,
    };
    cfg.detector.train.epochs = 1;
    cfg.corrector.train.epochs = 1;
    cfg.experiment.seeds = vec![0, 1];
    cfg
}
