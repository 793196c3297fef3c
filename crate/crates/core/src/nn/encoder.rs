use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::nn::attention::{AttentionCache, SelfAttention};
use crate::nn::layers::{dropout_mask, gelu, gelu_grad_from_output, normal_array, LayerNormCache};
use crate::nn::params::{join, visit_array, visit_array_mut};
use crate::nn::{Float, LayerNorm, Linear, Parameters};

/// Number of segment types (source side and rewritten side).
pub const NUM_SEGMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 128,
            max_len: 128,
            dropout: 0.0,
            init_std: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(CoinError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ffn == 0 || self.max_len == 0 {
            return Err(CoinError::InvalidConfig("d_ffn and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoinError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One encoder input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<F> {
    pub tokens: Vec<usize>,
    /// Segment id per token; all zeros when absent.
    pub segments: Option<Vec<usize>>,
    /// Position id per token; `0..n` when absent.
    pub positions: Option<Vec<usize>>,
    /// Scalar added to every channel of each token's embedding.
    pub channel_offsets: Option<Vec<F>>,
}

impl<F> Sequence<F> {
    pub fn tokens(tokens: Vec<usize>) -> Self {
        Sequence {
            tokens,
            segments: None,
            positions: None,
            channel_offsets: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Several sequences packed row-wise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch<F> {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub positions: Vec<usize>,
    pub offsets: Vec<F>,
    pub spans: Vec<Range<usize>>,
}

impl<F: Float> Batch<F> {
    pub fn new() -> Self {
        Batch {
            tokens: Vec::new(),
            segments: Vec::new(),
            positions: Vec::new(),
            offsets: Vec::new(),
            spans: Vec::new(),
        }
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a Sequence<F>>) -> Result<Self> {
        let mut b = Batch::new();
        for s in seqs {
            b.push(s)?;
        }
        Ok(b)
    }

    pub fn push(&mut self, seq: &Sequence<F>) -> Result<()> {
        let n = seq.tokens.len();
        for (name, len) in [
            ("segments", seq.segments.as_ref().map(Vec::len)),
            ("positions", seq.positions.as_ref().map(Vec::len)),
            ("channel_offsets", seq.channel_offsets.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != n {
                    log::debug!("{name} length {len} does not match {n} tokens");
                    return Err(CoinError::ShapeMismatch {
                        expected: n,
                        actual: len,
                    });
                }
            }
        }
        let start = self.tokens.len();
        self.tokens.extend_from_slice(&seq.tokens);
        match &seq.segments {
            Some(s) => self.segments.extend_from_slice(s),
            None => self.segments.extend(std::iter::repeat_n(0, n)),
        }
        match &seq.positions {
            Some(p) => self.positions.extend_from_slice(p),
            None => self.positions.extend(0..n),
        }
        match &seq.channel_offsets {
            Some(o) => self.offsets.extend_from_slice(o),
            None => self.offsets.extend(std::iter::repeat_n(F::zero(), n)),
        }
        self.spans.push(start..start + n);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }
}

/// Token, position and segment embeddings followed by layer normalization.
/// Channel offsets are added after normalization so they survive it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings<F> {
    pub token: Array2<F>,
    pub position: Array2<F>,
    pub segment: Array2<F>,
    pub norm: LayerNorm<F>,
}

#[derive(Debug, Clone)]
struct EmbeddingCache<F> {
    norm: LayerNormCache<F>,
    dropout: Option<Array2<F>>,
}

impl<F: Float> Embeddings<F> {
    fn new<R: Rng + ?Sized>(vocab: usize, cfg: &EncoderConfig, rng: &mut R) -> Self {
        Embeddings {
            token: normal_array(vocab, cfg.d_model, cfg.init_std, rng),
            position: normal_array(cfg.max_len, cfg.d_model, cfg.init_std, rng),
            segment: normal_array(NUM_SEGMENTS, cfg.d_model, cfg.init_std, rng),
            norm: LayerNorm::new(cfg.d_model),
        }
    }

    fn forward(
        &self,
        batch: &Batch<F>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Array2<F>, EmbeddingCache<F>) {
        let d = self.token.ncols();
        let mut e = Array2::zeros((batch.rows(), d));
        for (i, mut row) in e.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&self.token.row(batch.tokens[i]));
            row += &self.position.row(batch.positions[i]);
            row += &self.segment.row(batch.segments[i]);
        }
        let (mut x, norm) = self.norm.forward(e.view());
        let mask = dropout.map(|(p, rng)| {
            let m = dropout_mask(x.nrows(), d, p, rng);
            x *= &m;
            m
        });
        for (mut row, &off) in x.axis_iter_mut(Axis(0)).zip(&batch.offsets) {
            if off != F::zero() {
                row += off;
            }
        }
        (x, EmbeddingCache { norm, dropout: mask })
    }

    fn backward(&self, batch: &Batch<F>, cache: &EmbeddingCache<F>, dx: Array2<F>, grad: &mut Embeddings<F>) {
        let mut dx = dx;
        if let Some(m) = &cache.dropout {
            dx *= m;
        }
        let de = self.norm.backward(&cache.norm, dx.view(), &mut grad.norm);
        for (i, row) in de.axis_iter(Axis(0)).enumerate() {
            let mut t = grad.token.row_mut(batch.tokens[i]);
            t += &row;
            let mut p = grad.position.row_mut(batch.positions[i]);
            p += &row;
            let mut s = grad.segment.row_mut(batch.segments[i]);
            s += &row;
        }
    }
}

impl<F: Float> Parameters<F> for Embeddings<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        visit_array(&join(prefix, "token"), &self.token, f);
        visit_array(&join(prefix, "position"), &self.position, f);
        visit_array(&join(prefix, "segment"), &self.segment, f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        visit_array_mut(&join(prefix, "token"), &mut self.token, f);
        visit_array_mut(&join(prefix, "position"), &mut self.position, f);
        visit_array_mut(&join(prefix, "segment"), &mut self.segment, f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Post-norm transformer block: `h = LN(x + Attn(x))`, `y = LN(h + FFN(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F> {
    pub attention: SelfAttention<F>,
    pub attention_norm: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
    pub ffn_norm: LayerNorm<F>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<F> {
    attention: AttentionCache<F>,
    attention_dropout: Option<Array2<F>>,
    attention_norm: LayerNormCache<F>,
    hidden: Array2<F>,
    pre_activation: Array2<F>,
    activation: Array2<F>,
    ffn_dropout: Option<Array2<F>>,
    ffn_norm: LayerNormCache<F>,
}

impl<F: Float> EncoderLayer<F> {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        EncoderLayer {
            attention: SelfAttention::new(cfg.d_model, cfg.n_heads, cfg.init_std, rng),
            attention_norm: LayerNorm::new(cfg.d_model),
            ffn_in: Linear::new(cfg.d_model, cfg.d_ffn, cfg.init_std, rng),
            ffn_out: Linear::new(cfg.d_ffn, cfg.d_model, cfg.init_std, rng),
            ffn_norm: LayerNorm::new(cfg.d_model),
        }
    }

    pub fn forward(
        &self,
        x: ArrayView2<F>,
        spans: &[Range<usize>],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Array2<F>, LayerCache<F>) {
        let (mut a, attention) = self.attention.forward(x, spans);
        let attention_dropout = dropout.as_mut().map(|(p, rng)| {
            let m = dropout_mask(a.nrows(), a.ncols(), *p, *rng);
            a *= &m;
            m
        });
        a += &x;
        let (hidden, attention_norm) = self.attention_norm.forward(a.view());
        let pre_activation = self.ffn_in.forward(hidden.view());
        let activation = pre_activation.mapv(gelu);
        let mut f = self.ffn_out.forward(activation.view());
        let ffn_dropout = dropout.as_mut().map(|(p, rng)| {
            let m = dropout_mask(f.nrows(), f.ncols(), *p, *rng);
            f *= &m;
            m
        });
        f += &hidden;
        let (y, ffn_norm) = self.ffn_norm.forward(f.view());
        (
            y,
            LayerCache {
                attention,
                attention_dropout,
                attention_norm,
                hidden,
                pre_activation,
                activation,
                ffn_dropout,
                ffn_norm,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &LayerCache<F>,
        dy: ArrayView2<F>,
        spans: &[Range<usize>],
        grad: &mut EncoderLayer<F>,
    ) -> Array2<F> {
        let dsum = self.ffn_norm.backward(&cache.ffn_norm, dy, &mut grad.ffn_norm);
        let mut df = dsum.clone();
        if let Some(m) = &cache.ffn_dropout {
            df *= m;
        }
        let mut dact = self.ffn_out.backward(cache.activation.view(), df.view(), &mut grad.ffn_out);
        ndarray::Zip::from(&mut dact)
            .and(&cache.pre_activation)
            .and(&cache.activation)
            .for_each(|d, &u, &a| *d *= gelu_grad_from_output(u, a));
        let mut dhidden = self.ffn_in.backward(cache.hidden.view(), dact.view(), &mut grad.ffn_in);
        dhidden += &dsum;
        let dsum1 = self
            .attention_norm
            .backward(&cache.attention_norm, dhidden.view(), &mut grad.attention_norm);
        let mut da = dsum1.clone();
        if let Some(m) = &cache.attention_dropout {
            da *= m;
        }
        let mut dx = self
            .attention
            .backward(&cache.attention, da.view(), spans, &mut grad.attention);
        dx += &dsum1;
        dx
    }
}

impl<F: Float> Parameters<F> for EncoderLayer<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.attention_norm.visit(&join(prefix, "attention_norm"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit(&join(prefix, "ffn_norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.attention_norm.visit_mut(&join(prefix, "attention_norm"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit_mut(&join(prefix, "ffn_norm"), f);
    }
}

/// Transformer encoder producing hidden states `n × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub embeddings: Embeddings<F>,
    pub layers: Vec<EncoderLayer<F>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    embeddings: EmbeddingCache<F>,
    layers: Vec<LayerCache<F>>,
}

impl<F: Float> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embeddings = Embeddings::new(vocab_size, &config, rng);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::new(&config, rng))
            .collect();
        Ok(Encoder {
            config,
            vocab_size,
            embeddings,
            layers,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn check_batch(&self, batch: &Batch<F>) -> Result<()> {
        for span in &batch.spans {
            if span.len() > self.config.max_len {
                return Err(CoinError::TooLong {
                    len: span.len(),
                    max_len: self.config.max_len,
                });
            }
        }
        if let Some(&p) = batch.positions.iter().find(|&&p| p >= self.config.max_len) {
            return Err(CoinError::TooLong {
                len: p + 1,
                max_len: self.config.max_len,
            });
        }
        if let Some(&t) = batch.tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(CoinError::InvalidConfig(format!(
                "token id {t} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        if batch.segments.iter().any(|&s| s >= NUM_SEGMENTS) {
            return Err(CoinError::InvalidConfig("segment id out of range".into()));
        }
        Ok(())
    }

    /// Eval-mode forward pass.
    pub fn encode(&self, batch: &Batch<F>) -> Result<Array2<F>> {
        self.check_batch(batch)?;
        Ok(self.run(batch, None).0)
    }

    /// Encodes one sequence.
    pub fn encode_sequence(&self, seq: &Sequence<F>) -> Result<Array2<F>> {
        self.encode(&Batch::from_sequences([seq])?)
    }

    /// Training forward pass; dropout is active when `rng` is given and the
    /// configured rate is positive.
    pub fn forward_train(
        &self,
        batch: &Batch<F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<F>, EncoderCache<F>)> {
        self.check_batch(batch)?;
        Ok(self.run(batch, rng))
    }

    fn run(&self, batch: &Batch<F>, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<F>, EncoderCache<F>) {
        let p = self.config.dropout;
        if p <= 0.0 {
            rng = None;
        }
        let (mut x, embeddings) = self
            .embeddings
            .forward(batch, rng.as_deref_mut().map(|r| (p, r)));
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(x.view(), &batch.spans, rng.as_deref_mut().map(|r| (p, r)));
            layers.push(cache);
            x = y;
        }
        (x, EncoderCache { embeddings, layers })
    }

    pub fn backward(&self, batch: &Batch<F>, cache: &EncoderCache<F>, dh: Array2<F>, grad: &mut Encoder<F>) {
        let mut d = dh;
        for ((layer, lc), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            d = layer.backward(lc, d.view(), &batch.spans, g);
        }
        self.embeddings
            .backward(batch, &cache.embeddings, d, &mut grad.embeddings);
    }
}

impl<F: Float> Parameters<F> for Encoder<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.embeddings.visit(&join(prefix, "embeddings"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.embeddings.visit_mut(&join(prefix, "embeddings"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}
