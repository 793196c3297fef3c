use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::nn::layers::softmax_rows;
use crate::nn::params::join;
use crate::nn::{Float, Linear, Parameters};

/// Multi-head scaled dot-product self-attention.
///
/// Inputs are packed: rows of several sequences stacked, with `spans` giving
/// each sequence's row range. Tokens attend only within their own span.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// One probability matrix per (span, head), span-major.
    probs: Vec<Array2<F>>,
    context: Array2<F>,
}

impl<F: Float> SelfAttention<F> {
    pub fn new<R: Rng + ?Sized>(d_model: usize, n_heads: usize, std: f64, rng: &mut R) -> Self {
        assert!(n_heads > 0 && d_model % n_heads == 0, "d_model must divide into heads");
        SelfAttention {
            query: Linear::new(d_model, d_model, std, rng),
            key: Linear::new(d_model, d_model, std, rng),
            value: Linear::new(d_model, d_model, std, rng),
            output: Linear::new(d_model, d_model, std, rng),
            n_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.d_out() / self.n_heads
    }

    pub fn forward(&self, x: ArrayView2<F>, spans: &[Range<usize>]) -> (Array2<F>, AttentionCache<F>) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let dh = self.head_dim();
        let scale = F::c(1.0 / (dh as f64).sqrt());
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(spans.len() * self.n_heads);
        for span in spans {
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![span.clone(), cols.clone()]);
                let kh = k.slice(s![span.clone(), cols.clone()]);
                let vh = v.slice(s![span.clone(), cols.clone()]);
                let mut p = qh.dot(&kh.t());
                p *= scale;
                softmax_rows(&mut p);
                context.slice_mut(s![span.clone(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let out = self.output.forward(context.view());
        (
            out,
            AttentionCache {
                x: x.to_owned(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &AttentionCache<F>,
        dy: ArrayView2<F>,
        spans: &[Range<usize>],
        grad: &mut SelfAttention<F>,
    ) -> Array2<F> {
        let dcontext = self.output.backward(cache.context.view(), dy, &mut grad.output);
        let dh = self.head_dim();
        let scale = F::c(1.0 / (dh as f64).sqrt());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        let mut probs = cache.probs.iter();
        for span in spans {
            for h in 0..self.n_heads {
                let p = probs.next().expect("one cache entry per span and head");
                let cols = h * dh..(h + 1) * dh;
                let qh = cache.q.slice(s![span.clone(), cols.clone()]);
                let kh = cache.k.slice(s![span.clone(), cols.clone()]);
                let vh = cache.v.slice(s![span.clone(), cols.clone()]);
                let dctx = dcontext.slice(s![span.clone(), cols.clone()]);
                dv.slice_mut(s![span.clone(), cols.clone()]).assign(&p.t().dot(&dctx));
                let mut ds = dctx.dot(&vh.t());
                for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot: F = ds_row.iter().zip(p_row.iter()).map(|(a, b)| *a * *b).sum();
                    ds_row
                        .iter_mut()
                        .zip(p_row.iter())
                        .for_each(|(d, &pp)| *d = pp * (*d - dot) * scale);
                }
                dq.slice_mut(s![span.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![span.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        let x = cache.x.view();
        let mut dx = self.query.backward(x, dq.view(), &mut grad.query);
        dx += &self.key.backward(x, dk.view(), &mut grad.key);
        dx += &self.value.backward(x, dv.view(), &mut grad.value);
        dx
    }
}

impl<F: Float> Parameters<F> for SelfAttention<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
