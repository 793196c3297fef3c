use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::layers::{gelu, gelu_grad, normal_array, LayerNormCache};
use crate::nn::params::{join, visit_array, visit_array_mut};
use crate::nn::{Float, LayerNorm, Linear, Parameters};

/// Per-position binary classification head:
/// `H' = LayerNorm(GELU(H W' + b'))`, `h = H' W_out + b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorHead<F> {
    pub dense: Linear<F>,
    pub norm: LayerNorm<F>,
    pub out: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct DetectorHeadCache<F> {
    input: Array2<F>,
    pre_activation: Array2<F>,
    norm: LayerNormCache<F>,
    normed: Array2<F>,
}

impl<F: Float> DetectorHead<F> {
    pub fn new<R: Rng + ?Sized>(d_model: usize, std: f64, rng: &mut R) -> Self {
        DetectorHead {
            dense: Linear::new(d_model, d_model, std, rng),
            norm: LayerNorm::new(d_model),
            out: Linear::new(d_model, 1, std, rng),
        }
    }

    /// One logit per row of `hidden`.
    pub fn forward(&self, hidden: ArrayView2<F>) -> (Array1<F>, DetectorHeadCache<F>) {
        let pre_activation = self.dense.forward(hidden);
        let act = pre_activation.mapv(gelu);
        let (normed, norm) = self.norm.forward(act.view());
        let logits = self.out.forward(normed.view()).index_axis_move(Axis(1), 0);
        (
            logits,
            DetectorHeadCache {
                input: hidden.to_owned(),
                pre_activation,
                norm,
                normed,
            },
        )
    }

    pub fn backward(&self, cache: &DetectorHeadCache<F>, dlogits: &Array1<F>, grad: &mut DetectorHead<F>) -> Array2<F> {
        let dy = dlogits.view().insert_axis(Axis(1));
        let dnormed = self.out.backward(cache.normed.view(), dy, &mut grad.out);
        let mut dact = self.norm.backward(&cache.norm, dnormed.view(), &mut grad.norm);
        dact.zip_mut_with(&cache.pre_activation, |d, &u| *d *= gelu_grad(u));
        self.dense.backward(cache.input.view(), dact.view(), &mut grad.dense)
    }
}

impl<F: Float> Parameters<F> for DetectorHead<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.dense.visit(&join(prefix, "dense"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        self.dense.visit_mut(&join(prefix, "dense"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Projection from hidden states to vocabulary logits.
///
/// When `weight` is `None` the projection reuses the encoder's token
/// embedding table (`logits = H Eᵀ + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct LmHead<F> {
    /// `d_model × vocab` when untied.
    pub weight: Option<Array2<F>>,
    pub bias: Array1<F>,
}

impl<F: Float> LmHead<F> {
    pub fn new<R: Rng + ?Sized>(d_model: usize, vocab: usize, tied: bool, std: f64, rng: &mut R) -> Self {
        LmHead {
            weight: (!tied).then(|| normal_array(d_model, vocab, std, rng)),
            bias: Array1::zeros(vocab),
        }
    }

    pub fn is_tied(&self) -> bool {
        self.weight.is_none()
    }

    pub fn forward(&self, hidden: ArrayView2<F>, token_embedding: &Array2<F>) -> Array2<F> {
        let mut logits = match &self.weight {
            Some(w) => hidden.dot(w),
            None => hidden.dot(&token_embedding.t()),
        };
        logits += &self.bias;
        logits
    }

    /// Returns `dL/dhidden`; a tied head routes its weight gradient into
    /// `grad_token_embedding`.
    pub fn backward(
        &self,
        hidden: ArrayView2<F>,
        dlogits: ArrayView2<F>,
        token_embedding: &Array2<F>,
        grad: &mut LmHead<F>,
        grad_token_embedding: &mut Array2<F>,
    ) -> Array2<F> {
        grad.bias += &dlogits.sum_axis(Axis(0));
        match (&self.weight, &mut grad.weight) {
            (Some(w), Some(gw)) => {
                *gw += &hidden.t().dot(&dlogits);
                dlogits.dot(&w.t())
            }
            _ => {
                *grad_token_embedding += &dlogits.t().dot(&hidden);
                dlogits.dot(token_embedding)
            }
        }
    }
}

impl<F: Float> Parameters<F> for LmHead<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        if let Some(w) = &self.weight {
            visit_array(&join(prefix, "weight"), w, f);
        }
        visit_array(&join(prefix, "bias"), &self.bias, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [F])) {
        if let Some(w) = &mut self.weight {
            visit_array_mut(&join(prefix, "weight"), w, f);
        }
        visit_array_mut(&join(prefix, "bias"), &mut self.bias, f);
    }
}
