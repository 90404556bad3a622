//! The four-part network: shared convolutional encoder, attention-pooling
//! branch, domain projection, and SEDB head, with hand-derived backward
//! passes over a flat parameter vector.

pub mod attention;
pub mod checkpoint;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod params;

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

pub use attention::{atp_forward, attention_column_error, sigmoid, AtpOutput};
pub use layers::{BnBatchStats, POOL_WIDTH};
pub use loss::{sedb_loss, sedb_loss_grad, weak_loss, weak_loss_grad};
pub use params::{init_params, ParamLayout};

/// Architecture hyperparameters. Changing any of these changes the parameter
/// layout, so they are recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input feature bins per frame.
    pub n_mels: usize,
    pub n_classes: usize,
    /// Output channels of the three encoder blocks; the last is the frame
    /// embedding width D.
    pub channels: [usize; 3],
    /// Domain projection output width D'.
    pub domain_dim: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Probability clamp applied before every logarithm.
    pub prob_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            n_classes: 5,
            channels: [16, 32, 64],
            domain_dim: 64,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            prob_epsilon: 1e-7,
        }
    }
}

impl ModelConfig {
    /// Frame embedding width D (last encoder block's channels).
    pub fn embedding_dim(&self) -> usize {
        self.channels[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 1 {
            return Err(Error::Config("model.n_mels: must be at least 1".into()));
        }
        if self.n_classes < 1 {
            return Err(Error::Config("model.n_classes: must be at least 1".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("model.channels: entries must be positive".into()));
        }
        if self.domain_dim < 1 {
            return Err(Error::Config("model.domain_dim: must be at least 1".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("model.bn_momentum: must lie in (0, 1]".into()));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("model.bn_epsilon: must be positive".into()));
        }
        if !(self.prob_epsilon > 0.0 && self.prob_epsilon < 0.5) {
            return Err(Error::Config("model.prob_epsilon: must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Running batch-normalization statistics of one block; training state, not
/// learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<F: Real> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

/// Caches of one training-mode encoder pass, consumed by the backward pass.
pub struct EncodeCache<F: Real> {
    blocks: Vec<layers::BlockCache<F>>,
    in_dims: (usize, usize, usize, usize),
}

impl<F: Real> EncodeCache<F> {
    /// Distance to the nearest ReLU/maxpool non-smooth point anywhere in the
    /// pass; gradient checks reject instances where this is tiny.
    pub fn min_nonsmooth_margin(&self) -> f64 {
        self.blocks.iter().map(|b| b.nonsmooth_margin()).fold(f64::INFINITY, f64::min)
    }
}

/// The model: config, flat learnable parameters, and batchnorm running state.
#[derive(Debug, Clone)]
pub struct SedModel<F: Real> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<F>,
    pub bn_running: Vec<BnRunning<F>>,
    pub init_seed: u64,
}

impl<F: Real> SedModel<F> {
    /// Fresh model with fan-in uniform weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::build(&config);
        let params = init_params(&layout, seed);
        let bn_running = config
            .channels
            .iter()
            .map(|&c| BnRunning { mean: Array1::zeros(c), var: Array1::ones(c) })
            .collect();
        Ok(Self { config, layout, params, bn_running, init_seed: seed })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn zero_grads(&self) -> Vec<F> {
        vec![F::zero(); self.layout.total]
    }

    fn block_names(i: usize) -> (&'static str, &'static str, &'static str, &'static str) {
        match i {
            0 => ("conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta"),
            1 => ("conv2.weight", "conv2.bias", "bn2.gamma", "bn2.beta"),
            2 => ("conv3.weight", "conv3.bias", "bn3.gamma", "bn3.beta"),
            _ => unreachable!("encoder has 3 blocks"),
        }
    }

    fn block_params(&self, i: usize) -> layers::BlockParams<'_, F> {
        let (w, b, g, be) = Self::block_names(i);
        let c_in = if i == 0 { 1 } else { self.config.channels[i - 1] };
        let c_out = self.config.channels[i];
        layers::BlockParams {
            weight: self.layout.view2(&self.params, w, c_out, c_in * 9),
            bias: self.layout.view1(&self.params, b),
            gamma: self.layout.view1(&self.params, g),
            beta: self.layout.view1(&self.params, be),
        }
    }

    fn check_batch(&self, batch: &Array3<F>) -> Result<()> {
        let (n, t, m) = batch.dim();
        if n == 0 || t == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if m != self.config.n_mels {
            return Err(Error::Shape(format!(
                "batch has {m} feature bins, model expects {}",
                self.config.n_mels
            )));
        }
        Ok(())
    }

    /// Training-mode encoder over a `(batch, T, n_mels)` tensor. Produces
    /// `(batch, T, D)` frame embeddings, the caches for the backward pass,
    /// and the per-block batch statistics. Pure: running statistics are not
    /// touched (apply them afterwards via [`SedModel::update_bn_running`]).
    pub fn encode_train(
        &self,
        batch: &Array3<F>,
    ) -> Result<(Array3<F>, EncodeCache<F>, Vec<BnBatchStats<F>>)> {
        self.check_batch(batch)?;
        let (n, t, m) = batch.dim();
        let mut x = Array4::zeros((n, 1, t, m));
        for nn in 0..n {
            for tt in 0..t {
                for mm in 0..m {
                    x[[nn, 0, tt, mm]] = batch[[nn, tt, mm]];
                }
            }
        }
        let in_dims = x.dim();
        let mut caches = Vec::with_capacity(3);
        let mut stats = Vec::with_capacity(3);
        let mut cur = x;
        for i in 0..3 {
            let p = self.block_params(i);
            let (out, cache, stat) = layers::block_train_forward(&cur, &p, self.config.bn_epsilon);
            caches.push(cache);
            stats.push(stat);
            cur = out;
        }
        let emb = layers::freq_mean_forward(&cur);
        Ok((emb, EncodeCache { blocks: caches, in_dims }, stats))
    }

    /// Inference-mode encoder with frozen running statistics.
    pub fn encode_eval(&self, batch: &Array3<F>) -> Result<Array3<F>> {
        self.check_batch(batch)?;
        let (n, t, m) = batch.dim();
        let mut cur = Array4::zeros((n, 1, t, m));
        for nn in 0..n {
            for tt in 0..t {
                for mm in 0..m {
                    cur[[nn, 0, tt, mm]] = batch[[nn, tt, mm]];
                }
            }
        }
        for i in 0..3 {
            let p = self.block_params(i);
            let r = &self.bn_running[i];
            cur = layers::block_eval_forward(
                &cur,
                &p,
                r.mean.view(),
                r.var.view(),
                self.config.bn_epsilon,
            );
        }
        Ok(layers::freq_mean_forward(&cur))
    }

    /// Backward through the encoder. Accumulates parameter gradients into the
    /// flat `grads` vector and returns the gradient w.r.t. the input batch.
    pub fn encode_backward(
        &self,
        cache: &EncodeCache<F>,
        d_emb: &Array3<F>,
        grads: &mut [F],
    ) -> Array3<F> {
        assert_eq!(grads.len(), self.layout.total);
        let last_dims = {
            let c = self.config.channels[2];
            let (n, _, t, _) = cache.in_dims;
            let w = cache.blocks[2].prerelu.dim().3.div_ceil(POOL_WIDTH);
            (n, c, t, w)
        };
        let mut dcur = layers::freq_mean_backward(d_emb, last_dims);
        for i in (0..3).rev() {
            let p = self.block_params(i);
            let (dx, block_grads) = layers::block_backward(&dcur, &cache.blocks[i], &p);
            let (w, b, g, be) = Self::block_names(i);
            accumulate(grads, &self.layout, w, block_grads.weight.iter());
            accumulate(grads, &self.layout, b, block_grads.bias.iter());
            accumulate(grads, &self.layout, g, block_grads.gamma.iter());
            accumulate(grads, &self.layout, be, block_grads.beta.iter());
            dcur = dx;
        }
        // collapse the channel axis: d input batch (n, t, m)
        let (n, _, t, m) = cache.in_dims;
        let mut d_batch = Array3::zeros((n, t, m));
        for nn in 0..n {
            for tt in 0..t {
                for mm in 0..m {
                    d_batch[[nn, tt, mm]] = dcur[[nn, 0, tt, mm]];
                }
            }
        }
        d_batch
    }

    /// Fold batch statistics into the running statistics:
    /// `r = (1 - momentum) r + momentum * batch`.
    pub fn update_bn_running(&mut self, stats: &[BnBatchStats<F>]) {
        assert_eq!(stats.len(), self.bn_running.len());
        let m = real::<F>(self.config.bn_momentum);
        let keep = F::one() - m;
        for (r, s) in self.bn_running.iter_mut().zip(stats) {
            for (rv, &sv) in r.mean.iter_mut().zip(s.mean.iter()) {
                *rv = keep * *rv + m * sv;
            }
            for (rv, &sv) in r.var.iter_mut().zip(s.var.iter()) {
                *rv = keep * *rv + m * sv;
            }
        }
    }

    /// Attention pooling over one clip's `T x D` embeddings.
    pub fn attention_pool(&self, emb: ArrayView2<F>) -> AtpOutput<F> {
        let (c, d) = (self.config.n_classes, self.config.embedding_dim());
        atp_forward(
            emb,
            self.layout.view2(&self.params, "att.w", c, d),
            self.layout.view2(&self.params, "att.u", c, d),
        )
    }

    /// Backward of [`SedModel::attention_pool`] given the gradient w.r.t. the
    /// clip probabilities; returns the embedding gradient.
    pub fn attention_backward(
        &self,
        emb: ArrayView2<F>,
        out: &AtpOutput<F>,
        d_clip: ArrayView1<F>,
        grads: &mut [F],
    ) -> Array2<F> {
        let (c, d) = (self.config.n_classes, self.config.embedding_dim());
        let mut dw = Array2::zeros((c, d));
        let mut du = Array2::zeros((c, d));
        let demb = attention::atp_backward(
            emb,
            self.layout.view2(&self.params, "att.w", c, d),
            self.layout.view2(&self.params, "att.u", c, d),
            out,
            d_clip,
            &mut dw,
            &mut du,
        );
        accumulate(grads, &self.layout, "att.w", dw.iter());
        accumulate(grads, &self.layout, "att.u", du.iter());
        demb
    }

    /// Linear projection into the domain-adaptation space, `T x D'`.
    pub fn domain_project(&self, emb: ArrayView2<F>) -> Array2<F> {
        let (dp, d) = (self.config.domain_dim, self.config.embedding_dim());
        heads::dense_forward(
            emb,
            self.layout.view2(&self.params, "proj.weight", dp, d),
            self.layout.view1(&self.params, "proj.bias"),
        )
    }

    pub fn domain_project_backward(
        &self,
        emb: ArrayView2<F>,
        d_out: &Array2<F>,
        grads: &mut [F],
    ) -> Array2<F> {
        let (dp, d) = (self.config.domain_dim, self.config.embedding_dim());
        let mut dw = Array2::zeros((dp, d));
        let mut db = Array1::zeros(dp);
        let demb = heads::dense_backward(
            emb,
            self.layout.view2(&self.params, "proj.weight", dp, d),
            d_out,
            &mut dw,
            &mut db,
        );
        accumulate(grads, &self.layout, "proj.weight", dw.iter());
        accumulate(grads, &self.layout, "proj.bias", db.iter());
        demb
    }

    /// SEDB branch frame probabilities, `T x C`.
    pub fn sedb_forward(&self, emb: ArrayView2<F>) -> Array2<F> {
        let (c, d) = (self.config.n_classes, self.config.embedding_dim());
        heads::sedb_head_forward(
            emb,
            self.layout.view2(&self.params, "sedb.weight", c, d),
            self.layout.view1(&self.params, "sedb.bias"),
        )
    }

    pub fn sedb_backward(
        &self,
        emb: ArrayView2<F>,
        probs: &Array2<F>,
        d_probs: &Array2<F>,
        grads: &mut [F],
    ) -> Array2<F> {
        let (c, d) = (self.config.n_classes, self.config.embedding_dim());
        let mut dw = Array2::zeros((c, d));
        let mut db = Array1::zeros(c);
        let demb = heads::sedb_head_backward(
            emb,
            self.layout.view2(&self.params, "sedb.weight", c, d),
            probs,
            d_probs,
            &mut dw,
            &mut db,
        );
        accumulate(grads, &self.layout, "sedb.weight", dw.iter());
        accumulate(grads, &self.layout, "sedb.bias", db.iter());
        demb
    }
}

fn accumulate<'a, F: Real>(
    grads: &mut [F],
    layout: &ParamLayout,
    name: &str,
    values: impl Iterator<Item = &'a F>,
) {
    let range = layout.range(name);
    let slot = &mut grads[range];
    let mut count = 0;
    for (g, &v) in slot.iter_mut().zip(values) {
        *g += v;
        count += 1;
    }
    assert_eq!(count, slot.len(), "gradient size mismatch for {name}");
}
