//! Flat parameter storage with a named block registry.
//!
//! All learnable tensors live in one `Vec<F>` so the optimizer, checkpoint
//! codec, and gradient checks can treat the model as a single flat vector;
//! layers view their blocks through the layout.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{real, Real};

use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: &'static str,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
}

impl ParamLayout {
    /// Registry order is fixed; it defines initialization draw order and
    /// checkpoint layout.
    pub fn build(cfg: &ModelConfig) -> Self {
        let [c1, c2, c3] = cfg.channels;
        let d = cfg.embedding_dim();
        let spec: Vec<(&'static str, Vec<usize>)> = vec![
            ("conv1.weight", vec![c1, 1, 3, 3]),
            ("conv1.bias", vec![c1]),
            ("bn1.gamma", vec![c1]),
            ("bn1.beta", vec![c1]),
            ("conv2.weight", vec![c2, c1, 3, 3]),
            ("conv2.bias", vec![c2]),
            ("bn2.gamma", vec![c2]),
            ("bn2.beta", vec![c2]),
            ("conv3.weight", vec![c3, c2, 3, 3]),
            ("conv3.bias", vec![c3]),
            ("bn3.gamma", vec![c3]),
            ("bn3.beta", vec![c3]),
            ("att.w", vec![cfg.n_classes, d]),
            ("att.u", vec![cfg.n_classes, d]),
            ("proj.weight", vec![cfg.domain_dim, d]),
            ("proj.bias", vec![cfg.domain_dim]),
            ("sedb.weight", vec![cfg.n_classes, d]),
            ("sedb.bias", vec![cfg.n_classes]),
        ];
        let mut blocks = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for (name, shape) in spec {
            let len: usize = shape.iter().product();
            blocks.push(ParamBlock { name, offset, shape });
            offset += len;
        }
        Self { blocks, total: offset }
    }

    /// Block lookup by canonical name. Unknown names are a programming error.
    pub fn block(&self, name: &str) -> &ParamBlock {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"))
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let b = self.block(name);
        b.offset..b.offset + b.len()
    }

    pub fn view1<'a, F: Real>(&self, data: &'a [F], name: &str) -> ArrayView1<'a, F> {
        ArrayView1::from(&data[self.range(name)])
    }

    /// View a block as a matrix of the given dimensions (conv weights are
    /// viewed as `c_out x (c_in * 9)` for the im2col matmul).
    pub fn view2<'a, F: Real>(
        &self,
        data: &'a [F],
        name: &str,
        rows: usize,
        cols: usize,
    ) -> ArrayView2<'a, F> {
        let slice = &data[self.range(name)];
        assert_eq!(slice.len(), rows * cols, "block {name} is not {rows}x{cols}");
        ArrayView2::from_shape((rows, cols), slice).expect("contiguous block")
    }

    pub fn view1_mut<'a, F: Real>(&self, data: &'a mut [F], name: &str) -> ArrayViewMut1<'a, F> {
        ArrayViewMut1::from(&mut data[self.range(name)])
    }

    pub fn view2_mut<'a, F: Real>(
        &self,
        data: &'a mut [F],
        name: &str,
        rows: usize,
        cols: usize,
    ) -> ArrayViewMut2<'a, F> {
        let range = self.range(name);
        let slice = &mut data[range];
        assert_eq!(slice.len(), rows * cols, "block {name} is not {rows}x{cols}");
        ArrayViewMut2::from_shape((rows, cols), slice).expect("contiguous block")
    }
}

/// Initialize parameters: weights from a centered uniform with fan-in
/// scaling, biases zero, batchnorm at identity. Draw order follows the
/// registry, so (config, seed) fully determines the vector.
pub fn init_params<F: Real>(layout: &ParamLayout, seed: u64) -> Vec<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![F::zero(); layout.total];
    for block in &layout.blocks {
        let slot = &mut data[block.offset..block.offset + block.len()];
        if block.name.ends_with(".weight") || block.name.starts_with("att.") {
            let fan_in: usize = block.shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slot {
                *v = real::<F>(rng.gen_range(-bound..bound));
            }
        } else if block.name.ends_with(".gamma") {
            slot.fill(F::one());
        }
        // biases and betas stay zero
    }
    data
}
