//! Per-frame affine heads: the domain projection (linear) and the SEDB head
//! (affine followed by a sigmoid).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Real;

use super::attention::sigmoid;

/// `emb (T x D) -> emb . w^T + b (T x K)`.
pub fn dense_forward<F: Real>(
    emb: ArrayView2<F>,
    weight: ArrayView2<F>,
    bias: ArrayView1<F>,
) -> Array2<F> {
    let mut out = emb.dot(&weight.t());
    for mut row in out.rows_mut() {
        row += &bias;
    }
    out
}

/// Backward for [`dense_forward`] given `d loss / d output`.
/// Accumulates into `dweight` / `dbias` and returns the embedding gradient.
pub fn dense_backward<F: Real>(
    emb: ArrayView2<F>,
    weight: ArrayView2<F>,
    dz: &Array2<F>,
    dweight: &mut Array2<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dweight += &dz.t().dot(&emb);
    *dbias += &dz.sum_axis(Axis(0));
    dz.dot(&weight)
}

/// SEDB forward: frame probabilities `sigmoid(affine(h_t))`, `T x C`.
pub fn sedb_head_forward<F: Real>(
    emb: ArrayView2<F>,
    weight: ArrayView2<F>,
    bias: ArrayView1<F>,
) -> Array2<F> {
    dense_forward(emb, weight, bias).mapv(sigmoid)
}

/// SEDB backward: converts `d loss / d probs` through the sigmoid, then the
/// affine layer.
pub fn sedb_head_backward<F: Real>(
    emb: ArrayView2<F>,
    weight: ArrayView2<F>,
    probs: &Array2<F>,
    dprobs: &Array2<F>,
    dweight: &mut Array2<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    let mut dz = dprobs.clone();
    dz.zip_mut_with(probs, |d, &p| *d *= p * (F::one() - p));
    dense_backward(emb, weight, &dz, dweight, dbias)
}
