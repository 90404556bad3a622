//! Embedding-level attention pooling: per-class softmax attention over time
//! combines frame probabilities into clip probabilities.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Real;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

#[derive(Debug, Clone)]
pub struct AtpOutput<F: Real> {
    /// C clip-level probabilities, convex combinations of frame probabilities.
    pub clip_probs: Array1<F>,
    /// T x C frame probabilities, `sigmoid(u_c . h_t)`.
    pub frame_probs: Array2<F>,
    /// T x C attention weights; each column is a softmax over time.
    pub attention: Array2<F>,
}

/// Forward pass over one clip's `T x D` embeddings.
///
/// `w_att` and `u_cls` are `C x D`: attention `a[:, c] = softmax_t(w_c . h_t)`,
/// frame probability `p[t, c] = sigmoid(u_c . h_t)`, and clip probability
/// `P_c = sum_t a[t, c] p[t, c]`.
pub fn atp_forward<F: Real>(
    emb: ArrayView2<F>,
    w_att: ArrayView2<F>,
    u_cls: ArrayView2<F>,
) -> AtpOutput<F> {
    let scores = emb.dot(&w_att.t()); // T x C
    let logits = emb.dot(&u_cls.t()); // T x C
    let (t_len, n_classes) = scores.dim();

    let mut attention = Array2::zeros((t_len, n_classes));
    for c in 0..n_classes {
        let col = scores.column(c);
        let mut max = col[0];
        for &v in col.iter() {
            if v > max {
                max = v;
            }
        }
        let mut denom = F::zero();
        for t in 0..t_len {
            let e = (col[t] - max).exp();
            attention[[t, c]] = e;
            denom += e;
        }
        for t in 0..t_len {
            attention[[t, c]] /= denom;
        }
    }

    let frame_probs = logits.mapv(sigmoid);
    let mut clip_probs = Array1::zeros(n_classes);
    for c in 0..n_classes {
        let mut acc = F::zero();
        for t in 0..t_len {
            acc += attention[[t, c]] * frame_probs[[t, c]];
        }
        clip_probs[c] = acc;
    }
    AtpOutput { clip_probs, frame_probs, attention }
}

/// Backward pass given the loss gradient w.r.t. the clip probabilities.
/// Accumulates into `dw_att` / `du_cls` and returns the embedding gradient.
/// Frame probabilities feed pseudo labels only, which are detached, so no
/// gradient arrives through them.
pub fn atp_backward<F: Real>(
    emb: ArrayView2<F>,
    w_att: ArrayView2<F>,
    u_cls: ArrayView2<F>,
    out: &AtpOutput<F>,
    d_clip: ArrayView1<F>,
    dw_att: &mut Array2<F>,
    du_cls: &mut Array2<F>,
) -> Array2<F> {
    let (t_len, n_classes) = out.attention.dim();
    let mut ds = Array2::zeros((t_len, n_classes)); // d loss / d scores
    let mut dz = Array2::zeros((t_len, n_classes)); // d loss / d logits

    for c in 0..n_classes {
        let g = d_clip[c];
        // through P_c = sum_t a p: da = g * p, dp = g * a
        // softmax backward: ds_t = a_t (da_t - sum_t' a_t' da_t')
        let mut weighted = F::zero();
        for t in 0..t_len {
            weighted += out.attention[[t, c]] * out.frame_probs[[t, c]];
        }
        for t in 0..t_len {
            let a = out.attention[[t, c]];
            let p = out.frame_probs[[t, c]];
            ds[[t, c]] = a * (g * p - g * weighted);
            dz[[t, c]] = g * a * p * (F::one() - p);
        }
    }

    *dw_att += &ds.t().dot(&emb);
    *du_cls += &dz.t().dot(&emb);
    let mut demb = ds.dot(&w_att);
    demb += &dz.dot(&u_cls);
    demb
}

/// Largest deviation of any attention column sum from 1.
pub fn attention_column_error<F: Real>(attention: &Array2<F>) -> f64 {
    attention
        .sum_axis(Axis(0))
        .iter()
        .map(|&s| (crate::scalar::to_f64(s) - 1.0).abs())
        .fold(0.0, f64::max)
}
