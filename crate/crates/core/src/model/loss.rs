//! Binary cross-entropy losses for the weak (clip-level) and SEDB
//! (frame-level) branches.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};

use crate::corpus::FrameLabelMatrix;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// One binary cross-entropy term with its derivative w.r.t. the probability.
/// Log arguments are clamped at `eps` from both ends; a clamped branch
/// contributes zero gradient (the loss is constant there).
#[inline]
pub fn bce_term<F: Real>(p: F, y: F, eps: F) -> (F, F) {
    let pa = p.max(eps);
    let na = (F::one() - p).max(eps);
    let value = -(y * pa.ln() + (F::one() - y) * na.ln());
    let mut grad = F::zero();
    if p > eps {
        grad -= y / pa;
    }
    if F::one() - p > eps {
        grad += (F::one() - y) / na;
    }
    (value, grad)
}

/// Clip-level loss: mean over classes of binary cross-entropy between clip
/// probabilities and the weak label set.
pub fn weak_loss<F: Real>(clip_probs: ArrayView1<F>, weak: &BTreeSet<usize>, eps: f64) -> F {
    weak_loss_grad(clip_probs, weak, eps).0
}

/// [`weak_loss`] plus its gradient w.r.t. the clip probabilities.
pub fn weak_loss_grad<F: Real>(
    clip_probs: ArrayView1<F>,
    weak: &BTreeSet<usize>,
    eps: f64,
) -> (F, Array1<F>) {
    let n_classes = clip_probs.len();
    let epsf = real::<F>(eps);
    let inv = real::<F>(1.0 / n_classes as f64);
    let mut total = F::zero();
    let mut grad = Array1::zeros(n_classes);
    for c in 0..n_classes {
        let y = if weak.contains(&c) { F::one() } else { F::zero() };
        let (v, g) = bce_term(clip_probs[c], y, epsf);
        total += v;
        grad[c] = g * inv;
    }
    (total * inv, grad)
}

/// Frame-level loss: mean over `T x C` entries of binary cross-entropy
/// between frame probabilities and strong labels.
pub fn sedb_loss<F: Real>(
    frame_probs: &Array2<F>,
    labels: &FrameLabelMatrix,
    eps: f64,
) -> Result<F> {
    sedb_loss_grad(frame_probs, labels, eps).map(|(v, _)| v)
}

/// [`sedb_loss`] plus its gradient w.r.t. the frame probabilities.
pub fn sedb_loss_grad<F: Real>(
    frame_probs: &Array2<F>,
    labels: &FrameLabelMatrix,
    eps: f64,
) -> Result<(F, Array2<F>)> {
    let (t_len, n_classes) = frame_probs.dim();
    if labels.t_len() != t_len || labels.n_classes() != n_classes {
        return Err(Error::Shape(format!(
            "frame probs are {}x{} but labels are {}x{}",
            t_len,
            n_classes,
            labels.t_len(),
            labels.n_classes()
        )));
    }
    let epsf = real::<F>(eps);
    let inv = real::<F>(1.0 / (t_len * n_classes) as f64);
    let mut total = F::zero();
    let mut grad = Array2::zeros((t_len, n_classes));
    for t in 0..t_len {
        for c in 0..n_classes {
            let y = if labels.values[[t, c]] != 0 { F::one() } else { F::zero() };
            let (v, g) = bce_term(frame_probs[[t, c]], y, epsf);
            total += v;
            grad[[t, c]] = g * inv;
        }
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use seddet_testkit::gradcheck::{central_difference, max_grad_error};

    const EPS: f64 = 1e-7;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn weak_loss_hand_values() {
        let near_one = arr1(&[1.0 - EPS]);
        assert!(weak_loss(near_one.view(), &set(&[0]), EPS) < 1e-6);

        let half = arr1(&[0.5]);
        let ln2 = std::f64::consts::LN_2;
        assert!((weak_loss(half.view(), &set(&[0]), EPS) - ln2).abs() < 1e-12);

        let two = arr1(&[0.5, 0.5]);
        assert!((weak_loss(two.view(), &set(&[0]), EPS) - ln2).abs() < 1e-12);
    }

    #[test]
    fn weak_loss_is_nonnegative_and_clamps() {
        // exact 0/1 probabilities must stay finite through the clamp
        let probs = arr1(&[0.0f64, 1.0]);
        let v = weak_loss(probs.view(), &set(&[0]), EPS);
        assert!(v.is_finite() && v > 0.0);
        let v32 = weak_loss(arr1(&[0.0f32, 1.0]).view(), &set(&[0]), EPS);
        assert!(v32.is_finite() && v32 > 0.0);
    }

    #[test]
    fn weak_loss_gradient_matches_central_differences() {
        let probs = vec![0.3, 0.8, 0.5, 0.11];
        let weak = set(&[1, 3]);
        let (_, grad) = weak_loss_grad(ArrayView1::from(&probs), &weak, EPS);
        let mut f =
            |x: &[f64]| weak_loss(ArrayView1::from(x), &weak, EPS);
        let numeric = central_difference(&mut f, &probs, 1e-6);
        assert!(max_grad_error(grad.as_slice().unwrap(), &numeric) <= 1e-6);
    }

    fn labels(rows: &[&[u8]]) -> FrameLabelMatrix {
        let mut m = FrameLabelMatrix::zeros(rows.len(), rows[0].len(), 20.0);
        for (t, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m.values[[t, c]] = v;
            }
        }
        m
    }

    #[test]
    fn sedb_loss_hand_values() {
        let y = labels(&[&[1, 0], &[0, 1]]);
        let perfect = arr2(&[[1.0 - EPS, EPS], [EPS, 1.0 - EPS]]);
        assert!(sedb_loss(&perfect, &y, EPS).unwrap() < 1e-6);

        let half = arr2(&[[0.5, 0.5], [0.5, 0.5]]);
        assert!((sedb_loss(&half, &y, EPS).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let wrong_shape = labels(&[&[1, 0]]);
        assert!(sedb_loss(&half, &wrong_shape, EPS).is_err());
    }

    #[test]
    fn sedb_gradient_matches_central_differences() {
        let y = labels(&[&[1, 0, 1], &[0, 0, 1]]);
        let flat = vec![0.2, 0.7, 0.4, 0.9, 0.15, 0.55];
        let (_, grad) = sedb_loss_grad(
            &Array2::from_shape_vec((2, 3), flat.clone()).unwrap(),
            &y,
            EPS,
        )
        .unwrap();
        let mut f = |x: &[f64]| {
            sedb_loss(&Array2::from_shape_vec((2, 3), x.to_vec()).unwrap(), &y, EPS).unwrap()
        };
        let numeric = central_difference(&mut f, &flat, 1e-6);
        let analytic: Vec<f64> = grad.iter().copied().collect();
        assert!(max_grad_error(&analytic, &numeric) <= 1e-6);
    }
}
