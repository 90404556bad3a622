//! Inter-frame distance domain adaptation: clip-pair classification, pseudo
//! strong labels, frame-pair sampling, and the metric-learning loss.
//!
//! The loss pulls together frame embeddings that carry the same label rows
//! (sampled from clip pairs with identical weak label sets), pushes apart
//! frames with differing rows (from clip pairs with disjoint sets), and
//! anchors the scale by driving each sampled frame's self-distance to 1.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FrameLabelMatrix;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Outcome of comparing two clips' weak label sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCase {
    /// Identical non-empty sets: matching frame rows form positive pairs.
    Positive,
    /// Disjoint non-empty sets: differing frame rows form negative pairs.
    Negative,
    /// Partial overlap or an empty set: the clip pair is not used.
    Skip,
}

/// Classify an unordered clip pair from its weak label sets.
pub fn classify_pair(weak_a: &BTreeSet<usize>, weak_b: &BTreeSet<usize>) -> PairCase {
    if weak_a.is_empty() || weak_b.is_empty() {
        return PairCase::Skip;
    }
    if weak_a == weak_b {
        PairCase::Positive
    } else if weak_a.intersection(weak_b).next().is_none() {
        PairCase::Negative
    } else {
        PairCase::Skip
    }
}

/// How hinge and norm terms are combined into the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IfdReduction {
    Mean,
    Sum,
}

/// Settings of the adaptation branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IfdConfig {
    /// Hinge margin between negative and positive distances.
    pub margin: f64,
    /// Frame probability threshold for pseudo strong labels.
    pub pseudo_threshold: f64,
    /// Let frames that are silent in both clips of a positive pair count as
    /// positives.
    pub include_silence_positives: bool,
    /// Cap on positive x negative hinge combinations per batch, uniformly
    /// subsampled when exceeded; 0 disables the cap.
    pub max_hinge_terms: usize,
    pub reduction: IfdReduction,
    /// Epochs trained before the branch activates (early pseudo labels are
    /// noise).
    pub warmup_epochs: usize,
}

impl Default for IfdConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            pseudo_threshold: 0.5,
            include_silence_positives: false,
            max_hinge_terms: 10_000,
            reduction: IfdReduction::Mean,
            warmup_epochs: 5,
        }
    }
}

impl IfdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 {
            return Err(Error::Config("ifd.margin: must be zero or positive".into()));
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold < 1.0) {
            return Err(Error::Config("ifd.pseudo_threshold: must lie strictly in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Frame pairs selected from one batch. Each entry references the same frame
/// index in two different clips.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FramePairSet {
    /// (clip a, clip b, t) with a < b, from Positive clip pairs.
    pub positives: Vec<(usize, usize, usize)>,
    /// (clip a, clip b, t) with a < b, from Negative clip pairs.
    pub negatives: Vec<(usize, usize, usize)>,
    /// Every (clip, t) referenced by any pair; norm anchors.
    pub sampled_frames: BTreeSet<(usize, usize)>,
}

impl FramePairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// One clip as the pairing stage sees it: weak labels plus frame labels
/// (true labels for synthetic clips, pseudo labels for real clips).
#[derive(Debug, Clone, Copy)]
pub struct PairingClip<'a> {
    pub weak: &'a BTreeSet<usize>,
    pub labels: &'a FrameLabelMatrix,
}

/// Threshold frame probabilities and mask them by the clip's weak labels:
/// `y[t,c] = 1` iff `probs[t,c] >= threshold` and class `c` is in `weak`.
///
/// Callers pass probabilities with gradient flow already severed; the pseudo
/// labels must never train the branch that produced them.
pub fn make_pseudo_labels<F: Real>(
    frame_probs: &Array2<F>,
    weak: &BTreeSet<usize>,
    threshold: f64,
    frame_rate: f64,
) -> FrameLabelMatrix {
    let (t_len, n_classes) = frame_probs.dim();
    let thresh = real::<F>(threshold);
    let mut labels = FrameLabelMatrix::zeros(t_len, n_classes, frame_rate);
    for t in 0..t_len {
        for c in 0..n_classes {
            if weak.contains(&c) && frame_probs[[t, c]] >= thresh {
                labels.values[[t, c]] = 1;
            }
        }
    }
    labels
}

/// Enumerate frame pairs over every unordered clip pair in the batch.
///
/// Positive clip pairs contribute a positive at each frame where the two
/// label rows are identical (skipping rows silent in both clips unless
/// `include_silence_positives`); negative clip pairs contribute a negative at
/// each frame where the rows differ.
pub fn sample_frame_pairs(
    clips: &[PairingClip],
    include_silence_positives: bool,
) -> Result<FramePairSet> {
    if let Some(first) = clips.first() {
        let (t_len, n_classes) = (first.labels.t_len(), first.labels.n_classes());
        for (idx, clip) in clips.iter().enumerate() {
            if clip.labels.t_len() != t_len || clip.labels.n_classes() != n_classes {
                return Err(Error::Shape(format!(
                    "clip {idx} frame labels are {}x{}, expected {}x{}",
                    clip.labels.t_len(),
                    clip.labels.n_classes(),
                    t_len,
                    n_classes
                )));
            }
        }
    }

    let mut pairs = FramePairSet::default();
    for i in 0..clips.len() {
        for j in (i + 1)..clips.len() {
            let case = classify_pair(clips[i].weak, clips[j].weak);
            if case == PairCase::Skip {
                continue;
            }
            let a = &clips[i].labels.values;
            let b = &clips[j].labels.values;
            for t in 0..a.nrows() {
                let row_a = a.row(t);
                let row_b = b.row(t);
                match case {
                    PairCase::Positive => {
                        let equal = row_a == row_b;
                        let both_silent = row_a.iter().all(|&v| v == 0);
                        if equal && (!both_silent || include_silence_positives) {
                            pairs.positives.push((i, j, t));
                            pairs.sampled_frames.insert((i, t));
                            pairs.sampled_frames.insert((j, t));
                        }
                    }
                    PairCase::Negative => {
                        if row_a != row_b {
                            pairs.negatives.push((i, j, t));
                            pairs.sampled_frames.insert((i, t));
                            pairs.sampled_frames.insert((j, t));
                        }
                    }
                    PairCase::Skip => unreachable!(),
                }
            }
        }
    }
    Ok(pairs)
}

/// Similarity distance between two frame embeddings: their inner product
/// divided by the dimension count, so an embedding with unit mean-square
/// entries has self-distance 1.
pub fn frame_distance<F: Real>(v_i: ArrayView1<F>, v_j: ArrayView1<F>) -> Result<F> {
    if v_i.is_empty() || v_i.len() != v_j.len() {
        return Err(Error::Shape(format!(
            "frame_distance on dimensions {} and {}",
            v_i.len(),
            v_j.len()
        )));
    }
    Ok(dis(v_i, v_j))
}

#[inline]
fn dis<F: Real>(v_i: ArrayView1<F>, v_j: ArrayView1<F>) -> F {
    v_i.dot(&v_j) / real::<F>(v_i.len() as f64)
}

/// Self-distance anchor: `| dis(v, v) - 1 |`.
pub fn norm_loss<F: Real>(v: ArrayView1<F>) -> F {
    (dis(v, v) - F::one()).abs()
}

/// Draw `k` distinct indices from `0..n`, uniformly over k-subsets, returned
/// sorted. Consumes exactly `k` RNG values.
fn sample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut chosen = BTreeSet::new();
    for j in (n - k)..n {
        let pick = rng.gen_range(0..=j);
        if !chosen.insert(pick) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// Inter-frame distance loss and its gradient w.r.t. the embeddings.
///
/// `embeddings[clip]` is the T x D' projection output for that clip. The
/// hinge term reduces `max(0, neg - pos + margin)` over the Cartesian product
/// of positive and negative distances (uniformly subsampled to
/// `max_hinge_terms` when larger); the norm term reduces `norm_loss` over the
/// distinct sampled frames. Empty positives or negatives zero the hinge term;
/// an empty pair set yields loss 0.
pub fn ifd_loss<F: Real>(
    embeddings: &[Array2<F>],
    pairs: &FramePairSet,
    config: &IfdConfig,
    rng: &mut ChaCha8Rng,
) -> (F, Vec<Array2<F>>) {
    let mut grads: Vec<Array2<F>> =
        embeddings.iter().map(|e| Array2::zeros(e.raw_dim())).collect();
    let dim = match embeddings.first() {
        Some(e) if e.ncols() > 0 => e.ncols(),
        _ => return (F::zero(), grads),
    };
    let inv_dim = real::<F>(1.0 / dim as f64);

    let distance_of = |&(a, b, t): &(usize, usize, usize)| -> F {
        dis(embeddings[a].row(t), embeddings[b].row(t))
    };
    let pos_dis: Vec<F> = pairs.positives.iter().map(distance_of).collect();
    let neg_dis: Vec<F> = pairs.negatives.iter().map(distance_of).collect();

    // Hinge over POS x NEG. Coefficients collect d(hinge)/d(distance) so each
    // distance's gradient is applied to the embeddings once.
    let margin = real::<F>(config.margin);
    let total = pos_dis.len() * neg_dis.len();
    let cap = config.max_hinge_terms;
    let subset: Option<Vec<usize>> =
        (cap > 0 && total > cap).then(|| sample_indices(total, cap, rng));
    let n_terms = subset.as_ref().map_or(total, Vec::len);

    let mut hinge_sum = F::zero();
    let mut pos_coef = vec![F::zero(); pos_dis.len()];
    let mut neg_coef = vec![F::zero(); neg_dis.len()];
    {
        let mut visit = |pi: usize, ni: usize| {
            let arg = neg_dis[ni] - pos_dis[pi] + margin;
            if arg > F::zero() {
                hinge_sum = hinge_sum + arg;
                pos_coef[pi] = pos_coef[pi] - F::one();
                neg_coef[ni] = neg_coef[ni] + F::one();
            }
        };
        match &subset {
            Some(indices) => {
                for &k in indices {
                    visit(k / neg_dis.len(), k % neg_dis.len());
                }
            }
            None => {
                for pi in 0..pos_dis.len() {
                    for ni in 0..neg_dis.len() {
                        visit(pi, ni);
                    }
                }
            }
        }
    }
    let hinge_weight = match config.reduction {
        IfdReduction::Sum => F::one(),
        IfdReduction::Mean if n_terms > 0 => real::<F>(1.0 / n_terms as f64),
        IfdReduction::Mean => F::zero(),
    };

    let apply_pair_grads =
        |grads: &mut Vec<Array2<F>>, list: &[(usize, usize, usize)], coefs: &[F], w: F| {
            for (&(a, b, t), &coef) in list.iter().zip(coefs) {
                if coef == F::zero() {
                    continue;
                }
                let scale = coef * w * inv_dim;
                // d dis(va, vb) / d va = vb / D', and symmetrically.
                let vb = embeddings[b].row(t).to_owned();
                grads[a].row_mut(t).scaled_add(scale, &vb);
                let va = embeddings[a].row(t).to_owned();
                grads[b].row_mut(t).scaled_add(scale, &va);
            }
        };
    apply_pair_grads(&mut grads, &pairs.positives, &pos_coef, hinge_weight);
    apply_pair_grads(&mut grads, &pairs.negatives, &neg_coef, hinge_weight);

    // Norm anchors, once per distinct sampled frame.
    let norm_weight = match config.reduction {
        IfdReduction::Sum => F::one(),
        IfdReduction::Mean if !pairs.sampled_frames.is_empty() => {
            real::<F>(1.0 / pairs.sampled_frames.len() as f64)
        }
        IfdReduction::Mean => F::zero(),
    };
    let mut norm_sum = F::zero();
    for &(c, t) in &pairs.sampled_frames {
        let self_dis = dis(embeddings[c].row(t), embeddings[c].row(t));
        let deviation = self_dis - F::one();
        norm_sum = norm_sum + deviation.abs();
        let sign = if deviation > F::zero() {
            F::one()
        } else if deviation < F::zero() {
            -F::one()
        } else {
            F::zero()
        };
        // d |dis(v,v) - 1| / d v = sign * 2 v / D'
        let scale = sign * norm_weight * (inv_dim + inv_dim);
        let v = embeddings[c].row(t).to_owned();
        grads[c].row_mut(t).scaled_add(scale, &v);
    }

    (hinge_sum * hinge_weight + norm_sum * norm_weight, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use seddet_testkit::gradcheck::{central_difference, max_grad_error};
    use seddet_testkit::oracle::{brute_force_ifd, OracleClip, OracleReduction};

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn classify_pair_covers_the_three_cases() {
        assert_eq!(classify_pair(&set(&[0, 1]), &set(&[0, 1])), PairCase::Positive);
        assert_eq!(classify_pair(&set(&[0]), &set(&[1, 2])), PairCase::Negative);
        assert_eq!(classify_pair(&set(&[0, 1]), &set(&[1, 2])), PairCase::Skip);
        assert_eq!(classify_pair(&set(&[]), &set(&[1])), PairCase::Skip);
        assert_eq!(classify_pair(&set(&[]), &set(&[])), PairCase::Skip);
    }

    #[test]
    fn classify_pair_is_symmetric() {
        let sets = [set(&[]), set(&[0]), set(&[1]), set(&[0, 1]), set(&[1, 2]), set(&[0, 1, 2])];
        for a in &sets {
            for b in &sets {
                assert_eq!(classify_pair(a, b), classify_pair(b, a));
            }
        }
    }

    #[test]
    fn pseudo_labels_threshold_and_mask() {
        let probs = array![[0.8, 0.6], [0.3, 0.9], [0.5, 0.2]];
        let labels = make_pseudo_labels(&probs, &set(&[0]), 0.5, 20.0);
        assert_eq!(labels.values.row(0).to_vec(), vec![1, 0]);
        assert_eq!(labels.values.row(1).to_vec(), vec![0, 0]);
        assert_eq!(labels.values.row(2).to_vec(), vec![1, 0]); // threshold is inclusive

        let both = make_pseudo_labels(&probs, &set(&[0, 1]), 0.5, 20.0);
        assert_eq!(both.values.row(1).to_vec(), vec![0, 1]);

        let masked = make_pseudo_labels(&probs, &set(&[]), 0.5, 20.0);
        assert!(masked.values.iter().all(|&v| v == 0));
    }

    fn labels_from_rows(rows: &[&[u8]]) -> FrameLabelMatrix {
        let t = rows.len();
        let c = rows[0].len();
        let mut m = FrameLabelMatrix::zeros(t, c, 20.0);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.values[[i, j]] = v;
            }
        }
        m
    }

    #[test]
    fn positive_pair_samples_matching_active_rows() {
        // equal rows at t in {3,4}; both silent elsewhere
        let a = labels_from_rows(&[&[0], &[0], &[0], &[1], &[1]]);
        let b = labels_from_rows(&[&[0], &[0], &[0], &[1], &[1]]);
        let (wa, wb) = (set(&[0]), set(&[0]));
        let pairs = sample_frame_pairs(
            &[PairingClip { weak: &wa, labels: &a }, PairingClip { weak: &wb, labels: &b }],
            false,
        )
        .unwrap();
        assert_eq!(pairs.positives, vec![(0, 1, 3), (0, 1, 4)]);
        assert!(pairs.negatives.is_empty());
        assert_eq!(pairs.sampled_frames, BTreeSet::from([(0, 3), (0, 4), (1, 3), (1, 4)]));

        let with_silence = sample_frame_pairs(
            &[PairingClip { weak: &wa, labels: &a }, PairingClip { weak: &wb, labels: &b }],
            true,
        )
        .unwrap();
        assert_eq!(with_silence.positives.len(), 5);
    }

    #[test]
    fn negative_pair_samples_differing_rows() {
        // clip 0 active at t in {0,1}; clip 1 active at t in {1,2}
        let a = labels_from_rows(&[&[1, 0], &[1, 0], &[0, 0], &[0, 0]]);
        let b = labels_from_rows(&[&[0, 0], &[0, 1], &[0, 1], &[0, 0]]);
        let (wa, wb) = (set(&[0]), set(&[1]));
        let pairs = sample_frame_pairs(
            &[PairingClip { weak: &wa, labels: &a }, PairingClip { weak: &wb, labels: &b }],
            false,
        )
        .unwrap();
        assert!(pairs.positives.is_empty());
        assert_eq!(pairs.negatives, vec![(0, 1, 0), (0, 1, 1), (0, 1, 2)]);
    }

    #[test]
    fn skip_only_batches_produce_nothing() {
        let a = labels_from_rows(&[&[1, 1, 0]]);
        let b = labels_from_rows(&[&[0, 1, 1]]);
        let (wa, wb) = (set(&[0, 1]), set(&[1, 2]));
        let pairs = sample_frame_pairs(
            &[PairingClip { weak: &wa, labels: &a }, PairingClip { weak: &wb, labels: &b }],
            false,
        )
        .unwrap();
        assert!(pairs.is_empty());
        assert!(pairs.sampled_frames.is_empty());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = labels_from_rows(&[&[1], &[0]]);
        let b = labels_from_rows(&[&[1]]);
        let (wa, wb) = (set(&[0]), set(&[0]));
        assert!(sample_frame_pairs(
            &[PairingClip { weak: &wa, labels: &a }, PairingClip { weak: &wb, labels: &b }],
            false,
        )
        .is_err());
    }

    #[test]
    fn frame_distance_matches_hand_values() {
        let d = |a: &[f64], b: &[f64]| {
            frame_distance(
                ndarray::ArrayView1::from(a),
                ndarray::ArrayView1::from(b),
            )
            .unwrap()
        };
        assert_eq!(d(&[1.0, 1.0], &[1.0, -1.0]), 0.0);
        assert_eq!(d(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]), 1.0);
        assert_eq!(d(&[2.0, 2.0], &[2.0, 2.0]), 4.0);
    }

    #[test]
    fn frame_distance_is_symmetric_and_bilinear() {
        let v = array![0.3f64, -1.2, 0.7];
        let w = array![2.0f64, 0.5, -0.1];
        let dvw = frame_distance(v.view(), w.view()).unwrap();
        assert_eq!(dvw, frame_distance(w.view(), v.view()).unwrap());
        let scaled = &v * 3.0;
        let dsw = frame_distance(scaled.view(), w.view()).unwrap();
        assert!((dsw - 3.0 * dvw).abs() < 1e-15);
        assert!(frame_distance(v.view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn norm_loss_matches_hand_values() {
        assert_eq!(norm_loss(array![1.0, 1.0].view()), 0.0);
        assert_eq!(norm_loss(array![2.0, 2.0].view()), 3.0);
        assert_eq!(norm_loss(array![0.0, 0.0, 0.0].view()), 1.0);
    }

    /// Embedding row of norm sqrt(D') (self-distance 1) at angle `cos_to_ref`
    /// from the fixed reference direction, in D' = 2.
    fn anchored(cos_to_ref: f64) -> Vec<f64> {
        let s = (1.0 - cos_to_ref * cos_to_ref).max(0.0).sqrt();
        vec![std::f64::consts::SQRT_2 * cos_to_ref, std::f64::consts::SQRT_2 * s]
    }

    fn hand_pairs() -> FramePairSet {
        FramePairSet {
            positives: vec![(0, 1, 0)],
            negatives: vec![(2, 3, 0)],
            sampled_frames: BTreeSet::from([(0, 0), (1, 0), (2, 0), (3, 0)]),
        }
    }

    fn embeddings_for(pos: f64, neg: f64) -> Vec<Array2<f64>> {
        let rows = [anchored(1.0), anchored(pos), anchored(1.0), anchored(neg)];
        rows.iter()
            .map(|r| Array2::from_shape_vec((1, 2), r.clone()).unwrap())
            .collect()
    }

    #[test]
    fn satisfied_margin_gives_zero_loss_and_zero_gradient() {
        // Rows from {(1,1), (1,-1)} have self-distance exactly 1 in D' = 2,
        // so the norm terms vanish bit-exactly and the kink subgradient is 0.
        // POS = {1}, NEG = {0}: hinge = 0 - 1 + 0.1 clamps to zero.
        let rows = [vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, -1.0]];
        let emb: Vec<Array2<f64>> = rows
            .iter()
            .map(|r| Array2::from_shape_vec((1, 2), r.clone()).unwrap())
            .collect();
        let cfg = IfdConfig { reduction: IfdReduction::Sum, ..IfdConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, grads) = ifd_loss(&emb, &hand_pairs(), &cfg, &mut rng);
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn violated_margin_gives_hinge_value() {
        // POS = {0.2}, NEG = {0.6}: hinge = 0.6 - 0.2 + 0.1 = 0.5, norms 0.
        let emb = embeddings_for(0.2, 0.6);
        let cfg = IfdConfig { reduction: IfdReduction::Sum, ..IfdConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = ifd_loss(&emb, &hand_pairs(), &cfg, &mut rng);
        assert!((loss - 0.5).abs() < 1e-12, "loss {loss}");
        // mean reduction is identical with a single term per reduction group
        let cfg_mean = IfdConfig::default();
        let (loss_mean, _) =
            ifd_loss(&emb, &hand_pairs(), &cfg_mean, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((loss_mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_pairs_give_zero_loss() {
        let emb = embeddings_for(0.2, 0.6);
        let cfg = IfdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, grads) = ifd_loss(&emb, &FramePairSet::default(), &cfg, &mut rng);
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    struct RandomInstance {
        clips: Vec<OracleClip>,
    }

    fn random_instance(seed: u64) -> RandomInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_clips = rng.gen_range(2..=4);
        let t_len = rng.gen_range(1..=6);
        let n_classes = rng.gen_range(1..=3);
        let dim = rng.gen_range(1..=4);
        let clips = (0..n_clips)
            .map(|_| {
                let weak: BTreeSet<usize> =
                    (0..n_classes).filter(|_| rng.gen_bool(0.6)).collect();
                let frame_labels: Vec<Vec<u8>> = (0..t_len)
                    .map(|_| (0..n_classes).map(|_| rng.gen_bool(0.4) as u8).collect())
                    .collect();
                let embeddings: Vec<Vec<f64>> = (0..t_len)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect())
                    .collect();
                OracleClip { weak, frame_labels, embeddings }
            })
            .collect();
        RandomInstance { clips }
    }

    fn to_seddet_inputs(
        inst: &RandomInstance,
    ) -> (Vec<BTreeSet<usize>>, Vec<FrameLabelMatrix>, Vec<Array2<f64>>) {
        let weaks: Vec<_> = inst.clips.iter().map(|c| c.weak.clone()).collect();
        let labels: Vec<_> = inst
            .clips
            .iter()
            .map(|c| {
                let rows: Vec<&[u8]> = c.frame_labels.iter().map(|r| r.as_slice()).collect();
                labels_from_rows(&rows)
            })
            .collect();
        let embeddings: Vec<_> = inst
            .clips
            .iter()
            .map(|c| {
                let t = c.embeddings.len();
                let d = c.embeddings[0].len();
                Array2::from_shape_vec((t, d), c.embeddings.concat()).unwrap()
            })
            .collect();
        (weaks, labels, embeddings)
    }

    #[test]
    fn loss_matches_brute_force_oracle_on_random_instances() {
        for seed in 0..25 {
            let inst = random_instance(seed);
            let (weaks, labels, embeddings) = to_seddet_inputs(&inst);
            let clips: Vec<PairingClip> = weaks
                .iter()
                .zip(&labels)
                .map(|(w, l)| PairingClip { weak: w, labels: l })
                .collect();
            let pairs = sample_frame_pairs(&clips, false).unwrap();
            let cfg = IfdConfig {
                reduction: IfdReduction::Sum,
                max_hinge_terms: 0,
                ..IfdConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (loss, _) = ifd_loss(&embeddings, &pairs, &cfg, &mut rng);
            let expected = brute_force_ifd(&inst.clips, 0.1, false, OracleReduction::Sum);
            let scale = expected.abs().max(loss.abs()).max(1e-12);
            assert!(
                (loss - expected).abs() <= 1e-9 * scale,
                "seed {seed}: {loss} vs oracle {expected}"
            );
        }
    }

    #[test]
    fn loss_is_nonnegative_and_norm_only_when_margin_met() {
        for seed in 100..130 {
            let inst = random_instance(seed);
            let (weaks, labels, embeddings) = to_seddet_inputs(&inst);
            let clips: Vec<PairingClip> = weaks
                .iter()
                .zip(&labels)
                .map(|(w, l)| PairingClip { weak: w, labels: l })
                .collect();
            let pairs = sample_frame_pairs(&clips, false).unwrap();
            let cfg = IfdConfig::default();
            let (loss, _) =
                ifd_loss(&embeddings, &pairs, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
            assert!(loss >= 0.0);

            let pos: Vec<f64> = pairs
                .positives
                .iter()
                .map(|&(a, b, t)| dis(embeddings[a].row(t), embeddings[b].row(t)))
                .collect();
            let neg: Vec<f64> = pairs
                .negatives
                .iter()
                .map(|&(a, b, t)| dis(embeddings[a].row(t), embeddings[b].row(t)))
                .collect();
            let margin_met = match (
                pos.iter().cloned().reduce(f64::min),
                neg.iter().cloned().reduce(f64::max),
            ) {
                (Some(pmin), Some(nmax)) => pmin >= nmax + cfg.margin,
                _ => true,
            };
            if margin_met {
                let norm_only: f64 = pairs
                    .sampled_frames
                    .iter()
                    .map(|&(c, t)| norm_loss(embeddings[c].row(t)))
                    .sum::<f64>()
                    / (pairs.sampled_frames.len().max(1) as f64);
                assert!((loss - norm_only).abs() < 1e-12, "seed {seed}");
            }
        }
    }

    /// Smallest margin of any non-smooth point in the loss at this input:
    /// hinge arguments near 0 and self-distances near 1 make central
    /// differences unreliable.
    fn kink_margin(embeddings: &[Array2<f64>], pairs: &FramePairSet, margin: f64) -> f64 {
        let mut m = f64::INFINITY;
        for &(c, t) in &pairs.sampled_frames {
            m = m.min((dis(embeddings[c].row(t), embeddings[c].row(t)) - 1.0).abs());
        }
        for &(a, b, t) in &pairs.positives {
            let p = dis(embeddings[a].row(t), embeddings[b].row(t));
            for &(c, d, u) in &pairs.negatives {
                let n = dis(embeddings[c].row(u), embeddings[d].row(u));
                m = m.min((n - p + margin).abs());
            }
        }
        m
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut checked = 0;
        let mut seed = 1000;
        while checked < 5 {
            seed += 1;
            let inst = random_instance(seed);
            let (weaks, labels, embeddings) = to_seddet_inputs(&inst);
            let clips: Vec<PairingClip> = weaks
                .iter()
                .zip(&labels)
                .map(|(w, l)| PairingClip { weak: w, labels: l })
                .collect();
            let pairs = sample_frame_pairs(&clips, false).unwrap();
            if pairs.sampled_frames.is_empty() || kink_margin(&embeddings, &pairs, 0.1) < 1e-3 {
                continue;
            }

            let cfg = IfdConfig { max_hinge_terms: 0, ..IfdConfig::default() };
            let shapes: Vec<_> = embeddings.iter().map(|e| e.raw_dim()).collect();
            let flat: Vec<f64> = embeddings.iter().flat_map(|e| e.iter().copied()).collect();
            let rebuild = |x: &[f64]| -> Vec<Array2<f64>> {
                let mut out = Vec::new();
                let mut off = 0;
                for &dim in &shapes {
                    let n = dim[0] * dim[1];
                    out.push(Array2::from_shape_vec(dim, x[off..off + n].to_vec()).unwrap());
                    off += n;
                }
                out
            };

            let (_, grads) =
                ifd_loss(&rebuild(&flat), &pairs, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
            let analytic: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
            let mut f = |x: &[f64]| {
                ifd_loss(&rebuild(x), &pairs, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).0
            };
            let numeric = central_difference(&mut f, &flat, 1e-4);
            let err = max_grad_error(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed}: gradient error {err}");
            checked += 1;
        }
    }

    #[test]
    fn subsampling_is_deterministic_and_caps_terms() {
        let inst = random_instance(7);
        let (weaks, labels, embeddings) = to_seddet_inputs(&inst);
        let clips: Vec<PairingClip> = weaks
            .iter()
            .zip(&labels)
            .map(|(w, l)| PairingClip { weak: w, labels: l })
            .collect();
        let pairs = sample_frame_pairs(&clips, false).unwrap();
        if pairs.positives.is_empty() || pairs.negatives.is_empty() {
            return;
        }
        let cfg = IfdConfig { max_hinge_terms: 1, ..IfdConfig::default() };
        let (a, ga) = ifd_loss(&embeddings, &pairs, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let (b, gb) = ifd_loss(&embeddings, &pairs, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }
}
