//! Brute-force enumerator for the inter-frame distance loss.
//!
//! Re-derives the clip-pair cases and the distance/hinge/norm arithmetic
//! directly from their definitions, with no shortcuts: every unordered clip
//! pair is classified from the weak label sets, every frame index is visited,
//! and the hinge is evaluated over the full cartesian product of positive and
//! negative distances. Deliberately independent of the `seddet::ifd` module.

use std::collections::BTreeSet;

/// One clip as the oracle sees it: weak labels, a dense `[t][c]` binary frame
/// label matrix, and `[t][d]` frame embeddings.
#[derive(Debug, Clone)]
pub struct OracleClip {
    pub weak: BTreeSet<usize>,
    pub frame_labels: Vec<Vec<u8>>,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleReduction {
    Mean,
    Sum,
}

fn reduce(values: &[f64], reduction: OracleReduction) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = values.iter().sum();
    match reduction {
        OracleReduction::Sum => sum,
        OracleReduction::Mean => sum / values.len() as f64,
    }
}

fn inner_product_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / a.len() as f64
}

/// Full enumeration of the inter-frame distance loss over a batch of clips.
///
/// Rules enumerated verbatim:
/// - a clip pair with identical non-empty weak label sets is a positive case,
///   a pair with disjoint non-empty sets is a negative case, anything else
///   (including any empty set) is skipped;
/// - within a positive pair, frame `t` contributes a positive distance when
///   the two label rows are identical, excluding rows that are both all-zero
///   unless `include_silence_positives` is set;
/// - within a negative pair, frame `t` contributes a negative distance when
///   the two label rows differ;
/// - the hinge term is `max(0, neg - pos + margin)` over every combination of
///   one positive and one negative distance;
/// - the norm term is `|dot(v, v)/dim - 1|` once per distinct frame that
///   appears in any emitted pair.
pub fn brute_force_ifd(
    clips: &[OracleClip],
    margin: f64,
    include_silence_positives: bool,
    reduction: OracleReduction,
) -> f64 {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut sampled: BTreeSet<(usize, usize)> = BTreeSet::new();

    for i in 0..clips.len() {
        for j in (i + 1)..clips.len() {
            let (a, b) = (&clips[i], &clips[j]);
            let both_nonempty = !a.weak.is_empty() && !b.weak.is_empty();
            let same = a.weak == b.weak;
            let disjoint = a.weak.intersection(&b.weak).next().is_none();

            assert_eq!(a.frame_labels.len(), b.frame_labels.len());
            for t in 0..a.frame_labels.len() {
                let row_a = &a.frame_labels[t];
                let row_b = &b.frame_labels[t];
                if both_nonempty && same {
                    let equal = row_a == row_b;
                    let both_silent =
                        row_a.iter().all(|&v| v == 0) && row_b.iter().all(|&v| v == 0);
                    if equal && (!both_silent || include_silence_positives) {
                        positives.push(inner_product_distance(&a.embeddings[t], &b.embeddings[t]));
                        sampled.insert((i, t));
                        sampled.insert((j, t));
                    }
                } else if both_nonempty && disjoint {
                    if row_a != row_b {
                        negatives.push(inner_product_distance(&a.embeddings[t], &b.embeddings[t]));
                        sampled.insert((i, t));
                        sampled.insert((j, t));
                    }
                }
            }
        }
    }

    let mut hinge_terms = Vec::new();
    for &p in &positives {
        for &n in &negatives {
            hinge_terms.push((n - p + margin).max(0.0));
        }
    }
    let norm_terms: Vec<f64> = sampled
        .iter()
        .map(|&(clip, t)| {
            let v = &clips[clip].embeddings[t];
            (inner_product_distance(v, v) - 1.0).abs()
        })
        .collect();

    reduce(&hinge_terms, reduction) + reduce(&norm_terms, reduction)
}
