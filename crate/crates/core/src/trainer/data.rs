//! In-memory dataset: decoded audio turned into standardized log-mel
//! features, weak label sets, and frame label matrices where strong
//! annotations exist.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::corpus::{
    events_to_frame_labels, extract_logmel, read_manifest, wav, Domain, EventAnnotation,
    FeatureConfig, Split,
};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// One clip ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct ClipExample<F: Real> {
    pub clip_id: String,
    pub domain: Domain,
    pub weak: BTreeSet<usize>,
    /// Ground-truth events; absent for weakly labeled training clips.
    pub events: Option<Vec<EventAnnotation>>,
    /// Strong labels at the feature frame rate, derived from `events`.
    pub frame_labels: Option<Array2<u8>>,
    /// `T x n_mels` log-mel features, standardized per clip.
    pub features: Array2<F>,
}

/// The corpus grouped by domain and split, with uniform clip geometry.
pub struct Dataset<F: Real> {
    pub real_train: Vec<ClipExample<F>>,
    pub syn_train: Vec<ClipExample<F>>,
    pub real_test: Vec<ClipExample<F>>,
    pub syn_test: Vec<ClipExample<F>>,
    pub t_len: usize,
    pub n_mels: usize,
    pub frame_rate: f64,
}

impl<F: Real> Dataset<F> {
    pub fn group(&self, domain: Domain, split: Split) -> &[ClipExample<F>] {
        match (domain, split) {
            (Domain::Real, Split::Train) => &self.real_train,
            (Domain::Synthetic, Split::Train) => &self.syn_train,
            (Domain::Real, Split::Test) => &self.real_test,
            (Domain::Synthetic, Split::Test) => &self.syn_test,
        }
    }

    /// Stack the selected clips into a `(len, T, n_mels)` batch tensor.
    pub fn stack(&self, group: &[ClipExample<F>], indices: &[usize]) -> Array3<F> {
        let mut out = Array3::zeros((indices.len(), self.t_len, self.n_mels));
        for (row, &i) in indices.iter().enumerate() {
            out.slice_mut(ndarray::s![row, .., ..]).assign(&group[i].features);
        }
        out
    }
}

/// Shift a clip's features to zero mean and unit spread:
/// `(x - mean) / (std + 1e-5)` over all entries.
pub fn standardize<F: Real>(features: &mut Array2<F>) {
    let n = real::<F>(features.len() as f64);
    let mut mean = F::zero();
    for &v in features.iter() {
        mean += v;
    }
    mean /= n;
    let mut var = F::zero();
    for &v in features.iter() {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let denom = var.sqrt() + real::<F>(1e-5);
    features.mapv_inplace(|v| (v - mean) / denom);
}

/// Read a manifest and decode every referenced clip into features and labels.
/// Audio paths are resolved relative to the manifest's directory.
pub fn load_dataset<F: Real>(
    manifest_path: &Path,
    features_cfg: &FeatureConfig,
    n_classes: usize,
) -> Result<Dataset<F>> {
    features_cfg.validate()?;
    let records = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut dataset = Dataset {
        real_train: Vec::new(),
        syn_train: Vec::new(),
        real_test: Vec::new(),
        syn_test: Vec::new(),
        t_len: 0,
        n_mels: features_cfg.n_mels,
        frame_rate: features_cfg.frame_rate(),
    };
    for record in records {
        let (samples, sr) = wav::read_wav_mono16::<F>(&root.join(&record.audio_path))?;
        if sr != features_cfg.sample_rate {
            return Err(Error::Audio(format!(
                "clip {:?} sampled at {sr} Hz, features expect {} Hz",
                record.clip_id, features_cfg.sample_rate
            )));
        }
        let feats = extract_logmel(&samples, features_cfg)?;
        let t_len = feats.values.nrows();
        if dataset.t_len == 0 {
            dataset.t_len = t_len;
        } else if t_len != dataset.t_len {
            return Err(Error::Shape(format!(
                "clip {:?} has {t_len} frames, earlier clips have {}",
                record.clip_id, dataset.t_len
            )));
        }
        if let Some(&c) = record.weak_labels.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Manifest(format!(
                "clip {:?} has weak label {c} outside 0..{n_classes}",
                record.clip_id
            )));
        }
        let frame_labels = match &record.events {
            Some(events) => Some(
                events_to_frame_labels(events, dataset.frame_rate, t_len, n_classes)?.values,
            ),
            None => None,
        };
        let mut features = feats.values;
        standardize(&mut features);
        let example = ClipExample {
            clip_id: record.clip_id,
            domain: record.domain,
            weak: record.weak_labels,
            events: record.events,
            frame_labels,
            features,
        };
        match (record.domain, record.split) {
            (Domain::Real, Split::Train) => dataset.real_train.push(example),
            (Domain::Synthetic, Split::Train) => dataset.syn_train.push(example),
            (Domain::Real, Split::Test) => dataset.real_test.push(example),
            (Domain::Synthetic, Split::Test) => dataset.syn_test.push(example),
        }
    }
    if dataset.real_train.is_empty()
        || dataset.syn_train.is_empty()
        || dataset.real_test.is_empty()
        || dataset.syn_test.is_empty()
    {
        return Err(Error::Manifest(
            "manifest must cover train and test splits of both domains".into(),
        ));
    }
    log::info!(
        "loaded {} train + {} test clips ({} frames x {} mels each)",
        dataset.real_train.len() + dataset.syn_train.len(),
        dataset.real_test.len() + dataset.syn_test.len(),
        dataset.t_len,
        dataset.n_mels
    );
    Ok(dataset)
}
