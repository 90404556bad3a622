//! Procedural two-domain corpus: scene synthesis, label conversions, log-mel
//! features, and the JSONL manifest.
//!
//! The generator replaces the non-redistributable DCASE/FSD/SINS audio with a
//! self-contained synthesizer. Each class renders as a fixed, distinguishable
//! template; the "real" domain differs from the "synthetic" one by a
//! configured covariate shift (background spectrum tilt, gain offset, and a
//! low-pass filter) that changes the audio but not the label semantics.

pub mod features;
pub mod manifest;
pub mod synth;
pub mod wav;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use synth::{DomainShift, SceneEvent, SceneSpec};

pub use features::{extract_logmel, FeatureConfig, FeatureMatrix};
pub use manifest::{read_manifest, write_manifest};

/// One sound event occurrence: the strong label unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub class_id: usize,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl EventAnnotation {
    pub fn new(class_id: usize, onset_s: f64, offset_s: f64) -> Self {
        Self { class_id, onset_s, offset_s }
    }

    pub fn duration(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

/// Which data distribution a clip was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Synthetic,
    Real,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Synthetic => write!(f, "synthetic"),
            Domain::Real => write!(f, "real"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One audio clip in the manifest.
///
/// Synthetic records always carry events; real training records carry weak
/// labels only; real test records carry events for evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub domain: Domain,
    pub split: Split,
    pub duration_s: f64,
    pub audio_path: String,
    pub weak_labels: BTreeSet<usize>,
    pub events: Option<Vec<EventAnnotation>>,
}

/// T x C binary frame activity matrix at the model frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabelMatrix {
    pub values: Array2<u8>,
    pub frame_rate: f64,
}

impl FrameLabelMatrix {
    pub fn zeros(t_len: usize, n_classes: usize, frame_rate: f64) -> Self {
        Self { values: Array2::zeros((t_len, n_classes)), frame_rate }
    }

    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    /// Column-wise OR over time, as a set of class ids.
    pub fn active_classes(&self) -> BTreeSet<usize> {
        (0..self.n_classes())
            .filter(|&c| self.values.column(c).iter().any(|&v| v != 0))
            .collect()
    }
}

/// Parameters of the procedural corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub num_classes: usize,
    /// Training clips generated for each domain.
    pub clips_per_domain: usize,
    /// Test clips generated for each domain (strong labels kept).
    pub test_clips_per_domain: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Inclusive range of event counts per clip.
    pub events_per_clip: [usize; 2],
    /// Range of event durations in seconds.
    pub event_duration_s: [f64; 2],
    /// Per-event SNR range (dB) in the synthetic domain.
    pub snr_db_synthetic: [f64; 2],
    /// Per-event SNR range (dB) in the real domain.
    pub snr_db_real: [f64; 2],
    /// Covariate shift applied to real-domain clips.
    pub domain_shift: DomainShift,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            clips_per_domain: 400,
            test_clips_per_domain: 100,
            duration_s: 4.0,
            sample_rate: 16_000,
            events_per_clip: [1, 3],
            event_duration_s: [0.5, 1.5],
            snr_db_synthetic: [6.0, 18.0],
            snr_db_real: [2.0, 12.0],
            domain_shift: DomainShift::default(),
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("corpus.num_classes: must be at least 2".into()));
        }
        if self.clips_per_domain < 1 {
            return Err(Error::Config("corpus.clips_per_domain: must be at least 1".into()));
        }
        if self.test_clips_per_domain < 1 {
            return Err(Error::Config("corpus.test_clips_per_domain: must be at least 1".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("corpus.duration_s: must be positive".into()));
        }
        if self.sample_rate < 2000 {
            return Err(Error::Config("corpus.sample_rate: must be at least 2000 Hz".into()));
        }
        if self.events_per_clip[0] > self.events_per_clip[1] || self.events_per_clip[0] < 1 {
            return Err(Error::Config(
                "corpus.events_per_clip: range must be non-empty with minimum >= 1".into(),
            ));
        }
        if !(self.event_duration_s[0] > 0.0)
            || self.event_duration_s[0] > self.event_duration_s[1]
            || self.event_duration_s[1] > self.duration_s
        {
            return Err(Error::Config(
                "corpus.event_duration_s: range must be non-empty, positive, and fit the clip duration"
                    .into(),
            ));
        }
        for (key, range) in [
            ("corpus.snr_db_synthetic", self.snr_db_synthetic),
            ("corpus.snr_db_real", self.snr_db_real),
        ] {
            if range[0] > range[1] {
                return Err(Error::Config(format!("{key}: range must be non-empty")));
            }
        }
        self.domain_shift.validate()?;
        Ok(())
    }
}

/// Distinct class ids present in an event list (the weak label set).
pub fn weaken(events: &[EventAnnotation]) -> BTreeSet<usize> {
    events.iter().map(|e| e.class_id).collect()
}

/// Rasterize events onto a T x C frame grid.
///
/// Frame `t` is active for class `c` iff some event of class `c` covers the
/// frame center `(t + 0.5) / frame_rate` (half-open: `onset <= center <
/// offset`).
pub fn events_to_frame_labels(
    events: &[EventAnnotation],
    frame_rate: f64,
    t_len: usize,
    n_classes: usize,
) -> Result<FrameLabelMatrix> {
    let mut labels = FrameLabelMatrix::zeros(t_len, n_classes, frame_rate);
    let clip_end = t_len as f64 / frame_rate;
    for ev in events {
        if ev.class_id >= n_classes {
            return Err(Error::Shape(format!(
                "event class_id {} out of range for {} classes",
                ev.class_id, n_classes
            )));
        }
        if ev.onset_s < 0.0 || ev.offset_s <= ev.onset_s || ev.offset_s > clip_end + 1e-9 {
            return Err(Error::Shape(format!(
                "event ({}, {:.3}, {:.3}) outside clip bounds [0, {:.3}]",
                ev.class_id, ev.onset_s, ev.offset_s, clip_end
            )));
        }
        for t in 0..t_len {
            let center = (t as f64 + 0.5) / frame_rate;
            if ev.onset_s <= center && center < ev.offset_s {
                labels.values[[t, ev.class_id]] = 1;
            }
        }
    }
    Ok(labels)
}

/// Summary statistics printed by the `generate` command.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusStats {
    pub clips: usize,
    /// Event count per class over the whole corpus.
    pub class_histogram: Vec<usize>,
    /// Expected number of simultaneously active events at a random time.
    pub mean_polyphony: f64,
}

/// Result of [`generate_corpus`].
#[derive(Debug)]
pub struct GeneratedCorpus {
    pub records: Vec<ClipRecord>,
    pub stats: CorpusStats,
    pub manifest_path: PathBuf,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn clip_rng(seed: u64, domain: Domain, split: Split, index: usize) -> ChaCha8Rng {
    let d = match domain {
        Domain::Synthetic => 1u64,
        Domain::Real => 2u64,
    };
    let s = match split {
        Split::Train => 1u64,
        Split::Test => 2u64,
    };
    let mut z = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    z = splitmix64(z ^ d);
    z = splitmix64(z ^ (s << 8));
    z = splitmix64(z ^ (index as u64));
    ChaCha8Rng::seed_from_u64(z)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}

/// Draw a non-degenerate event list: classes uniform, onsets uniform, events
/// of the same class never overlap (cross-class overlap is allowed).
fn draw_events(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<EventAnnotation> {
    let count = rng.gen_range(cfg.events_per_clip[0]..=cfg.events_per_clip[1]);
    let mut events: Vec<EventAnnotation> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..100 {
            let class_id = rng.gen_range(0..cfg.num_classes);
            let max_dur = cfg.event_duration_s[1].min(cfg.duration_s);
            let dur = uniform(rng, cfg.event_duration_s[0], max_dur);
            let onset = uniform(rng, 0.0, cfg.duration_s - dur);
            let candidate = EventAnnotation::new(class_id, onset, onset + dur);
            let overlaps_same_class = events.iter().any(|e| {
                e.class_id == class_id && e.onset_s < candidate.offset_s && candidate.onset_s < e.offset_s
            });
            if !overlaps_same_class {
                events.push(candidate);
                break;
            }
        }
    }
    events.sort_by(|a, b| {
        a.onset_s
            .partial_cmp(&b.onset_s)
            .unwrap()
            .then(a.class_id.cmp(&b.class_id))
    });
    events
}

/// Generate the full two-domain corpus and write audio plus the JSONL
/// manifest under `out_dir`.
///
/// Splits: synthetic train (strong labels kept), real train (weakened to clip
/// level), and a test split per domain with strong labels kept. Identical
/// configs produce byte-identical manifests and audio.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;

    let plan = [
        (Domain::Synthetic, Split::Train, cfg.clips_per_domain),
        (Domain::Real, Split::Train, cfg.clips_per_domain),
        (Domain::Synthetic, Split::Test, cfg.test_clips_per_domain),
        (Domain::Real, Split::Test, cfg.test_clips_per_domain),
    ];

    let mut records = Vec::new();
    let mut class_histogram = vec![0usize; cfg.num_classes];
    let mut polyphony_sum = 0.0;
    let mut clip_count = 0usize;

    for (domain, split, count) in plan {
        log::info!("synthesizing {count} {domain} {split} clips");
        let snr_range = match domain {
            Domain::Synthetic => cfg.snr_db_synthetic,
            Domain::Real => cfg.snr_db_real,
        };
        for index in 0..count {
            let mut rng = clip_rng(cfg.seed, domain, split, index);
            let events = draw_events(cfg, &mut rng);
            if events.is_empty() {
                return Err(Error::Audio(format!(
                    "could not place any event in clip {domain}_{split}_{index}"
                )));
            }
            let scene = SceneSpec {
                duration_s: cfg.duration_s,
                sample_rate: cfg.sample_rate,
                background_tilt_db_per_octave: match domain {
                    Domain::Synthetic => 0.0,
                    Domain::Real => cfg.domain_shift.background_tilt_db_per_octave,
                },
                background_rms: synth::BACKGROUND_RMS,
                events: events
                    .iter()
                    .map(|e| SceneEvent {
                        class_id: e.class_id,
                        onset_s: e.onset_s,
                        offset_s: e.offset_s,
                        snr_db: uniform(&mut rng, snr_range[0], snr_range[1]),
                    })
                    .collect(),
                shift: match domain {
                    Domain::Synthetic => None,
                    Domain::Real => Some(cfg.domain_shift.clone()),
                },
            };
            let (waveform, events) = synth::synthesize_scene(&scene, &mut rng)?;

            let clip_id = format!("{domain}_{split}_{index:04}");
            let rel_path = format!("audio/{clip_id}.wav");
            wav::write_wav_mono16(&out_dir.join(&rel_path), cfg.sample_rate, &waveform)?;

            for ev in &events {
                class_histogram[ev.class_id] += 1;
                polyphony_sum += ev.duration() / cfg.duration_s;
            }
            clip_count += 1;

            let keep_events = !(domain == Domain::Real && split == Split::Train);
            records.push(ClipRecord {
                clip_id,
                domain,
                split,
                duration_s: cfg.duration_s,
                audio_path: rel_path,
                weak_labels: weaken(&events),
                events: if keep_events { Some(events) } else { None },
            });
        }
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &records)?;

    Ok(GeneratedCorpus {
        records,
        stats: CorpusStats {
            clips: clip_count,
            class_histogram,
            mean_polyphony: polyphony_sum / clip_count as f64,
        },
        manifest_path,
    })
}
