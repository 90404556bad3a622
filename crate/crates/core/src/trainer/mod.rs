//! Mixed-domain training: each step draws one batch per domain, pushes both
//! through the shared encoder, and optimizes the weighted sum of the weak
//! tagging losses, the frame-level detection loss on synthetic clips, and the
//! inter-frame distance loss over the combined batch. Also hosts the
//! experiment runner and the four-system ablation harness.

pub mod adam;
pub mod data;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::FrameLabelMatrix;
use crate::error::{Error, Result};
use crate::ifd::{ifd_loss, make_pseudo_labels, sample_frame_pairs, IfdConfig, PairingClip};
use crate::metrics::{
    event_based_scores, frames_to_events, post_process, tagging_scores, EvalConfig, EvalReport,
};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{sedb_loss_grad, weak_loss_grad, AtpOutput, SedModel};
use crate::scalar::{real, to_f64, Real};

pub use adam::Adam;
pub use data::{load_dataset, ClipExample, Dataset};

/// Clips evaluated per forward pass during evaluation.
const EVAL_CHUNK: usize = 16;

/// Seed offsets giving batch shuffling and hinge subsampling independent
/// random streams derived from the one configured seed.
const SHUFFLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const IFD_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Optimization settings and branch toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Clips drawn from each domain per step; a step sees twice this many.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub lambda_weak_real: f64,
    pub lambda_weak_syn: f64,
    pub lambda_ifd: f64,
    pub lambda_sedb: f64,
    pub enable_ifd: bool,
    pub enable_sedb: bool,
    pub seed: u64,
    /// Also evaluate every this many epochs during training (0 = only after
    /// the final epoch).
    pub eval_every_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            lambda_weak_real: 1.0,
            lambda_weak_syn: 1.0,
            lambda_ifd: 1.0,
            lambda_sedb: 0.5,
            enable_ifd: true,
            enable_sedb: true,
            seed: 1,
            eval_every_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("train.batch_size: must be at least 1".into()));
        }
        if self.enable_ifd && self.batch_size < 2 {
            return Err(Error::Config(
                "train.batch_size: must be at least 2 when enable_ifd (pairs need two clips)"
                    .into(),
            ));
        }
        if self.epochs < 1 {
            return Err(Error::Config("train.epochs: must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate: must be positive".into()));
        }
        for (key, beta) in
            [("train.adam_beta1", self.adam_beta1), ("train.adam_beta2", self.adam_beta2)]
        {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{key}: must lie in [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("train.adam_epsilon: must be positive".into()));
        }
        for (key, lambda) in [
            ("train.lambda_weak_real", self.lambda_weak_real),
            ("train.lambda_weak_syn", self.lambda_weak_syn),
            ("train.lambda_ifd", self.lambda_ifd),
            ("train.lambda_sedb", self.lambda_sedb),
        ] {
            if !(lambda >= 0.0) {
                return Err(Error::Config(format!("{key}: must be non-negative")));
            }
        }
        Ok(())
    }
}

/// The four ablation systems, named by which branches they add on top of the
/// weakly supervised tagging model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Baseline,
    Ifd,
    Sedb,
    SedbIfd,
}

impl System {
    pub const ALL: [System; 4] = [System::Baseline, System::Ifd, System::Sedb, System::SedbIfd];

    pub fn name(self) -> &'static str {
        match self {
            System::Baseline => "baseline",
            System::Ifd => "ifd",
            System::Sedb => "sedb",
            System::SedbIfd => "sedb_ifd",
        }
    }

    /// `(enable_ifd, enable_sedb)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            System::Baseline => (false, false),
            System::Ifd => (true, false),
            System::Sedb => (false, true),
            System::SedbIfd => (true, true),
        }
    }

    pub fn from_flags(enable_ifd: bool, enable_sedb: bool) -> System {
        match (enable_ifd, enable_sedb) {
            (false, false) => System::Baseline,
            (true, false) => System::Ifd,
            (false, true) => System::Sedb,
            (true, true) => System::SedbIfd,
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        let (ifd, sedb) = self.flags();
        config.enable_ifd = ifd;
        config.enable_sedb = sedb;
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(System::Baseline),
            "ifd" => Ok(System::Ifd),
            "sedb" => Ok(System::Sedb),
            "sedb_ifd" => Ok(System::SedbIfd),
            other => Err(Error::Config(format!(
                "unknown system {other:?}; expected baseline, ifd, sedb, or sedb_ifd"
            ))),
        }
    }
}

/// Per-branch loss values of one step. Branch values are unweighted; `total`
/// is the weighted sum actually differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub weak_real: f64,
    pub weak_syn: f64,
    pub ifd: f64,
    pub sedb: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn compose(cfg: &TrainConfig, weak_real: f64, weak_syn: f64, ifd: f64, sedb: f64) -> Self {
        let total = cfg.lambda_weak_real * weak_real
            + cfg.lambda_weak_syn * weak_syn
            + cfg.lambda_ifd * ifd
            + cfg.lambda_sedb * sedb;
        Self { weak_real, weak_syn, ifd, sedb, total }
    }

    pub fn is_finite(&self) -> bool {
        self.weak_real.is_finite()
            && self.weak_syn.is_finite()
            && self.ifd.is_finite()
            && self.sedb.is_finite()
            && self.total.is_finite()
    }
}

/// One domain's slice of a training step: stacked features plus per-clip
/// labels, in matching order.
pub struct StepBatch<F: Real> {
    /// `(clips, T, n_mels)`.
    pub features: Array3<F>,
    pub weak: Vec<BTreeSet<usize>>,
    /// Strong frame labels where available (synthetic clips).
    pub frame_labels: Vec<Option<FrameLabelMatrix>>,
}

impl<F: Real> StepBatch<F> {
    pub fn from_group(dataset: &Dataset<F>, group: &[ClipExample<F>], indices: &[usize]) -> Self {
        let features = dataset.stack(group, indices);
        let weak = indices.iter().map(|&i| group[i].weak.clone()).collect();
        let frame_labels = indices
            .iter()
            .map(|&i| {
                group[i].frame_labels.as_ref().map(|values| FrameLabelMatrix {
                    values: values.clone(),
                    frame_rate: dataset.frame_rate,
                })
            })
            .collect();
        Self { features, weak, frame_labels }
    }

    pub fn len(&self) -> usize {
        self.features.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, side: &str) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Train(format!("{side} batch is empty")));
        }
        if self.weak.len() != n || self.frame_labels.len() != n {
            return Err(Error::Shape(format!(
                "{side} batch has {n} feature rows but {} weak / {} label entries",
                self.weak.len(),
                self.frame_labels.len()
            )));
        }
        Ok(())
    }
}

/// Owns the model, the optimizer, and the RNG streams of one training run.
///
/// Two independent seeded streams keep the contract "disabling a branch
/// equals zeroing its weight" exact: batch shuffling never observes whether
/// the inter-frame distance branch drew subsampling randomness.
pub struct Trainer<F: Real> {
    pub model: SedModel<F>,
    pub train_cfg: TrainConfig,
    pub ifd_cfg: IfdConfig,
    opt: Adam<F>,
    shuffle_rng: ChaCha8Rng,
    ifd_rng: ChaCha8Rng,
    frame_rate: f64,
    epoch: usize,
    step: u64,
}

impl<F: Real> Trainer<F> {
    pub fn new(
        model: SedModel<F>,
        train_cfg: TrainConfig,
        ifd_cfg: IfdConfig,
        frame_rate: f64,
    ) -> Result<Self> {
        train_cfg.validate()?;
        ifd_cfg.validate()?;
        if !(frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        let opt = Adam::new(
            model.n_params(),
            train_cfg.learning_rate,
            train_cfg.adam_beta1,
            train_cfg.adam_beta2,
            train_cfg.adam_epsilon,
        );
        let shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(SHUFFLE_STREAM));
        let ifd_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(IFD_STREAM));
        Ok(Self {
            model,
            train_cfg,
            ifd_cfg,
            opt,
            shuffle_rng,
            ifd_rng,
            frame_rate,
            epoch: 0,
            step: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Override the epoch counter (the inter-frame distance branch gates on
    /// it); `train_epoch` advances it automatically.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    fn ifd_active(&self) -> bool {
        self.train_cfg.enable_ifd && self.epoch >= self.ifd_cfg.warmup_epochs
    }

    /// Forward and backward over one mixed batch. Returns the losses, the
    /// flat parameter gradient of the weighted total, and the encoder batch
    /// statistics; parameters are not touched.
    pub fn forward_backward(
        &mut self,
        real_batch: &StepBatch<F>,
        syn_batch: &StepBatch<F>,
    ) -> Result<(LossBreakdown, Vec<F>, Vec<crate::model::BnBatchStats<F>>)> {
        real_batch.check("real")?;
        syn_batch.check("synthetic")?;
        let (n_real, t_real, m_real) = real_batch.features.dim();
        let (n_syn, t_syn, m_syn) = syn_batch.features.dim();
        if t_real != t_syn || m_real != m_syn {
            return Err(Error::Shape(format!(
                "real batch is {t_real}x{m_real} per clip, synthetic is {t_syn}x{m_syn}"
            )));
        }
        let cfg = &self.train_cfg;
        let eps = self.model.config.prob_epsilon;
        let n_total = n_real + n_syn;

        let combined =
            concatenate(Axis(0), &[real_batch.features.view(), syn_batch.features.view()])
                .expect("batch shapes already checked");
        let (emb, cache, stats) = self.model.encode_train(&combined)?;
        let mut grads = self.model.zero_grads();
        let mut d_emb = Array3::<F>::zeros(emb.raw_dim());

        // attention pooling once per clip; reused by every branch
        let outputs: Vec<AtpOutput<F>> =
            (0..n_total).map(|i| self.model.attention_pool(emb.slice(s![i, .., ..]))).collect();
        let weak_of = |i: usize| -> &BTreeSet<usize> {
            if i < n_real {
                &real_batch.weak[i]
            } else {
                &syn_batch.weak[i - n_real]
            }
        };

        // weak tagging loss per domain: mean over the domain's clips
        let mut weak_losses = [0.0f64; 2];
        for i in 0..n_total {
            let (domain_idx, lambda, count) = if i < n_real {
                (0, cfg.lambda_weak_real, n_real)
            } else {
                (1, cfg.lambda_weak_syn, n_syn)
            };
            let (value, grad) = weak_loss_grad(outputs[i].clip_probs.view(), weak_of(i), eps);
            weak_losses[domain_idx] += to_f64(value) / count as f64;
            if lambda > 0.0 {
                let d_clip = grad.mapv(|g| g * real::<F>(lambda / count as f64));
                let demb_i = self.model.attention_backward(
                    emb.slice(s![i, .., ..]),
                    &outputs[i],
                    d_clip.view(),
                    &mut grads,
                );
                d_emb.slice_mut(s![i, .., ..]).scaled_add(F::one(), &demb_i);
            }
        }

        // frame-level detection loss on the strongly labeled synthetic clips
        let mut sedb_value = 0.0f64;
        if cfg.enable_sedb {
            for j in 0..n_syn {
                let labels = syn_batch.frame_labels[j].as_ref().ok_or_else(|| {
                    Error::Train("synthetic batch lacks strong frame labels".into())
                })?;
                let i = n_real + j;
                let probs = self.model.sedb_forward(emb.slice(s![i, .., ..]));
                let (value, d_probs) = sedb_loss_grad(&probs, labels, eps)?;
                sedb_value += to_f64(value) / n_syn as f64;
                if cfg.lambda_sedb > 0.0 {
                    let scaled = d_probs.mapv(|g| g * real::<F>(cfg.lambda_sedb / n_syn as f64));
                    let demb_i = self.model.sedb_backward(
                        emb.slice(s![i, .., ..]),
                        &probs,
                        &scaled,
                        &mut grads,
                    );
                    d_emb.slice_mut(s![i, .., ..]).scaled_add(F::one(), &demb_i);
                }
            }
        }

        // inter-frame distance loss over the combined batch, once past warmup
        let mut ifd_value = 0.0f64;
        if self.ifd_active() {
            let mut labels: Vec<FrameLabelMatrix> = Vec::with_capacity(n_total);
            for i in 0..n_total {
                if i < n_real {
                    // pseudo strong labels from detached frame probabilities
                    labels.push(make_pseudo_labels(
                        &outputs[i].frame_probs,
                        weak_of(i),
                        self.ifd_cfg.pseudo_threshold,
                        self.frame_rate,
                    ));
                } else {
                    let strong = syn_batch.frame_labels[i - n_real].as_ref().ok_or_else(|| {
                        Error::Train("synthetic batch lacks strong frame labels".into())
                    })?;
                    labels.push(strong.clone());
                }
            }
            let pairing: Vec<PairingClip> = (0..n_total)
                .map(|i| PairingClip { weak: weak_of(i), labels: &labels[i] })
                .collect();
            let pairs = sample_frame_pairs(&pairing, self.ifd_cfg.include_silence_positives)?;
            let projections: Vec<Array2<F>> =
                (0..n_total).map(|i| self.model.domain_project(emb.slice(s![i, .., ..]))).collect();
            let (value, d_proj) =
                ifd_loss(&projections, &pairs, &self.ifd_cfg, &mut self.ifd_rng);
            ifd_value = to_f64(value);
            if cfg.lambda_ifd > 0.0 {
                for i in 0..n_total {
                    let scaled = d_proj[i].mapv(|g| g * real::<F>(cfg.lambda_ifd));
                    let demb_i = self.model.domain_project_backward(
                        emb.slice(s![i, .., ..]),
                        &scaled,
                        &mut grads,
                    );
                    d_emb.slice_mut(s![i, .., ..]).scaled_add(F::one(), &demb_i);
                }
            }
        }

        self.model.encode_backward(&cache, &d_emb, &mut grads);

        let breakdown =
            LossBreakdown::compose(cfg, weak_losses[0], weak_losses[1], ifd_value, sedb_value);
        Ok((breakdown, grads, stats))
    }

    /// One optimization step on the weighted total loss.
    pub fn train_step(&mut self, real: &StepBatch<F>, syn: &StepBatch<F>) -> Result<LossBreakdown> {
        let (breakdown, grads, stats) = self.forward_backward(real, syn)?;
        if !breakdown.is_finite() {
            return Err(Error::Train(format!(
                "non-finite loss at step {} (epoch {}): {breakdown:?}",
                self.step, self.epoch
            )));
        }
        self.opt.step(&mut self.model.params, &grads);
        self.model.update_bn_running(&stats);
        self.step += 1;
        Ok(breakdown)
    }

    /// One pass over the training data: shuffles each domain independently,
    /// pairs off batches, drops the trailing partial batch, and advances the
    /// epoch counter.
    pub fn train_epoch(&mut self, dataset: &Dataset<F>) -> Result<Vec<LossBreakdown>> {
        let s = self.train_cfg.batch_size;
        let n_steps = dataset.real_train.len().min(dataset.syn_train.len()) / s;
        if n_steps == 0 {
            return Err(Error::Train(format!(
                "batch size {s} exceeds a training split ({} real / {} synthetic clips)",
                dataset.real_train.len(),
                dataset.syn_train.len()
            )));
        }
        let mut real_idx: Vec<usize> = (0..dataset.real_train.len()).collect();
        let mut syn_idx: Vec<usize> = (0..dataset.syn_train.len()).collect();
        real_idx.shuffle(&mut self.shuffle_rng);
        syn_idx.shuffle(&mut self.shuffle_rng);
        let mut breakdowns = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let rb = StepBatch::from_group(
                dataset,
                &dataset.real_train,
                &real_idx[k * s..(k + 1) * s],
            );
            let sb =
                StepBatch::from_group(dataset, &dataset.syn_train, &syn_idx[k * s..(k + 1) * s]);
            breakdowns.push(self.train_step(&rb, &sb)?);
        }
        self.epoch += 1;
        Ok(breakdowns)
    }
}

/// Run a trained (or untrained) model over an annotated clip list: frame
/// probabilities are post-processed into events and scored against the
/// references; clip probabilities are scored against the weak labels.
pub fn evaluate_model<F: Real>(
    model: &SedModel<F>,
    clips: &[ClipExample<F>],
    eval_cfg: &EvalConfig,
    frame_rate: f64,
) -> Result<EvalReport> {
    eval_cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Eval("evaluation split is empty".into()));
    }
    let n_classes = model.config.n_classes;
    let mut references = BTreeMap::new();
    for clip in clips {
        let events = clip.events.clone().ok_or_else(|| {
            Error::Eval(format!("clip {:?} lacks strong annotations", clip.clip_id))
        })?;
        references.insert(clip.clip_id.clone(), events);
    }
    let mut predictions = BTreeMap::new();
    let mut clip_probs = Vec::with_capacity(clips.len());
    let mut weak_labels = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(EVAL_CHUNK) {
        let (t_len, n_mels) = chunk[0].features.dim();
        let mut batch = Array3::zeros((chunk.len(), t_len, n_mels));
        for (row, clip) in chunk.iter().enumerate() {
            batch.slice_mut(s![row, .., ..]).assign(&clip.features);
        }
        let emb = model.encode_eval(&batch)?;
        for (row, clip) in chunk.iter().enumerate() {
            let out = model.attention_pool(emb.slice(s![row, .., ..]));
            let labels = post_process(&out.frame_probs, frame_rate, eval_cfg);
            predictions.insert(clip.clip_id.clone(), frames_to_events(&labels));
            clip_probs.push(out.clip_probs);
            weak_labels.push(clip.weak.clone());
        }
    }
    let event = event_based_scores(&predictions, &references, n_classes, eval_cfg)?;
    let tagging =
        tagging_scores(&clip_probs, &weak_labels, n_classes, eval_cfg.decision_threshold)?;
    Ok(EvalReport { event, tagging })
}

/// Everything one experiment writes, parsed back for the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub system: String,
    pub seed: u64,
    pub config_hash: String,
    pub real_test: EvalReport,
    pub synthetic_test: EvalReport,
}

/// Paths and parsed outputs of one completed run.
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub report_path: PathBuf,
    pub report: ExperimentReport,
}

fn loss_row(prefix: &str, b: &LossBreakdown) -> String {
    format!(
        "{prefix},{},{},{},{},{}\n",
        b.weak_real, b.weak_syn, b.ifd, b.sedb, b.total
    )
}

fn mean_breakdown(cfg: &TrainConfig, steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    LossBreakdown::compose(
        cfg,
        steps.iter().map(|b| b.weak_real).sum::<f64>() / n,
        steps.iter().map(|b| b.weak_syn).sum::<f64>() / n,
        steps.iter().map(|b| b.ifd).sum::<f64>() / n,
        steps.iter().map(|b| b.sedb).sum::<f64>() / n,
    )
}

/// Train on an already-loaded dataset and write the run directory: config
/// snapshot, per-epoch and per-step loss logs, checkpoint, and reports.
pub fn run_experiment_on<F: Real>(
    run_cfg: &RunConfig,
    dataset: &Dataset<F>,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    run_cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), run_cfg.to_toml()?)?;
    let config_hash = run_cfg.config_hash();

    let model = SedModel::<F>::init(run_cfg.model.clone(), run_cfg.train.seed)?;
    let mut trainer =
        Trainer::new(model, run_cfg.train.clone(), run_cfg.ifd.clone(), dataset.frame_rate)?;

    let mut epoch_rows = String::from("epoch,weak_real,weak_syn,ifd,sedb,total\n");
    let mut step_rows = String::from("step,epoch,weak_real,weak_syn,ifd,sedb,total\n");
    let mut history_rows = String::from("epoch,split,event_macro_f1,tagging_macro_f1\n");
    let mut step_index: u64 = 0;
    for epoch in 0..run_cfg.train.epochs {
        let steps = trainer.train_epoch(dataset)?;
        for b in &steps {
            step_rows.push_str(&loss_row(&format!("{step_index},{epoch}"), b));
            step_index += 1;
        }
        let mean = mean_breakdown(&run_cfg.train, &steps);
        log::info!(
            "epoch {}/{}: total {:.4} (weak_real {:.4}, weak_syn {:.4}, ifd {:.4}, sedb {:.4})",
            epoch + 1,
            run_cfg.train.epochs,
            mean.total,
            mean.weak_real,
            mean.weak_syn,
            mean.ifd,
            mean.sedb
        );
        epoch_rows.push_str(&loss_row(&epoch.to_string(), &mean));
        let cadence = run_cfg.train.eval_every_epochs;
        if cadence > 0 && (epoch + 1) % cadence == 0 {
            for (split, clips) in
                [("real_test", &dataset.real_test), ("synthetic_test", &dataset.syn_test)]
            {
                let rep = evaluate_model(&trainer.model, clips, &run_cfg.eval, dataset.frame_rate)?;
                history_rows.push_str(&format!(
                    "{epoch},{split},{},{}\n",
                    rep.event.macro_f1, rep.tagging.macro_f1
                ));
            }
        }
    }

    let real_test = evaluate_model(&trainer.model, &dataset.real_test, &run_cfg.eval, dataset.frame_rate)?;
    let synthetic_test =
        evaluate_model(&trainer.model, &dataset.syn_test, &run_cfg.eval, dataset.frame_rate)?;

    let checkpoint_path = out_dir.join("checkpoint.json");
    save_checkpoint(&trainer.model, &config_hash, &checkpoint_path)?;
    fs::write(out_dir.join("loss_epochs.csv"), &epoch_rows)?;
    fs::write(out_dir.join("loss_steps.csv"), &step_rows)?;
    if run_cfg.train.eval_every_epochs > 0 {
        fs::write(out_dir.join("eval_history.csv"), &history_rows)?;
    }

    let system = System::from_flags(run_cfg.train.enable_ifd, run_cfg.train.enable_sedb);
    let report = ExperimentReport {
        system: system.name().to_string(),
        seed: run_cfg.train.seed,
        config_hash,
        real_test,
        synthetic_test,
    };
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let mut report_csv = String::from("split,metric,value\n");
    for (split, rep) in
        [("real_test", &report.real_test), ("synthetic_test", &report.synthetic_test)]
    {
        report_csv.push_str(&format!("{split},event_macro_f1,{}\n", rep.event.macro_f1));
        report_csv.push_str(&format!("{split},tagging_macro_f1,{}\n", rep.tagging.macro_f1));
    }
    fs::write(out_dir.join("report.csv"), report_csv)?;

    Ok(RunArtifacts {
        run_dir: out_dir.to_path_buf(),
        checkpoint_path,
        report_path,
        report,
    })
}

/// [`run_experiment_on`] with dataset loading from a manifest.
pub fn run_experiment<F: Real>(
    run_cfg: &RunConfig,
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    run_cfg.validate()?;
    let dataset =
        load_dataset::<F>(manifest_path, &run_cfg.features, run_cfg.model.n_classes)?;
    run_experiment_on(run_cfg, &dataset, out_dir)
}

/// One (system, split, metric) aggregate of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub system: String,
    pub split: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub values: Vec<f64>,
}

/// Mean and spread of both metrics for all four systems on both test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, system: &str, split: &str, metric: &str) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.system == system && c.split == split && c.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,split,metric,mean,std\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{},{}\n", c.system, c.split, c.metric, c.mean, c.std));
        }
        out
    }

    /// Rows formatted for terminal display, `mean ± std` per metric.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for split in ["real_test", "synthetic_test"] {
            out.push_str(&format!("{split}:\n"));
            out.push_str(&format!(
                "  {:<10} {:>22} {:>22}\n",
                "system", "event_macro_f1", "tagging_macro_f1"
            ));
            for system in System::ALL {
                let cell = |metric: &str| {
                    self.get(system.name(), split, metric)
                        .map(|c| format!("{:.4} +/- {:.4}", c.mean, c.std))
                        .unwrap_or_else(|| "-".to_string())
                };
                out.push_str(&format!(
                    "  {:<10} {:>22} {:>22}\n",
                    system.name(),
                    cell("event_macro_f1"),
                    cell("tagging_macro_f1")
                ));
            }
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train all four systems once per seed and aggregate the reports. Writes
/// one run directory per (system, seed) under `out_dir/runs/`, plus
/// `ablation.csv` and `ablation.json`.
pub fn run_ablation<F: Real>(
    base_cfg: &RunConfig,
    manifest_path: &Path,
    out_dir: &Path,
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.len() < 2 {
        return Err(Error::Config("ablation needs at least 2 seeds".into()));
    }
    base_cfg.validate()?;
    let dataset =
        load_dataset::<F>(manifest_path, &base_cfg.features, base_cfg.model.n_classes)?;
    fs::create_dir_all(out_dir.join("runs"))?;

    // per (system, split, metric) -> per-seed values
    let mut results: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let total_runs = System::ALL.len() * seeds.len();
    for (sys_idx, system) in System::ALL.iter().enumerate() {
        for (seed_idx, &seed) in seeds.iter().enumerate() {
            let mut cfg = base_cfg.clone();
            system.apply(&mut cfg.train);
            cfg.train.seed = seed;
            let run_dir = out_dir.join("runs").join(format!("{}_seed{}", system.name(), seed));
            log::info!(
                "run {}/{total_runs}: system {}, seed {seed}",
                sys_idx * seeds.len() + seed_idx + 1,
                system.name()
            );
            let artifacts = run_experiment_on(&cfg, &dataset, &run_dir)
                .map_err(|e| Error::Train(format!("system {system}, seed {seed}: {e}")))?;
            log::info!(
                "  real_test event F1 {:.4}, tagging F1 {:.4}",
                artifacts.report.real_test.event.macro_f1,
                artifacts.report.real_test.tagging.macro_f1
            );
            for (split, rep) in [
                ("real_test", &artifacts.report.real_test),
                ("synthetic_test", &artifacts.report.synthetic_test),
            ] {
                for (metric, value) in [
                    ("event_macro_f1", rep.event.macro_f1),
                    ("tagging_macro_f1", rep.tagging.macro_f1),
                ] {
                    results
                        .entry((system.name().into(), split.into(), metric.into()))
                        .or_default()
                        .push(value);
                }
            }
        }
    }

    let mut cells = Vec::new();
    for system in System::ALL {
        for split in ["real_test", "synthetic_test"] {
            for metric in ["event_macro_f1", "tagging_macro_f1"] {
                let key = (system.name().to_string(), split.to_string(), metric.to_string());
                let values = results.remove(&key).expect("every cell was filled");
                let (mean, std) = mean_std(&values);
                cells.push(AblationCell {
                    system: key.0,
                    split: key.1,
                    metric: key.2,
                    mean,
                    std,
                    values,
                });
            }
        }
    }
    let table = AblationTable { cells };
    fs::write(out_dir.join("ablation.csv"), table.to_csv())?;
    fs::write(out_dir.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
