//! Training loop, inference and evaluation reports.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{assemble, extract, target, EventFeatures, FeatureVector, MissingPolicy, Modalities, Pipeline, TimePooling, AUG_HOP, MEL_FRAMES, POOLED_FRAMES};
use super::network::{decode, Adam, Architecture, Batch, Network};
use super::LocalizeError;
use crate::audio_io::EventRecord;
use crate::features::augment::AugmentDraw;
use crate::features::{MelAnalyzer, N_MELS};
use crate::geometry::{decompose_error, pointwise_distances, ContactPoint, CylinderSpec};
use crate::preprocess::{NormMode, NormStats};
use crate::simulate::{child_seed, SensorLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied every `lr_step_epochs`.
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub augment: bool,
    pub modalities: Modalities,
    /// Share of the training set held out for checkpoint selection when no
    /// validation set is given.
    pub val_fraction: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_step_epochs: 50,
            augment: true,
            modalities: Modalities::ALL,
            val_fraction: 0.1,
            hidden: super::network::HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LocalizeError> {
        let bad = |m: &str| Err(LocalizeError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 || self.hidden == 0 {
            return bad("epochs, batch_size, lr_step_epochs and hidden must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning_rate must be positive and lr_decay in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if !self.modalities.any() {
            return bad("no modality enabled");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }
}

/// A trained localizer with everything needed to process raw events.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub net: Network,
    pub norm_stats: NormStats,
    pub modalities: Modalities,
    pub pipeline: Pipeline,
    pub layout: SensorLayout,
    pub cylinder: CylinderSpec,
    pub config: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Extracts features for a set of events.
pub fn prepare(events: &[EventRecord], pipeline: &Pipeline) -> Result<Vec<EventFeatures>, LocalizeError> {
    let analyzer = MelAnalyzer::default();
    events.iter().map(|e| extract(e, pipeline, &analyzer)).collect()
}

/// Population per-channel statistics of the unnormalized log-mel blocks.
pub fn corpus_norm_stats(items: &[EventFeatures]) -> Result<NormStats, LocalizeError> {
    norm_stats_of(&items.iter().collect::<Vec<_>>())
}

fn targets_of(items: &[&EventFeatures]) -> Result<Array2<f64>, LocalizeError> {
    let mut t = Array2::zeros((items.len(), 3));
    for (r, it) in items.iter().enumerate() {
        let l = it.label.ok_or(LocalizeError::Unlabeled)?;
        let y = target(&l);
        for k in 0..3 {
            t[[r, k]] = y[k];
        }
    }
    Ok(t)
}

struct Assembler {
    pooling: TimePooling,
    stats: NormStats,
    flags: Modalities,
    dims: [usize; 3],
}

impl Assembler {
    fn batch(&self, items: &[&EventFeatures], draws: Option<&[AugmentDraw]>, missing: MissingPolicy) -> Result<Batch, LocalizeError> {
        let fvs: Vec<FeatureVector> = items
            .iter()
            .enumerate()
            .map(|(i, f)| assemble(f, &self.stats, self.flags, &self.pooling, draws.map(|d| &d[i]), missing))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&FeatureVector> = fvs.iter().collect();
        Batch::from_vectors(&refs, self.dims)
    }
}

fn mean_loss(net: &Network, asm: &Assembler, items: &[&EventFeatures], batch: usize) -> Result<f64, LocalizeError> {
    let mut total = 0.0;
    for chunk in items.chunks(batch) {
        let b = asm.batch(chunk, None, MissingPolicy::Error)?;
        total += net.batch_loss(&b, &targets_of(chunk)?)? * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Trains the regressor. When `val` is `None`, a seeded `val_fraction` of
/// `train` is held out. Normalization statistics come from the training part
/// only. Returns the weights with the lowest validation loss.
pub fn train(
    train: &[EventFeatures],
    val: Option<&[EventFeatures]>,
    cfg: &TrainConfig,
    pipeline: Pipeline,
    layout: SensorLayout,
    cylinder: CylinderSpec,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, LocalizeError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LocalizeError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 20, 0)));
    let (fit_idx, val_items): (Vec<usize>, Vec<&EventFeatures>) = match val {
        Some(v) if !v.is_empty() => (order, v.iter().collect()),
        _ => {
            let n_val = ((train.len() as f64 * cfg.val_fraction).round() as usize).min(train.len() - 1);
            let (v, f) = order.split_at(n_val);
            (f.to_vec(), v.iter().map(|&i| &train[i]).collect())
        }
    };
    let fit: Vec<&EventFeatures> = fit_idx.iter().map(|&i| &train[i]).collect();
    let stats = norm_stats_of(&fit)?;
    let arch = Architecture::with_inputs(super::input::MEL_DIM, super::input::GCC_DIM, super::input::PROPRIO_DIM, cfg.hidden);
    let mut net = Network::init(arch, child_seed(cfg.seed, 21, 0))?;
    let asm = Assembler {
        pooling: TimePooling::new(MEL_FRAMES, POOLED_FRAMES),
        stats,
        flags: cfg.modalities,
        dims: net.arch.input_dims(),
    };
    let mut opt = Adam::new(net.params.len());
    let mut best = (f64::INFINITY, net.params.clone(), 0usize);
    let mut log = Vec::with_capacity(cfg.epochs);
    let val_items = if val_items.is_empty() { fit.clone() } else { val_items };
    let mut idx: Vec<usize> = (0..fit.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 22, epoch as u64));
        idx.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut sum = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let items: Vec<&EventFeatures> = chunk.iter().map(|&i| fit[i]).collect();
            let draws: Option<Vec<AugmentDraw>> = cfg.augment.then(|| {
                chunk
                    .iter()
                    .map(|&i| {
                        let mut r = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 23 + epoch as u64 * 7919, i as u64));
                        AugmentDraw::sample(&mut r, MEL_FRAMES, N_MELS, AUG_HOP)
                    })
                    .collect()
            });
            let batch = asm.batch(&items, draws.as_deref(), MissingPolicy::Error)?;
            let (l, g) = net.loss_gradient(&batch, &targets_of(&items)?)?;
            if !l.is_finite() {
                return Err(LocalizeError::Diverged(epoch));
            }
            opt.step(&mut net.params, &g, lr);
            sum += l * items.len() as f64;
        }
        let train_loss = sum / fit.len() as f64;
        let val_loss = mean_loss(&net, &asm, &val_items, 256)?;
        let entry = EpochLog { epoch: epoch + 1, train_loss, val_loss };
        progress(&entry);
        log.push(entry);
        if val_loss < best.0 {
            best = (val_loss, net.params.clone(), epoch + 1);
        }
    }
    net.params = best.1;
    let model = RegressorModel {
        net,
        norm_stats: asm.stats,
        modalities: cfg.modalities,
        pipeline,
        layout,
        cylinder,
        config: cfg.clone(),
        seed: cfg.seed,
    };
    Ok(TrainOutcome { model, log, best_epoch: best.2 })
}

fn norm_stats_of(items: &[&EventFeatures]) -> Result<NormStats, LocalizeError> {
    if items.is_empty() {
        return Err(LocalizeError::EmptyDataset);
    }
    let chans = items[0].mel.shape()[0];
    let mut mean = vec![0.0; chans];
    let mut std = vec![0.0; chans];
    for c in 0..chans {
        let mut n = 0usize;
        let mut sum = 0.0;
        for it in items {
            let ch = it.mel.index_axis(Axis(0), c);
            sum += ch.iter().map(|&v| v as f64).sum::<f64>();
            n += ch.len();
        }
        let m = sum / n as f64;
        let ss: f64 = items.iter().map(|it| it.mel.index_axis(Axis(0), c).iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>()).sum();
        let sd = (ss / n as f64).sqrt();
        if !(sd > 1e-12) {
            return Err(LocalizeError::Preprocess(crate::preprocess::PreprocessError::DegenerateStd(c)));
        }
        mean[c] = m;
        std[c] = sd;
    }
    Ok(NormStats { per_channel_mean: mean, per_channel_std: std, mode: NormMode::Corpus })
}

impl RegressorModel {
    fn assembler(&self, flags: Modalities) -> Assembler {
        Assembler {
            pooling: TimePooling::new(MEL_FRAMES, POOLED_FRAMES),
            stats: self.norm_stats.clone(),
            flags,
            dims: self.net.arch.input_dims(),
        }
    }

    /// Modalities used at inference: the model's own, optionally narrowed.
    pub fn effective(&self, flags: Option<Modalities>) -> Modalities {
        let m = self.modalities;
        match flags {
            None => m,
            Some(f) => Modalities { mel: m.mel && f.mel, gcc: m.gcc && f.gcc, proprio: m.proprio && f.proprio },
        }
    }

    pub fn features(&self, event: &EventRecord) -> Result<EventFeatures, LocalizeError> {
        extract(event, &self.pipeline, &MelAnalyzer::default())
    }

    /// Raw head outputs for prepared events.
    pub fn forward_features(&self, items: &[EventFeatures], flags: Option<Modalities>, missing: MissingPolicy) -> Result<Vec<[f64; 3]>, LocalizeError> {
        let asm = self.assembler(self.effective(flags));
        let mut out = Vec::with_capacity(items.len());
        let refs: Vec<&EventFeatures> = items.iter().collect();
        for chunk in refs.chunks(128) {
            let b = asm.batch(chunk, None, missing)?;
            let tape = self.net.forward_batch(&b)?;
            for row in tape.output().rows() {
                out.push([row[0], row[1], row[2]]);
            }
        }
        Ok(out)
    }

    pub fn predict_features(&self, items: &[EventFeatures], flags: Option<Modalities>, missing: MissingPolicy) -> Result<Vec<ContactPoint>, LocalizeError> {
        Ok(self.forward_features(items, flags, missing)?.into_iter().map(decode).collect())
    }

    /// Contact estimate for one raw event. Missing requested modalities are an
    /// error here; use [`RegressorModel::predict_features`] to zero them.
    pub fn predict(&self, event: &EventRecord) -> Result<ContactPoint, LocalizeError> {
        let f = self.features(event)?;
        Ok(self.predict_features(std::slice::from_ref(&f), None, MissingPolicy::Error)?[0])
    }
}

/// Error of one evaluated event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventError {
    pub pred_z: f64,
    pub pred_theta: f64,
    pub true_z: f64,
    pub true_theta: f64,
    pub distance: f64,
    pub height_error: f64,
    pub angle_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub med: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
    pub mean_height_error: f64,
    pub mean_angle_error_deg: f64,
    /// Requested modalities that some events lacked (zeroed for evaluation).
    pub missing_modalities: Vec<String>,
    pub per_event: Vec<EventError>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary metrics for paired predictions and labels.
pub fn summarize(preds: &[ContactPoint], truths: &[ContactPoint], cyl: &CylinderSpec) -> Result<EvalReport, LocalizeError> {
    if preds.is_empty() {
        return Err(LocalizeError::EmptyDataset);
    }
    let d = pointwise_distances(preds, truths, cyl)?;
    let per_event: Vec<EventError> = preds
        .iter()
        .zip(truths)
        .zip(&d)
        .map(|((p, t), &dist)| {
            let (h, a) = decompose_error(p, t);
            EventError {
                pred_z: p.clamped().z(),
                pred_theta: p.theta(),
                true_z: t.z(),
                true_theta: t.theta(),
                distance: dist,
                height_error: h,
                angle_error: a,
            }
        })
        .collect();
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(EvalReport {
        n,
        med: d.iter().sum::<f64>() / n as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        max: sorted[n - 1],
        mean_height_error: per_event.iter().map(|e| e.height_error).sum::<f64>() / n as f64,
        mean_angle_error_deg: per_event.iter().map(|e| e.angle_error).sum::<f64>().to_degrees() / n as f64,
        missing_modalities: Vec::new(),
        per_event,
    })
}

/// Evaluates on labeled, prepared events. Requested modalities missing from an
/// event are zeroed and listed in the report.
pub fn evaluate(model: &RegressorModel, test: &[EventFeatures], flags: Option<Modalities>) -> Result<EvalReport, LocalizeError> {
    if test.is_empty() {
        return Err(LocalizeError::EmptyDataset);
    }
    let eff = model.effective(flags);
    let truths: Vec<ContactPoint> = test.iter().map(|t| t.label.ok_or(LocalizeError::Unlabeled)).collect::<Result<_, _>>()?;
    let preds = model.predict_features(test, flags, MissingPolicy::Zero)?;
    let mut report = summarize(&preds, &truths, &model.cylinder)?;
    if eff.proprio && test.iter().any(|t| t.proprio.is_none()) {
        report.missing_modalities.push("proprio".into());
    }
    Ok(report)
}

impl EvalReport {
    /// Per-event CSV: `index,pred_z_cm,pred_theta_deg,true_z_cm,true_theta_deg,error_cm,height_error_cm,angle_error_deg`.
    pub fn per_event_csv(&self) -> String {
        let mut s = String::from("index,pred_z_cm,pred_theta_deg,true_z_cm,true_theta_deg,error_cm,height_error_cm,angle_error_deg\n");
        for (i, e) in self.per_event.iter().enumerate() {
            s.push_str(&format!(
                "{i},{:.4},{:.3},{:.4},{:.3},{:.4},{:.4},{:.3}\n",
                e.pred_z * 100.0,
                e.pred_theta.to_degrees(),
                e.true_z * 100.0,
                e.true_theta.to_degrees(),
                e.distance * 100.0,
                e.height_error * 100.0,
                e.angle_error.to_degrees()
            ));
        }
        s
    }

    /// `key = value` summary lines (centimeters and degrees).
    pub fn summary_text(&self) -> String {
        format!(
            "n = {}\nmed_cm = {:.4}\nmedian_cm = {:.4}\nq1_cm = {:.4}\nq3_cm = {:.4}\nmax_cm = {:.4}\nmean_height_error_cm = {:.4}\nmean_angle_error_deg = {:.3}\nmissing_modalities = [{}]\n",
            self.n,
            self.med * 100.0,
            self.median * 100.0,
            self.q1 * 100.0,
            self.q3 * 100.0,
            self.max * 100.0,
            self.mean_height_error * 100.0,
            self.mean_angle_error_deg,
            self.missing_modalities.iter().map(|m| format!("\"{m}\"")).collect::<Vec<_>>().join(", ")
        )
    }
}
