//! Optimizer and training loops.

use super::config::{ModelConfig, TrainConfig};
use super::crop::CropWindow;
use super::forward::{forward_pair, AlphaPolicy, BranchFrames, ModelVars};
use super::loss::{mean_loss, pair_loss, LossReport, LossVars, LossWeights};
use super::params::hsi_bands;
use crate::data::{modality_schedule, pad_bands, ScheduleMode, SequenceRecord};
use crate::error::{Error, Result};
use crate::geom::Bbox;
use crate::numeric::{DenseMatrix, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// Gradient descent with classical momentum. Velocities are kept per
/// parameter name and updated in name order, so steps are deterministic.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, DenseMatrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: BTreeMap::new() }
    }

    /// v <- momentum.v + g; p <- p - lr.v. Parameters absent from the
    /// tape get zero gradient and keep decaying velocity.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        vars: &ModelVars,
        grads: &crate::numeric::Grads,
    ) -> Result<()> {
        for (name, var) in vars.iter() {
            let (rows, cols) = store.get(name)?.shape();
            let g = grads.wrt(var, rows, cols);
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| DenseMatrix::zeros(rows, cols));
            for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *vi = self.momentum * *vi + gi;
            }
            let p = store.get_mut(name)?;
            for (pi, vi) in p.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *pi -= self.lr * vi;
            }
        }
        Ok(())
    }
}

/// One training example: aligned template/search crops (HSI already
/// padded to the model's band count) and the target box in search-crop
/// pixels.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub t_fc: crate::data::HsiCube,
    pub t_hsi: crate::data::HsiCube,
    pub s_fc: crate::data::HsiCube,
    pub s_hsi: crate::data::HsiCube,
    pub gt: Bbox,
}

/// Template crop covers 2x the box max-side; search covers 4x.
pub const TEMPLATE_SCALE: f64 = 2.0;
pub const SEARCH_SCALE: f64 = 4.0;

/// Fraction of the search window side used for center jitter.
const JITTER: f64 = 0.2;

/// Cut one training sample out of a sequence: template around the box
/// in frame `ti`, search around a jittered center in frame `si`.
pub fn make_sample(
    record: &SequenceRecord,
    ti: usize,
    si: usize,
    bands: usize,
    size: (usize, usize),
    rng: &mut ChaCha20Rng,
) -> Result<TrainSample> {
    let n = record.len();
    if ti >= n || si >= n {
        return Err(Error::Config(format!("frame pair ({ti}, {si}) outside sequence of {n}")));
    }
    let (template_size, search_size) = size;
    let win_t = CropWindow::around(&record.gt_boxes[ti], TEMPLATE_SCALE, template_size);
    let gt_s = &record.gt_boxes[si];
    let mut win_s = CropWindow::around(gt_s, SEARCH_SCALE, search_size);
    win_s.cx += (rng.random::<f64>() * 2.0 - 1.0) * JITTER * win_s.side;
    win_s.cy += (rng.random::<f64>() * 2.0 - 1.0) * JITTER * win_s.side;
    let t_fc = win_t.extract(&record.false_color[ti])?;
    let t_hsi = pad_bands(&win_t.extract(&record.frames[ti])?, bands)?;
    let s_fc = win_s.extract(&record.false_color[si])?;
    let s_hsi = pad_bands(&win_s.extract(&record.frames[si])?, bands)?;
    Ok(TrainSample { t_fc, t_hsi, s_fc, s_hsi, gt: win_s.to_crop(gt_s) })
}

/// One optimizer update over a batch. Returns the batch-mean loss terms;
/// a non-finite term aborts before any parameter changes.
pub fn train_step(
    store: &mut ParamStore,
    opt: &mut Sgd,
    cfg: &ModelConfig,
    policy: AlphaPolicy,
    weights: LossWeights,
    batch: &[TrainSample],
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let mut tape = Tape::new();
    let vars = ModelVars::bind(&mut tape, store);
    let mut losses: Vec<LossVars> = Vec::with_capacity(batch.len());
    for sample in batch {
        let fwd = forward_pair(
            &mut tape,
            &vars,
            cfg,
            policy,
            BranchFrames { fc: &sample.t_fc, hsi: &sample.t_hsi },
            BranchFrames { fc: &sample.s_fc, hsi: &sample.s_hsi },
        )?;
        losses.push(pair_loss(&mut tape, &fwd, &sample.gt, cfg, weights)?);
    }
    let mean = mean_loss(&mut tape, &losses)?;
    let report = LossReport::from_tape(&tape, &mean);
    report.check_finite()?;
    let grads = tape.backward(mean.total)?;
    opt.step(store, &vars, &grads)?;
    Ok(report)
}

/// Knobs that are not part of the serialized recipe: sampling density,
/// batch shape, the fusion policy, and an optional step cap.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub pairs_per_sequence: usize,
    pub batch_size: usize,
    pub policy: AlphaPolicy,
    pub max_steps: Option<usize>,
    pub schedule: ScheduleMode,
}

impl FitOptions {
    pub fn new(policy: AlphaPolicy) -> Self {
        FitOptions {
            pairs_per_sequence: 8,
            batch_size: 2,
            policy,
            max_steps: None,
            schedule: ScheduleMode::RoundRobin,
        }
    }
}

/// Loss trajectory of a fit, one report per optimizer step.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub steps: Vec<LossReport>,
    pub epochs_run: usize,
}

fn epoch_seed(base: u64, epoch: usize) -> u64 {
    base ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train across every modality: each epoch interleaves the per-modality
/// sequence lists, samples frame pairs from each visited sequence, and
/// updates on batches. Sequences must already be grouped by modality.
pub fn fit(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    datasets: &[(String, Vec<SequenceRecord>)],
    opts: &FitOptions,
) -> Result<FitReport> {
    cfg.validate()?;
    if opts.batch_size == 0 || opts.pairs_per_sequence == 0 {
        return Err(Error::Config("batch_size and pairs_per_sequence must be positive".into()));
    }
    let bands = hsi_bands(store)?;
    for (modality, records) in datasets {
        for r in records {
            if r.frames.first().map(|f| f.bands() > bands).unwrap_or(false) {
                return Err(Error::Config(format!(
                    "sequence {:?} ({modality}) has more bands than the model supports",
                    r.name
                )));
            }
        }
    }
    let model = cfg.model();
    let weights = LossWeights { iou: cfg.lambda_iou, l1: cfg.lambda_l1 };
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut steps = Vec::new();
    let mut epochs_run = 0;
    let size = (model.template_size, model.search_size);

    'epochs: for epoch in 0..cfg.epochs {
        let refs: Vec<(String, Vec<&SequenceRecord>)> = datasets
            .iter()
            .map(|(m, rs)| (m.clone(), rs.iter().collect()))
            .collect();
        let stream = modality_schedule(&refs, epoch_seed(cfg.seed, epoch), opts.schedule)?;
        let mut batch: Vec<TrainSample> = Vec::with_capacity(opts.batch_size);
        for record in stream {
            let n = record.len();
            if n < 2 {
                return Err(Error::Config(format!(
                    "sequence {:?} is too short to sample pairs",
                    record.name
                )));
            }
            for _ in 0..opts.pairs_per_sequence {
                let ti = rng.random_range(0..n);
                let mut si = rng.random_range(0..n - 1);
                if si >= ti {
                    si += 1;
                }
                batch.push(make_sample(record, ti, si, bands, size, &mut rng)?);
                if batch.len() == opts.batch_size {
                    steps.push(train_step(store, &mut opt, &model, opts.policy, weights, &batch)?);
                    batch.clear();
                    if opts.max_steps.is_some_and(|cap| steps.len() >= cap) {
                        break 'epochs;
                    }
                }
            }
        }
        if !batch.is_empty() {
            steps.push(train_step(store, &mut opt, &model, opts.policy, weights, &batch)?);
            batch.clear();
        }
        epochs_run = epoch + 1;
        if opts.max_steps.is_some_and(|cap| steps.len() >= cap) {
            break;
        }
    }
    Ok(FitReport { steps, epochs_run })
}
