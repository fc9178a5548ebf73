//! Couple normalization, the training loss and optimizer, iterated
//! rollout, and evaluation over test sub-sequences.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_test_starts, CoupleSequence};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, normalization_transform, Skeleton};
use crate::metrics::{horizon_frames, MetricsReport, SampleErrors, HORIZONS_MS};
use crate::model::CollabModel;
use crate::motion::MotionSequence;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Maps both persons of every frame into the frame of that frame's leader
/// pose: leader hip centre at the origin, left hip on `+x`, neck in `XOZ`.
pub fn normalize_couple(seq: &CoupleSequence, skeleton: &Skeleton) -> Result<CoupleSequence> {
    let mut leader = Vec::with_capacity(seq.leader.data().len());
    let mut follower = Vec::with_capacity(seq.follower.data().len());
    for t in 0..seq.frames() {
        let lp = seq.leader.pose(t);
        let tr = normalization_transform(&lp, skeleton)?;
        leader.extend(apply_transform(&tr, &lp).to_flat());
        follower.extend(apply_transform(&tr, &seq.follower.pose(t)).to_flat());
    }
    CoupleSequence::new(
        seq.seq_id.clone(),
        seq.aerial,
        seq.couple,
        seq.rep,
        MotionSequence::new(seq.joints(), seq.fps(), leader)?,
        MotionSequence::new(seq.joints(), seq.fps(), follower)?,
    )
}

/// Mean per-joint Euclidean error of one person, `pred` and `gt` both `T × J·3`.
fn mpjpe_var(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let d = tape.sub(pred, gt)?;
    let sq = tape.mul(d, d)?;
    let rows = shape[0] * shape[1] / 3;
    let per_joint = tape.reshape(sq, [rows, 3])?;
    let ones = tape.constant(Tensor::ones([3, 1])?);
    let norm_sq = tape.matmul(per_joint, ones)?;
    let norm = tape.sqrt(norm_sq)?;
    tape.mean(norm)
}

/// Differentiable couple error: the average of both persons' mean per-joint
/// distance, equal to JME on the same inputs.
pub fn loss_var(tape: &mut Tape, pred: [Var; 2], gt: [&Tensor; 2]) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    for (p, g) in pred.into_iter().zip(gt) {
        if tape.shape(p) != g.shape() {
            return Err(Error::dim(
                "loss",
                format!("prediction {:?} vs target {:?}", tape.shape(p), g.shape()),
            ));
        }
        let g = tape.constant(g.clone());
        terms.push(mpjpe_var(tape, p, g)?);
    }
    let total = tape.add(terms[0], terms[1])?;
    tape.scale(total, 0.5)
}

fn as_matrix(seq: &MotionSequence) -> Result<Tensor> {
    Tensor::new([seq.frames(), seq.frame_len()], seq.data().to_vec())
}

/// Numeric value of the training loss.
pub fn loss(
    pred_l: &MotionSequence,
    pred_f: &MotionSequence,
    gt_l: &MotionSequence,
    gt_f: &MotionSequence,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pl = tape.constant(as_matrix(pred_l)?);
    let pf = tape.constant(as_matrix(pred_f)?);
    let v = loss_var(&mut tape, [pl, pf], [&as_matrix(gt_l)?, &as_matrix(gt_f)?])?;
    tape.value(v).item()
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads[i]` belongs to parameter `i` of the store.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in t.data_mut().iter_mut().enumerate() {
                let g = grads[i].data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Observed frames per training sample.
    pub in_len: usize,
    /// Frames between consecutive training windows of a sequence.
    pub stride: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            in_len: 50,
            stride: 5,
            max_steps: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.epoch, p.step, p.loss);
    }
    out
}

/// `(sequence, start)` of every window of `len` frames at `stride`.
pub fn training_windows(seqs: &[CoupleSequence], len: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        if s.frames() >= len {
            out.extend((0..=s.frames() - len).step_by(stride.max(1)).map(|t| (i, t)));
        }
    }
    out
}

/// Normalizes every sequence with [`normalize_couple`].
pub fn normalize_all(seqs: &[CoupleSequence]) -> Result<Vec<CoupleSequence>> {
    seqs.iter()
        .map(|s| normalize_couple(s, &Skeleton::for_joints(s.joints())?))
        .collect()
}

/// Adam training on couple-normalized windows of `in_len + T` frames.
/// Returns the batch loss of every step.
pub fn train(model: &mut CollabModel, train_set: &[CoupleSequence], cfg: &TrainConfig) -> Result<Vec<LossPoint>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config("lr must be positive".into()));
    }
    let step_len = model.config().step_len;
    let window = cfg.in_len + step_len;
    if cfg.epochs == 0 || cfg.max_steps == Some(0) {
        return Ok(Vec::new());
    }
    let seqs = normalize_all(train_set)?;
    let mut samples = training_windows(&seqs, window, cfg.stride);
    if samples.is_empty() {
        return Err(Error::InsufficientHistory {
            have: seqs.iter().map(CoupleSequence::frames).max().unwrap_or(0),
            need: window,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut curve = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        samples.shuffle(&mut rng);
        for batch in samples.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                return Ok(curve);
            }
            let as_training = |e: Error| match e {
                Error::NonFinite { op } => Error::Training {
                    step,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let mut total = None;
            for &(i, start) in batch {
                let s = &seqs[i];
                let hist_l = s.leader.window(start, cfg.in_len)?;
                let hist_f = s.follower.window(start, cfg.in_len)?;
                let fut_l = as_matrix(&s.leader.window(start + cfg.in_len, step_len)?)?;
                let fut_f = as_matrix(&s.follower.window(start + cfg.in_len, step_len)?)?;
                let inputs = model.prepare(&hist_l, &hist_f)?;
                let pred = model.forward(&mut tape, &vars, &inputs).map_err(as_training)?;
                let l = loss_var(&mut tape, pred, [&fut_l, &fut_f]).map_err(as_training)?;
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l).map_err(as_training)?,
                });
            }
            let total = total.expect("non-empty batch");
            let mean = tape.scale(total, 1.0 / batch.len() as f64).map_err(as_training)?;
            let value = tape.value(mean).item()?;
            if !value.is_finite() {
                return Err(Error::Training {
                    step,
                    msg: format!("loss is {value}"),
                });
            }
            let grads = tape.backward(mean).map_err(as_training)?;
            let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            if g.iter().any(|t| !t.all_finite()) {
                return Err(Error::Training {
                    step,
                    msg: "non-finite gradient".into(),
                });
            }
            adam.update(model.params_mut(), &g);
            curve.push(LossPoint {
                epoch,
                step,
                loss: value,
            });
            step += 1;
        }
    }
    Ok(curve)
}

/// Anything that predicts the next `step_len` frames of both persons.
pub trait Forecaster: Sync {
    fn step_len(&self) -> usize;
    fn forecast(&self, leader: &MotionSequence, follower: &MotionSequence) -> Result<(MotionSequence, MotionSequence)>;
}

impl Forecaster for CollabModel {
    fn step_len(&self) -> usize {
        self.config().step_len
    }

    fn forecast(&self, leader: &MotionSequence, follower: &MotionSequence) -> Result<(MotionSequence, MotionSequence)> {
        self.predict(leader, follower)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub leader: MotionSequence,
    pub follower: MotionSequence,
    /// Number of forecaster calls issued.
    pub calls: usize,
}

/// Iterated prediction: each predicted chunk is appended to the history,
/// which slides forward to keep its length, until `horizon` frames exist.
pub fn rollout<F: Forecaster + ?Sized>(
    model: &F,
    leader: &MotionSequence,
    follower: &MotionSequence,
    horizon: usize,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::contract("rollout horizon must be at least 1 frame"));
    }
    let keep = leader.frames();
    let (mut hist_l, mut hist_f) = (leader.clone(), follower.clone());
    let mut out: Option<(MotionSequence, MotionSequence)> = None;
    let mut calls = 0;
    while out.as_ref().map_or(0, |o| o.0.frames()) < horizon {
        let (pl, pf) = model.forecast(&hist_l, &hist_f)?;
        calls += 1;
        if pl.frames() == 0 || pl.frames() != pf.frames() {
            return Err(Error::contract("forecaster returned an empty or mismatched chunk"));
        }
        hist_l.append(&pl)?;
        hist_f.append(&pf)?;
        hist_l = hist_l.tail(keep)?;
        hist_f = hist_f.tail(keep)?;
        match &mut out {
            None => out = Some((pl, pf)),
            Some((ol, of)) => {
                ol.append(&pl)?;
                of.append(&pf)?;
            }
        }
    }
    let (ol, of) = out.expect("at least one call");
    Ok(Rollout {
        leader: ol.window(0, horizon)?,
        follower: of.window(0, horizon)?,
        calls,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub in_len: usize,
    /// Sub-sequences drawn per test sequence.
    pub subsequences: usize,
    pub seed: u64,
    /// Worker threads; results are reduced in a fixed order.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            in_len: 50,
            subsequences: 64,
            seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Seed for the sub-sequence offsets of test sequence `index`.
fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Rolls `model` out to the longest horizon on every sampled test
/// sub-sequence (couple-normalized) and aggregates all metrics.
pub fn evaluate<F: Forecaster + ?Sized>(model: &F, test: &[CoupleSequence], cfg: &EvalConfig) -> Result<MetricsReport> {
    let first = test
        .first()
        .ok_or_else(|| Error::contract("evaluation needs at least one test sequence"))?;
    let fps = first.fps();
    let joints = first.joints();
    let skeleton = Skeleton::for_joints(joints)?;
    let horizon = HORIZONS_MS.iter().map(|&ms| horizon_frames(ms, fps)).max().unwrap_or(1);
    let mut jobs = Vec::new();
    for (i, s) in test.iter().enumerate() {
        if s.joints() != joints || s.fps() != fps {
            return Err(Error::contract(format!("{}: joints or fps differ from the first test sequence", s.seq_id)));
        }
        for start in sample_test_starts(s.frames(), cfg.subsequences, cfg.in_len, horizon, sequence_seed(cfg.seed, i))? {
            jobs.push((i, start));
        }
    }
    let run = |&(i, start): &(usize, usize)| -> Result<SampleErrors> {
        let w = normalize_couple(&test[i].window(start, cfg.in_len + horizon)?, &skeleton)?;
        let hist_l = w.leader.window(0, cfg.in_len)?;
        let hist_f = w.follower.window(0, cfg.in_len)?;
        let r = rollout(model, &hist_l, &hist_f, horizon)?;
        let gt_l = w.leader.window(cfg.in_len, horizon)?;
        let gt_f = w.follower.window(cfg.in_len, horizon)?;
        SampleErrors::compute(test[i].aerial, [&r.leader, &r.follower], [&gt_l, &gt_f], &skeleton)
    };
    let threads = cfg.threads.clamp(1, jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<SampleErrors>> = if threads == 1 {
        jobs.iter().map(run).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|c| scope.spawn(move || c.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let names = (0..joints).map(|j| skeleton.name(j).to_string()).collect();
    let mut report = MetricsReport::new(fps, names);
    for r in results {
        report.add(&r?)?;
    }
    Ok(report)
}
