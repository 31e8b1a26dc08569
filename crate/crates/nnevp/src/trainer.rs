//! Training loop: dt-weighted mean-squared stress loss over one or more
//! curves simulated on the tape, AdamW with decoupled weight decay, a
//! cosine-annealing learning rate, constraint projection after every step,
//! optional elastic-region masking, and grain-size discovery from the
//! trained networks.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::elasticity::{build_stiffness, ElasticParams, Stiffness66};
use crate::error::{Error, Result};
use crate::network::{FlowFlags, ModelNets, ParamKind, StagedNets};
use crate::solver::{
    simulate_on_tape, Curve, LoadingProgram, NeuralFlow, SolverSettings, StepStats,
};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub nr_tol: f64,
    pub nr_max_iter: u32,
    /// Ignore points the model still considers elastic (running r below
    /// `r_min`) when accumulating the loss.
    pub elastic_mask: bool,
    pub r_min: f64,
    pub seed: u64,
    /// Overrides the per-curve normalization constant (default: mean
    /// squared true stress over unmasked points).
    pub loss_norm: Option<f64>,
    /// Re-audit every network constraint after each epoch.
    pub check_constraints_every_epoch: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr_max: 1e-2,
            lr_min: 1e-3,
            weight_decay: 1e-4,
            nr_tol: 1e-6,
            nr_max_iter: 25,
            elastic_mask: false,
            r_min: 1e-5,
            seed: 0,
            loss_norm: None,
            check_constraints_every_epoch: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ParamDomain("epochs must be at least 1".into()));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min > 0.0) {
            return Err(Error::ParamDomain(format!(
                "learning rates must satisfy lr_max >= lr_min > 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.nr_tol,
            max_iter: self.nr_max_iter,
        }
    }
}

/// Cosine-annealed learning rate: starts at `lr_max`, saturates at `lr_min`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = epoch as f64 / cfg.epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// One training target aligned one-to-one with the program's strain grid.
#[derive(Debug, Clone)]
pub struct CurveTarget {
    pub name: String,
    pub stress: Vec<f64>,
    pub grain_size_um: Option<f64>,
}

/// The training dataset: one or more curves on a common resampled grid.
#[derive(Debug, Clone, Default)]
pub struct CurveSet {
    pub curves: Vec<CurveTarget>,
}

impl CurveSet {
    /// Smallest and largest grain size present, when any curve carries one.
    pub fn grain_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for c in &self.curves {
            if let Some(d) = c.grain_size_um {
                any = true;
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        any.then_some((lo, hi))
    }
}

/// Per-epoch record; wall time is informational and excluded from the
/// deterministic report.
#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

/// dt-weighted normalized mean-squared stress mismatch (plain values).
///
/// Weights are `dt_t / sum(dt)` over the whole grid; masked points
/// contribute zero; the normalization is the mean squared true stress over
/// unmasked points unless overridden.
pub fn curve_loss(
    predicted: &[f64],
    truth: &[f64],
    dts: &[f64],
    masked: Option<&[bool]>,
    loss_norm: Option<f64>,
) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.len() != dts.len() {
        return Err(Error::GridMismatch(format!(
            "curve lengths disagree: {} predicted, {} truth, {} steps",
            predicted.len(),
            truth.len(),
            dts.len()
        )));
    }
    if let Some(m) = masked {
        if m.len() != truth.len() {
            return Err(Error::GridMismatch("mask length disagrees".into()));
        }
    }
    let total_dt: f64 = dts.iter().sum();
    let is_masked = |i: usize| masked.map(|m| m[i]).unwrap_or(false);
    let norm = match loss_norm {
        Some(n) => n,
        None => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, t) in truth.iter().enumerate() {
                if !is_masked(i) {
                    sum += t * t;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::Training("every point is masked".into()));
            }
            sum / count as f64
        }
    };
    let mut loss = 0.0;
    for i in 0..truth.len() {
        if is_masked(i) {
            continue;
        }
        let w = dts[i] / total_dt;
        let d = predicted[i] - truth[i];
        loss += w * d * d;
    }
    Ok(loss / norm)
}

/// Adam moment buffers.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One AdamW step with decoupled weight decay, followed by projection onto
/// the constraint set. Non-finite gradient components skip their parameter
/// and are counted in the return value.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    kinds: &[ParamKind],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> u64 {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len(), "moment buffers sized to params");
    state.t += 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(state.t as i32);
    let mut skipped = 0;
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            skipped += 1;
        } else {
            state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
            state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            if kinds[i].decays() {
                params[i] -= lr * cfg.weight_decay * params[i];
            }
        }
        // Projection keeps the constraint profiles valid.
        let lower = kinds[i].lower_bound();
        if !params[i].is_finite() || params[i] < lower {
            params[i] = lower;
        }
    }
    skipped
}

struct EpochLoss {
    total: Var,
    mean_loss: f64,
    nr_solves: Vec<StepStats>,
    masked_fallback: bool,
}

/// Records the full multi-curve loss for the current parameters on `tape`.
fn record_epoch_loss(
    tape: &mut Tape,
    staged: &StagedNets,
    dataset: &CurveSet,
    program: &LoadingProgram,
    stiffness: &Stiffness66,
    cfg: &TrainConfig,
    flags: &mut FlowFlags,
) -> Result<EpochLoss> {
    let settings = cfg.solver_settings();
    let dts = program.dts();
    let total_dt: f64 = dts.iter().sum();
    let mut total = tape.constant(0.0);
    let mut nr_solves = Vec::new();
    let mut masked_fallback = false;
    for target in &dataset.curves {
        if target.stress.len() != dts.len() {
            return Err(Error::GridMismatch(format!(
                "curve {} has {} points but the program has {} steps",
                target.name,
                target.stress.len(),
                dts.len()
            )));
        }
        let flow = NeuralFlow {
            nets: staged,
            d_grain_um: target.grain_size_um,
        };
        let run = simulate_on_tape(tape, program, &flow, stiffness, &settings, flags);
        if let Some(e) = run.failure {
            return Err(e);
        }
        nr_solves.extend_from_slice(&run.curve.nr_solves);

        // Masking uses the model's own running accumulated plastic strain.
        let masked: Vec<bool> = if cfg.elastic_mask {
            run.curve
                .steps
                .iter()
                .map(|s| tape.value(s.r) < cfg.r_min)
                .collect()
        } else {
            vec![false; dts.len()]
        };
        let masked = if masked.iter().all(|&m| m) {
            // A fully elastic prediction would zero the loss and kill the
            // gradient; fall back to the unmasked loss and flag the epoch.
            masked_fallback = true;
            vec![false; dts.len()]
        } else {
            masked
        };
        let norm = match cfg.loss_norm {
            Some(n) => n,
            None => {
                let mut sum = 0.0;
                let mut count = 0usize;
                for (i, t) in target.stress.iter().enumerate() {
                    if !masked[i] {
                        sum += t * t;
                        count += 1;
                    }
                }
                sum / count as f64
            }
        };
        for (i, step) in run.curve.steps.iter().enumerate() {
            if masked[i] {
                continue;
            }
            let w = dts[i] / total_dt / norm;
            let truth = tape.constant(target.stress[i]);
            let diff = tape.sub(step.stress_axial, truth);
            let sq = tape.mul(diff, diff);
            total = tape.add_scaled(total, w, sq);
        }
    }
    let mean_loss = tape.value(total) / dataset.curves.len() as f64;
    Ok(EpochLoss {
        total,
        mean_loss,
        nr_solves,
        masked_fallback,
    })
}

/// Forward-only loss evaluation at the current parameters (mean over
/// curves), on a throwaway tape.
pub fn eval_loss(
    nets: &ModelNets,
    dataset: &CurveSet,
    program: &LoadingProgram,
    elastic: &ElasticParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    let stiffness = build_stiffness(elastic)?;
    let mut tape = Tape::new();
    let mut flags = FlowFlags::default();
    let (staged, _) = nets.stage(&mut tape);
    let epoch = record_epoch_loss(
        &mut tape, &staged, dataset, program, &stiffness, cfg, &mut flags,
    )?;
    Ok(epoch.mean_loss)
}

/// Everything the run report needs about a finished training.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub records: Vec<LossRecord>,
    /// NR iteration count -> number of converged solves, over all epochs.
    pub nr_histogram: BTreeMap<u32, u64>,
    pub flags: FlowFlags,
    pub masked_fallback_epochs: Vec<usize>,
    pub nonfinite_grad_skips: u64,
    pub failed_epochs: Vec<usize>,
    pub constraint_violations: Vec<(usize, String)>,
    pub final_loss: f64,
}

/// Trains the networks in place. Per epoch: simulate every curve on one
/// tape, accumulate the weighted loss, one reverse sweep for all parameter
/// gradients, one AdamW step, projection. Deterministic for a fixed seed.
pub fn train(
    nets: &mut ModelNets,
    dataset: &CurveSet,
    program: &LoadingProgram,
    elastic: &ElasticParams,
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    cfg.validate()?;
    program.validate()?;
    nets.validate()?;
    if dataset.curves.is_empty() {
        return Err(Error::Training("dataset is empty".into()));
    }
    for c in &dataset.curves {
        if c.grain_size_um.is_some() != nets.hall_petch.is_some() {
            return Err(Error::Training(format!(
                "curve {} and the model disagree about grain-size awareness",
                c.name
            )));
        }
    }
    let stiffness = build_stiffness(elastic)?;
    let (mut flat, kinds) = nets.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut stats = TrainStats::default();
    let mut tape = Tape::new();
    let mut consecutive_failures = 0usize;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let epoch_started = started.elapsed().as_secs_f64();
        tape.clear();
        let mut flags = FlowFlags::default();
        let (staged, param_vars) = nets.stage(&mut tape);
        let outcome = record_epoch_loss(
            &mut tape, &staged, dataset, program, &stiffness, cfg, &mut flags,
        );
        stats.flags.hp_reciprocal_clamps += flags.hp_reciprocal_clamps;
        stats.flags.denominator_clamps += flags.denominator_clamps;
        let epoch_loss = match outcome {
            Ok(e) => e,
            Err(err) => {
                stats.failed_epochs.push(epoch);
                consecutive_failures += 1;
                stats.records.push(LossRecord {
                    epoch,
                    loss: f64::NAN,
                    lr: cosine_lr(epoch, cfg),
                    wall_time_s: started.elapsed().as_secs_f64() - epoch_started,
                });
                if consecutive_failures >= 3 {
                    return Err(Error::Training(format!(
                        "three consecutive failed epochs, last at {epoch}: {err}"
                    )));
                }
                continue;
            }
        };
        consecutive_failures = 0;
        if epoch_loss.masked_fallback {
            stats.masked_fallback_epochs.push(epoch);
        }
        for s in &epoch_loss.nr_solves {
            *stats.nr_histogram.entry(s.iterations).or_insert(0) += 1;
        }

        let grads = tape.grad(epoch_loss.total, &param_vars)?;
        let lr = cosine_lr(epoch, cfg);
        stats.nonfinite_grad_skips += adamw_step(&mut flat, &grads, &kinds, &mut adam, lr, cfg);
        nets.apply_flat(&flat);

        if cfg.check_constraints_every_epoch {
            for v in nets.check_constraints() {
                stats.constraint_violations.push((epoch, v));
            }
        }
        stats.records.push(LossRecord {
            epoch,
            loss: epoch_loss.mean_loss,
            lr,
            wall_time_s: started.elapsed().as_secs_f64() - epoch_started,
        });
        stats.final_loss = epoch_loss.mean_loss;
    }
    Ok(stats)
}

/// Simulates the trained model over a (possibly longer) program with frozen
/// parameters.
pub fn simulate_neural(
    nets: &ModelNets,
    program: &LoadingProgram,
    d_grain_um: Option<f64>,
    elastic: &ElasticParams,
    settings: &SolverSettings,
) -> Result<(Curve, Vec<StepStats>, Option<Error>)> {
    let stiffness = build_stiffness(elastic)?;
    let mut tape = Tape::new();
    let mut flags = FlowFlags::default();
    let (staged, _) = nets.stage(&mut tape);
    let flow = NeuralFlow {
        nets: &staged,
        d_grain_um,
    };
    let run = simulate_on_tape(
        &mut tape,
        program,
        &flow,
        &stiffness,
        settings,
        &mut flags,
    );
    let mut curve = Curve::default();
    for s in &run.curve.steps {
        curve.strain.push(s.strain);
        curve.stress_mpa.push(tape.value(s.stress_axial));
        curve.time_s.push(s.time_s);
        curve.r.push(tape.value(s.r));
        curve.nr_iters.push(s.stats.iterations);
    }
    Ok((curve, run.curve.nr_solves, run.failure))
}

/// The discovered grain-size law: strengthening at each requested size and
/// the log-log slope over the training-range interior.
#[derive(Debug, Clone)]
pub struct HallPetchTable {
    pub rows: Vec<(f64, f64)>,
    pub interior_slope: f64,
}

/// Evaluates the trained grain-size network over `grains` and fits the
/// least-squares slope of `log(stress)` against `log(d)` restricted to the
/// training range `[d_lo, d_hi]`.
pub fn discover_hall_petch(
    nets: &ModelNets,
    grains: &[f64],
    train_range: (f64, f64),
) -> Result<HallPetchTable> {
    if nets.hall_petch.is_none() {
        return Err(Error::ParamDomain(
            "model carries no grain-size network".into(),
        ));
    }
    let mut rows = Vec::with_capacity(grains.len());
    for &d in grains {
        if !(d > 0.0) {
            return Err(Error::ParamDomain(format!(
                "grain size must be positive, got {d}"
            )));
        }
        let s = nets.eval_hall_petch_mpa(d).expect("grain-size net present");
        rows.push((d, s));
    }
    let interior: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(d, _)| *d >= train_range.0 && *d <= train_range.1)
        .map(|&(d, s)| (d.ln(), s.ln()))
        .collect();
    let mut distinct = interior.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Training(
            "degenerate design: fewer than two distinct grain sizes in the training range".into(),
        ));
    }
    let n = interior.len() as f64;
    let mean_x = interior.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = interior.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &interior {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    Ok(HallPetchTable {
        rows,
        interior_slope: sxy / sxx,
    })
}
