//! Strain-driven material-point simulation under uniaxial tension with an
//! implicit Newton-Raphson stress update.
//!
//! The whole step is recorded on the autodiff tape: trial stress, flow-rule
//! evaluations, residuals, and the Newton updates themselves (with the
//! inverse Jacobian entering as constants). Training gradients therefore
//! flow through the unrolled iterations, while the per-iteration Jacobian
//! comes from reverse sweeps over the current iteration's segment only.
//!
//! Two loading modes are provided. `TrueUniaxial` (default) solves the
//! lateral total strain as an unknown alongside the axial stress, which
//! reproduces the elastic slope `E` and enforces zero lateral stress
//! genuinely. `PaperFaithful` prescribes lateral strain rates of minus half
//! the axial rate and solves all six stress components with zero-stress
//! rows; its elastic slope is `2*mu`. Both are kept because the prescribed
//! laterals and the zero-stress demand are elastically incompatible, and
//! fidelity comparisons need the literal scheme.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::elasticity::Stiffness66;
use crate::error::{Error, Result};
use crate::network::{FlowFlags, StagedNets};
use crate::reference::{JohnsonCookParams, PowerLawParams};
use crate::tape_tensor::{record_norm_squared, record_von_mises};
use crate::tensor::SymTensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stepping {
    Fixed { count: usize },
    Geometric { count: usize, ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[default]
    TrueUniaxial,
    PaperFaithful,
}

/// Uniaxial loading program: applied axial strain rate, target strain, and
/// the time-step schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LoadingProgram {
    /// Applied axial strain rate (1/s).
    pub rate: f64,
    /// Total axial strain to reach.
    pub target_strain: f64,
    pub stepping: Stepping,
    #[serde(default)]
    pub mode: SolveMode,
}

impl LoadingProgram {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::ParamDomain(format!(
                "applied strain rate must be positive, got {}",
                self.rate
            )));
        }
        if !(self.target_strain > 0.0) {
            return Err(Error::ParamDomain(format!(
                "target strain must be positive, got {}",
                self.target_strain
            )));
        }
        match self.stepping {
            Stepping::Fixed { count } if count == 0 => {
                Err(Error::ParamDomain("step count must be at least 1".into()))
            }
            Stepping::Geometric { count, ratio } if count == 0 || ratio <= 1.0 => {
                Err(Error::ParamDomain(format!(
                    "geometric stepping needs count >= 1 and ratio > 1, got count={count}, ratio={ratio}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn total_time(&self) -> f64 {
        self.target_strain / self.rate
    }

    /// Time-step sizes; for geometric stepping `dt_{i+1} = ratio * dt_i`
    /// with the first step sized so the series sums to the total time.
    pub fn dts(&self) -> Vec<f64> {
        let total = self.total_time();
        match self.stepping {
            Stepping::Fixed { count } => vec![total / count as f64; count],
            Stepping::Geometric { count, ratio } => {
                let dt0 = total * (ratio - 1.0) / (ratio.powi(count as i32) - 1.0);
                let mut dt = dt0;
                let mut out = Vec::with_capacity(count);
                for _ in 0..count {
                    out.push(dt);
                    dt *= ratio;
                }
                out
            }
        }
    }

    /// Axial strain at every accepted step (the solver's sampling grid).
    pub fn strain_grid(&self) -> Vec<f64> {
        let mut eps = 0.0;
        self.dts()
            .iter()
            .map(|dt| {
                eps += self.rate * dt;
                eps
            })
            .collect()
    }
}

/// Per-step simulation state (plain values).
#[derive(Debug, Clone, Copy)]
pub struct MaterialState {
    pub total_strain: SymTensor3,
    pub viscoplastic_strain: SymTensor3,
    /// Accumulated effective viscoplastic strain.
    pub r: f64,
    pub stress: SymTensor3,
    pub time: f64,
}

impl MaterialState {
    pub fn initial() -> Self {
        MaterialState {
            total_strain: SymTensor3::ZERO,
            viscoplastic_strain: SymTensor3::ZERO,
            r: 0.0,
            stress: SymTensor3::ZERO,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Residual evaluations performed by the Newton loop.
    pub iterations: u32,
    /// Final residual norm (MPa).
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-6,
            max_iter: 25,
        }
    }
}

/// A viscoplastic flow rule that can be recorded on the tape.
pub trait FlowModel {
    /// Viscoplastic strain rate (tensor components, 1/s) at `sigma`, with
    /// the accumulated plastic strain `r` entering explicitly.
    fn record_flow(
        &self,
        tape: &mut Tape,
        sigma: &[Var; 6],
        r: Var,
        flags: &mut FlowFlags,
    ) -> Result<[Var; 6]>;
}

/// No plastic flow; the response stays linear elastic.
pub struct NoFlow;

impl FlowModel for NoFlow {
    fn record_flow(
        &self,
        tape: &mut Tape,
        _sigma: &[Var; 6],
        _r: Var,
        _flags: &mut FlowFlags,
    ) -> Result<[Var; 6]> {
        let z = tape.constant(0.0);
        Ok([z; 6])
    }
}

/// Isotropic flow resistance for the analytic power-law model.
#[derive(Debug, Clone, Copy)]
pub enum HardeningLaw {
    /// Constant resistance `sigma_y` (perfect viscoplasticity).
    Perfect,
    /// Johnson-Cook `R(r)` with a fixed rate-bracket ratio; the default
    /// ratio of 1 makes synthetic data follow `A + B r^n` exactly.
    JohnsonCook {
        jc: JohnsonCookParams,
        rate_ratio: f64,
    },
}

/// Analytic power-law flow with pluggable isotropic hardening.
#[derive(Debug, Clone, Copy)]
pub struct PowerLawFlow {
    pub params: PowerLawParams,
    pub hardening: HardeningLaw,
}

impl PowerLawFlow {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if let HardeningLaw::JohnsonCook { jc, rate_ratio } = &self.hardening {
            jc.validate()?;
            if !(*rate_ratio > 0.0) {
                return Err(Error::ParamDomain(format!(
                    "rate ratio must be positive, got {rate_ratio}"
                )));
            }
        }
        Ok(())
    }

    fn record_resistance(&self, tape: &mut Tape, r: Var) -> Var {
        match &self.hardening {
            HardeningLaw::Perfect => tape.constant(self.params.sigma_y),
            HardeningLaw::JohnsonCook { jc, rate_ratio } => {
                let rn = tape.powf(r, jc.n_hard);
                let b = tape.constant(jc.a);
                let strain_term = tape.add_scaled(b, jc.b, rn);
                // Rate and thermal brackets are constants for a fixed ratio.
                let bracket = jc.r_jc(0.0, *rate_ratio).expect("validated ratio") / jc.a;
                let c = tape.constant(bracket);
                tape.mul(strain_term, c)
            }
        }
    }
}

impl FlowModel for PowerLawFlow {
    fn record_flow(
        &self,
        tape: &mut Tape,
        sigma: &[Var; 6],
        r: Var,
        _flags: &mut FlowFlags,
    ) -> Result<[Var; 6]> {
        let (s_eq, dev) = record_von_mises(tape, sigma);
        if tape.value(s_eq) == 0.0 {
            let z = tape.constant(0.0);
            return Ok([z; 6]);
        }
        let resistance = self.record_resistance(tape, r);
        let ratio = tape.div(s_eq, resistance);
        let powed = tape.powf(ratio, self.params.n);
        let c = tape.constant(1.5 * self.params.eps_dot_0);
        let scaled = tape.mul(powed, c);
        let pref = tape.div(scaled, s_eq);
        let mut flow = [pref; 6];
        for k in 0..6 {
            flow[k] = tape.mul(pref, dev[k]);
        }
        Ok(flow)
    }
}

/// Neural flow rule backed by networks already staged on the tape.
pub struct NeuralFlow<'a> {
    pub nets: &'a StagedNets,
    pub d_grain_um: Option<f64>,
}

impl FlowModel for NeuralFlow<'_> {
    fn record_flow(
        &self,
        tape: &mut Tape,
        sigma: &[Var; 6],
        r: Var,
        flags: &mut FlowFlags,
    ) -> Result<[Var; 6]> {
        self.nets.record_flow(tape, sigma, r, self.d_grain_um, flags)
    }
}

/// Simulation state on the tape.
#[derive(Clone, Copy)]
pub struct TapeState {
    pub eps_vp: [Var; 6],
    pub r: Var,
}

impl TapeState {
    pub fn initial(tape: &mut Tape) -> Self {
        let z = tape.constant(0.0);
        TapeState {
            eps_vp: [z; 6],
            r: z,
        }
    }
}

struct ResidualOut<const N: usize> {
    x: [Var; N],
    flow: [Var; 6],
    eps_vp_new: [Var; 6],
}

/// One accepted step on the tape.
pub struct StepVars {
    pub stress_axial: Var,
    pub lateral_strain: Option<Var>,
    pub stats: StepStats,
}

fn residual_norm<const N: usize>(tape: &Tape, x: &[Var; N]) -> f64 {
    x.iter()
        .map(|v| {
            let x = tape.value(*v);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Newton with a norm-decrease backtracking line search. The accepted
/// update `u - s * J^-1 X` is recorded on the tape with the scaled inverse
/// Jacobian as constants, so training gradients flow through the iterates.
/// `iterations` counts residual evaluations, line-search probes included.
fn nr_solve<const N: usize>(
    tape: &mut Tape,
    mut unknowns: [Var; N],
    mut record: impl FnMut(&mut Tape, &[Var; N]) -> Result<ResidualOut<N>>,
    settings: &SolverSettings,
) -> Result<([Var; N], ResidualOut<N>, StepStats)> {
    let mut out = record(tape, &unknowns)?;
    let mut iterations = 1u32;
    loop {
        let norm = residual_norm(tape, &out.x);
        if !norm.is_finite() {
            return Err(Error::NrDiverged {
                step: 0,
                iters: iterations,
                residual: norm,
            });
        }
        if norm < settings.tol {
            let stats = StepStats {
                iterations,
                residual: norm,
            };
            return Ok((unknowns, out, stats));
        }
        if iterations >= settings.max_iter {
            return Err(Error::NrDiverged {
                step: 0,
                iters: iterations,
                residual: norm,
            });
        }
        let jac = tape.jacobian(&out.x, &unknowns)?;
        let m = SMatrix::<f64, N, N>::from_fn(|i, j| jac[i][j]);
        let inv = m.try_inverse().ok_or(Error::NrDiverged {
            step: 0,
            iters: iterations,
            residual: norm,
        })?;
        let mut scale = 1.0;
        loop {
            let mut candidate = unknowns;
            for k in 0..N {
                let mut expr = unknowns[k];
                for l in 0..N {
                    let coef = scale * inv[(k, l)];
                    if coef != 0.0 {
                        expr = tape.add_scaled(expr, -coef, out.x[l]);
                    }
                }
                candidate[k] = expr;
            }
            let cand_out = record(tape, &candidate)?;
            iterations += 1;
            let cand_norm = residual_norm(tape, &cand_out.x);
            if cand_norm.is_finite() && cand_norm < norm {
                unknowns = candidate;
                out = cand_out;
                break;
            }
            if iterations >= settings.max_iter || scale <= 1e-6 {
                return Err(Error::NrDiverged {
                    step: 0,
                    iters: iterations,
                    residual: cand_norm,
                });
            }
            scale /= 2.0;
        }
    }
}

fn record_stiffness_row(tape: &mut Tape, c: &Stiffness66, k: usize, e: &[Var; 6]) -> Var {
    let mut acc = tape.constant(0.0);
    for l in 0..6 {
        let ckl = c.at(k, l);
        if ckl != 0.0 {
            acc = tape.add_scaled(acc, ckl, e[l]);
        }
    }
    acc
}

fn advance_true_uniaxial(
    tape: &mut Tape,
    state: &TapeState,
    eps_axial: f64,
    dt: f64,
    model: &dyn FlowModel,
    c: &Stiffness66,
    settings: &SolverSettings,
    flags: &mut FlowFlags,
) -> Result<(TapeState, StepVars)> {
    // Elastic trial: solve the linear problem with frozen viscoplastic
    // strain for (sigma_11, eps_lat).
    let b0 = record_stiffness_row(tape, c, 0, &state.eps_vp);
    let b1 = record_stiffness_row(tape, c, 1, &state.eps_vp);
    let lat_denom = c.at(1, 1) + c.at(1, 2);
    let known = tape.constant(c.at(1, 0) * eps_axial);
    let num = tape.sub(b1, known);
    let inv_denom = tape.constant(1.0 / lat_denom);
    let lat_trial = tape.mul(num, inv_denom);
    let ax = tape.constant(c.at(0, 0) * eps_axial);
    let with_lat = tape.add_scaled(ax, c.at(0, 1) + c.at(0, 2), lat_trial);
    let sig_trial = tape.sub(with_lat, b0);

    let dt_c = dt;
    let eps_vp = state.eps_vp;
    let r = state.r;
    let record = |tape: &mut Tape, u: &[Var; 2]| -> Result<ResidualOut<2>> {
        let zero = tape.constant(0.0);
        let sigma = [u[0], zero, zero, zero, zero, zero];
        let flow = model.record_flow(tape, &sigma, r, flags)?;
        let mut eps_vp_new = eps_vp;
        for k in 0..6 {
            eps_vp_new[k] = tape.add_scaled(eps_vp[k], dt_c, flow[k]);
        }
        let ea = tape.constant(eps_axial);
        let e = [
            tape.sub(ea, eps_vp_new[0]),
            tape.sub(u[1], eps_vp_new[1]),
            tape.sub(u[1], eps_vp_new[2]),
            tape.neg(eps_vp_new[3]),
            tape.neg(eps_vp_new[4]),
            tape.neg(eps_vp_new[5]),
        ];
        let row0 = record_stiffness_row(tape, c, 0, &e);
        let row1 = record_stiffness_row(tape, c, 1, &e);
        let x0 = tape.sub(u[0], row0);
        Ok(ResidualOut {
            x: [x0, row1],
            flow,
            eps_vp_new,
        })
    };

    let (u, out, stats) = nr_solve(tape, [sig_trial, lat_trial], record, settings)?;
    let next = finish_step(tape, state, &out.flow, out.eps_vp_new, dt);
    Ok((
        next,
        StepVars {
            stress_axial: u[0],
            lateral_strain: Some(u[1]),
            stats,
        },
    ))
}

fn advance_paper_faithful(
    tape: &mut Tape,
    state: &TapeState,
    eps_axial: f64,
    dt: f64,
    model: &dyn FlowModel,
    c: &Stiffness66,
    settings: &SolverSettings,
    flags: &mut FlowFlags,
) -> Result<(TapeState, StepVars)> {
    let eps = [eps_axial, -eps_axial / 2.0, -eps_axial / 2.0, 0.0, 0.0, 0.0];
    // Trial stress from the elastic strain with frozen viscoplastic strain.
    let mut trial = [tape.constant(0.0); 6];
    for (k, t) in trial.iter_mut().enumerate() {
        let mut e = [tape.constant(0.0); 6];
        for l in 0..6 {
            let el = tape.constant(eps[l]);
            e[l] = tape.sub(el, state.eps_vp[l]);
        }
        *t = record_stiffness_row(tape, c, k, &e);
    }

    let eps_vp = state.eps_vp;
    let r = state.r;
    let record = |tape: &mut Tape, u: &[Var; 6]| -> Result<ResidualOut<6>> {
        let flow = model.record_flow(tape, u, r, flags)?;
        let mut eps_vp_new = eps_vp;
        for k in 0..6 {
            eps_vp_new[k] = tape.add_scaled(eps_vp[k], dt, flow[k]);
        }
        let mut e = [tape.constant(0.0); 6];
        for l in 0..6 {
            let el = tape.constant(eps[l]);
            e[l] = tape.sub(el, eps_vp_new[l]);
        }
        let row0 = record_stiffness_row(tape, c, 0, &e);
        let x0 = tape.sub(u[0], row0);
        // Zero-stress rows for every non-axial component.
        let x = [x0, u[1], u[2], u[3], u[4], u[5]];
        Ok(ResidualOut {
            x,
            flow,
            eps_vp_new,
        })
    };

    let (u, out, stats) = nr_solve(tape, trial, record, settings)?;
    let next = finish_step(tape, state, &out.flow, out.eps_vp_new, dt);
    Ok((
        next,
        StepVars {
            stress_axial: u[0],
            lateral_strain: None,
            stats,
        },
    ))
}

fn finish_step(
    tape: &mut Tape,
    state: &TapeState,
    flow: &[Var; 6],
    eps_vp_new: [Var; 6],
    dt: f64,
) -> TapeState {
    let nsq = record_norm_squared(tape, flow);
    // r_dot = sqrt(2/3) * ||flow||; skip the sqrt on the exact-zero branch
    // where its derivative degenerates.
    let r_new = if tape.value(nsq) == 0.0 {
        state.r
    } else {
        let nrm = tape.sqrt(nsq);
        tape.add_scaled(state.r, (2.0f64 / 3.0).sqrt() * dt, nrm)
    };
    TapeState {
        eps_vp: eps_vp_new,
        r: r_new,
    }
}

/// Advances the tape state by one step; the caller retries with halved
/// steps on failure.
pub fn advance_on_tape(
    tape: &mut Tape,
    state: &TapeState,
    eps_axial_new: f64,
    dt: f64,
    model: &dyn FlowModel,
    c: &Stiffness66,
    mode: SolveMode,
    settings: &SolverSettings,
    flags: &mut FlowFlags,
) -> Result<(TapeState, StepVars)> {
    match mode {
        SolveMode::TrueUniaxial => {
            advance_true_uniaxial(tape, state, eps_axial_new, dt, model, c, settings, flags)
        }
        SolveMode::PaperFaithful => {
            advance_paper_faithful(tape, state, eps_axial_new, dt, model, c, settings, flags)
        }
    }
}

/// One accepted grid step of a tape simulation.
pub struct StepRecord {
    pub strain: f64,
    pub time_s: f64,
    pub dt: f64,
    pub stress_axial: Var,
    /// Accumulated plastic strain after the step (drives elastic masking).
    pub r: Var,
    pub stats: StepStats,
}

/// A full simulation recorded on one tape, plus every Newton solve's
/// statistics (sub-steps from halving retries included).
pub struct TapeCurve {
    pub steps: Vec<StepRecord>,
    pub nr_solves: Vec<StepStats>,
}

/// Outcome of a simulation: the accepted steps, and the failure that
/// truncated the run, if any.
pub struct SimRun {
    pub curve: TapeCurve,
    pub failure: Option<Error>,
}

/// Simulates the loading program on `tape`. On a step failure the step is
/// retried once as two half steps; if that also fails the run stops with
/// the partial curve and the diagnostic.
pub fn simulate_on_tape(
    tape: &mut Tape,
    program: &LoadingProgram,
    model: &dyn FlowModel,
    c: &Stiffness66,
    settings: &SolverSettings,
    flags: &mut FlowFlags,
) -> SimRun {
    if let Err(e) = program.validate() {
        return SimRun {
            curve: TapeCurve {
                steps: Vec::new(),
                nr_solves: Vec::new(),
            },
            failure: Some(e),
        };
    }
    let mut steps = Vec::new();
    let mut nr_solves = Vec::new();
    let mut state = TapeState::initial(tape);
    let mut time = 0.0;
    let mut strain = 0.0;
    for (i, dt) in program.dts().into_iter().enumerate() {
        let target = strain + program.rate * dt;
        let attempt = advance_on_tape(
            tape,
            &state,
            target,
            dt,
            model,
            c,
            program.mode,
            settings,
            flags,
        );
        let (next, vars) = match attempt {
            Ok((next, vars)) => {
                nr_solves.push(vars.stats);
                (next, vars)
            }
            Err(_) => {
                // One halving: two half steps landing on the same grid point.
                let mid = strain + program.rate * dt / 2.0;
                let halves = advance_on_tape(
                    tape,
                    &state,
                    mid,
                    dt / 2.0,
                    model,
                    c,
                    program.mode,
                    settings,
                    flags,
                )
                .and_then(|(s1, v1)| {
                    advance_on_tape(
                        tape,
                        &s1,
                        target,
                        dt / 2.0,
                        model,
                        c,
                        program.mode,
                        settings,
                        flags,
                    )
                    .map(|(s2, v2)| (s2, v1, v2))
                });
                match halves {
                    Ok((s2, v1, v2)) => {
                        nr_solves.push(v1.stats);
                        nr_solves.push(v2.stats);
                        (s2, v2)
                    }
                    Err(e) => {
                        let failure = match e {
                            Error::NrDiverged {
                                iters, residual, ..
                            } => Error::NrDiverged {
                                step: i,
                                iters,
                                residual,
                            },
                            other => other,
                        };
                        return SimRun {
                            curve: TapeCurve { steps, nr_solves },
                            failure: Some(failure),
                        };
                    }
                }
            }
        };
        time += dt;
        strain = target;
        steps.push(StepRecord {
            strain,
            time_s: time,
            dt,
            stress_axial: vars.stress_axial,
            r: next.r,
            stats: vars.stats,
        });
        state = next;
    }
    SimRun {
        curve: TapeCurve { steps, nr_solves },
        failure: None,
    }
}

/// Plain-value stress-strain curve sampled at every accepted step.
#[derive(Debug, Clone, Default)]
pub struct Curve {
    pub strain: Vec<f64>,
    pub stress_mpa: Vec<f64>,
    pub time_s: Vec<f64>,
    pub r: Vec<f64>,
    pub nr_iters: Vec<u32>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.strain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strain.is_empty()
    }
}

/// Runs the program on a fresh tape and reads the values off. Deterministic
/// for identical inputs. Returns the (possibly partial) curve, the per-solve
/// statistics, and the failure that truncated the run, if any.
pub fn simulate_curve(
    program: &LoadingProgram,
    model: &dyn FlowModel,
    c: &Stiffness66,
    settings: &SolverSettings,
) -> (Curve, Vec<StepStats>, Option<Error>) {
    let mut tape = Tape::new();
    let mut flags = FlowFlags::default();
    let run = simulate_on_tape(&mut tape, program, model, c, settings, &mut flags);
    let mut curve = Curve::default();
    for s in &run.curve.steps {
        curve.strain.push(s.strain);
        curve.stress_mpa.push(tape.value(s.stress_axial));
        curve.time_s.push(s.time_s);
        curve.r.push(tape.value(s.r));
        curve.nr_iters.push(s.stats.iterations);
    }
    (curve, run.curve.nr_solves, run.failure)
}

/// Advances a plain material state by one step.
pub fn advance(
    state: &MaterialState,
    axial_rate: f64,
    dt: f64,
    model: &dyn FlowModel,
    c: &Stiffness66,
    mode: SolveMode,
    settings: &SolverSettings,
) -> Result<(MaterialState, StepStats)> {
    let mut tape = Tape::new();
    let mut flags = FlowFlags::default();
    let mut eps_vp = [tape.constant(0.0); 6];
    for k in 0..6 {
        eps_vp[k] = tape.constant(state.viscoplastic_strain.component(k));
    }
    let tape_state = TapeState {
        eps_vp,
        r: tape.constant(state.r),
    };
    let eps_axial = state.total_strain.component(0) + axial_rate * dt;
    let (next, vars) = advance_on_tape(
        &mut tape, &tape_state, eps_axial, dt, model, c, mode, settings, &mut flags,
    )?;
    let sigma_axial = tape.value(vars.stress_axial);
    let (total_strain, stress) = match mode {
        SolveMode::TrueUniaxial => {
            let lat = tape.value(vars.lateral_strain.expect("uniaxial lateral"));
            (
                SymTensor3::diag(eps_axial, lat, lat),
                SymTensor3::diag(sigma_axial, 0.0, 0.0),
            )
        }
        SolveMode::PaperFaithful => (
            SymTensor3::diag(eps_axial, -eps_axial / 2.0, -eps_axial / 2.0),
            SymTensor3::diag(sigma_axial, 0.0, 0.0),
        ),
    };
    let mut vp = [0.0; 6];
    for k in 0..6 {
        vp[k] = tape.value(next.eps_vp[k]);
    }
    Ok((
        MaterialState {
            total_strain,
            viscoplastic_strain: SymTensor3::new(vp),
            r: tape.value(next.r),
            stress,
            time: state.time + dt,
        },
        vars.stats,
    ))
}

/// Evaluates the step residual at a given unknown vector (for tests and
/// diagnostics). `unknowns` is `[sigma_11, eps_lateral]` in true-uniaxial
/// mode and the six Voigt stress components in paper-faithful mode.
pub fn eval_residual(
    mode: SolveMode,
    unknowns: &[f64],
    state: &MaterialState,
    eps_axial_new: f64,
    dt: f64,
    model: &dyn FlowModel,
    c: &Stiffness66,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut flags = FlowFlags::default();
    let mut eps_vp = [tape.constant(0.0); 6];
    for k in 0..6 {
        eps_vp[k] = tape.constant(state.viscoplastic_strain.component(k));
    }
    let r = tape.constant(state.r);

    match mode {
        SolveMode::TrueUniaxial => {
            if unknowns.len() != 2 {
                return Err(Error::ParamDomain(
                    "true-uniaxial residual takes [sigma_11, eps_lateral]".into(),
                ));
            }
            let u0 = tape.input(unknowns[0]);
            let u1 = tape.input(unknowns[1]);
            let zero = tape.constant(0.0);
            let sigma = [u0, zero, zero, zero, zero, zero];
            let flow = model.record_flow(&mut tape, &sigma, r, &mut flags)?;
            let mut eps_vp_new = eps_vp;
            for k in 0..6 {
                eps_vp_new[k] = tape.add_scaled(eps_vp[k], dt, flow[k]);
            }
            let ea = tape.constant(eps_axial_new);
            let e = [
                tape.sub(ea, eps_vp_new[0]),
                tape.sub(u1, eps_vp_new[1]),
                tape.sub(u1, eps_vp_new[2]),
                tape.neg(eps_vp_new[3]),
                tape.neg(eps_vp_new[4]),
                tape.neg(eps_vp_new[5]),
            ];
            let row0 = record_stiffness_row(&mut tape, c, 0, &e);
            let row1 = record_stiffness_row(&mut tape, c, 1, &e);
            let x0 = tape.sub(u0, row0);
            Ok(vec![tape.value(x0), tape.value(row1)])
        }
        SolveMode::PaperFaithful => {
            if unknowns.len() != 6 {
                return Err(Error::ParamDomain(
                    "paper-faithful residual takes six stress components".into(),
                ));
            }
            let mut u = [tape.constant(0.0); 6];
            for k in 0..6 {
                u[k] = tape.input(unknowns[k]);
            }
            let flow = model.record_flow(&mut tape, &u, r, &mut flags)?;
            let mut eps_vp_new = eps_vp;
            for k in 0..6 {
                eps_vp_new[k] = tape.add_scaled(eps_vp[k], dt, flow[k]);
            }
            let eps = [
                eps_axial_new,
                -eps_axial_new / 2.0,
                -eps_axial_new / 2.0,
                0.0,
                0.0,
                0.0,
            ];
            let mut e = [tape.constant(0.0); 6];
            for l in 0..6 {
                let el = tape.constant(eps[l]);
                e[l] = tape.sub(el, eps_vp_new[l]);
            }
            let row0 = record_stiffness_row(&mut tape, c, 0, &e);
            let x0 = tape.sub(u[0], row0);
            let mut out = vec![tape.value(x0)];
            for k in 1..6 {
                out.push(tape.value(u[k]));
            }
            Ok(out)
        }
    }
}
