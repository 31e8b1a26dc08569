//! Constrained feedforward networks: the convex dual-potential net, the
//! monotone hardening net, and the reciprocal grain-size net, together with
//! their tape-recorded forward and derivative evaluation.
//!
//! All constrained weights and biases stay nonnegative (the trainer projects
//! after every optimizer step), which combined with the activation choices
//! guarantees the constraint profile structurally:
//!
//! * convex-increasing-through-origin: adaptive Softplus hidden layers,
//!   linear output, minus the network's own value at zero input;
//! * monotone-increasing-positive: mixed ReLU / adaptive logistic / adaptive
//!   tanh hidden layers, linear output;
//! * reciprocal-decreasing-positive: plain tanh hidden layers, linear
//!   output, then the reciprocal of the (increasing, positive) inner net.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tape_tensor::record_von_mises;

/// Lower bound kept on every adaptive activation sharpness.
pub const BETA_MIN: f64 = 1e-3;

/// Inner values at or below this are treated as degenerate when taking the
/// reciprocal; the result is clamped and the run flagged.
pub const RECIPROCAL_EPS: f64 = 1e-12;

/// Pre-activations above this use the linear tail of Softplus; the dropped
/// remainder is below 1e-13 in relative terms.
const SOFTPLUS_LINEAR_CUTOFF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintProfile {
    ConvexIncreasing,
    MonotoneIncreasing,
    ReciprocalDecreasing,
}

/// Which pair of activations the hardening net mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixKind {
    /// `alpha1 * max(x,0) + alpha2 * logistic(beta x)`
    ReluLogistic,
    /// `alpha1 * max(x,0) + alpha2 * tanh(beta x)`
    ReluTanh,
    /// `alpha1 * logistic(beta x) + alpha2 * tanh(beta x)`
    LogisticTanh,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActivationMix {
    pub kind: MixKind,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Fixed per run by default; optionally trained (clamped >= 0).
    #[serde(default)]
    pub trainable: bool,
}

impl ActivationMix {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 || self.alpha1 + self.alpha2 <= 0.0 {
            return Err(Error::ParamDomain(format!(
                "activation mix weights must be nonnegative with a positive sum, got ({}, {})",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// One constrained scalar-to-scalar network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstrainedNet {
    pub profile: ConstraintProfile,
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<DenseLayer>,
    /// One adaptive sharpness per hidden layer; empty for the reciprocal
    /// profile, which uses plain tanh.
    pub betas: Vec<f64>,
    pub mix: Option<ActivationMix>,
}

impl ConstrainedNet {
    /// Small positive initialization: weights uniform in `[0, 0.5/fan_in]`,
    /// biases in `[0, 0.1]`, beta = 1. Keeps early flow rates finite for
    /// sharp potentials.
    pub fn init<R: Rng>(
        profile: ConstraintProfile,
        hidden: &[usize],
        mix: Option<ActivationMix>,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.iter().any(|&n| n == 0) {
            return Err(Error::ParamDomain(
                "network needs at least one nonempty hidden layer".into(),
            ));
        }
        match profile {
            ConstraintProfile::MonotoneIncreasing => {
                let m = mix.ok_or_else(|| {
                    Error::ParamDomain("monotone-increasing profile requires an activation mix".into())
                })?;
                m.validate()?;
            }
            _ => {
                if mix.is_some() {
                    return Err(Error::ParamDomain(
                        "activation mixes apply to the monotone-increasing profile only".into(),
                    ));
                }
            }
        }
        let mut sizes = vec![1usize];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let scale = 0.5 / cols as f64;
            let weights = (0..rows * cols).map(|_| rng.gen::<f64>() * scale).collect();
            let bias = (0..rows).map(|_| rng.gen::<f64>() * 0.1).collect();
            layers.push(DenseLayer {
                rows,
                cols,
                weights,
                bias,
            });
        }
        let betas = match profile {
            ConstraintProfile::ReciprocalDecreasing => Vec::new(),
            _ => vec![1.0; hidden.len()],
        };
        Ok(ConstrainedNet {
            profile,
            layers,
            betas,
            mix,
        })
    }

    fn alphas_trainable(&self) -> bool {
        self.mix.map(|m| m.trainable).unwrap_or(false)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in &self.layers {
            n += l.weights.len() + l.bias.len();
        }
        n += self.betas.len();
        if self.alphas_trainable() {
            n += 2;
        }
        n
    }

    /// Walks every trainable parameter in canonical order: per layer weights
    /// then bias, then betas, then (if trainable) the mix weights.
    pub fn visit(&self, f: &mut impl FnMut(f64, ParamKind)) {
        for l in &self.layers {
            for &w in &l.weights {
                f(w, ParamKind::Weight);
            }
            for &b in &l.bias {
                f(b, ParamKind::Bias);
            }
        }
        for &b in &self.betas {
            f(b, ParamKind::Beta);
        }
        if self.alphas_trainable() {
            let m = self.mix.unwrap();
            f(m.alpha1, ParamKind::Alpha);
            f(m.alpha2, ParamKind::Alpha);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64, ParamKind)) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                f(w, ParamKind::Weight);
            }
            for b in &mut l.bias {
                f(b, ParamKind::Bias);
            }
        }
        for b in &mut self.betas {
            f(b, ParamKind::Beta);
        }
        if self.mix.map(|m| m.trainable).unwrap_or(false) {
            let m = self.mix.as_mut().unwrap();
            f(&mut m.alpha1, ParamKind::Alpha);
            f(&mut m.alpha2, ParamKind::Alpha);
        }
    }

    /// Clamps constrained parameters back into their feasible set.
    pub fn project(&mut self) {
        self.visit_mut(&mut |p, kind| {
            let lower = match kind {
                ParamKind::Beta => BETA_MIN,
                _ => 0.0,
            };
            if !p.is_finite() || *p < lower {
                *p = p.max(lower);
                if !p.is_finite() {
                    *p = lower;
                }
            }
        });
    }

    fn assert_feasible(&self) {
        self.visit(&mut |p, kind| {
            let lower = match kind {
                ParamKind::Beta => BETA_MIN,
                _ => 0.0,
            };
            assert!(
                p.is_finite() && p >= lower,
                "constraint violation: {kind:?} parameter {p} below {lower}; \
                 projection must run after every optimizer step"
            );
        });
    }

    /// Registers the parameters on `tape`, appending the trainable ones to
    /// `params` in [`visit`] order.
    pub fn stage(&self, tape: &mut Tape, params: &mut Vec<Var>) -> StagedNet {
        self.assert_feasible();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let weights: Vec<Var> = l.weights.iter().map(|&w| tape.input(w)).collect();
            params.extend_from_slice(&weights);
            let bias: Vec<Var> = l.bias.iter().map(|&b| tape.input(b)).collect();
            params.extend_from_slice(&bias);
            layers.push(StagedLayer {
                rows: l.rows,
                cols: l.cols,
                weights,
                bias,
            });
        }
        let betas: Vec<Var> = self.betas.iter().map(|&b| tape.input(b)).collect();
        params.extend_from_slice(&betas);
        let (alpha1, alpha2) = match self.mix {
            Some(m) if m.trainable => {
                let a1 = tape.input(m.alpha1);
                let a2 = tape.input(m.alpha2);
                params.push(a1);
                params.push(a2);
                (a1, a2)
            }
            Some(m) => (tape.constant(m.alpha1), tape.constant(m.alpha2)),
            None => {
                let one = tape.constant(1.0);
                (one, one)
            }
        };
        let mut staged = StagedNet {
            profile: self.profile,
            mix_kind: self.mix.map(|m| m.kind),
            layers,
            betas,
            alpha1,
            alpha2,
            origin: None,
        };
        if self.profile == ConstraintProfile::ConvexIncreasing {
            let zero = tape.constant(0.0);
            let (y0, dy0) = staged.eval(tape, zero, true);
            staged.origin = Some((y0, dy0.unwrap()));
        }
        staged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Beta,
    Alpha,
}

impl ParamKind {
    /// Weight decay pulls constrained weights and biases toward zero, which
    /// is constraint-safe; sharpness and mix weights are excluded so decay
    /// cannot distort the activation shape.
    pub fn decays(&self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            ParamKind::Beta => BETA_MIN,
            _ => 0.0,
        }
    }
}

pub struct StagedLayer {
    rows: usize,
    cols: usize,
    weights: Vec<Var>,
    bias: Vec<Var>,
}

/// A network staged onto a tape: same structure, parameters as tape nodes.
pub struct StagedNet {
    profile: ConstraintProfile,
    mix_kind: Option<MixKind>,
    layers: Vec<StagedLayer>,
    betas: Vec<Var>,
    alpha1: Var,
    alpha2: Var,
    /// Raw value and derivative at zero input, recorded once at staging
    /// (convex profile only); the potential subtracts both.
    origin: Option<(Var, Var)>,
}

impl StagedNet {
    /// Activation value and (optionally) its derivative at `pre`.
    fn activation(
        &self,
        tape: &mut Tape,
        pre: Var,
        hidden_idx: usize,
        want_deriv: bool,
    ) -> (Var, Option<Var>) {
        match self.profile {
            ConstraintProfile::ConvexIncreasing => {
                let beta = self.betas[hidden_idx];
                if tape.value(pre) > SOFTPLUS_LINEAR_CUTOFF {
                    let z = tape.div(pre, beta);
                    let d = want_deriv.then(|| {
                        let one = tape.constant(1.0);
                        tape.div(one, beta)
                    });
                    return (z, d);
                }
                let one = tape.constant(1.0);
                let e = tape.exp(pre);
                let s = tape.add(one, e);
                let l = tape.ln(s);
                let z = tape.div(l, beta);
                let d = want_deriv.then(|| {
                    let sig = tape.div(e, s);
                    tape.div(sig, beta)
                });
                (z, d)
            }
            ConstraintProfile::MonotoneIncreasing => {
                let beta = self.betas[hidden_idx];
                let kind = self.mix_kind.expect("monotone profile carries a mix");
                let (t1, d1) = match kind {
                    MixKind::ReluLogistic | MixKind::ReluTanh => self.relu_term(tape, pre, want_deriv),
                    MixKind::LogisticTanh => self.logistic_term(tape, pre, beta, want_deriv),
                };
                let (t2, d2) = match kind {
                    MixKind::ReluLogistic => self.logistic_term(tape, pre, beta, want_deriv),
                    MixKind::ReluTanh | MixKind::LogisticTanh => {
                        self.tanh_term(tape, pre, beta, want_deriv)
                    }
                };
                let a1t1 = tape.mul(self.alpha1, t1);
                let a2t2 = tape.mul(self.alpha2, t2);
                let z = tape.add(a1t1, a2t2);
                let d = want_deriv.then(|| {
                    let a1d1 = tape.mul(self.alpha1, d1.unwrap());
                    let a2d2 = tape.mul(self.alpha2, d2.unwrap());
                    tape.add(a1d1, a2d2)
                });
                (z, d)
            }
            ConstraintProfile::ReciprocalDecreasing => {
                let th = tape.tanh(pre);
                let d = want_deriv.then(|| {
                    let sq = tape.mul(th, th);
                    let one = tape.constant(1.0);
                    tape.sub(one, sq)
                });
                (th, d)
            }
        }
    }

    fn relu_term(&self, tape: &mut Tape, pre: Var, want_deriv: bool) -> (Var, Option<Var>) {
        let z = tape.relu(pre);
        let d = want_deriv.then(|| {
            // Record-time subgradient; 0 at exactly 0 like the tape's relu.
            let step = if tape.value(pre) > 0.0 { 1.0 } else { 0.0 };
            tape.constant(step)
        });
        (z, d)
    }

    fn logistic_term(
        &self,
        tape: &mut Tape,
        pre: Var,
        beta: Var,
        want_deriv: bool,
    ) -> (Var, Option<Var>) {
        let v = tape.mul(beta, pre);
        let nv = tape.neg(v);
        let env = tape.exp(nv);
        let one = tape.constant(1.0);
        let den = tape.add(one, env);
        let lg = tape.div(one, den);
        let d = want_deriv.then(|| {
            let om = tape.sub(one, lg);
            let p = tape.mul(lg, om);
            tape.mul(beta, p)
        });
        (lg, d)
    }

    fn tanh_term(
        &self,
        tape: &mut Tape,
        pre: Var,
        beta: Var,
        want_deriv: bool,
    ) -> (Var, Option<Var>) {
        let v = tape.mul(beta, pre);
        let th = tape.tanh(v);
        let d = want_deriv.then(|| {
            let sq = tape.mul(th, th);
            let one = tape.constant(1.0);
            let om = tape.sub(one, sq);
            tape.mul(beta, om)
        });
        (th, d)
    }

    /// Forward pass; with `want_deriv`, also the derivative of the output
    /// with respect to the scalar input, itself recorded on the tape so it
    /// stays differentiable with respect to the parameters.
    fn eval(&self, tape: &mut Tape, x: Var, want_deriv: bool) -> (Var, Option<Var>) {
        let mut z = vec![x];
        let mut dz = if want_deriv {
            Some(vec![tape.constant(1.0)])
        } else {
            None
        };
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let is_output = l + 1 == n_layers;
            let mut z_next = Vec::with_capacity(layer.rows);
            let mut dz_next = dz.as_ref().map(|_| Vec::with_capacity(layer.rows));
            for i in 0..layer.rows {
                let mut pre = layer.bias[i];
                for j in 0..layer.cols {
                    let t = tape.mul(layer.weights[i * layer.cols + j], z[j]);
                    pre = tape.add(pre, t);
                }
                let dpre = dz.as_ref().map(|dzv| {
                    let mut acc = tape.constant(0.0);
                    for j in 0..layer.cols {
                        let t = tape.mul(layer.weights[i * layer.cols + j], dzv[j]);
                        acc = tape.add(acc, t);
                    }
                    acc
                });
                if is_output {
                    z_next.push(pre);
                    if let Some(v) = dz_next.as_mut() {
                        v.push(dpre.unwrap());
                    }
                } else {
                    let (a, da) = self.activation(tape, pre, l, want_deriv);
                    z_next.push(a);
                    if let Some(v) = dz_next.as_mut() {
                        let chained = tape.mul(da.unwrap(), dpre.unwrap());
                        v.push(chained);
                    }
                }
            }
            z = z_next;
            dz = dz_next;
        }
        (z[0], dz.map(|v| v[0]))
    }

    /// Convex dual-potential forward: the network's value minus its value
    /// and tangent at zero input, recorded on the same tape so the origin
    /// condition is exact and the shifts stay differentiable in the
    /// parameters.
    ///
    /// Removing the tangent keeps the potential's slope zero at the origin,
    /// so the normality flow vanishes continuously at zero stress instead
    /// of jumping across a nonzero creep floor (the raw softplus network
    /// cannot push its origin slope below a fixed fraction of its maximum
    /// slope, which would otherwise put a hard floor under the flow rate).
    pub fn record_potential(&self, tape: &mut Tape, x: Var, want_deriv: bool) -> (Var, Option<Var>) {
        debug_assert_eq!(self.profile, ConstraintProfile::ConvexIncreasing);
        let (yx, dy) = self.eval(tape, x, want_deriv);
        let (y0, dy0) = self.origin.expect("origin recorded at staging");
        let shifted = tape.sub(yx, y0);
        let lin = tape.mul(dy0, x);
        let y = tape.sub(shifted, lin);
        let d = want_deriv.then(|| tape.sub(dy.unwrap(), dy0));
        (y, d)
    }

    /// Potential derivative only; the value shift does not affect it but
    /// the tangent shift does.
    pub fn record_potential_derivative(&self, tape: &mut Tape, x: Var) -> Var {
        debug_assert_eq!(self.profile, ConstraintProfile::ConvexIncreasing);
        let dy = self.eval(tape, x, true).1.unwrap();
        let (_, dy0) = self.origin.expect("origin recorded at staging");
        tape.sub(dy, dy0)
    }

    /// Monotone hardening forward; the value at r = 0 is the learned initial
    /// yield contribution (dimensionless; multiply by the stress scale).
    pub fn record_hardening(&self, tape: &mut Tape, r: Var) -> Var {
        debug_assert_eq!(self.profile, ConstraintProfile::MonotoneIncreasing);
        self.eval(tape, r, false).0
    }

    /// Reciprocal grain-size forward on the scaled input `d / d_ref`.
    pub fn record_hall_petch(&self, tape: &mut Tape, d_over_ref: Var, flags: &mut FlowFlags) -> Var {
        debug_assert_eq!(self.profile, ConstraintProfile::ReciprocalDecreasing);
        let (inner, _) = self.eval(tape, d_over_ref, false);
        if tape.value(inner) <= RECIPROCAL_EPS {
            flags.hp_reciprocal_clamps += 1;
            return tape.constant(1.0 / RECIPROCAL_EPS);
        }
        let one = tape.constant(1.0);
        tape.div(one, inner)
    }
}

/// Nondimensionalization constants carried with the trained model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelScales {
    /// Stress scale (MPa); defaults to the peak stress of the training data.
    pub stress_mpa: f64,
    /// Rate scale (1/s); the effective applied rate of the training program.
    pub rate_per_s: f64,
    /// Grain-size input scale.
    pub d_ref_um: f64,
}

/// Degenerate-evaluation counters surfaced in the run report.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowFlags {
    pub hp_reciprocal_clamps: u64,
    pub denominator_clamps: u64,
}

/// The trainable model: dual potential plus optional hardening and
/// grain-size networks, with their scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelNets {
    pub potential: ConstrainedNet,
    pub hardening: Option<ConstrainedNet>,
    pub hall_petch: Option<ConstrainedNet>,
    pub scales: ModelScales,
}

impl ModelNets {
    pub fn validate(&self) -> Result<()> {
        if self.potential.profile != ConstraintProfile::ConvexIncreasing {
            return Err(Error::ParamDomain("potential net must be convex-increasing".into()));
        }
        if let Some(h) = &self.hardening {
            if h.profile != ConstraintProfile::MonotoneIncreasing {
                return Err(Error::ParamDomain("hardening net must be monotone-increasing".into()));
            }
        }
        if let Some(hp) = &self.hall_petch {
            if hp.profile != ConstraintProfile::ReciprocalDecreasing {
                return Err(Error::ParamDomain(
                    "grain-size net must be reciprocal-decreasing".into(),
                ));
            }
            if self.hardening.is_none() {
                return Err(Error::ParamDomain(
                    "grain-size net requires a hardening net".into(),
                ));
            }
        }
        if !(self.scales.stress_mpa > 0.0 && self.scales.rate_per_s > 0.0 && self.scales.d_ref_um > 0.0)
        {
            return Err(Error::ParamDomain("model scales must be positive".into()));
        }
        Ok(())
    }

    fn nets(&self) -> impl Iterator<Item = &ConstrainedNet> {
        std::iter::once(&self.potential)
            .chain(self.hardening.iter())
            .chain(self.hall_petch.iter())
    }

    pub fn param_count(&self) -> usize {
        self.nets().map(|n| n.param_count()).sum()
    }

    /// Flattens all trainable parameters in canonical order.
    pub fn flatten(&self) -> (Vec<f64>, Vec<ParamKind>) {
        let mut values = Vec::with_capacity(self.param_count());
        let mut kinds = Vec::with_capacity(self.param_count());
        for net in self.nets() {
            net.visit(&mut |v, k| {
                values.push(v);
                kinds.push(k);
            });
        }
        (values, kinds)
    }

    /// Writes a flat parameter vector back, in [`flatten`] order.
    pub fn apply_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length mismatch");
        let mut it = flat.iter();
        let mut write = |p: &mut f64, _k: ParamKind| *p = *it.next().unwrap();
        self.potential.visit_mut(&mut write);
        if let Some(h) = &mut self.hardening {
            h.visit_mut(&mut write);
        }
        if let Some(hp) = &mut self.hall_petch {
            hp.visit_mut(&mut write);
        }
    }

    pub fn project(&mut self) {
        self.potential.project();
        if let Some(h) = &mut self.hardening {
            h.project();
        }
        if let Some(hp) = &mut self.hall_petch {
            hp.project();
        }
    }

    /// Stages every network onto `tape`; the returned parameter handles
    /// align with [`flatten`] order.
    pub fn stage(&self, tape: &mut Tape) -> (StagedNets, Vec<Var>) {
        let mut params = Vec::with_capacity(self.param_count());
        let potential = self.potential.stage(tape, &mut params);
        let hardening = self.hardening.as_ref().map(|h| h.stage(tape, &mut params));
        let hall_petch = self.hall_petch.as_ref().map(|hp| hp.stage(tape, &mut params));
        (
            StagedNets {
                potential,
                hardening,
                hall_petch,
                scales: self.scales,
            },
            params,
        )
    }

    /// Hardening resistance in MPa at accumulated plastic strain `r`.
    pub fn eval_hardening_mpa(&self, r: f64) -> Option<f64> {
        self.hardening.as_ref()?;
        let mut tape = Tape::new();
        let (staged, _) = self.stage(&mut tape);
        let rv = tape.constant(r);
        let y = staged.hardening.as_ref().unwrap().record_hardening(&mut tape, rv);
        Some(self.scales.stress_mpa * tape.value(y))
    }

    /// Grain-size strengthening in MPa at grain size `d_um`.
    pub fn eval_hall_petch_mpa(&self, d_um: f64) -> Option<f64> {
        self.hall_petch.as_ref()?;
        let mut tape = Tape::new();
        let (staged, _) = self.stage(&mut tape);
        let x = tape.constant(d_um / self.scales.d_ref_um);
        let mut flags = FlowFlags::default();
        let y = staged
            .hall_petch
            .as_ref()
            .unwrap()
            .record_hall_petch(&mut tape, x, &mut flags);
        Some(self.scales.stress_mpa * tape.value(y))
    }

    /// Shifted potential value at the dimensionless input `x`.
    pub fn eval_potential(&self, x: f64) -> f64 {
        let mut tape = Tape::new();
        let (staged, _) = self.stage(&mut tape);
        let xv = tape.constant(x);
        let (y, _) = staged.potential.record_potential(&mut tape, xv, false);
        tape.value(y)
    }

    /// Numerical constraint audit on evaluation grids: convexity,
    /// monotonicity, positivity and the origin condition. Returns
    /// human-readable violations (empty when all constraints hold).
    pub fn check_constraints(&self) -> Vec<String> {
        let mut violations = Vec::new();

        let xs: Vec<f64> = (0..50).map(|i| 3.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.eval_potential(x)).collect();
        if ys[0] != 0.0 {
            violations.push(format!("potential(0) = {} is not exactly zero", ys[0]));
        }
        for w in ys.windows(2) {
            if w[1] - w[0] < -1e-10 {
                violations.push(format!(
                    "potential not nondecreasing: step {} -> {}",
                    w[0], w[1]
                ));
                break;
            }
        }
        for w in ys.windows(3) {
            if w[2] - 2.0 * w[1] + w[0] < -1e-8 {
                violations.push(format!(
                    "potential not convex: second difference {}",
                    w[2] - 2.0 * w[1] + w[0]
                ));
                break;
            }
        }

        if self.hardening.is_some() {
            let rs: Vec<f64> = (0..50).map(|i| 0.1 * i as f64 / 49.0).collect();
            let hs: Vec<f64> = rs
                .iter()
                .map(|&r| self.eval_hardening_mpa(r).unwrap())
                .collect();
            if hs.iter().any(|&h| h <= 0.0) {
                violations.push("hardening output is not strictly positive".into());
            }
            for w in hs.windows(2) {
                if w[1] - w[0] < -1e-10 * self.scales.stress_mpa {
                    violations.push(format!(
                        "hardening not nondecreasing: step {} -> {}",
                        w[0], w[1]
                    ));
                    break;
                }
            }
        }

        if self.hall_petch.is_some() {
            let ds: Vec<f64> = (0..50)
                .map(|i| 0.5 * (1000.0f64).powf(i as f64 / 49.0))
                .collect();
            let hps: Vec<f64> = ds
                .iter()
                .map(|&d| self.eval_hall_petch_mpa(d).unwrap())
                .collect();
            if hps.iter().any(|&h| h <= 0.0) {
                violations.push("grain-size output is not strictly positive".into());
            }
            for w in hps.windows(2) {
                if w[1] - w[0] > 1e-10 * self.scales.stress_mpa {
                    violations.push(format!(
                        "grain-size output not nonincreasing: step {} -> {}",
                        w[0], w[1]
                    ));
                    break;
                }
            }
        }

        violations
    }
}

/// Networks staged on a tape, ready for flow-rule evaluation.
pub struct StagedNets {
    pub potential: StagedNet,
    pub hardening: Option<StagedNet>,
    pub hall_petch: Option<StagedNet>,
    pub scales: ModelScales,
}

impl StagedNets {
    /// Viscoplastic strain rate (tensor components, 1/s) from the learned
    /// dual potential: the tape-recorded gradient of
    /// `potential(sigma_eq / denominator)` with respect to stress.
    ///
    /// The denominator is the stress scale alone (perfect plasticity) or the
    /// staged hardening-plus-grain-size resistance. Returns the zero tensor
    /// on the zero-stress branch.
    pub fn record_flow(
        &self,
        tape: &mut Tape,
        sigma: &[Var; 6],
        r: Var,
        d_grain_um: Option<f64>,
        flags: &mut FlowFlags,
    ) -> Result<[Var; 6]> {
        if d_grain_um.is_some() != self.hall_petch.is_some() {
            return Err(Error::ParamDomain(
                "grain size must be supplied exactly when a grain-size net is present".into(),
            ));
        }
        let (s_eq, dev) = record_von_mises(tape, sigma);
        if tape.value(s_eq) == 0.0 {
            let z = tape.constant(0.0);
            return Ok([z; 6]);
        }
        let denom = match &self.hardening {
            Some(h) => {
                let y_r = h.record_hardening(tape, r);
                let resist = if let Some(hp) = &self.hall_petch {
                    let x_d = tape.constant(d_grain_um.unwrap() / self.scales.d_ref_um);
                    let y_hp = hp.record_hall_petch(tape, x_d, flags);
                    tape.add(y_r, y_hp)
                } else {
                    y_r
                };
                let c = tape.constant(self.scales.stress_mpa);
                tape.mul(resist, c)
            }
            None => tape.constant(self.scales.stress_mpa),
        };
        let denom = if tape.value(denom) <= RECIPROCAL_EPS {
            flags.denominator_clamps += 1;
            tape.constant(RECIPROCAL_EPS)
        } else {
            denom
        };
        let x = tape.div(s_eq, denom);
        let dy = self.potential.record_potential_derivative(tape, x);
        // flow_k = s_pot * dy/dx * dx/dsigma_k
        //        = (stress_scale * rate_scale) * dy * (3/2) dev_k / (sigma_eq * denom)
        let pref = {
            let c = tape.constant(1.5 * self.scales.stress_mpa * self.scales.rate_per_s);
            let t = tape.mul(dy, c);
            tape.div(t, denom)
        };
        let mut flow = [pref; 6];
        for k in 0..6 {
            let dir = tape.div(dev[k], s_eq);
            flow[k] = tape.mul(pref, dir);
        }
        Ok(flow)
    }
}

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamFile {
    format_version: u32,
    model: ModelNets,
}

/// Serializes the model to a self-describing JSON parameter file;
/// round-trips bit-exactly.
pub fn save_model(path: &std::path::Path, nets: &ModelNets) -> Result<()> {
    let file = ParamFile {
        format_version: FORMAT_VERSION,
        model: nets.clone(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Config(format!("serializing parameters: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelNets> {
    let text = std::fs::read_to_string(path)?;
    let file: ParamFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported parameter format version {} (expected {})",
            path.display(),
            file.format_version,
            FORMAT_VERSION
        )));
    }
    file.model.validate()?;
    Ok(file.model)
}
