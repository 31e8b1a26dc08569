//! Reverse-mode automatic differentiation over a scalar operation tape.
//!
//! A [`Tape`] records elementary operations in topological order; a single
//! reverse sweep yields the derivative of one scalar output with respect to
//! any set of recorded nodes. Branching (e.g. the zero-stress cutoff in the
//! flow rule) happens at record time on current values, so the tape itself
//! is comparison-free.
//!
//! Non-smooth points use fixed subgradients: `relu` has derivative 0 at
//! exactly 0, and `abs` has derivative `sign(x)` with `sign(0) = 0`.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful on the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Differentiable leaf (parameter or solver unknown).
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Tanh(u32),
    Relu(u32),
    Sqrt(u32),
    Abs(u32),
    /// Power with a constant exponent.
    Pow(u32, f64),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Recorded computation graph. One tape per training step; grown forward,
/// swept backward, then discarded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.index()].value
    }

    /// Drops all nodes but keeps the allocation; previously issued `Var`
    /// handles become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        let idx = self.nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { op, value });
        Var(idx as u32)
    }

    /// Registers a differentiable leaf.
    pub fn input(&mut self, value: f64) -> Var {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Op::Neg(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).ln();
        self.push(Op::Ln(a.0), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).tanh();
        self.push(Op::Tanh(a.0), v)
    }

    /// `max(x, 0)` with subgradient 0 at x = 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).max(0.0);
        self.push(Op::Relu(a.0), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).sqrt();
        self.push(Op::Sqrt(a.0), v)
    }

    /// `|x|` with derivative `sign(x)` and `sign(0) = 0`.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).abs();
        self.push(Op::Abs(a.0), v)
    }

    /// `x^n` for a constant exponent `n`.
    pub fn powf(&mut self, a: Var, n: f64) -> Var {
        let v = self.value(a).powf(n);
        self.push(Op::Pow(a.0, n), v)
    }

    /// `a + c*b` for a constant `c`.
    pub fn add_scaled(&mut self, a: Var, c: f64, b: Var) -> Var {
        let cb = self.constant(c);
        let t = self.mul(cb, b);
        self.add(a, t)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.index() >= self.nodes.len() {
            return Err(Error::DanglingNode(v.index()));
        }
        Ok(())
    }

    /// One reverse sweep over `[lo, seed]`; `adj` is indexed by
    /// `node - lo` and must already be zeroed with `adj[seed - lo] = 1`.
    ///
    /// Any path from `seed` into a node `v >= lo` only traverses nodes with
    /// indices in `(v, seed]`, so restricting the sweep to this window still
    /// produces complete adjoints for every node at or above `lo`.
    fn sweep(&self, seed: usize, lo: usize, adj: &mut [f64]) {
        let bump = |adj: &mut [f64], idx: u32, amount: f64| {
            let i = idx as usize;
            if i >= lo {
                adj[i - lo] += amount;
            }
        };
        for i in (lo..=seed).rev() {
            let g = adj[i - lo];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    bump(adj, a, g);
                    bump(adj, b, g);
                }
                Op::Sub(a, b) => {
                    bump(adj, a, g);
                    bump(adj, b, -g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a as usize].value, self.nodes[b as usize].value);
                    bump(adj, a, g * vb);
                    bump(adj, b, g * va);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.nodes[a as usize].value, self.nodes[b as usize].value);
                    bump(adj, a, g / vb);
                    bump(adj, b, -g * va / (vb * vb));
                }
                Op::Neg(a) => bump(adj, a, -g),
                Op::Exp(a) => bump(adj, a, g * node.value),
                Op::Ln(a) => bump(adj, a, g / self.nodes[a as usize].value),
                Op::Tanh(a) => bump(adj, a, g * (1.0 - node.value * node.value)),
                Op::Relu(a) => {
                    if self.nodes[a as usize].value > 0.0 {
                        bump(adj, a, g);
                    }
                }
                Op::Sqrt(a) => bump(adj, a, g / (2.0 * node.value)),
                Op::Abs(a) => {
                    let va = self.nodes[a as usize].value;
                    let sign = if va > 0.0 {
                        1.0
                    } else if va < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    bump(adj, a, g * sign);
                }
                Op::Pow(a, n) => {
                    let va = self.nodes[a as usize].value;
                    bump(adj, a, g * n * va.powf(n - 1.0));
                }
            }
        }
    }

    /// Derivatives of `output` with respect to each of `inputs`, by one
    /// reverse sweep. The tape is unchanged; inputs the output does not
    /// depend on get derivative 0.
    pub fn grad(&self, output: Var, inputs: &[Var]) -> Result<Vec<f64>> {
        self.check(output)?;
        for v in inputs {
            self.check(*v)?;
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let lo = inputs.iter().map(|v| v.index()).min().unwrap();
        let seed = output.index();
        if seed < lo {
            return Ok(vec![0.0; inputs.len()]);
        }
        let mut adj = vec![0.0; seed - lo + 1];
        adj[seed - lo] = 1.0;
        self.sweep(seed, lo, &mut adj);
        Ok(inputs
            .iter()
            .map(|v| {
                if v.index() <= seed {
                    adj[v.index() - lo]
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Jacobian with rows `grad(outputs[i], inputs)`.
    pub fn jacobian(&self, outputs: &[Var], inputs: &[Var]) -> Result<Vec<Vec<f64>>> {
        for v in outputs.iter().chain(inputs) {
            self.check(*v)?;
        }
        if inputs.is_empty() {
            return Ok(vec![Vec::new(); outputs.len()]);
        }
        let lo = inputs.iter().map(|v| v.index()).min().unwrap();
        let hi = outputs.iter().map(|v| v.index()).max().unwrap_or(0);
        let width = if hi >= lo { hi - lo + 1 } else { 0 };
        let mut adj = vec![0.0; width];
        let mut rows = Vec::with_capacity(outputs.len());
        for out in outputs {
            let seed = out.index();
            if seed < lo {
                rows.push(vec![0.0; inputs.len()]);
                continue;
            }
            adj[..=seed - lo].fill(0.0);
            adj[seed - lo] = 1.0;
            self.sweep(seed, lo, &mut adj);
            rows.push(
                inputs
                    .iter()
                    .map(|v| {
                        if v.index() <= seed {
                            adj[v.index() - lo]
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn grad_square() {
        let mut tape = Tape::new();
        let x = tape.input(3.0);
        let y = tape.mul(x, x);
        assert_eq!(tape.grad(y, &[x]).unwrap(), vec![6.0]);

        let yp = tape.powf(x, 2.0);
        assert_relative_eq!(tape.grad(yp, &[x]).unwrap()[0], 6.0, max_relative = 1e-14);
    }

    #[test]
    fn grad_softplus_at_zero() {
        // f(x) = (1/beta) ln(1 + e^x), beta = 1.
        let mut tape = Tape::new();
        let x = tape.input(0.0);
        let one = tape.constant(1.0);
        let ex = tape.exp(x);
        let s = tape.add(one, ex);
        let y = tape.ln(s);
        assert_relative_eq!(tape.grad(y, &[x]).unwrap()[0], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn grad_product_with_tanh() {
        let mut tape = Tape::new();
        let x = tape.input(2.0);
        let y = tape.input(0.0);
        let t = tape.tanh(y);
        let f = tape.mul(x, t);
        let g = tape.grad(f, &[x, y]).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(0.0);
        let y = tape.relu(x);
        assert_eq!(tape.grad(y, &[x]).unwrap()[0], 0.0);
        let a = tape.input(0.0);
        let b = tape.abs(a);
        assert_eq!(tape.grad(b, &[a]).unwrap()[0], 0.0);
    }

    #[test]
    fn jacobian_identity_and_linear_map() {
        let mut tape = Tape::new();
        let xs: Vec<Var> = (0..3).map(|i| tape.input(i as f64 + 1.0)).collect();
        let jac = tape.jacobian(&xs, &xs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(jac[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }

        // Random 4x4 linear map must be recovered exactly.
        let a = [
            [0.3, -1.2, 2.0, 0.7],
            [1.5, 0.1, -0.4, 2.2],
            [-0.8, 0.9, 1.1, -1.7],
            [2.4, -0.5, 0.6, 0.2],
        ];
        let mut tape = Tape::new();
        let xs: Vec<Var> = (0..4).map(|i| tape.input(0.25 * i as f64 - 0.4)).collect();
        let mut outs = Vec::new();
        for row in &a {
            let mut acc = tape.constant(0.0);
            for (j, &aij) in row.iter().enumerate() {
                acc = tape.add_scaled(acc, aij, xs[j]);
            }
            outs.push(acc);
        }
        let jac = tape.jacobian(&outs, &xs).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(jac[i][j], a[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dangling_node_rejected() {
        let tape2 = {
            let mut t = Tape::new();
            t.input(1.0);
            t
        };
        let mut tape = Tape::new();
        let x = tape.input(1.0);
        let y = tape.mul(x, x);
        let foreign = Var(55);
        assert!(matches!(
            tape2.grad(y, &[x]),
            Err(Error::DanglingNode(_))
        ));
        assert!(matches!(tape.grad(foreign, &[x]), Err(Error::DanglingNode(55))));
    }

    #[test]
    fn independent_input_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(1.0);
        let y = tape.mul(x, x);
        let z = tape.input(5.0);
        let g = tape.grad(y, &[x, z]).unwrap();
        assert_eq!(g, vec![2.0, 0.0]);
    }

    /// Finite-difference oracle for each primitive away from kinks.
    #[test]
    fn primitives_match_central_differences() {
        type Record = fn(&mut Tape, Var, Var) -> Var;
        let unary: Vec<(&str, Record)> = vec![
            ("exp", |t, a, _| t.exp(a)),
            ("ln", |t, a, _| t.ln(a)),
            ("tanh", |t, a, _| t.tanh(a)),
            ("relu", |t, a, _| t.relu(a)),
            ("sqrt", |t, a, _| t.sqrt(a)),
            ("abs", |t, a, _| t.abs(a)),
            ("neg", |t, a, _| t.neg(a)),
            ("pow2.7", |t, a, _| t.powf(a, 2.7)),
        ];
        let binary: Vec<(&str, Record)> = vec![
            ("add", |t, a, b| t.add(a, b)),
            ("sub", |t, a, b| t.sub(a, b)),
            ("mul", |t, a, b| t.mul(a, b)),
            ("div", |t, a, b| t.div(a, b)),
        ];

        let mut state = 0x5851f42d4c957f2du64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.2 + 2.3 * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };

        let eval = |f: Record, x: f64, y: f64| {
            let mut t = Tape::new();
            let a = t.input(x);
            let b = t.input(y);
            let o = f(&mut t, a, b);
            t.value(o)
        };

        for (name, f) in unary.iter().chain(binary.iter()) {
            for _ in 0..10 {
                let (x, y) = (next(), next());
                let mut t = Tape::new();
                let a = t.input(x);
                let b = t.input(y);
                let o = f(&mut t, a, b);
                let g = t.grad(o, &[a, b]).unwrap();
                let hx = 1e-6 * x.abs().max(1.0);
                let fd_a = (eval(*f, x + hx, y) - eval(*f, x - hx, y)) / (2.0 * hx);
                let hy = 1e-6 * y.abs().max(1.0);
                let fd_b = (eval(*f, x, y + hy) - eval(*f, x, y - hy)) / (2.0 * hy);
                let scale_a = fd_a.abs().max(1e-12);
                let scale_b = fd_b.abs().max(1e-12);
                assert!(
                    (g[0] - fd_a).abs() / scale_a < 1e-6,
                    "{name}: d/da mismatch at ({x}, {y}): {} vs {}",
                    g[0],
                    fd_a
                );
                assert!(
                    (g[1] - fd_b).abs() / scale_b < 1e-6,
                    "{name}: d/db mismatch at ({x}, {y}): {} vs {}",
                    g[1],
                    fd_b
                );
            }
        }
    }

    #[test]
    fn gradient_is_linear_over_the_tape() {
        // Gradient of a sum of recorded graphs equals the sum of gradients.
        let mut tape = Tape::new();
        let x = tape.input(0.8);
        let mut partial_grads = 0.0;
        let mut total = tape.constant(0.0);
        for k in 1..=5 {
            let c = tape.constant(k as f64);
            let xc = tape.mul(x, c);
            let g = tape.tanh(xc);
            partial_grads += tape.grad(g, &[x]).unwrap()[0];
            total = tape.add(total, g);
        }
        let g_total = tape.grad(total, &[x]).unwrap()[0];
        assert_relative_eq!(g_total, partial_grads, max_relative = 1e-12);
    }
}
