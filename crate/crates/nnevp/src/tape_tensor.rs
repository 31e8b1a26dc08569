//! Voigt-tensor expressions recorded on the autodiff tape.
//!
//! The same conventions as [`crate::tensor`]: slots `(11, 22, 33, 23, 13,
//! 12)` holding tensor components, norms counting off-diagonals twice.
//!
//! Derivatives of a scalar with respect to the six Voigt slots double-count
//! the off-diagonal tensor entries; [`slot_gradient_to_tensor`] halves the
//! shear slots to recover tensor components.

use crate::autodiff::{Tape, Var};

/// Deviator of a stress expression: `t - tr(t)/3 * I` on the diagonal slots.
pub fn record_deviator(tape: &mut Tape, t: &[Var; 6]) -> [Var; 6] {
    let third = tape.constant(1.0 / 3.0);
    let s01 = tape.add(t[0], t[1]);
    let tr = tape.add(s01, t[2]);
    let mean = tape.mul(tr, third);
    let d0 = tape.sub(t[0], mean);
    let d1 = tape.sub(t[1], mean);
    let d2 = tape.sub(t[2], mean);
    [d0, d1, d2, t[3], t[4], t[5]]
}

/// Squared full-tensor Frobenius norm, off-diagonal slots twice.
pub fn record_norm_squared(tape: &mut Tape, t: &[Var; 6]) -> Var {
    let mut sum = tape.constant(0.0);
    for k in 0..3 {
        let sq = tape.mul(t[k], t[k]);
        sum = tape.add(sum, sq);
    }
    for k in 3..6 {
        let sq = tape.mul(t[k], t[k]);
        sum = tape.add_scaled(sum, 2.0, sq);
    }
    sum
}

/// Von Mises equivalent stress `sqrt(3/2 * ||dev||^2)` together with the
/// deviator slots it was built from.
pub fn record_von_mises(tape: &mut Tape, sigma: &[Var; 6]) -> (Var, [Var; 6]) {
    let dev = record_deviator(tape, sigma);
    let nsq = record_norm_squared(tape, &dev);
    let c = tape.constant(1.5);
    let scaled = tape.mul(nsq, c);
    (tape.sqrt(scaled), dev)
}

/// Converts slot derivatives of a scalar into tensor components by halving
/// the shear slots.
pub fn slot_gradient_to_tensor(g: [f64; 6]) -> [f64; 6] {
    [g[0], g[1], g[2], g[3] / 2.0, g[4] / 2.0, g[5] / 2.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SymTensor3;
    use approx::assert_relative_eq;

    #[test]
    fn tape_von_mises_matches_plain() {
        let t = SymTensor3::new([120.0, -30.0, 4.0, 7.0, -2.5, 11.0]);
        let mut tape = Tape::new();
        let vars: Vec<Var> = t.components().iter().map(|&c| tape.input(c)).collect();
        let sigma: [Var; 6] = vars.clone().try_into().unwrap();
        let (vm, dev) = record_von_mises(&mut tape, &sigma);
        assert_relative_eq!(tape.value(vm), t.von_mises(), max_relative = 1e-14);
        let plain_dev = t.deviator();
        for k in 0..6 {
            assert_relative_eq!(
                tape.value(dev[k]),
                plain_dev.component(k),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn von_mises_slot_gradient_recovers_flow_direction() {
        // d(sigma_eq)/d(sigma) = 3/2 * dev / sigma_eq in tensor components.
        let t = SymTensor3::new([80.0, 10.0, -5.0, 6.0, 0.0, -3.0]);
        let mut tape = Tape::new();
        let vars: Vec<Var> = t.components().iter().map(|&c| tape.input(c)).collect();
        let sigma: [Var; 6] = vars.clone().try_into().unwrap();
        let (vm, _) = record_von_mises(&mut tape, &sigma);
        let g = tape.grad(vm, &vars).unwrap();
        let g = slot_gradient_to_tensor(g.try_into().unwrap());
        let dev = t.deviator();
        let vm_val = t.von_mises();
        for k in 0..6 {
            assert_relative_eq!(
                g[k],
                1.5 * dev.component(k) / vm_val,
                max_relative = 1e-12,
                epsilon = 1e-14
            );
        }
    }
}
