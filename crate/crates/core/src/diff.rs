//! Derivative helpers.
//!
//! Forward-mode routines ([`jacobian`], [`directional`], [`second_directional`])
//! are the primary path. The `central_*` functions are independent
//! finite-difference oracles used for cross-checking only.

use nalgebra::{DMatrix, DVector};

use crate::dual::Dual;

pub type Dual64 = Dual<f64>;
pub type HyperDual64 = Dual<Dual<f64>>;

/// Seeds `x + t·dir` as dual numbers.
pub fn seed(x: &[f64], dir: &[f64]) -> Vec<Dual64> {
    x.iter().zip(dir).map(|(&a, &b)| Dual::new(a, b)).collect()
}

/// Seeds `x + t₁·d1 + t₂·d2` as hyper-dual numbers (inner part `t₁`, outer part `t₂`).
pub fn seed2(x: &[f64], d1: &[f64], d2: &[f64]) -> Vec<HyperDual64> {
    x.iter()
        .zip(d1)
        .zip(d2)
        .map(|((&a, &b), &c)| Dual::new(Dual::new(a, b), Dual::new(c, 0.0)))
        .collect()
}

/// Unit vector of length `n`.
pub fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// `d/dt f(x + t·dir)` at `t = 0` for a vector-valued `f`.
pub fn directional(
    x: &[f64],
    dir: &[f64],
    f: impl Fn(&[Dual64]) -> Vec<Dual64>,
) -> Vec<f64> {
    f(&seed(x, dir)).iter().map(|d| d.eps).collect()
}

/// Jacobian `∂f/∂x` (rows = outputs) by one forward pass per input.
pub fn jacobian(x: &[f64], f: impl Fn(&[Dual64]) -> Vec<Dual64>) -> DMatrix<f64> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut m = 0;
    for i in 0..n {
        let col = directional(x, &unit(n, i), &f);
        m = col.len();
        cols.push(col);
    }
    DMatrix::from_fn(m, n, |r, c| cols[c][r])
}

/// Mixed second derivative `∂²/∂t₁∂t₂ f(x + t₁·d1 + t₂·d2)` at zero, for scalar `f`.
pub fn second_directional(
    x: &[f64],
    d1: &[f64],
    d2: &[f64],
    f: impl Fn(&[HyperDual64]) -> HyperDual64,
) -> f64 {
    f(&seed2(x, d1, d2)).eps.eps
}

/// Vector-valued variant of [`second_directional`].
pub fn second_directional_vec(
    x: &[f64],
    d1: &[f64],
    d2: &[f64],
    f: impl Fn(&[HyperDual64]) -> Vec<HyperDual64>,
) -> Vec<f64> {
    f(&seed2(x, d1, d2)).iter().map(|v| v.eps.eps).collect()
}

/// Finite-difference step used by the oracles: `1e-6 · max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
    let mut xp = x.to_vec();
    DVector::from_fn(x.len(), |i, _| {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        (fp - fm) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector function (rows = outputs).
pub fn central_jacobian(x: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map(Vec::len).unwrap_or(0);
    DMatrix::from_fn(m, n, |r, c| cols[c][r])
}

/// Central-difference Hessian of a scalar function (four-point stencil).
///
/// Second differences use the larger step `1e-4 · max(1, |x|)`; at `1e-6` the
/// rounding error would swamp the result.
pub fn central_hessian(x: &[f64], f: impl Fn(&[f64]) -> f64) -> DMatrix<f64> {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (si, sj) = (1e-4 * x[i].abs().max(1.0), 1e-4 * x[j].abs().max(1.0));
            let mut eval = |a: f64, b: f64| {
                xp[i] += a;
                xp[j] += b;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(si, sj) - eval(si, -sj) - eval(-si, sj) + eval(-si, -sj)) / (4.0 * si * sj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Relative discrepancy `|a − b| / max(|a|, |b|, 1)`, the convention used by
/// every derivative cross-check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest [`rel_err`] over matching entries.
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use num_traits::Float;

    fn f<S: Scalar>(x: &[S]) -> Vec<S> {
        vec![x[0] * x[1].sin(), x[0].powi(2) + x[1].exp() * x[0]]
    }

    #[test]
    fn forward_jacobian_matches_central_differences() {
        let x = [0.7, -1.2];
        let j = jacobian(&x, f);
        let fd = central_jacobian(&x, f);
        assert!(max_rel_err(&j, &fd) < 1e-8);
    }

    #[test]
    fn hyper_dual_hessian_entry() {
        // g = x0^2 x1^3, ∂²g/∂x0∂x1 = 6 x0 x1^2
        let x = [1.5, 0.5];
        let v = second_directional(&x, &[1.0, 0.0], &[0.0, 1.0], |z| z[0] * z[0] * z[1].powi(3));
        assert!((v - 6.0 * 1.5 * 0.25).abs() < 1e-14);
        let h = central_hessian(&x, |z| z[0] * z[0] * z[1].powi(3));
        assert!(rel_err(h[(0, 1)], v) < 1e-6);
    }
}
