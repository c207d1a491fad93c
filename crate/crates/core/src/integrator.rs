//! Time stepping, drift control and energy diagnostics.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::assembler::{AssemblyOptions, Gains, CONS_TOL, SOLVE_TOL};
use crate::dynamics::{self, ConstrainedDynamics, SolveOptions, StateSolution};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classical RK4 with the accelerations solved at every stage.
    #[default]
    #[serde(alias = "rk4")]
    ExplicitRk4,
    /// Implicit midpoint rule, Newton iteration with a difference Jacobian.
    ImplicitMidpoint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    None,
    /// Project back onto the constraint surface after every step.
    #[default]
    PostStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub dt: f64,
    pub method: Method,
    pub projection: Projection,
    pub baumgarte_alpha: f64,
    pub baumgarte_beta: f64,
    pub cons_tol: f64,
    pub solve_tol: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            dt: 1e-3,
            method: Method::ExplicitRk4,
            projection: Projection::PostStep,
            baumgarte_alpha: 0.0,
            baumgarte_beta: 0.0,
            cons_tol: CONS_TOL,
            solve_tol: SOLVE_TOL,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.baumgarte_alpha >= 0.0 && self.baumgarte_beta >= 0.0) {
            return Err(Error::Config("Baumgarte gains must be nonnegative".into()));
        }
        if !(self.cons_tol > 0.0 && self.solve_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn solve_options(&self, check: bool) -> SolveOptions {
        SolveOptions {
            assembly: AssemblyOptions {
                cons_tol: check.then_some(self.cons_tol),
                gains: Gains { alpha: self.baumgarte_alpha, beta: self.baumgarte_beta },
            },
            solve_tol: self.solve_tol,
        }
    }
}

/// Recorded solution: one entry per step in every series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub position_names: Vec<String>,
    pub velocity_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<(Vec<f64>, Vec<f64>)>,
    pub qdds: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// `max |R_K|` over all kinematic rows.
    pub kin_residual: Vec<f64>,
    /// `max |R_K|` over the velocity-level rows only.
    pub velocity_residual: Vec<f64>,
    /// `λ·(R_V v)`
    pub power: Vec<f64>,
    /// Model monitor values, if the model defines one.
    pub monitor: Vec<f64>,
    pub monitor_name: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn multipliers(&self) -> usize {
        self.lambdas.first().map(Vec::len).unwrap_or(0)
    }

    /// Column names in serialization order.
    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["t".to_string()];
        c.extend(self.position_names.iter().cloned());
        c.extend(self.velocity_names.iter().cloned());
        c.extend((0..self.multipliers()).map(|i| format!("lambda_{i}")));
        c.extend(["E", "max_abs_R_K", "power"].map(String::from));
        c
    }

    /// Row `k` in [`columns`](Self::columns) order.
    pub fn row(&self, k: usize) -> Vec<f64> {
        let (q, v) = &self.states[k];
        let mut r = vec![self.times[k]];
        r.extend_from_slice(q);
        r.extend_from_slice(v);
        r.extend_from_slice(&self.lambdas[k]);
        r.extend([self.energy[k], self.kin_residual[k], self.power[k]]);
        r
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns().join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            for (i, x) in self.row(k).iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&fmt_float(*x));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// `{meta, columns, rows}` with every number at 17 significant digits.
    pub fn to_json(&self, meta: &serde_json::Value) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            meta: &'a serde_json::Value,
            columns: Vec<String>,
            rows: Vec<Vec<Box<RawValue>>>,
        }
        let rows = (0..self.len())
            .map(|k| {
                self.row(k)
                    .into_iter()
                    .map(|x| {
                        let s = if x.is_finite() { fmt_float(x) } else { "null".into() };
                        RawValue::from_string(s).map_err(|e| Error::Io(e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = Doc { meta, columns: self.columns(), rows };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))
    }

    /// Index of a named position or velocity column in the state.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(i) = self.position_names.iter().position(|n| n == name) {
            return Some(self.states.iter().map(|(q, _)| q[i]).collect());
        }
        let i = self.velocity_names.iter().position(|n| n == name)?;
        Some(self.states.iter().map(|(_, v)| v[i]).collect())
    }
}

/// Shortest exact form with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x:.16e}").expect("writing to a string");
    s
}

/// Checks a proposed initial state: domain guard, velocity-level rows within
/// `cons_tol`, position rows, and solvability of the acceleration system.
pub fn check_initial<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    opts: &IntegratorOptions,
) -> Result<StateSolution> {
    opts.validate()?;
    sys.domain_check(q, v)?;
    if let Some((c, _)) = sys.position_constraints(q) {
        let bad: Vec<(usize, f64)> = c
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() > opts.cons_tol)
            .map(|(i, &x)| (i, x))
            .collect();
        if !bad.is_empty() {
            return Err(Error::InconsistentState { rows: bad });
        }
    }
    let vc = sys.velocity_constraints(q, v);
    let bad: Vec<(usize, f64)> = vc
        .rows
        .iter()
        .zip(vc.value.iter())
        .filter(|(_, x)| !(x.abs() <= opts.cons_tol))
        .map(|(&i, &x)| (i, x))
        .collect();
    if !bad.is_empty() {
        return Err(Error::InconsistentState { rows: bad });
    }
    dynamics::solve_state(sys, q, v, &opts.solve_options(true))
}

const PROJECTION_ITERS: usize = 5;

/// Mass-metric weights used by the projection, with massless directions
/// given the mean positive diagonal entry.
fn projection_metric(mass: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mass.nrows();
    let diag: Vec<f64> = (0..n).map(|i| mass[(i, i)]).collect();
    let pos: Vec<f64> = diag.iter().copied().filter(|&d| d > 1e-12).collect();
    let fill = if pos.is_empty() { 1.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 };
    let mut w = mass.clone();
    for i in 0..n {
        if diag[i] <= 1e-12 {
            w.row_mut(i).fill(0.0);
            w.column_mut(i).fill(0.0);
            w[(i, i)] = fill;
        }
    }
    w
}

/// `Δx = −W⁻¹Jᵀ (J W⁻¹ Jᵀ)⁺ r`: the smallest correction in the `W` norm that
/// cancels the linearized residual.
fn weighted_correction(w: &DMatrix<f64>, j: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let winv = w
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| w.clone().try_inverse())
        .ok_or_else(|| Error::Projection { defect: r.amax() })?;
    let s = j * &winv * j.transpose();
    let (y, _) = crate::assembler::least_squares(&s, r)?;
    Ok(-(winv * j.transpose() * y))
}

/// Newton projection onto the constraint surface: positions onto the
/// position rows (if any), then velocities onto the velocity rows, each as
/// the minimal correction in the mass metric. At most five iterations each.
pub fn project_poststep<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    cons_tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut q = q.to_vec();
    let mut v = v.to_vec();
    let w = projection_metric(&sys.mass(&q, &v)?);
    let target = 1e-3 * cons_tol;

    if sys.position_constraints(&q).is_some() && sys.position_dim() == sys.velocity_dim() {
        for it in 0..=PROJECTION_ITERS {
            let (c, jac) = sys.position_constraints(&q).expect("checked above");
            if c.amax() <= target {
                break;
            }
            if it == PROJECTION_ITERS {
                if c.amax() > cons_tol {
                    return Err(Error::Projection { defect: c.amax() });
                }
                break;
            }
            let dq = weighted_correction(&w, &jac, &c)?;
            for (x, d) in q.iter_mut().zip(dq.iter()) {
                *x += d;
            }
        }
    }

    for it in 0..=PROJECTION_ITERS {
        let vc = sys.velocity_constraints(&q, &v);
        if vc.rows.is_empty() || vc.max_abs() <= target {
            break;
        }
        if it == PROJECTION_ITERS {
            if vc.max_abs() > cons_tol {
                return Err(Error::Projection { defect: vc.max_abs() });
            }
            break;
        }
        let dv = weighted_correction(&w, &vc.jacobian, &vc.value)?;
        for (x, d) in v.iter_mut().zip(dv.iter()) {
            *x += d;
        }
    }
    Ok((q, v))
}

/// Evaluated right-hand side: `(q̇, v̇)` plus the state solution behind it.
fn rhs<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, StateSolution)> {
    let sol = dynamics::solve_state(sys, q, v, opts)?;
    let qdot = sys.position_rate(q, &sol.v);
    Ok((qdot, sol))
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

fn rk4_step<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    h: f64,
    k1: (Vec<f64>, Vec<f64>),
    opts: &SolveOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let stage = |q: &[f64], v: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (qd, sol) = rhs(sys, q, v, opts)?;
        Ok((qd, sol.vdot.as_slice().to_vec()))
    };
    let (kq1, kv1) = k1;
    let (kq2, kv2) = stage(&axpy(q, 0.5 * h, &kq1), &axpy(v, 0.5 * h, &kv1))?;
    let (kq3, kv3) = stage(&axpy(q, 0.5 * h, &kq2), &axpy(v, 0.5 * h, &kv2))?;
    let (kq4, kv4) = stage(&axpy(q, h, &kq3), &axpy(v, h, &kv3))?;
    let comb = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..y.len()).map(|i| y[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
    };
    Ok((comb(q, &kq1, &kq2, &kq3, &kq4), comb(v, &kv1, &kv2, &kv3, &kv4)))
}

const NEWTON_ITERS: usize = 25;

fn midpoint_step<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    h: f64,
    k1: (Vec<f64>, Vec<f64>),
    opts: &SolveOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = q.len();
    let y: Vec<f64> = q.iter().chain(v).copied().collect();
    let f = |z: &[f64]| -> Result<Vec<f64>> {
        let (qd, sol) = rhs(sys, &z[..p], &z[p..], opts)?;
        Ok(qd.into_iter().chain(sol.vdot.iter().copied()).collect())
    };
    let g = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let mid: Vec<f64> = y.iter().zip(z.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = f(&mid)?;
        Ok(DVector::from_iterator(y.len(), (0..y.len()).map(|i| z[i] - y[i] - h * fm[i])))
    };
    let f0: Vec<f64> = k1.0.into_iter().chain(k1.1).collect();
    let mut z = DVector::from_iterator(y.len(), y.iter().zip(&f0).map(|(a, b)| a + h * b));
    let scale = 1.0 + DVector::from_column_slice(&y).amax();
    for _ in 0..NEWTON_ITERS {
        let gz = g(&z)?;
        if gz.amax() <= 1e-13 * scale {
            return Ok((z.as_slice()[..p].to_vec(), z.as_slice()[p..].to_vec()));
        }
        let mut jac = DMatrix::zeros(y.len(), y.len());
        for j in 0..y.len() {
            let e = 1e-7 * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += e;
            let mut zm = z.clone();
            zm[j] -= e;
            jac.column_mut(j).copy_from(&((g(&zp)? - g(&zm)?) / (2.0 * e)));
        }
        let step = jac
            .lu()
            .solve(&(-&gz))
            .ok_or_else(|| Error::Derivative("singular implicit-midpoint Jacobian".into()))?;
        z += &step;
        if step.amax() <= 1e-15 * scale {
            return Ok((z.as_slice()[..p].to_vec(), z.as_slice()[p..].to_vec()));
        }
    }
    let defect = g(&z)?.amax();
    if defect <= 1e-9 * scale {
        Ok((z.as_slice()[..p].to_vec(), z.as_slice()[p..].to_vec()))
    } else {
        Err(Error::InconsistentDynamics { residual: defect, tolerance: 1e-9 * scale })
    }
}

fn step_error(time: f64, e: Error) -> Error {
    match e {
        Error::Step { .. } => e,
        other => Error::Step { time, source: Box::new(other) },
    }
}

/// Integrates from `(q0, v0)` over `[0, t_end]`.
///
/// The initial state must pass [`check_initial`]. Each step starts from a
/// state on the velocity-level constraint surface (within `cons_tol`) and
/// every recorded state satisfies those rows to `10·cons_tol`.
pub fn integrate<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q0: &[f64],
    v0: &[f64],
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
    }
    let first = check_initial(sys, q0, v0, opts)?;
    let checked = opts.solve_options(true);
    let free = opts.solve_options(false);
    let steps = ((t_end / opts.dt) - 1e-9).ceil().max(1.0) as usize;

    let mut traj = Trajectory {
        position_names: sys.position_names(),
        velocity_names: sys.velocity_names(),
        ..Trajectory::default()
    };
    let mut q = q0.to_vec();
    let mut sol = first;
    let mut t = 0.0;
    for k in 0..=steps {
        record(sys, &mut traj, t, &q, &sol).map_err(|e| step_error(t, e))?;
        if k == steps {
            break;
        }
        let t_next = if k + 1 == steps { t_end } else { (k + 1) as f64 * opts.dt };
        let h = t_next - t;
        let v = sol.v.clone();
        let k1 = (sys.position_rate(&q, &v), sol.vdot.as_slice().to_vec());
        let advanced = match opts.method {
            Method::ExplicitRk4 => rk4_step(sys, &q, &v, h, k1, &free),
            Method::ImplicitMidpoint => midpoint_step(sys, &q, &v, h, k1, &free),
        };
        let (mut qn, mut vn) = advanced.map_err(|e| step_error(t, e))?;
        if opts.projection == Projection::PostStep {
            (qn, vn) = project_poststep(sys, &qn, &vn, opts.cons_tol).map_err(|e| step_error(t_next, e))?;
        }
        let drift = sys.velocity_constraints(&qn, &vn).max_abs();
        if drift > 10.0 * opts.cons_tol {
            return Err(step_error(
                t_next,
                Error::InconsistentState {
                    rows: sys
                        .velocity_constraints(&qn, &vn)
                        .rows
                        .into_iter()
                        .map(|i| (i, drift))
                        .collect(),
                },
            ));
        }
        // The checked solve enforces cons_tol at step starts; a projected
        // state always passes, an unprojected one may carry up to 10·cons_tol.
        let opts_here = if drift <= opts.cons_tol { &checked } else { &free };
        sol = dynamics::solve_state(sys, &qn, &vn, opts_here).map_err(|e| step_error(t_next, e))?;
        q = qn;
        t = t_next;
    }
    fill_algebraic_accelerations(sys, &mut traj);
    Ok(traj)
}

fn record<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    traj: &mut Trajectory,
    t: f64,
    q: &[f64],
    sol: &StateSolution,
) -> Result<()> {
    let v = &sol.v;
    let vdot = sol.vdot.as_slice();
    traj.times.push(t);
    traj.states.push((q.to_vec(), v.clone()));
    traj.qdds.push(vdot.to_vec());
    traj.lambdas.push(sol.lambda.as_slice().to_vec());
    traj.energy.push(sys.energy(q, v));
    traj.kin_residual.push(dynamics::max_kinematic_residual(sys, q, v, vdot));
    traj.velocity_residual.push(sys.velocity_constraints(q, v).max_abs());
    traj.power.push(dynamics::constraint_power(sys, q, v, vdot, &sol.lambda)?);
    if let Some((name, value)) = sys.monitor(q, v) {
        traj.monitor_name.get_or_insert(name);
        traj.monitor.push(value);
    }
    Ok(())
}

/// Algebraic velocities are not integrated, so their recorded accelerations
/// are differences along the computed flow (one-sided at the ends).
fn fill_algebraic_accelerations<D: ConstrainedDynamics + ?Sized>(sys: &D, traj: &mut Trajectory) {
    let alg = sys.algebraic_velocities();
    let n = traj.len();
    if alg.is_empty() || n < 2 {
        return;
    }
    for &j in &alg {
        let x: Vec<f64> = traj.states.iter().map(|(_, v)| v[j]).collect();
        for k in 0..n {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == n - 1 => (n - 2, n - 1),
                k => (k - 1, k + 1),
            };
            traj.qdds[k][j] = (x[b] - x[a]) / (traj.times[b] - traj.times[a]);
        }
    }
}

/// Energy bookkeeping along a trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyAudit {
    /// Interior sample indices the rates refer to.
    pub indices: Vec<usize>,
    /// Centered-difference `dE/dt`.
    pub rate: Vec<f64>,
    /// Model-predicted rate, where the model supplies one.
    pub predicted: Option<Vec<f64>>,
    /// `λ·(R_V v)` at the same samples.
    pub power: Vec<f64>,
    pub max_abs_rate: f64,
    pub max_rate_minus_power: f64,
    pub max_rate_minus_predicted: Option<f64>,
    /// Largest single-step energy increase.
    pub max_increase: f64,
    pub energy_drift: f64,
}

/// Compares the centered-difference energy rate with the constraint power
/// and, if available, the model's closed-form prediction.
pub fn energy_audit<D: ConstrainedDynamics + ?Sized>(sys: &D, traj: &Trajectory) -> EnergyAudit {
    let n = traj.len();
    let mut audit = EnergyAudit::default();
    if n == 0 {
        return audit;
    }
    audit.energy_drift = traj.energy.iter().map(|e| (e - traj.energy[0]).abs()).fold(0.0, f64::max);
    audit.max_increase = traj.energy.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    if n < 3 {
        return audit;
    }
    let mut predicted = Vec::new();
    let mut has_prediction = true;
    for k in 1..n - 1 {
        let rate = (traj.energy[k + 1] - traj.energy[k - 1]) / (traj.times[k + 1] - traj.times[k - 1]);
        audit.indices.push(k);
        audit.rate.push(rate);
        audit.power.push(traj.power[k]);
        let (q, v) = &traj.states[k];
        match sys.energy_rate_oracle(q, v) {
            Some(p) => predicted.push(p),
            None => has_prediction = false,
        }
    }
    audit.max_abs_rate = audit.rate.iter().fold(0.0, |m, r| m.max(r.abs()));
    audit.max_rate_minus_power =
        audit.rate.iter().zip(&audit.power).fold(0.0, |m, (r, p)| m.max((r - p).abs()));
    if has_prediction {
        audit.max_rate_minus_predicted =
            Some(audit.rate.iter().zip(&predicted).fold(0.0, |m, (r, p)| m.max((r - p).abs())));
        audit.predicted = Some(predicted);
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use crate::system::{
        make_dalembert, Distribution, KinematicConstraintSet, KinematicResidual, Lagrangian,
        LagrangianSpec, NonholonomicSystem, VariationalConstraintSet, VariationalRows, Chart,
    };
    use crate::jet::JetPoint;

    struct Free2;
    impl Lagrangian for Free2 {
        fn dim(&self) -> usize {
            2
        }
        fn value<S: Scalar>(&self, _q: &[S], qd: &[S]) -> S {
            S::cst(0.5) * (qd[0] * qd[0] + qd[1] * qd[1])
        }
    }
    struct Nothing;
    impl Distribution for Nothing {
        fn dim(&self) -> usize {
            2
        }
        fn rows(&self) -> usize {
            0
        }
        fn matrix<S: Scalar>(&self, _q: &[S]) -> Vec<Vec<S>> {
            Vec::new()
        }
    }

    #[test]
    fn free_particle_coasts_in_a_straight_line() {
        let sys = make_dalembert(LagrangianSpec::automatic(Free2), Nothing).unwrap();
        let traj = integrate(&sys, &[0.0, 1.0], &[2.0, -1.0], 1.0, &IntegratorOptions::default()).unwrap();
        let (q, v) = traj.states.last().unwrap();
        assert!((q[0] - 2.0).abs() < 1e-12 && (q[1] - 0.0).abs() < 1e-12);
        assert_eq!(v, &vec![2.0, -1.0]);
        assert_eq!(traj.len(), 1001);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    /// Pendulum as a position-level row x² + y² − 1 = 0 with D'Alembert variations.
    struct Gravity;
    impl Lagrangian for Gravity {
        fn dim(&self) -> usize {
            2
        }
        fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
            S::cst(0.5) * (qd[0] * qd[0] + qd[1] * qd[1]) - q[1]
        }
    }
    struct Circle;
    impl KinematicResidual for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn row_orders(&self) -> Vec<usize> {
            vec![0]
        }
        fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
            let q = jet.q();
            vec![S::cst(0.5) * (q[0] * q[0] + q[1] * q[1] - S::one())]
        }
    }
    struct CircleNormal;
    impl VariationalRows for CircleNormal {
        fn dim(&self) -> usize {
            2
        }
        fn rows(&self) -> usize {
            1
        }
        fn order(&self) -> usize {
            0
        }
        fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 2, &[jet.q()[0], jet.q()[1]])
        }
    }

    fn pendulum() -> NonholonomicSystem<Gravity, Circle, CircleNormal> {
        NonholonomicSystem::new(
            LagrangianSpec::automatic(Gravity),
            KinematicConstraintSet::new(Circle).unwrap(),
            VariationalConstraintSet::new(CircleNormal),
            Chart::new(&["x", "y"], &["m", "m"]),
        )
        .unwrap()
    }

    #[test]
    fn holonomic_pendulum_keeps_energy_and_length() {
        let sys = pendulum();
        let (s, c) = (0.5f64.sin(), 0.5f64.cos());
        let traj = integrate(&sys, &[s, -c], &[0.0, 0.0], 5.0, &IntegratorOptions::default()).unwrap();
        let audit = energy_audit(&sys, &traj);
        assert!(audit.energy_drift < 1e-9, "drift {}", audit.energy_drift);
        for (q, _) in &traj.states {
            assert!((q[0].hypot(q[1]) - 1.0).abs() < 1e-10);
        }
        // Swings through the bottom to the mirrored height.
        let xmin = traj.states.iter().map(|(q, _)| q[0]).fold(f64::INFINITY, f64::min);
        assert!((xmin + s).abs() < 1e-6);
    }

    #[test]
    fn projection_restores_position_and_velocity_rows() {
        let sys = pendulum();
        let (q, v) = project_poststep(&sys, &[0.6, -0.81], &[1.0, 0.2], 1e-9).unwrap();
        assert!((q[0].hypot(q[1]) - 1.0).abs() < 1e-12);
        assert!((q[0] * v[0] + q[1] * v[1]).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_initial_state_names_rows() {
        let sys = pendulum();
        let err = check_initial(&sys, &[1.0, 0.0], &[1.0, 0.0], &IntegratorOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InconsistentState { ref rows } if rows[0].0 == 0));
    }

    #[test]
    fn csv_and_json_round_trip_digits() {
        let sys = make_dalembert(LagrangianSpec::automatic(Free2), Nothing).unwrap();
        let opts = IntegratorOptions { dt: 0.1, ..Default::default() };
        let traj = integrate(&sys, &[0.0, 0.0], &[1.0 / 3.0, 0.0], 0.3, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q0,q1,q0_dot,q1_dot,E,max_abs_R_K,power");
        let second: Vec<f64> = lines.nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(second[3], 1.0 / 3.0);
        let json = traj.to_json(&serde_json::json!({"model_id": "free"})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["rows"][1][3].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(v["columns"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn options_validation() {
        assert!(IntegratorOptions { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(IntegratorOptions { baumgarte_alpha: -1.0, ..Default::default() }.validate().is_err());
        let o: IntegratorOptions = toml::from_str("dt = 0.01\nmethod = \"implicit_midpoint\"").unwrap();
        assert_eq!(o.method, Method::ImplicitMidpoint);
        assert_eq!(o.projection, Projection::PostStep);
    }

    #[test]
    fn implicit_midpoint_conserves_pendulum_energy() {
        let sys = pendulum();
        let opts = IntegratorOptions { method: Method::ImplicitMidpoint, dt: 1e-2, ..Default::default() };
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let traj = integrate(&sys, &[s, -c], &[0.0, 0.0], 2.0, &opts).unwrap();
        assert!(energy_audit(&sys, &traj).energy_drift < 1e-5);
    }
}
