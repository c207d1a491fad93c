//! A common interface over flat and reduced systems, and the per-state solve
//! used by the integrator.
//!
//! State is a pair `(q, v)`: positions and velocities. For a flat system
//! `v = q̇`; for a reduced system `q` holds only the shape variables and `v`
//! is the Lie-algebra velocity followed by the shape velocities.
//!
//! Some models leave a velocity component without inertia and without any
//! acceleration-level row containing its derivative (the tire's `ε̇`). Such an
//! *algebraic velocity* is not integrated: it is recomputed at every state
//! from the stacked equations, jointly with the accelerations and multipliers.

use nalgebra::{DMatrix, DVector};

use crate::assembler::{self, AccelerationSystem, AssemblyOptions, SOLVE_TOL};
use crate::diff::{self, Dual64};
use crate::error::{Error, Result};
use crate::jet::JetPoint;
use crate::scalar::lift;
use crate::system::{KinematicResidual, Lagrangian, NonholonomicSystem, VariationalRows};

/// Velocity-level kinematic rows at a state.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityConstraints {
    /// Index of each row in the full kinematic row list.
    pub rows: Vec<usize>,
    pub value: DVector<f64>,
    /// `∂value/∂v`
    pub jacobian: DMatrix<f64>,
}

impl VelocityConstraints {
    pub fn max_abs(&self) -> f64 {
        self.value.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// What the integrator, projection and diagnostics need from a system.
pub trait ConstrainedDynamics: Send + Sync {
    fn position_names(&self) -> Vec<String>;
    fn velocity_names(&self) -> Vec<String>;

    fn position_dim(&self) -> usize {
        self.position_names().len()
    }

    fn velocity_dim(&self) -> usize {
        self.velocity_names().len()
    }

    /// `dq/dt` given the velocity.
    fn position_rate(&self, q: &[f64], v: &[f64]) -> Vec<f64>;

    /// Order of the variational rows (`0`, `1` or `2`).
    fn variational_order(&self) -> usize;

    /// Number of variational rows (multipliers).
    fn multipliers(&self) -> usize;

    fn row_names(&self) -> Vec<String>;

    /// Accelerations-and-multipliers system; `vdot` is the guess used by
    /// second-order variational rows.
    fn assemble(
        &self,
        q: &[f64],
        v: &[f64],
        vdot: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) -> Result<AccelerationSystem>;

    /// Every kinematic row evaluated on `(q, v, v̇)`.
    fn kinematic_residual(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Vec<f64>;

    /// Rows that constrain the velocity directly (position rows in their
    /// differentiated form).
    fn velocity_constraints(&self, q: &[f64], v: &[f64]) -> VelocityConstraints;

    /// Position-level rows `C(q)` and `∂C/∂q`, if any.
    fn position_constraints(&self, _q: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }

    fn variational_matrix(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Result<DMatrix<f64>>;

    fn energy(&self, q: &[f64], v: &[f64]) -> f64;

    fn mass(&self, q: &[f64], v: &[f64]) -> Result<DMatrix<f64>>;

    fn domain_check(&self, _q: &[f64], _v: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Model-supplied closed-form `dE/dt`, if any.
    fn energy_rate_oracle(&self, _q: &[f64], _v: &[f64]) -> Option<f64> {
        None
    }

    /// Named quantity the model's theory requires to be nonnegative.
    fn monitor(&self, _q: &[f64], _v: &[f64]) -> Option<(String, f64)> {
        None
    }

    fn algebraic_velocities(&self) -> Vec<usize> {
        Vec::new()
    }
}

impl<L, K, V> ConstrainedDynamics for NonholonomicSystem<L, K, V>
where
    L: Lagrangian,
    K: KinematicResidual,
    V: VariationalRows,
{
    fn position_names(&self) -> Vec<String> {
        self.chart.names.clone()
    }

    fn velocity_names(&self) -> Vec<String> {
        self.chart.names.iter().map(|s| format!("{s}_dot")).collect()
    }

    fn position_rate(&self, _q: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn variational_order(&self) -> usize {
        self.variational.order()
    }

    fn multipliers(&self) -> usize {
        self.variational.rows()
    }

    fn row_names(&self) -> Vec<String> {
        self.kinematic.residual.row_names()
    }

    fn assemble(
        &self,
        q: &[f64],
        v: &[f64],
        vdot: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) -> Result<AccelerationSystem> {
        assembler::assemble_with_guess(self, q, v, vdot, opts)
    }

    fn kinematic_residual(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Vec<f64> {
        let jet = JetPoint::from_second_order(q, v, vdot).with_order(self.kinematic.order().max(1));
        self.kinematic.residual.residual(&jet)
    }

    fn velocity_constraints(&self, q: &[f64], v: &[f64]) -> VelocityConstraints {
        let n = q.len();
        let orders = self.kinematic.row_orders();
        let rows: Vec<usize> = (0..orders.len()).filter(|&i| orders[i] <= 1).collect();
        let top = self.kinematic.order().max(1);
        let mut layers = vec![q.to_vec(), v.to_vec()];
        layers.resize(top + 1, vec![0.0; n]);
        let k = &self.kinematic.residual;

        // Position rows: d/dt C = ∂C/∂q·v, linear in v with Jacobian ∂C/∂q.
        // Velocity rows: R(q, v) with Jacobian ∂R/∂v.
        let eval_seeded = |layer: usize, dir: &[f64]| -> Vec<f64> {
            let seeded: Vec<Vec<Dual64>> = layers
                .iter()
                .enumerate()
                .map(|(s, x)| if s == layer { diff::seed(x, dir) } else { lift(x) })
                .collect();
            k.residual(&JetPoint::new(seeded).expect("shared dimension"))
                .iter()
                .map(|d| d.eps)
                .collect()
        };
        let plain = k.residual(&JetPoint::new(layers.clone()).expect("shared dimension"));
        let has0 = rows.iter().any(|&i| orders[i] == 0);
        let rate = if has0 { eval_seeded(0, v) } else { Vec::new() };
        let mut jac_q = Vec::new();
        let mut jac_v = Vec::new();
        for i in 0..n {
            let e = diff::unit(n, i);
            if has0 {
                jac_q.push(eval_seeded(0, &e));
            }
            jac_v.push(eval_seeded(1, &e));
        }
        let value = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|&i| if orders[i] == 0 { rate[i] } else { plain[i] }),
        );
        let jacobian = DMatrix::from_fn(rows.len(), n, |a, b| {
            let i = rows[a];
            if orders[i] == 0 {
                jac_q[b][i]
            } else {
                jac_v[b][i]
            }
        });
        VelocityConstraints { rows, value, jacobian }
    }

    fn position_constraints(&self, q: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let orders = self.kinematic.row_orders();
        let rows: Vec<usize> = (0..orders.len()).filter(|&i| orders[i] == 0).collect();
        if rows.is_empty() {
            return None;
        }
        let n = q.len();
        let top = self.kinematic.order().max(1);
        let k = &self.kinematic.residual;
        let full = |x: &[Dual64]| {
            let mut layers = vec![x.to_vec()];
            layers.resize(top + 1, vec![Dual64::constant(0.0); n]);
            k.residual(&JetPoint::new(layers).expect("shared dimension"))
        };
        let jac = diff::jacobian(q, full);
        let mut layers = vec![q.to_vec()];
        layers.resize(top + 1, vec![0.0; n]);
        let value = k.residual(&JetPoint::new(layers).expect("shared dimension"));
        Some((
            DVector::from_iterator(rows.len(), rows.iter().map(|&i| value[i])),
            jac.select_rows(rows.iter()),
        ))
    }

    fn variational_matrix(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Result<DMatrix<f64>> {
        self.variational.matrix(&JetPoint::from_second_order(q, v, vdot))
    }

    fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        self.lagrangian.energy(q, v)
    }

    fn mass(&self, q: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.lagrangian.derivatives(q, v)?.mass)
    }

    fn domain_check(&self, q: &[f64], v: &[f64]) -> Result<()> {
        self.kinematic.residual.domain(q, v)
    }

    fn energy_rate_oracle(&self, q: &[f64], v: &[f64]) -> Option<f64> {
        self.diagnostics.energy_rate.as_ref().map(|f| f(q, v))
    }

    fn monitor(&self, q: &[f64], v: &[f64]) -> Option<(String, f64)> {
        self.diagnostics.monitor.as_ref().map(|(name, f)| (name.clone(), f(q, v)))
    }

    fn algebraic_velocities(&self) -> Vec<usize> {
        self.diagnostics.algebraic_velocities.clone()
    }
}

/// Tolerances for [`solve_state`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub assembly: AssemblyOptions,
    pub solve_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { assembly: AssemblyOptions::default(), solve_tol: SOLVE_TOL }
    }
}

/// Everything determined at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSolution {
    /// The velocity with algebraic components filled in.
    pub v: Vec<f64>,
    /// Accelerations; algebraic components are zero (they are not integrated).
    pub vdot: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Norm of the stacked equation defect.
    pub residual: f64,
}

const FIXED_POINT_ITERS: usize = 20;
const GAUSS_NEWTON_ITERS: usize = 30;

/// Solves for accelerations, multipliers and any algebraic velocities at
/// `(q, v)`. Second-order variational rows are handled by fixed-point
/// iteration on the acceleration they are evaluated at.
pub fn solve_state<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    opts: &SolveOptions,
) -> Result<StateSolution> {
    if q.len() != sys.position_dim() || v.len() != sys.velocity_dim() {
        return Err(Error::Dimension(format!(
            "state has lengths ({}, {}), system expects ({}, {})",
            q.len(),
            v.len(),
            sys.position_dim(),
            sys.velocity_dim()
        )));
    }
    let alg = sys.algebraic_velocities();
    let mut guess: Option<DVector<f64>> = None;
    let mut last = None;
    let iters = if sys.variational_order() == 2 { FIXED_POINT_ITERS } else { 1 };
    for _ in 0..iters {
        let sol = if alg.is_empty() {
            let acc = sys.assemble(q, v, guess.as_ref().map(|g| g.as_slice()), &opts.assembly)?;
            let s = assembler::solve(&acc, opts.solve_tol)?;
            StateSolution { v: v.to_vec(), vdot: s.qdd, lambda: s.lambda, residual: s.residual }
        } else {
            solve_algebraic(sys, q, v, &alg, guess.as_ref(), opts)?
        };
        let done = guess
            .as_ref()
            .is_some_and(|g| (g - &sol.vdot).norm() <= 1e-13 * (1.0 + sol.vdot.norm()));
        guess = Some(sol.vdot.clone());
        last = Some(sol);
        if done {
            break;
        }
    }
    Ok(last.expect("at least one iteration"))
}

/// Gauss–Newton on `(v̇_free, λ, v_alg)` for systems with algebraic velocities.
fn solve_algebraic<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    alg: &[usize],
    guess: Option<&DVector<f64>>,
    opts: &SolveOptions,
) -> Result<StateSolution> {
    let n = v.len();
    let free: Vec<usize> = (0..n).filter(|i| !alg.contains(i)).collect();
    let mut vel = v.to_vec();
    let assembly = opts.assembly;
    // Consistency of the velocity rows is checked once, with the given state;
    // the algebraic components never enter those rows.
    if let Some(tol) = assembly.cons_tol {
        let vc = sys.velocity_constraints(q, v);
        let bad: Vec<(usize, f64)> = vc
            .rows
            .iter()
            .zip(vc.value.iter())
            .filter(|(_, x)| x.abs() > tol)
            .map(|(&i, &x)| (i, x))
            .collect();
        if !bad.is_empty() {
            return Err(Error::InconsistentState { rows: bad });
        }
    }
    let unchecked = AssemblyOptions { cons_tol: None, ..assembly };
    let gd = guess.map(|g| g.as_slice());

    let reduced = |vel: &[f64]| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let acc = sys.assemble(q, vel, gd, &unchecked)?;
        let (a, rhs) = acc.stacked();
        for &j in alg {
            if a.column(j).iter().any(|x| *x != 0.0) {
                return Err(Error::Config(format!(
                    "velocity {j} is declared algebraic but its derivative appears in the equations"
                )));
            }
        }
        let keep: Vec<usize> = free.iter().copied().chain(n..a.ncols()).collect();
        Ok((a.select_columns(keep.iter()), rhs))
    };

    let fd_columns = |vel: &[f64], x: &DVector<f64>| -> Result<Vec<DVector<f64>>> {
        let mut cols = Vec::with_capacity(alg.len());
        for &j in alg {
            let h = diff::fd_step(vel[j]);
            let mut vp = vel.to_vec();
            vp[j] += h;
            let (ap, rp) = reduced(&vp)?;
            vp[j] -= 2.0 * h;
            let (am, rm) = reduced(&vp)?;
            cols.push(((&ap * x - rp) - (&am * x - rm)) / (2.0 * h));
        }
        Ok(cols)
    };

    let (mut a, mut rhs) = reduced(&vel)?;
    let (mut x, _) = assembler::least_squares(&a, &rhs)?;
    let nf = free.len();
    let nx = x.len();
    let mut jac = None;
    let mut converged = false;
    for _ in 0..GAUSS_NEWTON_ITERS {
        let f = &a * &x - &rhs;
        let tolerance = opts.solve_tol * (1.0 + rhs.norm());
        if f.norm() <= 1e-3 * tolerance {
            converged = true;
            break;
        }
        // ∂F/∂v_alg by central differences at fixed x.
        let cols = fd_columns(&vel, &x)?;
        let mut j = DMatrix::zeros(a.nrows(), nx + alg.len());
        j.view_mut((0, 0), (a.nrows(), nx)).copy_from(&a);
        for (c, col) in cols.iter().enumerate() {
            j.column_mut(nx + c).copy_from(col);
        }
        let (step, _) = assembler::least_squares(&j, &(-&f))?;
        jac = Some(j);
        x += step.rows(0, nx);
        for (c, &k) in alg.iter().enumerate() {
            vel[k] += step[nx + c];
        }
        (a, rhs) = reduced(&vel)?;
        if step.norm() <= 1e-15 * (1.0 + x.norm()) {
            converged = true;
            break;
        }
    }
    let residual = (&a * &x - &rhs).norm();
    let tolerance = opts.solve_tol * (1.0 + rhs.norm());
    if !(residual <= tolerance) || !converged && residual > 1e-3 * tolerance {
        return Err(Error::InconsistentDynamics { residual, tolerance });
    }
    // Accelerations and algebraic velocities must be pinned down.
    let jac = match jac {
        Some(j) => j,
        None => {
            let cols = fd_columns(&vel, &x)?;
            let mut j = DMatrix::zeros(a.nrows(), nx + alg.len());
            j.view_mut((0, 0), (a.nrows(), nx)).copy_from(&a);
            for (c, col) in cols.iter().enumerate() {
                j.column_mut(nx + c).copy_from(col);
            }
            j
        }
    };
    let (_, null) = assembler::least_squares(&jac, &DVector::zeros(jac.nrows()))?;
    if null.ncols() > 0 {
        let picked: Vec<usize> = (0..nf).chain(nx..nx + alg.len()).collect();
        let block = null.select_rows(picked.iter());
        let dim = crate::system::numerical_rank(&block);
        if block.abs().max() > 1e-8 && dim > 0 {
            return Err(Error::Ambiguous { nullspace_dim: dim });
        }
    }

    let mut vdot = DVector::zeros(n);
    for (c, &j) in free.iter().enumerate() {
        vdot[j] = x[c];
    }
    Ok(StateSolution {
        v: vel,
        vdot,
        lambda: x.rows(nf, nx - nf).into_owned(),
        residual,
    })
}

/// Constraint-force power `λ·(R_V v)`.
pub fn constraint_power<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    vdot: &[f64],
    lambda: &DVector<f64>,
) -> Result<f64> {
    let rv = sys.variational_matrix(q, v, vdot)?;
    Ok(lambda.dot(&(rv * DVector::from_column_slice(v))))
}

/// `max |R_K|` over all rows.
pub fn max_kinematic_residual<D: ConstrainedDynamics + ?Sized>(
    sys: &D,
    q: &[f64],
    v: &[f64],
    vdot: &[f64],
) -> f64 {
    sys.kinematic_residual(q, v, vdot).iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use crate::system::{make_dalembert, Distribution, LagrangianSpec};

    struct Planar;
    impl Lagrangian for Planar {
        fn dim(&self) -> usize {
            3
        }
        fn value<S: Scalar>(&self, _q: &[S], qd: &[S]) -> S {
            S::cst(0.5) * (qd[0] * qd[0] + qd[1] * qd[1] + S::cst(0.2) * qd[2] * qd[2])
        }
    }

    /// Knife edge: ẋ sin θ − ẏ cos θ = 0 in the chart (x, y, θ).
    struct KnifeEdge;
    impl Distribution for KnifeEdge {
        fn dim(&self) -> usize {
            3
        }
        fn rows(&self) -> usize {
            1
        }
        fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<Vec<S>> {
            vec![vec![q[2].sin(), -q[2].cos(), S::zero()]]
        }
    }

    #[test]
    fn knife_edge_velocity_rows_and_power() {
        let sys = make_dalembert(LagrangianSpec::automatic(Planar), KnifeEdge).unwrap();
        let th: f64 = 0.4;
        let (q, v) = ([0.0, 0.0, th], [th.cos(), th.sin(), 0.7]);
        let vc = sys.velocity_constraints(&q, &v);
        assert_eq!(vc.rows, vec![0]);
        assert!(vc.max_abs() < 1e-15);
        assert!((vc.jacobian[(0, 0)] - th.sin()).abs() < 1e-15);
        let sol = solve_state(&sys, &q, &v, &SolveOptions::default()).unwrap();
        let p = constraint_power(&sys, &q, &v, sol.vdot.as_slice(), &sol.lambda).unwrap();
        assert!(p.abs() < 1e-14);
        // The blade keeps its heading: acceleration is normal to the rolling direction.
        let tangential = sol.vdot[0] * th.cos() + sol.vdot[1] * th.sin();
        assert!(tangential.abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = make_dalembert(LagrangianSpec::automatic(Planar), KnifeEdge).unwrap();
        let err = solve_state(&sys, &[0.0; 2], &[0.0; 3], &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
