//! Per-state assembly and solution of the equations of motion.
//!
//! The dynamical equations say that the Euler–Lagrange covector lies in the
//! span of the variational rows, `𝓔𝓛 = R_Vᵀ λ`. Together with the kinematic
//! rows lifted to acceleration level this is a linear system in `(q̈, λ)`:
//!
//! ```text
//! [ M    −R_Vᵀ ] [ q̈ ]   [ −bias ]
//! [ A_K   0    ] [ λ  ] = [ −b_K  ]
//! ```
//!
//! It may have more equations than unknowns (the elastic ball does); it is
//! solved in the least-squares sense and accepted only when the residual is
//! within tolerance. A residual above tolerance means the constraint families
//! are incompatible at that state, which is reported rather than projected
//! away.

use nalgebra::{DMatrix, DVector};

use crate::diff::{self, Dual64, HyperDual64};
use crate::error::{Error, Result};
use crate::jet::JetPoint;
use crate::scalar::lift;
use crate::system::{
    KinematicConstraintSet, KinematicResidual, Lagrangian, LagrangianSpec, NonholonomicSystem,
    VariationalRows, RANK_TOL,
};

/// Default acceptance threshold for the stacked least-squares residual,
/// relative to `1 + ‖rhs‖`.
pub const SOLVE_TOL: f64 = 1e-8;

/// Default tolerance on velocity-level kinematic residuals.
pub const CONS_TOL: f64 = 1e-9;

/// Baumgarte gains added to lifted rows.
///
/// First-order rows become `Ṙ + 2α·R = 0`; position rows become
/// `C̈ + 2α·Ċ + β·C = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Gains {
    pub alpha: f64,
    pub beta: f64,
}

/// The linear(ized) system in `(q̈, λ)` at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelerationSystem {
    /// `∂²L/∂q̇²`
    pub mass: DMatrix<f64>,
    /// Everything in `𝓔𝓛` that does not multiply `q̈`.
    pub bias: DVector<f64>,
    /// `R_V` at the state.
    pub vrows: DMatrix<f64>,
    /// Coefficients of `q̈` in the acceleration-level kinematic rows.
    pub krows_a: DMatrix<f64>,
    /// Remainder of the acceleration-level kinematic rows.
    pub krows_b: DVector<f64>,
    /// `(q, q̇)` the system was built at.
    pub state: (Vec<f64>, Vec<f64>),
}

impl AccelerationSystem {
    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn multipliers(&self) -> usize {
        self.vrows.nrows()
    }

    pub fn kinematic_rows(&self) -> usize {
        self.krows_a.nrows()
    }

    /// Stacked matrix `[M, −R_Vᵀ; A_K, 0]` and right-hand side.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, m, r) = (self.dim(), self.multipliers(), self.kinematic_rows());
        let mut a = DMatrix::zeros(n + r, n + m);
        a.view_mut((0, 0), (n, n)).copy_from(&self.mass);
        if m > 0 {
            a.view_mut((0, n), (n, m)).copy_from(&(-self.vrows.transpose()));
        }
        if r > 0 {
            a.view_mut((n, 0), (r, n)).copy_from(&self.krows_a);
        }
        let mut rhs = DVector::zeros(n + r);
        rhs.rows_mut(0, n).copy_from(&(-&self.bias));
        rhs.rows_mut(n, r).copy_from(&(-&self.krows_b));
        (a, rhs)
    }
}

/// Accelerations and multipliers solving an [`AccelerationSystem`].
#[derive(Clone, Debug, PartialEq)]
pub struct AccelerationSolution {
    pub qdd: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Euclidean norm of the stacked equation defect.
    pub residual: f64,
}

/// Options controlling [`assemble`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions {
    /// Velocity-level consistency threshold; `None` skips the check.
    pub cons_tol: Option<f64>,
    pub gains: Gains,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { cons_tol: Some(CONS_TOL), gains: Gains::default() }
    }
}

/// `𝓔𝓛(q, q̇, q̈) = M q̈ + (∂²L/∂q̇∂q) q̇ − ∂L/∂q`.
pub fn euler_lagrange<L: Lagrangian>(
    lagrangian: &LagrangianSpec<L>,
    jet: &JetPoint<f64>,
) -> Result<DVector<f64>> {
    if jet.order() < 2 {
        return Err(Error::JetOrder { need: 2, got: jet.order() });
    }
    let d = lagrangian.derivatives(jet.q(), jet.qd())?;
    let qdd = DVector::from_column_slice(&jet.deriv(2));
    Ok(&d.mass * qdd + d.mixed_qd - d.dq)
}

fn eval_dual<K: KinematicResidual>(
    k: &KinematicConstraintSet<K>,
    layers: &[&[f64]],
    seeds: &[Option<&[f64]>],
) -> Vec<f64> {
    let jet = JetPoint::new(
        layers
            .iter()
            .zip(seeds)
            .map(|(x, d)| match d {
                Some(d) => diff::seed(x, d),
                None => lift(x),
            })
            .collect(),
    )
    .expect("layers share a dimension");
    k.residual.residual(&jet).iter().map(|v| v.eps).collect()
}

/// Lifts every kinematic row to acceleration level at `(q, q̇)`.
///
/// First-order rows are differentiated once in time; second-order rows,
/// being affine in `q̈`, contribute their own coefficients; position rows are
/// differentiated twice. Baumgarte terms from `gains` are folded into `b`.
pub fn lift_kinematic<K: KinematicResidual>(
    k: &KinematicConstraintSet<K>,
    q: &[f64],
    qd: &[f64],
    gains: Gains,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = q.len();
    let r = k.rows();
    if !k.highest_affine() {
        let row = k.row_orders().iter().position(|&o| o == k.order()).unwrap_or(0);
        return Err(Error::NotAffine { row });
    }
    let orders = k.row_orders();
    let zero = vec![0.0; n];
    let top = k.order().max(1);
    let base: Vec<&[f64]> = [q, qd, zero.as_slice()][..=top].to_vec();
    let none: Vec<Option<&[f64]>> = vec![None; top + 1];

    let jet0 = JetPoint::new(base.iter().map(|x| x.to_vec()).collect()).expect("shared dimension");
    let value = k.residual.residual(&jet0);
    if value.len() != r {
        return Err(Error::Dimension(format!(
            "kinematic residual returned {} rows, expected {r}",
            value.len()
        )));
    }

    let layer_jacobian = |layer: usize| -> DMatrix<f64> {
        let mut cols = Vec::with_capacity(n);
        for i in 0..n {
            let e = diff::unit(n, i);
            let mut seeds = none.clone();
            seeds[layer] = Some(e.as_slice());
            cols.push(eval_dual(k, &base, &seeds));
        }
        DMatrix::from_fn(r, n, |a, b| cols[b][a])
    };

    let has = |o: usize| orders.contains(&o);
    let jq = if has(0) { Some(layer_jacobian(0)) } else { None };
    let jqd = if has(1) { Some(layer_jacobian(1)) } else { None };
    let jqdd = if has(2) { Some(layer_jacobian(2)) } else { None };

    // ∂R/∂q · q̇
    let along = if has(1) || has(0) {
        let mut seeds = none.clone();
        seeds[0] = Some(qd);
        eval_dual(k, &base, &seeds)
    } else {
        vec![0.0; r]
    };
    // q̇ᵀ ∇²_q R q̇ for position rows
    let curvature = if has(0) {
        let qd_dir = qd.to_vec();
        let hyper: Vec<Vec<HyperDual64>> = base
            .iter()
            .enumerate()
            .map(|(s, x)| if s == 0 { diff::seed2(x, &qd_dir, &qd_dir) } else { lift(x) })
            .collect();
        let jet = JetPoint::new(hyper).expect("shared dimension");
        k.residual.residual(&jet).iter().map(|v| v.eps.eps).collect()
    } else {
        vec![0.0; r]
    };

    let mut a = DMatrix::zeros(r, n);
    let mut b = DVector::zeros(r);
    for (i, &o) in orders.iter().enumerate() {
        match o {
            0 => {
                let jq = jq.as_ref().expect("computed when order-0 rows exist");
                a.row_mut(i).copy_from(&jq.row(i));
                let cdot = along[i];
                b[i] = curvature[i] + 2.0 * gains.alpha * cdot + gains.beta * value[i];
            }
            1 => {
                let jqd = jqd.as_ref().expect("computed when order-1 rows exist");
                a.row_mut(i).copy_from(&jqd.row(i));
                b[i] = along[i] + 2.0 * gains.alpha * value[i];
            }
            _ => {
                let jqdd = jqdd.as_ref().expect("computed when order-2 rows exist");
                a.row_mut(i).copy_from(&jqdd.row(i));
                b[i] = value[i];
            }
        }
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Derivative("non-finite lifted kinematic row".into()));
    }
    Ok((a, b))
}

/// Velocity-level rows (`order ≤ 1`, position rows in their `J q̇` form) and
/// the index of each within the full row list.
pub fn velocity_rows<K: KinematicResidual>(
    k: &KinematicConstraintSet<K>,
    q: &[f64],
    qd: &[f64],
) -> Vec<(usize, f64)> {
    let n = q.len();
    let orders = k.row_orders();
    if !orders.iter().any(|&o| o <= 1) {
        return Vec::new();
    }
    let top = k.order().max(1);
    let mut layers = vec![q.to_vec(), qd.to_vec()];
    layers.resize(top + 1, vec![0.0; n]);
    let jet = JetPoint::new(layers.clone()).expect("shared dimension");
    let value = k.residual.residual(&jet);
    let pos_rate = if orders.contains(&0) {
        let seeded: Vec<Vec<Dual64>> = layers
            .iter()
            .enumerate()
            .map(|(s, x)| if s == 0 { diff::seed(x, qd) } else { lift(x) })
            .collect();
        k.residual
            .residual(&JetPoint::new(seeded).expect("shared dimension"))
            .iter()
            .map(|v| v.eps)
            .collect()
    } else {
        vec![0.0; value.len()]
    };
    orders
        .iter()
        .enumerate()
        .filter_map(|(i, &o)| match o {
            0 => Some((i, pos_rate[i])),
            1 => Some((i, value[i])),
            _ => None,
        })
        .collect()
}

/// Builds the [`AccelerationSystem`] of `sys` at `(q, q̇)`.
pub fn assemble<L, K, V>(
    sys: &NonholonomicSystem<L, K, V>,
    q: &[f64],
    qd: &[f64],
    opts: &AssemblyOptions,
) -> Result<AccelerationSystem>
where
    L: Lagrangian,
    K: KinematicResidual,
    V: VariationalRows,
{
    assemble_with_guess(sys, q, qd, None, opts)
}

/// As [`assemble`], evaluating second-order variational rows at the
/// acceleration guess `qdd` (zero when absent).
pub fn assemble_with_guess<L, K, V>(
    sys: &NonholonomicSystem<L, K, V>,
    q: &[f64],
    qd: &[f64],
    qdd: Option<&[f64]>,
    opts: &AssemblyOptions,
) -> Result<AccelerationSystem>
where
    L: Lagrangian,
    K: KinematicResidual,
    V: VariationalRows,
{
    let n = sys.dim();
    if q.len() != n || qd.len() != n {
        return Err(Error::Dimension(format!(
            "state has lengths ({}, {}), system dimension is {n}",
            q.len(),
            qd.len()
        )));
    }
    sys.kinematic.residual.domain(q, qd)?;
    if let Some(tol) = opts.cons_tol {
        let bad: Vec<(usize, f64)> = velocity_rows(&sys.kinematic, q, qd)
            .into_iter()
            .filter(|(_, v)| v.abs() > tol)
            .collect();
        if !bad.is_empty() {
            return Err(Error::InconsistentState { rows: bad });
        }
    }

    let d = sys.lagrangian.derivatives(q, qd)?;
    let zero = vec![0.0; n];
    let vjet = match sys.variational.order() {
        0 => JetPoint::new(vec![q.to_vec()])?,
        1 => JetPoint::from_state(q, qd),
        _ => JetPoint::from_second_order(q, qd, qdd.unwrap_or(&zero)),
    };
    let vrows = sys.variational.matrix(&vjet)?;
    let (krows_a, krows_b) = lift_kinematic(&sys.kinematic, q, qd, opts.gains)?;

    Ok(AccelerationSystem {
        bias: &d.mixed_qd - &d.dq,
        mass: d.mass,
        vrows,
        krows_a,
        krows_b,
        state: (q.to_vec(), qd.to_vec()),
    })
}

/// Least-squares solution of the stacked system with a residual gate.
///
/// Fails with [`Error::InconsistentDynamics`] when the residual exceeds
/// `solve_tol · (1 + ‖rhs‖)`, and with [`Error::Ambiguous`] when the
/// accelerations are not determined (multipliers may be non-unique; the
/// minimum-norm ones are returned).
pub fn solve(acc: &AccelerationSystem, solve_tol: f64) -> Result<AccelerationSolution> {
    let n = acc.dim();
    let (a, rhs) = acc.stacked();
    let determined: Vec<bool> = (0..a.ncols()).map(|j| j < n).collect();
    let (x, residual) = solve_stacked(&a, &rhs, &determined, solve_tol)?;
    Ok(AccelerationSolution {
        qdd: x.rows(0, n).into_owned(),
        lambda: x.rows(n, x.len() - n).into_owned(),
        residual,
    })
}

/// Minimum-norm least-squares solution of `a·x = rhs` (padded SVD, relative
/// cutoff [`RANK_TOL`]).
pub fn least_squares(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = a.shape();
    // Pad with zero rows so the SVD exposes the whole right null space.
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.rows_mut(0, rows).copy_from(a);
    let mut rhs_padded = DVector::zeros(rows.max(cols));
    rhs_padded.rows_mut(0, rows).copy_from(rhs);

    let svd = padded.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let null: Vec<DVector<f64>> = (0..cols)
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .map(|i| vt.row(i).transpose())
        .collect();
    let null = if null.is_empty() { DMatrix::zeros(cols, 0) } else { DMatrix::from_columns(&null) };
    let x = svd
        .solve(&rhs_padded, cutoff)
        .map_err(|e| Error::Derivative(format!("least-squares solve failed: {e}")))?;
    Ok((x, null))
}

/// [`least_squares`] with the residual gate and an ambiguity check on the
/// unknowns flagged in `determined`.
pub fn solve_stacked(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    determined: &[bool],
    solve_tol: f64,
) -> Result<(DVector<f64>, f64)> {
    let (x, null) = least_squares(a, rhs)?;
    if null.ncols() > 0 {
        let picked: Vec<usize> = (0..determined.len()).filter(|&j| determined[j]).collect();
        let block = null.select_rows(picked.iter());
        let dim = crate::system::numerical_rank(&block);
        if block.abs().max() > 1e-8 && dim > 0 {
            return Err(Error::Ambiguous { nullspace_dim: dim });
        }
    }
    let residual = (a * &x - rhs).norm();
    let tolerance = solve_tol * (1.0 + rhs.norm());
    if !(residual <= tolerance) {
        return Err(Error::InconsistentDynamics { residual, tolerance });
    }
    Ok((x, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use crate::system::{make_dalembert, Chart, Distribution, VariationalConstraintSet};

    struct Oscillator;
    impl Lagrangian for Oscillator {
        fn dim(&self) -> usize {
            1
        }
        fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
            S::cst(0.5) * (qd[0] * qd[0] - q[0] * q[0])
        }
    }

    struct NoRows(usize);
    impl Distribution for NoRows {
        fn dim(&self) -> usize {
            self.0
        }
        fn rows(&self) -> usize {
            0
        }
        fn matrix<S: Scalar>(&self, _q: &[S]) -> Vec<Vec<S>> {
            Vec::new()
        }
    }

    #[test]
    fn harmonic_oscillator_on_shell() {
        let l = LagrangianSpec::automatic(Oscillator);
        let el = euler_lagrange(&l, &JetPoint::from_second_order(&[1.0], &[0.0], &[-1.0])).unwrap();
        assert!(el[0].abs() < 1e-15);
    }

    #[test]
    fn unconstrained_oscillator_solves_directly() {
        let sys = make_dalembert(LagrangianSpec::automatic(Oscillator), NoRows(1)).unwrap();
        let acc = assemble(&sys, &[1.0], &[0.0], &AssemblyOptions::default()).unwrap();
        let sol = solve(&acc, SOLVE_TOL).unwrap();
        assert!((sol.qdd[0] + 1.0).abs() < 1e-14);
        assert_eq!(sol.lambda.len(), 0);
    }

    #[test]
    fn euler_lagrange_needs_second_order_jet() {
        let l = LagrangianSpec::automatic(Oscillator);
        let err = euler_lagrange(&l, &JetPoint::from_state(&[1.0], &[0.0])).unwrap_err();
        assert_eq!(err, Error::JetOrder { need: 2, got: 1 });
    }

    #[test]
    fn inconsistent_overdetermined_system_is_rejected() {
        // q̈ = 1 and q̈ = 2 stacked: no exact solution.
        let acc = AccelerationSystem {
            mass: DMatrix::from_element(1, 1, 1.0),
            bias: DVector::from_element(1, -1.0),
            vrows: DMatrix::zeros(0, 1),
            krows_a: DMatrix::from_element(1, 1, 1.0),
            krows_b: DVector::from_element(1, -2.0),
            state: (vec![0.0], vec![0.0]),
        };
        assert!(matches!(solve(&acc, SOLVE_TOL), Err(Error::InconsistentDynamics { .. })));
    }

    #[test]
    fn missing_inertia_is_reported_as_ambiguity() {
        let acc = AccelerationSystem {
            mass: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
            bias: DVector::zeros(2),
            vrows: DMatrix::zeros(0, 2),
            krows_a: DMatrix::zeros(0, 2),
            krows_b: DVector::zeros(0),
            state: (vec![0.0; 2], vec![0.0; 2]),
        };
        assert_eq!(solve(&acc, SOLVE_TOL).unwrap_err(), Error::Ambiguous { nullspace_dim: 1 });
    }

    #[test]
    fn least_squares_matches_direct_solve_on_square_systems() {
        let acc = AccelerationSystem {
            mass: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            bias: DVector::from_vec(vec![0.4, -1.1]),
            vrows: DMatrix::from_row_slice(1, 2, &[1.0, -0.5]),
            krows_a: DMatrix::from_row_slice(1, 2, &[1.0, -0.5]),
            krows_b: DVector::from_vec(vec![0.25]),
            state: (vec![0.0; 2], vec![0.0; 2]),
        };
        let (a, rhs) = acc.stacked();
        let direct = a.clone().lu().solve(&rhs).unwrap();
        let sol = solve(&acc, SOLVE_TOL).unwrap();
        let x = DVector::from_iterator(3, sol.qdd.iter().chain(sol.lambda.iter()).copied());
        assert!((x - &direct).norm() <= 1e-12 * direct.norm());
    }

    #[test]
    fn constant_rows_lift_to_themselves() {
        struct Fixed;
        impl KinematicResidual for Fixed {
            fn dim(&self) -> usize {
                2
            }
            fn row_orders(&self) -> Vec<usize> {
                vec![1]
            }
            fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
                vec![S::cst(3.0) * jet.qd()[0] - S::cst(2.0) * jet.qd()[1]]
            }
        }
        let k = KinematicConstraintSet::new(Fixed).unwrap();
        let (a, b) = lift_kinematic(&k, &[0.1, 0.2], &[2.0, 3.0], Gains::default()).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(1, 2, &[3.0, -2.0]));
        assert_eq!(b[0], 0.0);
        let _ = VariationalConstraintSet::<crate::system::DistributionVariations<NoRows>>::rows;
        let _ = Chart::generic(2);
    }
}
