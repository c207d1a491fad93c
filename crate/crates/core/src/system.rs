//! Lagrangians, the two independent constraint families, and the systems
//! built from them.
//!
//! A [`NonholonomicSystem`] is the triple (Lagrangian, kinematic constraint,
//! variational constraint). The kinematic set restricts the motion itself
//! through residual equations on a jet; the variational set is a linear
//! restriction on virtual displacements and fixes which constraint forces are
//! admissible. Neither is derived from the other unless a constructor such as
//! [`make_dalembert`] or [`make_chetaev`] is used.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::diff::{self, Dual64};
use crate::error::{Error, Result};
use crate::jet::JetPoint;
use crate::scalar::{lift, Scalar};

/// Singular values below `RANK_TOL · σ_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// A Lagrangian `L(q, q̇)` written once for any scalar type.
pub trait Lagrangian: Send + Sync {
    fn dim(&self) -> usize;

    fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S;

    /// Hand-derived derivatives, if the model supplies them.
    fn analytic(&self, _q: &[f64], _qd: &[f64]) -> Option<LagrangianDerivatives> {
        None
    }

    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

/// First and second derivatives of `L` needed by the Euler–Lagrange operator.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianDerivatives {
    /// `∂L/∂q`
    pub dq: DVector<f64>,
    /// `∂L/∂q̇`
    pub dqd: DVector<f64>,
    /// `∂²L/∂q̇²`
    pub mass: DMatrix<f64>,
    /// `(∂²L/∂q̇∂q)·q̇`
    pub mixed_qd: DVector<f64>,
}

impl LagrangianDerivatives {
    /// Forward-mode derivatives of any [`Lagrangian`].
    pub fn automatic<L: Lagrangian + ?Sized>(l: &L, q: &[f64], qd: &[f64]) -> Self {
        let n = q.len();
        let zero = vec![0.0; n];
        let qc: Vec<Dual64> = lift(q);
        let qdc: Vec<Dual64> = lift(qd);

        let dq = DVector::from_fn(n, |i, _| {
            l.value(&diff::seed(q, &diff::unit(n, i)), &qdc).eps
        });
        let dqd = DVector::from_fn(n, |i, _| {
            l.value(&qc, &diff::seed(qd, &diff::unit(n, i))).eps
        });

        let q2 = diff::seed2(q, &zero, &zero);
        let mut mass = DMatrix::zeros(n, n);
        for i in 0..n {
            let ei = diff::unit(n, i);
            for j in 0..=i {
                let v = l.value(&q2, &diff::seed2(qd, &ei, &diff::unit(n, j))).eps.eps;
                mass[(i, j)] = v;
                mass[(j, i)] = v;
            }
        }

        let q_along_qd = diff::seed2(q, &zero, qd);
        let mixed_qd = DVector::from_fn(n, |i, _| {
            l.value(&q_along_qd, &diff::seed2(qd, &diff::unit(n, i), &zero))
                .eps
                .eps
        });

        LagrangianDerivatives { dq, dqd, mass, mixed_qd }
    }
}

/// Which derivative route a [`LagrangianSpec`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DerivMode {
    /// Hand-supplied via [`Lagrangian::analytic`].
    Analytic,
    /// Forward-mode dual numbers.
    #[default]
    Automatic,
}

/// A Lagrangian together with the derivative route to use for it.
#[derive(Clone, Debug)]
pub struct LagrangianSpec<L> {
    pub lagrangian: L,
    pub mode: DerivMode,
}

impl<L: Lagrangian> LagrangianSpec<L> {
    pub fn automatic(lagrangian: L) -> Self {
        LagrangianSpec { lagrangian, mode: DerivMode::Automatic }
    }

    pub fn analytic(lagrangian: L) -> Self {
        LagrangianSpec { lagrangian, mode: DerivMode::Analytic }
    }

    pub fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    pub fn value(&self, q: &[f64], qd: &[f64]) -> f64 {
        self.lagrangian.value(q, qd)
    }

    pub fn derivatives(&self, q: &[f64], qd: &[f64]) -> Result<LagrangianDerivatives> {
        let d = match self.mode {
            DerivMode::Automatic => LagrangianDerivatives::automatic(&self.lagrangian, q, qd),
            DerivMode::Analytic => self.lagrangian.analytic(q, qd).ok_or_else(|| {
                Error::Derivative("analytic derivatives requested but not supplied".into())
            })?,
        };
        let finite = d.dq.iter().chain(d.dqd.iter()).chain(d.mass.iter()).chain(d.mixed_qd.iter());
        if finite.clone().any(|x| !x.is_finite()) {
            return Err(Error::Derivative("non-finite derivative of the Lagrangian".into()));
        }
        Ok(d)
    }

    /// `E = ∂L/∂q̇·q̇ − L`.
    pub fn energy(&self, q: &[f64], qd: &[f64]) -> f64 {
        let n = q.len();
        let qc: Vec<Dual64> = lift(q);
        // ∂L/∂q̇·q̇ is the derivative of L along q̇ in velocity space.
        let p_dot_v = self.lagrangian.value(&qc, &diff::seed(qd, qd)).eps;
        debug_assert_eq!(n, qd.len());
        p_dot_v - self.value(q, qd)
    }
}

/// Residual equations `R_K([q]⁽ᵏ⁾) = 0` of a kinematic constraint.
pub trait KinematicResidual: Send + Sync {
    fn dim(&self) -> usize;

    /// Derivative order of each row; its length is the row count.
    fn row_orders(&self) -> Vec<usize>;

    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S>;

    /// Whether every row is affine in its highest derivative.
    fn highest_affine(&self) -> bool {
        true
    }

    /// Model-specific domain guard evaluated on `(q, q̇)`.
    fn domain(&self, _q: &[f64], _qd: &[f64]) -> Result<()> {
        Ok(())
    }

    fn row_names(&self) -> Vec<String> {
        (0..self.row_orders().len()).map(|i| format!("R_K[{i}]")).collect()
    }
}

/// A kinematic constraint of order `k` (the highest row order).
#[derive(Debug)]
pub struct KinematicConstraintSet<K> {
    pub residual: Arc<K>,
    order: usize,
    row_orders: Vec<usize>,
}

impl<K> Clone for KinematicConstraintSet<K> {
    fn clone(&self) -> Self {
        KinematicConstraintSet {
            residual: Arc::clone(&self.residual),
            order: self.order,
            row_orders: self.row_orders.clone(),
        }
    }
}

impl<K: KinematicResidual> KinematicConstraintSet<K> {
    pub fn new(residual: K) -> Result<Self> {
        Self::from_arc(Arc::new(residual))
    }

    pub fn from_arc(residual: Arc<K>) -> Result<Self> {
        let row_orders = residual.row_orders();
        let order = row_orders.iter().copied().max().unwrap_or(1);
        if order > 2 {
            return Err(Error::Config(format!(
                "kinematic rows of order {order} are not supported (maximum 2)"
            )));
        }
        Ok(KinematicConstraintSet { residual, order, row_orders })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.row_orders.len()
    }

    pub fn row_orders(&self) -> &[usize] {
        &self.row_orders
    }

    pub fn dim(&self) -> usize {
        self.residual.dim()
    }

    pub fn highest_affine(&self) -> bool {
        self.residual.highest_affine()
    }

    /// Evaluates `R_K` on a jet of sufficient order.
    pub fn eval(&self, jet: &JetPoint<f64>) -> Result<Vec<f64>> {
        if jet.order() < self.order {
            return Err(Error::JetOrder { need: self.order, got: jet.order() });
        }
        let r = self.residual.residual(jet);
        if r.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "kinematic residual returned {} rows, expected {}",
                r.len(),
                self.rows()
            )));
        }
        Ok(r)
    }

    /// Coefficient matrix of the top derivative layer `derivs[k]` in each row.
    pub fn top_coefficients(&self, jet: &JetPoint<f64>, layer: usize) -> DMatrix<f64> {
        let base = jet.with_order(layer.max(jet.order()));
        diff::jacobian(&base.deriv(layer), |x| {
            let j = base.map(|s, i, v| if s == layer { x[i] } else { Dual64::constant(v) });
            self.residual.residual(&j)
        })
    }

    /// Samples the affine-in-top-derivative property: the coefficient of
    /// `derivs[k]` must not change when `derivs[k]` does. Returns the largest
    /// coefficient change seen between the two probes.
    pub fn affinity_defect(&self, jet: &JetPoint<f64>) -> f64 {
        let k = self.order;
        let a = jet.with_order(k);
        let mut layers = a.clone().into_layers();
        for (i, x) in layers[k].iter_mut().enumerate() {
            *x += 0.37 + 0.11 * i as f64;
        }
        let b = JetPoint::new(layers).expect("same shape");
        let ca = self.top_coefficients(&a, k);
        let cb = self.top_coefficients(&b, k);
        (ca - cb).abs().max()
    }
}

/// Linear restriction `R_V([q]⁽ˡ⁾)·δq = 0` on virtual displacements.
pub trait VariationalRows: Send + Sync {
    fn dim(&self) -> usize;
    fn rows(&self) -> usize;
    fn order(&self) -> usize;
    /// `rows × dim` matrix at a jet of order at least [`order`](Self::order).
    fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64>;
}

/// A variational constraint of order `l`.
#[derive(Debug)]
pub struct VariationalConstraintSet<V> {
    pub rows: Arc<V>,
}

impl<V> Clone for VariationalConstraintSet<V> {
    fn clone(&self) -> Self {
        VariationalConstraintSet { rows: Arc::clone(&self.rows) }
    }
}

impl<V: VariationalRows> VariationalConstraintSet<V> {
    pub fn new(rows: V) -> Self {
        VariationalConstraintSet { rows: Arc::new(rows) }
    }

    pub fn order(&self) -> usize {
        self.rows.order()
    }

    pub fn rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    pub fn matrix(&self, jet: &JetPoint<f64>) -> Result<DMatrix<f64>> {
        if jet.order() < self.order() {
            return Err(Error::JetOrder { need: self.order(), got: jet.order() });
        }
        let m = self.rows.matrix(jet);
        check_finite(&m)?;
        if m.shape() != (self.rows(), self.dim()) {
            return Err(Error::Dimension(format!(
                "variational matrix is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.rows(),
                self.dim()
            )));
        }
        Ok(m)
    }

    /// Basis of the admissible variations `ker R_V` (columns).
    pub fn admissible_basis(&self, jet: &JetPoint<f64>) -> Result<DMatrix<f64>> {
        Ok(kernel_basis(&self.matrix(jet)?))
    }
}

/// Numerical rank with the relative threshold [`RANK_TOL`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn kernel_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to at least n rows so the SVD returns a full V.
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= RANK_TOL * smax)
        .map(|i| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Coordinate names and units of a flat chart.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chart {
    pub names: Vec<String>,
    pub units: Vec<String>,
}

impl Chart {
    pub fn new(names: &[&str], units: &[&str]) -> Self {
        Chart {
            names: names.iter().map(|s| s.to_string()).collect(),
            units: units.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Names `q0 … q{n-1}`, unitless.
    pub fn generic(n: usize) -> Self {
        Chart {
            names: (0..n).map(|i| format!("q{i}")).collect(),
            units: vec![String::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// State function `(q, q̇) ↦ ℝ` attached to a model for diagnostics.
pub type StateFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Optional diagnostics a model can supply.
#[derive(Clone, Default)]
pub struct Diagnostics {
    /// Closed-form prediction of `dE/dt`.
    pub energy_rate: Option<StateFn>,
    /// A named quantity that the model's theory requires to be nonnegative.
    pub monitor: Option<(String, StateFn)>,
    /// Coordinates whose velocity is fixed algebraically by the constraints
    /// rather than integrated (no inertia and absent from every lifted row).
    pub algebraic_velocities: Vec<usize>,
}

impl fmt::Debug for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diagnostics")
            .field("energy_rate", &self.energy_rate.is_some())
            .field("monitor", &self.monitor.as_ref().map(|m| &m.0))
            .field("algebraic_velocities", &self.algebraic_velocities)
            .finish()
    }
}

/// Data `(L, C_K, C_V)` plus chart metadata.
#[derive(Clone, Debug)]
pub struct NonholonomicSystem<L, K, V> {
    pub lagrangian: LagrangianSpec<L>,
    pub kinematic: KinematicConstraintSet<K>,
    pub variational: VariationalConstraintSet<V>,
    pub chart: Chart,
    pub notes: String,
    pub diagnostics: Diagnostics,
}

impl<L: Lagrangian, K: KinematicResidual, V: VariationalRows> NonholonomicSystem<L, K, V> {
    pub fn new(
        lagrangian: LagrangianSpec<L>,
        kinematic: KinematicConstraintSet<K>,
        variational: VariationalConstraintSet<V>,
        chart: Chart,
    ) -> Result<Self> {
        let n = lagrangian.dim();
        if n == 0 {
            return Err(Error::Dimension("configuration space must have n >= 1".into()));
        }
        for (what, d) in [
            ("kinematic constraint", kinematic.dim()),
            ("variational constraint", variational.dim()),
            ("chart", chart.dim()),
        ] {
            if d != n {
                return Err(Error::Dimension(format!("{what} has dimension {d}, Lagrangian has {n}")));
            }
        }
        Ok(NonholonomicSystem {
            lagrangian,
            kinematic,
            variational,
            chart,
            notes: String::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    pub fn with_diagnostics(mut self, diagnostics: Diagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    /// Jet order needed to evaluate both constraint families.
    pub fn required_order(&self) -> usize {
        self.kinematic.order().max(self.variational.order())
    }
}

/// Value of `R_K` and the numerical rank of `R_V` at a jet.
pub fn evaluate_residuals<L, K, V>(
    sys: &NonholonomicSystem<L, K, V>,
    jet: &JetPoint<f64>,
) -> Result<(Vec<f64>, usize)>
where
    L: Lagrangian,
    K: KinematicResidual,
    V: VariationalRows,
{
    let need = sys.required_order();
    if jet.order() < need {
        return Err(Error::JetOrder { need, got: jet.order() });
    }
    if jet.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "jet has dimension {}, system has {}",
            jet.dim(),
            sys.dim()
        )));
    }
    let kin = sys.kinematic.eval(jet)?;
    let rank = numerical_rank(&sys.variational.matrix(jet)?);
    Ok((kin, rank))
}

/// Rows of a distribution `q ↦ A(q)` (an `m × n` matrix) for D'Alembert systems.
pub trait Distribution: Send + Sync {
    fn dim(&self) -> usize;
    fn rows(&self) -> usize;
    /// Row-major `rows × dim` entries.
    fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<Vec<S>>;
}

/// Kinematic residual `A(q)·q̇` of a distribution.
#[derive(Debug)]
pub struct DistributionResidual<D>(pub Arc<D>);

impl<D: Distribution> KinematicResidual for DistributionResidual<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn row_orders(&self) -> Vec<usize> {
        vec![1; self.0.rows()]
    }

    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let qd = jet.qd();
        self.0
            .matrix(jet.q())
            .iter()
            .map(|row| crate::scalar::dot(row, qd))
            .collect()
    }
}

/// Variational rows `A(q)` of a distribution.
#[derive(Debug)]
pub struct DistributionVariations<D>(pub Arc<D>);

impl<D: Distribution> VariationalRows for DistributionVariations<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn rows(&self) -> usize {
        self.0.rows()
    }

    fn order(&self) -> usize {
        0
    }

    fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64> {
        let rows = self.0.matrix(jet.q());
        DMatrix::from_fn(self.rows(), self.dim(), |i, j| rows[i][j])
    }
}

pub type DalembertSystem<L, D> =
    NonholonomicSystem<L, DistributionResidual<D>, DistributionVariations<D>>;

/// D'Alembert's principle: the kinematic constraint is the distribution
/// `A(q)·q̇ = 0` and the admissible variations are the same distribution.
pub fn make_dalembert<L: Lagrangian, D: Distribution>(
    lagrangian: LagrangianSpec<L>,
    dist_rows: D,
) -> Result<DalembertSystem<L, D>> {
    let n = lagrangian.dim();
    if dist_rows.dim() != n {
        return Err(Error::Dimension(format!(
            "distribution acts on dimension {}, Lagrangian has {n}",
            dist_rows.dim()
        )));
    }
    if dist_rows.rows() >= n {
        return Err(Error::Dimension(format!(
            "distribution has {} rows; at most {} allowed for n = {n}",
            dist_rows.rows(),
            n - 1
        )));
    }
    let d = Arc::new(dist_rows);
    NonholonomicSystem::new(
        lagrangian,
        KinematicConstraintSet::from_arc(Arc::new(DistributionResidual(Arc::clone(&d))))?,
        VariationalConstraintSet { rows: Arc::new(DistributionVariations(d)) },
        Chart::generic(n),
    )
    .map(|s| s.with_notes("D'Alembert: variational rows coincide with the kinematic distribution"))
}

/// Variational rows obtained from a kinematic residual by differentiating
/// with respect to its top derivative layer (Chetaev's rule and its
/// second-order extension).
#[derive(Debug)]
pub struct ChetaevVariations<K> {
    pub kinematic: Arc<K>,
    pub layer: usize,
}

impl<K: KinematicResidual> VariationalRows for ChetaevVariations<K> {
    fn dim(&self) -> usize {
        self.kinematic.dim()
    }

    fn rows(&self) -> usize {
        self.kinematic.row_orders().len()
    }

    fn order(&self) -> usize {
        self.layer
    }

    fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64> {
        let layer = self.layer;
        let base = jet.with_order(layer.max(jet.order()));
        diff::jacobian(&base.deriv(layer), |x| {
            let j = base.map(|s, i, v| if s == layer { x[i] } else { Dual64::constant(v) });
            self.kinematic.residual(&j)
        })
    }
}

pub type ChetaevSystem<L, K> = NonholonomicSystem<L, K, ChetaevVariations<K>>;

fn chetaev_with_layer<L: Lagrangian, K: KinematicResidual>(
    lagrangian: LagrangianSpec<L>,
    kinematic: KinematicConstraintSet<K>,
    layer: usize,
) -> Result<ChetaevSystem<L, K>> {
    if kinematic.order() != layer {
        return Err(Error::Config(format!(
            "Chetaev construction of order {layer} needs a kinematic constraint of order {layer}, got {}",
            kinematic.order()
        )));
    }
    let n = lagrangian.dim();
    let variations = ChetaevVariations { kinematic: Arc::clone(&kinematic.residual), layer };
    NonholonomicSystem::new(
        lagrangian,
        kinematic,
        VariationalConstraintSet { rows: Arc::new(variations) },
        Chart::generic(n),
    )
}

/// Chetaev's rule: `R_V = ∂R_K/∂q̇` for a first-order kinematic constraint.
pub fn make_chetaev<L: Lagrangian, K: KinematicResidual>(
    lagrangian: LagrangianSpec<L>,
    kinematic: KinematicConstraintSet<K>,
) -> Result<ChetaevSystem<L, K>> {
    chetaev_with_layer(lagrangian, kinematic, 1)
}

/// Second-order extension: `R_V = ∂R_K/∂q̈`.
pub fn make_chetaev_second_order<L: Lagrangian, K: KinematicResidual>(
    lagrangian: LagrangianSpec<L>,
    kinematic: KinematicConstraintSet<K>,
) -> Result<ChetaevSystem<L, K>> {
    chetaev_with_layer(lagrangian, kinematic, 2)
}

/// Checks a variational matrix for finite entries; a Chetaev Jacobian of a
/// residual that is not differentiable at the sample shows up here.
pub fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Derivative("non-finite entry in constraint Jacobian".into()))
    }
}
