//! Systems reduced by a Lie-group symmetry.
//!
//! The velocity is `u = (v, ṡ)`: a Lie-algebra element `v` (body or spatial
//! velocity, depending on the orientation) followed by the velocities of
//! optional flat shape variables `s`. The reduced Euler–Lagrange covector is
//!
//! ```text
//! 𝓔𝓛 = d/dt ∂l/∂u − (ad*_v ∂l/∂v, ∂l/∂s)
//! ```
//!
//! and, as for flat systems, the equations of motion are `𝓔𝓛 = 𝔯_Vᵀλ` together
//! with the reduced kinematic rows.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::assembler::{AccelerationSystem, AssemblyOptions, Gains};
use crate::diff::{self, Dual64};
use crate::dynamics::{ConstrainedDynamics, VelocityConstraints};
use crate::error::{Error, Result};
use crate::scalar::{lift, Scalar};
use crate::system::{check_finite, Diagnostics};

/// Which side the symmetry acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// `v = g⁻¹ġ`; the bracket is the standard one.
    Left,
    /// `v = ġg⁻¹`; the bracket is minus the standard one.
    Right,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::Left => 1.0,
            Orientation::Right => -1.0,
        }
    }
}

/// A factor of a product Lie algebra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    /// `so(3) ≅ ℝ³` with the cross product.
    So3,
    /// `ℝᵈ` with the zero bracket.
    Abelian(usize),
}

impl Factor {
    pub fn dim(self) -> usize {
        match self {
            Factor::So3 => 3,
            Factor::Abelian(d) => d,
        }
    }
}

/// A Lie algebra given by structure constants `[eᵢ, eⱼ] = Σₖ cᵏᵢⱼ eₖ`, the
/// orientation sign already folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct LieGroupSpec {
    pub factors: Vec<Factor>,
    pub orientation: Orientation,
    dim: usize,
    /// `c[(k * d + i) * d + j] = cᵏᵢⱼ`
    structure: Vec<f64>,
}

impl LieGroupSpec {
    pub fn new(factors: Vec<Factor>, orientation: Orientation) -> Self {
        let dim: usize = factors.iter().map(|f| f.dim()).sum();
        let mut structure = vec![0.0; dim * dim * dim];
        let sigma = orientation.sign();
        let mut offset = 0;
        for f in &factors {
            if *f == Factor::So3 {
                for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
                    let (i, j, k) = (offset + i, offset + j, offset + k);
                    structure[(k * dim + i) * dim + j] = sigma;
                    structure[(k * dim + j) * dim + i] = -sigma;
                }
            }
            offset += f.dim();
        }
        LieGroupSpec { factors, orientation, dim, structure }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure_constant(&self, k: usize, i: usize, j: usize) -> f64 {
        self.structure[(k * self.dim + i) * self.dim + j]
    }

    pub fn bracket<S: Scalar>(&self, x: &[S], y: &[S]) -> Vec<S> {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let mut acc = S::zero();
                for i in 0..d {
                    for j in 0..d {
                        let c = self.structure_constant(k, i, j);
                        if c != 0.0 {
                            acc += S::cst(c) * x[i] * y[j];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// `ad*_v μ`, defined by `⟨ad*_v μ, η⟩ = ⟨μ, [v, η]⟩`.
    pub fn adstar<S: Scalar>(&self, v: &[S], mu: &[S]) -> Vec<S> {
        let d = self.dim;
        (0..d)
            .map(|j| {
                let mut acc = S::zero();
                for k in 0..d {
                    for i in 0..d {
                        let c = self.structure_constant(k, i, j);
                        if c != 0.0 {
                            acc += S::cst(c) * v[i] * mu[k];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Largest antisymmetry defect over basis pairs.
    pub fn antisymmetry_defect(&self) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    m = m.max((self.structure_constant(k, i, j) + self.structure_constant(k, j, i)).abs());
                }
            }
        }
        m
    }

    /// Largest Jacobi-identity defect over basis triples.
    pub fn jacobi_defect(&self) -> f64 {
        let d = self.dim;
        let e = |i: usize| diff::unit(d, i);
        let mut m: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let t1 = self.bracket(&e(a), &self.bracket(&e(b), &e(c)));
                    let t2 = self.bracket(&e(b), &self.bracket(&e(c), &e(a)));
                    let t3 = self.bracket(&e(c), &self.bracket(&e(a), &e(b)));
                    for k in 0..d {
                        m = m.max((t1[k] + t2[k] + t3[k]).abs());
                    }
                }
            }
        }
        m
    }
}

/// Reduced Lagrangian `l(s, u)`.
pub trait ReducedLagrangian: Send + Sync {
    fn value<S: Scalar>(&self, s: &[S], u: &[S]) -> S;

    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

/// Reduced kinematic rows on `(s, u, u̇)`.
///
/// Row orders follow the unreduced jet: order 1 rows depend on `(s, u)`,
/// order 2 rows are affine in `u̇`.
pub trait ReducedKinematic: Send + Sync {
    fn row_orders(&self) -> Vec<usize>;
    fn residual<S: Scalar>(&self, s: &[S], u: &[S], udot: &[S]) -> Vec<S>;

    fn domain(&self, _s: &[f64], _u: &[f64]) -> Result<()> {
        Ok(())
    }

    fn row_names(&self) -> Vec<String> {
        (0..self.row_orders().len()).map(|i| format!("r_K[{i}]")).collect()
    }
}

/// Reduced variational rows `𝔯_V`: an `m × (d + p)` matrix acting on
/// `(η, δs)`.
pub trait ReducedVariations: Send + Sync {
    fn rows(&self) -> usize;
    fn order(&self) -> usize;
    fn matrix(&self, s: &[f64], u: &[f64], udot: &[f64]) -> DMatrix<f64>;
}

/// A system on `𝔤 × (shape space)` obtained by reduction.
pub struct ReducedSystem<L, K, V> {
    pub group: LieGroupSpec,
    pub lagrangian: L,
    pub kinematic: Arc<K>,
    pub variational: Arc<V>,
    pub algebra_names: Vec<String>,
    pub shape_names: Vec<String>,
    pub notes: String,
    pub diagnostics: Diagnostics,
}

impl<L: ReducedLagrangian, K: ReducedKinematic, V: ReducedVariations> ReducedSystem<L, K, V> {
    pub fn new(
        group: LieGroupSpec,
        lagrangian: L,
        kinematic: K,
        variational: V,
        algebra_names: &[&str],
        shape_names: &[&str],
    ) -> Result<Self> {
        if algebra_names.len() != group.dim() {
            return Err(Error::Dimension(format!(
                "{} algebra names for a {}-dimensional algebra",
                algebra_names.len(),
                group.dim()
            )));
        }
        if let Some(o) = kinematic.row_orders().iter().find(|&&o| !(1..=2).contains(&o)) {
            return Err(Error::Config(format!("reduced kinematic rows must have order 1 or 2, got {o}")));
        }
        if variational.order() > 2 {
            return Err(Error::Config("variational rows of order above 2".into()));
        }
        Ok(ReducedSystem {
            group,
            lagrangian,
            kinematic: Arc::new(kinematic),
            variational: Arc::new(variational),
            algebra_names: algebra_names.iter().map(|s| s.to_string()).collect(),
            shape_names: shape_names.iter().map(|s| s.to_string()).collect(),
            notes: String::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    pub fn algebra_dim(&self) -> usize {
        self.group.dim()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_names.len()
    }

    pub fn dim(&self) -> usize {
        self.algebra_dim() + self.shape_dim()
    }

    fn check_state(&self, s: &[f64], u: &[f64]) -> Result<()> {
        if s.len() != self.shape_dim() || u.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "reduced state has lengths ({}, {}), expected ({}, {})",
                s.len(),
                u.len(),
                self.shape_dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `∂l/∂u`, `∂²l/∂u²`, `(∂²l/∂u∂s)·ṡ` and `∂l/∂s`.
    fn lagrangian_derivatives(
        &self,
        s: &[f64],
        u: &[f64],
    ) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>)> {
        let n = u.len();
        let p = s.len();
        let d = self.algebra_dim();
        let l = &self.lagrangian;
        let sc: Vec<Dual64> = lift(s);
        let du = DVector::from_fn(n, |i, _| l.value(&sc, &diff::seed(u, &diff::unit(n, i))).eps);
        let uc: Vec<Dual64> = lift(u);
        let ds = DVector::from_fn(p, |i, _| l.value(&diff::seed(s, &diff::unit(p, i)), &uc).eps);
        let zero_n = vec![0.0; n];
        let zero_p = vec![0.0; p];
        let s2 = diff::seed2(s, &zero_p, &zero_p);
        let mut mass = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = l.value(&s2, &diff::seed2(u, &diff::unit(n, i), &diff::unit(n, j))).eps.eps;
                mass[(i, j)] = v;
                mass[(j, i)] = v;
            }
        }
        let sdot = &u[d..];
        let s_along = diff::seed2(s, &zero_p, sdot);
        let mixed = DVector::from_fn(n, |i, _| {
            l.value(&s_along, &diff::seed2(u, &diff::unit(n, i), &zero_n)).eps.eps
        });
        for m in [&du, &mixed, &ds] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Derivative("non-finite derivative of the reduced Lagrangian".into()));
            }
        }
        check_finite(&mass)?;
        Ok((du, mass, mixed, ds))
    }

    /// Terms of the reduced Euler–Lagrange covector that do not multiply `u̇`.
    fn bias(&self, s: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let d = self.algebra_dim();
        let (du, mass, mixed, ds) = self.lagrangian_derivatives(s, u)?;
        let adstar = self.group.adstar(&u[..d], &du.as_slice()[..d]);
        let mut bias = mixed;
        for (j, a) in adstar.iter().enumerate() {
            bias[j] -= a;
        }
        for (i, f) in ds.iter().enumerate() {
            bias[d + i] -= f;
        }
        Ok((mass, bias))
    }

    /// `d/dt ∂l/∂u − (ad*_v ∂l/∂v, ∂l/∂s)` at `(s, u, u̇)`.
    pub fn reduced_euler_lagrange(&self, s: &[f64], u: &[f64], udot: &[f64]) -> Result<DVector<f64>> {
        self.check_state(s, u)?;
        let (mass, bias) = self.bias(s, u)?;
        Ok(mass * DVector::from_column_slice(udot) + bias)
    }

    fn eval_rows<S: Scalar>(&self, s: &[S], u: &[S], udot: &[S]) -> Vec<S> {
        self.kinematic.residual(s, u, udot)
    }

    /// Reduced kinematic rows at acceleration level: `A·u̇ + b = 0`.
    pub fn lift_kinematic(&self, s: &[f64], u: &[f64], gains: Gains) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = u.len();
        let d = self.algebra_dim();
        let orders = self.kinematic.row_orders();
        let r = orders.len();
        let zero = vec![0.0; n];
        let value = self.eval_rows(s, u, &zero);
        if value.len() != r {
            return Err(Error::Dimension(format!("reduced kinematic residual returned {} rows, expected {r}", value.len())));
        }
        let (sc, uc, zc): (Vec<Dual64>, Vec<Dual64>, Vec<Dual64>) = (lift(s), lift(u), lift(&zero));
        let mut jac_u = DMatrix::zeros(r, n);
        let mut jac_udot = DMatrix::zeros(r, n);
        for i in 0..n {
            let e = diff::unit(n, i);
            let a = self.eval_rows(&sc, &diff::seed(u, &e), &zc);
            let b = self.eval_rows(&sc, &uc, &diff::seed(&zero, &e));
            for k in 0..r {
                jac_u[(k, i)] = a[k].eps;
                jac_udot[(k, i)] = b[k].eps;
            }
        }
        let along_shape = self.eval_rows(&diff::seed(s, &u[d..]), &uc, &zc);
        let mut a = DMatrix::zeros(r, n);
        let mut b = DVector::zeros(r);
        for (k, &o) in orders.iter().enumerate() {
            if o == 1 {
                a.row_mut(k).copy_from(&jac_u.row(k));
                b[k] = along_shape[k].eps + 2.0 * gains.alpha * value[k];
            } else {
                a.row_mut(k).copy_from(&jac_udot.row(k));
                b[k] = value[k];
            }
        }
        check_finite(&a)?;
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Derivative("non-finite lifted reduced row".into()));
        }
        Ok((a, b))
    }
}

impl<L, K, V> ConstrainedDynamics for ReducedSystem<L, K, V>
where
    L: ReducedLagrangian,
    K: ReducedKinematic,
    V: ReducedVariations,
{
    fn position_names(&self) -> Vec<String> {
        self.shape_names.clone()
    }

    fn velocity_names(&self) -> Vec<String> {
        self.algebra_names
            .iter()
            .cloned()
            .chain(self.shape_names.iter().map(|s| format!("{s}_dot")))
            .collect()
    }

    fn position_rate(&self, _q: &[f64], v: &[f64]) -> Vec<f64> {
        v[self.algebra_dim()..].to_vec()
    }

    fn variational_order(&self) -> usize {
        self.variational.order()
    }

    fn multipliers(&self) -> usize {
        self.variational.rows()
    }

    fn row_names(&self) -> Vec<String> {
        self.kinematic.row_names()
    }

    fn assemble(
        &self,
        q: &[f64],
        v: &[f64],
        vdot: Option<&[f64]>,
        opts: &AssemblyOptions,
    ) -> Result<AccelerationSystem> {
        self.check_state(q, v)?;
        self.kinematic.domain(q, v)?;
        if let Some(tol) = opts.cons_tol {
            let vc = self.velocity_constraints(q, v);
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
        let n = v.len();
        let zero = vec![0.0; n];
        let (mass, bias) = self.bias(q, v)?;
        let vrows = self.variational_matrix(q, v, vdot.unwrap_or(&zero))?;
        let (krows_a, krows_b) = self.lift_kinematic(q, v, opts.gains)?;
        Ok(AccelerationSystem { mass, bias, vrows, krows_a, krows_b, state: (q.to_vec(), v.to_vec()) })
    }

    fn kinematic_residual(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Vec<f64> {
        self.eval_rows(q, v, vdot)
    }

    fn velocity_constraints(&self, q: &[f64], v: &[f64]) -> VelocityConstraints {
        let n = v.len();
        let orders = self.kinematic.row_orders();
        let rows: Vec<usize> = (0..orders.len()).filter(|&i| orders[i] == 1).collect();
        let zero = vec![0.0; n];
        let value = self.eval_rows(q, v, &zero);
        let jac = diff::jacobian(v, |x| {
            let zc: Vec<Dual64> = lift(&zero);
            self.eval_rows(&lift(q), x, &zc)
        });
        VelocityConstraints {
            value: DVector::from_iterator(rows.len(), rows.iter().map(|&i| value[i])),
            jacobian: jac.select_rows(rows.iter()),
            rows,
        }
    }

    fn variational_matrix(&self, q: &[f64], v: &[f64], vdot: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.variational.matrix(q, v, vdot);
        check_finite(&m)?;
        if m.shape() != (self.variational.rows(), self.dim()) {
            return Err(Error::Dimension(format!(
                "reduced variational matrix is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.variational.rows(),
                self.dim()
            )));
        }
        Ok(m)
    }

    fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        let sc: Vec<Dual64> = lift(q);
        self.lagrangian.value(&sc, &diff::seed(v, v)).eps - self.lagrangian.value(q, v)
    }

    fn mass(&self, q: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.lagrangian_derivatives(q, v)?.1)
    }

    fn domain_check(&self, q: &[f64], v: &[f64]) -> Result<()> {
        self.check_state(q, v)?;
        self.kinematic.domain(q, v)
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

/// A stationary velocity field on the plane, `v(x)` with Jacobian `Dv(x)`.
pub trait VelocityField: Send + Sync {
    fn value<S: Scalar>(&self, x: &[S]) -> [S; 2];
    /// Hand-supplied Jacobian, used by the closed-form oracle.
    fn jacobian(&self, x: &[f64]) -> [[f64; 2]; 2];
}

/// `v(x) = c + G·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineField {
    pub c: [f64; 2],
    pub g: [[f64; 2]; 2],
}

impl AffineField {
    pub fn zero() -> Self {
        AffineField { c: [0.0; 2], g: [[0.0; 2]; 2] }
    }

    pub fn constant(c: [f64; 2]) -> Self {
        AffineField { c, g: [[0.0; 2]; 2] }
    }

    /// `v(x) = (γ·x₂, 0)`.
    pub fn shear(gamma: f64) -> Self {
        AffineField { c: [0.0; 2], g: [[0.0, gamma], [0.0, 0.0]] }
    }

    /// `v(x) = γ·(−x₂, x₁)`.
    pub fn rotation(gamma: f64) -> Self {
        AffineField { c: [0.0; 2], g: [[0.0, -gamma], [gamma, 0.0]] }
    }
}

impl VelocityField for AffineField {
    fn value<S: Scalar>(&self, x: &[S]) -> [S; 2] {
        let row = |i: usize| S::cst(self.c[i]) + S::cst(self.g[i][0]) * x[0] + S::cst(self.g[i][1]) * x[1];
        [row(0), row(1)]
    }

    fn jacobian(&self, _x: &[f64]) -> [[f64; 2]; 2] {
        self.g
    }
}

/// Closed-form equations of a ball of unit radius rolling on a plane that
/// moves with velocity field `v`:
///
/// ```text
/// ȧ = (ω₂, −ω₁) + v(a)
/// (I + M)(ω̇₂, −ω̇₁) = −M·Dv(a)·ȧ,   ω̇₃ = 0
/// ```
pub fn moving_plane_rhs<F: VelocityField>(
    field: &F,
    inertia: f64,
    mass: f64,
    omega: [f64; 3],
    a: [f64; 2],
) -> ([f64; 3], [f64; 2]) {
    let v = field.value(&a);
    let adot = [omega[1] + v[0], -omega[0] + v[1]];
    let dv = field.jacobian(&a);
    let w = [dv[0][0] * adot[0] + dv[0][1] * adot[1], dv[1][0] * adot[0] + dv[1][1] * adot[1]];
    let k = -mass / (inertia + mass);
    // (ω̇₂, −ω̇₁) = k·w
    ([-k * w[1], k * w[0], 0.0], adot)
}

/// `ω̂`, the skew matrix with `ω̂x = ω × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// `exp(ŵ)` by Rodrigues' formula, with the Taylor series near zero.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let th = w.norm();
    let k = hat(w);
    let (a, b) = if th < 1e-8 {
        (1.0 - th * th / 6.0, 0.5 - th * th / 24.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / (th * th))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Nearest rotation (polar factor).
pub fn reorthonormalize(a: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// A point of a product group: one rotation per `so(3)` factor and one
/// translation per abelian factor.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<DVector<f64>>,
}

impl GroupElement {
    pub fn identity(group: &LieGroupSpec) -> Self {
        let mut rotations = Vec::new();
        let mut translations = Vec::new();
        for f in &group.factors {
            match *f {
                Factor::So3 => rotations.push(Matrix3::identity()),
                Factor::Abelian(d) => translations.push(DVector::zeros(d)),
            }
        }
        GroupElement { rotations, translations }
    }

    /// Largest `‖AᵀA − I‖` entry over the rotation factors.
    pub fn orthonormality_defect(&self) -> f64 {
        self.rotations
            .iter()
            .map(|a| (a.transpose() * a - Matrix3::identity()).amax())
            .fold(0.0, f64::max)
    }
}

/// Recovers the group curve from algebra velocities sampled every `dt`:
/// `A ← exp(dt ω̂)A` (right) or `A ← A exp(dt ω̂)` (left) for rotation
/// factors, `x ← x + dt·V` for abelian ones, re-projecting rotations onto
/// SO(3) every step.
pub fn reconstruct(group: &LieGroupSpec, g0: &GroupElement, v_series: &[Vec<f64>], dt: f64) -> Vec<GroupElement> {
    let mut out = Vec::with_capacity(v_series.len());
    let mut g = g0.clone();
    out.push(g.clone());
    for v in v_series.iter().take(v_series.len().saturating_sub(1)) {
        let mut off = 0;
        let (mut ri, mut ti) = (0, 0);
        for f in &group.factors {
            match *f {
                Factor::So3 => {
                    let w = Vector3::new(v[off], v[off + 1], v[off + 2]) * dt;
                    let e = so3_exp(&w);
                    let a = &g.rotations[ri];
                    let next = match group.orientation {
                        Orientation::Right => e * a,
                        Orientation::Left => a * e,
                    };
                    g.rotations[ri] = reorthonormalize(&next);
                    ri += 1;
                }
                Factor::Abelian(d) => {
                    for k in 0..d {
                        g.translations[ti][k] += dt * v[off + k];
                    }
                    ti += 1;
                }
            }
            off += f.dim();
        }
        out.push(g.clone());
    }
    out
}
