//! Built-in systems: the elastic and rigid rolling ball, the ball on a moving
//! plane, and the Rocard and Greidanus tire models.
//!
//! Default parameters are desk-scale (all ones); they are conveniences, not
//! measured data.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::JetPoint;
use crate::reduction::{
    Factor, LieGroupSpec, Orientation, ReducedKinematic, ReducedLagrangian, ReducedSystem,
    ReducedVariations, VelocityField,
};
use crate::scalar::Scalar;
use crate::system::{
    make_dalembert, Chart, DalembertSystem, Diagnostics, Distribution, KinematicConstraintSet,
    KinematicResidual, Lagrangian, LagrangianDerivatives, LagrangianSpec, NonholonomicSystem,
    VariationalConstraintSet, VariationalRows,
};

fn require_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("parameter {name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Homogeneous ball of unit radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallParams {
    /// Moment of inertia about any axis through the centre.
    pub inertia: f64,
    pub mass: f64,
}

impl Default for BallParams {
    fn default() -> Self {
        BallParams { inertia: 1.0, mass: 1.0 }
    }
}

impl BallParams {
    pub fn validate(&self) -> Result<()> {
        require_positive(&[("I", self.inertia), ("M", self.mass)])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("I".into(), self.inertia), ("M".into(), self.mass)])
    }
}

/// How the elastic ball's no-spin condition is imposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallFormulation {
    /// `ω₃ = 0`
    Omega3Zero,
    /// `ω₁ω̇₂ − ω₂ω̇₁ − ω₃(ω₁² + ω₂²) = 0`, the contact path's curvature condition.
    CurvatureSecondOrder,
}

/// `l(ω, V) = ½I|ω|² + ½M|V|²`; for the moving-plane ball `V` is `ȧ`.
#[derive(Clone, Copy, Debug)]
pub struct BallLagrangian(pub BallParams);

impl ReducedLagrangian for BallLagrangian {
    fn value<S: Scalar>(&self, _s: &[S], u: &[S]) -> S {
        let w2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let v2 = u[3] * u[3] + u[4] * u[4];
        S::cst(0.5 * self.0.inertia) * w2 + S::cst(0.5 * self.0.mass) * v2
    }

    fn params(&self) -> BTreeMap<String, f64> {
        self.0.to_map()
    }
}

/// Non-sliding rows `V − (ω₂, −ω₁) = 0` and a no-spin row.
#[derive(Clone, Copy, Debug)]
pub struct BallKinematic {
    pub formulation: BallFormulation,
}

impl ReducedKinematic for BallKinematic {
    fn row_orders(&self) -> Vec<usize> {
        match self.formulation {
            BallFormulation::Omega3Zero => vec![1, 1, 1],
            BallFormulation::CurvatureSecondOrder => vec![1, 1, 2],
        }
    }

    fn residual<S: Scalar>(&self, _s: &[S], u: &[S], udot: &[S]) -> Vec<S> {
        let (w1, w2, w3) = (u[0], u[1], u[2]);
        let spin = match self.formulation {
            BallFormulation::Omega3Zero => w3,
            BallFormulation::CurvatureSecondOrder => {
                w1 * udot[1] - w2 * udot[0] - w3 * (w1 * w1 + w2 * w2)
            }
        };
        vec![u[3] - w2, u[4] + w1, spin]
    }

    fn row_names(&self) -> Vec<String> {
        let spin = match self.formulation {
            BallFormulation::Omega3Zero => "omega3",
            BallFormulation::CurvatureSecondOrder => "curvature",
        };
        vec!["V1 - omega2".into(), "V2 + omega1".into(), spin.into()]
    }
}

/// Reduced variations `w = (α₂, −α₁)`, optionally with `α₃ = 0`.
#[derive(Clone, Copy, Debug)]
pub struct BallVariations {
    pub no_spin: bool,
}

impl ReducedVariations for BallVariations {
    fn rows(&self) -> usize {
        if self.no_spin {
            3
        } else {
            2
        }
    }

    fn order(&self) -> usize {
        0
    }

    fn matrix(&self, _s: &[f64], u: &[f64], _udot: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), u.len());
        m[(0, 1)] = -1.0;
        m[(0, 3)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(1, 4)] = 1.0;
        if self.no_spin {
            m[(2, 2)] = 1.0;
        }
        m
    }
}

pub type BallSystem = ReducedSystem<BallLagrangian, BallKinematic, BallVariations>;

/// Right-reduced `so(3) ⊕ ℝ²` used by both balls on a fixed plane.
pub fn ball_group() -> LieGroupSpec {
    LieGroupSpec::new(vec![Factor::So3, Factor::Abelian(2)], Orientation::Right)
}

const BALL_VELOCITIES: [&str; 5] = ["omega1", "omega2", "omega3", "V1", "V2"];

/// Elastic ball: the contact patch resists spin, so `ω₃ = 0` is a kinematic
/// row, but the variations only satisfy `w = (α₂, −α₁)`.
pub fn elastic_ball(p: BallParams, formulation: BallFormulation) -> Result<BallSystem> {
    elastic_ball_with(p, formulation, Orientation::Right)
}

/// [`elastic_ball`] reduced on the given side.
pub fn elastic_ball_with(p: BallParams, formulation: BallFormulation, orientation: Orientation) -> Result<BallSystem> {
    p.validate()?;
    let group = LieGroupSpec::new(vec![Factor::So3, Factor::Abelian(2)], orientation);
    Ok(ReducedSystem::new(
        group,
        BallLagrangian(p),
        BallKinematic { formulation },
        BallVariations { no_spin: false },
        &BALL_VELOCITIES,
        &[],
    )?
    .with_notes("elastic rolling ball; variational rows differ from the kinematic ones"))
}

/// Rigid ball under D'Alembert's principle: the no-spin row appears in both
/// constraint families (`ω₃ = 0` and `α₃ = 0`).
pub fn rigid_ball_dalembert(p: BallParams) -> Result<BallSystem> {
    p.validate()?;
    Ok(ReducedSystem::new(
        ball_group(),
        BallLagrangian(p),
        BallKinematic { formulation: BallFormulation::Omega3Zero },
        BallVariations { no_spin: true },
        &BALL_VELOCITIES,
        &[],
    )?
    .with_notes("rigid rolling ball, D'Alembert: variational and kinematic rows coincide"))
}

/// Moving-plane rows `ȧ − v(a) − (ω₂, −ω₁) = 0`.
#[derive(Clone, Debug)]
pub struct PlaneBallKinematic<F> {
    pub field: Arc<F>,
}

impl<F: VelocityField> ReducedKinematic for PlaneBallKinematic<F> {
    fn row_orders(&self) -> Vec<usize> {
        vec![1, 1]
    }

    fn residual<S: Scalar>(&self, s: &[S], u: &[S], _udot: &[S]) -> Vec<S> {
        let v = self.field.value(s);
        vec![u[3] - v[0] - u[1], u[4] - v[1] + u[0]]
    }

    fn row_names(&self) -> Vec<String> {
        vec!["a1_dot - v1(a) - omega2".into(), "a2_dot - v2(a) + omega1".into()]
    }
}

pub type MovingPlaneBall<F> = ReducedSystem<BallLagrangian, PlaneBallKinematic<F>, BallVariations>;

/// Rigid ball on a plane deforming with the stationary velocity field `v`;
/// the contact point `a` is a shape variable.
pub fn moving_plane_ball<F: VelocityField>(p: BallParams, field: F) -> Result<MovingPlaneBall<F>> {
    p.validate()?;
    Ok(ReducedSystem::new(
        LieGroupSpec::new(vec![Factor::So3], Orientation::Right),
        BallLagrangian(p),
        PlaneBallKinematic { field: Arc::new(field) },
        BallVariations { no_spin: false },
        &BALL_VELOCITIES[..3],
        &["a1", "a2"],
    )?
    .with_notes("rigid ball on a moving plane; contact point a advected as a shape variable"))
}

/// Ball in the flat chart `(φ₁, φ₂, φ₃, a₁, a₂)` with `φ̇ = ω`.
///
/// For an isotropic ball this chart carries the same dynamics as the reduced
/// system, since the `ad*` term vanishes.
#[derive(Clone, Copy, Debug)]
pub struct FlatBallLagrangian(pub BallParams);

impl Lagrangian for FlatBallLagrangian {
    fn dim(&self) -> usize {
        5
    }

    fn value<S: Scalar>(&self, _q: &[S], qd: &[S]) -> S {
        BallLagrangian(self.0).value::<S>(&[], qd)
    }

    fn analytic(&self, _q: &[f64], qd: &[f64]) -> Option<LagrangianDerivatives> {
        let (i, m) = (self.0.inertia, self.0.mass);
        let diag = DVector::from_vec(vec![i, i, i, m, m]);
        Some(LagrangianDerivatives {
            dq: DVector::zeros(5),
            dqd: diag.component_mul(&DVector::from_column_slice(qd)),
            mass: DMatrix::from_diagonal(&diag),
            mixed_qd: DVector::zeros(5),
        })
    }

    fn params(&self) -> BTreeMap<String, f64> {
        self.0.to_map()
    }
}

/// Rolling distribution `ȧ − (φ̇₂, −φ̇₁) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct RollingDistribution;

impl Distribution for RollingDistribution {
    fn dim(&self) -> usize {
        5
    }

    fn rows(&self) -> usize {
        2
    }

    fn matrix<S: Scalar>(&self, _q: &[S]) -> Vec<Vec<S>> {
        let (o, z) = (S::one(), S::zero());
        vec![vec![z, -o, z, o, z], vec![o, z, z, z, o]]
    }
}

pub type FlatBall = DalembertSystem<FlatBallLagrangian, RollingDistribution>;

pub fn flat_rolling_ball(p: BallParams) -> Result<FlatBall> {
    p.validate()?;
    let mut sys = make_dalembert(LagrangianSpec::automatic(FlatBallLagrangian(p)), RollingDistribution)?;
    sys.chart = Chart::new(&["phi1", "phi2", "phi3", "a1", "a2"], &["rad", "rad", "rad", "m", "m"]);
    Ok(sys)
}

/// Tire parameters shared by the Rocard model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocardParams {
    /// Moment of inertia about the wheel axis.
    pub i: f64,
    /// Moment of inertia about the vertical axis.
    pub j: f64,
    pub m: f64,
    /// Elastic constant of the twist `ε`.
    pub k: f64,
    /// Constant of the lateral-force law `|F| = a sin|ε|`.
    pub a_coef: f64,
}

impl Default for RocardParams {
    fn default() -> Self {
        RocardParams { i: 1.0, j: 1.0, m: 1.0, k: 1.0, a_coef: 1.0 }
    }
}

impl RocardParams {
    pub fn validate(&self) -> Result<()> {
        require_positive(&[("I", self.i), ("J", self.j), ("M", self.m), ("K", self.k), ("a", self.a_coef)])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("I".into(), self.i),
            ("J".into(), self.j),
            ("M".into(), self.m),
            ("K".into(), self.k),
            ("a".into(), self.a_coef),
        ])
    }
}

/// Largest admissible `|ε|` for the Rocard model (rad).
pub const ROCARD_MAX_EPSILON: f64 = 0.3;
/// Smallest admissible `|ψ̇|` (rad/s): the lateral-force law needs the wheel rolling.
pub const ROCARD_MIN_PSI_DOT: f64 = 1e-9;

/// `L = ½Iψ̇² + ½Jθ̇² + ½M|ẋ|² − ½Kε²` in the chart `(ψ, θ, ε, x₁, x₂)`.
#[derive(Clone, Copy, Debug)]
pub struct RocardLagrangian(pub RocardParams);

impl Lagrangian for RocardLagrangian {
    fn dim(&self) -> usize {
        5
    }

    fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
        let p = self.0;
        let half = S::cst(0.5);
        half * (S::cst(p.i) * qd[0] * qd[0]
            + S::cst(p.j) * qd[1] * qd[1]
            + S::cst(p.m) * (qd[3] * qd[3] + qd[4] * qd[4])
            - S::cst(p.k) * q[2] * q[2])
    }

    fn analytic(&self, q: &[f64], qd: &[f64]) -> Option<LagrangianDerivatives> {
        let p = self.0;
        let diag = DVector::from_vec(vec![p.i, p.j, 0.0, p.m, p.m]);
        Some(LagrangianDerivatives {
            dq: DVector::from_vec(vec![0.0, 0.0, -p.k * q[2], 0.0, 0.0]),
            dqd: diag.component_mul(&DVector::from_column_slice(qd)),
            mass: DMatrix::from_diagonal(&diag),
            mixed_qd: DVector::zeros(5),
        })
    }

    fn params(&self) -> BTreeMap<String, f64> {
        self.0.to_map()
    }
}

/// Rocard's rows:
///
/// ```text
/// ẋ₁ − ψ̇ cos(θ − ε) = 0
/// ẋ₂ − ψ̇ sin(θ − ε) = 0
/// −ψ̈ tan ε + ψ̇(θ̇ − ε̇) − sign(ψ̇)(a/M) tan ε = 0
/// ```
#[derive(Clone, Copy, Debug)]
pub struct RocardKinematic(pub RocardParams);

impl KinematicResidual for RocardKinematic {
    fn dim(&self) -> usize {
        5
    }

    fn row_orders(&self) -> Vec<usize> {
        vec![1, 1, 2]
    }

    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let q = jet.deriv(0);
        let qd = jet.deriv(1);
        let qdd = jet.deriv(2);
        let phi = q[1] - q[2];
        let tan_e = q[2].tan();
        let lateral = S::cst(self.0.a_coef / self.0.m) * tan_e * qd[0].signum();
        vec![
            qd[3] - qd[0] * phi.cos(),
            qd[4] - qd[0] * phi.sin(),
            -qdd[0] * tan_e + qd[0] * (qd[1] - qd[2]) - lateral,
        ]
    }

    fn domain(&self, q: &[f64], qd: &[f64]) -> Result<()> {
        if !(q[2].abs() <= ROCARD_MAX_EPSILON) {
            return Err(Error::Domain {
                guard: format!("|epsilon| <= {ROCARD_MAX_EPSILON} (epsilon = {})", q[2]),
            });
        }
        if !(qd[0].abs() >= ROCARD_MIN_PSI_DOT) {
            return Err(Error::Domain {
                guard: format!("sign(psi_dot) needs |psi_dot| >= {ROCARD_MIN_PSI_DOT} (psi_dot = {})", qd[0]),
            });
        }
        Ok(())
    }

    fn row_names(&self) -> Vec<String> {
        vec!["x1 rolling".into(), "x2 rolling".into(), "Rocard lateral force".into()]
    }
}

/// `δψ cos θ − δx₁ = 0`, `δψ sin θ − δx₂ = 0`, `δθ − δε = 0`.
#[derive(Clone, Copy, Debug)]
pub struct RocardVariations;

impl VariationalRows for RocardVariations {
    fn dim(&self) -> usize {
        5
    }

    fn rows(&self) -> usize {
        3
    }

    fn order(&self) -> usize {
        0
    }

    fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64> {
        let th = jet.q()[1];
        DMatrix::from_row_slice(
            3,
            5,
            &[
                th.cos(), 0.0, 0.0, -1.0, 0.0, //
                th.sin(), 0.0, 0.0, 0.0, -1.0, //
                0.0, 1.0, -1.0, 0.0, 0.0,
            ],
        )
    }
}

pub type RocardTire = NonholonomicSystem<RocardLagrangian, RocardKinematic, RocardVariations>;

/// Name of the Rocard monitor quantity `ε(θ̇ − ε̇)`.
pub const ROCARD_MONITOR: &str = "epsilon*(theta_dot - epsilon_dot)";

/// Rocard's tire model.
///
/// The twist `ε` carries no kinetic energy, so `ε̇` is an algebraic velocity:
/// it is fixed at every instant by the lateral-force row.
pub fn rocard_tire(p: RocardParams) -> Result<RocardTire> {
    p.validate()?;
    let (m, k) = (p.m, p.k);
    let diagnostics = Diagnostics {
        energy_rate: Some(Arc::new(move |q: &[f64], qd: &[f64]| {
            -(m * qd[0] * qd[0] + k) * q[2] * (qd[1] - qd[2])
        })),
        monitor: Some((ROCARD_MONITOR.into(), Arc::new(|q: &[f64], qd: &[f64]| q[2] * (qd[1] - qd[2])))),
        algebraic_velocities: vec![2],
    };
    Ok(NonholonomicSystem::new(
        LagrangianSpec::automatic(RocardLagrangian(p)),
        KinematicConstraintSet::new(RocardKinematic(p))?,
        VariationalConstraintSet::new(RocardVariations),
        Chart::new(&["psi", "theta", "epsilon", "x1", "x2"], &["rad", "rad", "rad", "m", "m"]),
    )?
    .with_notes("Rocard tire: second-order kinematic row, variational rows independent of it")
    .with_diagnostics(diagnostics))
}

/// Greidanus tire parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreidanusParams {
    pub i: f64,
    pub j: f64,
    pub m: f64,
    /// Lateral stiffness of the deformation `ξ`.
    pub alpha: f64,
    /// Twist stiffness of `ε`.
    pub beta: f64,
}

impl Default for GreidanusParams {
    fn default() -> Self {
        GreidanusParams { i: 1.0, j: 1.0, m: 1.0, alpha: 1.0, beta: 1.0 }
    }
}

impl GreidanusParams {
    pub fn validate(&self) -> Result<()> {
        require_positive(&[
            ("I", self.i),
            ("J", self.j),
            ("M", self.m),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("I".into(), self.i),
            ("J".into(), self.j),
            ("M".into(), self.m),
            ("alpha".into(), self.alpha),
            ("beta".into(), self.beta),
        ])
    }
}

/// `L = ½Iψ̇² + ½Jθ̇² + ½M|ẏ|² − ½αξ² − ½βε²` in `(ψ, θ, ε, y₁, y₂, ξ)`.
#[derive(Clone, Copy, Debug)]
pub struct GreidanusLagrangian(pub GreidanusParams);

impl Lagrangian for GreidanusLagrangian {
    fn dim(&self) -> usize {
        6
    }

    fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
        let p = self.0;
        S::cst(0.5)
            * (S::cst(p.i) * qd[0] * qd[0]
                + S::cst(p.j) * qd[1] * qd[1]
                + S::cst(p.m) * (qd[3] * qd[3] + qd[4] * qd[4])
                - S::cst(p.alpha) * q[5] * q[5]
                - S::cst(p.beta) * q[2] * q[2])
    }

    fn analytic(&self, q: &[f64], qd: &[f64]) -> Option<LagrangianDerivatives> {
        let p = self.0;
        let diag = DVector::from_vec(vec![p.i, p.j, 0.0, p.m, p.m, 0.0]);
        Some(LagrangianDerivatives {
            dq: DVector::from_vec(vec![0.0, 0.0, -p.beta * q[2], 0.0, 0.0, -p.alpha * q[5]]),
            dqd: diag.component_mul(&DVector::from_column_slice(qd)),
            mass: DMatrix::from_diagonal(&diag),
            mixed_qd: DVector::zeros(6),
        })
    }

    fn params(&self) -> BTreeMap<String, f64> {
        self.0.to_map()
    }
}

/// Greidanus rows, all first order:
///
/// ```text
/// ẏ₁ − ψ̇ cos(θ − ε) − ξ̇ sin θ − ξ θ̇ cos θ = 0
/// ẏ₂ − ψ̇ sin(θ − ε) + ξ̇ cos θ − ξ θ̇ sin θ = 0
/// θ̇ − ε̇ − ψ̇(αξ + βε) = 0
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GreidanusKinematic(pub GreidanusParams);

impl KinematicResidual for GreidanusKinematic {
    fn dim(&self) -> usize {
        6
    }

    fn row_orders(&self) -> Vec<usize> {
        vec![1, 1, 1]
    }

    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let q = jet.deriv(0);
        let qd = jet.deriv(1);
        let (th, xi) = (q[1], q[5]);
        let phi = th - q[2];
        vec![
            qd[3] - qd[0] * phi.cos() - qd[5] * th.sin() - xi * th.cos() * qd[1],
            qd[4] - qd[0] * phi.sin() + qd[5] * th.cos() - xi * th.sin() * qd[1],
            qd[1] - qd[2] - qd[0] * (S::cst(self.0.alpha) * xi + S::cst(self.0.beta) * q[2]),
        ]
    }

    fn row_names(&self) -> Vec<String> {
        vec!["y1 rolling".into(), "y2 rolling".into(), "Greidanus steering".into()]
    }
}

/// `δy₁ − δψ cos θ − δξ sin θ − ξ cos θ δθ = 0`,
/// `δy₂ − δψ sin θ + δξ cos θ − ξ sin θ δθ = 0`, `δθ − δε = 0`.
#[derive(Clone, Copy, Debug)]
pub struct GreidanusVariations;

impl VariationalRows for GreidanusVariations {
    fn dim(&self) -> usize {
        6
    }

    fn rows(&self) -> usize {
        3
    }

    fn order(&self) -> usize {
        0
    }

    fn matrix(&self, jet: &JetPoint<f64>) -> DMatrix<f64> {
        let q = jet.q();
        let (c, s, xi) = (q[1].cos(), q[1].sin(), q[5]);
        DMatrix::from_row_slice(
            3,
            6,
            &[
                -c, -xi * c, 0.0, 1.0, 0.0, -s, //
                -s, -xi * s, 0.0, 0.0, 1.0, c, //
                0.0, 1.0, -1.0, 0.0, 0.0, 0.0,
            ],
        )
    }
}

pub type GreidanusTire = NonholonomicSystem<GreidanusLagrangian, GreidanusKinematic, GreidanusVariations>;

/// Greidanus' tire model: all kinematic rows first order, variational rows
/// different from them (not D'Alembert).
pub fn greidanus_tire(p: GreidanusParams) -> Result<GreidanusTire> {
    p.validate()?;
    let diagnostics = Diagnostics {
        monitor: Some((ROCARD_MONITOR.into(), Arc::new(|q: &[f64], qd: &[f64]| q[2] * (qd[1] - qd[2])))),
        ..Diagnostics::default()
    };
    Ok(NonholonomicSystem::new(
        LagrangianSpec::automatic(GreidanusLagrangian(p)),
        KinematicConstraintSet::new(GreidanusKinematic(p))?,
        VariationalConstraintSet::new(GreidanusVariations),
        Chart::new(&["psi", "theta", "epsilon", "y1", "y2", "xi"], &["rad", "rad", "rad", "m", "m", "m"]),
    )?
    .with_notes("Greidanus tire: lateral deformation xi with stiffness alpha")
    .with_diagnostics(diagnostics))
}

/// Contact-centre position `x = y − ξ(sin θ, −cos θ)` of a Greidanus state.
pub fn greidanus_contact(q: &[f64]) -> [f64; 2] {
    [q[3] - q[5] * q[1].sin(), q[4] + q[5] * q[1].cos()]
}

/// Rocard lateral-force curvature matched to a Greidanus tire in the limit
/// of large `α` at rolling speed `ψ̇`: `a = Mψ̇²β / (1 − Mψ̇²)`.
///
/// The limit equates `ψ̇(θ̇ − ε̇)` in both models for small `ε`; it requires
/// `Mψ̇² < 1`.
pub fn matched_rocard_a(m: f64, beta: f64, psi_dot: f64) -> Result<f64> {
    let s = m * psi_dot * psi_dot;
    if !(s < 1.0) {
        return Err(Error::Config(format!("matched Rocard law needs M psi_dot^2 < 1, got {s}")));
    }
    Ok(s * beta / (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{solve_state, ConstrainedDynamics, SolveOptions};

    #[test]
    fn ball_reference_state_is_stationary() {
        for f in [BallFormulation::Omega3Zero, BallFormulation::CurvatureSecondOrder] {
            let sys = elastic_ball(BallParams::default(), f).unwrap();
            let sol = solve_state(&sys, &[], &[0.0, 1.0, 0.0, 1.0, 0.0], &SolveOptions::default()).unwrap();
            assert!(sol.vdot.amax() < 1e-14, "{f:?}: {}", sol.vdot);
            assert!(sol.residual < 1e-14);
        }
    }

    #[test]
    fn ball_residuals_by_substitution() {
        let sys = elastic_ball(BallParams::default(), BallFormulation::Omega3Zero).unwrap();
        assert_eq!(sys.kinematic_residual(&[], &[0.0, 1.0, 0.5, 1.0, 0.0], &[0.0; 5]), vec![0.0, 0.0, 0.5]);
    }

    #[test]
    fn rocard_domain_guard_names_sign() {
        let sys = rocard_tire(RocardParams::default()).unwrap();
        let err = sys.domain_check(&[0.0; 5], &[0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Domain { ref guard } if guard.contains("sign(psi_dot)")));
        let err = sys.domain_check(&[0.0, 0.0, 0.4, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { ref guard } if guard.contains("epsilon")));
    }

    #[test]
    fn rocard_straight_rolling() {
        let sys = rocard_tire(RocardParams::default()).unwrap();
        let sol = solve_state(&sys, &[0.0; 5], &[2.0, 0.0, 0.0, 2.0, 0.0], &SolveOptions::default()).unwrap();
        assert!(sol.vdot.amax() < 1e-14);
        assert!(sol.v[2].abs() < 1e-14);
    }

    #[test]
    fn matched_law() {
        assert!((matched_rocard_a(1.0, 1.0, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matched_rocard_a(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(rocard_tire(RocardParams { k: 0.0, ..Default::default() }).is_err());
        assert!(elastic_ball(BallParams { mass: -1.0, ..Default::default() }, BallFormulation::Omega3Zero).is_err());
    }
}
