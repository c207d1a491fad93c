//! Worked examples with hand-derived or closed-form answers, one per
//! documented behaviour of the public operations.

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use hocon::assembler::{assemble, euler_lagrange, lift_kinematic, solve, AssemblyOptions, Gains, SOLVE_TOL};
use hocon::dynamics::{solve_state, ConstrainedDynamics, SolveOptions};
use hocon::integrator::{check_initial, energy_audit, integrate, project_poststep, IntegratorOptions};
use hocon::models::*;
use hocon::reduction::{
    Factor, LieGroupSpec, Orientation, ReducedKinematic, ReducedLagrangian, ReducedSystem, ReducedVariations,
};
use hocon::system::*;
use hocon::{Error, Jet, JetPoint, Scalar};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

struct Kinetic(usize);

impl Lagrangian for Kinetic {
    fn dim(&self) -> usize {
        self.0
    }
    fn value<S: Scalar>(&self, _q: &[S], qd: &[S]) -> S {
        qd.iter().fold(S::cst(0.0), |a, &x| a + S::cst(0.5) * x * x)
    }
}

/// `½|q̇|² − ½|q|²`
struct Oscillator(usize);

impl Lagrangian for Oscillator {
    fn dim(&self) -> usize {
        self.0
    }
    fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
        (0..self.0).fold(S::cst(0.0), |a, i| a + S::cst(0.5) * (qd[i] * qd[i] - q[i] * q[i]))
    }
}

/// Vertical knife edge in `(x₁, x₂, θ)`: `sin θ ẋ₁ − cos θ ẋ₂ = 0`.
struct KnifeEdge;

impl Distribution for KnifeEdge {
    fn dim(&self) -> usize {
        3
    }
    fn rows(&self) -> usize {
        1
    }
    fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<Vec<S>> {
        vec![vec![q[2].sin(), -q[2].cos(), S::cst(0.0)]]
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
fn knife_edge_dalembert_rows_and_kernel() {
    let sys = make_dalembert(LagrangianSpec::automatic(Kinetic(3)), KnifeEdge).unwrap();
    assert_eq!(sys.kinematic.order(), 1);
    let mut r = rng();
    for _ in 0..10 {
        let q: Vec<f64> = (0..3).map(|_| r.gen_range(-3.0..3.0)).collect();
        let qd: Vec<f64> = (0..3).map(|_| r.gen_range(-3.0..3.0)).collect();
        let jet = Jet::from_state(&q, &qd);
        let rk = sys.kinematic.eval(&jet).unwrap();
        assert_abs_diff_eq!(rk[0], qd[0] * q[2].sin() - qd[1] * q[2].cos(), epsilon = 1e-15);
        let (_, rank) = evaluate_residuals(&sys, &jet).unwrap();
        assert_eq!(rank, 1);
        let kernel = sys.variational.admissible_basis(&jet).unwrap();
        assert_eq!(kernel.ncols(), 2);
        assert!((sys.variational.matrix(&jet).unwrap() * kernel).amax() < 1e-14);
    }
}

#[test]
fn zero_row_distribution_is_unconstrained() {
    let sys = make_dalembert(LagrangianSpec::automatic(Oscillator(2)), NoRows(2)).unwrap();
    let sol = solve_state(&sys, &[1.0, -0.5], &[0.3, 0.2], &SolveOptions::default()).unwrap();
    assert_abs_diff_eq!(sol.vdot[0], -1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(sol.vdot[1], 0.5, epsilon = 1e-14);
    assert_eq!(sol.lambda.len(), 0);
}

#[test]
fn dalembert_rolling_ball_has_constant_angular_velocity() {
    let sys = flat_rolling_ball(BallParams { inertia: 0.4, mass: 2.0 }).unwrap();
    let mut r = rng();
    for _ in 0..10 {
        let w: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let q: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let sol = solve_state(&sys, &q, &[w[0], w[1], w[2], w[1], -w[0]], &SolveOptions::default()).unwrap();
        assert!(sol.vdot.amax() < 1e-14, "{}", sol.vdot);
    }
}

/// Ball rows in the flat chart `(φ, a)`: `φ̇₂ − ȧ₁`, `−φ̇₁ − ȧ₂`, `φ̇₃`.
struct BallRows;

impl KinematicResidual for BallRows {
    fn dim(&self) -> usize {
        5
    }
    fn row_orders(&self) -> Vec<usize> {
        vec![1, 1, 1]
    }
    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let v = jet.deriv(1);
        vec![v[1] - v[3], -v[0] - v[4], v[2]]
    }
}

#[test]
fn chetaev_of_ball_rows_is_their_coefficient_matrix() {
    let sys = make_chetaev(LagrangianSpec::automatic(Kinetic(5)), KinematicConstraintSet::new(BallRows).unwrap())
        .unwrap();
    let rv = sys.variational.matrix(&Jet::from_state(&[0.1; 5], &[0.3, -0.2, 0.5, 0.7, 0.1])).unwrap();
    #[rustfmt::skip]
    let expect = DMatrix::from_row_slice(3, 5, &[
        0.0, 1.0, 0.0, -1.0, 0.0,
        -1.0, 0.0, 0.0, 0.0, -1.0,
        0.0, 0.0, 1.0, 0.0, 0.0,
    ]);
    assert_eq!(rv, expect);
}

/// `q̈₁² − q̈₂`
struct NonAffineSecond;

impl KinematicResidual for NonAffineSecond {
    fn dim(&self) -> usize {
        2
    }
    fn row_orders(&self) -> Vec<usize> {
        vec![2]
    }
    fn highest_affine(&self) -> bool {
        false
    }
    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let a = jet.deriv(2);
        vec![a[0] * a[0] - a[1]]
    }
}

/// `φ̇₁φ̈₂ − φ̇₂φ̈₁ − φ̇₃(φ̇₁² + φ̇₂²)` in the flat ball chart.
struct Curvature;

impl KinematicResidual for Curvature {
    fn dim(&self) -> usize {
        5
    }
    fn row_orders(&self) -> Vec<usize> {
        vec![2]
    }
    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let (w, a) = (jet.deriv(1), jet.deriv(2));
        vec![w[0] * a[1] - w[1] * a[0] - w[2] * (w[0] * w[0] + w[1] * w[1])]
    }
}

#[test]
fn second_order_chetaev_rows() {
    let sys = make_chetaev_second_order(
        LagrangianSpec::automatic(Kinetic(2)),
        KinematicConstraintSet::new(NonAffineSecond).unwrap(),
    )
    .unwrap();
    let jet = Jet::from_second_order(&[0.0, 0.0], &[1.0, 2.0], &[0.75, -0.4]);
    let rv = sys.variational.matrix(&jet).unwrap();
    assert_abs_diff_eq!(rv[(0, 0)], 1.5, epsilon = 1e-15);
    assert_abs_diff_eq!(rv[(0, 1)], -1.0, epsilon = 1e-15);

    let sys = make_chetaev_second_order(
        LagrangianSpec::automatic(Kinetic(5)),
        KinematicConstraintSet::new(Curvature).unwrap(),
    )
    .unwrap();
    let w = [0.3, -0.8, 0.2, 0.0, 0.0];
    let rv = sys.variational.matrix(&Jet::from_second_order(&[0.0; 5], &w, &[0.5, 0.1, -0.3, 0.0, 0.0])).unwrap();
    assert_eq!(rv, DMatrix::from_row_slice(1, 5, &[0.8, 0.3, 0.0, 0.0, 0.0]));
}

#[test]
fn chetaev_needs_matching_order() {
    let first = KinematicConstraintSet::new(BallRows).unwrap();
    assert!(matches!(
        make_chetaev_second_order(LagrangianSpec::automatic(Kinetic(5)), first),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_affine_rows_are_detected() {
    let k = KinematicConstraintSet::new(NonAffineSecond).unwrap();
    let jet = Jet::from_second_order(&[0.0, 0.0], &[1.0, 2.0], &[0.75, -0.4]);
    assert!(k.affinity_defect(&jet) > 0.1);
    let sys = NonholonomicSystem::new(
        LagrangianSpec::automatic(Kinetic(2)),
        k,
        VariationalConstraintSet::new(DistributionVariations(Arc::new(NoRows(2)))),
        Chart::generic(2),
    )
    .unwrap();
    let r = assemble(&sys, &[0.0, 0.0], &[1.0, 2.0], &AssemblyOptions::default());
    assert!(matches!(r, Err(Error::NotAffine { row: 0 })), "{r:?}");
}

#[test]
fn rocard_residual_at_inflection() {
    let sys = rocard_tire(RocardParams::default()).unwrap();
    // ε = 0 and θ̇ = ε̇: the third row vanishes whatever ψ̈ is.
    let jet = Jet::from_second_order(&[0.4, 0.2, 0.0, 1.0, 2.0], &[3.0, 0.7, 0.7, 3.0 * 0.2f64.cos(), 3.0 * 0.2f64.sin()], &[
        1.3, 0.0, 0.0, 0.0, 0.0,
    ]);
    let (kin, rank) = evaluate_residuals(&sys, &jet).unwrap();
    assert_eq!(rank, 3);
    assert!(kin.iter().all(|r| r.abs() < 1e-15), "{kin:?}");
    assert!(matches!(
        evaluate_residuals(&sys, &Jet::from_state(&[0.0; 5], &[1.0; 5])),
        Err(Error::JetOrder { need: 2, got: 1 })
    ));
}

#[test]
fn euler_lagrange_examples() {
    let spec = LagrangianSpec::automatic(Kinetic(3));
    let el = euler_lagrange(&spec, &Jet::from_second_order(&[1.0, 2.0, 3.0], &[0.4, -0.2, 0.9], &[0.0; 3])).unwrap();
    assert_eq!(el.amax(), 0.0);

    let p = RocardParams { j: 2.5, k: 3.0, ..Default::default() };
    let spec = LagrangianSpec::automatic(RocardLagrangian(p));
    let eps = 0.1;
    let el = euler_lagrange(
        &spec,
        &Jet::from_second_order(&[0.0, 0.0, eps, 0.0, 0.0], &[1.0, 0.5, 0.2, 1.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0]),
    )
    .unwrap();
    assert_abs_diff_eq!(el[1], p.j, epsilon = 1e-14);
    assert_abs_diff_eq!(el[2], p.k * eps, epsilon = 1e-14);
}

#[test]
fn lifted_rocard_rows() {
    let sys = rocard_tire(RocardParams::default()).unwrap();
    let (th, e): (f64, f64) = (0.4, 0.1);
    let (psid, thd, ed) = (2.0, 0.3, -0.2);
    let q = [0.0, th, e, 0.0, 0.0];
    let qd = [psid, thd, ed, psid * (th - e).cos(), psid * (th - e).sin()];
    let (a, b) = lift_kinematic(&sys.kinematic, &q, &qd, Gains::default()).unwrap();
    // d/dt(ẋ₁ − ψ̇ cos(θ − ε)) = ẍ₁ − ψ̈ cos(θ − ε) + ψ̇ sin(θ − ε)(θ̇ − ε̇); rows read A q̈ + b = 0.
    assert_abs_diff_eq!(a[(0, 0)], -(th - e).cos(), epsilon = 1e-15);
    assert_abs_diff_eq!(a[(0, 3)], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(b[0], psid * (th - e).sin() * (thd - ed), epsilon = 1e-14);
    // Finite-difference check along a curve through the state.
    let qdd = [0.3, -0.1, 0.2, 0.5, -0.4];
    let row = |t: f64| {
        let qt: Vec<f64> = (0..5).map(|i| q[i] + t * qd[i] + 0.5 * t * t * qdd[i]).collect();
        let vt: Vec<f64> = (0..5).map(|i| qd[i] + t * qdd[i]).collect();
        vt[3] - vt[0] * (qt[1] - qt[2]).cos()
    };
    let h = 1e-6;
    let fd = (row(h) - row(-h)) / (2.0 * h);
    let lifted = (0..5).map(|i| a[(0, i)] * qdd[i]).sum::<f64>() + b[0];
    assert_abs_diff_eq!(fd, lifted, epsilon = 1e-8);

    // The third row is already second order and enters unlifted; at ε = 0
    // it loses its ψ̈ term and reads ψ̇(θ̇ − ε̇) = 0.
    let q0 = [0.0, th, 0.0, 0.0, 0.0];
    let (a, b) = lift_kinematic(&sys.kinematic, &q0, &qd, Gains::default()).unwrap();
    assert_eq!(a.row(2).amax(), 0.0);
    assert_abs_diff_eq!(b[2], psid * (thd - ed), epsilon = 1e-15);
    let (a, _) = lift_kinematic(&sys.kinematic, &q, &qd, Gains::default()).unwrap();
    assert_abs_diff_eq!(a[(2, 0)], -e.tan(), epsilon = 1e-15);
}

#[test]
fn oscillator_assembly_and_solve() {
    let sys = make_dalembert(LagrangianSpec::automatic(Oscillator(1)), NoRows(1)).unwrap();
    let acc = assemble(&sys, &[1.0], &[0.0], &AssemblyOptions::default()).unwrap();
    let sol = solve(&acc, SOLVE_TOL).unwrap();
    assert_abs_diff_eq!(sol.qdd[0], -1.0, epsilon = 1e-15);
    assert!(sol.lambda.is_empty());
}

#[test]
fn ball_formulations_give_the_same_accelerations_and_multipliers() {
    let p = BallParams { inertia: 0.4, mass: 1.3 };
    let a = elastic_ball(p, BallFormulation::Omega3Zero).unwrap();
    let b = elastic_ball(p, BallFormulation::CurvatureSecondOrder).unwrap();
    let mut r = rng();
    for _ in 0..20 {
        let (w1, w2) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let v = [w1, w2, 0.0, w2, -w1];
        let sa = solve_state(&a, &[], &v, &SolveOptions::default()).unwrap();
        let sb = solve_state(&b, &[], &v, &SolveOptions::default()).unwrap();
        assert!((&sa.vdot - &sb.vdot).amax() < 1e-9);
        assert!((&sa.lambda - &sb.lambda).amax() < 1e-9);
        assert!(sa.vdot.amax() < 1e-14);
    }
}

#[test]
fn initial_state_checks() {
    let ball = elastic_ball(BallParams::default(), BallFormulation::Omega3Zero).unwrap();
    let opts = IntegratorOptions::default();
    assert!(check_initial(&ball, &[], &[0.0, 1.0, 0.0, 1.0, 0.0], &opts).is_ok());
    match check_initial(&ball, &[], &[0.0, 1.0, 0.0, 0.0, 0.0], &opts) {
        Err(Error::InconsistentState { rows }) => {
            assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0]);
        }
        other => panic!("{other:?}"),
    }
    match check_initial(&ball, &[], &[1.0, 1.0, 0.0, 0.0, 0.0], &opts) {
        Err(Error::InconsistentState { rows }) => {
            assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1]);
        }
        other => panic!("{other:?}"),
    }
    let roc = rocard_tire(RocardParams::default()).unwrap();
    let r = check_initial(&roc, &[0.0; 5], &[0.0; 5], &opts);
    assert!(matches!(r, Err(Error::Domain { guard }) if guard.contains("sign(psi_dot)")));
}

#[test]
fn rocard_energy_never_increases() {
    let sys = rocard_tire(RocardParams::default()).unwrap();
    let e = 0.02f64;
    let (q, v) = ([0.0, 0.0, e, 0.0, 0.0], [5.0, 0.0, 0.0, 5.0 * e.cos(), -5.0 * e.sin()]);
    let t = integrate(&sys, &q, &v, 2.0, &IntegratorOptions::default()).unwrap();
    assert!(t.energy.windows(2).all(|w| w[1] - w[0] <= 1e-10));
    assert!(t.energy.last().unwrap() < &t.energy[0]);
    assert!(t.monitor.iter().all(|&m| m >= -1e-12));
    assert_eq!(t.monitor_name.as_deref(), Some(ROCARD_MONITOR));
    let audit = energy_audit(&sys, &t);
    assert!(audit.max_rate_minus_predicted.unwrap() < 1e-6 * e * e / (0.05 * 0.05) * 10.0);
}

#[test]
fn energy_rate_vanishes_at_rest() {
    let sys = flat_rolling_ball(BallParams::default()).unwrap();
    let t = integrate(&sys, &[0.1; 5], &[0.0; 5], 0.1, &IntegratorOptions { dt: 0.01, ..Default::default() }).unwrap();
    let a = energy_audit(&sys, &t);
    assert_eq!(a.max_abs_rate, 0.0);
    assert_eq!(a.energy_drift, 0.0);
}

#[test]
fn projection_examples() {
    let ball = elastic_ball(BallParams::default(), BallFormulation::Omega3Zero).unwrap();
    let on = [0.0, 1.0, 0.0, 1.0, 0.0];
    assert_eq!(project_poststep(&ball, &[], &on, 1e-9).unwrap().1, on.to_vec());
    let (_, v) = project_poststep(&ball, &[], &[0.0, 1.0, 0.0, 1.0 + 1e-6, 0.0], 1e-9).unwrap();
    assert!(ball.velocity_constraints(&[], &v).max_abs() < 1e-12);

    let roc = rocard_tire(RocardParams { i: 2.0, m: 0.5, ..Default::default() }).unwrap();
    let (th, e, psid): (f64, f64, f64) = (0.3, 0.05, 2.0);
    let q = [0.0, th, e, 0.0, 0.0];
    let v0 = [psid, 0.1, 0.0, psid * (th - e).cos() + 1e-5, psid * (th - e).sin()];
    let (_, v) = project_poststep(&roc, &q, &v0, 1e-9).unwrap();
    let vc = roc.velocity_constraints(&q, &v);
    assert!(vc.max_abs() < 1e-12);
    // KKT: the correction, in the mass metric, is normal to the constraint surface.
    let dv = DVector::from_iterator(5, v.iter().zip(&v0).map(|(a, b)| a - b));
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0, 0.5, 0.5]));
    let g = w * &dv;
    let j = &vc.jacobian;
    let (mu, _) = hocon::assembler::least_squares(&j.transpose(), &g).unwrap();
    assert!((j.transpose() * mu - g).amax() < 1e-12);
    assert!(dv[3] < 0.0 && dv[0] > 0.0);
}

/// `l = ½ Σ Iᵢωᵢ²` on so(3), no constraints.
struct Body([f64; 3]);

impl ReducedLagrangian for Body {
    fn value<S: Scalar>(&self, _s: &[S], u: &[S]) -> S {
        (0..3).fold(S::cst(0.0), |a, i| a + S::cst(0.5 * self.0[i]) * u[i] * u[i])
    }
}

struct Free;

impl ReducedKinematic for Free {
    fn row_orders(&self) -> Vec<usize> {
        Vec::new()
    }
    fn residual<S: Scalar>(&self, _s: &[S], _u: &[S], _udot: &[S]) -> Vec<S> {
        Vec::new()
    }
}

impl ReducedVariations for Free {
    fn rows(&self) -> usize {
        0
    }
    fn order(&self) -> usize {
        0
    }
    fn matrix(&self, _s: &[f64], _u: &[f64], _udot: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(0, 3)
    }
}

fn body(i: [f64; 3], o: Orientation) -> ReducedSystem<Body, Free, Free> {
    ReducedSystem::new(LieGroupSpec::new(vec![Factor::So3], o), Body(i), Free, Free, &["w1", "w2", "w3"], &[]).unwrap()
}

#[test]
fn free_rigid_body_about_a_principal_axis() {
    let sys = body([1.0, 1.0, 1.0], Orientation::Left);
    let el = sys.reduced_euler_lagrange(&[], &[0.0, 0.0, 1.0], &[0.0; 3]).unwrap();
    assert_eq!(el.amax(), 0.0);
}

#[test]
fn isotropic_ball_reduced_covector_vanishes() {
    let ball = elastic_ball(BallParams { inertia: 0.7, mass: 1.0 }, BallFormulation::Omega3Zero).unwrap();
    let el = ball.reduced_euler_lagrange(&[], &[0.3, -1.2, 0.8, 0.0, 0.0], &[0.0; 5]).unwrap();
    assert!(el.amax() < 1e-15);
    // Abelian block: d/dt ∂l/∂V = M V̇.
    let el = ball.reduced_euler_lagrange(&[], &[0.3, -1.2, 0.8, 0.5, 0.5], &[0.0, 0.0, 0.0, 2.0, -1.0]).unwrap();
    assert_abs_diff_eq!(el[3], 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(el[4], -1.0, epsilon = 1e-15);
}

#[test]
fn anisotropic_body_left_and_right_reductions() {
    // Left (body) reduction gives Euler's equations IΩ̇ = IΩ × Ω; right
    // (spatial) reduction flips the sign of the ad* term.
    let inertia = [1.0, 2.0, 3.5];
    let w = Vector3::new(0.4, -0.7, 1.1);
    let iw = Vector3::new(inertia[0] * w.x, inertia[1] * w.y, inertia[2] * w.z);
    let cross = iw.cross(&w);
    for (o, sign) in [(Orientation::Left, 1.0), (Orientation::Right, -1.0)] {
        let sys = body(inertia, o);
        let sol = solve_state(&sys, &[], w.as_slice(), &SolveOptions::default()).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(sol.vdot[i] * inertia[i], sign * cross[i], epsilon = 1e-14);
        }
    }
    let (l, r) = (body(inertia, Orientation::Left), body(inertia, Orientation::Right));
    let opts = IntegratorOptions { dt: 1e-3, ..Default::default() };
    let tl = integrate(&l, &[], w.as_slice(), 1.0, &opts).unwrap();
    let tr = integrate(&r, &[], w.as_slice(), 1.0, &opts).unwrap();
    let gap = (0..3).map(|i| (tl.states.last().unwrap().1[i] - tr.states.last().unwrap().1[i]).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-2, "anisotropic left/right runs should differ, gap {gap}");
    // Energy is conserved by both.
    assert!(energy_audit(&l, &tl).energy_drift < 1e-12);
    assert!(energy_audit(&r, &tr).energy_drift < 1e-12);
}

#[test]
fn moving_plane_with_still_plane_is_dalembert() {
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let sys = moving_plane_ball(p, hocon::reduction::AffineField::zero()).unwrap();
    let sol = solve_state(&sys, &[0.3, -0.2], &[0.2, 0.9, 0.4, 0.9, -0.2], &SolveOptions::default()).unwrap();
    assert!(sol.vdot.amax() < 1e-15);
    let t = integrate(&sys, &[0.3, -0.2], &[0.2, 0.9, 0.4, 0.9, -0.2], 1.0, &IntegratorOptions::default()).unwrap();
    assert!(t.power.iter().all(|p| p.abs() < 1e-14));
}
