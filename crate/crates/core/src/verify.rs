//! Verification suites: each runs a family of oracle comparisons and
//! reports measured values against fixed tolerances.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diff::{self, Dual64};
use crate::dynamics::{solve_state, SolveOptions};
use crate::error::{Error, Result};
use crate::integrator::{check_initial, energy_audit, integrate, IntegratorOptions, Trajectory};
use crate::jet::JetPoint;
use crate::models::*;
use crate::reduction::{
    moving_plane_rhs, reconstruct, so3_exp, AffineField, GroupElement, Orientation, ReducedKinematic,
    ReducedLagrangian,
};
use crate::scalar::Scalar;
use crate::system::{
    make_chetaev, make_chetaev_second_order, make_dalembert, Distribution, DistributionResidual,
    KinematicConstraintSet, KinematicResidual, Lagrangian, LagrangianDerivatives, LagrangianSpec,
};

/// How a measured value is judged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
    /// A yes/no property; the value is informational.
    Holds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
    /// Set when a failure is expected and explained; it does not fail the suite.
    pub deviation: Option<String>,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, bound: Bound) -> Self {
        let pass = match bound {
            Bound::AtMost(t) => value <= t,
            Bound::AtLeast(t) => value >= t,
            Bound::Between(a, b) => value >= a && value <= b,
            Bound::Holds => true,
        };
        Check { name: name.into(), value, bound, pass, deviation: None }
    }

    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value, Bound::AtMost(tol))
    }

    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self::new(name, value, Bound::AtLeast(min))
    }

    pub fn between(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, Bound::Between(lo, hi))
    }

    pub fn holds(name: impl Into<String>, ok: bool, value: f64) -> Self {
        let mut c = Self::new(name, value, Bound::Holds);
        c.pass = ok;
        c
    }

    /// Marks an anticipated failure with its explanation.
    pub fn known_deviation(mut self, why: impl Into<String>) -> Self {
        self.deviation = Some(why.into());
        self
    }

    /// Passed, or failed in the documented way.
    pub fn acceptable(&self) -> bool {
        self.pass || self.deviation.is_some()
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.pass, &self.deviation) {
            (true, _) => "PASS",
            (false, Some(_)) => "DEVIATION",
            (false, None) => "FAIL",
        };
        let bound = match self.bound {
            Bound::AtMost(t) => format!("<= {t:.1e}"),
            Bound::AtLeast(t) => format!(">= {t}"),
            Bound::Between(a, b) => format!("in [{a}, {b}]"),
            Bound::Holds => String::new(),
        };
        write!(f, "{status:<9} {}: {:.3e} {bound}", self.name, self.value)?;
        if let (false, Some(why)) = (self.pass, &self.deviation) {
            write!(f, " ({why})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::acceptable)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {} ({:.1} s)", self.suite, self.seconds)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        write!(f, "{} {}", if self.passed() { "PASS" } else { "FAIL" }, self.suite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Full sample sizes and horizons; otherwise reduced ones.
    pub strict: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { strict: false, seed: 20_240_601 }
    }
}

impl VerifyOptions {
    fn pick(&self, strict: usize, quick: usize) -> usize {
        if self.strict {
            strict
        } else {
            quick
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

type SuiteFn = fn(&VerifyOptions) -> Result<Vec<Check>>;

/// Suite ids, one-line descriptions and implementations.
pub const SUITES: &[(&str, &str, SuiteFn)] = &[
    ("ball-constants", "elastic ball keeps omega and V constant; contact path is a line", ball_constants),
    ("ball-equivalence", "omega3 = 0 and curvature formulations agree on random data", ball_equivalence),
    ("dalembert-conservation", "D'Alembert systems conserve energy; constraint power vanishes", dalembert_conservation),
    ("rocard-energy", "Rocard energy rate against -(M psi_dot^2 + K) eps (theta_dot - eps_dot)", rocard_energy),
    ("tire-dynamics", "solved accelerations satisfy the tire dynamic equations", tire_dynamics),
    ("greidanus-limit", "Greidanus tire approaches Rocard's as alpha grows with K = beta", greidanus_limit),
    ("moving-plane-oracle", "ball on a moving plane against the closed-form equations", moving_plane_oracle),
    ("chetaev", "Chetaev rows reduce to D'Alembert's; homogeneity identity", chetaev),
    ("gradient-check", "automatic derivatives against central differences", gradient_check),
    ("rk4-convergence", "fourth-order global error of the RK4 integrator", rk4_convergence),
    ("constraint-drift", "velocity-level drift with post-step projection on every model", constraint_drift),
    ("reconstruction", "group reconstruction from algebra velocities", reconstruction),
];

/// Thread pool honouring `HOCON_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var("HOCON_THREADS") {
        let n: usize = s
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("HOCON_THREADS must be a positive integer, got `{s}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

pub fn run_suite(id: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let (_, _, f) = SUITES.iter().find(|s| s.0 == id).ok_or_else(|| {
        let ids: Vec<_> = SUITES.iter().map(|s| s.0).collect();
        Error::Config(format!("unknown suite `{id}` (known: {})", ids.join(", ")))
    })?;
    let start = Instant::now();
    let checks = thread_pool()?.install(|| f(opts))?;
    Ok(SuiteReport { suite: id.to_string(), checks, seconds: start.elapsed().as_secs_f64() })
}

fn sup_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .flat_map(|((qa, va), (qb, vb))| qa.iter().zip(qb).chain(va.iter().zip(vb)))
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

fn final_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let (qa, va) = a.states.last().unwrap();
    let (qb, vb) = b.states.last().unwrap();
    max_of(qa.iter().zip(qb).chain(va.iter().zip(vb)).map(|(x, y)| (x - y).abs()))
}

fn ball_velocity(w: [f64; 3]) -> Vec<f64> {
    vec![w[0], w[1], w[2], w[1], -w[0]]
}

/// Translation path of a reconstructed ball trajectory.
fn contact_path(sys: &BallSystem, traj: &Trajectory, dt: f64) -> Vec<DVector<f64>> {
    let vs: Vec<Vec<f64>> = traj.states.iter().map(|(_, v)| v.clone()).collect();
    reconstruct(&sys.group, &GroupElement::identity(&sys.group), &vs, dt)
        .into_iter()
        .map(|g| g.translations[0].clone())
        .collect()
}

/// Largest distance of the path from the chord joining its ends.
fn collinearity(path: &[DVector<f64>]) -> f64 {
    let (p0, p1) = (&path[0], &path[path.len() - 1]);
    let d = p1 - p0;
    let len = d.norm();
    if len == 0.0 {
        return max_of(path.iter().map(|p| (p - p0).norm()));
    }
    max_of(path.iter().map(|p| {
        let r = p - p0;
        (r[0] * d[1] - r[1] * d[0]).abs() / len
    }))
}

fn ball_constants(_o: &VerifyOptions) -> Result<Vec<Check>> {
    let opts = IntegratorOptions::default();
    let v0 = ball_velocity([0.0, 1.0, 0.0]);
    let runs: Vec<(BallFormulation, BallSystem, Trajectory)> = [BallFormulation::Omega3Zero, BallFormulation::CurvatureSecondOrder]
        .into_par_iter()
        .map(|f| {
            let sys = elastic_ball(BallParams::default(), f)?;
            let t = integrate(&sys, &[], &v0, 10.0, &opts)?;
            Ok((f, sys, t))
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for (f, sys, t) in &runs {
        let dw = max_of(t.states.iter().map(|(_, v)| Vector3::new(v[0] - v0[0], v[1] - v0[1], v[2] - v0[2]).norm()));
        let dv = max_of(t.states.iter().map(|(_, v)| ((v[3] - v0[3]).powi(2) + (v[4] - v0[4]).powi(2)).sqrt()));
        let path = contact_path(sys, t, opts.dt);
        checks.push(Check::at_most(format!("{f:?}: max |omega - omega0|"), dw, 1e-8));
        checks.push(Check::at_most(format!("{f:?}: max |V - V0|"), dv, 1e-8));
        checks.push(Check::at_most(format!("{f:?}: contact path off its chord"), collinearity(&path), 1e-8));
        let speed = max_of(t.states.iter().map(|(_, v)| (v[3].hypot(v[4]) - v[0].hypot(v[1])).abs()));
        checks.push(Check::at_most(format!("{f:?}: max ||V| - |(omega1, omega2)||"), speed, 1e-12));
    }
    Ok(checks)
}

fn ball_equivalence(o: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = o.rng(1);
    let n = o.pick(20, 5);
    let ics: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect();
    let opts = IntegratorOptions::default();
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let a = elastic_ball(p, BallFormulation::Omega3Zero)?;
    let b = elastic_ball(p, BallFormulation::CurvatureSecondOrder)?;
    let results: Vec<(f64, f64)> = ics
        .par_iter()
        .map(|w| {
            let v = ball_velocity(*w);
            let ta = integrate(&a, &[], &v, 10.0, &opts)?;
            let tb = integrate(&b, &[], &v, 10.0, &opts)?;
            Ok((sup_gap(&ta, &tb), max_of(tb.kin_residual.iter().copied())))
        })
        .collect::<Result<_>>()?;
    let mut checks = vec![
        Check::at_most(format!("sup gap over {n} random ICs, 10 s"), max_of(results.iter().map(|r| r.0)), 1e-7),
        Check::at_most("curvature row residual along solutions", max_of(results.iter().map(|r| r.1)), 1e-9),
    ];

    // Left and right reduction coincide for the isotropic ball.
    let w = ics[0];
    let left = elastic_ball_with(p, BallFormulation::Omega3Zero, Orientation::Left)?;
    let tl = integrate(&left, &[], &ball_velocity(w), 2.0, &opts)?;
    let tr = integrate(&a, &[], &ball_velocity(w), 2.0, &opts)?;
    checks.push(Check::at_most("left vs right reduction gap", sup_gap(&tl, &tr), 1e-12));

    // Flat chart (phi, a) against the reduced run reconstructed to the group.
    let flat = flat_rolling_ball(p)?;
    let tf = integrate(&flat, &[0.0; 5], &ball_velocity(w), 10.0, &opts)?;
    let tr = integrate(&a, &[], &ball_velocity(w), 10.0, &opts)?;
    let vel_gap = max_of(tf.states.iter().zip(&tr.states).flat_map(|((_, x), (_, y))| {
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>()
    }));
    let path = contact_path(&a, &tr, opts.dt);
    let pos_gap = max_of(tf.states.iter().zip(&path).map(|((q, _), g)| (q[3] - g[0]).abs().max((q[4] - g[1]).abs())));
    checks.push(Check::at_most("flat chart vs reduced: velocities", vel_gap, 1e-8));
    checks.push(Check::at_most("flat chart vs reconstructed contact point", pos_gap, 1e-8));
    Ok(checks)
}

fn dalembert_conservation(o: &VerifyOptions) -> Result<Vec<Check>> {
    let opts = IntegratorOptions::default();
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let rigid = rigid_ball_dalembert(p)?;
    let t = integrate(&rigid, &[], &ball_velocity([0.3, 1.0, 0.0]), 10.0, &opts)?;
    let audit = energy_audit(&rigid, &t);
    let mut checks = vec![
        Check::at_most("rigid ball |E(t) - E(0)|, 10 s", audit.energy_drift, 1e-8),
        Check::at_most("rigid ball max |lambda . R_V v|", max_of(t.power.iter().map(|x| x.abs())), 1e-12),
    ];
    let spin = check_initial(&rigid, &[], &[0.0, 1.0, 0.3, 1.0, 0.0], &opts);
    let rejected = matches!(&spin, Err(Error::InconsistentState { rows }) if rows.iter().any(|r| r.0 == 2));
    checks.push(Check::holds("omega3 = 0.3 rejected by the no-spin row", rejected, 0.3));

    let v = ball_velocity([0.0, 1.0, 0.0]);
    let tr = integrate(&rigid, &[], &v, 10.0, &opts)?;
    let te = integrate(&elastic_ball(p, BallFormulation::Omega3Zero)?, &[], &v, 10.0, &opts)?;
    checks.push(Check::at_most("rigid vs elastic ball, omega0 = (0, 1, 0)", sup_gap(&tr, &te), 1e-8));

    // D'Alembert ball in the flat chart, free spin allowed.
    let mut rng = o.rng(2);
    let flat = flat_rolling_ball(p)?;
    let w = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let tf = integrate(&flat, &[0.0; 5], &ball_velocity(w), 10.0, &opts)?;
    let af = energy_audit(&flat, &tf);
    checks.push(Check::at_most("flat D'Alembert ball |E(t) - E(0)|", af.energy_drift, 1e-8));
    checks.push(Check::at_most("flat D'Alembert ball max |power|", max_of(tf.power.iter().map(|x| x.abs())), 1e-12));
    Ok(checks)
}

/// Straight rolling start: `θ = θ̇ = 0`, twist `ε`, velocity along `θ − ε`.
pub fn rocard_initial(psi_dot: f64, eps: f64) -> (Vec<f64>, Vec<f64>) {
    (
        vec![0.0, 0.0, eps, 0.0, 0.0],
        vec![psi_dot, 0.0, 0.0, psi_dot * eps.cos(), -psi_dot * eps.sin()],
    )
}

/// Greidanus start with `ξ` at its quasi-static value for twist `ε` and
/// `θ̇ = ξ̇ = 0`.
pub fn greidanus_initial(p: &GreidanusParams, psi_dot: f64, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let s = p.m * psi_dot * psi_dot;
    let xi = s * p.beta * eps / (p.alpha * (1.0 - s));
    let phi_dot = psi_dot * (p.alpha * xi + p.beta * eps);
    (
        vec![0.0, 0.0, eps, 0.0, -xi, xi],
        vec![psi_dot, 0.0, -phi_dot, psi_dot * eps.cos(), -psi_dot * eps.sin(), 0.0],
    )
}

fn rocard_energy(_o: &VerifyOptions) -> Result<Vec<Check>> {
    let sys = rocard_tire(RocardParams::default())?;
    let opts = IntegratorOptions::default();
    let runs: Vec<(f64, f64, f64, f64, f64)> = [0.05, 0.025]
        .into_par_iter()
        .map(|eb| {
            let (q, v) = rocard_initial(5.0, eb);
            let t = integrate(&sys, &q, &v, 10.0, &opts)?;
            let a = energy_audit(&sys, &t);
            let defect = a.max_rate_minus_predicted.unwrap_or(f64::NAN);
            let monotone = max_of(
                (0..t.len() - 1)
                    .filter(|&k| t.monitor[k] >= 0.0 && t.monitor[k + 1] >= 0.0)
                    .map(|k| t.energy[k + 1] - t.energy[k]),
            );
            let eps_max = max_of(t.states.iter().map(|(q, _)| q[2].abs()));
            Ok((eb, defect, monotone, a.max_rate_minus_power, eps_max))
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for &(eb, defect, monotone, power, eps_max) in &runs {
        checks.push(Check::holds(format!("eps {eb}: max |eps(t)|"), true, eps_max));
        checks.push(Check::at_most(format!("eps {eb}: max |dE/dt - rate| / eps^2"), defect / (eb * eb), 1e-2));
        checks.push(Check::at_most(format!("eps {eb}: E increase per step on monitor >= 0"), monotone, 1e-10));
        checks.push(Check::at_most(format!("eps {eb}: max |dE/dt - lambda.R_V v|"), power, 1e-6));
    }
    let ratio = runs[0].1 / runs[1].1;
    checks.push(Check::at_least("defect ratio eps 0.05 / 0.025 (at least quadratic)", ratio, 3.0));
    checks.push(
        Check::between("defect ratio eps 0.05 / 0.025", ratio, 3.0, 5.0)
            .known_deviation("the neglected terms are O(eps^4), so halving eps divides the defect by ~16"),
    );
    Ok(checks)
}

fn tire_dynamics(o: &VerifyOptions) -> Result<Vec<Check>> {
    let n = o.pick(100, 25);
    let mut rng = o.rng(3);
    let mut samples = Vec::new();
    for _ in 0..n {
        let p = RocardParams {
            i: rng.gen_range(0.5..2.0),
            j: rng.gen_range(0.5..2.0),
            m: rng.gen_range(0.5..2.0),
            k: rng.gen_range(0.5..2.0),
            a_coef: rng.gen_range(0.5..2.0),
        };
        let th: f64 = rng.gen_range(-3.0..3.0);
        let eps: f64 = rng.gen_range(-0.25..0.25);
        let psid: f64 = rng.gen_range(0.5..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let q = vec![rng.gen_range(-3.0..3.0), th, eps, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let v = vec![psid, rng.gen_range(-1.0..1.0), 0.0, psid * (th - eps).cos(), psid * (th - eps).sin()];
        let g = GreidanusParams {
            i: p.i,
            j: p.j,
            m: p.m,
            alpha: rng.gen_range(1.0..100.0),
            beta: rng.gen_range(0.5..2.0),
        };
        let xi: f64 = rng.gen_range(-0.1..0.1);
        let (thd, xid): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let epsd = thd - psid * (g.alpha * xi + g.beta * eps);
        let (c, s) = (th.cos(), th.sin());
        let gq = vec![q[0], th, eps, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), xi];
        let gv = vec![
            psid,
            thd,
            epsd,
            psid * (th - eps).cos() + xid * s + xi * c * thd,
            psid * (th - eps).sin() - xid * c + xi * s * thd,
            xid,
        ];
        samples.push((p, q, v, g, gq, gv));
    }
    let errs: Vec<[f64; 5]> = samples
        .par_iter()
        .map(|(p, q, v, g, gq, gv)| {
            let sol = solve_state(&rocard_tire(*p)?, q, v, &SolveOptions::default())?;
            let a = sol.vdot.as_slice();
            let th = q[1];
            let e1 = p.i * a[0] + p.m * (a[3] * th.cos() + a[4] * th.sin());
            let e2 = p.j * a[1] + p.k * q[2];
            let sol = solve_state(&greidanus_tire(*g)?, gq, gv, &SolveOptions::default())?;
            let a = sol.vdot.as_slice();
            let (c, s, xi) = (gq[1].cos(), gq[1].sin(), gq[5]);
            let along = g.m * (a[3] * c + a[4] * s);
            let g1 = g.i * a[0] + along;
            let g2 = g.j * a[1] + g.beta * gq[2] + xi * along;
            let g3 = g.alpha * xi + g.m * (a[3] * s - a[4] * c);
            Ok([e1.abs(), e2.abs(), g1.abs(), g2.abs(), g3.abs()])
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| max_of(errs.iter().map(|e| e[i]));
    Ok(vec![
        Check::at_most(format!("Rocard: I psi'' + M(x1'' cos th + x2'' sin th), {n} states"), col(0), 1e-9),
        Check::at_most(format!("Rocard: J th'' + K eps, {n} states"), col(1), 1e-9),
        Check::at_most("Greidanus: I psi'' + M(y1'' cos th + y2'' sin th)", col(2), 1e-9),
        Check::at_most("Greidanus: J th'' + beta eps + M xi (y1'' cos th + y2'' sin th)", col(3), 1e-9),
        Check::at_most("Greidanus: alpha xi + M(y1'' sin th - y2'' cos th)", col(4), 1e-9),
    ])
}

/// Greidanus runs at `α = 10², 10³, 10⁴` against the matched Rocard run.
/// Returns `(α, max|ξ|, gap in (ψ, θ, ε), gap in contact point, max ΔE per step)`.
pub fn greidanus_sweep(psi_dot: f64, eps: f64, t_end: f64) -> Result<Vec<(f64, f64, f64, f64, f64)>> {
    let beta = 1.0;
    let a = matched_rocard_a(1.0, beta, psi_dot)?;
    let roc = rocard_tire(RocardParams { k: beta, a_coef: a, ..Default::default() })?;
    let opts = IntegratorOptions::default();
    let (q, v) = rocard_initial(psi_dot, eps);
    let rt = integrate(&roc, &q, &v, t_end, &opts)?;
    [1e2, 1e3, 1e4]
        .into_par_iter()
        .map(|alpha| {
            let p = GreidanusParams { alpha, beta, ..Default::default() };
            let sys = greidanus_tire(p)?;
            let (q, v) = greidanus_initial(&p, psi_dot, eps);
            let gt = integrate(&sys, &q, &v, t_end, &opts)?;
            let xi = max_of(gt.states.iter().map(|(q, _)| q[5].abs()));
            let gap = max_of(gt.states.iter().zip(&rt.states).flat_map(|((a, _), (b, _))| {
                (0..3).map(|i| (a[i] - b[i]).abs()).collect::<Vec<_>>()
            }));
            let xgap = max_of(gt.states.iter().zip(&rt.states).map(|((a, _), (b, _))| {
                let x = greidanus_contact(a);
                (x[0] - b[3]).abs().max((x[1] - b[4]).abs())
            }));
            let rise = max_of(gt.energy.windows(2).map(|w| w[1] - w[0]));
            Ok((alpha, xi, gap, xgap, rise))
        })
        .collect()
}

fn greidanus_limit(_o: &VerifyOptions) -> Result<Vec<Check>> {
    let runs = greidanus_sweep(0.5, 0.005, 10.0)?;
    let mut checks = Vec::new();
    for r in &runs {
        checks.push(Check::holds(format!("alpha {:.0e}: max |xi|", r.0), true, r.1));
        checks.push(Check::holds(format!("alpha {:.0e}: sup gap (psi, theta, eps) vs Rocard", r.0), true, r.2));
        checks.push(Check::holds(format!("alpha {:.0e}: sup gap contact point vs Rocard", r.0), true, r.3));
    }
    let decreasing = |f: fn(&(f64, f64, f64, f64, f64)) -> f64| runs.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let last_ratio = |f: fn(&(f64, f64, f64, f64, f64)) -> f64| f(&runs[1]) / f(&runs[2]);
    checks.push(Check::holds("max |xi| strictly decreasing in alpha", decreasing(|r| r.1), last_ratio(|r| r.1)));
    checks.push(Check::holds("(psi, theta, eps) gap decreasing in alpha", decreasing(|r| r.2), last_ratio(|r| r.2)));
    checks.push(Check::holds("contact-point gap decreasing in alpha", decreasing(|r| r.3), last_ratio(|r| r.3)));
    checks.push(Check::at_most("alpha 1e4: E increase per step", runs[2].4, 1e-10));
    checks.push(Check::at_most("alpha 1e3: E increase per step", runs[1].4, 1e-10));
    Ok(checks)
}

fn moving_plane_oracle(o: &VerifyOptions) -> Result<Vec<Check>> {
    let n = o.pick(100, 25);
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let mut rng = o.rng(4);
    let states: Vec<([f64; 3], [f64; 2])> = (0..n)
        .map(|_| {
            (
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            )
        })
        .collect();
    let oracle_err = |field: AffineField| -> Result<(f64, f64)> {
        let sys = moving_plane_ball(p, field)?;
        let errs: Vec<(f64, f64)> = states
            .par_iter()
            .map(|&(w, a)| {
                let (wdot, adot) = moving_plane_rhs(&field, p.inertia, p.mass, w, a);
                let v = [w[0], w[1], w[2], adot[0], adot[1]];
                let sol = solve_state(&sys, &a, &v, &SolveOptions::default())?;
                let e = max_of((0..3).map(|i| (sol.vdot[i] - wdot[i]).abs()));
                Ok((e, sol.vdot.rows(0, 3).amax()))
            })
            .collect::<Result<_>>()?;
        Ok((max_of(errs.iter().map(|e| e.0)), max_of(errs.iter().map(|e| e.1))))
    };
    let (shear, _) = oracle_err(AffineField::shear(0.5))?;
    let (rot, _) = oracle_err(AffineField::rotation(0.7))?;
    let general = AffineField { c: [0.2, -0.1], g: [[0.3, -0.4], [0.5, 0.1]] };
    let (gen, _) = oracle_err(general)?;
    let (_, constant) = oracle_err(AffineField::constant([0.3, -0.2]))?;
    let mut checks = vec![
        Check::at_most(format!("shear 0.5: omega_dot vs closed form, {n} states"), shear, 1e-9),
        Check::at_most("rotation 0.7: omega_dot vs closed form", rot, 1e-9),
        Check::at_most("general affine field: omega_dot vs closed form", gen, 1e-9),
        Check::at_most("constant field: max |omega_dot|", constant, 1e-14),
    ];

    // Zero field: same motion as the rigid ball, contact point from reconstruction.
    let opts = IntegratorOptions::default();
    let w = [0.3, 1.0, 0.0];
    let mp = integrate(&moving_plane_ball(p, AffineField::zero())?, &[0.0, 0.0], &ball_velocity(w), 2.0, &opts)?;
    let rigid = rigid_ball_dalembert(p)?;
    let rb = integrate(&rigid, &[], &ball_velocity(w), 2.0, &opts)?;
    let path = contact_path(&rigid, &rb, opts.dt);
    let gap = max_of(mp.states.iter().zip(&rb.states).zip(&path).map(|(((q, v), (_, u)), g)| {
        let dv = max_of(v.iter().zip(u).map(|(a, b)| (a - b).abs()));
        dv.max((q[0] - g[0]).abs()).max((q[1] - g[1]).abs())
    }));
    checks.push(Check::at_most("zero field vs rigid ball (omega, a)", gap, 1e-8));
    Ok(checks)
}

/// `A(q)q̇` with `A` built from smooth coefficient functions.
struct SmoothDistribution;

impl Distribution for SmoothDistribution {
    fn dim(&self) -> usize {
        4
    }
    fn rows(&self) -> usize {
        2
    }
    fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<Vec<S>> {
        let one = S::cst(1.0);
        vec![
            vec![q[2].sin(), -q[2].cos(), S::cst(0.0), q[0] * q[1]],
            vec![one, q[3], q[0].cos(), S::cst(-0.5)],
        ]
    }
}

/// Rows homogeneous of degree `d` in the velocities.
struct Homogeneous(u32);

impl KinematicResidual for Homogeneous {
    fn dim(&self) -> usize {
        3
    }
    fn row_orders(&self) -> Vec<usize> {
        vec![1, 1]
    }
    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let q = jet.deriv(0);
        let v = jet.deriv(1);
        let d = self.0 as i32;
        vec![
            q[0].sin() * v[0].powi(d) + q[2] * v[1].powi(d - 1) * v[2],
            (v[0] + q[1] * v[1] - v[2]).powi(d),
        ]
    }
}

/// `q̈₁ + q₂ q̈₂ − q̇₁²`: affine in `q̈`.
struct SecondOrderRow;

impl KinematicResidual for SecondOrderRow {
    fn dim(&self) -> usize {
        3
    }
    fn row_orders(&self) -> Vec<usize> {
        vec![2]
    }
    fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
        let (q, v, a) = (jet.deriv(0), jet.deriv(1), jet.deriv(2));
        vec![a[0] + q[1] * a[1] - v[0] * v[0]]
    }
}

struct Kinetic(usize);

impl Lagrangian for Kinetic {
    fn dim(&self) -> usize {
        self.0
    }
    fn value<S: Scalar>(&self, _q: &[S], qd: &[S]) -> S {
        qd.iter().fold(S::cst(0.0), |acc, &x| acc + S::cst(0.5) * x * x)
    }
}

fn chetaev(o: &VerifyOptions) -> Result<Vec<Check>> {
    let n = o.pick(100, 25);
    let mut rng = o.rng(5);
    let dal = make_dalembert(LagrangianSpec::automatic(Kinetic(4)), SmoothDistribution)?;
    let che = make_chetaev(
        LagrangianSpec::automatic(Kinetic(4)),
        KinematicConstraintSet::new(DistributionResidual(Arc::new(SmoothDistribution)))?,
    )?;
    let rolling = flat_rolling_ball(BallParams::default())?;
    let rolling_che = make_chetaev(
        LagrangianSpec::automatic(FlatBallLagrangian(BallParams::default())),
        KinematicConstraintSet::new(DistributionResidual(Arc::new(RollingDistribution)))?,
    )?;
    let mut linear = 0.0f64;
    let mut homog = [0.0f64; 3];
    let mut second = 0.0f64;
    let sq2 = make_chetaev_second_order(
        LagrangianSpec::automatic(Kinetic(3)),
        KinematicConstraintSet::new(SecondOrderRow)?,
    )?;
    for _ in 0..n {
        let mut r = |k: usize| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (q, v) = (r(4), r(4));
        let jet = JetPoint::from_state(&q, &v);
        let a = dal.variational.matrix(&jet)?;
        let b = che.variational.matrix(&jet)?;
        linear = linear.max((a - b).amax());
        let (q5, v5) = (r(5), r(5));
        let jet = JetPoint::from_state(&q5, &v5);
        linear = linear.max((rolling.variational.matrix(&jet)? - rolling_che.variational.matrix(&jet)?).amax());
        let (q3, v3, a3) = (r(3), r(3), r(3));
        for (slot, d) in homog.iter_mut().zip(1..=3u32) {
            let sys = make_chetaev(LagrangianSpec::automatic(Kinetic(3)), KinematicConstraintSet::new(Homogeneous(d))?)?;
            let jet = JetPoint::from_state(&q3, &v3);
            let rv = sys.variational.matrix(&jet)?;
            let rk = DVector::from_vec(sys.kinematic.eval(&jet)?);
            let lhs = rv * DVector::from_column_slice(&v3);
            *slot = slot.max((lhs - rk * d as f64).amax());
        }
        let jet = JetPoint::from_second_order(&q3, &v3, &a3);
        let rv = sq2.variational.matrix(&jet)?;
        let expect = DMatrix::from_row_slice(1, 3, &[1.0, q3[1], 0.0]);
        second = second.max((rv - expect).amax());
    }
    let mut checks = vec![Check::at_most(format!("Chetaev vs D'Alembert rows on linear constraints, {n} points"), linear, 1e-12)];
    for (d, h) in (1..=3).zip(homog) {
        checks.push(Check::at_most(format!("degree {d}: |R_V v - d R_K|"), h, 1e-9));
    }
    checks.push(Check::at_most("second-order Chetaev rows = dR_K/dq''", second, 1e-12));

    // Constant-speed constraint |v|² − c²: Chetaev row (2ẋ, 2ẏ).
    struct Speed;
    impl KinematicResidual for Speed {
        fn dim(&self) -> usize {
            2
        }
        fn row_orders(&self) -> Vec<usize> {
            vec![1]
        }
        fn residual<S: Scalar>(&self, jet: &JetPoint<S>) -> Vec<S> {
            let v = jet.deriv(1);
            vec![v[0] * v[0] + v[1] * v[1] - S::cst(1.0)]
        }
    }
    let sp = make_chetaev(LagrangianSpec::automatic(Kinetic(2)), KinematicConstraintSet::new(Speed)?)?;
    let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    let rv = sp.variational.matrix(&JetPoint::from_state(&[0.3, -0.2], &v))?;
    let err = diff::rel_err(rv[(0, 0)], 2.0 * v[0]).max(diff::rel_err(rv[(0, 1)], 2.0 * v[1]));
    checks.push(Check::at_most("constant speed: Chetaev row vs (2x', 2y')", err, 1e-12));
    Ok(checks)
}

/// Maximum relative error of automatic against difference derivatives of a
/// Lagrangian at `(q, q̇)`: gradient, velocity Hessian and mixed term.
fn lagrangian_error<L: Lagrangian>(l: &L, q: &[f64], qd: &[f64]) -> f64 {
    let n = q.len();
    let ad = LagrangianDerivatives::automatic(l, q, qd);
    let z: Vec<f64> = q.iter().chain(qd).copied().collect();
    let f = |z: &[f64]| l.value(&z[..n], &z[n..]);
    let g = diff::central_gradient(&z, f);
    let h = diff::central_hessian(&z, f);
    let mass = h.view((n, n), (n, n)).into_owned();
    let mixed = h.view((n, 0), (n, n)) * DVector::from_column_slice(qd);
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let mut e = diff::max_rel_err(&col(&ad.dq), &col(&g.rows(0, n).into_owned()));
    e = e.max(diff::max_rel_err(&col(&ad.dqd), &col(&g.rows(n, n).into_owned())));
    e = e.max(diff::max_rel_err(&ad.mass, &mass));
    e.max(diff::max_rel_err(&col(&ad.mixed_qd), &col(&mixed)))
}

/// Analytic against automatic derivatives.
fn analytic_error<L: Lagrangian>(l: &L, q: &[f64], qd: &[f64]) -> f64 {
    let Some(an) = l.analytic(q, qd) else { return 0.0 };
    let ad = LagrangianDerivatives::automatic(l, q, qd);
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    diff::max_rel_err(&col(&an.dq), &col(&ad.dq))
        .max(diff::max_rel_err(&col(&an.dqd), &col(&ad.dqd)))
        .max(diff::max_rel_err(&an.mass, &ad.mass))
        .max(diff::max_rel_err(&col(&an.mixed_qd), &col(&ad.mixed_qd)))
}

/// A reduced Lagrangian seen as `L(q, q̇)` with the shape in `q[..p]`.
struct Padded<L>(L, usize);

impl<L: ReducedLagrangian> Lagrangian for Padded<L> {
    fn dim(&self) -> usize {
        5
    }
    fn value<S: Scalar>(&self, q: &[S], qd: &[S]) -> S {
        self.0.value(&q[..self.1], qd)
    }
}

/// Jacobian of a flat kinematic residual in `(q, q̇, q̈)`.
fn flat_row_error<K: KinematicResidual>(k: &K, z: &[f64]) -> f64 {
    let n = k.dim();
    let ad = diff::jacobian(z, |x| k.residual(&JetPoint::from_second_order(&x[..n], &x[n..2 * n], &x[2 * n..])));
    let fd = diff::central_jacobian(z, |x| k.residual(&JetPoint::from_second_order(&x[..n], &x[n..2 * n], &x[2 * n..])));
    diff::max_rel_err(&ad, &fd)
}

/// Jacobian of a reduced kinematic residual in `(s, u, u̇)`.
fn reduced_row_error<K: ReducedKinematic>(k: &K, p: usize, z: &[f64]) -> f64 {
    let split = |x: &[f64]| (x[..p].to_vec(), x[p..p + 5].to_vec(), x[p + 5..].to_vec());
    let ad = diff::jacobian(z, |x: &[Dual64]| k.residual(&x[..p], &x[p..p + 5], &x[p + 5..]));
    let fd = diff::central_jacobian(z, |x| {
        let (s, u, ud) = split(x);
        k.residual(&s, &u, &ud)
    });
    diff::max_rel_err(&ad, &fd)
}

fn gradient_check(o: &VerifyOptions) -> Result<Vec<Check>> {
    let n = o.pick(100, 25);
    let mut rng = o.rng(6);
    let points: Vec<Vec<f64>> = (0..n).map(|_| (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let pos = |x: f64| 1.0 + x.abs();
    let errs: Vec<[f64; 3]> = points
        .par_iter()
        .map(|z| {
            let bp = BallParams { inertia: pos(z[17]), mass: pos(z[16]) };
            let rp = RocardParams { i: pos(z[12]), j: pos(z[13]), m: pos(z[14]), k: pos(z[15]), a_coef: pos(z[16]) };
            let gp = GreidanusParams { i: rp.i, j: rp.j, m: rp.m, alpha: 10.0 * pos(z[15]), beta: pos(z[17]) };
            // Keep the tire twist inside its domain and ψ̇ away from zero.
            let mut t = z.to_vec();
            t[2] *= 0.25;
            t[6] = 1.0 + t[6].abs();
            let mut lag = 0.0f64;
            lag = lag.max(lagrangian_error(&Padded(BallLagrangian(bp), 0), &z[..5], &z[5..10]));
            lag = lag.max(lagrangian_error(&Padded(BallLagrangian(bp), 2), &z[..5], &z[5..10]));
            lag = lag.max(lagrangian_error(&FlatBallLagrangian(bp), &z[..5], &z[5..10]));
            lag = lag.max(lagrangian_error(&RocardLagrangian(rp), &t[..5], &t[5..10]));
            lag = lag.max(lagrangian_error(&GreidanusLagrangian(gp), &t[..6], &t[6..12]));
            let mut an = 0.0f64;
            an = an.max(analytic_error(&FlatBallLagrangian(bp), &z[..5], &z[5..10]));
            an = an.max(analytic_error(&RocardLagrangian(rp), &t[..5], &t[5..10]));
            an = an.max(analytic_error(&GreidanusLagrangian(gp), &t[..6], &t[6..12]));
            let mut rows = 0.0f64;
            let mut rz = t[..15].to_vec();
            rz[5] = t[6];
            rows = rows.max(flat_row_error(&RocardKinematic(rp), &rz));
            rows = rows.max(flat_row_error(&GreidanusKinematic(gp), &t[..18]));
            for f in [BallFormulation::Omega3Zero, BallFormulation::CurvatureSecondOrder] {
                rows = rows.max(reduced_row_error(&BallKinematic { formulation: f }, 0, &z[..10]));
            }
            let field = Arc::new(AffineField { c: [z[0], z[1]], g: [[z[2], z[3]], [z[4], z[5]]] });
            rows = rows.max(reduced_row_error(&PlaneBallKinematic { field }, 2, &z[6..18]));
            rows = rows.max(flat_row_error(&DistributionResidual(Arc::new(RollingDistribution)), &z[..15]));
            Ok([lag, an, rows])
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| max_of(errs.iter().map(|e| e[i]));
    Ok(vec![
        Check::at_most(format!("Lagrangian derivatives, AD vs differences, {n} points"), col(0), 1e-6),
        Check::at_most("analytic vs AD Lagrangian derivatives", col(1), 1e-6),
        Check::at_most("kinematic row Jacobians, AD vs differences", col(2), 1e-6),
    ])
}

fn rk4_convergence(_o: &VerifyOptions) -> Result<Vec<Check>> {
    // Criterion-1 setup: the exact solution is constant.
    let sys = elastic_ball(BallParams::default(), BallFormulation::Omega3Zero)?;
    let v0 = ball_velocity([0.0, 1.0, 0.0]);
    let err = |dt: f64| -> Result<f64> {
        let t = integrate(&sys, &[], &v0, 10.0, &IntegratorOptions { dt, ..Default::default() })?;
        Ok(max_of(t.states.iter().flat_map(|(_, v)| v.iter().zip(&v0).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())))
    };
    let (e1, e2) = (err(1e-3)?, err(5e-4)?);
    let exact = e1 <= 1e-12 && e2 <= 1e-12;
    let ratio = if exact { f64::INFINITY } else { e1 / e2 };
    let mut checks = vec![
        Check::at_most("ball, dt = 1e-3: global error", e1, 1e-12),
        Check::holds("ball: error ratio >= 4 or both errors at roundoff", exact || ratio >= 4.0, ratio),
    ];

    // Nontrivial flow: ball on a rotating plane.
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let field = AffineField::rotation(0.5);
    let mp = moving_plane_ball(p, field)?;
    let (w, a) = ([0.3, 1.0, 0.0], [0.5, 0.0]);
    let (_, adot) = moving_plane_rhs(&field, p.inertia, p.mass, w, a);
    let v = [w[0], w[1], w[2], adot[0], adot[1]];
    let runs: Vec<Trajectory> = [0.04, 0.02, 0.0025]
        .into_par_iter()
        .map(|dt| integrate(&mp, &a, &v, 2.0, &IntegratorOptions { dt, ..Default::default() }))
        .collect::<Result<_>>()?;
    let (g1, g2) = (final_gap(&runs[0], &runs[2]), final_gap(&runs[1], &runs[2]));
    checks.push(Check::holds("moving plane, dt = 0.04: error at t = 2", true, g1));
    checks.push(Check::at_least("moving plane: error ratio on halving dt", g1 / g2, 4.0));
    Ok(checks)
}

fn constraint_drift(o: &VerifyOptions) -> Result<Vec<Check>> {
    let t_end = if o.strict { 10.0 } else { 2.0 };
    let opts = IntegratorOptions::default();
    let p = BallParams { inertia: 0.4, mass: 1.0 };
    let gp = GreidanusParams::default();
    let cases: Vec<&str> = vec!["elastic-ball", "elastic-ball (curvature)", "rigid-ball", "rocard", "greidanus", "moving-plane-ball"];
    let drifts: Vec<f64> = cases
        .par_iter()
        .map(|&id| {
            let w = ball_velocity([0.3, 1.0, 0.0]);
            let t = match id {
                "elastic-ball" => integrate(&elastic_ball(p, BallFormulation::Omega3Zero)?, &[], &w, t_end, &opts)?,
                "elastic-ball (curvature)" => {
                    integrate(&elastic_ball(p, BallFormulation::CurvatureSecondOrder)?, &[], &w, t_end, &opts)?
                }
                "rigid-ball" => integrate(&rigid_ball_dalembert(p)?, &[], &w, t_end, &opts)?,
                "rocard" => {
                    let (q, v) = rocard_initial(5.0, 0.05);
                    integrate(&rocard_tire(RocardParams::default())?, &q, &v, t_end, &opts)?
                }
                "greidanus" => {
                    let (q, v) = greidanus_initial(&gp, 0.5, 0.05);
                    integrate(&greidanus_tire(gp)?, &q, &v, t_end, &opts)?
                }
                _ => {
                    let field = AffineField::rotation(0.5);
                    let a = [0.5, 0.0];
                    let (_, adot) = moving_plane_rhs(&field, p.inertia, p.mass, [0.3, 1.0, 0.0], a);
                    integrate(&moving_plane_ball(p, field)?, &a, &[0.3, 1.0, 0.0, adot[0], adot[1]], t_end, &opts)?
                }
            };
            Ok(max_of(t.velocity_residual.iter().copied()))
        })
        .collect::<Result<_>>()?;
    Ok(cases
        .iter()
        .zip(drifts)
        .map(|(id, d)| Check::at_most(format!("{id}: max velocity-level residual over {t_end} s"), d, 1e-8))
        .collect())
}

fn reconstruction(_o: &VerifyOptions) -> Result<Vec<Check>> {
    let group = ball_group();
    let g0 = GroupElement::identity(&group);
    let dt = 1e-3;
    let c = 0.7;
    let spin: Vec<Vec<f64>> = (0..=1000).map(|_| vec![0.0, 0.0, c, 0.0, 0.0]).collect();
    let g = reconstruct(&group, &g0, &spin, dt);
    let exact = Matrix3::new(c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0);
    let closed = (g[1000].rotations[0] - exact).amax();
    let still = reconstruct(&group, &g0, &vec![vec![0.0; 5]; 1001], dt);
    let frozen = max_of(still.iter().map(|g| (g.rotations[0] - Matrix3::identity()).amax()));

    // Time-varying tumble over 10 s.
    let tumble: Vec<Vec<f64>> = (0..=10_000)
        .map(|k| {
            let t = k as f64 * dt;
            vec![t.sin(), (2.0 * t).cos(), 0.5, 1.0, -0.5]
        })
        .collect();
    let gt = reconstruct(&group, &g0, &tumble, dt);
    let ortho = max_of(gt.iter().map(GroupElement::orthonormality_defect));
    let step = (gt[1].rotations[0] - so3_exp(&Vector3::new(0.0, dt, 0.5 * dt))).amax();
    Ok(vec![
        Check::at_most("constant spin (0, 0, 0.7): A(1) vs closed form", closed, 1e-8),
        Check::at_most("zero velocity: A stays at identity", frozen, 0.0),
        Check::at_most("tumbling 10 s: max |A^T A - I|", ortho, 1e-10),
        Check::at_most("first step equals exp(dt omega^)", step, 1e-15),
        Check::at_most("structure constants: antisymmetry defect", group.antisymmetry_defect(), 0.0),
        Check::at_most("structure constants: Jacobi defect", group.jacobi_defect(), 1e-15),
    ])
}
