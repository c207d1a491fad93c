//! Scenario files: a registered model, its parameters, an initial state and
//! integrator options, in TOML or JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{self, integrate, project_poststep, IntegratorOptions, Trajectory};
use crate::registry::{self, BuiltModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub format: Format,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Positions by chart name and velocities by `<name>_dot` (or the
    /// algebra name for reduced models). Algebraic velocities may be omitted.
    pub initial: BTreeMap<String, f64>,
    pub t_end: f64,
    #[serde(default)]
    pub options: IntegratorOptions,
    #[serde(default)]
    pub outputs: Vec<Output>,
    /// Project the initial state onto the constraint surface before checking it.
    #[serde(default)]
    pub project_initial: bool,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML. Relative
    /// output paths are resolved against the scenario's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut sc = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text)?,
            _ => Self::from_toml_str(&text)?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for o in &mut sc.outputs {
            if o.path.is_relative() {
                o.path = base.join(&o.path);
            }
        }
        Ok(sc)
    }

    pub fn build(&self) -> Result<BuiltModel> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        self.options.validate()?;
        registry::build(&self.model_id, &self.params)
    }

    /// The initial `(q, v)` in the model's coordinates.
    pub fn initial_state(&self, model: &BuiltModel) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = &model.system;
        let pnames = sys.position_names();
        let vnames = sys.velocity_names();
        let alg = sys.algebraic_velocities();
        if let Some(k) = self.initial.keys().find(|k| !pnames.contains(k) && !vnames.contains(k)) {
            return Err(Error::Config(format!(
                "initial value `{k}` is not a coordinate of {} (expected {})",
                model.id,
                pnames.iter().chain(&vnames).cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        let get = |name: &String, optional: bool| -> Result<f64> {
            match self.initial.get(name) {
                Some(&x) if x.is_finite() => Ok(x),
                Some(&x) => Err(Error::Config(format!("initial value `{name}` must be finite, got {x}"))),
                None if optional => Ok(0.0),
                None => Err(Error::Config(format!("initial value for `{name}` is missing"))),
            }
        };
        let q = pnames.iter().map(|n| get(n, false)).collect::<Result<Vec<_>>>()?;
        let v = vnames
            .iter()
            .enumerate()
            .map(|(i, n)| get(n, alg.contains(&i)))
            .collect::<Result<Vec<_>>>()?;
        Ok((q, v))
    }

    /// `--dt` / `--t-end` style overrides.
    pub fn override_with(&mut self, dt: Option<f64>, t_end: Option<f64>) {
        if let Some(dt) = dt {
            self.options.dt = dt;
        }
        if let Some(t) = t_end {
            self.t_end = t;
        }
    }
}

/// What a run did.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub model_id: String,
    pub params: BTreeMap<String, f64>,
    pub steps: usize,
    pub final_kin_residual: f64,
    pub max_kin_residual: f64,
    pub energy_drift: f64,
    /// `E(0) − E(t_end)`.
    pub dissipated: f64,
    pub written: Vec<PathBuf>,
    pub trajectory: Trajectory,
}

/// Builds, checks, integrates and writes the requested outputs.
pub fn run(sc: &Scenario) -> Result<RunReport> {
    let model = sc.build()?;
    let (mut q, mut v) = sc.initial_state(&model)?;
    let sys = model.system.as_ref();
    if sc.project_initial {
        sys.domain_check(&q, &v)?;
        (q, v) = project_poststep(sys, &q, &v, sc.options.cons_tol)?;
    }
    let traj = integrate(sys, &q, &v, sc.t_end, &sc.options)?;
    let meta = serde_json::json!({
        "model_id": model.id,
        "params": model.params,
        "options": sc.options,
    });
    let mut written = Vec::new();
    for o in &sc.outputs {
        if let Some(dir) = o.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        match o.format {
            Format::Csv => {
                let f = fs::File::create(&o.path).map_err(|e| Error::Io(format!("{}: {e}", o.path.display())))?;
                traj.write_csv(std::io::BufWriter::new(f))?;
            }
            Format::Json => {
                fs::write(&o.path, traj.to_json(&meta)?)
                    .map_err(|e| Error::Io(format!("{}: {e}", o.path.display())))?;
            }
        }
        written.push(o.path.clone());
    }
    let audit = integrator::energy_audit(sys, &traj);
    let e = &traj.energy;
    Ok(RunReport {
        model_id: model.id.clone(),
        params: model.params.clone(),
        steps: traj.len().saturating_sub(1),
        final_kin_residual: *traj.kin_residual.last().unwrap_or(&0.0),
        max_kin_residual: traj.kin_residual.iter().fold(0.0, |m, x| m.max(*x)),
        energy_drift: audit.energy_drift,
        dissipated: e.first().copied().unwrap_or(0.0) - e.last().copied().unwrap_or(0.0),
        written,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BALL: &str = r#"
model_id = "elastic-ball"
t_end = 0.1
[params]
I = 0.4
[initial]
omega1 = 0.0
omega2 = 1.0
omega3 = 0.0
V1 = 1.0
V2 = 0.0
[options]
dt = 0.01
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = Scenario::from_toml_str(BALL).unwrap();
        let b = Scenario::from_json_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.options.dt, 0.01);
        assert_eq!(a.options.method, integrator::Method::ExplicitRk4);
    }

    #[test]
    fn missing_and_unknown_initial_values() {
        let mut sc = Scenario::from_toml_str(BALL).unwrap();
        sc.initial.remove("V2");
        let m = sc.build().unwrap();
        assert!(matches!(sc.initial_state(&m), Err(Error::Config(s)) if s.contains("`V2`")));
        sc.initial.insert("V2".into(), 0.0);
        sc.initial.insert("psi_dot".into(), 1.0);
        assert!(matches!(sc.initial_state(&m), Err(Error::Config(s)) if s.contains("psi_dot")));
    }

    #[test]
    fn algebraic_velocity_may_be_omitted() {
        let sc = Scenario::from_toml_str(
            r#"
model_id = "rocard"
t_end = 0.01
[initial]
psi = 0.0
theta = 0.0
epsilon = 0.0
x1 = 0.0
x2 = 0.0
psi_dot = 1.0
theta_dot = 0.0
x1_dot = 1.0
x2_dot = 0.0
"#,
        )
        .unwrap();
        let r = run(&sc).unwrap();
        assert_eq!(r.steps, 10);
        assert!(r.energy_drift < 1e-14);
    }

    #[test]
    fn unknown_option_is_rejected() {
        let bad = BALL.replace("dt = 0.01", "dt = 0.01\nstep = 2");
        assert!(matches!(Scenario::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn writes_outputs_relative_to_the_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{BALL}\n[[outputs]]\nformat = \"csv\"\npath = \"out/t.csv\"\n[[outputs]]\nformat = \"json\"\npath = \"t.json\"\n");
        let p = dir.path().join("s.toml");
        fs::write(&p, text).unwrap();
        let sc = Scenario::from_path(&p).unwrap();
        let r = run(&sc).unwrap();
        assert_eq!(r.written.len(), 2);
        let csv = fs::read_to_string(dir.path().join("out/t.csv")).unwrap();
        assert!(csv.starts_with("t,omega1,omega2,omega3,V1,V2,lambda_0"));
        assert_eq!(csv.lines().count(), 12);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
        assert_eq!(json["meta"]["model_id"], "elastic-ball");
        assert_eq!(json["meta"]["params"]["I"], 0.4);
    }
}
