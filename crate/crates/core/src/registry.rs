//! Built-in models by string id, with named parameters and defaults.

use std::collections::BTreeMap;

use crate::dynamics::ConstrainedDynamics;
use crate::error::{Error, Result};
use crate::models::{
    elastic_ball, greidanus_tire, moving_plane_ball, rigid_ball_dalembert, rocard_tire, BallFormulation,
    BallParams, GreidanusParams, RocardParams,
};
use crate::reduction::{AffineField, Factor, LieGroupSpec, Orientation};

/// One registered model.
#[derive(Clone, Copy, Debug)]
pub struct ModelInfo {
    pub id: &'static str,
    pub summary: &'static str,
    /// Parameter names with their defaults.
    pub params: &'static [(&'static str, f64)],
    /// Parameters that must be strictly positive.
    pub positive: &'static [&'static str],
}

pub const MODELS: &[ModelInfo] = &[
    ModelInfo {
        id: "elastic-ball",
        summary: "elastic ball rolling without slipping or spinning; second_order = 1 selects the curvature row",
        params: &[("I", 1.0), ("M", 1.0), ("second_order", 0.0)],
        positive: &["I", "M"],
    },
    ModelInfo {
        id: "rigid-ball",
        summary: "rigid ball under D'Alembert's principle with the no-spin row",
        params: &[("I", 1.0), ("M", 1.0)],
        positive: &["I", "M"],
    },
    ModelInfo {
        id: "rocard",
        summary: "Rocard tire: twist epsilon, second-order lateral-force row",
        params: &[("I", 1.0), ("J", 1.0), ("M", 1.0), ("K", 1.0), ("a", 1.0)],
        positive: &["I", "J", "M", "K", "a"],
    },
    ModelInfo {
        id: "greidanus",
        summary: "Greidanus tire: lateral deformation xi, all rows first order",
        params: &[("I", 1.0), ("J", 1.0), ("M", 1.0), ("alpha", 1.0), ("beta", 1.0)],
        positive: &["I", "J", "M", "alpha", "beta"],
    },
    ModelInfo {
        id: "moving-plane-ball",
        summary: "rigid ball on a plane moving with v(x) = c + G x",
        params: &[
            ("I", 1.0),
            ("M", 1.0),
            ("c1", 0.0),
            ("c2", 0.0),
            ("g11", 0.0),
            ("g12", 0.0),
            ("g21", 0.0),
            ("g22", 0.0),
        ],
        positive: &["I", "M"],
    },
];

pub fn info(id: &str) -> Result<&'static ModelInfo> {
    MODELS.iter().find(|m| m.id == id).ok_or_else(|| {
        let ids: Vec<_> = MODELS.iter().map(|m| m.id).collect();
        Error::Config(format!("unknown model_id `{id}` (known: {})", ids.join(", ")))
    })
}

/// A constructed model.
pub struct BuiltModel {
    pub id: String,
    /// Every parameter, defaults filled in.
    pub params: BTreeMap<String, f64>,
    pub system: Box<dyn ConstrainedDynamics>,
    /// Symmetry group of a reduced model, for reconstruction.
    pub group: Option<LieGroupSpec>,
}

/// Fills defaults and rejects unknown names, non-finite values and
/// nonpositive physical constants.
pub fn resolve_params(info: &ModelInfo, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = info.params.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (k, &v) in given {
        if !out.contains_key(k) {
            let names: Vec<_> = info.params.iter().map(|p| p.0).collect();
            return Err(Error::Config(format!(
                "unknown parameter `{k}` for model {} (known: {})",
                info.id,
                names.join(", ")
            )));
        }
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter `{k}` must be finite, got {v}")));
        }
        out.insert(k.clone(), v);
    }
    for &k in info.positive {
        if !(out[k] > 0.0) {
            return Err(Error::Config(format!("parameter `{k}` must be positive, got {}", out[k])));
        }
    }
    Ok(out)
}

pub fn build(id: &str, given: &BTreeMap<String, f64>) -> Result<BuiltModel> {
    let info = info(id)?;
    let p = resolve_params(info, given)?;
    let ball = || BallParams { inertia: p["I"], mass: p["M"] };
    let (system, group): (Box<dyn ConstrainedDynamics>, _) = match id {
        "elastic-ball" => {
            let f = match p["second_order"] {
                0.0 => BallFormulation::Omega3Zero,
                1.0 => BallFormulation::CurvatureSecondOrder,
                x => return Err(Error::Config(format!("parameter `second_order` must be 0 or 1, got {x}"))),
            };
            let sys = elastic_ball(ball(), f)?;
            let g = sys.group.clone();
            (Box::new(sys), Some(g))
        }
        "rigid-ball" => {
            let sys = rigid_ball_dalembert(ball())?;
            let g = sys.group.clone();
            (Box::new(sys), Some(g))
        }
        "rocard" => {
            let sys = rocard_tire(RocardParams { i: p["I"], j: p["J"], m: p["M"], k: p["K"], a_coef: p["a"] })?;
            (Box::new(sys), None)
        }
        "greidanus" => {
            let sys = greidanus_tire(GreidanusParams {
                i: p["I"],
                j: p["J"],
                m: p["M"],
                alpha: p["alpha"],
                beta: p["beta"],
            })?;
            (Box::new(sys), None)
        }
        "moving-plane-ball" => {
            let field = AffineField { c: [p["c1"], p["c2"]], g: [[p["g11"], p["g12"]], [p["g21"], p["g22"]]] };
            let sys = moving_plane_ball(ball(), field)?;
            (Box::new(sys), Some(LieGroupSpec::new(vec![Factor::So3], Orientation::Right)))
        }
        _ => unreachable!("registered id without constructor"),
    };
    Ok(BuiltModel { id: id.to_string(), params: p, system, group })
}
