//! Experiment configuration: flat `key = value` sections, unknown keys
//! rejected, every numeric constraint validated before a scenario runs.

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::Deserialize;

use crate::error::{GeodesicError, LabResult};
use crate::homotopy::GroupSpec;
use crate::metrics::{ChartPoint, ModelManifold};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    SolveClasses,
    MinmaxScan,
    Census,
    GroupGrowth,
    VerifyAll,
}

impl Scenario {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "solve-classes" => Some(Self::SolveClasses),
            "minmax-scan" => Some(Self::MinmaxScan),
            "census" => Some(Self::Census),
            "group-growth" => Some(Self::GroupGrowth),
            "verify-all" => Some(Self::VerifyAll),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SolveClasses => "solve-classes",
            Self::MinmaxScan => "minmax-scan",
            Self::Census => "census",
            Self::GroupGrowth => "group-growth",
            Self::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    manifold: RawManifold,
    endpoints: RawEndpoints,
    #[serde(default)]
    scenario: Option<RawScenario>,
    #[serde(default)]
    group: Option<RawGroup>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifold {
    variant: String,
    #[serde(default)]
    drift: Option<[f64; 2]>,
    #[serde(default)]
    circumference: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEndpoints {
    p: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    class_min: Option<i64>,
    #[serde(default)]
    class_max: Option<i64>,
    #[serde(default)]
    length_max: Option<f64>,
    #[serde(default)]
    n_s: Option<usize>,
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    kind: String,
    rank: usize,
    max_radius: usize,
    #[serde(default)]
    budget: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default)]
    directory: Option<String>,
}

/// Fully validated experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub manifold: ModelManifold<f64>,
    pub p: ChartPoint<f64>,
    pub q: ChartPoint<f64>,
    pub scenario: Option<Scenario>,
    pub class_min: i64,
    pub class_max: i64,
    pub length_max: f64,
    pub n_samples: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub group: Option<GroupConfig>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct GroupConfig {
    pub spec: GroupSpec,
    pub max_radius: usize,
    pub budget: usize,
}

fn config_err<T>(msg: impl Into<String>) -> LabResult<T, f64> {
    Err(GeodesicError::Config(msg.into()))
}

pub fn parse_config(text: &str) -> LabResult<ExperimentConfig, f64> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| GeodesicError::Config(format!("{e}")))?;

    let manifold = match raw.manifold.variant.as_str() {
        "flat-torus" => {
            if raw.manifold.circumference.is_some() {
                return config_err("flat-torus takes no circumference");
            }
            let d = raw.manifold.drift.unwrap_or([0.0, 0.0]);
            ModelManifold::flat_torus(Vector2::new(d[0], d[1]))
                .map_err(|e| GeodesicError::Config(format!("{e}")))?
        }
        "flat-cylinder" => {
            if raw.manifold.drift.is_some() {
                return config_err("flat-cylinder takes no drift");
            }
            let c = raw
                .manifold
                .circumference
                .ok_or_else(|| GeodesicError::Config("flat-cylinder needs circumference".into()))?;
            ModelManifold::flat_cylinder(c).map_err(|e| GeodesicError::Config(format!("{e}")))?
        }
        "circle-times-sphere" => {
            if raw.manifold.drift.is_some() {
                return config_err("circle-times-sphere takes no drift");
            }
            let c = raw.manifold.circumference.ok_or_else(|| {
                GeodesicError::Config("circle-times-sphere needs circumference".into())
            })?;
            ModelManifold::circle_times_sphere(c)
                .map_err(|e| GeodesicError::Config(format!("{e}")))?
        }
        other => return config_err(format!("unknown manifold variant '{other}'")),
    };

    let parse_point = |coords: &[f64], name: &str| -> LabResult<ChartPoint<f64>, f64> {
        match (&manifold, coords.len()) {
            (ModelManifold::CircleTimesSphere { .. }, 4) => Ok(ChartPoint::product(
                coords[0],
                Vector3::new(coords[1], coords[2], coords[3]),
            )),
            (ModelManifold::CircleTimesSphere { .. }, n) => config_err(format!(
                "{name} needs 4 coordinates (circle, then a unit 3-vector), got {n}"
            )),
            (_, 2) => Ok(ChartPoint::plane(coords[0], coords[1])),
            (_, n) => config_err(format!("{name} needs 2 coordinates, got {n}")),
        }
    };
    let p = parse_point(&raw.endpoints.p, "p")?;
    let q = parse_point(&raw.endpoints.q, "q")?;
    manifold
        .lift(&p)
        .map_err(|e| GeodesicError::Config(format!("p: {e}")))?;
    manifold
        .lift(&q)
        .map_err(|e| GeodesicError::Config(format!("q: {e}")))?;

    let sc = raw.scenario.as_ref();
    let scenario = match sc.and_then(|s| s.kind.as_deref()) {
        Some(name) => Some(
            Scenario::parse(name)
                .ok_or_else(|| GeodesicError::Config(format!("unknown scenario '{name}'")))?,
        ),
        None => None,
    };
    let class_min = sc.and_then(|s| s.class_min).unwrap_or(0);
    let class_max = sc.and_then(|s| s.class_max).unwrap_or(3);
    if class_min > class_max {
        return config_err("class_min must not exceed class_max");
    }
    let length_max = sc.and_then(|s| s.length_max).unwrap_or(12.0);
    if !(length_max > 0.0) {
        return config_err("length_max must be positive");
    }
    let n_samples = sc.and_then(|s| s.n_s).unwrap_or(64);
    if n_samples < 8 {
        return config_err("n_s must be at least 8");
    }
    let tol = sc.and_then(|s| s.tol).unwrap_or(1e-8);
    if !(tol > 0.0) {
        return config_err("tol must be positive");
    }
    let max_iter = sc.and_then(|s| s.max_iter).unwrap_or(30_000);
    let seed = sc.and_then(|s| s.seed).unwrap_or(0);

    let group = match raw.group {
        None => None,
        Some(g) => {
            if g.rank == 0 {
                return config_err("group rank must be at least 1");
            }
            let spec = match g.kind.as_str() {
                "free-abelian" => GroupSpec::FreeAbelian { rank: g.rank },
                "free" => GroupSpec::Free { rank: g.rank },
                other => return config_err(format!("unknown group kind '{other}'")),
            };
            Some(GroupConfig {
                spec,
                max_radius: g.max_radius,
                budget: g.budget.unwrap_or(5_000_000),
            })
        }
    };

    Ok(ExperimentConfig {
        manifold,
        p,
        q,
        scenario,
        class_min,
        class_max,
        length_max,
        n_samples,
        tol,
        max_iter,
        seed,
        group,
        out_dir: raw
            .output
            .and_then(|o| o.directory)
            .map(PathBuf::from),
    })
}

pub fn load_config(path: &Path) -> LabResult<ExperimentConfig, f64> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[manifold]
variant = "flat-torus"
drift = [0.3, 0.1]

[endpoints]
p = [0.0, 0.0]
q = [0.25, 0.5]

[scenario]
kind = "census"
length_max = 8.0
seed = 7
"#;

    #[test]
    fn parses_a_valid_config() {
        let cfg = parse_config(GOOD).unwrap();
        assert_eq!(cfg.scenario, Some(Scenario::Census));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.length_max, 8.0);
        assert_eq!(cfg.manifold.variant_name(), "flat-torus");
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = GOOD.replace("seed = 7", "sneed = 7");
        assert!(matches!(
            parse_config(&bad),
            Err(GeodesicError::Config(_))
        ));
    }

    #[test]
    fn rejects_oversized_drift() {
        let bad = GOOD.replace("[0.3, 0.1]", "[0.9, 0.6]");
        assert!(matches!(parse_config(&bad), Err(GeodesicError::Config(_))));
    }

    #[test]
    fn rejects_non_unit_sphere_endpoint() {
        let bad = r#"
[manifold]
variant = "circle-times-sphere"
circumference = 1.0

[endpoints]
p = [0.0, 0.0, 0.0, 1.0]
q = [0.0, 0.5, 0.0, 0.0]
"#;
        assert!(matches!(parse_config(bad), Err(GeodesicError::Config(_))));
    }
}
