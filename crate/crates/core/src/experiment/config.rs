use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::incident::NoiseSpec;
use crate::road::{HighwaySegment, Offramp};
use crate::sim::{DriverModel, IncidentSpec, SimConfig};

pub const BUILTIN_SCENARIOS: [&str; 3] = ["disc-stopped", "disc-slow", "mand-overtake"];

/// One entry of the model grid. `cav: None` is the human-only baseline,
/// which runs at zero penetration regardless of the penetration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub cav: Option<DriverModel>,
}

impl ModelSpec {
    pub fn baseline() -> Self {
        ModelSpec {
            id: "human-only".into(),
            cav: None,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.cav.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    /// veh/hr/lane
    pub inflows: Vec<f64>,
    pub penetrations: Vec<f64>,
    pub models: Vec<ModelSpec>,
    pub noise: Vec<NoiseSpec>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            inflows: vec![800.0, 1000.0, 1200.0, 1400.0],
            penetrations: vec![0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            models: vec![
                ModelSpec::baseline(),
                ModelSpec {
                    id: "altruistic-mobil".into(),
                    cav: Some(DriverModel::mobil(1.0)),
                },
                ModelSpec {
                    id: "neo-p0".into(),
                    cav: Some(DriverModel::neo(0.0)),
                },
                ModelSpec {
                    id: "neo-p1".into(),
                    cav: Some(DriverModel::neo(1.0)),
                },
            ],
            noise: vec![NoiseSpec::default()],
        }
    }
}

/// The full noise grid: sigma_x in {0, 50, 250} m by sigma_v in {0, 1, 5} m/s.
pub fn noise_grid() -> Vec<NoiseSpec> {
    let mut out = Vec::new();
    for sigma_x in [0.0, 50.0, 250.0] {
        for sigma_v in [0.0, 1.0, 5.0] {
            out.push(NoiseSpec { sigma_x, sigma_v });
        }
    }
    out
}

fn default_runs() -> u32 {
    100
}

fn default_segment() -> HighwaySegment {
    HighwaySegment {
        length: 2000.0,
        n_lanes: 3,
        offramp: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_runs")]
    pub n_runs: u32,
    #[serde(default = "default_segment")]
    pub segment: HighwaySegment,
    #[serde(default)]
    pub incident: Option<IncidentSpec>,
    /// Base simulation settings; `inflow_per_lane` and `p_cav` are replaced
    /// per grid cell and `seed` is the base from which run seeds derive.
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub grid: Grid,
}

impl ScenarioConfig {
    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        let mut config = ScenarioConfig {
            name: name.to_string(),
            n_runs: default_runs(),
            segment: default_segment(),
            incident: None,
            sim: SimConfig {
                routing_fraction: 0.0,
                ..SimConfig::default()
            },
            grid: Grid::default(),
        };
        match name {
            "disc-stopped" => config.incident = Some(IncidentSpec::stopped()),
            "disc-slow" => config.incident = Some(IncidentSpec::slow(10.0)),
            "mand-overtake" => {
                config.segment.offramp = Some(Offramp {
                    position: 1900.0,
                    target_lane: 0,
                });
                config.incident = Some(IncidentSpec::slow(5.0));
                config.sim.routing_fraction = 0.2;
                config.grid.models = vec![
                    ModelSpec::baseline(),
                    ModelSpec {
                        id: "neo-p0".into(),
                        cav: Some(DriverModel::neo(0.0)),
                    },
                ];
            }
            other => return Err(ConfigError::UnknownScenario(other.to_string())),
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(ConfigError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.name.is_empty() {
            return invalid("name must not be empty".into());
        }
        if self.n_runs < 1 {
            return invalid("n_runs must be >= 1".into());
        }
        self.segment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(incident) = &self.incident {
            incident.validate(&self.segment)?;
        }
        self.sim.validate()?;
        let g = &self.grid;
        if g.inflows.is_empty() || g.penetrations.is_empty() || g.models.is_empty() || g.noise.is_empty() {
            return invalid("grid lists must not be empty".into());
        }
        if let Some(q) = g.inflows.iter().find(|q| !(**q >= 0.0 && q.is_finite())) {
            return invalid(format!("grid inflow must be finite and >= 0, got {q}"));
        }
        if let Some(p) = g.penetrations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return invalid(format!("grid penetration must be in [0, 1], got {p}"));
        }
        if let Some(n) = g.noise.iter().find(|n| !(n.sigma_x >= 0.0 && n.sigma_v >= 0.0)) {
            return invalid(format!("grid noise must be >= 0, got {n:?}"));
        }
        for (i, m) in g.models.iter().enumerate() {
            if g.models[..i].iter().any(|o| o.id == m.id) {
                return invalid(format!("duplicate model id {:?}", m.id));
            }
            if m.id.contains(',') || m.id.contains('"') || m.id.contains('\n') {
                return invalid(format!("model id {:?} must not contain commas, quotes or newlines", m.id));
            }
            if let Some(cav) = &m.cav {
                SimConfig {
                    model_cav: *cav,
                    ..self.sim.clone()
                }
                .validate()?;
            }
        }
        Ok(())
    }

    pub fn baseline_index(&self) -> Option<usize> {
        self.grid.models.iter().position(ModelSpec::is_baseline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_SCENARIOS {
            ScenarioConfig::builtin(name).unwrap().validate().unwrap();
        }
        assert!(matches!(
            ScenarioConfig::builtin("nope"),
            Err(ConfigError::UnknownScenario(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        for name in BUILTIN_SCENARIOS {
            let config = ScenarioConfig::builtin(name).unwrap();
            let back = ScenarioConfig::from_toml(&config.to_toml()).unwrap();
            assert_eq!(back, config);
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let config = ScenarioConfig::from_toml("name = \"x\"\n").unwrap();
        assert_eq!(config.n_runs, 100);
        assert_eq!(config.segment.n_lanes, 3);
        assert_eq!(config.grid.inflows, vec![800.0, 1000.0, 1200.0, 1400.0]);
        assert!(config.incident.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("name = \"x\"\nn_run = 3\n").is_err());
        assert!(ScenarioConfig::from_toml("name = \"x\"\n[sim]\nhorizn = 3.0\n").is_err());
        assert!(ScenarioConfig::from_toml("name = \"x\"\n[sim.idm]\nv0 = 3.0\n").is_err());
        let model = "name = \"x\"\n[[grid.models]]\nid = \"a\"\ncav = { kind = \"neo\", lambda_s = 1.0, lambda_p = 1.0, lambda_d = 1.0, lambda_m = 1.0, lambda_q = 2.0 }\n";
        assert!(ScenarioConfig::from_toml(model).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cases = [
            "name = \"x\"\nn_runs = 0\n",
            "name = \"x\"\n[grid]\npenetrations = [1.5]\n",
            "name = \"x\"\n[grid]\ninflows = []\n",
            "name = \"x\"\n[sim]\ndt = -1.0\n",
            "name = \"x\"\n[incident]\nkind = \"stopped\"\nposition = 5000.0\nspeed = 0.0\n",
            "name = \"x\"\n[[grid.models]]\nid = \"a\"\n[[grid.models]]\nid = \"a\"\n",
        ];
        for text in cases {
            assert!(
                matches!(ScenarioConfig::from_toml(text), Err(ConfigError::Invalid(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn noise_grid_has_nine_cells() {
        let grid = noise_grid();
        assert_eq!(grid.len(), 9);
        assert!(grid.contains(&NoiseSpec {
            sigma_x: 250.0,
            sigma_v: 5.0
        }));
    }
}
