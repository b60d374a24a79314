//! Scenario files: strict JSON schema, validation of every sub-config, and
//! the derived quantities (equilibrium, constants, probe grid) a run needs.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{BoundInputs, BoundReport, MixingConstants};
use crate::error::{Error, Result};
use crate::game::{BoundBox, GameConstants, QuadraticAggregativeGame};
use crate::privacy::NoiseParams;
use crate::seeker::AlgorithmParams;
use crate::topology::{matrix_from_rows, renormalize, Mixing, Topology, TopologySchedule};

pub const DEFAULT_REPLICAS: usize = 2000;
/// Every iteration up to here is probed; beyond it the grid is geometric.
pub const DENSE_PROBE_LIMIT: usize = 100;
const PROBE_GROWTH: f64 = 1.1;

fn default_replicas() -> usize {
    DEFAULT_REPLICAS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    Fixed,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub mode: TopologyMode,
    /// Row-major weight matrices; exactly one for `fixed`.
    pub matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub c: f64,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
}

/// On-disk scenario, as parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n_players: usize,
    pub targets: Vec<f64>,
    pub agg_price_slope: f64,
    pub agg_price_offset: f64,
    /// Region on which the gradient bound is certified. Defaults to a box
    /// padded around `x0` and the equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_box: Option<BoundBox>,
    pub topology: TopologySpec,
    pub algorithm: AlgorithmSpec,
    pub noise: NoiseParams,
    pub x0: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_iterations: Option<Vec<usize>>,
}

/// Validated communication structure of a scenario.
#[derive(Debug, Clone)]
pub enum ScenarioMixing {
    Fixed(Topology),
    Switching(TopologySchedule),
}

impl ScenarioMixing {
    pub fn constants(&self) -> MixingConstants {
        match self {
            ScenarioMixing::Fixed(t) => MixingConstants::Fixed { gamma: t.gamma() },
            ScenarioMixing::Switching(s) => MixingConstants::Switching {
                theta: s.theta(),
                beta: s.beta(),
            },
        }
    }
}

impl Mixing for ScenarioMixing {
    fn n_nodes(&self) -> usize {
        match self {
            ScenarioMixing::Fixed(t) => t.n_nodes(),
            ScenarioMixing::Switching(s) => s.n_nodes(),
        }
    }

    fn weights_at(&self, k: usize) -> &DMatrix<f64> {
        match self {
            ScenarioMixing::Fixed(t) => t.weights_at(k),
            ScenarioMixing::Switching(s) => s.weights_at(k),
        }
    }
}

/// A scenario whose every part has passed validation.
#[derive(Debug, Clone)]
pub struct Scenario {
    file: ScenarioFile,
    pub game: QuadraticAggregativeGame,
    pub mixing: ScenarioMixing,
    pub params: AlgorithmParams,
    pub noise: NoiseParams,
    pub bound_box: BoundBox,
    pub nash: Vec<f64>,
    pub constants: GameConstants,
    pub probes: Vec<usize>,
}

/// Every iteration to [`DENSE_PROBE_LIMIT`], then roughly 10% apart, always
/// ending at `k_max`.
pub fn default_probe_grid(k_max: usize) -> Vec<usize> {
    let mut probes: Vec<usize> = (0..=k_max.min(DENSE_PROBE_LIMIT)).collect();
    let mut k = DENSE_PROBE_LIMIT;
    while k < k_max {
        k = ((k as f64 * PROBE_GROWTH).round() as usize)
            .max(k + 1)
            .min(k_max);
        probes.push(k);
    }
    probes
}

fn scenario_error(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates. Syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| scenario_error(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let n = file.n_players;
        if file.targets.len() != n {
            return Err(scenario_error(format!(
                "n_players is {n} but {} targets are given",
                file.targets.len()
            )));
        }
        if file.x0.len() != n {
            return Err(scenario_error(format!(
                "n_players is {n} but x0 has {} entries",
                file.x0.len()
            )));
        }
        if file.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x0"));
        }
        if file.replicas == 0 {
            return Err(scenario_error("replicas must be positive"));
        }
        let game = QuadraticAggregativeGame::new(
            file.targets.clone(),
            file.agg_price_slope,
            file.agg_price_offset,
        )?;
        let mixing = build_mixing(&file.topology)?;
        if mixing.n_nodes() != n {
            return Err(scenario_error(format!(
                "topology has {} nodes but n_players is {n}",
                mixing.n_nodes()
            )));
        }
        let params =
            AlgorithmParams::new(file.algorithm.c, file.algorithm.q, file.algorithm.k_max)?;
        let noise = NoiseParams::new(file.noise.d, file.noise.q_bar)?;
        noise.check_against(&params)?;
        let nash = game.solve_nash()?;
        let bound_box = match &file.bound_box {
            Some(b) => b.clone(),
            None => BoundBox::spanning(&file.x0, &nash)?,
        };
        bound_box.validate()?;
        if bound_box.dim() != n {
            return Err(scenario_error("bound_box dimension differs from n_players"));
        }
        if !bound_box.contains(&file.x0) {
            return Err(Error::InvalidBox("x0 lies outside bound_box".into()));
        }
        let constants = game.estimate_constants(&bound_box)?;
        let probes = match &file.probe_iterations {
            Some(p) => {
                let mut p = p.clone();
                p.sort_unstable();
                p.dedup();
                if p.is_empty() {
                    return Err(scenario_error("probe_iterations is empty"));
                }
                if let Some(&last) = p.last().filter(|&&k| k > params.k_max) {
                    return Err(scenario_error(format!(
                        "probe iteration {last} exceeds k_max = {}",
                        params.k_max
                    )));
                }
                p
            }
            None => default_probe_grid(params.k_max),
        };
        Ok(Scenario {
            file,
            game,
            mixing,
            params,
            noise,
            bound_box,
            nash,
            constants,
            probes,
        })
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn n_players(&self) -> usize {
        self.file.n_players
    }

    pub fn x0(&self) -> &[f64] {
        &self.file.x0
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn replicas(&self) -> usize {
        self.file.replicas
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.file.seed = seed;
        s
    }

    pub fn with_replicas(&self, replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(scenario_error("replicas must be positive"));
        }
        let mut s = self.clone();
        s.file.replicas = replicas;
        Ok(s)
    }

    pub fn with_noise_scale(&self, d: f64) -> Result<Self> {
        let mut file = self.file.clone();
        file.noise.d = d;
        Self::from_file(file)
    }

    /// SHA-256 over everything that shapes the dynamics and the bounds;
    /// seed and replica count are left out, so summaries of any run size
    /// can be checked against one bound report.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.file.clone();
        canonical.seed = 0;
        canonical.replicas = 0;
        canonical.probe_iterations = Some(self.probes.clone());
        let bytes = serde_json::to_vec(&canonical).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn bound_inputs(&self) -> Result<BoundInputs> {
        BoundInputs::from_constants(
            &self.constants,
            self.params.c,
            self.params.q,
            self.noise.d,
            self.noise.q_bar,
            self.mixing.constants(),
            self.x0(),
            &self.nash,
        )
    }

    pub fn bound_report(&self) -> Result<BoundReport> {
        BoundReport::build(&self.bound_inputs()?, &self.probes, self.fingerprint())
    }
}

fn build_mixing(spec: &TopologySpec) -> Result<ScenarioMixing> {
    let matrices = spec
        .matrices
        .iter()
        .map(|rows| matrix_from_rows(rows))
        .collect::<Result<Vec<_>>>()?;
    match spec.mode {
        TopologyMode::Fixed => {
            if matrices.len() != 1 {
                return Err(scenario_error(format!(
                    "fixed topology takes exactly one matrix, got {}",
                    matrices.len()
                )));
            }
            if spec.period.is_some_and(|p| p != 1) {
                return Err(scenario_error("fixed topology has period 1"));
            }
            let m = matrices.into_iter().next().expect("one matrix");
            Ok(ScenarioMixing::Fixed(Topology::validate_fixed_with(
                m,
                spec.renormalize,
            )?))
        }
        TopologyMode::Periodic => {
            let matrices = if spec.renormalize {
                matrices
                    .iter()
                    .map(renormalize)
                    .collect::<Result<Vec<_>>>()?
            } else {
                matrices
            };
            let period = spec.period.unwrap_or(matrices.len());
            Ok(ScenarioMixing::Switching(
                TopologySchedule::validate_schedule(matrices, period)?,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED: &str = r#"{
        "n_players": 5,
        "targets": [50, 55, 60, 65, 70],
        "agg_price_slope": 0.04,
        "agg_price_offset": 5,
        "bound_box": {"lower": [0, 0, 0, 0, 0], "upper": [100, 100, 100, 100, 100]},
        "topology": {"mode": "fixed", "matrices": [[
            [0.5, 0.2, 0.0, 0.0, 0.3],
            [0.2, 0.5, 0.3, 0.0, 0.0],
            [0.0, 0.3, 0.5, 0.2, 0.0],
            [0.0, 0.0, 0.2, 0.5, 0.3],
            [0.3, 0.0, 0.0, 0.3, 0.4]]]},
        "algorithm": {"c": 1, "q": 0.9},
        "noise": {"d": 1, "q_bar": 0.99},
        "x0": [50, 55, 60, 65, 70],
        "seed": 7
    }"#;

    #[test]
    fn loads_and_derives() {
        let s = Scenario::from_json(FIXED).unwrap();
        assert_eq!(s.replicas(), DEFAULT_REPLICAS);
        assert_eq!(s.params.k_max, 175);
        assert_eq!(*s.probes.last().unwrap(), 175);
        assert_eq!(s.probes[..101], (0..=100).collect::<Vec<_>>()[..]);
        assert!((s.constants.gradient_bound - 135.0).abs() < 1e-9);
        assert!(matches!(s.mixing, ScenarioMixing::Fixed(_)));
    }

    #[test]
    fn probe_grid_shape() {
        assert_eq!(default_probe_grid(5), vec![0, 1, 2, 3, 4, 5]);
        let g = default_probe_grid(175);
        assert_eq!(&g[101..], &[110, 121, 133, 146, 161, 175]);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unknown_key_is_rejected_with_position() {
        let text = FIXED.replace("\"seed\": 7", "\"seed\": 7, \"sede\": 1");
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("unknown field `sede`"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_and_malformed_fields() {
        let text = FIXED.replace("\"seed\": 7", "\"replicas\": 3");
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("missing field `seed`"), "{err}");
        let text = FIXED.replace("\"c\": 1", "\"c\": \"one\"");
        assert!(Scenario::from_json(&text).is_err());
    }

    #[test]
    fn decay_order_is_enforced() {
        let text = FIXED.replace("\"q_bar\": 0.99", "\"q_bar\": 0.85");
        let err = Scenario::from_json(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("q_bar in (q, 1)"), "{err}");
    }

    #[test]
    fn fingerprint_ignores_seed_and_replicas() {
        let s = Scenario::from_json(FIXED).unwrap();
        let t = s.with_seed(99).with_replicas(10).unwrap();
        assert_eq!(s.fingerprint(), t.fingerprint());
        assert_ne!(
            s.fingerprint(),
            s.with_noise_scale(2.0).unwrap().fingerprint()
        );
    }

    #[test]
    fn probe_iterations_are_checked() {
        let text = FIXED.replace(
            "\"seed\": 7",
            "\"seed\": 7, \"probe_iterations\": [5, 1, 5, 500]",
        );
        assert!(Scenario::from_json(&text).is_err());
        let text = FIXED.replace(
            "\"seed\": 7",
            "\"seed\": 7, \"probe_iterations\": [5, 1, 5]",
        );
        assert_eq!(Scenario::from_json(&text).unwrap().probes, vec![1, 5]);
    }
}
