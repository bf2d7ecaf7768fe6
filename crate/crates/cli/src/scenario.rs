//! JSON scenario documents.

use std::path::Path;

use erlang_edm::stability::{AnalysisOptions, Overrides, SigmaMethod};
use erlang_edm::{
    congestion_game, linear_game, uniform_extension, ErlangParams, ExtendedState, LinearGame, PopulationState,
    RevisionProtocol,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const BUNDLED: [(&str, &str); 3] = [
    ("congestion_network", include_str!("../scenarios/congestion_network.json")),
    ("rock_paper_scissors", include_str!("../scenarios/rock_paper_scissors.json")),
    ("rps_equilibrium", include_str!("../scenarios/rps_equilibrium.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub game: GameSpec,
    pub protocol: ProtocolSpec,
    pub params: ParamsSpec,
    pub initial: InitialSpec,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    Matrix(Vec<Vec<f64>>),
    Congestion {
        link_costs: Vec<f64>,
        /// One-based link indices per route.
        routes: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    Uniform,
    StageOne,
}

/// Either a full `n × m` extended state or an aggregate plus an extension rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<Extension>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Dopri5,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: f64,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Fixed RK4 step; defaults to 1e-3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "default_true")]
    pub early_stop: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSpec {
    #[serde(rename = "N")]
    pub agents: usize,
    pub seeds: Vec<u64>,
    /// Defaults to the deterministic run horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    #[serde(default)]
    pub log_events: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Keyword(AlphaKeyword),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Keyword(AlphaKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
    #[serde(default)]
    pub sigma: SigmaMethod,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a file, or a bundled scenario when `spec` names one.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == spec) {
            return Self::from_json(text);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!(
                "cannot read scenario {spec}: {e} (bundled: {})",
                bundled_names().join(", ")
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.params.n;
        let game_dim = match &self.game {
            GameSpec::Matrix(rows) => rows.len(),
            GameSpec::Congestion { routes, .. } => routes.len(),
        };
        if game_dim != n {
            return Err(CliError::Config(format!("game has {game_dim} strategies but params.n = {n}")));
        }
        if !(self.run.horizon > 0.0) {
            return Err(CliError::Config("run.horizon must be positive".into()));
        }
        if let Some(st) = &self.stochastic {
            if st.agents == 0 || st.seeds.is_empty() {
                return Err(CliError::Config("stochastic block needs N >= 1 and at least one seed".into()));
            }
        }
        self.initial_state()?;
        self.protocol()?;
        self.game()?;
        Ok(())
    }

    pub fn game(&self) -> Result<LinearGame, CliError> {
        Ok(match &self.game {
            GameSpec::Matrix(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config("game matrix must be square".into()));
                }
                linear_game(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))?
            }
            GameSpec::Congestion { link_costs, routes } => congestion_game(link_costs, routes)?,
        })
    }

    pub fn protocol(&self) -> Result<RevisionProtocol, CliError> {
        match self.protocol.name.as_str() {
            "smith" => Ok(RevisionProtocol::smith(self.params.n, self.params.lambda)?),
            other => Err(CliError::Config(format!("unknown protocol {other:?} (supported: smith)"))),
        }
    }

    pub fn params(&self) -> Result<ErlangParams, CliError> {
        Ok(ErlangParams::new(self.params.n, self.params.m, self.params.lambda)?)
    }

    pub fn initial_state(&self) -> Result<ExtendedState, CliError> {
        let ParamsSpec { n, m, .. } = self.params;
        let state = match (&self.initial.extended, &self.initial.aggregate) {
            (Some(rows), None) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != m) {
                    return Err(CliError::Config(format!("initial.extended must be {n} rows of {m}")));
                }
                ExtendedState::from_rows(rows)?
            }
            (None, Some(xbar)) => {
                if xbar.len() != n {
                    return Err(CliError::Config(format!("initial.aggregate must have {n} entries")));
                }
                let xbar = PopulationState::new(xbar.clone())?;
                match self.initial.extension.unwrap_or(Extension::Uniform) {
                    Extension::Uniform => uniform_extension(&xbar, m)?,
                    Extension::StageOne => {
                        let mut entries = vec![0.0; n * m];
                        for (i, v) in xbar.as_slice().iter().enumerate() {
                            entries[i * m] = *v;
                        }
                        ExtendedState::new(n, m, entries)?
                    }
                }
            }
            _ => {
                return Err(CliError::Config(
                    "initial needs exactly one of `extended` or `aggregate`".into(),
                ))
            }
        };
        Ok(state)
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        let spec = self.analysis.clone().unwrap_or_default();
        AnalysisOptions {
            alpha: match spec.alpha {
                AlphaSpec::Value(a) => Some(a),
                AlphaSpec::Keyword(AlphaKeyword::Auto) => None,
            },
            overrides: spec.overrides,
            sigma: spec.sigma,
            ..AnalysisOptions::default()
        }
    }
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(name, _)| *name).collect()
}

pub fn bundled_scenarios() -> Vec<Scenario> {
    BUNDLED
        .iter()
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios are valid"))
        .collect()
}
