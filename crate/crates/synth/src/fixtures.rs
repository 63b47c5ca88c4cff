//! Committed oracle configuration and the frozen values derived from it.

use serde::{Deserialize, Serialize};

use crate::mixture::{sample_mixture, MixtureSpec};
use crate::oracle::{grid_likelihood_oracle, mann_whitney_auroc, GridSpec};
use crate::Result;

pub const ORACLE_TOML: &str = include_str!("../fixtures/oracle.toml");
pub const EXPECTATIONS_JSON: &str = include_str!("../fixtures/expectations.json");

/// ID and OOD scores of the seven-sample threshold fixture.
pub const SEVEN_ID: [f64; 4] = [0.1, 0.35, 0.4, 0.8];
pub const SEVEN_OOD: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceFixture {
    pub name: String,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    /// `(weight, mean, std)` triples.
    pub components: Vec<(f64, f64, f64)>,
    /// When set, every sample equals this value and `components` is ignored.
    #[serde(default)]
    pub constant: Option<f64>,
}

impl DistanceFixture {
    pub fn data(&self) -> Result<Vec<f64>> {
        match self.constant {
            Some(v) => Ok(vec![v; self.count]),
            None => sample_mixture(&MixtureSpec::new(&self.components, self.count, self.seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: GridSpec,
    #[serde(rename = "fixture")]
    pub fixtures: Vec<DistanceFixture>,
}

pub fn oracle_config() -> OracleConfig {
    toml::from_str(ORACLE_TOML).expect("committed oracle.toml parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureExpectation {
    pub name: String,
    pub m: usize,
    pub oracle_log_likelihood: f64,
    pub oracle_components: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub fixtures: Vec<FixtureExpectation>,
    pub seven_score_auroc: f64,
}

impl Expectations {
    pub fn get(&self, name: &str) -> Option<&FixtureExpectation> {
        self.fixtures.iter().find(|f| f.name == name)
    }
}

pub fn committed_expectations() -> Expectations {
    serde_json::from_str(EXPECTATIONS_JSON).expect("committed expectations.json parses")
}

/// Runs every oracle from scratch.
pub fn compute_expectations(cfg: &OracleConfig) -> Result<Expectations> {
    let fixtures = cfg
        .fixtures
        .iter()
        .map(|f| {
            let opt = grid_likelihood_oracle(&f.data()?, f.m, &cfg.grid)?;
            Ok(FixtureExpectation {
                name: f.name.clone(),
                m: f.m,
                oracle_log_likelihood: opt.log_likelihood,
                oracle_components: opt.components,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Expectations {
        fixtures,
        seven_score_auroc: mann_whitney_auroc(&SEVEN_ID, &SEVEN_OOD),
    })
}
