use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use scalesim::cost::RiskAversion;
use scalesim::engine::{Environment, Scenario};
use scalesim::policies::PolicyConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A named policy with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub name: String,
    pub policy: PolicyConfig,
}

/// One experiment: a scenario template crossed with policies, risk levels
/// and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Environment,
    pub policies: Vec<PolicyEntry>,
    pub alphas: Vec<f64>,
    /// First seed; replication `i` runs with `master_seed + i`.
    #[serde(default)]
    pub master_seed: u64,
    pub replications: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn yes() -> bool {
    true
}

/// One cell of the cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub scenario: Scenario,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and validate. Errors are anchored at `origin:line:column`.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config {
            location: format!("{origin}:{}:{}", e.line(), e.column()),
            message: strip_position(&e.to_string()),
        })?;
        config.validate().map_err(|(key, message)| {
            let (line, column) = locate_key(text, key);
            CliError::Config {
                location: format!("{origin}:{line}:{column}"),
                message,
            }
        })?;
        Ok(config)
    }

    /// On failure, the JSON key the problem is attributed to and a message.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.policies.is_empty() {
            return Err(("policies", "at least one policy is required".into()));
        }
        if self.alphas.is_empty() {
            return Err(("alphas", "at least one alpha is required".into()));
        }
        if self.replications == 0 {
            return Err(("replications", "at least one seed is required".into()));
        }
        let mut names = BTreeSet::new();
        for p in &self.policies {
            if p.name.is_empty() || p.name.contains([',', '/', '\\']) {
                return Err(("name", format!("invalid policy name {:?}", p.name)));
            }
            if !names.insert(p.name.as_str()) {
                return Err(("name", format!("duplicate policy name {:?}", p.name)));
            }
            p.policy
                .validate()
                .map_err(|e| ("policy", format!("policy {:?}: {e}", p.name)))?;
        }
        for a in &self.alphas {
            RiskAversion::new(*a).map_err(|e| ("alphas", e.to_string()))?;
        }
        self.scenario
            .validate()
            .map_err(|e| (error_key(&e), e.to_string()))?;
        Ok(())
    }

    /// Cross product in a fixed order: policy, then alpha, then seed.
    pub fn runs(&self, master_seed: u64, seed_offset: u64) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for p in &self.policies {
            for &alpha in &self.alphas {
                for i in 0..self.replications {
                    let seed = master_seed.wrapping_add(seed_offset).wrapping_add(i);
                    out.push(RunSpec {
                        policy: p.name.clone(),
                        alpha,
                        seed,
                        scenario: Scenario {
                            name: p.name.clone(),
                            env: self.scenario.clone(),
                            policy: p.policy.clone(),
                            alpha: RiskAversion::new(alpha).expect("validated"),
                            master_seed: seed,
                        },
                    });
                }
            }
        }
        out
    }
}

fn error_key(e: &scalesim::Error) -> &'static str {
    match e {
        scalesim::Error::InvalidParameter { field, .. } => field,
        _ => "scenario",
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// 1-based position of the first `"key"` in the document, or 1:1.
fn locate_key(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    for (i, line) in text.lines().enumerate() {
        if let Some(col) = line.find(&needle) {
            return (i + 1, col + 1);
        }
    }
    (1, 1)
}
