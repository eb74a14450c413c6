use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::{bias_fedavg, bias_monte_carlo, bias_safa_recurrence, BiasCase, BiasParams};

/// Unknown keys are rejected by the flattened parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSet {
    pub name: String,
    #[serde(flatten)]
    pub params: BiasParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasAnalysisConfig {
    pub trials: usize,
    pub seed: u64,
    pub sets: Vec<BiasSet>,
}

impl Default for BiasAnalysisConfig {
    /// Both clients and the population crash with probability 0.3; one set
    /// per selection case.
    fn default() -> Self {
        let set = |name: &str, c| BiasSet {
            name: name.into(),
            params: BiasParams {
                c,
                r: 0.3,
                cr_a: 0.3,
                cr_b: 0.3,
                rounds: 50,
                background: 100,
            },
        };
        Self {
            trials: 100_000,
            seed: 1,
            sets: vec![set("case1", 0.9), set("case2", 0.55), set("case3", 0.2)],
        }
    }
}

impl BiasAnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        for s in &c.sets {
            s.params
                .validate()
                .map_err(|e| SimError::Config(format!("set {}: {e}", s.name)))?;
        }
        if c.trials == 0 {
            return Err(SimError::Config("trials must be at least 1".into()));
        }
        Ok(c)
    }
}

/// One CSV row: analytic and Monte-Carlo contribution probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub set: String,
    pub case: BiasCase,
    pub round: usize,
    #[serde(rename = "P_A")]
    pub p_a: f64,
    #[serde(rename = "P_B")]
    pub p_b: f64,
    pub bias_analytic: f64,
    pub bias_mc: f64,
    pub mc_stderr: f64,
    pub bias_fedavg: f64,
    #[serde(rename = "P_A_mc")]
    pub p_a_mc: f64,
    #[serde(rename = "P_B_mc")]
    pub p_b_mc: f64,
}

pub fn run_bias_analysis(config: &BiasAnalysisConfig) -> Result<Vec<BiasRow>> {
    let mut rows = Vec::new();
    for set in &config.sets {
        let p = &set.params;
        let analytic = bias_safa_recurrence(p)?;
        let mc = bias_monte_carlo(p, config.trials, config.seed)?;
        let fedavg = bias_fedavg(p.cr_a, p.cr_b)?;
        for r in 0..p.rounds {
            rows.push(BiasRow {
                set: set.name.clone(),
                case: p.case(),
                round: r + 1,
                p_a: analytic.p_a[r],
                p_b: analytic.p_b[r],
                bias_analytic: analytic.bias[r],
                bias_mc: mc.trace.bias[r],
                mc_stderr: mc.bias_se[r],
                bias_fedavg: fedavg,
                p_a_mc: mc.trace.p_a[r],
                p_b_mc: mc.trace.p_b[r],
            });
        }
    }
    Ok(rows)
}

pub fn write_bias_csv<W: Write>(out: W, rows: &[BiasRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sets_cover_all_cases() {
        let c = BiasAnalysisConfig::default();
        let cases: Vec<BiasCase> = c.sets.iter().map(|s| s.params.case()).collect();
        assert_eq!(
            cases,
            vec![BiasCase::Case1, BiasCase::Case2, BiasCase::Case3]
        );
    }

    #[test]
    fn parses_sets() {
        let text = "trials = 10\nseed = 3\n[[sets]]\nname = \"x\"\nc = 0.5\nr = 0.3\ncr_a = 0.1\ncr_b = 0.2\nrounds = 4\n";
        let c = BiasAnalysisConfig::from_toml(text).unwrap();
        assert_eq!(c.sets[0].params.background, 100);
        let rows = run_bias_analysis(&c).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(BiasAnalysisConfig::from_toml("trials = 0\nseed = 1\nsets = []\n").is_err());
    }
}
