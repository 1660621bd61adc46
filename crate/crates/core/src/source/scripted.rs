//! A source that replays fixed per-step distribution pairs.
//!
//! The step index is the length of the generated prefix; context and query
//! are ignored apart from vocabulary validation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_ids, LmSource, SourceError};
use crate::dist::TokenDistribution;
use crate::TokenId;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedStep {
    pub p_ctx: Vec<f64>,
    pub p_noctx: Vec<f64>,
}

/// Fixture format: `{"vocab": [...], "steps": [{"p_ctx": [...], "p_noctx": [...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedScenario {
    pub vocab: Vec<String>,
    pub steps: Vec<ScriptedStep>,
}

impl ScriptedScenario {
    pub fn validate(&self) -> Result<(), SourceError> {
        let v = self.vocab.len();
        if v < 2 {
            return Err(SourceError::InvalidScenario(format!("vocabulary of {v} tokens")));
        }
        if self.steps.is_empty() {
            return Err(SourceError::InvalidScenario("no steps".into()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            for (name, p) in [("p_ctx", &step.p_ctx), ("p_noctx", &step.p_noctx)] {
                if p.len() != v {
                    return Err(SourceError::InvalidScenario(format!(
                        "step {i} {name} has {} entries, vocabulary has {v}",
                        p.len()
                    )));
                }
                if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(SourceError::InvalidScenario(format!(
                        "step {i} {name} has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(SourceError::InvalidScenario(format!(
                        "step {i} {name} sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SourceError> {
        let scenario: ScriptedScenario = serde_json::from_str(text)
            .map_err(|e| SourceError::InvalidScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SourceError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            SourceError::InvalidScenario(msg) => {
                SourceError::InvalidScenario(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SourceError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedSource {
    scenario: ScriptedScenario,
    dists: Vec<(TokenDistribution, TokenDistribution)>,
}

impl ScriptedSource {
    pub fn new(scenario: ScriptedScenario) -> Result<Self, SourceError> {
        scenario.validate()?;
        let dists = scenario
            .steps
            .iter()
            .map(|s| {
                Ok((
                    TokenDistribution::from_probs(&s.p_ctx)?,
                    TokenDistribution::from_probs(&s.p_noctx)?,
                ))
            })
            .collect::<Result<_, SourceError>>()?;
        Ok(ScriptedSource { scenario, dists })
    }

    pub fn load(path: &Path) -> Result<Self, SourceError> {
        Self::new(ScriptedScenario::load(path)?)
    }

    pub fn scenario(&self) -> &ScriptedScenario {
        &self.scenario
    }

    pub fn num_steps(&self) -> usize {
        self.dists.len()
    }

    /// The stored probability vectors of `step`, untouched.
    pub fn raw_step(&self, step: usize) -> Result<&ScriptedStep, SourceError> {
        self.scenario.steps.get(step).ok_or(SourceError::StepOutOfRange {
            step,
            steps: self.dists.len(),
        })
    }

    pub fn step(&self, step: usize) -> Result<(&TokenDistribution, &TokenDistribution), SourceError> {
        self.dists
            .get(step)
            .map(|(c, n)| (c, n))
            .ok_or(SourceError::StepOutOfRange {
                step,
                steps: self.dists.len(),
            })
    }
}

impl LmSource for ScriptedSource {
    fn vocab(&self) -> &[String] {
        &self.scenario.vocab
    }

    fn next_distribution(
        &self,
        context: Option<&[TokenId]>,
        query: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<TokenDistribution, SourceError> {
        let v = self.scenario.vocab.len();
        check_ids(query, v)?;
        check_ids(prefix, v)?;
        if let Some(c) = context {
            check_ids(c, v)?;
        }
        let (p_ctx, p_noctx) = self.step(prefix.len())?;
        Ok(if context.is_some() { p_ctx.clone() } else { p_noctx.clone() })
    }

    fn step_limit(&self) -> Option<usize> {
        Some(self.dists.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> ScriptedScenario {
        ScriptedScenario {
            vocab: vec!["<bos>".into(), "<eos>".into(), "a".into()],
            steps: vec![
                ScriptedStep {
                    p_ctx: vec![0.1, 0.2, 0.7],
                    p_noctx: vec![0.3, 0.3, 0.4],
                },
                ScriptedStep {
                    p_ctx: vec![0.0, 0.9, 0.1],
                    p_noctx: vec![0.5, 0.25, 0.25],
                },
            ],
        }
    }

    #[test]
    fn replays_steps_by_prefix_length() {
        let src = ScriptedSource::new(scenario()).unwrap();
        let with = src.next_distribution(Some(&[2]), &[2], &[]).unwrap();
        let without = src.next_distribution(None, &[2], &[]).unwrap();
        assert_eq!(with.argmax(), 2);
        assert!((without.prob(2) - 0.4).abs() < 1e-15);
        let second = src.next_distribution(Some(&[]), &[2], &[2]).unwrap();
        assert_eq!(second.argmax(), 1);
        assert_eq!(src.step_limit(), Some(2));
    }

    #[test]
    fn raw_step_is_bitwise_fixture() {
        let src = ScriptedSource::new(scenario()).unwrap();
        assert_eq!(src.raw_step(0).unwrap(), &scenario().steps[0]);
    }

    #[test]
    fn step_out_of_range() {
        let src = ScriptedSource::new(scenario()).unwrap();
        assert!(matches!(
            src.next_distribution(None, &[2], &[2, 2]),
            Err(SourceError::StepOutOfRange { step: 2, steps: 2 })
        ));
    }

    #[test]
    fn rejects_malformed_scenarios() {
        let mut s = scenario();
        s.steps[1].p_noctx = vec![0.5, 0.5];
        assert!(matches!(s.validate(), Err(SourceError::InvalidScenario(_))));
        let mut s = scenario();
        s.steps[0].p_ctx = vec![0.5, 0.5, 0.1];
        assert!(matches!(s.validate(), Err(SourceError::InvalidScenario(_))));
        assert!(ScriptedScenario::from_json("{\"vocab\": []").is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = scenario();
        let back = ScriptedScenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }
}
