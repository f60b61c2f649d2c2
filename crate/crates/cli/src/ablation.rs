//! Reward-channel ablation sweeps: named channel subsets applied to the
//! post-warm-up iterations, one full run per subset per seed from identical
//! initial parameters.

use std::path::Path;

use groundloop::config::HarnessConfig;
use groundloop::evolution::{Channel, ChannelWeightMap};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One named channel subset. The format channel is always required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSubset {
    pub name: String,
    pub channels: Vec<Channel>,
}

/// The sweep definition: subsets plus an optional iteration-count override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub subsets: Vec<AblationSubset>,
    /// Truncate the schedule to this many iterations when set.
    pub iterations: Option<usize>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            subsets: vec![
                AblationSubset { name: "fmt".into(), channels: vec![Channel::Format] },
                AblationSubset { name: "fmt+con".into(), channels: vec![Channel::Format, Channel::Consistency] },
                AblationSubset { name: "fmt+feed".into(), channels: vec![Channel::Format, Channel::Feedback] },
                AblationSubset {
                    name: "all".into(),
                    channels: vec![Channel::Format, Channel::Consistency, Channel::Feedback],
                },
            ],
            iterations: None,
        }
    }
}

impl AblationSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read ablation spec {}: {e}", path.display())))?;
        let spec: AblationSpec =
            toml::from_str(&text).map_err(|e| HarnessError::Usage(format!("cannot parse ablation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.subsets.is_empty() {
            return Err(HarnessError::Usage("ablation spec needs at least one subset".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.subsets {
            if s.name.is_empty() {
                return Err(HarnessError::Usage("ablation subset names must be nonempty".into()));
            }
            if !names.insert(&s.name) {
                return Err(HarnessError::Usage(format!("duplicate ablation subset name {:?}", s.name)));
            }
            if !s.channels.contains(&Channel::Format) {
                return Err(HarnessError::Usage(format!(
                    "ablation subset {:?} must include the format channel",
                    s.name
                )));
            }
        }
        if self.iterations == Some(0) {
            return Err(HarnessError::Usage("ablation iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Build the per-subset config: the warm-up iteration is untouched, later
/// iterations activate exactly the subset's channels with the default
/// weights (format 0.5, consistency 0.5, feedback 1.0).
pub fn subset_config(base: &HarnessConfig, subset: &AblationSubset, iterations: Option<usize>) -> HarnessConfig {
    let mut cfg = base.clone();
    if let Some(k) = iterations {
        cfg.schedule.iterations.truncate(k);
    }
    for it in cfg.schedule.iterations.iter_mut().skip(1) {
        it.channels = subset.channels.clone();
        it.weights = ChannelWeightMap {
            format: Some(0.5),
            consistency: subset.channels.contains(&Channel::Consistency).then_some(0.5),
            feedback: subset.channels.contains(&Channel::Feedback).then_some(1.0),
        };
    }
    cfg
}
