use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Conversation, LabelTask};

/// Keep `fraction` of the turns labelled `label` under `task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownsampleSpec {
    pub task: LabelTask,
    pub label: String,
    pub fraction: f64,
}

impl fmt::Display for DownsampleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}={}", self.task.as_str(), self.label, self.fraction)
    }
}

/// `[task:]label=fraction`; the task defaults to emotion.
impl FromStr for DownsampleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("downsample spec '{s}' is not [task:]label=fraction"));
        let (lhs, frac) = s.rsplit_once('=').ok_or_else(bad)?;
        let (task, label) = match lhs.split_once(':') {
            Some((t, l)) => (
                t.parse::<LabelTask>()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?,
                l,
            ),
            None => (LabelTask::Emotion, lhs),
        };
        let fraction: f64 = frac.trim().parse().map_err(|_| bad())?;
        if label.trim().is_empty() {
            return Err(bad());
        }
        let spec = DownsampleSpec {
            task,
            label: label.trim().to_owned(),
            fraction,
        };
        spec.check()?;
        Ok(spec)
    }
}

impl DownsampleSpec {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidArgument(format!(
                "downsample fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Removes the label from all but a seeded random `fraction` of the turns
/// carrying it, separately within each source (split). Returns the retained
/// turn ids (`<conversation>#<index>`).
pub fn downsample(conversations: &mut [Conversation], spec: &DownsampleSpec, seed: u64) -> Result<BTreeSet<String>> {
    spec.check()?;
    let mut by_source: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (ci, c) in conversations.iter().enumerate() {
        for (ti, t) in c.turns.iter().enumerate() {
            if t.labels.get(&spec.task) == Some(&spec.label) {
                by_source.entry(c.source.clone()).or_default().push((ci, ti));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained = BTreeSet::new();
    for (_, mut turns) in by_source {
        turns.sort_by(|a, b| {
            let key = |&(ci, ti): &(usize, usize)| (conversations[ci].id.clone(), ti);
            key(a).cmp(&key(b))
        });
        let keep = (spec.fraction * turns.len() as f64).round() as usize;
        turns.shuffle(&mut rng);
        for (n, &(ci, ti)) in turns.iter().enumerate() {
            if n < keep {
                retained.insert(format!("{}#{ti}", conversations[ci].id));
            } else {
                conversations[ci].turns[ti].labels.remove(&spec.task);
            }
        }
    }
    Ok(retained)
}
