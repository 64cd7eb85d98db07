//! Labeled duels and the oracle-only experience buffer.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{ContextVec, ResponseRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    #[serde(rename = "oracle")]
    OracleLabel,
    #[serde(rename = "synthetic")]
    SyntheticLabel,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::OracleLabel => "oracle",
            LabelSource::SyntheticLabel => "synthetic",
        }
    }
}

impl std::str::FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(LabelSource::OracleLabel),
            "synthetic" => Ok(LabelSource::SyntheticLabel),
            other => Err(format!("unknown label source `{other}`")),
        }
    }
}

/// A labeled duel `{x, y+, y-}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PreferenceTriplet<T> {
    pub context: ContextVec<T>,
    pub winner: ResponseRef<T>,
    pub loser: ResponseRef<T>,
    pub source: LabelSource,
    pub round: u64,
}

impl<T: Scalar> PreferenceTriplet<T> {
    pub fn new(
        context: ContextVec<T>,
        winner: ResponseRef<T>,
        loser: ResponseRef<T>,
        source: LabelSource,
        round: u64,
    ) -> Result<Self> {
        if winner.action_id == loser.action_id {
            return input_err(format!(
                "winner and loser share action {}",
                winner.action_id
            ));
        }
        if winner.features.len() != loser.features.len() {
            return input_err("winner and loser feature lengths differ");
        }
        Ok(Self {
            context,
            winner,
            loser,
            source,
            round,
        })
    }
}

/// Append-only store of oracle-labeled triplets.
#[derive(Clone, Debug, Default)]
pub struct ExperienceBuffer<T> {
    triplets: Vec<PreferenceTriplet<T>>,
}

impl<T: Scalar> ExperienceBuffer<T> {
    pub fn new() -> Self {
        Self {
            triplets: Vec::new(),
        }
    }

    /// Appends an oracle-labeled triplet. Synthetic labels are refused.
    pub fn push(&mut self, t: PreferenceTriplet<T>) -> Result<()> {
        if t.source != LabelSource::OracleLabel {
            return Err(Error::State(
                "synthetic triplets never enter the experience buffer".into(),
            ));
        }
        self.triplets.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Consistent read-only view of everything appended so far.
    pub fn snapshot(&self) -> &[PreferenceTriplet<T>] {
        &self.triplets
    }

    /// `b` triplets drawn uniformly with replacement.
    pub fn sample_batch(&self, b: usize, rng: &mut RngStream) -> Result<Vec<&PreferenceTriplet<T>>> {
        if self.triplets.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        Ok((0..b)
            .map(|_| &self.triplets[rng.index(self.triplets.len())])
            .collect())
    }
}
