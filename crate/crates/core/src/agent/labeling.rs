//! Mixed preference labeling: oracle labels with probability `γ`, otherwise
//! a pseudo-label from one posterior sample of the reward model.

use crate::erm::EpistemicRewardModel;
use crate::error::{input_err, Result};
use crate::experience::{LabelSource, PreferenceTriplet};
use crate::oracle::PreferenceLabeler;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{ContextVec, ResponseRef};

/// Winner under a single sampled head; ties to the lower action id.
pub fn synthetic_label<T: Scalar>(
    erm: &EpistemicRewardModel<T>,
    x: &ContextVec<T>,
    y: &ResponseRef<T>,
    y_prime: &ResponseRef<T>,
    rng: &mut RngStream,
    round: u64,
) -> Result<PreferenceTriplet<T>> {
    if y.action_id == y_prime.action_id {
        return input_err("cannot label a duel between identical actions");
    }
    let head = &erm.heads()[erm.posterior_sample(rng)];
    let (ry, ryp) = (head.reward(x, y)?, head.reward(x, y_prime)?);
    let y_wins = ry > ryp || (ry == ryp && y.action_id < y_prime.action_id);
    let (w, l) = if y_wins { (y, y_prime) } else { (y_prime, y) };
    PreferenceTriplet::new(x.clone(), w.clone(), l.clone(), LabelSource::SyntheticLabel, round)
}

/// Labels a duel from the `γ`-mixture given the uniform draw `g`.
///
/// Only the oracle branch calls `labeler`; the caller decides what enters
/// the experience buffer based on the returned triplet's `source`.
#[allow(clippy::too_many_arguments)]
pub fn mixed_label<T: Scalar>(
    g: f64,
    gamma: f64,
    labeler: &mut dyn PreferenceLabeler<T>,
    erm: &EpistemicRewardModel<T>,
    x: &ContextVec<T>,
    y: &ResponseRef<T>,
    y_prime: &ResponseRef<T>,
    oracle_rng: &mut RngStream,
    synthetic_rng: &mut RngStream,
    round: u64,
) -> Result<PreferenceTriplet<T>> {
    if g < gamma {
        labeler.label(x, y, y_prime, oracle_rng, round)
    } else {
        synthetic_label(erm, x, y, y_prime, synthetic_rng, round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erm::{HeadOptimizer, RewardHead};
    use crate::mlp::Mlp;
    use crate::oracle::{LabelMode, OracleSpec};

    struct Counting {
        inner: OracleSpec<f64>,
        calls: usize,
    }

    impl PreferenceLabeler<f64> for Counting {
        fn label(
            &mut self,
            x: &ContextVec<f64>,
            y: &ResponseRef<f64>,
            yp: &ResponseRef<f64>,
            rng: &mut RngStream,
            round: u64,
        ) -> Result<PreferenceTriplet<f64>> {
            self.calls += 1;
            self.inner.label_pair(x, y, yp, rng, round)
        }
    }

    fn fixture() -> (Counting, EpistemicRewardModel<f64>, ContextVec<f64>, ResponseRef<f64>, ResponseRef<f64>) {
        let oracle = OracleSpec::linear(vec![1.0], LabelMode::Deterministic);
        let head = RewardHead::new(Mlp::from_params(1, &[], vec![-1.0, 0.0]).unwrap());
        let erm = EpistemicRewardModel::from_heads(vec![head], 0.5, 0.1, HeadOptimizer::Sgd).unwrap();
        (
            Counting { inner: oracle, calls: 0 },
            erm,
            ContextVec::new(vec![0.0]).unwrap(),
            ResponseRef::new(0, vec![0.8]).unwrap(),
            ResponseRef::new(1, vec![0.1]).unwrap(),
        )
    }

    #[test]
    fn gamma_one_always_queries_oracle() {
        let (mut lab, erm, x, y, yp) = fixture();
        let mut g = RngStream::root(0);
        let (mut o, mut s) = (RngStream::root(1), RngStream::root(2));
        for r in 0..100 {
            let t = mixed_label(g.uniform(), 1.0, &mut lab, &erm, &x, &y, &yp, &mut o, &mut s, r).unwrap();
            assert_eq!(t.source, LabelSource::OracleLabel);
            assert_eq!(t.winner.action_id, 0);
        }
        assert_eq!(lab.calls, 100);
    }

    #[test]
    fn gamma_zero_never_queries_oracle() {
        let (mut lab, erm, x, y, yp) = fixture();
        let mut g = RngStream::root(0);
        let (mut o, mut s) = (RngStream::root(1), RngStream::root(2));
        for r in 0..100 {
            let t = mixed_label(g.uniform(), 0.0, &mut lab, &erm, &x, &y, &yp, &mut o, &mut s, r).unwrap();
            assert_eq!(t.source, LabelSource::SyntheticLabel);
            // the single head prefers lower features
            assert_eq!(t.winner.action_id, 1);
        }
        assert_eq!(lab.calls, 0);
    }
}
