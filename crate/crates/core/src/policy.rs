//! Linear-softmax policy over the response universe and the direct
//! preference optimizers (DPO, IPO, SLiC) that train it.
//!
//! `π_θ(y|x) ∝ exp(θ·φ(x,y)/η)`. Within one context the normalizer cancels
//! from every log-ratio the losses use, so
//! `h = [log π_θ(y⁺) − log π_ref(y⁺)] − [log π_θ(y⁻) − log π_ref(y⁻)]`
//! reduces to a difference of logits and `∂h/∂θ = (φ⁺ − φ⁻)/η` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::experience::PreferenceTriplet;
use crate::math::{argmax_first, logsumexp, neg_log_sigmoid, sigmoid};
use crate::rng::RngStream;
use crate::scalar::{dot, Scalar};
use crate::space::{ResponseRef, Universe};
use crate::UpdateStatus;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SoftmaxPolicy<T> {
    theta: Vec<T>,
    temperature: T,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn new(theta: Vec<T>, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return input_err("sampling temperature must be positive and finite");
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return input_err("policy parameters must be finite");
        }
        Ok(Self { theta, temperature })
    }

    /// `θ = 0`: uniform over the universe.
    pub fn uniform(feature_dim: usize, temperature: T) -> Result<Self> {
        Self::new(vec![T::zero(); feature_dim], temperature)
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn with_temperature(&self, temperature: T) -> Result<Self> {
        Self::new(self.theta.clone(), temperature)
    }

    /// `θ·φ(x,y)/η`.
    pub fn logit(&self, y: &ResponseRef<T>) -> T {
        dot(&self.theta, &y.features) / self.temperature
    }

    pub fn logits(&self, universe: &Universe<T>) -> Vec<T> {
        universe.responses.iter().map(|y| self.logit(y)).collect()
    }

    /// `log π_θ(y|x)` for `action_id` within the universe of `x`.
    pub fn log_prob(&self, universe: &Universe<T>, action_id: usize) -> Result<T> {
        let y = universe.get(action_id)?;
        if y.features.len() != self.theta.len() {
            return input_err("feature dimension does not match policy");
        }
        let logits = self.logits(universe);
        Ok(logits[action_id] - logsumexp(&logits))
    }

    pub fn probs(&self, universe: &Universe<T>) -> Vec<T> {
        let logits = self.logits(universe);
        let lse = logsumexp(&logits);
        logits.into_iter().map(|l| (l - lse).exp()).collect()
    }

    /// One action id drawn from `π_θ(·|x)`.
    pub fn sample(&self, universe: &Universe<T>, rng: &mut RngStream) -> usize {
        let w: Vec<f64> = self.probs(universe).into_iter().map(|p| p.as_f64()).collect();
        rng.categorical(&w)
    }

    /// `M` draws with replacement, deduplicated keeping first occurrences.
    pub fn sample_candidates(
        &self,
        universe: &Universe<T>,
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<ResponseRef<T>>> {
        if m == 0 {
            return input_err("proposal set size must be positive");
        }
        let w: Vec<f64> = self.probs(universe).into_iter().map(|p| p.as_f64()).collect();
        let mut seen = vec![false; universe.len()];
        let mut out = Vec::new();
        for _ in 0..m {
            let a = rng.categorical(&w);
            if !seen[a] {
                seen[a] = true;
                out.push(universe.responses[a].clone());
            }
        }
        Ok(out)
    }

    /// `argmax_y θ·φ(x,y)`, lowest action id on ties.
    pub fn greedy_response<'u>(&self, universe: &'u Universe<T>) -> &'u ResponseRef<T> {
        let scores = universe.responses.iter().map(|y| dot(&self.theta, &y.features));
        &universe.responses[argmax_first(scores).expect("non-empty universe")]
    }

    /// Gradient descent step `θ ← θ − α·∇`.
    pub fn policy_update(
        &mut self,
        batch: &[&PreferenceTriplet<T>],
        loss: &DapLoss<T>,
        reference: &ReferencePolicy<T>,
        learning_rate: T,
    ) -> Result<UpdateStatus> {
        if batch.is_empty() {
            log::warn!("policy update skipped: empty batch");
            return Ok(UpdateStatus::Skipped);
        }
        let grad = loss.grad(self, reference, batch)?;
        for (t, g) in self.theta.iter_mut().zip(grad) {
            *t = *t - learning_rate * g;
        }
        Ok(UpdateStatus::Applied { steps: 1 })
    }
}

/// Frozen `π_ref`; the online policy starts from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReferencePolicy<T> {
    policy: SoftmaxPolicy<T>,
}

impl<T: Scalar> ReferencePolicy<T> {
    pub fn new(policy: SoftmaxPolicy<T>) -> Self {
        Self { policy }
    }

    pub fn uniform(feature_dim: usize, temperature: T) -> Result<Self> {
        Ok(Self::new(SoftmaxPolicy::uniform(feature_dim, temperature)?))
    }

    pub fn policy(&self) -> &SoftmaxPolicy<T> {
        &self.policy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DapKind {
    Dpo,
    Ipo,
    Slic,
}

impl DapKind {
    pub fn default_beta(self) -> f64 {
        match self {
            DapKind::Dpo => 0.1,
            DapKind::Ipo | DapKind::Slic => 0.2,
        }
    }

    /// Plain-SGD step size. IPO's squared loss has gradients roughly two
    /// orders of magnitude larger than DPO's near `h = 0`.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            DapKind::Dpo | DapKind::Slic => 5e-2,
            DapKind::Ipo => 2e-3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DapKind::Dpo => "dpo",
            DapKind::Ipo => "ipo",
            DapKind::Slic => "slic",
        }
    }
}

impl std::str::FromStr for DapKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dpo" => Ok(Self::Dpo),
            "ipo" => Ok(Self::Ipo),
            "slic" => Ok(Self::Slic),
            other => Err(format!("unknown optimizer `{other}` (dpo|ipo|slic)")),
        }
    }
}

/// A direct-alignment loss `F` with its deviation coefficient `β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DapLoss<T> {
    pub kind: DapKind,
    pub beta: T,
}

impl<T: Scalar> DapLoss<T> {
    pub fn new(kind: DapKind, beta: T) -> Result<Self> {
        if !(beta > T::zero()) || !beta.is_finite() {
            return input_err("beta must be positive and finite");
        }
        Ok(Self { kind, beta })
    }

    pub fn with_default_beta(kind: DapKind) -> Self {
        Self {
            kind,
            beta: T::lit(kind.default_beta()),
        }
    }

    /// Policy-vs-reference log-ratio margin `h` of a triplet.
    pub fn margin(
        &self,
        policy: &SoftmaxPolicy<T>,
        reference: &ReferencePolicy<T>,
        t: &PreferenceTriplet<T>,
    ) -> Result<T> {
        if t.winner.action_id == t.loser.action_id {
            return input_err("triplet winner equals loser");
        }
        let p = policy.theta.len();
        if t.winner.features.len() != p || t.loser.features.len() != p {
            return input_err("triplet feature dimension does not match policy");
        }
        let r = reference.policy();
        Ok((policy.logit(&t.winner) - policy.logit(&t.loser)) - (r.logit(&t.winner) - r.logit(&t.loser)))
    }

    pub fn loss_at(&self, h: T) -> T {
        let one = T::one();
        match self.kind {
            DapKind::Dpo => neg_log_sigmoid(self.beta * h),
            DapKind::Ipo => {
                let d = h - one / (T::lit(2.0) * self.beta);
                d * d
            }
            DapKind::Slic => (one - self.beta * h).max(T::zero()),
        }
    }

    /// `dF/dh`; SLiC takes the zero subgradient at the hinge.
    pub fn dloss_dh(&self, h: T) -> T {
        match self.kind {
            DapKind::Dpo => -self.beta * sigmoid(-self.beta * h),
            DapKind::Ipo => T::lit(2.0) * (h - T::one() / (T::lit(2.0) * self.beta)),
            DapKind::Slic => {
                if T::one() - self.beta * h > T::zero() {
                    -self.beta
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn loss(
        &self,
        policy: &SoftmaxPolicy<T>,
        reference: &ReferencePolicy<T>,
        t: &PreferenceTriplet<T>,
    ) -> Result<T> {
        Ok(self.loss_at(self.margin(policy, reference, t)?))
    }

    /// Mean loss over a batch.
    pub fn batch_loss(
        &self,
        policy: &SoftmaxPolicy<T>,
        reference: &ReferencePolicy<T>,
        batch: &[&PreferenceTriplet<T>],
    ) -> Result<T> {
        if batch.is_empty() {
            return input_err("loss over an empty batch");
        }
        let mut total = T::zero();
        for t in batch {
            total = total + self.loss(policy, reference, t)?;
        }
        Ok(total / T::from_usize(batch.len()).unwrap())
    }

    /// Gradient of the mean batch loss with respect to `θ`.
    pub fn grad(
        &self,
        policy: &SoftmaxPolicy<T>,
        reference: &ReferencePolicy<T>,
        batch: &[&PreferenceTriplet<T>],
    ) -> Result<Vec<T>> {
        if batch.is_empty() {
            return input_err("gradient over an empty batch");
        }
        let n = T::from_usize(batch.len()).unwrap();
        let mut g = vec![T::zero(); policy.theta.len()];
        for t in batch {
            let h = self.margin(policy, reference, t)?;
            let c = self.dloss_dh(h) / (policy.temperature * n);
            if c == T::zero() {
                continue;
            }
            for ((gi, &w), &l) in g.iter_mut().zip(&t.winner.features).zip(&t.loser.features) {
                *gi = *gi + c * (w - l);
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::LabelSource;
    use crate::space::{ContextVec, FeatureDims, FeatureMap};

    fn universe(seed: u64) -> Universe<f64> {
        let fm = FeatureMap::new(FeatureDims::default(), 1).unwrap();
        fm.universe(&ContextVec::sample(8, &mut RngStream::root(seed))).unwrap()
    }

    fn random_policy(seed: u64, scale: f64) -> SoftmaxPolicy<f64> {
        let mut r = RngStream::root(seed);
        SoftmaxPolicy::new((0..32).map(|_| scale * r.normal()).collect(), 0.7).unwrap()
    }

    fn triplet(u: &Universe<f64>, w: usize, l: usize) -> PreferenceTriplet<f64> {
        PreferenceTriplet::new(
            u.context.clone(),
            u.responses[w].clone(),
            u.responses[l].clone(),
            LabelSource::OracleLabel,
            0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_log_prob() {
        let u = universe(1);
        let p = SoftmaxPolicy::uniform(32, 0.7).unwrap();
        for a in 0..32 {
            assert!((p.log_prob(&u, a).unwrap() - (1.0f64 / 32.0).ln()).abs() < 1e-14);
        }
        assert!(p.log_prob(&u, 32).is_err());
    }

    #[test]
    fn probabilities_normalize() {
        let u = universe(2);
        let p = random_policy(3, 2.0);
        let total: f64 = (0..32).map(|a| p.log_prob(&u, a).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scaling_theta_and_temperature_together_is_invariant() {
        let u = universe(4);
        let p = random_policy(5, 1.0);
        let q = SoftmaxPolicy::new(p.theta().iter().map(|t| 2.0 * t).collect(), 1.4).unwrap();
        for a in 0..32 {
            assert!((p.log_prob(&u, a).unwrap() - q.log_prob(&u, a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance_of_log_prob() {
        // adding a constant feature direction that is identical across actions
        // shifts every logit equally
        let mut u = universe(6);
        let p = SoftmaxPolicy::new(
            {
                let mut t = random_policy(7, 1.0).theta().to_vec();
                t.push(3.0);
                t
            },
            0.7,
        )
        .unwrap();
        let base: Vec<f64> = {
            for r in &mut u.responses {
                r.features.push(0.0);
            }
            (0..32).map(|a| p.log_prob(&u, a).unwrap()).collect()
        };
        for r in &mut u.responses {
            *r.features.last_mut().unwrap() = 0.9;
        }
        for a in 0..32 {
            assert!((p.log_prob(&u, a).unwrap() - base[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn candidates_single_action_universe() {
        let mut u = universe(8);
        u.responses.truncate(1);
        let p = SoftmaxPolicy::uniform(32, 0.7).unwrap();
        let s = p.sample_candidates(&u, 20, &mut RngStream::root(1)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].action_id, 0);
    }

    #[test]
    fn candidates_occupancy_under_uniform_policy() {
        let u = universe(9);
        let p = SoftmaxPolicy::uniform(32, 0.7).unwrap();
        let mut rng = RngStream::root(10);
        let runs = 2000;
        let mean = (0..runs)
            .map(|_| p.sample_candidates(&u, 20, &mut rng).unwrap().len() as f64)
            .sum::<f64>()
            / runs as f64;
        // 32·(1 − (31/32)^20) = 14.99…
        let expected = 32.0 * (1.0 - (31.0f64 / 32.0).powi(20));
        assert!((mean - expected).abs() < 0.2, "{mean} vs {expected}");
    }

    #[test]
    fn candidates_are_distinct_and_concentrated_policy_gives_singleton() {
        let u = universe(11);
        let mut theta = vec![0.0; 32];
        theta[0] = 1.0;
        let p = SoftmaxPolicy::new(theta, 1e-4).unwrap();
        let mut rng = RngStream::root(12);
        let mut singletons = 0;
        for _ in 0..200 {
            let s = p.sample_candidates(&u, 20, &mut rng).unwrap();
            let mut ids: Vec<_> = s.iter().map(|r| r.action_id).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), s.len());
            singletons += (s.len() == 1) as usize;
        }
        assert!(singletons >= 198);
    }

    #[test]
    fn greedy_cases() {
        let u = universe(13);
        let zero = SoftmaxPolicy::uniform(32, 0.7).unwrap();
        assert_eq!(zero.greedy_response(&u).action_id, 0);
        for seed in 0..20 {
            let p = random_policy(seed, 1.5);
            let lp: Vec<f64> = (0..32).map(|a| p.log_prob(&u, a).unwrap()).collect();
            let best = argmax_first(lp).unwrap();
            assert_eq!(p.greedy_response(&u).action_id, best);
            let cooler = p.with_temperature(0.05).unwrap();
            assert_eq!(cooler.greedy_response(&u).action_id, best);
        }
    }

    #[test]
    fn loss_reference_values() {
        let dpo = DapLoss::<f64>::new(DapKind::Dpo, 0.1).unwrap();
        assert!((dpo.loss_at(1.0) - 0.644_396_660_073_571_4).abs() < 1e-12);
        let ipo = DapLoss::<f64>::new(DapKind::Ipo, 0.2).unwrap();
        assert!((ipo.loss_at(1.0) - 2.25).abs() < 1e-12);
        let slic = DapLoss::<f64>::new(DapKind::Slic, 0.2).unwrap();
        assert!((slic.loss_at(1.0) - 0.8).abs() < 1e-12);
        assert!(DapLoss::new(DapKind::Dpo, 0.0).is_err());
    }

    #[test]
    fn identity_policy_losses() {
        let u = universe(14);
        let pol = random_policy(15, 1.0);
        let reference = ReferencePolicy::new(pol.clone());
        let t = triplet(&u, 3, 9);
        let beta = 0.3;
        let l = |k| DapLoss::new(k, beta).unwrap().loss(&pol, &reference, &t).unwrap();
        assert!((l(DapKind::Dpo) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l(DapKind::Ipo) - 1.0 / (4.0 * beta * beta)).abs() < 1e-12);
        assert!((l(DapKind::Slic) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_equals_log_prob_form() {
        let u = universe(16);
        let pol = random_policy(17, 1.0);
        let reference = ReferencePolicy::new(random_policy(18, 0.5));
        let t = triplet(&u, 5, 20);
        let loss = DapLoss::<f64>::new(DapKind::Dpo, 0.1).unwrap();
        let h = loss.margin(&pol, &reference, &t).unwrap();
        let lp = |p: &SoftmaxPolicy<f64>, a| p.log_prob(&u, a).unwrap();
        let direct = (lp(&pol, 5) - lp(reference.policy(), 5)) - (lp(&pol, 20) - lp(reference.policy(), 20));
        assert!((h - direct).abs() < 1e-12);
    }

    #[test]
    fn slic_gradient_is_zero_beyond_hinge() {
        let u = universe(19);
        let reference = ReferencePolicy::uniform(32, 0.7).unwrap();
        let t = triplet(&u, 1, 2);
        let dir: Vec<f64> = t.winner.features.iter().zip(&t.loser.features).map(|(a, b)| a - b).collect();
        // θ along Δφ with margin h well above 1/β
        let norm2: f64 = dir.iter().map(|d| d * d).sum();
        let theta: Vec<f64> = dir.iter().map(|d| d * 0.7 * 20.0 / norm2).collect();
        let pol = SoftmaxPolicy::new(theta, 0.7).unwrap();
        let slic = DapLoss::<f64>::new(DapKind::Slic, 0.2).unwrap();
        assert!(slic.margin(&pol, &reference, &t).unwrap() * 0.2 > 1.0);
        let g = slic.grad(&pol, &reference, &[&t, &t]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dpo_descent_step_raises_margin() {
        let u = universe(20);
        let reference = ReferencePolicy::uniform(32, 0.7).unwrap();
        let mut pol = random_policy(21, 0.3);
        let loss = DapLoss::<f64>::new(DapKind::Dpo, 0.1).unwrap();
        let t = triplet(&u, 4, 7);
        let before = loss.margin(&pol, &reference, &t).unwrap();
        pol.policy_update(&[&t], &loss, &reference, 0.05).unwrap();
        assert!(loss.margin(&pol, &reference, &t).unwrap() > before);
    }

    #[test]
    fn policy_update_edge_cases() {
        let u = universe(22);
        let reference = ReferencePolicy::uniform(32, 0.7).unwrap();
        let mut pol = random_policy(23, 0.3);
        let before = pol.clone();
        let loss = DapLoss::<f64>::new(DapKind::Dpo, 0.1).unwrap();
        let t = triplet(&u, 4, 7);
        pol.policy_update(&[&t], &loss, &reference, 0.0).unwrap();
        assert_eq!(pol, before);
        assert_eq!(pol.policy_update(&[], &loss, &reference, 0.1).unwrap(), UpdateStatus::Skipped);
        assert!(loss.grad(&pol, &reference, &[]).is_err());
    }

    #[test]
    fn repeated_dpo_updates_decrease_loss() {
        let u = universe(24);
        let reference = ReferencePolicy::uniform(32, 0.7).unwrap();
        let mut pol = SoftmaxPolicy::uniform(32, 0.7).unwrap();
        let loss = DapLoss::<f64>::new(DapKind::Dpo, 0.1).unwrap();
        let t = triplet(&u, 10, 11);
        let h0 = loss.margin(&pol, &reference, &t).unwrap();
        let mut prev = loss.loss(&pol, &reference, &t).unwrap();
        for _ in 0..100 {
            pol.policy_update(&[&t], &loss, &reference, 0.05).unwrap();
            let cur = loss.loss(&pol, &reference, &t).unwrap();
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
        assert!(loss.margin(&pol, &reference, &t).unwrap() > h0);
    }

    #[test]
    fn ipo_converges_to_its_target_margin() {
        let u = universe(25);
        let reference = ReferencePolicy::uniform(32, 0.7).unwrap();
        for beta in [0.5, 5.0, 50.0] {
            let mut pol = SoftmaxPolicy::uniform(32, 0.7).unwrap();
            let loss = DapLoss::new(DapKind::Ipo, beta).unwrap();
            let t = triplet(&u, 0, 1);
            // contraction factor 1 - 2·lr·|Δφ|²/η² = 0.6
            let dphi: f64 = t.winner.features.iter().zip(&t.loser.features).map(|(a, b)| (a - b) * (a - b)).sum();
            let lr = 0.2 * 0.49 / dphi;
            for _ in 0..500 {
                pol.policy_update(&[&t], &loss, &reference, lr).unwrap();
            }
            let h = loss.margin(&pol, &reference, &t).unwrap();
            assert!((h - 1.0 / (2.0 * beta)).abs() < 1e-6, "beta {beta}: h {h}");
        }
    }
}
