use serde::Serialize;

/// Per-step arrays of one PPO iteration, concatenated environment by
/// environment, each in time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrajectoryBatch {
    pub obs: Vec<Vec<f64>>,
    /// Unsquashed policy samples.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncations: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the successor observation (before any reset).
    pub next_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fill `advantages` and `returns`, treating every `segment` consecutive
    /// steps as one environment's stream.
    pub fn compute_advantages(&mut self, segment: usize, gamma: f64, lambda: f64) {
        let n = self.len();
        self.advantages = Vec::with_capacity(n);
        self.returns = Vec::with_capacity(n);
        for start in (0..n).step_by(segment) {
            let end = (start + segment).min(n);
            let (adv, ret) = gae(
                &self.rewards[start..end],
                &self.values[start..end],
                &self.next_values[start..end],
                &self.dones[start..end],
                &self.truncations[start..end],
                gamma,
                lambda,
            );
            self.advantages.extend(adv);
            self.returns.extend(ret);
        }
    }
}

/// Generalised advantage estimation over one time-ordered stream.
///
/// `δ_t = r_t + γ (1 − done_t) V(s'_t) − V(s_t)` and
/// `A_t = δ_t + γ λ (1 − done_t)(1 − trunc_t) A_{t+1}`; the stream end
/// bootstraps through `next_values`. Returns `(advantages, A + V)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    truncations: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && dones.len() == n && truncations.len() == n);
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let alive = if dones[t] { 0.0 } else { 1.0 };
        let carry = if dones[t] || truncations[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * alive * next_values[t] - values[t];
        adv[t] = delta + gamma * lambda * carry * next_adv;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}
