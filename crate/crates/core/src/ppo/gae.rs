/// Generalized advantage estimation over one environment's sequence.
///
/// `dones[t]` marks that the episode ended with transition `t`, which cuts both
/// the bootstrap and the advantage recursion. `last_value` is the critic's
/// estimate for the state following the final transition.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "GAE inputs must have equal lengths");
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        advantages[t] = next_adv;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}
