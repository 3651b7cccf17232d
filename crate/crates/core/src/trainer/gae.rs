use crate::error::TrainError;

/// Generalized advantage estimation.
///
/// `values` carries one bootstrap entry past the last reward. Returns
/// `(advantages, value targets)` with targets = advantages + values.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n = rewards.len();
    if values.len() != n + 1 || continues.len() != n {
        return Err(TrainError::Length(format!(
            "gae: {} rewards, {} values, {} continues",
            n,
            values.len(),
            continues.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] * continues[t] - values[t];
        next = delta + gamma * lambda * continues[t] * next;
        adv[t] = next;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Recursive λ-return: `R_t = r_t + γ·c_t·((1 − λ)·v_{t+1} + λ·R_{t+1})`
/// with `R_T = v_T`. `values` carries the bootstrap entry.
pub fn lambda_target(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, TrainError> {
    let n = rewards.len();
    if values.len() != n + 1 || continues.len() != n {
        return Err(TrainError::Length(format!(
            "lambda_target: {} rewards, {} values, {} continues",
            n,
            values.len(),
            continues.len()
        )));
    }
    let mut out = vec![0.0; n];
    let mut next = values[n];
    for t in (0..n).rev() {
        next = rewards[t] + gamma * continues[t] * ((1.0 - lambda) * values[t + 1] + lambda * next);
        out[t] = next;
    }
    Ok(out)
}
