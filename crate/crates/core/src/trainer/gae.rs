use crate::error::{Error, Result};

/// Generalized advantage estimates and returns for one contiguous segment.
///
/// `δ_t = r_t + γ V_{t+1} (1 − done_t) − V_t` and
/// `Â_t = δ_t + γ λ (1 − done_t) Â_{t+1}`, where `V_T` is `bootstrap`.
/// Returns are `Â + V`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != terminals.len() {
        return Err(Error::Model(format!(
            "gae: {} rewards, {} values, {} terminal flags",
            rewards.len(),
            values.len(),
            terminals.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        adv[t] = delta + gamma * lambda * cont * next_adv;
        next_value = values[t];
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales the selected entries to zero mean and unit variance;
/// unselected entries become zero.
pub fn normalize(values: &mut [f64], selected: &[bool]) {
    let count = selected.iter().filter(|&&s| s).count();
    if count == 0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let picked = || values.iter().zip(selected).filter(|(_, &s)| s).map(|(v, _)| *v);
    let mean = picked().sum::<f64>() / count as f64;
    let var = picked().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for (v, &s) in values.iter_mut().zip(selected) {
        *v = if s { (*v - mean) * scale } else { 0.0 };
    }
}
