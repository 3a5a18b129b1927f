//! Tabular ε-greedy Q-learning over quantized states.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::EpisodeMetrics;
use crate::env::{quantize, SplitEnv};
use crate::error::{Error, Result};
use crate::substream;

const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub seed: u64,
    pub observe_eavesdroppers: bool,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            learning_rate: 0.1,
            gamma: 0.99,
            episodes: 200,
            seed: 0,
            observe_eavesdroppers: true,
        }
    }
}

/// Sparse table; unseen entries are 0.
#[derive(Debug, Clone, Default)]
pub struct QTable {
    values: HashMap<Vec<u8>, HashMap<usize, f64>>,
}

impl QTable {
    pub fn get(&self, state: &[u8], action: usize) -> f64 {
        self.values
            .get(state)
            .and_then(|row| row.get(&action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, state: &[u8], action: usize, v: f64) {
        self.values
            .entry(state.to_vec())
            .or_default()
            .insert(action, v);
    }

    /// Best valid action (lowest index on ties) and its value.
    pub fn best(&self, state: &[u8], mask: &[bool]) -> Option<(usize, f64)> {
        let row = self.values.get(state);
        let mut best: Option<(usize, f64)> = None;
        for (a, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let v = row.and_then(|r| r.get(&a)).copied().unwrap_or(0.0);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        best
    }

    pub fn states(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone)]
pub struct QResult {
    pub table: QTable,
    pub metrics: Vec<EpisodeMetrics>,
}

pub fn q_baseline_train(
    env: &SplitEnv,
    cfg: &QConfig,
    mut metrics_out: Option<&mut dyn Write>,
) -> Result<QResult> {
    if !(0.0..=1.0).contains(&cfg.epsilon)
        || !(cfg.learning_rate > 0.0)
        || !(0.0..=1.0).contains(&cfg.gamma)
    {
        return Err(Error::Config(format!("bad Q-learning settings {cfg:?}")));
    }
    let mut env = env.clone();
    env.cfg.observe_eavesdroppers = cfg.observe_eavesdroppers;
    let mut env_rng = substream(cfg.seed, STREAM_ENV);
    let mut rng = substream(cfg.seed, STREAM_POLICY);
    let mut table = QTable::default();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let mut state = env.reset();
        let mut key = quantize(&env.encode_state(&state));
        seen.insert(key.clone());
        let (mut reward, mut leakage, mut violations) = (0.0, 0.0, 0usize);
        loop {
            let mask = env.action_mask(&state)?;
            let action = if rng.random::<f64>() < cfg.epsilon {
                let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                valid[rng.random_range(0..valid.len())]
            } else {
                table.best(&key, &mask).expect("mask has a valid action").0
            };
            let out = env.step(&state, action, &mut env_rng)?;
            let next_key = quantize(&env.encode_state(&out.next_state));
            seen.insert(next_key.clone());
            let bootstrap = if out.done {
                0.0
            } else {
                let next_mask = env.action_mask(&out.next_state)?;
                table.best(&next_key, &next_mask).map_or(0.0, |(_, v)| v)
            };
            let q = table.get(&key, action);
            let target = out.extrinsic_reward + cfg.gamma * bootstrap;
            table.set(&key, action, q + cfg.learning_rate * (target - q));
            reward += out.extrinsic_reward;
            leakage += out.leakage_bits;
            violations += usize::from(out.energy_violated) + usize::from(out.time_violated);
            state = out.next_state;
            key = next_key;
            if out.done {
                break;
            }
        }
        let m = EpisodeMetrics {
            episode,
            reward,
            total_reward: reward,
            leakage_bits: leakage,
            violations,
            distinct_states: seen.len(),
            time_spent: state.spent.time_spent,
            energy_spent: state.spent.energy_spent,
            critic_loss: 0.0,
            actor_loss: 0.0,
            icm: None,
        };
        if let Some(w) = metrics_out.as_mut() {
            serde_json::to_writer(&mut **w, &m)?;
            w.write_all(b"\n")?;
        }
        metrics.push(m);
    }
    Ok(QResult { table, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_prefers_higher_value_among_valid() {
        let mut t = QTable::default();
        let s = [1u8, 2];
        t.set(&s, 0, 5.0);
        t.set(&s, 2, 1.0);
        t.set(&s, 3, -1.0);
        assert_eq!(t.best(&s, &[false, true, true, true]), Some((2, 1.0)));
        assert_eq!(t.best(&s, &[false, false, false, true]), Some((3, -1.0)));
        assert_eq!(t.best(&[9], &[false, true]), Some((1, 0.0)));
    }

    #[test]
    fn fixed_point_with_zero_discount() {
        let mut t = QTable::default();
        let s = [0u8];
        for _ in 0..200 {
            let q = t.get(&s, 4);
            t.set(&s, 4, q + 0.1 * (-0.7 - q));
        }
        assert!((t.get(&s, 4) + 0.7).abs() < 1e-8);
    }
}
