//! Episode loop for the curiosity actor-critic.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{advantage, total_reward, Actor, ActorBatch, ActorConfig, Critic, PolicyInput};
use super::replay::{Experience, HistoryWindow, ReplayBuffer};
use crate::env::trace::{TraceRecord, TraceWriter};
use crate::env::{quantize, state_hash, SplitEnv};
use crate::error::{Error, Result};
use crate::icm::{Icm, IcmBatch, IcmConfig, IcmLosses};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::{Mat, ParamStore};
use crate::{substream, SimRng};

const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_REPLAY: u64 = 3;
const STREAM_ACTOR_INIT: u64 = 10;
const STREAM_CRITIC_INIT: u64 = 11;
const STREAM_ICM_INIT: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Entropy weight of the actor loss.
    pub alpha: f64,
    /// Curiosity weight in the total reward.
    pub zeta: f64,
    /// History length for the attention state.
    pub history: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub episodes: usize,
    pub seed: u64,
    pub no_icm: bool,
    pub no_ca: bool,
    pub observe_eavesdroppers: bool,
    pub hidden: usize,
    pub attention_width: usize,
    pub icm: IcmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.05,
            zeta: 0.3,
            history: 4,
            lr_actor: 1e-4,
            lr_critic: 3e-4,
            batch_size: 64,
            buffer_capacity: 10_000,
            episodes: 200,
            seed: 0,
            no_icm: false,
            no_ca: false,
            observe_eavesdroppers: true,
            hidden: 64,
            attention_width: 32,
            icm: IcmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0) || !(self.zeta >= 0.0) {
            return Err(Error::Config("alpha and zeta must be non-negative".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config(
                "batch size and buffer capacity must be positive".into(),
            ));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Accumulated extrinsic reward.
    pub reward: f64,
    /// Accumulated extrinsic plus weighted curiosity reward.
    pub total_reward: f64,
    pub leakage_bits: f64,
    /// Steps ending with an exhausted energy or time budget (each counts once per budget).
    pub violations: usize,
    /// Distinct quantized states visited so far in the run.
    pub distinct_states: usize,
    pub time_spent: f64,
    pub energy_spent: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub icm: Option<IcmLosses>,
}

/// Trained networks of one run.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Critic,
    pub icm: Option<Icm>,
    pub cfg: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub agent: Agent,
    pub metrics: Vec<EpisodeMetrics>,
}

impl Agent {
    pub fn new(env: &SplitEnv, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, fa, a) = (env.state_len(), env.space.feature_len(), env.action_count());
        let actor_cfg = ActorConfig {
            hidden: cfg.hidden,
            attention_width: cfg.attention_width,
            use_attention: !cfg.no_ca,
        };
        let actor = Actor::new(
            d,
            fa,
            a,
            actor_cfg,
            &mut substream(cfg.seed, STREAM_ACTOR_INIT),
        )?;
        let critic = Critic::new(d, cfg.hidden, &mut substream(cfg.seed, STREAM_CRITIC_INIT))?;
        let icm = if cfg.no_icm {
            None
        } else {
            Some(Icm::new(
                d,
                a,
                cfg.icm.clone(),
                &mut substream(cfg.seed, STREAM_ICM_INIT),
            )?)
        };
        Ok(Self {
            actor,
            critic,
            icm,
            cfg: cfg.clone(),
        })
    }

    fn stores(&self) -> Vec<(&'static str, &ParamStore)> {
        let mut v = vec![("actor", &self.actor.store), ("critic", &self.critic.store)];
        if let Some(icm) = &self.icm {
            v.push(("icm", &icm.store));
        }
        v
    }

    /// Every parameter tensor as `component/name`.
    pub fn tensors(&self) -> Vec<(String, Mat)> {
        self.stores()
            .into_iter()
            .flat_map(|(prefix, store)| {
                store
                    .entries()
                    .map(move |(n, m)| (format!("{prefix}/{n}"), m.clone()))
            })
            .collect()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let tensors = self.tensors();
        write_checkpoint(w, tensors.iter().map(|(n, m)| (n.as_str(), m)))
    }

    pub fn load<R: std::io::Read>(&mut self, r: R) -> Result<()> {
        let tensors = read_checkpoint(r)?;
        let pick = |prefix: &str| -> Vec<(String, Mat)> {
            tensors
                .iter()
                .filter_map(|(n, m)| {
                    n.strip_prefix(prefix)
                        .and_then(|rest| rest.strip_prefix('/'))
                        .map(|rest| (rest.to_string(), m.clone()))
                })
                .collect()
        };
        let load = |store: &mut ParamStore, items: Vec<(String, Mat)>| {
            store.load(items.iter().map(|(n, m)| (n.as_str(), m)))
        };
        load(&mut self.actor.store, pick("actor"))?;
        load(&mut self.critic.store, pick("critic"))?;
        if let Some(icm) = &mut self.icm {
            load(&mut icm.store, pick("icm"))?;
        }
        Ok(())
    }

    /// Greedy (most probable) valid action.
    pub fn greedy(&self, state: &[f64], window: &HistoryWindow, mask: &[bool]) -> Result<usize> {
        let p = self.actor.distribution(state, window, mask)?;
        Ok(argmax_valid(&p, mask))
    }
}

fn argmax_valid(p: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for i in 0..p.len() {
        if mask[i] && best.is_none_or(|b| p[i] > p[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one valid action")
}

/// Draw an index from a probability vector by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], mask: &[bool], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&pi, &m)) in p.iter().zip(mask).enumerate() {
        if !m || pi <= 0.0 {
            continue;
        }
        acc += pi;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.unwrap_or_else(|| argmax_valid(p, mask))
}

/// One attention-history row: the encoded state followed by the action features.
pub fn history_row(state: &[f64], features: &[f64]) -> Vec<f64> {
    state.iter().chain(features).copied().collect()
}

/// Closed interval of the per-step training reward.
pub fn total_reward_bounds(env: &SplitEnv, cfg: &TrainConfig) -> (f64, f64) {
    let (lo, hi) = env.reward_bounds();
    let bonus = if cfg.no_icm {
        0.0
    } else {
        cfg.zeta * cfg.icm.feature_dim as f64 / 2.0
    };
    (lo, hi + bonus)
}

/// Train on `env` for `cfg.episodes` episodes. Writes one JSON line per
/// episode to `metrics` and one per step to `trace` when given.
pub fn train(
    env: &SplitEnv,
    cfg: &TrainConfig,
    mut metrics_out: Option<&mut dyn Write>,
    trace: Option<&mut dyn Write>,
) -> Result<TrainResult> {
    let mut trace = trace.map(TraceWriter::new);
    let mut env = env.clone();
    env.cfg.observe_eavesdroppers = cfg.observe_eavesdroppers;
    let mut agent = Agent::new(&env, cfg)?;
    let mut env_rng = substream(cfg.seed, STREAM_ENV);
    let mut policy_rng = substream(cfg.seed, STREAM_POLICY);
    let mut replay_rng = substream(cfg.seed, STREAM_REPLAY);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let (lo, hi) = total_reward_bounds(&env, cfg);
    let width = env.state_len() + env.space.feature_len();

    for episode in 0..cfg.episodes {
        let mut state = env.reset();
        let mut enc = env.encode_state(&state);
        seen.insert(quantize(&enc));
        let mut window = HistoryWindow::empty(cfg.history, width);
        let mut hidden = agent.icm.as_ref().map(|icm| icm.initial_hidden(1));
        let mut m = EpisodeMetrics {
            episode,
            reward: 0.0,
            total_reward: 0.0,
            leakage_bits: 0.0,
            violations: 0,
            distinct_states: 0,
            time_spent: 0.0,
            energy_spent: 0.0,
            critic_loss: 0.0,
            actor_loss: 0.0,
            icm: None,
        };
        let mut updates = 0usize;
        let mut icm_sum = IcmLosses {
            inverse: 0.0,
            forward: 0.0,
            extractor: 0.0,
        };
        loop {
            let mask = env.action_mask(&state)?;
            let p = agent.actor.distribution(&enc, &window, &mask)?;
            let action = sample_index(&p, &mask, &mut policy_rng);
            let out = env.step(&state, action, &mut env_rng)?;
            let next_enc = env.encode_state(&out.next_state);
            seen.insert(quantize(&next_enc));

            let (curiosity, before) = match (&agent.icm, hidden.as_mut()) {
                (Some(icm), Some(h)) => {
                    let c = icm.observe(&enc, action, &next_enc, h)?;
                    (c.reward, Some(c.before))
                }
                _ => (0.0, None),
            };
            let reward = total_reward(out.extrinsic_reward, curiosity, cfg.zeta);
            if !(lo..=hi).contains(&reward) {
                return Err(Error::RewardOutOfBounds { reward, lo, hi });
            }
            m.reward += out.extrinsic_reward;
            m.total_reward += reward;
            m.leakage_bits += out.leakage_bits;
            m.violations += usize::from(out.energy_violated) + usize::from(out.time_violated);
            if let Some(t) = trace.as_mut() {
                t.write(&TraceRecord {
                    episode,
                    step: state.step,
                    state_hash: state_hash(&enc),
                    action,
                    reward: out.extrinsic_reward,
                    leakage_bits: out.leakage_bits,
                    time_spent: out.next_state.spent.time_spent,
                    energy_spent: out.next_state.spent.energy_spent,
                })?;
            }

            let features = env.space.features(action)?;
            buffer.push(Experience {
                state: enc.clone(),
                action,
                reward,
                next_state: next_enc.clone(),
                done: out.done,
                history: window.clone(),
                mask,
                icm_hidden: before,
            });
            window.push(&history_row(&enc, &features));

            let sample = buffer.sample(cfg.batch_size, &mut replay_rng);
            if let Some(icm) = agent.icm.as_mut() {
                let l = icm.update(&icm_batch(&sample)?)?;
                check_loss("curiosity", l.inverse + l.forward + l.extractor)?;
                icm_sum.inverse += l.inverse;
                icm_sum.forward += l.forward;
                icm_sum.extractor += l.extractor;
            }
            let (critic_loss, actor_loss) = actor_critic_update(&mut agent, &sample, cfg)?;
            m.critic_loss += critic_loss;
            m.actor_loss += actor_loss;
            updates += 1;

            state = out.next_state;
            enc = next_enc;
            if out.done {
                break;
            }
        }
        let n = updates.max(1) as f64;
        m.critic_loss /= n;
        m.actor_loss /= n;
        if agent.icm.is_some() {
            m.icm = Some(IcmLosses {
                inverse: icm_sum.inverse / n,
                forward: icm_sum.forward / n,
                extractor: icm_sum.extractor / n,
            });
        }
        m.distinct_states = seen.len();
        m.time_spent = state.spent.time_spent;
        m.energy_spent = state.spent.energy_spent;
        if let Some(w) = metrics_out.as_mut() {
            serde_json::to_writer(&mut **w, &m)?;
            w.write_all(b"\n")?;
        }
        metrics.push(m);
    }
    Ok(TrainResult { agent, metrics })
}

fn check_loss(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} loss")))
    }
}

fn icm_batch(sample: &[&Experience]) -> Result<IcmBatch> {
    let states = Icm::stack_rows(sample.iter().map(|e| &e.state[..]))?;
    let next_states = Icm::stack_rows(sample.iter().map(|e| &e.next_state[..]))?;
    let hidden: Vec<_> = sample
        .iter()
        .map(|e| {
            e.icm_hidden
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing curiosity state".into()))
        })
        .collect::<Result<_>>()?;
    let forward_hidden =
        Icm::stack_rows(hidden.iter().map(|h| h.forward.as_slice().expect("row")))?;
    let inverse_hidden =
        Icm::stack_rows(hidden.iter().map(|h| h.inverse.as_slice().expect("row")))?;
    Ok(IcmBatch {
        states,
        actions: sample.iter().map(|e| e.action).collect(),
        next_states,
        forward_hidden,
        inverse_hidden,
    })
}

/// Critic step then actor step on one sampled batch; both use advantages
/// computed from the critic before its update.
pub fn actor_critic_update(
    agent: &mut Agent,
    sample: &[&Experience],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let states = Icm::stack_rows(sample.iter().map(|e| &e.state[..]))?;
    let next_states = Icm::stack_rows(sample.iter().map(|e| &e.next_state[..]))?;
    let v = agent.critic.values(&states)?;
    let v_next = agent.critic.values(&next_states)?;
    let targets: Vec<f64> = sample
        .iter()
        .zip(&v_next)
        .map(|(e, &vn)| e.reward + if e.done { 0.0 } else { cfg.gamma * vn })
        .collect();
    let advantages: Vec<f64> = sample
        .iter()
        .zip(v.iter().zip(&v_next))
        .map(|(e, (&vs, &vn))| advantage(e.reward, vs, vn, cfg.gamma, e.done))
        .collect();
    let critic_loss = agent.critic.update(&states, &targets, cfg.lr_critic)?;
    check_loss("critic", critic_loss)?;
    let batch = ActorBatch {
        input: PolicyInput::batch(sample)?,
        actions: sample.iter().map(|e| e.action).collect(),
        advantages,
        entropy_weight: cfg.alpha,
    };
    let actor_loss = agent.actor.update(&batch, cfg.lr_actor)?;
    check_loss("actor", actor_loss)?;
    Ok((critic_loss, actor_loss))
}

/// Run `episodes` greedy episodes without learning; returns per-episode
/// (extrinsic reward, leakage bits).
pub fn evaluate(
    agent: &Agent,
    env: &SplitEnv,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut rng: SimRng = substream(seed, STREAM_ENV);
    let width = env.state_len() + env.space.feature_len();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut window = HistoryWindow::empty(agent.cfg.history, width);
        let (mut reward, mut leak) = (0.0, 0.0);
        loop {
            let enc = env.encode_state(&state);
            let mask = env.action_mask(&state)?;
            let action = agent.greedy(&enc, &window, &mask)?;
            let o = env.step(&state, action, &mut rng)?;
            reward += o.extrinsic_reward;
            leak += o.leakage_bits;
            window.push(&history_row(&enc, &env.space.features(action)?));
            state = o.next_state;
            if o.done {
                break;
            }
        }
        out.push((reward, leak));
    }
    Ok(out)
}
