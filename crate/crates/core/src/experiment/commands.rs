//! Training, sweep, plan and table commands. Each writes its artifacts
//! under a caller-supplied directory and returns what it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, SweepAxis};
use crate::agent::{
    evaluate, history_row, q_baseline_train, train, Agent, EpisodeMetrics, HistoryWindow, QConfig,
    QTable, TrainConfig,
};
use crate::costmodel::TransmissionSpec;
use crate::eavesdrop::{
    expected_leakage_closed, expected_leakage_exact, mc_leakage_oracle, HopExposure, LeakageReport,
};
use crate::env::{quantize, SplitEnv};
use crate::error::{Error, Result};
use crate::powerstar::{cor1_powers, HopBudget, HopGeometry};
use crate::slmodel::{split_by_sizes, validate_plan};
use crate::topology::{NodeId, Scenario};
use crate::{substream, SimRng};

const STREAM_EVAL: u64 = 20;
const STREAM_RANDOM_POLICY: u64 = 21;

/// Policy family scored by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    IcmCa,
    NoIcm,
    NoCa,
    NoIcmNoCa,
    QLearning,
    Random,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::IcmCa => "icm_ca",
            Self::NoIcm => "no_icm",
            Self::NoCa => "no_ca",
            Self::NoIcmNoCa => "no_icm_no_ca",
            Self::QLearning => "q_learning",
            Self::Random => "random",
        }
    }

    /// The neural variant selected by the ablation flags.
    pub fn from_flags(no_icm: bool, no_ca: bool) -> Self {
        match (no_icm, no_ca) {
            (false, false) => Self::IcmCa,
            (true, false) => Self::NoIcm,
            (false, true) => Self::NoCa,
            (true, true) => Self::NoIcmNoCa,
        }
    }

    fn flags(self) -> Option<(bool, bool)> {
        match self {
            Self::IcmCa => Some((false, false)),
            Self::NoIcm => Some((true, false)),
            Self::NoCa => Some((false, true)),
            Self::NoIcmNoCa => Some((true, true)),
            Self::QLearning | Self::Random => None,
        }
    }
}

/// Files written by one training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub seed: u64,
    pub label: String,
    pub metrics: PathBuf,
    pub trace: PathBuf,
    pub rewards_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub final_reward: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct RewardRow {
    episode: usize,
    reward: f64,
    total_reward: f64,
    leakage_bits: f64,
    violations: usize,
    distinct_states: usize,
}

fn write_rewards(path: &Path, metrics: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for m in metrics {
        w.serialize(RewardRow {
            episode: m.episode,
            reward: m.reward,
            total_reward: m.total_reward,
            leakage_bits: m.leakage_bits,
            violations: m.violations,
            distinct_states: m.distinct_states,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Train one agent per seed; write metrics JSONL, a step trace, a reward
/// curve CSV and a checkpoint for each.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunArtifacts>> {
    let env = cfg.build_env()?;
    let label = AgentKind::from_flags(cfg.train.no_icm, cfg.train.no_ca).label();
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let stem = format!("{label}_seed{seed}");
        let art = RunArtifacts {
            seed,
            label: label.to_string(),
            metrics: out_dir.join(format!("{stem}_metrics.jsonl")),
            trace: out_dir.join(format!("{stem}_trace.jsonl")),
            rewards_csv: out_dir.join(format!("{stem}_rewards.csv")),
            checkpoint: out_dir.join(format!("{stem}.ckpt")),
            final_reward: 0.0,
        };
        let mut metrics_w = create(&art.metrics)?;
        let mut trace_w = create(&art.trace)?;
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let result = train(&env, &tc, Some(&mut metrics_w), Some(&mut trace_w))?;
        metrics_w.flush()?;
        trace_w.flush()?;
        write_rewards(&art.rewards_csv, &result.metrics)?;
        let mut ck = create(&art.checkpoint)?;
        result.agent.save(&mut ck)?;
        ck.flush()?;
        let final_reward = result.metrics.last().map_or(0.0, |m| m.reward);
        runs.push(RunArtifacts {
            final_reward,
            ..art
        });
    }
    Ok(runs)
}

/// One point of a sweep, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub agent: String,
    pub seeds: usize,
    pub mean_leakage_bits: f64,
    pub mean_reward: f64,
}

/// Greedy rollouts of a Q table.
fn q_rollouts(
    env: &SplitEnv,
    table: &QTable,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut rng = substream(seed, STREAM_EVAL);
    (0..episodes)
        .map(|_| {
            let mut state = env.reset();
            let (mut reward, mut leak) = (0.0, 0.0);
            loop {
                let mask = env.action_mask(&state)?;
                let key = quantize(&env.encode_state(&state));
                let action = table
                    .best(&key, &mask)
                    .ok_or(Error::DeadEnd { step: state.step })?
                    .0;
                let o = env.step(&state, action, &mut rng)?;
                reward += o.extrinsic_reward;
                leak += o.leakage_bits;
                state = o.next_state;
                if o.done {
                    return Ok((reward, leak));
                }
            }
        })
        .collect()
}

/// Uniformly random valid actions.
pub fn random_rollouts(env: &SplitEnv, episodes: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut env_rng = substream(seed, STREAM_EVAL);
    let mut policy_rng = substream(seed, STREAM_RANDOM_POLICY);
    (0..episodes)
        .map(|_| {
            let mut state = env.reset();
            let (mut reward, mut leak) = (0.0, 0.0);
            loop {
                let mask = env.action_mask(&state)?;
                let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                let action = valid[policy_rng.random_range(0..valid.len())];
                let o = env.step(&state, action, &mut env_rng)?;
                reward += o.extrinsic_reward;
                leak += o.leakage_bits;
                state = o.next_state;
                if o.done {
                    return Ok((reward, leak));
                }
            }
        })
        .collect()
}

/// Train (when needed) and score `kind` on `env`: mean greedy reward and leakage.
pub fn score_agent(
    kind: AgentKind,
    env: &SplitEnv,
    train_cfg: &TrainConfig,
    q_cfg: &QConfig,
    seed: u64,
    eval_episodes: usize,
) -> Result<(f64, f64)> {
    let rollouts = match kind.flags() {
        Some((no_icm, no_ca)) => {
            let tc = TrainConfig {
                seed,
                no_icm,
                no_ca,
                ..train_cfg.clone()
            };
            let result = train(env, &tc, None, None)?;
            let mut eval_env = env.clone();
            eval_env.cfg.observe_eavesdroppers = tc.observe_eavesdroppers;
            evaluate(&result.agent, &eval_env, eval_episodes, seed)?
        }
        None if kind == AgentKind::QLearning => {
            let qc = QConfig {
                seed,
                ..q_cfg.clone()
            };
            let result = q_baseline_train(env, &qc, None)?;
            let mut eval_env = env.clone();
            eval_env.cfg.observe_eavesdroppers = qc.observe_eavesdroppers;
            q_rollouts(&eval_env, &result.table, eval_episodes, seed)?
        }
        None => random_rollouts(env, eval_episodes, seed)?,
    };
    let n = rollouts.len().max(1) as f64;
    let reward = rollouts.iter().map(|r| r.0).sum::<f64>() / n;
    let leak = rollouts.iter().map(|r| r.1).sum::<f64>() / n;
    Ok((reward, leak))
}

struct SweepPoint {
    axis: &'static str,
    value: String,
    env: SplitEnv,
    agents: Vec<AgentKind>,
    /// Overrides whether eavesdropper positions are observed.
    observe: Option<bool>,
}

/// Score every sweep point over all seeds and write `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let base = cfg.build_env()?;
    let model = cfg.build_model()?;
    let mut points: Vec<SweepPoint> = Vec::new();
    match &spec.axis {
        SweepAxis::MonitorProb { values } => {
            for &q in values {
                let env = SplitEnv::new(
                    base.scenario.clone().with_monitor_prob(q),
                    model.clone(),
                    cfg.env.clone(),
                )?;
                points.push(SweepPoint {
                    axis: "monitor_prob",
                    value: q.to_string(),
                    env,
                    agents: spec.agents.clone(),
                    observe: None,
                });
            }
        }
        SweepAxis::EavesdropperCount { values } => {
            for &n in values {
                let env =
                    SplitEnv::new(cfg.build_scenario(Some(n))?, model.clone(), cfg.env.clone())?;
                points.push(SweepPoint {
                    axis: "eavesdropper_count",
                    value: n.to_string(),
                    env,
                    agents: spec.agents.clone(),
                    observe: None,
                });
            }
        }
        SweepAxis::AgentKind => {
            for &k in &spec.agents {
                points.push(SweepPoint {
                    axis: "agent_kind",
                    value: k.label().to_string(),
                    env: base.clone(),
                    agents: vec![k],
                    observe: None,
                });
            }
        }
        SweepAxis::Ablations => {
            for k in [
                AgentKind::IcmCa,
                AgentKind::NoIcm,
                AgentKind::NoCa,
                AgentKind::NoIcmNoCa,
            ] {
                points.push(SweepPoint {
                    axis: "ablations",
                    value: k.label().to_string(),
                    env: base.clone(),
                    agents: vec![k],
                    observe: None,
                });
            }
        }
        SweepAxis::ObserveEavesdroppers => {
            for observe in [true, false] {
                points.push(SweepPoint {
                    axis: "observe_eavesdroppers",
                    value: observe.to_string(),
                    env: base.clone(),
                    agents: spec.agents.clone(),
                    observe: Some(observe),
                });
            }
        }
    }
    let mut rows = Vec::new();
    for SweepPoint {
        axis,
        value,
        mut env,
        agents,
        observe,
    } in points
    {
        let (mut tc, mut qc) = (cfg.train.clone(), cfg.qlearn.clone());
        if let Some(o) = observe {
            env.cfg.observe_eavesdroppers = o;
            tc.observe_eavesdroppers = o;
            qc.observe_eavesdroppers = o;
        }
        for kind in agents {
            let (mut reward, mut leak) = (0.0, 0.0);
            for &seed in &cfg.seeds {
                let (r, l) = score_agent(kind, &env, &tc, &qc, seed, spec.eval_episodes)?;
                reward += r;
                leak += l;
            }
            let n = cfg.seeds.len() as f64;
            rows.push(SweepRow {
                axis: axis.to_string(),
                value: value.clone(),
                agent: kind.label().to_string(),
                seeds: cfg.seeds.len(),
                mean_leakage_bits: leak / n,
                mean_reward: reward / n,
            });
        }
    }
    let mut w = csv::Writer::from_writer(create(&out_dir.join("sweep.csv"))?);
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

/// One step of a greedy rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanHop {
    pub step: usize,
    pub action: usize,
    pub transmitter: Option<NodeId>,
    pub receiver: Option<NodeId>,
    pub segment_layers: usize,
    pub deceivers: Vec<NodeId>,
    pub tx_power: f64,
    pub decoy_power: f64,
    pub payload_bits: f64,
    /// Closed-form expected leakage of this hop.
    pub expected_leakage_bits: f64,
    pub mask_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub hops: Vec<PlanHop>,
    pub trainers: Vec<NodeId>,
    pub segment_layers: Vec<usize>,
    pub plan_valid: bool,
    pub expected_leakage_bits: f64,
    pub time_spent: f64,
    pub energy_spent: f64,
    pub reward: f64,
}

impl PlanReport {
    /// Human-readable table, one line per hop.
    pub fn render(&self) -> String {
        let name = |n: Option<NodeId>| n.map_or_else(|| "-".to_string(), |n| n.to_string());
        let mut out = String::new();
        out.push_str(&format!(
            "trainers: {}\nsegments: {:?}\nplan valid: {}\n",
            self.trainers
                .iter()
                .map(NodeId::to_string)
                .collect::<Vec<_>>()
                .join(" -> "),
            self.segment_layers,
            self.plan_valid
        ));
        out.push_str("step  from    to      layers  deceivers        p_tx   p_decoy  payload_bits  E[leak]_bits\n");
        for h in &self.hops {
            let dec = if h.deceivers.is_empty() {
                "-".to_string()
            } else {
                h.deceivers
                    .iter()
                    .map(NodeId::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push_str(&format!(
                "{:<5} {:<7} {:<7} {:<7} {:<16} {:<6} {:<8} {:<13.6e} {:.6e}\n",
                h.step,
                name(h.transmitter),
                name(h.receiver),
                h.segment_layers,
                dec,
                h.tx_power,
                h.decoy_power,
                h.payload_bits,
                h.expected_leakage_bits
            ));
        }
        out.push_str(&format!(
            "expected leakage {:.6e} bits, time {:.4} s, energy {:.4} J, reward {:.6}\n",
            self.expected_leakage_bits, self.time_spent, self.energy_spent, self.reward
        ));
        out
    }
}

/// Load a checkpoint and roll out the greedy policy once.
pub fn cmd_show_plan(cfg: &ExperimentConfig, checkpoint: &Path, seed: u64) -> Result<PlanReport> {
    let mut env = cfg.build_env()?;
    env.cfg.observe_eavesdroppers = cfg.train.observe_eavesdroppers;
    let mut agent = Agent::new(&env, &cfg.train)?;
    agent.load(std::io::BufReader::new(File::open(checkpoint)?))?;
    let mut rng = substream(seed, STREAM_EVAL);
    let width = env.state_len() + env.space.feature_len();
    let mut window = HistoryWindow::empty(cfg.train.history, width);
    let mut state = env.reset();
    let mut hops = Vec::new();
    let (mut reward, mut leak_terms) = (0.0, Vec::new());
    loop {
        let enc = env.encode_state(&state);
        let mask = env.action_mask(&state)?;
        let action = agent.greedy(&enc, &window, &mask)?;
        let view = env.describe(&state, action)?;
        let o = env.step(&state, action, &mut rng)?;
        let expected = match &o.transmission {
            Some(t) => {
                let hop = HopExposure {
                    transmission: t.clone(),
                    delta_bits: o.delta_bits,
                };
                expected_leakage_closed(&[hop], &env.scenario)?.expected_bits
            }
            None => 0.0,
        };
        leak_terms.push(expected);
        hops.push(PlanHop {
            step: state.step,
            action,
            transmitter: o.transmission.as_ref().map(|t| t.tx).or(view.transmitter),
            receiver: o.transmission.as_ref().map(|t| t.rx).or(view.receiver),
            segment_layers: view.segment_layers,
            deceivers: o
                .transmission
                .as_ref()
                .map_or_else(Vec::new, |t| t.deceivers.iter().map(|d| d.node).collect()),
            tx_power: o.transmission.as_ref().map_or(0.0, |t| t.tx_power),
            decoy_power: view.decoy_power,
            payload_bits: o.transmission.as_ref().map_or(0.0, |t| t.payload_bits),
            expected_leakage_bits: expected,
            mask_valid: mask[action],
        });
        reward += o.extrinsic_reward;
        window.push(&history_row(&enc, &env.space.features(action)?));
        state = o.next_state;
        if o.done {
            break;
        }
    }
    let plan_valid = split_by_sizes(&env.model, &state.segment_layers)
        .is_ok_and(|p| validate_plan(&p, &env.model));
    Ok(PlanReport {
        hops,
        trainers: state.trainers.clone(),
        segment_layers: state.segment_layers.clone(),
        plan_valid,
        expected_leakage_bits: crate::fsum::fsum(leak_terms),
        time_spent: state.spent.time_spent,
        energy_spent: state.spent.energy_spent,
        reward,
    })
}

/// Single-deceiver optimal powers for one hop and eavesdropper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub tx: String,
    pub rx: String,
    pub deceiver: String,
    pub eavesdropper: usize,
    pub feasible: bool,
    pub p_tx: f64,
    pub p_deceiver: f64,
    pub capture_prob: f64,
    pub expected_bits: f64,
}

/// Closed-form powers for every device-to-node hop, deceiving device and
/// eavesdropper under one hop budget; written to `powers.csv` when `out_dir`
/// is given.
pub fn cmd_powers(
    scn: &Scenario,
    budget: &HopBudget,
    out_dir: Option<&Path>,
) -> Result<Vec<PowerRow>> {
    let u = scn.device_count();
    let receivers: Vec<NodeId> = (0..u).map(NodeId::device).chain([NodeId::SERVER]).collect();
    let mut rows = Vec::new();
    for tx in (0..u).map(NodeId::device) {
        for &rx in receivers.iter().filter(|&&r| r != tx) {
            for d in (0..u).map(NodeId::device).filter(|&d| d != tx && d != rx) {
                for e in 0..scn.eavesdropper_count() {
                    let geom = HopGeometry::from_scenario(scn, tx, rx, &[d], e)?;
                    let sol = cor1_powers(&geom, scn, budget)?;
                    let capture = if sol.feasible {
                        sol.objective / budget.payload_bits.max(f64::MIN_POSITIVE)
                    } else {
                        f64::NAN
                    };
                    rows.push(PowerRow {
                        tx: tx.to_string(),
                        rx: rx.to_string(),
                        deceiver: d.to_string(),
                        eavesdropper: e,
                        feasible: sol.feasible,
                        p_tx: sol.p_tx,
                        p_deceiver: sol.p_deceivers[0],
                        capture_prob: capture,
                        expected_bits: sol.objective * scn.eavesdroppers[e].monitor_prob,
                    });
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        let mut w = csv::Writer::from_writer(create(&dir.join("powers.csv"))?);
        for row in &rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Closed-form versus sampled leakage of one random hop set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub case: usize,
    pub hops: usize,
    /// Most deceivers on any single hop.
    pub max_deceivers: usize,
    /// Per-deceiver product form.
    pub closed_bits: f64,
    /// Joint max-power form.
    pub exact_bits: f64,
    pub mc_mean_bits: f64,
    pub mc_stderr: f64,
    /// `|closed − mc| / stderr`.
    pub z_closed: f64,
    /// `|exact − mc| / stderr`.
    pub z_exact: f64,
}

/// Agreement threshold in standard errors.
pub const ORACLE_Z_LIMIT: f64 = 4.0;

/// Random hop sets on `scn` with up to `max_deceivers` decoys per hop,
/// scored by both closed forms and by Monte Carlo.
pub fn cmd_leakage_oracle(
    scn: &Scenario,
    levels: &[f64],
    max_deceivers: usize,
    cases: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<OracleRow>> {
    leakage_agreement(
        scn,
        levels,
        max_deceivers,
        cases,
        samples,
        seed,
        expected_leakage_closed,
    )
}

/// Closed-form leakage function under test.
pub type LeakageFn = fn(&[HopExposure], &Scenario) -> Result<LeakageReport>;

pub(crate) fn leakage_agreement(
    scn: &Scenario,
    levels: &[f64],
    max_deceivers: usize,
    cases: usize,
    samples: usize,
    seed: u64,
    closed_form: LeakageFn,
) -> Result<Vec<OracleRow>> {
    if levels.is_empty() || scn.device_count() < 3 {
        return Err(Error::InvalidArgument(
            "need power levels and at least 3 devices".into(),
        ));
    }
    let mut rng: SimRng = substream(seed, 0);
    let u = scn.device_count();
    let mut rows = Vec::with_capacity(cases);
    for case in 0..cases {
        let hop_count = rng.random_range(1..=3);
        let mut hops = Vec::with_capacity(hop_count);
        let mut most = 0;
        for _ in 0..hop_count {
            let tx = rng.random_range(0..u);
            let rx = if rng.random_bool(0.3) {
                NodeId::SERVER
            } else {
                NodeId::device((tx + rng.random_range(1..u)) % u)
            };
            let level = |rng: &mut SimRng| levels[rng.random_range(0..levels.len())];
            let mut t = TransmissionSpec::new(
                NodeId::device(tx),
                rx,
                rng.random_range(1e4..1e6),
                level(&mut rng),
            );
            let idle: Vec<usize> = (0..u)
                .filter(|&d| d != tx && NodeId::device(d) != rx)
                .collect();
            let count = rng.random_range(0..=idle.len().min(max_deceivers));
            for &d in rand::seq::index::sample(&mut rng, idle.len(), count)
                .iter()
                .map(|i| &idle[i])
            {
                t = t.with_deceiver(NodeId::device(d), level(&mut rng));
            }
            most = most.max(count);
            let delta = t.payload_bits * rng.random_range(0.5..1.5);
            hops.push(HopExposure {
                transmission: t,
                delta_bits: delta,
            });
        }
        let closed = closed_form(&hops, scn)?.expected_bits;
        let exact = expected_leakage_exact(&hops, scn)?.expected_bits;
        let mc = mc_leakage_oracle(&hops, scn, samples, rng.random())?;
        let stderr = mc.stderr.unwrap_or(f64::INFINITY);
        let z = |v: f64| {
            if stderr > 0.0 {
                (v - mc.mean).abs() / stderr
            } else if v == mc.mean {
                0.0
            } else {
                f64::INFINITY
            }
        };
        rows.push(OracleRow {
            case,
            hops: hop_count,
            max_deceivers: most,
            closed_bits: closed,
            exact_bits: exact,
            mc_mean_bits: mc.mean,
            mc_stderr: stderr,
            z_closed: z(closed),
            z_exact: z(exact),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{gen_scenario, ScenarioDefaults};

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            seeds = [1]
            [scenario.generate]
            seed = 3
            devices = 4
            eavesdroppers = 1
            [env]
            segments = 3
            max_deceivers = 1
            power_levels = [0.1, 0.4]
            [model.generate]
            layers = 4
            [train]
            episodes = 3
            batch_size = 4
            hidden = 8
            attention_width = 4
            [train.icm]
            feature_dim = 4
            hidden = 8
            recurrent = 4
            action_embed = 2
            [sweep]
            axis = "monitor_prob"
            values = [0.2, 0.5, 0.9]
            agents = ["random"]
            eval_episodes = 30
            "#,
        )
        .unwrap()
    }

    #[test]
    fn train_writes_artifacts_and_show_plan_replays_them() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let runs = cmd_train(&cfg, dir.path()).unwrap();
        assert_eq!(runs.len(), 1);
        let r = &runs[0];
        assert_eq!(r.label, "icm_ca");
        let lines = std::fs::read_to_string(&r.metrics).unwrap();
        assert_eq!(lines.lines().count(), 3);
        assert!(std::fs::read_to_string(&r.rewards_csv)
            .unwrap()
            .starts_with("episode,reward"));
        let plan = cmd_show_plan(&cfg, &r.checkpoint, 0).unwrap();
        assert!(plan.plan_valid);
        assert!(plan.hops.iter().all(|h| h.mask_valid));
        assert_eq!(plan.hops.len(), 2 * 3 - 1);
        assert_eq!(plan, cmd_show_plan(&cfg, &r.checkpoint, 0).unwrap());
        assert!(plan.render().contains("plan valid: true"));
        let mut other = cfg.clone();
        other.train.no_icm = true;
        other.train.hidden = 6;
        assert!(cmd_show_plan(&other, &r.checkpoint, 0).is_err());
    }

    #[test]
    fn random_policy_leakage_grows_with_monitoring() {
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_sweep(&tiny_cfg(), dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(
            rows.windows(2)
                .all(|w| w[0].mean_leakage_bits <= w[1].mean_leakage_bits),
            "{rows:?}"
        );
        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn power_table_covers_every_hop() {
        let scn = gen_scenario(4, 4, 2, 300.0, &ScenarioDefaults::default()).unwrap();
        let budget = HopBudget {
            time_budget: 1.0,
            energy_budget: 0.5,
            payload_bits: 1e5,
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = cmd_powers(&scn, &budget, Some(dir.path())).unwrap();
        // per transmitter: 3 device receivers × 2 idle deceivers + the server × 3
        assert_eq!(rows.len(), 4 * (3 * 2 + 3) * 2);
        assert!(rows
            .iter()
            .filter(|r| r.feasible)
            .all(|r| r.p_tx > 0.0 && r.p_deceiver > 0.0 && r.capture_prob < 1.0));
        assert!(dir.path().join("powers.csv").exists());
    }

    #[test]
    fn leakage_oracle_agrees() {
        let scn = gen_scenario(9, 5, 2, 500.0, &ScenarioDefaults::default()).unwrap();
        let rows = cmd_leakage_oracle(&scn, &[0.05, 0.4], 1, 4, 20_000, 1).unwrap();
        assert!(
            rows.iter()
                .all(|r| r.z_closed <= ORACLE_Z_LIMIT && r.z_exact <= ORACLE_Z_LIMIT),
            "{rows:?}"
        );
        let rows = cmd_leakage_oracle(&scn, &[0.05, 0.4], 3, 4, 20_000, 2).unwrap();
        assert!(rows.iter().all(|r| r.z_exact <= ORACLE_Z_LIMIT), "{rows:?}");
    }
}
