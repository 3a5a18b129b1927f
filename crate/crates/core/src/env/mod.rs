//! The scheduling MDP.
//!
//! One episode schedules one split-learning iteration in `2S − 1` steps:
//!
//! * step 1 picks the first trainer and its segment size (nothing is sent);
//! * steps `2..=S` pick the next trainer and its segment size and send the
//!   previous trainer's activations to it (step `S` always targets the
//!   server, which takes every remaining layer);
//! * steps `S+1..=2S−1` send gradients back along the chain.
//!
//! Every transmitting step also picks decoy devices and power levels.

pub mod action;
pub mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use action::{ActionSpace, ActionTuple};

use crate::costmodel::{
    compute_energy, compute_times, CostLedger, DeceiverPower, StepCost, TransmissionSpec,
};
use crate::eavesdrop::{sample_capture, CaptureOutcome};
use crate::error::{Error, Result};
use crate::slmodel::{ModelSpec, Segment};
use crate::topology::{NodeId, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Number of segments `S`, the server's included.
    pub segments: usize,
    pub max_deceivers: usize,
    /// Discrete transmit/decoy power levels in watts.
    pub power_levels: Vec<f64>,
    /// Whether eavesdropper distances are part of the observation.
    pub observe_eavesdroppers: bool,
    pub energy_penalty: f64,
    pub time_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            segments: 4,
            max_deceivers: 2,
            power_levels: vec![0.05, 0.1, 0.2, 0.4],
            observe_eavesdroppers: true,
            energy_penalty: 1.0,
            time_penalty: 1.0,
        }
    }
}

/// Observable state plus the bookkeeping needed to continue the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub remaining_energy: f64,
    pub remaining_time: f64,
    /// Fraction of layers not yet assigned to a trainer.
    pub unassigned_fraction: f64,
    /// Per device: 0 if idle, otherwise the 1-based segment it trains.
    pub assignment: Vec<usize>,
    /// Node that transmits next.
    pub transmitter: Option<NodeId>,
    pub eavesdropper_dists: Vec<f64>,
    pub device_dists: Vec<f64>,
    /// 1-based index of the next step; `2S` once the episode is over.
    pub step: usize,
    /// Trainers in chain order; the server is appended at step `S`.
    pub trainers: Vec<NodeId>,
    pub segment_layers: Vec<usize>,
    pub spent: CostLedger,
}

impl EnvState {
    pub fn assigned_layers(&self) -> usize {
        self.segment_layers.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub extrinsic_reward: f64,
    /// Raw bits leaked to all eavesdroppers during this step.
    pub leakage_bits: f64,
    /// `leakage_bits` divided by the episode normaliser.
    pub leakage_norm: f64,
    /// Entries this step appended to the cost ledger.
    pub ledger_delta: Vec<StepCost>,
    pub done: bool,
    pub transmission: Option<TransmissionSpec>,
    /// Segment-weighted payload an eavesdropper would learn on capture.
    pub delta_bits: f64,
    pub captures: Vec<CaptureOutcome>,
    pub energy_violated: bool,
    pub time_violated: bool,
}

/// Human-readable view of an action in context.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionView {
    pub step: usize,
    pub transmitter: Option<NodeId>,
    pub receiver: Option<NodeId>,
    pub segment_layers: usize,
    pub deceivers: Vec<NodeId>,
    pub tx_power: f64,
    pub decoy_power: f64,
    /// Receiver of the gradient on backward steps.
    pub backward_receiver: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct SplitEnv {
    pub scenario: Scenario,
    pub model: ModelSpec,
    pub cfg: EnvConfig,
    pub space: ActionSpace,
    normalizer: f64,
}

impl SplitEnv {
    pub fn new(scenario: Scenario, model: ModelSpec, cfg: EnvConfig) -> Result<Self> {
        scenario.validate()?;
        let s = cfg.segments;
        let layers = model.layer_count();
        if s < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 segments, got {s}"
            )));
        }
        if s - 1 > scenario.device_count() {
            return Err(Error::InvalidArgument(format!(
                "{} device trainers needed but only {} devices",
                s - 1,
                scenario.device_count()
            )));
        }
        if layers < s {
            return Err(Error::InvalidArgument(format!(
                "{layers} layers cannot form {s} segments"
            )));
        }
        let space = ActionSpace::new(
            scenario.device_count(),
            layers - s + 1,
            cfg.max_deceivers,
            cfg.power_levels.clone(),
        )?;
        let widest = model.layers[..layers - 1]
            .iter()
            .map(|l| l.boundary_activation_bits.max(l.boundary_gradient_bits))
            .fold(0.0, f64::max);
        let heaviest = model
            .layers
            .iter()
            .map(|l| l.sensitivity_weight)
            .fold(0.0, f64::max);
        let normalizer = 2.0 * (s - 1) as f64 * widest * heaviest;
        let normalizer = if normalizer > 0.0 { normalizer } else { 1.0 };
        Ok(Self {
            scenario,
            model,
            cfg,
            space,
            normalizer,
        })
    }

    pub fn action_count(&self) -> usize {
        self.space.size()
    }

    pub fn episode_len(&self) -> usize {
        2 * self.cfg.segments - 1
    }

    /// Divisor turning leaked bits into reward units: the largest possible
    /// per-hop leak times the number of hops.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Closed interval every extrinsic reward lies in.
    pub fn reward_bounds(&self) -> (f64, f64) {
        let widest = self.normalizer / (2.0 * (self.cfg.segments - 1) as f64);
        let per_hop_max = widest / self.normalizer;
        let e = self.scenario.eavesdropper_count() as f64;
        (
            -(e * per_hop_max + self.cfg.energy_penalty + self.cfg.time_penalty),
            0.0,
        )
    }

    pub fn state_len(&self) -> usize {
        let u = self.scenario.device_count();
        3 + u + (u + 1) + self.scenario.eavesdropper_count() + u + 1
    }

    pub fn reset(&self) -> EnvState {
        let u = self.scenario.device_count();
        EnvState {
            remaining_energy: self.scenario.energy_budget,
            remaining_time: self.scenario.time_budget,
            unassigned_fraction: 1.0,
            assignment: vec![0; u],
            transmitter: None,
            eavesdropper_dists: vec![0.0; self.scenario.eavesdropper_count()],
            device_dists: vec![0.0; u],
            step: 1,
            trainers: Vec::new(),
            segment_layers: Vec::new(),
            spent: CostLedger::new(),
        }
    }

    fn receiver_node(&self, r: usize) -> NodeId {
        if r == 0 {
            NodeId::SERVER
        } else {
            NodeId::device(r - 1)
        }
    }

    /// Transmitter and receiver of the hop executed at step `n`.
    fn endpoints(&self, state: &EnvState, a: &ActionTuple) -> Option<(NodeId, NodeId)> {
        let s = self.cfg.segments;
        let n = state.step;
        if n == 1 || n > 2 * s - 1 {
            None
        } else if n <= s {
            Some((state.trainers[n - 2], self.receiver_node(a.receiver)))
        } else {
            let k = 2 * s - n + 1;
            Some((state.trainers[k - 1], state.trainers[k - 2]))
        }
    }

    /// Largest segment the trainer chosen at step `n ≤ S−1` may take.
    fn cut_room(&self, state: &EnvState) -> usize {
        let left = self.model.layer_count() - state.assigned_layers();
        left - (self.cfg.segments - state.step)
    }

    pub fn is_valid(&self, state: &EnvState, a: &ActionTuple) -> bool {
        let s = self.cfg.segments;
        let n = state.step;
        let u = self.scenario.device_count();
        if n == 0 || n > 2 * s - 1 || a.receiver > u || a.cut > self.space.max_cut {
            return false;
        }
        if a.deceiver_set >= self.space.deceiver_sets.len() {
            return false;
        }
        let p = self.space.levels.len();
        if a.tx_level >= p || a.decoy_level >= p {
            return false;
        }
        let decoys = &self.space.deceiver_sets[a.deceiver_set];
        if decoys.is_empty() && a.decoy_level != 0 {
            return false;
        }
        let idle_receiver = a.receiver > 0 && state.assignment[a.receiver - 1] == 0;
        let route_ok = match n {
            1 => a.receiver > 0 && (1..=self.cut_room(state)).contains(&a.cut),
            _ if n < s => idle_receiver && (1..=self.cut_room(state)).contains(&a.cut),
            _ if n == s => {
                a.receiver == 0 && a.cut == self.model.layer_count() - state.assigned_layers()
            }
            _ => a.receiver == 0 && a.cut == 0,
        };
        if !route_ok {
            return false;
        }
        match self.endpoints(state, a) {
            None => decoys.is_empty() && a.tx_level == 0 && a.decoy_level == 0,
            Some((tx, rx)) => decoys
                .iter()
                .all(|&d| NodeId::device(d) != tx && NodeId::device(d) != rx),
        }
    }

    /// Validity of every action at `state`.
    pub fn action_mask(&self, state: &EnvState) -> Result<Vec<bool>> {
        let s = self.cfg.segments;
        let n = state.step;
        if n == 0 || n > 2 * s - 1 {
            return Err(Error::EpisodeDone);
        }
        let mut mask = vec![false; self.space.size()];
        let u = self.scenario.device_count();
        let routes: Vec<(usize, usize)> = match n {
            1 => (1..=u)
                .flat_map(|r| (1..=self.cut_room(state)).map(move |c| (r, c)))
                .collect(),
            _ if n < s => (1..=u)
                .filter(|&r| state.assignment[r - 1] == 0)
                .flat_map(|r| (1..=self.cut_room(state)).map(move |c| (r, c)))
                .collect(),
            _ if n == s => vec![(0, self.model.layer_count() - state.assigned_layers())],
            _ => vec![(0, 0)],
        };
        let p = self.space.levels.len();
        for (receiver, cut) in routes {
            let probe = ActionTuple {
                receiver,
                cut,
                deceiver_set: 0,
                tx_level: 0,
                decoy_level: 0,
            };
            match self.endpoints(state, &probe) {
                None => mask[self.space.encode(probe)] = true,
                Some((tx, rx)) => {
                    for (set, decoys) in self.space.deceiver_sets.iter().enumerate() {
                        if decoys
                            .iter()
                            .any(|&d| NodeId::device(d) == tx || NodeId::device(d) == rx)
                        {
                            continue;
                        }
                        let decoy_levels = if decoys.is_empty() { 1 } else { p };
                        for tx_level in 0..p {
                            for decoy_level in 0..decoy_levels {
                                let a = ActionTuple {
                                    receiver,
                                    cut,
                                    deceiver_set: set,
                                    tx_level,
                                    decoy_level,
                                };
                                mask[self.space.encode(a)] = true;
                            }
                        }
                    }
                }
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DeadEnd { step: n });
        }
        Ok(mask)
    }

    pub fn describe(&self, state: &EnvState, id: usize) -> Result<ActionView> {
        let a = self.space.decode(id)?;
        let ends = self.endpoints(state, &a);
        let s = self.cfg.segments;
        let receiver = match state.step {
            1 => Some(self.receiver_node(a.receiver)),
            n if n <= s => ends.map(|e| e.1),
            _ => None,
        };
        let (tx_power, decoy_power) = match ends {
            Some(_) => (
                self.space.levels[a.tx_level],
                self.space.levels[a.decoy_level],
            ),
            None => (0.0, 0.0),
        };
        let deceivers = self.space.deceiver_sets[a.deceiver_set]
            .iter()
            .map(|&d| NodeId::device(d))
            .collect::<Vec<_>>();
        Ok(ActionView {
            step: state.step,
            transmitter: ends.map(|e| e.0),
            receiver,
            segment_layers: a.cut,
            decoy_power: if deceivers.is_empty() {
                0.0
            } else {
                decoy_power
            },
            deceivers,
            tx_power,
            backward_receiver: if state.step > s {
                ends.map(|e| e.1)
            } else {
                None
            },
        })
    }

    fn segment(&self, state: &EnvState, k: usize) -> Result<Segment> {
        let start: usize = state.segment_layers[..k - 1].iter().sum();
        Segment::new(&self.model, start, start + state.segment_layers[k - 1])
    }

    fn locate(&self, state: &mut EnvState, node: NodeId) -> Result<()> {
        state.transmitter = Some(node);
        let observe = self.cfg.observe_eavesdroppers;
        for (e, d) in state.eavesdropper_dists.iter_mut().enumerate() {
            *d = if observe {
                self.scenario.distance(node, NodeId::eavesdropper(e))?
            } else {
                0.0
            };
        }
        for (i, d) in state.device_dists.iter_mut().enumerate() {
            let other = NodeId::device(i);
            *d = if other == node {
                0.0
            } else {
                self.scenario.distance(node, other)?
            };
        }
        Ok(())
    }

    /// Execute action `id` at `state`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        id: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let s = self.cfg.segments;
        let n = state.step;
        if n > 2 * s - 1 {
            return Err(Error::EpisodeDone);
        }
        let a = self.space.decode(id)?;
        if !self.is_valid(state, &a) {
            return Err(Error::InvalidAction {
                action: id,
                step: n,
            });
        }
        let mut next = state.clone();
        next.step = n + 1;
        let mut cost = StepCost::default();
        let mut hop: Option<(TransmissionSpec, Segment)> = None;
        let mut first_backward = None;

        if n <= s {
            let node = self.receiver_node(a.receiver);
            next.trainers.push(node);
            next.segment_layers.push(a.cut);
            if a.receiver > 0 {
                next.assignment[a.receiver - 1] = next.trainers.len();
            }
            next.unassigned_fraction = (self.model.layer_count() - next.assigned_layers()) as f64
                / self.model.layer_count() as f64;
        }
        if n >= 2 {
            let (tx, rx) = self.endpoints(state, &a).expect("transmitting step");
            let spec = TransmissionSpec {
                tx,
                rx,
                payload_bits: 0.0,
                tx_power: self.space.levels[a.tx_level],
                deceivers: self.space.deceiver_sets[a.deceiver_set]
                    .iter()
                    .map(|&d| DeceiverPower {
                        node: NodeId::device(d),
                        power: self.space.levels[a.decoy_level],
                    })
                    .collect(),
            };
            if n <= s {
                // forward: the sender finishes its segment and ships the activations
                let k = n - 1;
                let seg = self.segment(&next, k)?;
                let cn = self.scenario.compute_node(tx)?;
                cost.t_fwd = compute_times(&seg, cn).0;
                cost.e_compute = compute_energy(&seg, cn);
                hop = Some((
                    TransmissionSpec {
                        payload_bits: seg.out_bits,
                        ..spec
                    },
                    seg,
                ));
            } else {
                // backward: the sender finishes its backward pass and ships ∂L/∂z_{k-1}
                let k = 2 * s - n + 1;
                let seg = self.segment(&next, k)?;
                let cn = self.scenario.compute_node(tx)?;
                let (t_fwd, t_bwd) = compute_times(&seg, cn);
                cost.t_bwd = t_bwd;
                if k == s {
                    cost.t_fwd = t_fwd;
                    cost.e_compute = compute_energy(&seg, cn);
                }
                if n == 2 * s - 1 {
                    let first = self.segment(&next, 1)?;
                    first_backward = Some(compute_times(&first, self.scenario.compute_node(rx)?).1);
                }
                let owner = self.segment(&next, k - 1)?;
                hop = Some((
                    TransmissionSpec {
                        payload_bits: seg.grad_in_bits,
                        ..spec
                    },
                    owner,
                ));
            }
        }

        let mut captures = Vec::new();
        let mut leakage_bits = 0.0;
        let mut delta_bits = 0.0;
        if let Some((t, seg)) = &hop {
            let air = StepCost::for_hop(t, &self.scenario)?;
            cost.t_tx = air.t_tx;
            cost.e_tx = air.e_tx;
            cost.e_deceive = air.e_deceive;
            delta_bits = crate::eavesdrop::delta(t, seg);
            for e in 0..self.scenario.eavesdropper_count() {
                let c = sample_capture(t, e, delta_bits, &self.scenario, rng)?;
                leakage_bits += c.leaked_bits;
                captures.push(c);
            }
        }
        let mut ledger_delta = vec![cost];
        if let Some(t_bwd) = first_backward {
            ledger_delta.push(StepCost {
                t_bwd,
                ..Default::default()
            });
        }
        for entry in &ledger_delta {
            next.spent.push(*entry);
        }
        next.remaining_energy = self.scenario.energy_budget - next.spent.energy_spent;
        next.remaining_time = self.scenario.time_budget - next.spent.time_spent;

        let next_tx = match n {
            1 => next.trainers[0],
            _ => hop.as_ref().map(|(t, _)| t.rx).expect("transmitting step"),
        };
        self.locate(&mut next, next_tx)?;

        let leakage_norm = leakage_bits / self.normalizer;
        let (energy_violated, time_violated) =
            (next.remaining_energy <= 0.0, next.remaining_time <= 0.0);
        let reward = if n == 1 {
            0.0
        } else {
            -leakage_norm
                - if energy_violated {
                    self.cfg.energy_penalty
                } else {
                    0.0
                }
                - if time_violated {
                    self.cfg.time_penalty
                } else {
                    0.0
                }
        };
        let (lo, hi) = self.reward_bounds();
        if !(lo..=hi).contains(&reward) {
            return Err(Error::RewardOutOfBounds { reward, lo, hi });
        }
        Ok(StepOutcome {
            done: next.step > 2 * s - 1,
            next_state: next,
            extrinsic_reward: reward,
            leakage_bits,
            leakage_norm,
            ledger_delta,
            transmission: hop.map(|(t, _)| t),
            delta_bits,
            captures,
            energy_violated,
            time_violated,
        })
    }

    /// Observation vector: remaining energy and time (as budget fractions),
    /// unassigned fraction, assignment/S per device, one-hot transmitter
    /// (devices then server), eavesdropper distances, device distances (both
    /// over the area diagonal) and step/(2S−1).
    pub fn encode_state(&self, state: &EnvState) -> Vec<f64> {
        let u = self.scenario.device_count();
        let s = self.cfg.segments as f64;
        let diag = self.scenario.diagonal();
        let mut out = Vec::with_capacity(self.state_len());
        out.push(state.remaining_energy / self.scenario.energy_budget);
        out.push(state.remaining_time / self.scenario.time_budget);
        out.push(state.unassigned_fraction);
        out.extend(state.assignment.iter().map(|&r| r as f64 / s));
        let mut onehot = vec![0.0; u + 1];
        match state.transmitter {
            Some(node) if node == NodeId::SERVER => onehot[u] = 1.0,
            Some(node) => onehot[node.index] = 1.0,
            None => {}
        }
        out.extend(onehot);
        if self.cfg.observe_eavesdroppers {
            out.extend(state.eavesdropper_dists.iter().map(|d| d / diag));
        } else {
            out.extend(std::iter::repeat_n(0.0, state.eavesdropper_dists.len()));
        }
        out.extend(state.device_dists.iter().map(|d| d / diag));
        out.push(state.step as f64 / self.episode_len() as f64);
        out
    }
}

/// Bucket every component into 8 levels over [0, 1] (values outside are clamped).
pub fn quantize(encoded: &[f64]) -> Vec<u8> {
    encoded
        .iter()
        .map(|&x| ((x.clamp(0.0, 1.0) * 8.0).floor() as u8).min(7))
        .collect()
}

/// FNV-1a over the bit patterns of an encoded state.
pub fn state_hash(encoded: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in encoded {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slmodel::{make_model, ModelProfile, REFERENCE_LAYERS};
    use crate::topology::{gen_scenario, ScenarioDefaults};
    use crate::SimRng;
    use rand::SeedableRng;

    pub(crate) fn reference_env(observe: bool) -> SplitEnv {
        let scn = gen_scenario(7, 6, 2, 800.0, &ScenarioDefaults::default()).unwrap();
        let model = make_model(REFERENCE_LAYERS, 4, &ModelProfile::reference(), 7).unwrap();
        SplitEnv::new(
            scn,
            model,
            EnvConfig {
                observe_eavesdroppers: observe,
                ..EnvConfig::default()
            },
        )
        .unwrap()
    }

    fn random_valid<R: Rng>(mask: &[bool], rng: &mut R) -> usize {
        let ids: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        ids[rng.random_range(0..ids.len())]
    }

    #[test]
    fn reset_examples() {
        let env = reference_env(true);
        let s = env.reset();
        assert_eq!((s.remaining_energy, s.remaining_time), (100.0, 15.0));
        assert_eq!(s.unassigned_fraction, 1.0);
        assert_eq!(s, env.reset());
        let enc = env.encode_state(&s);
        assert_eq!(&enc[..2], &[1.0, 1.0]);
        assert_eq!(enc.len(), 3 + 6 + 7 + 2 + 6 + 1);
        assert_eq!(enc.len(), env.state_len());
    }

    #[test]
    fn too_few_devices_rejected() {
        let scn = gen_scenario(1, 2, 1, 800.0, &ScenarioDefaults::default()).unwrap();
        let model = make_model(6, 4, &ModelProfile::reference(), 1).unwrap();
        assert!(SplitEnv::new(scn, model, EnvConfig::default()).is_err());
    }

    #[test]
    fn mask_matches_validity_predicate() {
        let env = reference_env(true);
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..5 {
            let mut state = env.reset();
            for _ in 0..env.episode_len() {
                let mask = env.action_mask(&state).unwrap();
                for (id, &m) in mask.iter().enumerate() {
                    assert_eq!(
                        m,
                        env.is_valid(&state, &env.space.decode(id).unwrap()),
                        "step {} id {id}",
                        state.step
                    );
                }
                let id = random_valid(&mask, &mut rng);
                state = env.step(&state, id, &mut rng).unwrap().next_state;
            }
            assert!(env.action_mask(&state).is_err());
        }
    }

    #[test]
    fn forced_steps() {
        let env = reference_env(true);
        let mut rng = SimRng::seed_from_u64(4);
        let mut state = env.reset();
        for _ in 0..env.episode_len() {
            let mask = env.action_mask(&state).unwrap();
            let n = state.step;
            for id in (0..mask.len()).filter(|&i| mask[i]) {
                let a = env.space.decode(id).unwrap();
                if n == 4 {
                    assert_eq!(a.receiver, 0);
                    assert_eq!(a.cut, 6 - state.assigned_layers());
                }
                if n > 4 {
                    assert_eq!((a.receiver, a.cut), (0, 0));
                }
            }
            let first = env
                .step(&state, random_valid(&mask, &mut rng), &mut rng)
                .unwrap();
            if n == 1 {
                assert_eq!(first.extrinsic_reward, 0.0);
                assert!(first.transmission.is_none());
                assert_eq!(first.next_state.remaining_energy, 100.0);
            }
            assert_eq!(first.done, n == env.episode_len());
            state = first.next_state;
        }
        assert_eq!(state.assigned_layers(), 6);
        assert_eq!(state.trainers.last(), Some(&NodeId::SERVER));
    }

    #[test]
    fn invalid_action_is_rejected() {
        let env = reference_env(true);
        let state = env.reset();
        let mask = env.action_mask(&state).unwrap();
        let bad = mask.iter().position(|m| !m).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        assert!(matches!(
            env.step(&state, bad, &mut rng),
            Err(Error::InvalidAction { .. })
        ));
    }

    #[test]
    fn exhausted_budgets_cost_both_penalties() {
        let mut env = reference_env(true);
        env.scenario
            .eavesdroppers
            .iter_mut()
            .for_each(|e| e.monitor_prob = 0.0);
        let mut rng = SimRng::seed_from_u64(5);
        let mut state = env.reset();
        let id = random_valid(&env.action_mask(&state).unwrap(), &mut rng);
        state = env.step(&state, id, &mut rng).unwrap().next_state;
        state.remaining_energy = -1.0;
        state.remaining_time = -1.0;
        state.spent.energy_spent = 1e9;
        let mut poor = env.clone();
        poor.scenario.energy_budget = 1e-9;
        poor.scenario.time_budget = 1e-9;
        let id = random_valid(&poor.action_mask(&state).unwrap(), &mut rng);
        let out = poor.step(&state, id, &mut rng).unwrap();
        assert_eq!(out.extrinsic_reward, -2.0);
    }

    #[test]
    fn hidden_mode_zeroes_eavesdropper_block() {
        let env = reference_env(false);
        let mut rng = SimRng::seed_from_u64(6);
        let mut state = env.reset();
        for _ in 0..3 {
            let id = random_valid(&env.action_mask(&state).unwrap(), &mut rng);
            state = env.step(&state, id, &mut rng).unwrap().next_state;
            let enc = env.encode_state(&state);
            assert!(enc[3 + 6 + 7..3 + 6 + 7 + 2].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn quantize_buckets() {
        assert_eq!(
            quantize(&[-0.5, 0.0, 0.124, 0.125, 0.99, 1.0, 3.0]),
            vec![0, 0, 0, 1, 7, 7, 7]
        );
    }
}
