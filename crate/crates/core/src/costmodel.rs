//! Link rates, per-hop delays, compute times and the time/energy ledger of one
//! split-learning iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsum::fsum;
use crate::slmodel::{Segment, SplitPlan};
use crate::topology::{mean_gain, ComputeNode, NodeId, NodeKind, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeceiverPower {
    pub node: NodeId,
    pub power: f64,
}

/// One over-the-air transfer of activations or gradients, together with the
/// decoy transmitters active during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSpec {
    pub tx: NodeId,
    pub rx: NodeId,
    pub payload_bits: f64,
    pub tx_power: f64,
    pub deceivers: Vec<DeceiverPower>,
}

impl TransmissionSpec {
    pub fn new(tx: NodeId, rx: NodeId, payload_bits: f64, tx_power: f64) -> Self {
        Self {
            tx,
            rx,
            payload_bits,
            tx_power,
            deceivers: Vec::new(),
        }
    }

    pub fn with_deceiver(mut self, node: NodeId, power: f64) -> Self {
        self.deceivers.push(DeceiverPower { node, power });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx == self.rx {
            return Err(Error::InvalidArgument(format!(
                "{} transmits to itself",
                self.tx
            )));
        }
        if self
            .deceivers
            .iter()
            .any(|d| d.node == self.tx || d.node == self.rx)
        {
            return Err(Error::InvalidArgument(
                "deceiver coincides with a link endpoint".into(),
            ));
        }
        if self
            .deceivers
            .iter()
            .any(|d| d.node.kind == NodeKind::Eavesdropper)
        {
            return Err(Error::InvalidArgument(
                "eavesdroppers cannot deceive".into(),
            ));
        }
        for p in std::iter::once(self.tx_power).chain(self.deceivers.iter().map(|d| d.power)) {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::NegativePower(p));
            }
        }
        if !(self.payload_bits >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "payload {} bits",
                self.payload_bits
            )));
        }
        Ok(())
    }

    /// Transmitter plus all decoy powers.
    pub fn radiated_power(&self) -> f64 {
        self.tx_power + self.deceivers.iter().map(|d| d.power).sum::<f64>()
    }
}

/// Whether decoy transmissions interfere at the legitimate receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RateModel {
    #[default]
    WithInterference,
    InterferenceFree,
}

/// Achievable rate using mean channel gains.
pub fn data_rate(t: &TransmissionSpec, scn: &Scenario) -> Result<f64> {
    data_rate_with(t, scn, RateModel::WithInterference)
}

pub fn data_rate_with(t: &TransmissionSpec, scn: &Scenario, model: RateModel) -> Result<f64> {
    t.validate()?;
    let signal = t.tx_power * mean_gain(t.tx, t.rx, scn)?;
    let mut interference = 0.0;
    if model == RateModel::WithInterference {
        for d in &t.deceivers {
            interference += d.power * mean_gain(d.node, t.rx, scn)?;
        }
    }
    Ok(shannon_rate(
        scn.bandwidth_hz,
        signal,
        interference + scn.noise_power(),
    ))
}

/// `B·log2(1 + signal/noise)`.
pub fn shannon_rate(bandwidth_hz: f64, signal: f64, noise: f64) -> f64 {
    bandwidth_hz * (signal / noise).ln_1p() / std::f64::consts::LN_2
}

pub fn tx_time(payload_bits: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::UnreachableLink);
    }
    Ok(payload_bits / rate)
}

/// Forward and backward compute seconds of `segment` on `node`.
///
/// Products are evaluated left to right in the order
/// `cycles_per_bit · λ · Γ(in/out) · Γ(θ) / f`.
pub fn compute_times(segment: &Segment, node: &ComputeNode) -> (f64, f64) {
    let w = node.cycles_per_bit;
    let t_fwd = w * segment.lambda_f * segment.out_bits * segment.param_bits / node.cpu_hz;
    let t_bwd = w * segment.lambda_b * segment.grad_in_bits * segment.param_bits / node.cpu_hz;
    (t_fwd, t_bwd)
}

/// Chip energy of one forward plus backward pass, `ϑ·f²·(λ_f+λ_b)·Γ(θ)`.
pub fn compute_energy(segment: &Segment, node: &ComputeNode) -> f64 {
    node.energy_coeff
        * node.cpu_hz
        * node.cpu_hz
        * (segment.lambda_f + segment.lambda_b)
        * segment.param_bits
}

/// Cost components attributed to one step of an iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub t_tx: f64,
    pub t_fwd: f64,
    pub t_bwd: f64,
    pub e_compute: f64,
    pub e_tx: f64,
    pub e_deceive: f64,
}

impl StepCost {
    pub fn time(&self) -> f64 {
        fsum([self.t_tx, self.t_fwd, self.t_bwd])
    }

    pub fn energy(&self) -> f64 {
        fsum([self.e_compute, self.e_tx, self.e_deceive])
    }

    /// Airtime and radio energy of one hop.
    pub fn for_hop(t: &TransmissionSpec, scn: &Scenario) -> Result<Self> {
        let t_tx = tx_time(t.payload_bits, data_rate(t, scn)?)?;
        let decoy: f64 = fsum(t.deceivers.iter().map(|d| d.power));
        Ok(StepCost {
            t_tx,
            e_tx: t.tx_power * t_tx,
            e_deceive: decoy * t_tx,
            ..Default::default()
        })
    }
}

/// Running account of iteration time and energy.
///
/// Totals are exact sums over every breakdown component, so they do not depend
/// on how components are grouped into steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub time_spent: f64,
    pub energy_spent: f64,
    pub per_step_breakdown: Vec<StepCost>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: StepCost) {
        self.per_step_breakdown.push(step);
        let steps = &self.per_step_breakdown;
        self.time_spent = fsum(steps.iter().flat_map(|s| [s.t_tx, s.t_fwd, s.t_bwd]));
        self.energy_spent = fsum(
            steps
                .iter()
                .flat_map(|s| [s.e_compute, s.e_tx, s.e_deceive]),
        );
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Time and energy of a full forward/backward pass over the chain
/// `assignments[0] → … → assignments[S-1]` (the last entry is the server).
///
/// `transmissions` lists the S−1 forward hops followed by the S−1 backward
/// hops in execution order.
pub fn episode_totals(
    plan: &SplitPlan,
    assignments: &[NodeId],
    transmissions: &[TransmissionSpec],
    scn: &Scenario,
) -> Result<CostLedger> {
    let s = plan.segment_count();
    if assignments.len() != s {
        return Err(Error::BrokenChain(format!(
            "{} trainers for {s} segments",
            assignments.len()
        )));
    }
    let hops = s - 1;
    if transmissions.len() != 2 * hops {
        return Err(Error::BrokenChain(format!(
            "{} transmissions, expected {}",
            transmissions.len(),
            2 * hops
        )));
    }
    for k in 0..hops {
        let fwd = &transmissions[k];
        if fwd.tx != assignments[k] || fwd.rx != assignments[k + 1] {
            return Err(Error::BrokenChain(format!(
                "forward hop {} is {}→{}",
                k + 1,
                fwd.tx,
                fwd.rx
            )));
        }
        let bwd = &transmissions[hops + k];
        let (from, to) = (assignments[s - 1 - k], assignments[s - 2 - k]);
        if bwd.tx != from || bwd.rx != to {
            return Err(Error::BrokenChain(format!(
                "backward hop {} is {}→{}",
                k + 1,
                bwd.tx,
                bwd.rx
            )));
        }
    }
    let mut ledger = CostLedger::new();
    for (seg, &node) in plan.segments.iter().zip(assignments) {
        let cn = scn.compute_node(node)?;
        let (t_fwd, t_bwd) = compute_times(seg, cn);
        ledger.push(StepCost {
            t_fwd,
            t_bwd,
            e_compute: compute_energy(seg, cn),
            ..Default::default()
        });
    }
    for t in transmissions {
        ledger.push(StepCost::for_hop(t, scn)?);
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slmodel::{make_model, split_at, ModelProfile};
    use crate::topology::{gen_scenario, Position, ScenarioDefaults};

    fn line_scenario() -> Scenario {
        let mut scn = gen_scenario(1, 3, 1, 800.0, &ScenarioDefaults::default()).unwrap();
        scn.devices[0].position = Position::new(0.0, 0.0);
        scn.devices[1].position = Position::new(100.0, 0.0);
        scn.devices[2].position = Position::new(100.0, 100.0);
        scn
    }

    #[test]
    fn unit_snr_gives_bandwidth() {
        let scn = line_scenario();
        // h = 1e-4, B·N0 = 1e-6
        let t = TransmissionSpec::new(NodeId::device(0), NodeId::device(1), 1.0, 1e-2);
        assert!((data_rate(&t, &scn).unwrap() - 1e6).abs() < 1e-6);
        let silent = TransmissionSpec::new(NodeId::device(0), NodeId::device(1), 1.0, 0.0);
        assert_eq!(data_rate(&silent, &scn).unwrap(), 0.0);
    }

    #[test]
    fn decoy_interference_example() {
        let scn = line_scenario();
        // signal 4e-6, interference 1e-6 from 100 m with p_d = 1e-2
        let t = TransmissionSpec::new(NodeId::device(0), NodeId::device(1), 1.0, 4e-2)
            .with_deceiver(NodeId::device(2), 1e-2);
        let want = 1e6 * 3f64.log2();
        assert!((data_rate(&t, &scn).unwrap() - want).abs() / want < 1e-12);
        assert!((want - 1.585e6).abs() < 1e3);
    }

    #[test]
    fn tx_time_examples() {
        assert_eq!(tx_time(1e6, 1e6).unwrap(), 1.0);
        assert_eq!(tx_time(0.0, 1e6).unwrap(), 0.0);
        assert_eq!(tx_time(3e5, 2e6).unwrap() * 2.0, tx_time(3e5, 1e6).unwrap());
        assert!(matches!(tx_time(1.0, 0.0), Err(Error::UnreachableLink)));
    }

    #[test]
    fn compute_time_examples() {
        let seg = Segment {
            start: 0,
            end: 1,
            param_bits: 1.0,
            out_bits: 1.0,
            grad_in_bits: 1.0,
            lambda_f: 1.0,
            lambda_b: 1.0,
            sensitivity_weight: 1.0,
        };
        let mut node = ComputeNode {
            position: Position::new(0.0, 0.0),
            cpu_hz: 1.0,
            cycles_per_bit: 1.0,
            energy_coeff: 1.0,
        };
        assert_eq!(compute_times(&seg, &node), (1.0, 1.0));
        node.cpu_hz = 2.0;
        assert_eq!(compute_times(&seg, &node), (0.5, 0.5));

        // reference-scale workload is far over an 8 s budget
        let big = Segment {
            lambda_f: 2e9,
            ..seg
        };
        let node = ComputeNode {
            cpu_hz: 5e9,
            cycles_per_bit: 1e4,
            ..node
        };
        let (t_fwd, _) = compute_times(&big, &node);
        assert!((t_fwd - 4e3).abs() < 1e-9);
        assert!(t_fwd > 8.0);
    }

    #[test]
    fn ledger_requires_complete_chain() {
        let scn = line_scenario();
        let model = make_model(4, 2, &ModelProfile::reference(), 0).unwrap();
        let plan = split_at(&model, &[2]).unwrap();
        let chain = [NodeId::device(0), NodeId::SERVER];
        let fwd = TransmissionSpec::new(chain[0], chain[1], 1e5, 0.1);
        let bwd = TransmissionSpec::new(chain[1], chain[0], 1e5, 0.1);
        assert!(episode_totals(&plan, &chain, std::slice::from_ref(&fwd), &scn).is_err());
        assert!(episode_totals(&plan, &chain, &[fwd.clone(), fwd.clone()], &scn).is_err());
        let ledger = episode_totals(&plan, &chain, &[fwd, bwd], &scn).unwrap();
        assert_eq!(ledger.per_step_breakdown.len(), 4);
        assert_eq!(
            ledger.time_spent,
            fsum(ledger.per_step_breakdown.iter().map(|s| s.time()))
        );
    }

    #[test]
    fn zero_work_ledger_is_zero() {
        let scn = line_scenario();
        let layer = crate::slmodel::LayerSpec {
            param_bits: 0.0,
            boundary_activation_bits: 0.0,
            boundary_gradient_bits: 0.0,
            fwd_flop_coeff: 0.0,
            bwd_flop_coeff: 0.0,
            sensitivity_weight: 1.0,
        };
        let model = crate::slmodel::ModelSpec::new(0.0, vec![layer.clone(), layer]);
        let plan = split_at(&model, &[1]).unwrap();
        let chain = [NodeId::device(0), NodeId::SERVER];
        let hops = [
            TransmissionSpec::new(chain[0], chain[1], 0.0, 0.1),
            TransmissionSpec::new(chain[1], chain[0], 0.0, 0.1),
        ];
        let ledger = episode_totals(&plan, &chain, &hops, &scn).unwrap();
        assert_eq!((ledger.time_spent, ledger.energy_spent), (0.0, 0.0));
    }

    #[test]
    fn dropping_a_deceiver_saves_energy_and_time() {
        let scn = line_scenario();
        let base = TransmissionSpec::new(NodeId::device(0), NodeId::device(1), 4e5, 0.1);
        let with = base.clone().with_deceiver(NodeId::device(2), 0.2);
        let a = StepCost::for_hop(&with, &scn).unwrap();
        let b = StepCost::for_hop(&base, &scn).unwrap();
        assert!(b.energy() < a.energy());
        assert!(b.t_tx <= a.t_tx);
        assert!(data_rate(&base, &scn).unwrap() >= data_rate(&with, &scn).unwrap());
    }

    #[test]
    fn ledger_json_round_trip() {
        let mut ledger = CostLedger::new();
        ledger.push(StepCost {
            t_tx: 0.25,
            e_tx: 0.1,
            ..Default::default()
        });
        let back: CostLedger = serde_json::from_str(&ledger.to_json().unwrap()).unwrap();
        assert_eq!(back, ledger);
    }
}
