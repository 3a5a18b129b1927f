//! Network geometry, mean channel gains and fading draws.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Device,
    Server,
    Eavesdropper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub const SERVER: NodeId = NodeId {
        kind: NodeKind::Server,
        index: 0,
    };

    pub fn device(index: usize) -> Self {
        Self {
            kind: NodeKind::Device,
            index,
        }
    }

    pub fn eavesdropper(index: usize) -> Self {
        Self {
            kind: NodeKind::Eavesdropper,
            index,
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            NodeKind::Device => write!(f, "dev{}", self.index),
            NodeKind::Server => write!(f, "server"),
            NodeKind::Eavesdropper => write!(f, "eve{}", self.index),
        }
    }
}

/// Compute capability of a training node (device or server).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeNode {
    pub position: Position,
    /// CPU clock in Hz.
    pub cpu_hz: f64,
    /// CPU cycles needed per bit of work.
    pub cycles_per_bit: f64,
    /// Chip energy coefficient (J·s²).
    pub energy_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eavesdropper {
    pub position: Position,
    /// Probability of monitoring any given transmission.
    pub monitor_prob: f64,
}

/// Everything physical about one deployment: who sits where, radio constants
/// and the per-iteration time and energy budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bandwidth_hz: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Fading scale constant multiplying the inverse-square path gain.
    pub rayleigh_o: f64,
    pub area_side: f64,
    pub time_budget: f64,
    pub energy_budget: f64,
    pub server: ComputeNode,
    pub devices: Vec<ComputeNode>,
    pub eavesdroppers: Vec<Eavesdropper>,
}

/// Draw ranges and constants used by [`gen_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioDefaults {
    pub cpu_hz_range: (f64, f64),
    pub cycles_per_bit_range: (f64, f64),
    pub energy_coeff: f64,
    pub monitor_prob: f64,
    pub bandwidth_hz: f64,
    pub noise_psd: f64,
    pub rayleigh_o: f64,
    pub time_budget: f64,
    pub energy_budget: f64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        Self {
            cpu_hz_range: (4e9, 7e9),
            cycles_per_bit_range: (1e4, 1e6),
            energy_coeff: 6e-18,
            monitor_prob: 0.8,
            bandwidth_hz: 1e6,
            // -90 dBm/Hz
            noise_psd: 1e-12,
            rayleigh_o: 1.0,
            time_budget: 15.0,
            energy_budget: 100.0,
        }
    }
}

impl Scenario {
    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn eavesdropper_count(&self) -> usize {
        self.eavesdroppers.len()
    }

    pub fn noise_power(&self) -> f64 {
        self.bandwidth_hz * self.noise_psd
    }

    pub fn position(&self, node: NodeId) -> Result<Position> {
        let pos = match node.kind {
            NodeKind::Server if node.index == 0 => Some(self.server.position),
            NodeKind::Server => None,
            NodeKind::Device => self.devices.get(node.index).map(|d| d.position),
            NodeKind::Eavesdropper => self.eavesdroppers.get(node.index).map(|e| e.position),
        };
        pos.ok_or_else(|| Error::InvalidArgument(format!("unknown node {node}")))
    }

    /// Compute profile of a device or the server.
    pub fn compute_node(&self, node: NodeId) -> Result<&ComputeNode> {
        match node.kind {
            NodeKind::Server if node.index == 0 => Ok(&self.server),
            NodeKind::Device => self
                .devices
                .get(node.index)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown node {node}"))),
            _ => Err(Error::InvalidArgument(format!(
                "{node} has no compute profile"
            ))),
        }
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64> {
        Ok(distance(self.position(a)?, self.position(b)?))
    }

    pub fn diagonal(&self) -> f64 {
        self.area_side * std::f64::consts::SQRT_2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_psd", self.noise_psd),
            ("rayleigh_o", self.rayleigh_o),
            ("area_side", self.area_side),
            ("time_budget", self.time_budget),
            ("energy_budget", self.energy_budget),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.devices.len() < 2 {
            return Err(Error::InvalidArgument("need at least two devices".into()));
        }
        let in_area = |p: &Position| {
            p.x.is_finite()
                && p.y.is_finite()
                && (0.0..=self.area_side).contains(&p.x)
                && (0.0..=self.area_side).contains(&p.y)
        };
        for (i, c) in std::iter::once(&self.server)
            .chain(&self.devices)
            .enumerate()
        {
            if !in_area(&c.position) {
                return Err(Error::InvalidArgument(format!(
                    "compute node {i} outside area"
                )));
            }
            if !(c.cpu_hz > 0.0 && c.cycles_per_bit > 0.0 && c.energy_coeff > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "compute node {i} has non-positive constants"
                )));
            }
        }
        for (i, e) in self.eavesdroppers.iter().enumerate() {
            if !in_area(&e.position) {
                return Err(Error::InvalidArgument(format!(
                    "eavesdropper {i} outside area"
                )));
            }
            if !(0.0..=1.0).contains(&e.monitor_prob) {
                return Err(Error::InvalidArgument(format!(
                    "eavesdropper {i} monitor_prob {} not in [0,1]",
                    e.monitor_prob
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scn: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    /// Same scenario with every eavesdropper's monitoring probability replaced.
    pub fn with_monitor_prob(mut self, q: f64) -> Self {
        for e in &mut self.eavesdroppers {
            e.monitor_prob = q;
        }
        self
    }
}

pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Mean channel gain `o / m²` between two nodes.
pub fn mean_gain(a: NodeId, b: NodeId, scn: &Scenario) -> Result<f64> {
    let m = scn.distance(a, b)?;
    gain_at(m, scn.rayleigh_o)
}

/// Mean gain at a given distance.
pub fn gain_at(m: f64, o: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::DegenerateGeometry(format!("distance {m}")));
    }
    Ok(o / (m * m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingDraw {
    pub rx_power: f64,
    pub source: NodeId,
    pub sink: NodeId,
}

/// Received power under Rayleigh fading: exponential with mean `p·o/m²`.
pub fn sample_rx_power<R: Rng + ?Sized>(
    tx_power: f64,
    a: NodeId,
    b: NodeId,
    scn: &Scenario,
    rng: &mut R,
) -> Result<FadingDraw> {
    if tx_power < 0.0 || tx_power.is_nan() {
        return Err(Error::NegativePower(tx_power));
    }
    let mean = tx_power * mean_gain(a, b, scn)?;
    Ok(FadingDraw {
        rx_power: draw_exponential(mean, rng),
        source: a,
        sink: b,
    })
}

/// One exponential draw with the given mean. Always consumes exactly one
/// variate so callers keep their streams aligned even for zero means.
pub fn draw_exponential<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let unit: f64 = Exp1.sample(rng);
    mean * unit
}

/// Random deployment inside a square of side `area_side`.
pub fn gen_scenario(
    seed: u64,
    u_count: usize,
    e_count: usize,
    area_side: f64,
    defaults: &ScenarioDefaults,
) -> Result<Scenario> {
    if u_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 devices, got {u_count}"
        )));
    }
    if !(area_side > 0.0) {
        return Err(Error::InvalidArgument(format!("area side {area_side}")));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let pos = |rng: &mut SimRng| {
        Position::new(
            rng.random::<f64>() * area_side,
            rng.random::<f64>() * area_side,
        )
    };
    let (lo_w, hi_w) = defaults.cycles_per_bit_range;
    let compute = |rng: &mut SimRng, p: Position| ComputeNode {
        position: p,
        cpu_hz: rng.random_range(defaults.cpu_hz_range.0..=defaults.cpu_hz_range.1),
        cycles_per_bit: (rng.random_range(lo_w.ln()..=hi_w.ln())).exp(),
        energy_coeff: defaults.energy_coeff,
    };
    let mut devices = Vec::with_capacity(u_count);
    for _ in 0..u_count {
        let p = pos(&mut rng);
        devices.push(compute(&mut rng, p));
    }
    let sp = pos(&mut rng);
    let server = compute(&mut rng, sp);
    let eavesdroppers = (0..e_count)
        .map(|_| Eavesdropper {
            position: pos(&mut rng),
            monitor_prob: defaults.monitor_prob,
        })
        .collect();
    let scn = Scenario {
        bandwidth_hz: defaults.bandwidth_hz,
        noise_psd: defaults.noise_psd,
        rayleigh_o: defaults.rayleigh_o,
        area_side,
        time_budget: defaults.time_budget,
        energy_budget: defaults.energy_budget,
        server,
        devices,
        eavesdroppers,
    };
    scn.validate()?;
    Ok(scn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(m: f64) -> Scenario {
        let mut scn = gen_scenario(1, 2, 1, 1000.0, &ScenarioDefaults::default()).unwrap();
        scn.devices[0].position = Position::new(0.0, 0.0);
        scn.devices[1].position = Position::new(m, 0.0);
        scn
    }

    #[test]
    fn distance_examples() {
        assert_eq!(
            distance(Position::new(0.0, 0.0), Position::new(3.0, 4.0)),
            5.0
        );
        let p = Position::new(12.5, 7.25);
        assert_eq!(distance(p, p), 0.0);
        let d = distance(Position::new(0.0, 0.0), Position::new(800.0, 800.0));
        assert!((d - 1131.370849898476).abs() < 1e-9);
    }

    #[test]
    fn mean_gain_examples() {
        let (a, b) = (NodeId::device(0), NodeId::device(1));
        assert!((mean_gain(a, b, &two_point(100.0)).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(mean_gain(a, b, &two_point(1.0)).unwrap(), 1.0);
        let r = mean_gain(a, b, &two_point(200.0)).unwrap()
            / mean_gain(a, b, &two_point(100.0)).unwrap();
        assert_eq!(r, 0.25);
        assert!(matches!(
            mean_gain(a, b, &two_point(0.0)),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn zero_power_and_determinism() {
        let scn = two_point(100.0);
        let (a, b) = (NodeId::device(0), NodeId::device(1));
        let mut rng = SimRng::seed_from_u64(3);
        assert_eq!(
            sample_rx_power(0.0, a, b, &scn, &mut rng).unwrap().rx_power,
            0.0
        );
        let d1 = sample_rx_power(0.1, a, b, &scn, &mut SimRng::seed_from_u64(9)).unwrap();
        let d2 = sample_rx_power(0.1, a, b, &scn, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(d1, d2);
        assert!(matches!(
            sample_rx_power(-1.0, a, b, &scn, &mut rng),
            Err(Error::NegativePower(_))
        ));
    }

    #[test]
    fn gen_scenario_contract() {
        let d = ScenarioDefaults::default();
        let a = gen_scenario(42, 6, 2, 800.0, &d).unwrap();
        let b = gen_scenario(42, 6, 2, 800.0, &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml().unwrap(), b.to_toml().unwrap());
        assert_eq!(a.device_count(), 6);
        assert_eq!(a.eavesdropper_count(), 2);
        for dev in &a.devices {
            assert!((4e9..=7e9).contains(&dev.cpu_hz));
            assert!((1e4..=1e6 * (1.0 + 1e-12)).contains(&dev.cycles_per_bit));
        }
        assert!(gen_scenario(1, 1, 2, 800.0, &d).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let a = gen_scenario(5, 4, 3, 800.0, &ScenarioDefaults::default()).unwrap();
        let back = Scenario::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, back);
    }
}
