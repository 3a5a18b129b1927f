//! Eavesdropper capture model and expected leakage.
//!
//! An eavesdropper decodes whichever signal reaches it strongest. With
//! exponential received powers the transmitter beats deceiver `d` with
//! probability `p_s g_s / (p_d g_d + p_s g_s)`, and independent fading makes
//! the capture probability the product of these odds.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::costmodel::TransmissionSpec;
use crate::error::{Error, Result};
use crate::fsum::fsum;
use crate::slmodel::Segment;
use crate::topology::{mean_gain, sample_rx_power, NodeId, Scenario};
use crate::SimRng;

/// Information gained by an eavesdropper that captures `t`.
pub fn delta(t: &TransmissionSpec, segment: &Segment) -> f64 {
    t.payload_bits * segment.sensitivity_weight
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureOutcome {
    pub eavesdropper: NodeId,
    pub captured_source: NodeId,
    pub monitored: bool,
    pub leaked_bits: f64,
}

/// A transmission paired with what it would leak if captured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopExposure {
    pub transmission: TransmissionSpec,
    pub delta_bits: f64,
}

impl HopExposure {
    pub fn new(transmission: TransmissionSpec, segment: &Segment) -> Self {
        let delta_bits = delta(&transmission, segment);
        Self {
            transmission,
            delta_bits,
        }
    }
}

/// One fading realisation of `t` as seen by eavesdropper `e`.
///
/// Draw order: transmitter power, each deceiver in order, then the
/// monitoring coin. The transmitter is captured only if its received power
/// is positive and strictly above every decoy.
pub fn sample_capture<R: Rng + ?Sized>(
    t: &TransmissionSpec,
    e: usize,
    delta_bits: f64,
    scn: &Scenario,
    rng: &mut R,
) -> Result<CaptureOutcome> {
    let eve = NodeId::eavesdropper(e);
    let q = scn
        .eavesdroppers
        .get(e)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown eavesdropper {e}")))?
        .monitor_prob;
    let tx_rx = sample_rx_power(t.tx_power, t.tx, eve, scn, rng)?.rx_power;
    let mut strongest_decoy: Option<(f64, NodeId)> = None;
    for d in &t.deceivers {
        let draw = sample_rx_power(d.power, d.node, eve, scn, rng)?;
        if strongest_decoy.is_none_or(|(p, _)| draw.rx_power > p) {
            strongest_decoy = Some((draw.rx_power, d.node));
        }
    }
    let captured = tx_rx > 0.0 && strongest_decoy.is_none_or(|(p, _)| tx_rx > p);
    let captured_source = match strongest_decoy {
        Some((_, node)) if !captured => node,
        _ => t.tx,
    };
    let monitored = rng.random::<f64>() < q;
    let leaked_bits = if captured && monitored {
        delta_bits
    } else {
        0.0
    };
    Ok(CaptureOutcome {
        eavesdropper: eve,
        captured_source,
        monitored,
        leaked_bits,
    })
}

/// Probability that eavesdropper `e` locks onto the true transmitter.
pub fn capture_prob_closed(t: &TransmissionSpec, e: usize, scn: &Scenario) -> Result<f64> {
    let eve = NodeId::eavesdropper(e);
    let source = t.tx_power * mean_gain(t.tx, eve, scn)?;
    if source == 0.0 {
        return Ok(0.0);
    }
    let mut p = 1.0;
    for d in &t.deceivers {
        p *= source / (d.power * mean_gain(d.node, eve, scn)? + source);
    }
    Ok(p)
}

/// Probability that eavesdropper `e` locks onto the true transmitter under
/// the joint max-power rule of [`sample_capture`]. The received powers are
/// independent exponentials sharing the transmitter draw, so by
/// inclusion-exclusion `P = Σ_{S ⊆ D} (−1)^{|S|} / (1 + s₀·Σ_{d∈S} 1/s_d)`
/// with `s` the mean received powers. Equals [`capture_prob_closed`] for at
/// most one deceiver and exceeds it otherwise.
pub fn capture_prob_exact(t: &TransmissionSpec, e: usize, scn: &Scenario) -> Result<f64> {
    let eve = NodeId::eavesdropper(e);
    let source = t.tx_power * mean_gain(t.tx, eve, scn)?;
    if source == 0.0 {
        return Ok(0.0);
    }
    let mut inv = Vec::with_capacity(t.deceivers.len());
    for d in &t.deceivers {
        let mean = d.power * mean_gain(d.node, eve, scn)?;
        if mean > 0.0 {
            inv.push(1.0 / mean);
        }
    }
    if inv.len() > 20 {
        return Err(Error::InvalidArgument(format!(
            "{} deceivers is too many to enumerate",
            inv.len()
        )));
    }
    let terms = (0u32..1 << inv.len()).map(|subset| {
        let rate = fsum(
            (0..inv.len())
                .filter(|i| subset >> i & 1 == 1)
                .map(|i| inv[i]),
        );
        let sign = if subset.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        sign / (1.0 + source * rate)
    });
    Ok(fsum(terms).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub expected_bits: f64,
    pub per_eavesdropper: Vec<f64>,
    pub per_hop: Vec<f64>,
}

impl LeakageReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Expected bits leaked over all hops and eavesdroppers, using the
/// per-deceiver product [`capture_prob_closed`].
pub fn expected_leakage_closed(hops: &[HopExposure], scn: &Scenario) -> Result<LeakageReport> {
    leakage_with(hops, scn, capture_prob_closed)
}

/// Expected bits leaked under the joint max-power rule, using
/// [`capture_prob_exact`].
pub fn expected_leakage_exact(hops: &[HopExposure], scn: &Scenario) -> Result<LeakageReport> {
    leakage_with(hops, scn, capture_prob_exact)
}

fn leakage_with(
    hops: &[HopExposure],
    scn: &Scenario,
    capture: fn(&TransmissionSpec, usize, &Scenario) -> Result<f64>,
) -> Result<LeakageReport> {
    let e_count = scn.eavesdropper_count();
    let mut terms = vec![vec![0.0; e_count]; hops.len()];
    for (h, hop) in hops.iter().enumerate() {
        for (e, eve) in scn.eavesdroppers.iter().enumerate() {
            terms[h][e] = capture(&hop.transmission, e, scn)? * eve.monitor_prob * hop.delta_bits;
        }
    }
    let per_hop: Vec<f64> = terms.iter().map(|row| fsum(row.iter().copied())).collect();
    let per_eavesdropper = (0..e_count)
        .map(|e| fsum(terms.iter().map(|row| row[e])))
        .collect();
    Ok(LeakageReport {
        expected_bits: fsum(per_hop.iter().copied()),
        per_eavesdropper,
        per_hop,
    })
}

/// Sample mean of total leakage and its standard error (`None` for one sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
}

/// Monte Carlo estimate of the total leakage of `hops`, one fresh set of
/// fading and monitoring draws per sample.
pub fn mc_leakage_oracle(
    hops: &[HopExposure],
    scn: &Scenario,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n_samples {
        let mut total = 0.0;
        for hop in hops {
            for e in 0..scn.eavesdropper_count() {
                total += sample_capture(&hop.transmission, e, hop.delta_bits, scn, &mut rng)?
                    .leaked_bits;
            }
        }
        let d = total - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (total - mean);
    }
    let stderr = (n_samples > 1).then(|| (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt());
    Ok(McEstimate {
        mean,
        stderr,
        samples: n_samples,
    })
}
