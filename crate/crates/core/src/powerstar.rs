//! Optimal transmit and decoy powers for a single hop watched by one
//! eavesdropper.
//!
//! With `x = 2^{Γ/(B_T·B)} − 1` the airtime constraint reads
//! `p_tx·g_link ≥ x·(Σ p_d·g_{d,rx} + B·N0)` and the energy constraint
//! `(p_tx + Σ p_d)·B_T ≤ B_E`. Leakage grows with `p_tx` and shrinks with every
//! `p_d`, so both constraints bind at the optimum.

use serde::{Deserialize, Serialize};

use crate::costmodel::{shannon_rate, RateModel};
use crate::error::{Error, Result};
use crate::topology::{gain_at, NodeId, Scenario};

/// Distances (metres) that determine a hop's power trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopGeometry {
    /// Transmitter to legitimate receiver.
    pub link: f64,
    /// Each deceiver to the legitimate receiver.
    pub deceiver_to_rx: Vec<f64>,
    /// Transmitter to the eavesdropper.
    pub source_to_eve: f64,
    /// Each deceiver to the eavesdropper.
    pub deceiver_to_eve: Vec<f64>,
}

impl HopGeometry {
    /// Geometry of `tx → rx` with decoys at `deceivers`, watched by eavesdropper `e`.
    pub fn from_scenario(
        scn: &Scenario,
        tx: NodeId,
        rx: NodeId,
        deceivers: &[NodeId],
        e: usize,
    ) -> Result<Self> {
        let eve = NodeId::eavesdropper(e);
        Ok(Self {
            link: scn.distance(tx, rx)?,
            deceiver_to_rx: deceivers
                .iter()
                .map(|&d| scn.distance(d, rx))
                .collect::<Result<_>>()?,
            source_to_eve: scn.distance(tx, eve)?,
            deceiver_to_eve: deceivers
                .iter()
                .map(|&d| scn.distance(d, eve))
                .collect::<Result<_>>()?,
        })
    }

    pub fn deceiver_count(&self) -> usize {
        self.deceiver_to_eve.len()
    }

    fn check(&self) -> Result<()> {
        if self.deceiver_to_rx.len() != self.deceiver_to_eve.len() {
            return Err(Error::InvalidArgument(
                "deceiver distance lists differ in length".into(),
            ));
        }
        for &m in [self.link, self.source_to_eve]
            .iter()
            .chain(&self.deceiver_to_rx)
            .chain(&self.deceiver_to_eve)
        {
            gain_at(m, 1.0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopBudget {
    pub time_budget: f64,
    pub energy_budget: f64,
    pub payload_bits: f64,
}

impl HopBudget {
    fn check(&self) -> Result<()> {
        if !(self.time_budget > 0.0) || !(self.energy_budget >= 0.0) || !(self.payload_bits >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("{self:?}")));
        }
        Ok(())
    }

    /// Power cap implied by the energy budget.
    pub fn power_cap(&self) -> f64 {
        self.energy_budget / self.time_budget
    }

    /// SNR needed to move the payload within the time budget.
    pub fn required_snr(&self, scn: &Scenario) -> f64 {
        (self.payload_bits / (self.time_budget * scn.bandwidth_hz)).exp2() - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub p_tx: f64,
    pub p_deceivers: Vec<f64>,
    pub feasible: bool,
    /// Expected leaked bits for an always-listening eavesdropper.
    pub objective: f64,
}

/// Probability that the eavesdropper picks the transmitter.
pub fn capture_probability(
    geom: &HopGeometry,
    scn: &Scenario,
    p_tx: f64,
    p_d: &[f64],
) -> Result<f64> {
    let source = p_tx * gain_at(geom.source_to_eve, scn.rayleigh_o)?;
    if source == 0.0 {
        return Ok(0.0);
    }
    let mut p = 1.0;
    for (&m, &pd) in geom.deceiver_to_eve.iter().zip(p_d) {
        p *= source / (pd * gain_at(m, scn.rayleigh_o)? + source);
    }
    Ok(p)
}

/// Hop airtime at the given powers.
pub fn hop_time(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
    p_tx: f64,
    p_d: &[f64],
    model: RateModel,
) -> Result<f64> {
    let signal = p_tx * gain_at(geom.link, scn.rayleigh_o)?;
    let mut noise = scn.noise_power();
    if model == RateModel::WithInterference {
        for (&m, &pd) in geom.deceiver_to_rx.iter().zip(p_d) {
            noise += pd * gain_at(m, scn.rayleigh_o)?;
        }
    }
    crate::costmodel::tx_time(
        budget.payload_bits,
        shannon_rate(scn.bandwidth_hz, signal, noise),
    )
}

/// Relative constraint residuals `(time/B_T − 1, energy/B_E − 1)`; both ≤ 0 when satisfied.
pub fn residuals(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
    sol: &PowerSolution,
    model: RateModel,
) -> Result<(f64, f64)> {
    let t = hop_time(geom, scn, budget, sol.p_tx, &sol.p_deceivers, model)?;
    let energy = (sol.p_tx + sol.p_deceivers.iter().sum::<f64>()) * budget.time_budget;
    Ok((
        t / budget.time_budget - 1.0,
        energy / budget.energy_budget - 1.0,
    ))
}

fn solution(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
    p_tx: f64,
    p_d: Vec<f64>,
    feasible: bool,
) -> Result<PowerSolution> {
    let objective = if feasible {
        capture_probability(geom, scn, p_tx, &p_d)? * budget.payload_bits
    } else {
        f64::INFINITY
    };
    Ok(PowerSolution {
        p_tx,
        p_deceivers: p_d,
        feasible,
        objective,
    })
}

/// Strict sign test for a positive decoy power:
/// `g_link·B_E/B_T − B·N0·x > 0`.
pub fn feasibility(budget: &HopBudget, geom: &HopGeometry, scn: &Scenario) -> Result<bool> {
    budget.check()?;
    geom.check()?;
    let g = gain_at(geom.link, scn.rayleigh_o)?;
    Ok(g * budget.power_cap() - scn.noise_power() * budget.required_snr(scn) > 0.0)
}

/// Closed-form optimum for exactly one deceiver whose signal interferes at
/// the receiver.
pub fn cor1_powers(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
) -> Result<PowerSolution> {
    budget.check()?;
    geom.check()?;
    if geom.deceiver_count() != 1 {
        return Err(Error::InvalidArgument(format!(
            "need one deceiver, got {}",
            geom.deceiver_count()
        )));
    }
    let x = budget.required_snr(scn);
    let xi0 = gain_at(geom.link, scn.rayleigh_o)?;
    let xid = gain_at(geom.deceiver_to_rx[0], scn.rayleigh_o)? * x;
    let chi1 = scn.noise_power() * x;
    let chi2 = budget.power_cap();
    let p_tx = (chi1 + xid * chi2) / (xi0 + xid);
    let p_d = (xi0 * chi2 - chi1) / (xi0 + xid);
    solution(geom, scn, budget, p_tx, vec![p_d], p_d > 0.0)
}

/// Closed form for several deceivers when decoy interference at the receiver
/// is ignored: the transmitter uses the least power meeting the deadline and
/// the remaining budget is split so every decoy presents equal odds to the
/// eavesdropper (`p_d ∝ m_{d,e}²`).
pub fn cor2_powers(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
) -> Result<PowerSolution> {
    let (p_tx, spare) = interference_free_floor(geom, scn, budget)?;
    let weights: Vec<f64> = geom.deceiver_to_eve.iter().map(|m| m * m).collect();
    let total: f64 = weights.iter().sum();
    let p_d = weights.iter().map(|w| spare * w / total).collect();
    solution(geom, scn, budget, p_tx, p_d, spare > 0.0)
}

/// Exact optimum of the same problem as [`cor2_powers`]: the decoy split that
/// minimises the capture probability is a water-filling allocation.
pub fn waterfill_powers(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
) -> Result<PowerSolution> {
    let (p_tx, spare) = interference_free_floor(geom, scn, budget)?;
    if !(spare > 0.0) {
        return solution(
            geom,
            scn,
            budget,
            p_tx,
            vec![0.0; geom.deceiver_count()],
            false,
        );
    }
    // maximise Σ ln(1 + p_d/c_d) with c_d = p_tx·g_s/g_d  ⇒  p_d = max(0, μ − c_d)
    let gs = gain_at(geom.source_to_eve, scn.rayleigh_o)?;
    let floors: Vec<f64> = geom
        .deceiver_to_eve
        .iter()
        .map(|&m| Ok(p_tx * gs / gain_at(m, scn.rayleigh_o)?))
        .collect::<Result<_>>()?;
    let mut sorted = floors.clone();
    sorted.sort_by(f64::total_cmp);
    let mut level = 0.0;
    for k in (1..=sorted.len()).rev() {
        let mu = (spare + sorted[..k].iter().sum::<f64>()) / k as f64;
        if mu > sorted[k - 1] {
            level = mu;
            break;
        }
    }
    let p_d = floors.iter().map(|c| (level - c).max(0.0)).collect();
    solution(geom, scn, budget, p_tx, p_d, true)
}

fn interference_free_floor(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
) -> Result<(f64, f64)> {
    budget.check()?;
    geom.check()?;
    if geom.deceiver_count() == 0 {
        return Err(Error::InvalidArgument("need at least one deceiver".into()));
    }
    let xi0 = gain_at(geom.link, scn.rayleigh_o)?;
    let p_tx = scn.noise_power() * budget.required_snr(scn) / xi0;
    Ok((p_tx, budget.power_cap() - p_tx))
}

/// Brute-force search for the leakage-minimising feasible powers.
///
/// With one deceiver the full `[0, cap]²` box is scanned at `resolution`
/// points per axis. With more deceivers the transmit power is scanned over
/// `[0, cap]` and, since leakage falls in every decoy power, decoys are
/// spread over the energy-binding face `Σ p_d = cap − p_tx` on a simplex
/// lattice with `resolution − 1` divisions. Ties go to the lowest total power.
pub fn grid_oracle(
    geom: &HopGeometry,
    scn: &Scenario,
    budget: &HopBudget,
    resolution: usize,
    model: RateModel,
) -> Result<PowerSolution> {
    budget.check()?;
    geom.check()?;
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {resolution}"
        )));
    }
    let d = geom.deceiver_count();
    let cap = budget.power_cap();
    let step = cap / (resolution - 1) as f64;
    let g_link = gain_at(geom.link, scn.rayleigh_o)?;
    let g_src = gain_at(geom.source_to_eve, scn.rayleigh_o)?;
    let g_rx: Vec<f64> = geom
        .deceiver_to_rx
        .iter()
        .map(|&m| gain_at(m, scn.rayleigh_o))
        .collect::<Result<_>>()?;
    let g_eve: Vec<f64> = geom
        .deceiver_to_eve
        .iter()
        .map(|&m| gain_at(m, scn.rayleigh_o))
        .collect::<Result<_>>()?;
    let x = budget.required_snr(scn);
    let noise = scn.noise_power();

    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
    let mut consider = |p_tx: f64, p_d: &[f64]| {
        let total = p_tx + p_d.iter().sum::<f64>();
        if total * budget.time_budget > budget.energy_budget {
            return;
        }
        let interference: f64 = match model {
            RateModel::WithInterference => g_rx.iter().zip(p_d).map(|(g, p)| g * p).sum(),
            RateModel::InterferenceFree => 0.0,
        };
        let on_time = if budget.payload_bits == 0.0 {
            true
        } else {
            p_tx * g_link >= x * (interference + noise) && p_tx > 0.0
        };
        if !on_time {
            return;
        }
        let source = p_tx * g_src;
        let prob: f64 = g_eve
            .iter()
            .zip(p_d)
            .map(|(g, p)| source / (p * g + source))
            .product();
        let better = match &best {
            None => true,
            Some((bp, bt, _, _)) => prob < *bp || (prob == *bp && total < *bt),
        };
        if better {
            best = Some((prob, total, p_tx, p_d.to_vec()));
        }
    };

    let mut p_d = vec![0.0; d];
    for i in 0..resolution {
        let p_tx = i as f64 * step;
        if d <= 1 {
            for j in 0..resolution {
                if d == 1 {
                    p_d[0] = j as f64 * step;
                }
                consider(p_tx, &p_d);
                if d == 0 {
                    break;
                }
            }
        } else {
            let spare = cap - p_tx;
            let divisions = resolution - 1;
            let mut parts = vec![0usize; d];
            simplex_lattice(&mut parts, 0, divisions, &mut |parts| {
                for (pd, &k) in p_d.iter_mut().zip(parts) {
                    *pd = spare * k as f64 / divisions as f64;
                }
                consider(p_tx, &p_d);
            });
        }
    }
    match best {
        Some((_, _, p_tx, p_d)) => solution(geom, scn, budget, p_tx, p_d, true),
        None => Ok(PowerSolution {
            p_tx: 0.0,
            p_deceivers: vec![0.0; d],
            feasible: false,
            objective: f64::INFINITY,
        }),
    }
}

/// Visit every way of writing `left` as an ordered sum over `parts[at..]`.
fn simplex_lattice(parts: &mut [usize], at: usize, left: usize, visit: &mut dyn FnMut(&[usize])) {
    if at + 1 == parts.len() {
        parts[at] = left;
        visit(parts);
        return;
    }
    for k in 0..=left {
        parts[at] = k;
        simplex_lattice(parts, at + 1, left - k, visit);
    }
}
