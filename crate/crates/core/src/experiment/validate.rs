//! Self-check suite run by `decoysplit validate`: closed forms against
//! sampling and brute force, gradients against finite differences, split
//! execution against the unsplit model, and action masks against the
//! environment's validity rules.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::commands::{leakage_agreement, LeakageFn, OracleRow, ORACLE_Z_LIMIT};
use crate::agent::policy::{ActorBatch, PolicyInput};
use crate::agent::{Actor, ActorConfig, Critic, Experience, HistoryWindow};
use crate::costmodel::RateModel;
use crate::eavesdrop::expected_leakage_closed;
use crate::env::SplitEnv;
use crate::error::Result;
use crate::icm::{Icm, IcmBatch, IcmConfig, IcmLoss, EXTRACTOR, FORWARD, INVERSE};
use crate::mhsl::{
    backward_chain, compute_loss, forward_chain, loss_grad, monolithic_oracle, random_layers,
    split_layers,
};
use crate::nn::{finite_difference_check, Mat, ParamStore};
use crate::powerstar::{
    cor1_powers, cor2_powers, grid_oracle, residuals, HopBudget, HopGeometry, PowerSolution,
};
use crate::topology::{gen_scenario, Scenario, ScenarioDefaults};
use crate::{substream, SimRng};

/// Closed-form power solver under test.
pub type PowerFn = fn(&HopGeometry, &Scenario, &HopBudget) -> Result<PowerSolution>;

/// The closed forms the suite checks; swapped out to test the suite itself.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForms {
    pub cor1: PowerFn,
    pub cor2: PowerFn,
    pub leakage: LeakageFn,
}

impl Default for ClosedForms {
    fn default() -> Self {
        Self {
            cor1: cor1_powers,
            cor2: cor2_powers,
            leakage: expected_leakage_closed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationOptions {
    pub seed: u64,
    pub leakage_cases: usize,
    pub mc_samples: usize,
    pub power_cases: usize,
    pub grid_resolution: usize,
    pub fd_params: usize,
    pub split_models: usize,
    pub mask_episodes: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            leakage_cases: 6,
            mc_samples: 20_000,
            power_cases: 5,
            grid_resolution: 300,
            fd_params: 20,
            split_models: 5,
            mask_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

const RESIDUAL_TOL: f64 = 1e-9;
const DOMINANCE_TOL: f64 = 1e-3;
const FD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const SPLIT_TOL: f64 = 1e-10;

fn check(name: &str, outcome: Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Run every check. `env` is used for the mask and reward-bound scan.
pub fn run_validation(
    env: &SplitEnv,
    opts: &ValidationOptions,
    forms: &ClosedForms,
) -> ValidationReport {
    let checks = vec![
        check(
            "leakage_single_deceiver_vs_monte_carlo",
            leakage_check(opts, forms, 1),
        ),
        check(
            "leakage_joint_rule_vs_monte_carlo",
            leakage_check(opts, forms, 3),
        ),
        check(
            "single_deceiver_powers_vs_grid",
            power_check(opts, forms.cor1, 1, RateModel::WithInterference),
        ),
        check(
            "single_deceiver_powers_without_energy",
            zero_energy_check(forms.cor1),
        ),
        check(
            "equal_odds_powers_vs_grid_symmetric",
            power_check(opts, forms.cor2, 2, RateModel::InterferenceFree),
        ),
        check("actor_gradients", actor_fd(opts, true)),
        check("actor_gradients_without_attention", actor_fd(opts, false)),
        check("critic_gradients", critic_fd(opts)),
        check("curiosity_gradients", icm_fd(opts)),
        check("split_invisibility", split_check(opts)),
        check("mask_soundness_and_reward_bounds", mask_check(env, opts)),
    ];
    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// With one deceiver per hop both closed forms must match sampling; with
/// more, only the joint max-power form is expected to.
fn leakage_check(
    opts: &ValidationOptions,
    forms: &ClosedForms,
    max_deceivers: usize,
) -> Result<(bool, String)> {
    let scn = gen_scenario(
        opts.seed.wrapping_add(17),
        5,
        2,
        500.0,
        &ScenarioDefaults::default(),
    )?;
    let levels = [0.05, 0.1, 0.2, 0.4];
    let rows = leakage_agreement(
        &scn,
        &levels,
        max_deceivers,
        opts.leakage_cases,
        opts.mc_samples,
        opts.seed,
        forms.leakage,
    )?;
    let z = |r: &OracleRow| {
        if max_deceivers <= 1 {
            r.z_closed.max(r.z_exact)
        } else {
            r.z_exact
        }
    };
    let worst = rows.iter().map(z).fold(0.0, f64::max);
    Ok((
        worst <= ORACLE_Z_LIMIT,
        format!(
            "{} cases, worst |z| = {worst:.3} (limit {ORACLE_Z_LIMIT})",
            rows.len()
        ),
    ))
}

/// Random geometry and a budget leaving `headroom` × the minimum power.
fn power_case(
    rng: &mut SimRng,
    scn: &Scenario,
    deceivers: usize,
    symmetric: bool,
) -> (HopGeometry, HopBudget) {
    let mut d = || rng.random_range(30.0..400.0);
    let (link, source_to_eve) = (d(), d());
    let (to_rx, to_eve): (Vec<f64>, Vec<f64>) = if symmetric {
        let (a, b) = (d(), d());
        (vec![a; deceivers], vec![b; deceivers])
    } else {
        (0..deceivers).map(|_| (d(), d())).unzip()
    };
    let geom = HopGeometry {
        link,
        deceiver_to_rx: to_rx,
        source_to_eve,
        deceiver_to_eve: to_eve,
    };
    let time_budget = rng.random_range(0.5..2.0);
    let payload_bits = rng.random_range(1e5..1e6);
    let probe = HopBudget {
        time_budget,
        energy_budget: 1.0,
        payload_bits,
    };
    let floor = scn.noise_power() * probe.required_snr(scn) * link * link / scn.rayleigh_o;
    let headroom = rng.random_range(2.0..6.0);
    (
        geom,
        HopBudget {
            energy_budget: floor * headroom * time_budget,
            ..probe
        },
    )
}

fn power_check(
    opts: &ValidationOptions,
    solve: PowerFn,
    deceivers: usize,
    model: RateModel,
) -> Result<(bool, String)> {
    let scn =
        gen_scenario(opts.seed, 4, 1, 500.0, &ScenarioDefaults::default())?.with_monitor_prob(1.0);
    let mut rng = substream(opts.seed, 30 + deceivers as u64);
    let (mut ok, mut worst_res, mut worst_gap, mut tested) = (true, 0.0_f64, f64::NEG_INFINITY, 0);
    while tested < opts.power_cases {
        let (geom, budget) = power_case(&mut rng, &scn, deceivers, deceivers > 1);
        let sol = solve(&geom, &scn, &budget)?;
        if !sol.feasible {
            continue;
        }
        tested += 1;
        let (rt, re) = residuals(&geom, &scn, &budget, &sol, model)?;
        let grid = grid_oracle(&geom, &scn, &budget, opts.grid_resolution, model)?;
        let gap = (sol.objective - grid.objective) / grid.objective.abs().max(f64::MIN_POSITIVE);
        worst_res = worst_res.max(rt.abs()).max(re.abs());
        worst_gap = worst_gap.max(gap);
        ok &= rt.abs() <= RESIDUAL_TOL && re.abs() <= RESIDUAL_TOL && gap <= DOMINANCE_TOL;
    }
    Ok((ok, format!("{tested} cases, worst residual {worst_res:.2e}, worst relative gap to grid {worst_gap:.2e}")))
}

fn zero_energy_check(solve: PowerFn) -> Result<(bool, String)> {
    let scn = gen_scenario(1, 4, 1, 500.0, &ScenarioDefaults::default())?;
    let geom = HopGeometry {
        link: 100.0,
        deceiver_to_rx: vec![150.0],
        source_to_eve: 200.0,
        deceiver_to_eve: vec![120.0],
    };
    let sol = solve(
        &geom,
        &scn,
        &HopBudget {
            time_budget: 1.0,
            energy_budget: 0.0,
            payload_bits: 1e5,
        },
    )?;
    let ok = !sol.feasible || sol.p_deceivers.iter().all(|&p| !(p > 0.0));
    Ok((
        ok,
        format!(
            "zero energy budget gives feasible = {}, p_d = {:?}",
            sol.feasible, sol.p_deceivers
        ),
    ))
}

fn random_experience(
    rng: &mut SimRng,
    d: usize,
    fa: usize,
    a: usize,
    history: usize,
) -> Experience {
    let mut window = HistoryWindow::empty(history, d + fa);
    for _ in 0..rng.random_range(1..=history) {
        let row: Vec<f64> = (0..d + fa).map(|_| rng.random::<f64>()).collect();
        window.push(&row);
    }
    let mut mask: Vec<bool> = (0..a).map(|_| rng.random_bool(0.6)).collect();
    mask[rng.random_range(0..a)] = true;
    Experience {
        state: (0..d).map(|_| rng.random::<f64>()).collect(),
        action: 0,
        reward: rng.random::<f64>() - 0.5,
        next_state: (0..d).map(|_| rng.random::<f64>()).collect(),
        done: false,
        history: window,
        mask,
        icm_hidden: None,
    }
}

fn actor_fd(opts: &ValidationOptions, use_attention: bool) -> Result<(bool, String)> {
    let mut rng = substream(opts.seed, 40);
    let (d, fa, a) = (6, 3, 10);
    let actor = Actor::new(
        d,
        fa,
        a,
        ActorConfig {
            hidden: 8,
            attention_width: 5,
            use_attention,
        },
        &mut rng,
    )?;
    let exps: Vec<Experience> = (0..4)
        .map(|_| random_experience(&mut rng, d, fa, a, 3))
        .collect();
    let refs: Vec<&Experience> = exps.iter().collect();
    let actions = exps
        .iter()
        .map(|e| e.mask.iter().position(|&m| m).expect("one valid action"))
        .collect();
    let batch = ActorBatch {
        input: PolicyInput::batch(&refs)?,
        actions,
        advantages: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        entropy_weight: 0.05,
    };
    let mut store = actor.store.clone();
    let loss = |s: &ParamStore| actor.loss_tape(s, &batch);
    let r = finite_difference_check(
        &mut store,
        &loss,
        &|_| true,
        opts.fd_params,
        FD_STEP,
        &mut rng,
    )?;
    Ok((
        r.max_rel_err <= FD_TOL,
        format!("{} params, max rel err {:.2e}", r.checked, r.max_rel_err),
    ))
}

fn critic_fd(opts: &ValidationOptions) -> Result<(bool, String)> {
    let mut rng = substream(opts.seed, 41);
    let critic = Critic::new(6, 8, &mut rng)?;
    let states = Mat::from_shape_fn((5, 6), |_| rng.random::<f64>());
    let targets: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut store = critic.store.clone();
    let loss = |s: &ParamStore| critic.loss_tape(s, &states, &targets);
    let r = finite_difference_check(
        &mut store,
        &loss,
        &|_| true,
        opts.fd_params,
        FD_STEP,
        &mut rng,
    )?;
    Ok((
        r.max_rel_err <= FD_TOL,
        format!("{} params, max rel err {:.2e}", r.checked, r.max_rel_err),
    ))
}

fn icm_fd(opts: &ValidationOptions) -> Result<(bool, String)> {
    let mut rng = substream(opts.seed, 42);
    let cfg = IcmConfig {
        feature_dim: 5,
        hidden: 8,
        recurrent: 4,
        action_embed: 3,
        ..IcmConfig::default()
    };
    let icm = Icm::new(6, 7, cfg, &mut rng)?;
    let b = 4;
    let mut m = |r: usize, c: usize| Mat::from_shape_fn((r, c), |_| rng.random::<f64>() - 0.5);
    let batch = IcmBatch {
        states: m(b, 6),
        next_states: m(b, 6),
        forward_hidden: m(b, 4),
        inverse_hidden: m(b, 4),
        actions: (0..b).map(|i| (i * 3) % 7).collect(),
    };
    let mut worst = 0.0_f64;
    let mut detail = Vec::new();
    for (which, group, label) in [
        (IcmLoss::Inverse, INVERSE, "inverse"),
        (IcmLoss::Forward, FORWARD, "forward"),
        (IcmLoss::Extractor, EXTRACTOR, "extractor"),
    ] {
        let mut store = icm.store.clone();
        let loss = |s: &ParamStore| icm.loss_tape(s, &batch, which);
        let r = finite_difference_check(
            &mut store,
            &loss,
            &|g| g == group,
            opts.fd_params,
            FD_STEP,
            &mut rng,
        )?;
        worst = worst.max(r.max_rel_err);
        detail.push(format!("{label} {:.2e}", r.max_rel_err));
    }
    Ok((
        worst <= FD_TOL,
        format!("max rel err: {}", detail.join(", ")),
    ))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn split_check(opts: &ValidationOptions) -> Result<(bool, String)> {
    let mut rng = substream(opts.seed, 50);
    let mut worst = 0.0_f64;
    for _ in 0..opts.split_models {
        let depth = rng.random_range(3..=6);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=6)).collect();
        let layers = random_layers(&widths, rng.random());
        let segs = rng.random_range(2..=depth);
        let mut cuts: Vec<usize> = rand::seq::index::sample(&mut rng, depth - 1, segs - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        let segments = split_layers(&layers, &cuts)?;
        let rows = rng.random_range(1..=4);
        let batch = Array2::from_shape_fn((rows, widths[0]), |_| rng.random_range(-1.0..1.0));
        let labels = Array2::from_shape_fn((rows, widths[depth]), |_| rng.random_range(-1.0..1.0));
        let (msgs, cache) = forward_chain(&segments, &batch)?;
        let out = &msgs.last().expect("at least one segment").values;
        let loss = compute_loss(out, &labels)?;
        let grads = backward_chain(&segments, &cache, &loss_grad(out, &labels)?)?;
        let (ref_loss, ref_grads) = monolithic_oracle(&layers, &batch, &labels)?;
        worst = worst.max(rel_err(loss, ref_loss));
        for (g, r) in grads.iter().flat_map(|s| &s.layers).zip(&ref_grads) {
            for (x, y) in g
                .weight
                .iter()
                .zip(&r.weight)
                .chain(g.bias.iter().zip(&r.bias))
            {
                if x.abs().max(y.abs()) > 1e-12 {
                    worst = worst.max(rel_err(*x, *y));
                }
            }
        }
    }
    Ok((
        worst <= SPLIT_TOL,
        format!("{} models, max rel err {worst:.2e}", opts.split_models),
    ))
}

fn mask_check(env: &SplitEnv, opts: &ValidationOptions) -> Result<(bool, String)> {
    let mut rng = SimRng::seed_from_u64(opts.seed);
    let (lo, hi) = env.reward_bounds();
    let (mut invalid, mut out_of_bounds, mut steps) = (0usize, 0usize, 0usize);
    for _ in 0..opts.mask_episodes {
        let mut state = env.reset();
        loop {
            let mask = env.action_mask(&state)?;
            let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let action = valid[rng.random_range(0..valid.len())];
            if !env.is_valid(&state, &env.space.decode(action)?) {
                invalid += 1;
            }
            let o = env.step(&state, action, &mut rng)?;
            steps += 1;
            if !(lo..=hi).contains(&o.extrinsic_reward) {
                out_of_bounds += 1;
            }
            state = o.next_state;
            if o.done {
                break;
            }
        }
    }
    Ok((
        invalid == 0 && out_of_bounds == 0,
        format!("{steps} steps, {invalid} invalid actions, {out_of_bounds} rewards outside [{lo:.4}, {hi}]"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::slmodel::{make_model, ModelProfile};

    fn small_env() -> SplitEnv {
        let scn = gen_scenario(3, 4, 1, 500.0, &ScenarioDefaults::default()).unwrap();
        let model = make_model(4, 3, &ModelProfile::reference(), 3).unwrap();
        SplitEnv::new(
            scn,
            model,
            EnvConfig {
                segments: 3,
                ..EnvConfig::default()
            },
        )
        .unwrap()
    }

    fn quick() -> ValidationOptions {
        ValidationOptions {
            mc_samples: 5_000,
            leakage_cases: 3,
            power_cases: 3,
            grid_resolution: 150,
            mask_episodes: 20,
            ..Default::default()
        }
    }

    #[test]
    fn suite_passes_on_the_real_closed_forms() {
        let report = run_validation(&small_env(), &quick(), &ClosedForms::default());
        assert!(
            report.passed,
            "{:#?}",
            report.failures().collect::<Vec<_>>()
        );
        assert_eq!(report.checks.len(), 11);
    }

    fn corrupted_cor1(g: &HopGeometry, s: &Scenario, b: &HopBudget) -> Result<PowerSolution> {
        let mut sol = cor1_powers(g, s, b)?;
        sol.p_tx *= 1.01;
        Ok(sol)
    }

    #[test]
    fn corrupted_closed_form_is_named() {
        let forms = ClosedForms {
            cor1: corrupted_cor1,
            ..ClosedForms::default()
        };
        let report = run_validation(&small_env(), &quick(), &forms);
        assert!(!report.passed);
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["single_deceiver_powers_vs_grid"]);
    }
}
