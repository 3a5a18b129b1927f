//! Train the curiosity-driven attention actor-critic, compare it with tabular
//! Q-learning and evaluate the greedy policy.
//!
//! Usage: `train_agent [episodes]` (default 30).

use decoysplit::agent::{evaluate, q_baseline_train, train, QConfig, TrainConfig};
use decoysplit::env::{EnvConfig, SplitEnv};
use decoysplit::slmodel::{make_model, ModelProfile, REFERENCE_LAYERS};
use decoysplit::topology::{gen_scenario, ScenarioDefaults};

fn main() -> decoysplit::Result<()> {
    let episodes = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(30);
    let cfg = EnvConfig::default();
    let scn = gen_scenario(7, 6, 2, 800.0, &ScenarioDefaults::default())?;
    let model = make_model(
        REFERENCE_LAYERS,
        cfg.segments,
        &ModelProfile::reference(),
        7,
    )?;
    let env = SplitEnv::new(scn, model, cfg)?;

    let result = train(
        &env,
        &TrainConfig {
            episodes,
            ..TrainConfig::default()
        },
        None,
        None,
    )?;
    for m in result.metrics.iter().step_by(10) {
        println!(
            "episode {:>3}: reward {:.4}, with curiosity {:.4}, leakage {:.3e} bits, {} states seen",
            m.episode, m.reward, m.total_reward, m.leakage_bits, m.distinct_states
        );
    }
    let q = q_baseline_train(
        &env,
        &QConfig {
            episodes,
            ..QConfig::default()
        },
        None,
    )?;
    let last = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let tail = episodes.min(10);
    let q_tail: Vec<f64> = q.metrics[episodes - tail..]
        .iter()
        .map(|m| m.leakage_bits)
        .collect();
    println!(
        "Q-learning: final leakage {:.3e} bits over {} table states",
        last(&q_tail),
        q.table.states()
    );

    let eval = evaluate(&result.agent, &env, 5, 20)?;
    for (reward, leakage) in eval {
        println!("greedy episode: reward {reward:.4}, leakage {leakage:.3e} bits");
    }
    Ok(())
}
