//! One random-policy episode of the scheduling environment with a JSONL trace.

use decoysplit::env::trace::{TraceRecord, TraceWriter};
use decoysplit::env::{state_hash, EnvConfig, SplitEnv};
use decoysplit::slmodel::{make_model, ModelProfile, REFERENCE_LAYERS};
use decoysplit::substream;
use decoysplit::topology::{gen_scenario, ScenarioDefaults};
use rand::Rng;

fn main() -> decoysplit::Result<()> {
    let cfg = EnvConfig::default();
    let scn = gen_scenario(7, 6, 2, 800.0, &ScenarioDefaults::default())?;
    let model = make_model(
        REFERENCE_LAYERS,
        cfg.segments,
        &ModelProfile::reference(),
        7,
    )?;
    let env = SplitEnv::new(scn, model, cfg)?;
    println!(
        "{} actions, {} steps per episode, reward bounds {:?}",
        env.action_count(),
        env.episode_len(),
        env.reward_bounds()
    );
    let mut rng = substream(0, 1);
    let mut trace = TraceWriter::new(std::io::stdout().lock());
    let mut state = env.reset();
    loop {
        let mask = env.action_mask(&state)?;
        let valid: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
        let action = valid[rng.random_range(0..valid.len())];
        let view = env.describe(&state, action)?;
        eprintln!(
            "step {}: {:?} -> {:?}, {} layers, decoys {:?}",
            view.step, view.transmitter, view.receiver, view.segment_layers, view.deceivers
        );
        let hash = state_hash(&env.encode_state(&state));
        let out = env.step(&state, action, &mut rng)?;
        trace.write(&TraceRecord {
            episode: 0,
            step: state.step,
            state_hash: hash,
            action,
            reward: out.extrinsic_reward,
            leakage_bits: out.leakage_bits,
            time_spent: out.next_state.spent.time_spent,
            energy_spent: out.next_state.spent.energy_spent,
        })?;
        state = out.next_state;
        if out.done {
            break;
        }
    }
    trace.flush()?;
    Ok(())
}
