//! Train the curiosity module on one repeated episode and report its losses
//! alongside the curiosity reward it assigns to that episode.

use decoysplit::env::{EnvConfig, SplitEnv};
use decoysplit::icm::{Icm, IcmBatch, IcmConfig};
use decoysplit::slmodel::{make_model, ModelProfile, REFERENCE_LAYERS};
use decoysplit::substream;
use decoysplit::topology::{gen_scenario, ScenarioDefaults};

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

    let mut rng = substream(0, 1);
    let mut transitions = Vec::new();
    let mut state = env.reset();
    loop {
        let mask = env.action_mask(&state)?;
        let action = mask.iter().position(|&m| m).expect("a valid action");
        let out = env.step(&state, action, &mut rng)?;
        transitions.push((
            env.encode_state(&state),
            action,
            env.encode_state(&out.next_state),
        ));
        state = out.next_state;
        if out.done {
            break;
        }
    }

    let mut icm = Icm::new(
        env.state_len(),
        env.action_count(),
        IcmConfig {
            lr_forward: 1e-3,
            ..IcmConfig::default()
        },
        &mut substream(0, 12),
    )?;
    for round in 0..=40 {
        let mut hidden = icm.initial_hidden(1);
        let (mut total, mut before) = (0.0, Vec::new());
        for (s, a, next) in &transitions {
            let c = icm.observe(s, *a, next, &mut hidden)?;
            total += c.reward;
            before.push(c.before);
        }
        let batch = IcmBatch {
            states: Icm::stack_rows(transitions.iter().map(|t| t.0.as_slice()))?,
            actions: transitions.iter().map(|t| t.1).collect(),
            next_states: Icm::stack_rows(transitions.iter().map(|t| t.2.as_slice()))?,
            forward_hidden: Icm::stack_rows(
                before.iter().map(|h| h.forward.as_slice().expect("row")),
            )?,
            inverse_hidden: Icm::stack_rows(
                before.iter().map(|h| h.inverse.as_slice().expect("row")),
            )?,
        };
        let losses = icm.update(&batch)?;
        if round % 10 == 0 {
            println!(
                "round {round}: curiosity {total:.5}, inverse loss {:.4}, forward loss {:.5}",
                losses.inverse, losses.forward
            );
        }
    }
    Ok(())
}
