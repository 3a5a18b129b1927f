//! Time and energy ledger of one split-learning iteration over a fixed chain.

use decoysplit::costmodel::{data_rate, episode_totals, TransmissionSpec};
use decoysplit::slmodel::{make_model, split_by_sizes, ModelProfile};
use decoysplit::topology::{gen_scenario, NodeId, ScenarioDefaults};

fn main() -> decoysplit::Result<()> {
    let scn = gen_scenario(7, 6, 2, 800.0, &ScenarioDefaults::default())?;
    let model = make_model(6, 3, &ModelProfile::reference(), 7)?;
    let plan = split_by_sizes(&model, &[2, 2, 2])?;
    let chain = [NodeId::device(0), NodeId::device(3), NodeId::SERVER];
    let decoy = NodeId::device(5);
    let mut hops = Vec::new();
    for k in 0..2 {
        let bits = plan.segments[k].out_bits;
        hops.push(
            TransmissionSpec::new(chain[k], chain[k + 1], bits, 0.2).with_deceiver(decoy, 0.1),
        );
    }
    for k in 0..2 {
        let bits = plan.segments[2 - k].grad_in_bits;
        hops.push(TransmissionSpec::new(chain[2 - k], chain[1 - k], bits, 0.2));
    }
    for t in &hops {
        println!("{} -> {}: {:.3e} bit/s", t.tx, t.rx, data_rate(t, &scn)?);
    }
    let ledger = episode_totals(&plan, &chain, &hops, &scn)?;
    println!(
        "time {:.4} s, energy {:.4} J",
        ledger.time_spent, ledger.energy_spent
    );
    println!("{}", ledger.to_json()?);
    Ok(())
}
