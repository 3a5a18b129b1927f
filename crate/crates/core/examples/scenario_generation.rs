//! Generate a random deployment, round-trip it through TOML and print link gains.

use decoysplit::topology::{gen_scenario, mean_gain, NodeId, Scenario, ScenarioDefaults};

fn main() -> decoysplit::Result<()> {
    let scn = gen_scenario(7, 6, 2, 800.0, &ScenarioDefaults::default())?;
    let text = scn.to_toml()?;
    let back = Scenario::from_toml(&text)?;
    assert_eq!(back, scn);
    println!(
        "{} devices, {} eavesdroppers, diagonal {:.1} m",
        scn.device_count(),
        scn.eavesdropper_count(),
        scn.diagonal()
    );
    for u in 0..scn.device_count() {
        let dev = NodeId::device(u);
        println!(
            "{dev}: {:.1} m to server, mean gain {:.3e}, cpu {:.2} GHz",
            scn.distance(dev, NodeId::SERVER)?,
            mean_gain(dev, NodeId::SERVER, &scn)?,
            scn.compute_node(dev)?.cpu_hz / 1e9
        );
    }
    Ok(())
}
