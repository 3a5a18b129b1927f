//! Expected leakage in closed form against a Monte Carlo estimate.

use decoysplit::costmodel::TransmissionSpec;
use decoysplit::eavesdrop::{
    expected_leakage_closed, expected_leakage_exact, mc_leakage_oracle, HopExposure,
};
use decoysplit::slmodel::{make_model, ModelProfile, Segment};
use decoysplit::topology::{gen_scenario, NodeId, ScenarioDefaults};

fn main() -> decoysplit::Result<()> {
    let scn = gen_scenario(11, 6, 2, 800.0, &ScenarioDefaults::default())?;
    let model = make_model(6, 3, &ModelProfile::reference(), 11)?;
    let seg = Segment::new(&model, 0, 2)?;
    let hops = [
        HopExposure::new(
            TransmissionSpec::new(NodeId::device(0), NodeId::device(1), seg.out_bits, 0.2),
            &seg,
        ),
        HopExposure::new(
            TransmissionSpec::new(NodeId::device(1), NodeId::SERVER, seg.out_bits, 0.2)
                .with_deceiver(NodeId::device(4), 0.4),
            &seg,
        ),
        HopExposure::new(
            TransmissionSpec::new(NodeId::device(2), NodeId::SERVER, seg.out_bits, 0.1)
                .with_deceiver(NodeId::device(4), 0.2)
                .with_deceiver(NodeId::device(5), 0.2),
            &seg,
        ),
    ];
    let closed = expected_leakage_closed(&hops, &scn)?;
    let exact = expected_leakage_exact(&hops, &scn)?;
    let mc = mc_leakage_oracle(&hops, &scn, 100_000, 1)?;
    let se = mc.stderr.unwrap_or(0.0);
    println!(
        "closed form {:.1} bits, z = {:.2}",
        closed.expected_bits,
        (closed.expected_bits - mc.mean) / se
    );
    println!(
        "joint rule  {:.1} bits, z = {:.2}",
        exact.expected_bits,
        (exact.expected_bits - mc.mean) / se
    );
    println!("monte carlo {:.1} ± {:.1} bits", mc.mean, se);
    println!("{}", exact.to_json()?);
    Ok(())
}
