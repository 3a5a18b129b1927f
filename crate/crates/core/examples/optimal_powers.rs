//! Closed-form transmit and decoy powers compared with a brute-force grid.

use decoysplit::costmodel::RateModel;
use decoysplit::powerstar::{
    cor1_powers, cor2_powers, grid_oracle, residuals, waterfill_powers, HopBudget, HopGeometry,
};
use decoysplit::topology::{gen_scenario, NodeId, ScenarioDefaults};

fn main() -> decoysplit::Result<()> {
    let scn = gen_scenario(3, 6, 1, 800.0, &ScenarioDefaults::default())?;
    let budget = HopBudget {
        time_budget: 1.0,
        energy_budget: 1.0,
        payload_bits: 4e5,
    };
    let one = HopGeometry::from_scenario(
        &scn,
        NodeId::device(0),
        NodeId::SERVER,
        &[NodeId::device(2)],
        0,
    )?;
    let cor1 = cor1_powers(&one, &scn, &budget)?;
    let grid = grid_oracle(&one, &scn, &budget, 1000, RateModel::WithInterference)?;
    println!("single decoy: {cor1:?}");
    println!("grid optimum: {grid:?}");
    if cor1.feasible {
        println!(
            "residuals: {:?}",
            residuals(&one, &scn, &budget, &cor1, RateModel::WithInterference)?
        );
    }
    let two = HopGeometry::from_scenario(
        &scn,
        NodeId::device(0),
        NodeId::SERVER,
        &[NodeId::device(2), NodeId::device(4)],
        0,
    )?;
    println!("equal decoys: {:?}", cor2_powers(&two, &scn, &budget)?);
    println!("water-filled: {:?}", waterfill_powers(&two, &scn, &budget)?);
    Ok(())
}
