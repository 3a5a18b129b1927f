//! Build a layered model and split it into contiguous segments.

use decoysplit::slmodel::{
    make_model, split_at, split_by_sizes, validate_plan, ModelProfile, ModelSpec,
};

fn main() -> decoysplit::Result<()> {
    let model = make_model(6, 4, &ModelProfile::reference(), 7)?;
    let plan = split_by_sizes(&model, &[1, 2, 1, 2])?;
    assert!(validate_plan(&plan, &model));
    for (i, seg) in plan.segments.iter().enumerate() {
        println!(
            "segment {}: layers {}..{}, {:.3e} param bits, {:.3e} activation bits out",
            i + 1,
            seg.start,
            seg.end,
            seg.param_bits,
            seg.out_bits
        );
    }
    let same = split_at(&model, &plan.cuts)?;
    assert_eq!(same, plan);
    let mlp = ModelSpec::from_dense_widths(&[16, 32, 32, 4], 8)?;
    println!(
        "dense model: {} layers\n{}",
        mlp.layer_count(),
        mlp.to_toml()?
    );
    Ok(())
}
