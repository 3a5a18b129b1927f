//! Train a dense network split across three trainers and confirm the split is
//! invisible: loss and gradients match the unsplit network.

use decoysplit::mhsl::{
    backward_chain, compute_loss, forward_chain, loss_grad, monolithic_oracle, random_layers,
    split_layers, train_step,
};
use ndarray::Array2;

fn main() -> decoysplit::Result<()> {
    let layers = random_layers(&[4, 16, 16, 8, 2], 5);
    let batch = Array2::from_shape_fn((8, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
    let labels = Array2::from_shape_fn((8, 2), |(i, j)| if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
    let mut segments = split_layers(&layers, &[1, 3])?;

    let (msgs, cache) = forward_chain(&segments, &batch)?;
    for (k, m) in msgs.iter().enumerate() {
        println!("activation message {}: {:.0} bits", k + 1, m.bits());
    }
    let output = &msgs[msgs.len() - 1].values;
    let split_grads = backward_chain(&segments, &cache, &loss_grad(output, &labels)?)?;
    let (mono_loss, mono_grads) = monolithic_oracle(&layers, &batch, &labels)?;
    let worst = split_grads
        .iter()
        .flat_map(|s| s.layers.iter())
        .zip(&mono_grads)
        .map(|(a, b)| {
            (&a.weight - &b.weight)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v))
        })
        .fold(0.0f64, f64::max);
    println!(
        "split loss {:.6}, unsplit loss {mono_loss:.6}, worst weight-gradient gap {worst:.2e}",
        compute_loss(output, &labels)?
    );

    for epoch in 0..5 {
        println!(
            "epoch {epoch}: loss {:.6}",
            train_step(&mut segments, &batch, &labels, 0.1)?
        );
    }
    Ok(())
}
