//! Reverse-mode gradients on a small network, a finite-difference check and a
//! checkpoint round trip.

use decoysplit::nn::checkpoint::{read_checkpoint, write_checkpoint};
use decoysplit::nn::{
    finite_difference_check, Act, Dense, Mat, Optimizer, OptimizerKind, ParamStore, Tape, Var,
};
use decoysplit::substream;

fn main() -> decoysplit::Result<()> {
    let mut rng = substream(0, 10);
    let mut store = ParamStore::new();
    let hidden = Dense::new(&mut store, "hidden", 0, (3, 8), Act::Tanh, &mut rng);
    let head = Dense::new(&mut store, "head", 0, (8, 1), Act::Identity, &mut rng);
    let x = Mat::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
    let y = Mat::from_shape_fn((5, 1), |(i, _)| i as f64 * 0.1);
    let loss = |store: &ParamStore| -> decoysplit::Result<(Tape, Var)> {
        let mut tape = Tape::new(store);
        let input = tape.constant(x.clone());
        let target = tape.constant(y.clone());
        let h = hidden.forward(&mut tape, store, input)?;
        let out = head.forward(&mut tape, store, h)?;
        let err = tape.sub(out, target)?;
        let sq = tape.square(err);
        let root = tape.mean(sq);
        Ok((tape, root))
    };
    let check = finite_difference_check(&mut store, &loss, &|_| true, 20, 1e-6, &mut rng)?;
    println!(
        "finite-difference check: max relative error {:.2e} over {} entries",
        check.max_rel_err, check.checked
    );

    let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
    for it in 0..200 {
        store.zero_grad();
        let (tape, root) = loss(&store)?;
        tape.backward(root, &mut store)?;
        if it % 50 == 0 {
            println!("iteration {it}: loss {:.6}", tape.scalar(root));
        }
        drop(tape);
        opt.step(&mut store, 1e-2, |_| true);
    }

    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, store.entries())?;
    let tensors = read_checkpoint(bytes.as_slice())?;
    let mut restored = ParamStore::new();
    for (name, value) in &tensors {
        restored.add(name.clone(), 0, value.clone());
    }
    let (a, ra) = loss(&store)?;
    let (b, rb) = loss(&restored)?;
    println!(
        "checkpoint: {} bytes, {} tensors, loss {:.6} == {:.6}",
        bytes.len(),
        tensors.len(),
        a.scalar(ra),
        b.scalar(rb)
    );
    Ok(())
}
