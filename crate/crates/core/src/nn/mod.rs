//! Minimal neural-network substrate: a gradient tape, layers, optimisers,
//! checkpoints and a finite-difference checker.

pub mod checkpoint;
pub mod layers;
pub mod net;
pub mod optim;
pub mod tape;

use rand::Rng;

pub use layers::{Act, CrossAttention, Dense, Gru, Residual};
pub use net::{BlockSpec, Net, NetSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{softmax, Mat, ParamId, ParamStore, Tape, Var};

use crate::error::Result;

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare the tape gradient of `loss` with central differences on `count`
/// scalar parameters drawn uniformly from the parameters whose group passes
/// `select`. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_check<R: Rng + ?Sized>(
    store: &mut ParamStore,
    loss: &dyn Fn(&ParamStore) -> Result<(Tape, Var)>,
    select: &dyn Fn(u8) -> bool,
    count: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheck> {
    store.zero_grad();
    let (tape, root) = loss(store)?;
    tape.backward(root, store)?;
    drop(tape);
    let pool: Vec<(ParamId, usize)> = store
        .ids()
        .filter(|&id| select(store.group(id)))
        .flat_map(|id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..count.min(pool.len()) {
        let (id, flat) = pool[rng.random_range(0..pool.len())];
        let cols = store.value(id).ncols();
        let at = [flat / cols, flat % cols];
        let analytic = store.grad(id)[at];
        let orig = store.value(id)[at];
        store.value_mut(id)[at] = orig + step;
        let (t, r) = loss(store)?;
        let up = t.scalar(r);
        store.value_mut(id)[at] = orig - step;
        let (t, r) = loss(store)?;
        let down = t.scalar(r);
        store.value_mut(id)[at] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    store.zero_grad();
    Ok(GradCheck {
        max_rel_err: worst,
        checked: count.min(pool.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SimRng;
    use rand::SeedableRng;
    use std::rc::Rc;

    fn check_net(spec: NetSpec, with_state: bool) {
        let mut rng = SimRng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let net = Net::new(spec.clone(), &mut store, "n", 0, &mut rng);
        let x = Mat::from_shape_fn((3, spec.input), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6
        });
        let h0 = spec
            .recurrent()
            .map(|h| Mat::from_shape_fn((3, h), |(i, j)| 0.1 * (i as f64 - j as f64)));
        let target = Rc::new(Mat::from_shape_fn((3, spec.output()), |(i, j)| {
            (i + j) as f64 * 0.1
        }));
        let loss = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let xv = tape.constant(x.clone());
            let hv = if with_state {
                h0.clone().map(|h| tape.constant(h))
            } else {
                None
            };
            let (y, _) = net.forward(&mut tape, s, xv, hv)?;
            let t = tape.constant((*target).clone());
            let d = tape.sub(y, t)?;
            let sq = tape.square(d);
            let l = tape.mean(sq);
            Ok((tape, l))
        };
        let res =
            finite_difference_check(&mut store, &loss, &|_| true, 20, 1e-6, &mut rng).unwrap();
        assert!(res.max_rel_err <= 1e-4, "{res:?}");
    }

    #[test]
    fn every_block_kind_passes_gradient_check() {
        use BlockSpec::*;
        check_net(
            NetSpec::new(
                4,
                vec![Dense {
                    out: 5,
                    act: Act::Tanh,
                }],
            )
            .unwrap(),
            false,
        );
        check_net(
            NetSpec::new(
                4,
                vec![
                    Residual,
                    Dense {
                        out: 2,
                        act: Act::Sigmoid,
                    },
                ],
            )
            .unwrap(),
            false,
        );
        check_net(
            NetSpec::new(
                4,
                vec![
                    Gru { hidden: 3 },
                    Dense {
                        out: 2,
                        act: Act::Identity,
                    },
                ],
            )
            .unwrap(),
            true,
        );
    }

    #[test]
    fn attention_and_log_softmax_pass_gradient_check() {
        let mut rng = SimRng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let att = CrossAttention::new(&mut store, "att", 0, 5, 4, &mut rng);
        let head = Dense::new(&mut store, "head", 0, (4, 6), Act::Identity, &mut rng);
        let cur = Mat::from_shape_fn((2, 5), |(i, j)| (i as f64 + 1.0) * 0.2 - j as f64 * 0.1);
        let hist = Mat::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) % 7) as f64 * 0.15 - 0.4);
        let mask = Rc::new(ndarray::array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]);
        let amask = Rc::new(ndarray::array![
            [1.0, 0.0, 1.0, 1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        ]);
        let pick = Rc::new(ndarray::array![
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        ]);
        let loss = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let c = tape.constant(cur.clone());
            let h = tape.constant(hist.clone());
            let a = att.forward(&mut tape, s, c, h, mask.clone())?;
            let logits = head.forward(&mut tape, s, a)?;
            let lp = tape.masked_log_softmax(logits, amask.clone())?;
            let p = tape.exp(lp);
            let p = tape.mul_const(p, amask.clone())?;
            let plp = tape.mul(p, lp)?;
            let ent = tape.sum_all(plp);
            let chosen = tape.mul_const(lp, pick.clone())?;
            let nll = tape.sum_all(chosen);
            let l = tape.add(ent, nll)?;
            Ok((tape, l))
        };
        let res =
            finite_difference_check(&mut store, &loss, &|_| true, 40, 1e-6, &mut rng).unwrap();
        assert!(res.max_rel_err <= 1e-4, "{res:?}");
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = NetSpec::new(
            3,
            vec![
                BlockSpec::Dense {
                    out: 4,
                    act: Act::Tanh,
                },
                BlockSpec::Residual,
            ],
        )
        .unwrap();
        let build = || {
            let mut rng = SimRng::seed_from_u64(1);
            let mut store = ParamStore::new();
            let net = Net::new(spec.clone(), &mut store, "n", 0, &mut rng);
            let mut tape = Tape::new(&store);
            let x = tape.constant(Mat::ones((2, 3)));
            let (y, _) = net.forward(&mut tape, &store, x, None).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(build(), build());
    }
}
