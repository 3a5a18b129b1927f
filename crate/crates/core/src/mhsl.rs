//! Executable split training on small dense networks.
//!
//! Each segment runs on its own trainer: activations are passed forward as
//! [`ActivationMsg`]s, the last segment computes the loss, and gradients flow
//! back as [`GradMsg`]s. [`monolithic_oracle`] trains the same network in one
//! piece with plain loops so the two can be compared.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slmodel::BITS_PER_ELEMENT;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the output value.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(x·W + b)` on a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `inputs × outputs`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn identity(width: usize) -> Self {
        Self {
            weight: Array2::eye(width),
            bias: Array1::zeros(width),
            activation: Activation::Identity,
        }
    }
}

/// Random network with the given widths; tanh after every layer but the last.
pub fn random_layers(widths: &[usize], seed: u64) -> Vec<DenseLayer> {
    let mut rng = SimRng::seed_from_u64(seed);
    let n = widths.len().saturating_sub(1);
    (0..n)
        .map(|l| {
            let (i, o) = (widths[l], widths[l + 1]);
            let scale = 1.0 / (i as f64).sqrt();
            DenseLayer {
                weight: Array2::from_shape_fn((i, o), |_| rng.random_range(-scale..scale)),
                bias: Array1::from_shape_fn(o, |_| rng.random_range(-0.1..0.1)),
                activation: if l + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub layers: Vec<DenseLayer>,
}

impl DenseSegment {
    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }
}

/// Cut a layer list after each index in `cuts`.
pub fn split_layers(layers: &[DenseLayer], cuts: &[usize]) -> Result<Vec<DenseSegment>> {
    let ok =
        cuts.windows(2).all(|w| w[0] < w[1]) && cuts.iter().all(|&c| c > 0 && c < layers.len());
    if !ok || layers.is_empty() {
        return Err(Error::NonMonotoneCuts {
            cuts: cuts.to_vec(),
            layers: layers.len(),
        });
    }
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(layers.len());
    Ok(bounds
        .windows(2)
        .map(|w| DenseSegment {
            layers: layers[w[0]..w[1]].to_vec(),
        })
        .collect())
}

/// Activations leaving segment `producer`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMsg {
    pub values: Array2<f64>,
    pub producer: usize,
}

/// Gradient w.r.t. the input of segment `producer`, sent to its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMsg {
    pub values: Array2<f64>,
    pub producer: usize,
}

impl ActivationMsg {
    pub fn bits(&self) -> f64 {
        self.values.len() as f64 * BITS_PER_ELEMENT
    }
}

impl GradMsg {
    pub fn bits(&self) -> f64 {
        self.values.len() as f64 * BITS_PER_ELEMENT
    }
}

/// Per-layer inputs and outputs retained by each trainer for its backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_io: Vec<Vec<(Array2<f64>, Array2<f64>)>>,
}

impl ForwardCache {
    pub fn segment_count(&self) -> usize {
        self.layer_io.len()
    }
}

fn layer_forward(layer: &DenseLayer, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != layer.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} vs layer {}",
            x.ncols(),
            layer.inputs()
        )));
    }
    let mut y = x.dot(&layer.weight) + &layer.bias;
    y.mapv_inplace(|v| layer.activation.apply(v));
    Ok(y)
}

/// Run the segments in order on `batch`, returning every boundary activation.
pub fn forward_chain(
    segments: &[DenseSegment],
    batch: &Array2<f64>,
) -> Result<(Vec<ActivationMsg>, ForwardCache)> {
    let mut msgs = Vec::with_capacity(segments.len());
    let mut cache = ForwardCache {
        layer_io: Vec::with_capacity(segments.len()),
    };
    let mut z = batch.clone();
    for (k, seg) in segments.iter().enumerate() {
        let mut io = Vec::with_capacity(seg.layers.len());
        for layer in &seg.layers {
            let y = layer_forward(layer, &z)?;
            io.push((z, y.clone()));
            z = y;
        }
        cache.layer_io.push(io);
        msgs.push(ActivationMsg {
            values: z.clone(),
            producer: k,
        });
    }
    Ok((msgs, cache))
}

/// Mean squared error over all output entries.
pub fn compute_loss(output: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if output.dim() != labels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            output.dim(),
            labels.dim()
        )));
    }
    let n = output.len() as f64;
    Ok(output
        .iter()
        .zip(labels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient of [`compute_loss`] w.r.t. the output.
pub fn loss_grad(output: &Array2<f64>, labels: &Array2<f64>) -> Result<Array2<f64>> {
    if output.dim() != labels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            output.dim(),
            labels.dim()
        )));
    }
    let n = output.len() as f64;
    Ok((output - labels) * (2.0 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrads {
    pub layers: Vec<LayerGrad>,
    pub input_grad: GradMsg,
}

/// Backward pass from the last segment to the first; the returned list is in
/// segment order.
pub fn backward_chain(
    segments: &[DenseSegment],
    cache: &ForwardCache,
    loss_grad: &Array2<f64>,
) -> Result<Vec<SegmentGrads>> {
    if cache.segment_count() != segments.len() {
        return Err(Error::InvalidArgument(format!(
            "cache holds {} segments, chain has {}",
            cache.segment_count(),
            segments.len()
        )));
    }
    let mut out = Vec::with_capacity(segments.len());
    let mut g = loss_grad.clone();
    for (k, seg) in segments.iter().enumerate().rev() {
        let io = &cache.layer_io[k];
        if io.len() != seg.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cache for segment {k} does not match its layers"
            )));
        }
        let mut grads = Vec::with_capacity(seg.layers.len());
        for (layer, (x, y)) in seg.layers.iter().zip(io).rev() {
            if g.dim() != y.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} vs output {:?}",
                    g.dim(),
                    y.dim()
                )));
            }
            let act = layer.activation;
            let da = &g * &y.mapv(|v| act.slope(v));
            grads.push(LayerGrad {
                weight: x.t().dot(&da),
                bias: da.sum_axis(Axis(0)),
            });
            g = da.dot(&layer.weight.t());
        }
        grads.reverse();
        out.push(SegmentGrads {
            layers: grads,
            input_grad: GradMsg {
                values: g.clone(),
                producer: k,
            },
        });
    }
    out.reverse();
    Ok(out)
}

/// Plain gradient step on every segment.
pub fn apply_updates(segments: &mut [DenseSegment], grads: &[SegmentGrads], lr: f64) -> Result<()> {
    if grads.len() != segments.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient sets for {} segments",
            grads.len(),
            segments.len()
        )));
    }
    for (seg, sg) in segments.iter_mut().zip(grads) {
        if seg.layers.len() != sg.layers.len() {
            return Err(Error::ShapeMismatch("layer count differs".into()));
        }
        for (layer, lg) in seg.layers.iter_mut().zip(&sg.layers) {
            if layer.weight.dim() != lg.weight.dim() || layer.bias.dim() != lg.bias.dim() {
                return Err(Error::ShapeMismatch("parameter shape differs".into()));
            }
            layer.weight.scaled_add(-lr, &lg.weight);
            layer.bias.scaled_add(-lr, &lg.bias);
        }
    }
    Ok(())
}

/// One split-training iteration: forward, loss, backward, update. Returns the loss.
pub fn train_step(
    segments: &mut [DenseSegment],
    batch: &Array2<f64>,
    labels: &Array2<f64>,
    lr: f64,
) -> Result<f64> {
    let (msgs, cache) = forward_chain(segments, batch)?;
    let out = &msgs
        .last()
        .ok_or_else(|| Error::InvalidArgument("no segments".into()))?
        .values;
    let loss = compute_loss(out, labels)?;
    let grads = backward_chain(segments, &cache, &loss_grad(out, labels)?)?;
    apply_updates(segments, &grads, lr)?;
    Ok(loss)
}

/// Unsplit reference: loss and per-layer `(dW, db)` computed with scalar loops.
pub fn monolithic_oracle(
    layers: &[DenseLayer],
    batch: &Array2<f64>,
    labels: &Array2<f64>,
) -> Result<(f64, Vec<LayerGrad>)> {
    let rows = batch.nrows();
    let mut acts: Vec<Vec<Vec<f64>>> = vec![batch.outer_iter().map(|r| r.to_vec()).collect()];
    for layer in layers {
        let prev = acts.last().expect("input present");
        if prev[0].len() != layer.inputs() {
            return Err(Error::ShapeMismatch("oracle layer widths".into()));
        }
        let next = prev
            .iter()
            .map(|x| {
                (0..layer.outputs())
                    .map(|o| {
                        let mut a = layer.bias[o];
                        for (i, xi) in x.iter().enumerate() {
                            a += xi * layer.weight[[i, o]];
                        }
                        layer.activation.apply(a)
                    })
                    .collect()
            })
            .collect();
        acts.push(next);
    }
    let out = acts.last().expect("output present");
    if labels.nrows() != rows || labels.ncols() != out[0].len() {
        return Err(Error::ShapeMismatch("oracle labels".into()));
    }
    let count = (rows * out[0].len()) as f64;
    let mut loss = 0.0;
    let mut g: Vec<Vec<f64>> = vec![vec![0.0; out[0].len()]; rows];
    for r in 0..rows {
        for c in 0..out[0].len() {
            let d = out[r][c] - labels[[r, c]];
            loss += d * d;
            g[r][c] = 2.0 * d / count;
        }
    }
    loss /= count;

    let mut grads = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        let (x, y) = (&acts[l], &acts[l + 1]);
        let mut dw = Array2::zeros(layer.weight.dim());
        let mut db = Array1::zeros(layer.outputs());
        let mut gx = vec![vec![0.0; layer.inputs()]; rows];
        for r in 0..rows {
            for o in 0..layer.outputs() {
                let da = g[r][o] * layer.activation.slope(y[r][o]);
                db[o] += da;
                for i in 0..layer.inputs() {
                    dw[[i, o]] += x[r][i] * da;
                    gx[r][i] += da * layer.weight[[i, o]];
                }
            }
        }
        grads.push(LayerGrad {
            weight: dw,
            bias: db,
        });
        g = gx;
    }
    grads.reverse();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = SimRng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_chain_passes_batch_through() {
        let segs = split_layers(&[DenseLayer::identity(3), DenseLayer::identity(3)], &[1]).unwrap();
        let x = data(4, 3, 0);
        let (msgs, _) = forward_chain(&segs, &x).unwrap();
        assert_eq!(msgs[1].values, x);
    }

    #[test]
    fn loss_examples() {
        let y = data(5, 2, 1);
        assert_eq!(compute_loss(&y, &y).unwrap(), 0.0);
        let shifted = &y + 0.5;
        assert!((compute_loss(&shifted, &y).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layers = random_layers(&[3, 4, 2], 2);
        let segs = split_layers(&layers, &[1]).unwrap();
        let (_, cache) = forward_chain(&segs, &data(6, 3, 3)).unwrap();
        let grads = backward_chain(&segs, &cache, &Array2::zeros((6, 2))).unwrap();
        assert!(grads
            .iter()
            .all(|g| g.layers.iter().all(|l| l.weight.iter().all(|&v| v == 0.0))));
        assert!(backward_chain(&segs[..1], &cache, &Array2::zeros((6, 2))).is_err());
    }

    #[test]
    fn single_segment_matches_oracle_exactly() {
        let layers = random_layers(&[3, 5, 2], 4);
        let segs = split_layers(&layers, &[]).unwrap();
        let (x, y) = (data(7, 3, 5), data(7, 2, 6));
        let (msgs, _) = forward_chain(&segs, &x).unwrap();
        let (loss, _) = monolithic_oracle(&layers, &x, &y).unwrap();
        assert!((compute_loss(&msgs[0].values, &y).unwrap() - loss).abs() <= 1e-14 * loss);
    }

    #[test]
    fn messages_have_declared_sizes() {
        let widths = [4, 6, 5, 3];
        let batch = 8;
        let spec = crate::slmodel::ModelSpec::from_dense_widths(&widths, batch).unwrap();
        let plan = crate::slmodel::split_at(&spec, &[1, 2]).unwrap();
        let segs = split_layers(&random_layers(&widths, 1), &[1, 2]).unwrap();
        let (msgs, cache) = forward_chain(&segs, &data(batch, 4, 0)).unwrap();
        let grads = backward_chain(&segs, &cache, &Array2::ones((batch, 3))).unwrap();
        for (k, seg) in plan.segments.iter().enumerate() {
            assert_eq!(msgs[k].bits(), seg.out_bits);
            assert_eq!(grads[k].input_grad.bits(), seg.grad_in_bits);
        }
    }

    #[test]
    fn split_training_fits_toy_regression() {
        let layers = random_layers(&[2, 16, 16, 1], 7);
        let mut segs = split_layers(&layers, &[1, 2]).unwrap();
        let x = data(64, 2, 8);
        let y = x
            .map_axis(Axis(1), |r| 0.6 * r[0] - 0.4 * r[1])
            .insert_axis(Axis(1));
        let first = train_step(&mut segs, &x, &y, 0.0).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = train_step(&mut segs, &x, &y, 0.2).unwrap();
        }
        assert!(last * 100.0 <= first, "{first} -> {last}");
    }

    #[test]
    fn zero_step_keeps_parameters() {
        let layers = random_layers(&[3, 4, 2], 9);
        let mut segs = split_layers(&layers, &[1]).unwrap();
        let before = segs.clone();
        train_step(&mut segs, &data(5, 3, 1), &data(5, 2, 2), 0.0).unwrap();
        assert_eq!(segs, before);
    }
}
