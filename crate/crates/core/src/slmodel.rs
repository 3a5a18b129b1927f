//! Layered size/cost description of the global model and its partition into
//! sequential segments.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SimRng;

/// Bits per tensor element on the wire (f64).
pub const BITS_PER_ELEMENT: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub param_bits: f64,
    /// Size of the activation leaving this layer, i.e. of `z` if a cut is placed after it.
    pub boundary_activation_bits: f64,
    /// Size of the gradient crossing the same boundary backwards.
    pub boundary_gradient_bits: f64,
    /// Forward complexity coefficient, cycles per bit².
    pub fwd_flop_coeff: f64,
    /// Backward complexity coefficient, cycles per bit².
    pub bwd_flop_coeff: f64,
    pub sensitivity_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Size of the minibatch fed into the first layer.
    pub input_bits: f64,
    pub total_dim_bits: f64,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Uniform,
    /// Activation sizes shrink geometrically by `ratio` (in (0,1)) per layer.
    Pyramid {
        ratio: f64,
    },
}

/// Generator settings for [`make_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub shape: Shape,
    pub param_bits: f64,
    pub activation_bits: f64,
    pub input_bits: f64,
    pub fwd_coeff_range: (f64, f64),
    pub bwd_coeff_range: (f64, f64),
}

impl ModelProfile {
    pub fn uniform(param_bits: f64, activation_bits: f64) -> Self {
        Self {
            shape: Shape::Uniform,
            param_bits,
            activation_bits,
            input_bits: activation_bits,
            fwd_coeff_range: (5e-8, 1e-7),
            bwd_coeff_range: (5e-8, 1e-7),
        }
    }

    pub fn pyramid(param_bits: f64, activation_bits: f64, ratio: f64) -> Self {
        Self {
            shape: Shape::Pyramid { ratio },
            ..Self::uniform(param_bits, activation_bits)
        }
    }

    /// Desk-scale stand-in model used by the reference experiments: six layers,
    /// activations shrinking from 4e5 bits, sized so that feasible schedules
    /// exist under the default 15 s / 100 J budget.
    pub fn reference() -> Self {
        Self {
            input_bits: 5e5,
            ..Self::pyramid(3e5, 4e5, 0.8)
        }
    }
}

/// Number of layers in the reference model.
pub const REFERENCE_LAYERS: usize = 6;

/// Deterministic synthetic model.
pub fn make_model(
    layer_count: usize,
    segments: usize,
    profile: &ModelProfile,
    seed: u64,
) -> Result<ModelSpec> {
    if segments == 0 || layer_count < segments {
        return Err(Error::InvalidArgument(format!(
            "{layer_count} layers cannot form {segments} non-empty segments"
        )));
    }
    if let Shape::Pyramid { ratio } = profile.shape {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pyramid ratio {ratio} not in (0,1)"
            )));
        }
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let layers = (0..layer_count)
        .map(|l| {
            let act = match profile.shape {
                Shape::Uniform => profile.activation_bits,
                Shape::Pyramid { ratio } => {
                    (profile.activation_bits * ratio.powi(l as i32)).round()
                }
            };
            LayerSpec {
                param_bits: profile.param_bits,
                boundary_activation_bits: act,
                boundary_gradient_bits: act,
                fwd_flop_coeff: draw(profile.fwd_coeff_range),
                bwd_flop_coeff: draw(profile.bwd_coeff_range),
                sensitivity_weight: 1.0,
            }
        })
        .collect::<Vec<_>>();
    Ok(ModelSpec::new(profile.input_bits, layers))
}

impl ModelSpec {
    pub fn new(input_bits: f64, layers: Vec<LayerSpec>) -> Self {
        let total_dim_bits = layers.iter().map(|l| l.param_bits).sum();
        Self {
            input_bits,
            total_dim_bits,
            layers,
        }
    }

    /// Size spec matching a dense network with the given layer widths
    /// (`widths[0]` is the input width) run on `batch` samples.
    pub fn from_dense_widths(widths: &[usize], batch: usize) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let act = (w[1] * batch) as f64 * BITS_PER_ELEMENT;
                LayerSpec {
                    param_bits: ((w[0] * w[1] + w[1]) as f64) * BITS_PER_ELEMENT,
                    boundary_activation_bits: act,
                    boundary_gradient_bits: act,
                    fwd_flop_coeff: 1e-7,
                    bwd_flop_coeff: 1e-7,
                    sensitivity_weight: 1.0,
                }
            })
            .collect();
        Ok(Self::new(
            (widths[0] * batch) as f64 * BITS_PER_ELEMENT,
            layers,
        ))
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let sum: f64 = spec.layers.iter().map(|l| l.param_bits).sum();
        if sum != spec.total_dim_bits {
            return Err(Error::Config(format!(
                "total_dim_bits {} != layer sum {sum}",
                spec.total_dim_bits
            )));
        }
        Ok(spec)
    }
}

/// One contiguous run of layers `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub param_bits: f64,
    pub out_bits: f64,
    pub grad_in_bits: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub sensitivity_weight: f64,
}

impl Segment {
    /// Layers `[start, end)` of `model` as one segment.
    pub fn new(model: &ModelSpec, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > model.layer_count() {
            return Err(Error::InvalidArgument(format!(
                "segment {start}..{end} of {} layers",
                model.layer_count()
            )));
        }
        Ok(Self::from_layers(model, start, end))
    }

    fn from_layers(model: &ModelSpec, start: usize, end: usize) -> Self {
        let ls = &model.layers[start..end];
        let grad_in_bits = if start == 0 {
            model.input_bits
        } else {
            model.layers[start - 1].boundary_gradient_bits
        };
        Segment {
            start,
            end,
            param_bits: ls.iter().map(|l| l.param_bits).sum(),
            out_bits: ls[ls.len() - 1].boundary_activation_bits,
            grad_in_bits,
            lambda_f: ls.iter().map(|l| l.fwd_flop_coeff).sum(),
            lambda_b: ls.iter().map(|l| l.bwd_flop_coeff).sum(),
            sensitivity_weight: ls.iter().map(|l| l.sensitivity_weight).sum::<f64>()
                / ls.len() as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub cuts: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl SplitPlan {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

/// Partition the model after each layer index in `cuts`.
pub fn split_at(model: &ModelSpec, cuts: &[usize]) -> Result<SplitPlan> {
    let layers = model.layer_count();
    let ok = cuts.windows(2).all(|w| w[0] < w[1]) && cuts.iter().all(|&c| c > 0 && c < layers);
    if !ok || layers == 0 {
        return Err(Error::NonMonotoneCuts {
            cuts: cuts.to_vec(),
            layers,
        });
    }
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(cuts.iter().copied())
        .chain(std::iter::once(layers))
        .collect();
    let segments = bounds
        .windows(2)
        .map(|w| Segment::from_layers(model, w[0], w[1]))
        .collect();
    Ok(SplitPlan {
        cuts: cuts.to_vec(),
        segments,
    })
}

/// Partition from consecutive segment lengths.
pub fn split_by_sizes(model: &ModelSpec, sizes: &[usize]) -> Result<SplitPlan> {
    let mut cuts = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut acc = 0;
    for &s in &sizes[..sizes.len().saturating_sub(1)] {
        acc += s;
        cuts.push(acc);
    }
    if sizes.iter().sum::<usize>() != model.layer_count() {
        return Err(Error::NonMonotoneCuts {
            cuts,
            layers: model.layer_count(),
        });
    }
    split_at(model, &cuts)
}

/// True iff the plan covers the model exactly, in order, without overlap.
pub fn validate_plan(plan: &SplitPlan, model: &ModelSpec) -> bool {
    let mut next = 0;
    for seg in &plan.segments {
        if seg.start != next || seg.end <= seg.start || seg.end > model.layer_count() {
            return false;
        }
        if *seg != Segment::from_layers(model, seg.start, seg.end) {
            return false;
        }
        next = seg.end;
    }
    if next != model.layer_count() {
        return false;
    }
    let total: f64 = plan.segments.iter().map(|s| s.param_bits).sum();
    (total - model.total_dim_bits).abs() <= 1e-9 * model.total_dim_bits.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight() -> ModelSpec {
        make_model(8, 4, &ModelProfile::uniform(1e6, 2e5), 3).unwrap()
    }

    #[test]
    fn make_model_examples() {
        let m = eight();
        assert_eq!(m.total_dim_bits, 8e6);
        assert_eq!(m, eight());
        let p = make_model(6, 4, &ModelProfile::reference(), 1).unwrap();
        assert!(p
            .layers
            .windows(2)
            .all(|w| w[0].boundary_activation_bits > w[1].boundary_activation_bits));
        assert!(make_model(3, 4, &ModelProfile::reference(), 1).is_err());
    }

    #[test]
    fn split_examples() {
        let m = eight();
        let plan = split_at(&m, &[2, 4, 6]).unwrap();
        assert_eq!(plan.segment_count(), 4);
        assert!(plan.segments.iter().all(|s| s.param_bits == 2e6));
        let whole = split_at(&m, &[]).unwrap();
        assert_eq!(whole.segments.len(), 1);
        assert_eq!(whole.segments[0].param_bits, m.total_dim_bits);
        assert_eq!(whole.segments[0].grad_in_bits, m.input_bits);
        assert!(matches!(
            split_at(&m, &[4, 2]),
            Err(Error::NonMonotoneCuts { .. })
        ));
        assert!(split_at(&m, &[0, 3]).is_err());
        assert!(split_at(&m, &[8]).is_err());
    }

    #[test]
    fn validate_plan_examples() {
        let m = eight();
        let plan = split_at(&m, &[3, 5]).unwrap();
        assert!(validate_plan(&plan, &m));

        let mut dropped = plan.clone();
        dropped.segments.pop();
        assert!(!validate_plan(&dropped, &m));

        let mut dup = plan.clone();
        let first = dup.segments[0].clone();
        dup.segments.insert(1, first);
        assert!(!validate_plan(&dup, &m));
    }

    #[test]
    fn boundary_sizes_follow_cuts() {
        let m = make_model(6, 4, &ModelProfile::reference(), 0).unwrap();
        let plan = split_by_sizes(&m, &[1, 2, 2, 1]).unwrap();
        for w in plan.segments.windows(2) {
            assert_eq!(w[0].out_bits, w[1].grad_in_bits);
        }
    }
}
