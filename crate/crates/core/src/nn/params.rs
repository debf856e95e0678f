use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CONV_CHANNELS, FLAT, HIDDEN, KERNEL};
use crate::error::{Error, Result};

/// Identifies one weight or bias tensor of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    FcWeight,
    FcBias,
    OutWeight,
    OutBias,
}

impl ParamGroup {
    /// Storage and checkpoint order.
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Conv1Weight,
        ParamGroup::Conv1Bias,
        ParamGroup::Conv2Weight,
        ParamGroup::Conv2Bias,
        ParamGroup::FcWeight,
        ParamGroup::FcBias,
        ParamGroup::OutWeight,
        ParamGroup::OutBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Conv1Weight => "conv1.weight",
            ParamGroup::Conv1Bias => "conv1.bias",
            ParamGroup::Conv2Weight => "conv2.weight",
            ParamGroup::Conv2Bias => "conv2.bias",
            ParamGroup::FcWeight => "fc.weight",
            ParamGroup::FcBias => "fc.bias",
            ParamGroup::OutWeight => "out.weight",
            ParamGroup::OutBias => "out.bias",
        }
    }

    pub fn len(self, classes: usize) -> usize {
        let k2 = KERNEL * KERNEL;
        match self {
            ParamGroup::Conv1Weight => CONV_CHANNELS * k2,
            ParamGroup::Conv2Weight => CONV_CHANNELS * k2 * CONV_CHANNELS,
            ParamGroup::Conv1Bias | ParamGroup::Conv2Bias => CONV_CHANNELS,
            ParamGroup::FcWeight => FLAT * HIDDEN,
            ParamGroup::FcBias => HIDDEN,
            ParamGroup::OutWeight => HIDDEN * classes,
            ParamGroup::OutBias => classes,
        }
    }

    /// `(fan_in, fan_out)` for Glorot initialization; `None` for biases.
    fn fans(self, classes: usize) -> Option<(usize, usize)> {
        let k2 = KERNEL * KERNEL;
        match self {
            ParamGroup::Conv1Weight => Some((k2, k2 * CONV_CHANNELS)),
            ParamGroup::Conv2Weight => Some((k2 * CONV_CHANNELS, k2 * CONV_CHANNELS)),
            ParamGroup::FcWeight => Some((FLAT, HIDDEN)),
            ParamGroup::OutWeight => Some((HIDDEN, classes)),
            _ => None,
        }
    }
}

/// All weights of the network.
///
/// Layouts (row-major):
/// - conv kernels: `[out_channel][ky][kx][in_channel]`
/// - `fc.weight`: `[3872 inputs][128 outputs]`, inputs flattened as
///   `[y][x][channel]` of the 11x11x32 pooled map
/// - `out.weight`: `[128 inputs][classes]`
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    classes: usize,
    tensors: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn zeros(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "network needs at least 2 classes, got {classes}"
            )));
        }
        Ok(NetworkParams {
            classes,
            tensors: ParamGroup::ALL.iter().map(|g| vec![0.0; g.len(classes)]).collect(),
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(classes: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (g, t) in ParamGroup::ALL.iter().zip(&mut p.tensors) {
            if let Some((fan_in, fan_out)) = g.fans(classes) {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                t.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
            }
        }
        Ok(p)
    }

    /// Wraps tensors given in [`ParamGroup::ALL`] order, checking shapes.
    pub fn from_tensors(classes: usize, tensors: Vec<Vec<f64>>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "network needs at least 2 classes, got {classes}"
            )));
        }
        if tensors.len() != ParamGroup::ALL.len() {
            return Err(Error::shape(format!(
                "expected 8 parameter groups, got {}",
                tensors.len()
            )));
        }
        for (g, t) in ParamGroup::ALL.iter().zip(&tensors) {
            if t.len() != g.len(classes) {
                return Err(Error::shape(format!(
                    "{} has {} values, expected {}",
                    g.name(),
                    t.len(),
                    g.len(classes)
                )));
            }
        }
        Ok(NetworkParams { classes, tensors })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.tensors[g as usize]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        &mut self.tensors[g as usize]
    }

    /// Tensors in [`ParamGroup::ALL`] order.
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &NetworkParams) -> bool {
        self.classes == other.classes
    }

    /// Element-wise `self += scale * other`.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("parameter sets have different class counts"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }
}
