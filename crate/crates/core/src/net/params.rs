//! Learnable parameter set of the unrolled network.

use bytemuck::cast_slice;
use bytemuck::cast_slice_mut;

use crate::cdp::{MeasurementOperator, OperatorMode};
use crate::error::{Error, Result};
use crate::net::conv::Conv2d;
use crate::net::prox::softplus_inverse;
use crate::rng::{streams, SeededRng};

/// Initial step size of every stage.
pub const INIT_STEP: f64 = 0.01;
/// Initial effective threshold of every stage.
pub const INIT_THRESHOLD: f64 = 0.5;

/// Architecture and operator configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub stages: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mask_count: usize,
    pub mode: OperatorMode,
    /// Derive the adjoint path from the forward operator instead of learning it.
    pub tie_adjoint: bool,
    /// One operator pair for all stages instead of one per stage.
    pub share_operator: bool,
}

impl NetConfig {
    /// Defaults: 7 stages, 32 channels, 4 masks, structured operator.
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            stages: 7,
            channels: 32,
            height,
            width,
            mask_count: 4,
            mode: OperatorMode::Structured,
            tie_adjoint: false,
            share_operator: false,
        }
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stages = stages;
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_mask_count(mut self, mask_count: usize) -> Self {
        self.mask_count = mask_count;
        self
    }

    pub fn with_mode(mut self, mode: OperatorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tied_adjoint(mut self, tie: bool) -> Self {
        self.tie_adjoint = tie;
        self
    }

    pub fn with_shared_operator(mut self, share: bool) -> Self {
        self.share_operator = share;
        self
    }

    pub fn operator_slots(&self) -> usize {
        if self.share_operator {
            1
        } else {
            self.stages
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::arg("stage count must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::arg("channel count must be at least 1"));
        }
        if self.mask_count == 0 {
            return Err(Error::arg("mask count must be at least 1"));
        }
        crate::field::check_pow2(self.height, self.width)
    }
}

/// Per-stage scalars and transforms.
///
/// The forward transform is `conv(1->c) -> ReLU -> conv(c->c)`, the inverse
/// transform mirrors it as `conv(c->c) -> ReLU -> conv(c->1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub step: f64,
    /// Threshold is `softplus(threshold_raw)`, always positive.
    pub threshold_raw: f64,
    pub transform: [Conv2d; 2],
    pub inverse: [Conv2d; 2],
}

impl StageParams {
    pub fn init(channels: usize, rng: &mut SeededRng) -> Self {
        Self {
            step: INIT_STEP,
            threshold_raw: softplus_inverse(INIT_THRESHOLD),
            transform: [
                Conv2d::xavier(1, channels, rng),
                Conv2d::xavier(channels, channels, rng),
            ],
            inverse: [
                Conv2d::xavier(channels, channels, rng),
                Conv2d::xavier(channels, 1, rng),
            ],
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            step: 0.0,
            threshold_raw: 0.0,
            transform: [
                Conv2d::zeros(1, channels),
                Conv2d::zeros(channels, channels),
            ],
            inverse: [
                Conv2d::zeros(channels, channels),
                Conv2d::zeros(channels, 1),
            ],
        }
    }

    pub fn threshold(&self) -> f64 {
        crate::net::prox::softplus(self.threshold_raw)
    }

    /// Zero every transform weight and bias, making the proximal module the identity.
    pub fn zero_transforms(&mut self) {
        for conv in self.transform.iter_mut().chain(self.inverse.iter_mut()) {
            conv.weight_mut().fill(0.0);
            conv.bias_mut().fill(0.0);
        }
    }
}

/// One named, flat tensor view.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub group: &'static str,
    pub trainable: bool,
    pub data: &'a [f64],
}

/// Mutable counterpart of [`TensorView`].
#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: String,
    pub group: &'static str,
    pub trainable: bool,
    pub data: &'a mut [f64],
}

/// All learnable tensors of a `K`-stage network.
///
/// The flat tensor order (used by the optimizer and by checkpoints) is
/// stage-major: for each stage `step, threshold_raw, transform[0].weight,
/// transform[0].bias, transform[1].weight, transform[1].bias, inverse[0].weight,
/// inverse[0].bias, inverse[1].weight, inverse[1].bias`, followed by that stage's
/// operator forward and adjoint tensors if the stage owns an operator slot.
/// Complex tensors are flattened as interleaved `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    config: NetConfig,
    stages: Vec<StageParams>,
    operators: Vec<MeasurementOperator>,
}

impl NetParams {
    /// Xavier-initialized transforms, operators at the physical CDP transform.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stages = (0..config.stages)
            .map(|k| {
                let mut rng = SeededRng::named(seed, streams::INIT, k as u64);
                StageParams::init(config.channels, &mut rng)
            })
            .collect();
        let operators = (0..config.operator_slots())
            .map(|_| {
                MeasurementOperator::new(
                    config.mode,
                    config.height,
                    config.width,
                    config.tie_adjoint,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            stages,
            operators,
        })
    }

    /// Same layout, every entry zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            stages: (0..self.config.stages)
                .map(|_| StageParams::zeros(self.config.channels))
                .collect(),
            operators: self.operators.iter().map(|o| o.zeros_like()).collect(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn stages(&self) -> &[StageParams] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [StageParams] {
        &mut self.stages
    }

    pub fn stage(&self, k: usize) -> &StageParams {
        &self.stages[k]
    }

    pub fn operators(&self) -> &[MeasurementOperator] {
        &self.operators
    }

    pub fn operators_mut(&mut self) -> &mut [MeasurementOperator] {
        &mut self.operators
    }

    /// Operator used by stage `k`.
    pub fn operator_for(&self, k: usize) -> &MeasurementOperator {
        &self.operators[self.slot(k)]
    }

    pub(crate) fn operator_for_mut(&mut self, k: usize) -> &mut MeasurementOperator {
        let slot = self.slot(k);
        &mut self.operators[slot]
    }

    fn slot(&self, k: usize) -> usize {
        if self.config.share_operator {
            0
        } else {
            k
        }
    }

    pub fn zero_transforms(&mut self) {
        for s in &mut self.stages {
            s.zero_transforms();
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn view<'a>(
            k: usize,
            name: &str,
            group: &'static str,
            trainable: bool,
            data: &'a [f64],
        ) -> TensorView<'a> {
            TensorView {
                name: format!("stage{k}.{name}"),
                group,
                trainable,
                data,
            }
        }
        let learn_op = self.config.mode.is_learnable();
        let mut out = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            out.push(view(k, "step", "step", true, std::slice::from_ref(&s.step)));
            out.push(view(
                k,
                "threshold_raw",
                "threshold",
                true,
                std::slice::from_ref(&s.threshold_raw),
            ));
            for (i, c) in s.transform.iter().enumerate() {
                out.push(view(
                    k,
                    &format!("transform{i}.weight"),
                    "conv.weight",
                    true,
                    c.weight(),
                ));
                out.push(view(
                    k,
                    &format!("transform{i}.bias"),
                    "conv.bias",
                    true,
                    c.bias(),
                ));
            }
            for (i, c) in s.inverse.iter().enumerate() {
                out.push(view(
                    k,
                    &format!("inverse{i}.weight"),
                    "conv.weight",
                    true,
                    c.weight(),
                ));
                out.push(view(
                    k,
                    &format!("inverse{i}.bias"),
                    "conv.bias",
                    true,
                    c.bias(),
                ));
            }
            if let Some(op) = self.operators.get(k) {
                out.push(view(
                    k,
                    "operator.forward",
                    "operator.forward",
                    learn_op,
                    cast_slice(op.forward_tensor()),
                ));
                out.push(view(
                    k,
                    "operator.adjoint",
                    "operator.adjoint",
                    learn_op,
                    cast_slice(op.adjoint_tensor()),
                ));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let learn_op = self.config.mode.is_learnable();
        let mut out = Vec::new();
        let mut ops = self.operators.iter_mut();
        for (k, s) in self.stages.iter_mut().enumerate() {
            let StageParams {
                step,
                threshold_raw,
                transform,
                inverse,
            } = s;
            let mk = |name: String, group, trainable, data| TensorViewMut {
                name: format!("stage{k}.{name}"),
                group,
                trainable,
                data,
            };
            out.push(mk("step".into(), "step", true, std::slice::from_mut(step)));
            out.push(mk(
                "threshold_raw".into(),
                "threshold",
                true,
                std::slice::from_mut(threshold_raw),
            ));
            for (i, c) in transform.iter_mut().enumerate() {
                let Conv2d { weight, bias, .. } = c;
                out.push(mk(
                    format!("transform{i}.weight"),
                    "conv.weight",
                    true,
                    weight,
                ));
                out.push(mk(format!("transform{i}.bias"), "conv.bias", true, bias));
            }
            for (i, c) in inverse.iter_mut().enumerate() {
                let Conv2d { weight, bias, .. } = c;
                out.push(mk(
                    format!("inverse{i}.weight"),
                    "conv.weight",
                    true,
                    weight,
                ));
                out.push(mk(format!("inverse{i}.bias"), "conv.bias", true, bias));
            }
            if let Some(op) = ops.next() {
                let MeasurementOperator {
                    forward, adjoint, ..
                } = op;
                out.push(mk(
                    "operator.forward".into(),
                    "operator.forward",
                    learn_op,
                    cast_slice_mut(forward.as_mut_slice()),
                ));
                out.push(mk(
                    "operator.adjoint".into(),
                    "operator.adjoint",
                    learn_op,
                    cast_slice_mut(adjoint.as_mut_slice()),
                ));
            }
        }
        out
    }

    /// Total number of real scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// True if `other` has the same configuration and tensor lengths.
    pub fn same_layout(&self, other: &NetParams) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.data.len() == b.data.len())
    }
}
