//! Forward pass of the unrolled reconstruction network.
//!
//! Each stage applies a subgradient step on the magnitude data-fidelity term,
//!
//! ```text
//! r = Re[ x - t * W^H (W x - y * phase(W x)) ]
//! ```
//!
//! followed by a residual proximal module,
//!
//! ```text
//! x' = r + Finv( soft( F(r), tau ) )
//! ```
//!
//! with `F`/`Finv` small convolution stacks and `tau = softplus(threshold_raw)`.

use num_complex::Complex64;

use crate::cdp::{MaskSet, MeasurementOperator, MeasurementVector};
use crate::error::{Error, Result};
use crate::field::{ComplexField, RealImage};
use crate::net::conv::{Conv2d, FeatureMap};
use crate::net::params::{NetParams, StageParams};
use crate::net::prox::soft_scalar;

/// Floor on `|z|` in the phase factor `z / max(|z|, eps)`.
pub const PHASE_EPS: f64 = 1e-12;

#[inline]
pub fn phase(z: Complex64) -> Complex64 {
    z / z.norm().max(PHASE_EPS)
}

/// Intermediates of one subgradient step.
#[derive(Clone, Debug)]
pub struct SgdTrace {
    /// Inputs of the learnable part of `W`, one per mask.
    pub(crate) pre: Vec<ComplexField>,
    /// `W x`.
    pub(crate) projected: Vec<ComplexField>,
    /// `W x - y * phase(W x)`.
    pub(crate) residual: Vec<ComplexField>,
    /// `W^H residual`.
    pub(crate) correction: ComplexField,
}

fn check_measurement(x: &RealImage, y: &MeasurementVector, masks: &MaskSet) -> Result<()> {
    if y.shape() != x.shape() || masks.shape() != x.shape() {
        return Err(Error::dim(format!(
            "image {:?}, measurement {:?} and masks {:?} must share a shape",
            x.shape(),
            y.shape(),
            masks.shape()
        )));
    }
    if y.channels() != masks.count() {
        return Err(Error::dim(format!(
            "measurement has {} channels but there are {} masks",
            y.channels(),
            masks.count()
        )));
    }
    Ok(())
}

pub(crate) fn sgd_step_traced(
    x: &RealImage,
    step: f64,
    op: &MeasurementOperator,
    y: &MeasurementVector,
    masks: &MaskSet,
) -> Result<(RealImage, SgdTrace)> {
    check_measurement(x, y, masks)?;
    let (pre, projected) = op.apply_traced(&x.to_complex(), masks)?;
    let residual = projected
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let data = u
                .data()
                .iter()
                .zip(y.channel(j))
                .map(|(&uv, &yv)| uv - phase(uv) * yv)
                .collect();
            ComplexField::new(u.height(), u.width(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let correction = op.adjoint(&residual, masks)?;
    let r = x
        .data()
        .iter()
        .zip(correction.data())
        .map(|(xv, a)| xv - step * a.re)
        .collect();
    let r = RealImage::new(x.height(), x.width(), r)?;
    Ok((
        r,
        SgdTrace {
            pre,
            projected,
            residual,
            correction,
        },
    ))
}

/// One subgradient step with step size `step` and operator pair `op`.
pub fn sgd_step(
    x: &RealImage,
    step: f64,
    op: &MeasurementOperator,
    y: &MeasurementVector,
    masks: &MaskSet,
) -> Result<RealImage> {
    Ok(sgd_step_traced(x, step, op, y, masks)?.0)
}

fn relu(map: &FeatureMap) -> FeatureMap {
    let data = map.data().iter().map(|v| v.max(0.0)).collect();
    FeatureMap::new(map.channels(), map.height(), map.width(), data).expect("same shape")
}

fn image_as_map(r: &RealImage) -> FeatureMap {
    FeatureMap::new(1, r.height(), r.width(), r.data().to_vec()).expect("single channel")
}

/// `conv -> ReLU -> conv`, returning (pre-activation, activation, output).
fn two_layer(convs: &[Conv2d; 2], input: &FeatureMap) -> Result<[FeatureMap; 3]> {
    let hidden = convs[0].forward(input)?;
    let act = relu(&hidden);
    let out = convs[1].forward(&act)?;
    Ok([hidden, act, out])
}

/// Forward transform `F(r)`: 3x3 conv (1 -> c), ReLU, 3x3 conv (c -> c).
pub fn transform_forward(r: &RealImage, convs: &[Conv2d; 2]) -> Result<FeatureMap> {
    if convs[0].in_channels() != 1 || convs[1].in_channels() != convs[0].out_channels() {
        return Err(Error::dim(
            "forward transform must map 1 -> c -> c channels",
        ));
    }
    let [_, _, out] = two_layer(convs, &image_as_map(r))?;
    Ok(out)
}

/// Inverse-path transform `Finv(z)`: 3x3 conv (c -> c), ReLU, 3x3 conv (c -> 1).
pub fn transform_inverse(z: &FeatureMap, convs: &[Conv2d; 2]) -> Result<RealImage> {
    if convs[1].out_channels() != 1 || convs[1].in_channels() != convs[0].out_channels() {
        return Err(Error::dim(
            "inverse transform must map c -> c -> 1 channels",
        ));
    }
    let [_, _, out] = two_layer(convs, z)?;
    RealImage::new(z.height(), z.width(), out.into_data())
}

/// Intermediates of one proximal module.
#[derive(Clone, Debug)]
pub struct PpmTrace {
    pub(crate) hidden: FeatureMap,
    pub(crate) hidden_act: FeatureMap,
    pub(crate) features: FeatureMap,
    pub(crate) shrunk: FeatureMap,
    pub(crate) inv_hidden: FeatureMap,
    pub(crate) inv_hidden_act: FeatureMap,
}

pub(crate) fn ppm_forward_traced(
    r: &RealImage,
    stage: &StageParams,
) -> Result<(RealImage, PpmTrace)> {
    let [hidden, hidden_act, features] = two_layer(&stage.transform, &image_as_map(r))?;
    let tau = stage.threshold();
    let shrunk = FeatureMap::new(
        features.channels(),
        features.height(),
        features.width(),
        features
            .data()
            .iter()
            .map(|&v| soft_scalar(v, tau))
            .collect(),
    )?;
    let [inv_hidden, inv_hidden_act, branch] = two_layer(&stage.inverse, &shrunk)?;
    if branch.channels() != 1 {
        return Err(Error::dim("inverse transform must end in one channel"));
    }
    let out = r
        .data()
        .iter()
        .zip(branch.data())
        .map(|(a, b)| a + b)
        .collect();
    Ok((
        RealImage::new(r.height(), r.width(), out)?,
        PpmTrace {
            hidden,
            hidden_act,
            features,
            shrunk,
            inv_hidden,
            inv_hidden_act,
        },
    ))
}

/// Residual proximal module `r + Finv(soft(F(r), tau))`.
pub fn ppm_forward(r: &RealImage, stage: &StageParams) -> Result<RealImage> {
    Ok(ppm_forward_traced(r, stage)?.0)
}

/// Everything one stage keeps for the reverse pass.
#[derive(Clone, Debug)]
pub struct StageTape {
    pub(crate) input: RealImage,
    pub(crate) sgd: SgdTrace,
    pub(crate) gradient_point: RealImage,
    pub(crate) ppm: PpmTrace,
}

impl StageTape {
    /// Stage input `x^{k-1}`.
    pub fn input(&self) -> &RealImage {
        &self.input
    }

    /// Output `r^k` of the subgradient step.
    pub fn gradient_point(&self) -> &RealImage {
        &self.gradient_point
    }

    /// Transform-domain features `z^k = F(r^k)`.
    pub fn features(&self) -> &FeatureMap {
        &self.ppm.features
    }
}

/// Per-stage intermediates of [`net_forward`], consumed by the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    pub(crate) stages: Vec<StageTape>,
    pub(crate) output: RealImage,
    pub(crate) measurement: Vec<f64>,
    pub(crate) mask_seed: u64,
}

impl Tape {
    pub fn stages(&self) -> &[StageTape] {
        &self.stages
    }

    pub fn output(&self) -> &RealImage {
        &self.output
    }

    pub fn mask_seed(&self) -> u64 {
        self.mask_seed
    }
}

/// Default starting point: the all-ones image.
pub fn default_start(height: usize, width: usize) -> RealImage {
    RealImage::filled(height, width, 1.0)
}

/// Run all `K` stages from `x0` (all ones when `None`), keeping a tape.
pub fn net_forward(
    y: &MeasurementVector,
    masks: &MaskSet,
    params: &NetParams,
    x0: Option<&RealImage>,
) -> Result<(RealImage, Tape)> {
    let cfg = params.config();
    let mut x = match x0 {
        Some(x0) => x0.clone(),
        None => default_start(cfg.height, cfg.width),
    };
    if x.shape() != (cfg.height, cfg.width) {
        return Err(Error::dim(format!(
            "start image is {:?}, network expects {:?}",
            x.shape(),
            (cfg.height, cfg.width)
        )));
    }
    let mut stages = Vec::with_capacity(cfg.stages);
    for (k, stage) in params.stages().iter().enumerate() {
        let (r, sgd) = sgd_step_traced(&x, stage.step, params.operator_for(k), y, masks)?;
        let (next, ppm) = ppm_forward_traced(&r, stage)?;
        stages.push(StageTape {
            input: std::mem::replace(&mut x, next),
            sgd,
            gradient_point: r,
            ppm,
        });
    }
    let tape = Tape {
        stages,
        output: x.clone(),
        measurement: y.values().to_vec(),
        mask_seed: masks.seed(),
    };
    Ok((x, tape))
}

/// Inference-only forward pass.
pub fn reconstruct(
    y: &MeasurementVector,
    masks: &MaskSet,
    params: &NetParams,
    x0: Option<&RealImage>,
) -> Result<RealImage> {
    let cfg = params.config();
    let mut x = match x0 {
        Some(x0) => x0.clone(),
        None => default_start(cfg.height, cfg.width),
    };
    for (k, stage) in params.stages().iter().enumerate() {
        let r = sgd_step(&x, stage.step, params.operator_for(k), y, masks)?;
        x = ppm_forward(&r, stage)?;
    }
    Ok(x)
}
