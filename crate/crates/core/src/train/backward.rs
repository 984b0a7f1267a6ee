//! Reverse-mode gradients of the reconstruction loss through the whole
//! unrolled network.
//!
//! Complex quantities are differentiated in real coordinates: the gradient
//! w.r.t. `z = a + ib` is stored as `dL/da + i dL/db`.

use num_complex::Complex64;

use crate::cdp::MaskSet;
use crate::error::{Error, Result};
use crate::field::{ComplexField, RealImage};
use crate::net::conv::FeatureMap;
use crate::net::forward::{Tape, PHASE_EPS};
use crate::net::params::{NetParams, TensorView, TensorViewMut};
use crate::net::prox::sigmoid;

/// Gradients with the exact layout of a [`NetParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(pub(crate) NetParams);

impl GradientSet {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self(params.zeros_like())
    }

    /// The gradients viewed as a parameter-shaped value.
    pub fn as_params(&self) -> &NetParams {
        &self.0
    }

    pub fn into_params(self) -> NetParams {
        self.0
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        self.0.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        self.0.tensors_mut()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if !self.0.same_layout(&other.0) {
            return Err(Error::dim("gradient layouts differ"));
        }
        for (dst, src) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Mean squared error of one reconstruction and its gradient w.r.t. the output.
pub fn sample_loss(output: &RealImage, truth: &RealImage) -> Result<(f64, Vec<f64>)> {
    if output.shape() != truth.shape() {
        return Err(Error::dim(format!(
            "output {:?} vs truth {:?}",
            output.shape(),
            truth.shape()
        )));
    }
    let n = output.len() as f64;
    let mut loss = 0.0;
    let grad = output
        .data()
        .iter()
        .zip(truth.data())
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Backpropagate the per-sample MSE through a recorded forward pass.
///
/// Returns the sample loss and the gradient of that loss w.r.t. every
/// tensor in `params`. Operator tensors receive no gradient in fixed mode.
pub fn backward(
    params: &NetParams,
    tape: &Tape,
    masks: &MaskSet,
    truth: &RealImage,
) -> Result<(f64, GradientSet)> {
    let cfg = params.config();
    if tape.stages.len() != cfg.stages {
        return Err(Error::State(format!(
            "tape has {} stages, network has {}",
            tape.stages.len(),
            cfg.stages
        )));
    }
    if tape.mask_seed != masks.seed() {
        return Err(Error::State(format!(
            "tape was recorded with mask seed {} but masks have seed {}",
            tape.mask_seed,
            masks.seed()
        )));
    }
    if truth.shape() != tape.output.shape() {
        return Err(Error::State(format!(
            "truth is {:?} but tape output is {:?}",
            truth.shape(),
            tape.output.shape()
        )));
    }
    let (loss, out_grad) = sample_loss(&tape.output, truth)?;
    let grads = backward_from(params, tape, masks, out_grad)?;
    Ok((loss, grads))
}

/// Backpropagate an arbitrary output gradient `dL/dx^K`.
pub(crate) fn backward_from(
    params: &NetParams,
    tape: &Tape,
    masks: &MaskSet,
    out_grad: Vec<f64>,
) -> Result<GradientSet> {
    let cfg = params.config();
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let learn_op = cfg.mode.is_learnable();
    let mut grads = GradientSet::zeros_like(params);
    let mut x_bar = out_grad;

    for k in (0..cfg.stages).rev() {
        let st = &tape.stages[k];
        let sp = params.stage(k);

        // Proximal module: x = r + Finv(soft(F(r), tau)).
        let mut r_bar = x_bar.clone();
        {
            let g = &mut grads.0.stages_mut()[k];
            let ppm = &st.ppm;
            let branch_bar = FeatureMap::new(1, h, w, x_bar)?;
            let inv_act_bar =
                sp.inverse[1].backward(&ppm.inv_hidden_act, &branch_bar, &mut g.inverse[1])?;
            let inv_hidden_bar = relu_backward(&ppm.inv_hidden, inv_act_bar);
            let shrunk_bar =
                sp.inverse[0].backward(&ppm.shrunk, &inv_hidden_bar, &mut g.inverse[0])?;

            let tau = sp.threshold();
            let mut tau_bar = 0.0;
            let features_bar = FeatureMap::new(
                shrunk_bar.channels(),
                h,
                w,
                ppm.features
                    .data()
                    .iter()
                    .zip(shrunk_bar.data())
                    .map(|(&z, &sb)| {
                        // derivative 0 on the dead zone including the kink |z| = tau
                        if z.abs() > tau {
                            tau_bar -= sb * z.signum();
                            sb
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )?;
            g.threshold_raw += tau_bar * sigmoid(sp.threshold_raw);

            let hidden_act_bar =
                sp.transform[1].backward(&ppm.hidden_act, &features_bar, &mut g.transform[1])?;
            let hidden_bar = relu_backward(&ppm.hidden, hidden_act_bar);
            let r_map = FeatureMap::new(1, h, w, st.gradient_point.data().to_vec())?;
            let input_bar = sp.transform[0].backward(&r_map, &hidden_bar, &mut g.transform[0])?;
            for (a, b) in r_bar.iter_mut().zip(input_bar.data()) {
                *a += b;
            }
        }

        // Subgradient step: r = x - t * Re(W^H v), v = W x - y * phase(W x).
        let sgd = &st.sgd;
        grads.0.stages_mut()[k].step -= r_bar
            .iter()
            .zip(sgd.correction.data())
            .map(|(rb, c)| rb * c.re)
            .sum::<f64>();
        let correction_bar = ComplexField::new(
            h,
            w,
            r_bar
                .iter()
                .map(|rb| Complex64::new(-sp.step * rb, 0.0))
                .collect(),
        )?;
        let op = params.operator_for(k);
        let mut op_grad = if learn_op {
            Some(grads.0.operator_for_mut(k))
        } else {
            None
        };
        let residual_bar = op.adjoint_backward(
            masks,
            &sgd.residual,
            &correction_bar,
            op_grad.as_deref_mut(),
        )?;
        let projected_bar = sgd
            .projected
            .iter()
            .zip(&residual_bar)
            .enumerate()
            .map(|(j, (u, vb))| {
                let y = &tape.measurement[j * n..(j + 1) * n];
                let data = u
                    .data()
                    .iter()
                    .zip(vb.data())
                    .zip(y)
                    .map(|((&uv, &vbv), &yv)| vbv + phase_backward(uv, -yv * vbv))
                    .collect();
                ComplexField::new(h, w, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let input_bar = op.apply_backward(masks, &sgd.pre, &projected_bar, op_grad)?;

        x_bar = r_bar
            .iter()
            .zip(input_bar.data())
            .map(|(rb, c)| rb + c.re)
            .collect();
    }
    Ok(grads)
}

/// Gradient through `p = z / max(|z|, eps)` given `dL/dp`.
#[inline]
fn phase_backward(z: Complex64, p_bar: Complex64) -> Complex64 {
    let m = z.norm();
    if m > PHASE_EPS {
        let p = z / m;
        (p_bar - p * (p.conj() * p_bar).re) / m
    } else {
        p_bar / PHASE_EPS
    }
}

fn relu_backward(pre: &FeatureMap, mut upstream: FeatureMap) -> FeatureMap {
    for (u, &p) in upstream.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *u = 0.0;
        }
    }
    upstream
}
