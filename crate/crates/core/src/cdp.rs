//! Coded-diffraction-pattern measurement operators.
//!
//! The physical operator stacks `J` masked Fourier transforms,
//! `A x = [F D_1 x; ...; F D_J x]`. The learnable operator replaces `F` with a
//! trainable `T`, giving `W x = [T D_1 x; ...; T D_J x]`, and carries its own
//! adjoint-path parameters so that `W^H` can be learned independently.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{check_pow2, fft2_inplace, ComplexField, RealImage};
use crate::rng::{streams, SeededRng};

/// Largest pixel count for which a dense `N x N` operator may be allocated.
pub const DENSE_MAX_PIXELS: usize = 4096;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Unit-modulus diagonal modulation masks `D_1..D_J`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    seed: u64,
    masks: Vec<ComplexField>,
}

impl MaskSet {
    /// Build from explicit masks. Every entry must have unit modulus.
    pub fn from_masks(seed: u64, masks: Vec<ComplexField>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::arg("mask set needs at least one mask"))?;
        let shape = first.shape();
        for m in &masks {
            if m.shape() != shape {
                return Err(Error::dim("masks have differing shapes"));
            }
            if m.data().iter().any(|d| (d.norm() - 1.0).abs() > 1e-12) {
                return Err(Error::arg("mask entries must have unit modulus"));
            }
        }
        Ok(Self { seed, masks })
    }

    /// Regenerate the mask set identified by `seed`.
    pub fn from_seed(seed: u64, count: usize, height: usize, width: usize) -> Result<Self> {
        make_cdp_masks(
            &mut SeededRng::named(seed, streams::MASKS, 0),
            count,
            height,
            width,
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.masks[0].shape()
    }

    pub fn pixels(&self) -> usize {
        self.masks[0].len()
    }

    pub fn masks(&self) -> &[ComplexField] {
        &self.masks
    }

    pub fn mask(&self, j: usize) -> &ComplexField {
        &self.masks[j]
    }
}

/// Draw `count` masks with entries `exp(i*theta)`, `theta ~ U[0, 2pi)`.
pub fn make_cdp_masks(
    rng: &mut SeededRng,
    count: usize,
    height: usize,
    width: usize,
) -> Result<MaskSet> {
    if count == 0 {
        return Err(Error::arg("mask count must be at least 1"));
    }
    check_pow2(height, width)?;
    let masks = (0..count)
        .map(|_| {
            let data = (0..height * width)
                .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.uniform()))
                .collect();
            ComplexField::new(height, width, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskSet {
        seed: rng.seed(),
        masks,
    })
}

/// Parameterization of the per-channel transform `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OperatorMode {
    /// `T = F`, nothing learnable.
    Fixed,
    /// `T = diag(g) F`, a learnable complex gain per frequency.
    Structured,
    /// `T` is a full learnable `N x N` complex matrix.
    Dense,
}

impl OperatorMode {
    pub fn code(self) -> u32 {
        match self {
            OperatorMode::Fixed => 0,
            OperatorMode::Structured => 1,
            OperatorMode::Dense => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(OperatorMode::Fixed),
            1 => Some(OperatorMode::Structured),
            2 => Some(OperatorMode::Dense),
            _ => None,
        }
    }

    pub fn is_learnable(self) -> bool {
        !matches!(self, OperatorMode::Fixed)
    }
}

impl std::str::FromStr for OperatorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(OperatorMode::Fixed),
            "structured" => Ok(OperatorMode::Structured),
            "dense" => Ok(OperatorMode::Dense),
            other => Err(format!(
                "unknown operator mode '{other}' (expected fixed, structured or dense)"
            )),
        }
    }
}

impl std::fmt::Display for OperatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            OperatorMode::Fixed => "fixed",
            OperatorMode::Structured => "structured",
            OperatorMode::Dense => "dense",
        })
    }
}

/// Learnable measurement operator `W` together with its adjoint path `W^H`.
///
/// * `Fixed` and `Structured` store `N` gains per path (ones for `Fixed`).
/// * `Dense` stores `N x N` row-major matrices per path.
///
/// When `tied`, the adjoint tensor is empty and the adjoint path is derived
/// from the forward tensor (`conj(g)` or `T^H`).
///
/// The same type doubles as the gradient container for these tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOperator {
    mode: OperatorMode,
    height: usize,
    width: usize,
    tied: bool,
    pub(crate) forward: Vec<Complex64>,
    pub(crate) adjoint: Vec<Complex64>,
}

impl MeasurementOperator {
    /// Operator initialized at the physical CDP transform (`T = F`, adjoint `F^H`).
    pub fn new(mode: OperatorMode, height: usize, width: usize, tied: bool) -> Result<Self> {
        check_pow2(height, width)?;
        let n = height * width;
        let (forward, adjoint) = match mode {
            OperatorMode::Fixed | OperatorMode::Structured => {
                (vec![ONE; n], if tied { Vec::new() } else { vec![ONE; n] })
            }
            OperatorMode::Dense => {
                if n > DENSE_MAX_PIXELS {
                    return Err(Error::arg(format!(
                        "dense operator needs N <= {DENSE_MAX_PIXELS}, got {n}"
                    )));
                }
                let t = dft_matrix(height, width);
                let adj = if tied { Vec::new() } else { hermitian(&t, n) };
                (t, adj)
            }
        };
        Ok(Self {
            mode,
            height,
            width,
            tied,
            forward,
            adjoint,
        })
    }

    /// Same layout, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            mode: self.mode,
            height: self.height,
            width: self.width,
            tied: self.tied,
            forward: vec![ZERO; self.forward.len()],
            adjoint: vec![ZERO; self.adjoint.len()],
        }
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    pub fn forward_tensor(&self) -> &[Complex64] {
        &self.forward
    }

    pub fn adjoint_tensor(&self) -> &[Complex64] {
        &self.adjoint
    }

    pub fn forward_tensor_mut(&mut self) -> &mut [Complex64] {
        &mut self.forward
    }

    pub fn adjoint_tensor_mut(&mut self) -> &mut [Complex64] {
        &mut self.adjoint
    }

    fn check(&self, masks: &MaskSet) -> Result<()> {
        if masks.shape() != (self.height, self.width) {
            return Err(Error::dim(format!(
                "operator is {}x{} but masks are {}x{}",
                self.height,
                self.width,
                masks.shape().0,
                masks.shape().1
            )));
        }
        Ok(())
    }

    fn check_stack(&self, z: &[ComplexField], masks: &MaskSet) -> Result<()> {
        self.check(masks)?;
        if z.len() != masks.count() {
            return Err(Error::dim(format!(
                "expected {} channels, got {}",
                masks.count(),
                z.len()
            )));
        }
        if z.iter().any(|c| c.shape() != (self.height, self.width)) {
            return Err(Error::dim("channel shape does not match operator"));
        }
        Ok(())
    }

    /// `W x`: one channel per mask, channel `j = T(d_j * x)`.
    pub fn apply(&self, x: &ComplexField, masks: &MaskSet) -> Result<Vec<ComplexField>> {
        Ok(self.apply_traced(x, masks)?.1)
    }

    /// `W x` together with the per-channel inputs `e_j` of the learnable stage
    /// (`F(d_j x)` for gain modes, `d_j x` for dense).
    pub fn apply_traced(
        &self,
        x: &ComplexField,
        masks: &MaskSet,
    ) -> Result<(Vec<ComplexField>, Vec<ComplexField>)> {
        self.check(masks)?;
        if x.shape() != (self.height, self.width) {
            return Err(Error::dim(format!(
                "input is {}x{}, operator is {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            )));
        }
        let mut pre = Vec::with_capacity(masks.count());
        let mut out = Vec::with_capacity(masks.count());
        for d in masks.masks() {
            let mut e = hadamard(d, x);
            match self.mode {
                OperatorMode::Fixed => {
                    fft2_inplace(&mut e, false)?;
                    out.push(e.clone());
                }
                OperatorMode::Structured => {
                    fft2_inplace(&mut e, false)?;
                    out.push(scale_by(&self.forward, &e));
                }
                OperatorMode::Dense => {
                    out.push(matvec(&self.forward, &e));
                }
            }
            pre.push(e);
        }
        Ok((pre, out))
    }

    /// `W^H z = sum_j conj(d_j) * T^H(z_j)` using the adjoint-path parameters.
    pub fn adjoint(&self, z: &[ComplexField], masks: &MaskSet) -> Result<ComplexField> {
        self.check_stack(z, masks)?;
        let mut acc = ComplexField::zeros(self.height, self.width);
        for (d, zj) in masks.masks().iter().zip(z) {
            let q = self.adjoint_channel(zj)?;
            for ((a, dv), qv) in acc.data_mut().iter_mut().zip(d.data()).zip(q.data()) {
                *a += dv.conj() * qv;
            }
        }
        Ok(acc)
    }

    fn adjoint_channel(&self, z: &ComplexField) -> Result<ComplexField> {
        match self.mode {
            OperatorMode::Fixed => {
                let mut q = z.clone();
                fft2_inplace(&mut q, true)?;
                Ok(q)
            }
            OperatorMode::Structured => {
                let mut q = if self.tied {
                    let data = z
                        .data()
                        .iter()
                        .zip(&self.forward)
                        .map(|(v, g)| g.conj() * v)
                        .collect();
                    ComplexField::new(self.height, self.width, data)?
                } else {
                    scale_by(&self.adjoint, z)
                };
                fft2_inplace(&mut q, true)?;
                Ok(q)
            }
            OperatorMode::Dense => Ok(if self.tied {
                matvec_h(&self.forward, z)
            } else {
                matvec(&self.adjoint, z)
            }),
        }
    }

    /// Reverse pass of [`apply_traced`](Self::apply_traced).
    ///
    /// `pre` are the traced `e_j`, `upstream` the gradients w.r.t. each output
    /// channel. Returns the gradient w.r.t. the (complex) input and, when
    /// `grad` is given, accumulates parameter gradients into it.
    pub fn apply_backward(
        &self,
        masks: &MaskSet,
        pre: &[ComplexField],
        upstream: &[ComplexField],
        mut grad: Option<&mut MeasurementOperator>,
    ) -> Result<ComplexField> {
        self.check_stack(upstream, masks)?;
        let n = self.height * self.width;
        let mut dx = ComplexField::zeros(self.height, self.width);
        for ((d, e), u_bar) in masks.masks().iter().zip(pre).zip(upstream) {
            let mut e_bar = match self.mode {
                OperatorMode::Fixed => u_bar.clone(),
                OperatorMode::Structured => {
                    if let Some(g) = grad.as_deref_mut() {
                        for ((acc, ev), ub) in g.forward.iter_mut().zip(e.data()).zip(u_bar.data())
                        {
                            *acc += ev.conj() * ub;
                        }
                    }
                    let data = u_bar
                        .data()
                        .iter()
                        .zip(&self.forward)
                        .map(|(ub, g)| g.conj() * ub)
                        .collect();
                    ComplexField::new(self.height, self.width, data)?
                }
                OperatorMode::Dense => {
                    if let Some(g) = grad.as_deref_mut() {
                        outer_accumulate(&mut g.forward, u_bar.data(), e.data(), n);
                    }
                    matvec_h(&self.forward, u_bar)
                }
            };
            if self.mode != OperatorMode::Dense {
                fft2_inplace(&mut e_bar, true)?;
            }
            for ((acc, dv), eb) in dx.data_mut().iter_mut().zip(d.data()).zip(e_bar.data()) {
                *acc += dv.conj() * eb;
            }
        }
        Ok(dx)
    }

    /// Reverse pass of [`adjoint`](Self::adjoint).
    ///
    /// `z` is the stack the adjoint was applied to, `upstream` the gradient
    /// w.r.t. its output. Returns per-channel gradients w.r.t. `z`.
    pub fn adjoint_backward(
        &self,
        masks: &MaskSet,
        z: &[ComplexField],
        upstream: &ComplexField,
        mut grad: Option<&mut MeasurementOperator>,
    ) -> Result<Vec<ComplexField>> {
        self.check_stack(z, masks)?;
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(z.len());
        for (d, zj) in masks.masks().iter().zip(z) {
            // q_j = T^H(z_j) and the output is sum_j conj(d_j) q_j.
            let q_bar = hadamard(d, upstream);
            let z_bar = match self.mode {
                OperatorMode::Fixed => {
                    let mut s = q_bar;
                    fft2_inplace(&mut s, false)?;
                    s
                }
                OperatorMode::Structured => {
                    let mut s_bar = q_bar;
                    fft2_inplace(&mut s_bar, false)?;
                    if let Some(g) = grad.as_deref_mut() {
                        if self.tied {
                            // h = conj(g): dL/dg = conj(dL/dh)
                            for ((acc, zv), sb) in
                                g.forward.iter_mut().zip(zj.data()).zip(s_bar.data())
                            {
                                *acc += (zv.conj() * sb).conj();
                            }
                        } else {
                            for ((acc, zv), sb) in
                                g.adjoint.iter_mut().zip(zj.data()).zip(s_bar.data())
                            {
                                *acc += zv.conj() * sb;
                            }
                        }
                    }
                    let data = if self.tied {
                        s_bar
                            .data()
                            .iter()
                            .zip(&self.forward)
                            .map(|(sb, g)| g * sb)
                            .collect()
                    } else {
                        s_bar
                            .data()
                            .iter()
                            .zip(&self.adjoint)
                            .map(|(sb, h)| h.conj() * sb)
                            .collect()
                    };
                    ComplexField::new(self.height, self.width, data)?
                }
                OperatorMode::Dense => {
                    if let Some(g) = grad.as_deref_mut() {
                        if self.tied {
                            // S = T^H: dL/dT = (dL/dS)^H = z q_bar^H
                            outer_accumulate(&mut g.forward, zj.data(), q_bar.data(), n);
                        } else {
                            outer_accumulate(&mut g.adjoint, q_bar.data(), zj.data(), n);
                        }
                    }
                    if self.tied {
                        matvec(&self.forward, &q_bar)
                    } else {
                        matvec_h(&self.adjoint, &q_bar)
                    }
                }
            };
            out.push(z_bar);
        }
        Ok(out)
    }
}

/// Noisy magnitude measurements `y` of length `J*N`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector {
    values: Vec<f64>,
    alpha: f64,
    mask_seed: u64,
    height: usize,
    width: usize,
    channels: usize,
}

impl MeasurementVector {
    pub fn new(
        values: Vec<f64>,
        alpha: f64,
        mask_seed: u64,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::dim(format!(
                "measurement has {} values, expected {}",
                values.len(),
                channels * height * width
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::arg("measurements must be finite and nonnegative"));
        }
        Ok(Self {
            values,
            alpha,
            mask_seed,
            height,
            width,
            channels,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Measurements of channel `j`.
    pub fn channel(&self, j: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mask_seed(&self) -> u64 {
        self.mask_seed
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Noiseless magnitudes `|A x|` under the physical operator.
pub fn magnitudes(x: &RealImage, masks: &MaskSet) -> Result<Vec<f64>> {
    let (h, w) = masks.shape();
    let op = MeasurementOperator::new(OperatorMode::Fixed, h, w, false)?;
    let stack = op.apply(&x.to_complex(), masks)?;
    Ok(stack
        .iter()
        .flat_map(|c| c.data().iter().map(|v| v.norm()))
        .collect())
}

/// Measure `x` with the physical CDP operator and add signal-proportional noise.
///
/// `y_i = max(0, |(Ax)_i| + w_i)`, `w_i ~ N(0, (alpha/255) |(Ax)_i|)`.
pub fn measure(
    x: &RealImage,
    masks: &MaskSet,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<MeasurementVector> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::arg(format!("noise level must be >= 0, got {alpha}")));
    }
    if x.shape() != masks.shape() {
        return Err(Error::dim(format!(
            "image is {}x{} but masks are {}x{}",
            x.height(),
            x.width(),
            masks.shape().0,
            masks.shape().1
        )));
    }
    let clean = magnitudes(x, masks)?;
    let values = if alpha == 0.0 {
        clean
    } else {
        let noise = sample_noise(&clean, alpha, rng);
        clean
            .iter()
            .zip(&noise)
            .map(|(m, w)| (m + w).max(0.0))
            .collect()
    };
    let (h, w) = masks.shape();
    MeasurementVector::new(values, alpha, masks.seed(), h, w, masks.count())
}

/// Additive noise `w_i ~ N(0, (alpha/255) clean_i)`, before clamping.
pub fn sample_noise(clean: &[f64], alpha: f64, rng: &mut SeededRng) -> Vec<f64> {
    let scale = alpha / 255.0;
    clean
        .iter()
        .map(|&m| (scale * m).sqrt() * rng.normal())
        .collect()
}

fn hadamard(a: &ComplexField, b: &ComplexField) -> ComplexField {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
    ComplexField::new(a.height(), a.width(), data).expect("same shape")
}

fn scale_by(gain: &[Complex64], x: &ComplexField) -> ComplexField {
    let data = x.data().iter().zip(gain).map(|(v, g)| g * v).collect();
    ComplexField::new(x.height(), x.width(), data).expect("same shape")
}

fn matvec(m: &[Complex64], x: &ComplexField) -> ComplexField {
    let n = x.len();
    let data = m
        .chunks_exact(n)
        .map(|row| row.iter().zip(x.data()).map(|(a, b)| a * b).sum())
        .collect();
    ComplexField::new(x.height(), x.width(), data).expect("square")
}

fn matvec_h(m: &[Complex64], x: &ComplexField) -> ComplexField {
    let n = x.len();
    let mut out = vec![ZERO; n];
    for (row, xv) in m.chunks_exact(n).zip(x.data()) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a.conj() * xv;
        }
    }
    ComplexField::new(x.height(), x.width(), out).expect("square")
}

/// `acc += a b^H` for an `n x n` row-major matrix.
fn outer_accumulate(acc: &mut [Complex64], a: &[Complex64], b: &[Complex64], n: usize) {
    for (row, av) in acc.chunks_exact_mut(n).zip(a) {
        for (entry, bv) in row.iter_mut().zip(b) {
            *entry += av * bv.conj();
        }
    }
}

/// Unitary 2D DFT as an explicit `N x N` matrix on row-major pixels.
pub fn dft_matrix(height: usize, width: usize) -> Vec<Complex64> {
    let n = height * width;
    let scale = 1.0 / (n as f64).sqrt();
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        let (ku, kv) = (k / width, k % width);
        for l in 0..n {
            let (lr, ls) = (l / width, l % width);
            // reduce modulo the period before scaling to keep the angle small
            let phase = ((ku * lr) % height) as f64 / height as f64
                + ((kv * ls) % width) as f64 / width as f64;
            m.push(Complex64::from_polar(scale, -2.0 * PI * phase));
        }
    }
    m
}

fn hermitian(m: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = m[r * n + c].conj();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_complex(seed: u64, h: usize, w: usize) -> ComplexField {
        let mut rng = SeededRng::new(seed, 99);
        let data = (0..h * w)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        ComplexField::new(h, w, data).unwrap()
    }

    fn random_stack(seed: u64, j: usize, h: usize, w: usize) -> Vec<ComplexField> {
        (0..j)
            .map(|i| random_complex(seed * 31 + i as u64, h, w))
            .collect()
    }

    fn stack_inner(a: &[ComplexField], b: &[ComplexField]) -> Complex64 {
        a.iter().zip(b).map(|(p, q)| p.inner(q)).sum()
    }

    fn stack_norm(a: &[ComplexField]) -> f64 {
        a.iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt()
    }

    fn ones_mask(h: usize, w: usize) -> MaskSet {
        MaskSet::from_masks(0, vec![ComplexField::new(h, w, vec![ONE; h * w]).unwrap()]).unwrap()
    }

    #[test]
    fn masks_have_unit_modulus_and_are_reproducible() {
        let a = MaskSet::from_seed(11, 4, 16, 16).unwrap();
        let b = MaskSet::from_seed(11, 4, 16, 16).unwrap();
        assert_eq!(a, b);
        for m in a.masks() {
            for d in m.data() {
                assert!((d.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert_ne!(a, MaskSet::from_seed(12, 4, 16, 16).unwrap());
    }

    #[test]
    fn zero_masks_rejected() {
        let mut rng = SeededRng::new(0, 0);
        assert!(matches!(
            make_cdp_masks(&mut rng, 0, 4, 4),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            make_cdp_masks(&mut rng, 1, 6, 4),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mask_arguments_pass_ks_test() {
        let masks = MaskSet::from_seed(2024, 1, 64, 64).unwrap();
        let mut u: Vec<f64> = masks
            .mask(0)
            .data()
            .iter()
            .map(|d| d.arg().rem_euclid(2.0 * PI) / (2.0 * PI))
            .collect();
        u.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = u.len() as f64;
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
            .fold(0.0, f64::max);
        // asymptotic 1% critical value 1.628 / sqrt(n)
        let critical = 1.628 / n.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn fixed_single_ones_mask_delta() {
        let masks = ones_mask(2, 2);
        let op = MeasurementOperator::new(OperatorMode::Fixed, 2, 2, false).unwrap();
        let mut x = ComplexField::zeros(2, 2);
        x.data_mut()[0] = ONE;
        let out = op.apply(&x, &masks).unwrap();
        assert_eq!(out.len(), 1);
        for v in out[0].data() {
            assert_eq!(*v, Complex64::new(0.5, 0.0));
        }
    }

    #[test]
    fn structured_identity_gain_matches_fixed() {
        let masks = MaskSet::from_seed(3, 4, 8, 8).unwrap();
        let x = random_complex(4, 8, 8);
        let fixed = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false).unwrap();
        let structured = MeasurementOperator::new(OperatorMode::Structured, 8, 8, false).unwrap();
        assert_eq!(
            fixed.apply(&x, &masks).unwrap(),
            structured.apply(&x, &masks).unwrap()
        );
        let z = random_stack(5, 4, 8, 8);
        assert_eq!(
            fixed.adjoint(&z, &masks).unwrap(),
            structured.adjoint(&z, &masks).unwrap()
        );
    }

    /// Explicit-matrix oracle: builds the DFT matrix entrywise from the
    /// definition and multiplies, independent of `dft_matrix`/`matvec`.
    fn oracle_dense_channel(x: &ComplexField, d: &ComplexField) -> Vec<Complex64> {
        let (h, w) = x.shape();
        let n = h * w;
        let mut out = vec![ZERO; n];
        for (k, o) in out.iter_mut().enumerate() {
            for l in 0..n {
                let theta = -2.0
                    * PI
                    * (((k / w) * (l / w)) as f64 / h as f64
                        + ((k % w) * (l % w)) as f64 / w as f64);
                *o += Complex64::from_polar(1.0 / (n as f64).sqrt(), theta)
                    * d.data()[l]
                    * x.data()[l];
            }
        }
        out
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn dense_dft_init_matches_fixed_and_oracle() {
        let masks = MaskSet::from_seed(6, 2, 4, 4).unwrap();
        let x = random_complex(7, 4, 4);
        let dense = MeasurementOperator::new(OperatorMode::Dense, 4, 4, false).unwrap();
        let fixed = MeasurementOperator::new(OperatorMode::Fixed, 4, 4, false).unwrap();
        let a = dense.apply(&x, &masks).unwrap();
        let b = fixed.apply(&x, &masks).unwrap();
        for j in 0..2 {
            let oracle = oracle_dense_channel(&x, masks.mask(j));
            for i in 0..16 {
                assert!((a[j].data()[i] - b[j].data()[i]).norm() < 1e-12);
                assert!((a[j].data()[i] - oracle[i]).norm() < 1e-12);
            }
        }
        let z = random_stack(8, 2, 4, 4);
        let ad = dense.adjoint(&z, &masks).unwrap();
        let af = fixed.adjoint(&z, &masks).unwrap();
        for (p, q) in ad.data().iter().zip(af.data()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn dense_guard() {
        assert!(MeasurementOperator::new(OperatorMode::Dense, 128, 64, false).is_err());
    }

    #[test]
    fn adjoint_identity_all_modes() {
        let masks = MaskSet::from_seed(9, 4, 8, 8).unwrap();
        for mode in [
            OperatorMode::Fixed,
            OperatorMode::Structured,
            OperatorMode::Dense,
        ] {
            let op = MeasurementOperator::new(mode, 8, 8, false).unwrap();
            let x = random_complex(10, 8, 8);
            let z = random_stack(11, 4, 8, 8);
            let lhs = stack_inner(&op.apply(&x, &masks).unwrap(), &z);
            let rhs = x.inner(&op.adjoint(&z, &masks).unwrap());
            assert!(
                (lhs - rhs).norm() <= 1e-12 * x.norm() * stack_norm(&z),
                "{mode}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn tied_adjoint_is_true_adjoint_after_perturbation() {
        let masks = MaskSet::from_seed(12, 3, 4, 4).unwrap();
        let mut rng = SeededRng::new(13, 0);
        for mode in [OperatorMode::Structured, OperatorMode::Dense] {
            let mut op = MeasurementOperator::new(mode, 4, 4, true).unwrap();
            for g in op.forward_tensor_mut() {
                *g += Complex64::new(0.3 * rng.normal(), 0.3 * rng.normal());
            }
            let x = random_complex(14, 4, 4);
            let z = random_stack(15, 3, 4, 4);
            let lhs = stack_inner(&op.apply(&x, &masks).unwrap(), &z);
            let rhs = x.inner(&op.adjoint(&z, &masks).unwrap());
            assert!((lhs - rhs).norm() <= 1e-12 * x.norm() * stack_norm(&z));
        }
    }

    #[test]
    fn zeros_in_zeros_out() {
        let masks = MaskSet::from_seed(1, 4, 8, 8).unwrap();
        let op = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false).unwrap();
        let z = vec![ComplexField::zeros(8, 8); 4];
        assert_eq!(op.adjoint(&z, &masks).unwrap(), ComplexField::zeros(8, 8));
    }

    #[test]
    fn single_ones_mask_is_isometric_composition() {
        let masks = ones_mask(8, 8);
        let op = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false).unwrap();
        let x = random_complex(16, 8, 8);
        let back = op.adjoint(&op.apply(&x, &masks).unwrap(), &masks).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn energy_is_j_times_input() {
        let masks = MaskSet::from_seed(17, 4, 8, 8).unwrap();
        let op = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false).unwrap();
        let x = random_complex(18, 8, 8);
        let out = op.apply(&x, &masks).unwrap();
        for ch in &out {
            assert!((ch.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        }
        let energy: f64 = out.iter().map(|c| c.norm().powi(2)).sum();
        assert!((energy - 4.0 * x.norm().powi(2)).abs() <= 1e-12 * energy);
    }

    #[test]
    fn shape_mismatch_errors() {
        let masks = MaskSet::from_seed(1, 2, 8, 8).unwrap();
        let op = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false).unwrap();
        assert!(matches!(
            op.apply(&ComplexField::zeros(4, 4), &masks),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            op.adjoint(&[ComplexField::zeros(8, 8)], &masks),
            Err(Error::Dimension(_))
        ));
    }

    fn random_image(seed: u64, h: usize, w: usize) -> RealImage {
        RealImage::new(h, w, SeededRng::new(seed, 0).uniform_vec(h * w)).unwrap()
    }

    #[test]
    fn noiseless_measure_is_exact_and_sign_blind() {
        let masks = MaskSet::from_seed(19, 4, 8, 8).unwrap();
        let x = random_image(20, 8, 8);
        let y = measure(&x, &masks, 0.0, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(y.values(), magnitudes(&x, &masks).unwrap().as_slice());
        let neg = RealImage::new(8, 8, x.data().iter().map(|v| -v).collect()).unwrap();
        let y_neg = measure(&neg, &masks, 0.0, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(y.values(), y_neg.values());
        assert_eq!(y.mask_seed(), 19);
    }

    #[test]
    fn negative_alpha_rejected() {
        let masks = MaskSet::from_seed(1, 1, 4, 4).unwrap();
        let x = RealImage::zeros(4, 4);
        assert!(matches!(
            measure(&x, &masks, -1.0, &mut SeededRng::new(0, 0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn noise_variance_tracks_signal() {
        // 4 masks x 128 x 128 = 65536 entries per image; two images exceed 1e5.
        // Checked on the additive term: clamping at zero trims the lower tail.
        let masks = MaskSet::from_seed(21, 4, 128, 128).unwrap();
        let mut rng = SeededRng::new(22, 0);
        let mut sq = 0.0;
        let mut expected = 0.0;
        let mut count = 0usize;
        for k in 0..2 {
            let x = random_image(23 + k, 128, 128);
            let clean = magnitudes(&x, &masks).unwrap();
            for (w, c) in sample_noise(&clean, 81.0, &mut rng).iter().zip(&clean) {
                sq += w * w;
                expected += 81.0 / 255.0 * c;
                count += 1;
            }
        }
        assert!(count >= 100_000);
        let ratio = sq / expected;
        assert!((0.95..=1.05).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn noisy_measure_is_clamped_sum_of_signal_and_noise() {
        let masks = MaskSet::from_seed(30, 4, 16, 16).unwrap();
        let x = random_image(31, 16, 16);
        let clean = magnitudes(&x, &masks).unwrap();
        let y = measure(&x, &masks, 81.0, &mut SeededRng::new(32, 0)).unwrap();
        let w = sample_noise(&clean, 81.0, &mut SeededRng::new(32, 0));
        let mut clipped = 0;
        for ((yv, c), wv) in y.values().iter().zip(&clean).zip(&w) {
            assert_eq!(*yv, (c + wv).max(0.0));
            if c + wv < 0.0 {
                clipped += 1;
            }
        }
        assert!(clipped > 0);
    }

    #[test]
    fn measurement_is_deterministic() {
        let masks = MaskSet::from_seed(1, 4, 8, 8).unwrap();
        let x = random_image(2, 8, 8);
        let a = measure(&x, &masks, 27.0, &mut SeededRng::new(5, 1)).unwrap();
        let b = measure(&x, &masks, 27.0, &mut SeededRng::new(5, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| *v >= 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tied_structured_adjoint_identity(
                seed in 0u64..1_000_000,
                hp in 1u32..4,
                wp in 1u32..4,
                j in 1usize..5,
            ) {
                let (h, w) = (1 << hp, 1 << wp);
                let mut op = MeasurementOperator::new(OperatorMode::Structured, h, w, true).unwrap();
                let mut rng = SeededRng::new(seed, 7);
                for g in op.forward_tensor_mut() {
                    *g = Complex64::new(rng.normal(), rng.normal());
                }
                let masks = MaskSet::from_seed(seed, j, h, w).unwrap();
                let x = random_complex(seed, h, w);
                let z = random_stack(seed + 1, j, h, w);
                let lhs = stack_inner(&op.apply(&x, &masks).unwrap(), &z);
                let rhs = x.inner(&op.adjoint(&z, &masks).unwrap());
                prop_assert!((lhs - rhs).norm() <= 1e-12 * x.norm() * stack_norm(&z));
            }

            #[test]
            fn measurements_are_nonnegative_and_exact_without_noise(
                seed in 0u64..1_000_000,
                alpha in prop::sample::select(vec![0.0, 9.0, 27.0, 81.0]),
            ) {
                let masks = MaskSet::from_seed(seed, 3, 8, 8).unwrap();
                let x = random_image(seed, 8, 8);
                let y = measure(&x, &masks, alpha, &mut SeededRng::new(seed, 1)).unwrap();
                prop_assert!(y.values().iter().all(|v| *v >= 0.0));
                if alpha == 0.0 {
                    prop_assert_eq!(y.values(), &magnitudes(&x, &masks).unwrap()[..]);
                }
            }
        }
    }
}
