//! Real and complex 2D arrays plus the unitary 2D DFT.
//!
//! Both transform directions are scaled by `1/sqrt(N)`, so the forward
//! transform is an isometry and its adjoint is its inverse.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real-valued single-channel image, row-major, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "image data has {} values, expected {}x{}={}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Clamp every pixel into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Complex-valued 2D field, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "field data has {} values, expected {}x{}={}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Real part as an image.
    pub fn re(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    /// Imaginary part as an image.
    pub fn im(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.im).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Hermitian inner product `<self, other> = sum conj(self_i) * other_i`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

pub(crate) fn check_pow2(height: usize, width: usize) -> Result<()> {
    if !is_power_of_two(height) || !is_power_of_two(width) {
        return Err(Error::dim(format!(
            "dimensions must be powers of two, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Unitary 2D DFT.
pub fn fft2_unitary(x: &ComplexField) -> Result<ComplexField> {
    let mut out = x.clone();
    fft2_inplace(&mut out, false)?;
    Ok(out)
}

/// Unitary inverse 2D DFT; also the adjoint of [`fft2_unitary`].
pub fn ifft2_unitary(x: &ComplexField) -> Result<ComplexField> {
    let mut out = x.clone();
    fft2_inplace(&mut out, true)?;
    Ok(out)
}

/// In-place unitary 2D transform.
pub fn fft2_inplace(field: &mut ComplexField, inverse: bool) -> Result<()> {
    let (h, w) = field.shape();
    check_pow2(h, w)?;
    let row_tw = twiddles(w, inverse);
    for row in field.data.chunks_exact_mut(w) {
        fft1_inplace(row, &row_tw);
    }
    if h > 1 {
        let col_tw = twiddles(h, inverse);
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for (r, v) in col.iter_mut().enumerate() {
                *v = field.data[r * w + c];
            }
            fft1_inplace(&mut col, &col_tw);
            for (r, v) in col.iter().enumerate() {
                field.data[r * w + c] = *v;
            }
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut field.data {
        *v *= scale;
    }
    Ok(())
}

fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| {
            let theta = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect()
}

/// Unnormalized iterative radix-2 transform; `tw` holds `n/2` twiddles.
fn fft1_inplace(buf: &mut [Complex64], tw: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = tw[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_field(seed: u64, h: usize, w: usize) -> ComplexField {
        let mut rng = SeededRng::new(seed, 0);
        let data = (0..h * w).map(|_| c(rng.normal(), rng.normal())).collect();
        ComplexField::new(h, w, data).unwrap()
    }

    /// Direct O(N^2) DFT used as an independent reference.
    fn naive_dft2(x: &ComplexField) -> ComplexField {
        let (h, w) = x.shape();
        let mut out = ComplexField::zeros(h, w);
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for u in 0..h {
            for v in 0..w {
                let mut acc = c(0.0, 0.0);
                for r in 0..h {
                    for s in 0..w {
                        let theta = -2.0
                            * std::f64::consts::PI
                            * ((u * r) as f64 / h as f64 + (v * s) as f64 / w as f64);
                        acc += x.data()[r * w + s] * Complex64::from_polar(1.0, theta);
                    }
                }
                out.data_mut()[u * w + v] = acc * scale;
            }
        }
        out
    }

    #[test]
    fn delta_maps_to_flat_half() {
        let mut x = ComplexField::zeros(2, 2);
        x.data_mut()[0] = c(1.0, 0.0);
        let y = fft2_unitary(&x).unwrap();
        for v in y.data() {
            assert_eq!(*v, c(0.5, 0.0));
        }
    }

    #[test]
    fn constant_maps_to_dc() {
        let x = ComplexField::new(2, 2, vec![c(0.7, 0.0); 4]).unwrap();
        let y = fft2_unitary(&x).unwrap();
        assert!((y.data()[0] - c(1.4, 0.0)).norm() < 1e-15);
        for v in &y.data()[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn delta_spectrum_inverts_to_flat_half() {
        let mut x = ComplexField::zeros(2, 2);
        x.data_mut()[0] = c(1.0, 0.0);
        let y = ifft2_unitary(&x).unwrap();
        for v in y.data() {
            assert_eq!(*v, c(0.5, 0.0));
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let x = ComplexField::zeros(4, 8);
        assert_eq!(ifft2_unitary(&x).unwrap(), x);
        assert_eq!(fft2_unitary(&x).unwrap(), x);
    }

    #[test]
    fn roundtrip_random_8x8() {
        let x = random_field(1, 8, 8);
        let back = ifft2_unitary(&fft2_unitary(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_random_8x8() {
        let x = random_field(2, 8, 8);
        let z = random_field(3, 8, 8);
        let lhs = fft2_unitary(&x).unwrap().inner(&z);
        let rhs = x.inner(&ifft2_unitary(&z).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * x.norm() * z.norm());
    }

    #[test]
    fn matches_naive_dft_on_rectangular_grid() {
        let x = random_field(4, 4, 8);
        let fast = fft2_unitary(&x).unwrap();
        let slow = naive_dft2(&x);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let x = ComplexField::zeros(3, 4);
        assert!(matches!(fft2_unitary(&x), Err(Error::Dimension(_))));
        assert!(matches!(ifft2_unitary(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(RealImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ComplexField::new(2, 2, vec![c(0.0, 0.0); 5]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parseval(seed in any::<u64>(), hp in 0u32..5, wp in 0u32..5) {
                let x = random_field(seed, 1 << hp, 1 << wp);
                let y = fft2_unitary(&x).unwrap();
                prop_assert!((y.norm() - x.norm()).abs() <= 1e-12 * x.norm());
            }

            #[test]
            fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let x = random_field(seed, 8, 8);
                let y = random_field(seed.wrapping_add(1), 8, 8);
                let combo = ComplexField::new(
                    8, 8,
                    x.data().iter().zip(y.data()).map(|(p, q)| p * a + q * b).collect(),
                ).unwrap();
                let lhs = fft2_unitary(&combo).unwrap();
                let fx = fft2_unitary(&x).unwrap();
                let fy = fft2_unitary(&y).unwrap();
                for i in 0..64 {
                    let rhs = fx.data()[i] * a + fy.data()[i] * b;
                    prop_assert!((lhs.data()[i] - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
                }
            }
        }
    }
}
