//! Uniform periodic grids and their Fourier coefficients.
//!
//! Grid values are stored row-major: `values[j * n + i]` is the sample at
//! `x = (i·h, j·h)` with `h = 2π/n`. A [`Spectrum`] uses the same layout
//! with index `i` carrying `k₁` and `j` carrying `k₂`, and holds normalized
//! coefficients `ξ̂(k) = n⁻² Σ ξ(x) e^{-ik·x}`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::torus::TWO_PI;

/// Signed wavenumber carried by array index `idx` on an `n`-point axis.
#[inline]
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Array index of wavenumber `k` on an `n`-point axis (aliased modulo n).
#[inline]
pub fn index_of(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Strictly resolved: `|k| < n/2`, Nyquist excluded.
#[inline]
pub fn resolved(k: i64, n: usize) -> bool {
    k.unsigned_abs() < (n / 2) as u64
}

/// Two-dimensional complex FFT on a square grid.
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::default(); len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, `Σ f(x) e^{-ik·x}`.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    /// Unnormalized inverse transform, `Σ f̂(k) e^{ik·x}`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    fn run(&mut self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.n * self.n);
        let plan = if forward { &self.forward } else { &self.inverse };
        plan.process_with_scratch(data, &mut self.scratch);
        transpose(data, self.n);
        plan.process_with_scratch(data, &mut self.scratch);
        transpose(data, self.n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in (j + 1)..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

/// Real scalar field sampled on a uniform periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    n: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 || values.len() != n * n {
            return Err(Error::param(
                "values",
                format!("expected {}×{} samples, got {}", n, n, values.len()),
            ));
        }
        Ok(Self { n, values })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = TWO_PI / n as f64;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(i as f64 * h, j as f64 * h));
            }
        }
        Self { n, values }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [i as f64 * h, j as f64 * h]
    }

    /// Grid quadrature of `∫ ξ dx`.
    pub fn integral(&self) -> f64 {
        let h = self.spacing();
        self.values.iter().sum::<f64>() * h * h
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn spectrum(&self) -> Spectrum {
        let mut fft = Fft2::new(self.n);
        self.spectrum_with(&mut fft)
    }

    pub fn spectrum_with(&self, fft: &mut Fft2) -> Spectrum {
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        Spectrum {
            n: self.n,
            coeffs: data,
        }
    }
}

/// Normalized Fourier coefficients of a grid field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    n: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coeffs: vec![Complex64::default(); n * n],
        }
    }

    pub fn from_coeffs(n: usize, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), n * n);
        Self { n, coeffs }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Wavenumber of flat index `idx`.
    #[inline]
    pub fn wavevector(&self, idx: usize) -> [i64; 2] {
        [wavenumber(idx % self.n, self.n), wavenumber(idx / self.n, self.n)]
    }

    /// Coefficient of a strictly resolved mode, `None` otherwise.
    pub fn coefficient(&self, k: [i64; 2]) -> Option<Complex64> {
        if resolved(k[0], self.n) && resolved(k[1], self.n) {
            Some(self.coeffs[index_of(k[1], self.n) * self.n + index_of(k[0], self.n)])
        } else {
            None
        }
    }

    pub fn set(&mut self, k: [i64; 2], value: Complex64) {
        let idx = index_of(k[1], self.n) * self.n + index_of(k[0], self.n);
        self.coeffs[idx] = value;
    }

    /// `Σ |ξ̂(k)|²` over all stored modes.
    pub fn l2_squared(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn to_grid(&self) -> GridField {
        let mut fft = Fft2::new(self.n);
        self.to_grid_with(&mut fft)
    }

    pub fn to_grid_with(&self, fft: &mut Fft2) -> GridField {
        let data = self.synthesize(fft);
        GridField {
            n: self.n,
            values: data.iter().map(|c| c.re).collect(),
        }
    }

    /// Largest imaginary part left after synthesis; zero for a Hermitian
    /// spectrum up to rounding.
    pub fn imaginary_residue(&self) -> f64 {
        let mut fft = Fft2::new(self.n);
        self.synthesize(&mut fft).iter().fold(0.0, |m, c| m.max(c.im.abs()))
    }

    fn synthesize(&self, fft: &mut Fft2) -> Vec<Complex64> {
        let mut data = self.coeffs.clone();
        fft.inverse(&mut data);
        data
    }
}

/// Real field with independent uniform coefficients on `|k_i| ≤ kmax`,
/// reproducible from `seed`.
pub fn random_band_limited(n: usize, kmax: i64, seed: u64) -> GridField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Spectrum::zeros(n);
    for k1 in -kmax..=kmax {
        for k2 in 0..=kmax {
            if k2 == 0 && k1 < 0 {
                continue;
            }
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let z = if k1 == 0 && k2 == 0 {
                Complex64::new(z.re, 0.0)
            } else {
                z
            };
            spec.set([k1, k2], z);
            spec.set([-k1, -k2], z.conj());
        }
    }
    spec.to_grid()
}
