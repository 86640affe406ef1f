//! Transport-noise basis `σ_k(x) = (cos k·x + sin k·x) k⊥ / |k|^β` over all
//! `k ∈ ℤ² \ {0}` with `|k| ≤ cutoff`, its infinitesimal covariance
//! `a(x, y) = Σ σ_k(x) ⊗ σ_k(y)` and the first-order Itô–Stratonovich term.
//!
//! Keeping both `k` and `−k` makes the basis symmetric under `k → −k` and
//! under coordinate swaps, which is what makes `a(x, x)` a multiple of the
//! identity and kills `∂_y a(x, y)|_{y=x}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{index_of, Spectrum};
use crate::torus::TorusPoint;

pub type CovMatrix = [[f64; 2]; 2];

#[derive(Debug, Clone)]
pub struct NoiseBasis {
    beta: f64,
    cutoff: usize,
    modes: Vec<[i64; 2]>,
    /// `|k|^{-β}` per mode.
    amplitude: Vec<f64>,
    c: f64,
    c1_sum: f64,
}

/// What gets echoed into run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub enabled: bool,
    pub beta: f64,
    pub cutoff: usize,
    pub modes: usize,
    pub c: f64,
    pub c1_sum: f64,
}

impl NoiseBasis {
    pub fn new(beta: f64, cutoff: usize) -> Result<Self> {
        if !(beta > 3.0) || !beta.is_finite() {
            return Err(Error::param(
                "beta",
                format!("β = {beta}: need β > 3 so that Σ‖σ_k‖²_C¹ converges"),
            ));
        }
        if cutoff == 0 {
            return Err(Error::param("cutoff", "noise cutoff must be ≥ 1"));
        }
        let kmax = cutoff as i64;
        let mut modes = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                let m2 = k1 * k1 + k2 * k2;
                if m2 > 0 && m2 <= kmax * kmax {
                    modes.push([k1, k2]);
                }
            }
        }
        // ordered by |k|, then lexicographically
        modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
        let amplitude: Vec<f64> = modes
            .iter()
            .map(|k| ((k[0] * k[0] + k[1] * k[1]) as f64).powf(-beta / 2.0))
            .collect();
        let c1_sum = modes
            .iter()
            .zip(&amplitude)
            .map(|(k, a)| {
                let norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
                // sup|σ_k| = √2|k|^{1−β}, sup|Dσ_k| = √2|k|^{2−β}
                let c1 = std::f64::consts::SQRT_2 * a * (norm + norm * norm);
                c1 * c1
            })
            .sum();
        let mut basis = Self {
            beta,
            cutoff,
            modes,
            amplitude,
            c: 0.0,
            c1_sum,
        };
        basis.c = basis.covariance(TorusPoint::new(0.0, 0.0), TorusPoint::new(0.0, 0.0))[0][0];
        Ok(basis)
    }

    /// The empty basis: no noise, `c = 0`.
    pub fn disabled() -> Self {
        Self {
            beta: f64::NAN,
            cutoff: 0,
            modes: Vec::new(),
            amplitude: Vec::new(),
            c: 0.0,
            c1_sum: 0.0,
        }
    }

    pub fn is_enabled(&self) -> bool {
        !self.modes.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> &[[i64; 2]] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Diagonal of `a(x, x)`, measured by direct summation.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `Σ_k ‖σ_k‖²_C¹` with `‖σ‖_C¹ = sup|σ| + sup|Dσ|`.
    pub fn c1_sum(&self) -> f64 {
        self.c1_sum
    }

    pub fn summary(&self) -> BasisSummary {
        BasisSummary {
            enabled: self.is_enabled(),
            beta: self.beta,
            cutoff: self.cutoff,
            modes: self.modes.len(),
            c: self.c,
            c1_sum: self.c1_sum,
        }
    }

    #[inline]
    fn phase(k: [i64; 2], x: TorusPoint) -> f64 {
        k[0] as f64 * x.x1 + k[1] as f64 * x.x2
    }

    /// `σ_k(x)` for mode number `m`.
    pub fn sigma(&self, m: usize, x: TorusPoint) -> [f64; 2] {
        let k = self.modes[m];
        let (s, c) = Self::phase(k, x).sin_cos();
        let f = (c + s) * self.amplitude[m];
        [-(k[1] as f64) * f, k[0] as f64 * f]
    }

    /// `∂_l σ_k^j(x)` as `[l][j]`.
    pub fn sigma_jacobian(&self, m: usize, x: TorusPoint) -> [[f64; 2]; 2] {
        let k = self.modes[m];
        let (s, c) = Self::phase(k, x).sin_cos();
        let f = (c - s) * self.amplitude[m];
        let perp = [-(k[1] as f64), k[0] as f64];
        let mut out = [[0.0; 2]; 2];
        for l in 0..2 {
            for j in 0..2 {
                out[l][j] = k[l] as f64 * perp[j] * f;
            }
        }
        out
    }

    pub fn covariance(&self, x: TorusPoint, y: TorusPoint) -> CovMatrix {
        let mut a = [[0.0; 2]; 2];
        for m in 0..self.modes.len() {
            let (sx, sy) = (self.sigma(m, x), self.sigma(m, y));
            for i in 0..2 {
                for j in 0..2 {
                    a[i][j] += sx[i] * sy[j];
                }
            }
        }
        a
    }

    /// `∂_{y_l} a^{ij}(x, y)` at `y = x`, indexed `[l][i][j]`.
    pub fn covariance_y_derivative_at_diagonal(&self, x: TorusPoint) -> [[[f64; 2]; 2]; 2] {
        let mut out = [[[0.0; 2]; 2]; 2];
        for m in 0..self.modes.len() {
            let s = self.sigma(m, x);
            let ds = self.sigma_jacobian(m, x);
            for l in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        out[l][i][j] += s[i] * ds[l][j];
                    }
                }
            }
        }
        out
    }

    /// `½ Σ_k (σ_k·∇) σ_k` at `x`.
    pub fn strat_drift_correction(&self, x: TorusPoint) -> [f64; 2] {
        let mut out = [0.0; 2];
        for m in 0..self.modes.len() {
            let s = self.sigma(m, x);
            let ds = self.sigma_jacobian(m, x);
            for j in 0..2 {
                out[j] += 0.5 * (s[0] * ds[0][j] + s[1] * ds[1][j]);
            }
        }
        out
    }

    /// One Wiener increment per mode, each `N(0, dt)`.
    pub fn sample_noise_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Vec<f64> {
        let scale = dt.max(0.0).sqrt();
        self.modes
            .iter()
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                scale * z
            })
            .collect()
    }

    /// Noise displacement `Σ_k σ_k(x) w_k`.
    pub fn field_at(&self, x: TorusPoint, weights: &[f64]) -> [f64; 2] {
        debug_assert_eq!(weights.len(), self.modes.len());
        if self.modes.is_empty() {
            return [0.0; 2];
        }
        let kmax = self.cutoff;
        let e1: Vec<Complex64> = (0..=kmax)
            .map(|m| Complex64::from_polar(1.0, m as f64 * x.x1))
            .collect();
        let e2: Vec<Complex64> = (0..=kmax)
            .map(|m| Complex64::from_polar(1.0, m as f64 * x.x2))
            .collect();
        let mut out = [0.0; 2];
        for ((k, amp), w) in self.modes.iter().zip(&self.amplitude).zip(weights) {
            let a = pow_signed(&e1, k[0]);
            let b = pow_signed(&e2, k[1]);
            let z = a * b;
            let f = (z.re + z.im) * amp * w;
            out[0] -= k[1] as f64 * f;
            out[1] += k[0] as f64 * f;
        }
        out
    }

    /// Fourier coefficients of `Σ_k σ_k w_k` on an `n`-grid, one spectrum per
    /// component.
    pub fn field_spectrum(&self, n: usize, weights: &[f64]) -> [Spectrum; 2] {
        let mut out = [Spectrum::zeros(n), Spectrum::zeros(n)];
        // cos θ + sin θ = ((1−i)/2) e^{iθ} + ((1+i)/2) e^{−iθ}
        let plus = Complex64::new(0.5, -0.5);
        let minus = Complex64::new(0.5, 0.5);
        for ((k, amp), w) in self.modes.iter().zip(&self.amplitude).zip(weights) {
            let perp = [-(k[1] as f64), k[0] as f64];
            let ip = index_of(k[1], n) * n + index_of(k[0], n);
            let im = index_of(-k[1], n) * n + index_of(-k[0], n);
            for c in 0..2 {
                let a = perp[c] * amp * w;
                out[c].coeffs_mut()[ip] += plus * a;
                out[c].coeffs_mut()[im] += minus * a;
            }
        }
        out
    }
}

/// Counter-based source of Wiener increments for one ensemble member.
///
/// The increments of step `s` come from their own ChaCha stream, so any step
/// can be regenerated on demand and members never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    member: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, member: u64) -> Self {
        Self { seed, member }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn member(&self) -> u64 {
        self.member
    }

    fn rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(self.member)));
        rng.set_stream(step);
        rng
    }

    /// `ΔW` of step `step` with spacing `dt`.
    pub fn increments(&self, basis: &NoiseBasis, step: u64, dt: f64) -> Vec<f64> {
        basis.sample_noise_increment(dt, &mut self.rng(step))
    }

    /// `ΔW` over `[step·dt, (step+1)·dt]` as the sum of the `factor` finer
    /// increments, so that runs at `dt` and `dt/factor` see the same path.
    pub fn coarse_increments(&self, basis: &NoiseBasis, step: u64, dt: f64, factor: u64) -> Vec<f64> {
        let fine = dt / factor as f64;
        let mut out = vec![0.0; basis.len()];
        for s in 0..factor {
            for (o, w) in out.iter_mut().zip(self.increments(basis, step * factor + s, fine)) {
                *o += w;
            }
        }
        out
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn pow_signed(table: &[Complex64], k: i64) -> Complex64 {
    let z = table[k.unsigned_abs() as usize];
    if k < 0 {
        z.conj()
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn basis() -> NoiseBasis {
        NoiseBasis::new(4.0, 8).unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let b = basis();
        let s = NoiseStream::new(7, 0);
        assert_eq!(s.increments(&b, 5, 0.01), s.increments(&b, 5, 0.01));
        assert_ne!(s.increments(&b, 5, 0.01), s.increments(&b, 6, 0.01));
        assert_ne!(
            s.increments(&b, 5, 0.01),
            NoiseStream::new(7, 1).increments(&b, 5, 0.01)
        );
        let coarse = s.coarse_increments(&b, 3, 0.02, 2);
        let (a, c) = (s.increments(&b, 6, 0.01), s.increments(&b, 7, 0.01));
        for m in 0..b.len() {
            assert_eq!(coarse[m], 0.0 + a[m] + c[m]);
        }
    }

    #[test]
    fn increment_variance_is_dt() {
        let b = NoiseBasis::new(4.0, 2).unwrap();
        let s = NoiseStream::new(11, 3);
        let dt = 0.25;
        let (mut sum, mut sq, mut count) = (0.0, 0.0, 0.0);
        for step in 0..20_000 {
            for w in s.increments(&b, step, dt) {
                sum += w;
                sq += w * w;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sq / count - mean * mean;
        // standard errors: sqrt(dt/count) for the mean, dt·sqrt(2/count) for the variance
        assert!(mean.abs() < 4.0 * (dt / count).sqrt());
        assert!((var - dt).abs() < 4.0 * dt * (2.0 / count).sqrt());
    }

    #[test]
    fn rejects_small_beta() {
        assert!(NoiseBasis::new(3.0, 8).is_err());
        assert!(NoiseBasis::new(2.5, 8).is_err());
        assert!(NoiseBasis::new(f64::NAN, 8).is_err());
        assert!(NoiseBasis::new(4.0, 0).is_err());
    }

    #[test]
    fn sigma_at_origin() {
        let b = basis();
        let m = b.modes().iter().position(|k| *k == [1, 0]).unwrap();
        let s = b.sigma(m, TorusPoint::new(0.0, 0.0));
        assert_eq!(s, [0.0, 1.0]);
    }

    #[test]
    fn c_is_diagonal_of_covariance() {
        let b = basis();
        for x in [TorusPoint::new(0.3, 1.1), TorusPoint::new(2.0, 0.5)] {
            let a = b.covariance(x, x);
            assert!((a[0][0] - b.c()).abs() < 1e-10);
            assert!((a[1][1] - b.c()).abs() < 1e-10);
            assert!(a[0][1].abs() < 1e-10 && a[1][0].abs() < 1e-10);
        }
        assert!(b.c() > 0.0);
    }

    #[test]
    fn direct_c_matches_full_lattice_closed_form() {
        // a(x, x) = Σ k⊥⊗k⊥ / |k|^{2β}; by symmetry each diagonal entry is
        // half the trace
        let b = basis();
        let half_trace: f64 = b
            .modes()
            .iter()
            .map(|k| 0.5 * ((k[0] * k[0] + k[1] * k[1]) as f64).powf(1.0 - 4.0))
            .sum();
        assert!((b.c() - half_trace).abs() < 1e-13);
    }

    #[test]
    fn covariance_transpose_symmetry() {
        let b = basis();
        let x = TorusPoint::new(0.4, 5.0);
        let y = TorusPoint::new(3.3, 1.2);
        let a = b.covariance(x, y);
        let at = b.covariance(y, x);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(a[i][j], at[j][i]);
            }
        }
    }

    #[test]
    fn a3_and_strat_correction_vanish() {
        let b = basis();
        for x in [
            TorusPoint::new(0.0, 0.0),
            TorusPoint::new(1.7, 2.9),
            TorusPoint::new(0.3, 0.7),
            TorusPoint::new(PI, PI / 2.0),
        ] {
            let d = b.covariance_y_derivative_at_diagonal(x);
            assert!(d.iter().flatten().flatten().all(|v| v.abs() < 1e-10));
            let s = b.strat_drift_correction(x);
            assert!(s[0].abs() < 1e-10 && s[1].abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = basis();
        let x = TorusPoint::new(1.3, 4.1);
        let h = 1e-6;
        for m in [0, 7, b.len() - 1] {
            let jac = b.sigma_jacobian(m, x);
            for l in 0..2 {
                let mut e = [0.0; 2];
                e[l] = h;
                let p = b.sigma(m, x.translate(e));
                e[l] = -h;
                let q = b.sigma(m, x.translate(e));
                for j in 0..2 {
                    let fd = (p[j] - q[j]) / (2.0 * h);
                    assert!((fd - jac[l][j]).abs() < 1e-6, "mode {m}: {fd} vs {}", jac[l][j]);
                }
            }
        }
    }

    #[test]
    fn field_evaluation_routes_agree() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = b.sample_noise_increment(0.1, &mut rng);
        let x = TorusPoint::new(2.2, 0.9);
        let fast = b.field_at(x, &w);
        let mut slow = [0.0; 2];
        for (m, wm) in w.iter().enumerate() {
            let s = b.sigma(m, x);
            slow[0] += s[0] * wm;
            slow[1] += s[1] * wm;
        }
        assert!((fast[0] - slow[0]).abs() < 1e-12 && (fast[1] - slow[1]).abs() < 1e-12);

        let [s1, s2] = b.field_spectrum(32, &w);
        let (g1, g2) = (s1.to_grid(), s2.to_grid());
        let (i, j) = (5, 21);
        let node = TorusPoint::new(g1.node(i, j)[0], g1.node(i, j)[1]);
        let direct = b.field_at(node, &w);
        assert!((g1.values()[j * 32 + i] - direct[0]).abs() < 1e-12);
        assert!((g2.values()[j * 32 + i] - direct[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_dt_increments_vanish() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(b.sample_noise_increment(0.0, &mut rng).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn increments_deterministic_per_seed() {
        let b = basis();
        let a = b.sample_noise_increment(0.01, &mut ChaCha8Rng::seed_from_u64(77));
        let c = b.sample_noise_increment(0.01, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn c1_sum_converges_in_cutoff_and_decreases_in_beta() {
        let a = NoiseBasis::new(4.0, 8).unwrap().c1_sum();
        let b = NoiseBasis::new(4.0, 16).unwrap().c1_sum();
        assert!(b > a);
        assert!((b - a) / a < 0.01, "{a} {b}");
        let steeper = NoiseBasis::new(5.0, 8).unwrap().c1_sum();
        assert!(steeper < a);
    }
}
