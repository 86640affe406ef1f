//! Pseudo-spectral solver for the Itô form of the stochastic vorticity
//! equation
//!
//! ```text
//! dξ + u·∇ξ dt + Σ_k σ_k·∇ξ dW^k = ½ c Δξ dt,      u = K ∗ ξ.
//! ```
//!
//! Euler–Maruyama with an integrating factor for the diffusion:
//! `ξ̂' = e^{−c|k|²dt/2} (ξ̂ − dt·P[u·∇ξ] − P[v·∇ξ])` where `v = Σ σ_k ΔW^k`
//! and `P` is the 2/3 dealiasing projection. Products are formed on the grid.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{wavenumber, Fft2, GridField, Spectrum};
use crate::noise::NoiseBasis;
use crate::torus::{TorusPoint, TWO_PI};

/// Largest admissible advective Courant number `dt·max|u|·n/(2π)`.
pub const MAX_COURANT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub t: f64,
    pub step: usize,
    /// Normalized vorticity coefficients; modes outside the mask are zero.
    pub xi_hat: Spectrum,
}

impl SpectralState {
    pub fn resolution(&self) -> usize {
        self.xi_hat.resolution()
    }

    pub fn mean_mode(&self) -> Complex64 {
        self.xi_hat.coeffs()[0]
    }

    /// `Σ_{k≠0} |ξ̂|²/|k|²`, i.e. `‖u‖²` as a mode sum.
    pub fn energy(&self) -> f64 {
        weighted_sum(&self.xi_hat, |m2| if m2 > 0.0 { 1.0 / m2 } else { 0.0 })
    }

    /// `Σ |ξ̂|²`.
    pub fn enstrophy(&self) -> f64 {
        self.xi_hat.l2_squared()
    }

    /// `Σ |k|² |ξ̂|²`, i.e. `‖∇ξ‖²` as a mode sum.
    pub fn palinstrophy(&self) -> f64 {
        weighted_sum(&self.xi_hat, |m2| m2)
    }
}

fn weighted_sum(s: &Spectrum, w: impl Fn(f64) -> f64) -> f64 {
    s.coeffs()
        .iter()
        .enumerate()
        .map(|(idx, z)| {
            let k = s.wavevector(idx);
            w((k[0] * k[0] + k[1] * k[1]) as f64) * z.norm_sqr()
        })
        .sum()
}

/// Per-resolution tables and FFT plans. Not shared between threads; every
/// ensemble member builds its own.
pub struct SpectralSolver {
    n: usize,
    c: f64,
    fft: Fft2,
    mask: Vec<bool>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    ksq: Vec<f64>,
    advect: bool,
}

impl SpectralSolver {
    /// `c` is the noise intensity driving the `½cΔ` correction; it must come
    /// from the same basis that supplies the increments.
    pub fn new(n: usize, basis: &NoiseBasis) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::param(
                "spectral.resolution",
                format!("{n} is not a power of two ≥ 8"),
            ));
        }
        let kept = (n / 3) as i64;
        if basis.is_enabled() && basis.cutoff() as i64 > kept {
            return Err(Error::param(
                "noise.cutoff",
                format!("{} exceeds the dealiased band {kept} of a {n}-grid", basis.cutoff()),
            ));
        }
        let mut mask = vec![false; n * n];
        let mut k1 = vec![0.0; n * n];
        let mut k2 = vec![0.0; n * n];
        let mut ksq = vec![0.0; n * n];
        for idx in 0..n * n {
            let a = wavenumber(idx % n, n);
            let b = wavenumber(idx / n, n);
            mask[idx] = a.abs() <= kept && b.abs() <= kept;
            k1[idx] = a as f64;
            k2[idx] = b as f64;
            ksq[idx] = (a * a + b * b) as f64;
        }
        Ok(Self {
            n,
            c: basis.c(),
            fft: Fft2::new(n),
            mask,
            k1,
            k2,
            ksq,
            advect: true,
        })
    }

    /// Switching advection off leaves a pure transport-noise flow.
    pub fn with_advection(mut self, on: bool) -> Self {
        self.advect = on;
        self
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Projects `field` onto the dealiased band.
    pub fn initial_state(&mut self, field: &GridField) -> Result<SpectralState> {
        if field.resolution() != self.n {
            return Err(Error::param(
                "initial field",
                format!(
                    "resolution {} differs from solver resolution {}",
                    field.resolution(),
                    self.n
                ),
            ));
        }
        let mut xi_hat = field.spectrum_with(&mut self.fft);
        self.project(&mut xi_hat);
        Ok(SpectralState {
            t: 0.0,
            step: 0,
            xi_hat,
        })
    }

    fn project(&self, s: &mut Spectrum) {
        for (z, keep) in s.coeffs_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *z = Complex64::default();
            }
        }
    }

    fn synth(&mut self, coeffs: Vec<Complex64>) -> Vec<f64> {
        let mut data = coeffs;
        self.fft.inverse(&mut data);
        data.iter().map(|z| z.re).collect()
    }

    fn analyze(&mut self, values: &[f64]) -> Spectrum {
        let mut data: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.fft.forward(&mut data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
        let mut s = Spectrum::from_coeffs(self.n, data);
        self.project(&mut s);
        s
    }

    pub fn vorticity(&mut self, state: &SpectralState) -> GridField {
        state.xi_hat.to_grid_with(&mut self.fft)
    }

    fn gradient(&mut self, xi_hat: &Spectrum) -> [Vec<f64>; 2] {
        let g1 = xi_hat
            .coeffs()
            .iter()
            .zip(&self.k1)
            .map(|(z, k)| z * Complex64::new(0.0, *k))
            .collect();
        let g2 = xi_hat
            .coeffs()
            .iter()
            .zip(&self.k2)
            .map(|(z, k)| z * Complex64::new(0.0, *k))
            .collect();
        [self.synth(g1), self.synth(g2)]
    }

    /// `u = K ∗ ξ` on the grid, `û = −i k⊥ ξ̂ / |k|²`.
    pub fn velocity(&mut self, xi_hat: &Spectrum) -> [Vec<f64>; 2] {
        let mut u1 = Vec::with_capacity(self.n * self.n);
        let mut u2 = Vec::with_capacity(self.n * self.n);
        for (idx, z) in xi_hat.coeffs().iter().enumerate() {
            let m2 = self.ksq[idx];
            if m2 == 0.0 {
                u1.push(Complex64::default());
                u2.push(Complex64::default());
                continue;
            }
            u1.push(z * Complex64::new(0.0, self.k2[idx] / m2));
            u2.push(z * Complex64::new(0.0, -self.k1[idx] / m2));
        }
        [self.synth(u1), self.synth(u2)]
    }

    pub fn max_speed(&mut self, xi_hat: &Spectrum) -> f64 {
        let u = self.velocity(xi_hat);
        u[0].iter().zip(&u[1]).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    fn noise_velocity(&mut self, basis: &NoiseBasis, dw: &[f64]) -> [Vec<f64>; 2] {
        let [a, b] = basis.field_spectrum(self.n, dw);
        [self.synth(a.coeffs().to_vec()), self.synth(b.coeffs().to_vec())]
    }

    /// `P[w·∇ξ]` for a grid vector field `w`.
    fn transport(&mut self, w: &[Vec<f64>; 2], grad: &[Vec<f64>; 2]) -> Spectrum {
        let prod: Vec<f64> = (0..self.n * self.n)
            .map(|i| w[0][i] * grad[0][i] + w[1][i] * grad[1][i])
            .collect();
        self.analyze(&prod)
    }

    /// `P[u·∇ξ]`.
    pub fn advection(&mut self, xi_hat: &Spectrum) -> Spectrum {
        let grad = self.gradient(xi_hat);
        let u = self.velocity(xi_hat);
        self.transport(&u, &grad)
    }

    fn active_advection(&mut self, xi_hat: &Spectrum) -> Spectrum {
        if self.advect {
            self.advection(xi_hat)
        } else {
            Spectrum::zeros(self.n)
        }
    }

    /// `P[v·∇ξ]` with `v = Σ σ_k ΔW^k`.
    pub fn noise_term(&mut self, xi_hat: &Spectrum, basis: &NoiseBasis, dw: &[f64]) -> Spectrum {
        let grad = self.gradient(xi_hat);
        let v = self.noise_velocity(basis, dw);
        self.transport(&v, &grad)
    }

    /// Deterministic drift `−u·∇ξ + ½cΔξ` on the grid.
    pub fn rhs_drift(&mut self, state: &SpectralState) -> GridField {
        let adv = self.active_advection(&state.xi_hat);
        let coeffs: Vec<Complex64> = state
            .xi_hat
            .coeffs()
            .iter()
            .zip(adv.coeffs())
            .zip(&self.ksq)
            .map(|((z, a), m2)| -a - z * (0.5 * self.c * m2))
            .collect();
        GridField::from_values(self.n, self.synth(coeffs)).expect("square grid")
    }

    /// One Euler–Maruyama step. `dw` is ignored when the basis is disabled.
    pub fn step(&mut self, state: &SpectralState, dt: f64, basis: &NoiseBasis, dw: &[f64]) -> Result<SpectralState> {
        if !(dt > 0.0) {
            return Err(Error::param("dt", format!("{dt} is not a positive step")));
        }
        let grad = self.gradient(&state.xi_hat);
        let mut w = if self.advect {
            self.velocity(&state.xi_hat)
        } else {
            [vec![0.0; self.n * self.n], vec![0.0; self.n * self.n]]
        };
        let speed = w[0].iter().zip(&w[1]).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        let number = dt * speed * self.n as f64 / TWO_PI;
        if number > MAX_COURANT {
            return Err(Error::Cfl { t: state.t, number });
        }
        w.iter_mut().for_each(|c| c.iter_mut().for_each(|x| *x *= dt));
        if basis.is_enabled() {
            if dw.len() != basis.len() {
                return Err(Error::param(
                    "increments",
                    format!("{} increments for {} modes", dw.len(), basis.len()),
                ));
            }
            let v = self.noise_velocity(basis, dw);
            for c in 0..2 {
                w[c].iter_mut().zip(&v[c]).for_each(|(a, b)| *a += b);
            }
        }
        let flux = self.transport(&w, &grad);
        Ok(SpectralState {
            t: (state.step + 1) as f64 * dt,
            step: state.step + 1,
            xi_hat: self.advance(&state.xi_hat, &flux, dt),
        })
    }

    /// `e^{−c|k|²dt/2} (ξ̂ − flux)` on the kept modes, mean copied.
    fn advance(&self, xi_hat: &Spectrum, flux: &Spectrum, dt: f64) -> Spectrum {
        let mut out = Spectrum::zeros(self.n);
        for (idx, o) in out.coeffs_mut().iter_mut().enumerate() {
            if idx == 0 {
                *o = xi_hat.coeffs()[0];
            } else if self.mask[idx] {
                let damp = (-0.5 * self.c * self.ksq[idx] * dt).exp();
                *o = (xi_hat.coeffs()[idx] - flux.coeffs()[idx]) * damp;
            }
        }
        out
    }

    /// `Σ_{k≠0} conj(a) b / |k|²`, real part.
    fn hminus1_inner(&self, a: &Spectrum, b: &Spectrum) -> f64 {
        a.coeffs()
            .iter()
            .zip(b.coeffs())
            .zip(&self.ksq)
            .filter(|(_, m2)| **m2 > 0.0)
            .map(|((x, y), m2)| (x.conj() * y).re / m2)
            .sum()
    }

    /// `Σ_m ‖P[σ_m·∇ξ]‖²_{H⁻¹}`: the rate of the noise quadratic variation
    /// in the energy.
    pub fn noise_energy_rate(&mut self, xi_hat: &Spectrum, basis: &NoiseBasis) -> f64 {
        let grad = self.gradient(xi_hat);
        let n = self.n;
        let h = TWO_PI / n as f64;
        let mut total = 0.0;
        for m in 0..basis.len() {
            let mut s = [vec![0.0; n * n], vec![0.0; n * n]];
            for idx in 0..n * n {
                let x = TorusPoint::new((idx % n) as f64 * h, (idx / n) as f64 * h);
                let v = basis.sigma(m, x);
                s[0][idx] = v[0];
                s[1][idx] = v[1];
            }
            let t = self.transport(&s, &grad);
            total += self.hminus1_inner(&t, &t);
        }
        total
    }

    /// Per-step residual of the Itô energy identity along a trajectory:
    ///
    /// ```text
    /// E_{s+1} − E_s − [−2⟨ξ, P[u·∇ξ]⟩₋₁ dt − 2⟨ξ, P[v·∇ξ]⟩₋₁ + Σ_m ‖P[σ_m·∇ξ]‖²₋₁ dt − c Σ|ξ̂|² dt]
    /// ```
    ///
    /// The advective term vanishes for the Galerkin-truncated nonlinearity;
    /// the residual is a martingale increment plus `O(dt²)`.
    pub fn energy_balance_residual(&mut self, traj: &SpectralTrajectory, basis: &NoiseBasis) -> Vec<f64> {
        let dt = traj.dt;
        let mut out = Vec::with_capacity(traj.states.len().saturating_sub(1));
        for s in 0..traj.states.len().saturating_sub(1) {
            let xi = &traj.states[s].xi_hat;
            let adv = self.active_advection(xi);
            let mut predicted = -2.0 * self.hminus1_inner(xi, &adv) * dt;
            if basis.is_enabled() {
                let b = self.noise_term(xi, basis, &traj.increments[s]);
                predicted += -2.0 * self.hminus1_inner(xi, &b);
                predicted += self.noise_energy_rate(xi, basis) * dt;
                let gradsq: f64 = xi
                    .coeffs()
                    .iter()
                    .zip(&self.ksq)
                    .filter(|(_, m2)| **m2 > 0.0)
                    .map(|(z, _)| z.norm_sqr())
                    .sum();
                predicted -= self.c * gradsq * dt;
            }
            out.push(traj.states[s + 1].energy() - traj.states[s].energy() - predicted);
        }
        out
    }
}

/// States at every step with the increments that produced them.
#[derive(Debug, Clone)]
pub struct SpectralTrajectory {
    pub dt: f64,
    pub states: Vec<SpectralState>,
    pub increments: Vec<Vec<f64>>,
}

pub fn simulate(
    solver: &mut SpectralSolver,
    initial: SpectralState,
    basis: &NoiseBasis,
    dt: f64,
    steps: usize,
    mut dw: impl FnMut(usize) -> Vec<f64>,
) -> Result<SpectralTrajectory> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    states.push(initial);
    for s in 0..steps {
        let w = if basis.is_enabled() { dw(s) } else { Vec::new() };
        let next = solver.step(&states[s], dt, basis, &w)?;
        increments.push(w);
        states.push(next);
    }
    Ok(SpectralTrajectory { dt, states, increments })
}
