//! The symmetrized interaction `F_φ` and the nonlinear functional
//!
//! ```text
//! ⟨N(ξ), φ⟩ = ∫∫ F_φ(x, y) ξ(dx) ξ(dy),
//! F_φ(x, y) = ½ K(x − y) · (∇φ(x) − ∇φ(y)) 1_{x≠y},
//! ```
//!
//! which extends `⟨ξ, u·∇φ⟩` to measures because `F_φ` stays bounded.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::fit_line;
use crate::error::{Error, Result};
use crate::fft::{Fft2, GridField};
use crate::kernel::KernelSource;
use crate::measure::{total_variation, ParticleMeasure, TestFamily, TrigFunction};
use crate::torus::{TorusPoint, TWO_PI};
use rustfft::num_complex::Complex64;

/// Empirical bound `sup |F_φ| ≤ C_REG ‖φ‖_{C²}` for the truncated kernels
/// used here. Since `|∇φ(x) − ∇φ(y)| ≤ ‖D²φ‖ |x − y|`, it suffices that
/// `½ |z| |K(z)| ≤ C_REG` for all `z`. A sweep over `[−π, π)²` gives
/// 0.093 to 0.111 for cutoffs 8 to 128, and `1/(4π)` for the singular kernel.
pub const C_REG: f64 = 0.125;

/// Rows per block in the parallel double sums. The reduction order depends
/// only on this, so results do not depend on the thread count.
const ROW_BLOCK: usize = 64;

pub fn f_phi<K: KernelSource + ?Sized>(x: TorusPoint, y: TorusPoint, phi: &TrigFunction, kernel: &K) -> f64 {
    if x.key() == y.key() {
        return 0.0;
    }
    let gx = phi.gradient(x);
    let gy = phi.gradient(y);
    let k = kernel.eval(x.displacement(y));
    0.5 * (k[0] * (gx[0] - gy[0]) + k[1] * (gx[1] - gy[1]))
}

/// `Σ_i Σ_j w_i w_j F_φ(x_i, x_j)` for a particle measure, summed as
/// `2 Σ_{i<j}` over fixed row blocks.
pub fn nonlinear_particles<K: KernelSource + ?Sized>(mu: &ParticleMeasure, phi: &TrigFunction, kernel: &K) -> f64 {
    let pos = mu.positions();
    let w = mu.weights();
    let grads: Vec<[f64; 2]> = pos.iter().map(|p| phi.gradient(*p)).collect();
    let keys: Vec<(u64, u64)> = pos.iter().map(|p| p.key()).collect();
    let n = pos.len();
    let blocks: Vec<f64> = (0..n.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = 0.0;
            for i in b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(n) {
                if w[i] == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for j in i + 1..n {
                    if w[j] == 0.0 || keys[i] == keys[j] {
                        continue;
                    }
                    let k = kernel.eval(pos[i].displacement(pos[j]));
                    row += w[j] * (k[0] * (grads[i][0] - grads[j][0]) + k[1] * (grads[i][1] - grads[j][1]));
                }
                acc += w[i] * row;
            }
            acc
        })
        .collect();
    // 2 · ½ from the symmetric half sum and the prefactor of F_φ
    blocks.iter().sum()
}

/// Tensor quadrature of the double integral on the grid nodes, with the
/// kernel sampled at node displacements and the diagonal removed.
///
/// By oddness of `K` the double sum collapses to `h² Σ_i ξ_i ∇φ_i · U_i`
/// with `U = h² Σ_{j≠i} K(x_i − x_j) ξ_j`, a discrete periodic convolution,
/// which is evaluated by FFT.
pub fn nonlinear_grid<K: KernelSource + ?Sized>(field: &GridField, phi: &TrigFunction, kernel: &K) -> f64 {
    let n = field.resolution();
    let h = field.spacing();
    let u = discrete_velocity(field, kernel);
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            let idx = j * n + i;
            let g = phi.gradient(TorusPoint::new(i as f64 * h, j as f64 * h));
            sum += field.values()[idx] * (g[0] * u[0][idx] + g[1] * u[1][idx]);
        }
    }
    sum * h * h
}

/// `h² Σ_{j≠i} K(x_i − x_j) ξ_j` at every node.
pub fn discrete_velocity<K: KernelSource + ?Sized>(field: &GridField, kernel: &K) -> [Vec<f64>; 2] {
    let n = field.resolution();
    let h = field.spacing();
    let mut fft = Fft2::new(n);
    let mut xi: Vec<Complex64> = field.values().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft.forward(&mut xi);
    let mut out = [vec![0.0; n * n], vec![0.0; n * n]];
    for (c, o) in out.iter_mut().enumerate() {
        let mut samples = vec![Complex64::default(); n * n];
        for j in 0..n {
            for i in 0..n {
                if i == 0 && j == 0 {
                    continue;
                }
                // odd sampling: evaluate on one side and mirror
                let (mi, mj) = ((n - i) % n, (n - j) % n);
                let a = j * n + i;
                let b = mj * n + mi;
                if b == a {
                    // self-mirrored nodes on the Nyquist lines: K is odd and periodic there
                    continue;
                }
                if b < a {
                    samples[a] = -samples[b];
                    continue;
                }
                let d = [
                    crate::torus::centered(i as f64 * h),
                    crate::torus::centered(j as f64 * h),
                ];
                samples[a] = Complex64::new(kernel.eval(d)[c], 0.0);
            }
        }
        fft.forward(&mut samples);
        for (s, x) in samples.iter_mut().zip(&xi) {
            *s *= *x;
        }
        fft.inverse(&mut samples);
        let scale = h * h / (n * n) as f64;
        for (v, s) in o.iter_mut().zip(&samples) {
            *v = s.re * scale;
        }
    }
    out
}

/// The same quadrature as [`nonlinear_grid`] written as the literal
/// `O(n⁴)` double sum; only for cross-checking at small sizes.
pub fn nonlinear_grid_direct<K: KernelSource + ?Sized>(field: &GridField, phi: &TrigFunction, kernel: &K) -> f64 {
    let n = field.resolution();
    let h = field.spacing();
    let nodes: Vec<TorusPoint> = (0..n * n)
        .map(|idx| TorusPoint::new((idx % n) as f64 * h, (idx / n) as f64 * h))
        .collect();
    let mut sum = 0.0;
    for (a, x) in nodes.iter().enumerate() {
        for (b, y) in nodes.iter().enumerate() {
            sum += field.values()[a] * field.values()[b] * f_phi(*x, *y, phi, kernel);
        }
    }
    sum * h.powi(4)
}

/// Classical `∫ ξ u·∇φ dx` with the spectral velocity, by grid quadrature.
pub fn classical_pairing(field: &GridField, phi: &TrigFunction) -> (f64, f64) {
    let n = field.resolution();
    let h = field.spacing();
    let (u1, u2) = crate::kernel::velocity_from_vorticity(field);
    let (mut sum, mut abs) = (0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let idx = j * n + i;
            let g = phi.gradient(TorusPoint::new(i as f64 * h, j as f64 * h));
            let v = field.values()[idx] * (u1.values()[idx] * g[0] + u2.values()[idx] * g[1]);
            sum += v;
            abs += v.abs();
        }
    }
    (sum * h * h, abs * h * h)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub value: f64,
    pub total_variation: f64,
    pub c2_norm: f64,
    /// `|⟨N(μ), φ⟩| / (‖μ‖²_TV ‖φ‖_{C²})`, 0 for the zero measure.
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn n_bound_check<K: KernelSource + ?Sized>(mu: &ParticleMeasure, phi: &TrigFunction, kernel: &K) -> BoundReport {
    let value = nonlinear_particles(mu, phi, kernel);
    let tv = total_variation(mu);
    let c2 = phi.c2_norm();
    let denom = tv * tv * c2;
    let ratio = if denom > 0.0 { value.abs() / denom } else { 0.0 };
    BoundReport {
        value,
        total_variation: tv,
        c2_norm: c2,
        ratio,
        bound: C_REG,
        pass: ratio <= C_REG,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub weakstar: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub target_value: f64,
    pub rows: Vec<ContinuityRow>,
    /// Least-squares slope of `log delta` against `log weakstar`; `None`
    /// when fewer than two rows have both quantities positive.
    pub log_slope: Option<f64>,
    /// `delta_first / delta_last`.
    pub reduction: f64,
    /// Deltas shrink in trend as the distance does: positive slope and a
    /// smaller final delta than the first one.
    pub converging: bool,
}

/// Tabulates `d(μ_n, target)` against `|⟨N(μ_n) − N(target), φ⟩|`.
///
/// The continuity of `μ ↦ ⟨N(μ), φ⟩` only holds on non-negative non-atomic
/// measures, so signed inputs are refused.
pub fn continuity_experiment<K: KernelSource + ?Sized>(
    sequence: &[ParticleMeasure],
    target: &ParticleMeasure,
    phi: &TrigFunction,
    kernel: &K,
    family: &TestFamily,
) -> Result<ContinuityReport> {
    check_nonnegative(target)?;
    for mu in sequence {
        check_nonnegative(mu)?;
    }
    continuity_table(sequence, target, phi, kernel, family)
}

/// The same tabulation without the sign check, for probing the
/// positivity hypothesis.
pub fn continuity_table<K: KernelSource + ?Sized>(
    sequence: &[ParticleMeasure],
    target: &ParticleMeasure,
    phi: &TrigFunction,
    kernel: &K,
    family: &TestFamily,
) -> Result<ContinuityReport> {
    if sequence.is_empty() {
        return Err(Error::param("sequence", "empty"));
    }
    let target_value = nonlinear_particles(target, phi, kernel);
    let target_pairs = family.pairings(target);
    let rows: Vec<ContinuityRow> = sequence
        .iter()
        .map(|mu| ContinuityRow {
            weakstar: family.distance_from_pairings(&family.pairings(mu), &target_pairs),
            delta: (nonlinear_particles(mu, phi, kernel) - target_value).abs(),
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.weakstar > 0.0 && r.delta > 0.0)
        .map(|r| (r.weakstar.ln(), r.delta.ln()))
        .collect();
    let log_slope = fit_line(&pts).map(|f| f.slope);
    let first = rows[0].delta;
    let last = rows[rows.len() - 1].delta;
    let reduction = if last > 0.0 {
        first / last
    } else if first > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let converging = rows.iter().all(|r| r.delta == 0.0) || (log_slope.is_some_and(|s| s > 0.0) && last < first);
    Ok(ContinuityReport {
        target_value,
        rows,
        log_slope,
        reduction,
        converging,
    })
}

fn check_nonnegative(mu: &ParticleMeasure) -> Result<()> {
    match mu.weights().iter().position(|w| *w < 0.0) {
        Some(index) => Err(Error::NegativeWeight {
            index,
            weight: mu.weights()[index],
        }),
        None => Ok(()),
    }
}

/// `sup_z ½|z||K(z)|` over an `m × m` grid of displacements in `[−π, π)²`.
pub fn kernel_regularity_constant<K: KernelSource + ?Sized>(kernel: &K, m: usize) -> f64 {
    let h = TWO_PI / m as f64;
    (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let z = [
                crate::torus::centered((idx % m) as f64 * h),
                crate::torus::centered((idx / m) as f64 * h),
            ];
            let k = kernel.eval(z);
            0.5 * z[0].hypot(z[1]) * k[0].hypot(k[1])
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Mollified copies of `sheet` at each `ε`, as non-negative grid atoms on
/// an `n`-grid.
pub fn mollified_sequence(sheet: &ParticleMeasure, epsilons: &[f64], n: usize) -> Result<Vec<ParticleMeasure>> {
    epsilons
        .iter()
        .map(|eps| {
            let field = crate::measure::mollify(sheet, *eps, n)?;
            Ok(ParticleMeasure::from_grid(&field, 0.0))
        })
        .collect()
}

/// Dipole pairs `±w` at separation `gap_n` around the target's atoms: a
/// signed sequence that converges weak-* to the target plus nothing, used
/// to show that continuity fails without positivity.
pub fn dipole_sequence(target: &ParticleMeasure, gaps: &[f64], strength: f64) -> Vec<ParticleMeasure> {
    gaps.iter()
        .map(|gap| {
            let mut pos = target.positions().to_vec();
            let mut w = target.weights().to_vec();
            let a = TorusPoint::new(1.0, 1.0);
            let b = a.translate([*gap, 0.0]);
            // dipole strength grows like 1/gap so its self-interaction does not fade
            let s = strength / gap.sqrt();
            pos.extend([a, b]);
            w.extend([s, -s]);
            ParticleMeasure::from_atoms(pos, w).expect("finite weights")
        })
        .collect()
}
