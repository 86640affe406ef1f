//! Periodic Green function of the Laplacian, the Biot–Savart kernel
//! `K = ∇⊥G` and velocity reconstruction `u = K ∗ ξ`.
//!
//! With `G(x) = (2π)⁻² Σ_{k≠0} −|k|⁻² e^{ik·x}` and `∇⊥ = (−∂₂, ∂₁)`,
//!
//! ```text
//! K(x) = (2π)⁻² Σ_{k≠0} k⊥ sin(k·x) / |k|²,     k⊥ = (−k₂, k₁),
//! ```
//!
//! so that `curl (K ∗ ξ) = ξ − mean(ξ)` and `K(x) ≈ x⊥ / (2π|x|²)` near the
//! origin. Every evaluation here is a truncation of this series to the disk
//! `0 < |k| ≤ cutoff`.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{index_of, wavenumber, Fft2, GridField, Spectrum};
use crate::torus::{centered, wrap, INV_AREA, TWO_PI};

/// Spectral symbol of the Green function: `−1/|k|²`, and 0 on the mean.
pub fn green_coefficient(k: [i64; 2]) -> f64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    if k2 == 0.0 {
        0.0
    } else {
        -1.0 / k2
    }
}

/// Truncated Fourier synthesis of `K` at displacement `x`.
///
/// Exactly odd: `kernel_eval(−x) == −kernel_eval(x)` bitwise, because every
/// term is odd and the summation order does not depend on the sign of `x`.
pub fn kernel_eval(x: [f64; 2], cutoff: usize) -> [f64; 2] {
    let kmax = cutoff as i64;
    let r2 = kmax * kmax;
    let (s1, c1) = harmonics(x[0], cutoff);
    let (s2, c2) = harmonics(x[1], cutoff);
    let mut out = [0.0f64; 2];
    // half lattice {k₁ > 0} ∪ {k₁ = 0, k₂ > 0}; the partner −k doubles each term
    for k1 in 0..=kmax {
        let k2_lo = if k1 == 0 { 1 } else { -kmax };
        for k2 in k2_lo..=kmax {
            let m2 = k1 * k1 + k2 * k2;
            if m2 > r2 {
                continue;
            }
            let a = k1 as usize;
            let b = k2.unsigned_abs() as usize;
            let sin_b = if k2 < 0 { -s2[b] } else { s2[b] };
            let s = s1[a] * c2[b] + c1[a] * sin_b;
            let w = 2.0 * s / m2 as f64;
            out[0] -= k2 as f64 * w;
            out[1] += k1 as f64 * w;
        }
    }
    [out[0] * INV_AREA, out[1] * INV_AREA]
}

fn harmonics(x: f64, cutoff: usize) -> (Vec<f64>, Vec<f64>) {
    (0..=cutoff).map(|m| (m as f64 * x).sin_cos()).unzip()
}

/// Anything that evaluates the (regularized) Biot–Savart kernel at a
/// displacement.
pub trait KernelSource: Sync {
    fn eval(&self, d: [f64; 2]) -> [f64; 2];
    /// Fourier truncation, `None` for the singular kernel.
    fn cutoff(&self) -> Option<usize>;
}

/// Direct series evaluation; slow but exact for the truncation.
#[derive(Debug, Clone, Copy)]
pub struct SpectralKernel {
    pub cutoff: usize,
}

impl KernelSource for SpectralKernel {
    fn eval(&self, d: [f64; 2]) -> [f64; 2] {
        kernel_eval(d, self.cutoff)
    }

    fn cutoff(&self) -> Option<usize> {
        Some(self.cutoff)
    }
}

/// The untruncated singular kernel, summed in closed form over the images
/// in one direction:
///
/// ```text
/// K₁ = −(4π)⁻¹ Σ_m sin y / (cosh(x − 2πm) − cos y)
/// K₂ =  (4π)⁻¹ Σ_m [sinh(x − 2πm) / (cosh(x − 2πm) − cos y) − sgn_m] − x/(4π²)
/// ```
///
/// for `(x, y)` reduced to `[−π, π)²`, with `sgn_0 = 0` and
/// `sgn_m = sign(x − 2πm)` otherwise. Returns zero at the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeriodicKernel;

impl PeriodicKernel {
    const IMAGES: i32 = 7;
}

impl KernelSource for PeriodicKernel {
    fn eval(&self, d: [f64; 2]) -> [f64; 2] {
        let x = crate::torus::centered(d[0]);
        let y = crate::torus::centered(d[1]);
        if x == 0.0 && y == 0.0 {
            return [0.0, 0.0];
        }
        let sy = y.sin();
        let (mut k1, mut k2) = (0.0, 0.0);
        for m in -Self::IMAGES..=Self::IMAGES {
            let xm = x - TWO_PI * m as f64;
            // cosh X − cos y without cancellation near the origin
            let denom = 2.0 * (xm * 0.5).sinh().powi(2) + 2.0 * (y * 0.5).sin().powi(2);
            k1 -= sy / denom;
            k2 += xm.sinh() / denom - if m == 0 { 0.0 } else { xm.signum() };
        }
        let inv = 1.0 / (4.0 * std::f64::consts::PI);
        [k1 * inv, k2 * inv - x * INV_AREA]
    }

    fn cutoff(&self) -> Option<usize> {
        None
    }
}

const TABLE_MAGIC: &[u8; 4] = b"SEKT";
const TABLE_VERSION: u32 = 1;

/// Samples of the truncated kernel on a `resolution²` grid, with the
/// spectral derivatives needed for C¹ bicubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct KernelTable {
    resolution: usize,
    cutoff: usize,
    values: Vec<[f64; 2]>,
    d1: Vec<[f64; 2]>,
    d2: Vec<[f64; 2]>,
    d12: Vec<[f64; 2]>,
}

impl KernelTable {
    pub fn build(resolution: usize, cutoff: usize) -> Result<Self> {
        check_shape(resolution, cutoff)?;
        let n = resolution;
        let kmax = cutoff as i64;
        let mut fft = Fft2::new(n);
        let mut comps = [vec![Complex64::default(); n * n], vec![Complex64::default(); n * n]];
        for k2 in -kmax..=kmax {
            for k1 in -kmax..=kmax {
                let m2 = k1 * k1 + k2 * k2;
                if m2 == 0 || m2 > kmax * kmax {
                    continue;
                }
                // K̂(k) = (2π)⁻² · (−i k⊥ / |k|²)
                let idx = index_of(k2, n) * n + index_of(k1, n);
                let scale = INV_AREA / m2 as f64;
                comps[0][idx] += Complex64::new(0.0, k2 as f64 * scale);
                comps[1][idx] += Complex64::new(0.0, -(k1 as f64) * scale);
            }
        }
        let mut values = vec![[0.0; 2]; n * n];
        for (c, data) in comps.iter_mut().enumerate() {
            fft.inverse(data);
            for (v, z) in values.iter_mut().zip(data.iter()) {
                v[c] = z.re;
            }
        }
        Ok(Self::from_values_unchecked(n, cutoff, values, &mut fft))
    }

    fn from_values_unchecked(n: usize, cutoff: usize, mut values: Vec<[f64; 2]>, fft: &mut Fft2) -> Self {
        symmetrize(&mut values, n, -1.0);
        let mut d1 = vec![[0.0; 2]; n * n];
        let mut d2 = vec![[0.0; 2]; n * n];
        let mut d12 = vec![[0.0; 2]; n * n];
        for c in 0..2 {
            let mut base: Vec<Complex64> = values.iter().map(|v| Complex64::new(v[c], 0.0)).collect();
            fft.forward(&mut base);
            let norm = 1.0 / (n * n) as f64;
            let mut a = vec![Complex64::default(); n * n];
            let mut b = vec![Complex64::default(); n * n];
            let mut ab = vec![Complex64::default(); n * n];
            for (idx, z) in base.iter().enumerate() {
                let (i, j) = (idx % n, idx / n);
                // Nyquist rows carry no derivative information on the grid
                let k1 = if 2 * i == n { 0.0 } else { wavenumber(i, n) as f64 };
                let k2 = if 2 * j == n { 0.0 } else { wavenumber(j, n) as f64 };
                let z = *z * norm;
                a[idx] = z * Complex64::new(0.0, k1);
                b[idx] = z * Complex64::new(0.0, k2);
                ab[idx] = z * (-k1 * k2);
            }
            for (data, out) in [(&mut a, &mut d1), (&mut b, &mut d2), (&mut ab, &mut d12)] {
                fft.inverse(data);
                for (o, z) in out.iter_mut().zip(data.iter()) {
                    o[c] = z.re;
                }
            }
        }
        symmetrize(&mut d1, n, 1.0);
        symmetrize(&mut d2, n, 1.0);
        symmetrize(&mut d12, n, -1.0);
        Self {
            resolution: n,
            cutoff,
            values,
            d1,
            d2,
            d12,
        }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        TWO_PI / self.resolution as f64
    }

    /// Sample at node `(i, j)`, i.e. at displacement `(i·h, j·h)`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        self.values[(j % self.resolution) * self.resolution + (i % self.resolution)]
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    /// Bicubic Hermite interpolation with periodic wrap. Displacements in
    /// the lower half-plane are evaluated through their negation, so
    /// `interpolate(−d) == −interpolate(d)` bitwise.
    pub fn interpolate(&self, d: [f64; 2]) -> [f64; 2] {
        let c = [centered(d[0]), centered(d[1])];
        if c[0] < 0.0 || (c[0] == 0.0 && c[1] < 0.0) {
            let v = self.interpolate_raw([-c[0], -c[1]]);
            [-v[0], -v[1]]
        } else {
            self.interpolate_raw(c)
        }
    }

    fn interpolate_raw(&self, d: [f64; 2]) -> [f64; 2] {
        let n = self.resolution;
        let h = self.spacing();
        let u = wrap(d[0]) / h;
        let v = wrap(d[1]) / h;
        let (fi, fj) = (u.floor(), v.floor());
        let (s, t) = (u - fi, v - fj);
        let i0 = (fi as usize) % n;
        let j0 = (fj as usize) % n;
        let i1 = (i0 + 1) % n;
        let j1 = (j0 + 1) % n;

        let hs = hermite(s);
        let ht = hermite(t);
        let corners = [(i0, j0, 0, 0), (i1, j0, 1, 0), (i0, j1, 0, 1), (i1, j1, 1, 1)];
        let mut out = [0.0; 2];
        for (i, j, a, b) in corners {
            let idx = j * n + i;
            let (p0, p1) = (hs[a], hs[2 + a]);
            let (q0, q1) = (ht[b], ht[2 + b]);
            for c in 0..2 {
                out[c] += self.values[idx][c] * p0 * q0
                    + h * self.d1[idx][c] * p1 * q0
                    + h * self.d2[idx][c] * p0 * q1
                    + h * h * self.d12[idx][c] * p1 * q1;
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        w.write_all(&(self.cutoff as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            buf.extend_from_slice(&v[0].to_le_bytes());
            buf.extend_from_slice(&v[1].to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("kernel table header: {e}")))?;
        if &header[0..4] != TABLE_MAGIC {
            return Err(Error::Format("kernel table: bad magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = word(4);
        if version != TABLE_VERSION {
            return Err(Error::Format(format!("kernel table: unsupported version {version}")));
        }
        let (n, cutoff) = (word(8) as usize, word(12) as usize);
        check_shape(n, cutoff)?;
        let mut body = vec![0u8; n * n * 16];
        r.read_exact(&mut body)
            .map_err(|e| Error::Format(format!("kernel table body: {e}")))?;
        let values = body
            .chunks_exact(16)
            .map(|c| {
                [
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                ]
            })
            .collect();
        let mut fft = Fft2::new(n);
        Ok(Self::from_values_unchecked(n, cutoff, values, &mut fft))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

impl KernelSource for KernelTable {
    #[inline]
    fn eval(&self, d: [f64; 2]) -> [f64; 2] {
        self.interpolate(d)
    }

    fn cutoff(&self) -> Option<usize> {
        Some(self.cutoff)
    }
}

fn check_shape(resolution: usize, cutoff: usize) -> Result<()> {
    if resolution < 64 || !resolution.is_power_of_two() {
        return Err(Error::param(
            "resolution",
            format!("{resolution} is not a power of two ≥ 64"),
        ));
    }
    if cutoff == 0 {
        return Err(Error::param("cutoff", "must be ≥ 1"));
    }
    if 2 * cutoff > resolution {
        return Err(Error::KernelAliasing { resolution, cutoff });
    }
    Ok(())
}

/// Imposes `f(−x) = parity·f(x)` exactly on grid samples.
fn symmetrize(data: &mut [[f64; 2]], n: usize, parity: f64) {
    for j in 0..n {
        for i in 0..n {
            let a = j * n + i;
            let b = ((n - j) % n) * n + (n - i) % n;
            if b < a {
                continue;
            }
            for c in 0..2 {
                let (x, y) = (data[a][c], data[b][c]);
                if a == b {
                    data[a][c] = if parity < 0.0 { 0.0 } else { x };
                } else if parity < 0.0 {
                    data[a][c] = (x - y) * 0.5;
                    data[b][c] = (y - x) * 0.5;
                } else {
                    let m = (x + y) * 0.5;
                    data[a][c] = m;
                    data[b][c] = m;
                }
            }
        }
    }
}

/// Cubic Hermite basis `[h00, h01, h10, h11]`: value at 0, value at 1,
/// slope at 0, slope at 1.
#[inline]
fn hermite(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        -2.0 * s3 + 3.0 * s2,
        s3 - 2.0 * s2 + s,
        s3 - s2,
    ]
}

/// `û = −i k⊥ ξ̂ / |k|²` on every resolved mode; mean and Nyquist modes are
/// dropped.
pub fn velocity_spectrum(xi: &Spectrum) -> (Spectrum, Spectrum) {
    let n = xi.resolution();
    let mut u1 = Spectrum::zeros(n);
    let mut u2 = Spectrum::zeros(n);
    for (idx, z) in xi.coeffs().iter().enumerate() {
        let (i, j) = (idx % n, idx / n);
        if 2 * i == n || 2 * j == n {
            continue;
        }
        let k = xi.wavevector(idx);
        let m2 = (k[0] * k[0] + k[1] * k[1]) as f64;
        if m2 == 0.0 {
            continue;
        }
        u1.coeffs_mut()[idx] = *z * Complex64::new(0.0, k[1] as f64 / m2);
        u2.coeffs_mut()[idx] = *z * Complex64::new(0.0, -(k[0] as f64) / m2);
    }
    (u1, u2)
}

pub fn velocity_from_vorticity(field: &GridField) -> (GridField, GridField) {
    let mut fft = Fft2::new(field.resolution());
    let (u1, u2) = velocity_spectrum(&field.spectrum_with(&mut fft));
    (u1.to_grid_with(&mut fft), u2.to_grid_with(&mut fft))
}

/// Spectral `∂₁u₂ − ∂₂u₁`.
pub fn spectral_curl(u1: &Spectrum, u2: &Spectrum) -> Spectrum {
    combine(u1, u2, |k, a, b| {
        Complex64::new(0.0, k[0] as f64) * b - Complex64::new(0.0, k[1] as f64) * a
    })
}

/// Spectral `∂₁u₁ + ∂₂u₂`.
pub fn spectral_divergence(u1: &Spectrum, u2: &Spectrum) -> Spectrum {
    combine(u1, u2, |k, a, b| {
        Complex64::new(0.0, k[0] as f64) * a + Complex64::new(0.0, k[1] as f64) * b
    })
}

fn combine(u1: &Spectrum, u2: &Spectrum, f: impl Fn([i64; 2], Complex64, Complex64) -> Complex64) -> Spectrum {
    let n = u1.resolution();
    let coeffs = u1
        .coeffs()
        .iter()
        .zip(u2.coeffs())
        .enumerate()
        .map(|(idx, (a, b))| f(u1.wavevector(idx), *a, *b))
        .collect();
    Spectrum::from_coeffs(n, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn green_symbol() {
        assert_eq!(green_coefficient([1, 0]), -1.0);
        assert_eq!(green_coefficient([0, 0]), 0.0);
        assert_eq!(green_coefficient([1, 1]), -0.5);
    }

    #[test]
    fn kernel_origin_and_oddness() {
        assert_eq!(kernel_eval([0.0, 0.0], 16), [0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = kernel_eval(x, 24);
            let b = kernel_eval([-x[0], -x[1]], 24);
            assert_eq!(a[0], -b[0]);
            assert_eq!(a[1], -b[1]);
        }
    }

    fn bessel_j0(z: f64) -> f64 {
        // trapezoid rule on a periodic integrand converges geometrically
        let m = 400;
        (0..m)
            .map(|i| (z * (PI * (i as f64 + 0.5) / m as f64).sin()).cos())
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn kernel_matches_truncated_point_vortex_near_origin() {
        // a disk-truncated 1/r field is (1 − J0(R r))/(2π r); the torus adds
        // a smooth background of size O(r)
        let cutoff = 128;
        for r in [0.05, 0.1, 0.2, 0.3] {
            let k = kernel_eval([r, 0.0], cutoff);
            let expected = (1.0 - bessel_j0(cutoff as f64 * r)) / (TWO_PI * r);
            assert!(k[0].abs() < 1e-12);
            assert!((k[1] - expected).abs() < 0.02 * expected, "r={r}: {k:?} vs {expected}");
        }
    }

    #[test]
    fn table_rejects_bad_shapes() {
        assert!(matches!(KernelTable::build(64, 33), Err(Error::KernelAliasing { .. })));
        assert!(KernelTable::build(96, 8).is_err());
        assert!(KernelTable::build(32, 8).is_err());
        assert!(KernelTable::build(64, 32).is_ok());
    }

    #[test]
    fn table_nodes_match_series() {
        let table = KernelTable::build(64, 12).unwrap();
        assert_eq!(table.node(0, 0), [0.0, 0.0]);
        let h = table.spacing();
        for (i, j) in [(1, 0), (5, 9), (40, 3), (63, 63)] {
            let exact = kernel_eval([i as f64 * h, j as f64 * h], 12);
            let node = table.node(i, j);
            assert!((exact[0] - node[0]).abs() < 1e-14);
            assert!((exact[1] - node[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn table_antisymmetric() {
        let table = KernelTable::build(128, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = table.interpolate(x);
            let b = table.interpolate([-x[0], -x[1]]);
            assert_eq!(a, [-b[0], -b[1]]);
        }
    }

    #[test]
    fn table_binary_round_trip() {
        let table = KernelTable::build(64, 10).unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"SEKT");
        assert_eq!(buf.len(), 16 + 64 * 64 * 16);
        let back = KernelTable::read_from(&buf[..]).unwrap();
        assert_eq!(back.values, table.values);
        let x = [0.731, -1.4];
        let (a, b) = (table.interpolate(x), back.interpolate(x));
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);

        buf[0] = b'X';
        assert!(KernelTable::read_from(&buf[..]).is_err());
    }

    #[test]
    fn single_mode_velocity() {
        let xi = GridField::from_fn(32, |x1, _| x1.cos());
        let (u1, u2) = velocity_from_vorticity(&xi);
        for j in 0..32 {
            for i in 0..32 {
                let x = xi.node(i, j);
                assert!(u1.values()[j * 32 + i].abs() < 1e-14);
                assert!((u2.values()[j * 32 + i] - x[0].sin()).abs() < 1e-14);
            }
        }
        let (c1, c2) = velocity_from_vorticity(&GridField::from_fn(32, |_, _| 4.2));
        assert!(c1.max_abs() == 0.0 && c2.max_abs() == 0.0);
    }

    #[test]
    fn periodic_kernel_is_the_limit_of_the_series() {
        let exact = PeriodicKernel;
        assert_eq!(exact.eval([0.0, 0.0]), [0.0, 0.0]);
        for x in [[1.0, 0.5], [-2.0, 2.5], [3.0, -0.2], [0.1, 0.05]] {
            let a = exact.eval(x);
            let b = exact.eval([-x[0], -x[1]]);
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
            // Gaussian-damped series: heat-smoothing by 1/L costs O((L·|x|)⁻²)
            let l = 60.0;
            let kmax = 8 * l as i64;
            let mut c = [0.0, 0.0];
            for k1 in -kmax..=kmax {
                for k2 in -kmax..=kmax {
                    let m2 = (k1 * k1 + k2 * k2) as f64;
                    if m2 == 0.0 || m2 > (kmax * kmax) as f64 {
                        continue;
                    }
                    let w = (-m2 / (2.0 * l * l)).exp() * (k1 as f64 * x[0] + k2 as f64 * x[1]).sin() / m2;
                    c[0] -= k2 as f64 * w * INV_AREA;
                    c[1] += k1 as f64 * w * INV_AREA;
                }
            }
            let scale = a[0].hypot(a[1]);
            let r = x[0].hypot(x[1]);
            let err = (a[0] - c[0]).hypot(a[1] - c[1]);
            assert!(err < 2.0 * scale / (l * r).powi(2), "{x:?}: {a:?} vs {c:?}");
        }
        // periodic in both directions
        let p = exact.eval([1.0, 3.0]);
        let q = exact.eval([1.0 - TWO_PI, 3.0 - TWO_PI]);
        assert!((p[0] - q[0]).abs() < 1e-13 && (p[1] - q[1]).abs() < 1e-13);
        // divergence-free: ∂₁K₁ + ∂₂K₂ = 0 by central differences
        let (x, h) = ([0.7, -1.3], 1e-5);
        let d = (exact.eval([x[0] + h, x[1]])[0] - exact.eval([x[0] - h, x[1]])[0] + exact.eval([x[0], x[1] + h])[1]
            - exact.eval([x[0], x[1] - h])[1])
            / (2.0 * h);
        assert!(d.abs() < 1e-7);
    }

    #[test]
    fn table_interpolation_matches_series_off_grid() {
        for (n, cutoff) in [(512, 16), (1024, 32)] {
            let table = KernelTable::build(n, cutoff).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (mut err, mut sup) = (0.0f64, 0.0f64);
            let mut probes = 0;
            while probes < 300 {
                let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
                if x[0].hypot(x[1]) < 0.2 {
                    continue;
                }
                probes += 1;
                let (a, b) = (table.interpolate(x), kernel_eval(x, cutoff));
                err = err.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()));
                sup = sup.max(b[0].hypot(b[1]));
            }
            assert!(err <= 1e-6 * sup, "{n}/{cutoff}: {err:e} vs sup {sup}");
        }
    }

    fn near_field_range(cutoff: usize, r_lo: f64, r_hi: f64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut lo, mut hi) = (f64::MAX, 0.0f64);
        for _ in 0..400 {
            let r = rng.random_range(r_lo..r_hi);
            let th: f64 = rng.random_range(0.0..TWO_PI);
            let k = kernel_eval([r * th.cos(), r * th.sin()], cutoff);
            let v = r * k[0].hypot(k[1]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    #[test]
    fn near_field_bracket() {
        // reference sum at four times the default cutoff
        let (lo, hi) = near_field_range(128, 0.05, 0.3);
        assert!(lo >= 0.1 && hi <= 1.0, "[{lo}, {hi}]");
        // the default cutoff resolves the 1/|x| law down to about 5/cutoff
        let (lo, hi) = near_field_range(32, 0.15, 0.3);
        assert!(lo >= 0.1 && hi <= 1.0, "[{lo}, {hi}]");
    }

    #[test]
    fn random_field_divergence_free_and_curl_round_trip() {
        let n = 128;
        let xi = crate::fft::random_band_limited(n, 60, 5);
        let spec = xi.spectrum();
        let (u1, u2) = velocity_spectrum(&spec);
        let div = spectral_divergence(&u1, &u2).to_grid();
        assert!(div.max_abs() <= 1e-12 * xi.max_abs());
        let curl = spectral_curl(&u1, &u2);
        let scale = spec.coeffs().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (idx, (a, b)) in curl.coeffs().iter().zip(spec.coeffs()).enumerate() {
            let expect = if idx == 0 { Complex64::default() } else { *b };
            assert!((a - expect).norm() <= 1e-12 * scale);
        }
    }
}
