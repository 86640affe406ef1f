//! Vorticity measures on the torus: weighted particle clouds and grid
//! densities, together with the functionals the a priori bounds are stated
//! in (total variation, truncated negative Sobolev norms, the weak-* metric)
//! and the constructions of initial data (mollification, vortex sheets).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{index_of, Fft2, GridField, Spectrum};
use crate::torus::{TorusPoint, INV_AREA, TWO_PI};

/// All `k` with `|k| ≤ cutoff`, including the mean mode, ordered by `|k|`
/// and then lexicographically.
pub fn disk_modes(cutoff: usize) -> Vec<[i64; 2]> {
    let kmax = cutoff as i64;
    let mut modes = Vec::new();
    for k1 in -kmax..=kmax {
        for k2 in -kmax..=kmax {
            if k1 * k1 + k2 * k2 <= kmax * kmax {
                modes.push([k1, k2]);
            }
        }
    }
    modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
    modes
}

/// Fourier coefficients of a measure on `disk_modes(cutoff)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowModes {
    pub cutoff: usize,
    pub coeffs: Vec<Complex64>,
}

impl LowModes {
    /// `Σ (1+|k|²)^s |c_k|²` restricted to `|k| ≤ cutoff`.
    pub fn sobolev_squared(&self, s: f64, cutoff: usize) -> f64 {
        let modes = disk_modes(self.cutoff);
        let lim = (cutoff * cutoff) as i64;
        modes
            .iter()
            .zip(&self.coeffs)
            .filter(|(k, _)| k[0] * k[0] + k[1] * k[1] <= lim)
            .map(|(k, c)| (1.0 + (k[0] * k[0] + k[1] * k[1]) as f64).powf(s) * c.norm_sqr())
            .sum()
    }

    /// `Σ (1+|k|²)^s |a_k − b_k|²`.
    pub fn sobolev_distance_squared(&self, other: &LowModes, s: f64) -> f64 {
        assert_eq!(self.cutoff, other.cutoff);
        disk_modes(self.cutoff)
            .iter()
            .zip(self.coeffs.iter().zip(&other.coeffs))
            .map(|(k, (a, b))| (1.0 + (k[0] * k[0] + k[1] * k[1]) as f64).powf(s) * (a - b).norm_sqr())
            .sum()
    }
}

/// A finite signed measure that can be paired with trigonometric test
/// functions.
pub trait Measure {
    /// `⟨μ, 1⟩`.
    fn mass(&self) -> f64;

    /// `(2π)⁻² ∫ e^{−ik·x} μ(dx)`.
    fn fourier_coefficient(&self, k: [i64; 2]) -> Complex64;

    fn low_modes(&self, cutoff: usize) -> LowModes;

    fn pair(&self, phi: &TrigFunction) -> f64;
}

/// Weighted point-vortex cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    positions: Vec<TorusPoint>,
    weights: Vec<f64>,
    mass_bound: f64,
}

impl ParticleMeasure {
    /// Fails when `Σ|w| > mass_bound`.
    pub fn new(positions: Vec<TorusPoint>, weights: Vec<f64>, mass_bound: f64) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::param(
                "weights",
                format!("{} positions but {} weights", positions.len(), weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("weights", "non-finite weight"));
        }
        let tv: f64 = weights.iter().map(|w| w.abs()).sum();
        // the bound is checked with a little slack for rounding in Σ|w|
        if tv > mass_bound * (1.0 + 1e-12) {
            return Err(Error::MassBound {
                total_variation: tv,
                bound: mass_bound,
            });
        }
        Ok(Self {
            positions,
            weights,
            mass_bound,
        })
    }

    /// Declared bound set to the total variation.
    pub fn from_atoms(positions: Vec<TorusPoint>, weights: Vec<f64>) -> Result<Self> {
        let tv = weights.iter().map(|w| w.abs()).sum();
        Self::new(positions, weights, tv)
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            weights: Vec::new(),
            mass_bound: 0.0,
        }
    }

    /// Atoms at the grid nodes with weights `ξ·h²`; nodes with
    /// `|ξ·h²| ≤ drop_below` are skipped.
    pub fn from_grid(field: &GridField, drop_below: f64) -> Self {
        let n = field.resolution();
        let h2 = field.spacing() * field.spacing();
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let w = field.values()[j * n + i] * h2;
                if w.abs() > drop_below {
                    positions.push(TorusPoint::from(field.node(i, j)));
                    weights.push(w);
                }
            }
        }
        let tv = weights.iter().map(|w: &f64| w.abs()).sum();
        Self {
            positions,
            weights,
            mass_bound: tv,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[TorusPoint] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass_bound(&self) -> f64 {
        self.mass_bound
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same weights, new positions (push-forward by a map).
    pub fn with_positions(&self, positions: Vec<TorusPoint>) -> Self {
        assert_eq!(positions.len(), self.weights.len());
        Self {
            positions,
            weights: self.weights.clone(),
            mass_bound: self.mass_bound,
        }
    }

    /// Multiplies every weight by `lambda`; the bound scales with `|λ|`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            positions: self.positions.clone(),
            weights: self.weights.iter().map(|w| w * lambda).collect(),
            mass_bound: self.mass_bound * lambda.abs(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write, meta: serde_json::Value) -> Result<()> {
        let header = JsonlHeader {
            kind: "particle_measure".into(),
            version: 1,
            count: self.len(),
            mass_bound: self.mass_bound,
            meta,
        };
        let io = |e| Error::Format(format!("jsonl write: {e}"));
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for (p, wt) in self.positions.iter().zip(&self.weights) {
            serde_json::to_writer(
                &mut w,
                &Atom {
                    x1: p.x1,
                    x2: p.x2,
                    w: *wt,
                },
            )?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<(Self, serde_json::Value)> {
        let mut lines = r.lines().enumerate();
        let header: JsonlHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line.map_err(|e| Error::Format(e.to_string()))?)?,
            None => return Err(Error::Format("empty particle file".into())),
        };
        if header.kind != "particle_measure" {
            return Err(Error::Format(format!("unexpected record kind `{}`", header.kind)));
        }
        let mut positions = Vec::with_capacity(header.count);
        let mut weights = Vec::with_capacity(header.count);
        for (no, line) in lines {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let atom: Atom = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", no + 1)))?;
            positions.push(TorusPoint::new(atom.x1, atom.x2));
            weights.push(atom.w);
        }
        if positions.len() != header.count {
            return Err(Error::Format(format!(
                "header declares {} atoms, found {}",
                header.count,
                positions.len()
            )));
        }
        Ok((Self::new(positions, weights, header.mass_bound)?, header.meta))
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w, meta)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    kind: String,
    version: u32,
    count: usize,
    mass_bound: f64,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Atom {
    x1: f64,
    x2: f64,
    w: f64,
}

/// `e^{−i m x}` for `m = 0..=kmax`.
fn neg_harmonics(x: f64, kmax: usize) -> Vec<Complex64> {
    (0..=kmax)
        .map(|m| Complex64::from_polar(1.0, -(m as f64) * x))
        .collect()
}

#[inline]
fn signed(table: &[Complex64], k: i64) -> Complex64 {
    let z = table[k.unsigned_abs() as usize];
    if k < 0 {
        z.conj()
    } else {
        z
    }
}

impl ParticleMeasure {
    /// Coefficients on an arbitrary mode list with `|k_i| ≤ kmax`.
    fn coefficients_on(&self, modes: &[[i64; 2]], kmax: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); modes.len()];
        for (p, w) in self.positions.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            let e1 = neg_harmonics(p.x1, kmax);
            let e2 = neg_harmonics(p.x2, kmax);
            for (o, k) in out.iter_mut().zip(modes) {
                *o += signed(&e1, k[0]) * signed(&e2, k[1]) * *w;
            }
        }
        out.iter_mut().for_each(|c| *c *= INV_AREA);
        out
    }
}

impl Measure for ParticleMeasure {
    fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn fourier_coefficient(&self, k: [i64; 2]) -> Complex64 {
        let sum: Complex64 = self
            .positions
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| Complex64::from_polar(*w, -(k[0] as f64 * p.x1 + k[1] as f64 * p.x2)))
            .sum();
        sum * INV_AREA
    }

    fn low_modes(&self, cutoff: usize) -> LowModes {
        let modes = disk_modes(cutoff);
        LowModes {
            cutoff,
            coeffs: self.coefficients_on(&modes, cutoff),
        }
    }

    fn pair(&self, phi: &TrigFunction) -> f64 {
        self.positions
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * phi.value(*p))
            .sum()
    }
}

impl Measure for GridField {
    fn mass(&self) -> f64 {
        self.integral()
    }

    fn fourier_coefficient(&self, k: [i64; 2]) -> Complex64 {
        self.spectrum().coefficient(k).unwrap_or_default()
    }

    fn low_modes(&self, cutoff: usize) -> LowModes {
        let spec = self.spectrum();
        LowModes {
            cutoff,
            coeffs: disk_modes(cutoff)
                .iter()
                .map(|k| spec.coefficient(*k).unwrap_or_default())
                .collect(),
        }
    }

    fn pair(&self, phi: &TrigFunction) -> f64 {
        let n = self.resolution();
        let h = self.spacing();
        let mut sum = 0.0;
        for j in 0..n {
            for i in 0..n {
                let x = TorusPoint::new(i as f64 * h, j as f64 * h);
                sum += self.values()[j * n + i] * phi.value(x);
            }
        }
        sum * h * h
    }
}

/// `Σ|w|` after merging atoms that sit at the same reduced position.
pub fn total_variation(mu: &ParticleMeasure) -> f64 {
    let mut merged: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for (p, w) in mu.positions.iter().zip(&mu.weights) {
        *merged.entry(p.key()).or_insert(0.0) += w;
    }
    merged.values().map(|w| w.abs()).sum()
}

/// Truncated `H^s` norm, `s ≤ 0`:
/// `(Σ_{|k| ≤ cutoff} (1+|k|²)^s |μ̂(k)|²)^{1/2}`.
pub fn sobolev_norm(mu: &dyn Measure, s: f64, cutoff: usize) -> Result<f64> {
    if s > 0.0 {
        return Err(Error::param("s", format!("{s} > 0; only negative orders")));
    }
    if cutoff == 0 {
        return Err(Error::param("cutoff", "must be ≥ 1"));
    }
    Ok(mu.low_modes(cutoff).sobolev_squared(s, cutoff).sqrt())
}

/// One trigonometric term `a cos(k·x) + b sin(k·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: [i64; 2],
    pub cos: f64,
    pub sin: f64,
}

/// Trigonometric polynomial test function with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigFunction {
    pub constant: f64,
    pub terms: Vec<TrigTerm>,
}

impl TrigFunction {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn cos(k: [i64; 2]) -> Self {
        Self::default().plus(k, 1.0, 0.0)
    }

    pub fn sin(k: [i64; 2]) -> Self {
        Self::default().plus(k, 0.0, 1.0)
    }

    pub fn plus(mut self, k: [i64; 2], cos: f64, sin: f64) -> Self {
        self.terms.push(TrigTerm { k, cos, sin });
        self
    }

    #[inline]
    fn phase(k: [i64; 2], x: TorusPoint) -> f64 {
        k[0] as f64 * x.x1 + k[1] as f64 * x.x2
    }

    pub fn value(&self, x: TorusPoint) -> f64 {
        self.terms.iter().fold(self.constant, |acc, t| {
            let (s, c) = Self::phase(t.k, x).sin_cos();
            acc + t.cos * c + t.sin * s
        })
    }

    pub fn gradient(&self, x: TorusPoint) -> [f64; 2] {
        let mut g = [0.0; 2];
        for t in &self.terms {
            let (s, c) = Self::phase(t.k, x).sin_cos();
            let f = -t.cos * s + t.sin * c;
            g[0] += f * t.k[0] as f64;
            g[1] += f * t.k[1] as f64;
        }
        g
    }

    pub fn hessian(&self, x: TorusPoint) -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for t in &self.terms {
            let (s, c) = Self::phase(t.k, x).sin_cos();
            let f = -(t.cos * c + t.sin * s);
            for a in 0..2 {
                for b in 0..2 {
                    h[a][b] += f * (t.k[a] * t.k[b]) as f64;
                }
            }
        }
        h
    }

    pub fn laplacian(&self, x: TorusPoint) -> f64 {
        let h = self.hessian(x);
        h[0][0] + h[1][1]
    }

    fn amplitudes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.terms
            .iter()
            .map(|t| (t.cos.hypot(t.sin), ((t.k[0] * t.k[0] + t.k[1] * t.k[1]) as f64).sqrt()))
    }

    /// Upper bound on `sup|φ|`.
    pub fn sup_norm(&self) -> f64 {
        self.constant.abs() + self.amplitudes().map(|(a, _)| a).sum::<f64>()
    }

    /// Upper bound on the Lipschitz constant, exact for a single mode.
    pub fn lipschitz(&self) -> f64 {
        self.amplitudes().map(|(a, k)| a * k).sum()
    }

    /// `sup|φ| + sup|∇φ| + sup|D²φ|` (bounded term by term; exact for a
    /// single mode).
    pub fn c2_norm(&self) -> f64 {
        self.constant.abs() + self.amplitudes().map(|(a, k)| a * (1.0 + k + k * k)).sum::<f64>()
    }
}

/// Ordered test functions `(φ_j)` defining the weak-* metric
/// `d(μ, ν) = Σ_j 2^{−j} |⟨μ − ν, φ_j⟩|`, `j = 1, 2, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFamily {
    functions: Vec<TrigFunction>,
}

impl TestFamily {
    /// The `count` lowest cosine/sine modes (constant first), ordered by
    /// `|k|` then lexicographically, cosine before sine. Each has sup-norm 1.
    pub fn standard(count: usize) -> Self {
        let mut functions = vec![TrigFunction::constant(1.0)];
        let mut r = 1usize;
        while functions.len() < count {
            for k in disk_modes(r) {
                let m2 = (k[0] * k[0] + k[1] * k[1]) as usize;
                let upper = k[0] > 0 || (k[0] == 0 && k[1] > 0);
                if !upper || m2 <= (r - 1) * (r - 1) || m2 > r * r {
                    continue;
                }
                functions.push(TrigFunction::cos(k));
                functions.push(TrigFunction::sin(k));
            }
            r += 1;
        }
        functions.truncate(count);
        Self { functions }
    }

    pub fn functions(&self) -> &[TrigFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// `Σ_j 2^{−j} Lip(φ_j)`, the Lipschitz constant of `x ↦ d(δ_x, ν)`.
    pub fn lipschitz_weight(&self) -> f64 {
        self.functions
            .iter()
            .enumerate()
            .map(|(j, f)| 0.5f64.powi(j as i32 + 1) * f.lipschitz())
            .sum()
    }

    /// `⟨μ, φ_j⟩` for every member, so distances to a fixed measure can reuse
    /// them.
    pub fn pairings(&self, mu: &dyn Measure) -> Vec<f64> {
        self.functions.iter().map(|f| mu.pair(f)).collect()
    }

    pub fn distance_from_pairings(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(j, (x, y))| 0.5f64.powi(j as i32 + 1) * (x - y).abs())
            .sum()
    }
}

impl Default for TestFamily {
    fn default() -> Self {
        Self::standard(40)
    }
}

pub fn weakstar_distance(mu: &dyn Measure, nu: &dyn Measure, family: &TestFamily) -> f64 {
    family.distance_from_pairings(&family.pairings(mu), &family.pairings(nu))
}

/// Smooths `mu` with the periodic heat kernel of variance `ε²`: Fourier
/// multiplier `e^{−ε²|k|²/2}`, sampled on an `n`-grid.
///
/// The output is non-negative for non-negative input and its grid mass equals
/// `Σ w` to rounding (the aliasing defect of the quadrature is removed by a
/// rescale, or by a constant shift for signed measures).
pub fn mollify(mu: &ParticleMeasure, epsilon: f64, n: usize) -> Result<GridField> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon} is not positive")));
    }
    if n < 4 || epsilon * n as f64 <= 4.0 - 1e-12 {
        return Err(Error::MollifierAliasing { epsilon, resolution: n });
    }
    // beyond this radius the Gaussian is below e^{-45} of its peak
    let reach = epsilon * 90f64.sqrt();
    let mut field = if reach < std::f64::consts::PI {
        mollify_physical(mu, epsilon, n, reach)
    } else {
        mollify_spectral(mu, epsilon, n, 90f64.sqrt() / epsilon)
    };

    let target = mu.mass();
    let got = field.integral();
    if mu.weights().iter().all(|w| *w >= 0.0) {
        // the smoothed non-negative measure is positive; clear roundoff
        field.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let got = field.integral();
        if got > 0.0 {
            let scale = target / got;
            field.values_mut().iter_mut().for_each(|v| *v *= scale);
        }
    } else {
        let shift = (target - got) * INV_AREA;
        field.values_mut().iter_mut().for_each(|v| *v += shift);
    }
    Ok(field)
}

fn mollify_physical(mu: &ParticleMeasure, epsilon: f64, n: usize, reach: f64) -> GridField {
    let h = TWO_PI / n as f64;
    let norm = 1.0 / (TWO_PI * epsilon * epsilon);
    let inv = 1.0 / (2.0 * epsilon * epsilon);
    let span = (reach / h).ceil() as i64;
    let mut values = vec![0.0; n * n];
    let mut g1 = Vec::with_capacity(2 * span as usize + 1);
    let mut g2 = Vec::with_capacity(2 * span as usize + 1);
    for (p, w) in mu.positions().iter().zip(mu.weights()) {
        if *w == 0.0 {
            continue;
        }
        let c1 = (p.x1 / h).round() as i64;
        let c2 = (p.x2 / h).round() as i64;
        g1.clear();
        g2.clear();
        for m in -span..=span {
            let d1 = (c1 + m) as f64 * h - p.x1;
            let d2 = (c2 + m) as f64 * h - p.x2;
            g1.push((-d1 * d1 * inv).exp());
            g2.push((-d2 * d2 * inv).exp());
        }
        for (b, gb) in g2.iter().enumerate() {
            let j = index_of(c2 + b as i64 - span, n);
            let row = &mut values[j * n..(j + 1) * n];
            let wb = w * norm * gb;
            for (a, ga) in g1.iter().enumerate() {
                row[index_of(c1 + a as i64 - span, n)] += wb * ga;
            }
        }
    }
    GridField::from_values(n, values).expect("square grid")
}

fn mollify_spectral(mu: &ParticleMeasure, epsilon: f64, n: usize, kreach: f64) -> GridField {
    let kmax = kreach.ceil() as usize;
    let k = kmax as i64;
    let mut modes = Vec::with_capacity((2 * kmax + 1).pow(2));
    for k2 in -k..=k {
        for k1 in -k..=k {
            modes.push([k1, k2]);
        }
    }
    let coeffs = mu.coefficients_on(&modes, kmax);
    let mut spec = Spectrum::zeros(n);
    for (kv, c) in modes.iter().zip(coeffs) {
        let damp = (-0.5 * epsilon * epsilon * (kv[0] * kv[0] + kv[1] * kv[1]) as f64).exp();
        // folding aliased modes reproduces exact point sampling
        let idx = index_of(kv[1], n) * n + index_of(kv[0], n);
        spec.coeffs_mut()[idx] += c * damp;
    }
    let mut fft = Fft2::new(n);
    spec.to_grid_with(&mut fft)
}

/// Preset curves carrying a vortex sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    Circle { center: [f64; 2], radius: f64 },
    Segment { start: [f64; 2], end: [f64; 2] },
}

/// `n` equal-arclength atoms of weight `total_mass / n` on `curve`.
pub fn sample_vortex_sheet(curve: &CurveSpec, n: usize, total_mass: f64) -> Result<ParticleMeasure> {
    if n < 2 {
        return Err(Error::param("n", "a sheet needs at least 2 atoms"));
    }
    if !(total_mass >= 0.0) || !total_mass.is_finite() {
        return Err(Error::param(
            "total_mass",
            format!("{total_mass} is not a non-negative mass"),
        ));
    }
    let w = total_mass / n as f64;
    let positions: Vec<TorusPoint> = match *curve {
        CurveSpec::Circle { center, radius } => {
            if !(radius > 0.0) {
                return Err(Error::param("radius", "must be positive"));
            }
            if radius >= std::f64::consts::PI {
                return Err(Error::param(
                    "radius",
                    format!("{radius} ≥ π: the circle overlaps itself on the torus"),
                ));
            }
            (0..n)
                .map(|j| {
                    let theta = TWO_PI * j as f64 / n as f64;
                    TorusPoint::new(center[0] + radius * theta.cos(), center[1] + radius * theta.sin())
                })
                .collect()
        }
        CurveSpec::Segment { start, end } => {
            let d = [end[0] - start[0], end[1] - start[1]];
            if d[0] == 0.0 && d[1] == 0.0 {
                return Err(Error::param("segment", "zero length"));
            }
            if d[0].abs() >= TWO_PI || d[1].abs() >= TWO_PI {
                return Err(Error::param("segment", "spans a full period and wraps onto itself"));
            }
            (0..n)
                .map(|j| {
                    let t = (j as f64 + 0.5) / n as f64;
                    TorusPoint::new(start[0] + t * d[0], start[1] + t * d[1])
                })
                .collect()
        }
    };
    ParticleMeasure::new(positions, vec![w; n], total_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn point(x: f64, y: f64) -> TorusPoint {
        TorusPoint::new(x, y)
    }

    #[test]
    fn total_variation_cases() {
        let one = ParticleMeasure::from_atoms(vec![point(1.0, 1.0)], vec![1.0]).unwrap();
        assert_eq!(total_variation(&one), 1.0);
        let pm = ParticleMeasure::from_atoms(vec![point(1.0, 1.0), point(2.0, 1.0)], vec![0.5, -0.5]).unwrap();
        assert_eq!(total_variation(&pm), 1.0);
        let cancel = ParticleMeasure::from_atoms(vec![point(1.0, 1.0), point(1.0, 1.0)], vec![1.0, -1.0]).unwrap();
        assert_eq!(total_variation(&cancel), 0.0);
        // coincidence is decided after reduction modulo 2π
        let wrapped = ParticleMeasure::from_atoms(vec![point(0.0, 1.0), point(TWO_PI, 1.0)], vec![1.0, -1.0]).unwrap();
        assert_eq!(total_variation(&wrapped), 0.0);
    }

    #[test]
    fn mass_bound_enforced() {
        let err = ParticleMeasure::new(vec![point(0.0, 0.0); 2], vec![0.7, -0.7], 1.0);
        assert!(matches!(err, Err(Error::MassBound { .. })));
    }

    #[test]
    fn point_mass_spectrum_flat() {
        let mu = ParticleMeasure::from_atoms(vec![point(0.0, 0.0)], vec![TWO_PI * TWO_PI]).unwrap();
        for k in [[0, 0], [1, 0], [3, -7], [12, 5]] {
            let c = mu.fourier_coefficient(k);
            assert!((c.re - 1.0).abs() < 1e-14 && c.im.abs() < 1e-14);
        }
        let lm = mu.low_modes(5);
        for c in &lm.coeffs {
            assert!((c.re - 1.0).abs() < 1e-13 && c.im.abs() < 1e-13);
        }
    }

    #[test]
    fn mean_mode_is_scaled_mass() {
        let mu = ParticleMeasure::from_atoms(vec![point(0.3, 2.0), point(4.0, 1.0)], vec![0.25, -1.5]).unwrap();
        let c = mu.fourier_coefficient([0, 0]);
        assert!((c.re - INV_AREA * (0.25 - 1.5)).abs() < 1e-16);
        assert_eq!(c.im, 0.0);
    }

    #[test]
    fn uniform_grid_measure_has_no_low_modes() {
        let n = 64;
        let h = TWO_PI / 8.0;
        let positions: Vec<_> = (0..n).map(|i| point((i % 8) as f64 * h, (i / 8) as f64 * h)).collect();
        let mu = ParticleMeasure::from_atoms(positions, vec![TWO_PI * TWO_PI / n as f64; n]).unwrap();
        for k in disk_modes(3).into_iter().filter(|k| *k != [0, 0]) {
            assert!(mu.fourier_coefficient(k).norm() <= 1e-12, "{k:?}");
        }
    }

    #[test]
    fn single_mode_hminus1() {
        // ξ̂(±1, 0) = 1/2, so ‖ξ‖² = 2·(1/2)²·(1+1)⁻¹
        let xi = GridField::from_fn(32, |x1, _| x1.cos());
        let norm = sobolev_norm(&xi, -1.0, 4).unwrap();
        assert!((norm * norm - 0.25).abs() < 1e-14);
        assert_eq!(sobolev_norm(&ParticleMeasure::empty(), -1.0, 8).unwrap(), 0.0);
        assert!(sobolev_norm(&xi, 0.5, 4).is_err());
    }

    #[test]
    fn hminus4_of_point_mass_converges() {
        let mu = ParticleMeasure::from_atoms(vec![point(1.0, 2.0)], vec![1.0]).unwrap();
        let a = sobolev_norm(&mu, -4.0, 32).unwrap();
        let b = sobolev_norm(&mu, -4.0, 64).unwrap();
        assert!((a - b).abs() / b < 0.01);
    }

    #[test]
    fn point_mass_hminus1_grows_logarithmically() {
        let mu = ParticleMeasure::from_atoms(vec![point(2.0, 5.0)], vec![1.0]).unwrap();
        let sq = |c| sobolev_norm(&mu, -1.0, c).unwrap().powi(2);
        let (a, b, c) = (sq(16), sq(32), sq(64));
        // Σ_{|k|≤K} (1+|k|²)⁻¹ grows like 2π log K; here scaled by (2π)⁻⁴
        let slope = ((c - b) + (b - a)) / (2.0 * 2f64.ln());
        let expected = TWO_PI * INV_AREA * INV_AREA;
        assert!((slope - expected).abs() < 0.2 * expected, "{slope} vs {expected}");

        let sheet = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [PI, PI],
                radius: 1.0,
            },
            512,
            1.0,
        )
        .unwrap();
        let smooth = mollify(&sheet, 0.05, 256).unwrap();
        let s32 = sobolev_norm(&smooth, -1.0, 32).unwrap().powi(2);
        let s64 = sobolev_norm(&smooth, -1.0, 64).unwrap().powi(2);
        assert!((s64 - s32) / (2f64.ln()) < 0.05 * expected);
    }

    #[test]
    fn test_family_ordering() {
        let fam = TestFamily::standard(40);
        assert_eq!(fam.len(), 40);
        assert_eq!(fam.functions()[0], TrigFunction::constant(1.0));
        assert_eq!(fam.functions()[1], TrigFunction::cos([0, 1]));
        assert_eq!(fam.functions()[2], TrigFunction::sin([0, 1]));
        assert_eq!(fam.functions()[3], TrigFunction::cos([1, 0]));
        for f in fam.functions() {
            assert!(f.sup_norm() <= 1.0);
        }
        let fam8 = TestFamily::standard(8);
        assert_eq!(fam8.functions()[5], TrigFunction::cos([1, -1]));
    }

    #[test]
    fn weakstar_identity_symmetry_and_lipschitz() {
        let fam = TestFamily::default();
        let a = ParticleMeasure::from_atoms(vec![point(1.0, 1.0), point(3.0, 2.0)], vec![0.4, 0.6]).unwrap();
        let b = ParticleMeasure::from_atoms(vec![point(5.0, 0.2)], vec![1.0]).unwrap();
        assert_eq!(weakstar_distance(&a, &a, &fam), 0.0);
        assert_eq!(weakstar_distance(&a, &b, &fam), weakstar_distance(&b, &a, &fam));

        let x = point(2.0, 3.0);
        let y = x.translate([0.6e-3, 0.8e-3]);
        let dx = ParticleMeasure::from_atoms(vec![x], vec![1.0]).unwrap();
        let dy = ParticleMeasure::from_atoms(vec![y], vec![1.0]).unwrap();
        let d = weakstar_distance(&dx, &dy, &fam);
        assert!(d > 0.0 && d <= fam.lipschitz_weight() * 1e-3 * (1.0 + 1e-9));
    }

    #[test]
    fn trig_gradient_matches_finite_differences() {
        let phi = TrigFunction::constant(0.3)
            .plus([1, 2], 0.5, -1.0)
            .plus([-3, 1], 0.2, 0.7);
        let x = point(0.9, 4.4);
        let h = 1e-6;
        let g = phi.gradient(x);
        for l in 0..2 {
            let mut e = [0.0; 2];
            e[l] = h;
            let p = phi.value(x.translate(e));
            e[l] = -h;
            let q = phi.value(x.translate(e));
            assert!(((p - q) / (2.0 * h) - g[l]).abs() < 1e-6);
        }
        let lap = phi.laplacian(x);
        let expected = -5.0 * (0.5 * (0.9f64 + 8.8).cos() - (0.9f64 + 8.8).sin())
            - 10.0 * (0.2 * (-2.7f64 + 4.4).cos() + 0.7 * (-2.7f64 + 4.4).sin());
        assert!((lap - expected).abs() < 1e-12);
    }

    #[test]
    fn mollify_preserves_mass_and_sign() {
        let sheet = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [3.0, 3.0],
                radius: 1.0,
            },
            128,
            1.0,
        )
        .unwrap();
        for (eps, n) in [(0.05, 128), (0.2, 64), (0.5, 64), (1.5, 32)] {
            let f = mollify(&sheet, eps, n).unwrap();
            assert!((f.integral() - 1.0).abs() < 1e-12, "ε={eps}");
            assert!(f.min() >= -1e-12);
        }
        assert!(matches!(
            mollify(&sheet, 0.05, 64),
            Err(Error::MollifierAliasing { .. })
        ));
        assert!(mollify(&sheet, 0.0, 64).is_err());
    }

    #[test]
    fn mollify_wide_limit_is_constant() {
        let mu = ParticleMeasure::from_atoms(vec![point(1.0, 1.0), point(4.0, 2.0)], vec![0.3, 0.9]).unwrap();
        let f = mollify(&mu, 10.0, 32).unwrap();
        let c = 1.2 * INV_AREA;
        assert!(f.values().iter().all(|v| (v - c).abs() < 1e-14));
    }

    #[test]
    fn mollify_routes_agree() {
        // straddles the switch between windowed Gaussians and spectral synthesis
        let mu = ParticleMeasure::from_atoms(vec![point(1.0, 5.5), point(4.0, 0.1)], vec![0.3, 0.9]).unwrap();
        let eps = 0.3;
        let a = mollify_physical(&mu, eps, 64, PI - 1e-9);
        let b = mollify_spectral(&mu, eps, 64, 90f64.sqrt() / eps);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mollified_delta_matches_heat_kernel() {
        let x0 = point(2.0, 3.5);
        let mu = ParticleMeasure::from_atoms(vec![x0], vec![1.0]).unwrap();
        let (eps, n) = (0.15, 128);
        let f = mollify(&mu, eps, n).unwrap();
        // oracle: the heat kernel as a Fourier series
        let kernel = |x: [f64; 2]| {
            let mut s = 0.0;
            for k1 in -60i64..=60 {
                for k2 in -60i64..=60 {
                    let k2n = (k1 * k1 + k2 * k2) as f64;
                    let ph = k1 as f64 * (x[0] - x0.x1) + k2 as f64 * (x[1] - x0.x2);
                    s += (-0.5 * eps * eps * k2n).exp() * ph.cos();
                }
            }
            s * INV_AREA
        };
        for (i, j) in [(40, 71), (41, 72), (50, 80), (10, 10), (45, 75)] {
            let v = f.values()[j * n + i];
            assert!((v - kernel(f.node(i, j))).abs() < 1e-8, "({i},{j})");
        }
        let (imax, _) = f.values().iter().enumerate().fold(
            (0, f64::MIN),
            |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) },
        );
        let node = TorusPoint::from(f.node(imax % n, imax / n));
        assert!(node.distance(x0) <= f.spacing());
    }

    #[test]
    fn circle_sheet_atoms() {
        let s = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [0.0, 0.0],
                radius: 1.0,
            },
            4,
            1.0,
        )
        .unwrap();
        assert_eq!(s.weights(), &[0.25; 4]);
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, e) in s.positions().iter().zip(expect) {
            assert!(p.distance(point(e.0, e.1)) < 1e-15);
        }
        let big = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [1.0, 1.0],
                radius: 0.7,
            },
            333,
            2.5,
        )
        .unwrap();
        assert_eq!(total_variation(&big), big.weights().iter().sum::<f64>());
        assert!((total_variation(&big) - 2.5).abs() < 1e-13);
        assert!(sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [1.0, 1.0],
                radius: 3.2
            },
            8,
            1.0
        )
        .is_err());
        assert!(sample_vortex_sheet(
            &CurveSpec::Segment {
                start: [0.0, 0.0],
                end: [7.0, 0.0]
            },
            8,
            1.0
        )
        .is_err());
        assert!(sample_vortex_sheet(
            &CurveSpec::Segment {
                start: [0.0, 0.0],
                end: [3.0, 1.0]
            },
            8,
            1.0
        )
        .is_ok());
        assert!(sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [1.0, 1.0],
                radius: 1.0
            },
            1,
            1.0
        )
        .is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [1.0, 2.0],
                radius: 0.5,
            },
            16,
            3.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf, serde_json::json!({"source": "test"})).unwrap();
        let (back, meta) = ParticleMeasure::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta["source"], "test");
    }

    #[test]
    fn sheet_hminus1_stable_in_cutoff() {
        let s = sample_vortex_sheet(
            &CurveSpec::Circle {
                center: [PI, PI],
                radius: 1.0,
            },
            512,
            1.0,
        )
        .unwrap();
        let a = sobolev_norm(&s, -1.0, 32).unwrap();
        let b = sobolev_norm(&s, -1.0, 64).unwrap();
        assert!((b - a) / a < 0.05, "{a} {b}");
    }
}
