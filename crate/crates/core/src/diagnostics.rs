//! Per-state diagnostics and the a priori bounds as pass/fail checks.
//!
//! Every check is a pure function of recorded data (`DiagnosticsRecord`
//! sequences or an `EnsembleSummary`), so re-running it on a saved CSV gives
//! the same verdict.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::GridField;
use crate::measure::{disk_modes, total_variation, LowModes, Measure, ParticleMeasure, TestFamily};

/// Allowed undershoot of a grid solution below zero, relative to `max ξ₀`.
pub const POSITIVITY_BUDGET: f64 = 0.01;
/// Relative mass drift tolerated on a grid.
pub const GRID_MASS_TOLERANCE: f64 = 1e-12;
pub const MIN_ENERGY_MEMBERS: usize = 16;
/// Relative slack on the energy envelope for the drift of an explicit time
/// step, which conserves energy only up to `O(dt³)` per step.
pub const ENERGY_STEP_ALLOWANCE: f64 = 1e-8;
pub const MIN_HOLDER_MEMBERS: usize = 32;
pub const MIN_HOLDER_LAGS: usize = 5;
pub const HOLDER_SLOPE_FLOOR: f64 = 0.8;
/// Smallest Hölder lag, in recorded steps.
pub const HOLDER_BASE_LAG: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    /// Smallest weight (particles) or grid value.
    pub min_value: f64,
    pub max_value: f64,
    pub tv_norm: f64,
    /// `‖u‖²` as a mode sum; truncated at the diagnostics cutoff for
    /// particles, where it is otherwise infinite.
    pub energy: f64,
    /// Grid runs only.
    pub enstrophy: Option<f64>,
    pub hminus1: f64,
    pub hminus4: f64,
    pub weakstar_to_init: f64,
}

/// Computes records against a frozen initial measure and cutoff.
#[derive(Debug, Clone)]
pub struct Recorder {
    cutoff: usize,
    family: TestFamily,
    reference: Vec<f64>,
}

impl Recorder {
    pub fn new(initial: &dyn Measure, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::param("diag.cutoff", "must be ≥ 1"));
        }
        let family = TestFamily::default();
        let reference = family.pairings(initial);
        Ok(Self {
            cutoff,
            family,
            reference,
        })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn particles(&self, t: f64, mu: &ParticleMeasure) -> DiagnosticsRecord {
        let modes = mu.low_modes(self.cutoff);
        let w = mu.weights();
        let (min_value, max_value) = if w.is_empty() {
            (0.0, 0.0)
        } else {
            (
                w.iter().copied().fold(f64::INFINITY, f64::min),
                w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        DiagnosticsRecord {
            t,
            mass: mu.mass(),
            min_value,
            max_value,
            tv_norm: total_variation(mu),
            energy: truncated_energy(&modes),
            enstrophy: None,
            hminus1: modes.sobolev_squared(-1.0, self.cutoff).sqrt(),
            hminus4: modes.sobolev_squared(-4.0, self.cutoff).sqrt(),
            weakstar_to_init: self.weakstar(mu),
        }
    }

    pub fn grid(&self, t: f64, field: &GridField) -> DiagnosticsRecord {
        let spec = field.spectrum();
        let modes = LowModes {
            cutoff: self.cutoff,
            coeffs: disk_modes(self.cutoff)
                .iter()
                .map(|k| spec.coefficient(*k).unwrap_or_default())
                .collect(),
        };
        let mut energy = 0.0;
        let mut enstrophy = 0.0;
        for (idx, z) in spec.coeffs().iter().enumerate() {
            let k = spec.wavevector(idx);
            let m2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            enstrophy += z.norm_sqr();
            if m2 > 0.0 {
                energy += z.norm_sqr() / m2;
            }
        }
        let h = field.spacing();
        DiagnosticsRecord {
            t,
            mass: field.integral(),
            min_value: field.min(),
            max_value: field.max(),
            tv_norm: field.values().iter().map(|v| v.abs()).sum::<f64>() * h * h,
            energy,
            enstrophy: Some(enstrophy),
            hminus1: modes.sobolev_squared(-1.0, self.cutoff).sqrt(),
            hminus4: modes.sobolev_squared(-4.0, self.cutoff).sqrt(),
            weakstar_to_init: self.weakstar(field),
        }
    }

    fn weakstar(&self, mu: &dyn Measure) -> f64 {
        self.family
            .distance_from_pairings(&self.family.pairings(mu), &self.reference)
    }
}

fn truncated_energy(modes: &LowModes) -> f64 {
    disk_modes(modes.cutoff)
        .iter()
        .zip(&modes.coeffs)
        .filter(|(k, _)| k[0] != 0 || k[1] != 0)
        .map(|(k, c)| c.norm_sqr() / (k[0] * k[0] + k[1] * k[1]) as f64)
        .sum()
}

pub fn write_records(w: impl Write, records: &[DiagnosticsRecord]) -> Result<()> {
    write_csv(w, records)
}

pub fn read_records(r: impl Read) -> Result<Vec<DiagnosticsRecord>> {
    read_csv(r)
}

pub fn save_records(path: impl AsRef<Path>, records: &[DiagnosticsRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(f), records)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<DiagnosticsRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(std::io::BufReader::new(f))
}

pub(crate) fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().map(|row| Ok(row?)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares; `None` for fewer than two points or a degenerate
/// abscissa.
pub fn fit_line(pts: &[(f64, f64)]) -> Option<LineFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// One line of a check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub time: f64,
    pub statistic: f64,
    pub envelope: f64,
    /// Positive when the row passes with room to spare.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: String,
    pub rows: Vec<CheckRow>,
    pub note: Option<String>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&CheckRow> {
        self.rows.iter().find(|r| !r.pass)
    }
}

/// Report CSV with columns `check, time, statistic, envelope, margin, pass`.
pub fn write_reports(w: impl Write, reports: &[CheckReport]) -> Result<()> {
    let rows: Vec<&CheckRow> = reports.iter().flat_map(|r| &r.rows).collect();
    write_csv(w, &rows)
}

pub fn read_report_rows(r: impl Read) -> Result<Vec<CheckRow>> {
    read_csv(r)
}

/// Below-envelope row: passes when `statistic ≤ envelope`.
fn upper_row(check: &str, time: f64, statistic: f64, envelope: f64) -> CheckRow {
    CheckRow {
        check: check.to_string(),
        time,
        statistic,
        envelope,
        margin: envelope - statistic,
        pass: statistic <= envelope,
    }
}

/// Above-floor row: passes when `statistic ≥ envelope`.
fn lower_row(check: &str, time: f64, statistic: f64, envelope: f64) -> CheckRow {
    CheckRow {
        check: check.to_string(),
        time,
        statistic,
        envelope,
        margin: statistic - envelope,
        pass: statistic >= envelope,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    Particles,
    Grid,
}

/// Mass must not move (particles: bitwise; grid: `1e-12` relative) and the
/// solution must stay non-negative (particles: every weight; grid: within
/// the undershoot budget of `max ξ₀`).
pub fn check_mass_positivity(records: &[DiagnosticsRecord], kind: Discretization) -> CheckReport {
    let mut rows = Vec::with_capacity(2 * records.len());
    let Some(first) = records.first() else {
        return CheckReport {
            check: "mass_positivity".into(),
            rows,
            note: Some("empty trajectory".into()),
        };
    };
    let scale = first.mass.abs().max(f64::MIN_POSITIVE);
    let (mass_tol, floor) = match kind {
        Discretization::Particles => (0.0, 0.0),
        Discretization::Grid => (GRID_MASS_TOLERANCE, -POSITIVITY_BUDGET * first.max_value.max(0.0)),
    };
    for r in records {
        let drift = if kind == Discretization::Particles && r.mass == first.mass {
            0.0
        } else {
            (r.mass - first.mass).abs() / scale
        };
        rows.push(upper_row("mass", r.t, drift, mass_tol));
        rows.push(lower_row("positivity", r.t, r.min_value, floor));
    }
    CheckReport {
        check: "mass_positivity".into(),
        rows,
        note: None,
    }
}

/// Ensemble mean and standard error of every diagnostic at one output time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: f64,
    pub members: usize,
    pub mass_mean: f64,
    pub mass_se: f64,
    /// Worst value over members, not a mean.
    pub min_value: f64,
    pub tv_norm_mean: f64,
    pub tv_norm_se: f64,
    pub energy_mean: f64,
    pub energy_se: f64,
    pub enstrophy_mean: Option<f64>,
    pub enstrophy_se: Option<f64>,
    pub hminus1_mean: f64,
    pub hminus1_se: f64,
    pub hminus4_mean: f64,
    pub hminus4_se: f64,
    pub weakstar_mean: f64,
    pub weakstar_se: f64,
}

/// Mean of `E‖ξ_{s+lag} − ξ_s‖²_{H⁻⁴}` over members and start times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderLag {
    pub lag: f64,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub members: usize,
    pub rows: Vec<SummaryRow>,
    pub holder: Vec<HolderLag>,
    pub holder_fit: Option<LineFit>,
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl EnsembleSummary {
    /// Reduces per-member record sequences (in member order) that share the
    /// same output times.
    pub fn from_members(members: &[Vec<DiagnosticsRecord>], holder: Vec<HolderLag>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::param("members", "no member records"));
        };
        for (m, recs) in members.iter().enumerate() {
            if recs.len() != first.len() || recs.iter().zip(first).any(|(a, b)| a.t != b.t) {
                return Err(Error::Format(format!("member {m} was recorded at different times")));
            }
        }
        let rows = (0..first.len())
            .map(|i| {
                let col = |f: fn(&DiagnosticsRecord) -> f64| mean_se(members.iter().map(move |m| f(&m[i])));
                let (mass_mean, mass_se) = col(|r| r.mass);
                let (tv_norm_mean, tv_norm_se) = col(|r| r.tv_norm);
                let (energy_mean, energy_se) = col(|r| r.energy);
                let (hminus1_mean, hminus1_se) = col(|r| r.hminus1);
                let (hminus4_mean, hminus4_se) = col(|r| r.hminus4);
                let (weakstar_mean, weakstar_se) = col(|r| r.weakstar_to_init);
                let (enstrophy_mean, enstrophy_se) = if members.iter().all(|m| m[i].enstrophy.is_some()) {
                    let (a, b) = mean_se(members.iter().map(|m| m[i].enstrophy.unwrap_or_default()));
                    (Some(a), Some(b))
                } else {
                    (None, None)
                };
                SummaryRow {
                    t: first[i].t,
                    members: members.len(),
                    mass_mean,
                    mass_se,
                    min_value: members.iter().map(|m| m[i].min_value).fold(f64::INFINITY, f64::min),
                    tv_norm_mean,
                    tv_norm_se,
                    energy_mean,
                    energy_se,
                    enstrophy_mean,
                    enstrophy_se,
                    hminus1_mean,
                    hminus1_se,
                    hminus4_mean,
                    hminus4_se,
                    weakstar_mean,
                    weakstar_se,
                }
            })
            .collect();
        Ok(Self::from_parts(members.len(), rows, holder))
    }

    pub fn from_parts(members: usize, rows: Vec<SummaryRow>, holder: Vec<HolderLag>) -> Self {
        let holder_fit = holder_fit(&holder);
        Self {
            members,
            rows,
            holder,
            holder_fit,
        }
    }

    pub fn write_rows(&self, w: impl Write) -> Result<()> {
        write_csv(w, &self.rows)
    }

    pub fn write_holder(&self, w: impl Write) -> Result<()> {
        write_csv(w, &self.holder)
    }

    pub fn read(rows: impl Read, holder: impl Read) -> Result<Self> {
        let rows: Vec<SummaryRow> = read_csv(rows)?;
        let members = rows.first().map_or(0, |r| r.members);
        Ok(Self::from_parts(members, rows, read_csv(holder)?))
    }
}

fn holder_fit(lags: &[HolderLag]) -> Option<LineFit> {
    if lags.iter().any(|l| !(l.mean > 0.0)) {
        return None;
    }
    let pts: Vec<(f64, f64)> = lags.iter().map(|l| (l.lag.ln(), l.mean.ln())).collect();
    fit_line(&pts)
}

/// Dyadic lags `4·2^j` steps with `lag ≤ steps/4`, i.e. `[4dt, T/4]`.
pub fn holder_lag_steps(steps: usize) -> Vec<usize> {
    let mut lags = Vec::new();
    let mut l = HOLDER_BASE_LAG;
    while 4 * l <= steps {
        lags.push(l);
        l *= 2;
    }
    lags
}

/// Per-lag sums of `‖ξ_{s+lag} − ξ_s‖²_{H⁻⁴}` over start times `s` spaced by
/// the base lag, for one member whose low modes were kept every
/// `HOLDER_BASE_LAG` steps (`history[i]` at step `i·HOLDER_BASE_LAG`).
pub fn member_increments(history: &[LowModes], lag_steps: &[usize]) -> Vec<(f64, usize)> {
    lag_steps
        .iter()
        .map(|&l| {
            let offset = l / HOLDER_BASE_LAG;
            let pairs = history.iter().zip(history.iter().skip(offset));
            let sum = pairs.clone().map(|(a, b)| b.sobolev_distance_squared(a, -4.0)).sum();
            (sum, pairs.count())
        })
        .collect()
}

/// Combines per-member increment sums (in member order) into lag means.
pub fn reduce_increments(members: &[Vec<(f64, usize)>], lag_steps: &[usize], dt: f64) -> Vec<HolderLag> {
    lag_steps
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let (sum, samples) = members.iter().fold((0.0, 0), |(s, c), m| (s + m[j].0, c + m[j].1));
            HolderLag {
                lag: l as f64 * dt,
                mean: if samples > 0 { sum / samples as f64 } else { 0.0 },
                samples,
            }
        })
        .collect()
}

/// Mean energy must stay under `E(0)·exp(t·Σ‖σ_k‖_{C¹})·(1 + 3·rel. SE)`.
pub fn check_energy_bound(summary: &EnsembleSummary, c1_sum: f64) -> Result<CheckReport> {
    if summary.members < MIN_ENERGY_MEMBERS {
        return Err(Error::param(
            "members",
            format!(
                "energy check needs ≥ {MIN_ENERGY_MEMBERS} members, got {}",
                summary.members
            ),
        ));
    }
    let e0 = summary.rows.first().map_or(0.0, |r| r.energy_mean);
    let rows = summary
        .rows
        .iter()
        .map(|r| {
            let rel = if r.energy_mean > 0.0 {
                r.energy_se / r.energy_mean
            } else {
                0.0
            };
            let envelope = e0 * (r.t * c1_sum).exp() * (1.0 + 3.0 * rel + ENERGY_STEP_ALLOWANCE);
            upper_row("energy", r.t, r.energy_mean, envelope)
        })
        .collect();
    Ok(CheckReport {
        check: "energy".into(),
        rows,
        note: None,
    })
}

/// Accepted range of the fitted Hölder slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeWindow {
    pub min: f64,
    pub max: Option<f64>,
}

impl Default for SlopeWindow {
    fn default() -> Self {
        Self {
            min: HOLDER_SLOPE_FLOOR,
            max: None,
        }
    }
}

impl SlopeWindow {
    /// Without noise the path is Lipschitz in time and the slope is 2.
    pub fn deterministic() -> Self {
        Self {
            min: 1.6,
            max: Some(2.2),
        }
    }
}

/// Fits `log E‖ξ_t − ξ_s‖²_{H⁻⁴}` against `log(t − s)`. A field that never
/// moves is reported as degenerate and passes.
pub fn check_holder_scaling(summary: &EnsembleSummary, window: SlopeWindow) -> Result<CheckReport> {
    if summary.members < MIN_HOLDER_MEMBERS {
        return Err(Error::param(
            "members",
            format!(
                "Hölder check needs ≥ {MIN_HOLDER_MEMBERS} members, got {}",
                summary.members
            ),
        ));
    }
    if summary.holder.len() < MIN_HOLDER_LAGS {
        return Err(Error::param(
            "sim.T",
            format!(
                "only {} dyadic lags fit in [4dt, T/4]; need {MIN_HOLDER_LAGS}",
                summary.holder.len()
            ),
        ));
    }
    let last = summary.holder.last().map_or(0.0, |l| l.lag);
    if summary.holder.iter().all(|l| l.mean == 0.0) {
        return Ok(CheckReport {
            check: "holder".into(),
            rows: vec![upper_row("holder_increment", last, 0.0, 0.0)],
            note: Some("degenerate: all increments vanish".into()),
        });
    }
    let Some(fit) = summary.holder_fit else {
        return Ok(CheckReport {
            check: "holder".into(),
            rows: vec![lower_row("holder_slope", last, f64::NAN, window.min)],
            note: Some("some lags have zero increments; slope undefined".into()),
        });
    };
    let mut rows = vec![lower_row("holder_slope", last, fit.slope, window.min)];
    if let Some(max) = window.max {
        rows.push(upper_row("holder_slope_max", last, fit.slope, max));
    }
    Ok(CheckReport {
        check: "holder".into(),
        rows,
        note: Some(format!("r² = {:.4}", fit.r_squared)),
    })
}

/// `max_t E‖ξ_t‖_{H⁻¹} ≤ exp(t·c1_sum)^{1/2}·(‖ξ₀‖_{H⁻¹} + |ξ₀|_TV)` plus
/// three standard errors.
pub fn check_hminus1_uniform(summary: &EnsembleSummary, c1_sum: f64) -> CheckReport {
    let base = summary.rows.first().map_or(0.0, |r| r.hminus1_mean + r.tv_norm_mean);
    let rows: Vec<CheckRow> = summary
        .rows
        .iter()
        .map(|r| {
            upper_row(
                "hminus1",
                r.t,
                r.hminus1_mean,
                (0.5 * r.t * c1_sum).exp() * base + 3.0 * r.hminus1_se,
            )
        })
        .collect();
    let note = rows
        .iter()
        .find(|r| !r.pass)
        .map(|r| format!("first violation at t = {}", r.time));
    CheckReport {
        check: "hminus1".into(),
        rows,
        note,
    }
}
