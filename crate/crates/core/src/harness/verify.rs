//! The property suite behind `sel verify`: noise assumptions, kernel
//! identities, the nonlinear oracle and a priori checks on a canned
//! ensemble.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{parse_config, RunConfig};
use super::run::{run_ensemble, EnsembleSpec, Experiment, InitialData, SolverChoice};
use crate::diagnostics::{write_csv, write_reports, CheckReport};
use crate::error::{Error, Result};
use crate::fft::{random_band_limited, GridField, Spectrum};
use crate::kernel::{
    kernel_eval, spectral_curl, spectral_divergence, velocity_spectrum, KernelTable, PeriodicKernel, SpectralKernel,
};
use crate::measure::{sample_vortex_sheet, CurveSpec, ParticleMeasure, TestFamily, TrigFunction};
use crate::noise::NoiseBasis;
use crate::nonlinear::{
    classical_pairing, continuity_experiment, continuity_table, dipole_sequence, mollified_sequence, nonlinear_grid,
};
use crate::torus::{TorusPoint, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Noise,
    Kernel,
    Nonlinear,
    Apriori,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Noise, Suite::Kernel, Suite::Nonlinear, Suite::Apriori];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "kernel" => Ok(Self::Kernel),
            "nonlinear" => Ok(Self::Nonlinear),
            "apriori" => Ok(Self::Apriori),
            other => Err(Error::param(
                "suite",
                format!("`{other}` is not one of noise, kernel, nonlinear, apriori"),
            )),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Noise => "noise",
            Self::Kernel => "kernel",
            Self::Nonlinear => "nonlinear",
            Self::Apriori => "apriori",
        })
    }
}

/// Whether `tolerance` caps the value or is a floor for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub suite: Suite,
    pub case: String,
    pub metric: String,
    pub bound: Bound,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyRow {
    fn at_most(suite: Suite, case: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        Self::new(suite, case, metric, Bound::Max, value, tolerance)
    }

    fn at_least(suite: Suite, case: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        Self::new(suite, case, metric, Bound::Min, value, tolerance)
    }

    fn new(suite: Suite, case: &str, metric: &str, bound: Bound, value: f64, tolerance: f64) -> Self {
        let pass = match bound {
            Bound::Max => value <= tolerance,
            Bound::Min => value >= tolerance,
        };
        Self {
            suite,
            case: case.into(),
            metric: metric.into(),
            bound,
            value,
            tolerance,
            pass,
        }
    }
}

/// The nonlinear report layout: `case, metric, value, tolerance, pass`.
#[derive(Serialize)]
struct CaseRow<'a> {
    case: &'a str,
    metric: &'a str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Smaller resolutions and ensembles; the whole suite runs in well
    /// under a minute on a laptop.
    pub quick: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub rows: Vec<VerifyRow>,
    pub apriori: Vec<CheckReport>,
    pub report: PathBuf,
}

impl VerifyOutcome {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&VerifyRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }
}

/// Runs `suites` and writes `verify_report.csv` into `out`, plus
/// `nonlinear.csv` and `apriori.csv` (with the canned ensemble under
/// `apriori/`) when those suites run.
pub fn run_verify(suites: &[Suite], opts: VerifyOptions, out: &Path) -> Result<VerifyOutcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut apriori = Vec::new();
    for suite in Suite::ALL.iter().filter(|s| suites.contains(s)) {
        match suite {
            Suite::Noise => rows.extend(noise_suite(100, opts.seed)?),
            Suite::Kernel => rows.extend(kernel_suite(opts.seed)?),
            Suite::Nonlinear => {
                let found = nonlinear_suite(opts.quick)?;
                let cases: Vec<CaseRow> = found
                    .iter()
                    .map(|r| CaseRow {
                        case: &r.case,
                        metric: &r.metric,
                        value: r.value,
                        tolerance: r.tolerance,
                        pass: r.pass,
                    })
                    .collect();
                save(&out.join("nonlinear.csv"), |w| write_csv(w, &cases))?;
                rows.extend(found);
            }
            Suite::Apriori => {
                let reports = apriori_suite(opts, Some(&out.join("apriori")))?;
                save(&out.join("apriori.csv"), |w| write_reports(w, &reports))?;
                rows.extend(reports.iter().map(|r| {
                    let margin = r.rows.iter().map(|row| row.margin).fold(f64::INFINITY, f64::min);
                    let mut row = VerifyRow::at_least(Suite::Apriori, &r.check, "min_margin", margin, 0.0);
                    row.pass = r.pass();
                    row
                }));
                apriori = reports;
            }
        }
    }
    let report = out.join("verify_report.csv");
    save(&report, |w| write_csv(w, &rows))?;
    Ok(VerifyOutcome { rows, apriori, report })
}

fn save(path: &Path, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(file)
}

fn random_point(rng: &mut ChaCha8Rng) -> TorusPoint {
    TorusPoint::new(rng.random_range(0.0..TWO_PI), rng.random_range(0.0..TWO_PI))
}

/// Structure of the default transport noise (`β = 4`, cutoff 8) at
/// `points` random locations.
pub fn noise_suite(points: usize, seed: u64) -> Result<Vec<VerifyRow>> {
    let basis = NoiseBasis::new(4.0, 8)?;
    let c = basis.c();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diag, mut deriv, mut corr, mut transpose, mut shift) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..points {
        let x = random_point(&mut rng);
        let y = random_point(&mut rng);
        let z = random_point(&mut rng);
        let a = basis.covariance(x, x);
        diag = diag
            .max((a[0][0] - c).abs())
            .max((a[1][1] - c).abs())
            .max(a[0][1].abs())
            .max(a[1][0].abs());
        for plane in basis.covariance_y_derivative_at_diagonal(x) {
            for row in plane {
                deriv = deriv.max(row[0].abs()).max(row[1].abs());
            }
        }
        let s = basis.strat_drift_correction(x);
        corr = corr.max(s[0].abs()).max(s[1].abs());
        let axy = basis.covariance(x, y);
        let ayx = basis.covariance(y, x);
        let moved = basis.covariance(TorusPoint::new(x.x1 - y.x1 + z.x1, x.x2 - y.x2 + z.x2), z);
        for i in 0..2 {
            for j in 0..2 {
                transpose = transpose.max((axy[i][j] - ayx[j][i]).abs());
                shift = shift.max((axy[i][j] - moved[i][j]).abs());
            }
        }
    }
    let n = 4 * basis.cutoff().next_power_of_two();
    let mut div = 0.0f64;
    for m in 0..basis.len() {
        let mut w = vec![0.0; basis.len()];
        w[m] = 1.0;
        let [u1, u2] = basis.field_spectrum(n, &w);
        div = div.max(max_abs(&spectral_divergence(&u1, &u2)));
    }
    let s = Suite::Noise;
    Ok(vec![
        VerifyRow::at_least(s, "constant", "c", c, f64::MIN_POSITIVE),
        VerifyRow::at_most(s, "covariance_diagonal", "max_abs_dev_from_cI", diag, 1e-10),
        VerifyRow::at_most(s, "covariance_derivative", "max_abs", deriv, 1e-10),
        VerifyRow::at_most(s, "stratonovich_correction", "max_abs", corr, 1e-10),
        VerifyRow::at_most(s, "covariance_transpose", "max_abs_diff", transpose, 0.0),
        VerifyRow::at_most(s, "covariance_translation", "max_abs_diff", shift, 1e-10),
        VerifyRow::at_most(s, "mode_divergence", "max_abs_coeff", div, 1e-12),
    ])
}

fn max_abs(s: &Spectrum) -> f64 {
    s.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Oddness of the series and tabulated kernels, and the divergence and
/// curl identities of the spectral Biot–Savart map on a random field.
pub fn kernel_suite(seed: u64) -> Result<Vec<VerifyRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = KernelTable::build(1024, 32)?;
    let (mut series, mut tabulated) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let d = [rng.random_range(-TWO_PI..TWO_PI), rng.random_range(-TWO_PI..TWO_PI)];
        let a = kernel_eval(d, 32);
        let b = kernel_eval([-d[0], -d[1]], 32);
        series = series.max((a[0] + b[0]).abs()).max((a[1] + b[1]).abs());
        let a = table.interpolate(d);
        let b = table.interpolate([-d[0], -d[1]]);
        tabulated = tabulated.max((a[0] + b[0]).abs()).max((a[1] + b[1]).abs());
    }
    let field = random_band_limited(128, 60, seed);
    let xi = field.spectrum();
    let (u1, u2) = velocity_spectrum(&xi);
    let scale = max_abs(&u1).max(max_abs(&u2));
    let div = max_abs(&spectral_divergence(&u1, &u2)) / scale;
    let curl = spectral_curl(&u1, &u2);
    let mut mean_free = xi.clone();
    mean_free.set([0, 0], Default::default());
    let round_trip = curl
        .coeffs()
        .iter()
        .zip(mean_free.coeffs())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
        / max_abs(&mean_free);
    let s = Suite::Kernel;
    Ok(vec![
        VerifyRow::at_most(s, "series_oddness", "max_abs_sum", series, 0.0),
        VerifyRow::at_most(s, "table_oddness", "max_abs_sum", tabulated, 0.0),
        VerifyRow::at_most(s, "velocity_divergence", "rel_max_coeff", div, 1e-12),
        VerifyRow::at_most(s, "curl_round_trip", "rel_max_coeff", round_trip, 1e-12),
    ])
}

/// `2 + cos x₁ cos x₂`: a steady Euler state, so the classical pairing
/// vanishes and errors are scaled by `∫|ξ u·∇φ|`.
pub fn steady_datum(n: usize) -> GridField {
    GridField::from_fn(n, |x, y| 2.0 + x.cos() * y.cos())
}

/// A companion datum with two interacting shells and a nonzero pairing.
pub fn interacting_datum(n: usize) -> GridField {
    GridField::from_fn(n, |x, y| 2.0 + x.cos() * y.cos() + 0.5 * (2.0 * x + y).sin())
}

/// Oracle equivalence, constant-shift invariance and the continuity
/// experiment with its signed counterexample.
pub fn nonlinear_suite(quick: bool) -> Result<Vec<VerifyRow>> {
    let s = Suite::Nonlinear;
    let mut rows = Vec::new();

    let phi = TrigFunction::sin([0, 1]);
    let scaled_error = |n: usize| {
        let xi = steady_datum(n);
        let (classical, scale) = classical_pairing(&xi, &phi);
        (nonlinear_grid(&xi, &phi, &PeriodicKernel) - classical).abs() / scale
    };
    let (e128, e256) = (scaled_error(128), scaled_error(256));
    rows.push(VerifyRow::at_most(s, "oracle_steady_128", "scaled_error", e128, 1e-3));
    rows.push(VerifyRow::at_most(s, "oracle_steady_256", "scaled_error", e256, 1e-3));

    let phi2 = TrigFunction::default().plus([1, 0], 0.0, 1.0).plus([1, 2], 1.0, 0.0);
    let rel_error = |n: usize| {
        let xi = interacting_datum(n);
        let (classical, _) = classical_pairing(&xi, &phi2);
        (nonlinear_grid(&xi, &phi2, &PeriodicKernel) - classical).abs() / classical.abs()
    };
    let (r128, r256) = (rel_error(128), rel_error(256));
    rows.push(VerifyRow::at_most(s, "oracle_interacting_128", "rel_error", r128, 1e-3));
    rows.push(VerifyRow::at_most(s, "oracle_interacting_256", "rel_error", r256, 1e-3));
    rows.push(VerifyRow::at_least(
        s,
        "oracle_refinement",
        "error_ratio_128_to_256",
        r128 / r256,
        1.0,
    ));

    let shift = 5.0;
    let up = GridField::from_fn(128, |x, y| shift + 2.0 + x.cos() * y.cos());
    let (_, scale) = classical_pairing(&up, &phi);
    let d =
        (nonlinear_grid(&steady_datum(128), &phi, &PeriodicKernel) - nonlinear_grid(&up, &phi, &PeriodicKernel)).abs();
    rows.push(VerifyRow::at_most(
        s,
        "constant_shift_steady",
        "scaled_defect",
        d / scale,
        1e-8,
    ));
    let up = GridField::from_fn(128, |x, y| shift + 2.0 + x.cos() * y.cos() + 0.5 * (2.0 * x + y).sin());
    let (_, scale) = classical_pairing(&up, &phi2);
    let resolved = SpectralKernel { cutoff: 40 };
    let d = (nonlinear_grid(&interacting_datum(128), &phi2, &resolved) - nonlinear_grid(&up, &phi2, &resolved)).abs();
    rows.push(VerifyRow::at_most(
        s,
        "constant_shift_interacting",
        "scaled_defect",
        d / scale,
        1e-8,
    ));

    let table = KernelTable::build(256, 16)?;
    let cphi = TrigFunction::constant(0.2)
        .plus([1, 2], 0.5, -0.3)
        .plus([0, 1], 0.0, 1.0);
    let circle = CurveSpec::Circle {
        center: [3.0, 3.0],
        radius: 1.0,
    };
    let sheet = sample_vortex_sheet(&circle, 256, 1.0)?;
    let (eps, n): (&[f64], usize) = if quick {
        (&[0.8, 0.4, 0.2, 0.1], 64)
    } else {
        (&[0.8, 0.4, 0.2, 0.1, 0.05], 128)
    };
    let family = TestFamily::standard(40);
    let seq = mollified_sequence(&sheet, eps, n)?;
    let report = continuity_experiment(&seq, &sheet, &cphi, &table, &family)?;
    rows.push(VerifyRow::at_least(
        s,
        "continuity_mollified_sheet",
        "delta_reduction",
        report.reduction,
        10.0,
    ));
    rows.push(VerifyRow::at_least(
        s,
        "continuity_mollified_sheet",
        "log_slope",
        report.log_slope.unwrap_or(f64::NAN),
        0.0,
    ));

    // without positivity the map is not continuous: dipoles collapsing onto
    // the sheet converge weak-* while the nonlinear term blows up
    let small = sample_vortex_sheet(&circle, 32, 1.0)?;
    let dipoles = dipole_sequence(&small, &[0.2, 0.1, 0.05, 0.025, 0.0125], 1.0);
    let rejected = continuity_experiment(&dipoles, &small, &cphi, &PeriodicKernel, &family).is_err();
    rows.push(VerifyRow::at_least(
        s,
        "dipole_probe",
        "signed_rejected",
        f64::from(u8::from(rejected)),
        1.0,
    ));
    let probe = continuity_table(&dipoles, &small, &cphi, &PeriodicKernel, &family)?;
    rows.push(VerifyRow::at_most(
        s,
        "dipole_probe",
        "delta_reduction",
        probe.reduction,
        1.0,
    ));
    Ok(rows)
}

/// The canned ensemble: both solvers on a shared path from a smooth
/// positive datum, plus the same spectral run without noise for the
/// Lipschitz regime of the Hölder check.
pub fn apriori_config(quick: bool, noise: bool) -> Result<RunConfig> {
    let (n, t_end) = if quick { (32, 0.3) } else { (64, 0.5) };
    parse_config(&format!(
        "[sim]\ndt = 2.5e-4\nT = {t_end}\nparticles = 64\n\
         [kernel]\nresolution = 256\ncutoff = 16\n\
         [noise]\nenabled = {noise}\n\
         [spectral]\nresolution = {n}\nenabled = true\n\
         [init]\nkind = \"cosine\"\n\
         [output]\nevery = 100\nsnapshots = false\n"
    ))
}

pub fn apriori_datum(cfg: &RunConfig) -> Result<InitialData> {
    let mass = cfg.init.mass;
    let normalized = |n: usize| {
        let mut f = interacting_datum(n);
        let scale = mass / f.integral();
        f.values_mut().iter_mut().for_each(|v| *v *= scale);
        f
    };
    let m = (cfg.sim.particles as f64).sqrt().floor() as usize;
    let atoms = ParticleMeasure::from_grid(&normalized(m), 0.0);
    let particles = ParticleMeasure::new(
        atoms.positions().to_vec(),
        atoms.weights().to_vec(),
        cfg.init.mass_bound,
    )?;
    Ok(InitialData {
        particles,
        grid: Some(normalized(cfg.spectral.resolution)),
    })
}

pub fn apriori_suite(opts: VerifyOptions, out: Option<&Path>) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (noise, solver, tag) in [
        (true, SolverChoice::Both, "noisy"),
        (false, SolverChoice::Spectral, "deterministic"),
    ] {
        let cfg = apriori_config(opts.quick, noise)?;
        let init = apriori_datum(&cfg)?;
        let exp = Experiment::with_initial(cfg, solver, init)?;
        let spec = EnsembleSpec {
            members: 32,
            base_seed: opts.seed,
            solver,
        };
        let outcome = run_ensemble(&exp, &spec, out.map(|o| o.join(tag)).as_deref())?;
        if let Some((m, e)) = outcome.failures.first() {
            return Err(Error::Format(format!("canned {tag} member {m} failed: {e}")));
        }
        reports.extend(outcome.reports.into_iter().map(|mut r| {
            r.check = format!("{tag}.{}", r.check);
            for row in &mut r.rows {
                row.check = format!("{tag}.{}", row.check);
            }
            r
        }));
    }
    Ok(reports)
}
