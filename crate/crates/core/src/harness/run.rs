//! Initial data, single runs with shared Brownian increments, and seeded
//! ensembles with their on-disk artifacts.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{emit_config, InitKind, RunConfig};
use crate::diagnostics::{
    check_energy_bound, check_hminus1_uniform, check_holder_scaling, check_mass_positivity, holder_lag_steps,
    member_increments, reduce_increments, write_csv, write_reports, CheckReport, DiagnosticsRecord, Discretization,
    EnsembleSummary, Recorder, SlopeWindow, HOLDER_BASE_LAG, MIN_ENERGY_MEMBERS, MIN_HOLDER_LAGS, MIN_HOLDER_MEMBERS,
};
use crate::error::{Error, Result};
use crate::fft::GridField;
use crate::kernel::KernelTable;
use crate::measure::{disk_modes, mollify, sample_vortex_sheet, CurveSpec, LowModes, Measure, ParticleMeasure};
use crate::noise::{NoiseBasis, NoiseStream};
use crate::particle::{self, SimState, StepPlan};
use crate::spectral::{SpectralSolver, SpectralState};
use crate::torus::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Particle,
    Spectral,
    /// Both solvers on the same Brownian path.
    Both,
}

impl SolverChoice {
    pub fn particles(self) -> bool {
        matches!(self, Self::Particle | Self::Both)
    }

    pub fn spectral(self) -> bool {
        matches!(self, Self::Spectral | Self::Both)
    }
}

impl FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "particle" => Ok(Self::Particle),
            "spectral" => Ok(Self::Spectral),
            "both" => Ok(Self::Both),
            other => Err(Error::param(
                "solver",
                format!("`{other}` is not one of particle, spectral, both"),
            )),
        }
    }
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Particle => "particle",
            Self::Spectral => "spectral",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    pub base_seed: u64,
    pub solver: SolverChoice,
}

/// The particle datum and, for grid runs, its grid counterpart.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub particles: ParticleMeasure,
    pub grid: Option<GridField>,
}

pub fn initial_data(cfg: &RunConfig, solver: SolverChoice) -> Result<InitialData> {
    let init = &cfg.init;
    let n = cfg.spectral.resolution;
    let with_bound =
        |mu: ParticleMeasure| ParticleMeasure::new(mu.positions().to_vec(), mu.weights().to_vec(), init.mass_bound);
    let particles = match init.kind {
        InitKind::SheetCircle => with_bound(sample_vortex_sheet(
            &CurveSpec::Circle {
                center: init.center,
                radius: init.radius,
            },
            cfg.sim.particles,
            init.mass,
        )?)?,
        InitKind::SheetSegment => with_bound(sample_vortex_sheet(
            &CurveSpec::Segment {
                start: init.start,
                end: init.end,
            },
            cfg.sim.particles,
            init.mass,
        )?)?,
        InitKind::Cosine => {
            let m = ((cfg.sim.particles as f64).sqrt().floor() as usize).max(2);
            with_bound(ParticleMeasure::from_grid(&cosine_field(m, init.mass, init.floor), 0.0))?
        }
        InitKind::File => {
            let path = init.file.as_deref().expect("validated by the parser");
            ParticleMeasure::load_jsonl(path)?.0
        }
    };
    let grid = if solver.spectral() {
        Some(match init.kind {
            InitKind::Cosine => cosine_field(n, init.mass, init.floor),
            _ => mollify(&particles, init.epsilon, n)?,
        })
    } else {
        None
    };
    Ok(InitialData { particles, grid })
}

/// `mass/(4π² floor)·(floor + cos x₁ cos x₂)`.
pub fn cosine_field(n: usize, mass: f64, floor: f64) -> GridField {
    let a = mass / (TWO_PI * TWO_PI * floor);
    GridField::from_fn(n, |x, y| a * (floor + x.cos() * y.cos()))
}

/// Recorded output of one solver along one member.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub records: Vec<DiagnosticsRecord>,
    /// Per-lag sums of squared `H⁻⁴` increments, see
    /// [`member_increments`].
    pub increments: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberRun {
    pub member: u64,
    pub particles: Option<SolverOutput>,
    pub spectral: Option<SolverOutput>,
}

/// A validated configuration with its noise basis, kernel table and initial
/// data, ready to launch members.
pub struct Experiment {
    cfg: RunConfig,
    solver: SolverChoice,
    basis: NoiseBasis,
    table: Option<KernelTable>,
    init: InitialData,
}

impl Experiment {
    pub fn new(cfg: RunConfig, solver: SolverChoice) -> Result<Self> {
        let init = initial_data(&cfg, solver)?;
        Self::with_initial(cfg, solver, init)
    }

    /// Uses `init` instead of the configured initial datum.
    pub fn with_initial(cfg: RunConfig, solver: SolverChoice, init: InitialData) -> Result<Self> {
        let basis = if cfg.noise.enabled {
            NoiseBasis::new(cfg.noise.beta, cfg.noise.cutoff)?
        } else {
            NoiseBasis::disabled()
        };
        let table = if solver.particles() {
            Some(cfg.kernel_table()?)
        } else {
            None
        };
        if solver.spectral() {
            let grid = init
                .grid
                .as_ref()
                .ok_or_else(|| Error::param("init", "a grid datum is required"))?;
            if grid.resolution() != cfg.spectral.resolution {
                return Err(Error::param(
                    "init",
                    format!(
                        "grid datum has resolution {}, spectral.resolution is {}",
                        grid.resolution(),
                        cfg.spectral.resolution
                    ),
                ));
            }
            SpectralSolver::new(cfg.spectral.resolution, &basis)?;
        }
        Ok(Self {
            cfg,
            solver,
            basis,
            table,
            init,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn solver(&self) -> SolverChoice {
        self.solver
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    pub fn initial(&self) -> &InitialData {
        &self.init
    }

    /// One member on the stream `(seed, member)`. Both solvers consume the
    /// same increments. With `out`, diagnostics and snapshots are written
    /// there.
    pub fn run_member(&self, seed: u64, member: u64, out: Option<&Path>) -> Result<MemberRun> {
        let cfg = &self.cfg;
        let dt = cfg.sim.dt;
        let steps = cfg.steps();
        let every = cfg.output.every;
        let cutoff = cfg.diag.cutoff;
        let stream = NoiseStream::new(seed, member);
        let lags = holder_lag_steps(steps);
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let snapshots = out.filter(|_| cfg.output.snapshots);

        let mut part = match (&self.table, self.solver.particles()) {
            (Some(table), true) => {
                let plan = StepPlan::new(dt, cfg.sim.blob_radius, table)?
                    .with_noise(self.basis.is_enabled())
                    .with_advection(cfg.sim.advection);
                let mu = &self.init.particles;
                Some(ParticleTrack {
                    plan,
                    recorder: Recorder::new(mu, cutoff)?,
                    state: SimState::new(mu.clone(), &self.basis),
                    records: Vec::new(),
                    history: Vec::with_capacity(steps / HOLDER_BASE_LAG + 1),
                })
            }
            _ => None,
        };
        let mut spec = match (&self.init.grid, self.solver.spectral()) {
            (Some(grid), true) => {
                let mut solver =
                    SpectralSolver::new(cfg.spectral.resolution, &self.basis)?.with_advection(cfg.sim.advection);
                let state = solver.initial_state(grid)?;
                let start = solver.vorticity(&state);
                Some(SpectralTrack {
                    recorder: Recorder::new(&start, cutoff)?,
                    solver,
                    state,
                    records: Vec::new(),
                    history: Vec::with_capacity(steps / HOLDER_BASE_LAG + 1),
                })
            }
            _ => None,
        };

        for s in 0..=steps {
            if s > 0 {
                let dw = if self.basis.is_enabled() {
                    stream.increments(&self.basis, (s - 1) as u64, dt)
                } else {
                    Vec::new()
                };
                if let Some(p) = part.as_mut() {
                    p.state = particle::step(&p.state, &p.plan, &self.basis, &dw)?;
                }
                if let Some(q) = spec.as_mut() {
                    q.state = q.solver.step(&q.state, dt, &self.basis, &dw)?;
                }
            }
            let output = s % every == 0 || s == steps;
            if let Some(p) = part.as_mut() {
                if s % HOLDER_BASE_LAG == 0 {
                    p.history.push(p.state.particles.low_modes(cutoff));
                }
                if output {
                    let t = p.state.t;
                    p.records.push(p.recorder.particles(t, &p.state.particles));
                    if let Some(dir) = snapshots {
                        let meta = json!({ "t": t, "step": s, "member": member, "seed": seed });
                        p.state
                            .particles
                            .save_jsonl(dir.join(format!("snap_{s:06}.jsonl")), meta)?;
                    }
                }
            }
            if let Some(q) = spec.as_mut() {
                if s % HOLDER_BASE_LAG == 0 {
                    q.history.push(spectrum_low_modes(&q.state, cutoff));
                }
                if output {
                    let field = q.solver.vorticity(&q.state);
                    q.records.push(q.recorder.grid(q.state.t, &field));
                    if let Some(dir) = snapshots {
                        save_grid_snapshot(dir, &format!("spectral_{s:06}"), &field, q.state.t, s)?;
                    }
                }
            }
        }

        let particles = part.map(|p| SolverOutput {
            increments: member_increments(&p.history, &lags),
            records: p.records,
        });
        let spectral = spec.map(|q| SolverOutput {
            increments: member_increments(&q.history, &lags),
            records: q.records,
        });
        if let Some(dir) = out {
            if let Some(p) = &particles {
                save_csv(&dir.join("diag.csv"), &p.records)?;
            }
            if let Some(q) = &spectral {
                save_csv(&dir.join("diag_spectral.csv"), &q.records)?;
            }
        }
        Ok(MemberRun {
            member,
            particles,
            spectral,
        })
    }
}

struct ParticleTrack<'a> {
    plan: StepPlan<'a>,
    recorder: Recorder,
    state: SimState,
    records: Vec<DiagnosticsRecord>,
    history: Vec<LowModes>,
}

struct SpectralTrack {
    solver: SpectralSolver,
    recorder: Recorder,
    state: SpectralState,
    records: Vec<DiagnosticsRecord>,
    history: Vec<LowModes>,
}

fn spectrum_low_modes(state: &SpectralState, cutoff: usize) -> LowModes {
    LowModes {
        cutoff,
        coeffs: disk_modes(cutoff)
            .iter()
            .map(|k| state.xi_hat.coefficient(*k).unwrap_or_default())
            .collect(),
    }
}

fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), rows)
}

/// Row-major little-endian `f64` dump (`values[j·n + i]` at `(i·h, j·h)`)
/// with a JSON header alongside.
pub fn save_grid_snapshot(dir: &Path, stem: &str, field: &GridField, t: f64, step: usize) -> Result<()> {
    let bin = dir.join(format!("{stem}.f64"));
    let mut bytes = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = json!({
        "kind": "grid_field",
        "version": 1,
        "resolution": field.resolution(),
        "layout": "row-major, values[j*n + i] at (i*h, j*h), h = 2π/n",
        "dtype": "f64-le",
        "data": format!("{stem}.f64"),
        "t": t,
        "step": step,
    });
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&path, e))
}

pub fn load_grid_snapshot(header: &Path) -> Result<(GridField, f64)> {
    let text = std::fs::read(header).map_err(|e| Error::io(header, e))?;
    let h: serde_json::Value = serde_json::from_slice(&text)?;
    let n = h["resolution"]
        .as_u64()
        .ok_or_else(|| Error::Format("grid header lacks `resolution`".into()))? as usize;
    let data = h["data"]
        .as_str()
        .ok_or_else(|| Error::Format("grid header lacks `data`".into()))?;
    let bin = header.with_file_name(data);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != 8 * n * n {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            bin.display(),
            bytes.len(),
            8 * n * n
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((GridField::from_values(n, values)?, h["t"].as_f64().unwrap_or(0.0)))
}

/// Reduced ensemble with the verdicts of every enabled check.
#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub spec: EnsembleSpec,
    pub particles: Option<EnsembleSummary>,
    pub spectral: Option<EnsembleSummary>,
    pub reports: Vec<CheckReport>,
    pub skipped: Vec<String>,
    pub failures: Vec<(u64, String)>,
}

impl EnsembleOutcome {
    pub fn pass(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(CheckReport::pass)
    }

    pub fn failed_checks(&self) -> Vec<&CheckReport> {
        self.reports.iter().filter(|r| !r.pass()).collect()
    }
}

/// Runs `spec.members` members in parallel. With `out`, member `m` writes
/// into `out/member_<m>` and the reduced artifacts land in `out`.
pub fn run_ensemble(exp: &Experiment, spec: &EnsembleSpec, out: Option<&Path>) -> Result<EnsembleOutcome> {
    if spec.members == 0 {
        return Err(Error::param("members", "must be ≥ 1"));
    }
    let runs: Vec<(u64, Result<MemberRun>)> = (0..spec.members as u64)
        .into_par_iter()
        .map(|m| {
            let dir = out.map(|o| member_dir(o, m));
            (m, exp.run_member(spec.base_seed, m, dir.as_deref()))
        })
        .collect();
    let outcome = summarize(exp, spec, runs)?;
    if let Some(dir) = out {
        write_outputs(exp, &outcome, dir)?;
    }
    Ok(outcome)
}

/// A single member written directly into `out`, the `simulate` layout.
pub fn run_single(exp: &Experiment, seed: u64, out: Option<&Path>) -> Result<EnsembleOutcome> {
    let spec = EnsembleSpec {
        members: 1,
        base_seed: seed,
        solver: exp.solver,
    };
    let run = exp.run_member(seed, 0, out);
    let outcome = summarize(exp, &spec, vec![(0, run)])?;
    if let Some(dir) = out {
        write_outputs(exp, &outcome, dir)?;
    }
    Ok(outcome)
}

pub fn member_dir(out: &Path, member: u64) -> PathBuf {
    out.join(format!("member_{member:04}"))
}

/// Order-independent reduction: members are sorted by index first.
pub fn summarize(
    exp: &Experiment,
    spec: &EnsembleSpec,
    mut runs: Vec<(u64, Result<MemberRun>)>,
) -> Result<EnsembleOutcome> {
    runs.sort_by_key(|(m, _)| *m);
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (m, r) in runs {
        match r {
            Ok(run) => ok.push(run),
            Err(e) => failures.push((m, e.to_string())),
        }
    }
    let lags = holder_lag_steps(exp.cfg.steps());
    let dt = exp.cfg.sim.dt;
    let c1 = exp.basis.c1_sum();
    let window = if exp.basis.is_enabled() {
        SlopeWindow::default()
    } else {
        SlopeWindow::deterministic()
    };
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut reduce = |name: &str,
                      kind: Discretization,
                      pick: fn(&MemberRun) -> Option<&SolverOutput>|
     -> Result<Option<EnsembleSummary>> {
        let outs: Vec<&SolverOutput> = ok.iter().filter_map(pick).collect();
        if outs.is_empty() {
            return Ok(None);
        }
        let records: Vec<Vec<DiagnosticsRecord>> = outs.iter().map(|o| o.records.clone()).collect();
        let incs: Vec<Vec<(f64, usize)>> = outs.iter().map(|o| o.increments.clone()).collect();
        let summary = EnsembleSummary::from_members(&records, reduce_increments(&incs, &lags, dt))?;

        let per_member: Vec<CheckReport> = records.iter().map(|r| check_mass_positivity(r, kind)).collect();
        reports.push(prefixed(name, worst_of(&per_member)));
        reports.push(prefixed(name, check_hminus1_uniform(&summary, c1)));
        if summary.members >= MIN_ENERGY_MEMBERS {
            reports.push(prefixed(name, check_energy_bound(&summary, c1)?));
        } else {
            skipped.push(format!("{name}.energy: needs ≥ {MIN_ENERGY_MEMBERS} members"));
        }
        if summary.members < MIN_HOLDER_MEMBERS {
            skipped.push(format!("{name}.holder: needs ≥ {MIN_HOLDER_MEMBERS} members"));
        } else if summary.holder.len() < MIN_HOLDER_LAGS {
            skipped.push(format!(
                "{name}.holder: needs ≥ {MIN_HOLDER_LAGS} dyadic lags in [4dt, T/4]"
            ));
        } else {
            reports.push(prefixed(name, check_holder_scaling(&summary, window)?));
        }
        Ok(Some(summary))
    };
    let particles = reduce("particles", Discretization::Particles, |r| r.particles.as_ref())?;
    let spectral = reduce("spectral", Discretization::Grid, |r| r.spectral.as_ref())?;
    Ok(EnsembleOutcome {
        spec: *spec,
        particles,
        spectral,
        reports,
        skipped,
        failures,
    })
}

fn prefixed(name: &str, mut report: CheckReport) -> CheckReport {
    report.check = format!("{name}.{}", report.check);
    for row in &mut report.rows {
        row.check = format!("{name}.{}", row.check);
    }
    report
}

/// Row-wise worst case (smallest margin) over reports with identical rows.
fn worst_of(reports: &[CheckReport]) -> CheckReport {
    let mut out = reports[0].clone();
    for r in &reports[1..] {
        for (o, row) in out.rows.iter_mut().zip(&r.rows) {
            if row.margin < o.margin || (!row.pass && o.pass) {
                *o = row.clone();
            }
        }
    }
    out
}

fn write_outputs(exp: &Experiment, outcome: &EnsembleOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, summary) in [("particles", &outcome.particles), ("spectral", &outcome.spectral)] {
        let Some(s) = summary else { continue };
        save_with(&dir.join(format!("summary_{name}.csv")), |w| s.write_rows(w))?;
        save_with(&dir.join(format!("holder_{name}.csv")), |w| s.write_holder(w))?;
    }
    save_with(&dir.join("report.csv"), |w| write_reports(w, &outcome.reports))?;
    let path = dir.join("manifest.json");
    let manifest = manifest(exp, outcome);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

fn save_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every number that affects results, plus the verdicts.
pub fn manifest(exp: &Experiment, outcome: &EnsembleOutcome) -> serde_json::Value {
    let cfg = &exp.cfg;
    let basis = &exp.basis;
    let spec = &outcome.spec;
    let checks: Vec<serde_json::Value> = outcome
        .reports
        .iter()
        .map(|r| json!({ "check": r.check, "pass": r.pass(), "note": r.note }))
        .collect();
    let fits: serde_json::Value = [("particles", &outcome.particles), ("spectral", &outcome.spectral)]
        .iter()
        .filter_map(|(n, s)| s.as_ref().map(|s| (n.to_string(), json!(s.holder_fit))))
        .collect::<serde_json::Map<_, _>>()
        .into();
    json!({
        "kind": "sel_manifest",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_text": emit_config(cfg),
        "derived": {
            "steps": cfg.steps(),
            "blob_radius": cfg.sim.blob_radius,
            "kernel_spacing": TWO_PI / cfg.kernel.resolution as f64,
            "noise": if basis.is_enabled() { json!(basis.summary()) } else { json!(null) },
            "noise_c": basis.c(),
            "noise_c1_sum": basis.c1_sum(),
            "dealiased_band": cfg.spectral.resolution / 3,
            "diag_cutoff": cfg.diag.cutoff,
            "holder_lag_steps": holder_lag_steps(cfg.steps()),
            "initial_mass": exp.init.particles.mass(),
            "initial_atoms": exp.init.particles.len(),
        },
        "ensemble": {
            "members": spec.members,
            "base_seed": spec.base_seed,
            "solver": spec.solver,
            "streams": "ChaCha8 keyed by (base_seed, member), stream = step",
        },
        "failures": outcome.failures.iter().map(|(m, e)| json!({ "member": m, "error": e })).collect::<Vec<_>>(),
        "checks": checks,
        "skipped": outcome.skipped,
        "holder_fit": fits,
        "pass": outcome.pass(),
    })
}

/// Weak-* distance between the two solvers' final states, for a
/// cross-validation run (`SolverChoice::Both`).
pub fn cross_distance(exp: &Experiment, seed: u64, member: u64) -> Result<f64> {
    if exp.solver != SolverChoice::Both {
        return Err(Error::param("solver", "cross-validation needs both solvers"));
    }
    let cfg = &exp.cfg;
    let table = exp.table.as_ref().expect("particles enabled");
    let plan = StepPlan::new(cfg.sim.dt, cfg.sim.blob_radius, table)?
        .with_noise(exp.basis.is_enabled())
        .with_advection(cfg.sim.advection);
    let mut solver = SpectralSolver::new(cfg.spectral.resolution, &exp.basis)?.with_advection(cfg.sim.advection);
    let mut q = solver.initial_state(exp.init.grid.as_ref().expect("spectral enabled"))?;
    let mut p = SimState::new(exp.init.particles.clone(), &exp.basis);
    let stream = NoiseStream::new(seed, member);
    for s in 0..cfg.steps() {
        let dw = if exp.basis.is_enabled() {
            stream.increments(&exp.basis, s as u64, cfg.sim.dt)
        } else {
            Vec::new()
        };
        p = particle::step(&p, &plan, &exp.basis, &dw)?;
        q = solver.step(&q, cfg.sim.dt, &exp.basis, &dw)?;
    }
    let field = solver.vorticity(&q);
    Ok(crate::measure::weakstar_distance(
        &p.particles,
        &field,
        &crate::measure::TestFamily::default(),
    ))
}
