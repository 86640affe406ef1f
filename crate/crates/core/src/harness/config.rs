//! Run configuration: a TOML document whose keys may be written either in
//! `[section]` tables or dotted (`noise.beta = 4.5`).
//!
//! Parsing materializes every default, so the emitted form of a config is
//! complete and `parse_config(&emit_config(&c)) == c`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::kernel::KernelTable;
use crate::torus::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Uniform sheet on a circle.
    SheetCircle,
    /// Uniform sheet on a straight segment.
    SheetSegment,
    /// `mass/(4π² floor)·(floor + cos x₁ cos x₂)`: smooth and non-negative,
    /// with zero minimum at the default floor of 1.
    Cosine,
    /// Particles read from a JSON-lines snapshot.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Atom count for generated initial data.
    pub particles: usize,
    pub seed: u64,
    pub blob_radius: f64,
    pub advection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub resolution: usize,
    pub cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub beta: f64,
    pub cutoff: usize,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub resolution: usize,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub kind: InitKind,
    pub mass: f64,
    pub mass_bound: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Mollification radius used to hand the particle datum to the grid.
    pub epsilon: f64,
    /// Background level of the `cosine` datum, `floor + cos x₁ cos x₂`.
    pub floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagConfig {
    pub cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Steps between recorded diagnostics and snapshots.
    pub every: usize,
    pub dir: String,
    pub snapshots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub kernel: KernelConfig,
    pub noise: NoiseConfig,
    pub spectral: SpectralConfig,
    pub init: InitConfig,
    pub diag: DiagConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn steps(&self) -> usize {
        (self.sim.t_end / self.sim.dt).round() as usize
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSim {
    dt: Option<Spanned<f64>>,
    #[serde(rename = "T")]
    t_end: Option<Spanned<f64>>,
    particles: Option<Spanned<usize>>,
    seed: Option<Spanned<u64>>,
    blob_radius: Option<Spanned<f64>>,
    advection: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawKernel {
    resolution: Option<Spanned<usize>>,
    cutoff: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNoise {
    beta: Option<Spanned<f64>>,
    cutoff: Option<Spanned<usize>>,
    enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSpectral {
    resolution: Option<Spanned<usize>>,
    enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawInit {
    kind: Option<Spanned<InitKind>>,
    mass: Option<Spanned<f64>>,
    mass_bound: Option<Spanned<f64>>,
    center: Option<Spanned<[f64; 2]>>,
    radius: Option<Spanned<f64>>,
    start: Option<Spanned<[f64; 2]>>,
    end: Option<Spanned<[f64; 2]>>,
    epsilon: Option<Spanned<f64>>,
    floor: Option<Spanned<f64>>,
    file: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDiag {
    cutoff: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    every: Option<Spanned<usize>>,
    dir: Option<String>,
    snapshots: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    sim: RawSim,
    kernel: RawKernel,
    noise: RawNoise,
    spectral: RawSpectral,
    init: RawInit,
    diag: RawDiag,
    output: RawOutput,
}

/// Line lookup for byte offsets of the source text.
struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at(&self, offset: usize) -> usize {
        self.0[..offset.min(self.0.len())].matches('\n').count() + 1
    }

    fn fail<T>(&self, value: &Spanned<T>, key: &str, reason: impl std::fmt::Display) -> Error {
        Error::Config {
            line: self.at(value.span().start),
            message: format!("`{key}`: {reason}"),
        }
    }
}

fn take<T: Clone>(v: &Option<Spanned<T>>, default: T) -> T {
    v.as_ref().map_or(default, |s| s.get_ref().clone())
}

/// Ensures `check(value)` for a present key, reporting its line otherwise.
fn require<T>(
    lines: &Lines,
    v: &Option<Spanned<T>>,
    key: &str,
    check: impl Fn(&T) -> bool,
    reason: &str,
) -> Result<()> {
    match v {
        Some(s) if !check(s.get_ref()) => Err(lines.fail(s, key, reason)),
        _ => Ok(()),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let lines = Lines(text);
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(0, |s| lines.at(s.start)),
        message: e.message().trim().to_string(),
    })?;

    let finite_pos = |x: &f64| *x > 0.0 && x.is_finite();
    let s = &raw.sim;
    require(&lines, &s.dt, "sim.dt", finite_pos, "must be a positive finite step")?;
    require(
        &lines,
        &s.t_end,
        "sim.T",
        finite_pos,
        "must be a positive finite horizon",
    )?;
    require(
        &lines,
        &s.particles,
        "sim.particles",
        |n| *n >= 2,
        "need at least 2 particles",
    )?;
    let dt = take(&s.dt, 1e-3);
    let t_end = take(&s.t_end, 1.0);
    if dt > t_end {
        let at = s.dt.as_ref().or(s.t_end.as_ref()).expect("defaults satisfy dt ≤ T");
        return Err(lines.fail(at, "sim.dt", format!("step {dt} exceeds the horizon T = {t_end}")));
    }

    let k = &raw.kernel;
    require(
        &lines,
        &k.resolution,
        "kernel.resolution",
        |n| *n >= 64 && n.is_power_of_two(),
        "must be a power of two ≥ 64",
    )?;
    let kernel_resolution = take(&k.resolution, 1024);
    require(&lines, &k.cutoff, "kernel.cutoff", |c| *c >= 1, "must be ≥ 1")?;
    let kernel_cutoff = take(&k.cutoff, 32);
    if 2 * kernel_cutoff > kernel_resolution {
        let at = k
            .cutoff
            .as_ref()
            .or(k.resolution.as_ref())
            .expect("defaults are consistent");
        return Err(lines.fail(
            at,
            "kernel.cutoff",
            format!("{kernel_cutoff} exceeds half the table resolution {kernel_resolution}"),
        ));
    }
    let spacing = TWO_PI / kernel_resolution as f64;
    require(
        &lines,
        &s.blob_radius,
        "sim.blob_radius",
        |r| *r >= spacing * (1.0 - 1e-12) && r.is_finite(),
        "must be at least one kernel-table cell",
    )?;
    let blob_radius = take(&s.blob_radius, 2.0 * spacing);

    let n = &raw.noise;
    require(
        &lines,
        &n.beta,
        "noise.beta",
        |b| *b > 3.0 && b.is_finite(),
        "need β > 3 for a summable noise (Σ‖σ_k‖²_C¹ < ∞)",
    )?;
    require(&lines, &n.cutoff, "noise.cutoff", |c| *c >= 1, "must be ≥ 1")?;

    let sp = &raw.spectral;
    require(
        &lines,
        &sp.resolution,
        "spectral.resolution",
        |n| *n >= 8 && n.is_power_of_two(),
        "must be a power of two ≥ 8",
    )?;

    let i = &raw.init;
    require(
        &lines,
        &i.mass,
        "init.mass",
        |m| *m >= 0.0 && m.is_finite(),
        "must be non-negative",
    )?;
    require(&lines, &i.mass_bound, "init.mass_bound", finite_pos, "must be positive")?;
    require(
        &lines,
        &i.radius,
        "init.radius",
        |r| *r > 0.0 && *r < PI,
        "must lie in (0, π)",
    )?;
    require(&lines, &i.epsilon, "init.epsilon", finite_pos, "must be positive")?;
    require(
        &lines,
        &i.floor,
        "init.floor",
        |f| f.is_finite() && *f >= 1.0,
        "must be at least 1",
    )?;
    let mass = take(&i.mass, 1.0);
    let mass_bound = take(&i.mass_bound, mass.max(1.0));
    if mass > mass_bound * (1.0 + 1e-12) {
        let at = i
            .mass
            .as_ref()
            .or(i.mass_bound.as_ref())
            .expect("defaults are consistent");
        return Err(lines.fail(
            at,
            "init.mass",
            format!("{mass} exceeds init.mass_bound = {mass_bound}"),
        ));
    }
    let kind = take(&i.kind, InitKind::SheetCircle);
    let file = i.file.as_ref().map(|f| f.get_ref().clone());
    if kind == InitKind::File && file.is_none() {
        let at = i.kind.as_ref().expect("file kind is never the default");
        return Err(lines.fail(at, "init.kind", "`file` requires init.file"));
    }

    require(&lines, &raw.diag.cutoff, "diag.cutoff", |c| *c >= 1, "must be ≥ 1")?;
    require(&lines, &raw.output.every, "output.every", |e| *e >= 1, "must be ≥ 1")?;

    Ok(RunConfig {
        sim: SimConfig {
            dt,
            t_end,
            particles: take(&s.particles, 512),
            seed: take(&s.seed, 0),
            blob_radius,
            advection: s.advection.unwrap_or(true),
        },
        kernel: KernelConfig {
            resolution: kernel_resolution,
            cutoff: kernel_cutoff,
        },
        noise: NoiseConfig {
            beta: take(&n.beta, 4.0),
            cutoff: take(&n.cutoff, 8),
            enabled: n.enabled.unwrap_or(true),
        },
        spectral: SpectralConfig {
            resolution: take(&sp.resolution, 64),
            enabled: sp.enabled.unwrap_or(false),
        },
        init: InitConfig {
            kind,
            mass,
            mass_bound,
            center: take(&i.center, [PI, PI]),
            radius: take(&i.radius, 1.0),
            start: take(&i.start, [0.5 * PI, PI]),
            end: take(&i.end, [1.5 * PI, PI]),
            epsilon: take(&i.epsilon, 0.2),
            floor: take(&i.floor, 1.0),
            file,
        },
        diag: DiagConfig {
            cutoff: take(&raw.diag.cutoff, 16),
        },
        output: OutputConfig {
            every: take(&raw.output.every, 50),
            dir: raw.output.dir.clone().unwrap_or_else(|| "out".into()),
            snapshots: raw.output.snapshots.unwrap_or(true),
        },
    })
}

pub fn emit_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

impl RunConfig {
    /// Kernel table described by `kernel.*`.
    pub fn kernel_table(&self) -> Result<KernelTable> {
        KernelTable::build(self.kernel.resolution, self.kernel.cutoff)
    }
}
