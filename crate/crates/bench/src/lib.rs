//! Shared fixtures for the criterion benches.

use sel_core::measure::{mollify, sample_vortex_sheet, CurveSpec};
use sel_core::{GridField, ParticleMeasure};

pub fn circle_sheet(atoms: usize) -> ParticleMeasure {
    sample_vortex_sheet(
        &CurveSpec::Circle {
            center: [std::f64::consts::PI; 2],
            radius: 1.0,
        },
        atoms,
        1.0,
    )
    .expect("valid sheet")
}

pub fn sheet_field(n: usize) -> GridField {
    mollify(&circle_sheet(512), 8.0 * std::f64::consts::TAU / n as f64, n).expect("resolved mollifier")
}
