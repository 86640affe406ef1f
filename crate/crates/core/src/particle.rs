//! Stochastic point-vortex flow: the initial measure is pushed forward by
//!
//! ```text
//! dX = Σ_i w_i K(X − X_i) dt + Σ_k σ_k(X) ∘ dW^k,
//! ```
//!
//! integrated with Euler–Maruyama. The Itô correction of the transport
//! noise vanishes term by term, so the Stratonovich and Itô forms coincide.
//! All particles see the same increment vector `ΔW` in a step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{KernelSource, KernelTable};
use crate::measure::{Measure, ParticleMeasure, TrigFunction};
use crate::noise::NoiseBasis;
use crate::nonlinear::nonlinear_particles;
use crate::torus::TorusPoint;

/// Largest displacement a single step may produce.
pub const MAX_DISPLACEMENT: f64 = std::f64::consts::FRAC_PI_2;

/// The table kernel with its magnitude capped inside the blob radius at the
/// value it takes on the circle `|d| = δ` in the same direction.
#[derive(Debug, Clone, Copy)]
pub struct BlobKernel<'a> {
    table: &'a KernelTable,
    radius: f64,
}

impl<'a> BlobKernel<'a> {
    pub fn new(table: &'a KernelTable, radius: f64) -> Self {
        Self { table, radius }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl KernelSource for BlobKernel<'_> {
    #[inline]
    fn eval(&self, d: [f64; 2]) -> [f64; 2] {
        let d = [crate::torus::centered(d[0]), crate::torus::centered(d[1])];
        let k = self.table.interpolate(d);
        let r = d[0].hypot(d[1]);
        if r >= self.radius || r == 0.0 {
            return k;
        }
        let s = self.radius / r;
        let edge = self.table.interpolate([d[0] * s, d[1] * s]);
        let cap = edge[0].hypot(edge[1]);
        let mag = k[0].hypot(k[1]);
        if mag > cap {
            [k[0] * cap / mag, k[1] * cap / mag]
        } else {
            k
        }
    }

    fn cutoff(&self) -> Option<usize> {
        self.table.cutoff()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepPlan<'a> {
    pub dt: f64,
    pub blob_radius: f64,
    pub kernel: &'a KernelTable,
    pub noise_enabled: bool,
    /// `false` freezes the vortex interaction (pure transport by the noise).
    pub advection: bool,
}

impl<'a> StepPlan<'a> {
    pub fn new(dt: f64, blob_radius: f64, kernel: &'a KernelTable) -> Result<Self> {
        let plan = Self {
            dt,
            blob_radius,
            kernel,
            noise_enabled: true,
            advection: true,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.noise_enabled = on;
        self
    }

    pub fn with_advection(mut self, on: bool) -> Self {
        self.advection = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dt", format!("{} is not a positive step", self.dt)));
        }
        let h = self.kernel.spacing();
        if !(self.blob_radius >= h * (1.0 - 1e-12)) {
            return Err(Error::param(
                "blob_radius",
                format!("{} is below the kernel table spacing {h}", self.blob_radius),
            ));
        }
        Ok(())
    }

    /// Default blob radius: two kernel-table cells.
    pub fn default_blob_radius(kernel: &KernelTable) -> f64 {
        2.0 * kernel.spacing()
    }

    pub fn blob_kernel(&self) -> BlobKernel<'a> {
        BlobKernel::new(self.kernel, self.blob_radius)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub particles: ParticleMeasure,
    /// Accumulated `W^k(t)` per noise mode.
    pub brownian: Vec<f64>,
}

impl SimState {
    pub fn new(particles: ParticleMeasure, basis: &NoiseBasis) -> Self {
        Self {
            t: 0.0,
            step: 0,
            particles,
            brownian: vec![0.0; basis.len()],
        }
    }
}

/// `Σ_{i≠j} w_i K(x_j − x_i)` with the blob cap.
pub fn drift(particles: &ParticleMeasure, j: usize, plan: &StepPlan) -> [f64; 2] {
    drift_with(particles, j, &plan.blob_kernel())
}

fn drift_with<K: KernelSource + ?Sized>(particles: &ParticleMeasure, j: usize, kernel: &K) -> [f64; 2] {
    let pos = particles.positions();
    let xj = pos[j];
    let key = xj.key();
    let mut out = [0.0; 2];
    for (i, (xi, wi)) in pos.iter().zip(particles.weights()).enumerate() {
        if i == j || *wi == 0.0 || xi.key() == key {
            continue;
        }
        let k = kernel.eval(xj.displacement(*xi));
        out[0] += wi * k[0];
        out[1] += wi * k[1];
    }
    out
}

/// Drift of every particle, evaluated against a frozen snapshot.
pub fn drift_all(particles: &ParticleMeasure, plan: &StepPlan) -> Vec<[f64; 2]> {
    let kernel = plan.blob_kernel();
    (0..particles.len())
        .into_par_iter()
        .map(|j| drift_with(particles, j, &kernel))
        .collect()
}

/// One Euler–Maruyama step driven by the shared increments `dw`.
pub fn step(state: &SimState, plan: &StepPlan, basis: &NoiseBasis, dw: &[f64]) -> Result<SimState> {
    let noisy = plan.noise_enabled && basis.is_enabled();
    if noisy && dw.len() != basis.len() {
        return Err(Error::param(
            "increments",
            format!("{} increments for {} modes", dw.len(), basis.len()),
        ));
    }
    let drifts = if plan.advection {
        drift_all(&state.particles, plan)
    } else {
        vec![[0.0; 2]; state.particles.len()]
    };
    let moves: Vec<[f64; 2]> = state
        .particles
        .positions()
        .par_iter()
        .zip(drifts.par_iter())
        .map(|(x, u)| {
            let mut d = [u[0] * plan.dt, u[1] * plan.dt];
            if noisy {
                let s = basis.field_at(*x, dw);
                d[0] += s[0];
                d[1] += s[1];
            }
            d
        })
        .collect();
    let worst = moves.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max);
    if !(worst <= MAX_DISPLACEMENT) {
        return Err(Error::StepRejected {
            step: state.step,
            reason: format!("displacement {worst:.3} exceeds π/2"),
        });
    }
    let positions: Vec<TorusPoint> = state
        .particles
        .positions()
        .iter()
        .zip(&moves)
        .map(|(x, d)| x.translate(*d))
        .collect();
    let mut brownian = state.brownian.clone();
    if noisy {
        brownian.iter_mut().zip(dw).for_each(|(b, w)| *b += w);
    }
    Ok(SimState {
        t: (state.step + 1) as f64 * plan.dt,
        step: state.step + 1,
        particles: state.particles.with_positions(positions),
        brownian,
    })
}

/// States at every step together with the increments that produced them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SimState>,
    pub increments: Vec<Vec<f64>>,
}

/// Runs `steps` steps, taking the increments of step `s` from `dw(s)`.
pub fn simulate(
    initial: ParticleMeasure,
    plan: &StepPlan,
    basis: &NoiseBasis,
    steps: usize,
    mut dw: impl FnMut(usize) -> Vec<f64>,
) -> Result<Trajectory> {
    plan.validate()?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    states.push(SimState::new(initial, basis));
    for s in 0..steps {
        let w = if plan.noise_enabled && basis.is_enabled() {
            dw(s)
        } else {
            Vec::new()
        };
        let next = step(&states[s], plan, basis, &w)?;
        increments.push(w);
        states.push(next);
    }
    Ok(Trajectory {
        dt: plan.dt,
        states,
        increments,
    })
}

/// Residual of the Itô weak form along a recorded trajectory:
///
/// ```text
/// ⟨ξ_n, φ⟩ − ⟨ξ_0, φ⟩ − Σ_{s<n} [⟨N(ξ_s), φ⟩ dt + Σ_k ⟨ξ_s, σ_k·∇φ⟩ ΔW_s^k + ½ c ⟨ξ_s, Δφ⟩ dt]
/// ```
///
/// for every `n`, using the same capped kernel as the drift.
pub fn weak_form_residual(traj: &Trajectory, phi: &TrigFunction, basis: &NoiseBasis, plan: &StepPlan) -> Vec<f64> {
    let kernel = plan.blob_kernel();
    let dt = traj.dt;
    let base = traj.states[0].particles.pair(phi);
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(traj.states.len());
    out.push(0.0);
    for (s, state) in traj.states.iter().enumerate().skip(1) {
        let prev = &traj.states[s - 1].particles;
        if plan.advection {
            integral += nonlinear_particles(prev, phi, &kernel) * dt;
        }
        let dw = &traj.increments[s - 1];
        if !dw.is_empty() {
            let mut noise = 0.0;
            let mut lap = 0.0;
            for (x, w) in prev.positions().iter().zip(prev.weights()) {
                let g = phi.gradient(*x);
                let v = basis.field_at(*x, dw);
                noise += w * (v[0] * g[0] + v[1] * g[1]);
                lap += w * phi.laplacian(*x);
            }
            integral += noise + 0.5 * basis.c() * lap * dt;
        }
        out.push(state.particles.pair(phi) - base - integral);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseStream;
    use crate::torus::TWO_PI;

    fn table() -> KernelTable {
        KernelTable::build(256, 16).unwrap()
    }

    fn pair(sep: f64, w: f64) -> ParticleMeasure {
        ParticleMeasure::from_atoms(
            vec![
                TorusPoint::new(3.0 - sep / 2.0, 3.0),
                TorusPoint::new(3.0 + sep / 2.0, 3.0),
            ],
            vec![w, w],
        )
        .unwrap()
    }

    #[test]
    fn plan_validation() {
        let t = table();
        assert!(StepPlan::new(0.0, 0.1, &t).is_err());
        assert!(StepPlan::new(0.01, 0.01, &t).is_err());
        assert!(StepPlan::new(0.01, StepPlan::default_blob_radius(&t), &t).is_ok());
    }

    #[test]
    fn lone_particle_has_no_drift() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let one = ParticleMeasure::from_atoms(vec![TorusPoint::new(1.0, 1.0)], vec![2.0]).unwrap();
        assert_eq!(drift(&one, 0, &plan), [0.0, 0.0]);
    }

    #[test]
    fn equal_pair_corotates() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let p = pair(0.5, 0.5);
        let a = drift(&p, 0, &plan);
        let b = drift(&p, 1, &plan);
        assert!((a[0].hypot(a[1]) - b[0].hypot(b[1])).abs() < 1e-12);
        // separation is along x₁, so the drift must be along x₂
        assert!(a[0].abs() < 1e-10 && b[0].abs() < 1e-10);
        assert!(a[1] < 0.0 && b[1] > 0.0);
    }

    #[test]
    fn blob_cap_bounds_the_kernel() {
        let t = table();
        let blob = BlobKernel::new(&t, 0.3);
        let edge = t.interpolate([0.3, 0.0]);
        let inside = blob.eval([0.1, 0.0]);
        assert!(inside[0].hypot(inside[1]) <= edge[0].hypot(edge[1]) + 1e-15);
        let (a, b) = (blob.eval([0.5, 0.2]), t.interpolate([0.5, 0.2]));
        assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        assert_eq!(blob.eval([0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn zero_weights_without_noise_only_advance_time() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap().with_noise(false);
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let mu = ParticleMeasure::new(
            vec![TorusPoint::new(1.0, 1.0), TorusPoint::new(2.0, 1.5)],
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap();
        let s0 = SimState::new(mu, &basis);
        let s1 = step(&s0, &plan, &basis, &[]).unwrap();
        assert_eq!(s1.particles, s0.particles);
        assert_eq!(s1.t, 0.01);
    }

    #[test]
    fn shared_increments_move_coincident_particles_identically() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let x = TorusPoint::new(1.0, 2.0);
        let mu = ParticleMeasure::new(vec![x, x, TorusPoint::new(4.0, 4.0)], vec![0.0; 3], 1.0).unwrap();
        let dw = NoiseStream::new(1, 0).increments(&basis, 0, 0.01);
        let s1 = step(&SimState::new(mu, &basis), &plan, &basis, &dw).unwrap();
        let p = s1.particles.positions();
        assert_eq!(p[0], p[1]);
        assert_ne!(p[0], x);
        assert_eq!(s1.brownian, dw);
    }

    #[test]
    fn weights_never_change() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let stream = NoiseStream::new(5, 0);
        let mu = pair(0.4, 0.7);
        let traj = simulate(mu.clone(), &plan, &basis, 20, |s| {
            stream.increments(&basis, s as u64, 0.01)
        })
        .unwrap();
        for s in &traj.states {
            assert_eq!(s.particles.weights(), mu.weights());
            assert_eq!(s.particles.mass(), mu.mass());
        }
    }

    #[test]
    fn oversized_step_rejected() {
        let t = table();
        let plan = StepPlan::new(1.0, 0.05, &t).unwrap();
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let dw = vec![5.0; basis.len()];
        let err = step(&SimState::new(pair(0.5, 0.5), &basis), &plan, &basis, &dw);
        assert!(matches!(err, Err(Error::StepRejected { step: 0, .. })));
    }

    #[test]
    fn constant_test_function_has_zero_residual() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let stream = NoiseStream::new(2, 0);
        let traj = simulate(pair(0.5, 0.5), &plan, &basis, 10, |s| {
            stream.increments(&basis, s as u64, 0.01)
        })
        .unwrap();
        let r = weak_form_residual(&traj, &TrigFunction::constant(1.0), &basis, &plan);
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_residual_is_first_order() {
        let t = table();
        let basis = NoiseBasis::disabled();
        let phi = TrigFunction::default().plus([1, 0], 0.3, 1.0).plus([1, 1], 0.0, 0.5);
        let run = |dt: f64| {
            let plan = StepPlan::new(dt, 0.05, &t).unwrap().with_noise(false);
            let steps = (0.5 / dt).round() as usize;
            let traj = simulate(pair(0.5, 1.0), &plan, &basis, steps, |_| Vec::new()).unwrap();
            *weak_form_residual(&traj, &phi, &basis, &plan).last().unwrap()
        };
        let (a, b) = (run(0.02), run(0.01));
        let ratio = a / b;
        assert!((ratio - 2.0).abs() < 0.6, "{a:e} {b:e}");
    }

    #[test]
    fn permutation_changes_nothing_material() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap();
        let basis = NoiseBasis::new(4.0, 4).unwrap();
        let xs = [(1.0, 1.0), (2.0, 1.4), (1.5, 2.2), (4.0, 0.3)];
        let ws = [0.2, 0.4, -0.1, 0.3];
        let mk = |order: &[usize]| {
            ParticleMeasure::from_atoms(
                order.iter().map(|i| TorusPoint::new(xs[*i].0, xs[*i].1)).collect(),
                order.iter().map(|i| ws[*i]).collect(),
            )
            .unwrap()
        };
        let dw = NoiseStream::new(9, 0).increments(&basis, 0, 0.01);
        let a = step(&SimState::new(mk(&[0, 1, 2, 3]), &basis), &plan, &basis, &dw).unwrap();
        let b = step(&SimState::new(mk(&[2, 0, 3, 1]), &basis), &plan, &basis, &dw).unwrap();
        for (ia, ib) in [(0, 1), (1, 3), (2, 0), (3, 2)] {
            let (p, q) = (a.particles.positions()[ia], b.particles.positions()[ib]);
            assert!(p.distance(q) < 1e-12);
        }
    }

    #[test]
    fn noise_only_flow_keeps_uniform_density() {
        let t = table();
        let plan = StepPlan::new(0.01, 0.05, &t).unwrap().with_advection(false);
        let basis = NoiseBasis::new(4.0, 6).unwrap();
        let m = 32;
        let h = TWO_PI / m as f64;
        let pts: Vec<TorusPoint> = (0..m * m)
            .map(|i| TorusPoint::new((i % m) as f64 * h + 0.5 * h, (i / m) as f64 * h + 0.5 * h))
            .collect();
        let mu = ParticleMeasure::new(pts, vec![0.0; m * m], 0.0).unwrap();
        let stream = NoiseStream::new(21, 0);
        let traj = simulate(mu, &plan, &basis, 100, |s| stream.increments(&basis, s as u64, 0.01)).unwrap();
        let bins = 4;
        let mut counts = vec![0.0; bins * bins];
        for p in traj.states.last().unwrap().particles.positions() {
            let bi = ((p.x1 / TWO_PI * bins as f64) as usize).min(bins - 1);
            let bj = ((p.x2 / TWO_PI * bins as f64) as usize).min(bins - 1);
            counts[bj * bins + bi] += 1.0;
        }
        let expect = (m * m) as f64 / (bins * bins) as f64;
        let p = 1.0 / (bins * bins) as f64;
        let se = ((m * m) as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c - expect).abs() <= 3.0 * se, "{c} vs {expect}");
        }
    }
}
