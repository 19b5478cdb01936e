//! Time evolution of the coupled system and the observables built on it.
//!
//! Two engines share one time-stepping scheme: the Gaussian path evolves
//! one-body orbitals under the star Hamiltonian, the Fock oracle evolves the
//! literal spin ⊗ fermion model. Both are driven by [`run`] on the same
//! sampling schedule, so their trajectories can be compared sample by sample.

mod covariance;
mod fock;
mod snapshot;
mod trajectory;

pub use covariance::{propagate_covariance, CovarianceEngine};
pub use fock::{propagate_fock_oracle, relative_entropy_oracle, FockEngine, FockSpace, FockState, MAX_FOCK_MODES};
pub use snapshot::Snapshot;
pub use trajectory::{BalanceReport, Sample, Trajectory};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretization::DiscretizedModel;
use crate::error::{config_err, Error, Result};
use crate::model::PeriodicEnvelope;

/// Local unitarity defect above which a step is rejected and retried with
/// half the step size.
pub const UNITARITY_TOLERANCE: f64 = 1e-10;
pub(crate) const MAX_HALVINGS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `exp(−i dt h(t + dt/2))`, second order.
    Midpoint,
    /// Two-exponential commutator-free Magnus scheme, fourth order.
    #[default]
    Magnus4,
}

/// One exponential of a step: `exp(−i dt (s·H_diag + Σ_k w_k V(t_k)))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stage {
    pub diag_scale: f64,
    pub nodes: [(f64, f64); 2],
}

impl Stage {
    /// Combined envelope `Σ_k w_k h(t_k)`.
    pub fn envelope(&self, env: &PeriodicEnvelope) -> Complex64 {
        self.nodes.iter().filter(|(_, w)| *w != 0.0).map(|&(t, w)| w * env.eval(t)).sum()
    }
}

impl Integrator {
    pub fn order(self) -> u32 {
        match self {
            Integrator::Midpoint => 2,
            Integrator::Magnus4 => 4,
        }
    }

    /// Exponentials of one step in the order they are applied.
    pub(crate) fn stages(self, t: f64, dt: f64) -> Vec<Stage> {
        match self {
            Integrator::Midpoint => vec![Stage { diag_scale: 1.0, nodes: [(t + 0.5 * dt, 1.0), (t, 0.0)] }],
            Integrator::Magnus4 => {
                let r3 = 3f64.sqrt();
                let (t1, t2) = (t + (0.5 - r3 / 6.0) * dt, t + (0.5 + r3 / 6.0) * dt);
                let (a1, a2) = ((3.0 - 2.0 * r3) / 12.0, (3.0 + 2.0 * r3) / 12.0);
                vec![
                    Stage { diag_scale: 0.5, nodes: [(t1, a2), (t2, a1)] },
                    Stage { diag_scale: 0.5, nodes: [(t1, a1), (t2, a2)] },
                ]
            }
        }
    }
}

/// Which cycles are sampled inside the period (every cycle boundary is
/// always sampled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DenseCycles {
    All,
    Edges { first: usize, last: usize },
    None,
}

impl DenseCycles {
    pub fn contains(&self, n: usize, cycles: usize) -> bool {
        match *self {
            DenseCycles::All => true,
            DenseCycles::Edges { first, last } => n < first || n + last >= cycles,
            DenseCycles::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub cycles: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "default_steps")]
    pub steps_per_cycle: usize,
    /// Steps between in-cycle samples.
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default = "default_dense")]
    pub dense: DenseCycles,
    /// Advance whole cycles with the one-period propagator instead of
    /// stepping; the stepped path is still used for dense cycles.
    #[serde(default = "default_true")]
    pub floquet: bool,
    /// Also build the one-period propagator at `2dt` and report the
    /// Richardson estimate of the time-step error.
    #[serde(default = "default_true")]
    pub step_doubling: bool,
}

fn default_steps() -> usize {
    128
}
fn default_stride() -> usize {
    1
}
fn default_dense() -> DenseCycles {
    DenseCycles::Edges { first: 2, last: 2 }
}
fn default_true() -> bool {
    true
}

impl RunPlan {
    pub fn new(cycles: usize) -> Self {
        Self {
            cycles,
            integrator: Integrator::default(),
            steps_per_cycle: default_steps(),
            sample_stride: default_stride(),
            dense: default_dense(),
            floquet: true,
            step_doubling: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_cycle == 0 {
            return Err(config_err("integrator.steps_per_cycle", "must be positive"));
        }
        if self.sample_stride == 0 || !self.steps_per_cycle.is_multiple_of(self.sample_stride) {
            return Err(config_err(
                "integrator.sample_stride",
                format!("must divide steps_per_cycle = {}", self.steps_per_cycle),
            ));
        }
        Ok(())
    }
}

/// Raw observables at one instant, energies and numbers as changes from `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Observables {
    pub delta_energy: Vec<f64>,
    pub delta_number: Vec<f64>,
    pub impurity: f64,
    /// `dE_i/dt`
    pub energy_rate: Vec<f64>,
    /// `dN_i/dt`
    pub number_rate: Vec<f64>,
}

pub(crate) trait Engine {
    type Saved;
    fn step(&mut self, t: f64, dt: f64, integrator: Integrator) -> Result<()>;
    /// One-period propagator from `t = 0`, built with `steps` steps.
    fn build_period_map(&mut self, integrator: Integrator, steps: usize) -> Result<()>;
    /// Richardson estimate `|M(dt) − M(2dt)|_max / (2^p − 1)`.
    fn step_doubling_error(&mut self, integrator: Integrator, steps: usize) -> Result<f64>;
    fn apply_period_map(&mut self);
    fn save(&self) -> Self::Saved;
    fn restore(&mut self, saved: Self::Saved);
    fn observe(&self, t: f64) -> Observables;
    fn max_unitarity_defect(&self) -> f64;
    fn trace_drift(&self) -> f64;
    fn initial_population(&self) -> f64;
}

/// Runs `plan.cycles` cycles starting at cycle `start`.
pub(crate) fn drive<E: Engine>(
    engine: &mut E,
    dm: &DiscretizedModel,
    plan: &RunPlan,
    start: usize,
    label: &str,
) -> Result<Trajectory> {
    plan.validate()?;
    let tau = dm.period();
    let steps = plan.steps_per_cycle;
    let dt = tau / steps as f64;
    let doubling = if plan.step_doubling && steps.is_multiple_of(2) {
        Some(engine.step_doubling_error(plan.integrator, steps)?)
    } else {
        None
    };
    if plan.floquet {
        engine.build_period_map(plan.integrator, steps)?;
    }
    let mut traj = Trajectory::new(dm, dt, engine.initial_population(), label);
    traj.step_doubling_error = doubling;
    let end = start + plan.cycles;
    let mut drift = 0.0f64;
    traj.push(start as f64 * tau, start, true, engine.observe(start as f64 * tau));
    for n in start..end {
        let t0 = n as f64 * tau;
        let dense = plan.dense.contains(n - start, plan.cycles);
        if dense || !plan.floquet {
            let saved = if plan.floquet { Some(engine.save()) } else { None };
            for s in 0..steps {
                let t = t0 + s as f64 * dt;
                if dense && s > 0 && s % plan.sample_stride == 0 {
                    traj.push(t, n, false, engine.observe(t));
                }
                engine.step(t, dt, plan.integrator)?;
            }
            if let Some(saved) = saved {
                engine.restore(saved);
                engine.apply_period_map();
            }
        } else {
            engine.apply_period_map();
        }
        let t1 = (n + 1) as f64 * tau;
        drift = drift.max(engine.trace_drift());
        traj.push(t1, n + 1, true, engine.observe(t1));
    }
    traj.max_unitarity_defect = engine.max_unitarity_defect();
    traj.max_trace_drift = drift;
    traj.start_cycle = start;
    traj.recurrence_flag = end as f64 * tau > traj.recurrence_time;
    if traj.max_unitarity_defect > UNITARITY_TOLERANCE {
        return Err(Error::Propagation(format!(
            "unitarity defect {:.3e} exceeds {UNITARITY_TOLERANCE:.0e}",
            traj.max_unitarity_defect
        )));
    }
    Ok(traj)
}

/// Gaussian-path trajectory of `dm` from its configured initial state.
pub fn run_covariance(dm: &DiscretizedModel, plan: &RunPlan) -> Result<Trajectory> {
    dm.model.validate_initial()?;
    let mut engine = CovarianceEngine::new(dm, dm.model.initial_population())?;
    drive(&mut engine, dm, plan, 0, "covariance")
}

/// Continues a Gaussian-path run from a restart snapshot.
pub fn resume_covariance(dm: &DiscretizedModel, plan: &RunPlan, snapshot: &Snapshot) -> Result<Trajectory> {
    Ok(run_covariance_checkpointed(dm, plan, Some(snapshot))?.0)
}

/// Gaussian-path run (fresh or resumed) that also returns the restart
/// snapshot at its final cycle boundary.
pub fn run_covariance_checkpointed(
    dm: &DiscretizedModel,
    plan: &RunPlan,
    from: Option<&Snapshot>,
) -> Result<(Trajectory, Snapshot)> {
    let (mut engine, start) = match from {
        Some(snap) => (CovarianceEngine::from_snapshot(dm, snap)?, snap.cycle),
        None => {
            dm.model.validate_initial()?;
            (CovarianceEngine::new(dm, dm.model.initial_population())?, 0)
        }
    };
    let traj = drive(&mut engine, dm, plan, start, "covariance")?;
    let end = start + plan.cycles;
    let snap = engine.snapshot(end as f64 * dm.period(), end);
    Ok((traj, snap))
}

/// Fock-space oracle trajectory of `dm` (at most [`MAX_FOCK_MODES`] modes).
pub fn run_fock_oracle(dm: &DiscretizedModel, plan: &RunPlan) -> Result<Trajectory> {
    dm.model.validate_initial()?;
    let space = FockSpace::new(dm)?;
    let mut engine = FockEngine::new(&space, dm.model.initial_population())?;
    drive(&mut engine, dm, plan, 0, "fock")
}

/// Taylor exponential of a Hermitian operator applied to one vector, with
/// the operator given as a matrix-vector closure. The spectrum is assumed
/// centred (shift already removed) with norm bound `bound`.
pub(crate) fn taylor_expm<F>(apply: F, v: &mut [Complex64], term: &mut [Complex64], next: &mut [Complex64], tau: f64, bound: f64, shift: f64)
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let (mut term, mut next) = (term, next);
    let nsub = ((tau * bound) / 0.5).ceil().max(1.0) as usize;
    let h = tau / nsub as f64;
    let phase = Complex64::from_polar(1.0, -shift * h);
    let scale2: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);
    for _ in 0..nsub {
        term.copy_from_slice(v);
        for k in 1..64 {
            apply(term, next);
            let f = Complex64::new(0.0, -h / k as f64);
            let mut tn = 0.0;
            for (a, b) in v.iter_mut().zip(next.iter_mut()) {
                *b *= f;
                *a += *b;
                tn += b.norm_sqr();
            }
            std::mem::swap(&mut term, &mut next);
            if tn <= 1e-34 * scale2 {
                break;
            }
        }
        if shift != 0.0 {
            v.iter_mut().for_each(|z| *z *= phase);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnus_stage_weights_are_consistent() {
        let st = Integrator::Magnus4.stages(0.0, 1.0);
        let total: f64 = st.iter().flat_map(|s| s.nodes.iter().map(|n| n.1)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((st.iter().map(|s| s.diag_scale).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_selection() {
        let d = DenseCycles::Edges { first: 2, last: 1 };
        let picked: Vec<_> = (0..6).filter(|&n| d.contains(n, 6)).collect();
        assert_eq!(picked, vec![0, 1, 5]);
    }

    #[test]
    fn plan_rejects_bad_stride() {
        let mut p = RunPlan::new(3);
        p.sample_stride = 5;
        assert!(p.validate().is_err());
    }
}
