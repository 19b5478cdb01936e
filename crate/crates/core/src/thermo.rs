//! Per-cycle thermodynamics of a finished trajectory.
//!
//! Heat is counted as energy extracted from a reservoir over one cycle,
//! `Q_i[n] = −(E_i((n+1)τ) − E_i(nτ))`, and `Q_i^eff` is the same for
//! `H_i − μ_i N_i`. The entropy produced in a cycle is `−Σ_i β_i Q_i^eff[n]`.
//! Reservoir 0 is the hot one.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Sample, Trajectory};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLedger {
    pub period: f64,
    pub betas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Absolute index of the first cycle.
    pub start_cycle: usize,
    /// `heat[n][i] = Q_i[n]`
    pub heat: Vec<Vec<f64>>,
    pub heat_eff: Vec<Vec<f64>>,
    /// `ΔEnt[n] = −Σ_i β_i Q_i^eff[n]`
    pub entropy: Vec<f64>,
    /// `ΔA[n] = Σ_i Q_i[n]`
    pub work: Vec<f64>,
    /// `|ΔEnt[n] − (Ent((n+1)τ) − Ent(nτ))|`
    pub balance_residual: Vec<f64>,
    /// Largest relative change of the stroboscopic observables against the
    /// previous cycle.
    pub convergence_metric: Vec<f64>,
    /// `Ent(nτ)` at every boundary, `cycles + 1` values.
    pub ent_boundary: Vec<f64>,
    /// Upper-level population at every boundary.
    pub impurity: Vec<f64>,
    /// Resolution of per-cycle entropies: ten times the larger of the
    /// per-cycle balance residual and `τ·max|D Ent − Ep|` on densely sampled
    /// cycles.
    pub noise_floor: f64,
    /// `noise_floor / max_i β_i`, the matching resolution of per-cycle heats.
    pub energy_noise: f64,
    /// Absolute time beyond which the finite reservoirs revive.
    pub recurrence_time: f64,
}

impl CycleLedger {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let b: Vec<&Sample> = traj.boundaries().collect();
        if b.len() < 2 {
            return Err(Error::Incomplete("trajectory covers no complete cycle".into()));
        }
        let nr = traj.n_reservoirs();
        let cycles = b.len() - 1;
        let mut heat = Vec::with_capacity(cycles);
        let mut heat_eff = Vec::with_capacity(cycles);
        let mut entropy = Vec::with_capacity(cycles);
        let mut work = Vec::with_capacity(cycles);
        let mut balance_residual = Vec::with_capacity(cycles);
        for w in b.windows(2) {
            let q: Vec<f64> = (0..nr).map(|i| -(w[1].delta_energy[i] - w[0].delta_energy[i])).collect();
            let qe: Vec<f64> = (0..nr)
                .map(|i| q[i] + traj.mus[i] * (w[1].delta_number[i] - w[0].delta_number[i]))
                .collect();
            let s = -(0..nr).map(|i| traj.betas[i] * qe[i]).sum::<f64>();
            balance_residual.push((s - (w[1].ent - w[0].ent)).abs());
            work.push(q.iter().sum());
            entropy.push(s);
            heat.push(q);
            heat_eff.push(qe);
        }
        let impurity: Vec<f64> = b.iter().map(|s| s.impurity).collect();
        let ent_boundary: Vec<f64> = b.iter().map(|s| s.ent).collect();

        // (series, value before the first cycle)
        let mut series: Vec<(Vec<f64>, f64)> = (0..nr).map(|i| (heat.iter().map(|q| q[i]).collect(), 0.0)).collect();
        series.push((entropy.clone(), 0.0));
        series.push((impurity[1..].to_vec(), impurity[0]));
        let mut convergence_metric = vec![0.0f64; cycles];
        let trusted = trusted_count(traj.start_cycle, cycles, traj.period, traj.recurrence_time).max(1);
        for (x, before) in &series {
            let scale = x[..trusted].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            for n in 0..cycles {
                let prev = if n == 0 { *before } else { x[n - 1] };
                convergence_metric[n] = convergence_metric[n].max((x[n] - prev).abs() / scale);
            }
        }

        let bal = traj.balance();
        let per_cycle = balance_residual.iter().cloned().fold(0.0, f64::max);
        let noise_floor = 10.0 * per_cycle.max(traj.period * bal.derivative_residual);
        let beta_max = traj.betas.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            period: traj.period,
            betas: traj.betas.clone(),
            mus: traj.mus.clone(),
            start_cycle: traj.start_cycle,
            heat,
            heat_eff,
            entropy,
            work,
            balance_residual,
            convergence_metric,
            ent_boundary,
            impurity,
            noise_floor,
            energy_noise: if beta_max > 0.0 { noise_floor / beta_max } else { noise_floor },
            recurrence_time: traj.recurrence_time,
        })
    }

    pub fn cycles(&self) -> usize {
        self.entropy.len()
    }

    pub fn n_reservoirs(&self) -> usize {
        self.betas.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `Q_i[n]` for absolute cycle `n` of a trajectory.
pub fn per_cycle_heat(traj: &Trajectory, i: usize, n: usize) -> Result<f64> {
    if i >= traj.n_reservoirs() {
        return Err(Error::Index(format!("reservoir {i} of {}", traj.n_reservoirs())));
    }
    match (traj.boundary(n), traj.boundary(n + 1)) {
        (Some(a), Some(b)) => Ok(-(b.delta_energy[i] - a.delta_energy[i])),
        _ => Err(Error::Incomplete(format!("cycle {n} is not covered by the trajectory"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConvergenceStatus {
    /// `n_star` is a ledger-local cycle index.
    Converged { n_star: usize },
    NotConverged { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub status: ConvergenceStatus,
    pub tolerance: f64,
    pub window: usize,
    /// Cycles ending before `TRUSTED_FRACTION` of the recurrence time; later
    /// ones are ignored.
    pub trusted_cycles: usize,
    /// Mean of each per-cycle heat, `ΔEnt` and the boundary population over
    /// the last `window` trusted cycles.
    pub limit_heat: Vec<f64>,
    pub limit_entropy: f64,
    pub limit_impurity: f64,
    /// Geometric relaxation rate (per unit time) of the boundary population,
    /// from a log-linear fit of `|p(nτ) − p_∞|`.
    pub gamma_fit: Option<f64>,
    /// Cycles used by the fit.
    pub fit_cycles: usize,
}

impl Convergence {
    pub fn n_star(&self) -> Option<usize> {
        match self.status {
            ConvergenceStatus::Converged { n_star } => Some(n_star),
            ConvergenceStatus::NotConverged { .. } => None,
        }
    }
}

/// First cycle `n*` from which the convergence metric stays below `tol` for
/// `window` consecutive cycles, considering only cycles that end before
/// [`TRUSTED_FRACTION`] of the reservoir recurrence time.
pub fn detect_periodic_convergence(ledger: &CycleLedger, tol: f64, window: usize) -> Result<Convergence> {
    if window == 0 {
        return Err(Error::Domain("convergence window must be positive".into()));
    }
    let cycles = ledger.cycles();
    if cycles < window {
        return Err(Error::Incomplete(format!("{cycles} cycles available, window needs {window}")));
    }
    let trusted = trusted_count(ledger.start_cycle, cycles, ledger.period, ledger.recurrence_time);
    let mut run = 0;
    let mut found = None;
    for n in 0..trusted {
        if ledger.convergence_metric[n] < tol {
            run += 1;
            if run == window {
                found = Some(n + 1 - window);
                break;
            }
        } else {
            run = 0;
        }
    }
    let status = match found {
        Some(n_star) => ConvergenceStatus::Converged { n_star },
        None if trusted < cycles => ConvergenceStatus::NotConverged {
            reason: format!("no {window} quiet cycles before the trusted horizon {:.6e}", TRUSTED_FRACTION * ledger.recurrence_time),
        },
        None => ConvergenceStatus::NotConverged {
            reason: format!(
                "metric {:.3e} at the last cycle, tolerance {tol:.3e}",
                ledger.convergence_metric[cycles - 1]
            ),
        },
    };
    let tail = tail_window(trusted.max(window), window);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let nr = ledger.n_reservoirs();
    let limit_heat = (0..nr).map(|i| mean(&ledger.heat[tail.clone()].iter().map(|q| q[i]).collect::<Vec<_>>())).collect();
    let limit_entropy = mean(&ledger.entropy[tail.clone()]);
    let limit_impurity = mean(&ledger.impurity[tail.start + 1..tail.end + 1]);
    let (gamma_fit, fit_cycles) = match fit_rate(&ledger.impurity[..=trusted.max(window)], limit_impurity, ledger.period) {
        Some((g, k)) => (Some(g), k),
        None => (None, 0),
    };
    Ok(Convergence {
        status,
        tolerance: tol,
        window,
        trusted_cycles: trusted,
        limit_heat,
        limit_entropy,
        limit_impurity,
        gamma_fit,
        fit_cycles,
    })
}

/// Fraction of the recurrence estimate that is trusted. Revival precursors
/// of a discretized reservoir show up in weakly damped observables well
/// before `2π/Δu`.
pub const TRUSTED_FRACTION: f64 = 0.75;

/// Cycles of a run that end before the trusted horizon.
fn trusted_count(start: usize, cycles: usize, period: f64, recurrence: f64) -> usize {
    let horizon = TRUSTED_FRACTION * recurrence;
    (0..cycles)
        .take_while(|&n| ((start + n + 1) as f64) * period <= horizon * (1.0 + 1e-12))
        .count()
}

fn tail_window(end: usize, window: usize) -> std::ops::Range<usize> {
    end - window..end
}

/// Log-linear least squares of `|x[n] − limit|` against `nτ`, from the
/// largest deviation down to where it reaches `1e−4` of it (or the tail
/// noise). Returns `(rate, points)`.
fn fit_rate(x: &[f64], limit: f64, period: f64) -> Option<(f64, usize)> {
    let d: Vec<f64> = x.iter().map(|v| (v - limit).abs()).collect();
    let (k0, dmax) = d.iter().cloned().enumerate().fold((0, 0.0), |a, (k, v)| if v > a.1 { (k, v) } else { a });
    if dmax == 0.0 {
        return None;
    }
    let tail = d.len().saturating_sub(DEFAULT_WINDOW);
    let noise = d[tail..].iter().cloned().fold(0.0, f64::max);
    let floor = (1e-4 * dmax).max(100.0 * noise);
    let pts: Vec<(f64, f64)> = d[k0..]
        .iter()
        .enumerate()
        .take_while(|(_, &v)| v > floor)
        .map(|(k, &v)| ((k0 + k) as f64 * period, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((-sxy / sxx, pts.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyPerCycle {
    /// `ΔEnt⁺`, mean over the last convergence window before the recurrence
    /// time, all of which lies after `n*`.
    pub mean: f64,
    /// Sample standard deviation over the same cycles.
    pub spread: f64,
    pub cycles: usize,
    pub noise_floor: f64,
}

pub fn entropy_per_cycle(ledger: &CycleLedger, convergence: &Convergence) -> Result<EntropyPerCycle> {
    let n_star = convergence
        .n_star()
        .ok_or_else(|| Error::NotConverged("entropy per cycle needs a converged run".into()))?;
    let x = &ledger.entropy[tail_window(convergence.trusted_cycles, convergence.window)];
    debug_assert!(n_star + convergence.window <= convergence.trusted_cycles);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let spread = if x.len() > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EntropyPerCycle { mean, spread, cycles: x.len(), noise_floor: ledger.noise_floor })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Heat drawn from the hot reservoir, work delivered.
    Engine,
    /// Work consumed, heat drawn from the cold reservoir.
    Refrigerator,
    /// Work consumed and dumped into the reservoirs.
    Heater,
    Undetermined,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Engine => "engine",
            Regime::Refrigerator => "refrigerator",
            Regime::Heater => "heater",
            Regime::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub regime: Regime,
    /// Converged per-cycle heats `(Q₁, Q₂)`, hot first.
    pub heat: [f64; 2],
    /// `ΔA = Q₁ + Q₂`
    pub work: f64,
    /// `−(β₁Q₁ + β₂Q₂)`, nonnegative by the second law.
    pub entropy: f64,
    pub eta: Option<f64>,
    pub eta_carnot: f64,
    /// `η_Carnot − η`
    pub margin: Option<f64>,
    /// `η_Carnot − T₂·ΔEnt⁺/Q₁ − η`, which should be `≥ 0`.
    pub entropy_margin: Option<f64>,
    pub n_star: usize,
    pub energy_noise: f64,
}

/// Efficiency and regime from the per-cycle means over `cycles`, normally
/// the converged tail window.
pub fn efficiency(ledger: &CycleLedger, n_star: usize, t1: f64, t2: f64) -> Result<EngineReport> {
    efficiency_over(ledger, n_star, n_star..ledger.cycles(), t1, t2)
}

/// [`efficiency`] on the limit window selected by a convergence result.
pub fn efficiency_converged(ledger: &CycleLedger, convergence: &Convergence, t1: f64, t2: f64) -> Result<EngineReport> {
    let n_star = convergence
        .n_star()
        .ok_or_else(|| Error::NotConverged("efficiency needs a converged run".into()))?;
    efficiency_over(ledger, n_star, tail_window(convergence.trusted_cycles, convergence.window), t1, t2)
}

fn efficiency_over(ledger: &CycleLedger, n_star: usize, cycles: std::ops::Range<usize>, t1: f64, t2: f64) -> Result<EngineReport> {
    if ledger.n_reservoirs() != 2 {
        return Err(Error::Unsupported(format!(
            "efficiency needs two reservoirs, model has {}",
            ledger.n_reservoirs()
        )));
    }
    if !(t1 > 0.0 && t2 > 0.0 && t1 >= t2) {
        return Err(Error::Domain(format!("need T₁ ≥ T₂ > 0, got T₁={t1}, T₂={t2}")));
    }
    if cycles.is_empty() || cycles.end > ledger.cycles() {
        return Err(Error::Incomplete(format!("cycles {cycles:?} not within {} cycles", ledger.cycles())));
    }
    let tail = &ledger.heat[cycles];
    let k = tail.len() as f64;
    let q1 = tail.iter().map(|q| q[0]).sum::<f64>() / k;
    let q2 = tail.iter().map(|q| q[1]).sum::<f64>() / k;
    let work = q1 + q2;
    let entropy = -(q1 / t1 + q2 / t2);
    let eta_carnot = (t1 - t2) / t1;
    let noise = ledger.energy_noise;
    let regime = if work.abs() <= noise && q1.abs() <= noise {
        Regime::Undetermined
    } else if q1 > 0.0 && work >= 0.0 {
        Regime::Engine
    } else if work < 0.0 && q2 > 0.0 {
        Regime::Refrigerator
    } else if work < 0.0 {
        Regime::Heater
    } else {
        Regime::Undetermined
    };
    let (eta, margin, entropy_margin) = if q1 > 0.0 && work >= 0.0 {
        let eta = work / q1;
        (Some(eta), Some(eta_carnot - eta), Some(eta_carnot - t2 * entropy / q1 - eta))
    } else {
        (None, None, None)
    };
    Ok(EngineReport { regime, heat: [q1, q2], work, entropy, eta, eta_carnot, margin, entropy_margin, n_star, energy_noise: noise })
}

impl EngineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `I(nτ) = n·ΔEnt⁺ − (Ent(nτ) − Ent(0))`, the integrated difference between
/// the periodic entropy production tiled back to `t = 0` and the true one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedDifference {
    pub values: Vec<f64>,
    pub sup: f64,
    /// The running supremum grows by less than 1% of itself (plus the noise
    /// floor) over the last quarter of the run.
    pub plateau: bool,
    /// `|I|` never decreases over the second half of the run.
    pub monotone_growth: bool,
    /// Periodic rate used; the converged `ΔEnt⁺`, or the mean of the last
    /// window when the run did not converge.
    pub periodic_entropy: f64,
}

pub fn bounded_difference_diagnostic(ledger: &CycleLedger, convergence: &Convergence) -> BoundedDifference {
    let rate = convergence.limit_entropy;
    let e0 = ledger.ent_boundary[0];
    let values: Vec<f64> = ledger
        .ent_boundary
        .iter()
        .enumerate()
        .map(|(n, e)| n as f64 * rate - (e - e0))
        .collect();
    let running: Vec<f64> = values
        .iter()
        .scan(0.0f64, |m, v| {
            *m = m.max(v.abs());
            Some(*m)
        })
        .collect();
    let sup = *running.last().expect("at least two boundaries");
    let cut = (3 * values.len()) / 4;
    let before = running[cut.saturating_sub(1)];
    let plateau = sup - before <= 0.01 * sup + ledger.noise_floor;
    let half = values.len() / 2;
    let monotone_growth = sup > ledger.noise_floor
        && values[half..].windows(2).all(|w| w[1].abs() >= w[0].abs())
        && values[values.len() - 1].abs() > values[half].abs();
    BoundedDifference { values, sup, plateau, monotone_growth, periodic_entropy: rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reservoir", rename_all = "snake_case")]
pub enum Observable {
    Impurity,
    DeltaEnergy(usize),
    DeltaNumber(usize),
    Flux(usize),
    FluxEff(usize),
    Ent,
    Ep,
}

impl Observable {
    pub fn of(self, s: &Sample) -> f64 {
        match self {
            Observable::Impurity => s.impurity,
            Observable::DeltaEnergy(i) => s.delta_energy[i],
            Observable::DeltaNumber(i) => s.delta_number[i],
            Observable::Flux(i) => s.flux[i],
            Observable::FluxEff(i) => s.flux_eff[i],
            Observable::Ent => s.ent,
            Observable::Ep => s.ep,
        }
    }
}

/// `(1/T)∫ x dt` over the largest span of whole cycles, by the trapezoid
/// rule on the sampled times.
pub fn cesaro_average(traj: &Trajectory, observable: Observable) -> Result<f64> {
    let nr = traj.n_reservoirs();
    match observable {
        Observable::DeltaEnergy(i)
        | Observable::DeltaNumber(i)
        | Observable::Flux(i)
        | Observable::FluxEff(i)
            if i >= nr =>
        {
            return Err(Error::Index(format!("reservoir {i} of {nr}")));
        }
        _ => {}
    }
    let b: Vec<&Sample> = traj.boundaries().collect();
    if b.len() < 2 {
        return Err(Error::Incomplete("Cesàro average needs a complete cycle".into()));
    }
    let (t0, t1) = (b[0].time, b[b.len() - 1].time);
    let s: Vec<&Sample> = traj.samples.iter().filter(|s| s.time >= t0 && s.time <= t1).collect();
    let integral: f64 = s
        .windows(2)
        .map(|w| 0.5 * (w[1].time - w[0].time) * (observable.of(w[0]) + observable.of(w[1])))
        .sum();
    Ok(integral / (t1 - t0))
}

/// One line of a sweep manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub point: usize,
    pub config_hash: String,
    pub g: f64,
    pub tau: f64,
    pub beta1: f64,
    pub beta2: Option<f64>,
    pub modes: usize,
    pub status: String,
    pub n_star: Option<usize>,
    pub ent_plus: Option<f64>,
    pub ent_spread: Option<f64>,
    pub noise_floor: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub work: Option<f64>,
    pub eta: Option<f64>,
    pub eta_carnot: Option<f64>,
    pub regime: Option<String>,
    pub gamma_fit: Option<f64>,
    pub min_ent: Option<f64>,
    pub balance_residual: Option<f64>,
    pub error: Option<String>,
}

/// Writes rows with a header to a fresh manifest.
pub fn write_manifest<W: Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one row, writing the header first if the file is new or empty.
pub fn append_manifest(path: &Path, row: &ManifestRow) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    if fresh {
        w.write_record(MANIFEST_HEADER)?;
    }
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

pub const MANIFEST_HEADER: [&str; 22] = [
    "point",
    "config_hash",
    "g",
    "tau",
    "beta1",
    "beta2",
    "modes",
    "status",
    "n_star",
    "ent_plus",
    "ent_spread",
    "noise_floor",
    "q1",
    "q2",
    "work",
    "eta",
    "eta_carnot",
    "regime",
    "gamma_fit",
    "min_ent",
    "balance_residual",
    "error",
];

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?)
}
