use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Observables;
use crate::discretization::DiscretizedModel;
use crate::error::{Error, Result};

/// Observables at one sampled time.
///
/// Energies and particle numbers are changes since `t = 0`. `flux[i]` is
/// `Φ_i = −dE_i/dt`, `flux_eff[i]` is `−d(E_i − μ_i N_i)/dt`, `ent` is the
/// relative entropy to the reference state and `ep = dEnt/dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub cycle: usize,
    pub boundary: bool,
    pub impurity: f64,
    pub delta_energy: Vec<f64>,
    pub delta_number: Vec<f64>,
    pub flux: Vec<f64>,
    pub flux_eff: Vec<f64>,
    pub ent: f64,
    pub ep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub engine: String,
    pub model_hash: String,
    pub period: f64,
    pub dt: f64,
    pub betas: Vec<f64>,
    pub mus: Vec<f64>,
    pub initial_population: f64,
    /// `Ent(0) = ln 2 − S(p₀)`; zero for the trace state.
    pub ent0: f64,
    pub samples: Vec<Sample>,
    pub start_cycle: usize,
    pub max_unitarity_defect: f64,
    pub max_trace_drift: f64,
    pub step_doubling_error: Option<f64>,
    pub recurrence_time: f64,
    /// Horizon beyond the reservoir recurrence estimate.
    pub recurrence_flag: bool,
    boundary_index: Vec<usize>,
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Residuals of the entropy balance `dEnt/dt = −Σ_i β_i Φ_i^eff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `max |Ep + Σβ_iΦ_i^eff|` over all samples (zero by construction).
    pub identity_residual: f64,
    /// `max |D Ent − Ep|` with `D` a sixth-order central difference, over
    /// runs sampled more finely than a quarter period.
    pub derivative_residual: f64,
    /// `max |Ep|` over all samples.
    pub ep_scale: f64,
    /// `derivative_residual / ep_scale`.
    pub relative_residual: f64,
    pub points: usize,
}

impl Trajectory {
    pub(crate) fn new(dm: &DiscretizedModel, dt: f64, p0: f64, engine: &str) -> Self {
        Self {
            engine: engine.to_string(),
            model_hash: dm.content_hash(),
            period: dm.period(),
            dt,
            betas: dm.model.reservoirs.iter().map(|r| r.beta).collect(),
            mus: dm.model.reservoirs.iter().map(|r| r.mu).collect(),
            initial_population: p0,
            ent0: std::f64::consts::LN_2 - binary_entropy(p0),
            samples: Vec::new(),
            start_cycle: 0,
            max_unitarity_defect: 0.0,
            max_trace_drift: 0.0,
            step_doubling_error: None,
            recurrence_time: dm.recurrence_time(),
            recurrence_flag: false,
            boundary_index: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, time: f64, cycle: usize, boundary: bool, o: Observables) {
        let nr = self.betas.len();
        let flux: Vec<f64> = o.energy_rate.iter().map(|x| -x).collect();
        let flux_eff: Vec<f64> = (0..nr).map(|i| -(o.energy_rate[i] - self.mus[i] * o.number_rate[i])).collect();
        let ent = self.ent0
            + (0..nr)
                .map(|i| self.betas[i] * (o.delta_energy[i] - self.mus[i] * o.delta_number[i]))
                .sum::<f64>();
        let ep = -(0..nr).map(|i| self.betas[i] * flux_eff[i]).sum::<f64>();
        if boundary {
            self.boundary_index.push(self.samples.len());
        }
        self.samples.push(Sample {
            time,
            cycle,
            boundary,
            impurity: o.impurity,
            delta_energy: o.delta_energy,
            delta_number: o.delta_number,
            flux,
            flux_eff,
            ent,
            ep,
        });
    }

    /// Trajectory from externally produced samples, e.g. for post-processing
    /// stored CSV data. Boundaries are taken from the `boundary` flags.
    pub fn from_samples(period: f64, betas: Vec<f64>, mus: Vec<f64>, ent0: f64, samples: Vec<Sample>) -> Result<Self> {
        if betas.len() != mus.len() || samples.iter().any(|s| s.flux.len() != betas.len()) {
            return Err(Error::Domain("reservoir count differs between samples and parameters".into()));
        }
        if samples.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::Domain("sample times must increase strictly".into()));
        }
        let boundary_index = samples.iter().enumerate().filter(|(_, s)| s.boundary).map(|(k, _)| k).collect();
        let start_cycle = samples.iter().find(|s| s.boundary).map_or(0, |s| s.cycle);
        Ok(Self {
            engine: "external".into(),
            model_hash: String::new(),
            period,
            dt: f64::NAN,
            betas,
            mus,
            initial_population: f64::NAN,
            ent0,
            samples,
            start_cycle,
            max_unitarity_defect: 0.0,
            max_trace_drift: 0.0,
            step_doubling_error: None,
            recurrence_time: f64::INFINITY,
            recurrence_flag: false,
            boundary_index,
        })
    }

    pub fn n_reservoirs(&self) -> usize {
        self.betas.len()
    }

    /// Number of complete cycles covered.
    pub fn cycles(&self) -> usize {
        self.boundary_index.len().saturating_sub(1)
    }

    /// Sample at `t = nτ` (absolute cycle index `n`).
    pub fn boundary(&self, n: usize) -> Option<&Sample> {
        n.checked_sub(self.start_cycle)
            .and_then(|k| self.boundary_index.get(k))
            .map(|&i| &self.samples[i])
    }

    pub fn boundaries(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.boundary_index.iter().map(|&i| &self.samples[i])
    }

    /// Sample whose time matches `t` to `1e−9·τ`.
    pub fn sample_at(&self, t: f64) -> Result<&Sample> {
        let tol = 1e-9 * self.period;
        let k = self.samples.partition_point(|s| s.time < t - tol);
        match self.samples.get(k) {
            Some(s) if (s.time - t).abs() <= tol => Ok(s),
            _ => Err(Error::Domain(format!("time {t} is not a sampled time of this trajectory"))),
        }
    }

    fn check_reservoir(&self, i: usize) -> Result<()> {
        if i >= self.n_reservoirs() {
            return Err(Error::Index(format!("reservoir {i} of {}", self.n_reservoirs())));
        }
        Ok(())
    }

    /// `Φ_i(t) = −d⟨H^{R_i}⟩/dt`, from the exact commutator expectation.
    pub fn heat_flux(&self, i: usize, t: f64) -> Result<f64> {
        self.check_reservoir(i)?;
        Ok(self.sample_at(t)?.flux[i])
    }

    pub fn relative_entropy(&self, t: f64) -> Result<f64> {
        Ok(self.sample_at(t)?.ent)
    }

    pub fn entropy_production_rate(&self, t: f64) -> Result<f64> {
        Ok(self.sample_at(t)?.ep)
    }

    pub fn min_relative_entropy(&self) -> f64 {
        self.samples.iter().map(|s| s.ent).fold(f64::INFINITY, f64::min)
    }

    /// Maximal runs of equally spaced samples (at least three), as index ranges.
    pub fn uniform_runs(&self) -> Vec<std::ops::Range<usize>> {
        let tol = 1e-9 * self.period;
        let s = &self.samples;
        let mut runs = Vec::new();
        let mut start = 0;
        while start + 1 < s.len() {
            let h = s[start + 1].time - s[start].time;
            let mut end = start + 2;
            while end < s.len() && ((s[end].time - s[end - 1].time) - h).abs() <= tol {
                end += 1;
            }
            if end - start >= 3 {
                runs.push(start..end);
            }
            start = end - 1;
        }
        runs
    }

    pub fn balance(&self) -> BalanceReport {
        let nr = self.n_reservoirs();
        let mut identity = 0.0f64;
        let mut scale = 0.0f64;
        for s in &self.samples {
            let sum: f64 = (0..nr).map(|i| self.betas[i] * s.flux_eff[i]).sum();
            identity = identity.max((s.ep + sum).abs());
            scale = scale.max(s.ep.abs());
        }
        let mut worst = 0.0f64;
        let mut points = 0;
        const C: [f64; 3] = [45.0, -9.0, 1.0];
        for run in self.uniform_runs() {
            if run.len() < 7 {
                continue;
            }
            let s = &self.samples[run.clone()];
            let h = s[1].time - s[0].time;
            // stroboscopic runs do not resolve the drive
            if h > 0.25 * self.period {
                continue;
            }
            for k in 3..s.len() - 3 {
                let d = (0..3).map(|m| C[m] * (s[k + m + 1].ent - s[k - m - 1].ent)).sum::<f64>() / (60.0 * h);
                worst = worst.max((d - s[k].ep).abs());
                points += 1;
            }
        }
        let relative = if scale > 0.0 {
            worst / scale
        } else if worst == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        BalanceReport { identity_residual: identity, derivative_residual: worst, ep_scale: scale, relative_residual: relative, points }
    }

    /// One row per sample; `boundary` is 1 at cycle boundaries `t = nτ`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let nr = self.n_reservoirs();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample".to_string(), "time".into(), "cycle".into(), "boundary".into(), "impurity".into()];
        for key in ["delta_energy", "delta_number", "flux", "flux_eff"] {
            header.extend((1..=nr).map(|i| format!("{key}_{i}")));
        }
        header.push("ent".into());
        header.push("ep".into());
        w.write_record(&header)?;
        let f = |x: f64| format!("{x:.17e}");
        for (k, s) in self.samples.iter().enumerate() {
            let mut rec = vec![k.to_string(), f(s.time), s.cycle.to_string(), u8::from(s.boundary).to_string(), f(s.impurity)];
            for v in [&s.delta_energy, &s.delta_number, &s.flux, &s.flux_eff] {
                rec.extend(v.iter().map(|&x| f(x)));
            }
            rec.push(f(s.ent));
            rec.push(f(s.ep));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
