//! Running resolved points and writing their artifacts: trajectory CSV,
//! ledger and report JSON, restart snapshot, manifest rows and plot data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{RunConfig, RunPoint};
use crate::dynamics::{run_covariance_checkpointed, BalanceReport, Snapshot, Trajectory, UNITARITY_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::resonances::{population_gap, resonance_table, spectral_gap, Convention};
use crate::thermo::{
    detect_periodic_convergence, efficiency_converged, entropy_per_cycle, bounded_difference_diagnostic, read_manifest,
    write_manifest, BoundedDifference, Convergence, CycleLedger, EngineReport, EntropyPerCycle, ManifestRow,
};

/// Relative tolerance of the finite-difference check of `dEnt/dt`.
pub const BALANCE_TOLERANCE: f64 = 1e-6;
/// Slack allowed below zero for the relative entropy.
pub const NONNEGATIVITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceSummary {
    pub lamb_shift: f64,
    pub width: f64,
    pub spectral_gap: f64,
    pub population_gap: f64,
    /// `e^{−γτ}` with `γ` the population gap.
    pub predicted_contraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub balance: BalanceReport,
    pub balance_ok: bool,
    pub ledger_identity: f64,
    pub min_ent: f64,
    pub nonnegative_ok: bool,
    pub unitarity_defect: f64,
    pub trace_drift: f64,
    pub propagation_ok: bool,
    pub step_doubling_error: Option<f64>,
    pub recurrence_time: f64,
    pub beyond_recurrence: bool,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.balance_ok && self.nonnegative_ok && self.propagation_ok && self.ledger_identity <= 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub point: usize,
    pub config_hash: String,
    pub model_hash: String,
    pub g: f64,
    pub period: f64,
    pub betas: Vec<f64>,
    pub mus: Vec<f64>,
    pub modes: usize,
    pub start_cycle: usize,
    pub cycles: usize,
    pub convergence: Convergence,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyPerCycle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounded_difference: Option<BoundedDifference>,
    pub resonances: ResonanceSummary,
    pub invariants: InvariantReport,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        self.convergence.n_star().is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub ledger: CycleLedger,
    pub snapshot: Snapshot,
    pub report: RunReport,
    pub config: RunConfig,
}

pub fn resonance_summary(model: &ModelSpec) -> Result<ResonanceSummary> {
    let table = resonance_table(model, model.coupling, Convention::CLiouvillean, 0, 0)?;
    let pop = population_gap(&table)?;
    Ok(ResonanceSummary {
        lamb_shift: table.lamb_shift,
        width: table.width,
        spectral_gap: spectral_gap(&table)?,
        population_gap: pop,
        predicted_contraction: (-pop * model.period()).exp(),
    })
}

/// Runs a point from scratch, or continues it from a snapshot.
pub fn run_point(point: &RunPoint, resume: Option<&Snapshot>) -> Result<RunOutcome> {
    let dm = point.discretize()?;
    let (traj, snapshot) = run_covariance_checkpointed(&dm, &point.plan, resume)?;
    let ledger = CycleLedger::from_trajectory(&traj)?;
    let convergence = detect_periodic_convergence(&ledger, point.tolerance, point.window)?;
    let converged = convergence.n_star().is_some();
    let entropy = if converged { Some(entropy_per_cycle(&ledger, &convergence)?) } else { None };

    let (mut engine, mut engine_note) = (None, None);
    if ledger.n_reservoirs() != 2 {
        engine_note = Some("efficiency needs exactly two reservoirs".into());
    } else if !converged {
        engine_note = Some("not converged".into());
    } else if ledger.betas[0] > ledger.betas[1] {
        engine_note = Some("reservoir 1 must be the hot one".into());
    } else {
        engine = Some(efficiency_converged(&ledger, &convergence, 1.0 / ledger.betas[0], 1.0 / ledger.betas[1])?);
    }
    let bounded_difference = converged.then(|| bounded_difference_diagnostic(&ledger, &convergence));

    let balance = traj.balance();
    let min_ent = traj.min_relative_entropy();
    let ledger_identity = (0..ledger.cycles())
        .map(|n| {
            let s: f64 = (0..ledger.n_reservoirs()).map(|i| ledger.betas[i] * ledger.heat_eff[n][i]).sum();
            (ledger.entropy[n] + s).abs()
        })
        .fold(0.0, f64::max);
    let end_time = traj.samples.last().map_or(0.0, |s| s.time);
    let invariants = InvariantReport {
        balance,
        balance_ok: balance.points == 0 || balance.relative_residual <= BALANCE_TOLERANCE,
        ledger_identity,
        min_ent,
        nonnegative_ok: min_ent >= -NONNEGATIVITY_SLACK,
        unitarity_defect: traj.max_unitarity_defect,
        trace_drift: traj.max_trace_drift,
        propagation_ok: traj.max_unitarity_defect <= UNITARITY_TOLERANCE
            && traj.max_trace_drift <= 1e-10 * dm.dim() as f64,
        step_doubling_error: traj.step_doubling_error,
        recurrence_time: traj.recurrence_time,
        beyond_recurrence: end_time > traj.recurrence_time,
    };
    let report = RunReport {
        name: point.config.name.clone(),
        point: point.index,
        config_hash: point.hash.clone(),
        model_hash: traj.model_hash.clone(),
        g: point.model.coupling,
        period: point.model.period(),
        betas: ledger.betas.clone(),
        mus: ledger.mus.clone(),
        modes: point.discretization.modes,
        start_cycle: traj.start_cycle,
        cycles: ledger.cycles(),
        convergence,
        entropy,
        engine,
        engine_note,
        bounded_difference,
        resonances: resonance_summary(&point.model)?,
        invariants,
    };
    Ok(RunOutcome { trajectory: traj, ledger, snapshot, report, config: point.config.clone() })
}

/// Writes `config.toml`, `trajectory.csv`, `ledger.json`, `report.json` and
/// `state.snap` into `dir`.
pub fn write_bundle(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), outcome.config.to_toml())?;
    let f = fs::File::create(dir.join("trajectory.csv"))?;
    outcome.trajectory.write_csv(std::io::BufWriter::new(f))?;
    fs::write(dir.join("ledger.json"), outcome.ledger.to_json()?)?;
    fs::write(dir.join("report.json"), outcome.report.to_json()?)?;
    outcome.snapshot.save(&dir.join("state.snap"))?;
    Ok(())
}

pub fn manifest_row(outcome: &RunOutcome) -> ManifestRow {
    let r = &outcome.report;
    let status = match (r.converged(), r.invariants.passed()) {
        (_, false) => "invariant_failure",
        (true, true) => "converged",
        (false, true) => "not_converged",
    };
    let e = r.engine.as_ref();
    ManifestRow {
        point: r.point,
        config_hash: r.config_hash.clone(),
        g: r.g,
        tau: r.period,
        beta1: r.betas[0],
        beta2: r.betas.get(1).copied(),
        modes: r.modes,
        status: status.into(),
        n_star: r.convergence.n_star(),
        ent_plus: r.entropy.map(|x| x.mean),
        ent_spread: r.entropy.map(|x| x.spread),
        noise_floor: Some(outcome.ledger.noise_floor),
        q1: e.map(|x| x.heat[0]),
        q2: e.map(|x| x.heat[1]),
        work: e.map(|x| x.work),
        eta: e.and_then(|x| x.eta),
        eta_carnot: e.map(|x| x.eta_carnot),
        regime: e.map(|x| x.regime.as_str().to_string()),
        gamma_fit: r.convergence.gamma_fit,
        min_ent: Some(r.invariants.min_ent),
        balance_residual: Some(r.invariants.balance.relative_residual).filter(|x| x.is_finite()),
        error: None,
    }
}

/// Manifest row for a point that could not be resolved or run.
pub fn error_row(point: usize, config: &RunConfig, err: &Error) -> ManifestRow {
    let reservoirs = &config.reservoirs;
    ManifestRow {
        point,
        config_hash: config.content_hash(),
        g: config.model.coupling.unwrap_or(f64::NAN),
        tau: config.model.period,
        beta1: reservoirs.first().map_or(f64::NAN, |r| r.beta),
        beta2: reservoirs.get(1).map(|r| r.beta),
        modes: config.discretization.modes,
        status: "error".into(),
        n_star: None,
        ent_plus: None,
        ent_spread: None,
        noise_floor: None,
        q1: None,
        q2: None,
        work: None,
        eta: None,
        eta_carnot: None,
        regime: None,
        gamma_fit: None,
        min_ent: None,
        balance_residual: None,
        error: Some(err.to_string()),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Impurity population, heat fluxes and entropy production against time.
pub fn plot_flux(traj: &Trajectory, path: &Path) -> Result<PathBuf> {
    let nr = traj.n_reservoirs();
    let mut header = vec!["time".to_string(), "impurity".into()];
    header.extend((1..=nr).map(|i| format!("flux_{i}")));
    header.push("ep".into());
    let rows = traj.samples.iter().map(|s| {
        let mut r = vec![fmt(s.time), fmt(s.impurity)];
        r.extend(s.flux.iter().map(|&x| fmt(x)));
        r.push(fmt(s.ep));
        r
    });
    write_table(path, &header, rows)
}

/// Per-cycle heats, work, `ΔEnt` and convergence metric.
pub fn plot_cycles(ledger: &CycleLedger, path: &Path) -> Result<PathBuf> {
    let nr = ledger.n_reservoirs();
    let mut header = vec!["cycle".to_string()];
    header.extend((1..=nr).map(|i| format!("q_{i}")));
    header.extend(["work", "delta_ent", "metric"].map(String::from));
    let rows = (0..ledger.cycles()).map(|n| {
        let mut r = vec![(ledger.start_cycle + n).to_string()];
        r.extend(ledger.heat[n].iter().map(|&x| fmt(x)));
        r.extend([fmt(ledger.work[n]), fmt(ledger.entropy[n]), fmt(ledger.convergence_metric[n])]);
        r
    });
    write_table(path, &header, rows)
}

/// `−Im E_j⁽⁰⁾` for `j = 1, 2, 3` at `n` couplings spanning `[0, g_max]`.
pub fn plot_widths(model: &ModelSpec, g_max: f64, n: usize, path: &Path) -> Result<PathBuf> {
    let header = ["g", "width_1", "width_2", "width_3", "spectral_gap", "population_gap"].map(String::from);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let g = if n > 1 { g_max * k as f64 / (n - 1) as f64 } else { g_max };
        let t = resonance_table(model, g, Convention::CLiouvillean, 0, 0)?;
        let mut r = vec![fmt(g)];
        r.extend((1..4).map(|j| fmt(-t.get(0, j).expect("sector 0 present").im)));
        r.push(fmt(spectral_gap(&t)?));
        r.push(fmt(population_gap(&t)?));
        rows.push(r);
    }
    write_table(path, &header, rows)
}

/// Efficiency and entropy production per cycle against `g`, one line per
/// manifest point in manifest order.
pub fn plot_manifest(rows: &[ManifestRow], path: &Path) -> Result<PathBuf> {
    let header = ["point", "g", "tau", "eta", "eta_carnot", "ent_plus", "regime", "status"].map(String::from);
    let out = rows.iter().map(|r| {
        vec![
            r.point.to_string(),
            fmt(r.g),
            fmt(r.tau),
            opt(r.eta),
            opt(r.eta_carnot),
            opt(r.ent_plus),
            r.regime.clone().unwrap_or_default(),
            r.status.clone(),
        ]
    });
    write_table(path, &header, out)
}

/// Plot data for a run bundle directory or a sweep manifest CSV.
pub fn emit_plots(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    if input.is_dir() {
        let config = RunConfig::load(&input.join("config.toml"))?;
        let model = config.model()?;
        let ledger: CycleLedger = serde_json::from_str(&fs::read_to_string(input.join("ledger.json"))?)?;
        let traj = read_trajectory_csv(&input.join("trajectory.csv"), &ledger)?;
        let g_max = if model.coupling > 0.0 { 2.0 * model.coupling } else { 1.0 };
        Ok(vec![
            plot_flux(&traj, &out.join("flux_vs_t.csv"))?,
            plot_cycles(&ledger, &out.join("cycles.csv"))?,
            plot_widths(&model, g_max, 21, &out.join("widths_vs_g.csv"))?,
        ])
    } else if input.is_file() {
        let rows = read_manifest(input)?;
        Ok(vec![plot_manifest(&rows, &out.join("eta_vs_g.csv"))?])
    } else {
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} does not exist", input.display()))))
    }
}

/// Reads back a trajectory written by [`Trajectory::write_csv`].
pub fn read_trajectory_csv(path: &Path, ledger: &CycleLedger) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Incomplete(format!("{}: missing column `{name}`", path.display())))
    };
    let nr = ledger.n_reservoirs();
    let idx = |key: &str| (1..=nr).map(|i| col(&format!("{key}_{i}"))).collect::<Result<Vec<_>>>();
    let (t, c, b, imp, ent, ep) = (col("time")?, col("cycle")?, col("boundary")?, col("impurity")?, col("ent")?, col("ep")?);
    let (de, dn, fl, fe) = (idx("delta_energy")?, idx("delta_number")?, idx("flux")?, idx("flux_eff")?);
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Incomplete(format!("bad number `{}` in {}", &rec[k], path.display())))
        };
        let many = |ks: &[usize]| ks.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>();
        samples.push(crate::dynamics::Sample {
            time: num(t)?,
            cycle: rec[c].parse().map_err(|_| Error::Incomplete("bad cycle index".into()))?,
            boundary: &rec[b] == "1",
            impurity: num(imp)?,
            delta_energy: many(&de)?,
            delta_number: many(&dn)?,
            flux: many(&fl)?,
            flux_eff: many(&fe)?,
            ent: num(ent)?,
            ep: num(ep)?,
        });
    }
    let ent0 = samples.first().map_or(0.0, |s| s.ent);
    Trajectory::from_samples(ledger.period, ledger.betas.clone(), ledger.mus.clone(), ent0, samples)
}

/// Writes a manifest in point order.
pub fn write_manifest_file(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_manifest(&mut f, rows)?;
    f.flush()?;
    Ok(())
}
