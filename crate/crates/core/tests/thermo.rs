mod common;

use common::{assert_close, reservoir, small_model};
use qcycle::discretization::{DiscretizationSpec, DiscretizedModel, GridScheme};
use qcycle::dynamics::{run_covariance, DenseCycles, RunPlan, Sample, Trajectory};
use qcycle::model::{InitialState, ModelSpec, PeriodicEnvelope};
use qcycle::thermo::*;
use qcycle::Error;

fn sample(time: f64, cycle: usize, boundary: bool, x: f64, nr: usize) -> Sample {
    Sample {
        time,
        cycle,
        boundary,
        impurity: x,
        delta_energy: vec![0.0; nr],
        delta_number: vec![0.0; nr],
        flux: vec![x; nr],
        flux_eff: vec![x; nr],
        ent: 0.0,
        ep: 0.0,
    }
}

/// 4 cycles of period 2 sampled 16 times per cycle with `f(t)` in every slot.
fn synthetic(f: impl Fn(f64) -> f64) -> Trajectory {
    let per = 16;
    let samples = (0..=4 * per)
        .map(|k| {
            let t = 2.0 * k as f64 / per as f64;
            sample(t, k / per, k % per == 0, f(t), 2)
        })
        .collect();
    Trajectory::from_samples(2.0, vec![1.0, 1.0], vec![0.0, 0.0], 0.0, samples).unwrap()
}

fn ledger_with_heat(heat: Vec<[f64; 2]>, betas: [f64; 2]) -> CycleLedger {
    let n = heat.len();
    CycleLedger {
        period: 1.0,
        betas: betas.to_vec(),
        mus: vec![0.0, 0.0],
        start_cycle: 0,
        entropy: heat.iter().map(|q| -(betas[0] * q[0] + betas[1] * q[1])).collect(),
        work: heat.iter().map(|q| q[0] + q[1]).collect(),
        heat_eff: heat.iter().map(|q| q.to_vec()).collect(),
        heat: heat.iter().map(|q| q.to_vec()).collect(),
        balance_residual: vec![0.0; n],
        convergence_metric: vec![0.0; n],
        ent_boundary: vec![0.0; n + 1],
        impurity: vec![0.5; n + 1],
        noise_floor: 1e-12,
        energy_noise: 1e-12,
        recurrence_time: f64::INFINITY,
    }
}

#[test]
fn uncoupled_run_is_trivially_converged() {
    let dm = small_model(60, 0.0, InitialState::Trace);
    let traj = run_covariance(&dm, &RunPlan::new(10)).unwrap();
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    assert!(ledger.heat.iter().flatten().all(|q| *q == 0.0));
    let conv = detect_periodic_convergence(&ledger, DEFAULT_TOLERANCE, DEFAULT_WINDOW).unwrap();
    assert_eq!(conv.n_star(), Some(0));
    let diag = bounded_difference_diagnostic(&ledger, &conv);
    assert!(diag.values.iter().all(|v| *v == 0.0));
    assert!(diag.plateau && !diag.monotone_growth);
    assert_eq!(per_cycle_heat(&traj, 1, 3).unwrap(), 0.0);
}

#[test]
fn zero_tolerance_never_converges() {
    let dm = small_model(6, 0.0, InitialState::Trace);
    let traj = run_covariance(&dm, &RunPlan::new(6)).unwrap();
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    let conv = detect_periodic_convergence(&ledger, 0.0, 3).unwrap();
    assert!(matches!(conv.status, ConvergenceStatus::NotConverged { .. }));
    assert!(matches!(entropy_per_cycle(&ledger, &conv), Err(Error::NotConverged(_))));
    assert!(matches!(detect_periodic_convergence(&ledger, 1e-6, 7), Err(Error::Incomplete(_))));
}

#[test]
fn ledger_identities_hold() {
    let dm = small_model(30, 0.6, InitialState::Population { excited: 0.8 });
    let traj = run_covariance(&dm, &RunPlan::new(12)).unwrap();
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    let mut cumulative = 0.0;
    for n in 0..ledger.cycles() {
        let s: f64 = (0..2).map(|i| ledger.betas[i] * ledger.heat_eff[n][i]).sum();
        assert!((ledger.entropy[n] + s).abs() <= 1e-12);
        assert_close(ledger.heat[n][0], per_cycle_heat(&traj, 0, n).unwrap(), 0.0, "heat");
        cumulative += ledger.entropy[n];
        assert_close(ledger.ent_boundary[n + 1] - ledger.ent_boundary[0], cumulative, 1e-10, "cumulative");
    }
    assert!(matches!(per_cycle_heat(&traj, 0, 12), Err(Error::Incomplete(_))));
    assert!(matches!(per_cycle_heat(&traj, 2, 0), Err(Error::Index(_))));
    let json = ledger.to_json().unwrap();
    let back: CycleLedger = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ledger);
}

#[test]
fn symmetric_reservoirs_share_the_heat() {
    let tau = 2.0;
    let env = PeriodicEnvelope::cosine(tau, 1.0, 0.4).unwrap();
    let r = reservoir(1.3, 0.0, env, 2.0);
    let model = ModelSpec::new(1.0, 0.5, vec![r.clone(), r]).unwrap();
    let spec = DiscretizationSpec { scheme: GridScheme::Uniform, modes: 25, u_max: Some(6.0) };
    let dm = DiscretizedModel::new(&model, &spec).unwrap();
    let traj = run_covariance(&dm, &RunPlan::new(10)).unwrap();
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    for q in &ledger.heat {
        assert_close(q[0], q[1], 1e-9, "Q1 vs Q2");
    }
}

#[test]
fn efficiency_edge_cases() {
    let balanced = ledger_with_heat(vec![[0.3, -0.3]; 6], [0.5, 2.0]);
    let r = efficiency(&balanced, 0, 2.0, 0.5).unwrap();
    assert_eq!(r.eta, Some(0.0));
    assert!(r.eta.unwrap() <= r.eta_carnot);

    let equilibrium = ledger_with_heat(vec![[-0.1, -0.05]; 6], [1.0, 1.0]);
    let r = efficiency(&equilibrium, 2, 1.0, 1.0).unwrap();
    assert_eq!(r.eta_carnot, 0.0);
    assert!(r.work <= 0.0);
    assert_eq!(r.regime, Regime::Heater);

    let fridge = ledger_with_heat(vec![[-0.3, 0.1]; 6], [0.5, 2.0]);
    assert_eq!(efficiency(&fridge, 0, 2.0, 0.5).unwrap().regime, Regime::Refrigerator);

    let engine = ledger_with_heat(vec![[0.4, -0.2]; 6], [0.5, 2.0]);
    let r = efficiency(&engine, 0, 2.0, 0.5).unwrap();
    assert_eq!(r.regime, Regime::Engine);
    assert_close(r.eta.unwrap(), 0.5, 1e-15, "eta");
    assert!(r.entropy_margin.unwrap().abs() < 1e-12);

    let quiet = ledger_with_heat(vec![[0.0, 0.0]; 6], [0.5, 2.0]);
    assert_eq!(efficiency(&quiet, 0, 2.0, 0.5).unwrap().regime, Regime::Undetermined);

    assert!(matches!(efficiency(&engine, 0, 0.5, 2.0), Err(Error::Domain(_))));
    let mut three = engine.clone();
    three.betas.push(1.0);
    assert!(matches!(efficiency(&three, 0, 2.0, 0.5), Err(Error::Unsupported(_))));
}

#[test]
fn cesaro_of_constant_and_sinusoid() {
    let c = synthetic(|_| 0.37);
    assert_close(cesaro_average(&c, Observable::Impurity).unwrap(), 0.37, 1e-15, "constant");
    let w = std::f64::consts::PI;
    let s = synthetic(|t| (w * t).sin() + 0.5 * (w * t).cos());
    assert_close(cesaro_average(&s, Observable::Flux(1)).unwrap(), 0.0, 1e-15, "sinusoid");
    assert!(matches!(cesaro_average(&s, Observable::Flux(2)), Err(Error::Index(_))));
}

#[test]
fn cesaro_flux_matches_energy_change() {
    let dm = small_model(40, 0.7, InitialState::GoldenRule);
    let plan = RunPlan { dense: DenseCycles::All, floquet: false, ..RunPlan::new(12) };
    let traj = run_covariance(&dm, &plan).unwrap();
    let t = traj.boundary(12).unwrap().time;
    for i in 0..2 {
        let avg = cesaro_average(&traj, Observable::Flux(i)).unwrap();
        let exact = -traj.boundary(12).unwrap().delta_energy[i] / t;
        assert_close(avg, exact, 1e-5 * exact.abs().max(1e-3), "integrated flux");
    }
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    let conv = detect_periodic_convergence(&ledger, 1e-3, 3).unwrap();
    let n_star = conv.n_star().expect("converges at loose tolerance");
    let tail: f64 = ledger.heat[n_star..].iter().map(|q| q[0]).sum::<f64>() / (ledger.cycles() - n_star) as f64;
    let avg = cesaro_average(&traj, Observable::Flux(0)).unwrap() * traj.period;
    assert!((avg - tail).abs() < 0.1 * tail.abs(), "{avg} vs {tail}");
}

#[test]
fn bounded_difference_plateaus_only_when_converged() {
    let dm = small_model(200, 0.9, InitialState::Trace);
    let traj = run_covariance(&dm, &RunPlan::new(50)).unwrap();
    let ledger = CycleLedger::from_trajectory(&traj).unwrap();
    let conv = detect_periodic_convergence(&ledger, DEFAULT_TOLERANCE, DEFAULT_WINDOW).unwrap();
    assert!(conv.n_star().is_some(), "{:?}", conv.status);
    let diag = bounded_difference_diagnostic(&ledger, &conv);
    assert!(diag.plateau && !diag.monotone_growth, "{diag:?}");

    let short = run_covariance(&dm, &RunPlan::new(6)).unwrap();
    let ledger = CycleLedger::from_trajectory(&short).unwrap();
    let mut conv = detect_periodic_convergence(&ledger, DEFAULT_TOLERANCE, DEFAULT_WINDOW).unwrap();
    assert!(conv.n_star().is_none());
    // tile the converged rate from the long run into the truncated one
    conv.limit_entropy = detect_periodic_convergence(
        &CycleLedger::from_trajectory(&traj).unwrap(),
        DEFAULT_TOLERANCE,
        DEFAULT_WINDOW,
    )
    .unwrap()
    .limit_entropy;
    let diag = bounded_difference_diagnostic(&ledger, &conv);
    assert!(!diag.plateau && diag.monotone_growth, "{diag:?}");
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    let row = |k: usize| ManifestRow {
        point: k,
        config_hash: format!("{k:064x}"),
        g: 0.1 * k as f64,
        tau: 1.0,
        beta1: 0.5,
        beta2: Some(2.0),
        modes: 100,
        status: "converged".into(),
        n_star: Some(12),
        ent_plus: Some(1.5e-3),
        ent_spread: Some(1e-9),
        noise_floor: Some(1e-10),
        q1: None,
        q2: None,
        work: None,
        eta: None,
        eta_carnot: None,
        regime: Some("heater".into()),
        gamma_fit: None,
        min_ent: Some(0.0),
        balance_residual: Some(1e-10),
        error: None,
    };
    append_manifest(&path, &row(0)).unwrap();
    append_manifest(&path, &row(1)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("point,")).count(), 1);
    assert_eq!(read_manifest(&path).unwrap(), vec![row(0), row(1)]);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
}
