mod common;

use common::{assert_close, small_model};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use qcycle::discretization::{CovarianceState, DiscretizationSpec, DiscretizedModel, GridScheme, SystemState};
use qcycle::dynamics::{
    propagate_covariance, propagate_fock_oracle, relative_entropy_oracle, run_covariance, run_covariance_checkpointed,
    run_fock_oracle, DenseCycles, FockSpace, FockState, Integrator, RunPlan, Snapshot,
};
use qcycle::model::{InitialState, ModelSpec, PeriodicEnvelope};

fn dense_plan(cycles: usize, steps: usize) -> RunPlan {
    RunPlan { dense: DenseCycles::All, steps_per_cycle: steps, ..RunPlan::new(cycles) }
}

#[test]
fn fock_oracle_matches_gaussian_path() {
    let dm = small_model(4, 0.6, InitialState::Population { excited: 0.8 });
    let plan = dense_plan(3, 64);
    let a = run_covariance(&dm, &plan).unwrap();
    let b = run_fock_oracle(&dm, &plan).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_close(x.impurity, y.impurity, 1e-9, "impurity");
        for i in 0..2 {
            assert_close(x.delta_energy[i], y.delta_energy[i], 1e-9, "delta energy");
            assert_close(x.delta_number[i], y.delta_number[i], 1e-9, "delta number");
            assert_close(x.flux[i], y.flux[i], 1e-9, "flux");
        }
        assert_close(x.ent, y.ent, 1e-9, "ent");
    }
    assert!(b.max_unitarity_defect < 1e-10);
}

#[test]
fn relative_entropy_closed_form_matches_density_matrix() {
    let dm = small_model(3, 0.8, InitialState::Population { excited: 0.3 });
    let space = FockSpace::new(&dm).unwrap();
    let plan = dense_plan(2, 64);
    let traj = run_covariance(&dm, &plan).unwrap();
    let mut state = FockState::initial(&space, 0.3).unwrap();
    assert_close(relative_entropy_oracle(&space, &state), traj.samples[0].ent, 1e-8, "Ent(0)");
    for t in [0.5, 1.25, 2.0, 3.5, 4.0] {
        state = propagate_fock_oracle(&space, &state, t, 2.0 / 64.0, Integrator::Magnus4).unwrap();
        assert_close(relative_entropy_oracle(&space, &state), traj.relative_entropy(t).unwrap(), 1e-8, "Ent(t)");
    }
    let rho = state.density_matrix(&space);
    let tr: Complex64 = rho.diagonal().iter().sum();
    assert_close(tr.re, 1.0, 1e-12, "trace");
}

fn gamma_error(dm: &DiscretizedModel, dt: f64, integ: Integrator, reference: &CovarianceState) -> f64 {
    let g0 = dm.thermal_covariance(SystemState::Diagonal { excited: 0.9 }).unwrap();
    let g1 = propagate_covariance(dm, &g0, 2.0, dt, integ).unwrap();
    (&g1.gamma - &reference.gamma).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn integrator_orders() {
    let dm = small_model(6, 1.0, InitialState::Trace);
    let g0 = dm.thermal_covariance(SystemState::Diagonal { excited: 0.9 }).unwrap();
    let reference = propagate_covariance(&dm, &g0, 2.0, 2.0 / 2048.0, Integrator::Magnus4).unwrap();
    for (integ, order) in [(Integrator::Midpoint, 2.0), (Integrator::Magnus4, 4.0)] {
        let e1 = gamma_error(&dm, 2.0 / 32.0, integ, &reference);
        let e2 = gamma_error(&dm, 2.0 / 64.0, integ, &reference);
        let observed = (e1 / e2).log2();
        assert!((observed - order).abs() < 0.3, "{integ:?}: observed order {observed}");
    }
}

#[test]
fn static_two_mode_matches_exact_exponential() {
    let tau = 1.0;
    let res = common::reservoir(1.0, 0.0, PeriodicEnvelope::constant(tau, 1.0).unwrap(), 1.0);
    let model = ModelSpec::new(0.7, 0.9, vec![res]).unwrap();
    let spec = DiscretizationSpec { scheme: GridScheme::Uniform, modes: 1, u_max: Some(3.0) };
    let dm = DiscretizedModel::new(&model, &spec).unwrap();
    let h = dm.single_particle_hamiltonian(0.0);
    let hr = DMatrix::from_fn(2, 2, |i, j| h[[i, j]].re);
    assert!(h.iter().all(|z| z.im == 0.0));
    let eig = SymmetricEigen::new(hr);
    let t = 3.3;
    // U = V e^{−iDt} Vᵀ
    let phase = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::from_polar(1.0, -l * t)));
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let u = &v * phase * v.transpose();
    let g0 = dm.thermal_covariance(SystemState::Diagonal { excited: 1.0 }).unwrap();
    let g0m = DMatrix::from_fn(2, 2, |i, j| g0.gamma[[i, j]]);
    let expected = u.conjugate() * g0m * u.transpose();
    let got = propagate_covariance(&dm, &g0, t, 0.01, Integrator::Magnus4).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((got.gamma[[i, j]] - expected[(i, j)]).norm() < 1e-10);
        }
    }
}

#[test]
fn zero_coupling_is_stationary() {
    let dm = small_model(8, 0.0, InitialState::Population { excited: 0.7 });
    let traj = run_covariance(&dm, &dense_plan(2, 32)).unwrap();
    for s in &traj.samples {
        assert_close(s.impurity, 0.7, 1e-13, "impurity");
        for i in 0..2 {
            assert_close(s.delta_energy[i], 0.0, 1e-13, "energy");
            assert_close(s.flux[i], 0.0, 1e-13, "flux");
        }
    }
}

#[test]
fn flux_is_minus_energy_derivative() {
    let dm = small_model(20, 0.7, InitialState::Trace);
    let traj = run_covariance(&dm, &dense_plan(2, 256)).unwrap();
    let s = &traj.samples;
    let h = s[1].time - s[0].time;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 3..250 {
        for i in 0..2 {
            let d = (45.0 * (s[k + 1].delta_energy[i] - s[k - 1].delta_energy[i])
                - 9.0 * (s[k + 2].delta_energy[i] - s[k - 2].delta_energy[i])
                + (s[k + 3].delta_energy[i] - s[k - 3].delta_energy[i]))
                / (60.0 * h);
            worst = worst.max((d + s[k].flux[i]).abs());
            scale = scale.max(s[k].flux[i].abs());
        }
    }
    assert!(scale > 1e-3, "flux too small to test: {scale}");
    assert!(worst < 1e-6 * scale.max(1.0), "derivative mismatch {worst:.3e}");
    let bal = traj.balance();
    assert!(bal.identity_residual < 1e-13);
    assert!(bal.relative_residual < 1e-6, "{bal:?}");
}

#[test]
fn floquet_map_agrees_with_stepping() {
    let dm = small_model(10, 0.5, InitialState::Trace);
    let stepped = RunPlan { floquet: false, dense: DenseCycles::None, ..RunPlan::new(6) };
    let mapped = RunPlan { floquet: true, dense: DenseCycles::None, ..RunPlan::new(6) };
    let a = run_covariance(&dm, &stepped).unwrap();
    let b = run_covariance(&dm, &mapped).unwrap();
    for (x, y) in a.boundaries().zip(b.boundaries()) {
        assert_close(x.ent, y.ent, 1e-11, "ent");
        assert_close(x.delta_energy[0], y.delta_energy[0], 1e-11, "energy");
    }
    assert!(b.step_doubling_error.unwrap() < 1e-6);
}

#[test]
fn covariance_spectrum_stays_in_unit_interval() {
    let dm = small_model(12, 1.2, InitialState::Trace);
    let g0 = dm.thermal_covariance(SystemState::Diagonal { excited: 0.5 }).unwrap();
    let g1 = propagate_covariance(&dm, &g0, 7.0, 2.0 / 128.0, Integrator::Magnus4).unwrap();
    assert!(g1.hermiticity_defect() < 1e-12);
    assert_close(g1.trace(), g0.trace(), 1e-11, "particle number");
    for l in g1.eigenvalues() {
        assert!((-1e-12..=1.0 + 1e-12).contains(&l), "eigenvalue {l}");
    }
}

#[test]
fn resumed_run_continues_bitwise() {
    let dm = small_model(10, 0.5, InitialState::GoldenRule);
    let plan = RunPlan { dense: DenseCycles::None, ..RunPlan::new(6) };
    let (full, _) = run_covariance_checkpointed(&dm, &plan, None).unwrap();
    let (_, snap) = run_covariance_checkpointed(&dm, &RunPlan { cycles: 3, ..plan.clone() }, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.snap");
    snap.save(&path).unwrap();
    let loaded = Snapshot::load(&path).unwrap();
    let (rest, _) = run_covariance_checkpointed(&dm, &RunPlan { cycles: 3, ..plan }, Some(&loaded)).unwrap();
    assert_eq!(rest.start_cycle, 3);
    for n in 3..=6 {
        assert_eq!(full.boundary(n).unwrap(), rest.boundary(n).unwrap());
    }
    let other = small_model(11, 0.5, InitialState::GoldenRule);
    assert!(run_covariance_checkpointed(&other, &RunPlan::new(1), Some(&loaded)).is_err());
}

#[test]
fn csv_output_is_deterministic() {
    let dm = small_model(10, 0.5, InitialState::Trace);
    let plan = RunPlan::new(5);
    let write = || {
        let mut buf = Vec::new();
        run_covariance(&dm, &plan).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let a = write();
    assert_eq!(a, write());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("sample,time,cycle,boundary,impurity,delta_energy_1,delta_energy_2"));
}

#[test]
fn fock_oracle_refuses_large_models() {
    let dm = small_model(8, 0.5, InitialState::Trace);
    assert!(FockSpace::new(&dm).is_err());
}
