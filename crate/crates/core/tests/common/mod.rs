#![allow(dead_code)]

use qcycle::discretization::{DiscretizationSpec, DiscretizedModel, GridScheme};
use qcycle::model::{FormFactor, InitialState, MeasureDensity, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec};

pub fn reservoir(beta: f64, mu: f64, env: PeriodicEnvelope, scale: f64) -> ReservoirSpec {
    let radial = RadialProfile::power_gaussian(1, scale, 1.0, MeasureDensity::Flat).unwrap();
    ReservoirSpec::new(beta, mu, FormFactor::new(env, radial)).unwrap()
}

/// Two driven reservoirs at different temperatures, few modes each.
pub fn small_model(modes: usize, g: f64, initial: InitialState) -> DiscretizedModel {
    let tau = 2.0;
    let hot = reservoir(0.5, 0.0, PeriodicEnvelope::cosine(tau, 1.0, 0.6).unwrap(), 2.0);
    let cold = reservoir(2.0, 0.3, PeriodicEnvelope::constant(tau, 0.8).unwrap(), 1.5);
    let model = ModelSpec::new(1.0, g, vec![hot, cold]).unwrap().with_initial(initial);
    let spec = DiscretizationSpec { scheme: GridScheme::Uniform, modes, u_max: Some(6.0) };
    DiscretizedModel::new(&model, &spec).unwrap()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (diff {:.3e}, tol {tol:.1e})", (a - b).abs());
}
