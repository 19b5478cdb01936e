//! Run configuration: a TOML tree mirroring the model types, resolved into
//! concrete sweep points, each stamped with a content hash.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretization::{hash_json, DiscretizationSpec, DiscretizedModel};
use crate::dynamics::{DenseCycles, Integrator, RunPlan};
use crate::error::{config_err, Result};
use crate::model::{
    validate_assumptions, FormFactor, InitialState, MeasureDensity, ModelSpec, PeriodicEnvelope, RadialProfile,
    ReservoirSpec,
};
use crate::resonances::fgr_width;
use crate::thermo::{DEFAULT_TOLERANCE, DEFAULT_WINDOW, TRUSTED_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    pub reservoirs: Vec<ReservoirConfig>,
    #[serde(default)]
    pub discretization: DiscretizationSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub run: HorizonConfig,
    #[serde(default, skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub omega0: f64,
    /// Drive period `τ`, shared by every envelope.
    pub period: f64,
    /// Coupling `g`. Exactly one of `coupling` and `coupling_width` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    /// Dimensionless `g²Γ₀τ`; `g` is solved from the golden-rule width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_width: Option<f64>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strip_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub beta: f64,
    #[serde(default)]
    pub mu: f64,
    pub envelope: EnvelopeConfig,
    pub radial: RadialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeConfig {
    Constant { value: f64 },
    /// `mean + amplitude·cos(ωt)`
    Cosine { mean: f64, amplitude: f64 },
    Harmonics { terms: Vec<Harmonic> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub m: i32,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadialConfig {
    PowerGaussian {
        power: u32,
        scale: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        measure: MeasureDensity,
    },
    Tabulated {
        nodes: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        measure: MeasureDensity,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub method: Integrator,
    #[serde(default = "default_steps")]
    pub steps_per_cycle: usize,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default = "default_true")]
    pub floquet: bool,
    #[serde(default = "default_true")]
    pub step_doubling: bool,
}

fn default_steps() -> usize {
    128
}
fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Integrator::default(),
            steps_per_cycle: default_steps(),
            sample_stride: default_stride(),
            floquet: true,
            step_doubling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Number of cycles; when absent, every cycle inside the trusted
    /// fraction of the recurrence estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Cycles sampled inside the period at the start and end of the run.
    #[serde(default = "default_edges")]
    pub dense_edges: usize,
    /// Sample every cycle densely (large output).
    #[serde(default)]
    pub dense_all: bool,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_edges() -> usize {
    2
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            cycles: None,
            tolerance: DEFAULT_TOLERANCE,
            window: DEFAULT_WINDOW,
            dense_edges: default_edges(),
            dense_all: false,
        }
    }
}

/// Lists of values; the sweep is their Cartesian product, `g` outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub g: Vec<f64>,
    #[serde(default)]
    pub tau: Vec<f64>,
    #[serde(default)]
    pub beta1: Vec<f64>,
    #[serde(default)]
    pub beta2: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<usize>,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_points() -> usize {
    256
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self { g: vec![], tau: vec![], beta1: vec![], beta2: vec![], modes: vec![], max_points: default_max_points() }
    }
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.g.is_empty() && self.tau.is_empty() && self.beta1.is_empty() && self.beta2.is_empty() && self.modes.is_empty()
    }

    pub fn size(&self) -> usize {
        [self.g.len(), self.tau.len(), self.beta1.len(), self.beta2.len(), self.modes.len()]
            .iter()
            .map(|&n| n.max(1))
            .product()
    }
}

/// One fully resolved simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPoint {
    pub index: usize,
    /// The single-point config this was resolved from (sweep removed).
    pub config: RunConfig,
    pub hash: String,
    pub model: ModelSpec,
    pub discretization: DiscretizationSpec,
    pub plan: RunPlan,
    pub tolerance: f64,
    pub window: usize,
}

impl RunPoint {
    pub fn discretize(&self) -> Result<DiscretizedModel> {
        DiscretizedModel::new(&self.model, &self.discretization)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hash_json(self)
    }

    pub fn with_cycles(mut self, cycles: usize) -> Self {
        self.run.cycles = Some(cycles);
        self
    }

    /// Builds the model with `g` resolved; does not check the structural
    /// assumptions.
    pub fn model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let tau = m.period;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(config_err("model.period", format!("must be positive, got {tau}")));
        }
        if self.reservoirs.is_empty() {
            return Err(config_err("reservoirs", "at least one reservoir is required"));
        }
        let reservoirs = self
            .reservoirs
            .iter()
            .enumerate()
            .map(|(i, r)| r.build(tau, &format!("reservoirs[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let mut model = ModelSpec::new(m.omega0, 0.0, reservoirs)?.with_initial(m.initial);
        if let Some(w) = m.strip_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(config_err("model.strip_width", "must be positive"));
            }
            model.strip_width = w;
        }
        let g = match (m.coupling, m.coupling_width) {
            (Some(g), None) => g,
            (None, Some(w)) => {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(config_err("model.coupling_width", "must be nonnegative"));
                }
                let gamma = fgr_width(&model, 0);
                if gamma <= 0.0 {
                    return Err(config_err("model.coupling_width", "golden-rule width vanishes, cannot solve for g"));
                }
                (w / (gamma * tau)).sqrt()
            }
            (Some(_), Some(_)) => {
                return Err(config_err("model.coupling", "set either coupling or coupling_width, not both"))
            }
            (None, None) => return Err(config_err("model.coupling", "missing (or give coupling_width)")),
        };
        if !g.is_finite() {
            return Err(config_err("model.coupling", "must be finite"));
        }
        let model = model.with_coupling(g);
        model.validate_initial()?;
        Ok(model)
    }

    /// Expands the sweep into single-point configs in manifest order.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let s = &self.sweep;
        if s.size() > s.max_points {
            return Err(config_err("sweep.max_points", format!("axis product {} exceeds the limit {}", s.size(), s.max_points)));
        }
        if !s.beta2.is_empty() && self.reservoirs.len() < 2 {
            return Err(config_err("sweep.beta2", "needs a second reservoir"));
        }
        let axis = |v: &Vec<f64>| if v.is_empty() { vec![None] } else { v.iter().map(|x| Some(*x)).collect() };
        let modes: Vec<Option<usize>> = if s.modes.is_empty() { vec![None] } else { s.modes.iter().map(|m| Some(*m)).collect() };
        let mut out = Vec::with_capacity(s.size());
        for g in axis(&s.g) {
            for tau in axis(&s.tau) {
                for b1 in axis(&s.beta1) {
                    for b2 in axis(&s.beta2) {
                        for m in &modes {
                            let mut c = self.clone();
                            c.sweep = SweepAxes::default();
                            if let Some(g) = g {
                                c.model.coupling = Some(g);
                                c.model.coupling_width = None;
                            }
                            if let Some(tau) = tau {
                                c.model.period = tau;
                            }
                            if let Some(b) = b1 {
                                c.reservoirs[0].beta = b;
                            }
                            if let Some(b) = b2 {
                                c.reservoirs[1].beta = b;
                            }
                            if let Some(m) = m {
                                c.discretization.modes = *m;
                            }
                            out.push(c);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Resolves a single-point config (no sweep axes).
    pub fn resolve(&self, index: usize) -> Result<RunPoint> {
        if !self.sweep.is_empty() {
            return Err(config_err("sweep", "expand the sweep before resolving points"));
        }
        let model = self.model()?;
        validate_assumptions(&model).into_result()?;
        let h = &self.run;
        if !(h.tolerance.is_finite() && h.tolerance >= 0.0) {
            return Err(config_err("run.tolerance", "must be finite and nonnegative"));
        }
        if h.window == 0 {
            return Err(config_err("run.window", "must be positive"));
        }
        let cycles = match h.cycles {
            Some(n) => n,
            None => {
                let dm = DiscretizedModel::new(&model, &self.discretization)?;
                let n = (TRUSTED_FRACTION * dm.recurrence_time() / model.period()).floor();
                if !n.is_finite() {
                    return Err(config_err("run.cycles", "recurrence estimate is infinite, give cycles explicitly"));
                }
                n as usize
            }
        };
        if cycles < h.window {
            return Err(config_err("run.cycles", format!("{cycles} cycles cannot fill the convergence window of {}", h.window)));
        }
        let i = &self.integrator;
        let plan = RunPlan {
            cycles,
            integrator: i.method,
            steps_per_cycle: i.steps_per_cycle,
            sample_stride: i.sample_stride,
            dense: if h.dense_all {
                DenseCycles::All
            } else {
                DenseCycles::Edges { first: h.dense_edges, last: h.dense_edges }
            },
            floquet: i.floquet,
            step_doubling: i.step_doubling,
        };
        plan.validate()?;
        let config = self.clone();
        Ok(RunPoint {
            index,
            hash: config.content_hash(),
            config,
            model,
            discretization: self.discretization.clone(),
            plan,
            tolerance: h.tolerance,
            window: h.window,
        })
    }

    /// Expands and resolves every point; a point that fails to resolve is
    /// returned as an error in its slot.
    pub fn points(&self) -> Result<Vec<(RunConfig, Result<RunPoint>)>> {
        Ok(self.expand()?.into_iter().enumerate().map(|(k, c)| {
            let p = c.resolve(k);
            (c, p)
        }).collect())
    }
}

impl ReservoirConfig {
    fn build(&self, tau: f64, at: &str) -> Result<ReservoirSpec> {
        let envelope = self.envelope.build(tau).map_err(|e| rekey(e, &format!("{at}.envelope")))?;
        let radial = self.radial.build().map_err(|e| rekey(e, &format!("{at}.radial")))?;
        ReservoirSpec::new(self.beta, self.mu, FormFactor::new(envelope, radial)).map_err(|e| rekey(e, at))
    }
}

impl EnvelopeConfig {
    pub fn build(&self, tau: f64) -> Result<PeriodicEnvelope> {
        match self {
            EnvelopeConfig::Constant { value } => PeriodicEnvelope::constant(tau, *value),
            EnvelopeConfig::Cosine { mean, amplitude } => PeriodicEnvelope::cosine(tau, *mean, *amplitude),
            EnvelopeConfig::Harmonics { terms } => {
                if terms.is_empty() {
                    return Err(config_err("terms", "at least one harmonic is required"));
                }
                let pairs: Vec<(i32, Complex64)> = terms.iter().map(|h| (h.m, Complex64::new(h.re, h.im))).collect();
                PeriodicEnvelope::new(tau, &pairs)
            }
        }
    }
}

impl RadialConfig {
    pub fn build(&self) -> Result<RadialProfile> {
        match self {
            RadialConfig::PowerGaussian { power, scale, amplitude, measure } => {
                RadialProfile::power_gaussian(*power, *scale, *amplitude, *measure)
            }
            RadialConfig::Tabulated { nodes, values, measure } => RadialProfile::tabulated(nodes.clone(), values.clone(), *measure),
        }
    }
}

/// Prefixes the key of a configuration error with its location.
fn rekey(e: crate::Error, prefix: &str) -> crate::Error {
    match e {
        crate::Error::Config { key, reason } => {
            let leaf = key.rsplit('.').next().unwrap_or(&key).to_string();
            crate::Error::Config { key: format!("{prefix}.{leaf}"), reason }
        }
        other => other,
    }
}
