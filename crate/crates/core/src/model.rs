//! Physical model: two-level system `H_S = ω₀σ₃` coupled to free-fermion
//! reservoirs through separable, time-periodic form factors `h(t)·φ(u)`.
//!
//! Everything here is immutable after construction and evaluation is pure,
//! so the types can be shared freely between sweep workers.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Assumption, Error, Result};

/// Fermi–Dirac occupation `1/(e^{β(u−μ)}+1)`, evaluated without overflow.
///
/// Fails with a domain error for non-finite input or `β ≤ 0`.
pub fn fermi_occupation(beta: f64, mu: f64, u: f64) -> Result<f64> {
    if !(beta.is_finite() && mu.is_finite() && u.is_finite()) {
        return Err(Error::Domain(format!(
            "fermi_occupation needs finite inputs, got beta={beta}, mu={mu}, u={u}"
        )));
    }
    if beta <= 0.0 {
        return Err(Error::Domain(format!("inverse temperature must be positive, got {beta}")));
    }
    Ok(fermi(beta, mu, u))
}

#[inline]
pub(crate) fn fermi(beta: f64, mu: f64, u: f64) -> f64 {
    let x = beta * (u - mu);
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Density `m(u)` of the reservoir measure `m(u)du` on the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasureDensity {
    /// `m(u) = 1`
    #[default]
    Flat,
    /// `m(u) = ½√u`, nonrelativistic fermions in three dimensions.
    HalfSqrt,
}

impl MeasureDensity {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            MeasureDensity::Flat => 1.0,
            MeasureDensity::HalfSqrt => 0.5 * u.max(0.0).sqrt(),
        }
    }
}

/// Radial part `φ(u)` of a form factor, defined for `u ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    /// `φ(u) = A·(u/s)^n·exp(−(u/s)²)`
    PowerGaussian { power: u32, scale: f64, amplitude: f64 },
    /// Piecewise-linear interpolation of `(u, φ)` samples; zero outside the table.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub shape: ProfileShape,
    #[serde(default)]
    pub measure: MeasureDensity,
}

impl RadialProfile {
    pub fn power_gaussian(power: u32, scale: f64, amplitude: f64, measure: MeasureDensity) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(config_err("profile.scale", format!("must be positive, got {scale}")));
        }
        if !amplitude.is_finite() {
            return Err(config_err("profile.amplitude", "must be finite"));
        }
        Ok(Self {
            shape: ProfileShape::PowerGaussian { power, scale, amplitude },
            measure,
        })
    }

    pub fn tabulated(nodes: Vec<f64>, values: Vec<f64>, measure: MeasureDensity) -> Result<Self> {
        if nodes.len() != values.len() || nodes.len() < 2 {
            return Err(config_err(
                "profile.nodes",
                "tabulated profile needs at least two (node, value) pairs of equal length",
            ));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes[0] < 0.0 {
            return Err(config_err("profile.nodes", "nodes must be nonnegative and strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(config_err("profile.values", "values must be finite and nonnegative"));
        }
        Ok(Self {
            shape: ProfileShape::Tabulated { nodes, values },
            measure,
        })
    }

    /// `φ(|u|)`.
    pub fn phi(&self, u: f64) -> f64 {
        let u = u.abs();
        match &self.shape {
            ProfileShape::PowerGaussian { power, scale, amplitude } => {
                let x = u / scale;
                amplitude * x.powi(*power as i32) * (-x * x).exp()
            }
            ProfileShape::Tabulated { nodes, values } => {
                if u < nodes[0] || u > nodes[nodes.len() - 1] {
                    return 0.0;
                }
                let k = nodes.partition_point(|&x| x <= u).clamp(1, nodes.len() - 1);
                let (x0, x1) = (nodes[k - 1], nodes[k]);
                let s = (u - x0) / (x1 - x0);
                values[k - 1] * (1.0 - s) + values[k] * s
            }
        }
    }

    /// `m(|u|)·φ(|u|)²`, the squared coupling density without thermal factors.
    pub fn weight(&self, u: f64) -> f64 {
        let p = self.phi(u);
        self.measure.eval(u.abs()) * p * p
    }

    /// Energy beyond which `m φ²` is negligible (below `1e−32` of its scale).
    pub fn support_cutoff(&self) -> f64 {
        match &self.shape {
            ProfileShape::PowerGaussian { power, scale, .. } => {
                let n = *power as f64;
                // x^{2n} e^{-2x²} ≤ 1e-32 beyond the peak at x = √(n/2)
                let mut x = (n / 2.0).sqrt().max(1.0);
                while 2.0 * n * x.ln() - 2.0 * x * x > -32.0 * std::f64::consts::LN_10 {
                    x += 0.05;
                }
                scale * x
            }
            ProfileShape::Tabulated { nodes, .. } => nodes[nodes.len() - 1],
        }
    }
}

/// Time-periodic envelope `h(t) = Σ_m ĥ_m e^{imωt}` over a finite symmetric window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicEnvelope {
    period: f64,
    window: i32,
    /// `coeffs[m + window]` is `ĥ_m`.
    coeffs: Vec<Complex64>,
}

impl PeriodicEnvelope {
    pub fn new(period: f64, coefficients: &[(i32, Complex64)]) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(config_err("envelope.period", format!("must be positive, got {period}")));
        }
        let window = coefficients.iter().map(|(m, _)| m.abs()).max().unwrap_or(0);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * window + 1) as usize];
        for &(m, c) in coefficients {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(config_err("envelope.coefficients", format!("coefficient m={m} is not finite")));
            }
            coeffs[(m + window) as usize] += c;
        }
        Ok(Self { period, window, coeffs })
    }

    /// `h(t) ≡ a`.
    pub fn constant(period: f64, a: f64) -> Result<Self> {
        Self::new(period, &[(0, Complex64::new(a, 0.0))])
    }

    /// `h(t) = mean + amplitude·cos(ωt)`.
    pub fn cosine(period: f64, mean: f64, amplitude: f64) -> Result<Self> {
        let half = Complex64::new(0.5 * amplitude, 0.0);
        Self::new(period, &[(0, Complex64::new(mean, 0.0)), (1, half), (-1, half)])
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `ω = 2π/τ`, always derived from the period.
    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn window(&self) -> i32 {
        self.window
    }

    pub fn coefficient(&self, m: i32) -> Complex64 {
        if m.abs() > self.window {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(m + self.window) as usize]
        }
    }

    /// Nonzero `(m, ĥ_m)` pairs in increasing `m`.
    pub fn coefficients(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(k, c)| (k as i32 - self.window, *c))
            .filter(|(_, c)| c.norm_sqr() > 0.0)
    }

    /// Whether `h(t)` is real for all t, i.e. `ĥ_{−m} = conj(ĥ_m)`.
    pub fn is_real(&self) -> bool {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (0..=self.window).all(|m| (self.coefficient(-m) - self.coefficient(m).conj()).norm() <= 1e-14 * scale)
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        let w = self.omega();
        self.coefficients()
            .map(|(m, c)| c * Complex64::cis(m as f64 * w * t))
            .sum()
    }

    /// `Σ_m |ĥ_m|²`, the period-averaged `|h|²`.
    pub fn mean_square(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_static(&self) -> bool {
        self.coefficients().all(|(m, _)| m == 0)
    }
}

/// Separable form factor `f(u, t) = h(t)·φ(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFactor {
    pub envelope: PeriodicEnvelope,
    pub radial: RadialProfile,
}

impl FormFactor {
    pub fn new(envelope: PeriodicEnvelope, radial: RadialProfile) -> Self {
        Self { envelope, radial }
    }

    /// Even extension `f̃(u,t)`: `h(t)√m(u)φ(u)` for `u ≥ 0` and the complex
    /// conjugate of the envelope on the negative half-line.
    pub fn tilde_f(&self, u: f64, t: f64) -> Complex64 {
        let h = self.envelope.eval(t);
        let r = self.radial.measure.eval(u.abs()).sqrt() * self.radial.phi(u);
        if u >= 0.0 {
            h * r
        } else {
            h.conj() * r
        }
    }

    /// Radial density of the glued function: `m(u)(1−ρ(u))φ(u)²` for `u ≥ 0`,
    /// `m(−u)ρ(−u)φ(−u)²` below zero.
    pub fn glued_weight(&self, beta: f64, mu: f64, u: f64) -> f64 {
        let w = self.radial.weight(u);
        if u >= 0.0 {
            w * (1.0 - fermi(beta, mu, u))
        } else {
            w * fermi(beta, mu, -u)
        }
    }

    /// Density of the companion `f^#` function, the glued weight reflected.
    pub fn sharp_weight(&self, beta: f64, mu: f64, u: f64) -> f64 {
        let w = self.radial.weight(u);
        if u >= 0.0 {
            w * fermi(beta, mu, u)
        } else {
            w * (1.0 - fermi(beta, mu, -u))
        }
    }

    /// `‖f̂_{β,μ,m}(u)‖²`. The negative branch conjugates the envelope, whose
    /// m-th coefficient is `conj(ĥ_{−m})`.
    pub fn fourier_weight(&self, beta: f64, mu: f64, m: i32, u: f64) -> f64 {
        let c = if u >= 0.0 {
            self.envelope.coefficient(m)
        } else {
            self.envelope.coefficient(-m).conj()
        };
        c.norm_sqr() * self.glued_weight(beta, mu, u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub beta: f64,
    pub mu: f64,
    pub form_factor: FormFactor,
}

impl ReservoirSpec {
    pub fn new(beta: f64, mu: f64, form_factor: FormFactor) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(config_err("reservoir.beta", format!("must be finite and positive, got {beta}")));
        }
        if !mu.is_finite() {
            return Err(config_err("reservoir.mu", "must be finite"));
        }
        Ok(Self { beta, mu, form_factor })
    }

    pub fn occupation(&self, u: f64) -> f64 {
        fermi(self.beta, self.mu, u)
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Diagonal initial state of the two-level system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum InitialState {
    /// `diag(½, ½)`
    #[default]
    Trace,
    /// Explicit population of the upper level `e₁`.
    Population { excited: f64 },
    /// Rate-equation stationary population of the weak-coupling periodic
    /// state; shortens the transient without changing the limit.
    GoldenRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Half the level splitting: `H_S = ω₀σ₃`.
    pub omega0: f64,
    pub coupling: f64,
    pub reservoirs: Vec<ReservoirSpec>,
    #[serde(default)]
    pub initial: InitialState,
    /// Strip half-width used only when sampling the regularity assumption.
    #[serde(default = "default_strip_width")]
    pub strip_width: f64,
}

fn default_strip_width() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(omega0: f64, coupling: f64, reservoirs: Vec<ReservoirSpec>) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(config_err("model.omega0", format!("must be positive, got {omega0}")));
        }
        if !coupling.is_finite() {
            return Err(config_err("model.coupling", "must be finite"));
        }
        if reservoirs.is_empty() {
            return Err(config_err("model.reservoirs", "at least one reservoir is required"));
        }
        Ok(Self {
            omega0,
            coupling,
            reservoirs,
            initial: InitialState::Trace,
            strip_width: default_strip_width(),
        })
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_coupling(mut self, g: f64) -> Self {
        self.coupling = g;
        self
    }

    /// Level splitting `2ω₀`, the impurity on-site energy after the
    /// spin-to-fermion mapping.
    pub fn splitting(&self) -> f64 {
        2.0 * self.omega0
    }

    pub fn period(&self) -> f64 {
        self.reservoirs[0].form_factor.envelope.period()
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period()
    }

    /// Spectrum of the uncoupled system Liouvillean `H⊗1 − 1⊗H`.
    pub fn uncoupled_liouvillean_spectrum(&self) -> [f64; 4] {
        let e = self.splitting();
        [-e, 0.0, 0.0, e]
    }

    /// Initial population of the upper level.
    pub fn initial_population(&self) -> f64 {
        match self.initial {
            InitialState::Trace => 0.5,
            InitialState::Population { excited } => excited,
            InitialState::GoldenRule => self.golden_rule_population(),
        }
    }

    /// Stationary upper-level population of the lowest-order rate equation:
    /// transitions at `2ω₀ + mω` into reservoir states `u > 0`, weighted by
    /// `|ĥ_m|² m φ²` and the Fermi factors there.
    pub fn golden_rule_population(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        let w = self.omega();
        for r in &self.reservoirs {
            let ff = &r.form_factor;
            for (m, c) in ff.envelope.coefficients() {
                let u = self.splitting() + m as f64 * w;
                if u <= 0.0 {
                    continue;
                }
                let rate = c.norm_sqr() * ff.radial.weight(u);
                num += rate * r.occupation(u);
                den += rate;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.5
        }
    }

    pub fn validate_initial(&self) -> Result<()> {
        let p = self.initial_population();
        if !(p > 0.0 && p < 1.0) {
            return Err(config_err(
                "model.initial",
                format!("upper-level population must lie strictly inside (0,1), got {p}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass(String),
    Fail(String),
    Unverifiable(String),
}

impl CheckStatus {
    pub fn passed(&self) -> bool {
        !matches!(self, CheckStatus::Fail(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub periodicity: CheckStatus,
    pub regularity: CheckStatus,
    pub golden_rule: CheckStatus,
    pub parseval: CheckStatus,
}

impl ValidationReport {
    pub fn failed(&self) -> Vec<Assumption> {
        let mut out = Vec::new();
        if !self.periodicity.passed() {
            out.push(Assumption::Periodicity);
        }
        if !self.regularity.passed() || !self.parseval.passed() {
            out.push(Assumption::Regularity);
        }
        if !self.golden_rule.passed() {
            out.push(Assumption::GoldenRule);
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.failed().is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        let failed = self.failed();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::Assumptions { failed })
        }
    }
}

/// Checks periodicity, strip regularity (sampled), the golden-rule
/// condition at `2ω₀` and the Parseval sum of the Fourier weights.
pub fn validate_assumptions(model: &ModelSpec) -> ValidationReport {
    ValidationReport {
        periodicity: check_periodicity(model),
        regularity: check_regularity(model),
        golden_rule: check_golden_rule(model),
        parseval: check_parseval(model),
    }
}

fn check_periodicity(model: &ModelSpec) -> CheckStatus {
    let tau = model.period();
    for (i, r) in model.reservoirs.iter().enumerate() {
        let t = r.form_factor.envelope.period();
        if (t - tau).abs() > 1e-12 * tau {
            return CheckStatus::Fail(format!("reservoir {i} has period {t}, reservoir 0 has {tau}"));
        }
    }
    let g = model
        .reservoirs
        .iter()
        .flat_map(|r| r.form_factor.envelope.coefficients().map(|(m, _)| m.unsigned_abs()))
        .filter(|m| *m != 0)
        .fold(0u32, gcd);
    if g > 1 {
        CheckStatus::Pass(format!("shared period {tau}; Fourier content has step {g}, minimal period is {}", tau / g as f64))
    } else {
        CheckStatus::Pass(format!("shared period {tau}"))
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Analytic continuation of the positive-energy glued branch, damped by `e^{−βz/2}`.
fn damped_glued(r: &ReservoirSpec, power: u32, scale: f64, amplitude: f64, z: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let x = z / scale;
    let phi = amplitude * x.powi(power as i32) * (-x * x).exp();
    let m = match r.form_factor.radial.measure {
        MeasureDensity::Flat => one,
        MeasureDensity::HalfSqrt => 0.5 * z.sqrt(),
    };
    let one_minus_rho = one / (one + (-(z - r.mu) * r.beta).exp());
    (-(z * r.beta) / 2.0).exp() * m.sqrt() * one_minus_rho.sqrt() * phi
}

fn check_regularity(model: &ModelSpec) -> CheckStatus {
    let mut detail = Vec::new();
    for (i, r) in model.reservoirs.iter().enumerate() {
        match &r.form_factor.radial.shape {
            ProfileShape::Tabulated { .. } => {
                return CheckStatus::Unverifiable(format!(
                    "reservoir {i}: tabulated profile, strip analyticity cannot be sampled"
                ));
            }
            ProfileShape::PowerGaussian { power, scale, amplitude } => {
                if *power < 2 {
                    return CheckStatus::Fail(format!("reservoir {i}: power {power} < 2 is not regular at u = 0"));
                }
                // strip narrower than the first Fermi pole at Im z = π/β
                let kappa = model.strip_width.min(PI / r.beta);
                let half = 0.95 * kappa;
                let span = r.form_factor.radial.support_cutoff() + r.mu.abs() + 10.0 / r.beta;
                let nu = 4001;
                let du = 2.0 * span / (nu - 1) as f64;
                let mut sup: f64 = 0.0;
                for k in 0..=8 {
                    let theta = -half + 2.0 * half * k as f64 / 8.0;
                    let mut acc = 0.0;
                    for j in 0..nu {
                        let u = -span + j as f64 * du;
                        let v = damped_glued(r, *power, *scale, *amplitude, Complex64::new(u, theta));
                        let w = if j == 0 || j == nu - 1 { 0.5 } else { 1.0 };
                        acc += w * v.norm_sqr();
                    }
                    let integral = acc * du;
                    if !integral.is_finite() {
                        return CheckStatus::Fail(format!("reservoir {i}: strip integral diverges at θ={theta:.3}"));
                    }
                    sup = sup.max(integral);
                }
                detail.push(format!("reservoir {i}: sup_θ ∫|e^(-βz/2) f(z)|² = {sup:.3e} for |θ| < {half:.3}"));
            }
        }
    }
    CheckStatus::Pass(detail.join("; "))
}

fn check_golden_rule(model: &ModelSpec) -> CheckStatus {
    let e = model.splitting();
    let tau = model.period();
    let n = 512;
    let mut avg = 0.0;
    for k in 0..n {
        let t = tau * k as f64 / n as f64;
        avg += model
            .reservoirs
            .iter()
            .map(|r| r.form_factor.tilde_f(e, t).norm_sqr())
            .sum::<f64>();
    }
    avg /= n as f64;
    if avg > 0.0 {
        CheckStatus::Pass(format!("period average of Σ|f̃(2ω₀,t)|² = {avg:.6e}"))
    } else {
        CheckStatus::Fail("coupling at the level splitting vanishes over the whole period".into())
    }
}

fn check_parseval(model: &ModelSpec) -> CheckStatus {
    let w = model.omega();
    for (i, r) in model.reservoirs.iter().enumerate() {
        let env = &r.form_factor.envelope;
        // trapezoid on more than 2·window+1 points is exact for trigonometric polynomials
        let n = 4 * env.window() as usize + 8;
        let direct = (0..n)
            .map(|k| env.eval(env.period() * k as f64 / n as f64).norm_sqr())
            .sum::<f64>()
            / n as f64;
        let sum = env.mean_square();
        if (direct - sum).abs() > 1e-12 * sum.max(1.0) {
            return CheckStatus::Fail(format!("reservoir {i}: Σ|ĥ_m|² = {sum} but period mean of |h|² = {direct}"));
        }
        let span = r.form_factor.radial.support_cutoff();
        for j in 0..=200 {
            let u = -span + 2.0 * span * j as f64 / 200.0;
            let s: f64 = (-env.window()..=env.window())
                .map(|m| r.form_factor.fourier_weight(r.beta, r.mu, m, u + m as f64 * w))
                .sum();
            if !s.is_finite() {
                return CheckStatus::Fail(format!("reservoir {i}: shifted Fourier sum not finite at u={u}"));
            }
        }
    }
    CheckStatus::Pass("Parseval identity and shifted Fourier sums finite".into())
}
