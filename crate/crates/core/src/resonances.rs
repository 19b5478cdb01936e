//! Second-order Floquet resonances of the coupled system, for the
//! C-Liouvillean and for the standard Floquet Liouvillean.
//!
//! The sums over Fourier modes are exact because every envelope has a finite
//! window. Corrections of order `g⁴` are not computed.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ReservoirSpec};
use crate::quadrature::{pv_integral, PvIntegrand};

pub const DEFAULT_PV_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    CLiouvillean,
    Standard,
}

impl Convention {
    pub fn as_str(self) -> &'static str {
        match self {
            Convention::CLiouvillean => "c_liouvillean",
            Convention::Standard => "standard",
        }
    }
}

/// How the degenerate population block of the standard Liouvillean is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopulationBlock {
    /// Each channel contributes the Hermitian rank-one matrix
    /// `W/cosh(l)·[[eˡ, −1], [−1, e⁻ˡ]]` (`l = βx̄/2`), which has the kernel and
    /// trace of the written per-channel block `W·[[1, −e⁻ˡ], [−eˡ, 1]]`.
    #[default]
    Hermitian,
    /// The per-channel block `W·[[1, −e⁻ˡ], [−eˡ, 1]]` summed verbatim.
    /// With two channels at different `l` one eigenvalue leaves the lower
    /// half-plane.
    Verbatim,
}

/// One resonance channel: reservoir, Fourier index relative to the Floquet
/// sector, and the energy `x = 2ω₀ + nω` it probes.
#[derive(Debug, Clone, Copy)]
struct Channel<'a> {
    reservoir: &'a ReservoirSpec,
    n: i32,
    x: f64,
}

fn channels(model: &ModelSpec) -> Vec<Channel<'_>> {
    let w = model.omega();
    let mut out = Vec::new();
    for r in &model.reservoirs {
        let win = r.form_factor.envelope.window();
        for n in -win..=win {
            out.push(Channel { reservoir: r, n, x: model.splitting() + n as f64 * w });
        }
    }
    out
}

fn channel_weight(c: &Channel<'_>, u: f64) -> f64 {
    let r = c.reservoir;
    r.form_factor.fourier_weight(r.beta, r.mu, c.n, u)
}

/// Lamb shift `Λ_k = Σ_m Σ_i PV ∫ ‖f̂_{i,m−k}(u)‖² / (2ω₀ + (m−k)ω − u) du`.
///
/// The Fourier index is taken relative to the sector `k`, which makes `Λ_k`
/// independent of `k`.
pub fn lamb_shift(model: &ModelSpec, k: i32) -> Result<f64> {
    lamb_shift_with_tolerance(model, k, DEFAULT_PV_TOLERANCE)
}

pub fn lamb_shift_with_tolerance(model: &ModelSpec, _k: i32, tolerance: f64) -> Result<f64> {
    let chans: Vec<_> = channels(model)
        .into_iter()
        .filter(|c| c.reservoir.form_factor.envelope.coefficient(c.n).norm_sqr() > 0.0
            || c.reservoir.form_factor.envelope.coefficient(-c.n).norm_sqr() > 0.0)
        .collect();
    let per = tolerance / chans.len().max(1) as f64;
    let mut total = 0.0;
    for c in &chans {
        let cut = c.reservoir.form_factor.radial.support_cutoff();
        let spec = PvIntegrand {
            weight: |u: f64| channel_weight(c, u),
            pole: c.x,
            lower: -cut,
            upper: cut,
            tolerance: per,
        };
        if c.x == -cut || c.x == cut {
            continue; // weight vanishes to 1e-32 there; the kernel is integrable
        }
        total += pv_integral(&spec)?.value;
    }
    Ok(total)
}

/// Golden-rule width `Γ_k = π Σ_m Σ_i ‖f̂_{i,m−k}(2ω₀ + (m−k)ω)‖²`.
pub fn fgr_width(model: &ModelSpec, _k: i32) -> f64 {
    std::f64::consts::PI * channels(model).iter().map(|c| channel_weight(c, c.x)).sum::<f64>()
}

/// `[E₀, E₁, E₂, E₃]` of the C-Liouvillean in sector `k`.
pub fn c_liouvillean_resonances(model: &ModelSpec, g: f64, k: i32) -> Result<[Complex64; 4]> {
    let lambda = lamb_shift(model, k)?;
    let gamma = fgr_width(model, k);
    Ok(c_liouvillean_from(model, g, k, lambda, gamma))
}

fn c_liouvillean_from(model: &ModelSpec, g: f64, k: i32, lambda: f64, gamma: f64) -> [Complex64; 4] {
    let kw = k as f64 * model.omega();
    let e = model.splitting();
    let g2 = g * g;
    [
        Complex64::new(kw, 0.0),
        Complex64::new(kw, -2.0 * g2 * gamma),
        Complex64::new(kw - e - g2 * lambda, -g2 * gamma),
        Complex64::new(kw + e + g2 * lambda, -g2 * gamma),
    ]
}

fn check_standard(model: &ModelSpec) -> Result<()> {
    let rs = &model.reservoirs;
    if rs.len() > 2 {
        return Err(Error::Unsupported(format!(
            "standard Floquet resonances are implemented for at most two reservoirs, got {}",
            rs.len()
        )));
    }
    if rs.len() == 2 && rs[0].mu != rs[1].mu {
        return Err(Error::Unsupported(
            "standard Floquet resonances require equal chemical potentials".into(),
        ));
    }
    Ok(())
}

/// Second-order population block `A` of the standard Floquet Liouvillean;
/// `Ẽ_{0,1} = kω + g²·eig(A)`.
pub fn standard_population_block(model: &ModelSpec, _k: i32, form: PopulationBlock) -> Result<[[Complex64; 2]; 2]> {
    check_standard(model)?;
    let mut m = [[0.0f64; 2]; 2];
    for c in channels(model) {
        let w = channel_weight(&c, c.x);
        if w == 0.0 {
            continue;
        }
        let l = c.reservoir.beta * (c.x - c.reservoir.mu) / 2.0;
        match form {
            PopulationBlock::Hermitian => {
                let (p, q, s) = hermitian_entries(l);
                m[0][0] += w * p;
                m[1][1] += w * q;
                m[0][1] -= w * s;
                m[1][0] -= w * s;
            }
            PopulationBlock::Verbatim => {
                m[0][0] += w;
                m[1][1] += w;
                m[0][1] -= w * (-l).exp();
                m[1][0] -= w * l.exp();
            }
        }
    }
    let f = Complex64::new(0.0, -std::f64::consts::PI);
    Ok([[f * m[0][0], f * m[0][1]], [f * m[1][0], f * m[1][1]]])
}

/// `(eˡ/cosh l, e⁻ˡ/cosh l, 1/cosh l)` without overflow.
fn hermitian_entries(l: f64) -> (f64, f64, f64) {
    let a = l.abs();
    let e2 = (-2.0 * a).exp();
    let big = 2.0 / (1.0 + e2);
    let small = 2.0 * e2 / (1.0 + e2);
    let mid = 2.0 * (-a).exp() / (1.0 + e2);
    if l >= 0.0 {
        (big, small, mid)
    } else {
        (small, big, mid)
    }
}

/// `e^{|d|−|a|−|b|}(1−e^{−|d|})²/((1+e^{−2|a|})(1+e^{−2|b|}))` with `d = a − b`,
/// which equals `4 sinh²(d/2)/(4 cosh a cosh b)`.
fn cross_term(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let num = (d - a.abs() - b.abs()).exp() * (-(-d).exp_m1()).powi(2);
    num / ((1.0 + (-2.0 * a.abs()).exp()) * (1.0 + (-2.0 * b.abs()).exp()))
}

/// Eigenvalues `(a₀, a₁)` of the population block, `a₀` the one of smaller
/// modulus. The small eigenvalue is obtained as `det/a₁`, with the
/// determinant of the Hermitian form assembled by Cauchy–Binet, so that a
/// single channel yields an exact zero.
pub fn standard_population_eigenvalues(model: &ModelSpec, k: i32, form: PopulationBlock) -> Result<(Complex64, Complex64)> {
    let a = standard_population_block(model, k, form)?;
    let tr = a[0][0] + a[1][1];
    let det = match form {
        PopulationBlock::Verbatim => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        PopulationBlock::Hermitian => {
            let terms: Vec<(f64, f64)> = channels(model)
                .iter()
                .map(|c| (channel_weight(c, c.x), c.reservoir.beta * (c.x - c.reservoir.mu) / 2.0))
                .filter(|(w, _)| *w > 0.0)
                .collect();
            let mut d = 0.0;
            for (i, (wi, li)) in terms.iter().enumerate() {
                for (wj, lj) in &terms[i + 1..] {
                    d += wi * wj * 4.0 * cross_term(*li, *lj);
                }
            }
            // (−iπ)² det of the real form
            Complex64::new(-std::f64::consts::PI.powi(2) * d, 0.0)
        }
    };
    let disc = (tr * tr - 4.0 * det).sqrt();
    let (p, q) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    let large = if p.norm() >= q.norm() { p } else { q };
    if large.norm() == 0.0 {
        return Ok((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));
    }
    Ok((det / large, large))
}

/// `[Ẽ₀, Ẽ₁, Ẽ₂, Ẽ₃]` of the standard Floquet Liouvillean in sector `k`,
/// population block in the default Hermitian form.
pub fn standard_floquet_resonances(model: &ModelSpec, g: f64, k: i32) -> Result<[Complex64; 4]> {
    standard_floquet_resonances_with(model, g, k, PopulationBlock::default())
}

pub fn standard_floquet_resonances_with(model: &ModelSpec, g: f64, k: i32, form: PopulationBlock) -> Result<[Complex64; 4]> {
    check_standard(model)?;
    let lambda = lamb_shift(model, k)?;
    let gamma = fgr_width(model, k);
    let (a0, a1) = standard_population_eigenvalues(model, k, form)?;
    let base = c_liouvillean_from(model, g, k, lambda, gamma);
    let kw = Complex64::new(k as f64 * model.omega(), 0.0);
    let g2 = g * g;
    Ok([kw + g2 * a0, kw + g2 * a1, base[2], base[3]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub k: i32,
    pub j: usize,
    pub energy: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceTable {
    pub convention: Convention,
    pub k_min: i32,
    pub k_max: i32,
    pub g: f64,
    pub omega: f64,
    pub lamb_shift: f64,
    pub width: f64,
    pub entries: Vec<ResonanceEntry>,
}

impl ResonanceTable {
    pub fn get(&self, k: i32, j: usize) -> Option<Complex64> {
        self.entries.iter().find(|e| e.k == k && e.j == j).map(|e| e.energy)
    }

    /// CSV with columns `convention,k,j,re_e,im_e,lamb_shift,width,g`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["convention", "k", "j", "re_e", "im_e", "lamb_shift", "width", "g"])?;
        for e in &self.entries {
            w.write_record([
                self.convention.as_str().to_string(),
                e.k.to_string(),
                e.j.to_string(),
                format!("{:.17e}", e.energy.re),
                format!("{:.17e}", e.energy.im),
                format!("{:.17e}", self.lamb_shift),
                format!("{:.17e}", self.width),
                format!("{:.17e}", self.g),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn resonance_table(model: &ModelSpec, g: f64, convention: Convention, k_min: i32, k_max: i32) -> Result<ResonanceTable> {
    if k_min > k_max {
        return Err(Error::Domain(format!("empty k-range [{k_min}, {k_max}]")));
    }
    let lambda = lamb_shift(model, 0)?;
    let gamma = fgr_width(model, 0);
    let mut entries = Vec::with_capacity(4 * (k_max - k_min + 1) as usize);
    for k in k_min..=k_max {
        let es = match convention {
            Convention::CLiouvillean => c_liouvillean_from(model, g, k, lambda, gamma),
            Convention::Standard => standard_floquet_resonances(model, g, k)?,
        };
        for (j, energy) in es.into_iter().enumerate() {
            entries.push(ResonanceEntry { k, j, energy });
        }
    }
    Ok(ResonanceTable {
        convention,
        k_min,
        k_max,
        g,
        omega: model.omega(),
        lamb_shift: lambda,
        width: gamma,
        entries,
    })
}

fn sector_zero(table: &ResonanceTable) -> Result<[Complex64; 4]> {
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = table
            .get(0, j)
            .or_else(|| {
                // any sector works: shift back to k = 0
                table.entries.iter().find(|e| e.j == j).map(|e| e.energy - e.k as f64 * table.omega)
            })
            .ok_or_else(|| Error::Incomplete("resonance table has no entries".into()))?;
    }
    Ok(out)
}

/// `γ = min_{j=1,2,3} −Im E_j⁽⁰⁾`; the predicted per-cycle contraction is `e^{−γτ}`.
pub fn spectral_gap(table: &ResonanceTable) -> Result<f64> {
    let e = sector_zero(table)?;
    Ok(e[1..].iter().map(|z| -z.im).fold(f64::INFINITY, f64::min).max(0.0))
}

/// Width `−Im E₁⁽⁰⁾` of the population resonance alone, the rate that
/// governs diagonal (gauge-invariant) observables.
pub fn population_gap(table: &ResonanceTable) -> Result<f64> {
    let e = sector_zero(table)?;
    Ok((-e[1].im).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FormFactor, MeasureDensity, PeriodicEnvelope, RadialProfile};
    use approx::assert_relative_eq;

    fn reservoir(beta: f64, env: PeriodicEnvelope) -> ReservoirSpec {
        let radial = RadialProfile::power_gaussian(2, 2.0, 1.0, MeasureDensity::Flat).unwrap();
        ReservoirSpec::new(beta, 0.0, FormFactor::new(env, radial)).unwrap()
    }

    #[test]
    fn static_single_reservoir_width_is_one_term() {
        let env = PeriodicEnvelope::constant(1.0, 1.0).unwrap();
        let r = reservoir(1.3, env);
        let model = ModelSpec::new(0.8, 0.1, vec![r.clone()]).unwrap();
        let x = 1.6;
        let phi = r.form_factor.radial.phi(x);
        let expect = std::f64::consts::PI * (1.0 - r.occupation(x)) * phi * phi;
        assert_relative_eq!(fgr_width(&model, 0), expect, max_relative = 1e-14);
    }

    #[test]
    fn hermitian_entries_match_direct_formula() {
        for l in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let (p, q, s) = hermitian_entries(l);
            let c = f64::cosh(l);
            assert_relative_eq!(p, l.exp() / c, max_relative = 1e-14);
            assert_relative_eq!(q, (-l).exp() / c, max_relative = 1e-14);
            assert_relative_eq!(s, 1.0 / c, max_relative = 1e-14);
        }
        let (a, b) = (0.3f64, -1.1f64);
        let direct = (0.5 * (a - b)).sinh().powi(2) / (f64::cosh(a) * f64::cosh(b));
        assert_relative_eq!(cross_term(a, b), direct, max_relative = 1e-13);
    }

    #[test]
    fn verbatim_block_leaves_lower_half_plane_for_two_temperatures() {
        let env = PeriodicEnvelope::cosine(1.0, 1.0, 0.5).unwrap();
        let model = ModelSpec::new(1.0, 0.1, vec![reservoir(0.5, env.clone()), reservoir(2.0, env)]).unwrap();
        let (a0, _) = standard_population_eigenvalues(&model, 0, PopulationBlock::Verbatim).unwrap();
        assert!(a0.im > 0.0, "{a0}");
        let (h0, h1) = standard_population_eigenvalues(&model, 0, PopulationBlock::Hermitian).unwrap();
        assert!(h0.im < 0.0 && h1.im < 0.0, "{h0} {h1}");
    }
}
