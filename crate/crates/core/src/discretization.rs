//! Finite-mode stand-in for the reservoirs.
//!
//! The two-level system becomes one fermionic mode `c = σ₋` with on-site
//! energy `ε = 2ω₀`; reservoir modes couple to it only, so the one-body
//! Hamiltonian is an arrowhead ("star") matrix with index 0 the impurity.

use std::f64::consts::PI;
use std::ops::Range;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::model::{ModelSpec, ReservoirSpec};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridScheme {
    /// Midpoints of `M` equal cells.
    #[default]
    Uniform,
    /// Gauss–Legendre nodes on `[0, u_max]`.
    GaussLegendre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGrid {
    pub scheme: GridScheme,
    pub u_max: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ModeGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn build_mode_grid(res: &ReservoirSpec, scheme: GridScheme, m: usize, u_max: f64) -> Result<ModeGrid> {
    if m == 0 {
        return Err(config_err("discretization.modes", "need at least one mode per reservoir"));
    }
    if !(u_max.is_finite() && u_max > 0.0) {
        return Err(config_err("discretization.u_max", format!("must be positive, got {u_max}")));
    }
    if u_max <= res.mu {
        return Err(config_err(
            "discretization.u_max",
            format!("cutoff {u_max} does not exceed the chemical potential {}", res.mu),
        ));
    }
    let (nodes, weights) = match scheme {
        GridScheme::Uniform => {
            let du = u_max / m as f64;
            ((0..m).map(|j| (j as f64 + 0.5) * du).collect(), vec![du; m])
        }
        GridScheme::GaussLegendre => gauss_legendre(m, 0.0, u_max),
    };
    Ok(ModeGrid { scheme, u_max, nodes, weights })
}

/// `2π/Δu_min`, the time after which a discrete reservoir starts to revive.
/// A single-node grid has no recurrence and yields `+∞`.
pub fn recurrence_estimate(grid: &ModeGrid) -> f64 {
    let dmin = grid
        .nodes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if dmin.is_finite() {
        2.0 * PI / dmin
    } else {
        f64::INFINITY
    }
}

/// Discretization choices shared by all reservoirs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    #[serde(default)]
    pub scheme: GridScheme,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Defaults to `max(4ω₀, max_i(μ_i + 10/β_i))`.
    #[serde(default)]
    pub u_max: Option<f64>,
}

fn default_modes() -> usize {
    400
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        Self { scheme: GridScheme::Uniform, modes: default_modes(), u_max: None }
    }
}

impl DiscretizationSpec {
    pub fn resolved_u_max(&self, model: &ModelSpec) -> f64 {
        self.u_max.unwrap_or_else(|| {
            model
                .reservoirs
                .iter()
                .map(|r| r.mu + 10.0 / r.beta)
                .fold(4.0 * model.omega0, f64::max)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedModel {
    pub model: ModelSpec,
    pub grids: Vec<ModeGrid>,
    /// `√m(u_j)·φ(u_j)·√w_j` per reservoir mode, without `g` and envelope.
    amplitudes: Vec<Vec<f64>>,
}

impl DiscretizedModel {
    pub fn new(model: &ModelSpec, spec: &DiscretizationSpec) -> Result<Self> {
        let u_max = spec.resolved_u_max(model);
        if u_max <= model.splitting() {
            return Err(config_err(
                "discretization.u_max",
                format!("cutoff {u_max} does not cover the resonance 2ω₀ = {}", model.splitting()),
            ));
        }
        let grids = model
            .reservoirs
            .iter()
            .map(|r| build_mode_grid(r, spec.scheme, spec.modes, u_max))
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(model, grids)
    }

    pub fn from_grids(model: &ModelSpec, grids: Vec<ModeGrid>) -> Result<Self> {
        if grids.len() != model.reservoirs.len() {
            return Err(Error::Domain(format!(
                "{} grids for {} reservoirs",
                grids.len(),
                model.reservoirs.len()
            )));
        }
        let amplitudes = model
            .reservoirs
            .iter()
            .zip(&grids)
            .map(|(r, g)| {
                let radial = &r.form_factor.radial;
                g.nodes
                    .iter()
                    .zip(&g.weights)
                    .map(|(&u, &w)| radial.measure.eval(u).sqrt() * radial.phi(u) * w.sqrt())
                    .collect()
            })
            .collect();
        Ok(Self { model: model.clone(), grids, amplitudes })
    }

    /// One-body dimension `N = 1 + Σ_i M_i`.
    pub fn dim(&self) -> usize {
        1 + self.grids.iter().map(ModeGrid::len).sum::<usize>()
    }

    pub fn n_reservoirs(&self) -> usize {
        self.grids.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.model.splitting()
    }

    pub fn period(&self) -> f64 {
        self.model.period()
    }

    /// One-body indices of reservoir `i`.
    pub fn reservoir_range(&self, i: usize) -> Range<usize> {
        let start = 1 + self.grids[..i].iter().map(ModeGrid::len).sum::<usize>();
        start..start + self.grids[i].len()
    }

    /// Reservoir owning one-body index `p ≥ 1`.
    pub fn reservoir_of(&self, p: usize) -> Option<usize> {
        (0..self.n_reservoirs()).find(|&i| self.reservoir_range(i).contains(&p))
    }

    /// Diagonal of `h`: `(ε, u_{1,1}, …, u_{n,M})`.
    pub fn energies(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.dim());
        e.push(self.epsilon());
        for g in &self.grids {
            e.extend_from_slice(&g.nodes);
        }
        e
    }

    /// Time-independent part of the couplings, `g·√m φ √w`, in one-body order
    /// (entry 0 unused and zero).
    pub fn coupling_profile(&self) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.dim());
        k.push(0.0);
        for a in &self.amplitudes {
            k.extend(a.iter().map(|x| self.model.coupling * x));
        }
        k
    }

    /// `h_i(t)` for every reservoir.
    pub fn envelopes_at(&self, t: f64) -> Vec<Complex64> {
        self.model.reservoirs.iter().map(|r| r.form_factor.envelope.eval(t)).collect()
    }

    /// `λ_{i,j}(t)` in one-body order (entry 0 zero).
    pub fn couplings(&self, t: f64) -> Vec<Complex64> {
        let prof = self.coupling_profile();
        let env = self.envelopes_at(t);
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (i, h) in env.iter().enumerate() {
            for p in self.reservoir_range(i) {
                out[p] = h * prof[p];
            }
        }
        out
    }

    /// Dense `h(t)`: diagonal `(ε, u…)`, `h[j][0] = λ_j`, `h[0][j] = conj(λ_j)`.
    pub fn single_particle_hamiltonian(&self, t: f64) -> Array2<Complex64> {
        let n = self.dim();
        let mut h = Array2::zeros((n, n));
        for (p, e) in self.energies().into_iter().enumerate() {
            h[[p, p]] = Complex64::new(e, 0.0);
        }
        for (p, l) in self.couplings(t).into_iter().enumerate().skip(1) {
            h[[p, 0]] = l;
            h[[0, p]] = l.conj();
        }
        h
    }

    /// Initial mode occupations: the impurity population followed by the
    /// Fermi occupations of every reservoir mode.
    pub fn initial_occupations(&self, impurity: f64) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.dim());
        d.push(impurity);
        for (r, g) in self.model.reservoirs.iter().zip(&self.grids) {
            d.extend(g.nodes.iter().map(|&u| r.occupation(u)));
        }
        d
    }

    /// `Γ(0) = ⟨a†_p a_q⟩` of the product of a diagonal system state and
    /// the reservoir Gibbs states.
    pub fn thermal_covariance(&self, system: SystemState) -> Result<CovarianceState> {
        let p = match system {
            SystemState::Diagonal { excited } => excited,
            SystemState::Coherent { .. } => {
                return Err(Error::Unsupported(
                    "initial system states with coherences are not Gaussian-diagonal".into(),
                ))
            }
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("population {p} outside [0,1]")));
        }
        let d = self.initial_occupations(p);
        let n = d.len();
        let mut gamma = Array2::zeros((n, n));
        for (k, x) in d.into_iter().enumerate() {
            gamma[[k, k]] = Complex64::new(x, 0.0);
        }
        Ok(CovarianceState { gamma, time: 0.0 })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// SHA-256 of the canonical JSON serialization, lowercase hex.
    pub fn content_hash(&self) -> String {
        hash_json(self)
    }

    pub fn recurrence_time(&self) -> f64 {
        self.grids.iter().map(recurrence_estimate).fold(f64::INFINITY, f64::min)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("plain data serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Initial state of the two-level system in the `(e₁, e₂)` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemState {
    Diagonal { excited: f64 },
    Coherent { excited: f64, coherence: Complex64 },
}

/// One-body correlation matrix `Γ_{pq} = ⟨a†_p a_q⟩` at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    pub gamma: Array2<Complex64>,
    pub time: f64,
}

impl CovarianceState {
    pub fn trace(&self) -> f64 {
        self.gamma.diag().iter().map(|z| z.re).sum()
    }

    /// Largest `|Γ_{pq} − conj(Γ_{qp})|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.gamma.nrows();
        let mut d = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                d = d.max((self.gamma[[p, q]] - self.gamma[[q, p]].conj()).norm());
            }
        }
        d
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.gamma.nrows();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (self.gamma[[i, j]] + self.gamma[[j, i]].conj()));
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FormFactor, MeasureDensity, PeriodicEnvelope, RadialProfile};
    use approx::assert_relative_eq;

    fn reservoir() -> ReservoirSpec {
        let env = PeriodicEnvelope::cosine(1.0, 1.0, 0.5).unwrap();
        let radial = RadialProfile::power_gaussian(2, 2.0, 1.0, MeasureDensity::Flat).unwrap();
        ReservoirSpec::new(1.0, 0.0, FormFactor::new(env, radial)).unwrap()
    }

    #[test]
    fn uniform_grid_examples() {
        let g = build_mode_grid(&reservoir(), GridScheme::Uniform, 1, 1.0).unwrap();
        assert_eq!((g.nodes.clone(), g.weights.clone()), (vec![0.5], vec![1.0]));
        let g = build_mode_grid(&reservoir(), GridScheme::Uniform, 10, 10.0).unwrap();
        for (j, (&u, &w)) in g.nodes.iter().zip(&g.weights).enumerate() {
            assert_relative_eq!(u, j as f64 + 0.5, epsilon = 1e-14);
            assert_relative_eq!(w, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn gauss_grid_integrates_linear_exactly() {
        let g = build_mode_grid(&reservoir(), GridScheme::GaussLegendre, 20, 7.0).unwrap();
        let s: f64 = g.nodes.iter().zip(&g.weights).map(|(u, w)| u * w).sum();
        assert_relative_eq!(s, 24.5, max_relative = 1e-12);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn recurrence_examples() {
        let g = build_mode_grid(&reservoir(), GridScheme::Uniform, 1000, 10.0).unwrap();
        assert_relative_eq!(recurrence_estimate(&g), 2.0 * PI / 0.01, max_relative = 1e-9);
        let g2 = build_mode_grid(&reservoir(), GridScheme::Uniform, 2000, 10.0).unwrap();
        assert_relative_eq!(recurrence_estimate(&g2), 2.0 * recurrence_estimate(&g), max_relative = 1e-9);
        let g1 = build_mode_grid(&reservoir(), GridScheme::Uniform, 1, 10.0).unwrap();
        assert!(recurrence_estimate(&g1).is_infinite());
    }

    #[test]
    fn cutoff_below_resonance_is_rejected() {
        let model = ModelSpec::new(2.0, 0.1, vec![reservoir()]).unwrap();
        let spec = DiscretizationSpec { u_max: Some(3.0), ..Default::default() };
        let err = DiscretizedModel::new(&model, &spec).unwrap_err();
        assert!(err.to_string().contains("u_max"), "{err}");
    }

    #[test]
    fn two_by_two_rabi_eigenvalues() {
        let model = ModelSpec::new(0.75, 0.3, vec![reservoir()]).unwrap();
        let grid = ModeGrid { scheme: GridScheme::Uniform, u_max: 2.0, nodes: vec![1.0], weights: vec![1.0] };
        let dm = DiscretizedModel::from_grids(&model, vec![grid]).unwrap();
        let h = dm.single_particle_hamiltonian(0.0);
        let m = nalgebra::DMatrix::from_fn(2, 2, |i, j| h[[i, j]]);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let (eps, u, lam) = (1.5, 1.0, h[[1, 0]].norm());
        let r = ((eps - u) * (eps - u) / 4.0 + lam * lam).sqrt();
        assert_relative_eq!(ev[0], (eps + u) / 2.0 - r, epsilon = 1e-14);
        assert_relative_eq!(ev[1], (eps + u) / 2.0 + r, epsilon = 1e-14);
    }

    #[test]
    fn thermal_covariance_examples() {
        let model = ModelSpec::new(1.0, 0.1, vec![reservoir()]).unwrap();
        let grid = ModeGrid { scheme: GridScheme::Uniform, u_max: 3.0, nodes: vec![0.0, 1.0, 2.5], weights: vec![1.0; 3] };
        let dm = DiscretizedModel::from_grids(&model, vec![grid]).unwrap();
        let c = dm.thermal_covariance(SystemState::Diagonal { excited: 0.5 }).unwrap();
        assert_eq!(c.gamma[[0, 0]].re, 0.5);
        assert_eq!(c.gamma[[1, 1]].re, 0.5);
        assert!(c.gamma.iter().all(|z| z.re >= 0.0 && z.re <= 1.0));
        let err = dm
            .thermal_covariance(SystemState::Coherent { excited: 0.5, coherence: Complex64::new(0.1, 0.0) })
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let model = ModelSpec::new(1.0, 0.1, vec![reservoir()]).unwrap();
        let spec = DiscretizationSpec { modes: 8, u_max: Some(6.0), ..Default::default() };
        let a = DiscretizedModel::new(&model, &spec).unwrap();
        let b = DiscretizedModel::new(&model, &spec).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = DiscretizedModel::new(&model.with_coupling(0.2), &spec).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        let back: DiscretizedModel = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
