//! Gaussian (one-body) path.
//!
//! The state is kept as orbitals `ψ_r = U e_r` together with the initial
//! occupations `D_r`, so that `⟨a†_p a_q⟩ = Σ_r D_r conj(ψ_r(p)) ψ_r(q)`.
//! Orbitals are stored as rows of a row-major `N×N` buffer.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex64;

use super::snapshot::Snapshot;
use super::{taylor_expm, Engine, Integrator, Observables, Stage, MAX_HALVINGS, UNITARITY_TOLERANCE};
use crate::discretization::{CovarianceState, DiscretizedModel};
use crate::error::{Error, Result};
use crate::par;

const ROWS_PER_TASK: usize = 8;
const NO_RESERVOIR: usize = usize::MAX;

/// Static data of the star Hamiltonian.
#[derive(Debug, Clone)]
pub(crate) struct Star {
    pub n: usize,
    pub energies: Vec<f64>,
    pub profile: Vec<f64>,
    pub owner: Vec<usize>,
}

impl Star {
    pub fn new(dm: &DiscretizedModel) -> Self {
        let n = dm.dim();
        let mut owner = vec![NO_RESERVOIR; n];
        for i in 0..dm.n_reservoirs() {
            for p in dm.reservoir_range(i) {
                owner[p] = i;
            }
        }
        Self { n, energies: dm.energies(), profile: dm.coupling_profile(), owner }
    }

    fn couplings(&self, env: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|p| if p == 0 { Complex64::new(0.0, 0.0) } else { env[self.owner[p]] * self.profile[p] })
            .collect()
    }
}

/// One exponential `exp(−i dt (s·diag + star couplings))`, shifted to a
/// centred spectrum.
struct StarExp {
    diag: Vec<f64>,
    lam: Vec<Complex64>,
    shift: f64,
    bound: f64,
    dt: f64,
}

impl StarExp {
    fn new(star: &Star, dm: &DiscretizedModel, stage: &Stage, dt: f64) -> Self {
        let env: Vec<Complex64> =
            dm.model.reservoirs.iter().map(|r| stage.envelope(&r.form_factor.envelope)).collect();
        let lam = star.couplings(&env);
        let raw: Vec<f64> = star.energies.iter().map(|e| stage.diag_scale * e).collect();
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let shift = 0.5 * (lo + hi);
        let diag: Vec<f64> = raw.iter().map(|x| x - shift).collect();
        let lnorm = lam.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        Self { diag, lam, shift, bound: 0.5 * (hi - lo) + lnorm, dt }
    }

    fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let x0 = x[0];
        let mut y0 = self.diag[0] * x0;
        for j in 1..x.len() {
            y0 += self.lam[j].conj() * x[j];
            y[j] = self.diag[j] * x[j] + self.lam[j] * x0;
        }
        y[0] = y0;
    }

    fn apply(&self, v: &mut [Complex64], term: &mut [Complex64], next: &mut [Complex64]) {
        taylor_expm(|a, b| self.matvec(a, b), v, term, next, self.dt, self.bound, self.shift);
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Advances every row of `rows` by one step. Returns the largest local
/// unitarity defect after any retries.
pub(crate) fn step_rows(star: &Star, dm: &DiscretizedModel, rows: &mut [Complex64], t: f64, dt: f64, integ: Integrator) -> f64 {
    let n = star.n;
    let ops: Vec<StarExp> = integ.stages(t, dt).iter().map(|s| StarExp::new(star, dm, s, dt)).collect();
    let defects = par::map_chunks_mut(rows, n * ROWS_PER_TASK, |_, chunk| {
        let mut term = vec![Complex64::new(0.0, 0.0); n];
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        let mut worst = 0.0f64;
        for row in chunk.chunks_mut(n) {
            let before = norm2(row);
            let keep = row.to_vec();
            for op in &ops {
                op.apply(row, &mut term, &mut next);
            }
            let mut defect = (norm2(row) - before).abs();
            if defect > UNITARITY_TOLERANCE {
                row.copy_from_slice(&keep);
                defect = retry(star, dm, row, t, dt, integ, 1, &mut term, &mut next);
            }
            worst = worst.max(defect);
        }
        worst
    });
    defects.into_iter().fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn retry(
    star: &Star,
    dm: &DiscretizedModel,
    row: &mut [Complex64],
    t: f64,
    dt: f64,
    integ: Integrator,
    depth: u32,
    term: &mut [Complex64],
    next: &mut [Complex64],
) -> f64 {
    let h = 0.5 * dt;
    let keep = row.to_vec();
    let before = norm2(row);
    for k in 0..2 {
        for s in integ.stages(t + k as f64 * h, h) {
            StarExp::new(star, dm, &s, h).apply(row, term, next);
        }
    }
    let defect = (norm2(row) - before).abs();
    if defect > UNITARITY_TOLERANCE && depth < MAX_HALVINGS {
        row.copy_from_slice(&keep);
        let mut worst = 0.0f64;
        for k in 0..2 {
            worst = worst.max(retry(star, dm, row, t + k as f64 * h, h, integ, depth + 1, term, next));
        }
        return worst;
    }
    defect
}

fn identity_rows(n: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for p in 0..n {
        v[p * n + p] = Complex64::new(1.0, 0.0);
    }
    v
}

/// `rows ← rows · map` for row-major square `map`.
pub(crate) fn right_multiply(rows: &mut [Complex64], n: usize, map: &[Complex64]) {
    let m = ArrayView2::from_shape((n, n), map).expect("square map");
    par::map_chunks_mut(rows, n * 32, |_, chunk| {
        let r = chunk.len() / n;
        let a = ArrayView2::from_shape((r, n), &*chunk).expect("row block").to_owned();
        let mut out = ArrayViewMut2::from_shape((r, n), chunk).expect("row block");
        ndarray::linalg::general_mat_mul(Complex64::new(1.0, 0.0), &a, &m, Complex64::new(0.0, 0.0), &mut out);
    });
}

pub struct CovarianceEngine<'a> {
    dm: &'a DiscretizedModel,
    star: Star,
    occ: Vec<f64>,
    rows: Vec<Complex64>,
    map: Option<Vec<Complex64>>,
    max_defect: f64,
}

impl<'a> CovarianceEngine<'a> {
    pub fn new(dm: &'a DiscretizedModel, impurity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&impurity) {
            return Err(Error::Domain(format!("impurity population {impurity} outside [0,1]")));
        }
        let star = Star::new(dm);
        let n = star.n;
        Ok(Self { dm, occ: dm.initial_occupations(impurity), rows: identity_rows(n), star, map: None, max_defect: 0.0 })
    }

    pub fn from_snapshot(dm: &'a DiscretizedModel, snap: &Snapshot) -> Result<Self> {
        if snap.model_hash != dm.content_hash() {
            return Err(Error::Snapshot("snapshot belongs to a different discretized model".into()));
        }
        let n = dm.dim();
        if snap.dim != n || snap.rows.len() != n * n || snap.occupations.len() != n {
            return Err(Error::Snapshot(format!("snapshot dimension {} does not match model dimension {n}", snap.dim)));
        }
        Ok(Self {
            dm,
            star: Star::new(dm),
            occ: snap.occupations.clone(),
            rows: snap.rows.clone(),
            map: None,
            max_defect: 0.0,
        })
    }

    pub fn snapshot(&self, time: f64, cycle: usize) -> Snapshot {
        Snapshot {
            model_hash: self.dm.content_hash(),
            dim: self.star.n,
            time,
            cycle,
            occupations: self.occ.clone(),
            rows: self.rows.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.star.n
    }

    /// Materializes `Γ_{pq} = ⟨a†_p a_q⟩ = (Ψ^H D Ψ)_{pq}`.
    pub fn covariance(&self, time: f64) -> CovarianceState {
        let n = self.star.n;
        let psi = ArrayView2::from_shape((n, n), &self.rows).expect("square");
        let mut weighted = psi.to_owned();
        for (r, mut row) in weighted.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|z| z * self.occ[r]);
        }
        let psi_h = psi.t().mapv(|z| z.conj());
        CovarianceState { gamma: psi_h.dot(&weighted), time }
    }

    fn period_map(&mut self, integ: Integrator, steps: usize) -> Result<Vec<Complex64>> {
        let n = self.star.n;
        let dt = self.dm.period() / steps as f64;
        let mut m = identity_rows(n);
        for s in 0..steps {
            let d = step_rows(&self.star, self.dm, &mut m, s as f64 * dt, dt, integ);
            self.max_defect = self.max_defect.max(d);
        }
        Ok(m)
    }

    /// Rows as an `N×N` array (row `r` is orbital `ψ_r`).
    pub fn orbitals(&self) -> Array2<Complex64> {
        let n = self.star.n;
        Array2::from_shape_vec((n, n), self.rows.clone()).expect("square")
    }
}

impl Engine for CovarianceEngine<'_> {
    type Saved = Vec<Complex64>;

    fn step(&mut self, t: f64, dt: f64, integ: Integrator) -> Result<()> {
        let d = step_rows(&self.star, self.dm, &mut self.rows, t, dt, integ);
        self.max_defect = self.max_defect.max(d);
        if d > UNITARITY_TOLERANCE {
            return Err(Error::Propagation(format!("step at t={t} kept unitarity defect {d:.3e} after retries")));
        }
        Ok(())
    }

    fn build_period_map(&mut self, integ: Integrator, steps: usize) -> Result<()> {
        self.map = Some(self.period_map(integ, steps)?);
        Ok(())
    }

    fn step_doubling_error(&mut self, integ: Integrator, steps: usize) -> Result<f64> {
        let fine = self.period_map(integ, steps)?;
        let coarse = self.period_map(integ, steps / 2)?;
        let diff = fine.iter().zip(&coarse).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let err = diff / (2f64.powi(integ.order() as i32) - 1.0);
        self.map = Some(fine);
        Ok(err)
    }

    fn apply_period_map(&mut self) {
        let map = self.map.as_ref().expect("period map built before use");
        right_multiply(&mut self.rows, self.star.n, map);
    }

    fn save(&self) -> Self::Saved {
        self.rows.clone()
    }

    fn restore(&mut self, saved: Self::Saved) {
        self.rows = saved;
    }

    fn observe(&self, t: f64) -> Observables {
        observe_orbitals(&self.star, self.dm, &self.rows, &self.occ, t)
    }

    fn max_unitarity_defect(&self) -> f64 {
        self.max_defect
    }

    fn trace_drift(&self) -> f64 {
        let n = self.star.n;
        self.rows
            .chunks(n)
            .zip(&self.occ)
            .map(|(row, d)| d * (norm2(row) - 1.0))
            .sum::<f64>()
            .abs()
    }

    fn initial_population(&self) -> f64 {
        self.occ[0]
    }
}

/// Energies and numbers as changes from `t = 0`, arranged so that no large
/// terms cancel: for an orbital starting in reservoir `a` at energy `u_r`,
/// `Σ_j u_j|ψ(j)|² − u_r` is rewritten with `Σ_j |ψ(j)|² = 1` as
/// `Σ_{j∈a}(u_j − u_r)|ψ(j)|² − u_r·(weight outside a)`.
pub(crate) fn observe_orbitals(star: &Star, dm: &DiscretizedModel, rows: &[Complex64], occ: &[f64], t: f64) -> Observables {
    let n = star.n;
    let nr = dm.n_reservoirs();
    let mut de = vec![0.0; nr];
    let mut dn = vec![0.0; nr];
    let mut impurity = 0.0;
    let mut c0 = vec![Complex64::new(0.0, 0.0); n];
    let mut s = vec![0.0; nr];
    let mut u = vec![0.0; nr];
    for (r, row) in rows.chunks(n).enumerate() {
        let d = occ[r];
        if d == 0.0 {
            continue;
        }
        let home = star.owner[r];
        let ur = star.energies[r];
        s.iter_mut().for_each(|x| *x = 0.0);
        u.iter_mut().for_each(|x| *x = 0.0);
        let mut shifted = 0.0;
        let head = row[0];
        let c2 = head.norm_sqr();
        impurity += d * c2;
        let dh = d * head;
        for j in 1..n {
            let z = row[j];
            let w = z.norm_sqr();
            let i = star.owner[j];
            if i == home {
                shifted += (star.energies[j] - ur) * w;
            } else {
                s[i] += w;
                u[i] += star.energies[j] * w;
            }
            c0[j] += dh * z.conj();
        }
        for i in 0..nr {
            if i == home {
                let outside = c2 + (0..nr).filter(|&k| k != home).map(|k| s[k]).sum::<f64>();
                de[i] += d * (shifted - ur * outside);
                dn[i] -= d * outside;
            } else {
                de[i] += d * u[i];
                dn[i] += d * s[i];
            }
        }
    }
    let lam = star.couplings(&dm.envelopes_at(t));
    let mut er = vec![0.0; nr];
    let mut nrate = vec![0.0; nr];
    for j in 1..n {
        let x = 2.0 * (lam[j] * c0[j]).im;
        er[star.owner[j]] += star.energies[j] * x;
        nrate[star.owner[j]] += x;
    }
    Observables { delta_energy: de, delta_number: dn, impurity, energy_rate: er, number_rate: nrate }
}

/// `Γ(t1)` from `Γ(t0)` with the stepped one-body propagator,
/// `Γ(t1) = conj(U) Γ(t0) Uᵀ`. The step is shrunk so that it divides
/// `t1 − t0`.
pub fn propagate_covariance(
    dm: &DiscretizedModel,
    state: &CovarianceState,
    t1: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<CovarianceState> {
    let t0 = state.time;
    if !(dt > 0.0) || !(t1 > t0) {
        return Err(Error::Domain(format!("need dt > 0 and t1 > t0, got dt={dt}, [{t0}, {t1}]")));
    }
    let star = Star::new(dm);
    let n = star.n;
    if state.gamma.dim() != (n, n) {
        return Err(Error::Domain(format!("covariance has shape {:?}, model needs {n}×{n}", state.gamma.dim())));
    }
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let mut s = identity_rows(n);
    for k in 0..steps {
        let d = step_rows(&star, dm, &mut s, t0 + k as f64 * h, h, integrator);
        if d > UNITARITY_TOLERANCE {
            return Err(Error::Propagation(format!("unitarity defect {d:.3e} after retries")));
        }
    }
    // rows of s are columns of U, i.e. s = Uᵀ and conj(U) = sᴴ
    let s = Array2::from_shape_vec((n, n), s).expect("square");
    let sh = s.t().mapv(|z| z.conj());
    Ok(CovarianceState { gamma: sh.dot(&state.gamma).dot(&s), time: t1 })
}
