//! Exact many-body oracle on `C² ⊗ F(C^{N−1})`.
//!
//! The Hamiltonian is assembled from the spin model itself,
//! `ω₀σ₃ ⊗ 1 + Σ_j u_j n_j + Σ_j (λ_j σ₋ ⊗ b_j† + conj(λ_j) σ₊ ⊗ b_j)`,
//! with bath fermions `b_j† = Z ⊗ … ⊗ Z ⊗ a† ⊗ 1 ⊗ … ⊗ 1` built from Kronecker
//! products, not from the impurity-fermion form used by the Gaussian path.
//! The charge `n_↑ + N_bath` is conserved, so everything is stored per sector.
//!
//! A state is a mixture `Σ_k w_k |v_k⟩⟨v_k|` whose vectors start as occupation
//! basis states; the product initial state is diagonal in that basis.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::covariance::right_multiply;
use super::{taylor_expm, Engine, Integrator, Observables, Stage, UNITARITY_TOLERANCE};
use crate::discretization::DiscretizedModel;
use crate::error::{Error, Result};
use crate::model::PeriodicEnvelope;
use crate::par;

pub const MAX_FOCK_MODES: usize = 14;

/// Real sparse operator as unsorted `(row, col, value)` triplets.
#[derive(Debug, Clone)]
struct Triplets {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    fn two(m: [[f64; 2]; 2]) -> Self {
        let mut entries = Vec::new();
        for (r, row) in m.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self { dim: 2, entries }
    }

    fn kron(&self, other: &Self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len() * other.entries.len());
        for &(r, c, v) in &self.entries {
            for &(r2, c2, v2) in &other.entries {
                entries.push((r * other.dim + r2, c * other.dim + c2, v * v2));
            }
        }
        Self { dim: self.dim * other.dim, entries }
    }

    fn chain(ops: &[Triplets]) -> Self {
        ops.iter().skip(1).fold(ops[0].clone(), |acc, op| acc.kron(op))
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            debug_assert_eq!(r, c);
            d[r] += v;
        }
        d
    }
}

const SIGMA3: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, -1.0]];
/// `σ₋ = |e₂⟩⟨e₁|` with `e₁` the upper level.
const SIGMA_MINUS: [[f64; 2]; 2] = [[0.0, 0.0], [1.0, 0.0]];
const UPPER: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 0.0]];
const CREATE: [[f64; 2]; 2] = [[0.0, 0.0], [1.0, 0.0]];
const NUMBER: [[f64; 2]; 2] = [[0.0, 0.0], [0.0, 1.0]];
const PARITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, -1.0]];
const ID2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone)]
struct Csr {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    fn from_entries(n: usize, mut e: Vec<(usize, usize, f64)>) -> Self {
        e.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n + 1];
        for &(r, _, _) in &e {
            indptr[r + 1] += 1;
        }
        for k in 0..n {
            indptr[k + 1] += indptr[k];
        }
        Self { indptr, indices: e.iter().map(|x| x.1).collect(), data: e.iter().map(|x| x.2).collect() }
    }

    /// `y += a·A x + conj(a)·Aᵀ x`
    fn hermitian_add(&self, a: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        let ac = a.conj();
        for r in 0..self.indptr.len() - 1 {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let (c, v) = (self.indices[k], self.data[k]);
                y[r] += a * v * x[c];
                y[c] += ac * v * x[r];
            }
        }
    }

    /// `⟨x|A|x⟩`
    fn expectation(&self, x: &[Complex64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for r in 0..self.indptr.len() - 1 {
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += x[r].conj() * self.data[k] * x[self.indices[k]];
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
struct Sector {
    global: Vec<usize>,
    h0: Vec<f64>,
    upper: Vec<f64>,
    res_energy: Vec<Vec<f64>>,
    res_number: Vec<Vec<f64>>,
    /// `σ₋ ⊗ b_j†` per bath mode.
    a_ops: Vec<Csr>,
    /// `Σ_{j∈i} κ_j σ₋ ⊗ b_j†` per reservoir.
    b_ops: Vec<Csr>,
    /// `ln ρ_ref` on the basis states.
    log_ref: Vec<f64>,
}

impl Sector {
    fn dim(&self) -> usize {
        self.global.len()
    }
}

/// Operators of the spin model, split into charge sectors.
#[derive(Debug, Clone)]
pub struct FockSpace {
    n_modes: usize,
    dim: usize,
    sectors: Vec<Sector>,
    /// Reservoir of each bath mode.
    owner: Vec<usize>,
    kappa: Vec<f64>,
    u: Vec<f64>,
    /// `‖f_i‖₂` per reservoir, the operator norm of `b(f_i)`.
    f_norm: Vec<f64>,
    envelopes: Vec<PeriodicEnvelope>,
    bath_occ: Vec<f64>,
}

impl FockSpace {
    pub fn new(dm: &DiscretizedModel) -> Result<Self> {
        let n_modes = dm.dim();
        if n_modes > MAX_FOCK_MODES {
            return Err(Error::Unsupported(format!(
                "Fock oracle is limited to {MAX_FOCK_MODES} modes, model has {n_modes}"
            )));
        }
        let nb = n_modes - 1;
        let energies = dm.energies();
        let profile = dm.coupling_profile();
        let owner: Vec<usize> = (1..n_modes).map(|p| dm.reservoir_of(p).expect("bath mode")).collect();
        let kappa: Vec<f64> = profile[1..].to_vec();
        let nr = dm.n_reservoirs();
        let f_norm: Vec<f64> = (0..nr)
            .map(|i| (0..nb).filter(|&j| owner[j] == i).map(|j| kappa[j] * kappa[j]).sum::<f64>().sqrt())
            .collect();

        let id_bath = |j: usize, op: [[f64; 2]; 2], string: bool| {
            let mut ops = Vec::with_capacity(nb);
            for k in 0..nb {
                let m = if k == j {
                    op
                } else if k < j && string {
                    PARITY
                } else {
                    ID2
                };
                ops.push(Triplets::two(m));
            }
            ops
        };
        let full = |spin: [[f64; 2]; 2], bath: Vec<Triplets>| {
            let mut ops = vec![Triplets::two(spin)];
            ops.extend(bath);
            Triplets::chain(&ops)
        };
        let no_op = || (0..nb).map(|_| Triplets::two(ID2)).collect::<Vec<_>>();

        let omega0 = 0.5 * dm.epsilon();
        let mut h0 = full(SIGMA3, no_op()).diagonal();
        h0.iter_mut().for_each(|x| *x *= omega0);
        let upper = full(UPPER, no_op()).diagonal();
        let numbers: Vec<Vec<f64>> = (0..nb).map(|j| full(ID2, id_bath(j, NUMBER, false)).diagonal()).collect();
        let dim = h0.len();
        for (j, nj) in numbers.iter().enumerate() {
            for (x, n) in h0.iter_mut().zip(nj) {
                *x += energies[j + 1] * n;
            }
        }
        let charge: Vec<usize> = (0..dim)
            .map(|b| (upper[b] + numbers.iter().map(|n| n[b]).sum::<f64>()).round() as usize)
            .collect();

        // sector of every global index
        let mut local = vec![(0usize, 0usize); dim];
        let mut globals: Vec<Vec<usize>> = vec![Vec::new(); n_modes + 1];
        for b in 0..dim {
            local[b] = (charge[b], globals[charge[b]].len());
            globals[charge[b]].push(b);
        }

        let bath_occ: Vec<f64> = dm.initial_occupations(0.5)[1..].to_vec();
        let mut a_entries: Vec<Vec<Vec<(usize, usize, f64)>>> = vec![vec![Vec::new(); nb]; n_modes + 1];
        for j in 0..nb {
            let a = full(SIGMA_MINUS, id_bath(j, CREATE, true));
            for (r, c, v) in a.entries {
                let (qr, lr) = local[r];
                let (qc, lc) = local[c];
                if qr != qc {
                    return Err(Error::Propagation("coupling does not conserve the charge".into()));
                }
                a_entries[qr][j].push((lr, lc, v));
            }
        }

        let kappa_ref = &kappa;
        let sectors = globals
            .into_iter()
            .enumerate()
            .map(|(q, global)| {
                let d = global.len();
                let pick = |v: &Vec<f64>| global.iter().map(|&b| v[b]).collect::<Vec<f64>>();
                let res_energy = (0..nr)
                    .map(|i| {
                        global
                            .iter()
                            .map(|&b| (0..nb).filter(|&j| owner[j] == i).map(|j| energies[j + 1] * numbers[j][b]).sum())
                            .collect()
                    })
                    .collect();
                let res_number = (0..nr)
                    .map(|i| global.iter().map(|&b| (0..nb).filter(|&j| owner[j] == i).map(|j| numbers[j][b]).sum()).collect())
                    .collect();
                let a_ops: Vec<Csr> = a_entries[q].iter().map(|e| Csr::from_entries(d, e.clone())).collect();
                let b_ops = (0..nr)
                    .map(|i| {
                        let e = (0..nb)
                            .filter(|&j| owner[j] == i)
                            .flat_map(|j| a_entries[q][j].iter().map(move |&(r, c, v)| (r, c, kappa_ref[j] * v)))
                            .collect();
                        Csr::from_entries(d, e)
                    })
                    .collect();
                let log_ref = global
                    .iter()
                    .map(|&b| {
                        -std::f64::consts::LN_2
                            + (0..nb)
                                .map(|j| if numbers[j][b] > 0.5 { bath_occ[j].ln() } else { (-bath_occ[j]).ln_1p() })
                                .sum::<f64>()
                    })
                    .collect();
                Sector { h0: pick(&h0), upper: pick(&upper), res_energy, res_number, a_ops, b_ops, log_ref, global }
            })
            .collect();

        Ok(Self {
            n_modes,
            dim,
            sectors,
            owner,
            u: energies[1..].to_vec(),
            kappa,
            f_norm,
            envelopes: dm.model.reservoirs.iter().map(|r| r.form_factor.envelope.clone()).collect(),
            bath_occ,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sector_dims(&self) -> Vec<usize> {
        self.sectors.iter().map(Sector::dim).collect()
    }

    fn stage_ops(&self, stage: &Stage) -> (Vec<Complex64>, f64) {
        let c: Vec<Complex64> = self.envelopes.iter().map(|e| stage.envelope(e)).collect();
        let coupling_bound = 2.0 * c.iter().zip(&self.f_norm).map(|(c, f)| c.norm() * f).sum::<f64>();
        (c, coupling_bound)
    }

    /// One step of every row of every sector. Returns the largest norm defect.
    fn step_sectors(&self, rows: &mut [Vec<Complex64>], t: f64, dt: f64, integ: Integrator) -> f64 {
        let stages: Vec<(f64, Vec<Complex64>, f64)> = integ
            .stages(t, dt)
            .iter()
            .map(|s| {
                let (c, b) = self.stage_ops(s);
                (s.diag_scale, c, b)
            })
            .collect();
        let mut worst = 0.0f64;
        for (sec, block) in self.sectors.iter().zip(rows.iter_mut()) {
            let d = sec.dim();
            if d == 0 {
                continue;
            }
            let prepared: Vec<(Vec<f64>, f64, f64, &Vec<Complex64>)> = stages
                .iter()
                .map(|(scale, c, cb)| {
                    let raw: Vec<f64> = sec.h0.iter().map(|x| scale * x).collect();
                    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    let shift = 0.5 * (lo + hi);
                    (raw.iter().map(|x| x - shift).collect(), shift, 0.5 * (hi - lo) + cb, c)
                })
                .collect();
            let defects = par::map_chunks_mut(block, d * 4, |_, chunk| {
                let mut term = vec![Complex64::new(0.0, 0.0); d];
                let mut next = vec![Complex64::new(0.0, 0.0); d];
                let mut w = 0.0f64;
                for row in chunk.chunks_mut(d) {
                    let before: f64 = row.iter().map(|z| z.norm_sqr()).sum();
                    for (diag, shift, bound, c) in &prepared {
                        let apply = |x: &[Complex64], y: &mut [Complex64]| {
                            for k in 0..d {
                                y[k] = diag[k] * x[k];
                            }
                            for (op, ci) in sec.b_ops.iter().zip(c.iter()) {
                                op.hermitian_add(*ci, x, y);
                            }
                        };
                        taylor_expm(apply, row, &mut term, &mut next, dt, *bound, *shift);
                    }
                    let after: f64 = row.iter().map(|z| z.norm_sqr()).sum();
                    w = w.max((after - before).abs());
                }
                w
            });
            worst = defects.into_iter().fold(worst, f64::max);
        }
        worst
    }
}

/// Mixture `Σ_k w_k |v_k⟩⟨v_k|`, one block of vectors per charge sector.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    pub time: f64,
    weights: Vec<Vec<f64>>,
    rows: Vec<Vec<Complex64>>,
}

impl FockState {
    /// Product of `diag(p, 1−p)` on the spin and the reservoir Gibbs states.
    pub fn initial(space: &FockSpace, excited: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&excited) {
            return Err(Error::Domain(format!("population {excited} outside [0,1]")));
        }
        let nb = space.n_modes - 1;
        let mut weights = Vec::new();
        let mut rows = Vec::new();
        for sec in &space.sectors {
            let d = sec.dim();
            let w = sec
                .global
                .iter()
                .enumerate()
                .map(|(k, &b)| {
                    let spin = if sec.upper[k] > 0.5 { excited } else { 1.0 - excited };
                    // bath bit j of global index b (mode 0 is the most significant)
                    (0..nb).fold(spin, |acc, j| {
                        let occupied = (b >> (nb - 1 - j)) & 1 == 1;
                        acc * if occupied { space.bath_occ[j] } else { 1.0 - space.bath_occ[j] }
                    })
                })
                .collect();
            let mut r = vec![Complex64::new(0.0, 0.0); d * d];
            for k in 0..d {
                r[k * d + k] = Complex64::new(1.0, 0.0);
            }
            weights.push(w);
            rows.push(r);
        }
        Ok(Self { time: 0.0, weights, rows })
    }

    /// Dense `2^N × 2^N` density matrix in the global occupation basis.
    pub fn density_matrix(&self, space: &FockSpace) -> DMatrix<Complex64> {
        let mut rho = DMatrix::zeros(space.dim, space.dim);
        for ((sec, w), rows) in space.sectors.iter().zip(&self.weights).zip(&self.rows) {
            let block = sector_density(sec.dim(), w, rows);
            for (a, &ga) in sec.global.iter().enumerate() {
                for (b, &gb) in sec.global.iter().enumerate() {
                    rho[(ga, gb)] = block[(a, b)];
                }
            }
        }
        rho
    }
}

fn sector_density(d: usize, w: &[f64], rows: &[Complex64]) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(d, d);
    for (k, &wk) in w.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let v = &rows[k * d..(k + 1) * d];
        for a in 0..d {
            let va = wk * v[a];
            for b in 0..d {
                m[(a, b)] += va * v[b].conj();
            }
        }
    }
    m
}

/// `Tr ρ log ρ − Tr ρ log ρ_ref` with `ρ_ref = ½ ⊗ Gibbs`, by dense
/// eigendecomposition of every sector block.
pub fn relative_entropy_oracle(space: &FockSpace, state: &FockState) -> f64 {
    let mut s = 0.0;
    for ((sec, w), rows) in space.sectors.iter().zip(&state.weights).zip(&state.rows) {
        let d = sec.dim();
        if d == 0 {
            continue;
        }
        let rho = sector_density(d, w, rows);
        for lam in rho.clone().symmetric_eigenvalues().iter() {
            if *lam > 0.0 {
                s += lam * lam.ln();
            }
        }
        for a in 0..d {
            s -= rho[(a, a)].re * sec.log_ref[a];
        }
    }
    s
}

fn observe_state(space: &FockSpace, state: &FockState, t: f64) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let nr = space.envelopes.len();
    let nb = space.n_modes - 1;
    let mut e = vec![0.0; nr];
    let mut n = vec![0.0; nr];
    let mut upper = 0.0;
    let mut a_exp = vec![Complex64::new(0.0, 0.0); nb];
    for ((sec, w), rows) in space.sectors.iter().zip(&state.weights).zip(&state.rows) {
        let d = sec.dim();
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let v = &rows[k * d..(k + 1) * d];
            for (b, z) in v.iter().enumerate() {
                let p = wk * z.norm_sqr();
                upper += p * sec.upper[b];
                for i in 0..nr {
                    e[i] += p * sec.res_energy[i][b];
                    n[i] += p * sec.res_number[i][b];
                }
            }
            for (j, op) in sec.a_ops.iter().enumerate() {
                a_exp[j] += wk * op.expectation(v);
            }
        }
    }
    let env: Vec<Complex64> = space.envelopes.iter().map(|h| h.eval(t)).collect();
    let mut er = vec![0.0; nr];
    let mut nrate = vec![0.0; nr];
    for j in 0..nb {
        let i = space.owner[j];
        // d⟨H_i⟩/dt = i⟨[V, H_i]⟩ = 2 Σ_j u_j Im(λ_j ⟨σ₋ b_j†⟩)
        let x = 2.0 * (env[i] * space.kappa[j] * a_exp[j]).im;
        er[i] += space.u[j] * x;
        nrate[i] += x;
    }
    (e, n, upper, er, nrate)
}

pub struct FockEngine<'a> {
    space: &'a FockSpace,
    state: FockState,
    maps: Option<Vec<Vec<Complex64>>>,
    e0: Vec<f64>,
    n0: Vec<f64>,
    excited: f64,
    max_defect: f64,
}

impl<'a> FockEngine<'a> {
    pub fn new(space: &'a FockSpace, excited: f64) -> Result<Self> {
        let state = FockState::initial(space, excited)?;
        let (e0, n0, ..) = observe_state(space, &state, 0.0);
        Ok(Self { space, state, maps: None, e0, n0, excited, max_defect: 0.0 })
    }

    pub fn state(&self) -> &FockState {
        &self.state
    }

    fn identity_blocks(&self) -> Vec<Vec<Complex64>> {
        self.space
            .sectors
            .iter()
            .map(|s| {
                let d = s.dim();
                let mut r = vec![Complex64::new(0.0, 0.0); d * d];
                for k in 0..d {
                    r[k * d + k] = Complex64::new(1.0, 0.0);
                }
                r
            })
            .collect()
    }

    fn period_maps(&mut self, integ: Integrator, steps: usize) -> Vec<Vec<Complex64>> {
        let period = self.space.envelopes[0].period();
        let dt = period / steps as f64;
        let mut m = self.identity_blocks();
        for s in 0..steps {
            let d = self.space.step_sectors(&mut m, s as f64 * dt, dt, integ);
            self.max_defect = self.max_defect.max(d);
        }
        m
    }
}

impl Engine for FockEngine<'_> {
    type Saved = FockState;

    fn step(&mut self, t: f64, dt: f64, integ: Integrator) -> Result<()> {
        let d = self.space.step_sectors(&mut self.state.rows, t, dt, integ);
        self.max_defect = self.max_defect.max(d);
        self.state.time = t + dt;
        if d > UNITARITY_TOLERANCE {
            return Err(Error::Propagation(format!("Fock step at t={t} has unitarity defect {d:.3e}")));
        }
        Ok(())
    }

    fn build_period_map(&mut self, integ: Integrator, steps: usize) -> Result<()> {
        self.maps = Some(self.period_maps(integ, steps));
        Ok(())
    }

    fn step_doubling_error(&mut self, integ: Integrator, steps: usize) -> Result<f64> {
        let fine = self.period_maps(integ, steps);
        let coarse = self.period_maps(integ, steps / 2);
        let diff = fine
            .iter()
            .zip(&coarse)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max);
        self.maps = Some(fine);
        Ok(diff / (2f64.powi(integ.order() as i32) - 1.0))
    }

    fn apply_period_map(&mut self) {
        let maps = self.maps.as_ref().expect("period map built before use");
        for ((sec, rows), m) in self.space.sectors.iter().zip(self.state.rows.iter_mut()).zip(maps) {
            if sec.dim() > 0 {
                right_multiply(rows, sec.dim(), m);
            }
        }
        self.state.time += self.space.envelopes[0].period();
    }

    fn save(&self) -> Self::Saved {
        self.state.clone()
    }

    fn restore(&mut self, saved: Self::Saved) {
        self.state = saved;
    }

    fn observe(&self, t: f64) -> Observables {
        let (e, n, upper, er, nrate) = observe_state(self.space, &self.state, t);
        Observables {
            delta_energy: e.iter().zip(&self.e0).map(|(a, b)| a - b).collect(),
            delta_number: n.iter().zip(&self.n0).map(|(a, b)| a - b).collect(),
            impurity: upper,
            energy_rate: er,
            number_rate: nrate,
        }
    }

    fn max_unitarity_defect(&self) -> f64 {
        self.max_defect
    }

    fn trace_drift(&self) -> f64 {
        let mut total = 0.0;
        for ((sec, w), rows) in self.space.sectors.iter().zip(&self.state.weights).zip(&self.state.rows) {
            let d = sec.dim();
            for (k, wk) in w.iter().enumerate() {
                total += wk * rows[k * d..(k + 1) * d].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        (total - 1.0).abs()
    }

    fn initial_population(&self) -> f64 {
        self.excited
    }
}

/// `ρ(t1)` from `ρ(t0)` by stepping the many-body propagator with the same
/// scheme as the Gaussian path.
pub fn propagate_fock_oracle(space: &FockSpace, state: &FockState, t1: f64, dt: f64, integrator: Integrator) -> Result<FockState> {
    let t0 = state.time;
    if !(dt > 0.0) || !(t1 > t0) {
        return Err(Error::Domain(format!("need dt > 0 and t1 > t0, got dt={dt}, [{t0}, {t1}]")));
    }
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let mut out = state.clone();
    for k in 0..steps {
        let d = space.step_sectors(&mut out.rows, t0 + k as f64 * h, h, integrator);
        if d > UNITARITY_TOLERANCE {
            return Err(Error::Propagation(format!("Fock step has unitarity defect {d:.3e}")));
        }
    }
    out.time = t1;
    Ok(out)
}
