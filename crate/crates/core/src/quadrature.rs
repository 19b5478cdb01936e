//! Adaptive Gauss–Kronrod quadrature and Cauchy principal values.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_289_993_347,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const MAX_INTERVALS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kron * h;
    let err = ((kron - gauss) * h).abs();
    (value, err)
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (v, e) = gk21(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v, error: e });
    let (mut total, mut err) = (v, e);
    let mut evals = 21;
    loop {
        if err <= tol {
            // the running sums can lose everything to cancellation; confirm
            err = heap.iter().map(|p| p.error).sum();
            total = heap.iter().map(|p| p.value).sum();
            if err <= tol {
                break;
            }
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature { achieved: err, tolerance: tol });
        }
        let worst = heap.pop().expect("heap is never empty here");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            return Err(Error::Quadrature { achieved: err, tolerance: tol });
        }
        let (v1, e1) = gk21(&f, worst.a, mid);
        let (v2, e2) = gk21(&f, mid, worst.b);
        evals += 42;
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Piece { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, error: e2 });
        if !total.is_finite() {
            return Err(Error::Quadrature { achieved: f64::INFINITY, tolerance: tol });
        }
    }
    Ok(QuadResult { value: total, error: err, evaluations: evals })
}

/// Principal-value integrand `W(u)/(E − u)` on `[lower, upper]`.
pub struct PvIntegrand<F> {
    pub weight: F,
    pub pole: f64,
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
}

/// `PV ∫ W(u)/(E−u) du` by singularity subtraction on the largest window
/// `[E−h, E+h]` inside the domain, folded onto `∫₀^h (W(E−t) − W(E+t))/t dt`
/// (the subtracted `W(E)` term integrates to zero on a symmetric window),
/// plus ordinary adaptive quadrature on the remainder.
pub fn pv_integral<F: Fn(f64) -> f64>(spec: &PvIntegrand<F>) -> Result<QuadResult> {
    let PvIntegrand { weight, pole, lower, upper, tolerance } = spec;
    let (e, a, b, tol) = (*pole, *lower, *upper, *tolerance);
    if !(a < b) || !e.is_finite() {
        return Err(Error::Domain(format!("bad principal-value domain [{a}, {b}] with pole {e}")));
    }
    let kernel = |u: f64| weight(u) / (e - u);
    if e <= a || e >= b {
        if e == a || e == b {
            return Err(Error::Domain("pole on the integration boundary".into()));
        }
        return integrate(kernel, a, b, tol);
    }
    let h = (e - a).min(b - e);
    let folded = |t: f64| (weight(e - t) - weight(e + t)) / t;
    let core = integrate(folded, 0.0, h, 0.5 * tol)?;
    let left = integrate(kernel, a, e - h, 0.25 * tol)?;
    let right = integrate(kernel, e + h, b, 0.25 * tol)?;
    Ok(QuadResult {
        value: core.value + left.value + right.value,
        error: core.error + left.error + right.error,
        evaluations: core.evaluations + left.evaluations + right.evaluations,
    })
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
            z = 0.0;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = c - h * z;
        x[n - 1 - i] = c + h * z;
        w[i] = h * wi;
        w[n - 1 - i] = h * wi;
    }
    (x, w)
}
