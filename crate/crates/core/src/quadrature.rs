//! Adaptive one-dimensional quadrature.
//!
//! Globally adaptive Gauss-Kronrod (10-point Gauss, 21-point Kronrod) with
//! a max-error heap, in the style of QUADPACK's QAG. Semi-infinite ranges
//! are compactified with `u = lo + scale * t / (1 - t)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    /// Function-evaluation budget for one call.
    pub max_evals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-8, max_evals: 10_000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, ..Self::default() }
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("no convergence after {evaluations} evaluations (value {value}, error estimate {error})")]
    NoConvergence { value: f64, error: f64, evaluations: usize },
    #[error("integrand returned a non-finite value at {at}")]
    NonFiniteEvaluation { at: f64 },
    #[error("integral appears to diverge")]
    DivergenceSuspected,
    #[error("invalid integration range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
}

#[allow(clippy::excessive_precision)]
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

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

const EVALS_PER_RULE: usize = 21;

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Applies the 21-point Kronrod rule on `[lo, hi]`; returns (value, error).
fn gauss_kronrod_21<F>(f: &F, lo: f64, hi: f64) -> Result<(f64, f64), QuadratureError>
where
    F: Fn(f64) -> f64,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |x: f64| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(QuadratureError::NonFiniteEvaluation { at: x })
        }
    };

    let f_center = eval(center)?;
    let mut kronrod = f_center * WGK[10];
    let mut gauss = 0.0;
    let mut res_abs = kronrod.abs();
    let mut f1 = [0.0; 10];
    let mut f2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let a = eval(center - dx)?;
        let b = eval(center + dx)?;
        f1[j] = a;
        f2[j] = b;
        kronrod += WGK[j] * (a + b);
        res_abs += WGK[j] * (a.abs() + b.abs());
        // Gauss nodes sit at the odd Kronrod positions.
        if j % 2 == 1 {
            gauss += WG[j / 2] * (a + b);
        }
    }
    let mean = 0.5 * kronrod;
    let mut res_asc = WGK[10] * (f_center - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((f1[j] - mean).abs() + (f2[j] - mean).abs());
    }
    let value = kronrod * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok((value, err))
}

/// Integrates `f` over the finite range `[lo, hi]`.
pub fn integrate_finite<F>(
    f: F,
    lo: f64,
    hi: f64,
    tol: &Tolerance,
) -> Result<IntegrationResult, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(QuadratureError::InvalidRange { lo, hi });
    }
    adaptive(&f, lo, hi, tol)
}

fn adaptive<F>(f: &F, lo: f64, hi: f64, tol: &Tolerance) -> Result<IntegrationResult, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    let (value, error) = gauss_kronrod_21(f, lo, hi)?;
    let mut evaluations = EVALS_PER_RULE;
    let mut total = value;
    let mut total_err = error;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { lo, hi, value, error });
    // Segments too narrow to split further; their error is accepted as is.
    let mut frozen_err = 0.0;

    while total_err > tol.target(total) {
        if evaluations + 2 * EVALS_PER_RULE > tol.max_evals {
            return Err(QuadratureError::NoConvergence { value: total, error: total_err, evaluations });
        }
        let Some(worst) = heap.pop() else {
            break;
        };
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi || (worst.hi - worst.lo) < 4.0 * f64::EPSILON * mid.abs() {
            frozen_err += worst.error;
            if heap.is_empty() || frozen_err > tol.target(total) {
                return Err(QuadratureError::NoConvergence { value: total, error: total_err, evaluations });
            }
            continue;
        }
        let (v1, e1) = gauss_kronrod_21(f, worst.lo, mid)?;
        let (v2, e2) = gauss_kronrod_21(f, mid, worst.hi)?;
        evaluations += 2 * EVALS_PER_RULE;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { lo: worst.lo, hi: mid, value: v1, error: e1 });
        heap.push(Segment { lo: mid, hi: worst.hi, value: v2, error: e2 });

        // Resum periodically to shed accumulated cancellation error.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
        }
    }
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_error_estimate = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
    Ok(IntegrationResult { value, abs_error_estimate, evaluations })
}

/// Integrates `f` over `[lo, inf)`.
pub fn integrate_semi_infinite<F>(
    f: F,
    lo: f64,
    tol: &Tolerance,
) -> Result<IntegrationResult, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    integrate_semi_infinite_scaled(f, lo, 1.0, tol)
}

/// Like [`integrate_semi_infinite`] with `u = lo + scale * t / (1 - t)`.
///
/// `scale` should be of the order of the integrand's decay length.
pub fn integrate_semi_infinite_scaled<F>(
    f: F,
    lo: f64,
    scale: f64,
    tol: &Tolerance,
) -> Result<IntegrationResult, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if !lo.is_finite() || !(scale > 0.0 && scale.is_finite()) {
        return Err(QuadratureError::InvalidRange { lo, hi: f64::INFINITY });
    }
    let mapped = |t: f64| {
        let s = 1.0 - t;
        let u = lo + scale * t / s;
        if u.is_infinite() {
            return 0.0;
        }
        let y = f(u);
        if y == 0.0 {
            0.0
        } else {
            y * scale / (s * s)
        }
    };
    match adaptive(&mapped, 0.0, 1.0, tol) {
        Ok(r) => Ok(r),
        Err(err @ (QuadratureError::NoConvergence { .. } | QuadratureError::NonFiniteEvaluation { .. })) => {
            if tail_looks_divergent(&f, lo, scale) {
                Err(QuadratureError::DivergenceSuspected)
            } else {
                Err(err)
            }
        }
        Err(err) => Err(err),
    }
}

/// Compares integrals over successive doubling blocks far out in the tail.
/// A convergent tail shrinks block to block; three non-shrinking blocks in
/// a row are taken as divergence.
fn tail_looks_divergent<F>(f: &F, lo: f64, scale: f64) -> bool
where
    F: Fn(f64) -> f64,
{
    const FIRST_BLOCK: i32 = 20;
    let tol = Tolerance::new(0.0, 1e-6).with_max_evals(2_000);
    let block = |m: i32| -> Option<f64> {
        let a = lo + scale * 2f64.powi(m);
        let b = lo + scale * 2f64.powi(m + 1);
        match integrate_finite(|u| f(u), a, b, &tol) {
            Ok(r) => Some(r.value.abs()),
            Err(QuadratureError::NonFiniteEvaluation { .. }) => Some(f64::INFINITY),
            Err(QuadratureError::NoConvergence { value, .. }) => Some(value.abs()),
            Err(_) => None,
        }
    };
    let blocks: Option<Vec<f64>> = (FIRST_BLOCK..FIRST_BLOCK + 4).map(block).collect();
    let Some(blocks) = blocks else {
        return false;
    };
    blocks[0] > 0.0 && blocks.windows(2).all(|w| w[1] >= 0.9 * w[0])
}
