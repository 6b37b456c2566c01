//! Closed-form and single-integral coverage and local-delay evaluation.
//!
//! Notation used throughout, for a user requesting file `n` and served by
//! tier `k`:
//!
//! * `q_nj = 1 - p_nj`
//! * `Pbar_j = P_j / P_k`, `e_j = 2 * alpha_k / alpha_j`
//! * `g_j = lambda_j * Pbar_j^(2 / alpha_j)`, the tier-`j` geometry weight
//!
//! Every per-tier quantity has the form
//! `W_k = int_0^inf 2 pi p_nk lambda_k x exp(-pi sum_j c_j x^e_j) dx`
//! for some coefficients `c_j`. `W_k` is the association probability `A_nk`
//! (with `c_j = g_j p_nj`), the product `A_nk C_nk`, or the product
//! `A_nk D_nk`. Totals are sums of `W_k`; the per-tier conditional values
//! divide by `A_nk` only for reporting.

use std::f64::consts::PI;

use thiserror::Error;

use crate::model::{ModelError, NetworkConfig};
use crate::quadrature::{
    integrate_finite, integrate_semi_infinite_scaled, IntegrationResult, QuadratureError, Tolerance,
};

/// Relative size below which an aggregated exponent coefficient counts as
/// zero when deciding delay finiteness.
pub const COEFFICIENT_ZERO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("file {file} is not cached in any tier")]
    FileUncached { file: usize },
    #[error("file {file} is never served by tier {tier} (zero association probability)")]
    ZeroAssociationProbability { file: usize, tier: usize },
    #[error("tiers do not share a common pathloss exponent")]
    UnequalAlphas,
    #[error("domain error: {0}")]
    DomainError(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The four interference integral families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RhoKind {
    /// `tau^(2/a) int_{tau^(-2/a)}^inf du / (1 + u^(a/2))`
    Rho1,
    /// `tau^(2/a) int_0^{tau^(-2/a)} du / (1 + u^(a/2))`
    Rho2,
    /// `tau^(2/a) int_{tau^(-2/a)}^inf du / (1 - act + u^(a/2))`
    Rho3,
    /// `tau^(2/a) int_0^{tau^(-2/a)} du / (1 - act + u^(a/2))`
    Rho4,
}

/// A local delay: mean number of slots, or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayValue {
    Finite(f64),
    Infinite,
}

impl DelayValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, DelayValue::Finite(_))
    }

    /// The value as `f64`, with `INFINITY` for the infinite case.
    pub fn value(&self) -> f64 {
        match *self {
            DelayValue::Finite(v) => v,
            DelayValue::Infinite => f64::INFINITY,
        }
    }
}

/// Which stage decided whether a delay is finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinitenessVerdict {
    /// Decided from the exponent coefficients before any outer quadrature.
    Analytic,
    /// The analytic rule said finite but the outer quadrature diverged or
    /// overflowed; reported as infinite.
    QuadratureFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierCoverage {
    /// `A_nk`.
    pub association: f64,
    /// `C_nk`; `None` when `A_nk = 0`.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageBreakdown {
    pub per_tier: Vec<TierCoverage>,
    pub total: f64,
    pub abs_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierDelay {
    pub association: f64,
    /// `D_nk`; `None` when `A_nk = 0`.
    pub delay: Option<DelayValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayBreakdown {
    pub per_tier: Vec<TierDelay>,
    pub total: DelayValue,
    pub abs_error_estimate: f64,
    pub verdict: FinitenessVerdict,
}

fn check_rho_domain(alpha: f64, tau: f64, activity: f64) -> Result<(), AnalyticError> {
    if !(alpha > 2.0 && alpha.is_finite()) {
        return Err(AnalyticError::DomainError(format!("pathloss exponent must exceed 2, got {alpha}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(AnalyticError::DomainError(format!("SIR threshold must be positive, got {tau}")));
    }
    if !(0.0..=1.0).contains(&activity) {
        return Err(AnalyticError::DomainError(format!("activity must lie in [0, 1], got {activity}")));
    }
    Ok(())
}

fn add(a: IntegrationResult, b: IntegrationResult) -> IntegrationResult {
    IntegrationResult {
        value: a.value + b.value,
        abs_error_estimate: a.abs_error_estimate + b.abs_error_estimate,
        evaluations: a.evaluations + b.evaluations,
    }
}

/// `int_lo^hi du / (c + u^beta)` for `1 <= lo < hi <= inf`, after the
/// substitution `w = u^(1 - beta)`, which maps the slowly decaying tail onto
/// a bounded interval with a smooth integrand.
fn power_tail(c: f64, beta: f64, lo: f64, hi: f64, tol: &Tolerance) -> Result<IntegrationResult, QuadratureError> {
    let k = beta / (beta - 1.0);
    let w_hi = lo.powf(1.0 - beta);
    let w_lo = if hi.is_finite() { hi.powf(1.0 - beta) } else { 0.0 };
    let r = integrate_finite(|w| 1.0 / (1.0 + c * w.powf(k)), w_lo, w_hi, tol)?;
    let scale = 1.0 / (beta - 1.0);
    Ok(IntegrationResult {
        value: scale * r.value,
        abs_error_estimate: scale * r.abs_error_estimate,
        evaluations: r.evaluations,
    })
}

/// `int_lo^hi du / (c + u^beta)` for `c` in `[0, 1]`, `0 <= lo < hi <= inf`.
fn power_integral(c: f64, beta: f64, lo: f64, hi: f64, tol: &Tolerance) -> Result<IntegrationResult, QuadratureError> {
    let f = |u: f64| 1.0 / (c + u.powf(beta));
    let mut total = IntegrationResult { value: 0.0, abs_error_estimate: 0.0, evaluations: 0 };
    // Below the boundary-layer width `c^(1/beta)` the integrand is nearly
    // flat at 1/c; above 1 the tail substitution applies.
    let knee = c.powf(1.0 / beta).min(1.0);
    let mut cuts = vec![lo];
    for b in [knee, 1.0] {
        if b > lo && b < hi && cuts.last().is_some_and(|&l| b > l) {
            cuts.push(b);
        }
    }
    cuts.push(hi);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let part = if a >= 1.0 { power_tail(c, beta, a, b, tol)? } else { integrate_finite(f, a, b, tol)? };
        total = add(total, part);
    }
    Ok(total)
}

/// Evaluates one rho integral. Returns `INFINITY` for `Rho4` with
/// `activity = 1`, where the integrand behaves like `u^(-alpha/2)` at 0.
pub fn rho_with(
    kind: RhoKind,
    alpha: f64,
    tau: f64,
    activity: f64,
    tol: &Tolerance,
) -> Result<IntegrationResult, AnalyticError> {
    check_rho_domain(alpha, tau, activity)?;
    let beta = 0.5 * alpha;
    let prefactor = tau.powf(2.0 / alpha);
    let limit = tau.powf(-2.0 / alpha);
    let offset = match kind {
        RhoKind::Rho1 | RhoKind::Rho2 => 1.0,
        RhoKind::Rho3 | RhoKind::Rho4 => 1.0 - activity,
    };
    let raw = match kind {
        RhoKind::Rho1 | RhoKind::Rho3 => power_integral(offset, beta, limit, f64::INFINITY, tol)?,
        RhoKind::Rho2 | RhoKind::Rho4 => {
            if offset == 0.0 {
                return Ok(IntegrationResult {
                    value: f64::INFINITY,
                    abs_error_estimate: 0.0,
                    evaluations: 1,
                });
            }
            power_integral(offset, beta, 0.0, limit, tol)?
        }
    };
    Ok(IntegrationResult {
        value: prefactor * raw.value,
        abs_error_estimate: prefactor * raw.abs_error_estimate,
        evaluations: raw.evaluations,
    })
}

/// [`rho_with`] at default tolerances, returning only the value.
pub fn rho(kind: RhoKind, alpha: f64, tau: f64, activity: f64) -> Result<f64, AnalyticError> {
    rho_with(kind, alpha, tau, activity, &Tolerance::default()).map(|r| r.value)
}

/// Per-tier rho values with their quadrature errors.
#[derive(Debug, Clone, Copy)]
struct TierRhos {
    rho1: f64,
    rho2: f64,
    err12: f64,
}

#[derive(Debug, Clone, Copy)]
struct TierDelayRhos {
    rho3: f64,
    rho4: f64,
    err34: f64,
}

/// `q * rho4` with the convention `0 * inf = 0`.
fn weighted_rho4(q: f64, rho4: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * rho4
    }
}

/// Coefficient `c_j` of one exponent term, with the magnitude of its parts
/// for zero classification.
#[derive(Debug, Clone, Copy)]
struct ExponentTerm {
    coefficient: f64,
    magnitude: f64,
    exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Positive,
    Negative,
    Zero,
}

fn classify(sum: f64, magnitude: f64) -> Sign {
    if !sum.is_finite() {
        return if sum > 0.0 { Sign::Positive } else { Sign::Negative };
    }
    if sum.abs() <= COEFFICIENT_ZERO_TOLERANCE * magnitude {
        Sign::Zero
    } else if sum > 0.0 {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

fn same_exponent(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Whether `int_0^inf x exp(-pi sum c_j x^e_j) dx` converges: the sign of
/// the aggregated coefficient of the largest exponent that does not cancel.
fn outer_integral_converges(terms: &[ExponentTerm]) -> bool {
    let mut exponents: Vec<f64> = terms.iter().map(|t| t.exponent).collect();
    exponents.sort_by(|a, b| b.total_cmp(a));
    exponents.dedup_by(|a, b| same_exponent(*a, *b));
    for e in exponents {
        let (sum, magnitude) = terms
            .iter()
            .filter(|t| same_exponent(t.exponent, e))
            .fold((0.0, 0.0), |(s, m), t| (s + t.coefficient, m + t.magnitude));
        match classify(sum, magnitude) {
            Sign::Positive => return true,
            Sign::Negative => return false,
            Sign::Zero => continue,
        }
    }
    false
}

/// Evaluation engine bound to one configuration and tolerance.
#[derive(Debug, Clone)]
pub struct Analyzer<'a> {
    config: &'a NetworkConfig,
    tol: Tolerance,
}

/// Per-call state: the query plus cached rho values.
struct Query<'a> {
    config: &'a NetworkConfig,
    file: usize,
    tau: f64,
    tol: Tolerance,
    rhos: Option<Vec<TierRhos>>,
    delay_rhos: Option<Vec<TierDelayRhos>>,
}

impl<'a> Analyzer<'a> {
    pub fn new(config: &'a NetworkConfig) -> Self {
        Self { config, tol: Tolerance::default() }
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        self.config
    }

    fn query(&self, file: usize, tau: f64) -> Result<Query<'a>, AnalyticError> {
        self.config.check_file(file)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ModelError::InvalidThreshold(tau).into());
        }
        if !self.config.is_cached(file)? {
            return Err(AnalyticError::FileUncached { file });
        }
        Ok(Query { config: self.config, file, tau, tol: self.tol, rhos: None, delay_rhos: None })
    }

    /// Query without a threshold, for association-only quantities.
    fn association_query(&self, file: usize) -> Result<Query<'a>, AnalyticError> {
        self.query(file, 1.0)
    }

    fn check_tier(&self, tier: usize) -> Result<(), AnalyticError> {
        self.config.tier(tier)?;
        Ok(())
    }

    /// `A_nk`. Uses the closed-form ratio when all pathloss exponents are
    /// equal, quadrature otherwise.
    pub fn association_probability(&self, file: usize, tier: usize) -> Result<f64, AnalyticError> {
        self.check_tier(tier)?;
        let q = self.association_query(file)?;
        q.association(tier)
    }

    /// `A_nk` by quadrature of the serving-distance density, regardless of
    /// the exponents.
    pub fn association_probability_by_quadrature(
        &self,
        file: usize,
        tier: usize,
    ) -> Result<IntegrationResult, AnalyticError> {
        self.check_tier(tier)?;
        let q = self.association_query(file)?;
        q.weighted_integral(tier, &q.association_terms(tier))
    }

    /// Density of the distance to the serving BS given association with
    /// `tier`.
    pub fn serving_distance_pdf(&self, file: usize, tier: usize, x: f64) -> Result<f64, AnalyticError> {
        self.check_tier(tier)?;
        if !(x >= 0.0) {
            return Err(AnalyticError::DomainError(format!("distance must be nonnegative, got {x}")));
        }
        let q = self.association_query(file)?;
        let a = q.association(tier)?;
        if a == 0.0 {
            return Err(AnalyticError::ZeroAssociationProbability { file, tier });
        }
        Ok(q.weighted_integrand(tier, &q.association_terms(tier), x) / a)
    }

    /// `C_nk`, the coverage probability given association with `tier`.
    pub fn coverage_tier(&self, file: usize, tier: usize, tau: f64) -> Result<f64, AnalyticError> {
        self.check_tier(tier)?;
        let mut q = self.query(file, tau)?;
        let a = q.association(tier)?;
        if a == 0.0 {
            return Err(AnalyticError::ZeroAssociationProbability { file, tier });
        }
        let terms = q.coverage_terms(tier)?;
        let w = q.weighted_integral(tier, &terms)?;
        Ok((w.value / a).clamp(0.0, 1.0))
    }

    /// Total coverage `C_n = sum_k A_nk C_nk`, each product computed as one
    /// integral.
    pub fn coverage(&self, file: usize, tau: f64) -> Result<CoverageBreakdown, AnalyticError> {
        let mut q = self.query(file, tau)?;
        let mut per_tier = Vec::with_capacity(q.config.num_tiers());
        let mut total = 0.0;
        let mut err = 0.0;
        for k in 0..q.config.num_tiers() {
            let a = q.association(k)?;
            if a == 0.0 {
                per_tier.push(TierCoverage { association: 0.0, coverage: None });
                continue;
            }
            let terms = q.coverage_terms(k)?;
            let w = q.weighted_integral(k, &terms)?;
            total += w.value;
            err += w.abs_error_estimate;
            per_tier.push(TierCoverage { association: a, coverage: Some((w.value / a).min(1.0)) });
        }
        err += total * q.rho_relative_error()?;
        Ok(CoverageBreakdown { per_tier, total: total.clamp(0.0, 1.0), abs_error_estimate: err })
    }

    /// Closed-form total coverage for networks sharing one pathloss
    /// exponent.
    pub fn coverage_equal_alpha(&self, file: usize, tau: f64) -> Result<CoverageBreakdown, AnalyticError> {
        let alpha = self.config.common_pathloss_exponent().ok_or(AnalyticError::UnequalAlphas)?;
        let mut q = self.query(file, tau)?;
        let rhos = q.rhos()?.to_vec();
        let tiers = q.config.tiers();
        // sum_j lambda_j P_j^(2/alpha) [p + a (rho1 + q rho2)], and the same
        // with only the p term, both up to the common P_k^(-2/alpha) factor.
        let mut cover_denom = 0.0;
        let mut assoc_denom = 0.0;
        for (t, r) in tiers.iter().zip(&rhos) {
            let p = t.caching_probs[file];
            let w = t.density * t.tx_power.powf(2.0 / alpha);
            cover_denom += w * (p + t.activity_prob * (r.rho1 + (1.0 - p) * r.rho2));
            assoc_denom += w * p;
        }
        let mut per_tier = Vec::with_capacity(tiers.len());
        let mut total = 0.0;
        for t in tiers {
            let p = t.caching_probs[file];
            if p == 0.0 {
                per_tier.push(TierCoverage { association: 0.0, coverage: None });
                continue;
            }
            let num = p * t.density * t.tx_power.powf(2.0 / alpha);
            let term = num / cover_denom;
            let a = num / assoc_denom;
            total += term;
            per_tier.push(TierCoverage { association: a, coverage: Some((term / a).min(1.0)) });
        }
        let err = total * q.rho_relative_error()?;
        Ok(CoverageBreakdown { per_tier, total: total.clamp(0.0, 1.0), abs_error_estimate: err })
    }

    /// `D_nk`, the local delay given association with `tier`.
    pub fn delay_tier(&self, file: usize, tier: usize, tau: f64) -> Result<DelayValue, AnalyticError> {
        self.check_tier(tier)?;
        let mut q = self.query(file, tau)?;
        let a = q.association(tier)?;
        if a == 0.0 {
            return Err(AnalyticError::ZeroAssociationProbability { file, tier });
        }
        let (w, _) = q.delay_weighted(tier)?;
        Ok(match w {
            Some(w) => DelayValue::Finite((w.value / a).max(1.0)),
            None => DelayValue::Infinite,
        })
    }

    /// Total local delay `D_n = sum_k A_nk D_nk`.
    pub fn delay(&self, file: usize, tau: f64) -> Result<DelayBreakdown, AnalyticError> {
        let mut q = self.query(file, tau)?;
        let mut per_tier = Vec::with_capacity(q.config.num_tiers());
        let mut total = 0.0;
        let mut err = 0.0;
        let mut infinite = false;
        let mut verdict = FinitenessVerdict::Analytic;
        for k in 0..q.config.num_tiers() {
            let a = q.association(k)?;
            if a == 0.0 {
                per_tier.push(TierDelay { association: 0.0, delay: None });
                continue;
            }
            let (w, v) = q.delay_weighted(k)?;
            if v == FinitenessVerdict::QuadratureFallback {
                verdict = v;
            }
            match w {
                Some(w) => {
                    total += w.value;
                    err += w.abs_error_estimate;
                    per_tier.push(TierDelay {
                        association: a,
                        delay: Some(DelayValue::Finite((w.value / a).max(1.0))),
                    });
                }
                None => {
                    infinite = true;
                    per_tier.push(TierDelay { association: a, delay: Some(DelayValue::Infinite) });
                }
            }
        }
        let total = if infinite {
            err = 0.0;
            DelayValue::Infinite
        } else {
            err += total * q.delay_rho_relative_error()?;
            DelayValue::Finite(total.max(1.0))
        };
        Ok(DelayBreakdown { per_tier, total, abs_error_estimate: err, verdict })
    }

    /// Closed-form total delay for networks sharing one pathloss exponent.
    pub fn delay_equal_alpha(&self, file: usize, tau: f64) -> Result<DelayValue, AnalyticError> {
        let alpha = self.config.common_pathloss_exponent().ok_or(AnalyticError::UnequalAlphas)?;
        let mut q = self.query(file, tau)?;
        let rhos = q.delay_rhos()?.to_vec();
        let tiers = q.config.tiers();
        let mut denom = 0.0;
        let mut magnitude = 0.0;
        for (t, r) in tiers.iter().zip(&rhos) {
            let p = t.caching_probs[file];
            let w = t.density * t.tx_power.powf(2.0 / alpha);
            let interference = if t.activity_prob == 0.0 {
                0.0
            } else {
                t.activity_prob * (r.rho3 + weighted_rho4(1.0 - p, r.rho4))
            };
            denom += w * (p - interference);
            magnitude += w * (p + interference);
        }
        if classify(denom, magnitude) != Sign::Positive {
            return Ok(DelayValue::Infinite);
        }
        let total: f64 = tiers
            .iter()
            .map(|t| t.caching_probs[file] * t.density * t.tx_power.powf(2.0 / alpha) / denom)
            .sum();
        Ok(DelayValue::Finite(total.max(1.0)))
    }

    /// Laplace transform factor of tier-`j` interference at the serving
    /// distance `x` when the user is served by tier `k`.
    pub fn interference_laplace(
        &self,
        file: usize,
        serving: usize,
        interferer: usize,
        x: f64,
        tau: f64,
    ) -> Result<f64, AnalyticError> {
        self.check_tier(serving)?;
        self.check_tier(interferer)?;
        let mut q = self.query(file, tau)?;
        let (g, e) = q.geometry(serving, interferer);
        let t = &q.config.tiers()[interferer];
        if t.activity_prob == 0.0 || x == 0.0 {
            return Ok(1.0);
        }
        let r = q.rhos()?[interferer];
        let qn = 1.0 - t.caching_probs[file];
        Ok((-PI * g * t.activity_prob * x.powf(e) * (r.rho1 + qn * r.rho2)).exp())
    }

    /// Expected reciprocal of the tier-`j` conditional Laplace factor, the
    /// per-tier factor of the delay integrand. May be `INFINITY`.
    pub fn reciprocal_laplace_expectation(
        &self,
        file: usize,
        serving: usize,
        interferer: usize,
        x: f64,
        tau: f64,
    ) -> Result<f64, AnalyticError> {
        self.check_tier(serving)?;
        self.check_tier(interferer)?;
        let mut q = self.query(file, tau)?;
        let (g, e) = q.geometry(serving, interferer);
        let t = &q.config.tiers()[interferer];
        if t.activity_prob == 0.0 || x == 0.0 {
            return Ok(1.0);
        }
        let r = q.delay_rhos()?[interferer];
        let qn = 1.0 - t.caching_probs[file];
        let s = r.rho3 + weighted_rho4(qn, r.rho4);
        Ok((PI * g * t.activity_prob * x.powf(e) * s).exp())
    }

    /// Integrand of `C_nk` (with the `1/A_nk` normalization) at distance `x`.
    pub fn coverage_integrand(&self, file: usize, tier: usize, x: f64, tau: f64) -> Result<f64, AnalyticError> {
        self.check_tier(tier)?;
        let mut q = self.query(file, tau)?;
        let a = q.association(tier)?;
        if a == 0.0 {
            return Err(AnalyticError::ZeroAssociationProbability { file, tier });
        }
        let terms = q.coverage_terms(tier)?;
        Ok(q.weighted_integrand(tier, &terms, x) / a)
    }
}

impl Query<'_> {
    fn rhos(&mut self) -> Result<&[TierRhos], AnalyticError> {
        if self.rhos.is_none() {
            let mut out = Vec::with_capacity(self.config.num_tiers());
            for t in self.config.tiers() {
                let a = t.pathloss_exponent;
                let r1 = rho_with(RhoKind::Rho1, a, self.tau, t.activity_prob, &self.tol)?;
                let r2 = rho_with(RhoKind::Rho2, a, self.tau, t.activity_prob, &self.tol)?;
                out.push(TierRhos {
                    rho1: r1.value,
                    rho2: r2.value,
                    err12: r1.abs_error_estimate + r2.abs_error_estimate,
                });
            }
            self.rhos = Some(out);
        }
        Ok(self.rhos.as_deref().unwrap())
    }

    fn delay_rhos(&mut self) -> Result<&[TierDelayRhos], AnalyticError> {
        if self.delay_rhos.is_none() {
            let mut out = Vec::with_capacity(self.config.num_tiers());
            for t in self.config.tiers() {
                let a = t.pathloss_exponent;
                let r3 = rho_with(RhoKind::Rho3, a, self.tau, t.activity_prob, &self.tol)?;
                let r4 = rho_with(RhoKind::Rho4, a, self.tau, t.activity_prob, &self.tol)?;
                out.push(TierDelayRhos {
                    rho3: r3.value,
                    rho4: r4.value,
                    err34: r3.abs_error_estimate + r4.abs_error_estimate,
                });
            }
            self.delay_rhos = Some(out);
        }
        Ok(self.delay_rhos.as_deref().unwrap())
    }

    fn rho_relative_error(&mut self) -> Result<f64, AnalyticError> {
        Ok(self
            .rhos()?
            .iter()
            .map(|r| r.err12 / (r.rho1 + r.rho2).max(f64::MIN_POSITIVE))
            .sum())
    }

    fn delay_rho_relative_error(&mut self) -> Result<f64, AnalyticError> {
        Ok(self
            .delay_rhos()?
            .iter()
            .filter(|r| r.rho4.is_finite())
            .map(|r| r.err34 / (r.rho3 + r.rho4).max(f64::MIN_POSITIVE))
            .sum())
    }

    /// `(g_j, e_j)` for serving tier `k` and tier `j`.
    fn geometry(&self, k: usize, j: usize) -> (f64, f64) {
        let tiers = self.config.tiers();
        let (tk, tj) = (&tiers[k], &tiers[j]);
        let power_ratio = tj.tx_power / tk.tx_power;
        let g = tj.density * power_ratio.powf(2.0 / tj.pathloss_exponent);
        let e = 2.0 * tk.pathloss_exponent / tj.pathloss_exponent;
        (g, e)
    }

    fn association_terms(&self, k: usize) -> Vec<ExponentTerm> {
        (0..self.config.num_tiers())
            .map(|j| {
                let (g, exponent) = self.geometry(k, j);
                let c = g * self.config.tiers()[j].caching_probs[self.file];
                ExponentTerm { coefficient: c, magnitude: c, exponent }
            })
            .collect()
    }

    fn coverage_terms(&mut self, k: usize) -> Result<Vec<ExponentTerm>, AnalyticError> {
        let rhos = self.rhos()?.to_vec();
        Ok((0..self.config.num_tiers())
            .map(|j| {
                let (g, exponent) = self.geometry(k, j);
                let t = &self.config.tiers()[j];
                let p = t.caching_probs[self.file];
                let c = g * (p + t.activity_prob * (rhos[j].rho1 + (1.0 - p) * rhos[j].rho2));
                ExponentTerm { coefficient: c, magnitude: c, exponent }
            })
            .collect())
    }

    /// Delay exponent terms, or `None` when some tier's reciprocal factor
    /// is infinite.
    fn delay_terms(&mut self, k: usize) -> Result<Option<Vec<ExponentTerm>>, AnalyticError> {
        let rhos = self.delay_rhos()?.to_vec();
        let mut terms = Vec::with_capacity(rhos.len());
        for (j, r) in rhos.iter().enumerate() {
            let (g, exponent) = self.geometry(k, j);
            let t = &self.config.tiers()[j];
            let p = t.caching_probs[self.file];
            let interference = if t.activity_prob == 0.0 {
                0.0
            } else {
                t.activity_prob * (r.rho3 + weighted_rho4(1.0 - p, r.rho4))
            };
            if !interference.is_finite() {
                return Ok(None);
            }
            terms.push(ExponentTerm {
                coefficient: g * (p - interference),
                magnitude: g * (p + interference),
                exponent,
            });
        }
        Ok(Some(terms))
    }

    fn association(&self, k: usize) -> Result<f64, AnalyticError> {
        let tiers = self.config.tiers();
        let p = tiers[k].caching_probs[self.file];
        if p == 0.0 {
            return Ok(0.0);
        }
        if let Some(alpha) = self.config.common_pathloss_exponent() {
            let weight = |j: usize| {
                let t = &tiers[j];
                t.caching_probs[self.file] * t.density * t.tx_power.powf(2.0 / alpha)
            };
            let denom: f64 = (0..tiers.len()).map(weight).sum();
            return Ok(weight(k) / denom);
        }
        let w = self.weighted_integral(k, &self.association_terms(k))?;
        Ok(w.value.clamp(0.0, 1.0))
    }

    /// Integrand of `W_k` at distance `x`.
    fn weighted_integrand(&self, k: usize, terms: &[ExponentTerm], x: f64) -> f64 {
        let t = &self.config.tiers()[k];
        let lead = 2.0 * PI * t.caching_probs[self.file] * t.density * x;
        if lead == 0.0 {
            return 0.0;
        }
        let exponent: f64 = terms.iter().map(|term| term.coefficient * x.powf(term.exponent)).sum();
        lead * (-PI * exponent).exp()
    }

    /// `W_k` by quadrature. When every exponent is 2 the substitution
    /// `t = x^2` makes the integrand a pure exponential.
    fn weighted_integral(&self, k: usize, terms: &[ExponentTerm]) -> Result<IntegrationResult, AnalyticError> {
        let t = &self.config.tiers()[k];
        let lead = PI * t.caching_probs[self.file] * t.density;
        if terms.iter().all(|term| term.exponent == 2.0) {
            let c: f64 = terms.iter().map(|term| term.coefficient).sum();
            let scale = 1.0 / (PI * c.abs()).max(f64::MIN_POSITIVE);
            let f = move |s: f64| lead * (-PI * c * s).exp();
            return Ok(integrate_semi_infinite_scaled(f, 0.0, scale, &self.tol)?);
        }
        let scale = characteristic_length(terms);
        let f = |x: f64| self.weighted_integrand(k, terms, x);
        Ok(integrate_semi_infinite_scaled(f, 0.0, scale, &self.tol)?)
    }

    /// `A_nk D_nk`, or `None` when infinite.
    fn delay_weighted(
        &mut self,
        k: usize,
    ) -> Result<(Option<IntegrationResult>, FinitenessVerdict), AnalyticError> {
        let Some(terms) = self.delay_terms(k)? else {
            return Ok((None, FinitenessVerdict::Analytic));
        };
        if !outer_integral_converges(&terms) {
            return Ok((None, FinitenessVerdict::Analytic));
        }
        match self.weighted_integral(k, &terms) {
            Ok(w) if w.value.is_finite() => Ok((Some(w), FinitenessVerdict::Analytic)),
            Ok(_)
            | Err(AnalyticError::Quadrature(
                QuadratureError::DivergenceSuspected | QuadratureError::NonFiniteEvaluation { .. },
            )) => Ok((None, FinitenessVerdict::QuadratureFallback)),
            Err(e) => Err(e),
        }
    }
}

/// Distance at which `pi * sum |c_j| x^e_j` reaches 1.
fn characteristic_length(terms: &[ExponentTerm]) -> f64 {
    let level = |x: f64| PI * terms.iter().map(|t| t.coefficient.abs() * x.powf(t.exponent)).sum::<f64>();
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    if level(hi.exp()) < 1.0 {
        return 1.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if level(mid.exp()) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

macro_rules! forward {
    ($(#[$m:meta])* $name:ident($($arg:ident: $ty:ty),*) -> $ret:ty) => {
        $(#[$m])*
        pub fn $name(config: &NetworkConfig, $($arg: $ty),*) -> Result<$ret, AnalyticError> {
            Analyzer::new(config).$name($($arg),*)
        }
    };
}

forward!(
    /// See [`Analyzer::association_probability`].
    association_probability(file: usize, tier: usize) -> f64
);
forward!(
    /// See [`Analyzer::serving_distance_pdf`].
    serving_distance_pdf(file: usize, tier: usize, x: f64) -> f64
);
forward!(
    /// See [`Analyzer::coverage_tier`].
    coverage_tier(file: usize, tier: usize, tau: f64) -> f64
);
forward!(
    /// See [`Analyzer::coverage`].
    coverage(file: usize, tau: f64) -> CoverageBreakdown
);
forward!(
    /// See [`Analyzer::coverage_equal_alpha`].
    coverage_equal_alpha(file: usize, tau: f64) -> CoverageBreakdown
);
forward!(
    /// See [`Analyzer::delay_tier`].
    delay_tier(file: usize, tier: usize, tau: f64) -> DelayValue
);
forward!(
    /// See [`Analyzer::delay`].
    delay(file: usize, tau: f64) -> DelayBreakdown
);
forward!(
    /// See [`Analyzer::delay_equal_alpha`].
    delay_equal_alpha(file: usize, tau: f64) -> DelayValue
);
forward!(
    /// See [`Analyzer::interference_laplace`].
    interference_laplace(file: usize, serving: usize, interferer: usize, x: f64, tau: f64) -> f64
);
forward!(
    /// See [`Analyzer::reciprocal_laplace_expectation`].
    reciprocal_laplace_expectation(file: usize, serving: usize, interferer: usize, x: f64, tau: f64) -> f64
);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_network, RawNetworkConfig, TierConfig};

    fn single_tier(p: f64, a: f64) -> NetworkConfig {
        let probs = if p < 1.0 { vec![p, 1.0 - p] } else { vec![1.0, 0.0] };
        validate_network(RawNetworkConfig {
            tiers: vec![TierConfig {
                density: 1.0,
                tx_power: 1.0,
                pathloss_exponent: 4.0,
                activity_prob: a,
                caching_probs: probs,
                cache_size: 1.0,
            }],
            num_files: 2,
        })
        .unwrap()
    }

    fn ds() -> NetworkConfig {
        validate_network(RawNetworkConfig {
            tiers: vec![
                TierConfig {
                    density: 1.0,
                    tx_power: 10.0,
                    pathloss_exponent: 4.0,
                    activity_prob: 1.0,
                    caching_probs: vec![0.5, 0.5],
                    cache_size: 1.0,
                },
                TierConfig {
                    density: 4.0,
                    tx_power: 0.1,
                    pathloss_exponent: 4.0,
                    activity_prob: 1.0,
                    caching_probs: vec![0.2, 0.8],
                    cache_size: 1.0,
                },
            ],
            num_files: 2,
        })
        .unwrap()
    }

    #[test]
    fn rho_arctan_oracles() {
        let quarter_pi = PI / 4.0;
        assert!((rho(RhoKind::Rho1, 4.0, 1.0, 0.3).unwrap() - quarter_pi).abs() < 1e-9);
        assert!((rho(RhoKind::Rho2, 4.0, 1.0, 0.3).unwrap() - quarter_pi).abs() < 1e-9);
        let r4 = rho(RhoKind::Rho4, 4.0, 1.0, 0.5).unwrap();
        assert!((r4 - 2f64.sqrt() * 2f64.sqrt().atan()).abs() < 1e-9);
        assert_eq!(rho(RhoKind::Rho4, 4.0, 1.0, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn rho3_with_zero_activity_is_rho1() {
        for tau in [0.1, 1.0, 7.0] {
            assert_eq!(
                rho(RhoKind::Rho3, 4.0, tau, 0.0).unwrap(),
                rho(RhoKind::Rho1, 4.0, tau, 0.0).unwrap()
            );
        }
    }

    #[test]
    fn rho3_full_activity_is_finite() {
        // alpha = 4, a = 1: sqrt(tau) * int_{1/sqrt(tau)}^inf u^-2 du = tau.
        for tau in [0.5, 2.0] {
            let r = rho(RhoKind::Rho3, 4.0, tau, 1.0).unwrap();
            assert!((r - tau).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn rho_domain_errors() {
        assert!(matches!(rho(RhoKind::Rho1, 2.0, 1.0, 0.0), Err(AnalyticError::DomainError(_))));
        assert!(matches!(rho(RhoKind::Rho1, 4.0, 0.0, 0.0), Err(AnalyticError::DomainError(_))));
        assert!(matches!(rho(RhoKind::Rho3, 4.0, 1.0, 1.5), Err(AnalyticError::DomainError(_))));
    }

    #[test]
    fn association_closed_form_for_distributed_caching() {
        let cfg = ds();
        let a1 = association_probability(&cfg, 0, 0).unwrap();
        let a2 = association_probability(&cfg, 0, 1).unwrap();
        let w1 = 0.5 * 10f64.sqrt();
        let w2 = 0.2 * 4.0 * 0.1f64.sqrt();
        assert!((a1 - w1 / (w1 + w2)).abs() < 1e-12);
        assert!((a1 - 0.86207).abs() < 1e-5);
        assert!((a2 - 0.13793).abs() < 1e-5);
        let az = Analyzer::new(&cfg);
        for k in 0..2 {
            let quad = az.association_probability_by_quadrature(0, k).unwrap().value;
            let closed = az.association_probability(0, k).unwrap();
            assert!((quad - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_caching_means_zero_association() {
        let cfg = single_tier(1.0, 1.0);
        assert_eq!(association_probability(&cfg, 0, 0).unwrap(), 1.0);
        let cfg = ds().modified(|r| r.tiers[1].caching_probs = vec![0.0, 1.0]).unwrap();
        assert_eq!(association_probability(&cfg, 0, 1).unwrap(), 0.0);
        assert!(matches!(
            serving_distance_pdf(&cfg, 0, 1, 1.0),
            Err(AnalyticError::ZeroAssociationProbability { file: 0, tier: 1 })
        ));
    }

    #[test]
    fn serving_distance_pdf_single_tier_is_rayleigh() {
        let cfg = single_tier(1.0, 1.0);
        assert_eq!(serving_distance_pdf(&cfg, 0, 0, 0.0).unwrap(), 0.0);
        for x in [0.1, 0.5, 1.3] {
            let f = serving_distance_pdf(&cfg, 0, 0, x).unwrap();
            assert!((f - 2.0 * PI * x * (-PI * x * x).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_tier_coverage_baseline() {
        let cfg = single_tier(1.0, 1.0);
        let c = coverage_tier(&cfg, 0, 0, 1.0).unwrap();
        assert!((c - 1.0 / (1.0 + PI / 4.0)).abs() < 1e-9);
        assert!((c - 0.560099).abs() < 1e-6);
    }

    #[test]
    fn inactive_network_has_full_coverage_and_unit_delay() {
        let cfg = ds().with_all_activities(0.0).unwrap();
        for file in 0..2 {
            let c = coverage(&cfg, file, 3.0).unwrap();
            assert!((c.total - 1.0).abs() < 1e-9);
            let d = delay(&cfg, file, 3.0).unwrap();
            assert!((d.total.value() - 1.0).abs() < 1e-9);
        }
        let single = single_tier(0.4, 0.0);
        assert!((coverage_tier(&single, 0, 0, 10.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_tier_partial_caching_closed_form() {
        let cfg = single_tier(0.2, 1.0);
        let c = coverage_equal_alpha(&cfg, 0, 1.0).unwrap().total;
        let expected = 0.2 / (0.2 + (PI / 4.0 + 0.8 * PI / 4.0));
        assert!((c - expected).abs() < 1e-9);
        assert!((c - 0.123937).abs() < 1e-6);
    }

    #[test]
    fn single_tier_delay_oracle() {
        let cfg = single_tier(1.0, 0.5);
        let rho3 = 2f64.sqrt() * (PI / 2.0 - 2f64.sqrt().atan());
        assert!((rho3 - 0.870419).abs() < 1e-6);
        let expected = 1.0 / (1.0 - 0.5 * rho3);
        let d = delay_tier(&cfg, 0, 0, 1.0).unwrap().value();
        assert!((d - expected).abs() < 1e-8, "{d} vs {expected}");
        assert!((d - 1.7706).abs() < 1e-4);
        let closed = delay_equal_alpha(&cfg, 0, 1.0).unwrap().value();
        assert!((closed - expected).abs() < 1e-9);
    }

    #[test]
    fn partial_caching_with_full_activity_has_infinite_delay() {
        let cfg = single_tier(0.5, 1.0);
        assert_eq!(delay_tier(&cfg, 0, 0, 1.0).unwrap(), DelayValue::Infinite);
        assert_eq!(delay_equal_alpha(&cfg, 0, 1.0).unwrap(), DelayValue::Infinite);
        let d = delay(&cfg, 0, 1.0).unwrap();
        assert_eq!(d.total, DelayValue::Infinite);
        assert_eq!(d.verdict, FinitenessVerdict::Analytic);
    }

    #[test]
    fn uncached_file_fails_fast() {
        let cfg = ds()
            .modified(|r| {
                r.num_files = 3;
                r.tiers[0].caching_probs = vec![0.5, 0.5, 0.0];
                r.tiers[1].caching_probs = vec![0.2, 0.8, 0.0];
            })
            .unwrap();
        assert_eq!(coverage(&cfg, 2, 1.0).unwrap_err(), AnalyticError::FileUncached { file: 2 });
        assert_eq!(delay(&cfg, 2, 1.0).unwrap_err(), AnalyticError::FileUncached { file: 2 });
        assert!(matches!(coverage(&cfg, 3, 1.0), Err(AnalyticError::Model(_))));
    }

    #[test]
    fn unequal_alphas_rejected_by_closed_forms() {
        let cfg = ds().modified(|r| r.tiers[1].pathloss_exponent = 3.5).unwrap();
        assert_eq!(coverage_equal_alpha(&cfg, 0, 1.0).unwrap_err(), AnalyticError::UnequalAlphas);
        assert_eq!(delay_equal_alpha(&cfg, 0, 1.0).unwrap_err(), AnalyticError::UnequalAlphas);
    }

    #[test]
    fn laplace_factors_at_origin_and_without_activity() {
        let cfg = ds();
        assert_eq!(interference_laplace(&cfg, 0, 0, 1, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(reciprocal_laplace_expectation(&cfg, 0, 0, 1, 0.0, 1.0).unwrap(), 1.0);
        let quiet = cfg.with_activity(1, 0.0).unwrap();
        assert_eq!(interference_laplace(&quiet, 0, 0, 1, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(reciprocal_laplace_expectation(&quiet, 0, 0, 1, 2.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn full_caching_serving_tier_laplace() {
        let cfg = single_tier(1.0, 0.7);
        let x = 0.8;
        let r1 = rho(RhoKind::Rho1, 4.0, 2.0, 0.0).unwrap();
        let l = interference_laplace(&cfg, 0, 0, 0, x, 2.0).unwrap();
        assert!((l - (-PI * 0.7 * r1 * x * x).exp()).abs() < 1e-12);
    }

    #[test]
    fn divergent_reciprocal_expectation_is_infinite() {
        let cfg = single_tier(0.5, 1.0);
        assert_eq!(reciprocal_laplace_expectation(&cfg, 0, 0, 0, 0.5, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn leading_exponent_rule() {
        let term = |coefficient: f64, exponent: f64| ExponentTerm {
            coefficient,
            magnitude: coefficient.abs(),
            exponent,
        };
        assert!(outer_integral_converges(&[term(1.0, 2.0)]));
        assert!(!outer_integral_converges(&[term(-1.0, 2.0)]));
        assert!(!outer_integral_converges(&[term(0.0, 2.0)]));
        // x^3 dominates x^2 at infinity.
        assert!(outer_integral_converges(&[term(-5.0, 2.0), term(0.1, 3.0)]));
        assert!(!outer_integral_converges(&[term(5.0, 2.0), term(-0.1, 3.0)]));
        // Cancelling leading group defers to the next exponent.
        assert!(outer_integral_converges(&[term(1.0, 3.0), term(-1.0, 3.0), term(0.5, 2.0)]));
    }

    #[test]
    fn mixed_alpha_delay_matches_manual_quadrature() {
        let cfg = ds()
            .modified(|r| {
                r.tiers[1].pathloss_exponent = 3.5;
                r.tiers.iter_mut().for_each(|t| t.activity_prob = 0.3);
            })
            .unwrap();
        let az = Analyzer::new(&cfg);
        let tau = 0.5;
        let d = az.delay(1, tau).unwrap();
        assert!(d.total.is_finite());
        assert!(d.total.value() >= 1.0);
        // Rebuild D_nk from the per-tier factors on a plain grid.
        for k in 0..2 {
            let a = az.association_probability(1, k).unwrap();
            let integrand = |x: f64| {
                let pdf = az.serving_distance_pdf(1, k, x).unwrap();
                let prod: f64 = (0..2)
                    .map(|j| az.reciprocal_laplace_expectation(1, k, j, x, tau).unwrap())
                    .product();
                pdf * prod
            };
            let n = 2_000;
            let h = 8.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..n {
                let x0 = i as f64 * h;
                sum += (integrand(x0) + 4.0 * integrand(x0 + 0.5 * h) + integrand(x0 + h)) * h / 6.0;
            }
            let dk = d.per_tier[k].delay.unwrap().value();
            assert!((dk - sum).abs() < 1e-6 * dk, "tier {k}: {dk} vs {sum} (A = {a})");
        }
    }
}
