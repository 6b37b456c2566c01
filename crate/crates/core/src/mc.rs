//! Monte Carlo simulation of the network model.
//!
//! Each tier is an independent homogeneous PPP around a typical user at the
//! origin, with an independent Bernoulli mark telling whether a BS caches
//! the requested file. The user associates with the marked BS of largest
//! average received power `P_j r^-alpha_j`. The serving BS always
//! transmits; interferers are active independently with probability `a_j`
//! and every link sees unit-mean Rayleigh fading.
//!
//! The default estimators integrate fading and activity out analytically
//! given the geometry (conditional success probability), which has the same
//! mean as raw SIR indicator draws and lower variance.
//! [`estimate_coverage_bernoulli`] draws them explicitly instead.
//!
//! Reproducibility: tier `j` of sample `i` is generated from a ChaCha8
//! stream keyed by `(seed, j)` with stream number `i`, so estimates do not
//! depend on the number of worker threads.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelError, NetworkConfig};
use crate::quadrature::{integrate_semi_infinite_scaled, Tolerance};

/// Generator used for all sampling.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha); key = SplitMix64(seed, tier), stream = sample index";

/// Maximum tolerated fraction of realizations without a reachable BS.
pub const MAX_DISCARD_FRACTION: f64 = 0.01;

/// Probability that the nearest caching BS of the sparsest tier lies
/// beyond half the default window.
const WINDOW_ESCAPE_PROBABILITY: f64 = 1e-4;

const FADING_STREAM_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("file {file} is not cached in any tier")]
    FileUncached { file: usize },
    #[error("window too small: {discarded} of {requested} realizations had no BS caching the file")]
    WindowTooSmall { discarded: usize, requested: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStation {
    /// Distance from the typical user.
    pub distance: f64,
    pub angle: f64,
    pub caches_target_file: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRealization {
    /// Per tier, BSs in increasing distance order.
    pub tiers: Vec<Vec<BaseStation>>,
    pub window_radius: f64,
    pub seed: u64,
    /// Sample index within the seed's sequence.
    pub stream: u64,
}

/// The serving BS picked by max average received power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationOutcome {
    pub tier: usize,
    /// Index within `NetworkRealization::tiers[tier]`.
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    pub samples_used: usize,
    pub samples_discarded: usize,
    /// Top 1% of samples carry more than half the sum (delay only).
    pub heavy_tail_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub num_samples: usize,
    /// `None` selects [`default_window_radius`].
    pub window_radius: Option<f64>,
    pub seed: u64,
    /// Index of the first sample; disjoint ranges give independent
    /// estimates under one seed.
    pub first_sample: u64,
    /// Account for BSs beyond the window by their expected contribution.
    pub far_field_correction: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            num_samples: 100_000,
            window_radius: None,
            seed: 0,
            first_sample: 0,
            far_field_correction: true,
        }
    }
}

impl McOptions {
    pub fn with_samples(num_samples: usize, seed: u64) -> Self {
        Self { num_samples, seed, ..Self::default() }
    }
}

/// Coverage and delay estimated from one set of realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub coverage: McEstimate,
    pub delay: McEstimate,
    pub window_radius: f64,
    pub seed: u64,
    pub rng_algorithm: &'static str,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, key: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ key.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(stream);
    rng
}

fn check_query(config: &NetworkConfig, file: usize) -> Result<(), McError> {
    config.check_file(file)?;
    if !config.is_cached(file)? {
        return Err(McError::FileUncached { file });
    }
    Ok(())
}

/// Window radius such that the nearest caching BS of the sparsest caching
/// tier lies beyond half the radius with probability below 1e-4.
pub fn default_window_radius(config: &NetworkConfig, file: usize) -> Result<f64, McError> {
    check_query(config, file)?;
    let min_density = (0..config.num_tiers())
        .map(|j| config.thinned_density(j, file))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    // exp(-pi d R^2 / 4) = escape probability
    Ok((-4.0 * WINDOW_ESCAPE_PROBABILITY.ln() / (PI * min_density)).sqrt())
}

fn fill_realization(
    config: &NetworkConfig,
    file: usize,
    window_radius: f64,
    seed: u64,
    stream: u64,
    out: &mut NetworkRealization,
) {
    out.window_radius = window_radius;
    out.seed = seed;
    out.stream = stream;
    out.tiers.resize_with(config.num_tiers(), Vec::new);
    for (j, (tier, points)) in config.tiers().iter().zip(out.tiers.iter_mut()).enumerate() {
        points.clear();
        let mut rng = stream_rng(seed, j as u64, stream);
        let p = tier.caching_probs[file];
        let rate = PI * tier.density;
        // Successive pi*lambda*r^2 values form a unit-rate Poisson process.
        let mut area = 0.0;
        loop {
            area += rng.sample::<f64, _>(Exp1);
            let distance = (area / rate).sqrt();
            if distance > window_radius {
                break;
            }
            let angle = 2.0 * PI * rng.random::<f64>();
            let caches_target_file = rng.random::<f64>() < p;
            points.push(BaseStation { distance, angle, caches_target_file });
        }
    }
}

/// Samples one network snapshot inside a disk of radius `window_radius`.
/// Fully determined by `seed`.
pub fn sample_network(
    config: &NetworkConfig,
    file: usize,
    window_radius: f64,
    seed: u64,
) -> Result<NetworkRealization, McError> {
    sample_network_stream(config, file, window_radius, seed, 0)
}

/// Sample `stream` of the sequence generated by `seed`.
pub fn sample_network_stream(
    config: &NetworkConfig,
    file: usize,
    window_radius: f64,
    seed: u64,
    stream: u64,
) -> Result<NetworkRealization, McError> {
    config.check_file(file)?;
    if !(window_radius > 0.0 && window_radius.is_finite()) {
        return Err(McError::InvalidArgument(format!("window radius must be positive, got {window_radius}")));
    }
    let mut out = NetworkRealization { tiers: Vec::new(), window_radius, seed, stream };
    fill_realization(config, file, window_radius, seed, stream, &mut out);
    Ok(out)
}

/// Picks the marked BS maximizing `P_j r^-alpha_j`; ties go to the smaller
/// distance, then the lower tier. `None` when no BS in the window caches
/// the file.
pub fn associate(realization: &NetworkRealization, config: &NetworkConfig) -> Option<AssociationOutcome> {
    let mut best: Option<(f64, AssociationOutcome)> = None;
    for (j, (points, tier)) in realization.tiers.iter().zip(config.tiers()).enumerate() {
        // Within a tier the nearest marked BS is the strongest.
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(_, bs)| bs.caches_target_file)
            .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance));
        let Some((index, bs)) = nearest else {
            continue;
        };
        let log_power = tier.tx_power.ln() - tier.pathloss_exponent * bs.distance.ln();
        let candidate = AssociationOutcome { tier: j, index, distance: bs.distance };
        best = match best {
            None => Some((log_power, candidate)),
            Some((lp, cur)) => {
                if log_power > lp || (log_power == lp && candidate.distance < cur.distance) {
                    Some((log_power, candidate))
                } else {
                    Some((lp, cur))
                }
            }
        };
    }
    best.map(|(_, outcome)| outcome)
}

/// `P(SIR > tau | geometry)` with fading and interferer activity averaged
/// out: the product over all non-serving BSs of
/// `a_j / (1 + tau (P_j / P_k) x^alpha_k r^-alpha_j) + 1 - a_j`.
pub fn conditional_success_probability(
    realization: &NetworkRealization,
    association: &AssociationOutcome,
    config: &NetworkConfig,
    tau: f64,
) -> f64 {
    let tiers = config.tiers();
    let serving = &tiers[association.tier];
    let reach = tau * association.distance.powf(serving.pathloss_exponent) / serving.tx_power;
    let mut prob = 1.0;
    for (j, (points, tier)) in realization.tiers.iter().zip(tiers).enumerate() {
        let a = tier.activity_prob;
        if a == 0.0 {
            continue;
        }
        let c = reach * tier.tx_power;
        let alpha = tier.pathloss_exponent;
        for (i, bs) in points.iter().enumerate() {
            if j == association.tier && i == association.index {
                continue;
            }
            let s = c * bs.distance.powf(-alpha);
            prob *= a / (1.0 + s) + (1.0 - a);
        }
    }
    prob
}

/// `int_R^inf s / (1 + b s) 2 pi y dy` with `s = c y^-alpha`.
fn annulus_integral(c: f64, alpha: f64, b: f64, radius: f64) -> f64 {
    let z = c * radius.powf(-alpha);
    if b * z <= 0.5 {
        let mut sum = 0.0;
        let mut power = z;
        for i in 0..200 {
            let n = (i + 1) as f64;
            let term = power / (n * alpha - 2.0);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            power *= -b * z;
        }
        2.0 * PI * radius * radius * sum
    } else {
        let f = |y: f64| {
            let s = c * y.powf(-alpha);
            2.0 * PI * y * s / (1.0 + b * s)
        };
        integrate_semi_infinite_scaled(f, radius, radius, &Tolerance::default().with_max_evals(50_000))
            .map(|r| r.value)
            .unwrap_or(f64::INFINITY)
    }
}

/// Expected log-contribution of BSs outside the window: `(coverage, delay)`
/// where the coverage factor is `exp(coverage)` and the delay factor is
/// `exp(delay)`.
fn far_field_log_factors(
    config: &NetworkConfig,
    association: &AssociationOutcome,
    tau: f64,
    radius: f64,
) -> (f64, f64) {
    let tiers = config.tiers();
    let serving = &tiers[association.tier];
    let reach = tau * association.distance.powf(serving.pathloss_exponent) / serving.tx_power;
    let mut cov = 0.0;
    let mut del = 0.0;
    for tier in tiers {
        let a = tier.activity_prob;
        if a == 0.0 {
            continue;
        }
        let c = reach * tier.tx_power;
        let alpha = tier.pathloss_exponent;
        cov -= tier.density * a * annulus_integral(c, alpha, 1.0, radius);
        del += tier.density * a * annulus_integral(c, alpha, 1.0 - a, radius);
    }
    (cov, del)
}

/// Per-sample `(coverage sample, delay sample)`.
fn rao_blackwell_sample(
    config: &NetworkConfig,
    realization: &NetworkRealization,
    tau: f64,
    far_field: bool,
) -> Option<(f64, f64)> {
    let serving = associate(realization, config)?;
    let p = conditional_success_probability(realization, &serving, config, tau);
    if far_field {
        let (cov, del) = far_field_log_factors(config, &serving, tau, realization.window_radius);
        Some((p * cov.exp(), del.exp() / p))
    } else {
        Some((p, 1.0 / p))
    }
}

fn bernoulli_sample(
    config: &NetworkConfig,
    realization: &NetworkRealization,
    tau: f64,
    far_field: bool,
) -> Option<f64> {
    let serving = associate(realization, config)?;
    let tiers = config.tiers();
    let mut rng = stream_rng(realization.seed, FADING_STREAM_KEY, realization.stream);
    let serving_tier = &tiers[serving.tier];
    let signal_fading: f64 = rng.sample(Exp1);
    let mut interference = 0.0;
    for (j, (points, tier)) in realization.tiers.iter().zip(tiers).enumerate() {
        for (i, bs) in points.iter().enumerate() {
            if j == serving.tier && i == serving.index {
                continue;
            }
            let active = rng.random::<f64>() < tier.activity_prob;
            let fading: f64 = rng.sample(Exp1);
            if active {
                interference += tier.tx_power * fading * bs.distance.powf(-tier.pathloss_exponent);
            }
        }
    }
    let signal = serving_tier.tx_power * signal_fading * serving.distance.powf(-serving_tier.pathloss_exponent);
    // Zero interference means infinite SIR.
    let mut success = interference == 0.0 || signal > tau * interference;
    if far_field {
        let (cov, _) = far_field_log_factors(config, &serving, tau, realization.window_radius);
        success &= rng.random::<f64>() < cov.exp();
    }
    Some(if success { 1.0 } else { 0.0 })
}

fn validate_options(config: &NetworkConfig, file: usize, tau: f64, opts: &McOptions) -> Result<f64, McError> {
    check_query(config, file)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ModelError::InvalidThreshold(tau).into());
    }
    if opts.num_samples == 0 {
        return Err(McError::InvalidArgument("num_samples must be at least 1".into()));
    }
    match opts.window_radius {
        Some(r) if !(r > 0.0 && r.is_finite()) => {
            Err(McError::InvalidArgument(format!("window radius must be positive, got {r}")))
        }
        Some(r) => Ok(r),
        None => default_window_radius(config, file),
    }
}

/// Evaluates `sample` on every realization, in index order.
fn collect_samples<T, F>(
    config: &NetworkConfig,
    file: usize,
    radius: f64,
    opts: &McOptions,
    sample: F,
) -> Vec<Option<T>>
where
    T: Send,
    F: Fn(&NetworkRealization) -> Option<T> + Sync,
{
    let start = opts.first_sample;
    (0..opts.num_samples as u64)
        .into_par_iter()
        .map_init(
            || NetworkRealization { tiers: Vec::new(), window_radius: radius, seed: opts.seed, stream: 0 },
            |buf, i| {
                fill_realization(config, file, radius, opts.seed, start + i, buf);
                sample(buf)
            },
        )
        .collect()
}

fn summarize(values: &[f64], requested: usize, with_tail_check: bool) -> McEstimate {
    let n = values.len();
    let discarded = requested - n;
    if n == 0 {
        return McEstimate {
            mean: f64::NAN,
            std_error: f64::INFINITY,
            ci95_lo: f64::NEG_INFINITY,
            ci95_hi: f64::INFINITY,
            samples_used: 0,
            samples_discarded: discarded,
            heavy_tail_flag: false,
        };
    }
    let sum: f64 = values.iter().sum();
    let mean = sum / n as f64;
    let std_error = if !mean.is_finite() {
        f64::INFINITY
    } else if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    let heavy_tail_flag = with_tail_check && heavy_tail(values, sum);
    let half_width = 1.959_963_984_540_054 * std_error;
    McEstimate {
        mean,
        std_error,
        ci95_lo: (mean - half_width).min(mean),
        ci95_hi: (mean + half_width).max(mean),
        samples_used: n,
        samples_discarded: discarded,
        heavy_tail_flag,
    }
}

fn heavy_tail(values: &[f64], sum: f64) -> bool {
    if !sum.is_finite() {
        return true;
    }
    let top = values.len().div_ceil(100);
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let top_sum: f64 = sorted[..top].iter().sum();
    top_sum > 0.5 * sum
}

fn check_discards(discarded: usize, requested: usize) -> Result<(), McError> {
    if discarded as f64 > MAX_DISCARD_FRACTION * requested as f64 {
        Err(McError::WindowTooSmall { discarded, requested })
    } else {
        Ok(())
    }
}

/// Estimates coverage and delay for `file` at linear threshold `tau` from
/// one set of realizations.
pub fn simulate(
    config: &NetworkConfig,
    file: usize,
    tau: f64,
    opts: &McOptions,
) -> Result<SimulationSummary, McError> {
    let radius = validate_options(config, file, tau, opts)?;
    let samples = collect_samples(config, file, radius, opts, |r| {
        rao_blackwell_sample(config, r, tau, opts.far_field_correction)
    });
    let (cov, del): (Vec<f64>, Vec<f64>) = samples.into_iter().flatten().unzip();
    let discarded = opts.num_samples - cov.len();
    check_discards(discarded, opts.num_samples)?;
    Ok(SimulationSummary {
        coverage: summarize(&cov, opts.num_samples, false),
        delay: summarize(&del, opts.num_samples, true),
        window_radius: radius,
        seed: opts.seed,
        rng_algorithm: RNG_ALGORITHM,
    })
}

/// Coverage probability estimate (mean conditional success probability).
pub fn estimate_coverage(
    config: &NetworkConfig,
    file: usize,
    tau: f64,
    opts: &McOptions,
) -> Result<McEstimate, McError> {
    simulate(config, file, tau, opts).map(|s| s.coverage)
}

/// Local delay estimate (mean reciprocal conditional success probability).
pub fn estimate_delay(
    config: &NetworkConfig,
    file: usize,
    tau: f64,
    opts: &McOptions,
) -> Result<McEstimate, McError> {
    simulate(config, file, tau, opts).map(|s| s.delay)
}

/// Coverage estimate from explicit fading and activity draws: the mean of
/// the indicator `SIR > tau`.
pub fn estimate_coverage_bernoulli(
    config: &NetworkConfig,
    file: usize,
    tau: f64,
    opts: &McOptions,
) -> Result<McEstimate, McError> {
    let radius = validate_options(config, file, tau, opts)?;
    let samples = collect_samples(config, file, radius, opts, |r| {
        bernoulli_sample(config, r, tau, opts.far_field_correction)
    });
    let values: Vec<f64> = samples.into_iter().flatten().collect();
    check_discards(opts.num_samples - values.len(), opts.num_samples)?;
    Ok(summarize(&values, opts.num_samples, false))
}
