#![allow(dead_code)]

use chn_core::model::{validate_network, NetworkConfig, RawNetworkConfig, TierConfig};
use proptest::prelude::*;

pub fn tier(density: f64, tx_power: f64, alpha: f64, activity: f64, probs: &[f64]) -> TierConfig {
    TierConfig {
        density,
        tx_power,
        pathloss_exponent: alpha,
        activity_prob: activity,
        caching_probs: probs.to_vec(),
        cache_size: probs.iter().sum(),
    }
}

pub fn network(tiers: Vec<TierConfig>) -> NetworkConfig {
    let num_files = tiers[0].caching_probs.len();
    validate_network(RawNetworkConfig { tiers, num_files }).expect("test config must validate")
}

pub fn single_tier(p: f64, activity: f64) -> NetworkConfig {
    network(vec![tier(1.0, 1.0, 4.0, activity, &[p, 1.0 - p])])
}

/// Two-tier setup with tier 2 at 1/100 of tier 1's power.
pub fn two_tier(p1: &[f64], p2: &[f64], activity: f64, density_ratio: f64) -> NetworkConfig {
    network(vec![
        tier(1.0, 10.0, 4.0, activity, p1),
        tier(density_ratio, 0.1, 4.0, activity, p2),
    ])
}

pub fn identical_placement(activity: f64, density_ratio: f64) -> NetworkConfig {
    two_tier(&[0.2, 0.8], &[0.2, 0.8], activity, density_ratio)
}

pub fn different_placement(activity: f64, density_ratio: f64) -> NetworkConfig {
    two_tier(&[0.5, 0.5], &[0.2, 0.8], activity, density_ratio)
}

pub fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

prop_compose! {
    fn tier_strategy(num_files: usize, alpha: Option<f64>)(
        density in 0.05f64..5.0,
        log_power in -2.0f64..2.0,
        free_alpha in 2.5f64..5.0,
        activity in 0.0f64..=1.0,
        probs in prop::collection::vec(0.0f64..=1.0, num_files),
    ) -> TierConfig {
        tier(density, 10f64.powf(log_power), alpha.unwrap_or(free_alpha), activity, &probs)
    }
}

/// Random valid networks with K in 1..=3 and M in 1..=3; file 0 is cached
/// in tier 0 with probability at least 0.05.
pub fn network_strategy(equal_alpha: bool) -> impl Strategy<Value = NetworkConfig> {
    (1usize..=3, 1usize..=3, 2.5f64..5.0, 0.05f64..=1.0).prop_flat_map(move |(k, m, alpha, p0)| {
        let alpha = equal_alpha.then_some(alpha);
        prop::collection::vec(tier_strategy(m, alpha), k).prop_map(move |mut tiers| {
            tiers[0].caching_probs[0] = p0;
            for t in &mut tiers {
                if t.caching_probs.iter().sum::<f64>() <= 0.0 {
                    t.caching_probs[0] = 0.5;
                }
                t.cache_size = t.caching_probs.iter().sum();
            }
            network(tiers)
        })
    })
}
