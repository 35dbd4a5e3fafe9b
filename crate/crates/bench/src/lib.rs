//! Fixtures shared by the benchmarks.

use pprl_core::{
    parse_instant, ActionEvent, Level, NoiseParams, PrivacyParams, Secret, StatType, Store, TimeHierarchy,
    TimeRange,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const DAY: i64 = 86_400;

pub fn origin() -> i64 {
    parse_instant("2018-01-01T00:00:00Z").unwrap()
}

pub fn params(epsilon: f64) -> PrivacyParams {
    let secret = Secret::new(b"benchmark-secret-0123456789abcdef".to_vec()).unwrap();
    PrivacyParams::new(
        NoiseParams::new(secret, epsilon).unwrap(),
        TimeHierarchy::default(),
    )
}

/// Two years of click events for `entities` creatives over `values` titles.
pub fn store(entities: usize, values: usize, events: usize) -> Store {
    let mut rng = StdRng::seed_from_u64(11);
    let mut store = Store::new(Level::Epoch3h);
    for _ in 0..events {
        store
            .add(&ActionEvent {
                timestamp: origin() + rng.random_range(0..730 * DAY),
                stat: StatType::Click,
                entity: format!("cr{}", rng.random_range(0..entities)),
                attr: "title".into(),
                value: format!("t{}", rng.random_range(0..values)),
                count: 1,
            })
            .unwrap();
    }
    store
}

/// Ranges from a few epochs to two years, all epoch aligned.
pub fn ranges(n: usize) -> Vec<TimeRange> {
    let mut rng = StdRng::seed_from_u64(12);
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..730 * 8);
            let e = rng.random_range(s + 1..=730 * 8);
            TimeRange::new(origin() + s * 10_800, origin() + e * 10_800).unwrap()
        })
        .collect()
}
