//! Differentially private counting analytics over member action events.
//!
//! Queries of the form "count of `stat` for `entity` where `attr = value`
//! during `[start, end)`" are answered by splitting the range into calendar
//! units, adding fixed pseudorandom Laplace noise to each unit's count and
//! post-processing the sum (clamping, small-count suppression, entity
//! hierarchy consistency, consistent top-k).

pub mod engine;
pub mod harness;
pub mod noise;
pub mod store;
pub mod timegrid;

pub use engine::{
    canonical_noisy_count, compute_noisy_count, compute_total, privacy_loss_bound, top_k, BudgetDims,
    EngineError, NoisyAnswer, PrivacyParams, RankedValue, TopK,
};
pub use noise::{
    canonical_key, laplace_inverse_cdf, pseudorand_frac, pseudorandom_laplace_noise, CanonicalQuery,
    NoiseError, NoiseParams, NoiseSource, Secret, StatType, UnitFraction,
};
pub use store::{ActionEvent, AggregatedRow, EntityHierarchy, IngestReport, Store, StoreError};
pub use timegrid::{
    format_instant, is_atomic, minimal_partition, parse_instant, truncate_to_completed, AtomicTimeRange,
    Instant, Level, TimeError, TimeHierarchy, TimeRange,
};
