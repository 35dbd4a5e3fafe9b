//! Deterministic, rounded, pseudorandom Laplace noise keyed by a secret and
//! the canonical query it belongs to.
//!
//! The pipeline is: serialize the query into a canonical key, derive a
//! fraction in (0, 1) from `HMAC-SHA256(secret, key)`, push it through the
//! Laplace inverse CDF and round half away from zero. Equal inputs give equal
//! noise in every process, so repeating a query cannot average the noise out.

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::timegrid::AtomicTimeRange;

/// Field separator inside canonical keys. Query fields may not contain it.
pub const SEPARATOR: u8 = 0x1F;

/// Event-level sensitivity of a counting query.
pub const SENSITIVITY: f64 = 1.0;

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;
const TWO_POW_65: f64 = 36_893_488_147_419_103_232.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("field `{field}` contains the reserved separator byte 0x1F")]
    ReservedByte { field: &'static str },
    #[error("epsilon must be a positive finite number, got {0}")]
    BadEpsilon(f64),
    #[error("secret must not be empty")]
    EmptySecret,
    #[error("secret is not valid hex")]
    BadSecretHex,
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    ProbabilityDomain(f64),
    #[error("unknown stat type `{0}` (expected impression, click or conversion)")]
    UnknownStatType(String),
}

/// The action metric being counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatType {
    Impression,
    Click,
    Conversion,
}

impl StatType {
    pub const ALL: [StatType; 3] = [StatType::Impression, StatType::Click, StatType::Conversion];

    pub fn as_str(self) -> &'static str {
        match self {
            StatType::Impression => "impression",
            StatType::Click => "click",
            StatType::Conversion => "conversion",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<StatType> {
        StatType::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for StatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatType {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StatType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| NoiseError::UnknownStatType(s.to_string()))
    }
}

/// Rejects strings that would break the injectivity of canonical keys.
pub fn check_field(field: &'static str, value: &str) -> Result<(), NoiseError> {
    if value.as_bytes().contains(&SEPARATOR) {
        Err(NoiseError::ReservedByte { field })
    } else {
        Ok(())
    }
}

/// One counting question over a single atomic time range; the unit that
/// receives exactly one noise value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanonicalQuery<'a> {
    pub stat: StatType,
    pub entity: &'a str,
    pub attr: &'a str,
    pub value: &'a str,
    pub range: AtomicTimeRange,
}

impl CanonicalQuery<'_> {
    pub fn validate(&self) -> Result<(), NoiseError> {
        check_field("entity", self.entity)?;
        check_field("attr", self.attr)?;
        check_field("value", self.value)
    }
}

/// `stat ␟ entity ␟ attr ␟ value ␟ start ␟ end`, instants in decimal seconds.
pub fn canonical_key(q: &CanonicalQuery<'_>) -> Result<Vec<u8>, NoiseError> {
    q.validate()?;
    let start = q.range.start().to_string();
    let end = q.range.end().to_string();
    let fields: [&[u8]; 6] = [
        q.stat.as_str().as_bytes(),
        q.entity.as_bytes(),
        q.attr.as_bytes(),
        q.value.as_bytes(),
        start.as_bytes(),
        end.as_bytes(),
    ];
    let mut key = Vec::with_capacity(fields.iter().map(|f| f.len() + 1).sum());
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            key.push(SEPARATOR);
        }
        key.extend_from_slice(field);
    }
    Ok(key)
}

/// Secret HMAC key. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(Vec<u8>);

impl Secret {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, NoiseError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(NoiseError::EmptySecret);
        }
        Ok(Self(bytes))
    }

    pub fn from_hex(hex_str: &str) -> Result<Self, NoiseError> {
        let bytes = hex::decode(hex_str.trim()).map_err(|_| NoiseError::BadSecretHex)?;
        Self::new(bytes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret(<{} bytes redacted>)", self.0.len())
    }
}

/// The fraction `(u + 0.5) / 2^64` for a 64-bit integer `u`.
///
/// Kept as the integer so the inverse CDF can be evaluated without the
/// rounding an `f64` of `p` would introduce near 0, 0.5 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitFraction(u64);

impl UnitFraction {
    pub fn from_bits(u: u64) -> Self {
        Self(u)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `p` as an `f64`, kept strictly below 1 when rounding would reach it.
    pub fn value(self) -> f64 {
        let p = (self.0 as f64 + 0.5) / TWO_POW_64;
        p.min(1.0 - f64::EPSILON / 2.0)
    }

    /// `2u + 1 - 2^64`, i.e. `2^65 · (p − 0.5)`. Odd, never zero.
    fn twice_offset(self) -> i128 {
        2 * self.0 as i128 + 1 - (1i128 << 64)
    }

    /// `p − 0.5`, exact whenever `|2u + 1 − 2^64| < 2^53`.
    pub fn centered(self) -> f64 {
        self.twice_offset() as f64 / TWO_POW_65
    }

    /// `−1/ε · sgn(p − 0.5) · ln(1 − 2|p − 0.5|)` evaluated from the integer form.
    pub fn laplace(self, epsilon: f64) -> f64 {
        let offset = self.twice_offset();
        // 1 - 2|p - 0.5| = (2^64 - m) / 2^64 with m = |2u + 1 - 2^64|, 1 <= 2^64 - m.
        let m = offset.unsigned_abs();
        let log_tail = if m <= 1u128 << 63 {
            (-(m as f64) / TWO_POW_64).ln_1p()
        } else {
            (((1u128 << 64) - m) as f64 / TWO_POW_64).ln()
        };
        let sign = if offset > 0 { 1.0 } else { -1.0 };
        -(SENSITIVITY / epsilon) * sign * log_tail
    }
}

/// `HMAC-SHA256(secret, key)`, first 8 bytes big-endian as `u`, scaled to `(u + 0.5) / 2^64`.
pub fn pseudorand_frac(secret: &Secret, key: &[u8]) -> UnitFraction {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(secret.as_bytes())
        .expect("HMAC accepts keys of any length");
    mac.update(key);
    let digest = mac.finalize().into_bytes();
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest[..8]);
    UnitFraction(u64::from_be_bytes(prefix))
}

/// Inverse CDF of the zero-mean Laplace distribution with scale `1/ε`.
pub fn laplace_inverse_cdf(p: f64, epsilon: f64) -> Result<f64, NoiseError> {
    check_epsilon(epsilon)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(NoiseError::ProbabilityDomain(p));
    }
    let d = p - 0.5;
    Ok(-(SENSITIVITY / epsilon) * d.signum() * (-2.0 * d.abs()).ln_1p())
}

fn check_epsilon(epsilon: f64) -> Result<(), NoiseError> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(NoiseError::BadEpsilon(epsilon))
    }
}

/// Rounds to the nearest integer, ties away from zero.
pub fn round_noise(x: f64) -> i64 {
    x.round() as i64
}

/// The secret and per-canonical-query privacy parameter.
#[derive(Debug, Clone)]
pub struct NoiseParams {
    secret: Secret,
    epsilon: f64,
}

impl NoiseParams {
    pub fn new(secret: Secret, epsilon: f64) -> Result<Self, NoiseError> {
        check_epsilon(epsilon)?;
        Ok(Self { secret, epsilon })
    }

    pub fn secret(&self) -> &Secret {
        &self.secret
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, NoiseError> {
        Self::new(self.secret.clone(), epsilon)
    }

    /// Unrounded noise for `q`.
    pub fn raw_noise(&self, q: &CanonicalQuery<'_>) -> Result<f64, NoiseError> {
        let key = canonical_key(q)?;
        Ok(pseudorand_frac(&self.secret, &key).laplace(self.epsilon))
    }
}

/// Source of the integer noise added to each canonical query.
pub trait NoiseSource {
    fn noise(&self, q: &CanonicalQuery<'_>) -> Result<i64, NoiseError>;
}

impl NoiseSource for NoiseParams {
    fn noise(&self, q: &CanonicalQuery<'_>) -> Result<i64, NoiseError> {
        pseudorandom_laplace_noise(self, q)
    }
}

impl<N: NoiseSource + ?Sized> NoiseSource for &N {
    fn noise(&self, q: &CanonicalQuery<'_>) -> Result<i64, NoiseError> {
        (**self).noise(q)
    }
}

/// Fixed rounded Laplace noise for one canonical query.
pub fn pseudorandom_laplace_noise(params: &NoiseParams, q: &CanonicalQuery<'_>) -> Result<i64, NoiseError> {
    Ok(round_noise(params.raw_noise(q)?))
}
