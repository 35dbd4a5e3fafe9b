//! Reference computations for tests, written without using `pprl-core` so
//! they can check it.
//!
//! Everything here favours obviousness over speed: HMAC is assembled from
//! the raw SHA-256 primitive, calendar atomicity is decided from date
//! components, and minimal partitions come from a shortest-path search over
//! every atomic range rather than a greedy walk.

use chrono::{DateTime, Datelike, Months, NaiveDateTime, Timelike};
use sha2::{Digest, Sha256};

const BLOCK: usize = 64;

/// HMAC-SHA256 per RFC 2104.
pub fn hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut k = [0u8; BLOCK];
    if key.len() > BLOCK {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(message).finalize();
    let outer = Sha256::new().chain_update(&opad).chain_update(inner).finalize();
    outer.into()
}

pub fn canonical_key(stat: &str, entity: &str, attr: &str, value: &str, start: i64, end: i64) -> Vec<u8> {
    format!("{stat}\u{1f}{entity}\u{1f}{attr}\u{1f}{value}\u{1f}{start}\u{1f}{end}").into_bytes()
}

/// `(u + 0.5) / 2^64` from the first eight digest bytes, in plain `f64`.
pub fn fraction(secret: &[u8], key: &[u8]) -> f64 {
    let d = hmac_sha256(secret, key);
    let u = u64::from_be_bytes(d[..8].try_into().unwrap());
    (u as f64 + 0.5) / 2f64.powi(64)
}

pub fn laplace(p: f64, epsilon: f64) -> f64 {
    let d = p - 0.5;
    let sgn = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    -1.0 / epsilon * sgn * (1.0 - 2.0 * d.abs()).ln()
}

pub fn round_half_away(x: f64) -> i64 {
    let r = x.abs().floor() + if x.abs().fract() >= 0.5 { 1.0 } else { 0.0 };
    (r * x.signum()) as i64
}

/// Full pipeline for one canonical query: noise added to `true_count`, clamped at 0.
#[allow(clippy::too_many_arguments)]
pub fn canonical_noisy(
    secret: &[u8],
    epsilon: f64,
    stat: &str,
    entity: &str,
    attr: &str,
    value: &str,
    start: i64,
    end: i64,
    true_count: u64,
) -> u64 {
    let p = fraction(secret, &canonical_key(stat, entity, attr, value, start, end));
    let noise = round_half_away(laplace(p, epsilon));
    (true_count as i64 + noise).max(0) as u64
}

fn datetime(t: i64) -> NaiveDateTime {
    DateTime::from_timestamp(t, 0).unwrap().naive_utc()
}

fn midnight(dt: &NaiveDateTime) -> bool {
    dt.hour() == 0 && dt.minute() == 0 && dt.second() == 0
}

fn plus_months(dt: NaiveDateTime, n: u32) -> i64 {
    dt.checked_add_months(Months::new(n))
        .unwrap()
        .and_utc()
        .timestamp()
}

/// Whether `[start, end)` is exactly one unit of the named level.
pub fn is_unit(level: &str, start: i64, end: i64) -> bool {
    let s = datetime(start);
    match level {
        "epoch3h" => s.minute() == 0 && s.second() == 0 && s.hour().is_multiple_of(3) && end - start == 3 * 3600,
        "day" => midnight(&s) && end - start == 86_400,
        "month" => midnight(&s) && s.day() == 1 && plus_months(s, 1) == end,
        "quarter" => midnight(&s) && s.day() == 1 && s.month0().is_multiple_of(3) && plus_months(s, 3) == end,
        "year" => midnight(&s) && s.day() == 1 && s.month() == 1 && plus_months(s, 12) == end,
        other => panic!("unknown level {other}"),
    }
}

/// Shortest-path search over atomic ranges between fixed boundaries.
pub struct PartitionOracle {
    boundaries: Vec<i64>,
    /// `edges[i]` lists `j > i` such that `[b_i, b_j)` is atomic.
    edges: Vec<Vec<usize>>,
}

impl PartitionOracle {
    /// Boundaries every `step` seconds over `[from, to]`.
    pub fn new(levels: &[&str], from: i64, to: i64, step: i64) -> Self {
        let boundaries: Vec<i64> = (0..).map(|i| from + i * step).take_while(|t| *t <= to).collect();
        let index = |t: i64| -> Option<usize> {
            let off = t - from;
            (off >= 0 && off % step == 0 && off / step < boundaries.len() as i64)
                .then(|| (off / step) as usize)
        };
        // Candidate unit ends from each boundary: one unit of each level.
        let mut edges = vec![Vec::new(); boundaries.len()];
        for (i, &b) in boundaries.iter().enumerate() {
            let s = datetime(b);
            let candidates = [
                b + 3 * 3600,
                b + 86_400,
                plus_months(s, 1),
                plus_months(s, 3),
                plus_months(s, 12),
            ];
            for end in candidates {
                if let Some(j) = index(end) {
                    if levels.iter().any(|l| is_unit(l, b, end)) && !edges[i].contains(&j) {
                        edges[i].push(j);
                    }
                }
            }
        }
        Self { boundaries, edges }
    }

    pub fn boundaries(&self) -> &[i64] {
        &self.boundaries
    }

    /// Minimum number of atomic ranges from boundary `i` to every later boundary.
    pub fn min_counts_from(&self, i: usize) -> Vec<Option<u32>> {
        let mut best: Vec<Option<u32>> = vec![None; self.boundaries.len()];
        best[i] = Some(0);
        for k in i..self.boundaries.len() {
            let Some(here) = best[k] else { continue };
            for &j in &self.edges[k] {
                if best[j].is_none_or(|b| here + 1 < b) {
                    best[j] = Some(here + 1);
                }
            }
        }
        best
    }

    /// One minimum partition of `[b_i, b_j)` as `(start, end)` pairs.
    pub fn min_partition(&self, i: usize, j: usize) -> Option<Vec<(i64, i64)>> {
        let n = self.boundaries.len();
        let mut best: Vec<Option<(u32, usize)>> = vec![None; n];
        best[i] = Some((0, i));
        for k in i..j {
            let Some((here, _)) = best[k] else { continue };
            for &next in &self.edges[k] {
                if next <= j && best[next].is_none_or(|(b, _)| here + 1 < b) {
                    best[next] = Some((here + 1, k));
                }
            }
        }
        best[j]?;
        let mut path = Vec::new();
        let mut cur = j;
        while cur != i {
            let (_, prev) = best[cur].unwrap();
            path.push((self.boundaries[prev], self.boundaries[cur]));
            cur = prev;
        }
        path.reverse();
        Some(path)
    }

    pub fn index_of(&self, t: i64) -> Option<usize> {
        self.boundaries.binary_search(&t).ok()
    }
}

/// One-sample Kolmogorov–Smirnov test against uniform(0, 1).
/// Returns the statistic `D` and its asymptotic p-value.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let lo = x - i as f64 / n;
        let hi = (i as f64 + 1.0) / n - x;
        d = d.max(lo).max(hi);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
