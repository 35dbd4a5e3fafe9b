//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. A criterion whose failure matches a documented, analysed gap is
//! reported as FAIL but does not fail the process; any other failure does.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant as Clock};

use pprl_core::harness::{
    error_run, generate_synthetic, run_experiment, topn_distances, ExperimentConfig, ExperimentName,
    SyntheticData, SyntheticSpec, DEFAULT_EPSILONS, THRESHOLD_EPSILONS, TOPN_EPSILONS,
};
use pprl_core::{
    canonical_key, compute_noisy_count, format_instant, minimal_partition, parse_instant, privacy_loss_bound,
    pseudorand_frac, top_k, ActionEvent, AtomicTimeRange, BudgetDims, CanonicalQuery, Instant, Level,
    NoiseParams, PrivacyParams, Secret, StatType, Store, TimeHierarchy, TimeRange,
};
use pprl_oracle::PartitionOracle;
use pprl_service::{dispatch, router, secret_from_hex, AppState, Method, ServiceConfig, StatusCode};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};

const SECRET_HEX: &str = "616363657074616e63652d73756974652d7365637265742d3332627974657321";
const EPOCH: i64 = 3 * 3600;
const DAY: i64 = 86_400;
const LEVELS: [&str; 5] = ["epoch3h", "day", "month", "quarter", "year"];

enum Verdict {
    Pass(String),
    Fail(String),
    /// Failed exactly as the recorded analysis predicts.
    KnownGap(String),
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(u32, &str, Check, Duration); 11] = [
        (1, "determinism across restarts", c1_determinism, secs(10)),
        (2, "noise uniformity and moments", c2_noise, secs(30)),
        (3, "error by epsilon", c3_epsilon_sweep, secs(120)),
        (4, "error concentration", c4_concentration, secs(60)),
        (5, "threshold trends", c5_threshold, secs(120)),
        (6, "top-n Jaccard trends", c6_topn, secs(120)),
        (7, "partition minimality", c7_partition, secs(120)),
        (8, "budget bound", c8_budget, secs(1)),
        (9, "parent equals sum of children", c9_entity_sums, secs(60)),
        (10, "top-k prefix property", c10_prefix, secs(60)),
        (11, "service matches flat oracle", c11_oracle, secs(60)),
    ];

    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut unexpected = 0;
    for (id, name, check, limit) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let started = Clock::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let verdict = match verdict {
            Verdict::Pass(d) if elapsed > limit => {
                Verdict::Fail(format!("{d}; exceeded {}s", limit.as_secs()))
            }
            v => v,
        };
        let t = elapsed.as_secs_f64();
        match verdict {
            Verdict::Pass(d) => println!("PASS criterion {id:>2} ({name}): {d} [{t:.2}s]"),
            Verdict::Fail(d) => {
                unexpected += 1;
                println!("FAIL criterion {id:>2} ({name}): {d} [{t:.2}s]");
            }
            Verdict::KnownGap(d) => println!("FAIL criterion {id:>2} ({name}): {d} [{t:.2}s] (known gap)"),
        }
    }
    panic::set_hook(default_hook);
    if unexpected > 0 {
        eprintln!("{unexpected} criterion/criteria failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn verdict(failures: Vec<String>, detail: String) -> Verdict {
    if failures.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{}; {detail}", failures.join("; ")))
    }
}

fn secret() -> Secret {
    secret_from_hex(SECRET_HEX).unwrap()
}

fn at(s: &str) -> Instant {
    parse_instant(s).unwrap()
}

fn base_params(epsilon: f64) -> PrivacyParams {
    PrivacyParams::new(
        NoiseParams::new(secret(), epsilon).unwrap(),
        TimeHierarchy::default(),
    )
}

// ---------------------------------------------------------------------------
// Shared fixtures

struct Synthetic {
    data: SyntheticData,
    store: Store,
}

fn synthetic() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let store = data.to_store().unwrap();
        Synthetic { data, store }
    })
}

const ATTRS: [(&str, u32); 3] = [("function", 8), ("title", 14), ("location", 5)];

/// Random events over 2018 for ten leaf entities; with `nested`, some of them
/// sit under two parent accounts.
fn random_store(seed: u64, nested: bool) -> (Store, Vec<ActionEvent>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = Store::new(Level::Epoch3h);
    if nested {
        store.add_root_entity("acct0", "account").unwrap();
        store.add_root_entity("acct1", "account").unwrap();
        for (parent, child) in [
            ("acct0", "e00"),
            ("acct0", "e01"),
            ("acct1", "e02"),
            ("acct1", "e03"),
            ("acct1", "e04"),
        ] {
            store.add_child_entity(parent, child, "creative").unwrap();
        }
    }
    let year = at("2018-01-01T00:00:00Z");
    let mut events = Vec::new();
    for _ in 0..4000 {
        let (attr, card) = ATTRS[rng.random_range(0..ATTRS.len())];
        let event = ActionEvent {
            timestamp: year + rng.random_range(0..365 * DAY),
            stat: if rng.random_bool(0.8) {
                StatType::Impression
            } else {
                StatType::Click
            },
            entity: format!("e{:02}", rng.random_range(0..10)),
            attr: attr.to_string(),
            // Skewed so value counts differ.
            value: format!(
                "{attr}-{:02}",
                (rng.random_range(0..card * card) as f64).sqrt() as u32
            ),
            count: rng.random_range(1..=5),
        };
        store.add(&event).unwrap();
        events.push(event);
    }
    (store, events)
}

const ENTITIES: [&str; 12] = [
    "acct0", "acct1", "e00", "e01", "e02", "e03", "e04", "e05", "e06", "e07", "e08", "e09",
];

/// Aligned range inside 2018, short or long with equal odds.
fn random_range(rng: &mut StdRng) -> TimeRange {
    let year = at("2018-01-01T00:00:00Z");
    let epochs = 365 * 8;
    let len = if rng.random_bool(0.5) {
        rng.random_range(1..=16)
    } else {
        rng.random_range(1..=epochs)
    };
    let start = rng.random_range(0..=epochs - len);
    TimeRange::new(year + start * EPOCH, year + (start + len) * EPOCH).unwrap()
}

fn count_uri(stat: StatType, entity: &str, attr: &str, value: &str, r: TimeRange) -> String {
    format!(
        "/v1/count?stat={}&entity={entity}&attr={attr}&value={value}&start={}&end={}",
        stat.as_str(),
        format_instant(r.start()),
        format_instant(r.end())
    )
}

// ---------------------------------------------------------------------------
// 1. Byte-identical responses across repeats and process restarts

fn c1_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = random_store(101, true);
    let snapshot = dir.path().join("store.pprl");
    store.save(&snapshot).unwrap();
    let config = dir.path().join("service.toml");
    std::fs::write(
        &config,
        "epsilon = 0.8\ntau = 2\nl = 2\nnow = \"2019-06-01T00:00:00Z\"\n",
    )
    .unwrap();

    let mut rng = StdRng::seed_from_u64(1);
    let mut queries = Vec::new();
    for _ in 0..1000 {
        let entity = ENTITIES.choose(&mut rng).unwrap();
        let (attr, card) = ATTRS[rng.random_range(0..ATTRS.len())];
        let stat = if rng.random_bool(0.8) {
            StatType::Impression
        } else {
            StatType::Click
        };
        let range = random_range(&mut rng);
        if rng.random_bool(0.8) {
            let value = format!("{attr}-{:02}", rng.random_range(0..card));
            queries.push(count_uri(stat, entity, attr, &value, range));
        } else {
            queries.push(format!(
                "/v1/topk?stat={}&entity={entity}&attr={attr}&topK={}&start={}&end={}",
                stat.as_str(),
                rng.random_range(1..=10),
                format_instant(range.start()),
                format_instant(range.end())
            ));
        }
    }
    let requests = dir.path().join("requests.txt");
    let mut body = String::new();
    for q in &queries {
        for _ in 0..5 {
            writeln!(body, "{q}").unwrap();
        }
    }
    std::fs::write(&requests, body).unwrap();

    let run = |snapshot: &Path| -> Vec<String> {
        let out = Command::new(env!("CARGO_BIN_EXE_pprl"))
            .args(["query", "--config"])
            .arg(&config)
            .arg("--snapshot")
            .arg(snapshot)
            .arg("--requests")
            .arg(&requests)
            .env("PPRL_SECRET_HEX", SECRET_HEX)
            .env("RUST_LOG", "warn")
            .output()
            .expect("pprl runs");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect()
    };
    let runs: Vec<Vec<String>> = (0..3).map(|_| run(&snapshot)).collect();

    let mut failures = Vec::new();
    if runs[0].len() != 5000 {
        failures.push(format!("expected 5000 response lines, got {}", runs[0].len()));
    }
    if runs[1] != runs[0] || runs[2] != runs[0] {
        failures.push("responses differ between processes".into());
    }
    for group in runs[0].chunks(5) {
        if group.iter().any(|r| r != &group[0]) {
            failures.push("responses differ within a process".into());
            break;
        }
    }
    let ok = runs[0].iter().filter(|l| l.starts_with("200\t")).count();
    if ok < 4000 {
        failures.push(format!("only {ok} of 5000 responses succeeded"));
    }
    verdict(
        failures,
        format!("1000 queries x5 repeats x3 processes byte-identical ({ok} OK)"),
    )
}

// ---------------------------------------------------------------------------
// 2. Uniform fractions and Laplace moments over distinct canonical queries

fn c2_noise() -> Verdict {
    let params = NoiseParams::new(secret(), 1.0).unwrap();
    let h = TimeHierarchy::default();
    let day = AtomicTimeRange::new(
        TimeRange::new(at("2018-01-01T00:00:00Z"), at("2018-01-02T00:00:00Z")).unwrap(),
        1,
        &h,
    )
    .unwrap();
    let n = 100_000;
    let mut fractions = Vec::with_capacity(n);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for i in 0..n {
        let entity = format!("cr{}", i / 50);
        let value = format!("v{}", i % 50);
        let q = CanonicalQuery {
            stat: StatType::Impression,
            entity: &entity,
            attr: "title",
            value: &value,
            range: day,
        };
        fractions.push(pseudorand_frac(params.secret(), &canonical_key(&q).unwrap()).value());
        let x = params.raw_noise(&q).unwrap();
        sum += x;
        sum_sq += x * x;
    }
    let (d, p) = pprl_oracle::ks_uniform(&fractions);
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    let mut failures = Vec::new();
    if p < 0.01 {
        failures.push(format!("KS rejects uniformity (p = {p:.4})"));
    }
    if !(-0.02..=0.02).contains(&mean) {
        failures.push(format!("noise mean {mean:.4} outside [-0.02, 0.02]"));
    }
    if !(1.9..=2.1).contains(&var) {
        failures.push(format!("noise variance {var:.4} outside [1.9, 2.1]"));
    }
    verdict(
        failures,
        format!("KS D = {d:.5}, p = {p:.3}; mean {mean:.4}, variance {var:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Error by epsilon on 10^5 synthetic queries

/// Expected signed error at `tau = 0` for geometric(q) true counts: clamping
/// adds `k - c` whenever the rounded noise is `-k` with `k > c`.
fn analytic_signed_error(q: f64, epsilon: f64) -> f64 {
    let p_minus = |k: u32| 0.5 * ((-epsilon * (k as f64 - 0.5)).exp() - (-epsilon * (k as f64 + 0.5)).exp());
    let mut total = 0.0;
    for c in 1..400u32 {
        let p_c = q * (1.0 - q).powi(c as i32 - 1);
        let bias: f64 = (c + 1..c + 400).map(|k| (k - c) as f64 * p_minus(k)).sum();
        total += p_c * bias;
    }
    total
}

fn c3_epsilon_sweep() -> Verdict {
    let s = synthetic();
    let base = base_params(1.0);
    let mut failures = Vec::new();
    let mut gap = None;
    let mut detail = String::new();
    for eps in DEFAULT_EPSILONS {
        let st = error_run(&base, eps, 0, &s.data, &s.store).unwrap();
        write!(
            detail,
            "eps {eps}: abs {:.3} signed {:.4}; ",
            st.mean_abs, st.mean_signed
        )
        .unwrap();
        if eps >= 1.0 && st.mean_abs >= 1.0 {
            failures.push(format!("meanAbs {:.3} >= 1 at eps {eps}", st.mean_abs));
        }
        if eps <= 0.5 && st.mean_signed <= 0.0 {
            failures.push(format!("meanSigned {:.4} <= 0 at eps {eps}", st.mean_signed));
        }
        if eps >= 1.0 && st.mean_signed.abs() >= 0.05 {
            if eps == 1.0 {
                gap = Some(st.mean_signed);
            } else {
                failures.push(format!("|meanSigned| {:.4} >= 0.05 at eps {eps}", st.mean_signed));
            }
        }
        if eps == 1.0 && (st.mean_signed - 0.07).abs() > 0.1 {
            failures.push(format!(
                "meanSigned {:.4} not within 0.1 of 0.07 at eps 1",
                st.mean_signed
            ));
        }
    }
    let q = SyntheticSpec::default().geometric_q;
    let expected = analytic_signed_error(q, 1.0);
    // Smallest q that keeps the median at 2 gives the smallest possible bias.
    let floor = analytic_signed_error(1.0 - 0.5f64.sqrt(), 1.0);
    match gap {
        None => verdict(failures, detail),
        Some(observed) if failures.is_empty() && (observed - expected).abs() < 0.02 && floor >= 0.05 => {
            Verdict::KnownGap(format!(
                "|meanSigned| = {observed:.4} >= 0.05 at eps 1; clamping bias for geometric median-2 counts is \
                 {expected:.4} analytically at q = {q} and at least {floor:.4} for any such q, so the bound cannot \
                 hold; the +/-0.1 band around 0.07 holds; {detail}"
            ))
        }
        Some(observed) => Verdict::Fail(format!(
            "|meanSigned| = {observed:.4} >= 0.05 at eps 1 (analytic {expected:.4}); {}; {detail}",
            failures.join("; ")
        )),
    }
}

// ---------------------------------------------------------------------------
// 4. Share of errors within two, against fresh-randomness Monte Carlo

fn c4_concentration() -> Verdict {
    let s = synthetic();
    let st = error_run(&base_params(1.0), 1.0, 0, &s.data, &s.store).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let exp = Exp::new(1.0).unwrap();
    let within = s
        .data
        .cells
        .iter()
        .filter(|c| {
            let laplace: f64 = exp.sample(&mut rng) - exp.sample(&mut rng);
            let noise = pprl_oracle::round_half_away(laplace);
            let noisy = (c.count as i64 + noise).max(0);
            (noisy - c.count as i64).abs() <= 2
        })
        .count();
    let mc = within as f64 / s.data.cells.len() as f64;
    let mut failures = Vec::new();
    if st.frac_within_two < 0.90 {
        failures.push(format!("fracWithinTwo {:.4} < 0.90", st.frac_within_two));
    }
    if (st.frac_within_two - mc).abs() > 0.03 {
        failures.push(format!("differs from Monte Carlo {mc:.4} by more than 0.03"));
    }
    verdict(
        failures,
        format!("fracWithinTwo {:.4}, Monte Carlo {mc:.4}", st.frac_within_two),
    )
}

// ---------------------------------------------------------------------------
// 5. Threshold sweep

fn c5_threshold() -> Verdict {
    let s = synthetic();
    let base = base_params(1.0);
    let table = run_experiment(
        ExperimentName::ThresholdSweep,
        &ExperimentConfig::default(),
        &base,
        &s.data,
        &s.store,
    )
    .unwrap();
    let signed = table.column("meanSigned").unwrap();
    let mut failures = Vec::new();
    for (eps, block) in THRESHOLD_EPSILONS.iter().zip(signed.chunks(11)) {
        if block.windows(2).any(|w| w[1] > w[0]) {
            failures.push(format!("meanSigned increases with tau at eps {eps}"));
        }
    }
    // Full engine path at tau 0 and tau 1, not the sweep's shortcut.
    let range = SyntheticData::range();
    for eps in THRESHOLD_EPSILONS {
        let p0 = base_params(eps);
        let p1 = base_params(eps).with_tau(1);
        let differs = s.data.cells.iter().any(|c| {
            let a = compute_noisy_count(&p0, c.stat, &c.entity, &c.attr, &c.value, range, &s.store).unwrap();
            let b = compute_noisy_count(&p1, c.stat, &c.entity, &c.attr, &c.value, range, &s.store).unwrap();
            a != b
        });
        if differs {
            failures.push(format!("tau 0 and tau 1 differ at eps {eps}"));
        }
    }
    let rows = &table.rows;
    if rows.chunks(11).any(|b| b[0][2..] != b[1][2..]) {
        failures.push("tau 0 and tau 1 rows differ".into());
    }
    let summary: Vec<String> = signed
        .chunks(11)
        .map(|b| format!("{:.3}..{:.3}", b[0], b[10]))
        .collect();
    verdict(
        failures,
        format!(
            "meanSigned tau 0..10 per eps {{0.1, 0.5, 1}}: {}",
            summary.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Top-n Jaccard distance

fn c6_topn() -> Verdict {
    let s = synthetic();
    let base = base_params(1.0);
    let config = ExperimentConfig::default();
    let table = run_experiment(ExperimentName::TopN, &config, &base, &s.data, &s.store).unwrap();
    let jac = table.column("meanJaccard").unwrap();
    let mut failures = Vec::new();
    if jac.iter().any(|j| !(0.0..=1.0).contains(j)) {
        failures.push("meanJaccard outside [0, 1]".into());
    }
    let mut detail = String::new();
    for n in [5usize, 10] {
        let series: Vec<f64> = (0..TOPN_EPSILONS.len())
            .map(|e| jac[e * config.n_max + n - 1])
            .collect();
        if series.windows(2).any(|w| w[1] >= w[0]) {
            failures.push(format!(
                "meanJaccard not decreasing in eps at n = {n}: {series:?}"
            ));
        }
        write!(detail, "n={n}: {series:.3?}; ").unwrap();
    }
    let mut small = 0;
    for eps in TOPN_EPSILONS {
        for q in topn_distances(&base, eps, &config, 0, &s.data, &s.store).unwrap() {
            for (i, d) in q.distances.iter().enumerate() {
                if !(0.0..=1.0).contains(d) {
                    failures.push(format!("distance {d} outside [0, 1]"));
                }
                if q.values <= i + 1 {
                    small += 1;
                    if *d != 0.0 {
                        failures.push(format!(
                            "{}/{} has {} values but distance {d} at n = {}",
                            q.entity,
                            q.attr,
                            q.values,
                            i + 1
                        ));
                    }
                }
            }
        }
    }
    failures.truncate(5);
    verdict(
        failures,
        format!("{detail}{small} (query, n) pairs with <= n values all at 0"),
    )
}

// ---------------------------------------------------------------------------
// 7. Greedy partition against shortest-path oracle

fn c7_partition() -> Verdict {
    let h = TimeHierarchy::default();
    let mut failures = Vec::new();

    let worked = minimal_partition(
        TimeRange::new(at("2018-03-31T21:00:00Z"), at("2018-08-02T03:00:00Z")).unwrap(),
        &h,
    )
    .unwrap();
    let got: Vec<(String, String)> = worked
        .iter()
        .map(|p| (format_instant(p.start()), format_instant(p.end())))
        .collect();
    let want = [
        ("2018-03-31T21:00:00Z", "2018-04-01T00:00:00Z"),
        ("2018-04-01T00:00:00Z", "2018-07-01T00:00:00Z"),
        ("2018-07-01T00:00:00Z", "2018-08-01T00:00:00Z"),
        ("2018-08-01T00:00:00Z", "2018-08-02T00:00:00Z"),
        ("2018-08-02T00:00:00Z", "2018-08-02T03:00:00Z"),
    ];
    if got.iter().map(|(a, b)| (a.as_str(), b.as_str())).ne(want) {
        failures.push(format!("worked example partitioned as {got:?}"));
    }

    let oracle = PartitionOracle::new(
        &LEVELS,
        at("2018-01-01T00:00:00Z"),
        at("2020-01-01T00:00:00Z"),
        EPOCH,
    );
    let b = oracle.boundaries();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..500 {
        let i = rng.random_range(0..b.len() - 1);
        let j = rng.random_range(i + 1..b.len());
        let parts = minimal_partition(TimeRange::new(b[i], b[j]).unwrap(), &h).unwrap();
        let greedy: Vec<(i64, i64)> = parts.iter().map(|p| (p.start(), p.end())).collect();
        if Some(greedy.clone()) != oracle.min_partition(i, j) {
            failures.push(format!(
                "[{}, {}) greedy {} parts differs from oracle",
                b[i],
                b[j],
                greedy.len()
            ));
        }
    }

    let window = PartitionOracle::new(
        &LEVELS,
        at("2018-03-15T00:00:00Z"),
        at("2018-06-13T00:00:00Z"),
        EPOCH,
    );
    let wb = window.boundaries();
    let mut pairs = 0u64;
    for i in 0..wb.len() {
        let best = window.min_counts_from(i);
        for j in i + 1..wb.len() {
            pairs += 1;
            let n = minimal_partition(TimeRange::new(wb[i], wb[j]).unwrap(), &h)
                .unwrap()
                .len() as u32;
            if best[j] != Some(n) {
                failures.push(format!(
                    "[{}, {}) greedy {n} vs oracle {:?}",
                    wb[i], wb[j], best[j]
                ));
            }
        }
    }
    failures.truncate(5);
    verdict(
        failures,
        format!("worked example exact; 500 random 2-year ranges; all {pairs} ranges of a 90-day window"),
    )
}

// ---------------------------------------------------------------------------
// 8. Budget bound

fn c8_budget() -> Verdict {
    let bound = privacy_loss_bound(BudgetDims::new(6, 3, 2).unwrap(), 1.0);
    if bound == 36.0 {
        Verdict::Pass("privacy_loss_bound(6, 3, 2, 1) = 36".into())
    } else {
        Verdict::Fail(format!("privacy_loss_bound(6, 3, 2, 1) = {bound}"))
    }
}

// ---------------------------------------------------------------------------
// 9. Parent = sum of children for small fanouts

fn random_forest(rng: &mut StdRng, l: usize) -> (Store, Vec<String>) {
    let mut store = Store::new(Level::Epoch3h);
    let mut ids: Vec<String> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for r in 0..3 {
        let id = format!("n{r:03}");
        store.add_root_entity(&id, "account").unwrap();
        ids.push(id.clone());
        queue.push_back(id);
    }
    while ids.len() < 100 {
        let Some(parent) = queue.pop_front() else { break };
        // Mostly within 1..=l; occasionally wider so both branches occur.
        let fanout = if rng.random_bool(0.15) {
            l + 1
        } else {
            rng.random_range(1..=l)
        };
        for _ in 0..fanout {
            if ids.len() == 100 {
                break;
            }
            let id = format!("n{:03}", ids.len());
            store.add_child_entity(&parent, &id, "node").unwrap();
            ids.push(id.clone());
            queue.push_back(id);
        }
        // Leave some nodes as leaves.
        if rng.random_bool(0.2) {
            queue.pop_front();
        }
    }
    let day = at("2018-01-01T00:00:00Z");
    for id in &ids {
        if !store.children_of(id).unwrap().is_empty() {
            continue;
        }
        for _ in 0..rng.random_range(1..6) {
            store
                .add(&ActionEvent {
                    timestamp: day + rng.random_range(0..14 * DAY),
                    stat: StatType::Click,
                    entity: id.clone(),
                    attr: "seniority".into(),
                    value: format!("s{}", rng.random_range(0..4)),
                    count: rng.random_range(1..4),
                })
                .unwrap();
        }
    }
    (store, ids)
}

fn c9_entity_sums() -> Verdict {
    let mut rng = StdRng::seed_from_u64(9);
    let mut failures = Vec::new();
    let mut checked = 0;
    let ranges = [
        TimeRange::new(at("2018-01-01T00:00:00Z"), at("2018-01-15T00:00:00Z")).unwrap(),
        TimeRange::new(at("2018-01-03T06:00:00Z"), at("2018-01-09T00:00:00Z")).unwrap(),
    ];
    for l in 1..=3 {
        let (store, ids) = random_forest(&mut rng, l);
        let params = base_params(0.5).with_l(l).with_tau(3);
        for id in &ids {
            let children = store.children_of(id).unwrap();
            if children.is_empty() || children.len() > l {
                continue;
            }
            for range in ranges {
                for v in 0..4 {
                    let value = format!("s{v}");
                    let answer = |e: &str| {
                        compute_noisy_count(&params, StatType::Click, e, "seniority", &value, range, &store)
                            .unwrap()
                            .value
                    };
                    let sum: u64 = children.iter().map(|c| answer(c)).sum();
                    checked += 1;
                    if answer(id) != sum {
                        failures.push(format!(
                            "l = {l}: {id} = {} but children sum to {sum}",
                            answer(id)
                        ));
                    }
                }
            }
        }
    }
    failures.truncate(5);
    if checked == 0 {
        failures.push("no parent had at most l children".into());
    }
    verdict(
        failures,
        format!("{checked} parent answers equal their children's sum for l in 1..=3"),
    )
}

// ---------------------------------------------------------------------------
// 10. Top-k prefixes

fn c10_prefix() -> Verdict {
    let (store, _) = random_store(10, true);
    let mut rng = StdRng::seed_from_u64(10);
    let mut failures = Vec::new();
    for _ in 0..200 {
        let params = base_params([0.1, 0.5, 1.0, 3.0][rng.random_range(0..4)])
            .with_tau(rng.random_range(0..5))
            .with_l(rng.random_range(0..3));
        let entity = ENTITIES.choose(&mut rng).unwrap();
        let (attr, _) = ATTRS[rng.random_range(0..ATTRS.len())];
        let range = random_range(&mut rng);
        let k_max = rng.random_range(7..=20);
        let run = |k| -> Vec<(String, u64)> {
            top_k(
                &params,
                StatType::Impression,
                entity,
                attr,
                range,
                k,
                k_max,
                &store,
            )
            .unwrap()
            .entries
            .into_iter()
            .map(|e| (e.value, e.answer.value))
            .collect()
        };
        let (k3, k7, kmax) = (run(3), run(7), run(k_max));
        if !k7.starts_with(&k3) || !kmax.starts_with(&k7) {
            failures.push(format!("{entity}/{attr} {range}: k=3 {k3:?} k=7 {k7:?}"));
        }
    }
    failures.truncate(3);
    verdict(
        failures,
        "200 random requests: k=3 prefix of k=7 prefix of k=kMax".into(),
    )
}

// ---------------------------------------------------------------------------
// 11. Service against a flat recomputation

fn c11_oracle() -> Verdict {
    let (store, events) = random_store(11, false);
    let (epsilon, tau) = (0.7, 3u64);
    let config = ServiceConfig {
        epsilon,
        tau,
        now: Some("2019-06-01T00:00:00Z".into()),
        ..ServiceConfig::default()
    };
    let state = AppState::new(&config, secret()).unwrap();
    state.publish(store);
    let app = router(state);
    let oracle = PartitionOracle::new(
        &LEVELS,
        at("2018-01-01T00:00:00Z"),
        at("2019-01-01T00:00:00Z"),
        EPOCH,
    );
    let secret_bytes: Vec<u8> = (0..SECRET_HEX.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&SECRET_HEX[i..i + 2], 16).unwrap())
        .collect();

    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut nonzero = 0;
    let mut multi_sizes = BTreeSet::new();
    while checked < 100 {
        let range = random_range(&mut rng);
        let (i, j) = (
            oracle.index_of(range.start()).unwrap(),
            oracle.index_of(range.end()).unwrap(),
        );
        let parts = oracle.min_partition(i, j).unwrap();
        if parts.len() < 2 {
            continue;
        }
        let entity = format!("e{:02}", rng.random_range(0..10));
        let (attr, card) = ATTRS[rng.random_range(0..ATTRS.len())];
        let value = format!("{attr}-{:02}", rng.random_range(0..card));
        let stat = if rng.random_bool(0.8) {
            StatType::Impression
        } else {
            StatType::Click
        };

        let mut sum = 0u64;
        for &(s, e) in &parts {
            let truth: u64 = events
                .iter()
                .filter(|ev| {
                    ev.stat == stat
                        && ev.entity == entity
                        && ev.attr == attr
                        && ev.value == value
                        && (s..e).contains(&ev.timestamp)
                })
                .map(|ev| ev.count)
                .sum();
            sum += pprl_oracle::canonical_noisy(
                &secret_bytes,
                epsilon,
                stat.as_str(),
                &entity,
                attr,
                &value,
                s,
                e,
                truth,
            );
        }
        let expected = if sum < tau { 0 } else { sum };

        let uri = count_uri(stat, &entity, attr, &value, range);
        let (status, body) = rt.block_on(dispatch(&app, Method::GET, &uri, &[], Vec::new()));
        if status != StatusCode::OK {
            failures.push(format!("{uri}: HTTP {status}"));
            continue;
        }
        let json: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let got = json["value"].as_u64().unwrap();
        if got != expected || json["partitionSize"].as_u64() != Some(parts.len() as u64) {
            failures.push(format!("{uri}: service {got}, oracle {expected}"));
        }
        checked += 1;
        nonzero += usize::from(expected > 0);
        multi_sizes.insert(parts.len());
    }
    failures.truncate(5);
    verdict(
        failures,
        format!("100 queries ({nonzero} non-zero) with partition sizes {multi_sizes:?} match"),
    )
}
