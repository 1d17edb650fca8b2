//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach stdout. Exits nonzero if any
//! check fails other than those listed in `UNATTAINED`, which are still printed as FAIL.

use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spread_hawkes::diagnostics::{ks_critical, ks_statistic, residuals};
use spread_hawkes::estimator::{fit, FitConfig};
use spread_hawkes::experiment::{
    convergence_experiment, recovery_experiment, table1_reference_std, ConvergenceConfig, RecoveryConfig,
};
use spread_hawkes::ingest::{self, PreprocessConfig, QuoteFormat, SessionWindow, WindowMode};
use spread_hawkes::simulator::{simulate, JumpSource, JumpTable, SimConfig, StopRule};
use spread_hawkes::spread::{simulate_spread_only, SpreadSimConfig, SpreadSummary};
use spread_hawkes::{CoreParams, EventKind, EventStream, IntensityState, MarketState, ModelVariant, ParamSet, Price};

/// Checks that fail for reasons recorded in the decisions ledger.
const UNATTAINED: &[&str] = &["3b"];

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn row1() -> CoreParams {
    CoreParams {
        mu: 0.080,
        eta: 0.100,
        alpha_s1: 4.0,
        alpha_s2: 26.0,
        alpha_m: 5.0,
        alpha_w1: 11.0,
        alpha_w2: 7.0,
        beta: 50.0,
        xi: 2.7,
    }
}

fn tick() -> Price {
    "0.01".parse().unwrap()
}

fn recovery(row: usize, paths: usize, seed: u64) -> Vec<Outcome> {
    let cfg = RecoveryConfig::table1(row, paths, seed).unwrap();
    let res = recovery_experiment(&cfg).unwrap();
    let std = table1_reference_std(row).unwrap();
    let mut worst = (0.0, "");
    let mut pass = true;
    for (i, name) in res.names.iter().enumerate() {
        let z = (res.mean[i] - res.truth[i]).abs() / std[i];
        pass &= z <= 3.0;
        if z > worst.0 {
            worst = (z, name);
        }
    }
    let id = if row == 1 { "1" } else { "2" };
    let means: Vec<String> = res.names.iter().zip(&res.mean).map(|(n, m)| format!("{n}={m:.4}")).collect();
    vec![Outcome {
        id,
        pass,
        detail: format!(
            "{paths} paths, {} converged; largest |mean-truth|/std = {:.2} ({}); means {}",
            res.converged,
            worst.0,
            worst.1,
            means.join(" ")
        ),
    }]
}

fn convergence() -> Vec<Outcome> {
    let reps = 50;
    let cfg = ConvergenceConfig::new(400.0, 5_000, vec![10.0, 50.0, 100.0, 400.0], reps, 4000).unwrap();
    let rows = convergence_experiment(&cfg).unwrap();
    let a_pass = rows.iter().all(|r| r.success_rate >= 0.9);
    let a_detail: Vec<String> = rows.iter().map(|r| format!("beta0={}: {:.2}", r.beta0, r.success_rate)).collect();

    let cfg = ConvergenceConfig::new(1600.0, 10_000, vec![100.0, 10_000.0], reps, 16000).unwrap();
    let rows = convergence_experiment(&cfg).unwrap();
    let (small, large) = (rows[0].success_rate, rows[1].success_rate);
    // two-proportion z test at the 5% level
    let pooled = (small + large) / 2.0;
    let se = (2.0 * pooled * (1.0 - pooled) / reps as f64).sqrt();
    let b_pass = small > large && (se == 0.0 || (small - large) / se > 1.645);
    vec![
        Outcome {
            id: "3a",
            pass: a_pass,
            detail: format!("beta=400, n=5000, {reps} reps; success {}", a_detail.join(", ")),
        },
        Outcome {
            id: "3b",
            pass: b_pass,
            detail: format!(
                "beta=1600, n=10000, {reps} reps; success beta0=100: {small:.2}, beta0=10000: {large:.2} (median rmse {:.3} / {:.3})",
                rows[0].median_rmse, rows[1].median_rmse
            ),
        },
    ]
}

/// Adaptive Simpson quadrature.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn random_params(rng: &mut ChaCha8Rng, variant: ModelVariant) -> ParamSet {
    let values = variant
        .param_names()
        .iter()
        .map(|n| {
            if n.starts_with("beta") {
                10f64.powf(rng.random_range(-1.0..3.3))
            } else if n.starts_with("mu") || n.starts_with("eta") {
                rng.random_range(0.0..2.0)
            } else {
                10f64.powf(rng.random_range(-2.0..2.7))
            }
        })
        .collect();
    ParamSet::new(variant, values).unwrap()
}

fn random_history<'k>(rng: &mut ChaCha8Rng, kernel: &'k spread_hawkes::Kernel, beta_min: f64) -> IntensityState<'k> {
    let level = rng.random_range(0..6u32);
    let bid = Price::from_nanos(100_000_000_000);
    let ask = Price::from_nanos(bid.nanos() + (level as i64 + 1) * tick().nanos());
    let mut st = IntensityState::new(kernel, 0.0, MarketState::new(bid, ask, tick()).unwrap());
    let mut t = 0.0;
    for _ in 0..rng.random_range(0..25) {
        t += rng.random_range(0.0..3.0) / beta_min;
        let kind = EventKind::ALL[rng.random_range(0..4)];
        let _ = st.on_event(t, kind, rng.random_range(1..4), tick());
    }
    st
}

fn compensator_oracle() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let variants: Vec<ModelVariant> = ModelVariant::SELECTION.to_vec();
    let mut worst = 0.0f64;
    let cases = 1000;
    for c in 0..cases {
        let variant = variants[c % variants.len()];
        let ps = random_params(&mut rng, variant);
        let kernel = ps.kernel();
        let beta_min = ps.iter().filter(|(n, _)| n.starts_with("beta")).map(|(_, v)| v).fold(f64::INFINITY, f64::min);
        let st = random_history(&mut rng, &kernel, beta_min);
        let t0 = st.time();
        let t1 = t0 + 10f64.powf(rng.random_range(-3.0..1.0)) / beta_min;
        let closed = st.compensator(t1);
        for (i, c) in closed.into_iter().enumerate() {
            let f = |s: f64| st.intensity_at(s)[i];
            let quad = simpson(&f, t0, t1, 1e-14 * (1.0 + c.abs()));
            let rel = (c - quad).abs() / quad.abs().max(1e-300);
            if quad != 0.0 || c != 0.0 {
                worst = worst.max(rel);
            }
        }
    }
    vec![Outcome {
        id: "4",
        pass: worst <= 1e-8,
        detail: format!("{cases} cases over {} variants; max relative error {worst:.2e}", variants.len()),
    }]
}

fn nonnegativity_and_reset() -> Vec<Outcome> {
    let mut runner = TestRunner::new(PropConfig {
        cases: 512,
        rng_seed: proptest::test_runner::RngSeed::Fixed(5),
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (
        prop::array::uniform9(0.0..300.0f64),
        1.0..2000.0f64,
        0u32..5,
        prop::collection::vec((0.0..0.05f64, 0usize..4, 1u32..4), 1..200),
    );
    let result = runner.run(&strategy, |(raw, beta, level, steps)| {
        let core = CoreParams {
            mu: raw[0] / 100.0,
            eta: raw[1] / 100.0,
            alpha_s1: raw[2],
            alpha_s2: raw[3],
            alpha_m: raw[4],
            alpha_w1: raw[5],
            alpha_w2: raw[6],
            beta,
            xi: raw[8],
        };
        let ps = ParamSet::proposed(core).unwrap();
        let kernel = ps.kernel();
        let bid = Price::from_nanos(50_000_000_000);
        let ask = Price::from_nanos(bid.nanos() + (level as i64 + 1) * tick().nanos());
        let mut st = IntensityState::new(&kernel, 0.0, MarketState::new(bid, ask, tick()).unwrap());
        let mut t = 0.0;
        for (dt, k, delta) in steps {
            t += dt;
            let kind = EventKind::ALL[k];
            let before = st.intensity_at(t);
            prop_assert!(before.iter().all(|l| *l >= 0.0), "negative intensity {before:?}");
            if st.on_event(t, kind, delta, tick()).is_err() {
                continue;
            }
            let after = st.intensity_at(t);
            prop_assert!(after.iter().all(|l| *l >= 0.0), "negative intensity {after:?}");
            if kind.is_narrowing() {
                let ell = st.market().rel_level();
                let e = st.excitation();
                prop_assert_eq!(e[1], core.xi * ell);
                prop_assert_eq!(e[2], core.xi * ell);
                if st.market().level() == 0 {
                    prop_assert_eq!(after[1], 0.0);
                    prop_assert_eq!(after[2], 0.0);
                }
            }
        }
        Ok(())
    });
    vec![Outcome {
        id: "5",
        pass: result.is_ok(),
        detail: match result {
            Ok(()) => "512 random event sequences, every step checked".into(),
            Err(e) => format!("counterexample: {e}"),
        },
    }]
}

fn residual_gof() -> Vec<Outcome> {
    let truth = ParamSet::proposed(row1()).unwrap();
    let seeds = 100;
    let mut ks_ok = 0;
    let mut mean_ok = 0;
    let mut worst_mean = 0.0f64;
    for seed in 0..seeds {
        let mut cfg = SimConfig::new(truth.clone(), StopRule::Events(10_000), 600 + seed);
        cfg.jumps = JumpSource::Table(JumpTable::sample());
        let s = simulate(&cfg).unwrap();
        let r = residuals(&s, &truth).unwrap().pooled();
        let n = r.len();
        if ks_statistic(&r) < ks_critical(n, 0.01) {
            ks_ok += 1;
        }
        let m = r.iter().sum::<f64>() / n as f64;
        worst_mean = worst_mean.max((m - 1.0).abs() * (n as f64).sqrt());
        if (m - 1.0).abs() <= 3.0 / (n as f64).sqrt() {
            mean_ok += 1;
        }
    }
    let need = (0.95 * seeds as f64).ceil() as usize;
    vec![Outcome {
        id: "6",
        pass: ks_ok >= need && mean_ok >= need,
        detail: format!(
            "{seeds} seeds; KS below 1% critical value in {ks_ok}, mean within 1 +/- 3/sqrt(n) in {mean_ok} (largest |mean-1|*sqrt(n) = {worst_mean:.2})"
        ),
    }]
}

fn selection() -> Vec<Outcome> {
    let truth = ParamSet::proposed(row1()).unwrap();
    let runs = 30;
    let mut wins = 0;
    let mut margins = Vec::new();
    for r in 0..runs {
        let mut cfg = SimConfig::new(truth.clone(), StopRule::Events(5_000), 700 + r);
        cfg.jumps = JumpSource::Table(JumpTable::sample());
        let s = simulate(&cfg).unwrap();
        let fit_one = |variant| {
            let fc = FitConfig { variant, restarts: 2, seed: r, compute_se: false, ..FitConfig::default() };
            fit(&s, &fc).unwrap().aic
        };
        let (p, b) = (fit_one(ModelVariant::Proposed), fit_one(ModelVariant::BasicHawkes));
        if p < b {
            wins += 1;
        }
        margins.push(b - p);
    }
    margins.sort_by(f64::total_cmp);
    vec![Outcome {
        id: "7",
        pass: wins as f64 >= 0.9 * runs as f64,
        detail: format!(
            "{runs} runs of 5000 events; proposed AIC lower in {wins}; median AIC(basic)-AIC(proposed) = {:.1}",
            margins[runs as usize / 2]
        ),
    }]
}

fn steady_state() -> Vec<Outcome> {
    let p = row1();
    let gap = p.beta - p.alpha_s1 - p.alpha_s2 - p.alpha_m;
    let level = p.beta * p.mu / (p.eta * gap);
    let rate = 2.0 * p.beta * p.mu / gap;
    let path = simulate_spread_only(&SpreadSimConfig::new(p, 2.0e6, 8)).unwrap();
    let s = SpreadSummary::of(&path);
    let el = (s.time_average_level - level).abs() / level;
    let eu = (s.up_rate - rate).abs() / rate;
    let ed = (s.down_rate - rate).abs() / rate;
    vec![Outcome {
        id: "8",
        pass: el <= 0.05 && eu <= 0.05 && ed <= 0.05,
        detail: format!(
            "horizon 2e6 s, {} events; mean L {:.4} vs {level:.4}, up rate {:.4} and down rate {:.4} vs {rate:.4}",
            s.n_events, s.time_average_level, s.up_rate, s.down_rate
        ),
    }]
}

fn preprocessing() -> Vec<Outcome> {
    let text = std::fs::read_to_string(format!("{FIXTURES}/raw_quotes.csv")).unwrap();
    let parsed = ingest::parse_quotes(text.as_bytes(), &QuoteFormat::default()).unwrap();
    let cfg =
        |seed| PreprocessConfig { session: SessionWindow::default(), tick: tick(), seed, unit_ns: parsed.unit_ns() };
    use EventKind::*;
    let p = |s: &str| s.parse::<Price>().unwrap();
    let third = 0.001 / 3.0;
    let expect = |random_ask_first: bool| {
        let mut v = vec![(1.0, BidUp, 1, "100.01", "100.03")];
        if random_ask_first {
            v.push((2.0, AskUp, 1, "100.01", "100.04"));
            v.push((2.0 + third, BidDown, 1, "100.00", "100.04"));
        } else {
            v.push((2.0, BidDown, 1, "100.00", "100.03"));
            v.push((2.0 + third, AskUp, 1, "100.00", "100.04"));
        }
        v.extend([
            (3.0, AskUp, 2, "100.00", "100.06"),
            (3.0 + third, BidUp, 5, "100.05", "100.06"),
            (5.0, AskUp, 1, "100.05", "100.07"),
            (5.0 + third, BidDown, 1, "100.04", "100.07"),
        ]);
        v
    };
    let matches = |s: &EventStream, want: &[(f64, EventKind, u32, &str, &str)]| {
        s.len() == want.len()
            && s.events().iter().zip(want).all(|(e, w)| {
                (e.t - w.0).abs() < 1e-9
                    && e.kind == w.1
                    && e.delta == w.2
                    && e.state_after.bid() == p(w.3)
                    && e.state_after.ask() == p(w.4)
            })
    };
    let mut orders = [false; 2];
    let mut stream_ok = true;
    let mut counts_ok = true;
    for seed in 0..16 {
        let (s, r) = ingest::preprocess(&parsed.quotes, &cfg(seed)).unwrap();
        let ask_first = s.events()[1].kind == AskUp;
        orders[ask_first as usize] = true;
        stream_ok &= matches(&s, &expect(ask_first)) && s.initial_state().ask() == p("100.03");
        counts_ok &=
            r.relocated_groups == 1 && r.forced_splits == 1 && r.random_splits == 1 && r.locked_crossed_dropped == 1;
    }
    let (a, _) = ingest::preprocess(&parsed.quotes, &cfg(3)).unwrap();
    let (b, _) = ingest::preprocess(&parsed.quotes, &cfg(3)).unwrap();
    let deterministic = a == b;

    let mut sim = SimConfig::new(ParamSet::proposed(row1()).unwrap(), StopRule::Events(20_000), 9);
    sim.jumps = JumpSource::Table(JumpTable::sample());
    let s = simulate(&sim).unwrap();
    let mut buf = Vec::new();
    ingest::write_events(&s, &mut buf).unwrap();
    let back = ingest::read_events(buf.as_slice()).unwrap();
    let lossless = back == s;

    vec![Outcome {
        id: "9",
        pass: stream_ok && counts_ok && orders == [true, true] && deterministic && lossless,
        detail: format!(
            "documented stream {stream_ok}, counts (1 relocation group, 1 forced, 1 random, 1 drop) {counts_ok}, \
             both random orders seen {}, seed-deterministic {deterministic}, {}-event round trip lossless {lossless}",
            orders == [true, true],
            s.len()
        ),
    }]
}

fn real_data_substitutes() -> Vec<Outcome> {
    let f = std::fs::File::open(format!("{FIXTURES}/appendix_a_events.csv")).unwrap();
    let s = ingest::read_events(f).unwrap();
    let rep = fit(&s, &FitConfig::default()).unwrap();
    let v = |n| rep.params.get(n).unwrap();
    let plausible = (500.0..=1200.0).contains(&v("beta")) && v("alpha_w2") > v("alpha_s1");

    // eta drops to almost nothing half-way through a one-hour session
    let pre = CoreParams {
        mu: 0.3,
        eta: 0.3,
        alpha_s1: 96.32,
        alpha_s2: 193.2,
        alpha_m: 219.5,
        alpha_w1: 271.6,
        alpha_w2: 459.6,
        beta: 991.1,
        xi: 61.44,
    };
    let post = CoreParams { eta: 0.001, ..pre };
    let switch = 1800.0;
    let mut cfg = SimConfig::new(ParamSet::proposed(pre).unwrap(), StopRule::Horizon(3600.0), 10);
    cfg.schedule.push((switch, ParamSet::proposed(post).unwrap()));
    let s = simulate(&cfg).unwrap();
    let wins = ingest::windows(&s, WindowMode::Intraday { length: 180.0, step: 60.0 }).unwrap();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for (i, w) in wins.iter().enumerate() {
        let fc = FitConfig {
            seed: i as u64,
            compute_se: false,
            parallel: false,
            min_events_per_process: 0,
            ..FitConfig::default()
        };
        let eta = fit(w, &fc).unwrap().params.get("eta").unwrap();
        if w.session_end() <= switch {
            before.push(eta);
        } else if w.session_start() >= switch {
            after.push(eta);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (mb, ma) = (median(&mut before), median(&mut after));
    let recovered = (mb - pre.eta).abs() <= 0.5 * pre.eta && ma <= 0.2 * pre.eta;
    vec![Outcome {
        id: "10",
        pass: plausible && recovered,
        detail: format!(
            "fixture fit beta={:.1} alpha_w2={:.1} alpha_s1={:.1}; {} rolling windows, median eta before switch {mb:.4} (truth {}), after {ma:.4} (truth {})",
            v("beta"),
            v("alpha_w2"),
            v("alpha_s1"),
            wins.len(),
            pre.eta,
            post.eta
        ),
    }]
}

type Suite = (&'static str, Box<dyn Fn() -> Vec<Outcome>>);

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let suites: Vec<Suite> = vec![
        ("1", Box::new(|| recovery(1, 100, 1000))),
        ("2", Box::new(|| recovery(2, 50, 2000))),
        ("3", Box::new(convergence)),
        ("4", Box::new(compensator_oracle)),
        ("5", Box::new(nonnegativity_and_reset)),
        ("6", Box::new(residual_gof)),
        ("7", Box::new(selection)),
        ("8", Box::new(steady_state)),
        ("9", Box::new(preprocessing)),
        ("10", Box::new(real_data_substitutes)),
    ];
    let mut unexpected = 0;
    for (id, suite) in suites {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let clock = Instant::now();
        for o in suite() {
            let verdict = if o.pass { "PASS" } else { "FAIL" };
            let note = if !o.pass && UNATTAINED.contains(&o.id) { " [known, see decisions ledger]" } else { "" };
            println!("criterion {:<3} {verdict}{note}  {} ({:.0}s)", o.id, o.detail, clock.elapsed().as_secs_f64());
            if !o.pass && !UNATTAINED.contains(&o.id) {
                unexpected += 1;
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
