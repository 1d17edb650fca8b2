//! Ogata thinning for every point-process variant, with spread-state feedback.
//!
//! Between events the bases are constant and every accumulator decays, so the
//! total intensity right after the current time dominates the future path until
//! the next event. The bound is refreshed after every candidate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{IntensityState, ModelVariant, ParamSet};
use crate::market::{apply_event, EventKind, EventRecord, EventStream, MarketState, Price};

/// Jump-size distribution on positive tick counts, one per event kind.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpTable {
    /// Support and cumulative probabilities per kind.
    cdf: [Vec<(u32, f64)>; 4],
}

impl JumpTable {
    /// `entries[kind]` lists `(delta, probability)` pairs.
    pub fn new(entries: [Vec<(u32, f64)>; 4]) -> Result<Self> {
        let mut cdf: [Vec<(u32, f64)>; 4] = Default::default();
        for (k, list) in entries.into_iter().enumerate() {
            let kind = EventKind::ALL[k];
            if list.is_empty() {
                return Err(Error::Config(format!("jump table has no entries for {kind}")));
            }
            let mut acc = 0.0;
            for (delta, p) in list {
                if delta == 0 || !(p >= 0.0) {
                    return Err(Error::Config(format!(
                        "jump table entry ({delta}, {p}) for {kind} must have a positive size and probability"
                    )));
                }
                acc += p;
                cdf[k].push((delta, acc));
            }
            if (acc - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("jump probabilities for {kind} sum to {acc}, not 1")));
            }
        }
        Ok(JumpTable { cdf })
    }

    /// The same distribution for every kind.
    pub fn uniform_across_kinds(list: Vec<(u32, f64)>) -> Result<Self> {
        Self::new([list.clone(), list.clone(), list.clone(), list])
    }

    /// Sample table shipped for simulation studies: a one-tick move with
    /// probability 0.80, two ticks 0.12, three 0.05, four 0.03, for every kind.
    pub fn sample() -> Self {
        Self::uniform_across_kinds(vec![(1, 0.80), (2, 0.12), (3, 0.05), (4, 0.03)]).expect("valid sample table")
    }

    /// Reads `kind,delta,prob` rows; `kind` may be `all`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut entries: [Vec<(u32, f64)>; 4] = Default::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| {
                rec.get(j).map(str::trim).ok_or_else(|| Error::Parse { line, msg: "expected kind,delta,prob".into() })
            };
            let kind = field(0)?;
            let delta: u32 = field(1)?.parse().map_err(|e| Error::Parse { line, msg: format!("delta: {e}") })?;
            let p: f64 = field(2)?.parse().map_err(|e| Error::Parse { line, msg: format!("prob: {e}") })?;
            if kind.eq_ignore_ascii_case("all") {
                for e in entries.iter_mut() {
                    e.push((delta, p));
                }
            } else {
                let k: EventKind = kind.parse().map_err(|e| Error::Parse { line, msg: e })?;
                entries[k.index()].push((delta, p));
            }
        }
        Self::new(entries)
    }

    fn draw<R: Rng + ?Sized>(&self, kind: EventKind, rng: &mut R) -> u32 {
        let list = &self.cdf[kind.index()];
        let u = rng.random::<f64>() * list.last().map(|x| x.1).unwrap_or(1.0);
        list.iter().find(|(_, c)| u < *c).unwrap_or(list.last().unwrap()).0
    }

    /// Mean jump size per kind.
    pub fn means(&self) -> [f64; 4] {
        std::array::from_fn(|k| {
            let mut prev = 0.0;
            self.cdf[k]
                .iter()
                .map(|&(d, c)| {
                    let p = c - prev;
                    prev = c;
                    d as f64 * p
                })
                .sum()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum JumpSource {
    Constant(u32),
    Table(JumpTable),
}

impl JumpSource {
    fn draw<R: Rng + ?Sized>(&self, kind: EventKind, rng: &mut R) -> u32 {
        match self {
            JumpSource::Constant(d) => *d,
            JumpSource::Table(t) => t.draw(kind, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Simulate on `(0, horizon]`.
    Horizon(f64),
    /// Stop at the n-th event; the session ends at that event.
    Events(usize),
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub params: ParamSet,
    /// Parameter switches `(time, params)`, applied in time order; same variant only.
    pub schedule: Vec<(f64, ParamSet)>,
    pub initial_state: MarketState,
    pub tick: Price,
    pub stop: StopRule,
    pub jumps: JumpSource,
    pub seed: u64,
    pub max_events: usize,
}

impl SimConfig {
    /// Book at 100.00 / 100.01, one-tick jumps.
    pub fn new(params: ParamSet, stop: StopRule, seed: u64) -> Self {
        let tick: Price = Price::from_nanos(10_000_000);
        SimConfig {
            params,
            schedule: Vec::new(),
            initial_state: MarketState::new(
                Price::from_nanos(100_000_000_000),
                Price::from_nanos(100_010_000_000),
                tick,
            )
            .expect("valid default book"),
            tick,
            stop,
            jumps: JumpSource::Constant(1),
            seed,
            max_events: 10_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.stop {
            StopRule::Horizon(h) if !(h > 0.0 && h.is_finite()) => {
                return Err(Error::Config(format!("horizon must be positive, got {h}")))
            }
            StopRule::Events(0) => return Err(Error::Config("event target must be positive".into())),
            _ => {}
        }
        if self.params.variant() == ModelVariant::SpreadOnly {
            return Err(Error::Config("use spread::simulate_spread_only for the spread-only model".into()));
        }
        if let JumpSource::Constant(0) = self.jumps {
            return Err(Error::Config("constant jump size must be positive".into()));
        }
        let mut last = 0.0;
        for (t, p) in &self.schedule {
            if p.variant() != self.params.variant() || !(*t >= last) {
                return Err(Error::Config("parameter schedule must be time-ordered and keep the variant".into()));
            }
            last = *t;
        }
        Ok(())
    }
}

/// Counters reported alongside a simulated stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub candidates: usize,
    pub accepted: usize,
    /// Narrowing jumps cut back to the current level.
    pub truncated_jumps: usize,
    /// Narrowing candidates at the minimum spread (basic Hawkes model only).
    pub suppressed_at_minimum: usize,
}

pub fn simulate(cfg: &SimConfig) -> Result<EventStream> {
    simulate_with_stats(cfg).map(|(s, _)| s)
}

pub fn simulate_with_stats(cfg: &SimConfig) -> Result<(EventStream, SimStats)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kernels: Vec<_> =
        std::iter::once(cfg.params.kernel()).chain(cfg.schedule.iter().map(|(_, p)| p.kernel())).collect();
    let switch_times: Vec<f64> = cfg.schedule.iter().map(|(t, _)| *t).collect();
    let mut regime = 0;
    let mut state = IntensityState::new(&kernels[0], 0.0, cfg.initial_state);
    let (horizon, target) = match cfg.stop {
        StopRule::Horizon(h) => (h, usize::MAX),
        StopRule::Events(n) => (f64::INFINITY, n),
    };
    let mut stats = SimStats::default();
    let mut events: Vec<EventRecord> = Vec::new();

    while events.len() < target {
        let lam = state.intensity_at(state.time());
        let bound: f64 = lam.iter().sum();
        let next_switch = switch_times.get(regime).copied().unwrap_or(f64::INFINITY);
        let t = if bound > 0.0 { state.time() - (1.0 - rng.random::<f64>()).ln() / bound } else { f64::INFINITY };
        if next_switch < t.min(horizon) {
            state.decay_to(next_switch);
            regime += 1;
            state = state.with_kernel(&kernels[regime])?;
            continue;
        }
        if t > horizon {
            break;
        }
        if !t.is_finite() {
            return Err(Error::Config("every intensity is zero and no horizon bounds the simulation".into()));
        }
        stats.candidates += 1;
        let lam = state.intensity_at(t);
        state.decay_to(t);
        let total: f64 = lam.iter().sum();
        let u = rng.random::<f64>() * bound;
        if u >= total {
            continue;
        }
        let mut i = 0;
        let mut c = lam[0];
        while u >= c && i < 3 {
            i += 1;
            c += lam[i];
        }
        let kind = EventKind::ALL[i];
        let market = *state.market();
        let mut delta = cfg.jumps.draw(kind, &mut rng);
        if kind.is_narrowing() && delta > market.level() {
            if market.level() == 0 {
                stats.suppressed_at_minimum += 1;
                continue;
            }
            delta = market.level();
            stats.truncated_jumps += 1;
        }
        if kind == EventKind::BidDown {
            let room = (market.bid().nanos() / cfg.tick.nanos()) as u32;
            if delta > room {
                if room == 0 {
                    stats.suppressed_at_minimum += 1;
                    continue;
                }
                delta = room;
                stats.truncated_jumps += 1;
            }
        }
        let next = apply_event(&market, kind, delta, cfg.tick)?;
        state.on_event_to_state(t, kind, next);
        events.push(EventRecord { t, kind, delta, state_after: next });
        stats.accepted += 1;
        if events.len() > cfg.max_events {
            return Err(Error::Explosion { cap: cfg.max_events, t });
        }
    }
    let end = match cfg.stop {
        StopRule::Horizon(h) => h,
        StopRule::Events(_) => events.last().map(|e| e.t).unwrap_or(0.0),
    };
    let stream = EventStream::new(0.0, end, cfg.tick, cfg.initial_state, events)?;
    Ok((stream, stats))
}

/// Simulates `paths` independent streams; path `j` uses seed `seed + j`.
pub fn simulate_paths(cfg: &SimConfig, paths: usize) -> Result<Vec<EventStream>> {
    (0..paths)
        .into_par_iter()
        .map(|j| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(j as u64);
            simulate(&c)
        })
        .collect()
}
