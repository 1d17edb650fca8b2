//! Two-process model of the spread on the absolute level `L`.
//!
//! `lambda_u = 2 mu + alpha_s1 * (up excitation) + (alpha_s2 + alpha_m) * (down excitation)`
//! and `lambda_d = 2 eta L(t-)`, optionally plus `(alpha_w1 + alpha_w2)` excitation from
//! up moves with a reset to `xi L(tau+)` after each down move. Jumps are one tick.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::CoreParams;
use crate::likelihood::LogLik;
use crate::market::EventStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadEvent {
    pub t: f64,
    pub up: bool,
    pub level_after: u32,
}

/// Spread-level path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpreadPath {
    pub initial_level: u32,
    pub horizon: f64,
    pub events: Vec<SpreadEvent>,
}

impl SpreadPath {
    /// Widening moves become up moves, narrowing moves down moves; the level is
    /// taken from the recorded book, so multi-tick jumps are kept as they are.
    pub fn from_stream(stream: &EventStream) -> Self {
        let t0 = stream.session_start();
        SpreadPath {
            initial_level: stream.initial_state().level(),
            horizon: stream.duration(),
            events: stream
                .events()
                .iter()
                .map(|e| SpreadEvent { t: e.t - t0, up: e.kind.is_widening(), level_after: e.state_after.level() })
                .collect(),
        }
    }

    pub fn time_average_level(&self) -> f64 {
        let mut level = self.initial_level as f64;
        let mut last = 0.0;
        let mut area = 0.0;
        for e in &self.events {
            area += level * (e.t - last);
            level = e.level_after as f64;
            last = e.t;
        }
        area += level * (self.horizon - last);
        area / self.horizon
    }

    /// Average event rates of the up and down processes.
    pub fn event_rates(&self) -> (f64, f64) {
        let up = self.events.iter().filter(|e| e.up).count() as f64;
        let down = self.events.len() as f64 - up;
        (up / self.horizon, down / self.horizon)
    }
}

/// Whether the core parameters switch on excitation of the down process.
pub fn excites_down(p: &CoreParams) -> bool {
    p.alpha_w1 + p.alpha_w2 > 0.0 || p.xi > 0.0
}

#[derive(Clone, Copy, Debug)]
struct SpreadState {
    eu: f64,
    ed: f64,
    level: u32,
}

impl SpreadState {
    fn intensities(&self, p: &CoreParams) -> (f64, f64) {
        (2.0 * p.mu + self.eu, 2.0 * p.eta * self.level as f64 + self.ed)
    }

    fn decay(&mut self, p: &CoreParams, dt: f64) {
        let d = (-p.beta * dt).exp();
        self.eu *= d;
        self.ed *= d;
    }

    fn apply(&mut self, p: &CoreParams, up: bool, level_after: u32, excite: bool) {
        self.level = level_after;
        if up {
            self.eu += p.alpha_s1;
            if excite {
                self.ed += p.alpha_w1 + p.alpha_w2;
            }
        } else {
            self.eu += p.alpha_s2 + p.alpha_m;
            self.ed = if excite { p.xi * level_after as f64 } else { 0.0 };
        }
    }
}

pub fn log_likelihood(path: &SpreadPath, p: &CoreParams, excite: bool) -> LogLik {
    let mut s = SpreadState { eu: 0.0, ed: 0.0, level: path.initial_level };
    let w = |dt: f64| -(-p.beta * dt).exp_m1() / p.beta;
    let mut last = 0.0;
    let mut ll = 0.0;
    for (j, e) in path.events.iter().enumerate() {
        let dt = e.t - last;
        let (bu, bd) = (2.0 * p.mu, 2.0 * p.eta * s.level as f64);
        ll -= (bu + bd) * dt + (s.eu + s.ed) * w(dt);
        s.decay(p, dt);
        let (lu, ld) = s.intensities(p);
        let lam = if e.up { lu } else { ld };
        if !(lam > 0.0) {
            return LogLik { value: f64::NEG_INFINITY, zero_intensity_at: Some(j) };
        }
        ll += lam.ln();
        s.apply(p, e.up, e.level_after, excite);
        last = e.t;
    }
    let dt = path.horizon - last;
    ll -= (2.0 * p.mu + 2.0 * p.eta * s.level as f64) * dt + (s.eu + s.ed) * w(dt);
    LogLik { value: ll, zero_intensity_at: None }
}

#[derive(Clone, Debug)]
pub struct SpreadSimConfig {
    pub params: CoreParams,
    pub initial_level: u32,
    pub horizon: f64,
    /// Add the provision excitation and reset to the down intensity.
    pub excite_down: bool,
    pub seed: u64,
    pub max_events: usize,
}

impl SpreadSimConfig {
    pub fn new(params: CoreParams, horizon: f64, seed: u64) -> Self {
        SpreadSimConfig { params, initial_level: 0, horizon, excite_down: false, seed, max_events: 10_000_000 }
    }
}

/// Summary of a spread-only simulation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpreadSummary {
    pub time_average_level: f64,
    pub up_rate: f64,
    pub down_rate: f64,
    pub n_events: usize,
}

impl SpreadSummary {
    pub fn of(path: &SpreadPath) -> Self {
        let (up_rate, down_rate) = path.event_rates();
        SpreadSummary { time_average_level: path.time_average_level(), up_rate, down_rate, n_events: path.events.len() }
    }
}

/// Thinning with the right-limit total intensity as the dominating rate.
pub fn simulate_spread_only(cfg: &SpreadSimConfig) -> Result<SpreadPath> {
    let p = &cfg.params;
    if !(cfg.horizon > 0.0) || !(p.beta > 0.0) {
        return Err(Error::Config("horizon and beta must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = SpreadState { eu: 0.0, ed: 0.0, level: cfg.initial_level };
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let (lu, ld) = s.intensities(p);
        let bound = lu + ld;
        if !(bound > 0.0) {
            break;
        }
        let w = -(1.0 - rng.random::<f64>()).ln() / bound;
        s.decay(p, w);
        t += w;
        if t > cfg.horizon {
            break;
        }
        let (lu, ld) = s.intensities(p);
        let u = rng.random::<f64>() * bound;
        if u >= lu + ld {
            continue;
        }
        let up = u < lu;
        let level_after = if up { s.level + 1 } else { s.level - 1 };
        s.apply(p, up, level_after, cfg.excite_down);
        events.push(SpreadEvent { t, up, level_after });
        if events.len() > cfg.max_events {
            return Err(Error::Explosion { cap: cfg.max_events, t });
        }
    }
    Ok(SpreadPath { initial_level: cfg.initial_level, horizon: cfg.horizon, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row1() -> CoreParams {
        CoreParams {
            mu: 0.08,
            eta: 0.1,
            alpha_s1: 4.0,
            alpha_s2: 26.0,
            alpha_m: 5.0,
            alpha_w1: 11.0,
            alpha_w2: 7.0,
            beta: 50.0,
            xi: 2.7,
        }
    }

    #[test]
    fn level_never_negative_and_deterministic() {
        let cfg = SpreadSimConfig::new(row1(), 2000.0, 7);
        let a = simulate_spread_only(&cfg).unwrap();
        let b = simulate_spread_only(&cfg).unwrap();
        assert_eq!(a, b);
        let mut level = a.initial_level as i64;
        for e in &a.events {
            level += if e.up { 1 } else { -1 };
            assert_eq!(level, e.level_after as i64);
            assert!(level >= 0);
        }
    }

    #[test]
    fn down_moves_impossible_at_zero() {
        let path = SpreadPath {
            initial_level: 0,
            horizon: 1.0,
            events: vec![SpreadEvent { t: 0.5, up: false, level_after: 0 }],
        };
        let ll = log_likelihood(&path, &row1(), false);
        assert_eq!(ll.zero_intensity_at, Some(0));
    }

    #[test]
    fn poisson_birth_death_likelihood() {
        let mut p = row1();
        p.alpha_s1 = 0.0;
        p.alpha_s2 = 0.0;
        p.alpha_m = 0.0;
        let path = SpreadPath {
            initial_level: 1,
            horizon: 2.0,
            events: vec![SpreadEvent { t: 1.0, up: true, level_after: 2 }],
        };
        // up at rate 0.16 throughout; down at 0.2 then 0.4
        let expected = (0.16f64).ln() - 0.16 * 2.0 - 0.2 - 0.4;
        let ll = log_likelihood(&path, &p, false);
        assert!((ll.value - expected).abs() < 1e-14);
    }
}
