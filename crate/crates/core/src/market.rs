//! Level-one book state, event classification and event streams.
//!
//! Prices are fixed-point decimals ([`Price`]) so that tick arithmetic is exact.
//! The spread level `L` counts ticks above the minimum spread of one tick, and
//! the relative level is `ell = L / p` with the mid-price `p` in currency units.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

const NANOS_PER_UNIT: i64 = 1_000_000_000;

/// A non-negative decimal price with nine fractional digits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Price(i64);

impl Price {
    pub const ZERO: Price = Price(0);

    pub const fn from_nanos(nanos: i64) -> Self {
        Price(nanos)
    }

    pub const fn nanos(self) -> i64 {
        self.0
    }

    /// Nearest representable price; used for configuration values given as floats.
    pub fn from_f64(value: f64) -> Self {
        Price((value * NANOS_PER_UNIT as f64).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_UNIT as f64
    }

    /// Rounds to the nearest multiple of `tick`, returning the rounded price and
    /// the rounding error as a fraction of the tick.
    pub fn round_to_tick(self, tick: Price) -> (Price, f64) {
        let t = tick.0;
        let q = (self.0 + t / 2).div_euclid(t);
        let rounded = Price(q * t);
        let err = (self.0 - rounded.0).abs() as f64 / t as f64;
        (rounded, err)
    }

    fn offset_ticks(self, ticks: i64, tick: Price) -> Price {
        Price(self.0 + ticks * tick.0)
    }
}

impl FromStr for Price {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty price".into());
        }
        if s.starts_with('-') {
            return Err(format!("negative price {s:?}"));
        }
        let s = s.strip_prefix('+').unwrap_or(s);
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("invalid price {s:?}"));
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("invalid price {s:?}"));
        }
        let whole: i64 =
            if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| format!("price out of range {s:?}"))? };
        let mut frac: i64 = 0;
        for (i, b) in frac_part.bytes().enumerate() {
            let d = (b - b'0') as i64;
            if i < 9 {
                frac = frac * 10 + d;
            } else if i == 9 {
                // round half up on the tenth digit
                if d >= 5 {
                    frac += 1;
                }
                break;
            }
        }
        for _ in frac_part.len()..9 {
            frac *= 10;
        }
        whole
            .checked_mul(NANOS_PER_UNIT)
            .and_then(|w| w.checked_add(frac))
            .map(Price)
            .ok_or_else(|| format!("price out of range {s:?}"))
    }
}

impl fmt::Display for Price {
    /// At least two decimals, more only when needed.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / NANOS_PER_UNIT as u64;
        let frac = abs % NANOS_PER_UNIT as u64;
        let mut digits = format!("{frac:09}");
        while digits.len() > 2 && digits.ends_with('0') {
            digits.pop();
        }
        write!(f, "{sign}{whole}.{digits}")
    }
}

/// The four best-price movements, in process order `N_1..N_4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    AskUp,
    AskDown,
    BidUp,
    BidDown,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::AskUp, EventKind::AskDown, EventKind::BidUp, EventKind::BidDown];

    /// Zero-based process index (AskUp = 0 ... BidDown = 3).
    pub const fn index(self) -> usize {
        match self {
            EventKind::AskUp => 0,
            EventKind::AskDown => 1,
            EventKind::BidUp => 2,
            EventKind::BidDown => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub const fn is_widening(self) -> bool {
        matches!(self, EventKind::AskUp | EventKind::BidDown)
    }

    pub const fn is_narrowing(self) -> bool {
        !self.is_widening()
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            EventKind::AskUp => "ask_up",
            EventKind::AskDown => "ask_down",
            EventKind::BidUp => "bid_up",
            EventKind::BidDown => "bid_down",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ask_up" | "au" | "1" => Ok(EventKind::AskUp),
            "ask_down" | "ad" | "2" => Ok(EventKind::AskDown),
            "bid_up" | "bu" | "3" => Ok(EventKind::BidUp),
            "bid_down" | "bd" | "4" => Ok(EventKind::BidDown),
            other => Err(format!("unknown event kind {other:?}")),
        }
    }
}

/// A valid (unlocked, uncrossed) level-one book.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketState {
    bid: Price,
    ask: Price,
    level: u32,
    mid: f64,
    rel_level: f64,
}

impl MarketState {
    pub fn new(bid: Price, ask: Price, tick: Price) -> Result<Self> {
        if tick.nanos() <= 0 {
            return Err(Error::InvalidState(format!("tick must be positive, got {tick}")));
        }
        if bid < Price::ZERO {
            return Err(Error::InvalidState(format!("negative bid {bid}")));
        }
        if ask <= bid {
            return Err(Error::InvalidState(format!("locked or crossed book: bid {bid} ask {ask}")));
        }
        let spread = ask.nanos() - bid.nanos();
        let ticks = (spread + tick.nanos() / 2) / tick.nanos();
        if ticks < 1 {
            return Err(Error::InvalidState(format!("spread {} below one tick {tick}", Price(spread))));
        }
        let level = u32::try_from(ticks - 1)
            .map_err(|_| Error::InvalidState(format!("spread of {ticks} ticks is too wide")))?;
        let mid = (bid.nanos() as f64 + ask.nanos() as f64) / (2.0 * NANOS_PER_UNIT as f64);
        Ok(MarketState { bid, ask, level, mid, rel_level: level as f64 / mid })
    }

    pub fn bid(&self) -> Price {
        self.bid
    }

    pub fn ask(&self) -> Price {
        self.ask
    }

    /// Mid-price `p` in currency units.
    pub fn mid(&self) -> f64 {
        self.mid
    }

    /// Absolute spread level `L` (ticks above the one-tick minimum).
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Relative level `ell = L / p`.
    pub fn rel_level(&self) -> f64 {
        self.rel_level
    }

    pub fn same_quotes(&self, other: &MarketState) -> bool {
        self.bid == other.bid && self.ask == other.ask
    }
}

/// Moves one side of the book by `delta` ticks in the direction of `kind`.
pub fn apply_event(state: &MarketState, kind: EventKind, delta: u32, tick: Price) -> Result<MarketState> {
    if delta == 0 {
        return Err(Error::InvalidState("jump size must be at least one tick".into()));
    }
    if kind.is_narrowing() && delta > state.level {
        return Err(Error::WouldCross { kind, delta, level: state.level });
    }
    let d = delta as i64;
    let (bid, ask) = match kind {
        EventKind::AskUp => (state.bid, state.ask.offset_ticks(d, tick)),
        EventKind::AskDown => (state.bid, state.ask.offset_ticks(-d, tick)),
        EventKind::BidUp => (state.bid.offset_ticks(d, tick), state.ask),
        EventKind::BidDown => (state.bid.offset_ticks(-d, tick), state.ask),
    };
    MarketState::new(bid, ask, tick)
}

/// How a two-sided quote change was ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitOrder {
    /// Only one side changed.
    Single,
    /// Only one ordering avoids a locked or crossed intermediate book.
    Forced,
    /// Both orderings were valid; the order was drawn at random.
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub steps: Vec<(EventKind, u32)>,
    pub order: SplitOrder,
}

fn side_step(delta_nanos: i64, tick: Price, up: EventKind, down: EventKind) -> Result<(EventKind, u32)> {
    let ticks = (delta_nanos.abs() + tick.nanos() / 2) / tick.nanos();
    if ticks == 0 {
        return Err(Error::InvalidState(format!("price change {} is smaller than half a tick", Price(delta_nanos))));
    }
    let ticks = u32::try_from(ticks).map_err(|_| Error::InvalidState("price jump too large".into()))?;
    Ok((if delta_nanos > 0 { up } else { down }, ticks))
}

/// Splits a quote update into one or two single-side events.
///
/// When both sides move, the ordering that never produces a locked or crossed
/// intermediate book is used; if both orderings are valid, `rng` picks one.
pub fn classify_transition<R: Rng + ?Sized>(
    prev: &MarketState,
    next: &MarketState,
    tick: Price,
    rng: &mut R,
) -> Result<Transition> {
    if next.ask <= next.bid {
        return Err(Error::InvalidState(format!("locked or crossed book: bid {} ask {}", next.bid, next.ask)));
    }
    let dbid = next.bid.nanos() - prev.bid.nanos();
    let dask = next.ask.nanos() - prev.ask.nanos();
    let ask_step = || side_step(dask, tick, EventKind::AskUp, EventKind::AskDown);
    let bid_step = || side_step(dbid, tick, EventKind::BidUp, EventKind::BidDown);
    match (dbid != 0, dask != 0) {
        (false, false) => Err(Error::InvalidState("no side of the book changed".into())),
        (false, true) => Ok(Transition { steps: vec![ask_step()?], order: SplitOrder::Single }),
        (true, false) => Ok(Transition { steps: vec![bid_step()?], order: SplitOrder::Single }),
        (true, true) => {
            let ask_first_ok = next.ask.nanos() - prev.bid.nanos() >= tick.nanos();
            let bid_first_ok = prev.ask.nanos() - next.bid.nanos() >= tick.nanos();
            let (a, b) = (ask_step()?, bid_step()?);
            let (ask_first, order) = match (ask_first_ok, bid_first_ok) {
                (true, true) => (rng.random::<bool>(), SplitOrder::Random),
                (true, false) => (true, SplitOrder::Forced),
                (false, true) => (false, SplitOrder::Forced),
                (false, false) => unreachable!("a valid next state admits at least one ordering"),
            };
            let steps = if ask_first { vec![a, b] } else { vec![b, a] };
            Ok(Transition { steps, order })
        }
    }
}

/// One best-bid/ask change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    /// Seconds on the session clock.
    pub t: f64,
    pub kind: EventKind,
    /// Jump size in ticks.
    pub delta: u32,
    pub state_after: MarketState,
}

/// A validated, time-ordered sequence of events over one session.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    session_start: f64,
    session_end: f64,
    tick: Price,
    initial_state: MarketState,
    events: Vec<EventRecord>,
}

impl EventStream {
    pub fn new(
        session_start: f64,
        session_end: f64,
        tick: Price,
        initial_state: MarketState,
        events: Vec<EventRecord>,
    ) -> Result<Self> {
        let stream = EventStream { session_start, session_end, tick, initial_state, events };
        stream.validate()?;
        Ok(stream)
    }

    /// Builds a stream by replaying `(t, kind, delta)` triples from `initial_state`.
    pub fn from_moves(
        session_start: f64,
        session_end: f64,
        tick: Price,
        initial_state: MarketState,
        moves: impl IntoIterator<Item = (f64, EventKind, u32)>,
    ) -> Result<Self> {
        let mut state = initial_state;
        let mut events = Vec::new();
        for (t, kind, delta) in moves {
            state = apply_event(&state, kind, delta, tick)?;
            events.push(EventRecord { t, kind, delta, state_after: state });
        }
        Self::new(session_start, session_end, tick, initial_state, events)
    }

    fn validate(&self) -> Result<()> {
        if !(self.session_start.is_finite() && self.session_end.is_finite()) || self.session_end < self.session_start {
            return Err(Error::InvalidStream(format!(
                "bad session bounds [{}, {}]",
                self.session_start, self.session_end
            )));
        }
        let mut prev_t = self.session_start;
        let mut state = self.initial_state;
        for (j, ev) in self.events.iter().enumerate() {
            if !(ev.t > prev_t) {
                return Err(Error::InvalidStream(format!("event {j} at t={} does not follow t={prev_t}", ev.t)));
            }
            if ev.t > self.session_end {
                return Err(Error::InvalidStream(format!(
                    "event {j} at t={} is after session end {}",
                    ev.t, self.session_end
                )));
            }
            let expected = apply_event(&state, ev.kind, ev.delta, self.tick)?;
            if !expected.same_quotes(&ev.state_after) {
                return Err(Error::InvalidStream(format!(
                    "event {j}: recorded state ({}, {}) differs from replayed ({}, {})",
                    ev.state_after.bid, ev.state_after.ask, expected.bid, expected.ask
                )));
            }
            state = expected;
            prev_t = ev.t;
        }
        Ok(())
    }

    pub fn session_start(&self) -> f64 {
        self.session_start
    }

    pub fn session_end(&self) -> f64 {
        self.session_end
    }

    pub fn duration(&self) -> f64 {
        self.session_end - self.session_start
    }

    pub fn tick(&self) -> Price {
        self.tick
    }

    pub fn initial_state(&self) -> &MarketState {
        &self.initial_state
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Event counts per process.
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for ev in &self.events {
            c[ev.kind.index()] += 1;
        }
        c
    }

    /// State prevailing at `t` (after every event at or before `t`).
    pub fn state_at(&self, t: f64) -> MarketState {
        let n = self.events.partition_point(|e| e.t <= t);
        if n == 0 {
            self.initial_state
        } else {
            self.events[n - 1].state_after
        }
    }

    /// Sub-stream over `(start, end]` whose initial state is the book at `start`.
    pub fn slice(&self, start: f64, end: f64) -> Result<EventStream> {
        let lo = self.events.partition_point(|e| e.t <= start);
        let hi = self.events.partition_point(|e| e.t <= end);
        EventStream::new(start, end, self.tick, self.state_at(start), self.events[lo..hi.max(lo)].to_vec())
    }

    /// The same stream with every time (and the session bounds) moved by `offset`.
    pub fn shifted(&self, offset: f64) -> EventStream {
        EventStream {
            session_start: self.session_start + offset,
            session_end: self.session_end + offset,
            tick: self.tick,
            initial_state: self.initial_state,
            events: self.events.iter().map(|e| EventRecord { t: e.t + offset, ..*e }).collect(),
        }
    }

    /// Time average of the relative level over the session.
    pub fn mean_rel_level(&self) -> f64 {
        let dur = self.duration();
        if dur <= 0.0 {
            return self.initial_state.rel_level;
        }
        let mut acc = 0.0;
        let mut t = self.session_start;
        let mut ell = self.initial_state.rel_level;
        for ev in &self.events {
            acc += ell * (ev.t - t);
            t = ev.t;
            ell = ev.state_after.rel_level;
        }
        acc += ell * (self.session_end - t);
        acc / dur
    }
}
