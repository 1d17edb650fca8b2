//! Quote-file parsing, preprocessing into event streams, event-file I/O and windowing.
//!
//! Input quotes are CSV with a header naming at least `time`, `bid` and `ask`
//! (`exchange` and `date` are optional); an empty price leaves that side
//! unchanged. Times are `HH:MM:SS[.fraction]` with up to nine fractional digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{classify_transition, EventKind, EventRecord, EventStream, MarketState, Price, SplitOrder};

pub const EVENTS_SCHEMA: &str = "spread-hawkes/events/v1";
pub const REPORT_SCHEMA: &str = "spread-hawkes/preprocess-report/v1";

const NS_PER_SEC: i64 = 1_000_000_000;

/// Parses `HH:MM:SS[.f]` into nanoseconds since midnight and the number of fractional digits.
pub fn parse_clock(s: &str) -> std::result::Result<(i64, usize), String> {
    let s = s.trim();
    let (hms, frac) = match s.split_once('.') {
        Some((a, b)) => (a, b),
        None => (s, ""),
    };
    let parts: Vec<&str> = hms.split(':').collect();
    if parts.len() != 3 || parts.iter().any(|p| p.is_empty() || p.len() > 2 || !p.bytes().all(|b| b.is_ascii_digit())) {
        return Err(format!("bad time {s:?}"));
    }
    let h: i64 = parts[0].parse().map_err(|_| format!("bad hour in {s:?}"))?;
    let m: i64 = parts[1].parse().map_err(|_| format!("bad minute in {s:?}"))?;
    let sec: i64 = parts[2].parse().map_err(|_| format!("bad second in {s:?}"))?;
    if h > 23 || m > 59 || sec > 60 {
        return Err(format!("time out of range {s:?}"));
    }
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) || (s.contains('.') && frac.is_empty()) {
        return Err(format!("bad fractional seconds in {s:?}"));
    }
    let mut f: i64 = 0;
    for b in frac.bytes() {
        f = f * 10 + (b - b'0') as i64;
    }
    for _ in frac.len()..9 {
        f *= 10;
    }
    Ok((((h * 60 + m) * 60 + sec) * NS_PER_SEC + f, frac.len()))
}

/// Formats nanoseconds since midnight as `HH:MM:SS.fffffffff`.
pub fn format_clock(ns: i64) -> String {
    let secs = ns.div_euclid(NS_PER_SEC);
    let frac = ns.rem_euclid(NS_PER_SEC);
    format!("{:02}:{:02}:{:02}.{:09}", secs / 3600, secs / 60 % 60, secs % 60, frac)
}

/// Parses `HH:MM-HH:MM` (seconds optional) into a nanosecond window.
pub fn parse_session(s: &str) -> std::result::Result<SessionWindow, String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("session must look like 10:00-15:30, got {s:?}"))?;
    let norm = |x: &str| {
        let x = x.trim();
        if x.matches(':').count() == 1 {
            format!("{x}:00")
        } else {
            x.to_string()
        }
    };
    let (start, _) = parse_clock(&norm(a))?;
    let (end, _) = parse_clock(&norm(b))?;
    if end <= start {
        return Err(format!("session end must follow its start in {s:?}"));
    }
    Ok(SessionWindow { start_ns: start, end_ns: end })
}

/// Trading window in nanoseconds since midnight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SessionWindow {
    pub start_ns: i64,
    pub end_ns: i64,
}

impl SessionWindow {
    pub fn duration_secs(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / NS_PER_SEC as f64
    }
}

impl Default for SessionWindow {
    /// 10:00 to 15:30.
    fn default() -> Self {
        SessionWindow { start_ns: 10 * 3600 * NS_PER_SEC, end_ns: (15 * 3600 + 30 * 60) * NS_PER_SEC }
    }
}

/// One quote row; a missing side keeps its previous value.
#[derive(Clone, Debug, PartialEq)]
pub struct RawQuote {
    pub time_ns: i64,
    pub bid: Option<Price>,
    pub ask: Option<Price>,
    pub exchange: Option<String>,
    pub date: Option<String>,
    /// 1-based line number in the source file.
    pub line: usize,
}

impl RawQuote {
    pub fn seconds(&self) -> f64 {
        self.time_ns as f64 / NS_PER_SEC as f64
    }
}

/// Column names of the quote file.
#[derive(Clone, Debug, PartialEq)]
pub struct QuoteFormat {
    pub time: String,
    pub bid: String,
    pub ask: String,
    pub exchange: Option<String>,
    pub date: Option<String>,
}

impl Default for QuoteFormat {
    fn default() -> Self {
        QuoteFormat {
            time: "time".into(),
            bid: "bid".into(),
            ask: "ask".into(),
            exchange: Some("exchange".into()),
            date: Some("date".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MalformedRow {
    pub line: usize,
    pub content: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedQuotes {
    pub quotes: Vec<RawQuote>,
    pub malformed: Vec<MalformedRow>,
    /// Fractional-second digits of the timestamp resolution (0, 3, 6 or 9).
    pub resolution_digits: usize,
    /// Date from a `# date: ...` header line, if any.
    pub header_date: Option<String>,
}

impl ParsedQuotes {
    /// Timestamp resolution in nanoseconds.
    pub fn unit_ns(&self) -> i64 {
        10i64.pow(9 - self.resolution_digits as u32)
    }
}

/// Limit on the share of malformed rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.05;

pub fn parse_quotes<R: Read>(input: R, format: &QuoteFormat) -> Result<ParsedQuotes> {
    let mut reader = std::io::BufReader::new(input);
    let mut header_date = None;
    let mut pending = String::new();
    let mut comment_lines = 0;
    // leading comment lines carry file-level metadata
    loop {
        pending.clear();
        if reader.read_line(&mut pending)? == 0 {
            break;
        }
        let t = pending.trim();
        if let Some(c) = t.strip_prefix('#') {
            comment_lines += 1;
            let c = c.trim();
            if let Some(d) = c.strip_prefix("date").map(|r| r.trim_start_matches([':', '=', ' '])) {
                header_date = Some(d.trim().to_string());
            }
            continue;
        }
        break;
    }
    let rest = pending.clone().into_bytes().into_iter().chain(reader.bytes().map_while(|b| b.ok()));
    let bytes: Vec<u8> = rest.collect();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).comment(Some(b'#')).from_reader(bytes.as_slice());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Parse { line: comment_lines + 1, msg: format!("missing column {name:?}") })
    };
    let (ti, bi, ai) = (need(&format.time)?, need(&format.bid)?, need(&format.ask)?);
    let ei = format.exchange.as_deref().and_then(col);
    let di = format.date.as_deref().and_then(col);

    let mut quotes = Vec::new();
    let mut malformed = Vec::new();
    let mut digits = 0;
    let mut total = 0;
    for rec in rdr.records() {
        total += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize + comment_lines).unwrap_or(0);
                malformed.push(MalformedRow { line, content: String::new(), reason: e.to_string() });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0) + comment_lines;
        let content = rec.iter().collect::<Vec<_>>().join(",");
        let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let parsed = (|| -> std::result::Result<(RawQuote, usize), String> {
            let (time_ns, d) = parse_clock(get(ti))?;
            let price = |s: &str| -> std::result::Result<Option<Price>, String> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<Price>().map(Some)
                }
            };
            let bid = price(get(bi))?;
            let ask = price(get(ai))?;
            if bid.is_none() && ask.is_none() {
                return Err("row has neither bid nor ask".into());
            }
            let opt = |i: Option<usize>| i.map(get).filter(|s| !s.is_empty()).map(str::to_string);
            Ok((
                RawQuote { time_ns, bid, ask, exchange: opt(ei), date: opt(di).or_else(|| header_date.clone()), line },
                d,
            ))
        })();
        match parsed {
            Ok((q, d)) => {
                digits = digits.max(d);
                quotes.push(q);
            }
            Err(reason) => malformed.push(MalformedRow { line, content, reason }),
        }
    }
    if total > 0 && malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::TooManyMalformed { bad: malformed.len(), total });
    }
    let resolution_digits = match digits {
        0 => 0,
        1..=3 => 3,
        4..=6 => 6,
        _ => 9,
    };
    Ok(ParsedQuotes { quotes, malformed, resolution_digits, header_date })
}

pub fn write_malformed<W: Write>(rows: &[MalformedRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "reason", "content"])?;
    for r in rows {
        w.write_record([r.line.to_string(), r.reason.clone(), r.content.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub session: SessionWindow,
    pub tick: Price,
    pub seed: u64,
    /// Timestamp resolution in nanoseconds; relocation happens inside one unit.
    pub unit_ns: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub schema: &'static str,
    pub total_rows: usize,
    /// Groups of two or more rows sharing one timestamp.
    pub relocated_groups: usize,
    /// Events whose time was moved inside the resolution unit.
    pub relocated_events: usize,
    pub forced_splits: usize,
    pub random_splits: usize,
    pub locked_crossed_dropped: usize,
    pub out_of_order_dropped: usize,
    /// Rows before the session start (used to build the opening book) or after its end.
    pub session_excluded: usize,
    pub unchanged_rows: usize,
    /// Rows before both sides of the book are known.
    pub incomplete_rows: usize,
    pub tick_rounding_warnings: usize,
    pub events: usize,
    /// `dropped / total_rows * 100`, where dropped counts locked, crossed and out-of-order rows.
    pub drop_percentage: f64,
    pub empty_stream: bool,
}

/// Turns quotes into a validated stream on the session clock (seconds from session start).
pub fn preprocess(quotes: &[RawQuote], cfg: &PreprocessConfig) -> Result<(EventStream, PreprocessReport)> {
    if cfg.tick.nanos() <= 0 || cfg.unit_ns <= 0 {
        return Err(Error::Config("tick and time unit must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = PreprocessReport { schema: REPORT_SCHEMA, total_rows: quotes.len(), ..Default::default() };
    let tick = cfg.tick;
    let session_secs = cfg.session.duration_secs();
    let round = |p: Price, report: &mut PreprocessReport| {
        let (r, err) = p.round_to_tick(tick);
        if err > 1e-6 {
            report.tick_rounding_warnings += 1;
        }
        r
    };

    let mut bid: Option<Price> = None;
    let mut ask: Option<Price> = None;
    let mut current: Option<MarketState> = None;
    let mut initial: Option<MarketState> = None;
    let mut events: Vec<EventRecord> = Vec::new();
    let mut last_ns = i64::MIN;
    let mut i = 0;
    while i < quotes.len() {
        let ts = quotes[i].time_ns;
        let mut j = i;
        while j < quotes.len() && quotes[j].time_ns == ts {
            j += 1;
        }
        if ts < last_ns {
            report.out_of_order_dropped += j - i;
            i = j;
            continue;
        }
        last_ns = ts;
        if j - i > 1 {
            report.relocated_groups += 1;
        }
        let in_session = ts > cfg.session.start_ns && ts <= cfg.session.end_ns;
        let mut group: Vec<(EventKind, u32, MarketState)> = Vec::new();
        for q in &quotes[i..j] {
            let nb = q.bid.map(|p| round(p, &mut report)).or(bid);
            let na = q.ask.map(|p| round(p, &mut report)).or(ask);
            let (Some(b), Some(a)) = (nb, na) else {
                bid = nb;
                ask = na;
                report.incomplete_rows += 1;
                continue;
            };
            let next = match MarketState::new(b, a, tick) {
                Ok(s) => s,
                Err(_) => {
                    report.locked_crossed_dropped += 1;
                    continue;
                }
            };
            bid = Some(b);
            ask = Some(a);
            if !in_session {
                report.session_excluded += 1;
                if ts <= cfg.session.start_ns {
                    current = Some(next);
                }
                continue;
            }
            let Some(prev) = current else {
                // first complete book inside the session opens it
                current = Some(next);
                initial = Some(next);
                continue;
            };
            if initial.is_none() {
                initial = Some(prev);
            }
            if prev.same_quotes(&next) {
                report.unchanged_rows += 1;
                continue;
            }
            let tr = classify_transition(&prev, &next, tick, &mut rng)?;
            match tr.order {
                SplitOrder::Forced => report.forced_splits += 1,
                SplitOrder::Random => report.random_splits += 1,
                SplitOrder::Single => {}
            }
            let mut state = prev;
            for (kind, delta) in tr.steps {
                state = crate::market::apply_event(&state, kind, delta, tick)?;
                group.push((kind, delta, state));
            }
            current = Some(next);
        }
        let k = group.len() as i64;
        if k > 1 {
            report.relocated_events += group.len() - 1;
        }
        for (m, (kind, delta, state_after)) in group.into_iter().enumerate() {
            // equidistant inside the unit: offset_m = m * unit / (k + 1)
            let offset = m as f64 * cfg.unit_ns as f64 / (k + 1) as f64;
            let t = ((ts - cfg.session.start_ns) as f64 + offset) / NS_PER_SEC as f64;
            events.push(EventRecord { t, kind, delta, state_after });
        }
        i = j;
    }
    if initial.is_none() {
        initial = current;
    }
    let Some(initial) = initial else {
        return Err(Error::InvalidStream("no complete, valid quote in the file".into()));
    };
    // the last unit of the session may spill past its end after relocation
    let end = events.last().map(|e| e.t).unwrap_or(0.0).max(session_secs);
    let stream = EventStream::new(0.0, end, tick, initial, events)?;
    report.events = stream.len();
    report.empty_stream = stream.is_empty();
    let dropped = report.locked_crossed_dropped + report.out_of_order_dropped;
    report.drop_percentage =
        if report.total_rows > 0 { 100.0 * dropped as f64 / report.total_rows as f64 } else { 0.0 };
    Ok((stream, report))
}

/// Writes the event CSV: `#` metadata lines, then `t,kind,delta,bid,ask`.
pub fn write_events<W: Write>(stream: &EventStream, mut out: W) -> Result<()> {
    let init = stream.initial_state();
    let mut head = String::new();
    let _ = writeln!(head, "# schema={EVENTS_SCHEMA}");
    let _ = writeln!(head, "# session_start={:?}", stream.session_start());
    let _ = writeln!(head, "# session_end={:?}", stream.session_end());
    let _ = writeln!(head, "# tick={}", stream.tick());
    let _ = writeln!(head, "# initial_bid={}", init.bid());
    let _ = writeln!(head, "# initial_ask={}", init.ask());
    out.write_all(head.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "kind", "delta", "bid", "ask"])?;
    for e in stream.events() {
        w.write_record([
            format!("{:?}", e.t),
            e.kind.to_string(),
            e.delta.to_string(),
            e.state_after.bid().to_string(),
            e.state_after.ask().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an event CSV written by [`write_events`] and re-validates it.
pub fn read_events<R: Read>(input: R) -> Result<EventStream> {
    let mut reader = std::io::BufReader::new(input);
    let mut meta = BTreeMap::new();
    let mut line = String::new();
    let mut n_meta = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        match line.trim().strip_prefix('#') {
            Some(m) => {
                n_meta += 1;
                if let Some((k, v)) = m.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            None => break,
        }
    }
    let get = |k: &str| {
        meta.get(k).ok_or_else(|| Error::Parse { line: 1, msg: format!("missing metadata line '# {k}=...'") })
    };
    let num =
        |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::Parse { line: 1, msg: format!("{k}: {e}") }) };
    let price =
        |k: &str| -> Result<Price> { get(k)?.parse().map_err(|e| Error::Parse { line: 1, msg: format!("{k}: {e}") }) };
    let tick = price("tick")?;
    let initial = MarketState::new(price("initial_bid")?, price("initial_ask")?, tick)?;
    let (start, end) = (num("session_start")?, num("session_end")?);

    let rest: Vec<u8> = line.into_bytes().into_iter().chain(reader.bytes().map_while(|b| b.ok())).collect();
    let mut rdr = csv::Reader::from_reader(rest.as_slice());
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ln = n_meta + i + 2;
        let f = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
        let perr = |msg: String| Error::Parse { line: ln, msg };
        let t: f64 = f(0).parse().map_err(|e| perr(format!("t: {e}")))?;
        let kind: EventKind = f(1).parse().map_err(perr)?;
        let delta: u32 = f(2).parse().map_err(|e| perr(format!("delta: {e}")))?;
        let bid: Price = f(3).parse().map_err(perr)?;
        let ask: Price = f(4).parse().map_err(perr)?;
        let state_after = MarketState::new(bid, ask, tick)?;
        events.push(EventRecord { t, kind, delta, state_after });
    }
    EventStream::new(start, end, tick, initial, events)
}

/// Writes a stream as a quote file, placing its clock at `session_start_ns` after midnight.
/// Times are rounded to the nanosecond.
pub fn write_quotes<W: Write>(stream: &EventStream, session_start_ns: i64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "bid", "ask"])?;
    let to_ns = |t: f64| session_start_ns + ((t - stream.session_start()) * NS_PER_SEC as f64).round() as i64;
    let init = stream.initial_state();
    w.write_record([format_clock(to_ns(stream.session_start())), init.bid().to_string(), init.ask().to_string()])?;
    for e in stream.events() {
        let (b, a) = match e.kind {
            EventKind::AskUp | EventKind::AskDown => (String::new(), e.state_after.ask().to_string()),
            EventKind::BidUp | EventKind::BidDown => (e.state_after.bid().to_string(), String::new()),
        };
        w.write_record([format_clock(to_ns(e.t)), b, a])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowMode {
    Daily,
    /// Overlapping windows of `length` seconds starting every `step` seconds.
    Intraday {
        length: f64,
        step: f64,
    },
}

/// Sub-streams with the book snapshotted at each window start.
pub fn windows(stream: &EventStream, mode: WindowMode) -> Result<Vec<EventStream>> {
    match mode {
        WindowMode::Daily => Ok(vec![stream.clone()]),
        WindowMode::Intraday { length, step } => {
            if !(length > 0.0 && step > 0.0) {
                return Err(Error::Config("window length and step must be positive".into()));
            }
            let span = stream.duration();
            if length > span {
                return Ok(Vec::new());
            }
            let count = ((span - length) / step + 1e-9).floor() as usize + 1;
            (0..count)
                .map(|k| {
                    let s = stream.session_start() + k as f64 * step;
                    stream.slice(s, s + length)
                })
                .collect()
        }
    }
}

/// Parses durations such as `3m`, `90s`, `1h` or a bare number of seconds.
pub fn parse_duration(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let (num, mult) = match s.chars().last() {
        Some('s') => (&s[..s.len() - 1], 1.0),
        Some('m') => (&s[..s.len() - 1], 60.0),
        Some('h') => (&s[..s.len() - 1], 3600.0),
        _ => (s, 1.0),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad duration {s:?}"))?;
    if !(v > 0.0) {
        return Err(format!("duration must be positive, got {s:?}"));
    }
    Ok(v * mult)
}
