//! Time-change residuals, Q-Q/KS goodness of fit and derived market-quality analytics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{replay, CoreParams, ParamSet};
use crate::market::{EventKind, EventStream};

/// Integrated intensity between consecutive events of each process.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    /// `per_process[i][j]`: compensator of process `i` from its (j-1)-th event
    /// (or the session start) to its j-th event.
    pub per_process: [Vec<f64>; 4],
    /// Censored compensator from each process's last event to the session end.
    pub tails: [f64; 4],
}

impl Residuals {
    /// All residuals, process by process.
    pub fn pooled(&self) -> Vec<f64> {
        self.per_process.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_process.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> f64 {
        let n = self.len();
        self.per_process.iter().flatten().sum::<f64>() / n as f64
    }
}

/// Sums the per-interval compensators between same-process events; intervals
/// that straddle other processes' events are split there by construction.
pub fn residuals(stream: &EventStream, params: &ParamSet) -> Result<Residuals> {
    let r = replay(stream, params)?;
    let mut running = [0.0f64; 4];
    let mut per_process: [Vec<f64>; 4] = Default::default();
    for (ev, comp) in stream.events().iter().zip(&r.compensators) {
        for i in 0..4 {
            running[i] += comp[i];
        }
        let k = ev.kind.index();
        per_process[k].push(running[k]);
        running[k] = 0.0;
    }
    let tails = std::array::from_fn(|i| running[i] + r.tail[i]);
    Ok(Residuals { per_process, tails })
}

/// `(theoretical, empirical)` quantiles against Exp(1) at positions `(j - 0.5) / n`.
pub fn qq_points(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut x = residuals.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter().enumerate().map(|(j, &v)| (-(1.0 - (j as f64 + 0.5) / n).ln(), v)).collect()
}

/// Kolmogorov-Smirnov distance to Exp(1).
pub fn ks_statistic(residuals: &[f64]) -> f64 {
    let mut x = residuals.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(j, &v)| {
            let f = -(-v.max(0.0)).exp_m1();
            ((j as f64 + 1.0) / n - f).max(f - j as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.05 or 0.01.
pub fn ks_critical(n: usize, level: f64) -> f64 {
    let c = if level <= 0.01 { 1.63 } else { 1.36 };
    c / (n as f64).sqrt()
}

/// Goodness-of-fit summary of one residual sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GofSummary {
    pub n: usize,
    pub mean: f64,
    pub ks: f64,
    pub ks_critical_5: f64,
    pub ks_critical_1: f64,
}

impl GofSummary {
    pub fn of(residuals: &[f64]) -> Self {
        let n = residuals.len();
        GofSummary {
            n,
            mean: residuals.iter().sum::<f64>() / n as f64,
            ks: ks_statistic(residuals),
            ks_critical_5: ks_critical(n, 0.05),
            ks_critical_1: ks_critical(n, 0.01),
        }
    }
}

fn core_of(params: &ParamSet) -> Result<CoreParams> {
    params
        .core()
        .ok_or_else(|| Error::InvalidParams(format!("{} has no single set of liquidity parameters", params.variant())))
}

/// Mean of the five excitation parameters.
pub fn alpha_bar(params: &ParamSet) -> Result<f64> {
    let c = core_of(params)?;
    Ok((c.alpha_s1 + c.alpha_s2 + c.alpha_m + c.alpha_w1 + c.alpha_w2) / 5.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LiquidityRatio {
    /// `(alpha_w1 + alpha_w2) / 2`.
    pub provision_mean: f64,
    /// `(alpha_s1 + alpha_s2 + alpha_m) / 3`.
    pub depletion_mean: f64,
    /// `depletion_mean / provision_mean`; `None` without provision.
    pub ratio: Option<f64>,
}

pub fn liquidity_ratio(params: &ParamSet) -> Result<LiquidityRatio> {
    let c = core_of(params)?;
    let provision_mean = (c.alpha_w1 + c.alpha_w2) / 2.0;
    let depletion_mean = (c.alpha_s1 + c.alpha_s2 + c.alpha_m) / 3.0;
    Ok(LiquidityRatio {
        provision_mean,
        depletion_mean,
        ratio: (provision_mean > 0.0).then(|| depletion_mean / provision_mean),
    })
}

/// Trailing mean; the first `window - 1` points average what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= series[i - w];
        }
        let m = (i + 1).min(w);
        // recompute exactly every so often to keep the running sum honest
        if i % 4096 == 4095 {
            sum = series[i + 1 - m..=i].iter().sum();
        }
        out.push(sum / m as f64);
    }
    out
}

/// Linear stability of the mean spread dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub trace: f64,
    pub determinant: f64,
    pub stable: bool,
    pub steady_state_level: Option<f64>,
    pub steady_state_rate: Option<f64>,
}

pub fn stability_report(p: &CoreParams) -> StabilityReport {
    let depletion = p.alpha_s1 + p.alpha_s2 + p.alpha_m;
    let trace = p.alpha_s1 - p.beta - 2.0 * p.eta;
    let determinant = 2.0 * p.eta * (p.beta - depletion);
    let stable = trace < 0.0 && determinant > 0.0;
    let gap = p.beta - depletion;
    StabilityReport {
        trace,
        determinant,
        stable,
        steady_state_level: stable.then(|| p.beta * p.mu / (p.eta * gap)),
        steady_state_rate: stable.then(|| 2.0 * p.beta * p.mu / gap),
    }
}

/// Event kinds whose residual sample is large enough to summarize.
pub fn per_process_gof(res: &Residuals, min_n: usize) -> Vec<(EventKind, GofSummary)> {
    EventKind::ALL
        .iter()
        .zip(&res.per_process)
        .filter(|(_, r)| r.len() >= min_n.max(1))
        .map(|(k, r)| (*k, GofSummary::of(r)))
        .collect()
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
    fn qq_single_point() {
        let q = qq_points(&[std::f64::consts::LN_2]);
        assert!((q[0].0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((q[0].1 - 0.693).abs() < 1e-3);
    }

    #[test]
    fn ks_hand_case() {
        // F(x) = 1 - e^-x at 0.5 and 2.0
        let f1 = 1.0 - (-0.5f64).exp();
        let f2 = 1.0 - (-2.0f64).exp();
        let expected = [f1, 0.5 - f1, f2 - 0.5, 1.0 - f2].into_iter().fold(0.0, f64::max);
        assert!((ks_statistic(&[2.0, 0.5]) - expected).abs() < 1e-15);
    }

    #[test]
    fn analytics_examples() {
        let ps = ParamSet::proposed(row1()).unwrap();
        assert!((alpha_bar(&ps).unwrap() - 10.6).abs() < 1e-12);
        let mut eq = row1();
        for a in [&mut eq.alpha_s1, &mut eq.alpha_s2, &mut eq.alpha_m, &mut eq.alpha_w1, &mut eq.alpha_w2] {
            *a = 3.0;
        }
        let lr = liquidity_ratio(&ParamSet::proposed(eq).unwrap()).unwrap();
        assert_eq!(lr.ratio, Some(1.0));
        eq.alpha_w1 = 0.0;
        eq.alpha_w2 = 0.0;
        assert_eq!(liquidity_ratio(&ParamSet::proposed(eq).unwrap()).unwrap().ratio, None);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[2.0; 30], 20), vec![2.0; 30]);
        let mut s = vec![0.0; 19];
        s.push(20.0);
        assert_eq!(*moving_average(&s, 20).last().unwrap(), 1.0);
        let ramp: Vec<f64> = (1..=40).map(f64::from).collect();
        assert!((moving_average(&ramp, 20)[39] - 30.5).abs() < 1e-12);
        assert_eq!(moving_average(&ramp, 20)[1], 1.5);
    }

    #[test]
    fn stability_examples() {
        let r = stability_report(&row1());
        assert!((r.trace - (-46.2)).abs() < 1e-12);
        assert!((r.determinant - 3.0).abs() < 1e-12);
        assert!(r.stable);
        assert!((r.steady_state_level.unwrap() - 8.0 / 3.0).abs() < 1e-12);
        assert!((r.steady_state_rate.unwrap() - 8.0 / 15.0).abs() < 1e-12);
        let mut b = row1();
        b.beta = 35.0;
        let r = stability_report(&b);
        assert_eq!(r.determinant, 0.0);
        assert!(!r.stable && r.steady_state_level.is_none());
    }
}
