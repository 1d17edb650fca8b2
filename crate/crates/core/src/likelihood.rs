//! Exact log-likelihood and information criteria.

use serde::Serialize;

use crate::error::Result;
use crate::intensity::{Kernel, ModelVariant, ParamSet};
use crate::market::{EventKind, EventStream};
use crate::spread;

/// A log-likelihood value; `-inf` is always accompanied by the offending event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogLik {
    pub value: f64,
    /// Index of the first event whose own intensity was zero.
    pub zero_intensity_at: Option<usize>,
}

impl LogLik {
    pub fn is_finite(&self) -> bool {
        self.zero_intensity_at.is_none() && self.value.is_finite()
    }

    fn neg_inf(at: usize) -> Self {
        LogLik { value: f64::NEG_INFINITY, zero_intensity_at: Some(at) }
    }
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

/// `n` is the total event count across all four processes.
pub fn bic(loglik: f64, k: usize, n: f64) -> f64 {
    k as f64 * n.ln() - 2.0 * loglik
}

/// A stream flattened into the arrays the likelihood sweep needs.
#[derive(Clone, Debug)]
pub struct PreparedStream {
    dt: Vec<f64>,
    kind: Vec<EventKind>,
    /// `ell[j]` is the level in force before event `j`; `ell[n]` after the last.
    ell: Vec<f64>,
    tail: f64,
    counts: [usize; 4],
}

impl PreparedStream {
    pub fn new(stream: &EventStream) -> Self {
        let n = stream.len();
        let mut dt = Vec::with_capacity(n);
        let mut kind = Vec::with_capacity(n);
        let mut ell = Vec::with_capacity(n + 1);
        ell.push(stream.initial_state().rel_level());
        let mut last = stream.session_start();
        for ev in stream.events() {
            dt.push(ev.t - last);
            kind.push(ev.kind);
            ell.push(ev.state_after.rel_level());
            last = ev.t;
        }
        PreparedStream { dt, kind, ell, tail: stream.session_end() - last, counts: stream.counts() }
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    pub fn counts(&self) -> [usize; 4] {
        self.counts
    }

    /// Mean relative level over events (including the initial state).
    pub fn mean_event_level(&self) -> f64 {
        self.ell.iter().sum::<f64>() / self.ell.len() as f64
    }

    pub fn duration(&self) -> f64 {
        self.dt.iter().sum::<f64>() + self.tail
    }

    /// One O(n) sweep; compensators of all four processes are summed as they go.
    pub fn log_likelihood(&self, kernel: &Kernel) -> LogLik {
        let ns = kernel.n_slots;
        let mut acc = [[0.0f64; 4]; 4];
        let mut sum_log = 0.0;
        let mut comp = 0.0;
        for j in 0..self.dt.len() {
            let dt = self.dt[j];
            let base = kernel.base(self.ell[j]);
            comp += (base[0] + base[1] + base[2] + base[3]) * dt;
            for s in 0..ns {
                let beta = kernel.betas[s];
                let d = (-beta * dt).exp();
                let w = (1.0 - d) / beta;
                for row in acc.iter_mut() {
                    comp += row[s] * w;
                    row[s] *= d;
                }
            }
            let k = self.kind[j];
            let i = k.index();
            let lam = base[i] + acc[i][..ns].iter().sum::<f64>();
            if !(lam > 0.0) {
                return LogLik::neg_inf(j);
            }
            sum_log += lam.ln();
            kernel.apply_updates(&mut acc, k, self.ell[j + 1]);
        }
        let base = kernel.base(self.ell[self.dt.len()]);
        comp += (base[0] + base[1] + base[2] + base[3]) * self.tail;
        for s in 0..ns {
            let w = -(-kernel.betas[s] * self.tail).exp_m1() / kernel.betas[s];
            for row in acc.iter() {
                comp += row[s] * w;
            }
        }
        LogLik { value: sum_log - comp, zero_intensity_at: None }
    }
}

/// `sum_i [ sum_{events of i} ln lambda_i(t_j-) - Lambda_i(session) ]`.
pub fn log_likelihood(stream: &EventStream, params: &ParamSet) -> Result<LogLik> {
    if params.variant() == ModelVariant::SpreadOnly {
        let core = params.core().expect("spread-only params carry the core set");
        let path = spread::SpreadPath::from_stream(stream);
        return Ok(spread::log_likelihood(&path, &core, spread::excites_down(&core)));
    }
    Ok(PreparedStream::new(stream).log_likelihood(&params.kernel()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{replay, CoreParams};
    use crate::market::{MarketState, Price};

    fn tick() -> Price {
        "0.01".parse().unwrap()
    }

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
    fn information_criteria() {
        assert_eq!(aic(-1000.0, 9), 2018.0);
        assert!((bic(-1000.0, 9, std::f64::consts::E) - 2009.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_closed_form() {
        let init = MarketState::new("99.99".parse().unwrap(), "100.01".parse().unwrap(), tick()).unwrap();
        let s = EventStream::new(0.0, 50.0, tick(), init, vec![]).unwrap();
        let ll = log_likelihood(&s, &ParamSet::proposed(row1()).unwrap()).unwrap();
        let ell = init.rel_level();
        assert!((ll.value - (-2.0 * (0.08 + 0.1 * ell) * 50.0)).abs() < 1e-12);
    }

    #[test]
    fn narrowing_at_minimum_is_flagged() {
        let init = MarketState::new("100.00".parse().unwrap(), "100.02".parse().unwrap(), tick()).unwrap();
        let s = EventStream::from_moves(
            0.0,
            10.0,
            tick(),
            init,
            [(1.0, EventKind::AskDown, 1), (2.0, EventKind::AskUp, 1)],
        )
        .unwrap();
        let mut c = row1();
        c.xi = 0.0;
        // the first narrowing leaves L = 0, but the intensity before it is eta * ell > 0
        let ll = log_likelihood(&s, &ParamSet::proposed(c).unwrap()).unwrap();
        assert!(ll.is_finite());
        let s2 = EventStream::from_moves(
            0.0,
            10.0,
            tick(),
            init,
            [
                (1.0, EventKind::AskDown, 1),
                (2.0, EventKind::AskUp, 1),
                (2.5, EventKind::AskDown, 1),
                (3.0, EventKind::BidDown, 1),
                (3.5, EventKind::BidUp, 1),
            ],
        )
        .unwrap();
        let ll = log_likelihood(&s2, &ParamSet::proposed(c).unwrap()).unwrap();
        assert!(ll.is_finite());
        // with eta = 0 and xi = 0 narrowing events have zero intensity
        c.eta = 0.0;
        let ll = log_likelihood(&s2, &ParamSet::proposed(c).unwrap()).unwrap();
        assert_eq!(ll.value, f64::NEG_INFINITY);
        assert_eq!(ll.zero_intensity_at, Some(0));
    }

    #[test]
    fn sweep_agrees_with_replay() {
        let init = MarketState::new("100.00".parse().unwrap(), "100.03".parse().unwrap(), tick()).unwrap();
        let s = EventStream::from_moves(
            0.0,
            3.0,
            tick(),
            init,
            [
                (0.2, EventKind::AskUp, 1),
                (0.25, EventKind::BidUp, 2),
                (0.4, EventKind::BidDown, 1),
                (1.1, EventKind::AskDown, 1),
                (2.0, EventKind::BidUp, 1),
            ],
        )
        .unwrap();
        for v in ModelVariant::SELECTION.into_iter().skip(2).chain([ModelVariant::Proposed]) {
            let ps = ParamSet::embed(row1(), v).unwrap();
            let r = replay(&s, &ps).unwrap();
            let direct: f64 =
                r.event_intensity.iter().map(|l| l.ln()).sum::<f64>() - r.total_compensator().iter().sum::<f64>();
            let ll = log_likelihood(&s, &ps).unwrap();
            assert!((ll.value - direct).abs() < 1e-12, "{v}");
        }
    }
}
