//! Maximum-likelihood estimation with log-parameterization, multi-start and
//! numerical standard errors.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::intensity::{ModelVariant, ParamSet, ParamWarning};
use crate::likelihood::{aic, bic, PreparedStream};
use crate::market::EventStream;
use crate::optim::{minimize, OptimOptions, Optimizer};

pub const FIT_REPORT_SCHEMA: &str = "spread-hawkes/fit-report/v1";

/// Smallest value a parameter can take inside the optimizer.
pub const PARAM_FLOOR: f64 = 1e-12;
const LOG_CEIL: f64 = 27.6;

/// How the starting points beyond the first are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartScheme {
    /// First start from event-rate heuristics; later ones draw alphas and xi
    /// uniformly in `(0, beta0)` and jitter the base rates.
    Heuristic,
    /// Every start random: `mu, eta ~ U(0, 10)`, alphas and xi `~ U(0, beta0)`.
    Random,
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub variant: ModelVariant,
    pub beta0: f64,
    /// Defaults to `beta0 / 4`.
    pub alpha0: Option<f64>,
    /// Defaults to `beta0 / 10`.
    pub xi0: Option<f64>,
    /// Defaults to half the widening event rate.
    pub mu0: Option<f64>,
    /// Defaults to half the narrowing event rate over the mean relative level.
    pub eta0: Option<f64>,
    pub max_iter: usize,
    /// Relative tolerance on the log-likelihood.
    pub tol: f64,
    pub restarts: usize,
    pub start_scheme: StartScheme,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub min_events_per_process: usize,
    /// Parameters held at the given values.
    pub fixed: Vec<(String, f64)>,
    pub compute_se: bool,
    /// Run restarts in parallel on the rayon pool.
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            variant: ModelVariant::Proposed,
            beta0: 100.0,
            alpha0: None,
            xi0: None,
            mu0: None,
            eta0: None,
            max_iter: 20_000,
            tol: 1e-6,
            restarts: 3,
            start_scheme: StartScheme::Heuristic,
            seed: 0,
            optimizer: Optimizer::Simplex,
            min_events_per_process: 50,
            fixed: Vec::new(),
            compute_se: true,
            parallel: true,
        }
    }
}

impl FitConfig {
    pub fn new(variant: ModelVariant) -> Self {
        FitConfig { variant, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::Config(format!("beta0 must be positive, got {}", self.beta0)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        let names = self.variant.param_names();
        for (n, v) in &self.fixed {
            if !names.contains(&n.as_str()) {
                return Err(Error::Config(format!("{} has no parameter {n:?}", self.variant)));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!("fixed value of {n} must be non-negative")));
            }
        }
        if self.variant == ModelVariant::SpreadOnly {
            return Err(Error::Config("the spread-only model is analysed with the spread module, not fitted".into()));
        }
        Ok(())
    }
}

/// Position of a fit window on the session clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WindowInfo {
    pub index: usize,
    pub start: f64,
    pub end: f64,
}

/// Standard errors, or why they are missing.
#[derive(Clone, Debug, PartialEq)]
pub enum StdErrors {
    NotComputed,
    /// One entry per parameter; `None` for parameters at the boundary or held fixed.
    Available(Vec<Option<f64>>),
    /// The negative Hessian is not positive definite.
    Singular {
        min_eigenvalue: f64,
    },
}

impl StdErrors {
    pub fn values(&self) -> Option<&[Option<f64>]> {
        match self {
            StdErrors::Available(v) => Some(v),
            _ => None,
        }
    }

    pub fn min_eigenvalue(&self) -> Option<f64> {
        match self {
            StdErrors::Singular { min_eigenvalue } => Some(*min_eigenvalue),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: ParamSet,
    pub standard_errors: StdErrors,
    pub log_likelihood: f64,
    /// Log-likelihood at the starting point of the winning run.
    pub initial_log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_events: usize,
    pub counts: [usize; 4],
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub wall_time_secs: f64,
    pub stable: Option<bool>,
    pub warnings: Vec<ParamWarning>,
    /// Fewer than the configured minimum of events in some process.
    pub unreliable: bool,
    pub window: WindowInfo,
}

impl FitReport {
    pub fn se(&self, name: &str) -> Option<f64> {
        let i = self.params.names().iter().position(|n| *n == name)?;
        self.standard_errors.values()?.get(i).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Column names of the per-window CSV for a variant.
    pub fn csv_header(variant: ModelVariant) -> Vec<String> {
        let mut h: Vec<String> = [
            "window",
            "start",
            "end",
            "variant",
            "n_events",
            "log_likelihood",
            "aic",
            "bic",
            "converged",
            "unreliable",
            "stable",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let names = variant.param_names();
        h.extend(names.iter().map(|n| n.to_string()));
        h.extend(names.iter().map(|n| format!("se_{n}")));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = vec![
            self.window.index.to_string(),
            self.window.start.to_string(),
            self.window.end.to_string(),
            self.params.variant().to_string(),
            self.n_events.to_string(),
            self.log_likelihood.to_string(),
            self.aic.to_string(),
            self.bic.to_string(),
            self.converged.to_string(),
            self.unreliable.to_string(),
            self.stable.map(|s| s.to_string()).unwrap_or_default(),
        ];
        r.extend(self.params.values().iter().map(|v| v.to_string()));
        let n = self.params.values().len();
        match self.standard_errors.values() {
            Some(se) => r.extend(se.iter().map(|s| opt(*s))),
            None => r.extend(std::iter::repeat_n(String::new(), n)),
        }
        r
    }
}

impl Serialize for FitReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Se<'a>(&'a FitReport);
        impl Serialize for Se<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                match self.0.standard_errors.values() {
                    None => s.serialize_none(),
                    Some(v) => {
                        let mut m = s.serialize_map(Some(v.len()))?;
                        for (n, e) in self.0.params.names().iter().zip(v) {
                            m.serialize_entry(n, e)?;
                        }
                        m.end()
                    }
                }
            }
        }
        let mut m = serializer.serialize_map(None)?;
        m.serialize_entry("schema", FIT_REPORT_SCHEMA)?;
        m.serialize_entry("variant", &self.params.variant())?;
        m.serialize_entry("params", &self.params)?;
        m.serialize_entry("standard_errors", &Se(self))?;
        m.serialize_entry("hessian_min_eigenvalue", &self.standard_errors.min_eigenvalue())?;
        m.serialize_entry("log_likelihood", &self.log_likelihood)?;
        m.serialize_entry("initial_log_likelihood", &self.initial_log_likelihood)?;
        m.serialize_entry("aic", &self.aic)?;
        m.serialize_entry("bic", &self.bic)?;
        m.serialize_entry("n_events", &self.n_events)?;
        m.serialize_entry("counts", &self.counts)?;
        m.serialize_entry("k", &self.k)?;
        m.serialize_entry("converged", &self.converged)?;
        m.serialize_entry("iterations", &self.iterations)?;
        m.serialize_entry("evaluations", &self.evaluations)?;
        m.serialize_entry("restarts", &self.restarts)?;
        m.serialize_entry("wall_time_secs", &self.wall_time_secs)?;
        m.serialize_entry("stable", &self.stable)?;
        m.serialize_entry("warnings", &self.warnings)?;
        m.serialize_entry("unreliable", &self.unreliable)?;
        m.serialize_entry("window", &self.window)?;
        m.end()
    }
}

/// Reads the parameter set out of either a fit report or a bare parameter-set JSON.
pub fn params_from_json(text: &str) -> Result<ParamSet> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let ps = match v.get("params") {
        Some(p) => serde_json::from_value(p.clone())?,
        None => serde_json::from_value(v)?,
    };
    Ok(ps)
}

fn uniform_open(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    // U(0, hi) excluding 0
    hi * (1.0 - rng.random::<f64>())
}

fn heuristic_start(prep: &PreparedStream, mean_ell: f64, cfg: &FitConfig) -> (f64, f64) {
    let c = prep.counts();
    let t = prep.duration().max(f64::MIN_POSITIVE);
    let mu0 = cfg.mu0.unwrap_or(((c[0] + c[3]) as f64 / (2.0 * t) * 0.5).max(1e-6));
    let eta0 = cfg.eta0.unwrap_or_else(|| {
        let rate = (c[1] + c[2]) as f64 / (2.0 * t) * 0.5;
        if mean_ell > 0.0 && rate > 0.0 {
            rate / mean_ell
        } else {
            1.0
        }
    });
    (mu0, eta0)
}

fn start_values(variant: ModelVariant, cfg: &FitConfig, mu0: f64, eta0: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let b = cfg.beta0;
    let a0 = cfg.alpha0.unwrap_or(b / 4.0);
    let x0 = cfg.xi0.unwrap_or(b / 10.0);
    let names = variant.param_names();
    match rng {
        None => names
            .iter()
            .map(|n| match *n {
                "mu" | "mu_1" | "mu_4" => mu0,
                "eta" | "eta_2" | "eta_3" => eta0,
                "eta_1" | "eta_4" => eta0 / 10.0,
                "alpha_14" | "alpha_41" => a0 / 10.0,
                n if n.starts_with("beta") => b,
                n if n.starts_with("xi") => x0,
                _ if variant == ModelVariant::BasicHawkes => a0 / 4.0,
                _ => a0,
            })
            .collect(),
        Some(rng) => {
            let random_base = cfg.start_scheme == StartScheme::Random;
            names
                .iter()
                .map(|n| {
                    if n.starts_with("beta") {
                        b
                    } else if n.starts_with("mu") {
                        if random_base {
                            uniform_open(rng, 10.0)
                        } else {
                            mu0 * (rng.random_range(-1.0..1.0f64) * 0.7).exp()
                        }
                    } else if n.starts_with("eta") {
                        if random_base {
                            uniform_open(rng, 10.0)
                        } else {
                            eta0 * (rng.random_range(-1.0..1.0f64) * 0.7).exp()
                        }
                    } else {
                        uniform_open(rng, b)
                    }
                })
                .collect()
        }
    }
}

fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Log-space objective over the free parameters: `-logL / n`.
struct Objective<'a> {
    prep: &'a PreparedStream,
    variant: ModelVariant,
    template: Vec<f64>,
    free: Vec<usize>,
    scale: f64,
}

impl Objective<'_> {
    fn natural(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.template.clone();
        for (&i, &xi) in self.free.iter().zip(x) {
            v[i] = xi.min(LOG_CEIL).exp().max(PARAM_FLOOR);
        }
        v
    }

    fn log_space(&self, values: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| values[i].max(PARAM_FLOOR).ln()).collect()
    }

    fn loglik(&self, values: Vec<f64>) -> f64 {
        match ParamSet::new(self.variant, values) {
            Ok(ps) => self.prep.log_likelihood(&ps.kernel()).value,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        -self.loglik(self.natural(x)) / self.scale
    }
}

struct RunResult {
    values: Vec<f64>,
    loglik: f64,
    initial: f64,
    converged: bool,
    iterations: usize,
    evaluations: usize,
}

/// Fits one stream; see [`fit_prepared`].
pub fn fit(stream: &EventStream, cfg: &FitConfig) -> Result<FitReport> {
    let prep = PreparedStream::new(stream);
    let mut rep = fit_prepared(&prep, stream.mean_rel_level(), cfg)?;
    rep.window = WindowInfo { index: 0, start: stream.session_start(), end: stream.session_end() };
    Ok(rep)
}

/// Maximizes the log-likelihood from `cfg.restarts` starting points and keeps the best.
pub fn fit_prepared(prep: &PreparedStream, mean_ell: f64, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let variant = cfg.variant;
    let names = variant.param_names();
    let (mu0, eta0) = heuristic_start(prep, mean_ell, cfg);

    let mut template = vec![0.0; names.len()];
    let mut is_fixed = vec![false; names.len()];
    for (n, v) in &cfg.fixed {
        let i = names.iter().position(|m| m == n).expect("validated");
        template[i] = *v;
        is_fixed[i] = true;
    }
    let free: Vec<usize> = (0..names.len()).filter(|&i| !is_fixed[i]).collect();
    let obj = Objective { prep, variant, template: template.clone(), free, scale: prep.len().max(1) as f64 };
    let opts = OptimOptions { max_iter: cfg.max_iter, ftol: cfg.tol, ..Default::default() };

    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| {
            let mut v = if r == 0 && cfg.start_scheme == StartScheme::Heuristic {
                start_values(variant, cfg, mu0, eta0, None)
            } else {
                let mut rng = restart_rng(cfg.seed, r);
                start_values(variant, cfg, mu0, eta0, Some(&mut rng))
            };
            for (i, fixed) in is_fixed.iter().enumerate() {
                if *fixed {
                    v[i] = template[i];
                }
            }
            v
        })
        .collect();

    let run = |start: &Vec<f64>| -> Option<RunResult> {
        let x0 = obj.log_space(start);
        let initial = obj.loglik(obj.natural(&x0));
        if !initial.is_finite() {
            return None;
        }
        let r = minimize(|x| obj.eval(x), &x0, cfg.optimizer, &opts);
        let values = obj.natural(&r.x);
        Some(RunResult {
            loglik: obj.loglik(values.clone()),
            values,
            initial,
            converged: r.converged,
            iterations: r.iterations,
            evaluations: r.evaluations,
        })
    };
    let runs: Vec<RunResult> = if cfg.parallel && starts.len() > 1 {
        starts.par_iter().filter_map(run).collect()
    } else {
        starts.iter().filter_map(run).collect()
    };
    let n_runs = runs.len();
    let best = runs.into_iter().max_by(|a, b| a.loglik.total_cmp(&b.loglik)).ok_or(Error::NoFiniteStart)?;

    let params = ParamSet::new(variant, best.values)?;
    let standard_errors =
        if cfg.compute_se { standard_errors_prepared(prep, &params, &is_fixed) } else { StdErrors::NotComputed };
    let counts = prep.counts();
    let n = prep.len();
    let k = variant.param_count();
    Ok(FitReport {
        stable: params.stability_condition(),
        warnings: params.warnings(),
        params,
        standard_errors,
        log_likelihood: best.loglik,
        initial_log_likelihood: best.initial,
        aic: aic(best.loglik, k),
        bic: bic(best.loglik, k, n as f64),
        n_events: n,
        counts,
        k,
        converged: best.converged,
        iterations: best.iterations,
        evaluations: best.evaluations,
        restarts: n_runs,
        wall_time_secs: clock.elapsed().as_secs_f64(),
        unreliable: counts.iter().any(|&c| c < cfg.min_events_per_process),
        window: WindowInfo::default(),
    })
}

/// Standard errors from the inverse negative Hessian of the log-likelihood.
pub fn standard_errors(stream: &EventStream, params: &ParamSet) -> StdErrors {
    let prep = PreparedStream::new(stream);
    standard_errors_prepared(&prep, params, &vec![false; params.values().len()])
}

/// Finite-difference step for parameter value `v`.
pub fn hessian_step(v: f64) -> f64 {
    (1e-5 * v.abs()).max(1e-7)
}

/// Central-difference Hessian of the log-likelihood over the listed parameters.
pub fn loglik_hessian(prep: &PreparedStream, params: &ParamSet, active: &[usize]) -> DMatrix<f64> {
    let base = params.values().to_vec();
    let h: Vec<f64> = active.iter().map(|&i| hessian_step(base[i])).collect();
    let ll = |shifts: &[(usize, f64)]| {
        let mut v = base.clone();
        for &(a, s) in shifts {
            v[active[a]] += s;
        }
        match params.with_values(v) {
            Ok(ps) => prep.log_likelihood(&ps.kernel()).value,
            Err(_) => f64::NAN,
        }
    };
    let m = active.len();
    let f0 = ll(&[]);
    let mut hess = DMatrix::zeros(m, m);
    for a in 0..m {
        let fp = ll(&[(a, h[a])]);
        let fm = ll(&[(a, -h[a])]);
        hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
        for b in 0..a {
            let fpp = ll(&[(a, h[a]), (b, h[b])]);
            let fpm = ll(&[(a, h[a]), (b, -h[b])]);
            let fmp = ll(&[(a, -h[a]), (b, h[b])]);
            let fmm = ll(&[(a, -h[a]), (b, -h[b])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[a] * h[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    hess
}

fn standard_errors_prepared(prep: &PreparedStream, params: &ParamSet, fixed: &[bool]) -> StdErrors {
    let v = params.values();
    // a parameter within two difference steps of zero sits on the boundary
    let active: Vec<usize> = (0..v.len()).filter(|&i| !fixed[i] && v[i] > 2.0 * hessian_step(v[i])).collect();
    let mut out = vec![None; v.len()];
    if active.is_empty() {
        return StdErrors::Available(out);
    }
    let neg = -loglik_hessian(prep, params, &active);
    if neg.iter().any(|x| !x.is_finite()) {
        return StdErrors::Singular { min_eigenvalue: f64::NAN };
    }
    let eig = SymmetricEigen::new(neg.clone());
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return StdErrors::Singular { min_eigenvalue: min_eig };
    }
    let Some(cov) = neg.try_inverse() else {
        return StdErrors::Singular { min_eigenvalue: min_eig };
    };
    for (a, &i) in active.iter().enumerate() {
        out[i] = Some(cov[(a, a)].max(0.0).sqrt());
    }
    StdErrors::Available(out)
}
