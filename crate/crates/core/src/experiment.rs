//! Simulation studies: parameter recovery and sensitivity to starting values.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, StartScheme};
use crate::intensity::{CoreParams, ParamSet};
use crate::optim::Optimizer;
use crate::simulator::{simulate, JumpSource, JumpTable, SimConfig, StopRule};

/// Reference parameter sets of the recovery study (rows 1 and 2).
pub fn table1_truth(row: usize) -> Option<CoreParams> {
    match row {
        1 => Some(CoreParams {
            mu: 0.080,
            eta: 0.100,
            alpha_s1: 4.0,
            alpha_s2: 26.0,
            alpha_m: 5.0,
            alpha_w1: 11.0,
            alpha_w2: 7.0,
            beta: 50.0,
            xi: 2.7,
        }),
        2 => Some(CoreParams {
            mu: 0.170,
            eta: 0.140,
            alpha_s1: 200.0,
            alpha_s2: 250.0,
            alpha_m: 150.0,
            alpha_w1: 300.0,
            alpha_w2: 330.0,
            beta: 1200.0,
            xi: 50.0,
        }),
        _ => None,
    }
}

/// Published standard deviations of the estimates over 500 paths, in parameter order.
pub fn table1_reference_std(row: usize) -> Option<[f64; 9]> {
    match row {
        1 => Some([0.003, 0.002, 0.360, 0.658, 0.277, 0.477, 0.404, 0.796, 0.085]),
        2 => Some([0.003, 0.003, 8.369, 8.362, 7.327, 9.371, 9.210, 7.570, 2.441]),
        _ => None,
    }
}

/// Published means of the estimates over 500 paths, in parameter order.
pub fn table1_reference_mean(row: usize) -> Option<[f64; 9]> {
    match row {
        1 => Some([0.080, 0.100, 3.993, 26.02, 5.003, 11.02, 6.973, 50.03, 2.705]),
        2 => Some([0.170, 0.140, 199.6, 252.3, 151.3, 301.5, 332.0, 1207.0, 50.04]),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryConfig {
    pub truth: ParamSet,
    pub paths: usize,
    pub n_events: usize,
    pub jumps: JumpSource,
    pub seed: u64,
    pub fit: FitConfig,
}

impl RecoveryConfig {
    /// Row `row` of the recovery study with the sample jump table.
    pub fn table1(row: usize, paths: usize, seed: u64) -> Result<Self> {
        let truth =
            table1_truth(row).ok_or_else(|| Error::Config(format!("recovery study has rows 1 and 2, not {row}")))?;
        let fit = FitConfig { compute_se: false, parallel: false, ..FitConfig::default() };
        Ok(RecoveryConfig {
            truth: ParamSet::proposed(truth)?,
            paths,
            n_events: 10_000,
            jumps: JumpSource::Table(JumpTable::sample()),
            seed,
            fit,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryResult {
    pub names: Vec<&'static str>,
    pub truth: Vec<f64>,
    /// One row of estimates per path.
    pub estimates: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub converged: usize,
}

/// Simulates `paths` streams at the truth and fits each; paths run in parallel.
pub fn recovery_experiment(cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    if cfg.paths == 0 {
        return Err(Error::Config("at least one path is required".into()));
    }
    let fits: Vec<(Vec<f64>, bool)> = (0..cfg.paths)
        .into_par_iter()
        .map(|j| {
            let mut sim =
                SimConfig::new(cfg.truth.clone(), StopRule::Events(cfg.n_events), cfg.seed.wrapping_add(j as u64));
            sim.jumps = cfg.jumps.clone();
            let stream = simulate(&sim)?;
            let mut fc = cfg.fit.clone();
            fc.variant = cfg.truth.variant();
            fc.seed = cfg.seed.wrapping_add(j as u64);
            let rep = fit(&stream, &fc)?;
            Ok((rep.params.values().to_vec(), rep.converged))
        })
        .collect::<Result<_>>()?;
    let k = cfg.truth.values().len();
    let n = fits.len() as f64;
    let mean: Vec<f64> = (0..k).map(|i| fits.iter().map(|f| f.0[i]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..k)
        .map(|i| {
            let ss: f64 = fits.iter().map(|f| (f.0[i] - mean[i]).powi(2)).sum();
            (ss / (n - 1.0).max(1.0)).sqrt()
        })
        .collect();
    Ok(RecoveryResult {
        names: cfg.truth.names().to_vec(),
        truth: cfg.truth.values().to_vec(),
        converged: fits.iter().filter(|f| f.1).count(),
        estimates: fits.into_iter().map(|f| f.0).collect(),
        mean,
        std,
    })
}

/// How estimation error is measured against the truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorScale {
    /// `(est - truth) / truth`, falling back to absolute error where the truth is zero.
    Relative,
    Absolute,
}

/// Root-mean-squared error of an estimate vector against the truth.
pub fn rmse(estimate: &[f64], truth: &[f64], scale: ErrorScale) -> f64 {
    let ss: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| match scale {
            ErrorScale::Relative if *t != 0.0 => ((e - t) / t).powi(2),
            _ => (e - t).powi(2),
        })
        .sum();
    (ss / truth.len() as f64).sqrt()
}

/// Truth of the starting-value study: `mu = 0.1`, `eta = 0`, `xi = beta / 10`, every alpha `beta / 4`.
pub fn convergence_truth(beta: f64) -> CoreParams {
    CoreParams {
        mu: 0.1,
        eta: 0.0,
        alpha_s1: beta / 4.0,
        alpha_s2: beta / 4.0,
        alpha_m: beta / 4.0,
        alpha_w1: beta / 4.0,
        alpha_w2: beta / 4.0,
        beta,
        xi: beta / 10.0,
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub truth: ParamSet,
    pub n_events: usize,
    pub beta0_grid: Vec<f64>,
    pub replications: usize,
    pub threshold: f64,
    pub scale: ErrorScale,
    pub jumps: JumpSource,
    pub seed: u64,
    /// Starting points per fit; the published study used one random start.
    pub restarts: usize,
    pub optimizer: Optimizer,
    /// Optimizer iteration budget.
    pub max_iter: usize,
    pub tol: f64,
}

impl ConvergenceConfig {
    pub fn new(beta: f64, n_events: usize, beta0_grid: Vec<f64>, replications: usize, seed: u64) -> Result<Self> {
        Ok(ConvergenceConfig {
            truth: ParamSet::proposed(convergence_truth(beta))?,
            n_events,
            beta0_grid,
            replications,
            threshold: 0.2,
            scale: ErrorScale::Relative,
            jumps: JumpSource::Constant(1),
            seed,
            restarts: 1,
            optimizer: Optimizer::Simplex,
            max_iter: FitConfig::default().max_iter,
            tol: FitConfig::default().tol,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergenceRow {
    pub beta0: f64,
    pub successes: usize,
    pub replications: usize,
    pub success_rate: f64,
    pub median_rmse: f64,
}

/// For each `beta0`, the share of fits from random starts whose RMSE is below the threshold.
/// Every `beta0` is fitted on the same simulated paths.
pub fn convergence_experiment(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    if cfg.replications == 0 || cfg.beta0_grid.is_empty() {
        return Err(Error::Config("need at least one replication and one beta0".into()));
    }
    let errors: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let mut sim = SimConfig::new(cfg.truth.clone(), StopRule::Events(cfg.n_events), seed);
            sim.jumps = cfg.jumps.clone();
            let stream = simulate(&sim)?;
            cfg.beta0_grid
                .iter()
                .enumerate()
                .map(|(g, &beta0)| {
                    let fc = FitConfig {
                        variant: cfg.truth.variant(),
                        beta0,
                        restarts: cfg.restarts,
                        optimizer: cfg.optimizer,
                        max_iter: cfg.max_iter,
                        tol: cfg.tol,
                        start_scheme: StartScheme::Random,
                        seed: seed.wrapping_mul(31).wrapping_add(g as u64),
                        compute_se: false,
                        parallel: false,
                        min_events_per_process: 0,
                        ..Default::default()
                    };
                    let rep = fit(&stream, &fc)?;
                    Ok(rmse(rep.params.values(), cfg.truth.values(), cfg.scale))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(cfg
        .beta0_grid
        .iter()
        .enumerate()
        .map(|(g, &beta0)| {
            let mut e: Vec<f64> = errors.iter().map(|row| row[g]).collect();
            let successes = e.iter().filter(|&&x| x < cfg.threshold).count();
            e.sort_by(f64::total_cmp);
            ConvergenceRow {
                beta0,
                successes,
                replications: cfg.replications,
                success_rate: successes as f64 / cfg.replications as f64,
                median_rmse: e[e.len() / 2],
            }
        })
        .collect())
}
