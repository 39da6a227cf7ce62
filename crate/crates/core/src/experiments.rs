//! Experiment harnesses: the OU box-potential sweep and PMMH for a Cox
//! process, with chain diagnostics.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::fkengine::{
    grid_reference_extrapolated, pf_run, pf_run_with, reflect, FeynmanKac, FkModel, GridReference, PfOptions,
    PfWorkspace, StateMesh,
};
use crate::resampling::SchemeId;
use crate::rng::{derive_seed, hash_str, rng_from_seed, SmcRng};

// ---------------------------------------------------------------------------
// OU sweep

fn default_horizon() -> f64 {
    10.0
}
fn default_mesh_points() -> usize {
    2001
}
fn default_mesh_width() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schemes: Vec<SchemeId>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub delta_log2: Vec<i32>,
    pub reps: usize,
    pub theta: f64,
    pub sigma: f64,
    pub height: f64,
    pub center: f64,
    pub half_width: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub base_seed: u64,
    #[serde(default = "default_mesh_points")]
    pub mesh_points: usize,
    #[serde(default = "default_mesh_width")]
    pub mesh_width: f64,
}

impl SweepConfig {
    /// Desk-scale defaults for the OU box-potential experiment.
    pub fn desk() -> Self {
        SweepConfig {
            schemes: SchemeId::all(),
            n: vec![64],
            delta_log2: vec![-6],
            reps: 500,
            theta: 0.1,
            sigma: 1.0,
            height: 6.0,
            center: 0.5,
            half_width: 0.1,
            horizon: default_horizon(),
            base_seed: 0,
            mesh_points: default_mesh_points(),
            mesh_width: default_mesh_width(),
        }
    }

    pub fn model(&self, delta_log2: i32) -> FkModel {
        FkModel::ou_box(
            self.theta,
            self.sigma,
            self.height,
            self.center,
            self.half_width,
            self.horizon,
            2f64.powi(delta_log2),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(SmcError::InvalidConfig("reps must be at least 2".into()));
        }
        if self.schemes.is_empty() || self.n.is_empty() || self.delta_log2.is_empty() {
            return Err(SmcError::InvalidConfig("schemes, N and delta_log2 must be nonempty".into()));
        }
        if self.n.contains(&0) {
            return Err(SmcError::InvalidConfig("N must be positive".into()));
        }
        for &d in &self.delta_log2 {
            self.model(d).build()?;
        }
        Ok(())
    }

    pub fn row_seed(&self, scheme: SchemeId, n: usize, delta_log2: i32, rep: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &[hash_str(scheme.name()), n as u64, delta_log2 as i64 as u64, rep as u64],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: SchemeId,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta_log2: i32,
    pub rep: usize,
    #[serde(rename = "logZ")]
    pub log_z: f64,
    pub filter_est: f64,
    pub smooth_est: f64,
    pub resample_events: usize,
    /// Empty unless the run failed.
    pub error: String,
}

/// Run one row of the sweep in isolation.
pub fn sweep_row(cfg: &SweepConfig, scheme: SchemeId, n: usize, delta_log2: i32, rep: usize) -> Result<SweepRow> {
    let problem = cfg.model(delta_log2).build()?;
    let seed = cfg.row_seed(scheme, n, delta_log2, rep);
    let row = match pf_run(&problem, scheme, n, seed, PfOptions::default()) {
        Ok(out) => SweepRow {
            scheme,
            n,
            delta_log2,
            rep,
            log_z: out.log_z,
            filter_est: out.filtering[0],
            smooth_est: out.smoothing[0],
            resample_events: out.resample_events,
            error: String::new(),
        },
        Err(e) => SweepRow {
            scheme,
            n,
            delta_log2,
            rep,
            log_z: f64::NAN,
            filter_est: f64::NAN,
            smooth_est: f64::NAN,
            resample_events: 0,
            error: e.kind().to_string(),
        },
    };
    Ok(row)
}

/// All rows, ordered by scheme, N, Δ and repetition.
pub fn ou_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for &s in &cfg.schemes {
        for &n in &cfg.n {
            for &d in &cfg.delta_log2 {
                for rep in 0..cfg.reps {
                    keys.push((s, n, d, rep));
                }
            }
        }
    }
    keys.par_iter()
        .map(|&(s, n, d, rep)| sweep_row(cfg, s, n, d, rep))
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| SmcError::InvalidConfig(e.to_string()))?;
    }
    wr.flush().map_err(|e| SmcError::InvalidConfig(e.to_string()))?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize()
        .map(|row| row.map_err(|e| SmcError::InvalidConfig(e.to_string())))
        .collect()
}

/// Quadrature reference for one step size.
pub fn sweep_reference(cfg: &SweepConfig, delta_log2: i32) -> Result<GridReference> {
    let model = cfg.model(delta_log2);
    let mesh = StateMesh::stationary(&model, cfg.mesh_width, cfg.mesh_points)?;
    grid_reference_extrapolated(&model, mesh)
}

/// Per-repetition errors of the three unbiased estimators against the
/// reference: relative normaliser `Ẑ/Z - 1`, and `(Ẑ/Z) f̂ - f` for the
/// filtering and smoothing means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowErrors {
    pub rel_z: f64,
    pub filter: f64,
    pub smooth: f64,
}

pub fn row_errors(row: &SweepRow, reference: &GridReference) -> RowErrors {
    let rz = (row.log_z - reference.log_z).exp();
    RowErrors {
        rel_z: rz - 1.0,
        filter: rz * row.filter_est - reference.filtering_mean,
        smooth: rz * row.smooth_est - reference.smoothing_mean,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub scheme: SchemeId,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta_log2: i32,
    pub reps: usize,
    pub failures: usize,
    pub reference_log_z: f64,
    pub mean_log_z: f64,
    pub se_log_z: f64,
    pub mean_rel_z: f64,
    pub se_rel_z: f64,
    pub rmse_rel_z: f64,
    pub rmse_filter: f64,
    pub rmse_smooth: f64,
    pub mean_resample_events: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Aggregate rows by (scheme, N, Δ) against per-Δ references.
pub fn aggregate(rows: &[SweepRow], references: &[(i32, GridReference)]) -> Vec<SweepSummary> {
    let mut keys: Vec<(SchemeId, usize, i32)> = rows.iter().map(|r| (r.scheme, r.n, r.delta_log2)).collect();
    keys.dedup();
    let mut seen = std::collections::BTreeSet::new();
    keys.retain(|k| seen.insert(*k));
    keys.iter()
        .filter_map(|&(s, n, d)| {
            let reference = &references.iter().find(|(dl, _)| *dl == d)?.1;
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.scheme == s && r.n == n && r.delta_log2 == d)
                .collect();
            let ok: Vec<&SweepRow> = group.iter().copied().filter(|r| r.error.is_empty()).collect();
            let errs: Vec<RowErrors> = ok.iter().map(|r| row_errors(r, reference)).collect();
            let lz: Vec<f64> = ok.iter().map(|r| r.log_z).collect();
            let rz: Vec<f64> = errs.iter().map(|e| e.rel_z + 1.0).collect();
            let (mean_log_z, se_log_z) = mean_se(&lz);
            let (mean_rel_z, se_rel_z) = mean_se(&rz);
            Some(SweepSummary {
                scheme: s,
                n,
                delta_log2: d,
                reps: group.len(),
                failures: group.len() - ok.len(),
                reference_log_z: reference.log_z,
                mean_log_z,
                se_log_z,
                mean_rel_z,
                se_rel_z,
                rmse_rel_z: rms(&errs.iter().map(|e| e.rel_z).collect::<Vec<_>>()),
                rmse_filter: rms(&errs.iter().map(|e| e.filter).collect::<Vec<_>>()),
                rmse_smooth: rms(&errs.iter().map(|e| e.smooth).collect::<Vec<_>>()),
                mean_resample_events: ok.iter().map(|r| r.resample_events as f64).sum::<f64>() / ok.len().max(1) as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapComparison {
    pub rmse_a: f64,
    pub rmse_b: f64,
    /// Bootstrap quantiles of `rmse_a - rmse_b`.
    pub lower_95: f64,
    pub upper_95: f64,
    /// Fraction of bootstrap replicates with `rmse_a ≤ rmse_b`.
    pub fraction_a_le_b: f64,
}

impl BootstrapComparison {
    /// One-sided: `rmse_a ≤ rmse_b` in at least 95% of replicates.
    pub fn a_not_worse(&self) -> bool {
        self.fraction_a_le_b >= 0.95
    }
}

/// Paired bootstrap of the RMSE difference of two error samples that
/// share the repetition index.
pub fn paired_bootstrap_rmse(a: &[f64], b: &[f64], replicates: usize, seed: u64) -> Result<BootstrapComparison> {
    if a.len() != b.len() {
        return Err(SmcError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() || replicates == 0 {
        return Err(SmcError::EmptyEnsemble);
    }
    let m = a.len();
    let mut rng = rng_from_seed(seed);
    let mut diffs = Vec::with_capacity(replicates);
    let mut le = 0usize;
    for _ in 0..replicates {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..m {
            let i = rng.random_range(0..m);
            sa += a[i] * a[i];
            sb += b[i] * b[i];
        }
        let d = (sa / m as f64).sqrt() - (sb / m as f64).sqrt();
        if d <= 0.0 {
            le += 1;
        }
        diffs.push(d);
    }
    diffs.sort_by(|x, y| x.total_cmp(y));
    let q = |p: f64| diffs[((p * (replicates - 1) as f64).round() as usize).min(replicates - 1)];
    Ok(BootstrapComparison {
        rmse_a: rms(a),
        rmse_b: rms(b),
        lower_95: q(0.025),
        upper_95: q(0.975),
        fraction_a_le_b: le as f64 / replicates as f64,
    })
}

// ---------------------------------------------------------------------------
// Cox process

fn default_lo() -> f64 {
    -2.0
}
fn default_hi() -> f64 {
    2.0
}
fn default_cox_delta() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoxParams {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Observation window `[0, T]`.
    pub horizon: f64,
    #[serde(default = "default_cox_delta")]
    pub delta: f64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

impl CoxParams {
    /// `σ = 0.3, α = 1, β = 0.5, T = 200, Δ = 0.01` on `[-2, 2]`.
    pub fn defaults() -> Self {
        CoxParams {
            sigma: 0.3,
            alpha: 1.0,
            beta: 0.5,
            horizon: 200.0,
            delta: default_cox_delta(),
            lo: default_lo(),
            hi: default_hi(),
        }
    }

    fn uniform_grid(&self) -> Result<Vec<f64>> {
        let steps = (self.horizon / self.delta).round();
        if !(self.horizon > 0.0 && self.delta > 0.0)
            || steps < 1.0
            || (steps * self.delta - self.horizon).abs() > 1e-9 * self.horizon
        {
            return Err(SmcError::InvalidConfig(format!(
                "delta {} must divide the horizon {}",
                self.delta, self.horizon
            )));
        }
        if !(self.hi > self.lo) {
            return Err(SmcError::InvalidConfig("reflection interval is empty".into()));
        }
        Ok((0..=steps as usize).map(|k| k as f64 * self.delta).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxData {
    pub events: Vec<f64>,
    pub grid: Vec<f64>,
    pub latent: Vec<f64>,
}

/// Simulate the reflected random walk on the uniform grid and then event
/// times by thinning with majorant `β max(e^{-α a}, e^{-α b})`.
pub fn cox_simulate(params: &CoxParams, seed: u64) -> Result<CoxData> {
    let grid = params.uniform_grid()?;
    let mut rng = rng_from_seed(seed);
    let sd = params.sigma * params.delta.sqrt();
    let mut latent = Vec::with_capacity(grid.len());
    let z0: f64 = rng.sample(StandardNormal);
    latent.push(reflect(z0, params.lo, params.hi));
    for _ in 1..grid.len() {
        let z: f64 = rng.sample(StandardNormal);
        let prev = *latent.last().unwrap();
        latent.push(reflect(prev + sd * z, params.lo, params.hi));
    }
    let intensity = |x: f64| params.beta * (-params.alpha * x).exp();
    let majorant = intensity(params.lo).max(intensity(params.hi));
    let mut events = Vec::new();
    if majorant > 0.0 {
        let exp = Exp::new(majorant).map_err(|e| SmcError::InvalidConfig(e.to_string()))?;
        let mut t = exp.sample(&mut rng);
        while t < params.horizon {
            let k = ((t / params.delta).floor() as usize).min(latent.len() - 1);
            if rng.random::<f64>() * majorant < intensity(latent[k]) {
                events.push(t);
            }
            t += exp.sample(&mut rng);
        }
    }
    Ok(CoxData { events, grid, latent })
}

/// Time grid of the Cox filter: the uniform grid augmented with event times.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxGrid {
    pub times: Vec<f64>,
    pub is_event: Vec<bool>,
    pub lo: f64,
    pub hi: f64,
}

impl CoxGrid {
    pub fn new(params: &CoxParams, events: &[f64]) -> Result<Self> {
        let uniform = params.uniform_grid()?;
        for &e in events {
            if !(e > 0.0 && e < params.horizon) {
                return Err(SmcError::InvalidConfig(format!(
                    "event time {e} outside (0, {})",
                    params.horizon
                )));
            }
        }
        let mut ev = events.to_vec();
        ev.sort_by(|a, b| a.total_cmp(b));
        let mut times = Vec::with_capacity(uniform.len() + ev.len());
        let mut is_event = Vec::with_capacity(uniform.len() + ev.len());
        let (mut i, mut j) = (0, 0);
        while i < uniform.len() || j < ev.len() {
            let take_event = j < ev.len() && (i >= uniform.len() || ev[j] <= uniform[i]);
            if take_event {
                let t = ev[j];
                j += 1;
                if times.last() == Some(&t) {
                    *is_event.last_mut().unwrap() = true;
                    continue;
                }
                if i < uniform.len() && uniform[i] == t {
                    i += 1;
                }
                times.push(t);
                is_event.push(true);
            } else {
                times.push(uniform[i]);
                is_event.push(false);
                i += 1;
            }
        }
        Ok(CoxGrid {
            times,
            is_event,
            lo: params.lo,
            hi: params.hi,
        })
    }

    pub fn event_count(&self) -> usize {
        self.is_event.iter().filter(|&&e| e).count()
    }
}

/// The Cox filter for one parameter value.
#[derive(Debug, Clone)]
pub struct CoxModel<'a> {
    grid: &'a CoxGrid,
    sigma: f64,
    alpha: f64,
    beta: f64,
    log_beta: f64,
    likelihood: bool,
}

impl<'a> CoxModel<'a> {
    pub fn new(grid: &'a CoxGrid, sigma: f64, alpha: f64, beta: f64) -> Self {
        CoxModel {
            grid,
            sigma,
            alpha,
            beta,
            log_beta: beta.ln(),
            likelihood: true,
        }
    }

    /// Replace every potential by one.
    pub fn without_likelihood(mut self) -> Self {
        self.likelihood = false;
        self
    }
}

impl FeynmanKac for CoxModel<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn num_times(&self) -> usize {
        self.grid.times.len()
    }

    fn sample_initial(&self, rng: &mut SmcRng, out: &mut [f64]) {
        let z: f64 = rng.sample(StandardNormal);
        out[0] = reflect(z, self.grid.lo, self.grid.hi);
    }

    #[inline]
    fn log_potential(&self, k: usize, x: &[f64]) -> f64 {
        if !self.likelihood {
            return 0.0;
        }
        let dt = self.grid.times[k + 1] - self.grid.times[k];
        let ax = self.alpha * x[0];
        let mut l = -dt * self.beta * (-ax).exp();
        if self.grid.is_event[k] {
            l += self.log_beta - ax;
        }
        l
    }

    #[inline]
    fn transition(&self, k: usize, x: &[f64], rng: &mut SmcRng, out: &mut [f64]) {
        let dt = self.grid.times[k + 1] - self.grid.times[k];
        let z: f64 = rng.sample(StandardNormal);
        out[0] = reflect(x[0] + self.sigma * dt.sqrt() * z, self.grid.lo, self.grid.hi);
    }
}

// ---------------------------------------------------------------------------
// PMMH

fn default_prior_var() -> f64 {
    2.5
}
fn default_initial_scale() -> f64 {
    0.1
}
fn default_adapt_start() -> usize {
    100
}
fn default_jitter() -> f64 {
    1e-6
}
fn default_batches() -> usize {
    50
}
fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CoxDataSource {
    /// Given event times.
    Events { times: Vec<f64> },
    /// Simulate from the model with `cox_simulate`.
    Simulate { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Proposal standard deviation per coordinate before adaptation.
    #[serde(default = "default_initial_scale")]
    pub initial_scale: f64,
    /// Iteration at which the empirical covariance takes over.
    #[serde(default = "default_adapt_start")]
    pub start: usize,
    /// Ridge added to the empirical covariance.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            initial_scale: default_initial_scale(),
            start: default_adapt_start(),
            jitter: default_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmmhConfig {
    /// Model parameters; `sigma`, `alpha`, `beta` are only used to simulate data.
    pub params: CoxParams,
    pub data: CoxDataSource,
    #[serde(default = "default_prior_var")]
    pub prior_var: f64,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub scheme: SchemeId,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    pub seed: u64,
    /// Replace the likelihood by one, so that the chain targets the prior.
    #[serde(default)]
    pub disable_likelihood: bool,
    #[serde(default)]
    pub acf_lags: Vec<usize>,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub keep_chain: bool,
    /// Number of independent chains run by [`pmmh_replicates`].
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

impl PmmhConfig {
    /// Desk-scale configuration: `T = 20`, `N = 32`, 50,000 iterations.
    pub fn desk(scheme: SchemeId, seed: u64) -> Self {
        PmmhConfig {
            params: CoxParams {
                horizon: 20.0,
                ..CoxParams::defaults()
            },
            data: CoxDataSource::Simulate { seed: 2024 },
            prior_var: default_prior_var(),
            iterations: 50_000,
            burn_in: 5_000,
            n: 32,
            scheme,
            adaptation: AdaptationConfig::default(),
            seed,
            disable_likelihood: false,
            acf_lags: vec![0, 1, 5, 10, 50, 100],
            batches: default_batches(),
            keep_chain: false,
            replicates: default_replicates(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in > 0 && self.burn_in < self.iterations) {
            return Err(SmcError::InvalidConfig("need 0 < burn_in < iterations".into()));
        }
        if self.n == 0 {
            return Err(SmcError::InvalidConfig("N must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(SmcError::InvalidConfig("replicates must be positive".into()));
        }
        if !(self.prior_var > 0.0) {
            return Err(SmcError::InvalidConfig("prior_var must be positive".into()));
        }
        self.params.uniform_grid()?;
        Ok(())
    }

    pub fn events(&self) -> Result<Vec<f64>> {
        match &self.data {
            CoxDataSource::Events { times } => Ok(times.clone()),
            CoxDataSource::Simulate { seed } => Ok(cox_simulate(&self.params, *seed)?.events),
        }
    }
}

const PARAM_NAMES: [&str; 3] = ["log_sigma", "log_alpha", "log_beta"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: [f64; 5],
    pub asymptotic_variance: f64,
    /// Batch-means variance of the standardised chain.
    pub standardised_asymptotic_variance: f64,
    /// `asymptotic_variance × N`.
    pub ire: f64,
    /// `standardised_asymptotic_variance × N`.
    pub standardised_ire: f64,
    pub acf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    /// Acceptance rate over all iterations.
    pub acceptance_all: f64,
    pub failed_filters: usize,
    pub acf_lags: Vec<usize>,
    pub params: Vec<ParamSummary>,
    pub mean_standardised_ire: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmmhOutput {
    pub events: usize,
    pub diagnostics: ChainDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<[f64; 3]>>,
}

fn log_prior(theta: &[f64; 3], var: f64) -> f64 {
    -theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * var)
}

/// Lower Cholesky factor of a 3×3 symmetric positive definite matrix.
fn cholesky3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Running mean and covariance of the chain (Welford).
#[derive(Debug, Clone)]
struct RunningCov {
    n: f64,
    mean: [f64; 3],
    m2: [[f64; 3]; 3],
}

impl RunningCov {
    fn new() -> Self {
        RunningCov {
            n: 0.0,
            mean: [0.0; 3],
            m2: [[0.0; 3]; 3],
        }
    }

    fn push(&mut self, x: &[f64; 3]) {
        self.n += 1.0;
        let mut d = [0.0; 3];
        for i in 0..3 {
            d[i] = x[i] - self.mean[i];
            self.mean[i] += d[i] / self.n;
        }
        for i in 0..3 {
            for j in 0..3 {
                self.m2[i][j] += d[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn cov(&self) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        let denom = (self.n - 1.0).max(1.0);
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = 0.5 * (self.m2[i][j] + self.m2[j][i]) / denom;
            }
        }
        c
    }
}

/// Adaptive random-walk Metropolis on `θ ∈ R³` with a Gaussian prior and
/// a user-supplied (possibly noisy, unbiased) likelihood estimator.
///
/// The proposal covariance is `(2.38²/3) (C_n + jitter I)` once `n ≥ start`,
/// where `C_n` is the empirical covariance of the whole chain so far.
pub fn adaptive_metropolis<L>(
    iterations: usize,
    prior_var: f64,
    adapt: &AdaptationConfig,
    rng: &mut SmcRng,
    mut log_lik: L,
) -> (Vec<[f64; 3]>, Vec<bool>, usize)
where
    L: FnMut(&[f64; 3], &mut SmcRng) -> Result<f64>,
{
    let sd = 2.38f64.powi(2) / 3.0;
    let mut theta = [0.0f64; 3];
    let mut failures = 0usize;
    let mut ll = loop {
        match log_lik(&theta, rng) {
            Ok(l) => break l,
            Err(_) => failures += 1,
        }
        if failures > 1000 {
            break f64::NEG_INFINITY;
        }
    };
    let mut lp = log_prior(&theta, prior_var);
    let mut stats = RunningCov::new();
    let mut chain = Vec::with_capacity(iterations);
    let mut accepted = Vec::with_capacity(iterations);
    let init = adapt.initial_scale;
    let mut chol = [[init, 0.0, 0.0], [0.0, init, 0.0], [0.0, 0.0, init]];
    for it in 0..iterations {
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let mut prop = theta;
        for i in 0..3 {
            for j in 0..=i {
                prop[i] += chol[i][j] * z[j];
            }
        }
        let lp_new = log_prior(&prop, prior_var);
        let mut acc = false;
        match log_lik(&prop, rng) {
            Ok(ll_new) => {
                let log_ratio = ll_new + lp_new - ll - lp;
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    theta = prop;
                    ll = ll_new;
                    lp = lp_new;
                    acc = true;
                }
            }
            Err(_) => failures += 1,
        }
        chain.push(theta);
        accepted.push(acc);
        stats.push(&theta);
        if it + 1 >= adapt.start {
            let mut c = stats.cov();
            for (i, row) in c.iter_mut().enumerate() {
                for v in row.iter_mut() {
                    *v *= sd;
                }
                row[i] += sd * adapt.jitter;
            }
            if let Some(l) = cholesky3(&c) {
                chol = l;
            }
        }
    }
    (chain, accepted, failures)
}

/// Particle marginal Metropolis-Hastings for the Cox model.
pub fn pmmh_run(cfg: &PmmhConfig) -> Result<PmmhOutput> {
    cfg.validate()?;
    let events = cfg.events()?;
    let grid = CoxGrid::new(&cfg.params, &events)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut ws = PfWorkspace::new(cfg.scheme);
    let n = cfg.n;
    let disable = cfg.disable_likelihood;
    let (chain, accepted, failures) =
        adaptive_metropolis(cfg.iterations, cfg.prior_var, &cfg.adaptation, &mut rng, |th, rng| {
            if disable {
                return Ok(0.0);
            }
            let model = CoxModel::new(&grid, th[0].exp(), th[1].exp(), th[2].exp());
            pf_run_with(&model, n, rng, &mut ws, PfOptions::default()).map(|o| o.log_z)
        });
    let diagnostics = chain_diagnostics(&chain, &accepted, failures, cfg)?;
    Ok(PmmhOutput {
        events: grid.event_count(),
        diagnostics,
        chain: cfg.keep_chain.then_some(chain),
    })
}

/// `cfg.replicates` independent chains with seeds derived from `cfg.seed`.
pub fn pmmh_replicates(cfg: &PmmhConfig) -> Result<Vec<PmmhOutput>> {
    cfg.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = derive_seed(cfg.seed, &[r as u64]);
            pmmh_run(&c)
        })
        .collect()
}

fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let pos = p * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

fn chain_diagnostics(chain: &[[f64; 3]], accepted: &[bool], failures: usize, cfg: &PmmhConfig) -> Result<ChainDiagnostics> {
    let post = &chain[cfg.burn_in..];
    let acc_post = &accepted[cfg.burn_in..];
    let acceptance = acc_post.iter().filter(|&&a| a).count() as f64 / acc_post.len() as f64;
    let acceptance_all = accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64;
    let mut params = Vec::with_capacity(3);
    for (p, name) in PARAM_NAMES.iter().enumerate() {
        let xs: Vec<f64> = post.iter().map(|t| t[p]).collect();
        let (mean, _) = mean_se(&xs);
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1).max(1) as f64).sqrt();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95].map(|q| quantile_sorted(&sorted, q));
        let asvar = batch_means_variance(&xs, cfg.batches)?;
        let std_asvar = if sd > 0.0 { asvar / (sd * sd) } else { 0.0 };
        let acf_vals = if cfg.acf_lags.is_empty() { Vec::new() } else { acf(&xs, &cfg.acf_lags)? };
        params.push(ParamSummary {
            name: name.to_string(),
            mean,
            sd,
            quantiles,
            asymptotic_variance: asvar,
            standardised_asymptotic_variance: std_asvar,
            ire: asvar * cfg.n as f64,
            standardised_ire: std_asvar * cfg.n as f64,
            acf: acf_vals,
        });
    }
    let mean_standardised_ire = params.iter().map(|p| p.standardised_ire).sum::<f64>() / 3.0;
    Ok(ChainDiagnostics {
        acceptance,
        acceptance_all,
        failed_filters: failures,
        acf_lags: cfg.acf_lags.clone(),
        params,
        mean_standardised_ire,
    })
}

// ---------------------------------------------------------------------------
// Chain diagnostics

/// Batch-means estimate `b · var(batch means)` of the asymptotic variance
/// of the chain mean, with batch length `b = len / batches` (the remainder
/// is dropped).
pub fn batch_means_variance(chain: &[f64], batches: usize) -> Result<f64> {
    if batches < 10 {
        return Err(SmcError::InvalidConfig(format!("need at least 10 batches, got {batches}")));
    }
    let b = chain.len() / batches;
    if b < 2 {
        return Err(SmcError::ChainTooShort(format!(
            "{} samples cannot fill {batches} batches of length 2",
            chain.len()
        )));
    }
    let means: Vec<f64> = chain[..b * batches]
        .chunks_exact(b)
        .map(|c| c.iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(b as f64 * var)
}

/// Sample autocorrelations at `lags`; a constant chain has autocorrelation
/// one at lag zero and zero elsewhere.
pub fn acf(chain: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let n = chain.len();
    if n < 2 {
        return Err(SmcError::ChainTooShort(format!("{n} samples")));
    }
    if let Some(&l) = lags.iter().find(|&&l| 2 * l >= n) {
        return Err(SmcError::ChainTooShort(format!("lag {l} needs more than {} samples", 2 * l)));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let c0: f64 = chain.iter().map(|x| (x - mean).powi(2)).sum();
    Ok(lags
        .iter()
        .map(|&k| {
            if k == 0 {
                return 1.0;
            }
            if c0 == 0.0 {
                return 0.0;
            }
            let ck: f64 = (0..n - k).map(|t| (chain[t] - mean) * (chain[t + k] - mean)).sum();
            ck / c0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let s = (1.0 - rho * rho).sqrt();
        let mut x: f64 = rng.sample(StandardNormal);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = rho * x + s * z;
                x
            })
            .collect()
    }

    #[test]
    fn batch_means_oracles() {
        let iid = ar1(0.0, 100_000, 1);
        let v = batch_means_variance(&iid, 100).unwrap();
        assert!((v - 1.0).abs() < 0.15, "{v}");
        assert_eq!(batch_means_variance(&[2.0; 1000], 10).unwrap(), 0.0);
        let ar = ar1(0.5, 200_000, 2);
        let v = batch_means_variance(&ar, 100).unwrap();
        assert!((v - 3.0).abs() < 0.6, "{v}");
        assert!(matches!(batch_means_variance(&[1.0; 15], 10), Err(SmcError::ChainTooShort(_))));
    }

    #[test]
    fn acf_oracles() {
        let iid = ar1(0.0, 10_000, 3);
        let r = acf(&iid, &[0, 1, 2, 5]).unwrap();
        assert_eq!(r[0], 1.0);
        for &x in &r[1..] {
            assert!(x.abs() < 3.0 / 100.0, "{x}");
        }
        let ar = ar1(0.8, 100_000, 4);
        let r = acf(&ar, &[1, 2, 3]).unwrap();
        for (k, &x) in r.iter().enumerate() {
            assert!((x - 0.8f64.powi(k as i32 + 1)).abs() < 0.03, "{k}: {x}");
        }
        assert!(matches!(acf(&iid[..10], &[5]), Err(SmcError::ChainTooShort(_))));
    }

    #[test]
    fn cox_without_intensity_has_no_events() {
        let p = CoxParams {
            beta: 0.0,
            horizon: 10.0,
            ..CoxParams::defaults()
        };
        assert!(cox_simulate(&p, 1).unwrap().events.is_empty());
    }

    #[test]
    fn cox_grid_merges_events() {
        let p = CoxParams {
            horizon: 0.05,
            ..CoxParams::defaults()
        };
        let g = CoxGrid::new(&p, &[0.015, 0.02]).unwrap();
        assert_eq!(g.times.len(), 7);
        assert_eq!(g.event_count(), 2);
        assert!(g.times.windows(2).all(|w| w[1] > w[0]));
        assert!(CoxGrid::new(&p, &[0.06]).is_err());
    }

    #[test]
    fn sweep_rows_reproduce_in_isolation() {
        let cfg = SweepConfig {
            schemes: vec![SchemeId::SYSTEMATIC_PARTITION],
            n: vec![16],
            delta_log2: vec![0],
            reps: 3,
            horizon: 4.0,
            ..SweepConfig::desk()
        };
        let rows = ou_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let again = sweep_row(&cfg, SchemeId::SYSTEMATIC_PARTITION, 16, 0, 2).unwrap();
        assert_eq!(rows[2], again);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,N,delta_log2,rep,logZ,filter_est,smooth_est,resample_events"));
        assert_eq!(read_sweep_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn pmmh_config_validation() {
        let mut c = PmmhConfig::desk(SchemeId::SSP_PARTITION, 0);
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky3(&[[4.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(l[0][0], 2.0);
        assert_eq!(l[1][1], 3.0);
        assert!(cholesky3(&[[0.0; 3]; 3]).is_none());
    }
}
