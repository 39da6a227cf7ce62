//! Event-driven simulation of the continuous-time particle system.
//!
//! Between resampling events the `N` particles follow independent copies of
//! the diffusion, advanced by Euler sub-steps. Resampling events arrive with
//! state-dependent rate `ι*(V(x^1), .., V(x^N))` and are simulated by
//! thinning a homogeneous Poisson stream of rate `Λ`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::fkengine::{pf_run, FeynmanKac, FkModel, FkProblem, PfOptions};
use crate::intensity::{intensity_table, overall_rate_unchecked, PotentialValues};
use crate::resampling::{SchemeId, SchemeKind};
use crate::rng::{derive_seed, rng_from_seed, SmcRng};
use crate::weights::{AncestorVector, Permutation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub n: usize,
    /// Euler sub-step; defaults to `τ / 4096`.
    #[serde(default)]
    pub fine_step: Option<f64>,
    /// Thinning majorant; defaults to [`default_majorant`].
    #[serde(default)]
    pub majorant: Option<f64>,
    /// Record the cloud every `stride` sub-steps (0 disables the skeleton).
    #[serde(default)]
    pub skeleton_stride: usize,
}

impl LimitConfig {
    pub fn new(n: usize) -> Self {
        LimitConfig {
            n,
            fine_step: None,
            majorant: None,
            skeleton_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Jump {
    pub time: f64,
    pub ancestors: AncestorVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitPath {
    /// Skeleton times and clouds (`N × dim`, row major).
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jumps: Vec<Jump>,
    pub fine_step: f64,
    pub majorant: f64,
    /// Number of candidate events proposed by the dominating stream.
    pub candidates: usize,
    pub terminal: Vec<f64>,
    /// `∫_0^τ V̄(Z_u) du` by the left-point rule on the sub-step grid
    /// refined at candidate times.
    pub integrated_potential: f64,
}

/// Default thinning majorant for potentials bounded by `vmax`.
pub fn default_majorant(scheme: SchemeId, n: usize, vmax: f64) -> f64 {
    let nf = n as f64;
    match scheme.kind {
        SchemeKind::Killing => (nf - 1.0) * vmax,
        SchemeKind::Stratified => nf * nf * vmax,
        _ => nf * vmax,
    }
}

fn check_scheme(scheme: SchemeId) -> Result<()> {
    if !scheme.has_intensity_limit() {
        return Err(SmcError::NoIntensityLimit(scheme.to_string()));
    }
    if !scheme.has_closed_form_intensity() {
        return Err(SmcError::ClosedFormUnavailable(scheme.to_string()));
    }
    Ok(())
}

fn potentials(model: &FkModel, x: &[f64], d: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(x.chunks_exact(d).map(|xi| model.potential.value(xi).max(0.0)));
}

/// Simulate one path of the limiting particle system on `[0, τ]`.
pub fn simulate_limit(model: &FkModel, scheme: SchemeId, cfg: &LimitConfig, seed: u64) -> Result<LimitPath> {
    let mut rng = rng_from_seed(seed);
    simulate_limit_with(model, scheme, cfg, &mut rng)
}

pub fn simulate_limit_with(model: &FkModel, scheme: SchemeId, cfg: &LimitConfig, rng: &mut SmcRng) -> Result<LimitPath> {
    check_scheme(scheme)?;
    let problem = model.build()?;
    let n = cfg.n;
    if n == 0 {
        return Err(SmcError::EmptyInput);
    }
    let d = model.dim;
    let tau = model.horizon;
    let h = cfg.fine_step.unwrap_or(tau / 4096.0);
    if !(h > 0.0) {
        return Err(SmcError::InvalidConfig(format!("fine step must be positive, got {h}")));
    }
    let lambda = cfg
        .majorant
        .unwrap_or_else(|| default_majorant(scheme, n, model.potential.upper_bound()));
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SmcError::InvalidConfig(format!("invalid majorant {lambda}")));
    }

    let mut x = vec![0.0; n * d];
    for i in 0..n {
        problem.sample_initial(rng, &mut x[i * d..(i + 1) * d]);
    }
    let mut noise = vec![0.0; d];
    let mut v = Vec::with_capacity(n);
    let mut jumps = Vec::new();
    let mut times = Vec::new();
    let mut states = Vec::new();
    if cfg.skeleton_stride > 0 {
        times.push(0.0);
        states.push(x.clone());
    }
    let exp = if lambda > 0.0 { Some(Exp::new(lambda).expect("positive rate")) } else { None };
    let mut next_candidate = exp.map(|e| e.sample(rng)).unwrap_or(f64::INFINITY);
    let mut candidates = 0usize;
    let mut integral = 0.0;
    let mut t = 0.0;
    let mut grid_index = 0usize;
    let mut next_grid = h.min(tau);
    while t < tau {
        let next = next_grid.min(next_candidate).min(tau);
        potentials(model, &x, d, &mut v);
        integral += v.iter().sum::<f64>() / n as f64 * (next - t);
        let dt = next - t;
        if dt > 0.0 {
            for xi in x.chunks_exact_mut(d) {
                model.euler_step(xi, dt, rng, &mut noise);
            }
        }
        t = next;
        if t >= next_grid {
            grid_index += 1;
            next_grid = ((grid_index + 1) as f64 * h).min(tau);
            if cfg.skeleton_stride > 0 && grid_index % cfg.skeleton_stride == 0 {
                times.push(t);
                states.push(x.clone());
            }
        }
        if t == next_candidate && t < tau {
            candidates += 1;
            potentials(model, &x, d, &mut v);
            let pv = PotentialValues::new(v.clone())?;
            let order = if needs_order(scheme) { pv.order() } else { Permutation::identity(n) };
            let rate = overall_rate_unchecked(scheme, &pv, &order);
            if rate > lambda * (1.0 + 1e-12) {
                return Err(SmcError::MajorantViolated {
                    rate,
                    majorant: lambda,
                    time: t,
                });
            }
            if rng.random::<f64>() * lambda < rate {
                let table = intensity_table(scheme, &pv, &order)?;
                let u = rng.random::<f64>() * table.total;
                if let Some(e) = table.select(u) {
                    let a = e.layout.as_slice();
                    let old = x.clone();
                    for (i, &src) in a.iter().enumerate() {
                        x[i * d..(i + 1) * d].copy_from_slice(&old[src * d..(src + 1) * d]);
                    }
                    jumps.push(Jump {
                        time: t,
                        ancestors: e.layout.clone(),
                    });
                }
            }
            next_candidate = t + exp.map(|e| e.sample(rng)).unwrap_or(f64::INFINITY);
        }
    }
    if cfg.skeleton_stride > 0 && times.last() != Some(&tau) {
        times.push(tau);
        states.push(x.clone());
    }
    Ok(LimitPath {
        times,
        states,
        jumps,
        fine_step: h,
        majorant: lambda,
        candidates,
        terminal: x,
        integrated_potential: integral,
    })
}

fn needs_order(scheme: SchemeId) -> bool {
    matches!(scheme.kind, SchemeKind::Stratified | SchemeKind::Systematic)
}

/// `m` independent paths with seeds derived from `seed`, simulated in parallel.
pub fn simulate_limit_ensemble(
    model: &FkModel,
    scheme: SchemeId,
    cfg: &LimitConfig,
    m: usize,
    seed: u64,
) -> Result<Vec<LimitPath>> {
    (0..m)
        .into_par_iter()
        .map(|i| simulate_limit(model, scheme, cfg, derive_seed(seed, &[i as u64])))
        .collect()
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let m = xs.len();
        if m == 0 {
            return Err(SmcError::EmptyEnsemble);
        }
        let mean = xs.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Ok(McEstimate {
            mean,
            std_error: se,
            samples: m,
        })
    }

    /// `|a - b|` in units of the combined standard error.
    pub fn z_score(&self, other: &McEstimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        let diff = (self.mean - other.mean).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

fn cloud_mean<F: Fn(&[f64]) -> f64>(x: &[f64], d: usize, f: &F) -> f64 {
    let n = x.len() / d;
    x.chunks_exact(d).map(f).sum::<f64>() / n as f64
}

/// Estimate of `E[f̄(Z_τ) exp(-∫ V̄(Z_u) du)]` from limit paths.
pub fn fk_marginal_lhs<F: Fn(&[f64]) -> f64>(paths: &[LimitPath], dim: usize, f: F) -> Result<McEstimate> {
    let xs: Vec<f64> = paths
        .iter()
        .map(|p| cloud_mean(&p.terminal, dim, &f) * (-p.integrated_potential).exp())
        .collect();
    McEstimate::from_samples(&xs)
}

/// Estimate of `E[f(z_τ) exp(-∫ V(z_u) du)]` for a single diffusion from
/// `m` Euler paths with sub-step `fine_step` (default `τ / 4096`).
pub fn fk_marginal_rhs<F: Fn(&[f64]) -> f64 + Sync>(
    model: &FkModel,
    f: F,
    m: usize,
    seed: u64,
    fine_step: Option<f64>,
) -> Result<McEstimate> {
    let problem = model.build()?;
    let d = model.dim;
    let tau = model.horizon;
    let h = fine_step.unwrap_or(tau / 4096.0);
    let steps = (tau / h).ceil() as usize;
    let xs: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            let mut x = vec![0.0; d];
            let mut noise = vec![0.0; d];
            problem.sample_initial(&mut rng, &mut x);
            let mut integral = 0.0;
            let mut t = 0.0;
            for k in 0..steps {
                let next = ((k + 1) as f64 * h).min(tau);
                integral += model.potential.value(&x) * (next - t);
                model.euler_step(&mut x, next - t, &mut rng, &mut noise);
                t = next;
            }
            f(&x) * (-integral).exp()
        })
        .collect();
    McEstimate::from_samples(&xs)
}

/// Particle filter estimate of the same quantity:
/// `f̄(X_T) exp(Σ_k mean_i log G_k(X_k^i))` averaged over `m` runs.
pub fn pf_marginal_estimate<F: Fn(&[f64]) -> f64 + Sync>(
    problem: &FkProblem,
    scheme: SchemeId,
    n: usize,
    f: F,
    m: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = problem.dim();
    let opts = PfOptions {
        keep_cloud: true,
        keep_ancestry: false,
    };
    let xs: Result<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let out = pf_run(problem, scheme, n, derive_seed(seed, &[i as u64]), opts)?;
            let term = out.terminal.as_ref().expect("cloud retained");
            Ok(cloud_mean(term, d, &f) * out.mean_log_potential_sum.exp())
        })
        .collect();
    McEstimate::from_samples(&xs?)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fkengine::{Diffusion, Drift, Grid, InitialLaw, Potential, Transition};

    fn model(potential: Potential) -> FkModel {
        FkModel {
            dim: 1,
            initial: InitialLaw::Gaussian { mean: 0.0, sd: 1.0 },
            drift: Drift::ClippedOu { theta: 1.0, clip: 10.0 },
            diffusion: Diffusion::Scalar(1.0),
            potential,
            horizon: 1.0,
            grid: Grid::Uniform { delta: 1.0 / 64.0 },
            transition: Transition::Euler,
        }
    }

    #[test]
    fn no_jumps_without_potential() {
        let m = model(Potential::Zero);
        for s in SchemeId::stable() {
            let p = simulate_limit(&m, s, &LimitConfig::new(4), 1).unwrap();
            assert!(p.jumps.is_empty());
            assert_eq!(p.integrated_potential, 0.0);
        }
        let m = model(Potential::Constant { value: 2.0 });
        let p = simulate_limit(&m, SchemeId::KILLING, &LimitConfig::new(4), 1).unwrap();
        assert!(p.jumps.is_empty());
        assert!((p.integrated_potential - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_particle_never_jumps() {
        let m = model(Potential::Lorentzian { height: 2.0, scale: 1.0 });
        for s in SchemeId::stable() {
            let p = simulate_limit(&m, s, &LimitConfig::new(1), 4).unwrap();
            assert!(p.jumps.is_empty());
        }
    }

    #[test]
    fn jumps_are_single_events() {
        let mut m = model(Potential::Lorentzian { height: 3.0, scale: 0.5 });
        m.horizon = 5.0;
        let p = simulate_limit(&m, SchemeId::SSP_PARTITION, &LimitConfig::new(6), 9).unwrap();
        assert!(!p.jumps.is_empty());
        assert!(p.jumps.windows(2).all(|w| w[0].time < w[1].time));
        for j in &p.jumps {
            assert!(j.ancestors.signature().is_some());
        }
    }

    #[test]
    fn majorant_violation_is_reported() {
        let mut m = model(Potential::Lorentzian { height: 3.0, scale: 0.5 });
        m.horizon = 20.0;
        let cfg = LimitConfig {
            majorant: Some(0.5),
            ..LimitConfig::new(6)
        };
        let err = simulate_limit(&m, SchemeId::KILLING, &cfg, 2).unwrap_err();
        assert!(matches!(err, SmcError::MajorantViolated { .. }));
    }

    #[test]
    fn unstable_schemes_rejected() {
        let m = model(Potential::Zero);
        assert!(matches!(
            simulate_limit(&m, SchemeId::MULTINOMIAL, &LimitConfig::new(3), 0),
            Err(SmcError::NoIntensityLimit(_))
        ));
    }

    #[test]
    fn trivial_marginals() {
        let m = model(Potential::Zero);
        let paths = simulate_limit_ensemble(&m, SchemeId::KILLING, &LimitConfig::new(2), 5, 0).unwrap();
        let e = fk_marginal_lhs(&paths, 1, |_| 1.0).unwrap();
        assert_eq!(e.mean, 1.0);
        let r = fk_marginal_rhs(&m, |_| 1.0, 10, 0, None).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!(matches!(fk_marginal_lhs(&[], 1, |_| 1.0), Err(SmcError::EmptyEnsemble)));
    }

    #[test]
    fn ks_basic() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[5.0, 6.0]), 1.0);
    }
}
