//! Particle filter for time-discretised Feynman-Kac path integrals.
//!
//! On a grid `0 = t_0 < .. < t_{T-1} = τ` the potentials are
//! `G_k(x) = exp(-(t_{k+1} - t_k) V(t_k, x))` for `k = 0..T-2`. The filter
//! resamples with `G_k` and then moves every particle to `t_{k+1}`; the
//! product of mean potentials is an unbiased estimate of the normaliser.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::resampling::{Resampler, SchemeId};
use crate::rng::{rng_from_seed, SmcRng};
use crate::weights::WeightVector;

/// A discrete-time Feynman-Kac model over flat `f64` states of dimension `dim`.
pub trait FeynmanKac: Sync {
    fn dim(&self) -> usize;
    /// Number of grid times `T`; the filter performs `T - 1` steps.
    fn num_times(&self) -> usize;
    fn sample_initial(&self, rng: &mut SmcRng, out: &mut [f64]);
    /// `log G_k(x)` for `k in 0..T-1`.
    fn log_potential(&self, k: usize, x: &[f64]) -> f64;
    /// Draw the state at `t_{k+1}` given `x` at `t_k`.
    fn transition(&self, k: usize, x: &[f64], rng: &mut SmcRng, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Independent `N(mean, sd²)` coordinates.
    Gaussian { mean: f64, sd: f64 },
    Dirac { value: f64 },
    /// Stationary law of the OU drift with scalar diffusion.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    /// `b(x) = -θ x`.
    Ou { theta: f64 },
    /// `b(x) = clamp(-θ x, -clip, clip)` coordinatewise.
    ClippedOu { theta: f64, clip: f64 },
}

impl Drift {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Ou { theta } => -theta * x,
            Drift::ClippedOu { theta, clip } => (-theta * x).clamp(-clip, clip),
        }
    }

    fn theta(&self) -> Option<f64> {
        match *self {
            Drift::Ou { theta } | Drift::ClippedOu { theta, .. } => Some(theta),
            Drift::Zero => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Diffusion {
    Scalar(f64),
    /// Constant `d × d` matrix, row major.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    Constant { value: f64 },
    /// `height · 1{|x - center| > half_width}` with the Euclidean norm.
    Box { height: f64, center: f64, half_width: f64 },
    /// `height / (1 + |x|² / scale²)`.
    Lorentzian { height: f64, scale: f64 },
}

impl Potential {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Constant { value } => value,
            Potential::Box {
                height,
                center,
                half_width,
            } => {
                let r2: f64 = x.iter().map(|&xi| (xi - center) * (xi - center)).sum();
                if r2 > half_width * half_width {
                    height
                } else {
                    0.0
                }
            }
            Potential::Lorentzian { height, scale } => {
                let r2: f64 = x.iter().map(|&xi| xi * xi).sum();
                height / (1.0 + r2 / (scale * scale))
            }
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Constant { value } => value,
            Potential::Box { height, .. } => height,
            Potential::Lorentzian { height, .. } => height,
        }
    }

    /// Points of discontinuity in one dimension.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Potential::Box {
                center, half_width, ..
            } if half_width > 0.0 => vec![center - half_width, center + half_width],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Potential::Zero => true,
            Potential::Constant { value } => value >= 0.0 && value.is_finite(),
            Potential::Box {
                height, half_width, ..
            } => height >= 0.0 && height.is_finite() && half_width >= 0.0,
            Potential::Lorentzian { height, scale } => height >= 0.0 && height.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SmcError::InvalidConfig(format!("invalid potential {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Transition {
    /// `x + b(x) Δ + σ √Δ ξ`.
    Euler,
    /// Exact OU conditional law; needs an `ou` drift and scalar diffusion.
    ExactOu,
    /// Euler step folded back into `[lo, hi]`.
    ReflectedGaussian { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Grid {
    Uniform { delta: f64 },
    Explicit { times: Vec<f64> },
}

/// Configuration of a diffusion with potential on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkModel {
    #[serde(default = "one")]
    pub dim: usize,
    pub initial: InitialLaw,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub potential: Potential,
    pub horizon: f64,
    pub grid: Grid,
    pub transition: Transition,
}

fn one() -> usize {
    1
}

/// Fold `x` into `[lo, hi]` by repeated reflection at both ends.
#[inline]
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    if (lo..=hi).contains(&x) {
        return x;
    }
    let period = 2.0 * len;
    let mut y = (x - lo) % period;
    if y < 0.0 {
        y += period;
    }
    if y > len {
        y = period - y;
    }
    lo + y
}

impl FkModel {
    /// The OU model with box potential: stationary start, exact OU moves.
    pub fn ou_box(theta: f64, sigma: f64, height: f64, center: f64, half_width: f64, horizon: f64, delta: f64) -> Self {
        FkModel {
            dim: 1,
            initial: InitialLaw::Stationary,
            drift: Drift::Ou { theta },
            diffusion: Diffusion::Scalar(sigma),
            potential: Potential::Box {
                height,
                center,
                half_width,
            },
            horizon,
            grid: Grid::Uniform { delta },
            transition: Transition::ExactOu,
        }
    }

    pub fn scalar_sigma(&self) -> Option<f64> {
        match &self.diffusion {
            Diffusion::Scalar(s) => Some(*s),
            Diffusion::Matrix(m) if self.dim == 1 => Some(m[0][0].abs()),
            _ => None,
        }
    }

    /// Stationary standard deviation of the OU drift with scalar diffusion.
    pub fn stationary_sd(&self) -> Result<f64> {
        match (self.drift.theta(), self.scalar_sigma()) {
            (Some(theta), Some(sigma)) if theta > 0.0 => Ok(sigma / (2.0 * theta).sqrt()),
            _ => Err(SmcError::UnsupportedModel(
                "stationary start needs an OU drift with positive theta and scalar diffusion".into(),
            )),
        }
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SmcError::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        match &self.grid {
            Grid::Uniform { delta } => {
                if !(*delta > 0.0) {
                    return Err(SmcError::InvalidConfig(format!("delta must be positive, got {delta}")));
                }
                let steps = (self.horizon / delta).round();
                if steps < 1.0 || (steps * delta - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
                    return Err(SmcError::InvalidConfig(format!(
                        "delta {delta} does not divide horizon {}",
                        self.horizon
                    )));
                }
                let steps = steps as usize;
                Ok((0..=steps).map(|k| k as f64 * delta).collect())
            }
            Grid::Explicit { times } => {
                let ok = times.len() >= 2
                    && times[0] == 0.0
                    && (times[times.len() - 1] - self.horizon).abs() <= 1e-12 * self.horizon.max(1.0)
                    && times.windows(2).all(|w| w[1] > w[0]);
                if ok {
                    Ok(times.clone())
                } else {
                    Err(SmcError::InvalidConfig(
                        "grid must increase strictly from 0 to the horizon".into(),
                    ))
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(SmcError::UnsupportedDimension(0));
        }
        self.potential.validate()?;
        match &self.diffusion {
            Diffusion::Scalar(s) if s.is_finite() && *s >= 0.0 => {}
            Diffusion::Matrix(m) if m.len() == self.dim && m.iter().all(|r| r.len() == self.dim) => {}
            d => return Err(SmcError::InvalidConfig(format!("invalid diffusion {d:?}"))),
        }
        match self.initial {
            InitialLaw::Gaussian { sd, .. } if !(sd >= 0.0) => {
                return Err(SmcError::InvalidConfig(format!("initial sd must be nonnegative, got {sd}")))
            }
            InitialLaw::Stationary => {
                self.stationary_sd()?;
            }
            _ => {}
        }
        match self.transition {
            Transition::ExactOu => {
                if !matches!(self.drift, Drift::Ou { .. }) || self.scalar_sigma().is_none() {
                    return Err(SmcError::UnsupportedModel(
                        "exact_ou needs an ou drift and scalar diffusion".into(),
                    ));
                }
            }
            Transition::ReflectedGaussian { lo, hi } if !(hi > lo) => {
                return Err(SmcError::InvalidConfig(format!("reflection interval [{lo}, {hi}] is empty")))
            }
            _ => {}
        }
        Ok(())
    }

    /// Validate and precompute the grid.
    pub fn build(&self) -> Result<FkProblem> {
        self.validate()?;
        let times = self.times()?;
        let steps: Vec<StepCoef> = times
            .windows(2)
            .map(|w| StepCoef::new(self, w[1] - w[0]))
            .collect();
        Ok(FkProblem {
            model: self.clone(),
            times,
            steps,
        })
    }

    #[inline]
    fn sample_initial_into(&self, rng: &mut SmcRng, out: &mut [f64]) {
        match self.initial {
            InitialLaw::Gaussian { mean, sd } => {
                for o in out.iter_mut() {
                    *o = mean + sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            InitialLaw::Dirac { value } => out.fill(value),
            InitialLaw::Stationary => {
                let sd = self.stationary_sd().expect("validated");
                for o in out.iter_mut() {
                    *o = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    /// One Euler step of size `h` of the diffusion, in place.
    #[inline]
    pub fn euler_step(&self, x: &mut [f64], h: f64, rng: &mut SmcRng, noise: &mut [f64]) {
        let sh = h.sqrt();
        match &self.diffusion {
            Diffusion::Scalar(s) => {
                for xi in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += self.drift.value(*xi) * h + s * sh * z;
                }
            }
            Diffusion::Matrix(m) => {
                for z in noise.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                for (i, xi) in x.iter_mut().enumerate() {
                    let dz: f64 = m[i].iter().zip(noise.iter()).map(|(a, b)| a * b).sum();
                    *xi += self.drift.value(*xi) * h + sh * dz;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StepCoef {
    delta: f64,
    /// Exact OU: `x ↦ decay x + sd ξ`.
    decay: f64,
    sd: f64,
}

impl StepCoef {
    fn new(model: &FkModel, delta: f64) -> Self {
        match (&model.transition, &model.drift) {
            (Transition::ExactOu, Drift::Ou { theta }) => {
                let s = model.scalar_sigma().unwrap_or(0.0);
                let decay = (-theta * delta).exp();
                let var = if *theta > 0.0 {
                    s * s * -(-2.0 * theta * delta).exp_m1() / (2.0 * theta)
                } else {
                    s * s * delta
                };
                StepCoef {
                    delta,
                    decay,
                    sd: var.sqrt(),
                }
            }
            _ => StepCoef {
                delta,
                decay: 1.0,
                sd: model.scalar_sigma().unwrap_or(0.0) * delta.sqrt(),
            },
        }
    }
}

/// A validated [`FkModel`] with its time grid.
#[derive(Debug, Clone)]
pub struct FkProblem {
    model: FkModel,
    times: Vec<f64>,
    steps: Vec<StepCoef>,
}

impl FkProblem {
    pub fn model(&self) -> &FkModel {
        &self.model
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

impl FeynmanKac for FkProblem {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn num_times(&self) -> usize {
        self.times.len()
    }

    fn sample_initial(&self, rng: &mut SmcRng, out: &mut [f64]) {
        self.model.sample_initial_into(rng, out);
    }

    #[inline]
    fn log_potential(&self, k: usize, x: &[f64]) -> f64 {
        -self.steps[k].delta * self.model.potential.value(x)
    }

    #[inline]
    fn transition(&self, k: usize, x: &[f64], rng: &mut SmcRng, out: &mut [f64]) {
        let c = self.steps[k];
        out.copy_from_slice(x);
        match self.model.transition {
            Transition::ExactOu => {
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = c.decay * *o + c.sd * z;
                }
            }
            Transition::Euler => {
                let mut noise = [0.0f64; 8];
                if out.len() <= 8 {
                    self.model.euler_step(out, c.delta, rng, &mut noise[..x.len()]);
                } else {
                    let mut noise = vec![0.0; x.len()];
                    self.model.euler_step(out, c.delta, rng, &mut noise);
                }
            }
            Transition::ReflectedGaussian { lo, hi } => {
                let mut noise = [0.0f64; 8];
                if out.len() <= 8 {
                    self.model.euler_step(out, c.delta, rng, &mut noise[..x.len()]);
                } else {
                    let mut noise = vec![0.0; x.len()];
                    self.model.euler_step(out, c.delta, rng, &mut noise);
                }
                for o in out.iter_mut() {
                    *o = reflect(*o, lo, hi);
                }
            }
        }
    }
}

/// What to retain from a particle filter run besides the summaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfOptions {
    #[serde(default)]
    pub keep_cloud: bool,
    #[serde(default)]
    pub keep_ancestry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfOutput {
    /// `Σ_k log((1/N) Σ_i G_k(X_k^i))`.
    pub log_z: f64,
    /// `Σ_k (1/N) Σ_i log G_k(X_k^i)`, i.e. `-∫ V̄` along the piecewise
    /// constant particle paths.
    pub mean_log_potential_sum: f64,
    /// Mean of the terminal particles, per coordinate.
    pub filtering: Vec<f64>,
    /// Mean of the initial states of the surviving ancestral lines.
    pub smoothing: Vec<f64>,
    /// Number of steps whose ancestor vector was not `0..N`.
    pub resample_events: usize,
    pub steps: usize,
    /// Terminal cloud, `N × dim` row major.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<f64>>,
    /// Initial cloud, `N × dim` row major.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    /// Ancestor vectors of every step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ancestry: Option<Vec<Vec<usize>>>,
}

impl PfOutput {
    /// Initial-time states of every terminal particle, reconstructed from
    /// the retained ancestry.
    pub fn traced_roots(&self) -> Option<Vec<usize>> {
        let ancestry = self.ancestry.as_ref()?;
        let n = ancestry.first().map(|a| a.len())?;
        let mut idx: Vec<usize> = (0..n).collect();
        for a in ancestry.iter().rev() {
            for i in idx.iter_mut() {
                *i = a[*i];
            }
        }
        Some(idx)
    }
}

/// Reusable buffers for repeated particle filter runs.
#[derive(Debug, Clone)]
pub struct PfWorkspace {
    resampler: Resampler,
    weights: WeightVector,
    x: Vec<f64>,
    xnew: Vec<f64>,
    x0: Vec<f64>,
    logg: Vec<f64>,
    anc: Vec<usize>,
    roots: Vec<usize>,
    roots_new: Vec<usize>,
}

impl PfWorkspace {
    pub fn new(scheme: SchemeId) -> Self {
        PfWorkspace {
            resampler: Resampler::new(scheme),
            weights: WeightVector::default(),
            x: Vec::new(),
            xnew: Vec::new(),
            x0: Vec::new(),
            logg: Vec::new(),
            anc: Vec::new(),
            roots: Vec::new(),
            roots_new: Vec::new(),
        }
    }

    pub fn scheme(&self) -> SchemeId {
        self.resampler.scheme()
    }
}

/// Run the particle filter with `n` particles from a fresh seeded stream.
pub fn pf_run<M: FeynmanKac + ?Sized>(
    model: &M,
    scheme: SchemeId,
    n: usize,
    seed: u64,
    opts: PfOptions,
) -> Result<PfOutput> {
    let mut rng = rng_from_seed(seed);
    let mut ws = PfWorkspace::new(scheme);
    pf_run_with(model, n, &mut rng, &mut ws, opts)
}

/// Run the particle filter reusing `ws`; the scheme is the workspace's.
pub fn pf_run_with<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    rng: &mut SmcRng,
    ws: &mut PfWorkspace,
    opts: PfOptions,
) -> Result<PfOutput> {
    if n == 0 {
        return Err(SmcError::EmptyInput);
    }
    let d = model.dim();
    let t = model.num_times();
    if t == 0 {
        return Err(SmcError::InvalidConfig("empty time grid".into()));
    }
    ws.x.clear();
    ws.x.resize(n * d, 0.0);
    ws.xnew.clear();
    ws.xnew.resize(n * d, 0.0);
    ws.logg.clear();
    ws.logg.resize(n, 0.0);
    ws.roots.clear();
    ws.roots.extend(0..n);
    ws.roots_new.clear();
    ws.roots_new.resize(n, 0);
    for i in 0..n {
        model.sample_initial(rng, &mut ws.x[i * d..(i + 1) * d]);
    }
    ws.x0.clear();
    ws.x0.extend_from_slice(&ws.x);

    let mut log_z = 0.0;
    let mut mean_log_g = 0.0;
    let mut events = 0usize;
    let mut ancestry = opts.keep_ancestry.then(|| Vec::with_capacity(t.saturating_sub(1)));
    let inv_n = 1.0 / n as f64;
    for k in 0..t.saturating_sub(1) {
        let mut sum_log = 0.0;
        for i in 0..n {
            let l = model.log_potential(k, &ws.x[i * d..(i + 1) * d]);
            ws.logg[i] = l;
            sum_log += l;
        }
        mean_log_g += sum_log * inv_n;
        let lm = match ws.weights.refill_from_log(&ws.logg) {
            Ok(lm) => lm,
            Err(SmcError::AllZeroWeights) => return Err(SmcError::DegenerateWeights { step: k }),
            Err(e) => return Err(e),
        };
        log_z += lm;
        ws.resampler.resample_into(&ws.weights, rng, &mut ws.anc)?;
        let moved = ws.anc.iter().enumerate().any(|(i, &a)| a != i);
        if moved {
            events += 1;
            for i in 0..n {
                ws.roots_new[i] = ws.roots[ws.anc[i]];
            }
            std::mem::swap(&mut ws.roots, &mut ws.roots_new);
        }
        if let Some(a) = ancestry.as_mut() {
            a.push(ws.anc.clone());
        }
        for i in 0..n {
            let src = ws.anc[i];
            let (xs, xn) = (&ws.x[src * d..(src + 1) * d], &mut ws.xnew[i * d..(i + 1) * d]);
            model.transition(k, xs, rng, xn);
        }
        std::mem::swap(&mut ws.x, &mut ws.xnew);
    }

    let mut filtering = vec![0.0; d];
    let mut smoothing = vec![0.0; d];
    for i in 0..n {
        let r = ws.roots[i];
        for j in 0..d {
            filtering[j] += ws.x[i * d + j];
            smoothing[j] += ws.x0[r * d + j];
        }
    }
    for j in 0..d {
        filtering[j] *= inv_n;
        smoothing[j] *= inv_n;
    }
    Ok(PfOutput {
        log_z,
        mean_log_potential_sum: mean_log_g,
        filtering,
        smoothing,
        resample_events: events,
        steps: t.saturating_sub(1),
        terminal: opts.keep_cloud.then(|| ws.x.clone()),
        initial: opts.keep_cloud.then(|| ws.x0.clone()),
        ancestry,
    })
}

/// Quadrature mesh for [`grid_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMesh {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl StateMesh {
    /// `[-width·σ∞, width·σ∞]` for the stationary OU scale of `model`.
    pub fn stationary(model: &FkModel, width: f64, points: usize) -> Result<Self> {
        let s = model.stationary_sd()?;
        Ok(StateMesh {
            lo: -width * s,
            hi: width * s,
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReference {
    pub log_z: f64,
    /// Mean of the terminal state under the discretised path measure.
    pub filtering_mean: f64,
    /// Mean of the initial state under the discretised path measure.
    pub smoothing_mean: f64,
    /// Mesh actually used, after aligning nodes with the potential's
    /// discontinuities.
    pub mesh: StateMesh,
}

fn std_normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Deterministic forward recursion of the discretised model on a 1-d mesh.
///
/// The mesh spacing is adjusted so that discontinuities of the potential
/// fall on nodes, where the two one-sided values are averaged; integrals
/// use the trapezoid rule and the Gaussian transition kernel is truncated
/// at twelve standard deviations.
pub fn grid_reference(model: &FkModel, mesh: StateMesh) -> Result<GridReference> {
    if model.dim != 1 {
        return Err(SmcError::UnsupportedDimension(model.dim));
    }
    let problem = model.build()?;
    if !(mesh.hi > mesh.lo) || mesh.points < 3 {
        return Err(SmcError::InvalidConfig("mesh needs hi > lo and at least 3 points".into()));
    }
    if matches!(model.transition, Transition::ReflectedGaussian { .. }) {
        return Err(SmcError::UnsupportedModel(
            "grid reference supports euler and exact_ou transitions".into(),
        ));
    }
    let sigma = model
        .scalar_sigma()
        .ok_or_else(|| SmcError::UnsupportedModel("grid reference needs a scalar diffusion".into()))?;

    // mesh aligned with the breakpoints
    let mut h = (mesh.hi - mesh.lo) / (mesh.points - 1) as f64;
    let bps = model.potential.breakpoints();
    let anchor = if let Some(&b0) = bps.first() {
        if bps.len() > 1 {
            let gap = bps[bps.len() - 1] - b0;
            if gap > 0.0 {
                h = gap / (gap / h).round().max(1.0);
            }
        }
        b0
    } else {
        mesh.lo
    };
    let below = ((anchor - mesh.lo) / h).ceil();
    let lo = anchor - below * h;
    let m = ((mesh.hi - lo) / h).ceil() as usize + 1;
    let xs: Vec<f64> = (0..m).map(|i| lo + i as f64 * h).collect();
    let mut quad = vec![h; m];
    quad[0] = 0.5 * h;
    quad[m - 1] = 0.5 * h;
    let on_break: Vec<bool> = xs
        .iter()
        .map(|&x| bps.iter().any(|&b| (x - b).abs() < 1e-9 * h))
        .collect();
    let vals_at = |x: f64, brk: bool| -> (f64, f64) {
        if brk {
            let eta = 1e-7 * h;
            (model.potential.value(&[x - eta]), model.potential.value(&[x + eta]))
        } else {
            let v = model.potential.value(&[x]);
            (v, v)
        }
    };

    let mut p: Vec<f64> = match model.initial {
        InitialLaw::Gaussian { mean, sd } if sd > 0.0 => {
            xs.iter().map(|&x| std_normal_pdf((x - mean) / sd) / sd).collect()
        }
        InitialLaw::Stationary => {
            let sd = model.stationary_sd()?;
            xs.iter().map(|&x| std_normal_pdf(x / sd) / sd).collect()
        }
        _ => {
            return Err(SmcError::UnsupportedModel(
                "grid reference needs a Gaussian initial law with positive sd".into(),
            ))
        }
    };
    let m0: f64 = p.iter().zip(&quad).map(|(a, w)| a * w).sum();
    p.iter_mut().for_each(|a| *a /= m0);
    let mut r: Vec<f64> = p.iter().zip(&xs).map(|(pi, x)| pi * x).collect();
    let mut q = vec![0.0; m];
    let mut qr = vec![0.0; m];

    let times = problem.times();
    let mut log_z = 0.0;
    let mut kernel_cache: Option<(f64, Vec<(usize, Vec<f64>)>)> = None;
    for k in 0..times.len() - 1 {
        let delta = times[k + 1] - times[k];
        let mut c = 0.0;
        for i in 0..m {
            let (vl, vr) = vals_at(xs[i], on_break[i]);
            let g = 0.5 * ((-delta * vl).exp() + (-delta * vr).exp());
            q[i] = p[i] * g * quad[i];
            qr[i] = r[i] * g * quad[i];
            c += q[i];
        }
        if !(c > 0.0) {
            return Err(SmcError::DegenerateWeights { step: k });
        }
        log_z += c.ln();
        let rebuild = kernel_cache.as_ref().map(|(d, _)| *d != delta).unwrap_or(true);
        if rebuild {
            kernel_cache = Some((delta, build_kernel(model, &problem, k, &xs, h, sigma)));
        }
        let rows = &kernel_cache.as_ref().unwrap().1;
        p.fill(0.0);
        r.fill(0.0);
        for i in 0..m {
            let (a, b) = (q[i] / c, qr[i] / c);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let (start, ref row) = rows[i];
            for (j, &kv) in row.iter().enumerate() {
                p[start + j] += a * kv;
                r[start + j] += b * kv;
            }
        }
    }
    if model.potential.upper_bound() == 0.0 {
        // G ≡ 1
        log_z = 0.0;
    }
    let mass: f64 = p.iter().zip(&quad).map(|(a, w)| a * w).sum();
    let first: f64 = p.iter().zip(&quad).zip(&xs).map(|((a, w), x)| a * w * x).sum();
    let smooth: f64 = r.iter().zip(&quad).map(|(a, w)| a * w).sum();
    Ok(GridReference {
        log_z,
        filtering_mean: first / mass,
        smoothing_mean: smooth / mass,
        mesh: StateMesh {
            lo,
            hi: xs[m - 1],
            points: m,
        },
    })
}

/// [`grid_reference`] on `mesh` and on a mesh with half the spacing,
/// combined by Richardson extrapolation of the second-order trapezoid error.
pub fn grid_reference_extrapolated(model: &FkModel, mesh: StateMesh) -> Result<GridReference> {
    let coarse = grid_reference(model, mesh)?;
    let fine_mesh = StateMesh {
        points: 2 * coarse.mesh.points - 1,
        ..coarse.mesh
    };
    let fine = grid_reference(model, fine_mesh)?;
    let ex = |c: f64, f: f64| f + (f - c) / 3.0;
    Ok(GridReference {
        log_z: ex(coarse.log_z, fine.log_z),
        filtering_mean: ex(coarse.filtering_mean, fine.filtering_mean),
        smoothing_mean: ex(coarse.smoothing_mean, fine.smoothing_mean),
        mesh: fine.mesh,
    })
}

/// Banded transition densities `K(x_i, x_j)` for step `k`.
fn build_kernel(model: &FkModel, problem: &FkProblem, k: usize, xs: &[f64], h: f64, sigma: f64) -> Vec<(usize, Vec<f64>)> {
    let delta = problem.times()[k + 1] - problem.times()[k];
    let c = problem.steps[k];
    let m = xs.len();
    let lo = xs[0];
    xs.iter()
        .map(|&x| {
            let (mean, sd) = match model.transition {
                Transition::ExactOu => (c.decay * x, c.sd),
                _ => (x + model.drift.value(x) * delta, sigma * delta.sqrt()),
            };
            if sd == 0.0 {
                // deterministic move: spread onto the nearest node
                let j = (((mean - lo) / h).round().max(0.0) as usize).min(m - 1);
                let w = if j == 0 || j == m - 1 { 0.5 * h } else { h };
                return (j, vec![1.0 / w]);
            }
            let a = (((mean - 12.0 * sd - lo) / h).floor().max(0.0)) as usize;
            let b = ((((mean + 12.0 * sd - lo) / h).ceil()).max(0.0) as usize).min(m - 1);
            if a > b {
                return (0, Vec::new());
            }
            let mut row: Vec<f64> = (a..=b).map(|j| std_normal_pdf((xs[j] - mean) / sd) / sd).collect();
            // conserve mass: each row integrates to one under the quadrature
            let mass: f64 = row
                .iter()
                .enumerate()
                .map(|(o, &kv)| kv * if a + o == 0 || a + o == m - 1 { 0.5 * h } else { h })
                .sum();
            if mass > 0.0 {
                row.iter_mut().for_each(|kv| *kv /= mass);
            }
            (a, row)
        })
        .collect()
}
