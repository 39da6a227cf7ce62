//! Resampling schemes and their exact finite-N distributions.
//!
//! Every scheme maps unnormalised weights `g` to an ancestor vector whose
//! expected offspring count for index `j` is `N w_j`. The `*-partition`
//! variants process particles in a mean-partition order of the weights:
//! weights at or below the mean first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SmcError};
use crate::weights::{mean_partition_into, repeat_indices, AncestorVector, Permutation, WeightVector};

/// Largest `N` accepted by [`exact_distribution`].
pub const MAX_EXACT_N: usize = 12;
/// Largest number of enumerated outcomes accepted by [`exact_distribution`].
pub const MAX_ENUMERATED: usize = 4_000_000;

const SSP_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    Multinomial,
    Residual,
    Killing,
    Stratified,
    Systematic,
    Ssp,
    SymmetrisedSystematic,
}

/// Processing order of the particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Order {
    Natural,
    MeanPartition,
}

/// A resampling scheme.
///
/// `fallback` only matters for symmetrised systematic resampling: when the
/// weights violate `Σ (N w_i - 1)_+ ≤ 1` it delegates to SSP with mean
/// partition instead of failing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchemeId {
    pub kind: SchemeKind,
    pub order: Order,
    pub fallback: bool,
}

impl SchemeId {
    pub fn new(kind: SchemeKind, order: Order) -> Result<Self> {
        if order == Order::MeanPartition
            && !matches!(
                kind,
                SchemeKind::Stratified | SchemeKind::Systematic | SchemeKind::Ssp
            )
        {
            return Err(SmcError::InvalidConfig(format!(
                "mean-partition order is not defined for {kind:?}"
            )));
        }
        Ok(SchemeId {
            kind,
            order,
            fallback: true,
        })
    }

    pub const fn plain(kind: SchemeKind) -> Self {
        SchemeId {
            kind,
            order: Order::Natural,
            fallback: true,
        }
    }

    pub const MULTINOMIAL: SchemeId = SchemeId::plain(SchemeKind::Multinomial);
    pub const RESIDUAL: SchemeId = SchemeId::plain(SchemeKind::Residual);
    pub const KILLING: SchemeId = SchemeId::plain(SchemeKind::Killing);
    pub const STRATIFIED: SchemeId = SchemeId::plain(SchemeKind::Stratified);
    pub const SYSTEMATIC: SchemeId = SchemeId::plain(SchemeKind::Systematic);
    pub const SSP: SchemeId = SchemeId::plain(SchemeKind::Ssp);
    pub const SYMMETRISED: SchemeId = SchemeId::plain(SchemeKind::SymmetrisedSystematic);
    pub const STRATIFIED_PARTITION: SchemeId = SchemeId {
        kind: SchemeKind::Stratified,
        order: Order::MeanPartition,
        fallback: true,
    };
    pub const SYSTEMATIC_PARTITION: SchemeId = SchemeId {
        kind: SchemeKind::Systematic,
        order: Order::MeanPartition,
        fallback: true,
    };
    pub const SSP_PARTITION: SchemeId = SchemeId {
        kind: SchemeKind::Ssp,
        order: Order::MeanPartition,
        fallback: true,
    };

    /// Every scheme shipped, in a fixed order.
    pub fn all() -> Vec<SchemeId> {
        vec![
            Self::MULTINOMIAL,
            Self::RESIDUAL,
            Self::KILLING,
            Self::STRATIFIED,
            Self::STRATIFIED_PARTITION,
            Self::SYSTEMATIC,
            Self::SYSTEMATIC_PARTITION,
            Self::SSP,
            Self::SSP_PARTITION,
            Self::SYMMETRISED,
        ]
    }

    /// Schemes with a shipped closed-form intensity.
    pub fn stable() -> Vec<SchemeId> {
        vec![
            Self::KILLING,
            Self::STRATIFIED_PARTITION,
            Self::SYSTEMATIC_PARTITION,
            Self::SSP_PARTITION,
            Self::SYMMETRISED,
        ]
    }

    /// Multinomial and residual resampling keep resampling at a
    /// non-vanishing rate as the weights flatten.
    pub fn has_intensity_limit(&self) -> bool {
        !matches!(self.kind, SchemeKind::Multinomial | SchemeKind::Residual)
    }

    pub fn has_closed_form_intensity(&self) -> bool {
        match self.kind {
            SchemeKind::Killing | SchemeKind::SymmetrisedSystematic => true,
            SchemeKind::Stratified | SchemeKind::Systematic | SchemeKind::Ssp => {
                self.order == Order::MeanPartition
            }
            _ => false,
        }
    }

    pub fn name(&self) -> &'static str {
        use SchemeKind::*;
        match (self.kind, self.order) {
            (Multinomial, _) => "multinomial",
            (Residual, _) => "residual",
            (Killing, _) => "killing",
            (Stratified, Order::Natural) => "stratified",
            (Stratified, Order::MeanPartition) => "stratified-partition",
            (Systematic, Order::Natural) => "systematic",
            (Systematic, Order::MeanPartition) => "systematic-partition",
            (Ssp, Order::Natural) => "ssp",
            (Ssp, Order::MeanPartition) => "ssp-partition",
            (SymmetrisedSystematic, _) if self.fallback => "symmetrised-systematic",
            (SymmetrisedSystematic, _) => "symmetrised-systematic-strict",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = SmcError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['+', '_', ' '], "-");
        let scheme = match key.as_str() {
            "multinomial" => Self::MULTINOMIAL,
            "residual" => Self::RESIDUAL,
            "killing" => Self::KILLING,
            "stratified" => Self::STRATIFIED,
            "stratified-partition" => Self::STRATIFIED_PARTITION,
            "systematic" => Self::SYSTEMATIC,
            "systematic-partition" => Self::SYSTEMATIC_PARTITION,
            "ssp" => Self::SSP,
            "ssp-partition" => Self::SSP_PARTITION,
            "symmetrised-systematic" | "symmetrized-systematic" | "symmetrised" => {
                Self::SYMMETRISED
            }
            "symmetrised-systematic-strict" | "symmetrized-systematic-strict" => SchemeId {
                fallback: false,
                ..Self::SYMMETRISED
            },
            _ => {
                return Err(SmcError::InvalidConfig(format!("unknown scheme '{s}'")));
            }
        };
        Ok(scheme)
    }
}

impl Serialize for SchemeId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SchemeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Smallest `j ∈ 1..=N` with `t ≤ N F(j)`, returned zero-based (`j - 1`).
#[inline]
fn inverse_scaled(wv: &WeightVector, t: f64) -> usize {
    let n = wv.len();
    let (mut lo, mut hi) = (1usize, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if t <= wv.scaled_cdf(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo - 1
}

/// Inverse-CDF lookup for increasing scaled targets `i + u_i`.
#[inline]
fn lookup_increasing(wv: &WeightVector, offsets: impl Iterator<Item = f64>, out: &mut Vec<usize>) {
    let n = wv.len();
    let mut j = 1usize;
    out.clear();
    for (i, u) in offsets.enumerate() {
        let t = i as f64 + u;
        while j < n && t > wv.scaled_cdf(j) {
            j += 1;
        }
        out.push(j - 1);
    }
}

/// Uniform on the open interval (0, 1).
#[inline]
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws ancestor vectors for a fixed scheme, reusing scratch buffers.
#[derive(Debug, Clone)]
pub struct Resampler {
    scheme: SchemeId,
    perm: Vec<usize>,
    counts: Vec<usize>,
    scratch: Vec<f64>,
}

impl Resampler {
    pub fn new(scheme: SchemeId) -> Self {
        Resampler {
            scheme,
            perm: Vec::new(),
            counts: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    /// Draw an ancestor vector into `out` (length `N`, zero-based indices).
    pub fn resample_into<R: Rng + ?Sized>(
        &mut self,
        wv: &WeightVector,
        rng: &mut R,
        out: &mut Vec<usize>,
    ) -> Result<()> {
        let n = wv.len();
        out.clear();
        match self.scheme.kind {
            SchemeKind::Multinomial => {
                for _ in 0..n {
                    let u = open_uniform(rng);
                    out.push(inverse_scaled(wv, n as f64 * u));
                }
            }
            SchemeKind::Residual => sample_residual(wv, rng, out, &mut self.counts, &mut self.scratch),
            SchemeKind::Killing => {
                let g = wv.unnormalised();
                let gstar = g.iter().cloned().fold(0.0, f64::max);
                for (i, &gi) in g.iter().enumerate() {
                    let u: f64 = rng.random();
                    if u * gstar < gi {
                        out.push(i);
                    } else {
                        let v = open_uniform(rng);
                        out.push(inverse_scaled(wv, n as f64 * v));
                    }
                }
            }
            SchemeKind::Stratified | SchemeKind::Systematic => {
                let systematic = self.scheme.kind == SchemeKind::Systematic;
                let shared = if systematic { open_uniform(rng) } else { 0.0 };
                let draw = |rng: &mut R| if systematic { shared } else { open_uniform(rng) };
                out.resize(n, 0);
                if self.scheme.order == Order::Natural {
                    let mut j = 1usize;
                    for (i, o) in out.iter_mut().enumerate() {
                        let t = i as f64 + draw(rng);
                        while j < n && t > wv.scaled_cdf(j) {
                            j += 1;
                        }
                        *o = j - 1;
                    }
                } else {
                    // scaled CDF of the permuted weights, j + Σ_{m<j} ε_{perm[m]}
                    mean_partition_into(wv.unnormalised(), &mut self.perm);
                    let eps = wv.eps();
                    let perm = &self.perm;
                    let mut j = 1usize;
                    let mut s = 1.0 + eps[perm[0]];
                    for i in 0..n {
                        let t = i as f64 + draw(rng);
                        while j < n && t > s {
                            s += 1.0 + eps[perm[j]];
                            j += 1;
                        }
                        out[perm[i]] = perm[j - 1];
                    }
                }
            }
            SchemeKind::Ssp => {
                self.fill_order(wv);
                sample_ssp_into(wv, &self.perm, rng, out, &mut self.counts, &mut self.scratch);
            }
            SchemeKind::SymmetrisedSystematic => {
                let p = wv.overshoot();
                if p > 1.0 + 1e-12 {
                    if !self.scheme.fallback {
                        return Err(SmcError::SymmetrisedConditionViolated { p });
                    }
                    mean_partition_into(wv.unnormalised(), &mut self.perm);
                    sample_ssp(wv, &self.perm, rng, out);
                    return Ok(());
                }
                out.extend(0..n);
                if p <= 0.0 {
                    return Ok(());
                }
                let u: f64 = rng.random();
                if u >= p {
                    return Ok(());
                }
                let eps = wv.eps();
                let k = pick_proportional(eps.iter().map(|&e| (-e).max(0.0)), p, rng);
                let l = pick_proportional(eps.iter().map(|&e| e.max(0.0)), p, rng);
                let mut counts = vec![1usize; n];
                counts[k] -= 1;
                counts[l] += 1;
                out.clear();
                out.extend(repeat_indices(&counts));
            }
        }
        Ok(())
    }

    fn fill_order(&mut self, wv: &WeightVector) {
        if self.scheme.order == Order::MeanPartition {
            mean_partition_into(wv.unnormalised(), &mut self.perm);
        } else {
            self.perm.clear();
            self.perm.extend(0..wv.len());
        }
    }
}

fn pick_proportional<R: Rng + ?Sized>(
    masses: impl Iterator<Item = f64> + Clone,
    total: f64,
    rng: &mut R,
) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, m) in masses.enumerate() {
        if m > 0.0 {
            acc += m;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}

fn residual_counts(wv: &WeightVector) -> (Vec<usize>, Vec<f64>) {
    let n = wv.len();
    let mut counts = Vec::with_capacity(n);
    let mut rest = Vec::with_capacity(n);
    for &e in wv.eps() {
        let nw = (1.0 + e).max(0.0);
        let c = nw.floor();
        counts.push(c as usize);
        rest.push(nw - c);
    }
    // guard against rounding pushing the deterministic part above N
    while counts.iter().sum::<usize>() > n {
        let i = (0..n)
            .filter(|&i| counts[i] > 0)
            .min_by(|&a, &b| rest[a].total_cmp(&rest[b]))
            .expect("positive count");
        counts[i] -= 1;
        rest[i] += 1.0;
    }
    (counts, rest)
}

fn sample_residual<R: Rng + ?Sized>(
    wv: &WeightVector,
    rng: &mut R,
    out: &mut Vec<usize>,
    counts: &mut Vec<usize>,
    scratch: &mut Vec<f64>,
) {
    let n = wv.len();
    fill_floors(wv, counts, scratch);
    // guard against rounding pushing the deterministic part above N
    while counts.iter().sum::<usize>() > n {
        let i = (0..n)
            .filter(|&i| counts[i] > 0)
            .min_by(|&a, &b| scratch[a].total_cmp(&scratch[b]))
            .expect("positive count");
        counts[i] -= 1;
        scratch[i] += 1.0;
    }
    out.clear();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            out.push(i);
        }
    }
    let remaining = n - out.len();
    if remaining == 0 {
        return;
    }
    let mut acc = 0.0;
    for r in scratch.iter_mut() {
        acc += *r;
        *r = acc;
    }
    for _ in 0..remaining {
        let t = open_uniform(rng) * acc;
        let idx = scratch.partition_point(|&c| c < t).min(n - 1);
        out.push(idx);
    }
}

/// Integer parts and fractions of `N w_i`.
fn fill_floors(wv: &WeightVector, counts: &mut Vec<usize>, frac: &mut Vec<f64>) {
    counts.clear();
    frac.clear();
    for &e in wv.eps() {
        let nw = (1.0 + e).max(0.0);
        let c = nw.floor();
        counts.push(c as usize);
        frac.push(nw - c);
    }
}

/// State of the SSP pairing sweep over `order`.
#[derive(Debug, Clone)]
struct SspSweep {
    counts: Vec<usize>,
    frac: Vec<f64>,
    i: usize,
    j: usize,
    step: usize,
}

impl SspSweep {
    fn new(wv: &WeightVector, order: &[usize]) -> Self {
        let n = wv.len();
        let mut counts = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for &e in wv.eps() {
            let nw = (1.0 + e).max(0.0);
            let c = nw.floor();
            counts.push(c as usize);
            frac.push(nw - c);
        }
        let (i, j) = if n >= 2 { (order[0], order[1]) } else { (order[0], order[0]) };
        SspSweep {
            counts,
            frac,
            i,
            j,
            step: 0,
        }
    }

    fn done(&self) -> bool {
        self.step + 1 >= self.counts.len()
    }

    /// Probability of interchanging `(i, j)` before the merge.
    fn swap_probability(&self) -> f64 {
        let (pi, pj) = (self.frac[self.i], self.frac[self.j]);
        let di = pj.min(1.0 - pi);
        let dj = pi.min(1.0 - pj);
        if di > 0.0 {
            di / (di + dj)
        } else {
            0.0
        }
    }

    fn advance(&mut self, swap: bool, order: &[usize]) {
        let n = self.counts.len();
        if swap {
            std::mem::swap(&mut self.i, &mut self.j);
        }
        let (i, j) = (self.i, self.j);
        let di = self.frac[j].min(1.0 - self.frac[i]);
        let next = order[(self.step + 2).min(n - 1)];
        if self.frac[i] + self.frac[j] < 1.0 - SSP_TOL {
            self.frac[i] += di;
            self.frac[j] = 0.0;
            self.j = next;
        } else {
            self.counts[i] += 1;
            self.frac[j] = (self.frac[j] - di).max(0.0);
            self.frac[i] = 0.0;
            self.i = next;
        }
        self.step += 1;
    }

    fn finish(mut self) -> Vec<usize> {
        let n = self.counts.len();
        let total: usize = self.counts.iter().sum();
        if total + 1 == n {
            // one unit of mass lost to rounding; give it to the open fraction
            let k = if self.frac[self.i] >= self.frac[self.j] { self.i } else { self.j };
            self.counts[k] += 1;
        }
        debug_assert_eq!(self.counts.iter().sum::<usize>(), n);
        repeat_indices(&self.counts)
    }
}

fn sample_ssp<R: Rng + ?Sized>(wv: &WeightVector, order: &[usize], rng: &mut R, out: &mut Vec<usize>) {
    sample_ssp_into(wv, order, rng, out, &mut Vec::new(), &mut Vec::new());
}

/// Allocation-free SSP draw, step for step the same sweep as `SspSweep`.
fn sample_ssp_into<R: Rng + ?Sized>(
    wv: &WeightVector,
    order: &[usize],
    rng: &mut R,
    out: &mut Vec<usize>,
    counts: &mut Vec<usize>,
    frac: &mut Vec<f64>,
) {
    let n = wv.len();
    fill_floors(wv, counts, frac);
    let (mut i, mut j) = if n >= 2 { (order[0], order[1]) } else { (order[0], order[0]) };
    for step in 0..n.saturating_sub(1) {
        let (pi, pj) = (frac[i], frac[j]);
        let di = pj.min(1.0 - pi);
        let dj = pi.min(1.0 - pj);
        let p = if di > 0.0 { di / (di + dj) } else { 0.0 };
        let u: f64 = rng.random();
        if u < p {
            std::mem::swap(&mut i, &mut j);
        }
        let di = frac[j].min(1.0 - frac[i]);
        let next = order[(step + 2).min(n - 1)];
        if frac[i] + frac[j] < 1.0 - SSP_TOL {
            frac[i] += di;
            frac[j] = 0.0;
            j = next;
        } else {
            counts[i] += 1;
            frac[j] = (frac[j] - di).max(0.0);
            frac[i] = 0.0;
            i = next;
        }
    }
    let total: usize = counts.iter().sum();
    if total + 1 == n {
        let k = if frac[i] >= frac[j] { i } else { j };
        counts[k] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), n);
    out.clear();
    for (k, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            out.push(k);
        }
    }
}

/// Draw one ancestor vector.
pub fn resample<R: Rng + ?Sized>(scheme: SchemeId, g: &[f64], rng: &mut R) -> Result<AncestorVector> {
    let wv = WeightVector::normalize(g)?;
    let mut out = Vec::with_capacity(g.len());
    Resampler::new(scheme).resample_into(&wv, rng, &mut out)?;
    Ok(AncestorVector::from_vec_unchecked(out))
}

/// Exact law of a resampling scheme: outcome → probability.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResamplingDistribution {
    n: usize,
    outcomes: BTreeMap<AncestorVector, f64>,
}

impl ResamplingDistribution {
    fn add(&mut self, a: Vec<usize>, p: f64) {
        if p > 0.0 {
            *self
                .outcomes
                .entry(AncestorVector::from_vec_unchecked(a))
                .or_insert(0.0) += p;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn probability(&self, a: &AncestorVector) -> f64 {
        self.outcomes.get(a).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AncestorVector, f64)> {
        self.outcomes.iter().map(|(a, &p)| (a, p))
    }

    pub fn total_mass(&self) -> f64 {
        self.outcomes.values().sum()
    }

    /// `E[#{j : A_j = i}]` for each `i`.
    pub fn expected_offspring(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        for (a, p) in self.iter() {
            for &x in a.as_slice() {
                e[x] += p;
            }
        }
        e
    }

    /// Probability of outcomes other than `0..N`.
    pub fn off_identity_mass(&self) -> f64 {
        self.iter().filter(|(a, _)| !a.is_identity()).map(|(_, p)| p).sum()
    }

    /// Probability of outcomes that are not permutations of `0..N`.
    pub fn off_permutation_mass(&self) -> f64 {
        self.iter().filter(|(a, _)| !a.is_permutation()).map(|(_, p)| p).sum()
    }
}

fn enumerate_product(
    marginals: &[Vec<(usize, f64)>],
    prefix: &[usize],
    dist: &mut ResamplingDistribution,
    map: impl Fn(&[usize]) -> Vec<usize>,
) -> Result<()> {
    let size = marginals
        .iter()
        .try_fold(1usize, |acc, m| acc.checked_mul(m.len().max(1)));
    match size {
        Some(s) if s <= MAX_ENUMERATED => {}
        _ => {
            return Err(SmcError::TooLargeForEnumeration {
                reason: format!("outcome space exceeds {MAX_ENUMERATED}"),
            })
        }
    }
    let k = marginals.len();
    if marginals.iter().any(|m| m.is_empty()) {
        return Ok(());
    }
    let mut idx = vec![0usize; k];
    let mut a: Vec<usize> = prefix.to_vec();
    a.resize(prefix.len() + k, 0);
    loop {
        let mut p = 1.0;
        for (pos, m) in marginals.iter().enumerate() {
            let (v, q) = m[idx[pos]];
            a[prefix.len() + pos] = v;
            p *= q;
        }
        dist.add(map(&a), p);
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < marginals[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn multinomial_marginal(wv: &WeightVector) -> Vec<(usize, f64)> {
    wv.normalised()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| (j, w))
        .collect()
}

fn stratified_marginals(wv: &WeightVector) -> Vec<Vec<(usize, f64)>> {
    let n = wv.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = (i as f64, (i + 1) as f64);
            (1..=n)
                .filter_map(|j| {
                    let len = wv.scaled_cdf(j).min(hi) - wv.scaled_cdf(j - 1).max(lo);
                    (len > 0.0).then_some((j - 1, len))
                })
                .collect()
        })
        .collect()
}

fn systematic_distribution(wv: &WeightVector, map: impl Fn(&[usize]) -> Vec<usize>) -> ResamplingDistribution {
    let n = wv.len();
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for j in 1..n {
        let s = wv.scaled_cdf(j);
        let f = s - s.floor();
        if f > 0.0 && f < 1.0 {
            cuts.push(f);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut dist = ResamplingDistribution {
        n,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(n);
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let u = 0.5 * (w[0] + w[1]);
        lookup_increasing(wv, std::iter::repeat_n(u, n), &mut out);
        dist.add(map(&out), len);
    }
    dist
}

fn ssp_distribution(wv: &WeightVector, order: &[usize]) -> ResamplingDistribution {
    let mut dist = ResamplingDistribution {
        n: wv.len(),
        ..Default::default()
    };
    let mut stack = vec![(SspSweep::new(wv, order), 1.0f64)];
    while let Some((sweep, p)) = stack.pop() {
        if sweep.done() {
            dist.add(sweep.finish(), p);
            continue;
        }
        let q = sweep.swap_probability();
        if q > 0.0 {
            let mut s = sweep.clone();
            s.advance(true, order);
            stack.push((s, p * q));
        }
        if q < 1.0 {
            let mut s = sweep;
            s.advance(false, order);
            stack.push((s, p * (1.0 - q)));
        }
    }
    dist
}

/// Order-ϖ remapping: local outcome `b` becomes `a[ϖ(i)] = ϖ(b[i])`.
fn unpermute(perm: &[usize]) -> impl Fn(&[usize]) -> Vec<usize> + '_ {
    move |b: &[usize]| {
        let mut a = vec![0usize; b.len()];
        for (i, &x) in b.iter().enumerate() {
            a[perm[i]] = perm[x];
        }
        a
    }
}

/// Processing order the samplers use for `scheme` on these weights.
pub fn processing_order(scheme: SchemeId, g: &[f64]) -> Permutation {
    match scheme.order {
        Order::MeanPartition => crate::weights::mean_partition(g),
        Order::Natural => Permutation::identity(g.len()),
    }
}

/// Exact law of [`resample`] for `N ≤ 12`.
pub fn exact_distribution(scheme: SchemeId, g: &[f64]) -> Result<ResamplingDistribution> {
    let wv = WeightVector::normalize(g)?;
    let order = processing_order(scheme, wv.unnormalised());
    exact_distribution_with_order(scheme, &wv, &order)
}

/// Exact law with an explicitly supplied processing order, which is used
/// for the ordered stratified, systematic and SSP variants and ignored
/// otherwise.
pub fn exact_distribution_with_order(
    scheme: SchemeId,
    wv: &WeightVector,
    order: &Permutation,
) -> Result<ResamplingDistribution> {
    let n = wv.len();
    if n > MAX_EXACT_N {
        return Err(SmcError::TooLargeForEnumeration {
            reason: format!("N = {n} exceeds {MAX_EXACT_N}"),
        });
    }
    if order.len() != n {
        return Err(SmcError::LengthMismatch {
            expected: n,
            got: order.len(),
        });
    }
    let identity_map = |a: &[usize]| a.to_vec();
    let mut dist = ResamplingDistribution {
        n,
        ..Default::default()
    };
    let perm = order.as_slice();
    let ordered = scheme.order == Order::MeanPartition;
    match scheme.kind {
        SchemeKind::Multinomial => {
            let m = multinomial_marginal(wv);
            enumerate_product(&vec![m; n], &[], &mut dist, identity_map)?;
        }
        SchemeKind::Residual => {
            let (counts, rest) = residual_counts(wv);
            let prefix = repeat_indices(&counts);
            let remaining = n - prefix.len();
            if remaining == 0 {
                dist.add(prefix, 1.0);
            } else {
                let total: f64 = rest.iter().sum();
                let m: Vec<(usize, f64)> = rest
                    .iter()
                    .enumerate()
                    .filter(|(_, &r)| r > 0.0)
                    .map(|(j, &r)| (j, r / total))
                    .collect();
                enumerate_product(&vec![m; remaining], &prefix, &mut dist, identity_map)?;
            }
        }
        SchemeKind::Killing => {
            let g = wv.unnormalised();
            let gstar = g.iter().cloned().fold(0.0, f64::max);
            let w = wv.normalised();
            let marginals: Vec<Vec<(usize, f64)>> = (0..n)
                .map(|i| {
                    let keep = g[i] / gstar;
                    (0..n)
                        .filter_map(|j| {
                            let p = (1.0 - keep) * w[j] + if i == j { keep } else { 0.0 };
                            (p > 0.0).then_some((j, p))
                        })
                        .collect()
                })
                .collect();
            enumerate_product(&marginals, &[], &mut dist, identity_map)?;
        }
        SchemeKind::Stratified => {
            if ordered {
                let pw = wv.permuted(order)?;
                enumerate_product(&stratified_marginals(&pw), &[], &mut dist, unpermute(perm))?;
            } else {
                enumerate_product(&stratified_marginals(wv), &[], &mut dist, identity_map)?;
            }
        }
        SchemeKind::Systematic => {
            dist = if ordered {
                let pw = wv.permuted(order)?;
                systematic_distribution(&pw, unpermute(perm))
            } else {
                systematic_distribution(wv, identity_map)
            };
        }
        SchemeKind::Ssp => {
            let ident = Permutation::identity(n);
            let o = if ordered { perm } else { ident.as_slice() };
            if n > 1 && (1usize << (n - 1)) > MAX_ENUMERATED {
                return Err(SmcError::TooLargeForEnumeration {
                    reason: "too many SSP branches".into(),
                });
            }
            dist = ssp_distribution(wv, o);
        }
        SchemeKind::SymmetrisedSystematic => {
            let p = wv.overshoot();
            if p > 1.0 + 1e-12 {
                if !scheme.fallback {
                    return Err(SmcError::SymmetrisedConditionViolated { p });
                }
                let mp = crate::weights::mean_partition(wv.unnormalised());
                return Ok(ssp_distribution(wv, mp.as_slice()));
            }
            dist.add((0..n).collect(), 1.0 - p);
            if p > 0.0 {
                let eps = wv.eps();
                for k in 0..n {
                    for l in 0..n {
                        let q = (-eps[k]).max(0.0) * eps[l].max(0.0) / p;
                        if q > 0.0 {
                            let mut counts = vec![1usize; n];
                            counts[k] -= 1;
                            counts[l] += 1;
                            dist.add(repeat_indices(&counts), q);
                        }
                    }
                }
            }
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64Mcg;

    fn av(a: &[usize]) -> AncestorVector {
        AncestorVector::new(a.to_vec()).unwrap()
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeId::all() {
            assert_eq!(s.name().parse::<SchemeId>().unwrap(), s);
        }
        assert_eq!(
            "systematic+partition".parse::<SchemeId>().unwrap(),
            SchemeId::SYSTEMATIC_PARTITION
        );
        assert!("bogus".parse::<SchemeId>().is_err());
        assert!(SchemeId::new(SchemeKind::Killing, Order::MeanPartition).is_err());
    }

    #[test]
    fn uniform_weights_give_identity() {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        for s in SchemeId::all() {
            if !s.has_intensity_limit() {
                continue;
            }
            for _ in 0..50 {
                let a = resample(s, &[0.7; 7], &mut rng).unwrap();
                assert!(a.is_identity(), "{s}: {a}");
            }
            let d = exact_distribution(s, &[0.3; 5]).unwrap();
            assert_eq!(d.len(), 1, "{s}");
            assert_eq!(d.probability(&AncestorVector::identity(5)), 1.0);
        }
    }

    #[test]
    fn degenerate_multinomial() {
        let mut rng = Pcg64Mcg::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(resample(SchemeId::MULTINOMIAL, &[1.0, 0.0, 0.0], &mut rng).unwrap(), av(&[0, 0, 0]));
        }
    }

    #[test]
    fn two_particle_laws() {
        // every single-death scheme has law {(0,1): 0.8, (1,1): 0.2} here
        for s in [
            SchemeId::KILLING,
            SchemeId::SYSTEMATIC,
            SchemeId::STRATIFIED,
            SchemeId::SSP_PARTITION,
            SchemeId::SYSTEMATIC_PARTITION,
            SchemeId::SYMMETRISED,
        ] {
            let d = exact_distribution(s, &[0.4, 0.6]).unwrap();
            assert!((d.probability(&av(&[0, 1])) - 0.8).abs() < 1e-12, "{s}");
            assert!((d.probability(&av(&[1, 1])) - 0.2).abs() < 1e-12, "{s}");
            assert_eq!(d.len(), 2, "{s}");
        }
    }

    #[test]
    fn multinomial_permutation_mass() {
        let d = exact_distribution(SchemeId::MULTINOMIAL, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.len(), 27);
        let perm_mass: f64 = d.iter().filter(|(a, _)| a.is_permutation()).map(|(_, p)| p).sum();
        assert!((perm_mass - 6.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn symmetrised_strict_rejects() {
        let mut rng = Pcg64Mcg::seed_from_u64(0);
        let strict: SchemeId = "symmetrised-systematic-strict".parse().unwrap();
        let g = [0.1, 0.1, 5.0];
        assert!(matches!(
            resample(strict, &g, &mut rng),
            Err(SmcError::SymmetrisedConditionViolated { .. })
        ));
        assert!(resample(SchemeId::SYMMETRISED, &g, &mut rng).is_ok());
    }

    #[test]
    fn too_large_for_enumeration() {
        let g = vec![1.0; 13];
        assert!(matches!(
            exact_distribution(SchemeId::SYSTEMATIC, &g),
            Err(SmcError::TooLargeForEnumeration { .. })
        ));
        let g: Vec<f64> = (1..=12).map(|x| x as f64).collect();
        assert!(matches!(
            exact_distribution(SchemeId::MULTINOMIAL, &g),
            Err(SmcError::TooLargeForEnumeration { .. })
        ));
    }

    #[test]
    fn residual_deterministic_part() {
        let d = exact_distribution(SchemeId::RESIDUAL, &[2.0, 1.0, 1.0]).unwrap();
        // N w = (1.5, 0.75, 0.75): one copy of 0 fixed, two slots from residuals (0.5, .75, .75)/2
        for (a, _) in d.iter() {
            assert_eq!(a.as_slice()[0], 0);
        }
        let e = d.expected_offspring();
        assert!((e[0] - 1.5).abs() < 1e-12 && (e[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = [0.3, 1.2, 0.7, 0.9, 2.0];
        for s in SchemeId::all() {
            let a = resample(s, &g, &mut Pcg64Mcg::seed_from_u64(42)).unwrap();
            let b = resample(s, &g, &mut Pcg64Mcg::seed_from_u64(42)).unwrap();
            assert_eq!(a, b);
        }
    }
}
