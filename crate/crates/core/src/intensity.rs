//! Limiting resampling intensities.
//!
//! For potentials `v` and weights `g = exp(-Δ v)`, the intensity of an
//! event `a ≠ 0..N` is the limit of `r(a | g) / Δ` as `Δ → 0`. The closed
//! forms below cover killing, ordered stratified, ordered systematic,
//! ordered SSP and symmetrised systematic resampling. Ordered schemes take
//! a mean partition of `-v`: potentials at or above the mean first.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SmcError};
use crate::resampling::{exact_distribution_with_order, Order, SchemeId, SchemeKind};
use crate::weights::{mean_partition, AncestorVector, EventSignature, Permutation, WeightVector};

/// Potential values `v^{1:N}` at the current particle cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialValues {
    v: Vec<f64>,
    vbar: f64,
    vmin: f64,
}

impl PotentialValues {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(SmcError::EmptyInput);
        }
        for (i, &x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(SmcError::NonFiniteWeight { index: i, value: x });
            }
            if x < 0.0 {
                return Err(SmcError::InvalidConfig(format!(
                    "potential value {i} is negative ({x})"
                )));
            }
        }
        let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vbar = if vmin == vmax {
            vmin
        } else {
            (v.iter().sum::<f64>() / v.len() as f64).clamp(vmin, vmax)
        };
        Ok(PotentialValues { v, vbar, vmin })
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.vbar
    }

    pub fn min(&self) -> f64 {
        self.vmin
    }

    pub fn is_constant(&self) -> bool {
        self.v.iter().all(|&x| x == self.v[0])
    }

    /// Mean partition of `-v`, the order required by the ordered schemes.
    pub fn order(&self) -> Permutation {
        let neg: Vec<f64> = self.v.iter().map(|x| -x).collect();
        mean_partition(&neg)
    }

    fn check_order(&self, order: &Permutation) -> Result<()> {
        if order.len() != self.len() {
            return Err(SmcError::LengthMismatch {
                expected: self.len(),
                got: order.len(),
            });
        }
        let neg: Vec<f64> = self.v.iter().map(|x| -x).collect();
        if order.is_mean_partition_of(&neg) {
            Ok(())
        } else {
            Err(SmcError::InvalidOrder)
        }
    }

    /// `s_i = Σ_{j≤i} (v_{ϖ(j)} - v̄)` for `i = 0..=N`.
    fn partial_sums(&self, order: &Permutation) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len() + 1);
        s.push(0.0);
        let mut acc = 0.0;
        for &p in order.as_slice() {
            acc += self.v[p] - self.vbar;
            s.push(acc);
        }
        *s.last_mut().unwrap() = 0.0;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityEntry {
    pub signature: EventSignature,
    pub layout: AncestorVector,
    pub rate: f64,
}

/// Nonzero intensities of single events together with the overall rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityTable {
    pub scheme: SchemeId,
    pub n: usize,
    pub entries: Vec<IntensityEntry>,
    pub total: f64,
}

impl IntensityTable {
    fn new(scheme: SchemeId, n: usize) -> Self {
        IntensityTable {
            scheme,
            n,
            entries: Vec::new(),
            total: 0.0,
        }
    }

    fn push(&mut self, layout: Vec<usize>, rate: f64) {
        if rate > 0.0 {
            let layout = AncestorVector::from_vec_unchecked(layout);
            let signature = layout.signature().expect("single event layout");
            self.entries.push(IntensityEntry {
                signature,
                layout,
                rate,
            });
        }
    }

    fn finish(mut self) -> Self {
        self.total = self.entries.iter().map(|e| e.rate).sum();
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rate_of(&self, layout: &AncestorVector) -> f64 {
        self.entries
            .iter()
            .filter(|e| &e.layout == layout)
            .map(|e| e.rate)
            .sum()
    }

    /// Rates aggregated by signature.
    pub fn by_signature(&self) -> BTreeMap<EventSignature, f64> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.signature).or_insert(0.0) += e.rate;
        }
        m
    }

    /// Rates aggregated by full layout.
    pub fn by_layout(&self) -> BTreeMap<AncestorVector, f64> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.layout.clone()).or_insert(0.0) += e.rate;
        }
        m
    }

    /// Total rate at which each index is eliminated.
    pub fn elimination_rates(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for e in &self.entries {
            r[e.signature.eliminated] += e.rate;
        }
        r
    }

    /// Total rate at which each index is duplicated.
    pub fn duplication_rates(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for e in &self.entries {
            r[e.signature.duplicated] += e.rate;
        }
        r
    }

    /// Entry selected by `u ∈ [0, total)` in cumulative order.
    pub fn select(&self, u: f64) -> Option<&IntensityEntry> {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.rate;
            if u < acc {
                return Some(e);
            }
        }
        self.entries.last()
    }
}

fn require_closed_form(scheme: SchemeId) -> Result<()> {
    if !scheme.has_intensity_limit() {
        return Err(SmcError::NoIntensityLimit(scheme.to_string()));
    }
    if !scheme.has_closed_form_intensity() {
        return Err(SmcError::ClosedFormUnavailable(scheme.to_string()));
    }
    Ok(())
}

fn needs_order(scheme: SchemeId) -> bool {
    matches!(scheme.kind, SchemeKind::Stratified | SchemeKind::Systematic)
}

/// Event rates `(v_k - v̄)_+ (v̄ - v_ℓ)_+ / ι*`, shared by SSP and
/// symmetrised systematic resampling.
fn product_form(table: &mut IntensityTable, v: &PotentialValues) {
    let n = v.len();
    let vb = v.mean();
    let total: f64 = v.values().iter().map(|&x| (x - vb).max(0.0)).sum();
    if total <= 0.0 {
        return;
    }
    for k in 0..n {
        let over = v.values()[k] - vb;
        if over <= 0.0 {
            continue;
        }
        for l in 0..n {
            let under = vb - v.values()[l];
            if under > 0.0 {
                let mut counts = vec![1usize; n];
                counts[k] = 0;
                counts[l] = 2;
                table.push(crate::weights::repeat_indices(&counts), over * under / total);
            }
        }
    }
}

/// Closed-form intensity table. `order` must be a mean partition of `-v`
/// for the ordered stratified and systematic schemes and is ignored
/// otherwise.
pub fn intensity_table(scheme: SchemeId, v: &PotentialValues, order: &Permutation) -> Result<IntensityTable> {
    require_closed_form(scheme)?;
    if needs_order(scheme) {
        v.check_order(order)?;
    }
    let n = v.len();
    let mut table = IntensityTable::new(scheme, n);
    if v.is_constant() {
        return Ok(table);
    }
    let vals = v.values();
    match scheme.kind {
        SchemeKind::Killing => {
            for i in 0..n {
                let r = (vals[i] - v.min()) / n as f64;
                if r <= 0.0 {
                    continue;
                }
                for j in (0..n).filter(|&j| j != i) {
                    let mut a: Vec<usize> = (0..n).collect();
                    a[i] = j;
                    table.push(a, r);
                }
            }
        }
        SchemeKind::Stratified => {
            let s = v.partial_sums(order);
            let p = order.as_slice();
            for i in 1..n {
                let mut a: Vec<usize> = (0..n).collect();
                a[p[i - 1]] = p[i];
                table.push(a, s[i]);
            }
        }
        SchemeKind::Systematic => {
            let s = v.partial_sums(order);
            let p = order.as_slice();
            for k in 1..n {
                for l in (k + 1)..=n {
                    let rate = s[k].min(s[l - 1]) - s[k - 1].max(s[l]);
                    if rate > 0.0 {
                        let mut a: Vec<usize> = (0..n).collect();
                        for j in k..l {
                            a[p[j - 1]] = p[j];
                        }
                        table.push(a, rate);
                    }
                }
            }
        }
        SchemeKind::Ssp | SchemeKind::SymmetrisedSystematic => product_form(&mut table, v),
        SchemeKind::Multinomial | SchemeKind::Residual => unreachable!(),
    }
    Ok(table.finish())
}

/// Intensity table using the canonical order `mean_partition(-v)`.
pub fn intensity_table_default(scheme: SchemeId, v: &PotentialValues) -> Result<IntensityTable> {
    intensity_table(scheme, v, &v.order())
}

/// Overall rate `ι*` from its closed-form expression.
pub fn overall_rate(scheme: SchemeId, v: &PotentialValues, order: &Permutation) -> Result<f64> {
    require_closed_form(scheme)?;
    if needs_order(scheme) {
        v.check_order(order)?;
    }
    Ok(overall_rate_unchecked(scheme, v, order))
}

/// [`overall_rate`] without validating the scheme or the order.
pub(crate) fn overall_rate_unchecked(scheme: SchemeId, v: &PotentialValues, order: &Permutation) -> f64 {
    if v.is_constant() {
        return 0.0;
    }
    let n = v.len() as f64;
    let vb = v.mean();
    match scheme.kind {
        SchemeKind::Killing => (n - 1.0) * (vb - v.min()),
        SchemeKind::Stratified => order
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, &p)| (j + 1) as f64 * (vb - v.values()[p]))
            .sum::<f64>()
            .max(0.0),
        _ => v.values().iter().map(|&x| (vb - x).max(0.0)).sum(),
    }
}

/// `Σ_a ι(a) (#{j : a_j = i} - 1) - (v̄ - v_i)` for each `i`.
pub fn unbiased_residuals<'a>(
    events: impl IntoIterator<Item = (&'a AncestorVector, f64)>,
    v: &PotentialValues,
) -> Vec<f64> {
    let n = v.len();
    let mut lhs = vec![0.0; n];
    for (a, rate) in events {
        for (i, c) in a.offspring().into_iter().enumerate() {
            lhs[i] += rate * (c as f64 - 1.0);
        }
    }
    lhs.iter()
        .zip(v.values())
        .map(|(l, &vi)| l - (v.mean() - vi))
        .collect()
}

pub fn check_unbiased_identity(table: &IntensityTable, v: &PotentialValues) -> Vec<f64> {
    unbiased_residuals(table.entries.iter().map(|e| (&e.layout, e.rate)), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Larger {
    Killing,
    Stratified,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateOrdering {
    pub killing: f64,
    pub stratified: f64,
    pub systematic_ssp: f64,
    pub killing_ge_systematic: bool,
    pub stratified_ge_systematic: bool,
    pub larger: Larger,
}

/// Overall rates of killing, ordered stratified and ordered systematic
/// (equivalently SSP) resampling.
pub fn rate_ordering(v: &PotentialValues, order: &Permutation) -> Result<RateOrdering> {
    v.check_order(order)?;
    let killing = overall_rate_unchecked(SchemeId::KILLING, v, order);
    let stratified = overall_rate_unchecked(SchemeId::STRATIFIED_PARTITION, v, order);
    let systematic_ssp = overall_rate_unchecked(SchemeId::SYSTEMATIC_PARTITION, v, order);
    const TOL: f64 = 1e-12;
    let larger = if (killing - stratified).abs() <= TOL {
        Larger::Tie
    } else if killing > stratified {
        Larger::Killing
    } else {
        Larger::Stratified
    };
    Ok(RateOrdering {
        killing,
        stratified,
        systematic_ssp,
        killing_ge_systematic: killing >= systematic_ssp - TOL,
        stratified_ge_systematic: stratified >= systematic_ssp - TOL,
        larger,
    })
}

/// Finite-step quotient `(1/Δ) r(a | exp(-Δ v))` over all `a ≠ 0..N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericIntensity {
    pub scheme: SchemeId,
    pub delta: f64,
    pub n: usize,
    pub rates: BTreeMap<AncestorVector, f64>,
    /// `(1/Δ) P(a ≠ 0..N)`.
    pub total: f64,
    /// `P(a` is not a permutation of `0..N)`, unscaled.
    pub off_permutation_probability: f64,
    /// `P(a ≠ 0..N)`, unscaled.
    pub off_identity_probability: f64,
}

impl NumericIntensity {
    /// Largest absolute difference against a closed-form table over the
    /// union of both supports.
    pub fn max_abs_error(&self, table: &IntensityTable) -> f64 {
        let exact = table.by_layout();
        let mut err: f64 = 0.0;
        for (a, &r) in &self.rates {
            err = err.max((r - exact.get(a).copied().unwrap_or(0.0)).abs());
        }
        for (a, &r) in &exact {
            if !self.rates.contains_key(a) {
                err = err.max(r);
            }
        }
        err
    }

    /// Two-level Richardson extrapolation `2 r(Δ/2) - r(Δ)`.
    pub fn richardson(coarse: &NumericIntensity, fine: &NumericIntensity) -> NumericIntensity {
        let mut rates = BTreeMap::new();
        for a in coarse.rates.keys().chain(fine.rates.keys()) {
            let c = coarse.rates.get(a).copied().unwrap_or(0.0);
            let f = fine.rates.get(a).copied().unwrap_or(0.0);
            rates.insert(a.clone(), 2.0 * f - c);
        }
        NumericIntensity {
            scheme: fine.scheme,
            delta: 0.0,
            n: fine.n,
            total: 2.0 * fine.total - coarse.total,
            off_permutation_probability: 0.0,
            off_identity_probability: 0.0,
            rates,
        }
    }

    pub fn residuals(&self, v: &PotentialValues) -> Vec<f64> {
        unbiased_residuals(self.rates.iter().map(|(a, &r)| (a, r)), v)
    }
}

/// Numeric intensity using `mean_partition(-v)` for the ordered schemes.
pub fn numeric_intensity(scheme: SchemeId, v: &PotentialValues, delta: f64) -> Result<NumericIntensity> {
    numeric_intensity_with_order(scheme, v, delta, &v.order())
}

pub fn numeric_intensity_with_order(
    scheme: SchemeId,
    v: &PotentialValues,
    delta: f64,
    order: &Permutation,
) -> Result<NumericIntensity> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SmcError::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    let g: Vec<f64> = v.values().iter().map(|&x| (-delta * x).exp()).collect();
    let wv = WeightVector::normalize(&g)?;
    let order = if scheme.order == Order::MeanPartition {
        order.clone()
    } else {
        Permutation::identity(v.len())
    };
    let dist = exact_distribution_with_order(scheme, &wv, &order)?;
    let mut rates = BTreeMap::new();
    let mut off_identity = 0.0;
    for (a, p) in dist.iter() {
        if !a.is_identity() {
            rates.insert(a.clone(), p / delta);
            off_identity += p;
        }
    }
    Ok(NumericIntensity {
        scheme,
        delta,
        n: v.len(),
        total: off_identity / delta,
        off_permutation_probability: dist.off_permutation_mass(),
        off_identity_probability: off_identity,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> PotentialValues {
        PotentialValues::new(v.to_vec()).unwrap()
    }

    fn perm(p: &[usize]) -> Permutation {
        Permutation::new(p.to_vec()).unwrap()
    }

    #[test]
    fn killing_example() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let t = intensity_table(SchemeId::KILLING, &v, &v.order()).unwrap();
        assert_eq!(t.entries.len(), 4);
        let sig = t.by_signature();
        for (j, r) in [(0, 1.0 / 3.0), (2, 1.0 / 3.0)] {
            let got = sig[&EventSignature { eliminated: 1, duplicated: j }];
            assert!((got - r).abs() < 1e-12);
        }
        for j in [0, 1] {
            let got = sig[&EventSignature { eliminated: 2, duplicated: j }];
            assert!((got - 2.0 / 3.0).abs() < 1e-12);
        }
        assert!((t.total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn systematic_example() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let t = intensity_table(SchemeId::SYSTEMATIC_PARTITION, &v, &perm(&[1, 2, 0])).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.entries[0].signature, EventSignature { eliminated: 2, duplicated: 0 });
        assert!((t.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssp_example() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let t = intensity_table(SchemeId::SSP_PARTITION, &v, &v.order()).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.entries[0].signature, EventSignature { eliminated: 2, duplicated: 0 });
        assert!((t.entries[0].rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_depends_on_order() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let r1 = overall_rate(SchemeId::STRATIFIED_PARTITION, &v, &perm(&[2, 1, 0])).unwrap();
        let r2 = overall_rate(SchemeId::STRATIFIED_PARTITION, &v, &perm(&[1, 2, 0])).unwrap();
        assert!((r1 - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        let rs = overall_rate(SchemeId::SYSTEMATIC_PARTITION, &v, &perm(&[2, 1, 0])).unwrap();
        assert!((rs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_potentials_give_empty_tables() {
        let v = pv(&[0.1, 0.1, 0.1]);
        for s in SchemeId::stable() {
            let t = intensity_table_default(s, &v).unwrap();
            assert!(t.is_empty());
            assert_eq!(t.total, 0.0);
            assert!(check_unbiased_identity(&t, &v).iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn error_paths() {
        let v = pv(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            intensity_table(SchemeId::MULTINOMIAL, &v, &v.order()),
            Err(SmcError::NoIntensityLimit(_))
        ));
        assert!(matches!(
            intensity_table(SchemeId::SYSTEMATIC, &v, &v.order()),
            Err(SmcError::ClosedFormUnavailable(_))
        ));
        assert!(matches!(
            intensity_table(SchemeId::STRATIFIED_PARTITION, &v, &perm(&[0, 1, 2])),
            Err(SmcError::InvalidOrder)
        ));
    }

    #[test]
    fn unbiased_identity_examples() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let t = intensity_table_default(SchemeId::KILLING, &v).unwrap();
        let r = check_unbiased_identity(&t, &v);
        assert!(r.iter().all(|x| x.abs() < 1e-12), "{r:?}");
        let t = intensity_table_default(SchemeId::SSP_PARTITION, &v).unwrap();
        assert!(check_unbiased_identity(&t, &v).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn ordering_witnesses() {
        let v = pv(&[3.0, 2.5, 1.0]);
        let o = rate_ordering(&v, &perm(&[0, 1, 2])).unwrap();
        assert!((o.killing - 7.0 / 3.0).abs() < 1e-12);
        assert!((o.stratified - 2.0).abs() < 1e-12);
        assert!((o.systematic_ssp - 7.0 / 6.0).abs() < 1e-12);
        assert_eq!(o.larger, Larger::Killing);
        let v = pv(&[3.0, 1.5, 1.0]);
        let o = rate_ordering(&v, &perm(&[0, 1, 2])).unwrap();
        assert!((o.killing - 5.0 / 3.0).abs() < 1e-12);
        assert!((o.stratified - 2.0).abs() < 1e-12);
        assert_eq!(o.larger, Larger::Stratified);
    }

    #[test]
    fn numeric_killing_close() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let t = intensity_table_default(SchemeId::KILLING, &v).unwrap();
        let num = numeric_intensity(SchemeId::KILLING, &v, 1e-4).unwrap();
        assert!(num.max_abs_error(&t) < 5e-4);
    }

    #[test]
    fn numeric_constant_is_zero() {
        let v = pv(&[0.7; 4]);
        for s in SchemeId::stable() {
            let num = numeric_intensity(s, &v, 0.3).unwrap();
            assert!(num.rates.is_empty());
            assert_eq!(num.total, 0.0);
        }
    }
}
