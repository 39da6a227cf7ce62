//! Weight arithmetic, mean partitions and ancestor-vector algebra.
//!
//! Indices are zero-based throughout the library.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};

/// Normalised weights together with the derived quantities used by the
/// resampling schemes.
///
/// For `N` weights `w`, `eps[i] = N w[i] - 1`, `cumdist[i] = w[0] + .. + w[i-1]`
/// (so `cumdist[0] = 0`, `cumdist[N] = 1`) and `csum[i] = -(eps[0] + .. + eps[i-1])`.
/// The scaled distribution function `N F(i)` equals `i - csum[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector {
    g: Vec<f64>,
    w: Vec<f64>,
    eps: Vec<f64>,
    cumdist: Vec<f64>,
    csum: Vec<f64>,
}

impl WeightVector {
    /// Normalise nonnegative unnormalised weights.
    pub fn normalize(g: &[f64]) -> Result<Self> {
        let mut wv = WeightVector::default();
        wv.refill(g)?;
        Ok(wv)
    }

    /// Build from log-weights, shifting by the maximum before exponentiating.
    /// Returns the weights and `log(mean(exp(logw)))`.
    pub fn from_log_weights(logw: &[f64]) -> Result<(Self, f64)> {
        let mut wv = WeightVector::default();
        let lm = wv.refill_from_log(logw)?;
        Ok((wv, lm))
    }

    /// In-place variant of [`WeightVector::from_log_weights`] reusing buffers.
    pub fn refill_from_log(&mut self, logw: &[f64]) -> Result<f64> {
        if logw.is_empty() {
            return Err(SmcError::EmptyInput);
        }
        let mut max = f64::NEG_INFINITY;
        for (i, &l) in logw.iter().enumerate() {
            if l.is_nan() || l == f64::INFINITY {
                return Err(SmcError::NonFiniteWeight { index: i, value: l });
            }
            if l > max {
                max = l;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(SmcError::AllZeroWeights);
        }
        let mut shifted = std::mem::take(&mut self.g);
        shifted.clear();
        shifted.extend(logw.iter().map(|&l| (l - max).exp()));
        let res = self.refill_owned(shifted);
        res?;
        let mean = self.total() / self.len() as f64;
        Ok(max + mean.ln())
    }

    /// In-place variant of [`WeightVector::normalize`] reusing buffers.
    pub fn refill(&mut self, g: &[f64]) -> Result<()> {
        let mut buf = std::mem::take(&mut self.g);
        buf.clear();
        buf.extend_from_slice(g);
        self.refill_owned(buf)
    }

    fn refill_owned(&mut self, g: Vec<f64>) -> Result<()> {
        let n = g.len();
        if n == 0 {
            self.g = g;
            return Err(SmcError::EmptyInput);
        }
        let mut total = 0.0;
        let mut valid = true;
        let mut uniform = true;
        let g0 = g[0];
        for &x in &g {
            valid &= x >= 0.0 && x < f64::INFINITY;
            uniform &= x == g0;
            total += x;
        }
        if !valid {
            let (i, x) = g
                .iter()
                .copied()
                .enumerate()
                .find(|&(_, x)| !(x >= 0.0 && x < f64::INFINITY))
                .expect("invalid entry");
            self.g = g;
            return Err(if x.is_finite() {
                SmcError::NegativeWeight { index: i, value: x }
            } else {
                SmcError::NonFiniteWeight { index: i, value: x }
            });
        }
        if total <= 0.0 {
            self.g = g;
            return Err(SmcError::AllZeroWeights);
        }
        let nf = n as f64;
        self.w.resize(n, 0.0);
        self.eps.resize(n, 0.0);
        self.cumdist.resize(n + 1, 0.0);
        self.csum.resize(n + 1, 0.0);
        if uniform {
            // exact uniform representation so that "no resampling" outcomes are exact
            let u = 1.0 / nf;
            for i in 0..n {
                self.w[i] = u;
                self.eps[i] = 0.0;
                self.cumdist[i] = i as f64 * u;
                self.csum[i] = 0.0;
            }
        } else {
            let inv = 1.0 / total;
            let (mut f, mut c) = (0.0, 0.0);
            for i in 0..n {
                let x = g[i];
                let w = x * inv;
                let e = (nf * x - total) * inv;
                self.cumdist[i] = f;
                self.csum[i] = c;
                self.w[i] = w;
                self.eps[i] = e;
                f += w;
                c -= e;
            }
        }
        self.cumdist[n] = 1.0;
        self.csum[n] = 0.0;
        self.g = g;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Unnormalised weights as supplied (or shifted, for log input).
    pub fn unnormalised(&self) -> &[f64] {
        &self.g
    }

    pub fn total(&self) -> f64 {
        self.g.iter().sum()
    }

    pub fn normalised(&self) -> &[f64] {
        &self.w
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn cumdist(&self) -> &[f64] {
        &self.cumdist
    }

    pub fn csum(&self) -> &[f64] {
        &self.csum
    }

    /// `N F(i) = i - c_i`, for `i = 0..=N`.
    #[inline]
    pub fn scaled_cdf(&self, i: usize) -> f64 {
        i as f64 - self.csum[i]
    }

    /// True if the weights are exactly uniform.
    pub fn is_uniform(&self) -> bool {
        self.eps.iter().all(|&e| e == 0.0)
    }

    /// `Σ (N w_i - 1)_+`.
    pub fn overshoot(&self) -> f64 {
        self.eps.iter().map(|&e| e.max(0.0)).sum()
    }

    /// Checks the nearly-constant, mean-partitioned condition: `Σ|ε_i| < 2`
    /// and nonpositive `ε` precede positive ones. Returns the block split `m`.
    pub fn nearly_constant_partitioned(&self) -> Option<usize> {
        let abs: f64 = self.eps.iter().map(|e| e.abs()).sum();
        if abs >= 2.0 {
            return None;
        }
        let m = self.eps.iter().take_while(|&&e| e <= 0.0).count();
        if m == 0 || self.eps[m..].iter().any(|&e| e <= 0.0) {
            return None;
        }
        Some(m)
    }

    /// Same weights re-indexed by `perm`: entry `i` is weight `perm[i]`.
    pub fn permuted(&self, perm: &Permutation) -> Result<WeightVector> {
        if perm.len() != self.len() {
            return Err(SmcError::LengthMismatch {
                expected: self.len(),
                got: perm.len(),
            });
        }
        let g: Vec<f64> = perm.as_slice().iter().map(|&p| self.g[p]).collect();
        WeightVector::normalize(&g)
    }
}

/// Mean used by the partition routines, clamped into `[min, max]`.
pub(crate) fn partition_mean(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut s = 0.0;
    for &x in u {
        s += x;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (s / n).clamp(lo, hi)
}

/// A permutation of `0..N`, optionally carrying the split `m` of a mean
/// partition (the number of entries in the "≤ mean" block).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    perm: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    split: Option<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            perm: (0..n).collect(),
            split: None,
        }
    }

    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(SmcError::InvalidPermutation);
            }
            seen[p] = true;
        }
        Ok(Permutation { perm, split: None })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    /// Whether this is a mean partition of `u`: a prefix of values `≤ ū`
    /// (nonempty) followed by values `> ū`.
    pub fn is_mean_partition_of(&self, u: &[f64]) -> bool {
        if u.len() != self.len() || u.is_empty() {
            return false;
        }
        let mean = partition_mean(u);
        let m = self.perm.iter().take_while(|&&p| u[p] <= mean).count();
        m >= 1 && self.perm[m..].iter().all(|&p| u[p] > mean)
    }
}

/// Partition `0..N` about the mean of `u` with a Hoare sweep.
///
/// Values equal to the mean go to the first block. The within-block order is
/// whatever the sweep produces; it is deterministic given `u`.
pub fn mean_partition(u: &[f64]) -> Permutation {
    let mut perm: Vec<usize> = (0..u.len()).collect();
    let m = mean_partition_into(u, &mut perm);
    Permutation {
        perm,
        split: Some(m),
    }
}

/// Buffer-reusing form of [`mean_partition`]; `perm` is overwritten.
/// Returns the split `m`.
pub fn mean_partition_into(u: &[f64], perm: &mut Vec<usize>) -> usize {
    let n = u.len();
    perm.clear();
    perm.extend(0..n);
    if n == 0 {
        return 0;
    }
    let mean = partition_mean(u);
    let (mut i, mut j) = (0usize, n);
    loop {
        while i < j && u[perm[i]] <= mean {
            i += 1;
        }
        while j > i && u[perm[j - 1]] > mean {
            j -= 1;
        }
        if i >= j {
            break;
        }
        perm.swap(i, j - 1);
        i += 1;
        j -= 1;
    }
    let m = i;
    if m == 0 {
        // cannot happen with a clamped mean; keep the contract regardless
        return n;
    }
    m
}

/// Resampling outcome: position `i` copies particle `a[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AncestorVector(Vec<usize>);

impl AncestorVector {
    pub fn new(a: Vec<usize>) -> Result<Self> {
        let n = a.len();
        if let Some(&bad) = a.iter().find(|&&x| x >= n) {
            return Err(SmcError::IndexOutOfRange { index: bad, len: n });
        }
        Ok(AncestorVector(a))
    }

    pub(crate) fn from_vec_unchecked(a: Vec<usize>) -> Self {
        AncestorVector(a)
    }

    pub fn identity(n: usize) -> Self {
        AncestorVector((0..n).collect())
    }

    /// The nondecreasing vector `0..N` with `k` omitted and `l` duplicated.
    pub fn single_event(n: usize, eliminated: usize, duplicated: usize) -> Result<Self> {
        if eliminated >= n {
            return Err(SmcError::IndexOutOfRange { index: eliminated, len: n });
        }
        if duplicated >= n {
            return Err(SmcError::IndexOutOfRange { index: duplicated, len: n });
        }
        let mut counts = vec![1usize; n];
        counts[eliminated] -= 1;
        counts[duplicated] += 1;
        Ok(AncestorVector(repeat_indices(&counts)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &a)| a == i)
    }

    /// `#{j : a_j = i}` for each `i`.
    pub fn offspring(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.0.len()];
        for &a in &self.0 {
            counts[a] += 1;
        }
        counts
    }

    /// Whether the offspring profile is that of a permutation.
    pub fn is_permutation(&self) -> bool {
        self.offspring().iter().all(|&c| c == 1)
    }

    /// The single elimination/duplication event, if the offspring profile is
    /// one zero, one two and ones elsewhere.
    pub fn signature(&self) -> Option<EventSignature> {
        let counts = self.offspring();
        let mut eliminated = None;
        let mut duplicated = None;
        for (i, &c) in counts.iter().enumerate() {
            match c {
                1 => {}
                0 if eliminated.is_none() => eliminated = Some(i),
                2 if duplicated.is_none() => duplicated = Some(i),
                _ => return None,
            }
        }
        Some(EventSignature {
            eliminated: eliminated?,
            duplicated: duplicated?,
        })
    }
}

impl fmt::Display for AncestorVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Nondecreasing index vector with `counts[i]` copies of `i`.
pub fn repeat_indices(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i, c));
    }
    out
}

/// One particle eliminated, one duplicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventSignature {
    pub eliminated: usize,
    pub duplicated: usize,
}

impl EventSignature {
    /// Canonical (nondecreasing) layout of this event.
    pub fn layout(&self, n: usize) -> Result<AncestorVector> {
        AncestorVector::single_event(n, self.eliminated, self.duplicated)
    }
}

/// Reindex a cloud: output entry `i` is input entry `a[i]`.
pub fn apply_ancestors<T: Clone>(x: &[T], a: &AncestorVector) -> Result<Vec<T>> {
    if x.len() != a.len() {
        return Err(SmcError::LengthMismatch {
            expected: x.len(),
            got: a.len(),
        });
    }
    a.as_slice()
        .iter()
        .map(|&i| {
            x.get(i)
                .cloned()
                .ok_or(SmcError::IndexOutOfRange { index: i, len: x.len() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_uniform() {
        let wv = WeightVector::normalize(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(wv.normalised(), &[0.25; 4]);
        assert_eq!(wv.eps(), &[0.0; 4]);
        assert_eq!(wv.csum(), &[0.0; 5]);
        assert!(wv.is_uniform());
    }

    #[test]
    fn normalize_two_weights() {
        let wv = WeightVector::normalize(&[0.4, 0.6]).unwrap();
        assert!((wv.normalised()[0] - 0.4).abs() < 1e-12);
        assert!((wv.normalised()[1] - 0.6).abs() < 1e-12);
        assert!((wv.eps()[0] + 0.2).abs() < 1e-12);
        assert!((wv.eps()[1] - 0.2).abs() < 1e-12);
        let c = wv.csum();
        assert!(c[0].abs() < 1e-12 && (c[1] - 0.2).abs() < 1e-12 && c[2].abs() < 1e-12);
        assert_eq!(wv.nearly_constant_partitioned(), Some(1));
    }

    #[test]
    fn normalize_errors() {
        assert_eq!(
            WeightVector::normalize(&[0.0, 0.0, 0.0]),
            Err(SmcError::AllZeroWeights)
        );
        assert!(matches!(
            WeightVector::normalize(&[1.0, -0.5]),
            Err(SmcError::NegativeWeight { index: 1, .. })
        ));
        assert_eq!(WeightVector::normalize(&[]), Err(SmcError::EmptyInput));
    }

    #[test]
    fn log_weights_report_log_mean() {
        let (wv, lm) = WeightVector::from_log_weights(&[0.0, 2f64.ln()]).unwrap();
        assert!((lm - 1.5f64.ln()).abs() < 1e-14);
        assert!((wv.normalised()[1] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(
            WeightVector::from_log_weights(&[f64::NEG_INFINITY; 3]).map(|x| x.1),
            Err(SmcError::AllZeroWeights)
        );
    }

    #[test]
    fn mean_partition_all_equal_is_identity() {
        let p = mean_partition(&[5.0, 5.0, 5.0]);
        assert_eq!(p.as_slice(), &[0, 1, 2]);
        assert_eq!(p.split(), Some(3));
    }

    #[test]
    fn mean_partition_examples() {
        let u = [-1.0, -2.0, -3.0];
        let p = mean_partition(&u);
        assert!(p.is_mean_partition_of(&u));
        let first: std::collections::BTreeSet<_> = p.as_slice()[..2].iter().copied().collect();
        assert_eq!(first, [1, 2].into_iter().collect());

        let u = [3.0, 1.0, 2.0, 5.0, 1.0];
        let p = mean_partition(&u);
        assert!(p.is_mean_partition_of(&u));
        let first: std::collections::BTreeSet<_> = p.as_slice()[..3].iter().copied().collect();
        assert_eq!(first, [1, 2, 4].into_iter().collect());
        assert_eq!(p.split(), Some(3));
    }

    #[test]
    fn single_event_layout() {
        let a = AncestorVector::single_event(3, 2, 0).unwrap();
        assert_eq!(a.as_slice(), &[0, 0, 1]);
        assert_eq!(
            a.signature(),
            Some(EventSignature {
                eliminated: 2,
                duplicated: 0
            })
        );
        let a = AncestorVector::single_event(5, 1, 3).unwrap();
        assert_eq!(a.as_slice(), &[0, 2, 3, 3, 4]);
        assert!(AncestorVector::identity(4).signature().is_none());
    }

    #[test]
    fn apply_ancestors_examples() {
        let x = ["x1", "x2", "x3"];
        assert_eq!(
            apply_ancestors(&x, &AncestorVector::identity(3)).unwrap(),
            vec!["x1", "x2", "x3"]
        );
        let a = AncestorVector::single_event(3, 2, 0).unwrap();
        assert_eq!(apply_ancestors(&x, &a).unwrap(), vec!["x1", "x1", "x2"]);
        let a = AncestorVector::new(vec![1, 1]).unwrap();
        assert_eq!(apply_ancestors(&["a", "b"], &a).unwrap(), vec!["b", "b"]);
        assert!(matches!(
            AncestorVector::new(vec![0, 3]),
            Err(SmcError::IndexOutOfRange { index: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn weight_invariants(g in prop::collection::vec(0.0f64..10.0, 1..20)) {
            prop_assume!(g.iter().any(|&x| x > 0.0));
            let wv = WeightVector::normalize(&g).unwrap();
            let n = g.len();
            let sw: f64 = wv.normalised().iter().sum();
            prop_assert!((sw - 1.0).abs() < 1e-12);
            let se: f64 = wv.eps().iter().sum();
            prop_assert!(se.abs() < 1e-12);
            let f = wv.cumdist();
            prop_assert_eq!(f[0], 0.0);
            prop_assert_eq!(f[n], 1.0);
            for i in 0..n {
                prop_assert!(f[i + 1] >= f[i]);
                prop_assert!((f[i + 1] - f[i] - wv.normalised()[i]).abs() < 1e-12);
                prop_assert!((wv.scaled_cdf(i + 1) / n as f64 - f[i + 1]).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_partition_predicate(u in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = mean_partition(&u);
            prop_assert!(p.is_mean_partition_of(&u));
            prop_assert!(Permutation::new(p.as_slice().to_vec()).is_ok());
            let m = p.split().unwrap();
            prop_assert!(m >= 1 && m <= u.len());
            // discrete values with ties at the mean
            let v: Vec<f64> = u.iter().map(|x| x.round()).collect();
            prop_assert!(mean_partition(&v).is_mean_partition_of(&v));
        }

        #[test]
        fn apply_preserves_accounting(a in prop::collection::vec(0usize..8, 8)) {
            let av = AncestorVector::new(a.clone()).unwrap();
            let x: Vec<usize> = (0..8).map(|i| 100 + i).collect();
            let y = apply_ancestors(&x, &av).unwrap();
            prop_assert_eq!(y.len(), 8);
            prop_assert_eq!(av.offspring().iter().sum::<usize>(), 8);
            for (i, &yi) in y.iter().enumerate() {
                prop_assert_eq!(yi, 100 + a[i]);
            }
        }
    }
}
