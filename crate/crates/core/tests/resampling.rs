use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

use wif_smc::intensity::{intensity_table_default, PotentialValues};
use wif_smc::{exact_distribution, mean_partition, AncestorVector, Resampler, SchemeId, WeightVector};

fn sampler_matches_oracle(scheme: SchemeId, g: &[f64], draws: usize, seed: u64) {
    let dist = exact_distribution(scheme, g).unwrap();
    let wv = WeightVector::normalize(g).unwrap();
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut r = Resampler::new(scheme);
    let mut out = Vec::new();
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..draws {
        r.resample_into(&wv, &mut rng, &mut out).unwrap();
        *counts.entry(out.clone()).or_default() += 1;
    }
    let m = draws as f64;
    for (a, p) in dist.iter() {
        let c = counts.remove(a.as_slice()).unwrap_or(0) as f64;
        let se = (p * (1.0 - p) / m).sqrt().max(1.0 / m);
        let z = (c / m - p).abs() / se;
        assert!(z < 4.0, "{scheme} {g:?} {a}: freq {} vs {p} (z {z:.2})", c / m);
    }
    assert!(counts.is_empty(), "{scheme}: outcomes outside the support {:?}", counts.keys().collect::<Vec<_>>());
}

#[test]
fn sampler_frequencies_match_exact_distribution() {
    let cases: [&[f64]; 4] = [&[0.4, 0.6], &[0.2, 0.5, 0.3], &[1.0, 0.9, 1.2, 1.05], &[0.1, 2.0, 0.7, 1.3]];
    for (i, g) in cases.iter().enumerate() {
        for s in SchemeId::all() {
            sampler_matches_oracle(s, g, 1_000_000, 17 + i as u64);
        }
    }
}

/// Nearly constant weights, already in mean-partitioned order.
fn nearly_constant_partitioned() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=5)
        .prop_flat_map(|n| prop::collection::vec(-0.3f64..0.3, n))
        .prop_map(|e| {
            let mut g: Vec<f64> = e.iter().map(|x| 1.0 + x).collect();
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            let (mut lo, hi): (Vec<f64>, Vec<f64>) = g.iter().partition(|&&x| x <= mean);
            lo.extend(hi);
            g = lo;
            g
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unbiased_offspring(g in (2usize..=4).prop_flat_map(|n| prop::collection::vec(0.0f64..1.0, n))) {
        prop_assume!(g.iter().sum::<f64>() > 1e-3);
        let total: f64 = g.iter().sum();
        let n = g.len() as f64;
        for s in SchemeId::all() {
            let d = exact_distribution(s, &g).unwrap();
            let off = d.expected_offspring();
            for j in 0..g.len() {
                prop_assert!((off[j] - n * g[j] / total).abs() < 1e-9, "{} {:?}", s, g);
            }
        }
    }

    #[test]
    fn single_event_structure(g in nearly_constant_partitioned()) {
        let wv = WeightVector::normalize(&g).unwrap();
        prop_assume!(wv.nearly_constant_partitioned().is_some());
        let exact_single = [SchemeId::SYSTEMATIC_PARTITION, SchemeId::SSP_PARTITION, SchemeId::SYMMETRISED];
        for s in exact_single {
            let d = exact_distribution(s, &g).unwrap();
            for (a, p) in d.iter() {
                prop_assert!(p > 0.0);
                prop_assert!(a.is_identity() || a.signature().is_some(), "{}: {}", s, a);
            }
        }
        // killing and stratified decide each slot independently, so several
        // simultaneous events carry second-order mass:
        // P(at least two moved slots) <= (Σ_i P(A_i != i))² / 2
        for s in [SchemeId::KILLING, SchemeId::STRATIFIED_PARTITION] {
            let d = exact_distribution(s, &g).unwrap();
            let moved = |a: &AncestorVector| a.as_slice().iter().enumerate().filter(|&(i, &ai)| ai != i).count();
            let first: f64 = d.iter().map(|(a, p)| p * moved(a) as f64).sum();
            let multi: f64 = d
                .iter()
                .filter(|(a, _)| !a.is_identity() && a.signature().is_none())
                .map(|(_, p)| p)
                .sum();
            let two_or_more: f64 = d.iter().filter(|(a, _)| moved(a) >= 2).map(|(_, p)| p).sum();
            prop_assert!(multi <= two_or_more + 1e-15);
            prop_assert!(two_or_more <= first * first / 2.0 + 1e-12, "{}: {} > {}", s, two_or_more, first * first / 2.0);
        }
    }

    #[test]
    fn stratified_support(g in nearly_constant_partitioned()) {
        let wv = WeightVector::normalize(&g).unwrap();
        prop_assume!(wv.nearly_constant_partitioned().is_some());
        let d = exact_distribution(SchemeId::STRATIFIED, &g).unwrap();
        for (a, _) in d.iter() {
            for (i, &ai) in a.as_slice().iter().enumerate() {
                prop_assert!(ai == i || ai == i + 1, "{}", a);
            }
        }
    }

    #[test]
    fn determinism(g in (1usize..=8).prop_flat_map(|n| prop::collection::vec(0.01f64..1.0, n)), seed in any::<u64>()) {
        for s in SchemeId::all() {
            let a = wif_smc::resample(s, &g, &mut Pcg64Mcg::seed_from_u64(seed)).unwrap();
            let b = wif_smc::resample(s, &g, &mut Pcg64Mcg::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn symmetrised_table_equals_ssp(v in (2usize..=7).prop_flat_map(|n| prop::collection::vec(0.0f64..5.0, n))) {
        let pv = PotentialValues::new(v).unwrap();
        let a = intensity_table_default(SchemeId::SYMMETRISED, &pv).unwrap();
        let b = intensity_table_default(SchemeId::SSP_PARTITION, &pv).unwrap();
        let (ma, mb) = (a.by_layout(), b.by_layout());
        prop_assert_eq!(ma.len(), mb.len());
        for (k, ra) in ma {
            prop_assert!((ra - mb[&k]).abs() < 1e-12);
        }
    }

    #[test]
    fn partitioned_samplers_respect_offspring_accounting(g in (2usize..=12).prop_flat_map(|n| prop::collection::vec(0.01f64..3.0, n)), seed in any::<u64>()) {
        let wv = WeightVector::normalize(&g).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        for s in SchemeId::all() {
            let mut out = Vec::new();
            Resampler::new(s).resample_into(&wv, &mut rng, &mut out).unwrap();
            let a = AncestorVector::new(out).unwrap();
            prop_assert_eq!(a.offspring().iter().sum::<usize>(), g.len());
        }
        let p = mean_partition(&g);
        prop_assert!(p.is_mean_partition_of(&g));
    }
}
