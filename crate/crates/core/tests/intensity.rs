use proptest::prelude::*;

use wif_smc::intensity::{intensity_table_default, numeric_intensity, NumericIntensity, PotentialValues};
use wif_smc::SchemeId;

fn potentials() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=5).prop_flat_map(|n| prop::collection::vec(0.0f64..4.0, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn extrapolated_numeric_tables_are_asymptotically_unbiased(v in potentials()) {
        let pv = PotentialValues::new(v).unwrap();
        for s in SchemeId::stable() {
            let coarse = numeric_intensity(s, &pv, 2f64.powi(-10)).unwrap();
            let fine = numeric_intensity(s, &pv, 2f64.powi(-11)).unwrap();
            let limit = NumericIntensity::richardson(&coarse, &fine);
            for r in limit.residuals(&pv) {
                prop_assert!(r.abs() < 1e-4, "{}: {}", s, r);
            }
            let table = intensity_table_default(s, &pv).unwrap();
            prop_assert!(limit.max_abs_error(&table) < 1e-5 * (1.0 + table.total), "{}", s);
        }
    }

    #[test]
    fn ssp_rate_is_positive_and_negative_excess(v in (2usize..=8).prop_flat_map(|n| prop::collection::vec(0.0f64..4.0, n))) {
        let pv = PotentialValues::new(v.clone()).unwrap();
        let vb = v.iter().sum::<f64>() / v.len() as f64;
        let pos: f64 = v.iter().map(|x| (x - vb).max(0.0)).sum();
        let neg: f64 = v.iter().map(|x| (vb - x).max(0.0)).sum();
        let ssp = intensity_table_default(SchemeId::SSP_PARTITION, &pv).unwrap();
        let sys = intensity_table_default(SchemeId::SYSTEMATIC_PARTITION, &pv).unwrap();
        prop_assert!((ssp.total - sys.total).abs() < 1e-12);
        prop_assert!((ssp.total - pos).abs() < 1e-12);
        prop_assert!((ssp.total - neg).abs() < 1e-12);
    }
}

#[test]
fn multinomial_quotient_diverges() {
    let pv = PotentialValues::new(vec![1.0, 2.0, 3.0]).unwrap();
    let mut last = 0.0;
    for k in 4..=14 {
        let q = numeric_intensity(SchemeId::MULTINOMIAL, &pv, 2f64.powi(-k)).unwrap();
        assert!(q.total > 1.8 * last, "{k}: {} vs {last}", q.total);
        assert!((q.off_permutation_probability - (1.0 - 6.0 / 27.0)).abs() < 0.01);
        last = q.total;
    }
}
