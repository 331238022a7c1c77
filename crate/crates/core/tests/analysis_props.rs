use ionfocus::analysis::{containment_to_sigma, erf_model, fit_erf, FitOptions};
use ionfocus::protocols::{ScanAxis, ScanRow, ScanTable};
use ionfocus::seeds::rng_for;
use proptest::prelude::*;
use rand_distr::{Binomial, Distribution};

fn table(seed: u64, xs: &[f64]) -> ScanTable {
    let mut rng = rng_for(seed, &[1]);
    let rows = xs
        .iter()
        .map(|&x| ScanRow {
            position: x,
            shots: 20,
            hits: Binomial::new(20, erf_model(x, 0.0, 1.0, 0.87)).unwrap().sample(&mut rng),
        })
        .collect();
    ScanTable::new(ScanAxis::BladeX, rows).unwrap()
}

fn transformed(t: &ScanTable, k: f64, shift: f64) -> ScanTable {
    let rows = t
        .rows
        .iter()
        .map(|r| ScanRow { position: k * r.position + shift, ..*r })
        .collect();
    ScanTable::new(t.axis, rows).unwrap()
}

fn grid() -> Vec<f64> {
    (0..15).map(|i| -3.0 + 6.0 * i as f64 / 14.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_is_translation_equivariant(seed in 0u64..1000, delta in -50.0f64..50.0) {
        let t = table(seed, &grid());
        let Ok(base) = fit_erf(&t, &FitOptions::default()) else { return Ok(()); };
        let moved = fit_erf(&transformed(&t, 1.0, delta), &FitOptions::default()).unwrap();
        prop_assert!((moved.a - base.a - delta).abs() < 1e-6 * (1.0 + delta.abs()));
        prop_assert!((moved.sigma / base.sigma - 1.0).abs() < 1e-6);
        prop_assert!((moved.c - base.c).abs() < 1e-6);
    }

    #[test]
    fn fit_is_scale_equivariant(seed in 0u64..1000, k in 1e-7f64..1e3) {
        let t = table(seed, &grid());
        let Ok(base) = fit_erf(&t, &FitOptions::default()) else { return Ok(()); };
        let scaled = fit_erf(&transformed(&t, k, 0.0), &FitOptions::default()).unwrap();
        prop_assert!((scaled.sigma / (k * base.sigma) - 1.0).abs() < 1e-6);
        prop_assert!((scaled.a - k * base.a).abs() < 1e-6 * k * (1.0 + base.a.abs()));
        prop_assert!((scaled.c - base.c).abs() < 1e-6);
    }

    #[test]
    fn monotone_tables_give_positive_sigma(steps in proptest::collection::vec(0u64..3, 6..20)) {
        // hits decrease as the blade advances
        let n = steps.len();
        let mut hits = 10u64;
        let mut rows = Vec::with_capacity(n);
        for (i, s) in steps.iter().enumerate() {
            rows.push(ScanRow { position: -(i as f64), shots: 10, hits });
            hits = hits.saturating_sub(*s);
        }
        let t = ScanTable::new(ScanAxis::BladeX, rows).unwrap();
        if let Ok(f) = fit_erf(&t, &FitOptions::default()) {
            prop_assert!(f.sigma > 0.0);
            prop_assert!((0.0..=1.0).contains(&f.c));
        }
    }

    #[test]
    fn containment_round_trip(sigma in 1e-9f64..1e-2, f in 0.01f64..0.99) {
        let r = sigma * (-2.0 * (1.0 - f).ln()).sqrt();
        let back = containment_to_sigma(r, f).unwrap();
        prop_assert!((back / sigma - 1.0).abs() < 1e-12);
    }
}
