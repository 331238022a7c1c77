use ionfocus::analysis::{erf_model, fit_erf, FitOptions, IntervalMethod};
use ionfocus::protocols::{ScanAxis, ScanRow, ScanTable};
use ionfocus::seeds::rng_for;
use rand_distr::{Binomial, Distribution};

const SIGMA: f64 = 4.6e-6;
const C: f64 = 0.87;

fn replicate(seed: u64) -> ScanTable {
    let mut rng = rng_for(seed, &[0xc07e]);
    let rows = (0..21)
        .map(|i| {
            let x = -3.0 * SIGMA + 6.0 * SIGMA * i as f64 / 20.0;
            let hits = Binomial::new(10, erf_model(x, 0.0, SIGMA, C)).unwrap().sample(&mut rng);
            ScanRow { position: x, shots: 10, hits }
        })
        .collect();
    ScanTable::new(ScanAxis::BladeX, rows).unwrap()
}

fn coverage(interval: IntervalMethod) -> (usize, usize) {
    let opts = FitOptions { interval, ..FitOptions::default() };
    let mut covered = 0;
    let mut fitted = 0;
    for seed in 0..500 {
        if let Ok(f) = fit_erf(&replicate(seed), &opts) {
            fitted += 1;
            if f.sigma_interval.contains(SIGMA) {
                covered += 1;
            }
        }
    }
    (covered, fitted)
}

#[test]
fn profile_interval_coverage_is_nominal() {
    let (covered, fitted) = coverage(IntervalMethod::ProfileLikelihood);
    let rate = covered as f64 / 500.0;
    println!("profile coverage {covered}/{fitted} = {rate:.3}");
    assert_eq!(fitted, 500);
    assert!((rate - 0.68).abs() <= 0.05, "coverage {rate}");
}

#[test]
fn quadratic_interval_coverage_reported() {
    let (covered, fitted) = coverage(IntervalMethod::Quadratic);
    println!("quadratic coverage {covered}/{fitted}");
    assert_eq!(fitted, 500);
}
