//! Complete elliptic integrals by the arithmetic-geometric mean.

const AGM_TOL: f64 = 1e-15;

/// K(m) and E(m) for parameter m = k^2, given the complementary parameter
/// `mc = 1 - m`. Passing `mc` directly keeps full precision near the
/// logarithmic singularity at m -> 1.
pub fn ellipke_complement(mc: f64) -> (f64, f64) {
    debug_assert!((0.0..=1.0).contains(&mc), "mc = {mc}");
    if mc <= 0.0 {
        return (f64::INFINITY, 1.0);
    }
    let mut a = 1.0;
    let mut b = mc.sqrt();
    let mut c2_sum = 0.5 * (1.0 - mc);
    let mut pow2 = 0.5;
    for _ in 0..64 {
        let c = 0.5 * (a - b);
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
        pow2 *= 2.0;
        c2_sum += pow2 * c * c;
        if c.abs() <= AGM_TOL * a {
            break;
        }
    }
    let k = std::f64::consts::FRAC_PI_2 / a;
    (k, k * (1.0 - c2_sum))
}

pub fn ellipk(m: f64) -> f64 {
    ellipke_complement(1.0 - m).0
}

pub fn ellipe(m: f64) -> f64 {
    ellipke_complement(1.0 - m).1
}
