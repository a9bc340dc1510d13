//! Standard normal tail functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

/// `Phi(z)`. The upper half goes through the tail, where `erfc` is sharper.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z > 0.0 {
        1.0 - std_normal_sf(z)
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

/// `1 - Phi(z)`, accurate in the upper tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let d = std_normal_cdf(1.959963984540054) - 0.975;
        assert!(d.abs() < 1e-12, "{d:e}");
        assert!((std_normal_sf(8.0) - 6.220960574271785e-16).abs() < 1e-26);
        assert!((std_normal_cdf(-1.0) + std_normal_sf(-1.0) - 1.0).abs() < 1e-15);
    }
}
