//! Gamma function in double precision.
//!
//! Lanczos approximation with g = 7 and nine coefficients, combined with the
//! reflection formula for arguments below 1/2. Relative error is below 1e-13
//! on (0, 10].

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for real x that is not a non-positive integer.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx)
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with 30-digit arithmetic.
    const TABLE: [(f64, f64); 9] = [
        (0.5, 1.772_453_850_905_516_027_298),
        (1.0, 1.0),
        (1.5, 0.886_226_925_452_758_013_649),
        (2.5, 1.329_340_388_179_137_020_474),
        (3.7, 4.170_651_783_796_603_165_394),
        (7.25, 1_155.381_013_919_989_687_203),
        (9.9, 289_867.703_840_109_406_784),
        (0.01, 99.432_585_119_150_603_714),
        (0.1, 9.513_507_698_668_731_836_292),
    ];

    #[test]
    fn matches_tabulated_values() {
        for &(x, expected) in &TABLE {
            let rel = (gamma(x) - expected).abs() / expected;
            assert!(rel < 1e-13, "Γ({x}) rel err {rel:e}");
        }
    }

    #[test]
    fn ln_gamma_consistent() {
        for &(x, expected) in &TABLE {
            assert!((ln_gamma(x) - expected.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrence_holds() {
        for i in 1..200 {
            let x = 0.05 * i as f64;
            let rel = (gamma(x + 1.0) - x * gamma(x)).abs() / gamma(x + 1.0);
            assert!(rel < 5e-14, "x = {x}: {rel:e}");
        }
    }
}
