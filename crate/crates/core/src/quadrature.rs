//! One-dimensional quadrature rules.

use crate::error::{Error, Result};
use crate::special::ln_gamma;
use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Integrates `f` over [a, b] after affine mapping (no weight function).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Mapped nodes and weights on [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

/// Gauss–Legendre rule with `n` points, nodes by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Jacobi rule for the weight (1 - x)^alpha (1 + x)^beta on [-1, 1],
/// built with the Golub–Welsch algorithm.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<Rule> {
    if n == 0 || alpha <= -1.0 || beta <= -1.0 {
        return Err(Error::Domain(format!(
            "Gauss–Jacobi needs n ≥ 1 and exponents > -1 (n={n}, alpha={alpha}, beta={beta})"
        )));
    }
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < n {
            let m = kf + 1.0;
            let num = 4.0 * m * (m + alpha) * (m + beta) * (m + ab);
            let den = (2.0 * m + ab).powi(2) * (2.0 * m + ab + 1.0) * (2.0 * m + ab - 1.0);
            let off = (num / den).sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let mu0 = ((ab + 1.0) * 2f64.ln() + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// ∫_a^b (x - a)^power g(x) dx for smooth g, exact for polynomial g of
/// degree ≤ 2n - 1.
pub fn integrate_left_power<F: FnMut(f64) -> f64>(
    rule: &Rule,
    power: f64,
    a: f64,
    b: f64,
    mut g: F,
) -> f64 {
    // rule must be Gauss–Jacobi with beta = power, alpha = 0
    let half = 0.5 * (b - a);
    let scale = half.powf(power + 1.0);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * g(a + half * (1.0 + x)))
        .sum::<f64>()
        * scale
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = fc * GK_WEIGHTS_K[7];
    let mut gauss = fc * GK_WEIGHTS_G[3];
    for (i, &x) in GK_NODES.iter().take(7).enumerate() {
        let s = f(mid - half * x) + f(mid + half * x);
        kron += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            gauss += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature with absolute tolerance `tol`.
pub fn adaptive_gk<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut evaluations = 0usize;
    while let Some((lo, hi, t)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        evaluations += 1;
        if err <= t.max(1e-300) || (hi - lo).abs() < 1e-15 * (1.0 + lo.abs()) {
            total += val;
        } else if evaluations > 200_000 {
            return Err(Error::NoConvergence {
                what: "adaptive Gauss–Kronrod",
                iterations: evaluations,
                residual: err,
            });
        } else {
            let m = 0.5 * (lo + hi);
            stack.push((lo, m, 0.5 * t));
            stack.push((m, hi, 0.5 * t));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(6);
        for p in 0..12 {
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            let got = rule.integrate(-1.0, 1.0, |x| x.powi(p));
            assert!((got - exact).abs() < 1e-14, "degree {p}");
        }
        let w: f64 = gauss_legendre(13).weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_weight_moments() {
        // ∫_0^h t^a t^k dt = h^{a+k+1}/(a+k+1)
        for &a in &[-0.5, 0.0, 0.5, 0.8] {
            let rule = gauss_jacobi(8, 0.0, a).unwrap();
            for k in 0..15 {
                let h = 0.3;
                let got = integrate_left_power(&rule, a, 0.0, h, |t| t.powi(k));
                let exact = h.powf(a + k as f64 + 1.0) / (a + k as f64 + 1.0);
                assert!(((got - exact) / exact).abs() < 1e-13, "a={a} k={k}");
            }
        }
    }

    #[test]
    fn adaptive_handles_smooth_and_kinked_integrands() {
        let v = adaptive_gk(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-14).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let v = adaptive_gk(|x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-12).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-10);
    }
}
