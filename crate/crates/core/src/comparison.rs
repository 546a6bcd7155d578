//! Comparison functions of the model planes of constant curvature -a².
//!
//! All triangle formulas go through the half-angle form of the law of cosines,
//!
//! ```text
//! (cosh(a d) - 1) / a² = 2 [ sh(r1 - r2)/2)² + sh(r1) sh(r2) sin²(α/2) ]
//! ```
//!
//! with `sh(x) = sinh(a x) / a`. It has no cancellation for thin triangles and
//! reduces to the Euclidean law of cosines at `a = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const SERIES_THRESHOLD: f64 = 1e-4;
const ANGLE_SLACK: f64 = 1e-12;

/// Curvature of the model plane, which is `-a²`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelCurvature(f64);

impl ModelCurvature {
    pub fn new(a: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return invalid(format!("model curvature parameter must be finite and >= 0, got {a}"));
        }
        Ok(ModelCurvature(a))
    }

    pub const fn euclidean() -> Self {
        ModelCurvature(0.0)
    }

    pub fn a(self) -> f64 {
        self.0
    }

    pub fn is_euclidean(self) -> bool {
        self.0 == 0.0
    }

    /// `sinh(a s) / a`, equal to `s` when `a = 0`.
    pub fn sn(self, s: f64) -> f64 {
        let x = self.0 * s;
        if x.abs() < SERIES_THRESHOLD {
            s * (1.0 + x * x / 6.0)
        } else {
            x.sinh() / self.0
        }
    }

    pub fn c(self, s: f64) -> Result<f64> {
        c_a(self, s)
    }

    pub fn cot(self, s: f64) -> Result<f64> {
        cot_a(self, s)
    }
}

/// `C_a(s) = (cosh(a s) - 1) / a²`, or `s²/2` for `a = 0`.
pub fn c_a(k: ModelCurvature, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return invalid(format!("C_a needs s >= 0, got {s}"));
    }
    let x = k.0 * s;
    if x < SERIES_THRESHOLD {
        Ok(0.5 * s * s * (1.0 + x * x / 12.0))
    } else {
        let h = (0.5 * x).sinh() / k.0;
        Ok(2.0 * h * h)
    }
}

/// `cot_a(s) = a coth(a s)`, or `1/s` for `a = 0`.
pub fn cot_a(k: ModelCurvature, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return invalid(format!("cot_a needs s > 0, got {s}"));
    }
    let x = k.0 * s;
    if x < SERIES_THRESHOLD {
        Ok(1.0 / s + k.0 * x / 3.0)
    } else {
        Ok(k.0 / x.tanh())
    }
}

fn check_sides(r1: f64, r2: f64) -> Result<()> {
    if !(r1 >= 0.0) || !(r2 >= 0.0) || !r1.is_finite() || !r2.is_finite() {
        return invalid(format!("side lengths must be finite and >= 0, got {r1}, {r2}"));
    }
    Ok(())
}

fn clamp_angle(alpha: f64) -> Result<f64> {
    let pi = std::f64::consts::PI;
    if !(alpha >= -ANGLE_SLACK && alpha <= pi + ANGLE_SLACK) {
        return invalid(format!("angle must lie in [0, pi], got {alpha}"));
    }
    Ok(alpha.clamp(0.0, pi))
}

/// `C_a` of the third side, computed without cancellation.
fn c_third(k: ModelCurvature, r1: f64, r2: f64, alpha: f64) -> f64 {
    let d = k.sn(0.5 * (r1 - r2));
    let s = (0.5 * alpha).sin();
    2.0 * (d * d + k.sn(r1) * k.sn(r2) * s * s)
}

/// Inverse of `C_a` on `[0, inf)`.
fn c_inverse(k: ModelCurvature, c: f64) -> f64 {
    let y = (0.5 * c.max(0.0)).sqrt();
    let z = k.0 * y;
    if z < SERIES_THRESHOLD {
        2.0 * y * (1.0 - z * z / 6.0)
    } else {
        2.0 * z.asinh() / k.0
    }
}

/// Third side of the model triangle with sides `r1`, `r2` enclosing `alpha`.
pub fn law_of_cosines(k: ModelCurvature, r1: f64, r2: f64, alpha: f64) -> Result<f64> {
    check_sides(r1, r2)?;
    let alpha = clamp_angle(alpha)?;
    Ok(c_inverse(k, c_third(k, r1, r2, alpha)))
}

/// Angle between the sides `r1` and `r2` of the model triangle whose third
/// side is `opposite`.
pub fn angle_from_sides(k: ModelCurvature, r1: f64, r2: f64, opposite: f64) -> Result<f64> {
    check_sides(r1, r2)?;
    if !(r1 > 0.0 && r2 > 0.0) || !(opposite >= 0.0) {
        return invalid(format!("degenerate triangle ({r1}, {r2}, {opposite})"));
    }
    let d = k.sn(0.5 * opposite);
    let e = k.sn(0.5 * (r1 - r2));
    let s2 = ((d * d - e * e) / (k.sn(r1) * k.sn(r2))).clamp(0.0, 1.0);
    Ok(2.0 * s2.sqrt().asin())
}

/// `F_a(r1, r2, α, θ) = C_a(d(ỹ, z̃)) / C_a(d(p̃, q̃))` where `p̃`, `q̃` sit at
/// fraction `θ` along the two sides issued from the vertex.
pub fn f_comparison(k: ModelCurvature, r1: f64, r2: f64, alpha: f64, theta: f64) -> Result<f64> {
    check_sides(r1, r2)?;
    if !(r1 > 0.0 && r2 > 0.0) {
        return invalid(format!("F_a needs r1, r2 > 0, got {r1}, {r2}"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return invalid(format!("F_a needs theta in (0, 1), got {theta}"));
    }
    let alpha = clamp_angle(alpha)?;
    if k.is_euclidean() {
        return Ok(1.0 / (theta * theta));
    }
    let num = c_third(k, r1, r2, alpha);
    let den = c_third(k, theta * r1, theta * r2, alpha);
    if den == 0.0 {
        // alpha = 0 and r1 = r2: the limit of the ratio along the degenerate side
        let r = 0.5 * (r1 + r2);
        let q = k.sn(r) / k.sn(theta * r);
        return Ok(q * q);
    }
    Ok(num / den)
}

/// Model triangle determined by two sides and the enclosed angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTriangle {
    pub r1: f64,
    pub r2: f64,
    pub alpha: f64,
    pub third_side: f64,
}

impl ComparisonTriangle {
    pub fn new(k: ModelCurvature, r1: f64, r2: f64, alpha: f64) -> Result<Self> {
        let third_side = law_of_cosines(k, r1, r2, alpha)?;
        Ok(ComparisonTriangle {
            r1,
            r2,
            alpha: clamp_angle(alpha)?,
            third_side,
        })
    }

    pub fn satisfies_triangle_inequality(&self, tol: f64) -> bool {
        let (a, b, c) = (self.r1, self.r2, self.third_side);
        a <= b + c + tol && b <= a + c + tol && c <= a + b + tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn k(a: f64) -> ModelCurvature {
        ModelCurvature::new(a).unwrap()
    }

    /// Hyperboloid-model distance between points at polar coordinates
    /// (r1, 0) and (r2, alpha) in the plane of curvature -1.
    fn hyperboloid_distance(r1: f64, r2: f64, alpha: f64) -> f64 {
        let p = [r1.cosh(), r1.sinh(), 0.0];
        let q = [r2.cosh(), r2.sinh() * alpha.cos(), r2.sinh() * alpha.sin()];
        let minkowski = p[0] * q[0] - p[1] * q[1] - p[2] * q[2];
        minkowski.max(1.0).acosh()
    }

    #[test]
    fn c_a_values() {
        assert_eq!(c_a(k(1.0), 0.0).unwrap(), 0.0);
        assert_eq!(c_a(k(0.0), 2.0).unwrap(), 2.0);
        assert_relative_eq!(c_a(k(1.0), 2f64.acosh()).unwrap(), 1.0, epsilon = 1e-14);
        assert!(c_a(k(1.0), -1.0).is_err());
    }

    #[test]
    fn cot_a_values() {
        assert_eq!(cot_a(k(0.0), 2.0).unwrap(), 0.5);
        assert_relative_eq!(cot_a(k(1.0), 50.0).unwrap(), 1.0, epsilon = 1e-15);
        let coth2 = 2f64.cosh() / 2f64.sinh();
        assert_relative_eq!(cot_a(k(2.0), 1.0).unwrap(), 2.0 * coth2, epsilon = 1e-14);
        assert_relative_eq!(cot_a(k(2.0), 1.0).unwrap(), 2.0746, epsilon = 1e-4);
        assert!(cot_a(k(1.0), 0.0).is_err());
    }

    #[test]
    fn euclidean_limit_of_kernels() {
        let tiny = k(1e-6);
        for s in [0.1, 1.0, 3.0] {
            assert_relative_eq!(c_a(tiny, s).unwrap(), s * s / 2.0, max_relative = 1e-8);
            assert_relative_eq!(cot_a(tiny, s).unwrap(), 1.0 / s, max_relative = 1e-8);
        }
    }

    #[test]
    fn series_branch_is_continuous() {
        let kk = k(1.0);
        let below = c_a(kk, 0.99999e-4).unwrap();
        let above = c_a(kk, 1.00001e-4).unwrap();
        assert_relative_eq!(below, above, max_relative = 1e-4);
        let below = cot_a(kk, 0.99999e-4).unwrap();
        let above = cot_a(kk, 1.00001e-4).unwrap();
        assert_relative_eq!(below, above, max_relative = 1e-4);
    }

    #[test]
    fn law_of_cosines_degenerate_cases() {
        for a in [0.0, 0.5, 1.0, 2.0] {
            assert_relative_eq!(law_of_cosines(k(a), 1.3, 0.4, PI).unwrap(), 1.7, epsilon = 1e-13);
            assert_relative_eq!(law_of_cosines(k(a), 1.3, 0.0, 0.7).unwrap(), 1.3, epsilon = 1e-13);
            assert_relative_eq!(law_of_cosines(k(a), 1.3, 0.4, 0.0).unwrap(), 0.9, epsilon = 1e-13);
        }
    }

    #[test]
    fn law_of_cosines_matches_hyperboloid() {
        assert_relative_eq!(
            law_of_cosines(k(1.0), 1.0, 1.0, PI / 2.0).unwrap(),
            (1f64.cosh().powi(2)).acosh(),
            epsilon = 1e-13
        );
        for &(r1, r2, al) in &[(0.3, 2.0, 0.4), (3.0, 5.0, 2.5), (1.0, 1.0, 1e-3)] {
            let d = law_of_cosines(k(1.0), r1, r2, al).unwrap();
            assert_relative_eq!(d, hyperboloid_distance(r1, r2, al), max_relative = 1e-9);
        }
    }

    #[test]
    fn law_of_cosines_scales_with_curvature() {
        // d_a(r1, r2, α) = d_1(a r1, a r2, α) / a
        let (r1, r2, al) = (0.7, 1.9, 1.1);
        let d2 = law_of_cosines(k(2.0), r1, r2, al).unwrap();
        let d1 = law_of_cosines(k(1.0), 2.0 * r1, 2.0 * r2, al).unwrap();
        assert_relative_eq!(d2, d1 / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn thin_triangle_has_no_cancellation() {
        let d = law_of_cosines(k(1.0), 10.0, 10.0, 1e-9).unwrap();
        // sinh(d/2) = sinh(10) sin(α/2)
        let expected = 2.0 * (10f64.sinh() * (0.5e-9f64).sin()).asinh();
        assert_relative_eq!(d, expected, max_relative = 1e-12);
    }

    #[test]
    fn angle_domain() {
        assert!(law_of_cosines(k(1.0), 1.0, 1.0, -0.1).is_err());
        assert!(law_of_cosines(k(1.0), 1.0, 1.0, PI + 1e-13).is_ok());
        assert!(law_of_cosines(k(1.0), -1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn f_euclidean_is_inverse_square() {
        for &(r1, r2, al, th) in &[(1.0, 2.0, 0.3, 0.25), (5.0, 0.1, 3.0, 0.9)] {
            assert_relative_eq!(f_comparison(k(0.0), r1, r2, al, th).unwrap(), 1.0 / (th * th), epsilon = 1e-15);
        }
    }

    #[test]
    fn f_collinear_case() {
        let kk = k(1.0);
        let (r1, r2, th) = (0.8, 1.7, 0.4);
        let expected = c_a(kk, r1 + r2).unwrap() / c_a(kk, th * (r1 + r2)).unwrap();
        assert_relative_eq!(f_comparison(kk, r1, r2, PI, th).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn f_matches_explicit_triangles() {
        let kk = k(1.0);
        let (r1, r2, al, th) = (2.0, 3.0, 1.0, 0.5);
        let big = ComparisonTriangle::new(kk, r1, r2, al).unwrap();
        let small = ComparisonTriangle::new(kk, th * r1, th * r2, al).unwrap();
        let via_cosh = ((big.third_side).cosh() - 1.0) / ((small.third_side).cosh() - 1.0);
        let f = f_comparison(kk, r1, r2, al, th).unwrap();
        assert_relative_eq!(f, via_cosh, max_relative = 1e-12);
        // direct closed form
        let num = r1.cosh() * r2.cosh() - r1.sinh() * r2.sinh() * al.cos() - 1.0;
        let den = (th * r1).cosh() * (th * r2).cosh() - (th * r1).sinh() * (th * r2).sinh() * al.cos() - 1.0;
        assert_relative_eq!(f, num / den, max_relative = 1e-12);
    }

    #[test]
    fn f_degenerate_limit() {
        let kk = k(1.0);
        let f0 = f_comparison(kk, 2.0, 2.0, 0.0, 0.5).unwrap();
        let expected = (2f64.sinh() / 1f64.sinh()).powi(2);
        assert_relative_eq!(f0, expected, max_relative = 1e-12);
        let near = f_comparison(kk, 2.0, 2.0, 1e-7, 0.5).unwrap();
        assert_relative_eq!(f0, near, max_relative = 1e-6);
    }

    #[test]
    fn f_is_monotone_in_angle() {
        for a in [0.5, 1.0, 2.0] {
            for &(r1, r2) in &[(0.5, 0.5), (1.0, 3.0), (4.0, 0.2), (2.0, 2.5)] {
                for th in [0.1, 0.25, 0.5, 0.75, 0.95] {
                    let mut prev = 0.0;
                    for i in 0..=200 {
                        let al = PI * i as f64 / 200.0;
                        let f = f_comparison(k(a), r1, r2, al, th).unwrap();
                        assert!(f >= prev * (1.0 - 1e-13), "a={a} r=({r1},{r2}) th={th} al={al}");
                        prev = f;
                    }
                }
            }
        }
    }

    #[test]
    fn f_rejects_bad_theta() {
        assert!(f_comparison(k(1.0), 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(f_comparison(k(1.0), 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn angle_inverts_law_of_cosines() {
        for a in [0.0, 0.7, 2.0] {
            for &(r1, r2, al) in &[(1.0, 2.0, 0.3), (0.2, 0.25, 2.9), (3.0, 3.0, 1e-3)] {
                let d = law_of_cosines(k(a), r1, r2, al).unwrap();
                let back = angle_from_sides(k(a), r1, r2, d).unwrap();
                assert_relative_eq!(back, al, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn triangle_inequality_holds() {
        let t = ComparisonTriangle::new(k(1.0), 2.0, 3.0, 2.0).unwrap();
        assert!(t.satisfies_triangle_inequality(1e-12));
    }
}
