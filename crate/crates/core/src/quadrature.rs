//! Globally adaptive Gauss-Kronrod (7, 15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GaussKronrod {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for GaussKronrod {
    fn default() -> Self {
        GaussKronrod {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

#[derive(Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    /// Roundoff level of the panel.
    floor: f64,
}

/// One 15-point Kronrod panel with the QUADPACK error heuristic.
fn rule<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Piece {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut fv = [(0.0, 0.0); 7];
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut resabs = WGK[7] * fc.abs();
    for i in 0..7 {
        let dx = h * XGK[i];
        let (f1, f2) = (f(c - dx), f(c + dx));
        fv[i] = (f1, f2);
        k += WGK[i] * (f1 + f2);
        resabs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * k;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for i in 0..7 {
        resasc += WGK[i] * ((fv[i].0 - mean).abs() + (fv[i].1 - mean).abs());
    }
    let resasc = resasc * h.abs();
    let resabs = resabs * h.abs();
    let mut error = ((k - g) * h).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(floor);
    }
    Piece {
        lo,
        hi,
        value: k * h,
        error,
        floor,
    }
}

impl GaussKronrod {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        GaussKronrod {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }

    /// Integrate `f` over the finite interval `[lo, hi]`, bisecting the piece
    /// with the largest error estimate until the total meets the tolerance or
    /// sits at the roundoff level of `∫|f|`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, lo: f64, hi: f64) -> Result<QuadResult> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Quadrature(format!("interval [{lo}, {hi}] is not finite")));
        }
        if lo == hi {
            return Ok(QuadResult { value: 0.0, error: 0.0, evals: 0 });
        }
        let mut pieces = vec![rule(&mut f, lo, hi)];
        let mut evals = 15;
        loop {
            let value: f64 = pieces.iter().map(|p| p.value).sum();
            let error: f64 = pieces.iter().map(|p| p.error).sum();
            if !value.is_finite() || !error.is_finite() {
                return Err(Error::Quadrature("integrand is not finite".into()));
            }
            let floor: f64 = pieces.iter().map(|p| p.floor).sum();
            if error <= self.abs_tol.max(self.rel_tol * value.abs()) || error <= 2.0 * floor {
                return Ok(QuadResult { value, error, evals });
            }
            if pieces.len() >= self.max_intervals {
                return Err(Error::Quadrature(format!(
                    "{} subintervals exhausted with error estimate {error:e}",
                    self.max_intervals
                )));
            }
            let (worst, _) = pieces
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
                .expect("at least one piece");
            let p = pieces.swap_remove(worst);
            let mid = 0.5 * (p.lo + p.hi);
            if mid <= p.lo.min(p.hi) || mid >= p.lo.max(p.hi) {
                return Err(Error::Quadrature(format!("interval collapsed near {mid}")));
            }
            pieces.push(rule(&mut f, p.lo, mid));
            pieces.push(rule(&mut f, mid, p.hi));
            evals += 30;
        }
    }
}

pub fn integrate<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, abs_tol: f64, rel_tol: f64) -> Result<QuadResult> {
    GaussKronrod::new(abs_tol, rel_tol).integrate(f, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| x.powi(13) - 3.0 * x.powi(7), -1.0, 2.0, 0.0, 1e-13).unwrap();
        let oracle = (2f64.powi(14) - 1.0) / 14.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0;
        assert_relative_eq!(r.value, oracle, max_relative = 1e-14);
        assert_eq!(r.evals, 15);
    }

    #[test]
    fn peaked_and_singular_integrands() {
        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 1e-12).unwrap();
        assert_relative_eq!(r.value, 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan(), max_relative = 1e-11);
        let r = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0, 1e-9, 0.0).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn reversed_interval_flips_sign() {
        let r = integrate(f64::exp, 1.0, 0.0, 0.0, 1e-13).unwrap();
        assert_relative_eq!(r.value, 1.0 - std::f64::consts::E, max_relative = 1e-14);
    }

    #[test]
    fn nan_integrand_is_an_error() {
        assert!(integrate(|_| f64::NAN, 0.0, 1.0, 1e-10, 0.0).is_err());
    }
}
