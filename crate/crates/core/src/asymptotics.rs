//! Volume growth of spheres and balls, entropy, isoperimetric ratios, the
//! Margulis function and horosphere growth exponents.
//!
//! Volumes grow like `e^{nhr}` and overflow quickly in high dimension, so the
//! curve keeps logarithms and the ball volume is integrated in the scaled form
//! `W(r) = e^{-gr} ∫_0^r θ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jacobi::{self, sphere_flow, JacobiOptions};
use crate::profile::{CurvatureProfile, RossProfile};
use crate::report::{Check, Table};

/// Volume of the unit sphere `Sⁿ ⊂ ℝⁿ⁺¹`.
pub fn sphere_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 1.0) * sphere_volume(n - 2),
    }
}

/// Weighted set of directions: `vol(S_x(r)) ≈ Σ wᵢ θ(uᵢ, r)`, where each
/// direction is described by its curvature profile.
#[derive(Debug, Clone)]
pub struct DirectionQuadrature {
    pub nodes: Vec<(f64, CurvatureProfile)>,
}

impl DirectionQuadrature {
    /// One direction carrying the full sphere volume.
    pub fn isotropic(p: &CurvatureProfile) -> Self {
        DirectionQuadrature {
            nodes: vec![(sphere_volume(p.dim()), p.clone())],
        }
    }

    /// Trapezoidal rule over `φ ∈ [0, 2π)` for a surface, with the profile of
    /// the direction `φ` supplied by `profile_at`.
    pub fn trapezoid_circle(m: usize, profile_at: impl Fn(f64) -> CurvatureProfile) -> Self {
        let w = 2.0 * std::f64::consts::PI / m as f64;
        DirectionQuadrature {
            nodes: (0..m).map(|i| (w, profile_at(i as f64 * w))).collect(),
        }
    }

    fn dim(&self) -> Result<usize> {
        let n = self.nodes.first().map(|(_, p)| p.dim()).ok_or_else(|| {
            Error::InvalidArgument("direction quadrature has no nodes".into())
        })?;
        if self.nodes.iter().any(|(_, p)| p.dim() != n) {
            return invalid("direction quadrature mixes dimensions");
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeCurve {
    pub radii: Vec<f64>,
    pub log_sphere_vol: Vec<f64>,
    pub log_ball_vol: Vec<f64>,
    /// `vol(S(r)) e^{-gr}`.
    pub normalized_sphere: Vec<f64>,
    /// `vol(B(r)) e^{-gr}`.
    pub normalized_ball: Vec<f64>,
    /// Exponential rate `g` used for the normalized columns.
    pub rate: f64,
    pub n: usize,
}

impl VolumeCurve {
    pub fn sphere_vol(&self, i: usize) -> f64 {
        self.log_sphere_vol[i].exp()
    }

    pub fn ball_vol(&self, i: usize) -> f64 {
        self.log_ball_vol[i].exp()
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn to_table(&self, name: &str) -> Table {
        let mut t = Table::new(
            name,
            &["r", "sphere_vol", "ball_vol", "normalized", "log_sphere_vol", "log_ball_vol", "normalized_ball"],
        );
        for i in 0..self.len() {
            t.push(vec![
                self.radii[i],
                self.sphere_vol(i),
                self.ball_vol(i),
                self.normalized_sphere[i],
                self.log_sphere_vol[i],
                self.log_ball_vol[i],
                self.normalized_ball[i],
            ]);
        }
        t
    }
}

fn log_sum_exp(terms: &[(f64, f64)]) -> f64 {
    // Σ wᵢ e^{lᵢ} for positive weights.
    let m = terms.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|&(w, l)| w * (l - m).exp()).sum::<f64>().ln()
}

/// Sphere and ball volumes on an increasing grid. `rate` is the exponent
/// used to normalize the curve, normally `nh`.
pub fn volume_curve(quad: &DirectionQuadrature, radii: &[f64], rate: f64) -> Result<VolumeCurve> {
    let n = quad.dim()?;
    if quad.nodes.iter().any(|(_, p)| p.lower_pinch().is_euclidean()) {
        return invalid("volume curves need a > 0");
    }
    if !(rate > 0.0) {
        return invalid(format!("normalizing rate must be positive, got {rate}"));
    }
    let opts = JacobiOptions::default();
    let flows = quad
        .nodes
        .par_iter()
        .map(|(_, p)| sphere_flow(p, radii, Some(rate), &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut vc = VolumeCurve {
        radii: radii.to_vec(),
        log_sphere_vol: Vec::with_capacity(radii.len()),
        log_ball_vol: Vec::with_capacity(radii.len()),
        normalized_sphere: Vec::with_capacity(radii.len()),
        normalized_ball: Vec::with_capacity(radii.len()),
        rate,
        n,
    };
    for (i, &r) in radii.iter().enumerate() {
        let sphere: Vec<(f64, f64)> = quad
            .nodes
            .iter()
            .zip(&flows)
            .map(|((w, _), f)| (*w, f[i].log_theta))
            .collect();
        let ball: Vec<(f64, f64)> = quad
            .nodes
            .iter()
            .zip(&flows)
            .map(|((w, _), f)| (*w, f[i].scaled_ball.expect("volume requested").ln()))
            .collect();
        let ls = log_sum_exp(&sphere);
        let lb_scaled = log_sum_exp(&ball);
        vc.log_sphere_vol.push(ls);
        vc.log_ball_vol.push(lb_scaled + rate * r);
        vc.normalized_sphere.push((ls - rate * r).exp());
        vc.normalized_ball.push(lb_scaled.exp());
    }
    Ok(vc)
}

/// Evenly spaced grid `lo, …, hi` with `count` points.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the linear fit.
    pub residual: f64,
    pub window: (f64, f64),
}

/// Least-squares slope of `log V(r)` over the grid points inside `window`.
pub fn entropy_estimate(vc: &VolumeCurve, window: (f64, f64)) -> Result<EntropyEstimate> {
    let (lo, hi) = window;
    if !(hi - lo >= 10.0 - 1e-12) {
        return invalid(format!("entropy window must span at least 10, got [{lo}, {hi}]"));
    }
    let first = vc.radii.first().copied().unwrap_or(f64::NAN);
    let last = vc.radii.last().copied().unwrap_or(f64::NAN);
    if !(lo >= first - 1e-12 && hi <= last + 1e-12) {
        return invalid(format!("window [{lo}, {hi}] outside grid [{first}, {last}]"));
    }
    let pts: Vec<(f64, f64)> = vc
        .radii
        .iter()
        .zip(&vc.log_ball_vol)
        .filter(|(r, _)| **r >= lo - 1e-12 && **r <= hi + 1e-12)
        .map(|(r, l)| (*r, *l))
        .collect();
    if pts.len() < 3 {
        return invalid("entropy window contains fewer than 3 grid points");
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(EntropyEstimate {
        slope,
        intercept,
        residual,
        window,
    })
}

/// `nh V(r) ≤ V'(r)` at every grid radius, as one worst-case check.
pub fn isoperimetric_check(vc: &VolumeCurve, h: f64, slack: f64) -> Check {
    let nh = vc.n as f64 * h;
    let worst = vc
        .log_ball_vol
        .iter()
        .zip(&vc.log_sphere_vol)
        .map(|(lb, ls)| nh * (lb - ls).exp())
        .fold(f64::NEG_INFINITY, f64::max);
    Check::at_most("isoperimetric: max_r nh V(r) / V'(r) <= 1", worst, 1.0, slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MargulisValue {
    /// `lim vol(S(r)) e^{-nhr}`, evaluated at `r_max`.
    pub m: f64,
    /// `∫ τ(u) du` over the direction quadrature.
    pub m_quadrature: f64,
    /// `lim vol(B(r)) e^{-nhr}`, evaluated at `r_max`.
    pub ball_limit: f64,
    /// `m ε(r_max)`, a bound on `|m - v(r_max) e^{-nh r_max}|`.
    pub certificate: f64,
    pub r_max: f64,
}

/// Margulis function at the base point, by the volume limit and by `∫ τ`.
pub fn margulis(quad: &DirectionQuadrature, h: f64, r_max: f64) -> Result<MargulisValue> {
    let n = quad.dim()?;
    let nh = n as f64 * h;
    let vc = volume_curve(quad, &[r_max], nh)?;
    let m = vc.normalized_sphere[0];
    let taus = quad
        .nodes
        .par_iter()
        .map(|(w, p)| jacobi::tau_from_tensors(p, r_max.max(jacobi::default_r_max(p)?)).map(|t| w * t.tau))
        .collect::<Result<Vec<f64>>>()?;
    let m_quadrature = taus.iter().sum();
    let a = quad
        .nodes
        .iter()
        .map(|(_, p)| p.lower_pinch())
        .fold(quad.nodes[0].1.lower_pinch(), |x, y| if y < x { y } else { x });
    let eps = jacobi::epsilon_bound(a, n, r_max)?;
    Ok(MargulisValue {
        m,
        m_quadrature,
        ball_limit: vc.normalized_ball[0],
        certificate: m * eps,
        r_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthExponent {
    /// `nh / a` with `h` computed from the horosphere operator.
    pub bound: f64,
    /// `(n - d) + 2d`.
    pub actual: usize,
    /// `|bound - round(bound)|`.
    pub certificate: f64,
}

impl GrowthExponent {
    pub fn is_exact(&self, tol: f64) -> bool {
        self.certificate <= tol && self.bound.round() as usize == self.actual
    }
}

/// Polynomial growth exponent of horospheres: the bound `nh/a` against the
/// homogeneous dimension of the horosphere group.
pub fn horosphere_growth_exponent(p: &RossProfile) -> Result<GrowthExponent> {
    let prof = p.profile();
    let h = jacobi::horosphere_mean_curvature(&prof)?;
    let bound = p.n() as f64 * h / p.scale;
    Ok(GrowthExponent {
        bound,
        actual: p.homogeneous_dimension(),
        certificate: (bound - bound.round()).abs(),
    })
}
