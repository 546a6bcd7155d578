//! Busemann functions, harmonic and visual boundary densities on real
//! hyperbolic space `H^{n+1}(-a²)` in the Poincaré ball, and the horocyclic
//! mean-value experiment on the hyperbolic plane.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::ModelCurvature;
use crate::error::{invalid, Result};
use crate::expr::ScalarFn;
use crate::quadrature::GaussKronrod;
use crate::report::{Check, Table};

/// Step of the central differences used for numerical Jacobians.
const FD_STEP: f64 = 1e-5;
pub const VISUAL_T: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(DVector<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint(DVector<f64>);

impl BallPoint {
    pub fn new(coords: &[f64]) -> Result<Self> {
        let v = DVector::from_column_slice(coords);
        if coords.is_empty() || !(v.norm_squared() < 1.0) {
            return invalid(format!("ball point must lie in the open unit ball, got {coords:?}"));
        }
        Ok(BallPoint(v))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(DVector::zeros(dim))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Point at distance `t` from the origin toward `xi`.
    pub fn toward(a: ModelCurvature, xi: &BoundaryPoint, t: f64) -> Self {
        BallPoint(&xi.0 * (0.5 * a.a() * t).tanh())
    }
}

impl BoundaryPoint {
    /// Unit vector; inputs within `1e-9` of unit norm are renormalized.
    pub fn new(coords: &[f64]) -> Result<Self> {
        let v = DVector::from_column_slice(coords);
        let n = v.norm();
        if coords.is_empty() || !((n - 1.0).abs() <= 1e-9) {
            return invalid(format!("boundary point must be a unit vector, got norm {n}"));
        }
        Ok(BoundaryPoint(v / n))
    }

    pub fn from_angle(theta: f64) -> Self {
        BoundaryPoint(DVector::from_column_slice(&[theta.cos(), theta.sin()]))
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }
}

fn positive(a: ModelCurvature) -> Result<f64> {
    if a.a() > 0.0 {
        Ok(a.a())
    } else {
        invalid("boundary computations need a > 0")
    }
}

fn same_dim(p: &DVector<f64>, q: &DVector<f64>) -> Result<()> {
    if p.len() != q.len() {
        return invalid(format!("dimension mismatch: {} vs {}", p.len(), q.len()));
    }
    Ok(())
}

/// Möbius translation of the ball taking the origin to `y`.
pub fn mobius(y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let yz = y.dot(z);
    let y2 = y.norm_squared();
    let z2 = z.norm_squared();
    (y * (1.0 + 2.0 * yz + z2) + z * (1.0 - y2)) / (1.0 + 2.0 * yz + y2 * z2)
}

/// `acosh(1 + δ)` without cancellation for small `δ`.
fn acosh1p(d: f64) -> f64 {
    (d + (d * (d + 2.0)).sqrt()).ln_1p()
}

/// Distance given the conformal factors `1 - |x|²` and `1 - |y|²`.
fn distance_with(a: f64, x: &DVector<f64>, y: &DVector<f64>, cx: f64, cy: f64) -> f64 {
    acosh1p(2.0 * (x - y).norm_squared() / (cx * cy)) / a
}

pub fn ball_distance(a: ModelCurvature, x: &BallPoint, y: &BallPoint) -> Result<f64> {
    let a = positive(a)?;
    same_dim(&x.0, &y.0)?;
    Ok(distance_with(a, &x.0, &y.0, 1.0 - x.0.norm_squared(), 1.0 - y.0.norm_squared()))
}

/// Busemann function of `xi` normalized to vanish at the origin:
/// `(1/a) ln(|x - ξ|² / (1 - |x|²))`.
pub fn busemann(a: ModelCurvature, x: &BallPoint, xi: &BoundaryPoint) -> Result<f64> {
    let a = positive(a)?;
    same_dim(&x.0, &xi.0)?;
    Ok(((x.0.clone() - &xi.0).norm_squared() / (1.0 - x.0.norm_squared())).ln() / a)
}

/// `d(x, γ(t)) - t` for the ray `γ` from the origin to `xi`.
pub fn busemann_limit(a: ModelCurvature, x: &BallPoint, xi: &BoundaryPoint, t: f64) -> Result<f64> {
    let ap = positive(a)?;
    same_dim(&x.0, &xi.0)?;
    let g = BallPoint::toward(a, xi, t);
    let c = (0.5 * ap * t).cosh();
    Ok(distance_with(ap, &x.0, &g.0, 1.0 - x.0.norm_squared(), 1.0 / (c * c)) - t)
}

/// Riemannian norm of the central-difference gradient of `b_ξ`.
pub fn busemann_gradient_norm(a: ModelCurvature, x: &BallPoint, xi: &BoundaryPoint, h: f64) -> Result<f64> {
    let ap = positive(a)?;
    let mut grad2 = 0.0;
    for i in 0..x.dim() {
        let mut p = x.0.clone();
        let mut m = x.0.clone();
        p[i] += h;
        m[i] -= h;
        let d = (busemann(a, &BallPoint(p), xi)? - busemann(a, &BallPoint(m), xi)?) / (2.0 * h);
        grad2 += d * d;
    }
    Ok(grad2.sqrt() * ap * (1.0 - x.0.norm_squared()) / 2.0)
}

/// Poisson kernel of the ball for `H^{n+1}`: `((1 - |x|²) / |x - ξ|²)^n`.
pub fn poisson_kernel(x: &BallPoint, xi: &BoundaryPoint) -> f64 {
    let n = (x.dim() - 1) as i32;
    ((1.0 - x.0.norm_squared()) / (x.0.clone() - &xi.0).norm_squared()).powi(n)
}

/// `dμ_x/dμ_y(ξ) = exp(-n h (b_ξ(x) - b_ξ(y)))` with `h = a`.
pub fn harmonic_density_ratio(a: ModelCurvature, x: &BallPoint, y: &BallPoint, xi: &BoundaryPoint) -> Result<f64> {
    same_dim(&x.0, &y.0)?;
    let n = (x.dim() - 1) as f64;
    Ok((-n * a.a() * (busemann(a, x, xi)? - busemann(a, y, xi)?)).exp())
}

/// Visual density ratio for a general asymptotically harmonic manifold,
/// `τ(φ_y⁻¹ξ) / τ(φ_x⁻¹ξ) · exp(-n h (b_ξ(x) - b_ξ(y)))`.
pub fn visual_density_ratio(tau_from_y: f64, tau_from_x: f64, nh: f64, bx: f64, by: f64) -> Result<f64> {
    if !(tau_from_y > 0.0 && tau_from_x > 0.0) {
        return invalid("tau values must be positive");
    }
    Ok(tau_from_y / tau_from_x * (-nh * (bx - by)).exp())
}

/// Orthonormal basis of the complement of the unit vector `v`.
fn complement_basis(v: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = v.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()));
    for &k in &order {
        if basis.len() == m - 1 {
            break;
        }
        let mut e = DVector::zeros(m);
        e[k] = 1.0;
        e -= v * v[k];
        for b in &basis {
            let c = b.dot(&e);
            e -= b * c;
        }
        let n = e.norm();
        if n > 1e-8 {
            basis.push(e / n);
        }
    }
    basis
}

struct VisualFrame {
    a: f64,
    /// `x` seen from `y` placed at the origin.
    x: DVector<f64>,
    cx: f64,
    d_xy: f64,
    t: f64,
}

impl VisualFrame {
    fn point_on_ray(&self, v: &DVector<f64>, rho: f64) -> (DVector<f64>, f64) {
        let c = (0.5 * self.a * rho).cosh();
        (v * (0.5 * self.a * rho).tanh(), 1.0 / (c * c))
    }

    /// Direction from `x` to the point where the ray from `y` with
    /// direction `v` meets the sphere of radius `t` about `x`, and the
    /// cosine of the angle between the two radial fields there.
    fn project(&self, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let dist = |rho: f64| {
            let (p, cp) = self.point_on_ray(v, rho);
            distance_with(self.a, &self.x, &p, self.cx, cp)
        };
        let (mut lo, mut hi) = ((self.t - self.d_xy).max(0.0), self.t + self.d_xy);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if dist(mid) < self.t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rho = 0.5 * (lo + hi);
        let a = self.a;
        let cos = ((a * rho).cosh() * (a * self.t).cosh() - (a * self.d_xy).cosh())
            / ((a * rho).sinh() * (a * self.t).sinh());
        let (p, _) = self.point_on_ray(v, rho);
        let u = mobius(&-self.x.clone(), &p);
        Ok((u.normalize(), cos))
    }
}

/// Finite-`t` visual density ratio `dλ_x/dλ_y(ξ)`: the Jacobian at the
/// direction of `ξ` of the map from directions at `y` to directions at `x`
/// through the sphere of radius `t` about `x`.
pub fn visual_density_ratio_numeric(
    a: ModelCurvature,
    x: &BallPoint,
    y: &BallPoint,
    xi: &BoundaryPoint,
    t: f64,
) -> Result<f64> {
    let ap = positive(a)?;
    same_dim(&x.0, &y.0)?;
    same_dim(&x.0, &xi.0)?;
    let d_xy = ball_distance(a, x, y)?;
    if !(t > d_xy) {
        return invalid(format!("radius {t} does not exceed d(x, y) = {d_xy}"));
    }
    let ny = -y.0.clone();
    let xr = mobius(&ny, &x.0);
    let frame = VisualFrame {
        a: ap,
        cx: 1.0 - xr.norm_squared(),
        x: xr,
        d_xy,
        t,
    };
    let v = mobius(&ny, &xi.0).normalize();
    let (u, cos) = frame.project(&v)?;
    if !(cos > 0.0) {
        return invalid(format!("radius {t} too small: radial fields make an obtuse angle"));
    }
    let ev = complement_basis(&v);
    let eu = complement_basis(&u);
    let m = ev.len();
    let mut jac = DMatrix::zeros(m, m);
    for (i, e) in ev.iter().enumerate() {
        let (up, _) = frame.project(&(&v + e * FD_STEP).normalize())?;
        let (um, _) = frame.project(&(&v - e * FD_STEP).normalize())?;
        let d = (up - um) / (2.0 * FD_STEP);
        for (j, f) in eu.iter().enumerate() {
            jac[(j, i)] = f.dot(&d);
        }
    }
    Ok(jac.determinant().abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRatio {
    pub visual: f64,
    pub harmonic: f64,
}

pub fn density_ratio(a: ModelCurvature, x: &BallPoint, y: &BallPoint, xi: &BoundaryPoint, t: f64) -> Result<DensityRatio> {
    Ok(DensityRatio {
        visual: visual_density_ratio_numeric(a, x, y, xi, t)?,
        harmonic: harmonic_density_ratio(a, x, y, xi)?,
    })
}

fn random_ball(rng: &mut ChaCha8Rng, dim: usize, max_norm: f64) -> BallPoint {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        if v.norm() < 1.0 {
            return BallPoint(v * max_norm);
        }
    }
}

fn random_boundary(rng: &mut ChaCha8Rng, dim: usize) -> BoundaryPoint {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return BoundaryPoint(v / n);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryOutcome {
    pub checks: Vec<Check>,
    pub table: Table,
}

/// Random checks of the boundary identities on `H^dim(-a²)`: harmonic ratio
/// against the Poisson kernel, cocycle identities, Busemann normalization,
/// gradient and limit definition, and the finite-`t` visual Jacobian.
pub fn verify_boundary(a: f64, dim: usize, samples: usize, visual_samples: usize, seed: u64) -> Result<BoundaryOutcome> {
    let k = ModelCurvature::new(a)?;
    positive(k)?;
    if dim < 2 {
        return invalid("ball dimension must be at least 2");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples: Vec<(BallPoint, BallPoint, BallPoint, BoundaryPoint)> = (0..samples)
        .map(|_| {
            (
                random_ball(&mut rng, dim, 0.9),
                random_ball(&mut rng, dim, 0.9),
                random_ball(&mut rng, dim, 0.9),
                random_boundary(&mut rng, dim),
            )
        })
        .collect();
    let mut poisson = 0.0f64;
    let mut cocycle_h = 0.0f64;
    let mut busemann_lim = 0.0f64;
    let mut grad = 0.0f64;
    for (x, y, z, xi) in &triples {
        let r = harmonic_density_ratio(k, x, y, xi)?;
        let oracle = poisson_kernel(x, xi) / poisson_kernel(y, xi);
        poisson = poisson.max(((r - oracle) / oracle).abs());
        let rxz = harmonic_density_ratio(k, x, z, xi)?;
        let prod = r * harmonic_density_ratio(k, y, z, xi)?;
        cocycle_h = cocycle_h.max(((prod - rxz) / rxz).abs());
        busemann_lim = busemann_lim.max((busemann(k, x, xi)? - busemann_limit(k, x, xi, VISUAL_T)?).abs());
        grad = grad.max((busemann_gradient_norm(k, x, xi, 1e-6)? - 1.0).abs());
    }
    let origin = busemann(k, &BallPoint::origin(dim), &triples[0].3)?;
    let mut table = Table::new("visual_density", &["sample", "visual", "harmonic", "relative_error"]);
    let visual: Vec<(f64, f64, f64)> = triples
        .par_iter()
        .take(visual_samples)
        .map(|(x, y, z, xi)| {
            let d = density_ratio(k, x, y, xi, VISUAL_T)?;
            let vz = visual_density_ratio_numeric(k, y, z, xi, VISUAL_T)?;
            let vxz = visual_density_ratio_numeric(k, x, z, xi, VISUAL_T)?;
            Ok((d.visual, d.harmonic, (d.visual * vz - vxz).abs() / vxz))
        })
        .collect::<Result<_>>()?;
    let mut visual_err = 0.0f64;
    let mut cocycle_v = 0.0f64;
    for (i, (v, h, c)) in visual.iter().enumerate() {
        let e = ((v - h) / h).abs();
        visual_err = visual_err.max(e);
        cocycle_v = cocycle_v.max(*c);
        table.push(vec![i as f64, *v, *h, e]);
    }
    let tag = format!("H^{dim}({a})");
    Ok(BoundaryOutcome {
        checks: vec![
            Check::close(format!("{tag}: Busemann vanishes at origin"), origin, 0.0, 1e-15),
            Check::close(format!("{tag}: Busemann vs limit definition at t = 30"), busemann_lim, 0.0, 1e-8),
            Check::close(format!("{tag}: Busemann gradient norm"), grad, 0.0, 1e-6),
            Check::close(format!("{tag}: harmonic ratio vs Poisson kernel ratio"), poisson, 0.0, 1e-10),
            Check::close(format!("{tag}: harmonic ratio cocycle"), cocycle_h, 0.0, 1e-12),
            Check::close(format!("{tag}: visual Jacobian at t = 30 vs closed form"), visual_err, 0.0, 1e-4),
            Check::close(format!("{tag}: visual ratio cocycle"), cocycle_v, 0.0, 1e-4),
        ],
        table,
    })
}

/// Relative error of the finite-`t` visual ratio against the closed form at
/// each radius in `ts`.
pub fn visual_convergence(a: f64, x: &BallPoint, y: &BallPoint, xi: &BoundaryPoint, ts: &[f64]) -> Result<Vec<(f64, f64)>> {
    let k = ModelCurvature::new(a)?;
    let h = harmonic_density_ratio(k, x, y, xi)?;
    ts.iter()
        .map(|&t| Ok((t, ((visual_density_ratio_numeric(k, x, y, xi, t)? - h) / h).abs())))
        .collect()
}

/// Horocyclic means on `H²(-a²)` of the bounded harmonic extension of a
/// boundary function. The upper half-plane is mapped to the disc with
/// `i ↦ 0` and `∞ ↦ ξ`; horocycles about `ξ` are the lines `Im z = e^{a t}`,
/// with arclength `dx / (a y)`.
#[derive(Debug, Clone)]
pub struct HorocyclicMeans {
    a: f64,
    xi_angle: f64,
    g: ScalarFn,
    inner: GaussKronrod,
    outer: GaussKronrod,
}

impl HorocyclicMeans {
    pub fn new(a: f64, xi_angle: f64, g: ScalarFn) -> Result<Self> {
        positive(ModelCurvature::new(a)?)?;
        Ok(HorocyclicMeans {
            a,
            xi_angle,
            g,
            inner: GaussKronrod::new(1e-15, 1e-13),
            outer: GaussKronrod::new(1e-15, 1e-13),
        })
    }

    /// Boundary value at the real point `u`, pulled back from the circle.
    pub fn boundary_value(&self, u: f64) -> f64 {
        self.g.eval(self.xi_angle - 2.0 * 1f64.atan2(u))
    }

    pub fn value_at_xi(&self) -> f64 {
        self.g.eval(self.xi_angle)
    }

    /// Poisson extension at `x + i y`, with `u = x + y tan β`.
    pub fn harmonic(&self, x: f64, y: f64) -> Result<f64> {
        let r = self
            .inner
            .integrate(|b| self.boundary_value(x + y * b.tan()), -0.5 * PI, 0.5 * PI)?;
        Ok(r.value / PI)
    }

    /// Mean of the extension over the horocyclic ball of radius `r` about the
    /// base point, flowed to the horocycle at level `t`.
    pub fn mean(&self, r: f64, t: f64) -> Result<f64> {
        if !(r > 0.0) {
            return invalid(format!("horocyclic radius must be > 0, got {r}"));
        }
        let w = self.a * r;
        let y = (self.a * t).exp();
        let mut err = None;
        let q = self.outer.integrate(
            |x| match self.harmonic(x, y) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            },
            -w,
            w,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(q?.value / (2.0 * w))
    }

    /// Same mean by exchanging the integrals: the horocyclic average of the
    /// half-plane Poisson kernel is elementary.
    pub fn mean_by_kernel(&self, r: f64, t: f64) -> Result<f64> {
        let w = self.a * r;
        let y = (self.a * t).exp();
        let kernel = |u: f64| (((w - u) / y).atan() + ((w + u) / y).atan()) / (2.0 * w * PI);
        let q = self.inner.integrate(
            |b| {
                let u = w * b.tan();
                let c = b.cos();
                self.boundary_value(u) * kernel(u) * w / (c * c)
            },
            -0.5 * PI,
            0.5 * PI,
        )?;
        Ok(q.value)
    }
}

pub fn default_radius_schedule(budget: u32) -> Vec<f64> {
    (0..=budget).map(|j| 2f64.powi(j as i32)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanValueRow {
    pub radius: f64,
    pub mean: f64,
    pub deviation: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MeanValueOutcome {
    pub value_at_xi: f64,
    pub rows: Vec<MeanValueRow>,
    pub best_radius: f64,
    pub best_deviation: f64,
    pub checks: Vec<Check>,
    pub table: Table,
}

/// Levels, in units of `1/a`, at which the `g''` residual is sampled, and
/// the finite-difference step.
const RESIDUAL_CENTERS: [f64; 3] = [-0.5, 0.0, 0.5];
const RESIDUAL_STEP: f64 = 0.1;

/// Horocyclic means `g_r(0)` on a radius schedule, their deviation from the
/// boundary value at `ξ`, and the residual `|g_r'' - a g_r'|` of the
/// limiting equation, from fourth-order differences in `t`.
pub fn mean_value_experiment(
    a: f64,
    xi_angle: f64,
    name: &str,
    boundary: &ScalarFn,
    radii: &[f64],
    tol: f64,
) -> Result<MeanValueOutcome> {
    if radii.is_empty() {
        return invalid("radius schedule is empty");
    }
    let hm = HorocyclicMeans::new(a, xi_angle, boundary.clone())?;
    let fxi = hm.value_at_xi();
    let dt = RESIDUAL_STEP / a;
    let rows: Vec<MeanValueRow> = radii
        .par_iter()
        .map(|&r| {
            let mut residual = 0.0f64;
            let mut mean = f64::NAN;
            for &c in &RESIDUAL_CENTERS {
                let t0 = c / a;
                let g: Vec<f64> = (-2..=2)
                    .map(|i| hm.mean(r, t0 + i as f64 * dt))
                    .collect::<Result<_>>()?;
                if c == 0.0 {
                    mean = g[2];
                }
                let d1 = (g[0] - 8.0 * g[1] + 8.0 * g[3] - g[4]) / (12.0 * dt);
                let d2 = (-g[0] + 16.0 * g[1] - 30.0 * g[2] + 16.0 * g[3] - g[4]) / (12.0 * dt * dt);
                residual = residual.max((d2 - a * d1).abs());
            }
            Ok(MeanValueRow {
                radius: r,
                mean,
                deviation: (mean - fxi).abs(),
                residual,
            })
        })
        .collect::<Result<_>>()?;
    let best = rows
        .iter()
        .min_by(|p, q| p.deviation.total_cmp(&q.deviation))
        .expect("schedule is non-empty");
    let (best_radius, best_deviation) = (best.radius, best.deviation);
    let mut table = Table::new(format!("mean_value_{name}"), &["radius", "mean", "deviation", "residual"]);
    for row in &rows {
        table.push(vec![row.radius, row.mean, row.deviation, row.residual]);
    }
    let mut checks = vec![Check::at_most(format!("{name}: best-radius deviation from F(xi)"), best_deviation, tol, 0.0)];
    if rows.len() >= 4 {
        let tail: Vec<f64> = rows[rows.len() - 4..].iter().map(|r| r.residual).collect();
        let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
        checks.push(
            Check::flag(format!("{name}: g residual decreases over last three doublings"), decreasing)
                .with_certificate(tail[3]),
        );
    }
    let last = rows.last().expect("schedule is non-empty");
    checks.push(
        Check::flag(format!("{name}: full-schedule deviation recorded"), last.deviation.is_finite())
            .with_certificate(last.deviation),
    );
    Ok(MeanValueOutcome {
        value_at_xi: fxi,
        rows,
        best_radius,
        best_deviation,
        checks,
        table,
    })
}

/// Default bump functions on the circle, as expressions in `theta`.
pub const DEFAULT_BUMPS: [(&str, &str); 3] = [
    ("bump_at_xi", "exp(-2*(1 - cos(theta)))"),
    ("smoothed_indicator", "1/(1 + exp(8*(cos(1) - cos(theta))))"),
    ("offset_bump", "exp(-4*(1 - cos(theta - 2))) + 0.5*cos(theta)"),
];
