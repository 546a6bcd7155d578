//! Rotationally symmetric Cartan-Hadamard surfaces `dr² + f(r)² dφ²`.
//!
//! Geodesics are integrated in signed polar coordinates: `r` may go negative,
//! which is the same point as `(-r, φ + π)`, so shots through the pole need
//! no special casing. Directions are angles `ψ` measured from the outward
//! radial vector toward `∂φ`; at the pole the direction is the absolute
//! polar angle instead.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{c_a, cot_a, f_comparison, ModelCurvature};
use crate::error::{invalid, Error, Result};
use crate::expr::ScalarFn;
use crate::ode::{Dop853, OdeSystem};
use crate::report::{Check, Table};

pub const DEFAULT_TOL: f64 = 1e-12;
/// Initial directions closer than this to radial give radial shots.
const RADIAL_SNAP: f64 = 1e-13;
const SAMPLE_SPAN: f64 = 40.0;
const SAMPLE_COUNT: usize = 4000;
const PINCH_TOL: f64 = 1e-9;
const BISECT_MAX: usize = 200;
const MERIDIAN_SEGMENTS: usize = 8;
const MERIDIAN_STEPS: usize = 20_000;
const HORO_SCALE: f64 = 20.0;
pub const HORO_CONVERGENCE_TOL: f64 = 1e-9;
/// Relative slack allowed on sampled inequalities.
pub const COMPARISON_SLACK: f64 = 1e-6;
pub const TANGENT_SLACK: f64 = 1e-8;
pub const THETAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Reduce an angle to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Debug, Clone)]
pub struct WarpedSurface {
    name: String,
    f: ScalarFn,
    df: ScalarFn,
    d2f: ScalarFn,
    k0: f64,
    a: f64,
    b: f64,
    constant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub r: f64,
    pub phi: f64,
}

impl SurfacePoint {
    pub const POLE: SurfacePoint = SurfacePoint { r: 0.0, phi: 0.0 };

    pub fn new(r: f64, phi: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() || !phi.is_finite() {
            return invalid(format!("bad surface point ({r}, {phi})"));
        }
        Ok(Self::reduced(r, phi))
    }

    fn reduced(r: f64, phi: f64) -> Self {
        if r == 0.0 {
            SurfacePoint::POLE
        } else {
            SurfacePoint { r, phi: phi.rem_euclid(2.0 * PI) }
        }
    }

    pub fn is_pole(&self) -> bool {
        self.r == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub t: f64,
    pub position: SurfacePoint,
    /// Angle to the outward radial direction, or the absolute angle at the pole.
    pub direction: f64,
    /// `f(r) sin ψ`, constant along a geodesic.
    pub clairaut: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<GeodesicState>,
    pub clairaut_drift: f64,
}

impl Trajectory {
    pub fn end(&self) -> &GeodesicState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Geodesic from `x` to `y`: its length and initial direction at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub length: f64,
    pub direction: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl WarpedSurface {
    /// Surface with warping function `f` given as an expression in `r`,
    /// checked against `-b² ≤ K ≤ -a²` on a dense grid.
    pub fn new(name: impl Into<String>, f_src: &str, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b >= a && b.is_finite()) {
            return invalid(format!("surface pinch needs 0 < a <= b, got ({a}, {b})"));
        }
        let f = ScalarFn::parse(f_src, "r")?;
        let df = f.derivative();
        let d2f = df.derivative();
        let d3f = d2f.derivative();
        let s = WarpedSurface {
            name: name.into(),
            k0: -d3f.eval(0.0),
            f,
            df,
            d2f,
            a,
            b,
            constant: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// The hyperbolic plane of curvature `-a²`.
    pub fn hyperbolic(a: f64) -> Result<Self> {
        let mut s = Self::new(format!("H2({a})"), &format!("sinh({a:?}*r)/{a:?}"), a, a)?;
        s.constant = true;
        Ok(s)
    }

    /// Default non-constant example with `K` running from `-1.6` at the pole
    /// to `-4` at infinity, declared with pinch `(1, 2)`.
    pub fn pinched() -> Self {
        Self::new("pinched", "0.8*sinh(r) + 0.1*sinh(2*r)", 1.0, 2.0).expect("builtin surface is valid")
    }

    fn validate(&self) -> Result<()> {
        let f0 = self.f.eval(0.0);
        let df0 = self.df.eval(0.0);
        if f0.abs() > 1e-12 || (df0 - 1.0).abs() > 1e-9 {
            return invalid(format!(
                "warping function needs f(0) = 0 and f'(0) = 1, got {f0} and {df0}"
            ));
        }
        let lo = -self.b * self.b;
        let hi = -self.a * self.a;
        for i in 0..=SAMPLE_COUNT {
            let r = SAMPLE_SPAN * i as f64 / SAMPLE_COUNT as f64;
            let k = self.curvature(r);
            let fr = self.f.eval(r);
            if !k.is_finite() || (r > 0.0 && !(fr > 0.0)) {
                return invalid(format!("warping function degenerates at r = {r}"));
            }
            if k < lo * (1.0 + PINCH_TOL) || k > hi * (1.0 - PINCH_TOL) {
                return Err(Error::PinchingViolation { t: r, value: k, lo, hi });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        self.f.source()
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn is_constant_curvature(&self) -> bool {
        self.constant
    }

    /// `f` extended as an odd function.
    pub fn f(&self, r: f64) -> f64 {
        if r < 0.0 {
            -self.f.eval(-r)
        } else {
            self.f.eval(r)
        }
    }

    pub fn df(&self, r: f64) -> f64 {
        self.df.eval(r.abs())
    }

    /// Gaussian curvature `-f''/f`, extended evenly.
    pub fn curvature(&self, r: f64) -> f64 {
        let r = r.abs();
        if r < 1e-6 {
            self.k0
        } else {
            -self.d2f.eval(r) / self.f.eval(r)
        }
    }

    pub fn point(&self, r: f64, phi: f64) -> Result<SurfacePoint> {
        SurfacePoint::new(r, phi)
    }

    fn integrator(tol: f64) -> Dop853 {
        // Pure relative control: far out `ψ ~ c/f(r)` is tiny but carries
        // the Clairaut constant.
        Dop853::with_tolerance(tol, 1e-250)
    }

    /// Raw signed states `[r, φ, ψ, w, w', ...]` at each grid time.
    fn run(
        &self,
        from: SurfacePoint,
        dir: f64,
        fields: &[(f64, f64)],
        grid: &[f64],
        tol: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if !dir.is_finite() {
            return invalid("direction must be finite");
        }
        let mut y0 = if from.is_pole() {
            vec![0.0, dir, 0.0]
        } else {
            vec![from.r, from.phi, dir]
        };
        for &(w, wp) in fields {
            y0.push(w);
            y0.push(wp);
        }
        let radial = !from.is_pole() && dir.sin().abs() < RADIAL_SNAP;
        let sys = GeodesicOde { s: self, fields: fields.len(), radial };
        let mut out = Vec::with_capacity(grid.len());
        let mut last = 0.0;
        for &t in grid {
            if !(t >= last) || !t.is_finite() {
                return invalid(format!("shooting grid must be increasing from 0, got {t}"));
            }
            last = t;
        }
        let zeros = grid.iter().take_while(|&&t| t == 0.0).count();
        for _ in 0..zeros {
            out.push(y0.clone());
        }
        Self::integrator(tol).integrate_grid(&sys, 0.0, &y0, &grid[zeros..], |_, y| {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shooting("non-finite geodesic state".into()));
            }
            out.push(y.to_vec());
            Ok(())
        })?;
        Ok(out)
    }

    fn state_of(&self, t: f64, raw: &[f64]) -> GeodesicState {
        let (mut r, mut phi, mut psi) = (raw[0], raw[1], raw[2]);
        if r < 0.0 {
            r = -r;
            phi += PI;
            psi += PI;
        }
        let clairaut = self.f(raw[0]) * raw[2].sin();
        if r == 0.0 {
            return GeodesicState {
                t,
                position: SurfacePoint::POLE,
                direction: wrap_angle(phi + psi),
                clairaut,
            };
        }
        GeodesicState {
            t,
            position: SurfacePoint::reduced(r, phi),
            direction: wrap_angle(psi),
            clairaut,
        }
    }

    /// Unit-speed geodesic from `from` in direction `dir`, sampled at
    /// `samples + 1` equally spaced times in `[0, length]`.
    pub fn shoot(&self, from: SurfacePoint, dir: f64, length: f64, samples: usize, tol: f64) -> Result<Trajectory> {
        if !(length >= 0.0) || !length.is_finite() {
            return invalid(format!("shot length must be finite and >= 0, got {length}"));
        }
        let samples = samples.max(1);
        let grid: Vec<f64> = (0..=samples).map(|i| length * i as f64 / samples as f64).collect();
        let raw = self.run(from, dir, &[], &grid, tol)?;
        let states: Vec<GeodesicState> = grid.iter().zip(&raw).map(|(&t, y)| self.state_of(t, y)).collect();
        let c0 = states[0].clairaut;
        let clairaut_drift = states.iter().map(|s| (s.clairaut - c0).abs()).fold(0.0, f64::max);
        Ok(Trajectory { states, clairaut_drift })
    }

    /// End state of a shot.
    pub fn exp(&self, from: SurfacePoint, dir: f64, length: f64, tol: f64) -> Result<GeodesicState> {
        let raw = self.run(from, dir, &[], &[length], tol)?;
        Ok(self.state_of(length, &raw[0]))
    }

    /// Radius and arc length where the shot from `(r0, 0)` with direction
    /// `psi0 ∈ (0, π)` crosses the meridian at angle `dphi ∈ (0, π)`, or
    /// `None` if it leaves the disc of radius `cap` first.
    fn meridian_crossing(&self, r0: f64, psi0: f64, dphi: f64, cap: f64, tol: f64) -> Option<(f64, f64)> {
        let sys = MeridianOde { s: self, cap };
        let grid: Vec<f64> = (1..=MERIDIAN_SEGMENTS)
            .map(|i| dphi * i as f64 / MERIDIAN_SEGMENTS as f64)
            .collect();
        let mut integ = Self::integrator(tol);
        integ.max_steps = MERIDIAN_STEPS;
        let mut out = None;
        let res = integ.integrate_grid(&sys, 0.0, &[r0, psi0, 0.0], &grid, |_, y| {
            if !(y[0] < cap) || !(y[1] > 0.0) {
                return Err(Error::Shooting("left the disc".into()));
            }
            out = Some((y[0], y[2]));
            Ok(())
        });
        res.ok().and(out)
    }

    /// Geodesic from `x` to `y`. Off the radial cases the polar angle is
    /// monotone along the connecting geodesic, and the radius at which a shot
    /// crosses the meridian of `y` decreases with the initial angle, so the
    /// angle is found by bisection. The result is re-shot and its endpoint
    /// residual recorded.
    pub fn connect(&self, x: SurfacePoint, y: SurfacePoint, tol: f64) -> Result<Connection> {
        let done = |length, direction| Connection { length, direction, residual: 0.0, iterations: 0 };
        if x == y {
            return Ok(done(0.0, 0.0));
        }
        if x.is_pole() {
            return Ok(done(y.r, y.phi));
        }
        if y.is_pole() {
            return Ok(done(x.r, PI));
        }
        let dphi = wrap_angle(y.phi - x.phi);
        if dphi == 0.0 {
            let dir = if y.r > x.r { 0.0 } else { PI };
            return Ok(done((y.r - x.r).abs(), dir));
        }
        if dphi == PI {
            return Ok(done(x.r + y.r, PI));
        }
        let side = dphi.signum();
        let target = dphi.abs();
        // Distance to the pole is convex along geodesics.
        let cap = x.r.max(y.r) + 1.0;
        let (mut lo, mut hi) = (0.0, PI);
        let mut lo_hit: Option<(f64, f64)> = None;
        let mut hi_hit: Option<(f64, f64)> = None;
        let mut iterations = 0;
        while iterations < BISECT_MAX {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            iterations += 1;
            match self.meridian_crossing(x.r, mid, target, cap, tol) {
                Some(hit) if hit.0 < y.r => {
                    hi = mid;
                    hi_hit = Some(hit);
                }
                Some(hit) => {
                    lo = mid;
                    lo_hit = Some(hit);
                }
                None => lo = mid,
            }
        }
        let (psi, length) = match (lo_hit, hi_hit) {
            (Some(l), Some(h)) if (l.0 - y.r).abs() < (h.0 - y.r).abs() => (lo, l.1),
            (_, Some(h)) => (hi, h.1),
            (Some(l), None) => (lo, l.1),
            (None, None) => {
                return Err(Error::Shooting(format!(
                    "no meridian crossing from ({}, {}) to ({}, {})",
                    x.r, x.phi, y.r, y.phi
                )))
            }
        };
        let direction = side * psi;
        let end = self.exp(x, direction, length, tol)?.position;
        let residual = (end.r - y.r).hypot(self.f(end.r) * wrap_angle(end.phi - y.phi));
        if !(residual <= 1e-8 * (1.0 + self.f(y.r))) {
            return Err(Error::Shooting(format!(
                "geodesic from ({}, {}) to ({}, {}) misses by {residual:e}",
                x.r, x.phi, y.r, y.phi
            )));
        }
        Ok(Connection { length, direction, residual, iterations })
    }

    pub fn distance(&self, x: SurfacePoint, y: SurfacePoint, tol: f64) -> Result<f64> {
        Ok(self.connect(x, y, tol)?.length)
    }

    /// Angle at `vertex` between the geodesics to `p` and `q`.
    pub fn angle_at(&self, vertex: SurfacePoint, p: SurfacePoint, q: SurfacePoint, tol: f64) -> Result<f64> {
        if p == vertex || q == vertex {
            return invalid("angle needs both points distinct from the vertex");
        }
        let dp = self.connect(vertex, p, tol)?.direction;
        let dq = self.connect(vertex, q, tol)?.direction;
        Ok(wrap_angle(dp - dq).abs())
    }

    /// Geodesic curvature `j'/j` of the circle of `radius` about `center`,
    /// at the point reached by leaving `center` in direction `dir`.
    pub fn circle_curvature(&self, center: SurfacePoint, radius: f64, dir: f64, tol: f64) -> Result<f64> {
        if !(radius > 0.0) {
            return invalid(format!("circle radius must be > 0, got {radius}"));
        }
        let raw = self.run(center, dir, &[(0.0, 1.0)], &[radius], tol)?;
        Ok(raw[0][4] / raw[0][3])
    }

    /// Curvatures `w1/w2` of circles through `z` centred along the shot in
    /// direction `dir`, one per radius in the increasing list `radii`.
    fn circle_curvatures_through(&self, z: SurfacePoint, dir: f64, radii: &[f64], tol: f64) -> Result<Vec<f64>> {
        let raw = self.run(z, dir, &[(1.0, 0.0), (0.0, 1.0)], radii, tol)?;
        Ok(raw.iter().map(|y| y[3] / y[5]).collect())
    }

    /// Horocycle curvature at `z` for the horocycle centred at the endpoint
    /// of the ray leaving `z` in direction `dir`, with its Cauchy certificate.
    pub fn horocycle_curvature(&self, z: SurfacePoint, dir: f64, tol: f64) -> Result<(f64, f64)> {
        let rh = HORO_SCALE / self.a;
        let k = self.circle_curvatures_through(z, dir, &[rh, 2.0 * rh], tol)?;
        Ok((k[1], (k[1] - k[0]).abs()))
    }
}

/// Geodesic equations with the polar angle as parameter, for shots with
/// `ψ ∈ (0, π)`; state `(r, ψ, t)`. Frozen once `r` reaches `cap`.
struct MeridianOde<'a> {
    s: &'a WarpedSurface,
    cap: f64,
}

impl OdeSystem for MeridianOde<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _phi: f64, y: &[f64], dy: &mut [f64]) {
        let (r, psi) = (y[0], y[1]);
        if !(r < self.cap) || !(psi > 0.0) {
            dy.fill(0.0);
            return;
        }
        let (sp, cp) = psi.sin_cos();
        let f = self.s.f(r);
        dy[0] = f * cp / sp;
        dy[1] = -self.s.df(r);
        dy[2] = f / sp;
    }
}

struct GeodesicOde<'a> {
    s: &'a WarpedSurface,
    fields: usize,
    radial: bool,
}

impl OdeSystem for GeodesicOde<'_> {
    fn dim(&self) -> usize {
        3 + 2 * self.fields
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (r, psi) = (y[0], y[2]);
        let (sp, cp) = psi.sin_cos();
        dy[0] = cp;
        let f = self.s.f(r);
        if self.radial || sp == 0.0 || f == 0.0 {
            dy[1] = 0.0;
            dy[2] = 0.0;
        } else {
            dy[1] = sp / f;
            dy[2] = -self.s.df(r) * sp / f;
        }
        let k = self.s.curvature(r);
        for i in 0..self.fields {
            let w = y[3 + 2 * i];
            dy[3 + 2 * i] = y[4 + 2 * i];
            dy[4 + 2 * i] = -k * w;
        }
    }
}

fn model(a: f64) -> ModelCurvature {
    ModelCurvature::new(a).expect("pinch is positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleSample {
    pub trial: usize,
    pub theta: f64,
    pub r1: f64,
    pub r2: f64,
    pub alpha: f64,
    pub ratio_a: f64,
    pub f_a: f64,
    pub ratio_b: f64,
    pub f_b: f64,
    /// `(ratio_a - F_a) / max(1, F_a)`; must be `>= 0`.
    pub slack_a: f64,
    /// `(F_b - ratio_b) / max(1, F_b)`; must be `>= 0`.
    pub slack_b: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome<S> {
    pub samples: Vec<S>,
    pub checks: Vec<Check>,
    pub table: Table,
}

#[derive(Debug, Clone, Copy)]
struct TriangleSeed {
    x: SurfacePoint,
    dir: f64,
    r1: f64,
    r2: f64,
    alpha: f64,
}

fn random_point(rng: &mut ChaCha8Rng, r_max: f64) -> SurfacePoint {
    let r = rng.gen_range(0.0..r_max);
    SurfacePoint::reduced(r, rng.gen_range(0.0..2.0 * PI))
}

fn triangle_samples(s: &WarpedSurface, seed: TriangleSeed, trial: usize, tol: f64) -> Result<Vec<TriangleSample>> {
    let ka = model(s.a);
    let kb = model(s.b);
    let dir2 = seed.dir + seed.alpha;
    let y = s.exp(seed.x, seed.dir, seed.r1, tol)?.position;
    let z = s.exp(seed.x, dir2, seed.r2, tol)?.position;
    let d_yz = s.distance(y, z, tol)?;
    let mut out = Vec::with_capacity(THETAS.len());
    for &theta in &THETAS {
        let p = s.exp(seed.x, seed.dir, theta * seed.r1, tol)?.position;
        let q = s.exp(seed.x, dir2, theta * seed.r2, tol)?.position;
        let d_pq = s.distance(p, q, tol)?;
        let ratio_a = c_a(ka, d_yz)? / c_a(ka, d_pq)?;
        let ratio_b = c_a(kb, d_yz)? / c_a(kb, d_pq)?;
        let f_a = f_comparison(ka, seed.r1, seed.r2, seed.alpha.abs(), theta)?;
        let f_b = f_comparison(kb, seed.r1, seed.r2, seed.alpha.abs(), theta)?;
        out.push(TriangleSample {
            trial,
            theta,
            r1: seed.r1,
            r2: seed.r2,
            alpha: seed.alpha.abs(),
            ratio_a,
            f_a,
            ratio_b,
            f_b,
            slack_a: (ratio_a - f_a) / f_a.abs().max(1.0),
            slack_b: (f_b - ratio_b) / f_b.abs().max(1.0),
        });
    }
    Ok(out)
}

/// Sample geodesic triangles with sides `r1, r2 ∈ [0.3, 3]` meeting at an
/// angle in `[0.1, π - 0.1]`, and compare the `C_a` and `C_b` distance
/// ratios against the model-plane values `F_a` and `F_b`.
pub fn verify_triangle_comparison(s: &WarpedSurface, trials: usize, seed: u64) -> Result<SuiteOutcome<TriangleSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<TriangleSeed> = (0..trials)
        .map(|i| {
            let x = if i == 0 { SurfacePoint::POLE } else { random_point(&mut rng, 2.5) };
            let dir = rng.gen_range(-PI..PI);
            let r1 = rng.gen_range(0.3..3.0);
            let r2 = rng.gen_range(0.3..3.0);
            let alpha = rng.gen_range(0.1..PI - 0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            TriangleSeed { x, dir, r1, r2, alpha }
        })
        .collect();
    let nested: Vec<Vec<TriangleSample>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, sd)| triangle_samples(s, *sd, i, DEFAULT_TOL))
        .collect::<Result<_>>()?;
    let samples: Vec<TriangleSample> = nested.into_iter().flatten().collect();

    let mut table = Table::new(
        "triangles",
        &["trial", "theta", "r1", "r2", "alpha", "ratio_a", "f_a", "ratio_b", "f_b", "slack_a", "slack_b"],
    );
    for t in &samples {
        table.push(vec![
            t.trial as f64, t.theta, t.r1, t.r2, t.alpha, t.ratio_a, t.f_a, t.ratio_b, t.f_b, t.slack_a, t.slack_b,
        ]);
    }
    let min_a = samples.iter().map(|t| t.slack_a).fold(f64::INFINITY, f64::min);
    let min_b = samples.iter().map(|t| t.slack_b).fold(f64::INFINITY, f64::min);
    let max_a = samples.iter().map(|t| t.slack_a).fold(f64::NEG_INFINITY, f64::max);
    let max_b = samples.iter().map(|t| t.slack_b).fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![
        Check::at_least(format!("{}: C_a ratio >= F_a (min relative slack)", s.name), min_a, 0.0, COMPARISON_SLACK),
        Check::at_least(format!("{}: C_b ratio <= F_b (min relative slack)", s.name), min_b, 0.0, COMPARISON_SLACK),
        Check::at_least(format!("{}: triangle samples", s.name), samples.len() as f64, (3 * trials) as f64, 0.0),
    ];
    if s.constant {
        let dev = samples
            .iter()
            .map(|t| t.slack_a.abs().max(t.slack_b.abs()))
            .fold(0.0, f64::max);
        checks.push(Check::close(format!("{}: model surface equality", s.name), dev, 0.0, 1e-8));
    } else {
        checks.push(Check::flag(
            format!("{}: strict inequality observed", s.name),
            max_a.max(max_b) > 10.0 * COMPARISON_SLACK,
        ));
    }
    Ok(SuiteOutcome { samples, checks, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentSample {
    pub trial: usize,
    pub r: f64,
    pub big_r: f64,
    pub k_x: f64,
    pub k_y: f64,
    pub k_xi: f64,
    pub horo_certificate: f64,
}

impl TangentSample {
    /// Signed margins of every inequality; each must be `>= 0`.
    fn margins(&self, a: f64, b: f64) -> Result<[f64; 6]> {
        let (ka, kb) = (model(a), model(b));
        let dxy = self.k_x - self.k_y;
        let dxi = self.k_x - self.k_xi;
        let upper = cot_a(ka, self.r)? - cot_a(ka, self.big_r)?;
        let lower = cot_a(kb, self.r)? - cot_a(kb, self.big_r)?;
        let scale = |v: f64| v.abs().max(1.0);
        Ok([
            (dxy - lower) / scale(lower),
            (upper - dxy) / scale(upper),
            dxy,
            dxi,
            (cot_a(ka, self.r)? - a - dxi) / scale(cot_a(ka, self.r)?),
            (dxi - (cot_a(kb, self.r)? - b)) / scale(cot_a(kb, self.r)?),
        ])
    }
}

const TANGENT_NAMES: [&str; 6] = [
    "k_x - k_y >= cot_b r - cot_b R",
    "k_x - k_y <= cot_a r - cot_a R",
    "k_x >= k_y",
    "k_x >= k_xi",
    "k_x - k_xi <= cot_a r - a",
    "k_x - k_xi >= cot_b r - b",
];

/// Sample pairs of circles through a common point `z` with centres on one
/// geodesic from `z` (so they are internally tangent at `z`), plus the
/// horocycle obtained as the radius goes to infinity.
pub fn verify_tangent_circles(s: &WarpedSurface, trials: usize, seed: u64) -> Result<SuiteOutcome<TangentSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rh = HORO_SCALE / s.a;
    let seeds: Vec<(SurfacePoint, f64, f64, f64)> = (0..trials)
        .map(|_| {
            let z = random_point(&mut rng, 3.0);
            let dir = rng.gen_range(-PI..PI);
            let r = rng.gen_range(0.2..3.0);
            let big_r = r + rng.gen_range(0.2..4.0);
            (z, dir, r, big_r)
        })
        .collect();
    let samples: Vec<TangentSample> = seeds
        .par_iter()
        .enumerate()
        .map(|(trial, &(z, dir, r, big_r))| {
            let k = s.circle_curvatures_through(z, dir, &[r, big_r, rh, 2.0 * rh], DEFAULT_TOL)?;
            Ok(TangentSample {
                trial,
                r,
                big_r,
                k_x: k[0],
                k_y: k[1],
                k_xi: k[3],
                horo_certificate: (k[3] - k[2]).abs(),
            })
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new("tangent_circles", &["trial", "r", "R", "k_x", "k_y", "k_xi", "horo_certificate"]);
    let mut worst = [f64::INFINITY; 6];
    let mut equality_dev: f64 = 0.0;
    for t in &samples {
        table.push(vec![t.trial as f64, t.r, t.big_r, t.k_x, t.k_y, t.k_xi, t.horo_certificate]);
        let m = t.margins(s.a, s.b)?;
        for (w, v) in worst.iter_mut().zip(m) {
            *w = w.min(v);
        }
        equality_dev = equality_dev.max(m[0].abs()).max(m[1].abs()).max(m[4].abs()).max(m[5].abs());
    }
    let cert = samples.iter().map(|t| t.horo_certificate).fold(0.0, f64::max);
    let mut checks: Vec<Check> = TANGENT_NAMES
        .iter()
        .zip(worst)
        .map(|(n, w)| Check::at_least(format!("{}: {n}", s.name), w, 0.0, TANGENT_SLACK))
        .collect();
    checks.push(
        Check::at_most(format!("{}: horocycle limit converged", s.name), cert, HORO_CONVERGENCE_TOL, 0.0)
            .with_certificate(cert),
    );
    if s.constant {
        checks.push(Check::close(format!("{}: model surface equality", s.name), equality_dev, 0.0, 1e-8));
    }
    Ok(SuiteOutcome { samples, checks, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoroProfile {
    /// `(t, h(t))` pairs.
    pub points: Vec<(f64, f64)>,
    /// Largest Cauchy difference of the horocycle limits.
    pub certificate: f64,
}

impl HoroProfile {
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, h)| (lo.min(h), hi.max(h)));
        hi - lo
    }
}

/// Curvature `h(t)` at `γ(t)` of the horocycle centred at `γ(-∞)`, along the
/// geodesic through `start`.
pub fn horocurvature_profile(s: &WarpedSurface, start: &GeodesicState, ts: &[f64]) -> Result<HoroProfile> {
    let out: Vec<(f64, f64, f64)> = ts
        .par_iter()
        .map(|&t| {
            let (pos, dir) = if t >= 0.0 {
                let st = s.exp(start.position, start.direction, t, DEFAULT_TOL)?;
                (st.position, st.direction)
            } else {
                let st = s.exp(start.position, start.direction + PI, -t, DEFAULT_TOL)?;
                (st.position, st.direction + PI)
            };
            let (h, cert) = s.horocycle_curvature(pos, dir + PI, DEFAULT_TOL)?;
            Ok((t, h, cert))
        })
        .collect::<Result<_>>()?;
    Ok(HoroProfile {
        certificate: out.iter().map(|p| p.2).fold(0.0, f64::max),
        points: out.into_iter().map(|(t, h, _)| (t, h)).collect(),
    })
}

/// Checks on a horocycle-curvature profile: pinching bounds, convergence,
/// and constancy (model surface) or visible variation (otherwise).
pub fn horocurvature_checks(s: &WarpedSurface, prof: &HoroProfile, spread_min: f64) -> Vec<Check> {
    let lo = prof.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = prof.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![
        Check::at_least(format!("{}: horocycle curvature >= a", s.name), lo, s.a, 1e-9),
        Check::at_most(format!("{}: horocycle curvature <= b", s.name), hi, s.b, 1e-9),
        Check::at_most(format!("{}: horocycle limits converged", s.name), prof.certificate, HORO_CONVERGENCE_TOL, 0.0)
            .with_certificate(prof.certificate),
    ];
    if s.constant {
        checks.push(Check::close(format!("{}: horocycle curvature constant", s.name), hi - lo, 0.0, 1e-9));
    } else {
        checks.push(Check::at_least(format!("{}: horocycle curvature varies", s.name), hi - lo, spread_min, 0.0));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::{angle_from_sides, law_of_cosines};
    use approx::assert_relative_eq;

    fn h2() -> WarpedSurface {
        WarpedSurface::hyperbolic(1.0).unwrap()
    }

    #[test]
    fn builtins_validate() {
        let p = WarpedSurface::pinched();
        assert!((p.curvature(0.0) + 1.6).abs() < 1e-12);
        assert!((p.curvature(30.0) + 4.0).abs() < 1e-9);
        assert!(!p.is_constant_curvature());
        assert!(h2().is_constant_curvature());
        assert_relative_eq!(WarpedSurface::hyperbolic(2.0).unwrap().curvature(3.0), -4.0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_warping() {
        assert!(WarpedSurface::new("flat", "r", 1.0, 2.0).is_err());
        assert!(matches!(
            WarpedSurface::new("steep", "sinh(3*r)/3", 1.0, 2.0),
            Err(Error::PinchingViolation { .. })
        ));
        assert!(WarpedSurface::new("offset", "1 + sinh(r)", 1.0, 2.0).is_err());
    }

    #[test]
    fn radial_shot_from_pole() {
        let s = WarpedSurface::pinched();
        let tr = s.shoot(SurfacePoint::POLE, 1.3, 2.5, 10, DEFAULT_TOL).unwrap();
        let end = tr.end();
        assert_relative_eq!(end.position.r, 2.5, max_relative = 1e-12);
        assert_relative_eq!(end.position.phi, 1.3, max_relative = 1e-12);
        assert!(end.direction.abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_shots_match_closed_form() {
        let s = h2();
        let k = model(1.0);
        let x = SurfacePoint::new(1.2, 0.4).unwrap();
        for &(psi, len) in &[(0.7, 2.0), (-2.5, 3.1), (2.9, 1.5), (1.6, 4.0)] {
            let end = s.exp(x, psi, len, DEFAULT_TOL).unwrap();
            let gap = PI - f64::abs(psi);
            let r = law_of_cosines(k, x.r, len, gap).unwrap();
            assert_relative_eq!(end.position.r, r, max_relative = 1e-10);
            let dphi = angle_from_sides(k, x.r, r, len).unwrap();
            let got = wrap_angle(end.position.phi - x.phi).abs();
            assert_relative_eq!(got, dphi, max_relative = 1e-8);
        }
    }

    #[test]
    fn clairaut_is_conserved() {
        let s = WarpedSurface::pinched();
        let x = SurfacePoint::new(0.8, 2.0).unwrap();
        let tr = s.shoot(x, 2.2, 20.0, 200, DEFAULT_TOL).unwrap();
        let c = tr.states[0].clairaut.abs();
        assert!(tr.clairaut_drift <= 1e-9 * c.max(1.0), "drift {}", tr.clairaut_drift);
    }

    #[test]
    fn shot_through_pole_continues_straight() {
        let s = WarpedSurface::pinched();
        let x = SurfacePoint::new(1.0, 0.5).unwrap();
        let end = s.exp(x, PI, 3.0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(end.position.r, 2.0, max_relative = 1e-12);
        assert_relative_eq!(end.position.phi, 0.5 + PI, max_relative = 1e-12);
        assert!(end.direction.abs() < 1e-12);
    }

    #[test]
    fn distances_on_the_pole() {
        let s = WarpedSurface::pinched();
        let y = SurfacePoint::new(2.3, 4.0).unwrap();
        assert_eq!(s.distance(SurfacePoint::POLE, y, DEFAULT_TOL).unwrap(), 2.3);
        assert_eq!(s.distance(y, SurfacePoint::POLE, DEFAULT_TOL).unwrap(), 2.3);
    }

    #[test]
    fn hyperbolic_distance_matches_law_of_cosines() {
        let s = h2();
        let k = model(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let x = random_point(&mut rng, 3.0);
            let y = random_point(&mut rng, 3.0);
            let d = s.distance(x, y, DEFAULT_TOL).unwrap();
            let oracle = law_of_cosines(k, x.r, y.r, wrap_angle(x.phi - y.phi).abs()).unwrap();
            assert_relative_eq!(d, oracle, max_relative = 1e-8);
        }
    }

    #[test]
    fn pinched_distance_reaches_target() {
        let s = WarpedSurface::pinched();
        let x = SurfacePoint::new(2.0, 0.1).unwrap();
        let y = SurfacePoint::new(2.5, 3.0).unwrap();
        let c = s.connect(x, y, DEFAULT_TOL).unwrap();
        let end = s.exp(x, c.direction, c.length, DEFAULT_TOL).unwrap();
        assert!((end.position.r - y.r).abs() < 1e-9);
        assert!(wrap_angle(end.position.phi - y.phi).abs() < 1e-9);
        let back = s.distance(y, x, DEFAULT_TOL).unwrap();
        assert_relative_eq!(back, c.length, max_relative = 1e-10);
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let s = WarpedSurface::pinched();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..25 {
            let p: Vec<SurfacePoint> = (0..3).map(|_| random_point(&mut rng, 3.0)).collect();
            let d = |i: usize, j: usize| s.distance(p[i], p[j], DEFAULT_TOL).unwrap();
            assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-10);
            assert!((d(0, 1) - d(1, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn angles() {
        let s = WarpedSurface::pinched();
        let v = SurfacePoint::new(1.0, 0.0).unwrap();
        let p = SurfacePoint::new(2.0, 1.0).unwrap();
        assert!(s.angle_at(v, p, p, DEFAULT_TOL).unwrap().abs() < 1e-12);
        let fwd = s.exp(v, 0.9, 1.5, DEFAULT_TOL).unwrap().position;
        let bwd = s.exp(v, 0.9 - PI, 1.5, DEFAULT_TOL).unwrap().position;
        assert_relative_eq!(s.angle_at(v, fwd, bwd, DEFAULT_TOL).unwrap(), PI, max_relative = 1e-9);

        let h = h2();
        let k = model(1.0);
        let q = SurfacePoint::new(0.5, 2.5).unwrap();
        let (a, b) = (h.distance(v, p, DEFAULT_TOL).unwrap(), h.distance(v, q, DEFAULT_TOL).unwrap());
        let c = h.distance(p, q, DEFAULT_TOL).unwrap();
        let oracle = angle_from_sides(k, a, b, c).unwrap();
        assert_relative_eq!(h.angle_at(v, p, q, DEFAULT_TOL).unwrap(), oracle, max_relative = 1e-8);
    }

    #[test]
    fn circle_curvatures() {
        let s = WarpedSurface::pinched();
        let r = 1.7;
        let k = s.circle_curvature(SurfacePoint::POLE, r, 0.3, DEFAULT_TOL).unwrap();
        assert_relative_eq!(k, s.df(r) / s.f(r), max_relative = 1e-10);
        let x = SurfacePoint::new(1.0, 1.0).unwrap();
        let k = h2().circle_curvature(x, r, 2.0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(k, 1.0 / r.tanh(), max_relative = 1e-10);
        let small = s.circle_curvature(x, 1e-4, 2.0, DEFAULT_TOL).unwrap();
        assert_relative_eq!(small * 1e-4, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn theta_near_one_ratio_is_one() {
        let s = WarpedSurface::pinched();
        let x = SurfacePoint::new(0.7, 0.2).unwrap();
        let theta = 1.0 - 1e-7;
        let y = s.exp(x, 0.3, 1.0, DEFAULT_TOL).unwrap().position;
        let z = s.exp(x, 1.4, 1.5, DEFAULT_TOL).unwrap().position;
        let p = s.exp(x, 0.3, theta, DEFAULT_TOL).unwrap().position;
        let q = s.exp(x, 1.4, 1.5 * theta, DEFAULT_TOL).unwrap().position;
        let k = model(1.0);
        let ratio = c_a(k, s.distance(y, z, DEFAULT_TOL).unwrap()).unwrap()
            / c_a(k, s.distance(p, q, DEFAULT_TOL).unwrap()).unwrap();
        assert!((ratio - 1.0).abs() < 1e-5);
        assert!((f_comparison(k, 1.0, 1.5, 1.1, theta).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn small_triangle_suites() {
        let out = verify_triangle_comparison(&WarpedSurface::pinched(), 6, 11).unwrap();
        assert_eq!(out.samples.len(), 18);
        assert!(out.checks.iter().all(|c| c.pass), "{:?}", out.checks);
        let out = verify_triangle_comparison(&h2(), 4, 11).unwrap();
        assert!(out.checks.iter().all(|c| c.pass), "{:?}", out.checks);
    }

    #[test]
    fn small_tangent_suites() {
        for s in [WarpedSurface::pinched(), h2()] {
            let out = verify_tangent_circles(&s, 6, 5).unwrap();
            assert!(out.checks.iter().all(|c| c.pass), "{:?}", out.checks);
        }
    }

    #[test]
    fn horocycle_profiles() {
        let h = h2();
        let start = GeodesicState { t: 0.0, position: SurfacePoint::new(2.0, 0.0).unwrap(), direction: 2.0, clairaut: 0.0 };
        let ts: Vec<f64> = (0..9).map(|i| -4.0 + i as f64).collect();
        let prof = horocurvature_profile(&h, &start, &ts).unwrap();
        assert!(horocurvature_checks(&h, &prof, 0.0).iter().all(|c| c.pass));
        let p = WarpedSurface::pinched();
        let start = GeodesicState { t: 0.0, position: SurfacePoint::new(3.0, 0.0).unwrap(), direction: PI - 0.3, clairaut: 0.0 };
        let prof = horocurvature_profile(&p, &start, &ts).unwrap();
        let checks = horocurvature_checks(&p, &prof, 1e-2);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    }
}
