//! Jacobi tensors `J'' + R J = 0`, the Riccati equation `A' + A² + R = 0`,
//! volume densities, horosphere shape operators and the asymptotic density τ.
//!
//! Diagonal profiles with diagonal initial data are integrated on the
//! diagonal only (`2n` unknowns); everything else uses full matrices.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};

use crate::comparison::ModelCurvature;
use crate::error::{invalid, Error, Result};
use crate::ode::{Dop853, OdeSystem};
use crate::profile::CurvatureProfile;
use crate::report::Check;

/// Radius at which the sphere tensor is initialized from its Taylor expansion.
pub const SPHERE_START: f64 = 1e-4;
/// Cauchy tolerance for the horosphere operator limits.
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Default `r_max` is `DEFAULT_RMAX_SCALE / a`.
pub const DEFAULT_RMAX_SCALE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiOptions {
    /// Relative tolerance handed to the integrator.
    pub tol: f64,
    /// Integrate full matrices even when the diagonal reduction applies.
    pub force_full: bool,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        JacobiOptions {
            tol: 1e-12,
            force_full: false,
        }
    }
}

impl JacobiOptions {
    pub fn with_tol(tol: f64) -> Self {
        JacobiOptions {
            tol,
            ..Default::default()
        }
    }

    fn integrator(&self) -> Result<Dop853> {
        if !(self.tol > 0.0) {
            return invalid(format!("tolerance must be positive, got {}", self.tol));
        }
        Ok(Dop853 {
            rtol: self.tol,
            atol: 1e-250,
            max_steps: 2_000_000,
            h_max: f64::INFINITY,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiTensor {
    pub t: f64,
    pub j: DMatrix<f64>,
    pub jp: DMatrix<f64>,
}

impl JacobiTensor {
    /// `J'ᵀ J - Jᵀ J'`, conserved along the flow.
    pub fn wronskian(&self) -> DMatrix<f64> {
        self.jp.transpose() * &self.j - self.j.transpose() * &self.jp
    }

    /// `ln |det J|` and the sign of `det J`.
    pub fn log_det(&self) -> (f64, f64) {
        log_abs_det(&self.j)
    }

    /// `J' J⁻¹`.
    pub fn shape_operator(&self) -> Result<ShapeOperator> {
        let a = right_solve(&self.jp, &self.j)?;
        Ok(ShapeOperator { t: self.t, a })
    }
}

/// Symmetric operator, e.g. the shape operator of a sphere or horosphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOperator {
    pub t: f64,
    pub a: DMatrix<f64>,
}

impl ShapeOperator {
    pub fn new(t: f64, a: DMatrix<f64>) -> Self {
        ShapeOperator { t, a }
    }

    pub fn trace(&self) -> f64 {
        self.a.trace()
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.a - self.a.transpose()).amax()
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let s = (&self.a + self.a.transpose()) * 0.5;
        let mut e: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
        e
    }

    /// `|A|² = tr(Aᵀ A)`.
    pub fn norm_sq(&self) -> f64 {
        self.a.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergedOperator {
    pub op: ShapeOperator,
    /// Max-norm difference between the iterates at `r_max / 2` and `r_max`.
    pub certificate: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDensity {
    pub tau: f64,
    pub radius_used: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiTrajectory {
    pub states: Vec<JacobiTensor>,
    /// Largest `‖W(t) - W(t0)‖ / (‖J(t)‖ ‖J'(t)‖)` seen on the output grid.
    pub wronskian_drift: f64,
    pub steps: usize,
}

/// Sphere tensor data at radius `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample {
    pub r: f64,
    /// `ln θ(r)`.
    pub log_theta: f64,
    /// `A(r) = J'(r) J(r)⁻¹`.
    pub shape: DMatrix<f64>,
    /// `e^{-g r} ∫_0^r θ(s) ds` when a growth rate `g` was requested.
    pub scaled_ball: Option<f64>,
}

impl SphereSample {
    /// `θ'/(nθ) = tr A / n`.
    pub fn mean_curvature(&self) -> f64 {
        self.shape.trace() / self.shape.nrows() as f64
    }
}

pub fn log_abs_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for i in 0..m.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log += d.abs().ln();
    }
    (log, sign)
}

/// `X B⁻¹` via the transposed LU solve.
fn right_solve(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = b.transpose().lu();
    lu.solve(&x.transpose())
        .map(|m| m.transpose())
        .ok_or_else(|| Error::Singular("Jacobi tensor is not invertible".into()))
}

fn is_diag(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Mode {
    Diagonal,
    Full,
}

struct JacobiSystem<'a> {
    p: &'a CurvatureProfile,
    n: usize,
    mode: Mode,
    /// Growth rate `g` of the scaled ball-volume component, if tracked.
    volume_rate: Option<f64>,
}

impl JacobiSystem<'_> {
    fn block(&self) -> usize {
        match self.mode {
            Mode::Diagonal => self.n,
            Mode::Full => self.n * self.n,
        }
    }

    fn log_det(&self, y: &[f64]) -> f64 {
        let b = self.block();
        match self.mode {
            Mode::Diagonal => y[..b].iter().map(|v| v.abs().ln()).sum(),
            Mode::Full => {
                let j = DMatrix::from_column_slice(self.n, self.n, &y[..b]);
                log_abs_det(&j).0
            }
        }
    }

    fn pack(&self, j: &DMatrix<f64>, jp: &DMatrix<f64>, w: Option<f64>) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.block() + 1);
        match self.mode {
            Mode::Diagonal => {
                y.extend((0..self.n).map(|i| j[(i, i)]));
                y.extend((0..self.n).map(|i| jp[(i, i)]));
            }
            Mode::Full => {
                y.extend_from_slice(j.as_slice());
                y.extend_from_slice(jp.as_slice());
            }
        }
        if let Some(w) = w {
            y.push(w);
        }
        y
    }

    fn unpack(&self, t: f64, y: &[f64]) -> JacobiTensor {
        let b = self.block();
        let (j, jp) = match self.mode {
            Mode::Diagonal => (
                DMatrix::from_diagonal(&DVector::from_column_slice(&y[..b])),
                DMatrix::from_diagonal(&DVector::from_column_slice(&y[b..2 * b])),
            ),
            Mode::Full => (
                DMatrix::from_column_slice(self.n, self.n, &y[..b]),
                DMatrix::from_column_slice(self.n, self.n, &y[b..2 * b]),
            ),
        };
        JacobiTensor { t, j, jp }
    }
}

impl OdeSystem for JacobiSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.block() + usize::from(self.volume_rate.is_some())
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let b = self.block();
        dy[..b].copy_from_slice(&y[b..2 * b]);
        match self.mode {
            Mode::Diagonal => {
                let mut r = vec![0.0; self.n];
                self.p.diagonal_at(t, &mut r);
                for i in 0..self.n {
                    dy[b + i] = -r[i] * y[i];
                }
            }
            Mode::Full => {
                let r = self.p.at(t);
                let j = DMatrixView::from_slice(&y[..b], self.n, self.n);
                let mut out = DMatrixViewMut::from_slice(&mut dy[b..2 * b], self.n, self.n);
                out.gemm(-1.0, &r, &j, 0.0);
            }
        }
        if let Some(g) = self.volume_rate {
            let w = y[2 * b];
            dy[2 * b] = (self.log_det(y) - g * t).exp() - g * w;
        }
    }
}

fn choose_mode(p: &CurvatureProfile, mats: &[&DMatrix<f64>], opts: &JacobiOptions) -> Mode {
    if !opts.force_full && p.is_diagonal() && mats.iter().all(|m| is_diag(m)) {
        Mode::Diagonal
    } else {
        Mode::Full
    }
}

fn check_shape(p: &CurvatureProfile, m: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = p.dim();
    if m.nrows() != n || m.ncols() != n {
        return invalid(format!(
            "{what} is {}x{}, profile needs {n}x{n}",
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(())
}

/// Integrate `J'' + R J = 0` from `(t0, J0, J0')` through every point of
/// `grid` (monotone, on one side of `t0`).
pub fn integrate_jacobi_on(
    p: &CurvatureProfile,
    j0: &DMatrix<f64>,
    j0p: &DMatrix<f64>,
    t0: f64,
    grid: &[f64],
    opts: &JacobiOptions,
) -> Result<JacobiTrajectory> {
    check_shape(p, j0, "J(t0)")?;
    check_shape(p, j0p, "J'(t0)")?;
    let sys = JacobiSystem {
        p,
        n: p.dim(),
        mode: choose_mode(p, &[j0, j0p], opts),
        volume_rate: None,
    };
    let start = JacobiTensor {
        t: t0,
        j: j0.clone(),
        jp: j0p.clone(),
    };
    let w0 = start.wronskian();
    let mut states = Vec::with_capacity(grid.len());
    let mut drift: f64 = 0.0;
    let stats = opts
        .integrator()?
        .integrate_grid(&sys, t0, &sys.pack(j0, j0p, None), grid, |t, y| {
            let s = sys.unpack(t, y);
            let scale = s.j.norm() * s.jp.norm();
            if scale > 0.0 {
                drift = drift.max((s.wronskian() - &w0).norm() / scale);
            }
            states.push(s);
            Ok(())
        })?;
    Ok(JacobiTrajectory {
        states,
        wronskian_drift: drift,
        steps: stats.accepted,
    })
}

/// Integrate `J'' + R J = 0` from `t0` to `t1`; the trajectory holds both ends.
pub fn integrate_jacobi(
    p: &CurvatureProfile,
    j0: &DMatrix<f64>,
    j0p: &DMatrix<f64>,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<JacobiTrajectory> {
    let mut tr = integrate_jacobi_on(p, j0, j0p, t0, &[t1], &JacobiOptions::with_tol(tol))?;
    tr.states.insert(
        0,
        JacobiTensor {
            t: t0,
            j: j0.clone(),
            jp: j0p.clone(),
        },
    );
    Ok(tr)
}

/// Taylor data of the sphere tensor (`J(0) = 0`, `J'(0) = I`) at small `r`.
fn sphere_series(p: &CurvatureProfile, r: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p.dim();
    let r0 = p.at(0.0);
    let id = DMatrix::<f64>::identity(n, n);
    let j = &id * r - &r0 * (r * r * r / 6.0);
    let jp = &id - &r0 * (r * r / 2.0);
    (j, jp)
}

/// Sphere tensor data at each radius of the increasing grid `radii`. With
/// `volume_rate = Some(g)` the scaled ball integral `e^{-g r} ∫_0^r θ` is
/// integrated alongside.
pub fn sphere_flow(
    p: &CurvatureProfile,
    radii: &[f64],
    volume_rate: Option<f64>,
    opts: &JacobiOptions,
) -> Result<Vec<SphereSample>> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return invalid("sphere radii must be positive");
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("sphere radii must be strictly increasing");
    }
    let n = p.dim();
    let mut out = Vec::with_capacity(radii.len());
    let series_ball = |r: f64| {
        let g = volume_rate.unwrap_or(0.0);
        r.powi(n as i32 + 1) / (n as f64 + 1.0) * (-g * r).exp()
    };
    let split = radii.partition_point(|&r| r <= SPHERE_START);
    for &r in &radii[..split] {
        let (j, jp) = sphere_series(p, r);
        let (log_theta, _) = log_abs_det(&j);
        out.push(SphereSample {
            r,
            log_theta,
            shape: right_solve(&jp, &j)?,
            scaled_ball: volume_rate.map(|_| series_ball(r)),
        });
    }
    if split == radii.len() {
        return Ok(out);
    }
    let (j0, jp0) = sphere_series(p, SPHERE_START);
    let sys = JacobiSystem {
        p,
        n,
        mode: choose_mode(p, &[&j0, &jp0], opts),
        volume_rate,
    };
    let y0 = sys.pack(&j0, &jp0, volume_rate.map(|_| series_ball(SPHERE_START)));
    let b = sys.block();
    opts.integrator()?
        .integrate_grid(&sys, SPHERE_START, &y0, &radii[split..], |r, y| {
            let s = sys.unpack(r, y);
            let shape = right_solve(&s.jp, &s.j)?;
            out.push(SphereSample {
                r,
                log_theta: sys.log_det(y),
                shape,
                scaled_ball: volume_rate.map(|_| y[2 * b]),
            });
            Ok(())
        })?;
    Ok(out)
}

/// `θ(r) = det J(r)` for the sphere tensor.
pub fn theta(p: &CurvatureProfile, r: f64) -> Result<f64> {
    log_theta(p, r).map(f64::exp)
}

/// `ln θ(r)`; use this when `θ` overflows.
pub fn log_theta(p: &CurvatureProfile, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return invalid(format!("theta needs r > 0, got {r}"));
    }
    Ok(sphere_flow(p, &[r], None, &JacobiOptions::default())?[0].log_theta)
}

/// Shape operator `J'(r) J(r)⁻¹` of the sphere of radius `r`.
pub fn sphere_shape_operator(p: &CurvatureProfile, r: f64) -> Result<ShapeOperator> {
    if !(r > 0.0) {
        return invalid(format!("sphere shape operator needs r > 0, got {r}"));
    }
    let s = sphere_flow(p, &[r], None, &JacobiOptions::default())?;
    Ok(ShapeOperator::new(r, s[0].shape.clone()))
}

/// `h_x(r) = tr A(r) / n`.
pub fn mean_curvature_along(p: &CurvatureProfile, r: f64) -> Result<f64> {
    let a = sphere_shape_operator(p, r)?;
    Ok(a.trace() / p.dim() as f64)
}

struct RiccatiSystem<'a> {
    p: &'a CurvatureProfile,
    n: usize,
    mode: Mode,
}

impl OdeSystem for RiccatiSystem<'_> {
    fn dim(&self) -> usize {
        match self.mode {
            Mode::Diagonal => self.n,
            Mode::Full => self.n * self.n,
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        match self.mode {
            Mode::Diagonal => {
                let mut r = vec![0.0; self.n];
                self.p.diagonal_at(t, &mut r);
                for i in 0..self.n {
                    dy[i] = -y[i] * y[i] - r[i];
                }
            }
            Mode::Full => {
                let r = self.p.at(t);
                let a = DMatrixView::from_slice(y, self.n, self.n);
                let mut out = DMatrixViewMut::from_slice(dy, self.n, self.n);
                out.copy_from(&(-&r));
                out.gemm(-1.0, &a, &a, 1.0);
            }
        }
    }
}

/// Upper bound on the blow-up time of a Riccati solution whose smallest
/// eigenvalue `λ` at time `t` lies below `-b` (scalar comparison with `κ = b²`).
fn blow_up_estimate(t: f64, lambda: f64, b: f64, dir: f64) -> f64 {
    if b > 0.0 {
        t + dir * (b / -lambda).atanh() / b
    } else {
        t + dir / -lambda
    }
}

/// Solve `A' + A² + R = 0` from `a0` through every point of `grid`.
pub fn riccati_on_grid(
    p: &CurvatureProfile,
    a0: &ShapeOperator,
    grid: &[f64],
    opts: &JacobiOptions,
) -> Result<Vec<ShapeOperator>> {
    check_shape(p, &a0.a, "A(t0)")?;
    if a0.symmetry_defect() > 1e-10 * a0.a.amax().max(1.0) {
        return invalid("initial shape operator is not symmetric");
    }
    let n = p.dim();
    let mode = choose_mode(p, &[&a0.a], opts);
    let sys = RiccatiSystem { p, n, mode };
    let y0: Vec<f64> = match mode {
        Mode::Diagonal => (0..n).map(|i| a0.a[(i, i)]).collect(),
        Mode::Full => a0.a.as_slice().to_vec(),
    };
    let b = p.upper_pinch().a();
    let dir = grid.first().map_or(1.0, |&t| (t - a0.t).signum());
    let unpack = |t: f64, y: &[f64]| match mode {
        Mode::Diagonal => ShapeOperator::new(t, DMatrix::from_diagonal(&DVector::from_column_slice(y))),
        Mode::Full => ShapeOperator::new(t, DMatrix::from_column_slice(n, n, y)),
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut last = a0.clone();
    let res = opts.integrator()?.integrate_grid(&sys, a0.t, &y0, grid, |t, y| {
        let s = unpack(t, y);
        // Forward in time an eigenvalue below -b is doomed; backward, one above b is.
        let lam = if dir > 0.0 { s.eigenvalues()[0] } else { -s.eigenvalues()[n - 1] };
        if lam < -b * (1.0 + 1e-9) - 1e-12 {
            return Err(Error::BlowUp {
                t_estimate: blow_up_estimate(t, lam, b, dir),
                eigenvalue: dir * lam,
            });
        }
        last = s.clone();
        out.push(s);
        Ok(())
    });
    match res {
        Ok(_) => Ok(out),
        Err(e @ Error::BlowUp { .. }) => Err(e),
        Err(Error::StepSizeUnderflow { t, .. } | Error::NonFinite { t } | Error::TooManySteps { t, .. }) => {
            let e = last.eigenvalues();
            Err(Error::BlowUp {
                t_estimate: t,
                eigenvalue: if dir > 0.0 { e[0] } else { e[n - 1] },
            })
        }
        Err(e) => Err(e),
    }
}

/// Solve the Riccati equation from `a0` (at time `a0.t`) to `t1`.
pub fn riccati_integrate(p: &CurvatureProfile, a0: &ShapeOperator, t1: f64, tol: f64) -> Result<ShapeOperator> {
    let mut v = riccati_on_grid(p, a0, &[t1], &JacobiOptions::with_tol(tol))?;
    Ok(v.pop().expect("one grid point"))
}

pub fn default_r_max(p: &CurvatureProfile) -> Result<f64> {
    let a = p.lower_pinch().a();
    if !(a > 0.0) {
        return invalid("horosphere limits need a strictly negative curvature bound (a > 0)");
    }
    Ok(DEFAULT_RMAX_SCALE / a)
}

/// `J'(0) J(0)⁻¹` for the tensor with `J(s) = 0`, `J'(s) = ±I`, `s = ∓r`.
fn two_point_operator(p: &CurvatureProfile, r: f64, unstable: bool, opts: &JacobiOptions) -> Result<DMatrix<f64>> {
    let n = p.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let zero = DMatrix::<f64>::zeros(n, n);
    let (s, jp) = if unstable { (-r, id) } else { (r, -id) };
    let tr = integrate_jacobi_on(p, &zero, &jp, s, &[0.0], opts)?;
    let st = &tr.states[0];
    right_solve(&st.jp, &st.j)
}

fn converged_operator(p: &CurvatureProfile, r_max: f64, unstable: bool, opts: &JacobiOptions) -> Result<ConvergedOperator> {
    if !(r_max > 0.0) {
        return invalid(format!("r_max must be positive, got {r_max}"));
    }
    let half = two_point_operator(p, 0.5 * r_max, unstable, opts)?;
    let full = two_point_operator(p, r_max, unstable, opts)?;
    let certificate = (&full - &half).amax();
    if !(certificate < CONVERGENCE_TOL) {
        return Err(Error::NonConvergence {
            what: format!(
                "{} operator of {} at r_max = {r_max}",
                if unstable { "horosphere" } else { "stable" },
                p.name()
            ),
            certificate,
            tolerance: CONVERGENCE_TOL,
        });
    }
    let sym = (&full + full.transpose()) * 0.5;
    Ok(ConvergedOperator {
        op: ShapeOperator::new(0.0, sym),
        certificate,
        r_max,
    })
}

/// `U'(0)`: shape operator at `t = 0` of the horosphere centered at the
/// backward endpoint of the geodesic.
pub fn horosphere_shape_operator(p: &CurvatureProfile, r_max: f64) -> Result<ConvergedOperator> {
    converged_operator(p, r_max, true, &JacobiOptions::default())
}

/// `S'(0)`; `-S'(0)` is the shape operator of the horosphere centered at the
/// forward endpoint.
pub fn stable_shape_operator(p: &CurvatureProfile, r_max: f64) -> Result<ConvergedOperator> {
    converged_operator(p, r_max, false, &JacobiOptions::default())
}

pub fn horosphere_shape_operator_with(p: &CurvatureProfile, r_max: f64, opts: &JacobiOptions) -> Result<ConvergedOperator> {
    converged_operator(p, r_max, true, opts)
}

pub fn stable_shape_operator_with(p: &CurvatureProfile, r_max: f64, opts: &JacobiOptions) -> Result<ConvergedOperator> {
    converged_operator(p, r_max, false, opts)
}

/// `h = tr U'(0) / n` at the default `r_max`.
pub fn horosphere_mean_curvature(p: &CurvatureProfile) -> Result<f64> {
    let u = horosphere_shape_operator(p, default_r_max(p)?)?;
    Ok(u.op.trace() / p.dim() as f64)
}

/// `τ = 1 / det(U'(0) - S'(0))`.
pub fn tau_from_tensors(p: &CurvatureProfile, r_max: f64) -> Result<AsymptoticDensity> {
    if p.lower_pinch().is_euclidean() {
        return invalid("tau needs a > 0");
    }
    let u = horosphere_shape_operator(p, r_max)?;
    let s = stable_shape_operator(p, r_max)?;
    let diff = ShapeOperator::new(0.0, &u.op.a - &s.op.a);
    let eig = diff.eigenvalues();
    if !(eig[0] > 0.0) {
        return Err(Error::Singular(format!(
            "U'(0) - S'(0) is not positive definite (smallest eigenvalue {:e})",
            eig[0]
        )));
    }
    let log_det: f64 = eig.iter().map(|v| v.ln()).sum();
    let tau = (-log_det).exp();
    // First-order propagation of the two Cauchy certificates through det⁻¹.
    let spread: f64 = eig.iter().map(|v| 1.0 / v).sum();
    let error_bound = tau * spread * (u.certificate + s.certificate);
    Ok(AsymptoticDensity {
        tau,
        radius_used: r_max,
        error_bound,
    })
}

/// `ε(r) = (1 - e^{-2ar})^{-n} - 1`.
pub fn epsilon_bound(a: ModelCurvature, n: usize, r: f64) -> Result<f64> {
    if a.is_euclidean() {
        return invalid("epsilon bound needs a > 0");
    }
    if !(r > 0.0) {
        return invalid(format!("epsilon bound needs r > 0, got {r}"));
    }
    let q = (-2.0 * a.a() * r).exp();
    Ok((-(n as f64) * (-q).ln_1p()).exp_m1())
}

/// Number of radii sampled between 1 and `r_max` when checking monotonicity.
const LIMIT_SAMPLES: usize = 80;
const MONOTONE_TOL: f64 = 1e-9;

/// `τ = lim θ(r) e^{-nhr}`, evaluated at `r_max` and certified by `ε(r_max)`.
pub fn tau_from_limit(p: &CurvatureProfile, h: f64, r_max: f64) -> Result<AsymptoticDensity> {
    let a = p.lower_pinch();
    let eps = epsilon_bound(a, p.dim(), r_max)?;
    let lo = 1.0f64.min(0.5 * r_max);
    let radii: Vec<f64> = (0..LIMIT_SAMPLES)
        .map(|i| lo + (r_max - lo) * i as f64 / (LIMIT_SAMPLES - 1) as f64)
        .collect();
    let nh = p.dim() as f64 * h;
    let samples = sphere_flow(p, &radii, None, &JacobiOptions::default())?;
    let mut prev = f64::NEG_INFINITY;
    for s in &samples {
        let v = s.log_theta - nh * s.r;
        if v < prev - MONOTONE_TOL {
            return Err(Error::NonConvergence {
                what: format!("theta(r) e^(-nhr) decreases at r = {} (h mismatch?)", s.r),
                certificate: prev - v,
                tolerance: MONOTONE_TOL,
            });
        }
        prev = v;
    }
    let tau = prev.exp();
    Ok(AsymptoticDensity {
        tau,
        radius_used: r_max,
        error_bound: tau * eps,
    })
}

/// Ricci and horosphere norm identities for an asymptotically harmonic profile.
pub fn ricci_and_norm_checks(p: &CurvatureProfile, tol: f64) -> Result<Vec<Check>> {
    let u = horosphere_shape_operator(p, default_r_max(p)?)?;
    let n = p.dim() as f64;
    let h = u.op.trace() / n;
    let (a, b) = (p.lower_pinch().a(), p.upper_pinch().a());
    let ric = p.ricci(0.0);
    let norm = u.op.norm_sq();
    let name = p.name();
    let scale = ric.abs().max(1.0);
    let mut v = vec![
        Check::at_least(
            format!("{name}: Ric >= -n^2h^2 + n(n-1)a^2"),
            ric,
            -n * n * h * h + n * (n - 1.0) * a * a,
            tol * scale,
        ),
        Check::at_most(
            format!("{name}: Ric <= -n^2h^2 + n(n-1)b^2"),
            ric,
            -n * n * h * h + n * (n - 1.0) * b * b,
            tol * scale,
        ),
        Check::at_most(
            format!("{name}: |A|^2 <= n^2h^2 - n(n-1)a^2"),
            norm,
            n * n * h * h - n * (n - 1.0) * a * a,
            tol * scale,
        ),
        Check::close(format!("{name}: |A|^2 + Ric = 0"), norm + ric, 0.0, tol * scale),
        Check::at_least(format!("{name}: h >= a"), h, a, tol),
        Check::at_most(format!("{name}: h <= b"), h, b, tol),
    ];
    let rigid = (h - a).abs() <= tol * a.max(1.0);
    v.push(Check::flag(
        format!("{name}: h = a exactly when curvature is constant"),
        rigid == p.is_constant_curvature(),
    ));
    for e in u.op.eigenvalues() {
        if e < a - tol {
            v.push(Check::at_least(format!("{name}: principal curvature >= a"), e, a, tol));
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{RossFamily, RossProfile};
    use approx::assert_relative_eq;

    fn ch2() -> CurvatureProfile {
        RossProfile::new(RossFamily::Complex, 4, 1.0).unwrap().profile()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn constant_curvature_jacobi_is_sinh() {
        for a in [0.5, 1.0, 2.0] {
            let p = CurvatureProfile::constant_curvature(2, a).unwrap();
            let z = DMatrix::zeros(2, 2);
            let id = DMatrix::identity(2, 2);
            let tr = integrate_jacobi(&p, &z, &id, 0.0, 3.0, 1e-12).unwrap();
            let j = &tr.states[1].j;
            assert_relative_eq!(j[(0, 0)], (3.0 * a).sinh() / a, max_relative = 1e-11);
            assert_eq!(j[(0, 1)], 0.0);
        }
    }

    #[test]
    fn flat_jacobi_is_linear() {
        let p = CurvatureProfile::flat(3).unwrap();
        let z = DMatrix::zeros(3, 3);
        let id = DMatrix::identity(3, 3);
        let tr = integrate_jacobi(&p, &z, &id, 0.0, 2.5, 1e-12).unwrap();
        assert_relative_eq!(tr.states[1].j, id * 2.5, epsilon = 1e-13);
    }

    #[test]
    fn ch2_jacobi_full_and_diagonal_agree() {
        let p = ch2();
        let z = DMatrix::zeros(3, 3);
        let id = DMatrix::identity(3, 3);
        let expected = diag(&[1f64.sinh(), 1f64.sinh(), 2f64.sinh() / 2.0]);
        for force_full in [false, true] {
            let opts = JacobiOptions { tol: 1e-12, force_full };
            let tr = integrate_jacobi_on(&p, &z, &id, 0.0, &[1.0], &opts).unwrap();
            assert_relative_eq!(tr.states[0].j, expected, max_relative = 1e-11);
        }
    }

    #[test]
    fn backward_integration() {
        let p = CurvatureProfile::constant_curvature(1, 1.0).unwrap();
        let z = DMatrix::zeros(1, 1);
        let id = DMatrix::identity(1, 1);
        let tr = integrate_jacobi(&p, &z, &id, 0.0, -2.0, 1e-12).unwrap();
        assert_relative_eq!(tr.states[1].j[(0, 0)], -(2f64.sinh()), max_relative = 1e-11);
    }

    #[test]
    fn wronskian_is_conserved_on_full_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[-2.5, 1.5, 1.5, -2.5]);
        let p = CurvatureProfile::constant_matrix("rot", m).unwrap();
        let j0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.5]);
        let jp0 = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.7, -0.4]);
        let grid: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let tr = integrate_jacobi_on(&p, &j0, &jp0, 0.0, &grid, &JacobiOptions::default()).unwrap();
        assert!(tr.wronskian_drift <= 1e-8, "{}", tr.wronskian_drift);
        let w0 = JacobiTensor { t: 0.0, j: j0, jp: jp0 }.wronskian();
        let w = tr.states[4].wronskian();
        assert_relative_eq!(w, w0, max_relative = 1e-7, epsilon = 1e-6);
    }

    #[test]
    fn theta_closed_forms() {
        let h3 = CurvatureProfile::constant_curvature(2, 1.0).unwrap();
        for r in [0.5, 2.0, 7.0] {
            assert_relative_eq!(theta(&h3, r).unwrap(), r.sinh().powi(2), max_relative = 1e-10);
        }
        let flat = CurvatureProfile::flat(3).unwrap();
        assert_relative_eq!(theta(&flat, 1.7).unwrap(), 1.7f64.powi(3), max_relative = 1e-10);
        let p = ch2();
        let r = 2.3f64;
        assert_relative_eq!(
            theta(&p, r).unwrap(),
            r.sinh().powi(2) * (2.0 * r).sinh() / 2.0,
            max_relative = 1e-10
        );
        // small r: θ / rⁿ → 1
        assert_relative_eq!(theta(&p, 1e-5).unwrap() / 1e-15, 1.0, max_relative = 1e-9);
        assert!(theta(&p, 0.0).is_err());
    }

    #[test]
    fn log_theta_survives_overflow() {
        let oh2 = RossProfile::new(RossFamily::Octonionic, 16, 1.0).unwrap().profile();
        let r = 300.0f64;
        let lt = log_theta(&oh2, r).unwrap();
        // ln θ ≈ 8 ln(sinh r) + 7 ln(sinh(2r)/2)
        let expected = 8.0 * (r - 2f64.ln()) + 7.0 * (2.0 * r - 2f64.ln() - 2f64.ln());
        assert_relative_eq!(lt, expected, max_relative = 1e-11);
    }

    #[test]
    fn sphere_shape_operators() {
        let a = 1.5;
        let p = CurvatureProfile::constant_curvature(3, a).unwrap();
        let s = sphere_shape_operator(&p, 0.8).unwrap();
        let c = a / (a * 0.8).tanh();
        assert_relative_eq!(s.a, DMatrix::identity(3, 3) * c, max_relative = 1e-11);
        let flat = CurvatureProfile::flat(2).unwrap();
        let s = sphere_shape_operator(&flat, 4.0).unwrap();
        assert_relative_eq!(s.a, DMatrix::identity(2, 2) * 0.25, max_relative = 1e-11);
        let s = sphere_shape_operator(&ch2(), 2.0).unwrap();
        let coth = |x: f64| 1.0 / x.tanh();
        assert_relative_eq!(s.a, diag(&[coth(2.0), coth(2.0), 2.0 * coth(4.0)]), max_relative = 1e-11);
        // (1/r) I near 0
        let s = sphere_shape_operator(&ch2(), 1e-5).unwrap();
        assert_relative_eq!(s.a * 1e-5, DMatrix::identity(3, 3), max_relative = 1e-9);
    }

    #[test]
    fn mean_curvature_closed_forms() {
        let coth = |x: f64| 1.0 / x.tanh();
        let p = CurvatureProfile::constant_curvature(2, 2.0).unwrap();
        assert_relative_eq!(mean_curvature_along(&p, 0.7).unwrap(), 2.0 * coth(1.4), max_relative = 1e-11);
        let flat = CurvatureProfile::flat(4).unwrap();
        assert_relative_eq!(mean_curvature_along(&flat, 3.0).unwrap(), 1.0 / 3.0, max_relative = 1e-11);
        assert_relative_eq!(
            mean_curvature_along(&ch2(), 3.0).unwrap(),
            (2.0 * coth(3.0) + 2.0 * coth(6.0)) / 3.0,
            max_relative = 1e-11
        );
    }

    #[test]
    fn riccati_fixed_point_and_sphere_solution() {
        let a = 1.3;
        let p = CurvatureProfile::constant_curvature(2, a).unwrap();
        let a0 = ShapeOperator::new(0.0, DMatrix::identity(2, 2) * a);
        let out = riccati_integrate(&p, &a0, 10.0, 1e-12).unwrap();
        assert_relative_eq!(out.a, DMatrix::identity(2, 2) * a, max_relative = 1e-12);
        let r0 = 0.5;
        let a0 = ShapeOperator::new(2.0, DMatrix::identity(2, 2) * (a / (a * r0).tanh()));
        let out = riccati_integrate(&p, &a0, 5.0, 1e-12).unwrap();
        let expected = a / (a * (r0 + 3.0)).tanh();
        assert_relative_eq!(out.a[(0, 0)], expected, max_relative = 1e-11);
    }

    #[test]
    fn riccati_matches_jacobi_downstream() {
        let p = CurvatureProfile::from_expressions("s", &["1 + 3*tanh(t)^2".into(), "2.5 + 1.5*tanh(t)".into()], 1.0, 2.0)
            .unwrap();
        let grid: Vec<f64> = (1..=40).map(|i| 0.5 * i as f64).collect();
        let sph = sphere_flow(&p, &[0.1], None, &JacobiOptions::default()).unwrap();
        let a0 = ShapeOperator::new(0.1, sph[0].shape.clone());
        let ric = riccati_on_grid(&p, &a0, &grid, &JacobiOptions::default()).unwrap();
        let jac = sphere_flow(&p, &grid, None, &JacobiOptions::default()).unwrap();
        for (r, j) in ric.iter().zip(&jac) {
            assert!((&r.a - &j.shape).amax() < 1e-9);
        }
    }

    #[test]
    fn riccati_blow_up_is_detected() {
        let p = CurvatureProfile::constant_curvature(1, 1.0).unwrap();
        // A(t) = -coth(1 - t) blows up at t = 1.
        let a0 = ShapeOperator::new(0.0, DMatrix::from_element(1, 1, -1.0 / 1f64.tanh()));
        let grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
        match riccati_on_grid(&p, &a0, &grid, &JacobiOptions::default()) {
            Err(Error::BlowUp { t_estimate, .. }) => assert!(t_estimate <= 1.0 + 1e-9, "{t_estimate}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn horosphere_operators() {
        for a in [0.5, 1.0, 2.0] {
            let p = CurvatureProfile::constant_curvature(2, a).unwrap();
            let r = default_r_max(&p).unwrap();
            let u = horosphere_shape_operator(&p, r).unwrap();
            assert_relative_eq!(u.op.a, DMatrix::identity(2, 2) * a, epsilon = 1e-10);
            assert!(u.certificate < CONVERGENCE_TOL);
            let s = stable_shape_operator(&p, r).unwrap();
            assert_relative_eq!(s.op.a, DMatrix::identity(2, 2) * -a, epsilon = 1e-10);
        }
        let p = ch2();
        let u = horosphere_shape_operator(&p, 40.0).unwrap();
        assert_relative_eq!(u.op.a, diag(&[1.0, 1.0, 2.0]), epsilon = 1e-10);
        assert_relative_eq!(u.op.trace(), 4.0, epsilon = 1e-10);
        let s = stable_shape_operator(&p, 40.0).unwrap();
        assert_relative_eq!(s.op.a, diag(&[-1.0, -1.0, -2.0]), epsilon = 1e-10);
    }

    #[test]
    fn pinched_horosphere_eigenvalues_in_range() {
        let p = CurvatureProfile::from_expressions("s", &["1 + 3*tanh(t)^2".into(), "2.5 + 1.5*tanh(t)".into()], 1.0, 2.0)
            .unwrap();
        let u = horosphere_shape_operator(&p, 40.0).unwrap();
        for e in u.op.eigenvalues() {
            assert!((1.0 - 1e-9..=2.0 + 1e-9).contains(&e), "{e}");
        }
    }

    #[test]
    fn short_r_max_does_not_converge() {
        let p = ch2();
        assert!(matches!(
            horosphere_shape_operator(&p, 2.0),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn tau_values() {
        for a in [0.5, 1.0, 2.0] {
            for n in 1..=3usize {
                let p = CurvatureProfile::constant_curvature(n, a).unwrap();
                let t = tau_from_tensors(&p, default_r_max(&p).unwrap()).unwrap();
                assert_relative_eq!(t.tau, (2.0 * a).powi(-(n as i32)), max_relative = 1e-9);
            }
        }
        let t = tau_from_tensors(&ch2(), 40.0).unwrap();
        assert_relative_eq!(t.tau, 1.0 / 16.0, max_relative = 1e-9);
        assert!(tau_from_tensors(&CurvatureProfile::flat(2).unwrap(), 10.0).is_err());
    }

    #[test]
    fn tau_limit_agrees_with_tensors() {
        let h3 = CurvatureProfile::constant_curvature(2, 1.0).unwrap();
        let t = tau_from_limit(&h3, 1.0, 40.0).unwrap();
        assert_relative_eq!(t.tau, 0.25, max_relative = 1e-10);
        let p = ch2();
        let lim = tau_from_limit(&p, 4.0 / 3.0, 40.0).unwrap();
        let ten = tau_from_tensors(&p, 40.0).unwrap();
        assert_relative_eq!(lim.tau, ten.tau, max_relative = 1e-8);
        assert!((lim.tau - ten.tau).abs() <= lim.error_bound + ten.error_bound + 1e-10 * ten.tau);
    }

    #[test]
    fn tau_limit_flags_wrong_h() {
        let p = ch2();
        assert!(tau_from_limit(&p, 1.5, 40.0).is_err());
    }

    #[test]
    fn epsilon_bound_values() {
        let k = ModelCurvature::new(1.0).unwrap();
        let e = epsilon_bound(k, 2, 1.0).unwrap();
        assert_relative_eq!(e, (1.0 - (-2f64).exp()).powi(-2) - 1.0, max_relative = 1e-14);
        // independent oracle: quadrature of ∫_1^∞ (coth t - 1) dt = -ln(1 - e^{-2})
        let mut integral = 0.0;
        let m = 200_000;
        let (lo, hi) = (1.0f64, 40.0f64);
        let hstep = (hi - lo) / m as f64;
        for i in 0..m {
            let t = lo + (i as f64 + 0.5) * hstep;
            integral += (1.0 / t.tanh() - 1.0) * hstep;
        }
        assert_relative_eq!((2.0 * integral).exp() - 1.0, e, max_relative = 1e-8);
        assert!(epsilon_bound(k, 2, 30.0).unwrap() < 1e-20);
        assert!(epsilon_bound(k, 2, 2.0).unwrap() < e);
        assert!(epsilon_bound(ModelCurvature::euclidean(), 2, 1.0).is_err());
    }

    #[test]
    fn ricci_checks_pass_on_models() {
        for p in [CurvatureProfile::constant_curvature(3, 1.5).unwrap(), ch2()] {
            let checks = ricci_and_norm_checks(&p, 1e-8).unwrap();
            for c in &checks {
                assert!(c.pass, "{c:?}");
            }
        }
        let p = ch2();
        assert_relative_eq!(p.ricci(0.0), -6.0);
        let u = horosphere_shape_operator(&p, 40.0).unwrap();
        assert_relative_eq!(u.op.norm_sq(), 6.0, max_relative = 1e-9);
    }
}
