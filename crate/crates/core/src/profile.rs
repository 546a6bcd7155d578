//! Curvature operators `R(t)` along a unit-speed geodesic, in a parallel frame.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::comparison::ModelCurvature;
use crate::error::{invalid, Error, Result};
use crate::expr::ScalarFn;

/// Half-width of the window on which declared pinching bounds are sampled.
pub const PINCH_SAMPLE_HALF_WIDTH: f64 = 60.0;
/// Number of sample points used to verify pinching bounds.
pub const PINCH_SAMPLES: usize = 4001;
const PINCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RossFamily {
    Real,
    Complex,
    Quaternionic,
    Octonionic,
}

impl RossFamily {
    pub const ALL: [RossFamily; 4] = [
        RossFamily::Real,
        RossFamily::Complex,
        RossFamily::Quaternionic,
        RossFamily::Octonionic,
    ];

    /// Multiplicity of the `-4a²` eigenvalue.
    pub fn d(self) -> usize {
        match self {
            RossFamily::Real => 0,
            RossFamily::Complex => 1,
            RossFamily::Quaternionic => 3,
            RossFamily::Octonionic => 7,
        }
    }

    /// Real dimension of the scalar field.
    pub fn field_dim(self) -> usize {
        self.d() + 1
    }

    pub fn symbol(self) -> &'static str {
        match self {
            RossFamily::Real => "R",
            RossFamily::Complex => "C",
            RossFamily::Quaternionic => "H",
            RossFamily::Octonionic => "O",
        }
    }
}

impl fmt::Display for RossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RossFamily::Real => "real",
            RossFamily::Complex => "complex",
            RossFamily::Quaternionic => "quaternionic",
            RossFamily::Octonionic => "octonionic",
        };
        f.write_str(s)
    }
}

/// Rank one symmetric space of noncompact type, normalized so that the
/// sectional curvature lies in `[-4 scale², -scale²]` (or equals `-scale²`
/// for the real family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RossProfile {
    pub family: RossFamily,
    pub real_dimension: usize,
    pub scale: f64,
}

impl RossProfile {
    pub fn new(family: RossFamily, real_dimension: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return invalid(format!("ROSS scale must be positive, got {scale}"));
        }
        let k = family.field_dim();
        let ok = match family {
            RossFamily::Real => real_dimension >= 2,
            RossFamily::Octonionic => real_dimension == 16,
            _ => real_dimension >= 2 * k && real_dimension % k == 0,
        };
        if !ok {
            return invalid(format!(
                "no {family} hyperbolic space of real dimension {real_dimension}"
            ));
        }
        Ok(RossProfile {
            family,
            real_dimension,
            scale,
        })
    }

    pub fn n(&self) -> usize {
        self.real_dimension - 1
    }

    pub fn d(&self) -> usize {
        self.family.d()
    }

    /// Eigenvalues of `-R`: `a²` with multiplicity `n - d`, then `4a²` with multiplicity `d`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let a2 = self.scale * self.scale;
        let (n, d) = (self.n(), self.d());
        (0..n).map(|i| if i < n - d { a2 } else { 4.0 * a2 }).collect()
    }

    /// Mean curvature of horospheres, `((n - d) a + 2 d a) / n`.
    pub fn h(&self) -> f64 {
        let (n, d) = (self.n() as f64, self.d() as f64);
        ((n - d) + 2.0 * d) * self.scale / n
    }

    /// Homogeneous dimension of the horosphere group, `(n - d) + 2d`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.n() - self.d() + 2 * self.d()
    }

    pub fn name(&self) -> String {
        let k = self.family.field_dim();
        let m = self.real_dimension / k;
        if self.scale == 1.0 {
            format!("{}H{}", self.family.symbol(), m)
        } else {
            format!("{}H{}(a={})", self.family.symbol(), m, self.scale)
        }
    }

    pub fn profile(&self) -> CurvatureProfile {
        let a = self.scale;
        let b = if self.d() == 0 { a } else { 2.0 * a };
        let mut p = CurvatureProfile::constant_diagonal(
            self.name(),
            &self.eigenvalues(),
            ModelCurvature::new(a).expect("scale checked"),
            ModelCurvature::new(b).expect("scale checked"),
        );
        p.ross = Some(*self);
        p
    }
}

type EntryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One diagonal entry `κ(t)` of `-R(t)`.
#[derive(Clone)]
pub struct DiagonalEntry {
    source: String,
    f: EntryFn,
    constant: Option<f64>,
}

impl DiagonalEntry {
    pub fn constant(value: f64) -> Self {
        DiagonalEntry {
            source: format!("{value}"),
            f: Arc::new(move |_| value),
            constant: Some(value),
        }
    }

    pub fn from_fn(source: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DiagonalEntry {
            source: source.into(),
            f: Arc::new(f),
            constant: None,
        }
    }

    /// Parse an expression in the variable `t`.
    pub fn parse(source: &str) -> Result<Self> {
        let sf = ScalarFn::parse(source, "t")?;
        if sf.expr().is_constant() {
            return Ok(DiagonalEntry {
                source: source.to_string(),
                f: Arc::new({
                    let v = sf.eval(0.0);
                    move |_| v
                }),
                constant: Some(sf.eval(0.0)),
            });
        }
        Ok(DiagonalEntry {
            source: source.to_string(),
            f: Arc::new(move |t| sf.eval(t)),
            constant: None,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for DiagonalEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiagonalEntry({})", self.source)
    }
}

#[derive(Clone, Debug)]
enum Operator {
    Constant(DMatrix<f64>),
    Diagonal(Vec<DiagonalEntry>),
}

/// Map `t ↦ sign·t + shift` applied before evaluating the operator.
#[derive(Clone, Copy, Debug, PartialEq)]
struct TimeMap {
    sign: f64,
    shift: f64,
}

/// `t ↦ R(t)`, a symmetric operator on the normal space of a geodesic, with
/// declared pinching `-b² ≤ K ≤ -a²`.
#[derive(Clone, Debug)]
pub struct CurvatureProfile {
    name: String,
    n: usize,
    a: ModelCurvature,
    b: ModelCurvature,
    op: Operator,
    time: TimeMap,
    ross: Option<RossProfile>,
    even: bool,
}

impl CurvatureProfile {
    fn constant_diagonal(name: String, kappa: &[f64], a: ModelCurvature, b: ModelCurvature) -> Self {
        let n = kappa.len();
        let r = DMatrix::from_fn(n, n, |i, j| if i == j { -kappa[i] } else { 0.0 });
        CurvatureProfile {
            name,
            n,
            a,
            b,
            op: Operator::Constant(r),
            time: TimeMap { sign: 1.0, shift: 0.0 },
            ross: None,
            even: true,
        }
    }

    /// Constant curvature `-a²` on a normal space of dimension `n`.
    pub fn constant_curvature(n: usize, a: f64) -> Result<Self> {
        if n == 0 {
            return invalid("normal dimension must be positive");
        }
        let k = ModelCurvature::new(a)?;
        if a == 0.0 {
            return Ok(Self::constant_diagonal(format!("E{}", n + 1), &vec![0.0; n], k, k));
        }
        RossProfile::new(RossFamily::Real, n + 1, a).map(|r| r.profile())
    }

    pub fn flat(n: usize) -> Result<Self> {
        Self::constant_curvature(n, 0.0)
    }

    /// Constant symmetric `R`. Pinching is computed from its eigenvalues.
    pub fn constant_matrix(name: impl Into<String>, r: DMatrix<f64>) -> Result<Self> {
        let n = r.nrows();
        if n == 0 || r.ncols() != n {
            return invalid("curvature operator must be a nonempty square matrix");
        }
        let asym = (&r - r.transpose()).amax();
        if asym > 1e-12 * r.amax().max(1.0) {
            return invalid(format!("curvature operator is not symmetric (defect {asym:e})"));
        }
        let eig = (-&r).symmetric_eigenvalues();
        let lo = eig.min();
        let hi = eig.max();
        if lo < -PINCH_TOL {
            return invalid(format!("curvature operator has positive sectional curvature {}", -lo));
        }
        Ok(CurvatureProfile {
            name: name.into(),
            n,
            a: ModelCurvature::new(lo.max(0.0).sqrt())?,
            b: ModelCurvature::new(hi.max(0.0).sqrt())?,
            op: Operator::Constant(r),
            time: TimeMap { sign: 1.0, shift: 0.0 },
            ross: None,
            even: true,
        })
    }

    /// Diagonal profile `R(t) = -diag(κ_1(t), …, κ_n(t))` with declared
    /// bounds `a² ≤ κ_i ≤ b²`, verified on a dense sample.
    pub fn synthetic(name: impl Into<String>, entries: Vec<DiagonalEntry>, a: f64, b: f64) -> Result<Self> {
        if entries.is_empty() {
            return invalid("synthetic profile needs at least one entry");
        }
        let ka = ModelCurvature::new(a)?;
        let kb = ModelCurvature::new(b)?;
        if a > b {
            return invalid(format!("pinching bounds out of order: a = {a} > b = {b}"));
        }
        let (lo, hi) = (a * a, b * b);
        for i in 0..PINCH_SAMPLES {
            let t = -PINCH_SAMPLE_HALF_WIDTH
                + 2.0 * PINCH_SAMPLE_HALF_WIDTH * i as f64 / (PINCH_SAMPLES - 1) as f64;
            for e in &entries {
                let v = e.eval(t);
                if !(v >= lo - PINCH_TOL * lo.max(1.0) && v <= hi + PINCH_TOL * hi.max(1.0)) {
                    return Err(Error::PinchingViolation { t, value: v, lo, hi });
                }
            }
        }
        let constant: Option<Vec<f64>> = entries.iter().map(|e| e.constant).collect();
        let name = name.into();
        if let Some(kappa) = constant {
            return Ok(Self::constant_diagonal(name, &kappa, ka, kb));
        }
        Ok(CurvatureProfile {
            name,
            n: entries.len(),
            a: ka,
            b: kb,
            op: Operator::Diagonal(entries),
            time: TimeMap { sign: 1.0, shift: 0.0 },
            ross: None,
            even: false,
        })
    }

    /// Parse each entry with the expression grammar in the variable `t`.
    pub fn from_expressions(name: impl Into<String>, sources: &[String], a: f64, b: f64) -> Result<Self> {
        let entries = sources
            .iter()
            .map(|s| DiagonalEntry::parse(s))
            .collect::<Result<Vec<_>>>()?;
        Self::synthetic(name, entries, a, b)
    }

    /// Declare the profile symmetric under `t ↦ -t`.
    pub fn with_even(mut self, even: bool) -> Self {
        self.even = even || matches!(self.op, Operator::Constant(_));
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Dimension `n` of the normal space; the manifold has dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_pinch(&self) -> ModelCurvature {
        self.a
    }

    pub fn upper_pinch(&self) -> ModelCurvature {
        self.b
    }

    pub fn ross(&self) -> Option<&RossProfile> {
        self.ross.as_ref()
    }

    pub fn is_constant_in_time(&self) -> bool {
        matches!(self.op, Operator::Constant(_))
    }

    /// True when `R` is a multiple of the identity.
    pub fn is_constant_curvature(&self) -> bool {
        match &self.op {
            Operator::Constant(r) => {
                let c = r[(0, 0)];
                r.iter()
                    .enumerate()
                    .all(|(k, v)| if k % (self.n + 1) == 0 { *v == c } else { *v == 0.0 })
            }
            Operator::Diagonal(_) => false,
        }
    }

    pub fn is_even(&self) -> bool {
        self.even
    }

    pub fn is_diagonal(&self) -> bool {
        match &self.op {
            Operator::Constant(r) => {
                (0..self.n).all(|i| (0..self.n).all(|j| i == j || r[(i, j)] == 0.0))
            }
            Operator::Diagonal(_) => true,
        }
    }

    /// Profile seen along the reversed geodesic, `t ↦ R(-t)`.
    pub fn reversed(&self) -> Self {
        let mut p = self.clone();
        p.time = TimeMap {
            sign: -self.time.sign,
            shift: self.time.shift,
        };
        p.name = format!("{}~reversed", self.name);
        p
    }

    /// Profile seen from a base point moved by `t0`, `t ↦ R(t + t0)`.
    pub fn shifted(&self, t0: f64) -> Self {
        let mut p = self.clone();
        p.time = TimeMap {
            sign: self.time.sign,
            shift: self.time.shift + self.time.sign * t0,
        };
        p.name = format!("{}~shift({t0})", self.name);
        p
    }

    fn local_time(&self, t: f64) -> f64 {
        self.time.sign * t + self.time.shift
    }

    /// `R(t)`.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        self.write_at(t, &mut m);
        m
    }

    /// `R(t)` written into `out` (n×n).
    pub fn write_at(&self, t: f64, out: &mut DMatrix<f64>) {
        match &self.op {
            Operator::Constant(r) => out.copy_from(r),
            Operator::Diagonal(entries) => {
                out.fill(0.0);
                let s = self.local_time(t);
                for (i, e) in entries.iter().enumerate() {
                    out[(i, i)] = -e.eval(s);
                }
            }
        }
    }

    /// Diagonal of `R(t)` when the profile is diagonal.
    pub fn diagonal_at(&self, t: f64, out: &mut [f64]) -> bool {
        match &self.op {
            Operator::Constant(r) => {
                if !self.is_diagonal() {
                    return false;
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = r[(i, i)];
                }
                true
            }
            Operator::Diagonal(entries) => {
                let s = self.local_time(t);
                for (o, e) in out.iter_mut().zip(entries) {
                    *o = -e.eval(s);
                }
                true
            }
        }
    }

    /// `Ric(γ', γ') = tr R(t)`.
    pub fn ricci(&self, t: f64) -> f64 {
        self.at(t).trace()
    }

    /// Largest violation of the declared pinching on `samples` points in
    /// `[t_lo, t_hi]`; zero when the bounds hold.
    pub fn pinching_defect(&self, t_lo: f64, t_hi: f64, samples: usize) -> f64 {
        let (lo, hi) = (self.a.a().powi(2), self.b.a().powi(2));
        let mut worst: f64 = 0.0;
        for i in 0..samples.max(2) {
            let t = t_lo + (t_hi - t_lo) * i as f64 / (samples.max(2) - 1) as f64;
            let eig = (-self.at(t)).symmetric_eigenvalues();
            worst = worst.max(lo - eig.min()).max(eig.max() - hi);
        }
        worst.max(0.0)
    }

    /// Short description of how the operator is defined.
    pub fn describe(&self) -> String {
        match &self.op {
            Operator::Constant(r) => {
                let d: Vec<String> = (0..self.n).map(|i| format!("{}", -r[(i, i)])).collect();
                format!("constant -R = diag({})", d.join(", "))
            }
            Operator::Diagonal(e) => {
                let d: Vec<&str> = e.iter().map(|x| x.source()).collect();
                format!("-R(t) = diag({})", d.join(", "))
            }
        }
    }
}

/// `(n, a, b, h, E)` of an asymptotically harmonic space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldParams {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub entropy: f64,
}

impl ManifoldParams {
    /// Validates `a ≤ h ≤ b` up to `tol` and sets `E = n h`.
    pub fn new(n: usize, a: f64, b: f64, h: f64, tol: f64) -> Result<Self> {
        if n == 0 {
            return invalid("n must be positive");
        }
        if !(h >= a - tol && h <= b + tol) {
            return invalid(format!("horosphere mean curvature {h} outside [{a}, {b}]"));
        }
        Ok(ManifoldParams {
            n,
            a,
            b,
            h,
            entropy: n as f64 * h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_curvature_operator() {
        let p = CurvatureProfile::constant_curvature(2, 1.0).unwrap();
        assert_eq!(p.at(3.7), -DMatrix::<f64>::identity(2, 2));
        assert!(p.is_constant_curvature());
        assert_eq!(p.name(), "RH3");
    }

    #[test]
    fn complex_hyperbolic_plane() {
        let r = RossProfile::new(RossFamily::Complex, 4, 1.0).unwrap();
        let p = r.profile();
        assert_eq!(p.at(0.0), DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -1.0, -4.0])));
        assert_eq!(r.h() * 3.0, 4.0);
        assert_eq!(p.name(), "CH2");
        assert!(!p.is_constant_curvature());
        assert_eq!(p.upper_pinch().a(), 2.0);
    }

    #[test]
    fn ross_trace_and_dimension_table() {
        for (fam, dim, hd) in [
            (RossFamily::Real, 5, 4),
            (RossFamily::Complex, 4, 4),
            (RossFamily::Quaternionic, 8, 10),
            (RossFamily::Octonionic, 16, 22),
        ] {
            let r = RossProfile::new(fam, dim, 1.0).unwrap();
            let n = r.n() as f64;
            let d = r.d() as f64;
            let tr: f64 = -r.profile().at(0.0).trace();
            assert_eq!(tr, (n - d) + 4.0 * d);
            assert_eq!(r.homogeneous_dimension(), hd);
            assert_eq!(n * r.h(), hd as f64);
        }
    }

    #[test]
    fn invalid_ross_dimensions() {
        assert!(RossProfile::new(RossFamily::Octonionic, 24, 1.0).is_err());
        assert!(RossProfile::new(RossFamily::Complex, 5, 1.0).is_err());
        assert!(RossProfile::new(RossFamily::Quaternionic, 4, 1.0).is_err());
        assert!(RossProfile::new(RossFamily::Real, 3, 0.0).is_err());
    }

    #[test]
    fn repeated_evaluation_is_bitwise_stable() {
        let p = CurvatureProfile::from_expressions("s", &["1 + 3*tanh(t)^2".into()], 1.0, 2.0).unwrap();
        for t in [-3.0, 0.1, 7.5] {
            assert_eq!(p.at(t), p.at(t));
        }
    }

    #[test]
    fn synthetic_profiles() {
        let p = CurvatureProfile::synthetic("h2", vec![DiagonalEntry::constant(1.0)], 1.0, 1.0).unwrap();
        assert!(p.is_constant_curvature());
        let p = CurvatureProfile::synthetic(
            "c",
            vec![DiagonalEntry::constant(1.0), DiagonalEntry::constant(4.0)],
            1.0,
            2.0,
        )
        .unwrap();
        assert!(p.is_constant_in_time());
        let p = CurvatureProfile::from_expressions("s", &["1 + 3*tanh(t)^2".into()], 1.0, 2.0).unwrap();
        assert!(!p.is_constant_in_time());
        assert_eq!(p.at(0.0)[(0, 0)], -1.0);
        assert_eq!(p.pinching_defect(-20.0, 20.0, 1000), 0.0);
    }

    #[test]
    fn time_varying_entry_at_zero() {
        let p = CurvatureProfile::from_expressions(
            "osc",
            &["1 + 0.5*sin(t)^2".into(), "1 + 0.5*sin(t)^2".into()],
            1.0,
            1.5f64.sqrt(),
        )
        .unwrap();
        assert_eq!(p.at(0.0), -DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn pinching_violation_reports_time() {
        let err = CurvatureProfile::from_expressions("bad", &["1 + 4*tanh(t)^2".into()], 1.0, 2.0).unwrap_err();
        match err {
            Error::PinchingViolation { t, value, .. } => {
                assert!(value > 4.0);
                assert!(1.0 + 4.0 * t.tanh().powi(2) > 4.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reversal_and_shift() {
        let p = CurvatureProfile::from_expressions("s", &["2.5 + 1.5*tanh(t)".into()], 1.0, 2.0).unwrap();
        let r = p.reversed();
        let s = p.shifted(0.7);
        for t in [-2.0, 0.0, 1.3] {
            assert_eq!(r.at(t), p.at(-t));
            assert_eq!(s.at(t), p.at(t + 0.7));
            assert_eq!(r.shifted(0.7).at(t), p.at(-(t + 0.7)));
        }
        assert_eq!(r.reversed().at(0.4), p.at(0.4));
    }

    #[test]
    fn constant_matrix_pinching() {
        let m = DMatrix::from_row_slice(2, 2, &[-2.5, 1.5, 1.5, -2.5]);
        let p = CurvatureProfile::constant_matrix("rot", m).unwrap();
        assert!((p.lower_pinch().a() - 1.0).abs() < 1e-12);
        assert!((p.upper_pinch().a() - 2.0).abs() < 1e-12);
        assert!(!p.is_diagonal());
    }

    #[test]
    fn manifold_params_validation() {
        let m = ManifoldParams::new(3, 1.0, 2.0, 4.0 / 3.0, 1e-12).unwrap();
        assert_eq!(m.entropy, 4.0);
        assert!(ManifoldParams::new(3, 1.0, 2.0, 2.5, 1e-12).is_err());
    }
}
