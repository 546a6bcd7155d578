//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 8(5,3)).
//!
//! The step-size controller and the combined 5th/3rd order error estimate
//! follow Hairer's DOP853. Dense output is not provided; callers that need
//! values on a grid integrate from grid point to grid point, and the final
//! step of each segment is shortened to land on the target exactly.

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct Dop853 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on |h|; `f64::INFINITY` for none.
    pub h_max: f64,
}

impl Default for Dop853 {
    fn default() -> Self {
        Dop853 {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 1_000_000,
            h_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
    /// Step size proposed for the next step; feed it back as `h_init` when
    /// continuing from the end point.
    pub next_h: f64,
}

impl Stats {
    fn absorb(&mut self, other: Stats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evals += other.evals;
        self.next_h = other.next_h;
    }
}

struct Work {
    k: [Vec<f64>; 12],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

impl Dop853 {
    pub fn with_tolerance(rtol: f64, atol: f64) -> Self {
        Dop853 {
            rtol,
            atol,
            ..Default::default()
        }
    }

    /// Integrate `y` in place from `t0` to `t1` (either direction).
    pub fn integrate<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t0: f64,
        y: &mut [f64],
        t1: f64,
        h_init: Option<f64>,
    ) -> Result<Stats> {
        let n = sys.dim();
        assert_eq!(y.len(), n, "state length does not match system dimension");
        if !(self.rtol > 0.0) || !(self.atol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        let mut stats = Stats::default();
        if t0 == t1 {
            stats.next_h = h_init.unwrap_or(0.0);
            return Ok(stats);
        }
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let h_max = self.h_max.min(span);

        let mut w = Work::new(n);
        sys.rhs(t0, y, &mut w.k[0]);
        stats.evals += 1;
        if w.k[0].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t0 });
        }

        let mut h = match h_init {
            Some(h) if h.is_finite() && h != 0.0 => h.abs().min(h_max),
            _ => {
                stats.evals += 1;
                self.initial_step(sys, t0, y, &mut w, dir, h_max)
            }
        };

        let mut t = t0;
        let mut last_rejected = false;
        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::TooManySteps {
                    t,
                    max_steps: self.max_steps,
                });
            }
            let remaining = (t1 - t) * dir;
            let last = 1.01 * h >= remaining || remaining <= 4.0 * f64::EPSILON * t.abs().max(1.0);
            let h_step = if last { remaining } else { h };
            if h_step <= f64::EPSILON * t.abs().max(1.0) * 4.0 && !last {
                return Err(Error::StepSizeUnderflow { t, h: h_step });
            }
            let err = self.step(sys, t, y, dir * h_step, &mut w);
            stats.evals += 11;

            let finite = w.y_new.iter().all(|v| v.is_finite()) && err.is_finite();
            if !finite {
                stats.rejected += 1;
                h = h_step * 0.1;
                last_rejected = true;
                if h <= f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::NonFinite { t });
                }
                continue;
            }

            let fac11 = err.powf(1.0 / 8.0);
            let fac = (fac11 / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h_step / fac;

            if err <= 1.0 {
                stats.accepted += 1;
                if last {
                    y.copy_from_slice(&w.y_new);
                    stats.next_h = h.min(h_new);
                    return Ok(stats);
                }
                t += dir * h_step;
                y.copy_from_slice(&w.y_new);
                // k[3] holds f(t_new, y_new) (first-same-as-last).
                w.k.swap(0, 3);
                if last_rejected {
                    h_new = h_new.min(h_step);
                }
                last_rejected = false;
                h = h_new.min(h_max);
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h = h_step / (1.0 / FAC_MIN).min(fac11 / SAFE);
            }
        }
    }

    /// Integrate through every point of `grid` (monotone, starting after or
    /// at `t0`), calling `observe` with the state at each point.
    pub fn integrate_grid<S, F>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        grid: &[f64],
        mut observe: F,
    ) -> Result<Stats>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &mut [f64]) -> Result<()>,
    {
        let mut y = y0.to_vec();
        let mut t = t0;
        let mut stats = Stats::default();
        let mut h = None;
        for &tg in grid {
            let s = self.integrate(sys, t, &mut y, tg, h)?;
            stats.absorb(s);
            h = Some(s.next_h);
            t = tg;
            observe(t, &mut y)?;
        }
        Ok(stats)
    }

    fn initial_step<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t0: f64,
        y: &[f64],
        w: &mut Work,
        dir: f64,
        h_max: f64,
    ) -> f64 {
        let n = y.len() as f64;
        // A common scale keeps the estimate finite when some components start at zero.
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sk = self.atol + self.rtol * ymax;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for (yi, fi) in y.iter().zip(&w.k[0]) {
            dnf += (fi / sk).powi(2);
            dny += (yi / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(h_max);
        for i in 0..y.len() {
            w.tmp[i] = y[i] + dir * h * w.k[0][i];
        }
        sys.rhs(t0 + dir * h, &w.tmp, &mut w.k[1]);
        let mut der2 = 0.0;
        for i in 0..y.len() {
            der2 += ((w.k[1][i] - w.k[0][i]) / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        let h = (100.0 * h).min(h1).min(h_max);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            1e-6 * h_max
        }
    }

    /// One DOP853 step of signed size `h`. On return `w.y_new` holds the
    /// 8th-order solution, `w.k[3]` holds f(t + h, y_new) and the scaled
    /// error norm is returned.
    fn step<S: OdeSystem + ?Sized>(&self, sys: &S, t: f64, y: &[f64], h: f64, w: &mut Work) -> f64 {
        let n = y.len();
        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($idx:expr, $coef:expr)),*]) => {{
                for i in 0..n {
                    let mut acc = 0.0;
                    $( acc += $coef * w.k[$idx][i]; )*
                    w.tmp[i] = y[i] + h * acc;
                }
                let (tmp, k) = (&w.tmp, &mut w.k);
                sys.rhs(t + $c * h, tmp, &mut k[$dst]);
            }};
        }
        stage!(1, C2, [(0, A21)]);
        stage!(2, C3, [(0, A31), (1, A32)]);
        stage!(3, C4, [(0, A41), (2, A43)]);
        stage!(4, C5, [(0, A51), (2, A53), (3, A54)]);
        stage!(5, C6, [(0, A61), (3, A64), (4, A65)]);
        stage!(6, C7, [(0, A71), (3, A74), (4, A75), (5, A76)]);
        stage!(7, C8, [(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)]);
        stage!(8, C9, [(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)]);
        stage!(
            9,
            C10,
            [(0, A101), (3, A104), (4, A105), (5, A106), (6, A107), (7, A108), (8, A109)]
        );
        stage!(
            10,
            C11,
            [
                (0, A111),
                (3, A114),
                (4, A115),
                (5, A116),
                (6, A117),
                (7, A118),
                (8, A119),
                (9, A1110)
            ]
        );
        stage!(
            11,
            1.0,
            [
                (0, A121),
                (3, A124),
                (4, A125),
                (5, A126),
                (6, A127),
                (7, A128),
                (8, A129),
                (9, A1210),
                (10, A1211)
            ]
        );
        // w.tmp now holds the stage-12 abscissa state; k[11] = f(t + h, tmp).

        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..n {
            let k = &w.k;
            let incr = B1 * k[0][i]
                + B6 * k[5][i]
                + B7 * k[6][i]
                + B8 * k[7][i]
                + B9 * k[8][i]
                + B10 * k[9][i]
                + B11 * k[10][i]
                + B12 * k[11][i];
            let y_new = y[i] + h * incr;
            w.y_new[i] = y_new;
            let sk = self.atol + self.rtol * y[i].abs().max(y_new.abs());
            let e2 = incr - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
            err2 += (e2 / sk).powi(2);
            let e = ER1 * k[0][i]
                + ER6 * k[5][i]
                + ER7 * k[6][i]
                + ER8 * k[7][i]
                + ER9 * k[8][i]
                + ER10 * k[9][i]
                + ER11 * k[10][i]
                + ER12 * k[11][i];
            err += (e / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * n as f64)).sqrt();

        let (y_new, k) = (&w.y_new, &mut w.k);
        sys.rhs(t + h, y_new, &mut k[3]);
        err
    }
}

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.333;
const FAC_MAX: f64 = 6.0;

// Dormand-Prince 8(5,3) tableau (Hairer, Norsett & Wanner).
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;
