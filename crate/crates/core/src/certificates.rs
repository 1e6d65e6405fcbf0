//! Stability certificates for the bifurcation law.
//!
//! [`compute_constants`] evaluates the suprema and infima behind the a-priori
//! bounds on the motor power and the input-to-state stability estimates, and
//! [`check_trajectory`] replays a tick log against those bounds.
//!
//! The bounds, with `x` the law state, `f = f_{m*}(P_H)` and `e = |x - sqrt(f)|`:
//!
//! ```text
//! ceiling:  x(t) <= sqrt(C_f)                      if x(0) <= sqrt(C_f)
//! floor:    x(t) >= sqrt(c_f)                      if x(0) in [sqrt(c_f), sqrt(C_f)], P_H in range
//! iss_pm:   e(t) <= e(0) exp(-beta t) + C1 sup|dm*/dt|^(1/p) + C2 sup|dP_H/dt|^(1/p)
//! iss_m:    |m - m*| <= C3 |m(0) - m*(0)| exp(-beta t) + C4 sup|dm*/dt|^(1/p) + C5 sup|dP_H/dt|^(1/p)
//! ```
//!
//! The last estimate additionally requires `P_H <= P_T(m*)` throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{self, ScheduleParams};
use crate::types::TickRecord;

/// Exponent `p` of the ISS estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum POrder {
    P1,
    P2,
}

impl POrder {
    pub fn value(self) -> u8 {
        match self {
            POrder::P1 => 1,
            POrder::P2 => 2,
        }
    }

    fn root(self, v: f64) -> f64 {
        match self {
            POrder::P1 => v,
            POrder::P2 => v.sqrt(),
        }
    }
}

impl std::str::FromStr for POrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "p1" => Ok(POrder::P1),
            "2" | "p2" => Ok(POrder::P2),
            other => Err(Error::Config(format!("unknown ISS order '{other}', expected 1 or 2"))),
        }
    }
}

/// Options of [`compute_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub p_order: POrder,
    /// Grid intervals per axis (>= 64).
    pub grid_n: usize,
    /// Largest reference admitted in the infimum `c_f`.
    pub m_upper: f64,
    /// Upper edge of the human power grid used for `C_f`; chosen automatically when `None`.
    pub p_upper: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            p_order: POrder::P2,
            grid_n: 256,
            m_upper: 0.95,
            p_upper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    /// `C_f`: sup of `f` over every reference and every human power (W^2).
    pub c_f_sup: f64,
    /// `c_f`: inf of `f` over the certified rectangle (W^2).
    pub c_f_inf: f64,
    /// Sup of `|df/dm*|` over the rectangle (W^2).
    pub f1_sup: f64,
    /// Sup of `|df/dP_H|` over the rectangle (W).
    pub f2_sup: f64,
    /// Inf of `alpha` over the rectangle (1/(W^2 s)).
    pub zeta_inf: f64,
    /// Exponential rate of the ISS estimates (1/s).
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub p_h_min: f64,
    pub p_h_max: f64,
    pub p_order: POrder,
    pub m_upper: f64,
    /// Corner `(m*, P_H)` where `c_f` is attained.
    pub c_f_argmin: (f64, f64),
    /// Reference at which `C_f` is attained.
    pub c_f_sup_argmax_m_star: f64,
    /// Upper edge of the power grid behind `C_f` (W).
    pub p_upper: f64,
    /// Analytic bound on `f` beyond `p_upper` (W^2).
    pub tail_bound: f64,
    pub grid_n: usize,
    pub schedule: ScheduleParams,
}

impl CertificateConstants {
    pub fn ceiling(&self) -> f64 {
        self.c_f_sup.sqrt()
    }

    pub fn floor(&self) -> f64 {
        self.c_f_inf.sqrt()
    }
}

/// Maximise `g` over `[lo, hi]`: uniform grid plus `extra` points, then a
/// golden-section polish around the best grid node.
fn maximize_1d(lo: f64, hi: f64, n: usize, extra: &[f64], g: impl Fn(f64) -> f64) -> (f64, f64) {
    let node = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let mut best = (lo, g(lo));
    let mut best_i = 0;
    for i in 1..=n {
        let x = node(i);
        let v = g(x);
        if v > best.1 {
            best = (x, v);
            best_i = i;
        }
    }
    let (mut a, mut b) = (node(best_i.saturating_sub(1)), node((best_i + 1).min(n)));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - ratio * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + ratio * (b - a);
            gd = g(d);
        }
    }
    for (x, v) in [(c, gc), (d, gd)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    for &x in extra {
        if (lo..=hi).contains(&x) {
            let v = g(x);
            if v > best.1 {
                best = (x, v);
            }
        }
    }
    best
}

fn minimize_1d(lo: f64, hi: f64, n: usize, extra: &[f64], g: impl Fn(f64) -> f64) -> (f64, f64) {
    let (x, v) = maximize_1d(lo, hi, n, extra, |x| -g(x));
    (x, -v)
}

/// Reference at which `P_T(m*) = p`, if it lies in `[lo, hi]`.
fn threshold_crossing(p: f64, lo: f64, hi: f64, params: &ScheduleParams) -> Option<f64> {
    let m = params.eta + (p - params.pt_min) / schedule::threshold_slope(params);
    (lo..=hi).contains(&m).then_some(m)
}

fn f_unchecked(p: f64, m: f64, params: &ScheduleParams) -> f64 {
    let pt = params.pt_min + schedule::threshold_slope(params) * (m - params.eta);
    if p <= pt {
        schedule::cooperative_f(p, m)
    } else {
        schedule::competitive_f(p, m, params)
    }
}

fn peak_unchecked(m: f64, params: &ScheduleParams) -> f64 {
    let pt = params.pt_min + schedule::threshold_slope(params) * (m - params.eta);
    let c = 2.0 * (params.gamma_decay + 1.0 / pt);
    pt + 1.0 / (2.0 * params.gamma_decay) - 1.0 / c
}

/// Analytic bound on `f` for `p >= pt_max + u_tail`, valid for every reference.
fn tail_bound(u_tail: f64, params: &ScheduleParams, grid_n: usize) -> f64 {
    let gamma = params.gamma_decay;
    let (_, a_max) = maximize_1d(params.eta, 1.0, grid_n, &[params.eta], |m| {
        schedule::cooperative_f(params.pt_min + schedule::threshold_slope(params) * (m - params.eta), m)
    });
    let c_max = 2.0 * (gamma + 1.0 / params.pt_min);
    // (1 + c u) e^{-2 gamma u} <= e^{-2 gamma U} + c/(e gamma) e^{-gamma U}  for u >= U
    a_max * ((-2.0 * gamma * u_tail).exp() + c_max / (std::f64::consts::E * gamma) * (-gamma * u_tail).exp())
}

/// Sup of `|g|` over `[m_lo, m_hi] x [p_lo, p_hi]` on a grid, refined around the best cell.
fn sup_2d(
    m_lo: f64,
    m_hi: f64,
    p_lo: f64,
    p_hi: f64,
    n: usize,
    params: &ScheduleParams,
    g: impl Fn(f64, f64) -> f64,
) -> (f64, f64, f64) {
    let mut best = (m_lo, p_lo, g(p_lo, m_lo).abs());
    let dm = (m_hi - m_lo) / n as f64;
    let dp = (p_hi - p_lo) / n as f64;
    let scan = |best: &mut (f64, f64, f64), m: f64, ps: &[f64]| {
        for &p in ps {
            let v = g(p, m).abs();
            if v > best.2 {
                *best = (m, p, v);
            }
        }
    };
    let mut row = Vec::with_capacity(n + 3);
    for i in 0..=n {
        let m = m_lo + dm * i as f64;
        row.clear();
        row.extend((0..=n).map(|j| p_lo + dp * j as f64));
        let pt = params.pt_min + schedule::threshold_slope(params) * (m - params.eta);
        row.extend(
            [pt, peak_unchecked(m, params)]
                .into_iter()
                .filter(|p| (p_lo..=p_hi).contains(p)),
        );
        scan(&mut best, m, &row);
    }
    let (bm, bp, _) = best;
    let sub = 32;
    for i in 0..=sub {
        let m = (bm - dm + 2.0 * dm * i as f64 / sub as f64).clamp(m_lo, m_hi);
        row.clear();
        row.extend((0..=sub).map(|j| (bp - dp + 2.0 * dp * j as f64 / sub as f64).clamp(p_lo, p_hi)));
        scan(&mut best, m, &row);
    }
    best
}

/// Evaluate every constant of the certificates for human power in `[p_h_min, p_h_max]`.
pub fn compute_constants(
    params: &ScheduleParams,
    p_h_min: f64,
    p_h_max: f64,
    options: CertifyOptions,
) -> Result<CertificateConstants> {
    params.validate()?;
    if !(p_h_min.is_finite() && p_h_min > 0.0 && p_h_max.is_finite() && p_h_max > p_h_min) {
        return Err(Error::Config(format!(
            "certified power range must satisfy 0 < p_h_min < p_h_max, got [{p_h_min}, {p_h_max}]"
        )));
    }
    if options.grid_n < 64 {
        return Err(Error::Config(format!("grid_n must be >= 64, got {}", options.grid_n)));
    }
    let m_upper = options.m_upper;
    if !(m_upper > params.eta && m_upper <= 1.0) {
        return Err(Error::Config(format!(
            "m_upper must lie in ({}, 1], got {m_upper}",
            params.eta
        )));
    }
    let n = options.grid_n;
    let eta = params.eta;
    let gamma = params.gamma_decay;

    // C_f over [eta, 1] x [0, p_upper], with an analytic certificate beyond p_upper.
    let row_sup = |m: f64| f_unchecked(peak_unchecked(m, params), m, params);
    let (_, analytic_sup) = maximize_1d(eta, 1.0, n, &[eta], row_sup);
    let p_upper = match options.p_upper {
        Some(p) => p,
        None => {
            let mut u = 1.0 / gamma;
            while tail_bound(u, params, n) > 1e-3 * analytic_sup {
                u *= 2.0;
                if u > 1e7 {
                    return Err(Error::Refinement {
                        quantity: "C_f",
                        grid_n: n,
                        gap: tail_bound(u, params, n),
                        value: analytic_sup,
                    });
                }
            }
            params.pt_max + u
        }
    };
    let (c_f_m, _, grid_sup) = sup_2d(eta, 1.0, 0.0, p_upper, n, params, |p, m| f_unchecked(p, m, params));
    let (c_f_m, c_f_sup) = if analytic_sup > grid_sup {
        let (m, v) = maximize_1d(eta, 1.0, n, &[eta], row_sup);
        (m, v)
    } else {
        (c_f_m, grid_sup)
    };
    let tail = tail_bound((p_upper - params.pt_max).max(0.0), params, n);
    if tail > 0.01 * c_f_sup {
        return Err(Error::Refinement {
            quantity: "C_f",
            grid_n: n,
            gap: tail,
            value: c_f_sup,
        });
    }

    // c_f: on each row f is unimodal in P_H, so the inf sits at an end of the power range.
    let row_inf = |m: f64| f_unchecked(p_h_min, m, params).min(f_unchecked(p_h_max, m, params));
    let kinks: Vec<f64> = [p_h_min, p_h_max]
        .iter()
        .filter_map(|&p| threshold_crossing(p, eta, m_upper, params))
        .chain([eta, m_upper])
        .collect();
    let (c_f_inf_m, c_f_inf) = minimize_1d(eta, m_upper, n, &kinks, row_inf);
    if c_f_inf.is_nan() || c_f_inf <= 0.0 {
        return Err(Error::domain(
            "c_f",
            c_f_inf,
            format!("(0, inf) W^2: infimum attained at m* = {c_f_inf_m}; lower m_upper"),
        ));
    }
    let c_f_inf_p = if f_unchecked(p_h_min, c_f_inf_m, params) <= f_unchecked(p_h_max, c_f_inf_m, params) {
        p_h_min
    } else {
        p_h_max
    };

    let partial = |p: f64, m: f64, pick: fn(schedule::FPartials) -> f64| {
        schedule::f_partials(p, m, params).map(pick).unwrap_or(0.0)
    };
    let (_, _, f1_sup) = sup_2d(eta, 1.0, p_h_min, p_h_max, n, params, |p, m| {
        partial(p, m, |d| d.df_dm_star)
    });
    let (_, _, f2_sup) = sup_2d(eta, 1.0, p_h_min, p_h_max, n, params, |p, m| {
        partial(p, m, |d| d.df_dp_human)
    });

    let (_, rect_sup) = maximize_1d(eta, 1.0, n, &[eta], |m| {
        let peak = peak_unchecked(m, params);
        let mut v = f_unchecked(p_h_min, m, params).max(f_unchecked(p_h_max, m, params));
        if (p_h_min..=p_h_max).contains(&peak) {
            v = v.max(f_unchecked(peak, m, params));
        }
        v
    });
    let zeta_inf = schedule::alpha_from_f(rect_sup, params);

    let (beta, c1, c2) = match options.p_order {
        POrder::P2 => {
            let beta = 2.0 * zeta_inf * c_f_inf;
            let spread = (c_f_sup / c_f_inf).sqrt();
            (beta, (f1_sup / beta * spread).sqrt(), (f2_sup / beta * spread).sqrt())
        }
        POrder::P1 => {
            let beta = zeta_inf * c_f_inf;
            let scale = 2.0 * std::f64::consts::SQRT_2 * zeta_inf * c_f_inf.powf(1.5);
            (beta, f1_sup / scale, f2_sup / scale)
        }
    };
    let k_ratio = p_h_max / (c_f_inf.sqrt() + p_h_min).powi(2);
    let l_ratio = (c_f_sup.sqrt() + p_h_max).powi(2) / p_h_min;

    Ok(CertificateConstants {
        c_f_sup,
        c_f_inf,
        f1_sup,
        f2_sup,
        zeta_inf,
        beta,
        c1,
        c2,
        c3: k_ratio * l_ratio,
        c4: k_ratio * c1,
        c5: k_ratio * c2,
        p_h_min,
        p_h_max,
        p_order: options.p_order,
        m_upper,
        c_f_argmin: (c_f_inf_m, c_f_inf_p),
        c_f_sup_argmax_m_star: c_f_m,
        p_upper,
        tail_bound: tail,
        grid_n: n,
        schedule: *params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    Lemma1,
    Lemma2,
    IssPm,
    IssM,
}

impl BoundName {
    pub const ALL: [BoundName; 4] = [BoundName::Lemma1, BoundName::Lemma2, BoundName::IssPm, BoundName::IssM];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundName::Lemma1 => "lemma1",
            BoundName::Lemma2 => "lemma2",
            BoundName::IssPm => "iss_pm",
            BoundName::IssM => "iss_m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub t: f64,
    pub bound_name: BoundName,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`.
    pub margin: f64,
}

/// Per-bound tick counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundCounts {
    pub lemma1: usize,
    pub lemma2: usize,
    pub iss_pm: usize,
    pub iss_m: usize,
}

impl BoundCounts {
    fn bump(&mut self, b: BoundName) {
        match b {
            BoundName::Lemma1 => self.lemma1 += 1,
            BoundName::Lemma2 => self.lemma2 += 1,
            BoundName::IssPm => self.iss_pm += 1,
            BoundName::IssM => self.iss_m += 1,
        }
    }

    pub fn get(&self, b: BoundName) -> usize {
        match b {
            BoundName::Lemma1 => self.lemma1,
            BoundName::Lemma2 => self.lemma2,
            BoundName::IssPm => self.iss_pm,
            BoundName::IssM => self.iss_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub violations: Vec<BoundViolation>,
    /// Ticks at which a bound was evaluated.
    pub checked: BoundCounts,
    /// Ticks skipped because the hypotheses of a bound did not hold.
    pub skipped: BoundCounts,
}

impl TrajectoryReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, b: BoundName) -> usize {
        self.violations.iter().filter(|v| v.bound_name == b).count()
    }
}

/// Options of [`check_trajectory_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions<'a> {
    /// Analytic `dm*/dt` per tick, preferred over finite differences.
    pub m_star_rate: Option<&'a [f64]>,
    /// Absolute slack for integration error, in the units of each bound.
    pub abs_tolerance: f64,
    /// Relative slack on the right-hand side.
    pub rel_tolerance: f64,
}

impl Default for CheckOptions<'_> {
    fn default() -> Self {
        Self {
            m_star_rate: None,
            abs_tolerance: 1e-6,
            rel_tolerance: 1e-6,
        }
    }
}

/// Central differences, one-sided at the ends.
pub fn finite_difference(values: &[f64], times: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

pub fn check_trajectory(log: &[TickRecord], constants: &CertificateConstants) -> TrajectoryReport {
    check_trajectory_with(log, constants, CheckOptions::default())
}

/// An open stretch during which the hypotheses of a bound hold.
#[derive(Debug, Clone, Copy)]
struct Stretch {
    t0: f64,
    e0: f64,
    sup_m_rate: f64,
    sup_p_rate: f64,
}

/// Replay `log` against the certificate bounds.
///
/// The law state of each row is paired with that row's filtered human power
/// and reference. A stretch restarts at the first tick where the hypotheses
/// hold again; ticks outside every stretch count as skipped.
pub fn check_trajectory_with(
    log: &[TickRecord],
    constants: &CertificateConstants,
    options: CheckOptions<'_>,
) -> TrajectoryReport {
    let mut report = TrajectoryReport::default();
    let params = &constants.schedule;
    let times: Vec<f64> = log.iter().map(TickRecord::t).collect();
    let p_rate = finite_difference(&log.iter().map(|r| r.sample.p_human_out).collect::<Vec<_>>(), &times);
    let m_rate = match options.m_star_rate {
        Some(rates) if rates.len() == log.len() => rates.to_vec(),
        _ => finite_difference(&log.iter().map(|r| r.m_star).collect::<Vec<_>>(), &times),
    };
    let ceiling = constants.ceiling();
    let floor = constants.floor();
    let root = |v: f64| constants.p_order.root(v.abs());

    let mut lemma1_open = false;
    let mut lemma2: Option<()> = None;
    let mut iss_pm: Option<Stretch> = None;
    let mut iss_m: Option<Stretch> = None;

    let judge = |report: &mut TrajectoryReport, t: f64, bound: BoundName, lhs: f64, rhs: f64| {
        report.checked.bump(bound);
        let slack = options.rel_tolerance * (rhs.abs() + 1.0) + options.abs_tolerance;
        // NaN on either side counts as a violation
        if lhs.partial_cmp(&(rhs + slack)).is_none_or(|o| o.is_gt()) {
            report.violations.push(BoundViolation {
                t,
                bound_name: bound,
                lhs,
                rhs,
                margin: lhs - rhs,
            });
        }
    };

    for (k, rec) in log.iter().enumerate() {
        let t = rec.t();
        let x = rec.p_motor_target;
        let ph = rec.sample.p_human_out;
        let m_star = rec.m_star;
        let m_ok = m_star >= params.eta && m_star <= 1.0;

        // ceiling
        if k == 0 {
            lemma1_open = m_ok && x <= ceiling;
        }
        if lemma1_open && m_ok {
            judge(&mut report, t, BoundName::Lemma1, x, ceiling);
        } else {
            lemma1_open = false;
            report.skipped.bump(BoundName::Lemma1);
        }

        let in_rect =
            m_star >= params.eta && m_star <= constants.m_upper && ph >= constants.p_h_min && ph <= constants.p_h_max;
        let f = if in_rect {
            f_unchecked(ph, m_star, params)
        } else {
            f64::NAN
        };
        let e = (x - f.sqrt()).abs();
        let x_ok = x >= floor && x <= ceiling;
        if !in_rect {
            lemma2 = None;
            iss_pm = None;
        }

        // floor
        if in_rect && (lemma2.is_some() || x_ok) {
            lemma2 = Some(());
            judge(&mut report, t, BoundName::Lemma2, floor, x);
        } else {
            report.skipped.bump(BoundName::Lemma2);
        }

        // ISS on the motor power
        if in_rect && (iss_pm.is_some() || x_ok) {
            let s = iss_pm.get_or_insert(Stretch {
                t0: t,
                e0: e,
                sup_m_rate: 0.0,
                sup_p_rate: 0.0,
            });
            s.sup_m_rate = s.sup_m_rate.max(m_rate[k].abs());
            s.sup_p_rate = s.sup_p_rate.max(p_rate[k].abs());
            let rhs = s.e0 * (-constants.beta * (t - s.t0)).exp()
                + constants.c1 * root(s.sup_m_rate)
                + constants.c2 * root(s.sup_p_rate);
            judge(&mut report, t, BoundName::IssPm, e, rhs);
        } else {
            report.skipped.bump(BoundName::IssPm);
        }

        // ISS on the ratio, cooperative stretches only
        let cooperative = in_rect && ph <= params.pt_min + schedule::threshold_slope(params) * (m_star - params.eta);
        if !cooperative {
            iss_m = None;
        }
        if cooperative && (iss_m.is_some() || x_ok) {
            let m_hat = ph / (x + ph);
            let err = (m_hat - m_star).abs();
            let s = iss_m.get_or_insert(Stretch {
                t0: t,
                e0: err,
                sup_m_rate: 0.0,
                sup_p_rate: 0.0,
            });
            s.sup_m_rate = s.sup_m_rate.max(m_rate[k].abs());
            s.sup_p_rate = s.sup_p_rate.max(p_rate[k].abs());
            let rhs = constants.c3 * s.e0 * (-constants.beta * (t - s.t0)).exp()
                + constants.c4 * root(s.sup_m_rate)
                + constants.c5 * root(s.sup_p_rate);
            judge(&mut report, t, BoundName::IssM, err, rhs);
        } else {
            report.skipped.bump(BoundName::IssM);
        }
    }
    report
}
