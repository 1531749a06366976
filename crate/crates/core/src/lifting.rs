//! Lifts of circles `γ_u(t) = ζ + u e^{it}` through branches of `f⁻¹`.
//!
//! Everything here works in the normalized image plane: the omitted value
//! `ζ` is real and positive and the radius bound is 1. The reference curve
//! `E(s) = f(s a)` joins 0 to the contact point `a` of the origin
//! component; its distance profile `h(s) = |E(s) - ζ|` supplies start
//! points for the lifts, one branch per monotone run of `h`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{sublevel_area, AreaEstimate, InnerRadiusResult, QuadConfig};
use crate::error::{Error, Result};
use crate::funcmodel::HoloMap;

// ---------------------------------------------------------------------------
// Reference curve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub s: f64,
    pub e: Complex64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub contact_point: Complex64,
    pub zeta: f64,
    pub samples: Vec<CurveSample>,
}

const CURVE_STEP: f64 = 0.005;

impl ReferenceCurve {
    pub fn point(&self, s: f64) -> Complex64 {
        self.contact_point * s
    }

    pub fn end(&self) -> Complex64 {
        self.samples.last().map(|p| p.e).unwrap_or_default()
    }

    /// Minimum and maximum of `h` over the samples.
    pub fn h_range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.h), hi.max(p.h))
            })
    }
}

/// Samples `E(s) = f(s a)` on `n_samples` uniform parameters, then bisects
/// any gap where `|ΔE| ≥ 0.005`.
pub fn reference_curve<F: HoloMap + ?Sized>(
    map: &F,
    inner: &InnerRadiusResult,
    zeta: f64,
    n_samples: usize,
) -> Result<ReferenceCurve> {
    let a = inner.contact_point;
    let n = n_samples.max(2);
    let sample = |s: f64| -> Result<CurveSample> {
        let e = map.value(a * s)?;
        Ok(CurveSample {
            s,
            e,
            h: (e - zeta).norm(),
        })
    };
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push(sample(i as f64 / (n - 1) as f64)?);
    }
    let mut out = Vec::with_capacity(n);
    out.push(samples[0]);
    for w in samples.windows(2) {
        let mut pending = vec![(w[0], w[1])];
        let mut emitted = Vec::new();
        while let Some((p, q)) = pending.pop() {
            if (q.e - p.e).norm() < CURVE_STEP || q.s - p.s < 1e-12 {
                emitted.push(q);
            } else {
                let mid = sample(0.5 * (p.s + q.s))?;
                pending.push((mid, q));
                pending.push((p, mid));
            }
        }
        out.extend(emitted);
    }
    Ok(ReferenceCurve {
        contact_point: a,
        zeta,
        samples: out,
    })
}

// ---------------------------------------------------------------------------
// Case classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    ZetaSmall,
    OuterAnnulus,
    InnerAnnulus,
    Rectangle,
}

impl Case {
    pub fn label(&self) -> &'static str {
        match self {
            Case::ZetaSmall => "zeta-small",
            Case::OuterAnnulus => "outer-annulus",
            Case::InnerAnnulus => "inner-annulus",
            Case::Rectangle => "rectangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangleParams {
    pub u_range: (f64, f64),
    pub center: f64,
    /// `Re E(1)`, bounded below by `(1 - ζ/4 - 1/64) / (2ζ)`.
    pub re_end: f64,
    pub re_end_exceeds_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case: Case,
    pub m: f64,
    pub mx: f64,
    pub u_range: (f64, f64),
    pub comparability_c: Option<f64>,
    pub rectangle: Option<RectangleParams>,
}

/// Angular measure of `{t : |ζ + u e^{it}| < 1}`.
pub fn arc_measure_in_disk(zeta: f64, u: f64) -> f64 {
    let c = (1.0 - zeta * zeta - u * u) / (2.0 * zeta * u);
    if c >= 1.0 {
        2.0 * PI
    } else if c <= -1.0 {
        0.0
    } else {
        2.0 * PI - 2.0 * c.acos()
    }
}

/// `max_u 2π / |S_u ∩ 𝔻|` over a 256-point grid of the range.
pub fn comparability_constant(zeta: f64, u_range: (f64, f64)) -> f64 {
    (0..=256)
        .map(|i| {
            let u = u_range.0 + (u_range.1 - u_range.0) * i as f64 / 256.0;
            2.0 * PI / arc_measure_in_disk(zeta, u)
        })
        .fold(0.0, f64::max)
}

pub const RECTANGLE_RE_BOUND: f64 = 47.0 / 128.0;

pub fn classify_case(zeta: f64, curve: &ReferenceCurve) -> CaseLabel {
    let (m, mx) = curve.h_range();
    let (case, u_range) = if zeta < 0.25 {
        (Case::ZetaSmall, (0.25, 0.75))
    } else if mx - zeta > 0.125 {
        (Case::OuterAnnulus, (zeta, zeta + 0.125))
    } else if zeta - m > 0.125 {
        (Case::InnerAnnulus, (zeta - 0.125, zeta))
    } else {
        (Case::Rectangle, (0.0, 0.125))
    };
    let comparability_c = matches!(case, Case::OuterAnnulus | Case::InnerAnnulus)
        .then(|| comparability_constant(zeta, u_range));
    let rectangle = (case == Case::Rectangle).then(|| {
        let re_end = curve.end().re;
        RectangleParams {
            u_range,
            center: zeta,
            re_end,
            re_end_exceeds_bound: re_end > RECTANGLE_RE_BOUND,
        }
    });
    CaseLabel {
        case,
        m,
        mx,
        u_range,
        comparability_c,
        rectangle,
    }
}

// ---------------------------------------------------------------------------
// Monotone intervals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneInterval {
    pub index: usize,
    pub direction: Monotonicity,
    /// Sample-index bracket of the monotone run.
    pub samples: (usize, usize),
    /// `J = (s₀, s₁)`.
    pub j: (f64, f64),
    /// `I = h(J)`.
    pub i: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCover {
    pub intervals: Vec<MonotoneInterval>,
    pub uncovered: f64,
}

fn monotone_runs(curve: &ReferenceCurve, dir: Monotonicity) -> Vec<(usize, usize)> {
    let sign = match dir {
        Monotonicity::Increasing => 1.0,
        Monotonicity::Decreasing => -1.0,
    };
    let h: Vec<f64> = curve.samples.iter().map(|p| sign * p.h).collect();
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..h.len() {
        if h[i] <= h[i - 1] {
            if i - 1 > start {
                runs.push((start, i - 1));
            }
            start = i;
        }
    }
    if h.len() > 1 + start {
        runs.push((start, h.len() - 1));
    }
    runs
}

fn run_range(curve: &ReferenceCurve, run: (usize, usize)) -> (f64, f64) {
    let (a, b) = (curve.samples[run.0].h, curve.samples[run.1].h);
    (a.min(b), a.max(b))
}

/// Linear inverse of `h` on the samples of a monotone run.
fn invert_on_samples(curve: &ReferenceCurve, run: (usize, usize), u: f64) -> f64 {
    let s = &curve.samples;
    for k in run.0..run.1 {
        let (a, b) = (s[k].h, s[k + 1].h);
        if a.min(b) <= u && u <= a.max(b) {
            let t = (u - a) / (b - a);
            return s[k].s + t * (s[k + 1].s - s[k].s);
        }
    }
    let (p, q) = (s[run.0], s[run.1]);
    if (p.h - u).abs() <= (q.h - u).abs() {
        p.s
    } else {
        q.s
    }
}

/// Covers `u_range` from below by ranges of increasing runs of `h`,
/// always taking the earliest run through the lowest uncovered radius.
pub fn monotone_intervals(curve: &ReferenceCurve, u_range: (f64, f64)) -> Result<IntervalCover> {
    monotone_intervals_directed(curve, u_range, Monotonicity::Increasing)
}

/// As [`monotone_intervals`], with runs of the given direction.
pub fn monotone_intervals_directed(
    curve: &ReferenceCurve,
    u_range: (f64, f64),
    direction: Monotonicity,
) -> Result<IntervalCover> {
    let (lo, hi) = u_range;
    if !(hi > lo) {
        return Err(Error::BadParameter(format!("empty radius range {u_range:?}")));
    }
    let runs = monotone_runs(curve, direction);
    let mut cursor = lo;
    let mut uncovered = 0.0;
    let mut intervals = Vec::new();
    while cursor < hi {
        let hit = runs.iter().find(|&&r| {
            let (a, b) = run_range(curve, r);
            a <= cursor && cursor < b
        });
        if let Some(&run) = hit {
            let top = run_range(curve, run).1.min(hi);
            let (s0, s1) = (
                invert_on_samples(curve, run, cursor),
                invert_on_samples(curve, run, top),
            );
            intervals.push(MonotoneInterval {
                index: intervals.len(),
                direction,
                samples: run,
                j: (s0.min(s1), s0.max(s1)),
                i: (cursor, top),
            });
            cursor = top;
        } else {
            let next = runs
                .iter()
                .map(|&r| run_range(curve, r).0)
                .filter(|&v| v > cursor)
                .fold(hi, f64::min);
            uncovered += next - cursor;
            cursor = next;
        }
    }
    let allowed = 1e-3 * (hi - lo);
    if uncovered > allowed {
        return Err(Error::CoverageGap { uncovered, allowed });
    }
    Ok(IntervalCover {
        intervals,
        uncovered,
    })
}

/// Bisection for `h(s) = u` on the true map inside the interval's sample
/// bracket.
pub fn start_parameter<F: HoloMap + ?Sized>(
    map: &F,
    curve: &ReferenceCurve,
    interval: &MonotoneInterval,
    u: f64,
) -> Result<f64> {
    let h = |s: f64| map.value(curve.point(s)).map(|e| (e - curve.zeta).norm());
    let smp = &curve.samples;
    let rising = interval.direction == Monotonicity::Increasing;
    let (first, last) = interval.samples;
    let mut k = first;
    while k + 1 < last && ((smp[k + 1].h < u) == rising) {
        k += 1;
    }
    let (h0, h1) = (smp[k].h, smp[k + 1].h);
    let (mut lo, mut hi) = (smp[k].s, smp[k + 1].s);
    if (u <= h0) == rising {
        return Ok(lo);
    }
    if (u >= h1) == rising {
        return Ok(hi);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if (h(mid)? < u) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Lifting ODE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub lift_tol: f64,
    pub crit_tol: f64,
    pub boundary_tol: f64,
    pub max_steps: usize,
    pub h_init: f64,
    pub h_max: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            lift_tol: 1e-8,
            crit_tol: 1e-6,
            boundary_tol: 1e-4,
            max_steps: 100_000,
            h_init: 1e-3,
            h_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReachedBoundary,
    StepLimit,
    CriticalPointProximity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPath {
    pub u: f64,
    pub zeta: f64,
    pub theta: f64,
    pub t_end: f64,
    pub branch_k: i64,
    pub samples: Vec<(f64, Complex64)>,
    pub termination: Termination,
}

impl LiftedPath {
    /// `γ_u(t) = ζ + u e^{it}`.
    pub fn target(&self, t: f64) -> Complex64 {
        self.zeta + Complex64::from_polar(self.u, t)
    }

    pub fn max_fidelity<F: HoloMap + ?Sized>(&self, map: &F) -> f64 {
        self.samples
            .iter()
            .map(|&(t, z)| {
                map.value(z)
                    .map(|v| (v - self.target(t)).norm())
                    .unwrap_or(f64::INFINITY)
            })
            .fold(0.0, f64::max)
    }

    /// Shifts every angle by `2πk`; `f(α)` is unchanged.
    fn shift_branch(&mut self, k: i64) {
        let d = 2.0 * PI * k as f64;
        self.theta += d;
        self.t_end += d;
        self.branch_k += k;
        for s in &mut self.samples {
            s.0 += d;
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["t", "re", "im"]).map_err(io)?;
        for &(t, z) in &self.samples {
            w.write_record([t.to_string(), z.re.to_string(), z.im.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const LOCAL_ERR_TOL: f64 = 1e-10;
const BOUNDARY_LANDING: f64 = 1e-10;

struct LiftOde<'a, F: ?Sized> {
    map: &'a F,
    zeta: f64,
    u: f64,
    crit_tol: f64,
}

impl<'a, F: HoloMap + ?Sized> LiftOde<'a, F> {
    fn target(&self, t: f64) -> Complex64 {
        self.zeta + Complex64::from_polar(self.u, t)
    }

    fn rhs(&self, t: f64, z: Complex64) -> Option<Complex64> {
        let d = self.map.value_and_derivative(z).ok()?.1;
        (d.norm() >= self.crit_tol).then(|| Complex64::i() * self.u * Complex64::from_polar(1.0, t) / d)
    }

    /// One Dormand-Prince step, returning the fifth-order point, the
    /// embedded error estimate and the pre-correction fidelity.
    fn step(&self, t: f64, z: Complex64, h: f64) -> Option<(Complex64, f64, f64)> {
        let mut k = [Complex64::new(0.0, 0.0); 7];
        for s in 0..7 {
            let mut y = z;
            for (j, a) in DP_A[s].iter().enumerate().take(s) {
                y += k[j] * (h * a);
            }
            if y.norm() >= 1.0 + 1e-6 {
                return None;
            }
            k[s] = self.rhs(t + DP_C[s] * h, y)?;
        }
        let mut y5 = z;
        let mut err = Complex64::new(0.0, 0.0);
        for s in 0..7 {
            y5 += k[s] * (h * DP_B5[s]);
            err += k[s] * (h * (DP_B5[s] - DP_B4[s]));
        }
        let fid = (self.map.value(y5).ok()? - self.target(t + h)).norm();
        Some((y5, err.norm(), fid))
    }

    /// One Newton step onto `{f = γ_u(t)}`.
    fn project(&self, t: f64, z: Complex64) -> Option<Complex64> {
        let (v, d) = self.map.value_and_derivative(z).ok()?;
        let next = z - (v - self.target(t)) / d;
        next.is_finite().then_some(next)
    }

    fn advance(&self, t: f64, z: Complex64, h: f64, lift_tol: f64) -> Option<(Complex64, f64)> {
        let (y, err, fid) = self.step(t, z, h)?;
        if fid > lift_tol {
            return None;
        }
        Some((self.project(t + h, y)?, err))
    }
}

/// Integrates `dα/dt = i u e^{it} / f'(α)` counterclockwise from
/// `α(θ) = s_start · a`, where `θ = arg(f(s_start a) - ζ) + 2πk`.
pub fn lift_circle<F: HoloMap + ?Sized>(
    map: &F,
    curve: &ReferenceCurve,
    u: f64,
    s_start: f64,
    branch_k: i64,
    cfg: &LiftConfig,
) -> Result<LiftedPath> {
    let zeta = curve.zeta;
    let z0 = curve.point(s_start);
    let w0 = map.value(z0)?;
    let theta = (w0 - zeta).arg() + 2.0 * PI * branch_k as f64;
    let ode = LiftOde {
        map,
        zeta,
        u,
        crit_tol: cfg.crit_tol,
    };
    let fidelity = (w0 - ode.target(theta)).norm();
    if !(fidelity <= cfg.lift_tol) {
        return Err(Error::StartOffCurve { fidelity });
    }
    let mut samples = vec![(theta, z0)];
    let (mut t, mut z) = (theta, z0);
    let mut h = cfg.h_init;
    let r_land = 1.0 - BOUNDARY_LANDING;
    let mut termination = Termination::StepLimit;
    for _ in 0..cfg.max_steps {
        match ode.step(t, z, h) {
            Some((y, err, fid)) if err <= LOCAL_ERR_TOL && fid <= cfg.lift_tol => {
                let Some(mut y) = ode.project(t + h, y) else {
                    h *= 0.25;
                    continue;
                };
                let mut dt = h;
                let landed = y.norm() >= r_land;
                if landed {
                    let (mut lo, mut hi) = (0.0, h);
                    let mut best = None;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        match ode.advance(t, z, mid, cfg.lift_tol) {
                            Some((p, _)) if p.norm() < r_land => {
                                lo = mid;
                                best = Some(p);
                            }
                            _ => hi = mid,
                        }
                    }
                    match best {
                        Some(p) => {
                            y = p;
                            dt = lo;
                        }
                        None => {
                            termination = Termination::ReachedBoundary;
                            break;
                        }
                    }
                }
                t += dt;
                z = y;
                samples.push((t, z));
                if landed {
                    termination = Termination::ReachedBoundary;
                    break;
                }
                let d = map.value_and_derivative(z)?.1;
                if d.norm() < cfg.crit_tol {
                    termination = Termination::CriticalPointProximity;
                    break;
                }
                let grow = if err > 0.0 {
                    (0.9 * (LOCAL_ERR_TOL / err).powf(0.2)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                h = (h * grow).min(cfg.h_max);
            }
            Some((_, err, _)) => {
                let shrink = if err > LOCAL_ERR_TOL {
                    (0.9 * (LOCAL_ERR_TOL / err).powf(0.2)).clamp(0.1, 0.5)
                } else {
                    0.5
                };
                h *= shrink;
            }
            // Stage left the disk or hit a critical value; shrink and let
            // the landing bisection find the boundary.
            None => h *= 0.25,
        }
        if h < 1e-14 {
            termination = if z.norm() >= 1.0 - cfg.boundary_tol {
                Termination::ReachedBoundary
            } else {
                Termination::CriticalPointProximity
            };
            break;
        }
    }
    Ok(LiftedPath {
        u,
        zeta,
        theta,
        t_end: t,
        branch_k,
        samples,
        termination,
    })
}

// ---------------------------------------------------------------------------
// Path queries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplicityReport {
    pub simple: bool,
    /// Parameters `(t, t')` of an offending sample pair.
    pub offending: Option<(f64, f64)>,
}

/// Flags sample pairs that are within `tol` in the plane but at least
/// `4 tol` apart along the path.
pub fn simplicity_report(path: &LiftedPath, tol: f64) -> SimplicityReport {
    use std::collections::HashMap;
    let pts = &path.samples;
    let mut arclen = vec![0.0; pts.len()];
    for i in 1..pts.len() {
        arclen[i] = arclen[i - 1] + (pts[i].1 - pts[i - 1].1).norm();
    }
    let key = |z: Complex64| ((z.re / tol).floor() as i64, (z.im / tol).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &(_, z)) in pts.iter().enumerate() {
        let (kx, ky) = key(z);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = grid.get(&(kx + dx, ky + dy)) {
                    for &j in list {
                        if i > j + 1
                            && (pts[j].1 - z).norm() < tol
                            && (arclen[i] - arclen[j]).abs() >= 4.0 * tol
                        {
                            return SimplicityReport {
                                simple: false,
                                offending: Some((pts[j].0, pts[i].0)),
                            };
                        }
                    }
                }
            }
        }
        grid.entry((kx, ky)).or_default().push(i);
    }
    SimplicityReport {
        simple: true,
        offending: None,
    }
}

pub fn simplicity_check(path: &LiftedPath, tol: f64) -> bool {
    simplicity_report(path, tol).simple
}

/// `Length(β_u) = T_u - θ_u`.
pub fn beta_length(path: &LiftedPath) -> Result<f64> {
    if path.termination != Termination::ReachedBoundary {
        return Err(Error::IncompleteLift {
            reason: format!("{:?} at u = {}", path.termination, path.u),
        });
    }
    Ok(path.t_end - path.theta)
}

/// Sub-intervals of `[θ, T]` on which `|ζ + u e^{it}| < 1`.
pub fn in_disk_pieces(zeta: f64, u: f64, theta: f64, t_end: f64) -> Vec<(f64, f64)> {
    let c = (1.0 - zeta * zeta - u * u) / (2.0 * zeta * u);
    if c >= 1.0 {
        return vec![(theta, t_end)];
    }
    if c <= -1.0 {
        return Vec::new();
    }
    let phi = c.acos();
    let mut pieces = Vec::new();
    let mut cursor = theta;
    let mut k = ((theta - phi) / (2.0 * PI)).floor() as i64 - 1;
    while cursor < t_end {
        let (lo, hi) = (2.0 * PI * k as f64 - phi, 2.0 * PI * k as f64 + phi);
        if hi > cursor {
            if lo > cursor {
                pieces.push((cursor, lo.min(t_end)));
            }
            cursor = cursor.max(hi);
        }
        k += 1;
    }
    pieces.retain(|p| p.1 - p.0 > 1e-15);
    pieces
}

/// Length of the part of `β_u` lying over the unit disk.
pub fn beta_length_over_disk(path: &LiftedPath) -> Result<f64> {
    beta_length(path)?;
    Ok(in_disk_pieces(path.zeta, path.u, path.theta, path.t_end)
        .iter()
        .map(|p| p.1 - p.0)
        .sum())
}

/// Lift point at parameter `t`: cubic Hermite through the bracketing
/// samples, then Newton onto `{f = γ_u(t)}`.
pub fn point_at<F: HoloMap + ?Sized>(map: &F, path: &LiftedPath, t: f64) -> Result<Complex64> {
    let s = &path.samples;
    let t = t.clamp(s[0].0, s[s.len() - 1].0);
    let j = match s.binary_search_by(|p| p.0.total_cmp(&t)) {
        Ok(j) => return Ok(s[j].1),
        Err(j) => j.clamp(1, s.len() - 1),
    };
    let (t0, z0) = s[j - 1];
    let (t1, z1) = s[j];
    let slope = |tt: f64, z: Complex64| -> Result<Complex64> {
        let d = map.value_and_derivative(z)?.1;
        Ok(Complex64::i() * path.u * Complex64::from_polar(1.0, tt) / d)
    };
    let (d0, d1) = (slope(t0, z0)?, slope(t1, z1)?);
    let h = t1 - t0;
    let x = (t - t0) / h;
    let (x2, x3) = (x * x, x * x * x);
    let mut z = z0 * (2.0 * x3 - 3.0 * x2 + 1.0)
        + d0 * (h * (x3 - 2.0 * x2 + x))
        + z1 * (-2.0 * x3 + 3.0 * x2)
        + d1 * (h * (x3 - x2));
    for _ in 0..3 {
        let (v, d) = map.value_and_derivative(z)?;
        z -= (v - path.target(t)) / d;
    }
    Ok(z)
}

/// `n` lift points at uniform parameters of `[t0, t1]`.
pub fn resample<F: HoloMap + ?Sized>(map: &F, path: &LiftedPath, t0: f64, t1: f64, n: usize) -> Result<Vec<Complex64>> {
    (0..n)
        .map(|j| point_at(map, path, t0 + (t1 - t0) * j as f64 / (n - 1) as f64))
        .collect()
}

/// Number of zeros of `f - f(z0)` in `|z - z0| < rho`.
pub fn local_multiplicity<F: HoloMap + ?Sized>(map: &F, z0: Complex64, rho: f64) -> Result<i64> {
    let w = map.value(z0)?;
    let n = 512;
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let e = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64);
        let (v, d) = map.value_and_derivative(z0 + e * rho)?;
        sum += e * rho * d / (v - w);
    }
    Ok((sum.re / n as f64).round() as i64)
}

// ---------------------------------------------------------------------------
// Families over a monotone interval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftFamily {
    pub interval: MonotoneInterval,
    pub paths: Vec<LiftedPath>,
}

impl LiftFamily {
    pub fn radii(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.u).collect()
    }

    pub fn complete(&self) -> bool {
        self.paths
            .iter()
            .all(|p| p.termination == Termination::ReachedBoundary)
    }
}

pub fn log_uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| lo * (hi / lo).powf(j as f64 / (n - 1) as f64))
        .collect()
}

/// Lifts `n_radii` log-uniform circles of the interval in parallel. `k = 0`
/// at the smallest radius; later branches follow by continuity of `θ_u`.
pub fn lift_family<F: HoloMap + ?Sized>(
    map: &F,
    curve: &ReferenceCurve,
    interval: &MonotoneInterval,
    n_radii: usize,
    cfg: &LiftConfig,
) -> Result<LiftFamily> {
    let radii = log_uniform(interval.i.0, interval.i.1, n_radii.max(2));
    let mut paths = radii
        .par_iter()
        .map(|&u| {
            let s = start_parameter(map, curve, interval, u)?;
            lift_circle(map, curve, u, s, 0, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    for i in 1..paths.len() {
        let prev = paths[i - 1].theta;
        let k = ((prev - paths[i].theta) / (2.0 * PI)).round() as i64;
        if k != 0 {
            paths[i].shift_branch(k);
        }
    }
    Ok(LiftFamily {
        interval: *interval,
        paths,
    })
}

/// Probes 8 directions at distance `delta` around interior lift samples
/// and checks each probe lies on some lift of the family: its radius is
/// inside the sampled range and its angle inside `[θ(u'), T(u')]`.
pub fn sheet_openness_check<F: HoloMap + ?Sized>(map: &F, family: &LiftFamily, delta: f64) -> Result<bool> {
    let paths = &family.paths;
    if paths.len() < 5 {
        return Ok(true);
    }
    let zeta = paths[0].zeta;
    let interp = |u: f64| -> (f64, f64) {
        let j = paths.partition_point(|p| p.u < u).clamp(1, paths.len() - 1);
        let (a, b) = (&paths[j - 1], &paths[j]);
        let x = (u - a.u) / (b.u - a.u);
        (a.theta + x * (b.theta - a.theta), a.t_end + x * (b.t_end - a.t_end))
    };
    for p in &paths[2..paths.len() - 2] {
        let n = p.samples.len();
        for &(t, z) in p.samples[n / 4..3 * n / 4].iter().step_by((n / 8).max(1)) {
            for q in 0..8 {
                let probe = z + Complex64::from_polar(delta, PI * q as f64 / 4.0);
                let w = map.value(probe)? - zeta;
                let u2 = w.norm();
                let t2 = t + (w.arg() - t + PI).rem_euclid(2.0 * PI) - PI;
                let (lo, hi) = interp(u2);
                if u2 <= paths[0].u || u2 >= paths[paths.len() - 1].u || t2 <= lo || t2 >= hi {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Coarea
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoareaReport {
    /// `∫ Length(β_u) u du` over the part of each circle inside the disk.
    pub lhs: f64,
    /// Trapezoid error estimate from the half grid.
    pub lhs_error: f64,
    /// Domain-plane `∫ |f'|² dA` over the union of the lifts.
    pub rhs_direct: f64,
    pub a1: AreaEstimate,
    pub identity_holds: bool,
    pub inequality_holds: bool,
}

pub const COAREA_TOL: f64 = 1e-3;
const STRIP_SAMPLES: usize = 160;

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

const GL3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// `∫|f'|²` over bilinear quads spanned by two matched polylines; when
/// `clip` is set only nodes with `|f| < 1` contribute.
fn strip_integral<F: HoloMap + ?Sized>(map: &F, a: &[Complex64], b: &[Complex64], clip: bool) -> Result<f64> {
    let mut sum = 0.0;
    for j in 0..a.len() - 1 {
        let (p00, p01, p10, p11) = (a[j], a[j + 1], b[j], b[j + 1]);
        for &(x, wx) in &GL3 {
            for &(y, wy) in &GL3 {
                let p = p00 * ((1.0 - x) * (1.0 - y)) + p10 * (x * (1.0 - y)) + p01 * ((1.0 - x) * y) + p11 * (x * y);
                let dx = (p10 - p00) * (1.0 - y) + (p11 - p01) * y;
                let dy = (p01 - p00) * (1.0 - x) + (p11 - p10) * x;
                let jac = (dx.re * dy.im - dx.im * dy.re).abs();
                let (v, d) = map.value_and_derivative(p)?;
                if !clip || v.norm() < 1.0 {
                    sum += wx * wy * jac * d.norm_sqr();
                }
            }
        }
    }
    Ok(sum)
}

/// Compares `∫ Length(β_u) u du` with the domain-plane area integral over
/// the lifted sheets, and both with `A(1)`.
pub fn coarea_check<F: HoloMap + ?Sized>(map: &F, families: &[LiftFamily], quad: &QuadConfig) -> Result<CoareaReport> {
    let mut lhs = 0.0;
    let mut lhs_half = 0.0;
    let mut rhs = 0.0;
    for fam in families {
        let us = fam.radii();
        let pieces: Vec<Vec<(f64, f64)>> = fam
            .paths
            .iter()
            .map(|p| {
                beta_length(p)?;
                Ok(in_disk_pieces(p.zeta, p.u, p.theta, p.t_end))
            })
            .collect::<Result<_>>()?;
        let ys: Vec<f64> = pieces
            .iter()
            .zip(&us)
            .map(|(pc, u)| pc.iter().map(|p| p.1 - p.0).sum::<f64>() * u)
            .collect();
        lhs += trapezoid(&us, &ys);
        let idx: Vec<usize> = (0..us.len()).step_by(2).chain(
            (us.len() % 2 == 0).then_some(us.len() - 1),
        ).collect();
        let hu: Vec<f64> = idx.iter().map(|&i| us[i]).collect();
        let hy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        lhs_half += trapezoid(&hu, &hy);

        let strips: Vec<Result<f64>> = (0..fam.paths.len() - 1)
            .into_par_iter()
            .map(|i| {
                let (pa, pb) = (&fam.paths[i], &fam.paths[i + 1]);
                let (ka, kb) = (&pieces[i], &pieces[i + 1]);
                if ka.len() == kb.len() {
                    let mut s = 0.0;
                    for (x, y) in ka.iter().zip(kb) {
                        let a = resample(map, pa, x.0, x.1, STRIP_SAMPLES)?;
                        let b = resample(map, pb, y.0, y.1, STRIP_SAMPLES)?;
                        s += strip_integral(map, &a, &b, false)?;
                    }
                    Ok(s)
                } else {
                    let a = resample(map, pa, pa.theta, pa.t_end, 4 * STRIP_SAMPLES)?;
                    let b = resample(map, pb, pb.theta, pb.t_end, 4 * STRIP_SAMPLES)?;
                    strip_integral(map, &a, &b, true)
                }
            })
            .collect();
        for s in strips {
            rhs += s?;
        }
    }
    let lhs_error = (lhs - lhs_half).abs() / 3.0;
    let a1 = sublevel_area(map, 1.0, quad)?;
    Ok(CoareaReport {
        lhs,
        lhs_error,
        rhs_direct: rhs,
        a1,
        identity_holds: (lhs - rhs).abs() <= COAREA_TOL,
        inequality_holds: lhs <= a1.value + a1.error_bound + lhs_error + COAREA_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{inner_radius, GridConfig};
    use crate::funcmodel::parse_spec;

    fn omit_curve() -> (crate::funcmodel::FunctionSpec, ReferenceCurve) {
        let f = parse_spec("omit(zeta=0.125,k=3)").unwrap();
        let inner = inner_radius(&f, 1.0, &GridConfig { grid: 256 }).unwrap();
        let curve = reference_curve(&f, &inner, 0.125, 257).unwrap();
        (f, curve)
    }

    #[test]
    fn identity_curve_is_the_segment() {
        let f = parse_spec("mono(1)").unwrap();
        let inner = inner_radius(&f, 1.0, &GridConfig { grid: 128 }).unwrap();
        let curve = reference_curve(&f, &inner, 0.5, 65).unwrap();
        for p in &curve.samples {
            assert!((p.e - inner.contact_point * p.s).norm() < 1e-15);
        }
        assert!((curve.end().norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn omit_curve_distance_profile() {
        let (_, curve) = omit_curve();
        let a = curve.contact_point;
        assert!(a.im.abs() < 1e-9);
        for p in &curve.samples {
            let exact = 0.125 * (3.0 * p.s * a.re).exp();
            assert!((p.h - exact).abs() < 1e-12);
        }
        for w in curve.samples.windows(2) {
            assert!((w[1].h - w[0].h).abs() < 0.01);
        }
    }

    #[test]
    fn case_predicates() {
        let mk = |hs: &[f64], end: Complex64| ReferenceCurve {
            contact_point: Complex64::new(1.0, 0.0),
            zeta: 0.5,
            samples: hs
                .iter()
                .enumerate()
                .map(|(i, &h)| CurveSample {
                    s: i as f64 / (hs.len() - 1) as f64,
                    e: if i + 1 == hs.len() { end } else { Complex64::new(0.0, 0.0) },
                    h,
                })
                .collect(),
        };
        let c = classify_case(0.5, &mk(&[0.5, 0.9], Complex64::new(-0.4, 0.0)));
        assert_eq!(c.case, Case::OuterAnnulus);
        assert_eq!(c.u_range, (0.5, 0.625));
        assert!(c.comparability_c.unwrap() >= 1.0);
        let c = classify_case(0.5, &mk(&[0.5, 0.3, 0.55], Complex64::new(0.0, 0.0)));
        assert_eq!(c.case, Case::InnerAnnulus);
        let end = Complex64::from_polar(1.0, 0.5);
        let c = classify_case(0.5, &mk(&[0.5, 0.4, 0.6], end));
        assert_eq!(c.case, Case::Rectangle);
        assert!(c.rectangle.unwrap().re_end_exceeds_bound);
        let (_, curve) = omit_curve();
        let c = classify_case(0.125, &curve);
        assert_eq!(c.case, Case::ZetaSmall);
        assert_eq!(c.u_range, (0.25, 0.75));
    }

    #[test]
    fn arc_measure_limits() {
        assert_eq!(arc_measure_in_disk(0.1, 0.5), 2.0 * PI);
        assert_eq!(arc_measure_in_disk(0.5, 2.0), 0.0);
        // |ζ + u e^{it}| = 1 at t = ±π/2 when ζ² + u² = 1.
        assert!((arc_measure_in_disk(0.6, 0.8) - PI).abs() < 1e-12);
    }

    #[test]
    fn intervals_for_monotone_profile() {
        let (_, curve) = omit_curve();
        let cover = monotone_intervals(&curve, (0.25, 0.75)).unwrap();
        assert_eq!(cover.intervals.len(), 1);
        let iv = cover.intervals[0];
        assert_eq!(iv.i, (0.25, 0.75));
        let a = curve.contact_point.re;
        assert!((iv.j.0 - (2.0f64).ln() / (3.0 * a)).abs() < 1e-4);
        assert!((iv.j.1 - (6.0f64).ln() / (3.0 * a)).abs() < 1e-4);
    }

    #[test]
    fn intervals_with_two_rises() {
        let hs = [0.1, 0.3, 0.5, 0.4, 0.2, 0.6, 0.9];
        let curve = ReferenceCurve {
            contact_point: Complex64::new(1.0, 0.0),
            zeta: 0.1,
            samples: hs
                .iter()
                .enumerate()
                .map(|(i, &h)| CurveSample { s: i as f64 / 6.0, e: Complex64::new(0.0, 0.0), h })
                .collect(),
        };
        let cover = monotone_intervals(&curve, (0.25, 0.75)).unwrap();
        assert_eq!(cover.intervals.len(), 2);
        assert_eq!(cover.intervals[0].i, (0.25, 0.5));
        assert_eq!(cover.intervals[1].i, (0.5, 0.75));
        assert_eq!(cover.uncovered, 0.0);
        assert!(matches!(
            monotone_intervals(&curve, (0.25, 1.5)),
            Err(Error::CoverageGap { .. })
        ));
    }

    #[test]
    fn lift_matches_closed_form() {
        let (f, curve) = omit_curve();
        let iv = monotone_intervals(&curve, (0.25, 0.75)).unwrap().intervals[0];
        let cfg = LiftConfig::default();
        let u = 0.5;
        let s = start_parameter(&f, &curve, &iv, u).unwrap();
        let path = lift_circle(&f, &curve, u, s, 0, &cfg).unwrap();
        assert_eq!(path.termination, Termination::ReachedBoundary);
        let l = (u / 0.125f64).ln();
        for &(t, z) in &path.samples {
            let exact = Complex64::new(l, t - PI) / 3.0;
            assert!((z - exact).norm() < 1e-6);
        }
        let t_exact = PI + (9.0 - l * l).sqrt();
        assert!((path.t_end - t_exact).abs() < 1e-4);
        assert!(path.max_fidelity(&f) <= 1e-8);
        assert!(simplicity_check(&path, 1e-6));
        assert_eq!(local_multiplicity(&f, curve.point(s), 1e-3).unwrap(), 1);
    }

    #[test]
    fn corrupted_path_is_not_simple() {
        let (f, curve) = omit_curve();
        let iv = monotone_intervals(&curve, (0.25, 0.75)).unwrap().intervals[0];
        let s = start_parameter(&f, &curve, &iv, 0.4).unwrap();
        let mut path = lift_circle(&f, &curve, 0.4, s, 0, &LiftConfig::default()).unwrap();
        let dup = path.samples[2];
        path.samples.push((dup.0 + 10.0, dup.1));
        assert!(!simplicity_check(&path, 1e-6));
    }

    #[test]
    fn incomplete_lift_has_no_length() {
        let (f, curve) = omit_curve();
        let iv = monotone_intervals(&curve, (0.25, 0.75)).unwrap().intervals[0];
        let s = start_parameter(&f, &curve, &iv, 0.4).unwrap();
        let cfg = LiftConfig { max_steps: 3, ..LiftConfig::default() };
        let path = lift_circle(&f, &curve, 0.4, s, 0, &cfg).unwrap();
        assert_eq!(path.termination, Termination::StepLimit);
        assert!(matches!(beta_length(&path), Err(Error::IncompleteLift { .. })));
    }

    #[test]
    fn start_off_curve_is_rejected() {
        let (f, curve) = omit_curve();
        let err = lift_circle(&f, &curve, 0.5, 0.1, 0, &LiftConfig::default());
        assert!(matches!(err, Err(Error::StartOffCurve { .. })));
    }

    #[test]
    fn disk_pieces_remove_outside_arc() {
        let p = in_disk_pieces(0.6, 0.8, -PI, PI);
        assert_eq!(p.len(), 2);
        assert!((p[0].0 + PI).abs() < 1e-12 && (p[0].1 + PI / 2.0).abs() < 1e-12);
        assert!((p[1].0 - PI / 2.0).abs() < 1e-12 && (p[1].1 - PI).abs() < 1e-12);
        assert_eq!(in_disk_pieces(0.1, 0.5, 1.0, 4.0), vec![(1.0, 4.0)]);
    }
}
