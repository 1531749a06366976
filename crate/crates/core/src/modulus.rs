//! Modulus of path families: closed-form bounds, the extremal metric of
//! the vertical-segment family, Beurling's criterion on sampled data, and
//! a finite-difference conductance oracle.

use std::f64::consts::PI;
use std::fmt;

use num::rational::Ratio;
use num::{One, Signed, Zero};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcmodel::HoloMap;
use crate::lifting::{beta_length, resample, CaseLabel, CoareaReport, LiftFamily};

// ---------------------------------------------------------------------------
// Closed-form bounds
// ---------------------------------------------------------------------------

/// Modulus of the family joining `|z| = r` to `|z| = 1`: `2π / log(1/r)`.
pub fn annulus_upper(r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::DomainError(format!("annulus radius {r} not in (0, 1)")));
    }
    Ok(2.0 * PI / (1.0 / r).ln())
}

/// `(1/u_hi) (∫_{u_lo}^{u_hi} u du)² / X`, a lower bound for the modulus of
/// the lifted family when `X ≥ ∫ Length(β_u) u du`.
pub fn chain_lower_s2(coarea_value: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
    if !(coarea_value > 0.0 && u_lo > 0.0 && u_hi > u_lo) {
        return Err(Error::DomainError(format!(
            "need X > 0 and 0 < u_lo < u_hi, got X = {coarea_value}, ({u_lo}, {u_hi})"
        )));
    }
    let first_moment = 0.5 * (u_hi * u_hi - u_lo * u_lo);
    Ok(first_moment * first_moment / (u_hi * coarea_value))
}

/// Cauchy-Schwarz pairing `(u_hi - u_lo)² / X` for `∫ du / (u L)`.
pub fn cauchy_schwarz_lower(coarea_value: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
    if !(coarea_value > 0.0 && u_hi > u_lo) {
        return Err(Error::DomainError(format!(
            "need X > 0 and u_lo < u_hi, got X = {coarea_value}, ({u_lo}, {u_hi})"
        )));
    }
    Ok((u_hi - u_lo).powi(2) / coarea_value)
}

/// Trapezoid value of `∫ du / (u Length(β_u))`.
pub fn beurling_mass(us: &[f64], lengths: &[f64]) -> Result<f64> {
    if us.len() != lengths.len() || us.len() < 2 {
        return Err(Error::BadParameter("need at least two (u, length) samples".into()));
    }
    if let Some(&length) = lengths.iter().find(|&&l| !(l >= 1e-9)) {
        return Err(Error::ZeroLength { length });
    }
    Ok(us
        .windows(2)
        .zip(lengths.windows(2))
        .map(|(u, l)| 0.5 * (u[1] - u[0]) * (1.0 / (u[0] * l[0]) + 1.0 / (u[1] * l[1])))
        .sum())
}

/// `exp(-2π / m)`: the radius at which `annulus_upper` drops to `m`.
pub fn certified_radius(mod_lower: f64) -> Result<f64> {
    if !(mod_lower > 0.0) {
        return Err(Error::DomainError(format!("modulus bound {mod_lower} not positive")));
    }
    Ok((-2.0 * PI / mod_lower).exp())
}

// ---------------------------------------------------------------------------
// Exact constants `q π^p`
// ---------------------------------------------------------------------------

/// Rational multiple of an integer power of π.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PiMonomial {
    pub coeff: Ratio<i64>,
    pub power: i32,
}

impl PiMonomial {
    pub fn new(num: i64, den: i64, power: i32) -> Self {
        PiMonomial {
            coeff: Ratio::new(num, den),
            power,
        }
    }

    pub fn value(&self) -> f64 {
        (*self.coeff.numer() as f64 / *self.coeff.denom() as f64) * PI.powi(self.power)
    }

    pub fn recip(self) -> Result<PiMonomial> {
        if self.coeff.is_zero() {
            return Err(Error::DomainError("reciprocal of zero".into()));
        }
        Ok(PiMonomial {
            coeff: self.coeff.recip(),
            power: -self.power,
        })
    }
}

impl std::ops::Mul for PiMonomial {
    type Output = PiMonomial;

    fn mul(self, other: PiMonomial) -> PiMonomial {
        PiMonomial {
            coeff: self.coeff * other.coeff,
            power: self.power + other.power,
        }
    }
}

impl fmt::Display for PiMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.coeff;
        if c.is_negative() {
            f.write_str("-")?;
        }
        let a = c.abs();
        let pi = match self.power {
            0 => String::new(),
            1 => "pi".to_string(),
            p => format!("pi^{p}"),
        };
        if self.power == 0 {
            return write!(f, "{a}");
        }
        if a.is_one() {
            write!(f, "{pi}")
        } else {
            write!(f, "{a}*{pi}")
        }
    }
}

/// Exponent `-2π / m` of the certified radius, exactly.
pub fn certified_exponent(mod_lower: PiMonomial) -> Result<PiMonomial> {
    if !mod_lower.coeff.is_positive() {
        return Err(Error::DomainError(format!("modulus bound {mod_lower} not positive")));
    }
    Ok(PiMonomial::new(-2, 1, 1) * mod_lower.recip()?)
}

/// `"exp(<exponent>)"` for the certified radius of an exact bound.
pub fn certified_radius_symbolic(mod_lower: PiMonomial) -> Result<String> {
    Ok(format!("exp({})", certified_exponent(mod_lower)?))
}

/// `1/(12π)`.
pub fn zeta_small_floor() -> PiMonomial {
    PiMonomial::new(1, 12, -1)
}

/// `16/(9π)`, a claimed floor for the Beurling mass over `(1/4, 3/4)`.
pub fn stated_beurling_constant() -> PiMonomial {
    PiMonomial::new(16, 9, -1)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: String,
    pub m: f64,
    pub zeta: f64,
    pub case: String,
    pub quadrature: String,
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub upper: f64,
    pub coarea_value: f64,
    pub lower_s2: f64,
    pub lower_s3: f64,
    pub certified_r_s2: f64,
    pub certified_r_s3: f64,
    pub inner_r: f64,
    /// `(u_hi - u_lo)² / X`.
    pub cauchy_schwarz_s3: f64,
    /// `16/(9π)`, carried through unchanged; nothing here derives it.
    pub stated_s3: f64,
    pub certified_r_stated_s3: f64,
    pub comparability_c: Option<f64>,
    pub lower_s2_floor: Option<f64>,
    pub floor_expression: Option<String>,
    pub sandwich_holds: bool,
    pub provenance: Provenance,
}

pub const SANDWICH_TOL: f64 = 1e-3;

/// Assembles every bound for one completed pipeline instance.
pub fn modulus_report(
    inner_r: f64,
    label: &CaseLabel,
    families: &[LiftFamily],
    coarea: &CoareaReport,
    provenance: Provenance,
) -> Result<ModulusReport> {
    let upper = annulus_upper(inner_r)?;
    let (u_lo, u_hi) = label.u_range;
    let c = label.comparability_c.unwrap_or(1.0);
    let x = coarea.lhs;
    let lower_s2 = chain_lower_s2(x, u_lo, u_hi)? / c;
    let mut lower_s3 = 0.0;
    for fam in families {
        let lengths = fam
            .paths
            .iter()
            .map(beta_length)
            .collect::<Result<Vec<_>>>()?;
        lower_s3 += beurling_mass(&fam.radii(), &lengths)?;
    }
    let cauchy_schwarz_s3 = cauchy_schwarz_lower(x, u_lo, u_hi)? / c;
    let bounded_by_pi = x < PI;
    let lower_s2_floor = bounded_by_pi.then(|| chain_lower_s2(PI, u_lo, u_hi).map(|v| v / c)).transpose()?;
    let floor_expression = (bounded_by_pi && label.comparability_c.is_none() && (u_lo, u_hi) == (0.25, 0.75))
        .then(|| certified_radius_symbolic(zeta_small_floor()))
        .transpose()?;
    let certified_r_s2 = certified_radius(lower_s2_floor.unwrap_or(lower_s2))?;
    let s3_floor = if bounded_by_pi {
        cauchy_schwarz_lower(PI, u_lo, u_hi)? / c
    } else {
        cauchy_schwarz_s3
    };
    let certified_r_s3 = certified_radius(s3_floor)?;
    let stated_s3 = stated_beurling_constant().value();
    let sandwich_holds = upper >= lower_s3 - SANDWICH_TOL && upper >= lower_s2 - SANDWICH_TOL;
    Ok(ModulusReport {
        upper,
        coarea_value: x,
        lower_s2,
        lower_s3,
        certified_r_s2,
        certified_r_s3,
        inner_r,
        cauchy_schwarz_s3,
        stated_s3,
        certified_r_stated_s3: certified_radius(stated_s3)?,
        comparability_c: label.comparability_c,
        lower_s2_floor,
        floor_expression,
        sandwich_holds,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// Metrics and Beurling's criterion
// ---------------------------------------------------------------------------

pub trait Metric: Sync {
    fn rho(&self, z: Complex64) -> f64;
}

/// Piecewise-constant field on the cells of a rectangular grid; zero
/// outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub tag: String,
    pub origin: Complex64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_fn(
        tag: &str,
        origin: Complex64,
        step: f64,
        nx: usize,
        ny: usize,
        f: impl Fn(Complex64) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(origin + Complex64::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step)));
            }
        }
        GridField {
            tag: tag.to_string(),
            origin,
            step,
            nx,
            ny,
            values,
        }
    }

    pub fn at(&self, z: Complex64) -> f64 {
        let p = (z - self.origin) / self.step;
        if p.re < 0.0 || p.im < 0.0 {
            return 0.0;
        }
        let (i, j) = (p.re as usize, p.im as usize);
        if i >= self.nx || j >= self.ny {
            return 0.0;
        }
        self.values[j * self.nx + i]
    }

    fn same_grid(&self, other: &GridField) -> bool {
        self.origin == other.origin && self.step == other.step && self.nx == other.nx && self.ny == other.ny
    }

    /// Pointwise maximum with a field on the same grid.
    pub fn max_with(&self, other: &GridField) -> Result<GridField> {
        if !self.same_grid(other) {
            return Err(Error::BadParameter("fields live on different grids".into()));
        }
        Ok(GridField {
            tag: format!("max({}, {})", self.tag, other.tag),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a.max(*b)).collect(),
            ..self.clone()
        })
    }
}

pub type TestFunction = GridField;

/// A sampled nonnegative density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleMetric {
    pub field: GridField,
}

impl AdmissibleMetric {
    pub fn new(field: GridField) -> Result<Self> {
        if field.values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::BadParameter(format!("metric {} has negative or NaN values", field.tag)));
        }
        Ok(AdmissibleMetric { field })
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        let mut field = self.field.clone();
        field.tag = format!("{k}*{}", field.tag);
        field.values.iter_mut().for_each(|v| *v *= k);
        AdmissibleMetric::new(field)
    }

    /// `∫ ρ² dA` over the grid.
    pub fn mass(&self) -> f64 {
        let s = self.field.step;
        self.field.values.iter().map(|v| v * v).sum::<f64>() * s * s
    }
}

impl Metric for AdmissibleMetric {
    fn rho(&self, z: Complex64) -> f64 {
        self.field.at(z)
    }
}

impl Metric for GridField {
    fn rho(&self, z: Complex64) -> f64 {
        self.at(z)
    }
}

/// `ρ₀(z) = |g'(z)| / Length(β_u)` with `g = log(f - ζ)` and `u = |f(z) - ζ|`,
/// the pull-back of the extremal metric of the vertical segments.
pub struct LiftExtremalMetric<'a, F: ?Sized> {
    map: &'a F,
    zeta: f64,
    us: Vec<f64>,
    lengths: Vec<f64>,
}

impl<'a, F: HoloMap + ?Sized> LiftExtremalMetric<'a, F> {
    pub fn new(map: &'a F, family: &LiftFamily) -> Result<Self> {
        let lengths = family.paths.iter().map(beta_length).collect::<Result<Vec<_>>>()?;
        Ok(LiftExtremalMetric {
            map,
            zeta: family.paths[0].zeta,
            us: family.radii(),
            lengths,
        })
    }

    fn length_at(&self, u: f64) -> Option<f64> {
        let n = self.us.len();
        if u < self.us[0] || u > self.us[n - 1] {
            return None;
        }
        let j = self.us.partition_point(|&x| x < u).clamp(1, n - 1);
        let x = (u - self.us[j - 1]) / (self.us[j] - self.us[j - 1]);
        Some(self.lengths[j - 1] + x * (self.lengths[j] - self.lengths[j - 1]))
    }
}

impl<'a, F: HoloMap + ?Sized> Metric for LiftExtremalMetric<'a, F> {
    fn rho(&self, z: Complex64) -> f64 {
        let Ok((v, d)) = self.map.value_and_derivative(z) else {
            return 0.0;
        };
        let u = (v - self.zeta).norm();
        // Polyline chords sit slightly off the level curves.
        let u_clamped = u.clamp(self.us[0], self.us[self.us.len() - 1]);
        if (u - u_clamped).abs() > 1e-4 * u {
            return 0.0;
        }
        match self.length_at(u_clamped) {
            Some(l) => d.norm() / (u * l),
            None => 0.0,
        }
    }
}

/// Midpoint rule for `∫_γ ρ |dz|` on a polyline, splitting segments longer
/// than `max_ds`.
pub fn line_integral(metric: &dyn Metric, path: &[Complex64], max_ds: f64) -> f64 {
    let mut sum = 0.0;
    for w in path.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        let pieces = ((len / max_ds).ceil() as usize).max(1);
        for k in 0..pieces {
            let mid = w[0] + d * ((k as f64 + 0.5) / pieces as f64);
            sum += metric.rho(mid) * len / pieces as f64;
        }
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestStatus {
    Passed,
    Failed,
    /// `∫_γ h |dz| < 0` on some sampled path, so the test does not apply.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub tag: String,
    pub min_path_integral: f64,
    pub weighted_integral: f64,
    pub status: TestStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeurlingVerdict {
    pub path_integrals: Vec<f64>,
    pub condition1_max_deviation: f64,
    pub condition1_holds: bool,
    pub tests: Vec<TestOutcome>,
    pub condition2_holds: bool,
}

impl BeurlingVerdict {
    pub fn holds(&self) -> bool {
        self.condition1_holds && self.condition2_holds
    }
}

pub const CONDITION1_TOL: f64 = 1e-3;

/// Checks `∫_γ ρ₀ = 1` on every sampled path and `∫ h ρ₀ dA ≥ 0` for every
/// test `h` with `∫_γ h ≥ 0` on all paths. Area integrals use the test's
/// own grid.
pub fn beurling_criterion_check(
    metric: &dyn Metric,
    family: &[Vec<Complex64>],
    tests: &[TestFunction],
    max_ds: f64,
) -> BeurlingVerdict {
    let path_integrals: Vec<f64> = family.iter().map(|p| line_integral(metric, p, max_ds)).collect();
    let condition1_max_deviation = path_integrals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let mut outcomes = Vec::new();
    for h in tests {
        let min_path_integral = family
            .iter()
            .map(|p| line_integral(h, p, max_ds))
            .fold(f64::INFINITY, f64::min);
        let cell = h.step * h.step;
        let mut weighted = 0.0;
        let mut mass = 0.0;
        for j in 0..h.ny {
            for i in 0..h.nx {
                let z = h.origin + Complex64::new((i as f64 + 0.5) * h.step, (j as f64 + 0.5) * h.step);
                let r = metric.rho(z);
                weighted += h.values[j * h.nx + i] * r * cell;
                mass += r * r * cell;
            }
        }
        let scale = if mass > 0.0 { mass } else { 1.0 };
        let status = if min_path_integral < -CONDITION1_TOL {
            TestStatus::Skipped
        } else if weighted >= -1e-3 * scale {
            TestStatus::Passed
        } else {
            TestStatus::Failed
        };
        outcomes.push(TestOutcome {
            tag: h.tag.clone(),
            min_path_integral,
            weighted_integral: weighted,
            status,
        });
    }
    BeurlingVerdict {
        condition1_max_deviation,
        condition1_holds: condition1_max_deviation <= CONDITION1_TOL,
        condition2_holds: outcomes.iter().all(|o| o.status != TestStatus::Failed),
        path_integrals,
        tests: outcomes,
    }
}

/// Horizontal crossings of `[0, W] x [0, H]`, the constant metric `1/W`, and
/// the standard test functions on an `n`-cells-per-unit grid.
pub struct RectangleSuite {
    pub metric: AdmissibleMetric,
    pub family: Vec<Vec<Complex64>>,
    pub tests: Vec<TestFunction>,
}

pub fn rectangle_suite(w: f64, h: f64, cells_per_unit: usize) -> Result<RectangleSuite> {
    if !(w > 0.0 && h > 0.0) || cells_per_unit == 0 {
        return Err(Error::BadParameter(format!("bad rectangle {w} x {h}")));
    }
    let step = 1.0 / cells_per_unit as f64;
    let nx = (w / step).round() as usize;
    let ny = (h / step).round() as usize;
    let origin = Complex64::new(0.0, 0.0);
    let field = |tag: &str, f: &dyn Fn(Complex64) -> f64| GridField::from_fn(tag, origin, step, nx, ny, f);
    let rho0 = field("1/W", &|_| 1.0 / w);
    let rho1 = field("2x/W^2", &|z| 2.0 * z.re / (w * w));
    let rho2 = field("(1+sin)/W", &|z| (1.0 + 0.5 * (2.0 * PI * z.re / w).sin()) / w);
    let diff = |a: &GridField, tag: &str| GridField {
        tag: tag.to_string(),
        values: a.values.iter().zip(&rho0.values).map(|(x, y)| x - y).collect(),
        ..a.clone()
    };
    let tests = vec![
        field("1", &|_| 1.0),
        field("-1", &|_| -1.0),
        field("x - W/2", &|z| z.re - w / 2.0),
        field("y - H/2", &|z| z.im - h / 2.0),
        diff(&rho1, "2x/W^2 - 1/W"),
        diff(&rho2, "(1+sin)/W - 1/W"),
    ];
    let family = (0..ny)
        .map(|j| {
            let y = (j as f64 + 0.5) * step;
            vec![Complex64::new(0.0, y), Complex64::new(w, y)]
        })
        .collect();
    Ok(RectangleSuite {
        metric: AdmissibleMetric::new(rho0)?,
        family,
        tests,
    })
}

/// Dense lift polylines for condition (1).
pub fn lift_polylines<F: HoloMap + ?Sized>(map: &F, family: &LiftFamily, n: usize) -> Result<Vec<Vec<Complex64>>> {
    family
        .paths
        .iter()
        .map(|p| resample(map, p, p.theta, p.t_end, n))
        .collect()
}

// ---------------------------------------------------------------------------
// Discrete modulus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeEnd {
    Node(usize),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: EdgeEnd,
    pub weight: f64,
}

/// Conductance network on a lattice: free nodes, edges among them and
/// edges to Dirichlet data 0 (first marked set) or 1 (second marked set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub step: f64,
    pub free: usize,
    pub edges: Vec<Edge>,
    pub marked: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sides {
    /// Vertical sides marked: horizontal crossings.
    Vertical,
    /// Horizontal sides marked: vertical crossings.
    Horizontal,
}

impl GridDomain {
    /// `W x H` rectangle with `cells_per_unit` cells per unit length.
    pub fn rectangle(w: f64, h: f64, cells_per_unit: usize, sides: Sides) -> Result<Self> {
        let (len, wid) = match sides {
            Sides::Vertical => (w, h),
            Sides::Horizontal => (h, w),
        };
        let step = 1.0 / cells_per_unit as f64;
        let nx = (len / step).round() as usize;
        let ny = (wid / step).round() as usize;
        if nx < 2 || ny < 1 {
            return Err(Error::BadParameter(format!("rectangle {w} x {h} too small for the grid")));
        }
        // Nodes i = 1..nx-1 are free; i = 0 is held at 0 and i = nx at 1.
        let cols = nx - 1;
        let id = |i: usize, j: usize| j * cols + (i - 1);
        let end = |i: usize, j: usize| match i {
            0 => EdgeEnd::Value(0.0),
            i if i == nx => EdgeEnd::Value(1.0),
            i => EdgeEnd::Node(id(i, j)),
        };
        let mut edges = Vec::new();
        for j in 0..=ny {
            let wgt = if j == 0 || j == ny { 0.5 } else { 1.0 };
            for i in 0..nx {
                let (p, q) = (end(i, j), end(i + 1, j));
                match (p, q) {
                    (EdgeEnd::Node(a), b) | (b, EdgeEnd::Node(a)) => edges.push(Edge { a, b, weight: wgt }),
                    _ => {}
                }
            }
        }
        // Vertical edges between the held columns carry no energy.
        for j in 0..ny {
            for i in 1..nx {
                edges.push(Edge {
                    a: id(i, j),
                    b: EdgeEnd::Node(id(i, j + 1)),
                    weight: 1.0,
                });
            }
        }
        Ok(GridDomain {
            step,
            free: cols * (ny + 1),
            edges,
            marked: (ny + 1, ny + 1),
        })
    }

    /// `r < |z| < 1` held at 0 on the inner and 1 on the outer circle, with
    /// Shortley-Weller weights on cut edges; `n` cells across the diameter.
    pub fn annulus(r: f64, n: usize) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::DomainError(format!("annulus radius {r} not in (0, 1)")));
        }
        let step = 2.0 / n as f64;
        let pos = |i: usize, j: usize| Complex64::new(-1.0 + i as f64 * step, -1.0 + j as f64 * step);
        let inside = |z: Complex64| z.norm() > r && z.norm() < 1.0;
        let mut index = vec![usize::MAX; (n + 1) * (n + 1)];
        let mut free = 0;
        for j in 0..=n {
            for i in 0..=n {
                if inside(pos(i, j)) {
                    index[j * (n + 1) + i] = free;
                    free += 1;
                }
            }
        }
        let crossing = |p: Complex64, q: Complex64| -> (f64, f64) {
            // Fraction along p -> q of the first circle crossing, and its data.
            let d = q - p;
            let mut best = (f64::INFINITY, 0.0);
            for (rad, val) in [(r, 0.0), (1.0, 1.0)] {
                let a = d.norm_sqr();
                let b = 2.0 * (p.re * d.re + p.im * d.im);
                let c = p.norm_sqr() - rad * rad;
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    for t in [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)] {
                        if t > 0.0 && t <= 1.0 && t < best.0 {
                            best = (t, val);
                        }
                    }
                }
            }
            best
        };
        let mut edges = Vec::new();
        let mut marked = (0, 0);
        for j in 0..=n {
            for i in 0..=n {
                let k = index[j * (n + 1) + i];
                if k == usize::MAX {
                    continue;
                }
                let p = pos(i, j);
                let nbrs = [(i + 1, j), (i, j + 1), (i.wrapping_sub(1), j), (i, j.wrapping_sub(1))];
                for (dir, &(a, b)) in nbrs.iter().enumerate() {
                    let in_grid = a <= n && b <= n;
                    let other = if in_grid { index[b * (n + 1) + a] } else { usize::MAX };
                    if other != usize::MAX {
                        if dir < 2 {
                            edges.push(Edge { a: k, b: EdgeEnd::Node(other), weight: 1.0 });
                        }
                        continue;
                    }
                    let q = p + match dir {
                        0 => Complex64::new(step, 0.0),
                        1 => Complex64::new(0.0, step),
                        2 => Complex64::new(-step, 0.0),
                        _ => Complex64::new(0.0, -step),
                    };
                    let (theta, val) = crossing(p, q);
                    if theta.is_finite() {
                        let theta = theta.max(1e-3);
                        edges.push(Edge { a: k, b: EdgeEnd::Value(val), weight: 1.0 / theta });
                        if val == 0.0 {
                            marked.0 += 1;
                        } else {
                            marked.1 += 1;
                        }
                    }
                }
            }
        }
        Ok(GridDomain { step, free, edges, marked })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.edges {
            match e.b {
                EdgeEnd::Node(b) => {
                    let d = e.weight * (x[e.a] - x[b]);
                    out[e.a] += d;
                    out[b] -= d;
                }
                EdgeEnd::Value(_) => out[e.a] += e.weight * x[e.a],
            }
        }
    }

    fn energy(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let vb = match e.b {
                    EdgeEnd::Node(b) => x[b],
                    EdgeEnd::Value(v) => v,
                };
                e.weight * (x[e.a] - vb).powi(2)
            })
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dirichlet energy of the discrete harmonic potential, i.e. the
/// conductance between the marked sets.
pub fn discrete_modulus(domain: &GridDomain) -> Result<f64> {
    if domain.marked.0 == 0 || domain.marked.1 == 0 || domain.free == 0 {
        return Err(Error::SolverFailure("a marked boundary set is empty".into()));
    }
    let n = domain.free;
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for e in &domain.edges {
        diag[e.a] += e.weight;
        match e.b {
            EdgeEnd::Node(b) => diag[b] += e.weight,
            EdgeEnd::Value(v) => rhs[e.a] += e.weight * v,
        }
    }
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::SolverFailure("isolated node in the network".into()));
    }
    let mut x = vec![0.5; n];
    let mut ax = vec![0.0; n];
    domain.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let norm_b = dot(&rhs, &rhs).sqrt().max(1e-300);
    let mut ap = vec![0.0; n];
    let max_iter = 20 * n + 1000;
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= 1e-11 * norm_b {
            return Ok(domain.energy(&x));
        }
        domain.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure("matrix not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure(format!("no convergence in {max_iter} iterations")))
}

// ---------------------------------------------------------------------------
// Poletskii-type bracket
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum PoletskiiOutcome {
    Holds { upper: f64, mass: f64 },
    Violated { upper: f64, mass: f64 },
    Skipped { reason: String },
}

/// `annulus_upper(inner_r) ≥ Mod(gΓ)`, with `Mod(gΓ)` the Beurling mass of
/// the vertical-segment image family.
pub fn poletskii_instance_check(inner_r: f64, families: &[LiftFamily]) -> PoletskiiOutcome {
    let skip = |reason: String| PoletskiiOutcome::Skipped { reason };
    let Ok(upper) = annulus_upper(inner_r) else {
        return skip(format!("inner radius {inner_r} not in (0, 1)"));
    };
    if families.is_empty() {
        return skip("no lifted family".into());
    }
    let mut mass = 0.0;
    for fam in families {
        let lengths: Result<Vec<f64>> = fam.paths.iter().map(beta_length).collect();
        match lengths.and_then(|l| beurling_mass(&fam.radii(), &l)) {
            Ok(m) => mass += m,
            Err(e) => return skip(e.to_string()),
        }
    }
    if upper >= mass - SANDWICH_TOL {
        PoletskiiOutcome::Holds { upper, mass }
    } else {
        PoletskiiOutcome::Violated { upper, mass }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn annulus_upper_examples() {
        assert_relative_eq!(annulus_upper((-2.0 * PI).exp()).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(annulus_upper((-1.0f64).exp()).unwrap(), 2.0 * PI, max_relative = 1e-15);
        assert!(annulus_upper(0.5).unwrap() < annulus_upper(0.9).unwrap());
        assert!(matches!(annulus_upper(1.0), Err(Error::DomainError(_))));
        assert!(annulus_upper(0.0).is_err());
    }

    #[test]
    fn chain_lower_examples() {
        let v = chain_lower_s2(PI, 0.25, 0.75).unwrap();
        assert_relative_eq!(v, 1.0 / (12.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(chain_lower_s2(PI / 2.0, 0.25, 0.75).unwrap(), 1.0 / (6.0 * PI), max_relative = 1e-15);
        assert!(chain_lower_s2(1.0, 0.25, 0.75).unwrap() > chain_lower_s2(2.0, 0.25, 0.75).unwrap());
        assert!(chain_lower_s2(0.0, 0.25, 0.75).is_err());
        assert_relative_eq!(cauchy_schwarz_lower(PI, 0.25, 0.75).unwrap(), 1.0 / (4.0 * PI), max_relative = 1e-15);
    }

    #[test]
    fn beurling_mass_constant_length() {
        let us: Vec<f64> = (0..=2000).map(|i| 0.25 + 0.5 * i as f64 / 2000.0).collect();
        let ls = vec![2.0; us.len()];
        assert_relative_eq!(beurling_mass(&us, &ls).unwrap(), 3f64.ln() / 2.0, max_relative = 1e-6);
        let mut bad = ls.clone();
        bad[7] = 0.0;
        assert!(matches!(beurling_mass(&us, &bad), Err(Error::ZeroLength { .. })));
    }

    #[test]
    fn certified_radius_constants() {
        assert_eq!(certified_exponent(zeta_small_floor()).unwrap(), PiMonomial::new(-24, 1, 2));
        assert_eq!(certified_radius_symbolic(zeta_small_floor()).unwrap(), "exp(-24*pi^2)");
        assert_eq!(certified_exponent(stated_beurling_constant()).unwrap(), PiMonomial::new(-9, 8, 2));
        assert_eq!(certified_radius_symbolic(stated_beurling_constant()).unwrap(), "exp(-9/8*pi^2)");
        assert_relative_eq!(certified_radius(2.0 * PI).unwrap(), (-1.0f64).exp(), max_relative = 1e-15);
        let r = certified_radius(1.0 / (12.0 * PI)).unwrap();
        assert_relative_eq!(r, (-24.0 * PI * PI).exp(), max_relative = 1e-12);
        assert!(certified_radius(0.1).unwrap() < certified_radius(0.2).unwrap());
        assert!(certified_radius(-1.0).is_err());
    }

    #[test]
    fn rectangle_modulus_and_duality() {
        let v = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 100, Sides::Vertical).unwrap()).unwrap();
        assert!((v - 0.5).abs() < 1e-2);
        let hz = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 100, Sides::Horizontal).unwrap()).unwrap();
        assert!((hz - 2.0).abs() < 1e-2);
        assert!((v * hz - 1.0).abs() < 2e-2);
        let sq = discrete_modulus(&GridDomain::rectangle(1.0, 1.0, 200, Sides::Vertical).unwrap()).unwrap();
        assert!((sq - 1.0).abs() < 1e-2);
        let big = discrete_modulus(&GridDomain::rectangle(4.0, 2.0, 50, Sides::Vertical).unwrap()).unwrap();
        assert!((big - v).abs() < 1e-2);
    }

    #[test]
    fn annulus_modulus() {
        for r in [0.2, 0.5] {
            let d = discrete_modulus(&GridDomain::annulus(r, 400).unwrap()).unwrap();
            let exact = annulus_upper(r).unwrap();
            assert!(((d - exact) / exact).abs() < 2e-2, "r = {r}: {d} vs {exact}");
        }
    }

    #[test]
    fn rectangle_beurling_suite() {
        let suite = rectangle_suite(2.0, 1.0, 50).unwrap();
        let v = beurling_criterion_check(&suite.metric, &suite.family, &suite.tests, 0.01);
        assert!(v.holds(), "{v:?}");
        let skipped: Vec<&str> = v
            .tests
            .iter()
            .filter(|t| t.status == TestStatus::Skipped)
            .map(|t| t.tag.as_str())
            .collect();
        assert_eq!(skipped, vec!["-1", "y - H/2"]);
        assert!((suite.metric.mass() - 0.5).abs() < 1e-12);
        let doubled = suite.metric.scaled(2.0).unwrap();
        let v2 = beurling_criterion_check(&doubled, &suite.family, &suite.tests, 0.01);
        assert!(!v2.condition1_holds);
        assert!((v2.path_integrals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn maximum_of_admissible_metrics_is_admissible() {
        let suite = rectangle_suite(2.0, 1.0, 50).unwrap();
        let rho1 = GridField::from_fn("2x/W^2", Complex64::new(0.0, 0.0), 0.02, 100, 50, |z| z.re / 2.0);
        let mx = AdmissibleMetric::new(suite.metric.field.max_with(&rho1).unwrap()).unwrap();
        for p in &suite.family {
            assert!(line_integral(&rho1, p, 0.01) >= 1.0 - 1e-9);
            assert!(line_integral(&mx, p, 0.01) >= 1.0 - 1e-9);
        }
        assert!(AdmissibleMetric::new(GridField::from_fn("neg", Complex64::new(0.0, 0.0), 1.0, 2, 2, |_| -1.0)).is_err());
    }

    #[test]
    fn pi_monomial_display() {
        assert_eq!(PiMonomial::new(1, 12, -1).to_string(), "1/12*pi^-1");
        assert_eq!(PiMonomial::new(-2, 1, 1).to_string(), "-2*pi");
        assert_eq!(PiMonomial::new(1, 1, 1).to_string(), "pi");
        assert_relative_eq!(PiMonomial::new(16, 9, -1).value(), 16.0 / (9.0 * PI), max_relative = 1e-15);
    }
}
