//! Multiplicity-counted covering areas and the quantities built on them.
//!
//! `A(M) = ∫_{Ω(M)} |f'|² dA` is computed three independent ways:
//! adaptive quadtree quadrature over the sublevel set, a Riemann sum of the
//! argument-principle preimage count over `D(0, M)`, and Monte Carlo over
//! the disk. The module also locates omitted values, measures the inner
//! radius of the component of `Ω(M)` containing the origin, and runs the
//! univalent two-Koebe check.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcmodel::{max_modulus_on_circle, HoloMap};

/// Radius of the neighbourhood excluded around each pole inside the disk.
pub const POLE_EXCLUSION: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Configuration strings: "depth=12,budget=2e6,grid=512"
// ---------------------------------------------------------------------------

const KNOWN_KEYS: &[&str] = &["depth", "budget", "tol", "min_depth", "grid", "nodes"];

/// Parses a comma-separated `key=value` list of numbers.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?}")))?;
        let k = k.trim();
        if !KNOWN_KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number for {k}: {v:?}")))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

/// Adaptive sublevel quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Maximum quadtree depth over `[-1, 1]²`.
    pub depth: u32,
    /// Minimum uniform depth before adaptivity starts.
    pub min_depth: u32,
    /// Maximum number of processed cells.
    pub budget: usize,
    /// Target error relative to `π M²`.
    pub tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            depth: 12,
            min_depth: 4,
            budget: 2_000_000,
            tol: 1e-6,
        }
    }
}

impl QuadConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let mut cfg = QuadConfig::default();
        if let Some(&d) = kv.get("depth") {
            cfg.depth = d as u32;
        }
        if let Some(&d) = kv.get("min_depth") {
            cfg.min_depth = d as u32;
        }
        if let Some(&b) = kv.get("budget") {
            cfg.budget = b as usize;
        }
        if let Some(&t) = kv.get("tol") {
            cfg.tol = t;
        }
        if cfg.min_depth > cfg.depth || cfg.depth > 40 || !(cfg.tol > 0.0) {
            return Err(Error::Config(format!("inconsistent quadrature config {text:?}")));
        }
        Ok(cfg)
    }
}

/// Lattice resolution for counting, scanning and flood fill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub grid: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { grid: 512 }
    }
}

impl GridConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let grid = kv.get("grid").map(|&g| g as usize).unwrap_or(512);
        if grid < 8 {
            return Err(Error::Config(format!("grid {grid} too small")));
        }
        Ok(GridConfig { grid })
    }
}

// ---------------------------------------------------------------------------
// Area estimates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaMethod {
    Quadrature,
    Counting,
    MonteCarlo,
}

impl fmt::Display for AreaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AreaMethod::Quadrature => "quadrature",
            AreaMethod::Counting => "counting",
            AreaMethod::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub value: f64,
    pub error_bound: f64,
    pub method: AreaMethod,
    pub sample_count: usize,
}

impl AreaEstimate {
    /// CSV columns after `spec, M`: `method, value, error_bound, samples`.
    pub fn csv_record(&self, spec: &str, m: f64) -> Vec<String> {
        vec![
            spec.to_string(),
            format!("{m}"),
            self.method.to_string(),
            format!("{:.12e}", self.value),
            format!("{:.6e}", self.error_bound),
            self.sample_count.to_string(),
        ]
    }
}

pub const AREA_CSV_HEADER: [&str; 6] = ["spec", "M", "method", "value", "error_bound", "samples"];

// ---------------------------------------------------------------------------
// Gauss-Legendre rules
// ---------------------------------------------------------------------------

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, x);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * x * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                weights[i] = 2.0 / ((1.0 - x * x) * dq * dq);
                break;
            }
        }
        nodes[i] = x;
    }
    (nodes, weights)
}

fn gl_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL6: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        6 => GL6.get_or_init(|| gauss_legendre(6)),
        8 => GL8.get_or_init(|| gauss_legendre(8)),
        _ => unreachable!("only 6- and 8-point rules are used"),
    }
}

// ---------------------------------------------------------------------------
// Sublevel quadrature
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Cell {
    x0: f64,
    y0: f64,
    size: f64,
    depth: u32,
}

impl Cell {
    fn children(&self) -> [Cell; 4] {
        let h = self.size / 2.0;
        let d = self.depth + 1;
        [
            Cell { x0: self.x0, y0: self.y0, size: h, depth: d },
            Cell { x0: self.x0 + h, y0: self.y0, size: h, depth: d },
            Cell { x0: self.x0, y0: self.y0 + h, size: h, depth: d },
            Cell { x0: self.x0 + h, y0: self.y0 + h, size: h, depth: d },
        ]
    }

    fn corners(&self) -> [Complex64; 4] {
        let s = self.size;
        [
            Complex64::new(self.x0, self.y0),
            Complex64::new(self.x0 + s, self.y0),
            Complex64::new(self.x0, self.y0 + s),
            Complex64::new(self.x0 + s, self.y0 + s),
        ]
    }

    fn center(&self) -> Complex64 {
        Complex64::new(self.x0 + self.size / 2.0, self.y0 + self.size / 2.0)
    }

    /// Distance from `p` to the closed square.
    fn distance_to(&self, p: Complex64) -> f64 {
        let dx = (self.x0 - p.re).max(p.re - self.x0 - self.size).max(0.0);
        let dy = (self.y0 - p.im).max(p.im - self.y0 - self.size).max(0.0);
        dx.hypot(dy)
    }

    fn farthest_from(&self, p: Complex64) -> f64 {
        self.corners()
            .iter()
            .map(|c| (c - p).norm())
            .fold(0.0, f64::max)
    }
}

enum CellKind {
    Outside,
    Interior,
    Straddle,
}

struct SublevelProblem<'a, F: ?Sized> {
    map: &'a F,
    m: f64,
    ln_m: f64,
    poles: Vec<Complex64>,
    cfg: QuadConfig,
    tol_abs: f64,
    processed: &'a AtomicUsize,
}

/// Clipped polygon helpers for the straddling-cell rule.
fn clip_polygon(poly: &[(Complex64, f64)], out: &mut Vec<Complex64>) {
    out.clear();
    let n = poly.len();
    for i in 0..n {
        let (p, vp) = poly[i];
        let (q, vq) = poly[(i + 1) % n];
        if vp >= 0.0 {
            out.push(p);
        }
        if (vp >= 0.0) != (vq >= 0.0) {
            let t = vp / (vp - vq);
            out.push(p + (q - p) * t);
        }
    }
}

fn polygon_area_centroid(poly: &[Complex64]) -> (f64, Complex64) {
    if poly.len() < 3 {
        return (0.0, Complex64::new(0.0, 0.0));
    }
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    let o = poly[0];
    for i in 1..poly.len() - 1 {
        let p = poly[i] - o;
        let q = poly[i + 1] - o;
        let cross = p.re * q.im - p.im * q.re;
        a2 += cross;
        cx += cross * (p.re + q.re) / 3.0;
        cy += cross * (p.im + q.im) / 3.0;
    }
    if a2.abs() < 1e-300 {
        return (0.0, o);
    }
    (a2.abs() / 2.0, o + Complex64::new(cx / a2, cy / a2))
}

impl<'a, F: HoloMap + ?Sized> SublevelProblem<'a, F> {
    fn near_pole(&self, z: Complex64) -> bool {
        self.poles.iter().any(|p| (z - p).norm() < POLE_EXCLUSION)
    }

    /// `ln M - ln|f|`: positive inside the sublevel set, harmonic where `f ≠ 0`.
    fn level(&self, z: Complex64) -> f64 {
        match self.map.value(z) {
            Ok(v) => {
                let a = v.norm();
                if a == 0.0 {
                    50.0
                } else {
                    (self.ln_m - a.ln()).clamp(-50.0, 50.0)
                }
            }
            Err(_) => -50.0,
        }
    }

    fn classify(&self, cell: &Cell) -> CellKind {
        let origin = Complex64::new(0.0, 0.0);
        if cell.distance_to(origin) >= 1.0 {
            return CellKind::Outside;
        }
        if self
            .poles
            .iter()
            .any(|p| cell.farthest_from(*p) < POLE_EXCLUSION)
        {
            return CellKind::Outside;
        }
        let mut pts = [Complex64::new(0.0, 0.0); 5];
        pts[..4].copy_from_slice(&cell.corners());
        pts[4] = cell.center();
        let mut min_v = f64::INFINITY;
        let mut max_v = 0.0f64;
        let mut max_d = 0.0f64;
        for p in pts {
            match self.map.value_and_derivative(p) {
                Ok((v, d)) => {
                    min_v = min_v.min(v.norm());
                    max_v = max_v.max(v.norm());
                    max_d = max_d.max(d.norm());
                }
                Err(_) => return CellKind::Straddle,
            }
        }
        let pad = 1.5 * max_d * cell.size / 2.0;
        if min_v - pad >= self.m {
            return CellKind::Outside;
        }
        let pole_near = self
            .poles
            .iter()
            .any(|p| cell.distance_to(*p) < 2.0 * cell.size);
        if cell.farthest_from(origin) <= 1.0 && max_v + pad < self.m && !pole_near {
            CellKind::Interior
        } else {
            CellKind::Straddle
        }
    }

    fn gauss(&self, cell: &Cell, n: usize) -> Option<f64> {
        let (nodes, weights) = gl_rule(n);
        let half = cell.size / 2.0;
        let c = cell.center();
        let mut sum = 0.0;
        for (xi, wi) in nodes.iter().zip(weights) {
            for (yj, wj) in nodes.iter().zip(weights) {
                let z = c + Complex64::new(xi * half, yj * half);
                let d = self.map.value_and_derivative(z).ok()?.1;
                sum += wi * wj * d.norm_sqr();
            }
        }
        Some(sum * half * half)
    }

    /// Triangle-clipping rule on an `n x n` sub-lattice, `n ∈ {2, 4}`,
    /// sharing the level values sampled on the 5x5 lattice.
    fn clipped(&self, cell: &Cell, levels: &[[f64; 5]; 5], n: usize) -> f64 {
        let stride = 4 / n;
        let h = cell.size / n as f64;
        let needs_disk = cell.farthest_from(Complex64::new(0.0, 0.0)) > 1.0;
        let mut sum = 0.0;
        let mut clipped = Vec::with_capacity(8);
        let mut clipped2 = Vec::with_capacity(8);
        let mut tagged = Vec::with_capacity(8);
        for i in 0..n {
            for j in 0..n {
                let p = |a: usize, b: usize| {
                    (
                        Complex64::new(cell.x0 + (i + a) as f64 * h, cell.y0 + (j + b) as f64 * h),
                        levels[(i + a) * stride][(j + b) * stride],
                    )
                };
                let tris = [[p(0, 0), p(1, 0), p(1, 1)], [p(0, 0), p(1, 1), p(0, 1)]];
                for tri in tris {
                    clip_polygon(&tri, &mut clipped);
                    let poly: &[Complex64] = if needs_disk {
                        tagged.clear();
                        tagged.extend(clipped.iter().map(|&q| (q, 1.0 - q.norm())));
                        clip_polygon(&tagged, &mut clipped2);
                        &clipped2
                    } else {
                        &clipped
                    };
                    let (area, centroid) = polygon_area_centroid(poly);
                    if area > 0.0 && !self.near_pole(centroid) {
                        if let Ok((_, d)) = self.map.value_and_derivative(centroid) {
                            sum += area * d.norm_sqr();
                        }
                    }
                }
            }
        }
        sum
    }

    /// Returns `(value, error, leaves)` for the subtree rooted at `root`.
    fn integrate_subtree(&self, root: Cell) -> Result<(f64, f64, usize)> {
        let mut stack = vec![root];
        let (mut value, mut error, mut leaves) = (0.0, 0.0, 0usize);
        let straddle_min = self.cfg.min_depth + 2;
        while let Some(cell) = stack.pop() {
            let n = self.processed.fetch_add(1, Ordering::Relaxed) + 1;
            if n > self.cfg.budget {
                return Err(Error::BudgetExceeded {
                    budget: self.cfg.budget,
                });
            }
            let at_max = cell.depth >= self.cfg.depth;
            match self.classify(&cell) {
                CellKind::Outside => leaves += 1,
                CellKind::Interior => {
                    if cell.depth < self.cfg.min_depth {
                        stack.extend(cell.children());
                        continue;
                    }
                    match (self.gauss(&cell, 8), self.gauss(&cell, 6)) {
                        (Some(hi), Some(lo)) => {
                            let err = (hi - lo).abs();
                            let area = cell.size * cell.size;
                            if err <= self.tol_abs * area / 4.0 || at_max {
                                value += hi;
                                error += err;
                                leaves += 1;
                            } else {
                                stack.extend(cell.children());
                            }
                        }
                        _ if !at_max => stack.extend(cell.children()),
                        _ => leaves += 1,
                    }
                }
                CellKind::Straddle => {
                    if cell.depth < straddle_min && !at_max {
                        stack.extend(cell.children());
                        continue;
                    }
                    let mut levels = [[0.0; 5]; 5];
                    let h = cell.size / 4.0;
                    for (i, row) in levels.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = self.level(Complex64::new(
                                cell.x0 + i as f64 * h,
                                cell.y0 + j as f64 * h,
                            ));
                        }
                    }
                    let fine = self.clipped(&cell, &levels, 4);
                    let coarse = self.clipped(&cell, &levels, 2);
                    let err = (fine - coarse).abs();
                    if err <= self.tol_abs * cell.size / 16.0 || at_max {
                        value += fine;
                        error += err;
                        leaves += 1;
                    } else {
                        stack.extend(cell.children());
                    }
                }
            }
        }
        Ok((value, error, leaves))
    }
}

/// `A(M)` by adaptive quadtree quadrature of `|f'|²` over
/// `{z ∈ 𝔻 : |f(z)| < M}`. For maps with poles in the disk, a
/// neighbourhood of radius [`POLE_EXCLUSION`] around each pole is dropped.
pub fn sublevel_area<F: HoloMap + ?Sized>(map: &F, m: f64, cfg: &QuadConfig) -> Result<AreaEstimate> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::BadParameter(format!("M = {m} must be positive")));
    }
    let processed = AtomicUsize::new(0);
    let problem = SublevelProblem {
        map,
        m,
        ln_m: m.ln(),
        poles: map.disk_poles(),
        cfg: *cfg,
        tol_abs: cfg.tol * PI * m * m,
        processed: &processed,
    };
    let side = 1usize << cfg.min_depth.min(6);
    let size = 2.0 / side as f64;
    let roots: Vec<Cell> = (0..side * side)
        .map(|idx| Cell {
            x0: -1.0 + (idx % side) as f64 * size,
            y0: -1.0 + (idx / side) as f64 * size,
            size,
            depth: cfg.min_depth.min(6),
        })
        .collect();
    let parts: Vec<Result<(f64, f64, usize)>> = roots
        .par_iter()
        .map(|&c| problem.integrate_subtree(c))
        .collect();
    let (mut value, mut error, mut leaves) = (0.0, 0.0, 0);
    for part in parts {
        let (v, e, l) = part?;
        value += v;
        error += e;
        leaves += l;
    }
    Ok(AreaEstimate {
        value,
        error_bound: error,
        method: AreaMethod::Quadrature,
        sample_count: leaves,
    })
}

// ---------------------------------------------------------------------------
// Argument-principle counting
// ---------------------------------------------------------------------------

const CONTOUR_BASE_NODES: usize = 4096;
const CONTOUR_MAX_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreimageCount {
    pub count: i64,
    /// Distance of the winding integral from the nearest integer.
    pub residual: f64,
    pub nodes: usize,
    pub min_distance: f64,
}

/// Samples of `(z f'(z), f(z))` on `|z| = r`, doubled lazily, shared by
/// every winding integral taken on that circle.
pub struct ContourCounter<'a, F: ?Sized> {
    map: &'a F,
    r: f64,
    levels: Vec<OnceLock<Result<Vec<(Complex64, Complex64)>>>>,
}

impl<'a, F: HoloMap + ?Sized> ContourCounter<'a, F> {
    pub fn new(map: &'a F, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::BadParameter(format!("contour radius {r} not in (0, 1]")));
        }
        Ok(ContourCounter {
            map,
            r,
            levels: (0..=CONTOUR_MAX_LEVEL).map(|_| OnceLock::new()).collect(),
        })
    }

    fn level(&self, k: usize) -> Result<&[(Complex64, Complex64)]> {
        let samples = self.levels[k].get_or_init(|| {
            let (count, total, offset) = if k == 0 {
                (CONTOUR_BASE_NODES, CONTOUR_BASE_NODES, 0.0)
            } else {
                let total = CONTOUR_BASE_NODES << k;
                (total / 2, total, 1.0)
            };
            (0..count)
                .map(|j| {
                    let idx = if k == 0 { j as f64 } else { 2.0 * j as f64 + offset };
                    let z = Complex64::from_polar(self.r, 2.0 * PI * idx / total as f64);
                    let (v, d) = self.map.value_and_derivative(z)?;
                    Ok((z * d, v))
                })
                .collect()
        });
        samples.as_deref().map_err(Clone::clone)
    }

    /// Number of zeros of `f - w` inside `|z| < r` (zeros minus poles for
    /// meromorphic maps).
    pub fn count(&self, w: Complex64) -> Result<PreimageCount> {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut nodes = 0usize;
        let mut min_distance = f64::INFINITY;
        for k in 0..=CONTOUR_MAX_LEVEL {
            for &(zd, v) in self.level(k)? {
                let diff = v - w;
                min_distance = min_distance.min(diff.norm());
                sum += zd / diff;
            }
            nodes += self.level(k)?.len();
            if min_distance < 1e-10 * (1.0 + w.norm()) {
                return Err(Error::ValueOnContour { min_distance });
            }
            let value = sum / nodes as f64;
            let nearest = value.re.round();
            let residual = (value - nearest).norm();
            if residual < 0.05 || (k == CONTOUR_MAX_LEVEL && residual <= 0.1) {
                return Ok(PreimageCount {
                    count: nearest as i64,
                    residual,
                    nodes,
                    min_distance,
                });
            }
            if k == CONTOUR_MAX_LEVEL {
                return Err(Error::NonIntegerResult {
                    value: value.re,
                    residual,
                });
            }
        }
        unreachable!()
    }
}

/// `(1/2πi) ∮_{|z|=r} f'/(f - w) dz`, composite trapezoid with doubling.
pub fn preimage_count<F: HoloMap + ?Sized>(map: &F, w: Complex64, r: f64) -> Result<PreimageCount> {
    ContourCounter::new(map, r)?.count(w)
}

fn count_with_jitter<F: HoloMap + ?Sized>(
    counter: &ContourCounter<'_, F>,
    w: Complex64,
    jitter: Complex64,
) -> Option<i64> {
    match counter.count(w) {
        Ok(c) => Some(c.count),
        Err(_) => counter.count(w + jitter).ok().map(|c| c.count),
    }
}

/// `A(M) = ∫_{D(0,M)} n(w) dA(w)` as a cell-centred Riemann sum.
pub fn area_by_counting<F: HoloMap + ?Sized>(map: &F, m: f64, grid: &GridConfig) -> Result<AreaEstimate> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::BadParameter(format!("M = {m} must be positive")));
    }
    let counter = ContourCounter::new(map, 1.0)?;
    counter.level(0)?;
    let n = grid.grid;
    let h = 2.0 * m / n as f64;
    let jitter = Complex64::new(0.137 * h, 0.071 * h);
    let centre = |i: usize, j: usize| {
        Complex64::new(-m + (i as f64 + 0.5) * h, -m + (j as f64 + 0.5) * h)
    };
    let rows: Vec<Vec<Option<Option<i64>>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| {
                    let w = centre(i, j);
                    (w.norm() < m).then(|| count_with_jitter(&counter, w, jitter))
                })
                .collect()
        })
        .collect();
    let cell = h * h;
    let mut value = 0.0;
    let mut error = 0.0;
    let mut samples = 0;
    let mut max_count = 0i64;
    for row in &rows {
        for c in row.iter().flatten().flatten() {
            max_count = max_count.max(c.abs());
        }
    }
    for j in 0..n {
        for i in 0..n {
            let Some(entry) = rows[j][i] else { continue };
            samples += 1;
            let Some(c) = entry else {
                error += cell * max_count as f64;
                continue;
            };
            value += c as f64 * cell;
            let neighbours = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            let mut jump = 0i64;
            for (a, b) in neighbours {
                let other = if a < n && b < n { rows[b][a] } else { None };
                let oc = match other {
                    Some(Some(v)) => v,
                    Some(None) => continue,
                    None => 0,
                };
                jump = jump.max((c - oc).abs());
            }
            error += 0.25 * cell * jump as f64;
        }
    }
    Ok(AreaEstimate {
        value,
        error_bound: error,
        method: AreaMethod::Counting,
        sample_count: samples,
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

const MC_BATCH: usize = 1 << 14;

/// Unbiased estimate of `∫_𝔻 1{|f|<M} |f'|² dA` from uniform disk samples.
/// Batch `b` draws from ChaCha stream `b`, so the result does not depend on
/// the worker count.
pub fn monte_carlo_area<F: HoloMap + ?Sized>(map: &F, m: f64, n: usize, seed: u64) -> Result<AreaEstimate> {
    if n < 10_000 {
        return Err(Error::BadParameter(format!("n = {n} below 10^4")));
    }
    let poles = map.disk_poles();
    let batches = n.div_ceil(MC_BATCH);
    let sums: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BATCH.min(n - b * MC_BATCH);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let rad = rng.gen::<f64>().sqrt();
                let theta = 2.0 * PI * rng.gen::<f64>();
                let z = Complex64::from_polar(rad, theta);
                if poles.iter().any(|p| (z - p).norm() < POLE_EXCLUSION) {
                    continue;
                }
                if let Ok((v, d)) = map.value_and_derivative(z) {
                    if v.norm() < m {
                        let x = d.norm_sqr();
                        s += x;
                        s2 += x * x;
                    }
                }
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    let sigma = PI * (var / nf).sqrt();
    Ok(AreaEstimate {
        value: PI * mean,
        error_bound: 3.0 * sigma,
        method: AreaMethod::MonteCarlo,
        sample_count: n,
    })
}

// ---------------------------------------------------------------------------
// Omitted points and normalization
// ---------------------------------------------------------------------------

/// Rotation and dilation of the image plane placing the omitted point on the
/// positive real axis and the radius bound at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Unit complex factor `e^{-i arg ζ}`.
    pub rotation: Complex64,
    /// `1 / M`.
    pub scale: f64,
    /// `|ζ| / M`.
    pub zeta: f64,
}

impl Normalization {
    pub fn factor(&self) -> Complex64 {
        self.rotation * self.scale
    }

    pub fn apply<'a, F: HoloMap + ?Sized>(&self, map: &'a F) -> NormalizedMap<'a, F> {
        NormalizedMap {
            inner: map,
            factor: self.factor(),
        }
    }

    /// Maps a normalized image point back to the original image plane.
    pub fn invert(&self, w: Complex64) -> Complex64 {
        w / self.factor()
    }
}

/// `z -> factor · f(z)` without touching the underlying spec.
pub struct NormalizedMap<'a, F: ?Sized> {
    inner: &'a F,
    factor: Complex64,
}

impl<'a, F: HoloMap + ?Sized> HoloMap for NormalizedMap<'a, F> {
    fn value_and_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let (v, d) = self.inner.value_and_derivative(z)?;
        Ok((v * self.factor, d * self.factor))
    }

    fn disk_poles(&self) -> Vec<Complex64> {
        self.inner.disk_poles()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedPointResult {
    pub zeta: Option<Complex64>,
    pub scan_resolution: f64,
    /// Examined `(w, count)` pairs in scan order; `-1` marks an
    /// undetermined count. Truncated to the first 256.
    pub witnesses: Vec<(Complex64, i64)>,
    pub normalization: Option<Normalization>,
}

const WITNESS_LIMIT: usize = 256;

/// Scans a lattice on `D(0, M)` in order of increasing modulus (ties by
/// argument in `[0, 2π)`) and returns the first value with no preimage.
pub fn find_omitted_point<F: HoloMap + ?Sized>(map: &F, m: f64, scan: &GridConfig) -> Result<OmittedPointResult> {
    let counter = ContourCounter::new(map, 1.0)?;
    counter.level(0)?;
    let half = (scan.grid / 2) as i64;
    let h = m / half as f64;
    let mut nodes: Vec<(i64, f64, Complex64)> = Vec::new();
    for j in -half..=half {
        for i in -half..=half {
            let w = Complex64::new(i as f64 * h, j as f64 * h);
            if w.norm() < m {
                let arg = w.im.atan2(w.re).rem_euclid(2.0 * PI);
                nodes.push((i * i + j * j, arg, w));
            }
        }
    }
    nodes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut witnesses = Vec::new();
    let mut zeta = None;
    'scan: for chunk in nodes.chunks(2048) {
        let counts: Vec<i64> = chunk
            .par_iter()
            .map(|&(_, _, w)| counter.count(w).map(|c| c.count).unwrap_or(-1))
            .collect();
        for (&(_, _, w), &c) in chunk.iter().zip(&counts) {
            if witnesses.len() < WITNESS_LIMIT {
                witnesses.push((w, c));
            }
            if c == 0 {
                if witnesses.last().map(|x| x.0) != Some(w) {
                    witnesses.push((w, c));
                }
                zeta = Some(w);
                break 'scan;
            }
        }
    }
    let normalization = zeta.map(|z| Normalization {
        rotation: z.conj() / z.norm(),
        scale: 1.0 / m,
        zeta: z.norm() / m,
    });
    Ok(OmittedPointResult {
        zeta,
        scan_resolution: h,
        witnesses,
        normalization,
    })
}

// ---------------------------------------------------------------------------
// Inner radius of the origin component
// ---------------------------------------------------------------------------

/// Occupancy bitmap of the flood-filled component on the domain lattice
/// `z = (i - half, j - half) · step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentGrid {
    pub half: usize,
    pub step: f64,
    pub cells: Vec<bool>,
}

impl ComponentGrid {
    pub fn side(&self) -> usize {
        2 * self.half + 1
    }

    pub fn contains_node(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.side() + i]
    }

    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(
            (i as f64 - self.half as f64) * self.step,
            (j as f64 - self.half as f64) * self.step,
        )
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRadiusResult {
    pub r: f64,
    pub contact_point: Complex64,
    /// Distance from 0 to the nearest lattice node outside the component.
    pub grid_distance: f64,
    pub component_grid: ComponentGrid,
}

fn first_exit<F: HoloMap + ?Sized>(map: &F, m: f64, theta: f64, ds: f64) -> f64 {
    let dir = Complex64::from_polar(1.0, theta);
    let inside = |s: f64| {
        let z = dir * s;
        z.norm() < 1.0 && map.value(z).map(|v| v.norm() < m).unwrap_or(false)
    };
    let mut s = 0.0;
    loop {
        let next = (s + ds).min(1.0);
        if !inside(next) {
            let (mut lo, mut hi) = (s, next);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return lo;
        }
        s = next;
        if s >= 1.0 {
            return 1.0;
        }
    }
}

const RAY_COUNT: usize = 2048;

/// Largest `r` with `r𝔻 ⊂ G`, where `G` is the component of `Ω(M)`
/// containing the origin, plus the contact point on `∂G`.
pub fn inner_radius<F: HoloMap + ?Sized>(map: &F, m: f64, grid: &GridConfig) -> Result<InnerRadiusResult> {
    let half = grid.grid / 2;
    let step = 1.0 / half as f64;
    let side = 2 * half + 1;
    let in_set: Vec<bool> = (0..side * side)
        .into_par_iter()
        .map(|idx| {
            let z = Complex64::new(
                ((idx % side) as f64 - half as f64) * step,
                ((idx / side) as f64 - half as f64) * step,
            );
            z.norm() < 1.0 && map.value(z).map(|v| v.norm() < m).unwrap_or(false)
        })
        .collect();
    let mut cells = vec![false; side * side];
    let start = half * side + half;
    if in_set[start] {
        let mut stack = vec![start];
        cells[start] = true;
        while let Some(idx) = stack.pop() {
            let (i, j) = (idx % side, idx / side);
            let mut visit = |ni: usize, nj: usize| {
                let k = nj * side + ni;
                if in_set[k] && !cells[k] {
                    cells[k] = true;
                    stack.push(k);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < side {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < side {
                visit(i, j + 1);
            }
        }
    }
    let component_grid = ComponentGrid { half, step, cells };
    let occupied = component_grid.occupied();
    if occupied < 16 {
        return Err(Error::ResolutionTooCoarse { cells: occupied });
    }
    let mut grid_distance = f64::INFINITY;
    for j in 0..side {
        for i in 0..side {
            if !component_grid.contains_node(i, j) {
                grid_distance = grid_distance.min(component_grid.node(i, j).norm());
            }
        }
    }

    let ds = step / 4.0;
    let dtheta = 2.0 * PI / RAY_COUNT as f64;
    let radii: Vec<f64> = (0..RAY_COUNT)
        .into_par_iter()
        .map(|k| first_exit(map, m, k as f64 * dtheta, ds))
        .collect();
    let mut candidates: Vec<usize> = (0..RAY_COUNT)
        .filter(|&k| {
            radii[k] <= radii[(k + RAY_COUNT - 1) % RAY_COUNT]
                && radii[k] <= radii[(k + 1) % RAY_COUNT]
        })
        .collect();
    candidates.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    candidates.truncate(3);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = (radii[candidates[0]], candidates[0] as f64 * dtheta);
    for &k in &candidates {
        let mut lo = (k as f64 - 1.0) * dtheta;
        let mut hi = (k as f64 + 1.0) * dtheta;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = first_exit(map, m, x1, ds);
        let mut f2 = first_exit(map, m, x2, ds);
        for _ in 0..40 {
            if f1 > f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = first_exit(map, m, x2, ds);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = first_exit(map, m, x1, ds);
            }
        }
        for (rad, th) in [(f1, x1), (f2, x2), (radii[k], k as f64 * dtheta)] {
            if rad < best.0 {
                best = (rad, th);
            }
        }
    }
    let (r, theta) = best;
    Ok(InnerRadiusResult {
        r,
        contact_point: Complex64::from_polar(r, theta),
        grid_distance,
        component_grid,
    })
}

// ---------------------------------------------------------------------------
// Growth function and Koebe check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub r: f64,
    pub max_modulus: f64,
    pub area: AreaEstimate,
    /// `A(M(r)) / (π M(r)²)`.
    pub value: f64,
}

pub fn growth_point<F: HoloMap + ?Sized>(map: &F, r: f64, cfg: &QuadConfig) -> Result<GrowthPoint> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::BadParameter(format!("radius {r} not in (0, 1]")));
    }
    let m = max_modulus_on_circle(map, r, 1e-12)?;
    if m <= 0.0 {
        return Err(Error::BadParameter("constant map has no growth function".into()));
    }
    let area = sublevel_area(map, m, cfg)?;
    Ok(GrowthPoint {
        r,
        max_modulus: m,
        area,
        value: area.value / (PI * m * m),
    })
}

/// `𝒜(r) = A(M(r)) / (π M(r)²)`.
pub fn growth_function<F: HoloMap + ?Sized>(map: &F, r: f64, cfg: &QuadConfig) -> Result<f64> {
    growth_point(map, r, cfg).map(|g| g.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KoebeReport {
    pub m: f64,
    pub area: AreaEstimate,
    /// `A(M) < π M²`.
    pub hypothesis: bool,
    /// `max_{|z|=1/16} |f|`.
    pub max_modulus_sixteenth: f64,
    pub holds: bool,
}

/// Two-Koebe check for a univalent map: `A(M) < π M²` implies
/// `f(𝔻/16) ⊂ D(0, M)`. Errors with `NotUnivalent` when a lattice over the
/// image finds a multiplicity of two or more.
pub fn koebe_univalent_report<F: HoloMap + ?Sized>(map: &F, m: f64, cfg: &QuadConfig) -> Result<KoebeReport> {
    let reach = max_modulus_on_circle(map, 1.0, 1e-9)?;
    let counter = ContourCounter::new(map, 1.0)?;
    let n = 64;
    let h = 2.0 * reach / n as f64;
    let worst = (0..n * n)
        .into_par_iter()
        .filter_map(|idx| {
            let w = Complex64::new(
                -reach + ((idx % n) as f64 + 0.5) * h,
                -reach + ((idx / n) as f64 + 0.5) * h,
            );
            counter.count(w).ok().map(|c| (c.count, idx, w))
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    if let Some((mult, _, w)) = worst {
        if mult >= 2 {
            return Err(Error::NotUnivalent {
                w,
                multiplicity: mult,
            });
        }
    }
    let area = sublevel_area(map, m, cfg)?;
    let hypothesis = area.value < PI * m * m;
    let max_modulus_sixteenth = max_modulus_on_circle(map, 1.0 / 16.0, 1e-12)?;
    Ok(KoebeReport {
        m,
        area,
        hypothesis,
        max_modulus_sixteenth,
        holds: !hypothesis || max_modulus_sixteenth <= m,
    })
}

pub fn koebe_univalent_check<F: HoloMap + ?Sized>(map: &F, m: f64, cfg: &QuadConfig) -> Result<bool> {
    koebe_univalent_report(map, m, cfg).map(|r| r.holds)
}
