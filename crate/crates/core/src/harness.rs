//! Command implementations behind the `meancover` binary: config loading,
//! the per-instance pipeline, and JSON/CSV/SVG report emission.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num::rational::Ratio;
use num::{BigInt, Zero};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{
    area_by_counting, find_omitted_point, growth_point, inner_radius, koebe_univalent_report, monte_carlo_area,
    sublevel_area, AreaEstimate, GridConfig, GrowthPoint, KoebeReport, QuadConfig, AREA_CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::funcmodel::{max_modulus_on_circle, parse_spec, FunctionSpec, Node};
use crate::lifting::{
    classify_case, coarea_check, lift_family, monotone_intervals_directed, reference_curve, simplicity_check, Case,
    CaseLabel, CoareaReport, LiftConfig, LiftFamily, Monotonicity,
};
use crate::modulus::{
    beurling_criterion_check, certified_radius_symbolic, lift_polylines, modulus_report, poletskii_instance_check,
    zeta_small_floor, LiftExtremalMetric, ModulusReport, PoletskiiOutcome, Provenance,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Key/value string for [`QuadConfig`].
    pub quadrature: String,
    /// Quadrature used for the meromorphic counterexample.
    pub counterexample_quadrature: String,
    /// Scan and flood-fill lattice for omitted points and inner radii.
    pub grid: usize,
    /// Lattice for the counting area oracle.
    pub counting_grid: usize,
    pub mc_samples: usize,
    /// Relative floor of the pairwise area agreement test.
    pub agreement: f64,
    /// Slack below 1 tolerated in the growth function.
    pub growth: f64,
    pub coarea: f64,
    pub sandwich: f64,
    pub lift_radii: usize,
    pub lift_tol: f64,
    /// Polyline density for the unit line-integral test.
    pub polyline_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature: "depth=12,min_depth=4,budget=2e6,tol=1e-6".into(),
            counterexample_quadrature: "depth=26,min_depth=4,budget=4e6,tol=1e-8".into(),
            grid: 512,
            counting_grid: 256,
            mc_samples: 1_000_000,
            agreement: 0.01,
            growth: 1e-6,
            coarea: 1e-3,
            sandwich: 1e-3,
            lift_radii: 64,
            lift_tol: 1e-8,
            polyline_points: 2001,
        }
    }
}

impl Tolerances {
    pub fn quad(&self) -> Result<QuadConfig> {
        QuadConfig::from_kv(&self.quadrature)
    }

    pub fn counterexample_quad(&self) -> Result<QuadConfig> {
        QuadConfig::from_kv(&self.counterexample_quadrature)
    }

    pub fn scan(&self) -> GridConfig {
        GridConfig { grid: self.grid }
    }

    pub fn lift(&self) -> LiftConfig {
        LiftConfig {
            lift_tol: self.lift_tol,
            ..LiftConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaParams {
    /// Explicit levels; when empty, `M = M(r)` for each `r` in `radii`.
    pub m: Vec<f64>,
    pub radii: Vec<f64>,
}

impl Default for AreaParams {
    fn default() -> Self {
        AreaParams {
            m: Vec::new(),
            radii: vec![0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthParams {
    pub r: Vec<f64>,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            r: (1..=9).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub m: Vec<f64>,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams { m: vec![1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Coarse grid scanned before bisection.
    pub r: Vec<f64>,
    pub bisection_steps: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            r: (1..=20).map(|k| k as f64 / 20.0).collect(),
            bisection_steps: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleParams {
    pub eps: Vec<f64>,
}

impl Default for CounterexampleParams {
    fn default() -> Self {
        CounterexampleParams { eps: vec![0.1, 0.01] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Vec<String>,
    pub seed: u64,
    pub area: AreaParams,
    pub growth: GrowthParams,
    pub verify: VerifyParams,
    pub search: SearchParams,
    pub counterexample: CounterexampleParams,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.corpus {
            parse_spec(s).map_err(|e| Error::Config(format!("corpus entry {s:?}: {e}")))?;
        }
        let bad = |what: &str, v: f64| Error::Config(format!("{what} = {v} out of range"));
        for &r in self.area.radii.iter().chain(&self.growth.r).chain(&self.search.r) {
            if !(r > 0.0 && r <= 1.0) {
                return Err(bad("radius", r));
            }
        }
        for &m in self.area.m.iter().chain(&self.verify.m) {
            if !(m > 0.0 && m.is_finite()) {
                return Err(bad("M", m));
            }
        }
        for &e in &self.counterexample.eps {
            if !(e > 0.0 && e < 1.0) {
                return Err(bad("eps", e));
            }
        }
        let t = &self.tolerances;
        t.quad()?;
        t.counterexample_quad()?;
        if t.grid < 64 || t.counting_grid < 8 {
            return Err(Error::Config("grids must be at least 64 (scan) and 8 (counting)".into()));
        }
        if t.mc_samples < 10_000 {
            return Err(bad("mc_samples", t.mc_samples as f64));
        }
        if t.lift_radii < 2 || t.polyline_points < 2 {
            return Err(Error::Config("lift_radii and polyline_points must be at least 2".into()));
        }
        for (what, v) in [
            ("agreement", t.agreement),
            ("growth", t.growth),
            ("coarea", t.coarea),
            ("sandwich", t.sandwich),
            ("lift_tol", t.lift_tol),
        ] {
            if !(v > 0.0) {
                return Err(bad(what, v));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One invariant evaluated on one instance. `slack ≥ 0` means it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub spec: String,
    pub invariant: String,
    pub slack: f64,
    pub pass: bool,
}

impl Check {
    fn new(spec: &str, invariant: &str, slack: f64) -> Self {
        Check {
            spec: spec.to_string(),
            invariant: invariant.to_string(),
            slack,
            pass: slack >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub spec: String,
    pub data: serde_json::Value,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub lower_expression: String,
    pub upper: f64,
    pub upper_spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub checks: usize,
    pub violations: Vec<Check>,
    pub r0_bracket: Option<Bracket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub records: Vec<Record>,
    pub summary: Summary,
    /// `(file name, contents)` of CSV and SVG artifacts.
    #[serde(skip)]
    pub artifacts: Vec<(String, String)>,
}

impl RunReport {
    fn assemble(command: &str, seed: u64, records: Vec<Record>, r0_bracket: Option<Bracket>) -> Self {
        let violations: Vec<Check> = records
            .iter()
            .flat_map(|r| r.checks.iter().filter(|c| !c.pass).cloned())
            .collect();
        RunReport {
            command: command.to_string(),
            seed,
            summary: Summary {
                records: records.len(),
                checks: records.iter().map(|r| r.checks.len()).sum(),
                violations,
                r0_bracket,
            },
            records,
            artifacts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.summary.violations.is_empty()
    }

    /// Writes `report.json` and every artifact into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        let path = dir.join("report.json");
        fs::write(&path, json)?;
        written.push(path);
        for (name, body) in &self.artifacts {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn file_stem(index: usize, spec: &str) -> String {
    let mut s: String = spec
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    s.truncate(48);
    format!("{index:02}-{}", s.trim_matches('_'))
}

// ---------------------------------------------------------------------------
// Area
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub m: f64,
    pub estimates: Vec<AreaEstimate>,
    /// `(method, method, |difference|, allowed)` per pair.
    pub agreement: Vec<(String, String, f64, f64)>,
    pub counterexample_regime: bool,
    pub notes: Vec<String>,
}

/// `|a - b| ≤ max(rel · max(|a|, |b|), sqrt(e_a² + e_b²))`; the error bounds
/// are already three-sigma for Monte Carlo.
pub fn agreement_allowance(a: &AreaEstimate, b: &AreaEstimate, rel: f64) -> f64 {
    (rel * a.value.abs().max(b.value.abs())).max(a.error_bound.hypot(b.error_bound))
}

pub fn area_row(spec: &FunctionSpec, m: f64, tol: &Tolerances, seed: u64) -> Result<AreaRow> {
    let quad = tol.quad()?;
    let mut estimates = vec![sublevel_area(spec, m, &quad)?];
    let mut notes = Vec::new();
    if spec.is_analytic() {
        estimates.push(area_by_counting(spec, m, &GridConfig { grid: tol.counting_grid })?);
    } else {
        notes.push("counting oracle skipped: map has poles in the disk".into());
    }
    estimates.push(monte_carlo_area(spec, m, tol.mc_samples, seed)?);
    let mut agreement = Vec::new();
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let (a, b) = (&estimates[i], &estimates[j]);
            agreement.push((
                a.method.to_string(),
                b.method.to_string(),
                (a.value - b.value).abs(),
                agreement_allowance(a, b, tol.agreement),
            ));
        }
    }
    let q = &estimates[0];
    Ok(AreaRow {
        m,
        counterexample_regime: !spec.is_analytic() && q.value + q.error_bound < PI * m * m,
        estimates,
        agreement,
        notes,
    })
}

fn levels(spec: &FunctionSpec, p: &AreaParams) -> Result<Vec<f64>> {
    if !p.m.is_empty() {
        return Ok(p.m.clone());
    }
    p.radii.iter().map(|&r| max_modulus_on_circle(spec, r, 1e-12)).collect()
}

pub fn cmd_area(cfg: &RunConfig) -> Result<RunReport> {
    let tol = &cfg.tolerances;
    let results: Vec<(Record, Vec<Vec<String>>)> = cfg
        .corpus
        .par_iter()
        .map(|s| {
            let mut checks = Vec::new();
            let mut rows = Vec::new();
            let data = match parse_spec(s).and_then(|f| {
                levels(&f, &cfg.area)?
                    .into_iter()
                    .map(|m| area_row(&f, m, tol, cfg.seed))
                    .collect::<Result<Vec<_>>>()
            }) {
                Ok(area_rows) => {
                    for row in &area_rows {
                        for (a, b, d, allowed) in &row.agreement {
                            checks.push(Check::new(s, &format!("area-agreement {a}/{b} M={}", row.m), allowed - d));
                        }
                        for e in &row.estimates {
                            let mut rec = e.csv_record(s, row.m);
                            rec.push(if row.counterexample_regime { "counterexample-regime".into() } else { String::new() });
                            rows.push(rec);
                        }
                    }
                    to_json(&area_rows)
                }
                Err(e) => {
                    checks.push(Check::new(s, &format!("area: {e}"), -1.0));
                    serde_json::Value::Null
                }
            };
            (Record { spec: s.clone(), data, checks }, rows)
        })
        .collect();
    let mut header: Vec<&str> = AREA_CSV_HEADER.to_vec();
    header.push("flag");
    let rows: Vec<Vec<String>> = results.iter().flat_map(|(_, r)| r.clone()).collect();
    let mut report = RunReport::assemble("area", cfg.seed, results.into_iter().map(|(r, _)| r).collect(), None);
    report.artifacts.push(("area.csv".into(), csv_string(&header, &rows)?));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Growth
// ---------------------------------------------------------------------------

pub const GROWTH_CSV_HEADER: [&str; 7] = ["spec", "r", "max_modulus", "area", "error_bound", "growth", "below_one"];

pub fn growth_curve(spec: &FunctionSpec, radii: &[f64], quad: &QuadConfig) -> Result<Vec<GrowthPoint>> {
    radii.iter().map(|&r| growth_point(spec, r, quad)).collect()
}

/// Slack of strict monotonicity of `M(r)` along the sampled radii.
pub fn monotonicity_slack(points: &[GrowthPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| w[1].max_modulus - w[0].max_modulus)
        .fold(f64::INFINITY, f64::min)
}

pub fn cmd_growth(cfg: &RunConfig) -> Result<RunReport> {
    let quad = cfg.tolerances.quad()?;
    let results: Vec<(Record, Vec<Vec<String>>, Option<String>)> = cfg
        .corpus
        .par_iter()
        .map(|s| {
            let mut checks = Vec::new();
            let mut rows = Vec::new();
            let mut svg = None;
            let data = match parse_spec(s).and_then(|f| growth_curve(&f, &cfg.growth.r, &quad)) {
                Ok(points) => {
                    if points.len() >= 2 {
                        checks.push(Check::new(s, "max-modulus-increasing", monotonicity_slack(&points)));
                    }
                    for p in &points {
                        rows.push(vec![
                            s.clone(),
                            format!("{}", p.r),
                            format!("{:.12e}", p.max_modulus),
                            format!("{:.12e}", p.area.value),
                            format!("{:.6e}", p.area.error_bound),
                            format!("{:.12e}", p.value),
                            (p.value < 1.0 - cfg.tolerances.growth).to_string(),
                        ]);
                    }
                    svg = Some(growth_svg(s, &points, cfg.tolerances.growth));
                    to_json(&points)
                }
                Err(e) => {
                    checks.push(Check::new(s, &format!("growth: {e}"), -1.0));
                    serde_json::Value::Null
                }
            };
            (Record { spec: s.clone(), data, checks }, rows, svg)
        })
        .collect();
    let rows: Vec<Vec<String>> = results.iter().flat_map(|(_, r, _)| r.clone()).collect();
    let mut artifacts = vec![("growth.csv".to_string(), csv_string(&GROWTH_CSV_HEADER, &rows)?)];
    for (i, (rec, _, svg)) in results.iter().enumerate() {
        if let Some(svg) = svg {
            artifacts.push((format!("growth-{}.svg", file_stem(i, &rec.spec)), svg.clone()));
        }
    }
    let mut report = RunReport::assemble("growth", cfg.seed, results.into_iter().map(|(r, _, _)| r).collect(), None);
    report.artifacts = artifacts;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Verify pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "reason")]
pub enum PipelineStatus {
    Completed,
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub r_check: f64,
    pub max_modulus: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub spec: String,
    pub m: f64,
    pub area: AreaEstimate,
    pub status: PipelineStatus,
    pub omitted_point: Option<Complex64>,
    pub zeta: Option<f64>,
    pub inner_r: Option<f64>,
    pub contact_point: Option<Complex64>,
    pub case: Option<CaseLabel>,
    pub intervals: usize,
    pub complete: bool,
    pub simple: bool,
    pub coarea: Option<CoareaReport>,
    pub modulus: Option<ModulusReport>,
    pub poletskii: Option<PoletskiiOutcome>,
    /// Worst `|∫ ρ₀ - 1|` over all lifted paths.
    pub condition1_max_deviation: Option<f64>,
    pub containment: Option<Containment>,
    pub koebe: Option<KoebeReport>,
    #[serde(skip)]
    pub families: Vec<LiftFamily>,
}

impl PipelineOutcome {
    fn new(spec: &str, m: f64, area: AreaEstimate, status: PipelineStatus) -> Self {
        PipelineOutcome {
            spec: spec.to_string(),
            m,
            area,
            status,
            omitted_point: None,
            zeta: None,
            inner_r: None,
            contact_point: None,
            case: None,
            intervals: 0,
            complete: false,
            simple: false,
            coarea: None,
            modulus: None,
            poletskii: None,
            condition1_max_deviation: None,
            containment: None,
            koebe: None,
            families: Vec::new(),
        }
    }
}

/// Omitted point, inner radius, reference curve, case label, lifts, coarea
/// and modulus bounds for one `(spec, M)` satisfying `A(M) < π M²`.
pub fn run_pipeline(spec_text: &str, m: f64, tol: &Tolerances) -> Result<PipelineOutcome> {
    let f = parse_spec(spec_text)?;
    let quad = tol.quad()?;
    let area = sublevel_area(&f, m, &quad)?;
    // Equality cases such as z -> z sit on the boundary up to quadrature error.
    let margin = area.error_bound.max(quad.tol * PI * m * m);
    if area.value + margin >= PI * m * m {
        return Ok(PipelineOutcome::new(
            spec_text,
            m,
            area,
            PipelineStatus::Skipped(format!(
                "hypothesis not met: A(M) = {:.6} >= pi M^2 = {:.6}",
                area.value,
                PI * m * m
            )),
        ));
    }
    let mut out = PipelineOutcome::new(spec_text, m, area, PipelineStatus::Completed);
    out.koebe = match koebe_univalent_report(&f, m, &quad) {
        Ok(k) => Some(k),
        Err(Error::NotUnivalent { .. }) => None,
        Err(e) => return Err(e),
    };
    let omitted = find_omitted_point(&f, m, &tol.scan())?;
    let (Some(w), Some(norm)) = (omitted.zeta, omitted.normalization) else {
        out.status = PipelineStatus::Failed("no omitted point found although A(M) < pi M^2".into());
        return Ok(out);
    };
    out.omitted_point = Some(w);
    out.zeta = Some(norm.zeta);
    let g = norm.apply(&f);
    let ir = inner_radius(&g, 1.0, &tol.scan())?;
    out.inner_r = Some(ir.r);
    out.contact_point = Some(ir.contact_point);
    let curve = reference_curve(&g, &ir, norm.zeta, 257)?;
    let label = classify_case(norm.zeta, &curve);
    out.case = Some(label);
    if label.case == Case::Rectangle {
        out.status = PipelineStatus::Skipped("rectangle case: lifting out of scope".into());
        return Ok(out);
    }
    let dir = if label.case == Case::InnerAnnulus {
        Monotonicity::Decreasing
    } else {
        Monotonicity::Increasing
    };
    let cover = monotone_intervals_directed(&curve, label.u_range, dir)?;
    out.intervals = cover.intervals.len();
    let families = cover
        .intervals
        .iter()
        .map(|iv| lift_family(&g, &curve, iv, tol.lift_radii, &tol.lift()))
        .collect::<Result<Vec<_>>>()?;
    out.complete = families.iter().all(LiftFamily::complete);
    out.simple = families
        .iter()
        .all(|fam| fam.paths.iter().all(|p| simplicity_check(p, 1e-6)));
    if !out.complete {
        out.families = families;
        out.status = PipelineStatus::Failed("a lift stopped before the boundary".into());
        return Ok(out);
    }
    let coarea = coarea_check(&g, &families, &quad)?;
    out.coarea = Some(coarea);
    let provenance = Provenance {
        spec: spec_text.to_string(),
        m,
        zeta: norm.zeta,
        case: label.case.label().to_string(),
        quadrature: tol.quadrature.clone(),
        grid: format!("grid={}", tol.grid),
    };
    let report = modulus_report(ir.r, &label, &families, &coarea, provenance)?;
    let r_check = 0.01f64.min(report.certified_r_s2).max(f64::MIN_POSITIVE);
    out.containment = Some(Containment {
        r_check,
        max_modulus: max_modulus_on_circle(&f, r_check, 1e-12)?,
        m,
    });
    out.modulus = Some(report);
    out.poletskii = Some(poletskii_instance_check(ir.r, &families));
    let mut worst: f64 = 0.0;
    for fam in &families {
        let metric = LiftExtremalMetric::new(&g, fam)?;
        let polylines = lift_polylines(&g, fam, tol.polyline_points)?;
        let v = beurling_criterion_check(&metric, &polylines, &[], f64::INFINITY);
        worst = worst.max(v.condition1_max_deviation);
    }
    out.condition1_max_deviation = Some(worst);
    out.families = families;
    Ok(out)
}

/// Invariants reported for one pipeline outcome.
pub fn pipeline_checks(o: &PipelineOutcome, tol: &Tolerances) -> Vec<Check> {
    let s = o.spec.as_str();
    let mut checks = Vec::new();
    if let PipelineStatus::Failed(reason) = &o.status {
        checks.push(Check::new(s, &format!("pipeline: {reason}"), -1.0));
    }
    if let Some(k) = &o.koebe {
        checks.push(Check::new(s, "koebe-sixteenth", if k.hypothesis { k.m - k.max_modulus_sixteenth } else { 0.0 }));
    }
    if o.status != PipelineStatus::Completed {
        return checks;
    }
    if let Some(c) = &o.coarea {
        checks.push(Check::new(s, "coarea-identity", tol.coarea - (c.lhs - c.rhs_direct).abs()));
        checks.push(Check::new(s, "coarea-inequality", c.a1.value + c.a1.error_bound + tol.coarea - c.lhs));
    }
    checks.push(Check::new(s, "lift-simple", if o.simple { 0.0 } else { -1.0 }));
    if let Some(r) = &o.modulus {
        checks.push(Check::new(s, "sandwich-mass", r.upper - r.lower_s3 + tol.sandwich));
        checks.push(Check::new(s, "sandwich-chain", r.upper - r.lower_s2 + tol.sandwich));
    }
    if let Some(d) = o.condition1_max_deviation {
        checks.push(Check::new(s, "unit-line-integral", 1e-3 - d));
    }
    if let Some(c) = &o.containment {
        checks.push(Check::new(s, "containment", c.m - c.max_modulus));
    }
    checks
}

pub const VERIFY_CSV_HEADER: [&str; 13] = [
    "spec", "M", "status", "area", "zeta", "inner_r", "case", "coarea", "upper", "lower_s2", "lower_s3",
    "certified_r_s2", "certified_r_s3",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<RunReport> {
    let tol = &cfg.tolerances;
    let jobs: Vec<(&String, f64)> = cfg
        .corpus
        .iter()
        .flat_map(|s| cfg.verify.m.iter().map(move |&m| (s, m)))
        .collect();
    let results: Vec<(Record, Vec<String>, Option<String>)> = jobs
        .par_iter()
        .map(|&(s, m)| match run_pipeline(s, m, tol) {
            Ok(o) => {
                let status = match &o.status {
                    PipelineStatus::Completed => "completed".to_string(),
                    PipelineStatus::Skipped(r) => format!("skipped: {r}"),
                    PipelineStatus::Failed(r) => format!("failed: {r}"),
                };
                let md = o.modulus.as_ref();
                let row = vec![
                    s.clone(),
                    format!("{m}"),
                    status,
                    format!("{:.9e}", o.area.value),
                    opt(o.zeta),
                    opt(o.inner_r),
                    o.case.map(|c| c.case.label().to_string()).unwrap_or_default(),
                    opt(o.coarea.map(|c| c.lhs)),
                    opt(md.map(|r| r.upper)),
                    opt(md.map(|r| r.lower_s2)),
                    opt(md.map(|r| r.lower_s3)),
                    opt(md.map(|r| r.certified_r_s2)),
                    opt(md.map(|r| r.certified_r_s3)),
                ];
                let svg = (!o.families.is_empty()).then(|| lifts_svg(s, &o.families));
                let checks = pipeline_checks(&o, tol);
                (Record { spec: s.clone(), data: to_json(&o), checks }, row, svg)
            }
            Err(e) => (
                Record {
                    spec: s.clone(),
                    data: serde_json::Value::Null,
                    checks: vec![Check::new(s, &format!("pipeline: {e}"), -1.0)],
                },
                vec![s.clone(), format!("{m}"), format!("error: {e}")],
                None,
            ),
        })
        .collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(_, r, _)| {
            let mut r = r.clone();
            r.resize(VERIFY_CSV_HEADER.len(), String::new());
            r
        })
        .collect();
    let mut artifacts = vec![("verify.csv".to_string(), csv_string(&VERIFY_CSV_HEADER, &rows)?)];
    for (i, (rec, _, svg)) in results.iter().enumerate() {
        if let Some(svg) = svg {
            artifacts.push((format!("lifts-{}.svg", file_stem(i, &rec.spec)), svg.clone()));
        }
    }
    let mut report = RunReport::assemble("verify", cfg.seed, results.into_iter().map(|(r, _, _)| r).collect(), None);
    report.artifacts = artifacts;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Sharp-constant search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// `sup { r : 𝒜(ρ) ≥ 1 for all sampled ρ ≤ r }`.
    pub r_hat: f64,
    /// First sampled radius with `𝒜 < 1`, if any.
    pub first_drop: Option<f64>,
    pub samples: Vec<(f64, f64)>,
}

pub fn search_constant(spec: &FunctionSpec, p: &SearchParams, quad: &QuadConfig, slack: f64) -> Result<SearchResult> {
    let mut radii = p.r.clone();
    radii.sort_by(f64::total_cmp);
    let mut samples = Vec::new();
    let ok = |r: f64, samples: &mut Vec<(f64, f64)>| -> Result<bool> {
        let v = growth_point(spec, r, quad)?.value;
        samples.push((r, v));
        Ok(v >= 1.0 - slack)
    };
    let mut lo = 0.0;
    for &r in &radii {
        if ok(r, &mut samples)? {
            lo = r;
            continue;
        }
        let mut hi = r;
        for _ in 0..p.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if mid <= 0.0 {
                break;
            }
            if ok(mid, &mut samples)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(SearchResult {
            r_hat: lo,
            first_drop: Some(r),
            samples,
        });
    }
    Ok(SearchResult {
        r_hat: lo,
        first_drop: None,
        samples,
    })
}

pub fn cmd_search_constant(cfg: &RunConfig) -> Result<RunReport> {
    if cfg.corpus.is_empty() {
        return Err(Error::Config("search-constant needs a nonempty corpus".into()));
    }
    let quad = cfg.tolerances.quad()?;
    let results: Vec<(Record, Option<f64>)> = cfg
        .corpus
        .par_iter()
        .map(|s| match parse_spec(s).and_then(|f| search_constant(&f, &cfg.search, &quad, cfg.tolerances.growth)) {
            Ok(r) => {
                let r_hat = r.r_hat;
                (Record { spec: s.clone(), data: to_json(&r), checks: Vec::new() }, Some(r_hat))
            }
            Err(e) => (
                Record {
                    spec: s.clone(),
                    data: serde_json::Value::Null,
                    checks: vec![Check::new(s, &format!("search: {e}"), -1.0)],
                },
                None,
            ),
        })
        .collect();
    let lower_expression = certified_radius_symbolic(zeta_small_floor())?;
    let lower = (-24.0 * PI * PI).exp();
    let bracket = results
        .iter()
        .filter_map(|(rec, r)| r.map(|r| (r, rec.spec.clone())))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(upper, upper_spec)| Bracket {
            lower,
            lower_expression,
            upper,
            upper_spec,
        });
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(rec, r)| vec![rec.spec.clone(), r.map(|x| format!("{x:.9}")).unwrap_or_default()])
        .collect();
    let mut report = RunReport::assemble("search-constant", cfg.seed, results.into_iter().map(|(r, _)| r).collect(), bracket);
    report.artifacts.push(("search-constant.csv".into(), csv_string(&["spec", "r_hat"], &rows)?));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Counterexample
// ---------------------------------------------------------------------------

/// Exact decimal value of the shortest representation of `x`.
pub fn decimal_to_rational(x: f64) -> Result<Ratio<BigInt>> {
    let text = format!("{x:e}");
    let (mantissa, exp) = text
        .split_once('e')
        .ok_or_else(|| Error::BadParameter(format!("cannot parse {x}")))?;
    let exp: i32 = exp.parse().map_err(|_| Error::BadParameter(format!("cannot parse {x}")))?;
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits: BigInt = format!("{int}{frac}")
        .parse()
        .map_err(|_| Error::BadParameter(format!("cannot parse {x}")))?;
    let shift = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    Ok(if shift >= 0 {
        Ratio::from_integer(digits * num::pow(ten, shift as usize))
    } else {
        Ratio::new(digits, num::pow(ten, (-shift) as usize))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub eps: f64,
    /// `f(-ε/3)` in exact rational arithmetic, as `"p/q"`.
    pub exact_value: String,
    pub exact_is_minus_one: bool,
    pub float_residual: f64,
    pub area: AreaEstimate,
}

pub fn counterexample_row(eps: f64, quad: &QuadConfig) -> Result<CounterexampleRow> {
    let spec = parse_spec(&format!("mobius(eps={eps})"))?;
    let Node::Mobius(mob) = spec.root() else {
        return Err(Error::BadParameter("mobius spec did not parse to a Mobius node".into()));
    };
    let e = decimal_to_rational(mob.counterexample_eps().ok_or_else(|| Error::BadParameter("not the counterexample form".into()))?)?;
    let z = -e.clone() / BigInt::from(3);
    let den = e + z.clone() * BigInt::from(2);
    if den.is_zero() {
        return Err(Error::PoleAtPoint { z: Complex64::new(-eps / 3.0, 0.0) });
    }
    let exact = z / den;
    let minus_one = Ratio::from_integer(BigInt::from(-1));
    let float_residual = (spec.eval(Complex64::new(-eps / 3.0, 0.0))? + 1.0).norm();
    Ok(CounterexampleRow {
        eps,
        exact_value: exact.to_string(),
        exact_is_minus_one: exact == minus_one,
        float_residual,
        area: sublevel_area(&spec, 1.0, quad)?,
    })
}

pub fn cmd_counterexample(cfg: &RunConfig) -> Result<RunReport> {
    if cfg.counterexample.eps.is_empty() {
        return Err(Error::Config("counterexample needs a nonempty eps list".into()));
    }
    let quad = cfg.tolerances.counterexample_quad()?;
    let results: Vec<Record> = cfg
        .counterexample
        .eps
        .iter()
        .map(|&eps| {
            let tag = format!("mobius(eps={eps})");
            match counterexample_row(eps, &quad) {
                Ok(row) => {
                    let checks = vec![
                        Check::new(&tag, "exact f(-eps/3) = -1", if row.exact_is_minus_one { 0.0 } else { -1.0 }),
                        Check::new(&tag, "|f(-eps/3) + 1| <= 1e-12", 1e-12 - row.float_residual),
                        Check::new(&tag, "A(1) + error < pi", PI - row.area.value - row.area.error_bound),
                    ];
                    Record { spec: tag, data: to_json(&row), checks }
                }
                Err(e) => Record {
                    checks: vec![Check::new(&tag, &format!("counterexample: {e}"), -1.0)],
                    spec: tag,
                    data: serde_json::Value::Null,
                },
            }
        })
        .collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let area = r.data.get("area").and_then(|a| a.get("value")).map(|v| v.to_string()).unwrap_or_default();
            let exact = r.data.get("exact_value").and_then(|v| v.as_str()).unwrap_or_default().to_string();
            vec![r.spec.clone(), exact, area]
        })
        .collect();
    let mut report = RunReport::assemble("counterexample", cfg.seed, results, None);
    report.artifacts.push(("counterexample.csv".into(), csv_string(&["spec", "f_at_minus_eps_over_3", "area_1"], &rows)?));
    Ok(report)
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `𝒜(r)` against `r` with the level 1 dashed and drops below it in red.
pub fn growth_svg(spec: &str, points: &[GrowthPoint], slack: f64) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let y_max = points.iter().map(|p| p.value).fold(1.0f64, f64::max) * 1.1;
    let sx = |r: f64| pad + r * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - v / y_max * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="12">{}</text>"#, escape(spec));
    let _ = writeln!(
        s,
        r#"<path d="M{:.1},{:.1} L{:.1},{:.1} L{:.1},{:.1}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(y_max),
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        sx(0.0),
        sy(1.0),
        sx(1.0),
        sy(1.0)
    );
    let pts: Vec<String> = points.iter().map(|p| format!("{:.1},{:.1}", sx(p.r), sy(p.value))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, pts.join(" "));
    for p in points {
        let color = if p.value < 1.0 - slack { "red" } else { "steelblue" };
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(p.r), sy(p.value));
    }
    s.push_str("</svg>\n");
    s
}

/// The unit circle with every lifted path of every family.
pub fn lifts_svg(spec: &str, families: &[LiftFamily]) -> String {
    let size = 400.0;
    let c = size / 2.0;
    let scale = c * 0.9;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, r#"<text x="8" y="16" font-size="12">{}</text>"#, escape(spec));
    let _ = writeln!(s, r#"<circle cx="{c}" cy="{c}" r="{scale}" fill="none" stroke="black"/>"#);
    for fam in families {
        for p in &fam.paths {
            let pts: Vec<String> = p
                .samples
                .iter()
                .map(|(_, z)| format!("{:.2},{:.2}", c + scale * z.re, c - scale * z.im))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="0.6"/>"#, pts.join(" "));
        }
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_errors() {
        let cfg = RunConfig::from_toml("corpus = [\"mono(2)\"]\n[tolerances]\ngrid = 256\n").unwrap();
        assert_eq!(cfg.tolerances.grid, 256);
        assert_eq!(cfg.counterexample.eps, vec![0.1, 0.01]);
        assert!(matches!(RunConfig::from_toml("corpus = [\"mono(\"]"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[growth]\nr = [1.5]"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[tolerances]\nquadrature = \"depth=2,min_depth=4\"").is_err());
    }

    #[test]
    fn decimal_conversion_is_exact() {
        assert_eq!(decimal_to_rational(0.1).unwrap(), Ratio::new(BigInt::from(1), BigInt::from(10)));
        assert_eq!(decimal_to_rational(0.01).unwrap(), Ratio::new(BigInt::from(1), BigInt::from(100)));
        assert_eq!(decimal_to_rational(2.5e3).unwrap(), Ratio::from_integer(BigInt::from(2500)));
    }

    #[test]
    fn empty_corpus_area_report() {
        let r = cmd_area(&RunConfig::default()).unwrap();
        assert!(r.records.is_empty() && r.passed());
        assert!(r.artifacts[0].1.starts_with("spec,M,method"));
    }

    #[test]
    fn search_on_monomials_reaches_one() {
        let quad = QuadConfig::from_kv("depth=9,tol=1e-5").unwrap();
        let p = SearchParams {
            r: vec![0.25, 0.5, 1.0],
            bisection_steps: 4,
        };
        let f = parse_spec("mono(2)").unwrap();
        let r = search_constant(&f, &p, &quad, 1e-6).unwrap();
        assert_eq!(r.r_hat, 1.0);
        assert!(r.first_drop.is_none());
    }

    #[test]
    fn verify_skips_when_hypothesis_fails() {
        let o = run_pipeline("mono(2)", 0.25, &Tolerances::default()).unwrap();
        assert!(matches!(o.status, PipelineStatus::Skipped(_)));
        assert!(pipeline_checks(&o, &Tolerances::default()).is_empty());
    }

    #[test]
    fn counterexample_exact_value() {
        let quad = QuadConfig::from_kv("depth=16,budget=1e6,tol=1e-6").unwrap();
        let row = counterexample_row(0.1, &quad).unwrap();
        assert!(row.exact_is_minus_one);
        assert_eq!(row.exact_value, "-1");
        assert!(row.float_residual <= 1e-12);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let quad = QuadConfig::from_kv("depth=8,tol=1e-4").unwrap();
        let f = parse_spec("mono(1)").unwrap();
        let pts = growth_curve(&f, &[0.3, 0.6], &quad).unwrap();
        let svg = growth_svg("a<b", &pts, 1e-6);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(monotonicity_slack(&pts) > 0.0);
    }
}
