//! The eleven acceptance criteria. Runs as a plain binary so every verdict
//! line shows up in `cargo test` output; exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use meancover::coverage::{growth_function, koebe_univalent_report, QuadConfig};
use meancover::funcmodel::{max_modulus_on_circle, parse_spec};
use meancover::harness::{agreement_allowance, area_row, counterexample_row, run_pipeline, PipelineOutcome, PipelineStatus, RunConfig};
use meancover::lifting::{lift_family, monotone_intervals, reference_curve, LiftConfig};
use meancover::modulus::{
    annulus_upper, beurling_criterion_check, certified_exponent, certified_radius, discrete_modulus, rectangle_suite,
    zeta_small_floor, GridDomain, PiMonomial, Sides,
};
use meancover::coverage::{inner_radius, GridConfig};
use meancover::Error;
use num_complex::Complex64;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml")).unwrap()
}

fn within(start: Instant, budget: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < budget, format!("{:.1}s of {}s", t.as_secs_f64(), budget.as_secs()))
}

fn degree_law() -> Verdict {
    let start = Instant::now();
    let quad = QuadConfig::default();
    let mut worst: f64 = 0.0;
    for n in 1..=6u32 {
        let f = parse_spec(&format!("mono({n})")).unwrap();
        for r in [0.2, 0.5, 0.8] {
            worst = worst.max((growth_function(&f, r, &quad).unwrap() - n as f64).abs());
        }
    }
    let (fast, time) = within(start, Duration::from_secs(30));
    verdict(worst <= 1e-4 && fast, format!("max |A(r) - n| = {worst:.2e}; {time}"))
}

fn oracle_triangle(cfg: &RunConfig) -> Verdict {
    let start = Instant::now();
    let mut worst_ratio: f64 = 0.0;
    let mut failures = Vec::new();
    for s in &cfg.corpus {
        let f = parse_spec(s).unwrap();
        let m = max_modulus_on_circle(&f, 0.5, 1e-12).unwrap();
        let row = area_row(&f, m, &cfg.tolerances, cfg.seed).unwrap();
        let est = &row.estimates;
        if est.len() != 3 {
            failures.push(format!("{s}: only {} oracles", est.len()));
        }
        for i in 0..est.len() {
            for j in i + 1..est.len() {
                let d = (est[i].value - est[j].value).abs();
                let allowed = agreement_allowance(&est[i], &est[j], 0.01);
                worst_ratio = worst_ratio.max(d / allowed);
                if d > allowed {
                    failures.push(format!("{s}: {} vs {}", est[i].method, est[j].method));
                }
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(300));
    verdict(
        failures.is_empty() && fast,
        format!("{} members, worst |diff|/allowed = {worst_ratio:.3}; {time} {failures:?}", cfg.corpus.len()),
    )
}

fn counterexample(cfg: &RunConfig) -> Verdict {
    let quad = cfg.tolerances.counterexample_quad().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.01] {
        let r = counterexample_row(eps, &quad).unwrap();
        let area_ok = r.area.value + r.area.error_bound < PI;
        ok &= r.exact_is_minus_one && r.float_residual <= 1e-12 && area_ok;
        parts.push(format!(
            "eps={eps}: f(-eps/3) = {}, residual {:.1e}, A(1) = {:.9} +- {:.1e}",
            r.exact_value, r.float_residual, r.area.value, r.area.error_bound
        ));
    }
    verdict(ok, parts.join("; "))
}

fn lift_oracle() -> Verdict {
    let start = Instant::now();
    let (zeta, k) = (0.125, 3.0);
    let f = parse_spec("omit(zeta=0.125,k=3)").unwrap();
    let inner = inner_radius(&f, 1.0, &GridConfig::default()).unwrap();
    let curve = reference_curve(&f, &inner, zeta, 257).unwrap();
    let interval = monotone_intervals(&curve, (0.25, 0.75)).unwrap().intervals[0];
    // Shrink the endpoints inward so all 64 radii lie in the open interval.
    let mut iv = interval;
    iv.i = (0.25 + 1e-9, 0.75 - 1e-9);
    let fam = lift_family(&f, &curve, &iv, 64, &LiftConfig::default()).unwrap();
    let (mut worst_point, mut worst_t): (f64, f64) = (0.0, 0.0);
    for p in &fam.paths {
        let l = (p.u / zeta).ln();
        // α = (l + i(t + π + 2πm)) / k; m fixed by the first sample.
        let (t0, z0) = p.samples[0];
        let m = ((k * z0.im - t0 - PI) / (2.0 * PI)).round();
        for &(t, z) in &p.samples {
            let exact = Complex64::new(l, t + PI + 2.0 * PI * m) / k;
            worst_point = worst_point.max((z - exact).norm());
        }
        let t_exact = -PI - 2.0 * PI * m + (k * k - l * l).sqrt();
        worst_t = worst_t.max((p.t_end - t_exact).abs());
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    verdict(
        fam.paths.len() == 64 && worst_point <= 1e-6 && worst_t <= 1e-4 && fast,
        format!("{} radii, pointwise {worst_point:.2e}, T_u {worst_t:.2e}; {time}", fam.paths.len()),
    )
}

fn coarea(outcomes: &[PipelineOutcome]) -> Verdict {
    let mut ok = true;
    let mut worst_identity: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = Vec::new();
    for o in outcomes {
        if o.zeta.is_none() {
            continue;
        }
        match (&o.status, &o.coarea) {
            (PipelineStatus::Completed, Some(c)) => {
                checked += 1;
                let d = (c.lhs - c.rhs_direct).abs();
                worst_identity = worst_identity.max(d);
                ok &= d <= 1e-3 && c.lhs <= c.a1.value + c.a1.error_bound + 1e-3;
            }
            (PipelineStatus::Skipped(reason), _) => skipped.push(format!("{} ({reason})", o.spec)),
            _ => {
                ok = false;
                skipped.push(format!("{} FAILED", o.spec));
            }
        }
    }
    verdict(
        ok && checked > 0,
        format!("{checked} instances, max |lhs - rhs| = {worst_identity:.2e}; not lifted: {skipped:?}"),
    )
}

fn sandwich(outcomes: &[PipelineOutcome]) -> Verdict {
    let mut ok = true;
    let mut min_slack = f64::INFINITY;
    let mut n = 0;
    for o in outcomes.iter().filter(|o| o.status == PipelineStatus::Completed) {
        let r = o.modulus.as_ref().unwrap();
        let slack = r.upper - r.lower_s3 + 1e-3;
        min_slack = min_slack.min(slack);
        ok &= slack >= 0.0 && r.sandwich_holds;
        n += 1;
    }
    verdict(ok && n > 0, format!("{n} completed instances, min slack {min_slack:.3e}"))
}

fn constants() -> Verdict {
    let exponent = certified_exponent(zeta_small_floor()).unwrap();
    let symbolic = exponent == PiMonomial::new(-24, 1, 2);
    let r = certified_radius(1.0 / (12.0 * PI)).unwrap();
    let exact = (-24.0 * PI * PI).exp();
    // Relative error of exp(x) is |x| times the relative error of x.
    let rel = ((r - exact) / exact).abs();
    let budget = 4.0 * 24.0 * PI * PI * f64::EPSILON;
    verdict(
        symbolic && rel <= budget,
        format!("-2pi/(1/(12pi)) = {exponent}; exp = {r:.15e}, relative diff {rel:.1e} (budget {budget:.1e})"),
    )
}

fn discrete_oracle() -> Verdict {
    let v = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 200, Sides::Vertical).unwrap()).unwrap();
    let h = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 200, Sides::Horizontal).unwrap()).unwrap();
    let mut ok = (v - 0.5).abs() <= 1e-2 && (h - 2.0).abs() <= 1e-2 && (v * h - 1.0).abs() <= 2e-2;
    let mut detail = format!("2x1: {v:.6} (1/2), {h:.6} (2), product {:.6}", v * h);
    for r in [0.2, 0.5] {
        let d = discrete_modulus(&GridDomain::annulus(r, 400).unwrap()).unwrap();
        let exact = annulus_upper(r).unwrap();
        let rel = ((d - exact) / exact).abs();
        ok &= rel <= 2e-2;
        detail += &format!("; annulus r={r}: {d:.4} vs {exact:.4} (rel {rel:.1e})");
    }
    verdict(ok, detail)
}

fn beurling(outcomes: &[PipelineOutcome]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut families = 0;
    for o in outcomes.iter().filter(|o| o.status == PipelineStatus::Completed) {
        worst = worst.max(o.condition1_max_deviation.unwrap());
        families += o.families.len();
    }
    let suite = rectangle_suite(2.0, 1.0, 50).unwrap();
    let rect = beurling_criterion_check(&suite.metric, &suite.family, &suite.tests, 0.01);
    let discrete = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 200, Sides::Vertical).unwrap()).unwrap();
    let mass = suite.metric.mass();
    let doubled = beurling_criterion_check(&suite.metric.scaled(2.0).unwrap(), &suite.family, &suite.tests, 0.01);
    verdict(
        families > 0 && worst <= 1e-3 && rect.holds() && (mass - discrete).abs() <= 1e-2 && !doubled.holds(),
        format!(
            "{families} lift families, max |int rho0 - 1| = {worst:.2e}; rectangle mass {mass:.6} vs discrete {discrete:.6}; 2*rho0 rejected: {}",
            !doubled.holds()
        ),
    )
}

fn maximum_principle(cfg: &RunConfig) -> Verdict {
    let radii: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
    let mut bad = Vec::new();
    for s in &cfg.corpus {
        let f = parse_spec(s).unwrap();
        if f.is_constant() {
            continue;
        }
        let m: Vec<f64> = radii.iter().map(|&r| max_modulus_on_circle(&f, r, 1e-12).unwrap()).collect();
        if !m.windows(2).all(|w| w[1] > w[0]) {
            bad.push(s.clone());
        }
    }
    verdict(bad.is_empty(), format!("{} members on 99 radii; not increasing: {bad:?}", cfg.corpus.len()))
}

fn koebe(cfg: &RunConfig) -> Verdict {
    let quad = cfg.tolerances.quad().unwrap();
    let mut applicable = 0;
    let mut univalent = 0;
    let mut ok = true;
    for s in &cfg.corpus {
        let f = parse_spec(s).unwrap();
        for m in [0.5, 1.0] {
            match koebe_univalent_report(&f, m, &quad) {
                Ok(k) => {
                    univalent += 1;
                    if k.hypothesis {
                        applicable += 1;
                        ok &= k.max_modulus_sixteenth <= m;
                    }
                }
                Err(Error::NotUnivalent { .. }) => {}
                Err(e) => panic!("{s}: {e}"),
            }
        }
    }
    verdict(
        ok && applicable > 0,
        format!("{univalent} univalent (member, M) pairs, {applicable} meet A(M) < pi M^2"),
    )
}

fn main() {
    let cfg = config();
    let start = Instant::now();
    let outcomes: Vec<PipelineOutcome> = cfg
        .corpus
        .iter()
        .map(|s| run_pipeline(s, 1.0, &cfg.tolerances).unwrap())
        .collect();
    println!("pipeline on {} corpus members at M = 1: {:.1}s", outcomes.len(), start.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("degree law", Box::new(degree_law)),
        ("oracle triangle", Box::new(|| oracle_triangle(&cfg))),
        ("counterexample", Box::new(|| counterexample(&cfg))),
        ("lift oracle", Box::new(lift_oracle)),
        ("coarea identity and inequality", Box::new(|| coarea(&outcomes))),
        ("modulus sandwich", Box::new(|| sandwich(&outcomes))),
        ("constants", Box::new(constants)),
        ("discrete oracle", Box::new(discrete_oracle)),
        ("beurling criterion", Box::new(|| beurling(&outcomes))),
        ("maximum principle", Box::new(|| maximum_principle(&cfg))),
        ("koebe univalent check", Box::new(|| koebe(&cfg))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<32} {}  {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
