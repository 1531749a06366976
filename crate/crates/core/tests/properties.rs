use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use meancover::coverage::{preimage_count, sublevel_area, QuadConfig};
use meancover::funcmodel::{max_modulus_on_circle, parse_spec, serialize_spec, FunctionSpec};
use meancover::harness::{run_pipeline, PipelineStatus, RunConfig, Tolerances};
use meancover::lifting::{local_multiplicity, sheet_openness_check};
use meancover::modulus::{
    certified_radius, chain_lower_s2, discrete_modulus, line_integral, rectangle_suite, AdmissibleMetric, GridDomain,
    GridField, Sides,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn corpus() -> &'static [String] {
    static CORPUS: OnceLock<Vec<String>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
        RunConfig::load(&path).unwrap().corpus
    })
}

fn specs() -> &'static [FunctionSpec] {
    static SPECS: OnceLock<Vec<FunctionSpec>> = OnceLock::new();
    SPECS.get_or_init(|| corpus().iter().map(|s| parse_spec(s).unwrap()).collect())
}

fn point_in_disk(max_r: f64) -> impl Strategy<Value = Complex64> {
    (0.0..max_r, 0.0..(2.0 * PI)).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

fn light_quad() -> QuadConfig {
    QuadConfig::from_kv("depth=10,min_depth=4,budget=4e5,tol=1e-5").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivative_matches_central_difference(idx in 0usize..12, z in point_in_disk(0.9)) {
        let f = &specs()[idx];
        let h = 1e-5;
        let fd = (f.eval(z + h).unwrap() - f.eval(z - h).unwrap()) / (2.0 * h);
        prop_assert!((f.derivative(z).unwrap() - fd).norm() <= 1e-6);
    }

    #[test]
    fn dilation_is_precomposition(idx in 0usize..12, t in 0.05f64..1.0, z in point_in_disk(0.999)) {
        let f = &specs()[idx];
        let d = f.dilate(t).unwrap();
        prop_assert!((d.eval(z).unwrap() - f.eval(z * t).unwrap()).norm() <= 1e-12);
    }

    #[test]
    fn certified_radius_is_increasing(a in 1e-3f64..50.0, b in 1e-3f64..50.0) {
        prop_assume!(a < b);
        prop_assert!(certified_radius(a).unwrap() < certified_radius(b).unwrap());
    }

    #[test]
    fn chain_bound_decreases_in_coarea(x in 0.01f64..10.0, k in 1.01f64..4.0) {
        prop_assert!(chain_lower_s2(x * k, 0.25, 0.75).unwrap() < chain_lower_s2(x, 0.25, 0.75).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn area_is_monotone_in_level(idx in 0usize..12, m1 in 0.05f64..1.0, dm in 0.01f64..0.5) {
        let f = &specs()[idx];
        let q = light_quad();
        let a = sublevel_area(f, m1, &q).unwrap();
        let b = sublevel_area(f, m1 + dm, &q).unwrap();
        prop_assert!(a.value <= b.value + a.error_bound + b.error_bound);
    }

    #[test]
    fn preimage_count_stable_in_radius(n in 1u32..6, w in point_in_disk(0.5), r_extra in 0.0f64..1.0) {
        // Preimages of w under z^n sit on |z| = |w|^(1/n) < r'.
        let f = parse_spec(&format!("mono({n})")).unwrap();
        let r_prime = w.norm().powf(1.0 / n as f64) + 0.05;
        prop_assume!(r_prime < 1.0);
        let r = r_prime + r_extra * (1.0 - r_prime);
        let c = preimage_count(&f, w, r).unwrap();
        prop_assert_eq!(c.count, n as i64);
        prop_assert_eq!(preimage_count(&f, w, 1.0).unwrap().count, n as i64);
    }

    #[test]
    fn pointwise_max_of_admissible_metrics(a in 0.0f64..0.9, phase in 0.0f64..(2.0 * PI), freq in 1u32..4) {
        // Cell averages of a full-period wave sum to zero along each row.
        let suite = rectangle_suite(2.0, 1.0, 40).unwrap();
        let step = suite.metric.field.step;
        let f = suite.metric.field.clone();
        let wave = GridField::from_fn("wave", f.origin, step, f.nx, f.ny, |z| {
            let x = 2.0 * PI * freq as f64 * z.re / 2.0 + phase;
            let hw = PI * freq as f64 * step / 2.0;
            0.5 * (1.0 + a * (x.sin() * hw.sin() / hw))
        });
        let rho1 = AdmissibleMetric::new(wave).unwrap();
        let mx = AdmissibleMetric::new(suite.metric.field.max_with(&rho1.field).unwrap()).unwrap();
        for p in &suite.family {
            prop_assert!((line_integral(&rho1, p, step / 4.0) - 1.0).abs() < 1e-9);
            prop_assert!(line_integral(&mx, p, step / 4.0) >= 1.0 - 1e-9);
        }
    }
}

#[test]
fn round_trip_on_corpus() {
    for (s, f) in corpus().iter().zip(specs()) {
        let text = serialize_spec(f);
        assert_eq!(&parse_spec(&text).unwrap(), f, "{s} -> {text}");
    }
}

#[test]
fn max_modulus_strictly_increasing() {
    let radii: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    for (s, f) in corpus().iter().zip(specs()) {
        assert!(!f.is_constant());
        let m: Vec<f64> = radii.iter().map(|&r| max_modulus_on_circle(f, r, 1e-12).unwrap()).collect();
        assert!(m.windows(2).all(|w| w[1] > w[0]), "{s}: {m:?}");
    }
}

#[test]
fn small_area_forces_containment_at_one_hundredth() {
    let q = light_quad();
    for (s, f) in corpus().iter().zip(specs()) {
        for m in [0.25, 0.5, 1.0, 2.0] {
            let a = sublevel_area(f, m, &q).unwrap();
            if a.value + a.error_bound < PI * m * m {
                assert!(max_modulus_on_circle(f, 0.01, 1e-12).unwrap() < m, "{s} at M = {m}");
            }
        }
    }
}

#[test]
fn discrete_modulus_scaling_and_duality() {
    let small = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 40, Sides::Vertical).unwrap()).unwrap();
    let large = discrete_modulus(&GridDomain::rectangle(4.0, 2.0, 20, Sides::Vertical).unwrap()).unwrap();
    assert!((small - large).abs() < 1e-2);
    let dual = discrete_modulus(&GridDomain::rectangle(2.0, 1.0, 40, Sides::Horizontal).unwrap()).unwrap();
    assert!((small * dual - 1.0).abs() < 2e-2);
}

#[test]
fn lift_family_invariants() {
    let tol = Tolerances::default();
    for spec in ["omit(zeta=0.125,k=3)", "omit(zeta=0.3,k=3)"] {
        let f = parse_spec(spec).unwrap();
        let o = run_pipeline(spec, 1.0, &tol).unwrap();
        assert_eq!(o.status, PipelineStatus::Completed, "{spec}");
        for fam in &o.families {
            for p in &fam.paths {
                assert!(p.max_fidelity(&f) <= 1e-8, "{spec} u = {}", p.u);
                assert_eq!(local_multiplicity(&f, p.samples[0].1, 1e-3).unwrap(), 1);
            }
            for w in fam.paths.windows(2) {
                assert!((w[1].theta - w[0].theta).abs() < 0.1, "{spec}: theta jumps");
                assert!((w[1].t_end - w[0].t_end).abs() < 0.1, "{spec}: T jumps");
            }
            assert!(sheet_openness_check(&f, fam, 1e-3).unwrap(), "{spec}");
        }
        let c = o.coarea.unwrap();
        assert!(c.inequality_holds, "{spec}");
    }
}
