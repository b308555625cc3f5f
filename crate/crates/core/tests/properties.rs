use phs_core::constraints::{
    dirac_bergmann, poisson_bracket, vanishes_on_surface, AnalysisOptions, ConstraintClass, DiracBergmannInput,
    MultiplierStatus,
};
use phs_core::expr::{parse_expr, parse_raw, Binding, Expr, VarId};
use phs_core::geometry::{coenergy, sample_on_shell, MorseFamily, DEFAULT_TOL_CRIT};
use phs_core::sampling::SampleBox;
use proptest::prelude::*;

fn phase_vars() -> Vec<VarId> {
    vec![
        VarId::state("q1", 0),
        VarId::state("q2", 1),
        VarId::state("p1", 2),
        VarId::state("p2", 3),
    ]
}

/// Random expression source text over the phase variables.
fn expr_text(analytic: bool) -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-4i64..5).prop_map(|n| n.to_string()),
        (1i64..5, 2i64..5).prop_map(|(a, b)| format!("({a}/{b})")),
        prop::sample::select(vec!["q1", "q2", "p1", "p2"]).prop_map(str::to_string),
    ];
    leaf.prop_recursive(4, 24, 3, move |inner| {
        let mut options = vec![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| format!("({a} + {b})"))
                .boxed(),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| format!("({a} - {b})"))
                .boxed(),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| format!("{a}*{b}"))
                .boxed(),
            (inner.clone(), 0u32..4).prop_map(|(a, n)| format!("({a})^{n}")).boxed(),
            inner.clone().prop_map(|a| format!("-({a})")).boxed(),
        ];
        if analytic {
            options.push(inner.clone().prop_map(|a| format!("sin({a})")).boxed());
            options.push(inner.clone().prop_map(|a| format!("cos({a})")).boxed());
            options.push(inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")).boxed());
            options.push(inner.clone().prop_map(|a| format!("({a})/(2 + cos({a}))")).boxed());
        }
        prop::strategy::Union::new(options)
    })
}

fn point() -> impl Strategy<Value = Binding> {
    prop::collection::vec(-1.0f64..1.0, 4).prop_map(|xs| phase_vars().iter().cloned().zip(xs).collect())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_is_a_fixed_point(src in expr_text(true)) {
        let vars = phase_vars();
        let e = parse_expr(&src, &vars).unwrap();
        prop_assume!(e.is_exact());
        let printed = e.to_string();
        let again = parse_expr(&printed, &vars).unwrap();
        prop_assert_eq!(again.to_string(), printed);
        prop_assert_eq!(again, e);
    }

    #[test]
    fn simplification_is_sound(src in expr_text(true), b in point()) {
        let vars = phase_vars();
        let raw = parse_raw(&src, &vars).unwrap();
        let simple = raw.simplify();
        if let (Ok(x), Ok(y)) = (raw.evaluate(&b), simple.evaluate(&b)) {
            prop_assert!(close(x, y, 1e-12), "{} vs {} for {}", x, y, src);
        }
    }

    #[test]
    fn derivative_matches_central_difference(src in expr_text(true), b in point(), k in 0usize..4) {
        let vars = phase_vars();
        let e = parse_expr(&src, &vars).unwrap();
        let v = &vars[k];
        let h = 1e-6;
        let x = b.get(v).unwrap();
        let (Ok(fp), Ok(fm)) = (e.evaluate(&b.clone().with(v, x + h)), e.evaluate(&b.clone().with(v, x - h))) else {
            return Ok(());
        };
        let fd = (fp - fm) / (2.0 * h);
        let d = e.differentiate(v).evaluate(&b).unwrap();
        let value = e.evaluate(&b).unwrap();
        prop_assert!((d - fd).abs() / (1.0 + value.abs() + d.abs()) < 1e-6, "{} d/d{}: {} vs {}", src, v, d, fd);
    }

    #[test]
    fn differentiation_is_linear(f in expr_text(true), g in expr_text(true), a in -3i64..4, c in -3i64..4, b in point()) {
        let vars = phase_vars();
        let (f, g) = (parse_expr(&f, &vars).unwrap(), parse_expr(&g, &vars).unwrap());
        let v = &vars[0];
        let lhs = (Expr::constant(a) * &f + Expr::constant(c) * &g).differentiate(v);
        let rhs = Expr::constant(a) * f.differentiate(v) + Expr::constant(c) * g.differentiate(v);
        if let (Ok(x), Ok(y)) = (lhs.evaluate(&b), rhs.evaluate(&b)) {
            prop_assert!(close(x, y, 1e-12));
        }
    }

    #[test]
    fn derivative_has_no_new_variables(src in expr_text(true), k in 0usize..4) {
        let vars = phase_vars();
        let e = parse_expr(&src, &vars).unwrap();
        let d = e.differentiate(&vars[k]);
        prop_assert!(d.free_vars().is_subset(&e.free_vars()));
    }

    #[test]
    fn bracket_antisymmetry_and_leibniz(f in expr_text(false), g in expr_text(false), h in expr_text(false), b in point()) {
        let vars = phase_vars();
        let (q, p) = (&vars[..2], &vars[2..]);
        let f = parse_expr(&f, &vars).unwrap();
        let g = parse_expr(&g, &vars).unwrap();
        let h = parse_expr(&h, &vars).unwrap();
        let fg = poisson_bracket(&f, &g, q, p).evaluate(&b).unwrap();
        let gf = poisson_bracket(&g, &f, q, p).evaluate(&b).unwrap();
        prop_assert!(close(fg, -gf, 1e-12));
        let lhs = poisson_bracket(&(&f * &g), &h, q, p).evaluate(&b).unwrap();
        let rhs = (&f * poisson_bracket(&g, &h, q, p) + poisson_bracket(&f, &h, q, p) * &g).evaluate(&b).unwrap();
        prop_assert!(close(lhs, rhs, 1e-10));
    }

    #[test]
    fn bracket_jacobi_identity(f in expr_text(false), g in expr_text(false), h in expr_text(false), b in point()) {
        let vars = phase_vars();
        let (q, p) = (&vars[..2], &vars[2..]);
        let br = |a: &Expr, c: &Expr| poisson_bracket(a, c, q, p);
        let f = parse_expr(&f, &vars).unwrap();
        let g = parse_expr(&g, &vars).unwrap();
        let h = parse_expr(&h, &vars).unwrap();
        let terms = [br(&f, &br(&g, &h)), br(&g, &br(&h, &f)), br(&h, &br(&f, &g))];
        let values: Vec<f64> = terms.iter().map(|t| t.evaluate(&b).unwrap()).collect();
        let scale = 1.0 + values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(values.iter().sum::<f64>().abs() <= 1e-10 * scale, "{:?}", values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coenergy_is_the_gradient(src in expr_text(true), b in point()) {
        let vars = phase_vars();
        let k = parse_expr(&src, &vars).unwrap();
        let family = MorseFamily::new(vars.clone(), vec![], vec![], k.clone()).unwrap();
        let Ok(sample) = coenergy(&family, &b) else { return Ok(()) };
        for (i, v) in vars.iter().enumerate() {
            let x = b.get(v).unwrap();
            let h = 1e-6;
            let (Ok(fp), Ok(fm)) = (k.evaluate(&b.clone().with(v, x + h)), k.evaluate(&b.clone().with(v, x - h))) else {
                return Ok(());
            };
            let fd = (fp - fm) / (2.0 * h);
            prop_assert!((sample.e[i] - fd).abs() <= 1e-6 * (1.0 + sample.e[i].abs()));
        }
    }

    #[test]
    fn transversal_coenergy_is_injective(xs in prop::collection::btree_set(-1000i32..1000, 2..10)) {
        let x = VarId::state("x", 0);
        let family = MorseFamily::new(vec![x.clone()], vec![], vec![], parse_expr("1/2*x^2 + x^3", std::slice::from_ref(&x)).unwrap()).unwrap();
        let samples: Vec<_> = xs
            .iter()
            .map(|v| coenergy(&family, &Binding::new().with(&x, *v as f64 / 1000.0)).unwrap())
            .collect();
        for (a, b) in samples.iter().zip(samples.iter().skip(1)) {
            prop_assert!(a.x != b.x);
            prop_assert!((a.e[0] - (a.x[0] + 3.0 * a.x[0] * a.x[0])).abs() < 1e-15);
            prop_assert!((b.e[0] - (b.x[0] + 3.0 * b.x[0] * b.x[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_input_systems_have_input_free_tilde_h(h in expr_text(true), g in expr_text(true)) {
        let vars = phase_vars();
        let u = VarId::input("u", 0);
        let h = parse_expr(&h, &vars).unwrap();
        let g = parse_expr(&g, &vars).unwrap();
        let family = MorseFamily::new(vars.clone(), vec![u.clone()], vec![], h + Expr::var(&u) * g).unwrap();
        prop_assert!(!family.tilde_h().unwrap().contains_var(&u));
    }
}

#[test]
fn fiber_family_is_multivalued() {
    let x = VarId::state("x", 0);
    let lam = VarId::multiplier("lam", 0);
    let family = MorseFamily::new(
        vec![x.clone()],
        vec![],
        vec![lam.clone()],
        parse_expr("lam*x", &[x.clone(), lam.clone()]).unwrap(),
    )
    .unwrap();
    let points = sample_on_shell(&family, &SampleBox::new(), &Binding::new(), 8, 0, DEFAULT_TOL_CRIT).unwrap();
    let samples: Vec<_> = points.iter().map(|p| coenergy(&family, p).unwrap()).collect();
    assert!(samples.iter().all(|s| s.x[0].abs() <= DEFAULT_TOL_CRIT));
    assert!(samples[0].e[0] != samples[1].e[0]);
}

fn second_class_input() -> DiracBergmannInput {
    let q = VarId::state("q", 0);
    let p = VarId::state("p", 1);
    DiracBergmannInput::new(
        parse_expr("1/2*p^2", &[q.clone(), p.clone()]).unwrap(),
        vec![Expr::var(&q)],
        vec![q],
        vec![p],
    )
}

fn gauge_input() -> (DiracBergmannInput, AnalysisOptions) {
    let vars = [
        VarId::state("q0", 0),
        VarId::state("q1", 1),
        VarId::state("p0", 2),
        VarId::state("p1", 3),
        VarId::parameter("m", 0),
    ];
    let phi = parse_expr("-p0^2 + p1^2 - m^2", &vars).unwrap();
    let opts = AnalysisOptions::default().with_fixed(Binding::new().with(&vars[4], 1.0));
    (
        DiracBergmannInput::new(Expr::zero(), vec![phi], vars[..2].to_vec(), vars[2..4].to_vec()),
        opts,
    )
}

#[test]
fn first_class_certificate() {
    for (input, opts) in [gauge_input(), (second_class_input(), AnalysisOptions::default())] {
        let sys = dirac_bergmann(&input, &opts).unwrap();
        let phis = sys.constraint_exprs();
        let points = sample_surface(&sys, &opts);
        for c in &sys.constraints {
            if c.class != ConstraintClass::First {
                continue;
            }
            for other in &phis {
                let b = poisson_bracket(&c.phi, other, &sys.q_vars, &sys.p_vars);
                assert!(vanishes_on_surface(&b, &phis, &points, 1e-8).unwrap().vanishes);
            }
            let b = poisson_bracket(&c.phi, &sys.h_total, &sys.q_vars, &sys.p_vars);
            assert!(vanishes_on_surface(&b, &phis, &points, 1e-8).unwrap().vanishes);
        }
        assert_eq!(
            sys.has_gauge_freedom(),
            sys.multipliers.iter().any(|m| m.status == MultiplierStatus::Free)
        );
    }
}

fn sample_surface(sys: &phs_core::constraints::ConstraintSystem, opts: &AnalysisOptions) -> Vec<Binding> {
    let moving: Vec<VarId> = sys.q_vars.iter().chain(&sys.p_vars).cloned().collect();
    let mut drawn: Vec<VarId> = sys
        .h_total
        .free_vars()
        .into_iter()
        .filter(|v| !moving.contains(v) && !opts.fixed.contains(v))
        .collect();
    drawn.dedup();
    phs_core::sampling::sample_zero_set(&phs_core::sampling::SampleRequest {
        equations: &sys.constraint_exprs(),
        moving: &moving,
        drawn: &drawn,
        fixed: &opts.fixed,
        sample_box: &opts.sample_box,
        count: 16,
        seed: 7,
        tol: 1e-12,
    })
    .unwrap()
    .points
}

#[test]
fn rerunning_on_the_output_adds_nothing() {
    for (input, opts) in [gauge_input(), (second_class_input(), AnalysisOptions::default())] {
        let sys = dirac_bergmann(&input, &opts).unwrap();
        let rerun = DiracBergmannInput::new(
            sys.h_total.clone(),
            sys.constraint_exprs(),
            sys.q_vars.clone(),
            sys.p_vars.clone(),
        );
        let again = dirac_bergmann(&rerun, &opts).unwrap();
        assert_eq!(again.constraints.len(), sys.constraints.len());
        if sys.has_gauge_freedom() {
            assert!(again.multipliers.iter().all(|m| m.status == MultiplierStatus::Free));
        }
    }
}
