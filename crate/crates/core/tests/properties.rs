use legstar::dsl::{parse_expr, BinOp, Expr, ExprKind, Func, Span};
use legstar::reference::{commuting_solution, volterra_compose};
use legstar::solver::{
    assemble_a, neumann_resolvent, solve_direct, solve_ode, BlockSystem, Coefficient, ODEProblem,
    SolveOptions,
};
use legstar::star::{PolyBivariate, StarElement};
use legstar::verify::random_poly;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn node(kind: ExprKind) -> Expr {
    Expr {
        kind,
        span: Span::default(),
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..1000, 0u32..4)
            .prop_map(|(n, d)| node(ExprKind::Num(n as f64 / 10f64.powi(d as i32)))),
        Just(node(ExprKind::Var)),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div)
        ];
        let func = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Log),
            Just(Func::Sqrt)
        ];
        prop_oneof![
            inner.clone().prop_map(|e| node(ExprKind::Neg(Box::new(e)))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| node(ExprKind::Binary(
                o,
                Box::new(a),
                Box::new(b)
            ))),
            (inner.clone(), 0u32..5).prop_map(|(e, n)| node(ExprKind::Pow(Box::new(e), n))),
            (func, inner).prop_map(|(f, e)| node(ExprKind::Call(f, Box::new(e)))),
        ]
    })
}

fn poly_from_seed(seed: u64) -> PolyBivariate {
    random_poly(&mut StdRng::seed_from_u64(seed), 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printed_expressions_reparse(e in arb_expr()) {
        let printed = e.to_string();
        let again = parse_expr(&printed).unwrap();
        prop_assert_eq!(&again, &e, "{}", printed);
        prop_assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let src = String::from_utf8_lossy(&bytes);
        if let Err(err) = parse_expr(&src) {
            prop_assert!(err.offset <= src.len());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn star_matches_volterra_quadrature(
        sa in any::<u64>(),
        sb in any::<u64>(),
        s in 0.0f64..1.0,
        frac in 0.0f64..=1.0,
    ) {
        let (fa, fb) = (poly_from_seed(sa), poly_from_seed(sb));
        let t = s + frac * (1.0 - s);
        let product = StarElement::from_poly(fa.clone())
            .star(&StarElement::from_poly(fb.clone()))
            .unwrap();
        let exact = product.eval_theta_part(t, s).unwrap();
        let quad = volterra_compose(|x, y| fa.eval(x, y), |x, y| fb.eval(x, y), t, s, 16).unwrap();
        prop_assert!((exact - quad).abs() <= 1e-10, "{} vs {}", exact, quad);
    }

    #[test]
    fn neumann_agrees_with_direct(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let p = ODEProblem::new(
            vec![
                vec![Coefficient::constant(a), Coefficient::constant(b)],
                vec![Coefficient::constant(c), Coefficient::function(|t| t.sin())],
            ],
            20,
        ).unwrap();
        let blocks = assemble_a(&p).unwrap();
        let direct = solve_direct(&blocks, &BlockSystem::zeros(2, 20)).unwrap();
        let series = neumann_resolvent(&blocks, 200, 1e-18).unwrap();
        let gap = (series.sum.flatten() - direct.x.flatten()).norm();
        prop_assert!(gap <= 1e-10_f64.max(100.0 * direct.residual_norm), "gap {}", gap);
    }

    #[test]
    fn commuting_generators_match_closed_form(
        entries in proptest::array::uniform4(-1.5f64..1.5),
        omega in 0.5f64..3.0,
    ) {
        let c = DMatrix::from_row_slice(2, 2, &entries);
        let a: Vec<Vec<Coefficient>> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| {
                        let cij = c[(i, j)];
                        Coefficient::function(move |t| cij * (omega * t).cos())
                    })
                    .collect()
            })
            .collect();
        let p = ODEProblem::new(a, 40).unwrap();
        let grid = [0.0, 0.3, 0.7, 1.0];
        let r = solve_ode(&p, &grid, &SolveOptions::default()).unwrap();
        for (t, u) in grid.iter().zip(&r.values) {
            let exact = commuting_solution(|x| (omega * x).cos(), &c, *t).unwrap();
            prop_assert!((u - &exact).amax() < 1e-7, "t={} err={}", t, (u - &exact).amax());
        }
    }
}

#[test]
fn factorial_bound_for_constant_kernels() {
    for a in [0.5, 1.0, 2.5] {
        let x = StarElement::theta() * a;
        for k in 1..=12usize {
            let p = x.star_power(k).unwrap();
            let mut sup = 0.0f64;
            for i in 0..=10 {
                for j in 0..=i {
                    let v = p.eval_theta_part(i as f64 / 10.0, j as f64 / 10.0).unwrap();
                    sup = sup.max(v.abs());
                }
            }
            let fact: f64 = (1..k).map(|v| v as f64).product();
            assert!(
                sup <= a.powi(k as i32) / fact * (1.0 + 1e-12),
                "a={a} k={k}"
            );
        }
    }
}

#[test]
fn commuting_cosine_generator() {
    let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.5]);
    let a: Vec<Vec<Coefficient>> = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| {
                    let cij = c[(i, j)];
                    Coefficient::function(move |t| cij * t.cos())
                })
                .collect()
        })
        .collect();
    let p = ODEProblem::new(a, 40).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let r = solve_ode(&p, &grid, &SolveOptions::default()).unwrap();
    for (t, u) in grid.iter().zip(&r.values) {
        let exact = (&c * t.sin()).exp();
        assert!((u - exact).amax() < 1e-7);
    }
}
