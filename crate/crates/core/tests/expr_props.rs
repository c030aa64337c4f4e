//! Property tests for the expression language: print/reparse stability and
//! crash-freedom on arbitrary inputs.

use degel_core::expr::{self, parse, BinOp, ExprAst, Func, Node, NodeKind, Span, VarSym};
use proptest::prelude::*;

fn dummy_span() -> Span {
    Span { start: 0, end: 0 }
}

fn leaf(dim: usize) -> BoxedStrategy<Node> {
    let vars = if dim == 3 {
        vec![VarSym::X1, VarSym::X2, VarSym::T]
    } else {
        vec![VarSym::X1, VarSym::T]
    };
    prop_oneof![
        // Finite non-negative literals, as the parser itself produces.
        (0.0..1000.0f64).prop_map(|v| Node {
            kind: NodeKind::Num(v),
            span: dummy_span(),
        }),
        proptest::sample::select(vars).prop_map(|sym| Node {
            kind: NodeKind::Var(sym),
            span: dummy_span(),
        }),
    ]
    .boxed()
}

fn arb_node(dim: usize) -> BoxedStrategy<Node> {
    leaf(dim)
        .prop_recursive(5, 64, 3, |inner| {
            let bin = (
                proptest::sample::select(vec![
                    BinOp::Add,
                    BinOp::Sub,
                    BinOp::Mul,
                    BinOp::Div,
                    BinOp::Pow,
                ]),
                inner.clone(),
                inner.clone(),
            )
                .prop_map(|(op, lhs, rhs)| Node {
                    kind: NodeKind::Bin {
                        op,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                    },
                    span: dummy_span(),
                });
            let call = (
                proptest::sample::select(vec![
                    Func::Sin,
                    Func::Cos,
                    Func::Exp,
                    Func::Log,
                    Func::Sqrt,
                    Func::Abs,
                ]),
                inner.clone(),
            )
                .prop_map(|(func, arg)| Node {
                    kind: NodeKind::Call {
                        func,
                        arg: Box::new(arg),
                    },
                    span: dummy_span(),
                });
            let neg = inner.prop_map(|n| Node {
                kind: NodeKind::Neg(Box::new(n)),
                span: dummy_span(),
            });
            prop_oneof![bin, call, neg]
        })
        .boxed()
}

fn arb_ast(dim: usize) -> BoxedStrategy<ExprAst> {
    arb_node(dim)
        .prop_map(move |root| ExprAst::from_parts(dim, root))
        .boxed()
}

proptest! {
    /// Pretty-printing and reparsing reproduces the tree structure exactly.
    #[test]
    fn print_reparse_is_identity(ast in arb_ast(2)) {
        let printed = ast.to_text();
        let reparsed = parse(&printed, 2)
            .unwrap_or_else(|e| panic!("printed form `{printed}` failed to parse: {e}"));
        prop_assert!(
            ast.structure_eq(&reparsed),
            "`{printed}` reparsed to `{}`",
            reparsed.to_text()
        );
    }

    #[test]
    fn print_reparse_is_identity_dim3(ast in arb_ast(3)) {
        let printed = ast.to_text();
        let reparsed = parse(&printed, 3).unwrap();
        prop_assert!(ast.structure_eq(&reparsed));
    }

    /// Well-formed expressions evaluate to a finite value or a domain error,
    /// never a panic or a silent NaN.
    #[test]
    fn eval_never_produces_nan(ast in arb_ast(2), x in -1.0..1.0f64, t in 0.0..1.0f64) {
        match ast.eval(&[x, t]) {
            Ok(v) => prop_assert!(v.is_finite()),
            Err(expr::EvalError::Domain(_)) => {}
            Err(other) => prop_assert!(false, "unexpected error {other:?}"),
        }
    }

    /// Arbitrary byte soup either parses or is rejected with an offset that
    /// points into (or just past) the input.
    #[test]
    fn fuzz_parse_total(src in "\\PC*") {
        match parse(&src, 2) {
            Ok(ast) => {
                let _ = ast.eval(&[0.3, 0.4]);
            }
            Err(e) => prop_assert!(e.offset() <= src.len()),
        }
    }

    /// Operator-heavy soup close to the grammar.
    #[test]
    fn fuzz_parse_near_grammar(src in "[-+*/^()xt12 .ea]{0,40}") {
        match parse(&src, 2) {
            Ok(_) => {}
            Err(e) => prop_assert!(e.offset() <= src.len()),
        }
    }
}
