//! Arithmetic expression parsing and evaluation for coefficient and data
//! functions supplied as strings.
//!
//! Grammar (binding strength, loosest to tightest): `+ -`, then `* /`, then
//! unary minus, then `^`. `^` is right-associative, so `2^3^2 = 512`, and it
//! binds tighter than unary minus, so `-t^2 = -(t^2)`. Variables are `x1`
//! (and `x2` when the space dimension is 3) for the tangential coordinates
//! and `t` for the normal coordinate. Functions: `sin cos exp log sqrt abs`,
//! each taking exactly one argument; `log` is natural.
//!
//! Every rejected input produces an error carrying a byte offset into the
//! source string. Evaluation is plain IEEE double arithmetic except that
//! operations leaving the real domain (log/sqrt of a negative, division by
//! zero, non-finite intermediates) are reported as [`DomainError`] instead of
//! letting NaN propagate.

use std::fmt;

use thiserror::Error;

/// Half-open byte range into the source the node was parsed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Variable symbol. `x1`, `x2` map to tangential coordinates 0 and 1 (the
/// latter only in dimension 3); `t` is always the last coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSym {
    X1,
    X2,
    T,
}

impl VarSym {
    pub fn name(self) -> &'static str {
        match self {
            VarSym::X1 => "x1",
            VarSym::X2 => "x2",
            VarSym::T => "t",
        }
    }

    pub fn coord_index(self, dim: usize) -> usize {
        match self {
            VarSym::X1 => 0,
            VarSym::X2 => 1,
            VarSym::T => dim - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Literal constant. The parser only produces finite, non-negative values;
    /// negative constants appear as `Neg(Num)`.
    Num(f64),
    Var(VarSym),
    Neg(Box<Node>),
    Bin {
        op: BinOp,
        lhs: Box<Node>,
        rhs: Box<Node>,
    },
    Call {
        func: Func,
        arg: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub span: Span,
}

/// Parsed expression over the coordinates of an `n`-dimensional point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    dim: usize,
    root: Node,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset} (variables for dimension {dim}: {vars})")]
    UnknownIdent {
        name: String,
        offset: usize,
        dim: usize,
        vars: String,
    },
    #[error("function `{name}` at byte {offset} takes exactly 1 argument, found {found}")]
    Arity {
        name: String,
        offset: usize,
        found: usize,
    },
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
}

impl ParseError {
    /// Byte offset into the source at which the rejection was detected.
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } => *offset,
            ParseError::UnknownIdent { offset, .. } => *offset,
            ParseError::Arity { offset, .. } => *offset,
            ParseError::BadDimension(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("point has {found} coordinates, expression expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Domain(#[from] DomainError),
}

/// Evaluation left the real domain. `detail` names the operation and the
/// offending value; `span` locates the node in the original source text.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("domain error in `{expr}` (bytes {}..{}): {detail}", span.start, span.end)]
pub struct DomainError {
    pub span: Span,
    pub expr: String,
    pub detail: String,
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct SpannedTok {
    tok: Tok,
    span: Span,
}

fn lex(src: &str) -> Result<Vec<SpannedTok>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let tok = match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => {
                i += 1;
                Tok::Plus
            }
            b'-' => {
                i += 1;
                Tok::Minus
            }
            b'*' => {
                i += 1;
                Tok::Star
            }
            b'/' => {
                i += 1;
                Tok::Slash
            }
            b'^' => {
                i += 1;
                Tok::Caret
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("invalid numeric literal `{text}`"),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("numeric literal `{text}` overflows f64"),
                    });
                }
                Tok::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                Tok::Ident(src[start..i].to_string())
            }
            _ => {
                // Report the full UTF-8 character, not a byte fragment.
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        toks.push(SpannedTok {
            tok,
            span: Span { start, end: i },
        });
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Pratt parser
// ---------------------------------------------------------------------------

// Binding powers. A binary operator consumes its right operand at `rbp`;
// left associativity is rbp = lbp + 1, right associativity rbp = lbp - 1.
const BP_ADD: (u8, u8) = (1, 2);
const BP_MUL: (u8, u8) = (3, 4);
const BP_NEG: u8 = 5;
const BP_POW: (u8, u8) = (8, 7);

struct Parser<'a> {
    toks: &'a [SpannedTok],
    pos: usize,
    src_len: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&SpannedTok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<SpannedTok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eof_offset(&self) -> usize {
        self.src_len
    }

    fn expr(&mut self, min_bp: u8) -> Result<Node, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, lbp, rbp) = match self.peek().map(|t| &t.tok) {
                Some(Tok::Plus) => (BinOp::Add, BP_ADD.0, BP_ADD.1),
                Some(Tok::Minus) => (BinOp::Sub, BP_ADD.0, BP_ADD.1),
                Some(Tok::Star) => (BinOp::Mul, BP_MUL.0, BP_MUL.1),
                Some(Tok::Slash) => (BinOp::Div, BP_MUL.0, BP_MUL.1),
                Some(Tok::Caret) => (BinOp::Pow, BP_POW.0, BP_POW.1),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(rbp)?;
            let span = Span {
                start: lhs.span.start,
                end: rhs.span.end,
            };
            lhs = Node {
                kind: NodeKind::Bin {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Node, ParseError> {
        let Some(st) = self.next() else {
            return Err(ParseError::Syntax {
                offset: self.eof_offset(),
                message: "expected an operand, found end of input".into(),
            });
        };
        match st.tok {
            Tok::Num(v) => Ok(Node {
                kind: NodeKind::Num(v),
                span: st.span,
            }),
            Tok::Minus => {
                let inner = self.expr(BP_NEG)?;
                let span = Span {
                    start: st.span.start,
                    end: inner.span.end,
                };
                Ok(Node {
                    kind: NodeKind::Neg(Box::new(inner)),
                    span,
                })
            }
            Tok::LParen => {
                let inner = self.expr(0)?;
                match self.next() {
                    Some(SpannedTok {
                        tok: Tok::RParen,
                        span: rp,
                    }) => Ok(Node {
                        span: Span {
                            start: st.span.start,
                            end: rp.end,
                        },
                        ..inner
                    }),
                    Some(other) => Err(ParseError::Syntax {
                        offset: other.span.start,
                        message: "expected `)`".into(),
                    }),
                    None => Err(ParseError::Syntax {
                        offset: self.eof_offset(),
                        message: "expected `)`, found end of input".into(),
                    }),
                }
            }
            Tok::Ident(name) => self.ident(name, st.span),
            other => Err(ParseError::Syntax {
                offset: st.span.start,
                message: format!("expected an operand, found `{}`", tok_text(&other)),
            }),
        }
    }

    fn ident(&mut self, name: String, span: Span) -> Result<Node, ParseError> {
        if let Some(func) = Func::from_name(&name) {
            let Some(SpannedTok { tok: Tok::LParen, .. }) = self.peek() else {
                return Err(ParseError::Syntax {
                    offset: span.start,
                    message: format!("function `{name}` must be called as `{name}(...)`"),
                });
            };
            self.pos += 1;
            let mut args = vec![self.expr(0)?];
            loop {
                match self.next() {
                    Some(SpannedTok {
                        tok: Tok::RParen,
                        span: rp,
                    }) => {
                        if args.len() != 1 {
                            return Err(ParseError::Arity {
                                name,
                                offset: span.start,
                                found: args.len(),
                            });
                        }
                        let arg = args.pop().expect("one argument");
                        return Ok(Node {
                            kind: NodeKind::Call {
                                func,
                                arg: Box::new(arg),
                            },
                            span: Span {
                                start: span.start,
                                end: rp.end,
                            },
                        });
                    }
                    Some(SpannedTok { tok: Tok::Comma, .. }) => {
                        args.push(self.expr(0)?);
                    }
                    Some(other) => {
                        return Err(ParseError::Syntax {
                            offset: other.span.start,
                            message: "expected `,` or `)` in argument list".into(),
                        });
                    }
                    None => {
                        return Err(ParseError::Syntax {
                            offset: self.eof_offset(),
                            message: "unterminated argument list".into(),
                        });
                    }
                }
            }
        }
        let sym = match name.as_str() {
            "x1" => Some(VarSym::X1),
            "x2" if self.dim == 3 => Some(VarSym::X2),
            "t" => Some(VarSym::T),
            _ => None,
        };
        match sym {
            Some(sym) => Ok(Node {
                kind: NodeKind::Var(sym),
                span,
            }),
            None => Err(ParseError::UnknownIdent {
                name,
                offset: span.start,
                dim: self.dim,
                vars: if self.dim == 3 { "x1, x2, t" } else { "x1, t" }.to_string(),
            }),
        }
    }
}

fn tok_text(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("{v}"),
        Tok::Ident(s) => s.clone(),
        Tok::Plus => "+".into(),
        Tok::Minus => "-".into(),
        Tok::Star => "*".into(),
        Tok::Slash => "/".into(),
        Tok::Caret => "^".into(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
        Tok::Comma => ",".into(),
    }
}

/// Parse `text` as an expression over an `dim`-dimensional point (dim 2 or 3).
pub fn parse(text: &str, dim: usize) -> Result<ExprAst, ParseError> {
    if dim != 2 && dim != 3 {
        return Err(ParseError::BadDimension(dim));
    }
    let toks = lex(text)?;
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        src_len: text.len(),
        dim,
    };
    let root = parser.expr(0)?;
    if let Some(extra) = parser.peek() {
        return Err(ParseError::Syntax {
            offset: extra.span.start,
            message: format!("unexpected `{}` after expression", tok_text(&extra.tok)),
        });
    }
    Ok(ExprAst { dim, root })
}

impl ExprAst {
    /// Assemble an AST directly, bypassing the parser. Used by tests that
    /// need structured generation; `dim` must be 2 or 3.
    pub fn from_parts(dim: usize, root: Node) -> ExprAst {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        ExprAst { dim, root }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluate at a point whose length matches the declared dimension.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.dim {
            return Err(EvalError::DimensionMismatch {
                expected: self.dim,
                found: point.len(),
            });
        }
        Ok(eval_node(&self.root, point, self.dim)?)
    }

    /// Render with the minimal parentheses needed to reparse identically.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        print_node(&self.root, 0, &mut out);
        out
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn domain_err(node: &Node, detail: String) -> DomainError {
    let mut expr = String::new();
    print_node(node, 0, &mut expr);
    DomainError {
        span: node.span,
        expr,
        detail,
    }
}

fn eval_node(node: &Node, point: &[f64], dim: usize) -> Result<f64, DomainError> {
    let v = match &node.kind {
        NodeKind::Num(v) => *v,
        NodeKind::Var(sym) => point[sym.coord_index(dim)],
        NodeKind::Neg(inner) => -eval_node(inner, point, dim)?,
        NodeKind::Bin { op, lhs, rhs } => {
            let a = eval_node(lhs, point, dim)?;
            let b = eval_node(rhs, point, dim)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(domain_err(node, format!("division of {a} by zero")));
                    }
                    a / b
                }
                BinOp::Pow => {
                    let r = a.powf(b);
                    if !r.is_finite() {
                        return Err(domain_err(
                            node,
                            format!("{a}^{b} is not a finite real number"),
                        ));
                    }
                    r
                }
            }
        }
        NodeKind::Call { func, arg } => {
            let x = eval_node(arg, point, dim)?;
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(domain_err(node, format!("log of non-positive value {x}")));
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(domain_err(node, format!("sqrt of negative value {x}")));
                    }
                    x.sqrt()
                }
                Func::Abs => x.abs(),
            }
        }
    };
    if !v.is_finite() {
        return Err(domain_err(node, format!("non-finite result {v}")));
    }
    Ok(v)
}

// Node precedence for printing; atoms are maximal.
fn node_prec(node: &Node) -> u8 {
    match &node.kind {
        NodeKind::Num(_) | NodeKind::Var(_) | NodeKind::Call { .. } => 10,
        NodeKind::Neg(_) => BP_NEG,
        NodeKind::Bin { op, .. } => match op {
            BinOp::Add | BinOp::Sub => BP_ADD.0,
            BinOp::Mul | BinOp::Div => BP_MUL.0,
            BinOp::Pow => BP_POW.0,
        },
    }
}

impl ExprAst {
    /// Structural equality ignoring source spans. Two parses of different
    /// renderings of the same tree compare equal here but not under `==`.
    pub fn structure_eq(&self, other: &ExprAst) -> bool {
        self.dim == other.dim && node_structure_eq(&self.root, &other.root)
    }
}

fn node_structure_eq(a: &Node, b: &Node) -> bool {
    match (&a.kind, &b.kind) {
        (NodeKind::Num(x), NodeKind::Num(y)) => x.to_bits() == y.to_bits(),
        (NodeKind::Var(x), NodeKind::Var(y)) => x == y,
        (NodeKind::Neg(x), NodeKind::Neg(y)) => node_structure_eq(x, y),
        (
            NodeKind::Bin { op: o1, lhs: l1, rhs: r1 },
            NodeKind::Bin { op: o2, lhs: l2, rhs: r2 },
        ) => o1 == o2 && node_structure_eq(l1, l2) && node_structure_eq(r1, r2),
        (
            NodeKind::Call { func: f1, arg: a1 },
            NodeKind::Call { func: f2, arg: a2 },
        ) => f1 == f2 && node_structure_eq(a1, a2),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Symbolic differentiation
// ---------------------------------------------------------------------------

// Smart constructors used by the derivative builder: they fold constant
// operands (when the result stays finite) and drop algebraic no-ops so the
// derivative trees stay readable. Derived nodes inherit the span of the
// expression they came from.

fn num(v: f64, span: Span) -> Node {
    Node {
        kind: NodeKind::Num(v),
        span,
    }
}

fn is_num(node: &Node, v: f64) -> bool {
    matches!(node.kind, NodeKind::Num(x) if x == v)
}

fn bin(op: BinOp, lhs: Node, rhs: Node) -> Node {
    let span = Span {
        start: lhs.span.start.min(rhs.span.start),
        end: lhs.span.end.max(rhs.span.end),
    };
    if let (NodeKind::Num(a), NodeKind::Num(b)) = (&lhs.kind, &rhs.kind) {
        let v = match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if *b != 0.0 {
                    a / b
                } else {
                    f64::NAN
                }
            }
            BinOp::Pow => a.powf(*b),
        };
        if v.is_finite() {
            return num(v, span);
        }
    }
    match op {
        BinOp::Add => {
            if is_num(&lhs, 0.0) {
                return rhs;
            }
            if is_num(&rhs, 0.0) {
                return lhs;
            }
        }
        BinOp::Sub => {
            if is_num(&rhs, 0.0) {
                return lhs;
            }
        }
        BinOp::Mul => {
            if is_num(&lhs, 0.0) || is_num(&rhs, 0.0) {
                return num(0.0, span);
            }
            if is_num(&lhs, 1.0) {
                return rhs;
            }
            if is_num(&rhs, 1.0) {
                return lhs;
            }
        }
        BinOp::Div => {
            if is_num(&lhs, 0.0) && !is_num(&rhs, 0.0) {
                return num(0.0, span);
            }
            if is_num(&rhs, 1.0) {
                return lhs;
            }
        }
        BinOp::Pow => {
            if is_num(&rhs, 1.0) {
                return lhs;
            }
            if is_num(&rhs, 0.0) {
                return num(1.0, span);
            }
        }
    }
    Node {
        kind: NodeKind::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        },
        span,
    }
}

fn call(func: Func, arg: Node) -> Node {
    let span = arg.span;
    Node {
        kind: NodeKind::Call {
            func,
            arg: Box::new(arg),
        },
        span,
    }
}

fn derive_node(node: &Node, var: VarSym) -> Node {
    let span = node.span;
    match &node.kind {
        NodeKind::Num(_) => num(0.0, span),
        NodeKind::Var(sym) => num(if *sym == var { 1.0 } else { 0.0 }, span),
        NodeKind::Neg(inner) => {
            let d = derive_node(inner, var);
            if let NodeKind::Num(v) = d.kind {
                return num(-v, span);
            }
            Node {
                kind: NodeKind::Neg(Box::new(d)),
                span,
            }
        }
        NodeKind::Bin { op, lhs, rhs } => {
            let dl = derive_node(lhs, var);
            let dr = derive_node(rhs, var);
            match op {
                BinOp::Add => bin(BinOp::Add, dl, dr),
                BinOp::Sub => bin(BinOp::Sub, dl, dr),
                BinOp::Mul => bin(
                    BinOp::Add,
                    bin(BinOp::Mul, dl, (**rhs).clone()),
                    bin(BinOp::Mul, (**lhs).clone(), dr),
                ),
                BinOp::Div => {
                    // (u/v)' = (u' v - u v') / v^2
                    let numer = bin(
                        BinOp::Sub,
                        bin(BinOp::Mul, dl, (**rhs).clone()),
                        bin(BinOp::Mul, (**lhs).clone(), dr),
                    );
                    let denom = bin(BinOp::Pow, (**rhs).clone(), num(2.0, span));
                    bin(BinOp::Div, numer, denom)
                }
                BinOp::Pow => {
                    if let NodeKind::Num(k) = rhs.kind {
                        // u^k with constant k: k u^(k-1) u'
                        let power = bin(BinOp::Pow, (**lhs).clone(), num(k - 1.0, span));
                        return bin(BinOp::Mul, bin(BinOp::Mul, num(k, span), power), dl);
                    }
                    // General u^v: u^v (v' log u + v u' / u).
                    let u = (**lhs).clone();
                    let v = (**rhs).clone();
                    let term1 = bin(BinOp::Mul, dr, call(Func::Log, u.clone()));
                    let term2 = bin(BinOp::Div, bin(BinOp::Mul, v, dl), u.clone());
                    bin(
                        BinOp::Mul,
                        bin(BinOp::Pow, u, (**rhs).clone()),
                        bin(BinOp::Add, term1, term2),
                    )
                }
            }
        }
        NodeKind::Call { func, arg } => {
            let da = derive_node(arg, var);
            if is_num(&da, 0.0) {
                return num(0.0, span);
            }
            let a = (**arg).clone();
            let outer = match func {
                Func::Sin => call(Func::Cos, a),
                Func::Cos => Node {
                    kind: NodeKind::Neg(Box::new(call(Func::Sin, a))),
                    span,
                },
                Func::Exp => call(Func::Exp, a),
                // 1/x, 1/(2 sqrt x), x/|x|: all inherit the argument's
                // domain restrictions, which evaluation reports as usual.
                Func::Log => bin(BinOp::Div, num(1.0, span), a),
                Func::Sqrt => bin(
                    BinOp::Div,
                    num(1.0, span),
                    bin(BinOp::Mul, num(2.0, span), call(Func::Sqrt, a)),
                ),
                Func::Abs => bin(BinOp::Div, a.clone(), call(Func::Abs, a)),
            };
            bin(BinOp::Mul, outer, da)
        }
    }
}

impl ExprAst {
    /// Exact partial derivative with respect to one variable, with light
    /// constant folding. Domain restrictions introduced by the chain rule
    /// (`log`, `sqrt`, `abs` at their singular points) surface as the usual
    /// evaluation-time domain errors.
    pub fn derivative(&self, var: VarSym) -> ExprAst {
        ExprAst {
            dim: self.dim,
            root: derive_node(&self.root, var),
        }
    }

    /// Sum of expressions of the same dimension, with constant folding.
    ///
    /// # Panics
    /// If `terms` is empty or the dimensions disagree.
    pub fn sum(terms: Vec<ExprAst>) -> ExprAst {
        let mut it = terms.into_iter();
        let first = it.next().expect("sum of no terms");
        let dim = first.dim;
        let mut root = first.root;
        for term in it {
            assert_eq!(term.dim, dim, "sum requires equal dimensions");
            root = bin(BinOp::Add, root, term.root);
        }
        ExprAst { dim, root }
    }
}

fn print_node(node: &Node, min_prec: u8, out: &mut String) {
    let prec = node_prec(node);
    let parens = prec < min_prec;
    if parens {
        out.push('(');
    }
    match &node.kind {
        NodeKind::Num(v) => out.push_str(&format!("{v}")),
        NodeKind::Var(sym) => out.push_str(sym.name()),
        NodeKind::Neg(inner) => {
            out.push('-');
            print_node(inner, BP_NEG, out);
        }
        NodeKind::Bin { op, lhs, rhs } => {
            let (sym, left_min, right_min) = match op {
                BinOp::Add => ("+", BP_ADD.0, BP_ADD.0 + 1),
                BinOp::Sub => ("-", BP_ADD.0, BP_ADD.0 + 1),
                BinOp::Mul => ("*", BP_MUL.0, BP_MUL.0 + 1),
                BinOp::Div => ("/", BP_MUL.0, BP_MUL.0 + 1),
                BinOp::Pow => ("^", BP_POW.0 + 1, BP_POW.0),
            };
            print_node(lhs, left_min, out);
            out.push_str(sym);
            print_node(rhs, right_min, out);
        }
        NodeKind::Call { func, arg } => {
            out.push_str(func.name());
            out.push('(');
            print_node(arg, 0, out);
            out.push(')');
        }
    }
    if parens {
        out.push(')');
    }
}
