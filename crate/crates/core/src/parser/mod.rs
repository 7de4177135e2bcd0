//! Textual `.dato` front end.
//!
//! ```text
//! program    := (letdecl | streamdecl | taskdef)*
//! letdecl    := "let" IDENT "=" intexpr ";"
//! streamdecl := "stream" IDENT ":" "stream" "<" tensortype ">" gridsuffix?
//!               ("depth" intexpr)? ("pack" intexpr)? ";"
//! gridsuffix := "[" intexpr ("," intexpr)* "]"
//! taskdef    := "task" IDENT "[" intexpr ("," intexpr)* "]" "(" params? ")" block
//! param      := IDENT ":" tensortype ("@" STRING)?
//! tensortype := elem ("[" intexpr ("," intexpr)* "]")?
//! block      := "{" stmt* "}"
//! stmt       := "for" IDENT "in" "range" "(" intexpr ("," intexpr)? ")" block
//!             | streamref ".put" "(" expr ")" ";"
//!             | IDENT ":" tensortype ("=" expr)? ";"
//!             | IDENT ("[" range ("," range)* "]")? "=" expr ";"
//! range      := ":" | intexpr ":" intexpr
//! expr       := term (("+" | "-") term)*
//! term       := unary ("*" unary)*
//! unary      := "-" unary | atom
//! atom       := INT | FLOAT | "(" expr ")" | "tid" "(" INT ")"
//!             | "matmul" "(" expr "," expr ")"
//!             | "allreduce" "(" expr "," STRING ")"
//!             | "reduce" "(" STRING "," INT "," expr ")"
//!             | ("max" | "min") "(" expr "," expr ")"
//!             | IDENT "(" (expr ("," expr)*)? ")"
//!             | streamref ".get" "(" ")"
//!             | IDENT ("[" range ("," range)* "]")?
//! ```
//!
//! Integer expressions in types, bounds and mapping extents are folded
//! against `let` constants while parsing. Assigning to an undeclared name
//! declares a local whose type is inferred.

mod emit;
mod lexer;

use std::collections::HashMap;

use crate::ir::*;
use lexer::{Tok, Token};

pub use emit::emit_text;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{span}: expected {expected}, found {found}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub expected: String,
    pub found: String,
}

impl ParseError {
    pub(crate) fn new(span: SourceSpan, expected: &str, found: &str) -> Self {
        Self {
            span,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic::error("PARSE", Some(self.span), self.to_string())
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lexer::lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        consts: HashMap::new(),
        scope: Vec::new(),
    };
    p.program()
}

const KEYWORDS: [&str; 13] = [
    "let",
    "stream",
    "task",
    "for",
    "in",
    "range",
    "depth",
    "pack",
    "tid",
    "matmul",
    "allreduce",
    "reduce",
    "max",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    consts: HashMap<String, i64>,
    /// Tensor names visible in the current task body.
    scope: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

enum BracketItem {
    Full,
    Index(IndexExpr),
    Range(IndexExpr, IndexExpr),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError::new(self.span(), expected, &self.peek().describe()))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<SourceSpan> {
        if self.is_punct(p) {
            Ok(self.bump().span)
        } else {
            self.fail(&format!("`{p}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<SourceSpan> {
        if self.is_kw(kw) {
            Ok(self.bump().span)
        } else {
            self.fail(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self) -> PResult<(String, SourceSpan)> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let sp = self.bump().span;
                Ok((s, sp))
            }
            _ => self.fail("identifier"),
        }
    }

    fn string(&mut self) -> PResult<(String, SourceSpan)> {
        match self.peek().clone() {
            Tok::Str(s) => {
                let sp = self.bump().span;
                Ok((s, sp))
            }
            _ => self.fail("string literal"),
        }
    }

    fn int_literal(&mut self) -> PResult<i64> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(i)
            }
            _ => self.fail("integer literal"),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        loop {
            match self.peek() {
                Tok::Eof => return Ok(prog),
                Tok::Ident(s) if s == "let" => {
                    self.bump();
                    let (name, sp) = self.ident()?;
                    self.expect_punct("=")?;
                    let v = self.const_expr()?;
                    self.expect_punct(";")?;
                    if self.consts.insert(name.clone(), v).is_some() {
                        return Err(ParseError::new(sp, "a fresh constant name", &format!("`{name}` again")));
                    }
                    prog.consts.push((name, v));
                }
                Tok::Ident(s) if s == "stream" => prog.streams.push(self.stream_decl()?),
                Tok::Ident(s) if s == "task" => prog.tasks.push(self.task_def()?),
                _ => return self.fail("`let`, `stream` or `task`"),
            }
        }
    }

    fn const_expr(&mut self) -> PResult<i64> {
        let sp = self.span();
        let e = self.index_expr()?;
        match e.as_const() {
            Some(v) => Ok(v),
            None => Err(ParseError::new(
                sp,
                "a compile-time constant",
                "a non-constant expression",
            )),
        }
    }

    fn positive(&mut self) -> PResult<usize> {
        let sp = self.span();
        let v = self.const_expr()?;
        if v < 0 {
            return Err(ParseError::new(sp, "a non-negative extent", &v.to_string()));
        }
        Ok(v as usize)
    }

    fn extent_list(&mut self) -> PResult<Vec<usize>> {
        self.expect_punct("[")?;
        let mut out = vec![self.positive()?];
        while self.eat_punct(",") {
            out.push(self.positive()?);
        }
        self.expect_punct("]")?;
        Ok(out)
    }

    fn tensor_type(&mut self) -> PResult<TensorType> {
        let elem = match self.peek().clone() {
            Tok::Ident(s) => match ElemType::from_name(&s) {
                Some(e) => {
                    self.bump();
                    e
                }
                None => return self.fail("element type (i4, i8, i16, i32, bf16, f32)"),
            },
            _ => return self.fail("element type (i4, i8, i16, i32, bf16, f32)"),
        };
        let shape = if self.is_punct("[") {
            self.extent_list()?
        } else {
            vec![]
        };
        Ok(TensorType { elem, shape })
    }

    fn stream_decl(&mut self) -> PResult<StreamDecl> {
        let span = self.expect_kw("stream")?;
        let (name, _) = self.ident()?;
        self.expect_punct(":")?;
        self.expect_kw("stream")?;
        self.expect_punct("<")?;
        let elem = self.tensor_type()?;
        self.expect_punct(">")?;
        let grid = if self.is_punct("[") {
            self.extent_list()?
        } else {
            vec![]
        };
        let mut depth = FabricConfig::default().fifo_default_depth;
        let mut pack = 1;
        if self.is_kw("depth") {
            self.bump();
            depth = self.positive()?;
        }
        if self.is_kw("pack") {
            self.bump();
            pack = self.positive()?;
        }
        self.expect_punct(";")?;
        Ok(StreamDecl {
            name,
            ty: StreamType { elem, depth, pack },
            grid,
            span,
        })
    }

    fn task_def(&mut self) -> PResult<TaskDef> {
        let span = self.expect_kw("task")?;
        let (name, _) = self.ident()?;
        let mapping = self.extent_list()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                params.push(self.param()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.scope = params.iter().map(|p| p.name.clone()).collect();
        let body = self.block()?;
        self.scope.clear();
        Ok(TaskDef {
            name,
            mapping,
            params,
            body,
            span,
        })
    }

    fn param(&mut self) -> PResult<Param> {
        let (name, span) = self.ident()?;
        self.expect_punct(":")?;
        let ty = self.tensor_type()?;
        let layout = if self.eat_punct("@") {
            let (s, sp) = self.string()?;
            LayoutType::parse(&s).map_err(|e| ParseError::new(sp, "layout string such as \"S0R\"", &e.to_string()))?
        } else {
            LayoutType::replicated(ty.rank())
        };
        Ok(Param { name, ty, layout, span })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mark = self.scope.len();
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.fail("`}`");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        self.scope.truncate(mark);
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        if self.is_kw("for") {
            self.bump();
            let (iv, _) = self.ident()?;
            self.expect_kw("in")?;
            self.expect_kw("range")?;
            self.expect_punct("(")?;
            let a = self.const_expr()?;
            let (lo, hi) = if self.eat_punct(",") {
                (a, self.const_expr()?)
            } else {
                (0, a)
            };
            self.expect_punct(")")?;
            let body = self.block()?;
            return Ok(Stmt {
                kind: StmtKind::For { iv, lo, hi, body },
                span,
            });
        }
        let (name, name_span) = self.ident()?;
        if self.eat_punct(":") {
            let ty = self.tensor_type()?;
            let init = if self.eat_punct("=") { Some(self.expr()?) } else { None };
            self.expect_punct(";")?;
            self.scope.push(name.clone());
            return Ok(Stmt {
                kind: StmtKind::Local {
                    name,
                    ty: Some(ty),
                    init,
                },
                span,
            });
        }
        let items = if self.is_punct("[") {
            Some(self.bracket_items()?)
        } else {
            None
        };
        if self.is_punct(".") {
            let indices = self.stream_indices(items, name_span)?;
            self.bump();
            self.expect_kw("put")?;
            self.expect_punct("(")?;
            let value = self.expr()?;
            self.expect_punct(")")?;
            self.expect_punct(";")?;
            return Ok(Stmt {
                kind: StmtKind::Put {
                    stream: StreamRef {
                        name,
                        indices,
                        span: name_span,
                    },
                    value,
                },
                span,
            });
        }
        let ranges = match items {
            Some(items) => Some(self.slice_ranges(items, name_span)?),
            None => None,
        };
        self.expect_punct("=")?;
        let value = self.expr()?;
        self.expect_punct(";")?;
        if ranges.is_none() && !self.scope.contains(&name) {
            self.scope.push(name.clone());
            return Ok(Stmt {
                kind: StmtKind::Local {
                    name,
                    ty: None,
                    init: Some(value),
                },
                span,
            });
        }
        Ok(Stmt {
            kind: StmtKind::Assign {
                target: LValue { name, ranges },
                value,
            },
            span,
        })
    }

    fn bracket_items(&mut self) -> PResult<Vec<(BracketItem, SourceSpan)>> {
        self.expect_punct("[")?;
        let mut out = Vec::new();
        loop {
            let sp = self.span();
            if self.eat_punct(":") {
                out.push((BracketItem::Full, sp));
            } else {
                let lo = self.index_expr()?;
                if self.eat_punct(":") {
                    let hi = self.index_expr()?;
                    out.push((BracketItem::Range(lo, hi), sp));
                } else {
                    out.push((BracketItem::Index(lo), sp));
                }
            }
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct("]")?;
        Ok(out)
    }

    fn stream_indices(
        &self,
        items: Option<Vec<(BracketItem, SourceSpan)>>,
        _span: SourceSpan,
    ) -> PResult<Vec<IndexExpr>> {
        let mut out = Vec::new();
        for (item, sp) in items.unwrap_or_default() {
            match item {
                BracketItem::Index(e) => out.push(e),
                _ => return Err(ParseError::new(sp, "a stream index", "a slice range")),
            }
        }
        Ok(out)
    }

    fn slice_ranges(&self, items: Vec<(BracketItem, SourceSpan)>, _span: SourceSpan) -> PResult<Vec<SliceRange>> {
        items
            .into_iter()
            .map(|(item, sp)| match item {
                BracketItem::Full => Ok(SliceRange::Full),
                BracketItem::Range(lo, hi) => Ok(SliceRange::Range(lo, hi)),
                BracketItem::Index(_) => Err(ParseError::new(sp, "`:` or `lo:hi`", "a single index")),
            })
            .collect()
    }

    // ---- integer expressions -------------------------------------------

    fn index_expr(&mut self) -> PResult<IndexExpr> {
        let mut lhs = self.index_term()?;
        loop {
            let op = if self.is_punct("+") {
                "+"
            } else if self.is_punct("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.index_term()?;
            lhs = fold(op, lhs, rhs);
        }
    }

    fn index_term(&mut self) -> PResult<IndexExpr> {
        let mut lhs = self.index_unary()?;
        loop {
            let op = if self.is_punct("*") {
                "*"
            } else if self.is_punct("//") {
                "//"
            } else if self.is_punct("%") {
                "%"
            } else {
                return Ok(lhs);
            };
            let sp = self.bump().span;
            let rhs = self.index_unary()?;
            if (op == "//" || op == "%") && rhs.as_const() == Some(0) {
                return Err(ParseError::new(sp, "a non-zero divisor", "division by zero"));
            }
            lhs = fold(op, lhs, rhs);
        }
    }

    fn index_unary(&mut self) -> PResult<IndexExpr> {
        if self.eat_punct("-") {
            let inner = self.index_unary()?;
            return Ok(match inner {
                IndexExpr::Const(c) => IndexExpr::Const(-c),
                other => IndexExpr::Neg(Box::new(other)),
            });
        }
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(IndexExpr::Const(i))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.index_expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "tid" => {
                self.bump();
                self.expect_punct("(")?;
                let k = self.int_literal()?;
                self.expect_punct(")")?;
                Ok(IndexExpr::Tid(k.max(0) as usize))
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident()?;
                Ok(match self.consts.get(&name) {
                    Some(&v) => IndexExpr::Const(v),
                    None => IndexExpr::Var(name),
                })
            }
            _ => self.fail("integer expression"),
        }
    }

    // ---- value expressions ---------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_punct("+") {
                BinOp::Add
            } else if self.is_punct("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let span = self.bump().span;
            let rhs = self.term()?;
            lhs = Expr::with_span(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while self.is_punct("*") {
            let span = self.bump().span;
            let rhs = self.unary()?;
            lhs = Expr::with_span(ExprKind::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is_punct("-") {
            let span = self.bump().span;
            let inner = self.unary()?;
            return Ok(match inner.kind {
                ExprKind::Int(i) => Expr::with_span(ExprKind::Int(-i), span),
                ExprKind::Float(f) => Expr::with_span(ExprKind::Float(-f), span),
                _ => Expr::with_span(
                    ExprKind::Binary(
                        BinOp::Sub,
                        Box::new(Expr::with_span(ExprKind::Int(0), span)),
                        Box::new(inner),
                    ),
                    span,
                ),
            });
        }
        self.atom()
    }

    fn args2(&mut self) -> PResult<(Expr, Expr)> {
        self.expect_punct("(")?;
        let a = self.expr()?;
        self.expect_punct(",")?;
        let b = self.expr()?;
        self.expect_punct(")")?;
        Ok((a, b))
    }

    fn reduce_op(&mut self) -> PResult<ReduceOp> {
        let (s, sp) = self.string()?;
        ReduceOp::from_symbol(&s).ok_or_else(|| {
            ParseError::new(
                sp,
                "reduction operator (\"+\", \"max\", \"min\", \"*\")",
                &format!("{s:?}"),
            )
        })
    }

    fn atom(&mut self) -> PResult<Expr> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                ExprKind::Int(i)
            }
            Tok::Float(f) => {
                self.bump();
                ExprKind::Float(f)
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                return Ok(e);
            }
            Tok::Ident(s) => match s.as_str() {
                "tid" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let k = self.int_literal()?;
                    self.expect_punct(")")?;
                    ExprKind::Tid(k.max(0) as usize)
                }
                "matmul" => {
                    self.bump();
                    let (a, b) = self.args2()?;
                    ExprKind::Matmul(Box::new(a), Box::new(b))
                }
                "max" | "min" => {
                    self.bump();
                    let op = if s == "max" { BinOp::Max } else { BinOp::Min };
                    let (a, b) = self.args2()?;
                    ExprKind::Binary(op, Box::new(a), Box::new(b))
                }
                "allreduce" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let arg = self.expr()?;
                    self.expect_punct(",")?;
                    let op = self.reduce_op()?;
                    self.expect_punct(")")?;
                    ExprKind::AllReduce { op, arg: Box::new(arg) }
                }
                "reduce" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let op = self.reduce_op()?;
                    self.expect_punct(",")?;
                    let axis = self.int_literal()?;
                    self.expect_punct(",")?;
                    let arg = self.expr()?;
                    self.expect_punct(")")?;
                    ExprKind::Reduce {
                        op,
                        axis: axis.max(0) as usize,
                        arg: Box::new(arg),
                    }
                }
                _ => return self.name_expr(),
            },
            _ => return self.fail("expression"),
        };
        Ok(Expr::with_span(kind, span))
    }

    fn name_expr(&mut self) -> PResult<Expr> {
        let (name, span) = self.ident()?;
        if self.is_punct("(") {
            self.bump();
            let mut args = Vec::new();
            if !self.is_punct(")") {
                loop {
                    args.push(self.expr()?);
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
            return Ok(Expr::with_span(ExprKind::Call { name, args }, span));
        }
        let items = if self.is_punct("[") {
            Some(self.bracket_items()?)
        } else {
            None
        };
        if self.is_punct(".") {
            let indices = self.stream_indices(items, span)?;
            self.bump();
            self.expect_kw("get")?;
            self.expect_punct("(")?;
            self.expect_punct(")")?;
            return Ok(Expr::with_span(ExprKind::Get(StreamRef { name, indices, span }), span));
        }
        Ok(match items {
            Some(items) => Expr::with_span(
                ExprKind::Slice {
                    name,
                    ranges: self.slice_ranges(items, span)?,
                },
                span,
            ),
            None => Expr::with_span(ExprKind::Var(name), span),
        })
    }
}

fn fold(op: &str, a: IndexExpr, b: IndexExpr) -> IndexExpr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        let v = match op {
            "+" => Some(x + y),
            "-" => Some(x - y),
            "*" => Some(x * y),
            "//" => (y != 0).then(|| x.div_euclid(y)),
            "%" => (y != 0).then(|| x.rem_euclid(y)),
            _ => None,
        };
        if let Some(v) = v {
            return IndexExpr::Const(v);
        }
    }
    let (a, b) = (Box::new(a), Box::new(b));
    match op {
        "+" => IndexExpr::Add(a, b),
        "-" => IndexExpr::Sub(a, b),
        "*" => IndexExpr::Mul(a, b),
        "//" => IndexExpr::FloorDiv(a, b),
        _ => IndexExpr::Mod(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRODUCER_CONSUMER: &str = r#"
let M = 16;
let P0 = 2;
stream Z: stream<i8[M // P0]>[P0];
task producer[P0](A: i8[M] @ "S") {
    Z[tid(0)].put(A[:]);
}
task consumer[P0](B: i8[M] @ "S") {
    B[:] = Z[tid(0)].get() + 1;
}
"#;

    #[test]
    fn producer_consumer_shape() {
        let p = parse_program(PRODUCER_CONSUMER).unwrap();
        assert_eq!(p.streams.len(), 1);
        assert_eq!(p.streams[0].grid, vec![2]);
        assert_eq!(p.streams[0].ty.elem.shape, vec![8]);
        assert_eq!(p.streams[0].ty.depth, 2);
        assert_eq!(p.tasks.len(), 2);
        assert_eq!(p.tasks[0].params[0].layout.0, vec![AxisLayout::S(0)]);
        assert!(p.tasks[1].body[0].span.line == 9);
    }

    #[test]
    fn empty_file() {
        let p = parse_program("").unwrap();
        assert!(p.tasks.is_empty());
        let p = parse_program("# just a comment\n").unwrap();
        assert!(p.tasks.is_empty());
    }

    #[test]
    fn duplicate_device_axis_is_diagnosed() {
        let p = parse_program(r#"task t[2](A: i8[16, 16] @ "S0S0") { }"#).unwrap();
        let d = validate_program(&p);
        assert!(d.iter().any(|d| d.code == "DUPLICATE_AXIS"), "{d:?}");
    }

    #[test]
    fn error_points_at_offending_token() {
        let err = parse_program("task t[2](A: i9[4]) {}").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (1, 14));
        assert!(err.expected.contains("element type"));
        let err = parse_program("let x = 3\nlet y = 4;").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (2, 1));
        assert_eq!(err.found, "`let`");
    }

    #[test]
    fn implicit_local_then_assign() {
        let p = parse_program(r#"task t[1](A: i32[4]) { x = A + 1; x = x * 2; A[:] = x; }"#).unwrap();
        let body = &p.tasks[0].body;
        assert!(matches!(body[0].kind, StmtKind::Local { ty: None, .. }));
        assert!(matches!(body[1].kind, StmtKind::Assign { .. }));
    }

    #[test]
    fn non_constant_type_rejected() {
        let err = parse_program("task t[2](A: i8[tid(0)]) {}").unwrap_err();
        assert!(err.expected.contains("constant"));
    }
}
