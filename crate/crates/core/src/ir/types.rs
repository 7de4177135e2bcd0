use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Source location of an IR node.
///
/// Spans never participate in structural equality: two nodes that differ only
/// in where they were parsed from compare equal.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u32,
    pub col: u32,
    pub len: u32,
}

impl SourceSpan {
    pub fn new(line: u32, col: u32, len: u32) -> Self {
        Self { line, col, len }
    }
}

impl PartialEq for SourceSpan {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl Eq for SourceSpan {}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    I4,
    I8,
    I16,
    I32,
    Bf16,
    F32,
}

impl ElemType {
    pub const ALL: [ElemType; 6] = [
        ElemType::I4,
        ElemType::I8,
        ElemType::I16,
        ElemType::I32,
        ElemType::Bf16,
        ElemType::F32,
    ];

    pub fn bitwidth(self) -> u32 {
        match self {
            ElemType::I4 => 4,
            ElemType::I8 => 8,
            ElemType::I16 | ElemType::Bf16 => 16,
            ElemType::I32 | ElemType::F32 => 32,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElemType::Bf16 | ElemType::F32)
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::I4 => "i4",
            ElemType::I8 => "i8",
            ElemType::I16 => "i16",
            ElemType::I32 => "i32",
            ElemType::Bf16 => "bf16",
            ElemType::F32 => "f32",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Stable one-byte code used by the binary tensor container.
    pub fn code(self) -> u8 {
        match self {
            ElemType::I4 => 0,
            ElemType::I8 => 1,
            ElemType::I16 => 2,
            ElemType::I32 => 3,
            ElemType::Bf16 => 4,
            ElemType::F32 => 5,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.code() == c)
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorType {
    pub elem: ElemType,
    pub shape: Vec<usize>,
}

impl TensorType {
    pub fn new(elem: ElemType, shape: Vec<usize>) -> Self {
        Self { elem, shape }
    }

    pub fn scalar(elem: ElemType) -> Self {
        Self { elem, shape: vec![] }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.elem)?;
        if !self.shape.is_empty() {
            let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
            write!(f, "[{}]", dims.join(", "))?;
        }
        Ok(())
    }
}

/// Per-axis distribution label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AxisLayout {
    /// Replicated on every instance.
    R,
    /// Sharded across the given device axis of the task's mapping grid.
    S(u32),
}

impl AxisLayout {
    pub fn device_axis(self) -> Option<u32> {
        match self {
            AxisLayout::R => None,
            AxisLayout::S(a) => Some(a),
        }
    }

    pub fn is_sharded(self) -> bool {
        matches!(self, AxisLayout::S(_))
    }
}

impl fmt::Display for AxisLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisLayout::R => f.write_str("R"),
            AxisLayout::S(a) => write!(f, "S{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutType(pub Vec<AxisLayout>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid layout string {text:?}: {reason}")]
pub struct LayoutParseError {
    pub text: String,
    pub reason: String,
}

impl LayoutType {
    pub fn replicated(rank: usize) -> Self {
        Self(vec![AxisLayout::R; rank])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn axes(&self) -> &[AxisLayout] {
        &self.0
    }

    /// Parses strings such as `"S1S2"`, `"RS0"` or `"R"`. A bare `"S"` means
    /// `S0` and is only meaningful for rank-1 tensors.
    pub fn parse(text: &str) -> Result<Self, LayoutParseError> {
        let err = |reason: &str| LayoutParseError {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        if text == "S" {
            return Ok(Self(vec![AxisLayout::S(0)]));
        }
        let bytes = text.as_bytes();
        let mut axes = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'R' => {
                    axes.push(AxisLayout::R);
                    i += 1;
                }
                b'S' => {
                    i += 1;
                    let start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if start == i {
                        return Err(err("`S` must be followed by a device axis"));
                    }
                    let axis: u32 = text[start..i].parse().map_err(|_| err("device axis too large"))?;
                    axes.push(AxisLayout::S(axis));
                }
                _ => return Err(err("expected `R` or `S<axis>`")),
            }
        }
        Ok(Self(axes))
    }

    pub fn sharded_axes(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(dim, a)| a.device_axis().map(|d| (dim, d)))
    }
}

impl fmt::Display for LayoutType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReduceOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "max")]
    Max,
    #[serde(rename = "min")]
    Min,
    #[serde(rename = "*")]
    Mul,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Add, ReduceOp::Max, ReduceOp::Min, ReduceOp::Mul];

    pub fn symbol(self) -> &'static str {
        match self {
            ReduceOp::Add => "+",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
            ReduceOp::Mul => "*",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Pending cross-shard reductions a value still owes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectSet(pub BTreeSet<ReduceOp>);

impl EffectSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, op: ReduceOp) -> bool {
        self.0.contains(&op)
    }

    pub fn union(&self, other: &EffectSet) -> EffectSet {
        EffectSet(self.0.union(&other.0).copied().collect())
    }
}

impl fmt::Display for EffectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<&str> = self.0.iter().map(|o| o.symbol()).collect();
        write!(f, "{{{}}}", ops.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamType {
    pub elem: TensorType,
    pub depth: usize,
    pub pack: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDecl {
    pub name: String,
    pub ty: StreamType,
    /// Extents of the array of streams; empty for a single stream.
    pub grid: Vec<usize>,
    pub span: SourceSpan,
}

impl StreamDecl {
    pub fn instance_count(&self) -> usize {
        self.grid.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: TensorType,
    pub layout: LayoutType,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub name: String,
    pub mapping: Vec<usize>,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub span: SourceSpan,
}

impl TaskDef {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn instance_count(&self) -> usize {
        self.mapping.iter().product()
    }

    /// All grid coordinates in lexicographic order.
    pub fn coords(&self) -> Vec<Vec<usize>> {
        grid_points(&self.mapping)
    }

    /// Shape of a parameter as seen by one task instance.
    pub fn local_shape(&self, param: &Param) -> Vec<usize> {
        param
            .ty
            .shape
            .iter()
            .zip(param.layout.axes())
            .map(|(&dim, axis)| match axis {
                AxisLayout::S(a) => {
                    let ext = self.mapping.get(*a as usize).copied().unwrap_or(1).max(1);
                    dim / ext
                }
                AxisLayout::R => dim,
            })
            .collect()
    }
}

/// Enumerates the points of a rectangular grid in row-major order.
pub fn grid_points(extents: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = extents.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; extents.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for d in (0..extents.len()).rev() {
            cur[d] += 1;
            if cur[d] < extents[d] {
                break;
            }
            cur[d] = 0;
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    /// Named integer constants, already folded into every type and bound.
    pub consts: Vec<(String, i64)>,
    pub streams: Vec<StreamDecl>,
    pub tasks: Vec<TaskDef>,
}

impl Program {
    pub fn stream(&self, name: &str) -> Option<&StreamDecl> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn task(&self, name: &str) -> Option<&TaskDef> {
        self.tasks.iter().find(|t| t.name == name)
    }

    /// Global buffers: task parameters unified by name, in first-appearance order.
    pub fn buffers(&self) -> Vec<(String, TensorType)> {
        let mut out: Vec<(String, TensorType)> = Vec::new();
        for t in &self.tasks {
            for p in &t.params {
                if !out.iter().any(|(n, _)| n == &p.name) {
                    out.push((p.name.clone(), p.ty.clone()));
                }
            }
        }
        out
    }
}

/// Integer index arithmetic over task ids and loop variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexExpr {
    Const(i64),
    /// A loop induction variable.
    Var(String),
    /// Component of the task instance coordinate.
    Tid(usize),
    Neg(Box<IndexExpr>),
    Add(Box<IndexExpr>, Box<IndexExpr>),
    Sub(Box<IndexExpr>, Box<IndexExpr>),
    Mul(Box<IndexExpr>, Box<IndexExpr>),
    FloorDiv(Box<IndexExpr>, Box<IndexExpr>),
    Mod(Box<IndexExpr>, Box<IndexExpr>),
}

impl IndexExpr {
    pub fn as_const(&self) -> Option<i64> {
        match self {
            IndexExpr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Evaluates with `tid` components and loop variables from `lookup`.
    pub fn eval(&self, tid: &[usize], lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        Some(match self {
            IndexExpr::Const(c) => *c,
            IndexExpr::Var(v) => lookup(v)?,
            IndexExpr::Tid(k) => *tid.get(*k)? as i64,
            IndexExpr::Neg(a) => -a.eval(tid, lookup)?,
            IndexExpr::Add(a, b) => a.eval(tid, lookup)? + b.eval(tid, lookup)?,
            IndexExpr::Sub(a, b) => a.eval(tid, lookup)? - b.eval(tid, lookup)?,
            IndexExpr::Mul(a, b) => a.eval(tid, lookup)? * b.eval(tid, lookup)?,
            IndexExpr::FloorDiv(a, b) => {
                let d = b.eval(tid, lookup)?;
                if d == 0 {
                    return None;
                }
                a.eval(tid, lookup)?.div_euclid(d)
            }
            IndexExpr::Mod(a, b) => {
                let d = b.eval(tid, lookup)?;
                if d == 0 {
                    return None;
                }
                a.eval(tid, lookup)?.rem_euclid(d)
            }
        })
    }

    /// True when the expression contains no free loop variables or tids.
    pub fn is_closed(&self) -> bool {
        match self {
            IndexExpr::Const(_) => true,
            IndexExpr::Var(_) | IndexExpr::Tid(_) => false,
            IndexExpr::Neg(a) => a.is_closed(),
            IndexExpr::Add(a, b)
            | IndexExpr::Sub(a, b)
            | IndexExpr::Mul(a, b)
            | IndexExpr::FloorDiv(a, b)
            | IndexExpr::Mod(a, b) => a.is_closed() && b.is_closed(),
        }
    }

    /// Affine in tids and loop variables: products need a constant side and
    /// division/modulo only apply to constant operands.
    pub fn is_affine(&self) -> bool {
        match self {
            IndexExpr::Const(_) | IndexExpr::Var(_) | IndexExpr::Tid(_) => true,
            IndexExpr::Neg(a) => a.is_affine(),
            IndexExpr::Add(a, b) | IndexExpr::Sub(a, b) => a.is_affine() && b.is_affine(),
            IndexExpr::Mul(a, b) => (a.is_closed() && b.is_affine()) || (b.is_closed() && a.is_affine()),
            IndexExpr::FloorDiv(a, b) | IndexExpr::Mod(a, b) => a.is_closed() && b.is_closed(),
        }
    }

    /// Replaces tid components with constants.
    pub fn subst_tid(&self, tid: &[usize]) -> IndexExpr {
        let r = |e: &IndexExpr| Box::new(e.subst_tid(tid));
        match self {
            IndexExpr::Tid(k) => match tid.get(*k) {
                Some(v) => IndexExpr::Const(*v as i64),
                None => self.clone(),
            },
            IndexExpr::Const(_) | IndexExpr::Var(_) => self.clone(),
            IndexExpr::Neg(a) => IndexExpr::Neg(r(a)),
            IndexExpr::Add(a, b) => IndexExpr::Add(r(a), r(b)),
            IndexExpr::Sub(a, b) => IndexExpr::Sub(r(a), r(b)),
            IndexExpr::Mul(a, b) => IndexExpr::Mul(r(a), r(b)),
            IndexExpr::FloorDiv(a, b) => IndexExpr::FloorDiv(r(a), r(b)),
            IndexExpr::Mod(a, b) => IndexExpr::Mod(r(a), r(b)),
        }
    }

    pub fn max_tid(&self) -> Option<usize> {
        match self {
            IndexExpr::Tid(k) => Some(*k),
            IndexExpr::Const(_) | IndexExpr::Var(_) => None,
            IndexExpr::Neg(a) => a.max_tid(),
            IndexExpr::Add(a, b)
            | IndexExpr::Sub(a, b)
            | IndexExpr::Mul(a, b)
            | IndexExpr::FloorDiv(a, b)
            | IndexExpr::Mod(a, b) => a.max_tid().max(b.max_tid()),
        }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            IndexExpr::Var(v) => out.push(v.clone()),
            IndexExpr::Const(_) | IndexExpr::Tid(_) => {}
            IndexExpr::Neg(a) => a.vars(out),
            IndexExpr::Add(a, b)
            | IndexExpr::Sub(a, b)
            | IndexExpr::Mul(a, b)
            | IndexExpr::FloorDiv(a, b)
            | IndexExpr::Mod(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRef {
    pub name: String,
    pub indices: Vec<IndexExpr>,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SliceRange {
    Full,
    /// Half-open `[lo, hi)`.
    Range(IndexExpr, IndexExpr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LValue {
    pub name: String,
    pub ranges: Option<Vec<SliceRange>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Max,
    Min,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Max => "max",
            BinOp::Min => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExprKind {
    Get(StreamRef),
    /// Unwraps a ready-future. Only ever inserted by the compiler.
    Await(Box<Expr>),
    Matmul(Box<Expr>, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Reduce {
        op: ReduceOp,
        axis: usize,
        arg: Box<Expr>,
    },
    AllReduce {
        op: ReduceOp,
        arg: Box<Expr>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Slice {
        name: String,
        ranges: Vec<SliceRange>,
    },
    Int(i64),
    Float(f64),
    /// Parameter or local variable.
    Var(String),
    Tid(usize),
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self {
            kind,
            span: SourceSpan::default(),
        }
    }

    pub fn with_span(kind: ExprKind, span: SourceSpan) -> Self {
        Self { kind, span }
    }

    /// Direct sub-expressions, left to right.
    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Await(a) => vec![a],
            ExprKind::Matmul(a, b) | ExprKind::Binary(_, a, b) => vec![a, b],
            ExprKind::Reduce { arg, .. } | ExprKind::AllReduce { arg, .. } => vec![arg],
            ExprKind::Call { args, .. } => args.iter().collect(),
            ExprKind::Get(_)
            | ExprKind::Slice { .. }
            | ExprKind::Int(_)
            | ExprKind::Float(_)
            | ExprKind::Var(_)
            | ExprKind::Tid(_) => vec![],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            ExprKind::Await(a) => vec![a.as_mut()],
            ExprKind::Matmul(a, b) | ExprKind::Binary(_, a, b) => vec![a.as_mut(), b.as_mut()],
            ExprKind::Reduce { arg, .. } | ExprKind::AllReduce { arg, .. } => vec![arg.as_mut()],
            ExprKind::Call { args, .. } => args.iter_mut().collect(),
            _ => vec![],
        }
    }

    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    pub fn contains_get(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e.kind, ExprKind::Get(_)));
        found
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StmtKind {
    For {
        iv: String,
        lo: i64,
        hi: i64,
        body: Vec<Stmt>,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    Put {
        stream: StreamRef,
        value: Expr,
    },
    /// Local declaration. Without a type the type is inferred from `init`.
    Local {
        name: String,
        ty: Option<TensorType>,
        init: Option<Expr>,
    },
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Self {
            kind,
            span: SourceSpan::default(),
        }
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::For { .. } => vec![],
            StmtKind::Assign { value, .. } | StmtKind::Put { value, .. } => vec![value],
            StmtKind::Local { init, .. } => init.iter().collect(),
        }
    }
}

/// Visits every statement, depth first, with its index path from the body root.
pub fn walk_stmts<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&[usize], &'a Stmt)) {
    fn go<'a>(body: &'a [Stmt], path: &mut Vec<usize>, f: &mut dyn FnMut(&[usize], &'a Stmt)) {
        for (i, s) in body.iter().enumerate() {
            path.push(i);
            f(path, s);
            if let StmtKind::For { body, .. } = &s.kind {
                go(body, path, f);
            }
            path.pop();
        }
    }
    go(body, &mut Vec::new(), f)
}

/// Substitutes task-id references in a statement list with a concrete coordinate.
pub fn subst_tid_body(body: &[Stmt], tid: &[usize]) -> Vec<Stmt> {
    body.iter().map(|s| subst_tid_stmt(s, tid)).collect()
}

fn subst_tid_stmt(s: &Stmt, tid: &[usize]) -> Stmt {
    let kind = match &s.kind {
        StmtKind::For { iv, lo, hi, body } => StmtKind::For {
            iv: iv.clone(),
            lo: *lo,
            hi: *hi,
            body: subst_tid_body(body, tid),
        },
        StmtKind::Assign { target, value } => StmtKind::Assign {
            target: LValue {
                name: target.name.clone(),
                ranges: target.ranges.as_ref().map(|r| subst_ranges(r, tid)),
            },
            value: subst_tid_expr(value, tid),
        },
        StmtKind::Put { stream, value } => StmtKind::Put {
            stream: subst_stream(stream, tid),
            value: subst_tid_expr(value, tid),
        },
        StmtKind::Local { name, ty, init } => StmtKind::Local {
            name: name.clone(),
            ty: ty.clone(),
            init: init.as_ref().map(|e| subst_tid_expr(e, tid)),
        },
    };
    Stmt { kind, span: s.span }
}

fn subst_stream(r: &StreamRef, tid: &[usize]) -> StreamRef {
    StreamRef {
        name: r.name.clone(),
        indices: r.indices.iter().map(|i| i.subst_tid(tid)).collect(),
        span: r.span,
    }
}

fn subst_ranges(ranges: &[SliceRange], tid: &[usize]) -> Vec<SliceRange> {
    ranges
        .iter()
        .map(|r| match r {
            SliceRange::Full => SliceRange::Full,
            SliceRange::Range(lo, hi) => SliceRange::Range(lo.subst_tid(tid), hi.subst_tid(tid)),
        })
        .collect()
}

pub fn subst_tid_expr(e: &Expr, tid: &[usize]) -> Expr {
    let kind = match &e.kind {
        ExprKind::Tid(k) => match tid.get(*k) {
            Some(v) => ExprKind::Int(*v as i64),
            None => ExprKind::Tid(*k),
        },
        ExprKind::Get(r) => ExprKind::Get(subst_stream(r, tid)),
        ExprKind::Slice { name, ranges } => ExprKind::Slice {
            name: name.clone(),
            ranges: subst_ranges(ranges, tid),
        },
        _ => {
            let mut out = e.clone();
            for c in out.children_mut() {
                *c = subst_tid_expr(c, tid);
            }
            return out;
        }
    };
    Expr { kind, span: e.span }
}

/// Erases stream instance indices so that bodies differing only in which
/// stream instance they touch compare equal.
pub fn erase_stream_indices(body: &[Stmt]) -> Vec<Stmt> {
    fn expr(e: &Expr) -> Expr {
        match &e.kind {
            ExprKind::Get(r) => Expr::with_span(
                ExprKind::Get(StreamRef {
                    name: r.name.clone(),
                    indices: vec![],
                    span: r.span,
                }),
                e.span,
            ),
            _ => {
                let mut out = e.clone();
                for c in out.children_mut() {
                    *c = expr(c);
                }
                out
            }
        }
    }
    body.iter()
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::For { iv, lo, hi, body } => StmtKind::For {
                    iv: iv.clone(),
                    lo: *lo,
                    hi: *hi,
                    body: erase_stream_indices(body),
                },
                StmtKind::Assign { target, value } => StmtKind::Assign {
                    target: target.clone(),
                    value: expr(value),
                },
                StmtKind::Put { stream, value } => StmtKind::Put {
                    stream: StreamRef {
                        name: stream.name.clone(),
                        indices: vec![],
                        span: stream.span,
                    },
                    value: expr(value),
                },
                StmtKind::Local { name, ty, init } => StmtKind::Local {
                    name: name.clone(),
                    ty: ty.clone(),
                    init: init.as_ref().map(expr),
                },
            };
            Stmt { kind, span: s.span }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitwidths_match_kinds() {
        let widths: Vec<u32> = ElemType::ALL.iter().map(|e| e.bitwidth()).collect();
        assert_eq!(widths, vec![4, 8, 16, 32, 16, 32]);
    }

    #[test]
    fn layout_strings() {
        assert_eq!(
            LayoutType::parse("S1S2").unwrap().0,
            vec![AxisLayout::S(1), AxisLayout::S(2)]
        );
        assert_eq!(
            LayoutType::parse("RS0").unwrap().0,
            vec![AxisLayout::R, AxisLayout::S(0)]
        );
        assert_eq!(LayoutType::parse("S").unwrap().0, vec![AxisLayout::S(0)]);
        assert!(LayoutType::parse("SR").is_err());
        assert!(LayoutType::parse("X").is_err());
        assert_eq!(LayoutType::parse("S1S0").unwrap().to_string(), "S1S0");
    }

    #[test]
    fn grid_points_are_row_major() {
        assert_eq!(
            grid_points(&[2, 2]),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert_eq!(grid_points(&[]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn spans_do_not_affect_equality() {
        let a = Expr::with_span(ExprKind::Int(1), SourceSpan::new(1, 1, 1));
        let b = Expr::with_span(ExprKind::Int(1), SourceSpan::new(9, 9, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn affine_index_classification() {
        let tid = IndexExpr::Tid(0);
        let two = IndexExpr::Const(2);
        assert!(IndexExpr::Mul(Box::new(two.clone()), Box::new(tid.clone())).is_affine());
        assert!(!IndexExpr::Mul(Box::new(tid.clone()), Box::new(IndexExpr::Var("i".into()))).is_affine());
        assert!(!IndexExpr::Mod(Box::new(tid), Box::new(two)).is_affine());
    }
}
