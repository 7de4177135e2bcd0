use std::collections::{BTreeSet, HashMap, HashSet};

use super::diag::Diagnostic;
use super::kernel::KernelRegistry;
use super::types::*;

/// Structural checks over a parsed program. Returns an empty list when the
/// program is structurally valid.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    validate_program_with(p, &KernelRegistry::builtin())
}

pub fn validate_program_with(p: &Program, kernels: &KernelRegistry) -> Vec<Diagnostic> {
    let mut v = Validator {
        p,
        kernels,
        diags: Vec::new(),
    };
    v.run();
    v.diags
}

struct Validator<'a> {
    p: &'a Program,
    kernels: &'a KernelRegistry,
    diags: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn err(&mut self, code: &str, span: SourceSpan, msg: String) {
        self.diags.push(Diagnostic::error(code, Some(span), msg));
    }

    fn run(&mut self) {
        let mut seen = HashSet::new();
        for s in &self.p.streams {
            if !seen.insert(s.name.as_str()) {
                self.err("DUPLICATE_NAME", s.span, format!("stream `{}` declared twice", s.name));
            }
            self.check_stream(s);
        }
        let mut task_names = HashSet::new();
        let mut buffers: HashMap<&str, &TensorType> = HashMap::new();
        for t in &self.p.tasks {
            if !task_names.insert(t.name.as_str()) {
                self.err("DUPLICATE_NAME", t.span, format!("task `{}` defined twice", t.name));
            }
            for prm in &t.params {
                match buffers.get(prm.name.as_str()) {
                    Some(ty) if **ty != prm.ty => self.err(
                        "PARAM_TYPE",
                        prm.span,
                        format!(
                            "parameter `{}` has type {} but another task declares it as {}",
                            prm.name, prm.ty, ty
                        ),
                    ),
                    Some(_) => {}
                    None => {
                        buffers.insert(&prm.name, &prm.ty);
                    }
                }
            }
            self.check_task(t);
        }
    }

    fn check_stream(&mut self, s: &StreamDecl) {
        if s.grid.contains(&0) {
            self.err("SHAPE", s.span, format!("stream `{}` has a zero grid extent", s.name));
        }
        if s.ty.elem.shape.contains(&0) {
            self.err(
                "SHAPE",
                s.span,
                format!("stream `{}` element has a zero dimension", s.name),
            );
        }
        if s.ty.depth == 0 {
            self.err("SHAPE", s.span, format!("stream `{}` must have depth >= 1", s.name));
        }
        let n = s.ty.elem.numel();
        if s.ty.pack == 0 || !n.is_multiple_of(s.ty.pack) {
            self.err(
                "PACK",
                s.span,
                format!(
                    "pack factor {} of stream `{}` does not divide its {} elements per transfer",
                    s.ty.pack, s.name, n
                ),
            );
        }
    }

    fn check_task(&mut self, t: &TaskDef) {
        if t.mapping.is_empty() || t.mapping.contains(&0) {
            self.err(
                "SHAPE",
                t.span,
                format!("task `{}` mapping extents must be >= 1", t.name),
            );
        }
        let mut names = HashSet::new();
        for prm in &t.params {
            if !names.insert(prm.name.as_str()) {
                self.err("DUPLICATE_NAME", prm.span, format!("parameter `{}` repeated", prm.name));
            }
            self.check_param(t, prm);
        }
        let mut scope = Scope {
            tensors: t.params.iter().map(|p| p.name.clone()).collect(),
            ivs: Vec::new(),
        };
        self.check_body(t, &t.body, &mut scope);
    }

    fn check_param(&mut self, t: &TaskDef, prm: &Param) {
        if prm.ty.shape.contains(&0) {
            self.err(
                "SHAPE",
                prm.span,
                format!("parameter `{}` has a zero dimension", prm.name),
            );
        }
        if prm.layout.rank() != prm.ty.rank() {
            self.err(
                "LAYOUT_RANK",
                prm.span,
                format!(
                    "layout `{}` has {} axes but `{}` has rank {}",
                    prm.layout,
                    prm.layout.rank(),
                    prm.name,
                    prm.ty.rank()
                ),
            );
            return;
        }
        let mut used = BTreeSet::new();
        for (dim, axis) in prm.layout.sharded_axes() {
            if !used.insert(axis) {
                self.err(
                    "DUPLICATE_AXIS",
                    prm.span,
                    format!(
                        "device axis {axis} is used by more than one dimension of `{}`",
                        prm.name
                    ),
                );
            }
            let Some(&ext) = t.mapping.get(axis as usize) else {
                self.err(
                    "AXIS_RANGE",
                    prm.span,
                    format!(
                        "layout of `{}` references device axis {axis} but task `{}` has a {}-d mapping",
                        prm.name,
                        t.name,
                        t.mapping.len()
                    ),
                );
                continue;
            };
            let size = prm.ty.shape[dim];
            if ext > 0 && !size.is_multiple_of(ext) {
                self.err(
                    "DIVISIBILITY",
                    prm.span,
                    format!(
                        "dimension {dim} of `{}` ({size}) is not divisible by mapping extent {ext}",
                        prm.name
                    ),
                );
            }
        }
    }

    fn check_body(&mut self, t: &TaskDef, body: &[Stmt], scope: &mut Scope) {
        let mark = scope.tensors.len();
        for s in body {
            match &s.kind {
                StmtKind::For { iv, lo, hi, body } => {
                    if hi < lo {
                        self.err("SHAPE", s.span, format!("loop `{iv}` has an empty range"));
                    }
                    scope.ivs.push(iv.clone());
                    self.check_body(t, body, scope);
                    scope.ivs.pop();
                }
                StmtKind::Assign { target, value } => {
                    self.check_expr(t, value, scope);
                    if !scope.tensors.contains(&target.name) {
                        self.err(
                            "UNKNOWN_NAME",
                            s.span,
                            format!("assignment to undeclared `{}`", target.name),
                        );
                    }
                    if let Some(r) = &target.ranges {
                        self.check_ranges(t, r, scope, s.span);
                    }
                    if let ExprKind::AllReduce { arg, .. } = &value.kind {
                        if !scope.ivs.is_empty() {
                            self.err(
                                "ALLREDUCE_POSITION",
                                value.span,
                                "allreduce may not appear inside a loop".into(),
                            );
                        }
                        if t.param(&target.name).is_none() {
                            self.err(
                                "ALLREDUCE_POSITION",
                                value.span,
                                "allreduce result must be assigned directly to a task parameter".into(),
                            );
                        }
                        self.forbid_nested_allreduce(arg);
                    } else {
                        self.forbid_nested_allreduce(value);
                    }
                }
                StmtKind::Put { stream, value } => {
                    self.check_stream_ref(t, stream, scope);
                    self.check_expr(t, value, scope);
                    self.forbid_nested_allreduce(value);
                }
                StmtKind::Local { name, ty, init } => {
                    if let Some(e) = init {
                        self.check_expr(t, e, scope);
                        self.forbid_nested_allreduce(e);
                    }
                    if ty.is_none() && init.is_none() {
                        self.err(
                            "SHAPE",
                            s.span,
                            format!("local `{name}` needs a type or an initializer"),
                        );
                    }
                    if let Some(ty) = ty {
                        if ty.shape.contains(&0) {
                            self.err("SHAPE", s.span, format!("local `{name}` has a zero dimension"));
                        }
                    }
                    scope.tensors.push(name.clone());
                }
            }
        }
        scope.tensors.truncate(mark);
    }

    fn forbid_nested_allreduce(&mut self, e: &Expr) {
        let mut spans = Vec::new();
        e.walk(&mut |x| {
            if matches!(x.kind, ExprKind::AllReduce { .. }) {
                spans.push(x.span);
            }
        });
        for sp in spans {
            self.err(
                "ALLREDUCE_POSITION",
                sp,
                "allreduce may only appear as the whole right-hand side of a parameter assignment".into(),
            );
        }
    }

    fn check_expr(&mut self, t: &TaskDef, e: &Expr, scope: &Scope) {
        let span = e.span;
        match &e.kind {
            ExprKind::Get(r) => self.check_stream_ref(t, r, scope),
            ExprKind::Var(name) => {
                if !scope.tensors.contains(name) {
                    self.err("UNKNOWN_NAME", span, format!("unknown tensor `{name}`"));
                }
            }
            ExprKind::Slice { name, ranges } => {
                if !scope.tensors.contains(name) {
                    self.err("UNKNOWN_NAME", span, format!("unknown tensor `{name}`"));
                }
                self.check_ranges(t, ranges, scope, span);
            }
            ExprKind::Tid(k) => {
                if *k >= t.mapping.len() {
                    self.err(
                        "AXIS_RANGE",
                        span,
                        format!("tid({k}) exceeds the task's {}-d mapping", t.mapping.len()),
                    );
                }
            }
            ExprKind::Call { name, .. } if !self.kernels.implements(name) => {
                self.err(
                    "UNKNOWN_KERNEL",
                    span,
                    format!("no registered kernel implements `{name}`"),
                );
            }
            _ => {}
        }
        for c in e.children() {
            self.check_expr(t, c, scope);
        }
    }

    fn check_index(&mut self, t: &TaskDef, ix: &IndexExpr, scope: &Scope, span: SourceSpan) {
        if !ix.is_affine() {
            self.err(
                "NON_AFFINE",
                span,
                "index expression is not affine in tid and loop variables".into(),
            );
        }
        if let Some(k) = ix.max_tid() {
            if k >= t.mapping.len() {
                self.err(
                    "AXIS_RANGE",
                    span,
                    format!("tid({k}) exceeds the task's {}-d mapping", t.mapping.len()),
                );
            }
        }
        let mut vars = Vec::new();
        ix.vars(&mut vars);
        for v in vars {
            if !scope.ivs.contains(&v) {
                self.err("UNKNOWN_NAME", span, format!("`{v}` is not a loop variable in scope"));
            }
        }
    }

    fn check_ranges(&mut self, t: &TaskDef, ranges: &[SliceRange], scope: &Scope, span: SourceSpan) {
        for r in ranges {
            if let SliceRange::Range(lo, hi) = r {
                self.check_index(t, lo, scope, span);
                self.check_index(t, hi, scope, span);
            }
        }
    }

    fn check_stream_ref(&mut self, t: &TaskDef, r: &StreamRef, scope: &Scope) {
        let Some(decl) = self.p.stream(&r.name) else {
            self.err("UNKNOWN_STREAM", r.span, format!("unknown stream `{}`", r.name));
            return;
        };
        if decl.grid.len() != r.indices.len() {
            self.err(
                "STREAM_ARITY",
                r.span,
                format!(
                    "stream `{}` is a {}-d array but is indexed with {} indices",
                    r.name,
                    decl.grid.len(),
                    r.indices.len()
                ),
            );
        }
        for ix in &r.indices {
            self.check_index(t, ix, scope, r.span);
        }
    }
}

struct Scope {
    tensors: Vec<String>,
    ivs: Vec<String>,
}
