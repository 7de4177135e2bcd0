use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::LayoutTypeError;
use crate::ir::*;

/// Pending reductions, each with the device axes it still has to combine over.
pub type Effects = BTreeMap<ReduceOp, BTreeSet<u32>>;

/// Shape, layout and effects synthesized for an expression.
///
/// A label of `None` marks a dimension whose distribution is not determined
/// by any parameter (literals, stream payloads, untouched locals); it joins
/// with anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedValue {
    pub elem: Option<ElemType>,
    pub shape: Vec<usize>,
    pub labels: Vec<Option<AxisLayout>>,
    pub effects: Effects,
}

impl TypedValue {
    fn scalar(elem: Option<ElemType>) -> Self {
        Self {
            elem,
            shape: vec![],
            labels: vec![],
            effects: Effects::new(),
        }
    }

    fn free(elem: Option<ElemType>, shape: Vec<usize>) -> Self {
        let labels = vec![None; shape.len()];
        Self {
            elem,
            shape,
            labels,
            effects: Effects::new(),
        }
    }

    /// Layout with undetermined dimensions read as replicated.
    pub fn layout(&self) -> LayoutType {
        LayoutType(self.labels.iter().map(|l| l.unwrap_or(AxisLayout::R)).collect())
    }

    pub fn effect_set(&self) -> EffectSet {
        EffectSet(self.effects.keys().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllReduceSite {
    pub param: String,
    /// Statement index path from the task body root.
    pub path: Vec<usize>,
    pub op: ReduceOp,
    /// Device axes whose instances must be combined.
    pub axes: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaskLayoutInfo {
    /// Inferred local types, including layout, at their last assignment.
    pub locals: BTreeMap<String, String>,
    pub allreduces: Vec<AllReduceSite>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayoutReport {
    pub tasks: BTreeMap<String, TaskLayoutInfo>,
}

impl LayoutReport {
    pub fn allreduce_axes(&self, task: &str, path: &[usize]) -> Option<&[u32]> {
        self.tasks
            .get(task)?
            .allreduces
            .iter()
            .find(|a| a.path == path)
            .map(|a| a.axes.as_slice())
    }
}

/// Pointwise join of two layouts of the same rank.
pub fn layout_join(l1: &LayoutType, l2: &LayoutType) -> Result<LayoutType, LayoutTypeError> {
    if l1.rank() != l2.rank() {
        return Err(LayoutTypeError::Shape {
            task: String::new(),
            detail: format!("cannot join layouts {l1} and {l2} of different rank"),
            span: SourceSpan::default(),
        });
    }
    let mut out = Vec::with_capacity(l1.rank());
    for (a, b) in l1.axes().iter().zip(l2.axes()) {
        match join_label(Some(*a), Some(*b)) {
            Ok(l) => out.push(l.unwrap_or(AxisLayout::R)),
            Err((x, y)) => {
                return Err(LayoutTypeError::AxisConflict {
                    task: String::new(),
                    a: x,
                    b: y,
                    span: SourceSpan::default(),
                })
            }
        }
    }
    Ok(LayoutType(out))
}

fn join_label(a: Option<AxisLayout>, b: Option<AxisLayout>) -> Result<Option<AxisLayout>, (u32, u32)> {
    use AxisLayout::*;
    Ok(match (a, b) {
        (None, x) | (x, None) => x,
        (Some(R), Some(R)) => Some(R),
        (Some(S(i)), Some(R)) | (Some(R), Some(S(i))) => Some(S(i)),
        (Some(S(i)), Some(S(j))) if i == j => Some(S(i)),
        (Some(S(i)), Some(S(j))) => return Err((i, j)),
    })
}

fn union_effects(a: &Effects, b: &Effects) -> Effects {
    let mut out = a.clone();
    for (op, axes) in b {
        out.entry(*op).or_default().extend(axes.iter().copied());
    }
    out
}

fn fmt_labels(labels: &[Option<AxisLayout>]) -> String {
    labels
        .iter()
        .map(|l| match l {
            Some(a) => a.to_string(),
            None => "_".into(),
        })
        .collect()
}

/// Checks every task's layouts and reduction effects. Tasks are checked
/// independently, so the report does not depend on task order.
pub fn check_layouts(p: &Program) -> Result<LayoutReport, LayoutTypeError> {
    let mut report = LayoutReport::default();
    for t in &p.tasks {
        let mut c = TaskChecker {
            p,
            task: t,
            ivs: Vec::new(),
            info: TaskLayoutInfo::default(),
        };
        let mut env = BTreeMap::new();
        for prm in &t.params {
            env.insert(
                prm.name.clone(),
                TypedValue {
                    elem: Some(prm.ty.elem),
                    shape: t.local_shape(prm),
                    labels: prm.layout.axes().iter().map(|a| Some(*a)).collect(),
                    effects: Effects::new(),
                },
            );
        }
        c.block(&t.body, &mut env, &mut Vec::new())?;
        report.tasks.insert(t.name.clone(), c.info);
    }
    Ok(report)
}

type Env = BTreeMap<String, TypedValue>;

struct TaskChecker<'a> {
    p: &'a Program,
    task: &'a TaskDef,
    /// Loop variables with a representative value (the lower bound).
    ivs: Vec<(String, i64)>,
    info: TaskLayoutInfo,
}

impl<'a> TaskChecker<'a> {
    fn shape_err(&self, span: SourceSpan, detail: String) -> LayoutTypeError {
        LayoutTypeError::Shape {
            task: self.task.name.clone(),
            detail,
            span,
        }
    }

    fn join(&self, a: &TypedValue, b: &TypedValue, span: SourceSpan) -> Result<TypedValue, LayoutTypeError> {
        let elem = a.elem.or(b.elem);
        let effects = union_effects(&a.effects, &b.effects);
        if a.shape.is_empty() {
            return Ok(TypedValue {
                elem,
                effects,
                ..b.clone()
            });
        }
        if b.shape.is_empty() {
            return Ok(TypedValue {
                elem,
                effects,
                ..a.clone()
            });
        }
        if a.shape != b.shape {
            return Err(self.shape_err(
                span,
                format!("elementwise operands have shapes {:?} and {:?}", a.shape, b.shape),
            ));
        }
        let mut labels = Vec::with_capacity(a.labels.len());
        for (x, y) in a.labels.iter().zip(&b.labels) {
            labels.push(join_label(*x, *y).map_err(|(i, j)| LayoutTypeError::AxisConflict {
                task: self.task.name.clone(),
                a: i,
                b: j,
                span,
            })?);
        }
        Ok(TypedValue {
            elem,
            shape: a.shape.clone(),
            labels,
            effects,
        })
    }

    fn eval_index(&self, ix: &IndexExpr, span: SourceSpan) -> Result<i64, LayoutTypeError> {
        let tid = vec![0usize; self.task.mapping.len()];
        let lookup = |n: &str| self.ivs.iter().rev().find(|(v, _)| v == n).map(|(_, x)| *x);
        ix.eval(&tid, &lookup)
            .ok_or_else(|| self.shape_err(span, "slice bound does not evaluate".into()))
    }

    fn slice_shape(
        &self,
        base: &[usize],
        ranges: &[SliceRange],
        span: SourceSpan,
    ) -> Result<Vec<usize>, LayoutTypeError> {
        if ranges.len() != base.len() {
            return Err(self.shape_err(
                span,
                format!("{} slice ranges for a rank-{} value", ranges.len(), base.len()),
            ));
        }
        let mut out = Vec::new();
        for (r, &dim) in ranges.iter().zip(base) {
            match r {
                SliceRange::Full => out.push(dim),
                SliceRange::Range(lo, hi) => {
                    let (l, h) = (self.eval_index(lo, span)?, self.eval_index(hi, span)?);
                    if l < 0 || h < l || h as usize > dim {
                        return Err(self.shape_err(span, format!("slice {l}:{h} out of bounds for extent {dim}")));
                    }
                    out.push((h - l) as usize);
                }
            }
        }
        Ok(out)
    }

    fn expr(&mut self, e: &Expr, env: &Env) -> Result<TypedValue, LayoutTypeError> {
        let span = e.span;
        let task = self.task.name.clone();
        Ok(match &e.kind {
            ExprKind::Int(_) | ExprKind::Tid(_) => TypedValue::scalar(None),
            ExprKind::Float(_) => TypedValue::scalar(None),
            ExprKind::Var(name) => env
                .get(name)
                .cloned()
                .ok_or_else(|| self.shape_err(span, format!("unknown value `{name}`")))?,
            ExprKind::Slice { name, ranges } => {
                let base = env
                    .get(name)
                    .cloned()
                    .ok_or_else(|| self.shape_err(span, format!("unknown value `{name}`")))?;
                let shape = self.slice_shape(&base.shape, ranges, span)?;
                TypedValue { shape, ..base }
            }
            ExprKind::Get(r) => {
                let decl = self
                    .p
                    .stream(&r.name)
                    .ok_or_else(|| self.shape_err(span, format!("unknown stream `{}`", r.name)))?;
                TypedValue::free(Some(decl.ty.elem.elem), decl.ty.elem.shape.clone())
            }
            ExprKind::Await(inner) => self.expr(inner, env)?,
            ExprKind::Binary(_, a, b) => {
                let (a, b) = (self.expr(a, env)?, self.expr(b, env)?);
                self.join(&a, &b, span)?
            }
            ExprKind::Matmul(a, b) => {
                let (a, b) = (self.expr(a, env)?, self.expr(b, env)?);
                if a.shape.len() != 2 || b.shape.len() != 2 {
                    return Err(self.shape_err(span, format!("matmul of shapes {:?} and {:?}", a.shape, b.shape)));
                }
                let (ka, kb) = (a.labels[1], b.labels[0]);
                if let (Some(x), Some(y)) = (ka, kb) {
                    if x != y {
                        return Err(LayoutTypeError::ContractionMismatch {
                            task,
                            lhs: fmt_labels(&a.labels),
                            rhs: fmt_labels(&b.labels),
                            span,
                        });
                    }
                }
                if a.shape[1] != b.shape[0] {
                    return Err(self.shape_err(span, format!("matmul of shapes {:?} and {:?}", a.shape, b.shape)));
                }
                let mut effects = union_effects(&a.effects, &b.effects);
                if let Some(AxisLayout::S(ax)) = ka.or(kb) {
                    effects.entry(ReduceOp::Add).or_default().insert(ax);
                }
                TypedValue {
                    elem: a.elem.or(b.elem),
                    shape: vec![a.shape[0], b.shape[1]],
                    labels: vec![a.labels[0], b.labels[1]],
                    effects,
                }
            }
            ExprKind::Reduce { op, axis, arg } => {
                let mut v = self.expr(arg, env)?;
                if *axis >= v.shape.len() {
                    return Err(self.shape_err(span, format!("reduce axis {axis} of a rank-{} value", v.shape.len())));
                }
                if let Some(AxisLayout::S(ax)) = v.labels[*axis] {
                    v.effects.entry(*op).or_default().insert(ax);
                }
                v.shape.remove(*axis);
                v.labels.remove(*axis);
                v
            }
            ExprKind::AllReduce { op, arg } => {
                let mut v = self.expr(arg, env)?;
                if v.effects.remove(op).is_none() {
                    return Err(LayoutTypeError::EffectMismatch { task, op: *op, span });
                }
                v
            }
            ExprKind::Call { args, name } => {
                let vals = args.iter().map(|a| self.expr(a, env)).collect::<Result<Vec<_>, _>>()?;
                let Some(first) = vals.first() else {
                    return Err(self.shape_err(span, format!("kernel `{name}` needs an operand")));
                };
                let mut out = first.clone();
                for v in &vals[1..] {
                    out.effects = union_effects(&out.effects, &v.effects);
                }
                out
            }
        })
    }

    fn block(&mut self, body: &[Stmt], env: &mut Env, path: &mut Vec<usize>) -> Result<(), LayoutTypeError> {
        for (i, s) in body.iter().enumerate() {
            path.push(i);
            self.stmt(s, env, path)?;
            path.pop();
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Env, path: &mut Vec<usize>) -> Result<(), LayoutTypeError> {
        let span = s.span;
        match &s.kind {
            StmtKind::For { iv, lo, body, .. } => {
                self.ivs.push((iv.clone(), *lo));
                let mut rounds = 0;
                loop {
                    let before = env.clone();
                    let mut inner = env.clone();
                    let saved = self.info.allreduces.len();
                    self.block(body, &mut inner, path)?;
                    let mut changed = false;
                    for (k, v) in env.iter_mut() {
                        if let Some(nv) = inner.get(k) {
                            let joined = self.join_same(v, nv, span)?;
                            if joined != *v {
                                *v = joined;
                                changed = true;
                            }
                        }
                    }
                    rounds += 1;
                    if !changed || rounds > 16 || *env == before {
                        break;
                    }
                    self.info.allreduces.truncate(saved);
                }
                self.ivs.pop();
            }
            StmtKind::Local { name, ty, init } => {
                let v = match (ty, init) {
                    (Some(ty), Some(e)) => {
                        let v = self.expr(e, env)?;
                        if !v.shape.is_empty() && v.shape != ty.shape {
                            return Err(self.shape_err(
                                span,
                                format!("`{name}` declared {:?} but initialized with {:?}", ty.shape, v.shape),
                            ));
                        }
                        if v.shape.is_empty() {
                            TypedValue {
                                elem: Some(ty.elem),
                                effects: v.effects,
                                ..TypedValue::free(None, ty.shape.clone())
                            }
                        } else {
                            TypedValue {
                                elem: Some(ty.elem),
                                ..v
                            }
                        }
                    }
                    (Some(ty), None) => TypedValue::free(Some(ty.elem), ty.shape.clone()),
                    (None, Some(e)) => self.expr(e, env)?,
                    (None, None) => return Err(self.shape_err(span, format!("`{name}` has no type"))),
                };
                self.record_local(name, &v);
                env.insert(name.clone(), v);
            }
            StmtKind::Put { stream, value } => {
                let v = self.expr(value, env)?;
                if let Some(decl) = self.p.stream(&stream.name) {
                    if !v.shape.is_empty() && v.shape != decl.ty.elem.shape {
                        return Err(self.shape_err(
                            span,
                            format!(
                                "put of shape {:?} into stream `{}` of {}",
                                v.shape, stream.name, decl.ty.elem
                            ),
                        ));
                    }
                }
            }
            StmtKind::Assign { target, value } => {
                let v = self.expr(value, env)?;
                if let Some(prm) = self.task.param(&target.name) {
                    self.check_output(prm, target, &v, env, span)?;
                    if let ExprKind::AllReduce { op, arg } = &value.kind {
                        let pre = self.expr(arg, env)?;
                        let axes = pre
                            .effects
                            .get(op)
                            .map(|a| a.iter().copied().collect())
                            .unwrap_or_default();
                        self.info.allreduces.push(AllReduceSite {
                            param: prm.name.clone(),
                            path: path.clone(),
                            op: *op,
                            axes,
                        });
                    }
                } else {
                    let cur = env
                        .get(&target.name)
                        .cloned()
                        .ok_or_else(|| self.shape_err(span, format!("unknown value `{}`", target.name)))?;
                    let nv = match &target.ranges {
                        Some(r) => {
                            let sh = self.slice_shape(&cur.shape, r, span)?;
                            if !v.shape.is_empty() && v.shape != sh {
                                return Err(
                                    self.shape_err(span, format!("assigning {:?} into a {:?} slice", v.shape, sh))
                                );
                            }
                            let widened = TypedValue {
                                shape: cur.shape.clone(),
                                labels: if v.shape.is_empty() {
                                    vec![None; cur.shape.len()]
                                } else {
                                    v.labels.clone()
                                },
                                ..v
                            };
                            self.join_same(&cur, &widened, span)?
                        }
                        None => {
                            if !v.shape.is_empty() && v.shape != cur.shape {
                                return Err(self.shape_err(
                                    span,
                                    format!("`{}` has shape {:?}, assigned {:?}", target.name, cur.shape, v.shape),
                                ));
                            }
                            if v.shape.is_empty() {
                                TypedValue {
                                    elem: cur.elem.or(v.elem),
                                    effects: v.effects,
                                    ..TypedValue::free(None, cur.shape.clone())
                                }
                            } else {
                                TypedValue {
                                    elem: cur.elem.or(v.elem),
                                    ..v
                                }
                            }
                        }
                    };
                    self.record_local(&target.name, &nv);
                    env.insert(target.name.clone(), nv);
                }
            }
        }
        Ok(())
    }

    /// Join used at control-flow merges and partial updates: labels and
    /// effects join, shape must agree.
    fn join_same(&self, a: &TypedValue, b: &TypedValue, span: SourceSpan) -> Result<TypedValue, LayoutTypeError> {
        if a.shape != b.shape {
            return Err(self.shape_err(span, format!("value changes shape from {:?} to {:?}", a.shape, b.shape)));
        }
        self.join(a, b, span)
    }

    fn record_local(&mut self, name: &str, v: &TypedValue) {
        let ty = match v.elem {
            Some(e) => TensorType::new(e, v.shape.clone()).to_string(),
            None => format!("?{:?}", v.shape),
        };
        let mut s = format!("{ty} @ {}", fmt_labels(&v.labels));
        if !v.effects.is_empty() {
            let ops: Vec<&str> = v.effects.keys().map(|o| o.symbol()).collect();
            s.push_str(&format!(" ! {{{}}}", ops.join(",")));
        }
        self.info.locals.insert(name.to_string(), s);
    }

    fn check_output(
        &self,
        prm: &Param,
        target: &LValue,
        v: &TypedValue,
        env: &Env,
        span: SourceSpan,
    ) -> Result<(), LayoutTypeError> {
        let task = self.task.name.clone();
        if !v.effects.is_empty() {
            return Err(LayoutTypeError::PendingEffect {
                task,
                param: prm.name.clone(),
                ops: v.effects.keys().copied().collect(),
                span,
            });
        }
        let local = &env[&prm.name].shape;
        let dest = match &target.ranges {
            Some(r) => self.slice_shape(local, r, span)?,
            None => local.clone(),
        };
        if v.shape.is_empty() {
            return Ok(());
        }
        if v.shape != dest {
            return Err(self.shape_err(
                span,
                format!("`{}` expects {:?}, assigned {:?}", prm.name, dest, v.shape),
            ));
        }
        let mismatch = v
            .labels
            .iter()
            .zip(prm.layout.axes())
            .any(|(l, d)| matches!(l, Some(x) if x != d));
        if mismatch {
            return Err(LayoutTypeError::LayoutMismatch {
                task,
                param: prm.name.clone(),
                declared: prm.layout.to_string(),
                found: fmt_labels(&v.labels),
                span,
            });
        }
        Ok(())
    }
}
