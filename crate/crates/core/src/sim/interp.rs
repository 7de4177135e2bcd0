//! Resumable interpreter for one shot.
//!
//! A process exposes one pending action at a time: receive from a port,
//! send to a port, or spend compute time. The runtime resolves the action
//! and the process advances. A statement performs its gets in pre-order,
//! then computes, then performs its put.

use std::collections::BTreeMap;

use super::value::*;
use super::CostModel;
use crate::ir::*;
use crate::vmg::ChannelId;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Port {
    Stream(String, Vec<usize>),
    Channel(ChannelId),
    /// Oracle only: partial result of the allreduce at a statement path.
    Partial(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Get(Port),
    Put(Port, TensorValue),
    Compute { cycles: u64, mac_cycles: u64 },
    Done,
}

/// What to do with an allreduce statement.
#[derive(Debug, Clone, PartialEq)]
pub enum AllReduceMode {
    /// Single-member group: assign the local value.
    Assign,
    /// Send the partial along a reduction channel.
    Send(ChannelId),
    /// Hand the partial to the runtime.
    Collect,
}

#[derive(Debug, Clone)]
struct Frame {
    idx: usize,
    iv: Option<(String, i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Gets,
    Compute(u64, u64),
    Put,
}

#[derive(Debug, Clone)]
struct StmtExec {
    gets: Vec<Port>,
    got: Vec<TensorValue>,
    phase: Phase,
    put: Option<(Port, TensorValue)>,
}

#[derive(Debug, Clone)]
pub struct TaskProc {
    body: Vec<Stmt>,
    coord: Vec<usize>,
    frames: Vec<Frame>,
    exec: Option<StmtExec>,
    pub locals: BTreeMap<String, TensorValue>,
    pub tiles: BTreeMap<String, TensorValue>,
    allreduce: BTreeMap<Vec<usize>, AllReduceMode>,
    phantom: bool,
    cost: CostModel,
    kernels: KernelRegistry,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone)]
#[error("runtime error: {0}")]
pub struct EvalError(pub String);

impl TaskProc {
    pub fn new(
        body: Vec<Stmt>,
        coord: Vec<usize>,
        tiles: BTreeMap<String, TensorValue>,
        allreduce: BTreeMap<Vec<usize>, AllReduceMode>,
        cost: CostModel,
        phantom: bool,
    ) -> Self {
        Self {
            body,
            coord,
            frames: vec![Frame { idx: 0, iv: None }],
            exec: None,
            locals: BTreeMap::new(),
            tiles,
            allreduce,
            phantom,
            cost,
            kernels: KernelRegistry::builtin(),
        }
    }

    fn list_at(&self, depth: usize) -> &[Stmt] {
        let mut list: &[Stmt] = &self.body;
        for f in &self.frames[..depth] {
            match &list[f.idx].kind {
                StmtKind::For { body, .. } => list = body,
                _ => unreachable!("frame parent is a loop"),
            }
        }
        list
    }

    fn lookup_iv(&self, name: &str) -> Option<i64> {
        self.frames.iter().rev().find_map(|f| match &f.iv {
            Some((n, cur, _)) if n == name => Some(*cur),
            _ => None,
        })
    }

    fn index(&self, e: &IndexExpr) -> Result<i64, EvalError> {
        e.eval(&self.coord, &|n| self.lookup_iv(n))
            .ok_or_else(|| EvalError(format!("cannot evaluate index {e:?}")))
    }

    fn port_of(&self, s: &StreamRef) -> Result<Port, EvalError> {
        let idx = s
            .indices
            .iter()
            .map(|e| self.index(e).map(|v| v.max(0) as usize))
            .collect::<Result<_, _>>()?;
        Ok(Port::Stream(s.name.clone(), idx))
    }

    fn path(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.idx).collect()
    }

    /// Advances past finished statements and loop ends; returns the
    /// current statement, or `None` when the body is done.
    fn settle(&mut self) -> Option<Stmt> {
        loop {
            let depth = self.frames.len().checked_sub(1)?;
            let idx = self.frames[depth].idx;
            let len = self.list_at(depth).len();
            if idx >= len {
                let f = self.frames.last_mut().unwrap();
                match &mut f.iv {
                    Some((_, cur, hi)) if *cur + 1 < *hi => {
                        *cur += 1;
                        f.idx = 0;
                    }
                    _ => {
                        self.frames.pop();
                        if let Some(p) = self.frames.last_mut() {
                            p.idx += 1;
                        }
                    }
                }
                continue;
            }
            let header = match &self.list_at(depth)[idx].kind {
                StmtKind::For { iv, lo, hi, .. } => Some((iv.clone(), *lo, *hi)),
                _ => None,
            };
            match header {
                Some((iv, lo, hi)) if lo < hi => self.frames.push(Frame {
                    idx: 0,
                    iv: Some((iv, lo, hi)),
                }),
                Some(_) => self.frames[depth].idx += 1,
                None => return Some(self.list_at(depth)[idx].clone()),
            }
        }
    }

    /// Next action; resolve it with [`TaskProc::resolve`].
    pub fn poll(&mut self) -> Result<Action, EvalError> {
        let Some(stmt) = self.settle() else {
            return Ok(Action::Done);
        };
        if self.exec.is_none() {
            let mut gets = Vec::new();
            for e in stmt.exprs() {
                let mut refs = Vec::new();
                e.walk(&mut |x| {
                    if let ExprKind::Get(s) = &x.kind {
                        refs.push(s.clone());
                    }
                });
                for r in refs {
                    gets.push(self.port_of(&r)?);
                }
            }
            self.exec = Some(StmtExec {
                gets,
                got: Vec::new(),
                phase: Phase::Gets,
                put: None,
            });
        }
        let ex = self.exec.as_ref().unwrap();
        match ex.phase {
            Phase::Gets if ex.got.len() < ex.gets.len() => Ok(Action::Get(ex.gets[ex.got.len()].clone())),
            Phase::Gets => {
                let (cycles, macs) = self.execute(&stmt)?;
                self.exec.as_mut().unwrap().phase = Phase::Compute(cycles, macs);
                Ok(Action::Compute {
                    cycles,
                    mac_cycles: macs,
                })
            }
            Phase::Compute(cycles, macs) => Ok(Action::Compute {
                cycles,
                mac_cycles: macs,
            }),
            Phase::Put => {
                let (p, v) = ex.put.clone().expect("put phase has a value");
                Ok(Action::Put(p, v))
            }
        }
    }

    fn finish_stmt(&mut self) {
        self.exec = None;
        if let Some(f) = self.frames.last_mut() {
            f.idx += 1;
        }
    }

    /// Completes the action last returned by `poll`.
    pub fn resolve(&mut self, got: Option<TensorValue>) {
        let ex = self.exec.as_mut().expect("pending action");
        match ex.phase {
            Phase::Gets => ex.got.push(got.expect("get resolves with a value")),
            Phase::Compute(..) if ex.put.is_some() => ex.phase = Phase::Put,
            Phase::Compute(..) | Phase::Put => self.finish_stmt(),
        }
    }

    /// Evaluates the statement, applying its assignment. A put value is
    /// stashed for the following action. Returns (cycles, matmul cycles).
    fn execute(&mut self, stmt: &Stmt) -> Result<(u64, u64), EvalError> {
        let mut got = std::mem::take(&mut self.exec.as_mut().unwrap().got).into_iter();
        let mut cost = (0u64, 0u64);
        let path = self.path();
        let put = match &stmt.kind {
            StmtKind::Put { stream, value } => {
                let v = self.eval(value, &mut got, &mut cost)?.0;
                Some((self.port_of(stream)?, v))
            }
            StmtKind::Local { name, ty, init } => {
                let v = match (init, ty) {
                    (Some(e), Some(t)) => self.eval(e, &mut got, &mut cost)?.0.cast(t.elem),
                    (Some(e), None) => self.eval(e, &mut got, &mut cost)?.0,
                    (None, Some(t)) if self.phantom => TensorValue::phantom(t.elem, t.shape.clone()),
                    (None, Some(t)) => TensorValue::zeros(t),
                    (None, None) => return Err(EvalError(format!("local `{name}` has no type"))),
                };
                self.locals.insert(name.clone(), v);
                None
            }
            StmtKind::Assign { target, value } => {
                if let ExprKind::AllReduce { arg, .. } = &value.kind {
                    let mode = self.allreduce.get(&path).cloned().unwrap_or(AllReduceMode::Assign);
                    let v = self.eval(arg, &mut got, &mut cost)?.0;
                    match mode {
                        AllReduceMode::Assign => {
                            self.store(target, &v)?;
                            None
                        }
                        AllReduceMode::Send(ch) => Some((Port::Channel(ch), v)),
                        AllReduceMode::Collect => Some((Port::Partial(path.clone()), v)),
                    }
                } else {
                    let v = self.eval(value, &mut got, &mut cost)?.0;
                    self.store(target, &v)?;
                    None
                }
            }
            StmtKind::For { .. } => unreachable!(),
        };
        self.exec.as_mut().unwrap().put = put;
        Ok(cost)
    }

    fn ranges(&self, ranges: &[SliceRange], shape: &[usize]) -> Result<Vec<(usize, usize)>, EvalError> {
        if ranges.len() > shape.len() {
            return Err(EvalError("too many slice ranges".into()));
        }
        let mut out = Vec::new();
        for (i, &dim) in shape.iter().enumerate() {
            out.push(match ranges.get(i) {
                None | Some(SliceRange::Full) => (0, dim),
                Some(SliceRange::Range(lo, hi)) => {
                    let (lo, hi) = (self.index(lo)?, self.index(hi)?);
                    if lo < 0 || hi < lo || hi as usize > dim {
                        return Err(EvalError(format!("slice {lo}:{hi} out of bounds for extent {dim}")));
                    }
                    (lo as usize, (hi - lo) as usize)
                }
            });
        }
        Ok(out)
    }

    fn store(&mut self, target: &LValue, v: &TensorValue) -> Result<(), EvalError> {
        let is_tile = self.tiles.contains_key(&target.name);
        let existing = if is_tile {
            self.tiles.get(&target.name)
        } else {
            self.locals.get(&target.name)
        };
        match (existing.cloned(), &target.ranges) {
            (Some(mut cur), Some(r)) => {
                let dims = self.ranges(r, &cur.shape)?;
                if !self.phantom {
                    insert(&mut cur, &dims, v);
                }
                self.put_named(is_tile, &target.name, cur);
            }
            (Some(cur), None) if is_tile => {
                let mut cur = cur;
                let dims: Vec<(usize, usize)> = cur.shape.iter().map(|&d| (0, d)).collect();
                if !self.phantom {
                    insert(&mut cur, &dims, v);
                }
                self.put_named(true, &target.name, cur);
            }
            (Some(cur), None) => {
                self.locals.insert(target.name.clone(), v.cast(cur.elem));
            }
            (None, _) => {
                self.locals.insert(target.name.clone(), v.clone());
            }
        }
        Ok(())
    }

    fn put_named(&mut self, tile: bool, name: &str, v: TensorValue) {
        if tile {
            self.tiles.insert(name.to_string(), v);
        } else {
            self.locals.insert(name.to_string(), v);
        }
    }

    fn named(&self, name: &str) -> Result<&TensorValue, EvalError> {
        self.locals
            .get(name)
            .or_else(|| self.tiles.get(name))
            .ok_or_else(|| EvalError(format!("unknown name `{name}`")))
    }

    /// Returns the value and whether it is a bare literal.
    fn eval(
        &self,
        e: &Expr,
        got: &mut dyn Iterator<Item = TensorValue>,
        cost: &mut (u64, u64),
    ) -> Result<(TensorValue, bool), EvalError> {
        Ok(match &e.kind {
            ExprKind::Get(_) => (
                got.next().ok_or_else(|| EvalError("missing received value".into()))?,
                false,
            ),
            ExprKind::Await(a) => self.eval(a, got, cost)?,
            ExprKind::Int(i) => (TensorValue::from_ints(ElemType::I32, vec![], vec![*i]), true),
            ExprKind::Float(f) => (TensorValue::from_floats(ElemType::F32, vec![], vec![*f as f32]), true),
            ExprKind::Tid(k) => {
                let c = *self.coord.get(*k).unwrap_or(&0) as i64;
                (TensorValue::from_ints(ElemType::I32, vec![], vec![c]), true)
            }
            ExprKind::Var(n) => match self.lookup_iv(n) {
                Some(iv) => (TensorValue::from_ints(ElemType::I32, vec![], vec![iv]), true),
                None => (self.named(n)?.clone(), false),
            },
            ExprKind::Slice { name, ranges } => {
                let v = self.named(name)?;
                let dims = self.ranges(ranges, &v.shape)?;
                (extract(v, &dims), false)
            }
            ExprKind::Binary(op, a, b) => {
                let (x, xl) = self.eval(a, got, cost)?;
                let (y, yl) = self.eval(b, got, cost)?;
                let r = if self.phantom {
                    let elem = if xl && !yl { y.elem } else { x.elem };
                    let shape = if x.shape.is_empty() {
                        y.shape.clone()
                    } else {
                        x.shape.clone()
                    };
                    TensorValue::phantom(elem, shape)
                } else {
                    binary(*op, &x, &y, xl, yl)
                };
                cost.0 += self.cost.eltwise_cycles(r.numel());
                (r, xl && yl)
            }
            ExprKind::Matmul(a, b) => {
                let (x, _) = self.eval(a, got, cost)?;
                let (y, _) = self.eval(b, got, cost)?;
                let k = *x.shape.last().unwrap_or(&1);
                let r = if self.phantom {
                    let mut shape = Vec::new();
                    if x.shape.len() == 2 {
                        shape.push(x.shape[0]);
                    }
                    if y.shape.len() == 2 {
                        shape.push(y.shape[1]);
                    }
                    TensorValue::phantom(x.elem, shape)
                } else {
                    matmul(&x, &y)
                };
                let c = self.cost.matmul_cycles(x.elem, (r.numel() * k) as u64);
                cost.0 += c;
                cost.1 += c;
                (r, false)
            }
            ExprKind::Reduce { op, axis, arg } => {
                let (x, _) = self.eval(arg, got, cost)?;
                if *axis >= x.shape.len() {
                    return Err(EvalError(format!("reduce axis {axis} out of range")));
                }
                cost.0 += self.cost.eltwise_cycles(x.numel());
                (reduce(*op, *axis, &x), false)
            }
            ExprKind::AllReduce { arg, .. } => self.eval(arg, got, cost)?,
            ExprKind::Call { name, args } => {
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.eval(a, got, cost)?.0);
                }
                let r = call_kernel(name, &vals).ok_or_else(|| EvalError(format!("unknown kernel `{name}`")))?;
                let q = KernelQuery {
                    op: name,
                    elem: r.elem,
                    operand_shapes: vals.iter().map(|v| v.shape.clone()).collect(),
                };
                cost.0 += match self.kernels.match_kernel(&q) {
                    Some((c, b)) => c.latency_cycles(&b),
                    None => self.cost.eltwise_cycles(r.numel()),
                };
                (r, false)
            }
        })
    }
}
