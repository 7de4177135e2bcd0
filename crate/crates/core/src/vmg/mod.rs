//! Virtual mapping graph: one shot per task instance, wired by stream and
//! reduction channels, grouped into nodes that the mapping search rewrites.

mod dot;
pub(crate) mod lower;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ir::*;
use crate::typecheck::{check_layouts, events::EventCursor, events::EventKind, LayoutTypeError};

pub use dot::{to_dot, to_json};
pub use lower::lower_allreduce;

pub type ShotId = usize;
pub type ChannelId = usize;
pub type NodeId = usize;

/// Per-dimension `(offset, size)` of the tile an instance owns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TileRegion {
    pub param: String,
    pub dims: Vec<(usize, usize)>,
}

impl TileRegion {
    pub fn numel(&self) -> usize {
        self.dims.iter().map(|d| d.1).product()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.dims.iter().map(|d| d.1).collect()
    }
}

pub fn shard_region(
    name: &str,
    ty: &TensorType,
    layout: &LayoutType,
    extents: &[usize],
    coord: &[usize],
) -> TileRegion {
    let dims = ty
        .shape
        .iter()
        .zip(layout.axes())
        .map(|(&dim, l)| match l {
            AxisLayout::S(a) => {
                let ext = extents.get(*a as usize).copied().unwrap_or(1).max(1);
                let size = dim / ext;
                let c = coord.get(*a as usize).copied().unwrap_or(0);
                (c * size, size)
            }
            AxisLayout::R => (0, dim),
        })
        .collect();
    TileRegion {
        param: name.to_string(),
        dims,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllReduceInfo {
    pub param: String,
    pub op: ReduceOp,
    pub axes: Vec<u32>,
    /// Channel that carries this instance's partial, once lowered. `None`
    /// before lowering or when the reduction group has a single member.
    pub channel: Option<ChannelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskShot {
    pub task: String,
    pub coord: Vec<usize>,
    /// Body with every `tid` reference replaced by `coord`.
    pub body: Vec<Stmt>,
    pub regions: BTreeMap<String, TileRegion>,
    pub reads: BTreeSet<String>,
    /// Parameters written by ordinary assignments.
    pub writes: BTreeSet<String>,
    /// Allreduce statements keyed by their statement path.
    pub allreduce: BTreeMap<Vec<usize>, AllReduceInfo>,
}

impl TaskShot {
    /// Parameters this shot writes back to external memory.
    pub fn written_params(&self) -> BTreeSet<String> {
        let mut out = self.writes.clone();
        for a in self.allreduce.values() {
            if a.channel.is_none() {
                out.insert(a.param.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CombineOutput {
    Channel(ChannelId),
    /// Root of the tree: writes `target` of the parameter tile `region`.
    Param {
        target: LValue,
        region: TileRegion,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineShot {
    pub task: String,
    pub param: String,
    pub op: ReduceOp,
    /// Coordinate of the reduction group (reduced axes removed).
    pub group: Vec<usize>,
    pub lhs: ChannelId,
    pub rhs: ChannelId,
    pub output: CombineOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Shot {
    Task(TaskShot),
    Combine(CombineShot),
}

impl Shot {
    pub fn task_name(&self) -> &str {
        match self {
            Shot::Task(t) => &t.task,
            Shot::Combine(c) => &c.task,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Shot::Task(t) => format!("{}@{}", t.task, fmt_coord(&t.coord)),
            Shot::Combine(c) => format!("{}.combine:{}@{}", c.task, c.param, fmt_coord(&c.group)),
        }
    }

    /// External-memory roles: `(inputs, outputs)`.
    pub fn dma_roles(&self) -> (Vec<String>, Vec<String>) {
        match self {
            Shot::Task(t) => (
                t.reads.iter().map(|p| format!("{}.in:{p}", t.task)).collect(),
                t.written_params()
                    .iter()
                    .map(|p| format!("{}.out:{p}", t.task))
                    .collect(),
            ),
            Shot::Combine(c) => match &c.output {
                CombineOutput::Param { .. } => (vec![], vec![format!("{}.combine.out:{}", c.task, c.param)]),
                CombineOutput::Channel(_) => (vec![], vec![]),
            },
        }
    }
}

pub fn fmt_coord(c: &[usize]) -> String {
    let parts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ChannelKind {
    Stream { stream: String, index: Vec<usize> },
    Reduction { op: ReduceOp },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Channel {
    pub kind: ChannelKind,
    pub src: ShotId,
    pub dst: ShotId,
    pub src_role: String,
    pub dst_role: String,
    pub payload: TensorType,
    pub depth: usize,
}

impl Channel {
    pub fn label(&self) -> String {
        match &self.kind {
            ChannelKind::Stream { stream, index } if index.is_empty() => stream.clone(),
            ChannelKind::Stream { stream, index } => {
                let parts: Vec<String> = index.iter().map(|x| x.to_string()).collect();
                format!("{stream}[{}]", parts.join(","))
            }
            ChannelKind::Reduction { op } => format!("reduce {}", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vmg {
    pub shots: Vec<Shot>,
    pub channels: Vec<Channel>,
    /// Node contents in execution order. Rewrites only touch this map.
    pub nodes: BTreeMap<NodeId, Vec<ShotId>>,
    /// Buffers in first-appearance order with their full types.
    pub buffers: Vec<(String, TensorType)>,
    pub lowered: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VmgError {
    #[error("stream index of `{stream}` in `{task}` does not resolve to a constant")]
    NonAffineIndex { task: String, stream: String },
    #[error("stream instance `{stream}` has no {missing}")]
    DanglingStream { stream: String, missing: &'static str },
    #[error(transparent)]
    Layout(#[from] LayoutTypeError),
}

/// Instantiates one shot and one node per task instance. Node ids follow
/// `(task name, coord)` order. Stream instances become channels; allreduce
/// sites are recorded but not yet lowered.
pub fn build_vmg(p: &Program) -> Result<Vmg, VmgError> {
    let layouts = check_layouts(p)?;
    let mut order: Vec<(&TaskDef, Vec<usize>)> = Vec::new();
    for t in &p.tasks {
        for c in t.coords() {
            order.push((t, c));
        }
    }
    order.sort_by(|a, b| (a.0.name.as_str(), &a.1).cmp(&(b.0.name.as_str(), &b.1)));

    let mut shots = Vec::new();
    let mut producers: BTreeMap<(String, Vec<usize>), ShotId> = BTreeMap::new();
    let mut consumers: BTreeMap<(String, Vec<usize>), ShotId> = BTreeMap::new();
    for (t, coord) in &order {
        let id = shots.len();
        let mut cur = EventCursor::new(p, &t.body, coord);
        loop {
            let ev = match cur.next_event() {
                Ok(Some(ev)) => ev,
                Ok(None) => break,
                Err(_) => {
                    return Err(VmgError::NonAffineIndex {
                        task: t.name.clone(),
                        stream: String::new(),
                    })
                }
            };
            let decl = &p.streams[ev.target.stream];
            let key = (decl.name.clone(), unflatten(ev.target.index, &decl.grid));
            match ev.kind {
                EventKind::Put => producers.insert(key, id),
                EventKind::Get => consumers.insert(key, id),
            };
        }
        let info = &layouts.tasks[&t.name];
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        let mut allreduce = BTreeMap::new();
        walk_stmts(&t.body, &mut |path, s| {
            for e in s.exprs() {
                e.walk(&mut |x| match &x.kind {
                    ExprKind::Var(n) | ExprKind::Slice { name: n, .. } if t.param(n).is_some() => {
                        reads.insert(n.clone());
                    }
                    _ => {}
                });
            }
            if let StmtKind::Assign { target, value } = &s.kind {
                if t.param(&target.name).is_some() {
                    match &value.kind {
                        ExprKind::AllReduce { op, .. } => {
                            let axes = info
                                .allreduces
                                .iter()
                                .find(|a| a.path == path)
                                .map(|a| a.axes.clone())
                                .unwrap_or_default();
                            allreduce.insert(
                                path.to_vec(),
                                AllReduceInfo {
                                    param: target.name.clone(),
                                    op: *op,
                                    axes,
                                    channel: None,
                                },
                            );
                        }
                        _ => {
                            writes.insert(target.name.clone());
                        }
                    }
                }
            }
        });
        let regions = t
            .params
            .iter()
            .map(|prm| {
                (
                    prm.name.clone(),
                    shard_region(&prm.name, &prm.ty, &prm.layout, &t.mapping, coord),
                )
            })
            .collect();
        shots.push(Shot::Task(TaskShot {
            task: t.name.clone(),
            coord: coord.clone(),
            body: subst_tid_body(&t.body, coord),
            regions,
            reads,
            writes,
            allreduce,
        }));
    }

    let mut channels = Vec::new();
    for decl in &p.streams {
        for idx in grid_points(&decl.grid) {
            let key = (decl.name.clone(), idx.clone());
            let (src, dst) = match (producers.get(&key), consumers.get(&key)) {
                (Some(&s), Some(&d)) => (s, d),
                (None, None) => continue,
                (None, _) => {
                    return Err(VmgError::DanglingStream {
                        stream: decl.name.clone(),
                        missing: "producer",
                    })
                }
                (_, None) => {
                    return Err(VmgError::DanglingStream {
                        stream: decl.name.clone(),
                        missing: "consumer",
                    })
                }
            };
            channels.push(Channel {
                kind: ChannelKind::Stream {
                    stream: decl.name.clone(),
                    index: idx,
                },
                src,
                dst,
                src_role: format!("{}.put:{}", shots[src].task_name(), decl.name),
                dst_role: format!("{}.get:{}", shots[dst].task_name(), decl.name),
                payload: decl.ty.elem.clone(),
                depth: decl.ty.depth,
            });
        }
    }

    let nodes = (0..shots.len()).map(|i| (i, vec![i])).collect();
    Ok(Vmg {
        shots,
        channels,
        nodes,
        buffers: p.buffers(),
        lowered: false,
    })
}

fn unflatten(mut flat: usize, grid: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; grid.len()];
    for d in (0..grid.len()).rev() {
        idx[d] = flat % grid[d];
        flat /= grid[d];
    }
    idx
}

/// Builds and lowers in one step.
pub fn build_lowered(p: &Program) -> Result<Vmg, VmgError> {
    Ok(lower_allreduce(build_vmg(p)?))
}

impl Vmg {
    /// Node holding each shot, indexed by shot id.
    pub fn shot_nodes(&self) -> Vec<NodeId> {
        let mut out = vec![usize::MAX; self.shots.len()];
        for (n, shots) in &self.nodes {
            for &s in shots {
                out[s] = *n;
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn shot_count(&self) -> usize {
        self.shots.len()
    }

    /// Channels whose endpoints sit on different nodes.
    pub fn is_internal(&self, ch: &Channel, owner: &[NodeId]) -> bool {
        owner[ch.src] == owner[ch.dst]
    }

    /// Distinct global `(input, output)` roles of every node: channels to
    /// other nodes plus external-memory transfers.
    pub fn port_pressure(&self) -> BTreeMap<NodeId, (usize, usize)> {
        let owner = self.shot_nodes();
        let mut ins: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        let mut outs: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        for n in self.nodes.keys() {
            ins.insert(*n, BTreeSet::new());
            outs.insert(*n, BTreeSet::new());
        }
        for ch in &self.channels {
            if owner[ch.src] != owner[ch.dst] {
                outs.get_mut(&owner[ch.src]).unwrap().insert(ch.src_role.clone());
                ins.get_mut(&owner[ch.dst]).unwrap().insert(ch.dst_role.clone());
            }
        }
        for (s, shot) in self.shots.iter().enumerate() {
            let (i, o) = shot.dma_roles();
            ins.get_mut(&owner[s]).unwrap().extend(i);
            outs.get_mut(&owner[s]).unwrap().extend(o);
        }
        self.nodes.keys().map(|n| (*n, (ins[n].len(), outs[n].len()))).collect()
    }

    /// Node-level successor sets over cross-node channels.
    pub fn successors(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let owner = self.shot_nodes();
        let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = self.nodes.keys().map(|n| (*n, BTreeSet::new())).collect();
        for ch in &self.channels {
            let (a, b) = (owner[ch.src], owner[ch.dst]);
            if a != b {
                out.get_mut(&a).unwrap().insert(b);
            }
        }
        out
    }

    pub fn node_label(&self, n: NodeId) -> String {
        let shots = &self.nodes[&n];
        format!("{}/{}", self.shots[shots[0]].label(), shots.len())
    }

    /// Nodes in topological layers (Kahn order on cross-node edges, cycles
    /// broken by lowest id).
    pub fn topo_layers(&self) -> Vec<Vec<NodeId>> {
        let succ = self.successors();
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|n| (*n, 0)).collect();
        for s in succ.values() {
            for d in s {
                *indeg.get_mut(d).unwrap() += 1;
            }
        }
        let mut layers = Vec::new();
        let mut done: BTreeSet<NodeId> = BTreeSet::new();
        while done.len() < self.nodes.len() {
            let mut layer: Vec<NodeId> = indeg
                .iter()
                .filter(|(n, d)| **d == 0 && !done.contains(*n))
                .map(|(n, _)| *n)
                .collect();
            if layer.is_empty() {
                let n = *indeg.keys().find(|n| !done.contains(*n)).unwrap();
                layer.push(n);
            }
            for n in &layer {
                done.insert(*n);
                for d in &succ[n] {
                    let e = indeg.get_mut(d).unwrap();
                    *e = e.saturating_sub(1);
                }
            }
            layers.push(layer);
        }
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn regions_follow_layout() {
        let r = shard_region(
            "A",
            &TensorType::new(ElemType::I8, vec![16]),
            &LayoutType::parse("S0").unwrap(),
            &[2],
            &[1],
        );
        assert_eq!(r.dims, vec![(8, 8)]);
        let r = shard_region(
            "T",
            &TensorType::new(ElemType::F32, vec![16, 16]),
            &LayoutType::parse("S0S1").unwrap(),
            &[2, 2],
            &[0, 1],
        );
        assert_eq!(r.dims, vec![(0, 8), (8, 8)]);
        let r = shard_region(
            "T",
            &TensorType::new(ElemType::F32, vec![16, 16]),
            &LayoutType::replicated(2),
            &[2, 2],
            &[1, 1],
        );
        assert_eq!(r.dims, vec![(0, 16), (0, 16)]);
    }

    #[test]
    fn producer_consumer_graph() {
        let p = parse_program(
            r#"
stream Z: stream<i8[8]>[2];
task producer[2](A: i8[16] @ "S") { Z[tid(0)].put(A[:]); }
task consumer[2](B: i8[16] @ "S") { B[:] = Z[tid(0)].get() + 1; }
"#,
        )
        .unwrap();
        let g = build_vmg(&p).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.channels.len(), 2);
        // consumer sorts before producer
        assert_eq!(g.shots[g.channels[0].src].label(), "producer@(0)");
        assert_eq!(g.shots[g.channels[0].dst].label(), "consumer@(0)");
        assert_eq!(g.port_pressure()[&0], (1, 1));
    }

    #[test]
    fn singleton_mapping() {
        let p = parse_program("task t[1](A: i32[4]) { A = A + 1; }").unwrap();
        let g = build_lowered(&p).unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.shots[0].label(), "t@(0)");
    }
}
