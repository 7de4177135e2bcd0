use std::collections::{BTreeMap, VecDeque};

use super::interp::*;
use super::value::*;
use super::*;
use crate::dma_sched::{self, Direction, DmaSchedule};
use crate::ir::{IndexExpr, LValue, ReduceOp, SliceRange};
use crate::mapping::{place, MapState, PhysicalMapping};
use crate::vmg::*;

#[derive(Debug, Clone)]
struct CombineProc {
    lhs: ChannelId,
    rhs: ChannelId,
    op: ReduceOp,
    out: Option<ChannelId>,
    got: Vec<TensorValue>,
    result: Option<TensorValue>,
    phase: u8,
    cost: CostModel,
}

impl CombineProc {
    fn poll(&mut self) -> Action {
        match self.phase {
            0 => Action::Get(Port::Channel(self.lhs)),
            1 => Action::Get(Port::Channel(self.rhs)),
            2 => {
                if self.result.is_none() {
                    self.result = Some(binary(reduce_binop(self.op), &self.got[0], &self.got[1], false, false));
                }
                let n = self.result.as_ref().unwrap().numel();
                Action::Compute {
                    cycles: self.cost.internal_cycles(n),
                    mac_cycles: 0,
                }
            }
            3 => match self.out {
                Some(ch) => Action::Put(Port::Channel(ch), self.result.clone().unwrap()),
                None => Action::Done,
            },
            _ => Action::Done,
        }
    }

    fn resolve(&mut self, v: Option<TensorValue>) {
        if self.phase < 2 {
            self.got.push(v.expect("combine input"));
        }
        self.phase += 1;
    }
}

#[derive(Debug, Clone)]
enum Proc {
    Task(Box<TaskProc>),
    Combine(CombineProc),
}

impl Proc {
    fn poll(&mut self) -> Result<Action, EvalError> {
        match self {
            Proc::Task(t) => t.poll(),
            Proc::Combine(c) => Ok(c.poll()),
        }
    }

    fn resolve(&mut self, v: Option<TensorValue>) {
        match self {
            Proc::Task(t) => t.resolve(v),
            Proc::Combine(c) => c.resolve(v),
        }
    }
}

#[derive(Debug, Clone)]
struct Fifo {
    /// Tokens with the cycle they become visible.
    items: VecDeque<(TensorValue, u64)>,
    /// Free slots with the cycle they were freed.
    slots: VecDeque<u64>,
    peak: usize,
}

fn check_inputs(
    buffers: &[(String, crate::ir::TensorType)],
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<(), SimError> {
    for (name, ty) in buffers {
        let v = inputs
            .get(name)
            .ok_or_else(|| SimError::Input(name.clone(), "missing".into()))?;
        if v.shape != ty.shape || v.elem != ty.elem {
            return Err(SimError::Input(name.clone(), format!("expected {ty}, got {}", v.ty())));
        }
    }
    Ok(())
}

pub(crate) fn port_channels(g: &Vmg) -> BTreeMap<(String, Vec<usize>), ChannelId> {
    g.channels
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match &c.kind {
            ChannelKind::Stream { stream, index } => Some(((stream.clone(), index.clone()), i)),
            ChannelKind::Reduction { .. } => None,
        })
        .collect()
}

/// Evaluates closed slice ranges of a combine target against the tile.
pub(crate) fn target_dims(target: &LValue, shape: &[usize]) -> Vec<(usize, usize)> {
    let none = |_: &str| None;
    let ev = |e: &IndexExpr| e.eval(&[], &none).unwrap_or(0).max(0) as usize;
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| match target.ranges.as_ref().and_then(|r| r.get(i)) {
            Some(SliceRange::Range(lo, hi)) => (ev(lo), ev(hi).saturating_sub(ev(lo))),
            _ => (0, d),
        })
        .collect()
}

fn make_procs(g: &Vmg, inputs: &BTreeMap<String, TensorValue>, cfg: &SimConfig) -> Vec<Proc> {
    g.shots
        .iter()
        .map(|s| match s {
            Shot::Task(t) => {
                let tiles = t
                    .regions
                    .iter()
                    .map(|(p, r)| (p.clone(), extract(&inputs[p], &r.dims)))
                    .collect();
                let modes = t
                    .allreduce
                    .iter()
                    .map(|(path, a)| {
                        let m = match a.channel {
                            Some(ch) => AllReduceMode::Send(ch),
                            None => AllReduceMode::Assign,
                        };
                        (path.clone(), m)
                    })
                    .collect();
                Proc::Task(Box::new(TaskProc::new(
                    t.body.clone(),
                    t.coord.clone(),
                    tiles,
                    modes,
                    cfg.cost.clone(),
                    cfg.phantom,
                )))
            }
            Shot::Combine(c) => Proc::Combine(CombineProc {
                lhs: c.lhs,
                rhs: c.rhs,
                op: c.op,
                out: match c.output {
                    CombineOutput::Channel(ch) => Some(ch),
                    CombineOutput::Param { .. } => None,
                },
                got: Vec::new(),
                result: None,
                phase: 0,
                cost: cfg.cost.clone(),
            }),
        })
        .collect()
}

fn port_lookup(s: &DmaSchedule) -> BTreeMap<(usize, (usize, usize), Direction), usize> {
    let mut out = BTreeMap::new();
    for lane in &s.port_assignment {
        for slot in &lane.slots {
            out.insert((slot.transfer, lane.tile, lane.direction), slot.port);
        }
    }
    out
}

struct Engine<'a> {
    m: &'a PhysicalMapping,
    cfg: &'a SimConfig,
    procs: Vec<Proc>,
    pending: Vec<Option<Action>>,
    fifos: Vec<Fifo>,
    ports: BTreeMap<(String, Vec<usize>), ChannelId>,
    owner: Vec<NodeId>,
    clock: BTreeMap<NodeId, u64>,
    in_ready: Vec<u64>,
    last_end: Vec<u64>,
    done: Vec<bool>,
    trace: SimTrace,
}

impl Engine<'_> {
    fn channel(&self, p: &Port) -> Result<ChannelId, EvalError> {
        match p {
            Port::Channel(c) => Ok(*c),
            Port::Stream(n, idx) => self
                .ports
                .get(&(n.clone(), idx.clone()))
                .copied()
                .ok_or_else(|| EvalError(format!("no channel for stream {n}{idx:?}"))),
            Port::Partial(_) => Err(EvalError("unlowered allreduce in mapped simulation".into())),
        }
    }

    fn action(&mut self, s: ShotId) -> Result<Action, EvalError> {
        if self.pending[s].is_none() {
            self.pending[s] = Some(self.procs[s].poll()?);
        }
        Ok(self.pending[s].clone().unwrap())
    }

    /// Earliest start of `a` for shot `s` on `node`, or `None` if blocked.
    fn start_of(&self, s: ShotId, node: NodeId, a: &Action) -> Result<Option<u64>, EvalError> {
        let base = self.clock[&node].max(self.in_ready[s]);
        Ok(match a {
            Action::Get(p) => self.fifos[self.channel(p)?].items.front().map(|(_, t)| base.max(*t)),
            Action::Put(p, _) => self.fifos[self.channel(p)?].slots.front().map(|t| base.max(*t)),
            Action::Compute { .. } => Some(base),
            Action::Done => None,
        })
    }

    fn tile_label(&self, node: NodeId) -> (usize, usize) {
        self.m.tile_of(node)
    }

    fn log(&mut self, cycle: u64, node: NodeId, s: ShotId, kind: String) {
        let ev = TraceEvent {
            cycle,
            tile: self.tile_label(node),
            shot: self.m.vmg.shots[s].label(),
            kind,
        };
        self.trace.events.push(ev);
    }

    fn execute(&mut self, s: ShotId, node: NodeId, start: u64, a: Action) -> Result<(), EvalError> {
        self.pending[s] = None;
        let tile_key = {
            let t = self.tile_label(node);
            format!("{},{}", t.0, t.1)
        };
        match a {
            Action::Get(p) => {
                let ch = self.channel(&p)?;
                let (v, _) = self.fifos[ch].items.pop_front().expect("token present");
                self.fifos[ch].slots.push_back(start);
                self.clock.insert(node, start);
                self.log(start, node, s, format!("get {}", self.m.vmg.channels[ch].label()));
                self.procs[s].resolve(Some(v));
            }
            Action::Put(p, v) => {
                let ch = self.channel(&p)?;
                let c = &self.m.vmg.channels[ch];
                let internal = self.owner[c.src] == self.owner[c.dst];
                let cost = if internal {
                    self.cfg.cost.internal_cycles(v.numel())
                } else {
                    self.cfg.cost.fifo_cycles(v.numel())
                };
                let end = start + cost;
                let f = &mut self.fifos[ch];
                f.slots.pop_front();
                f.items.push_back((v, end));
                f.peak = f.peak.max(f.items.len());
                self.clock.insert(node, end);
                *self.trace.tile_busy.entry(tile_key).or_default() += cost;
                self.log(start, node, s, format!("put {}", self.m.vmg.channels[ch].label()));
                self.procs[s].resolve(None);
            }
            Action::Compute { cycles, mac_cycles } => {
                self.clock.insert(node, start + cycles);
                *self.trace.tile_busy.entry(tile_key).or_default() += cycles;
                self.trace.mac_cycles += mac_cycles;
                if cycles > 0 {
                    self.log(start, node, s, format!("compute {cycles}"));
                }
                self.procs[s].resolve(None);
            }
            Action::Done => unreachable!(),
        }
        self.last_end[s] = self.clock[&node];
        Ok(())
    }
}

/// Wait-for analysis over blocked shots. Each blocked shot waits on the
/// other end of the channel it is blocked on.
fn wait_analysis(g: &Vmg, blocked: &BTreeMap<ShotId, (String, ChannelId)>, cycle: u64) -> SimDeadlock {
    let target = |s: ShotId| {
        let (op, ch) = &blocked[&s];
        let c = &g.channels[*ch];
        if op == "get" {
            c.src
        } else {
            c.dst
        }
    };
    let mut wait_cycle = Vec::new();
    let mut cycle_channels = Vec::new();
    'outer: for &start in blocked.keys() {
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let next = target(cur);
            if !blocked.contains_key(&next) {
                break;
            }
            if let Some(pos) = path.iter().position(|&x| x == next) {
                let cyc = &path[pos..];
                wait_cycle = cyc.iter().map(|&s| g.shots[s].label()).collect();
                cycle_channels = cyc.iter().map(|s| g.channels[blocked[s].1].label()).collect();
                break 'outer;
            }
            path.push(next);
            cur = next;
        }
    }
    SimDeadlock {
        cycle,
        blocked: blocked
            .iter()
            .map(|(s, (op, ch))| BlockedOn {
                shot: g.shots[*s].label(),
                op: op.clone(),
                channel: g.channels[*ch].label(),
            })
            .collect(),
        wait_cycle,
        cycle_channels,
    }
}

/// Given the pending action of every unfinished shot, returns the wait-for
/// cycle (or the blocked set) when no shot can progress.
pub fn detect_deadlock(g: &Vmg, pending: &BTreeMap<ShotId, Action>, cycle: u64) -> Option<SimDeadlock> {
    let ports = port_channels(g);
    let mut blocked = BTreeMap::new();
    for (s, a) in pending {
        let (op, p) = match a {
            Action::Get(p) => ("get", p),
            Action::Put(p, _) => ("put", p),
            _ => return None,
        };
        let ch = match p {
            Port::Channel(c) => *c,
            Port::Stream(n, i) => *ports.get(&(n.clone(), i.clone()))?,
            Port::Partial(_) => return None,
        };
        blocked.insert(*s, (op.to_string(), ch));
    }
    if blocked.is_empty() {
        return None;
    }
    Some(wait_analysis(g, &blocked, cycle))
}

/// Runs the mapped program. Timing follows `cfg.cost`; with
/// `cfg.phantom` set no values are computed and outputs echo the inputs.
pub fn simulate(
    m: &PhysicalMapping,
    sched: &DmaSchedule,
    inputs: &BTreeMap<String, TensorValue>,
    cfg: &SimConfig,
) -> Result<SimOutput, SimError> {
    let g = &m.vmg;
    check_inputs(&g.buffers, inputs)?;
    let procs = make_procs(g, inputs, cfg);
    let fifos = g
        .channels
        .iter()
        .map(|c| Fifo {
            items: VecDeque::new(),
            slots: vec![0; c.depth.max(1)].into(),
            peak: 0,
        })
        .collect();
    let port_of = port_lookup(sched);
    let mut port_free: BTreeMap<((usize, usize), Direction, usize), u64> = BTreeMap::new();
    let mut in_ready = vec![0u64; g.shots.len()];
    let mut dma_end = 0u64;
    for t in sched.transfers.iter().filter(|t| t.direction == Direction::In) {
        let tiles = t.tiles();
        let start = tiles
            .iter()
            .map(|&tile| {
                port_free
                    .get(&(tile, Direction::In, port_of[&(t.id, tile, Direction::In)]))
                    .copied()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0);
        let end = start + cfg.cost.dma_cycles(t.elements);
        for &tile in &tiles {
            port_free.insert((tile, Direction::In, port_of[&(t.id, tile, Direction::In)]), end);
        }
        for d in &t.dests {
            in_ready[d.shot] = in_ready[d.shot].max(end);
        }
        dma_end = dma_end.max(end);
    }
    let mut e = Engine {
        m,
        cfg,
        pending: vec![None; procs.len()],
        procs,
        fifos,
        ports: port_channels(g),
        owner: g.shot_nodes(),
        clock: g.nodes.keys().map(|n| (*n, 0)).collect(),
        last_end: in_ready.clone(),
        in_ready,
        done: vec![false; g.shots.len()],
        trace: SimTrace {
            events: Vec::new(),
            cycles: 0,
            tile_busy: BTreeMap::new(),
            fifo_peaks: BTreeMap::new(),
            mac_cycles: 0,
            active_tiles: g.node_count(),
            utilization: 0.0,
        },
    };
    let mut order: Vec<(usize, NodeId)> = g
        .nodes
        .keys()
        .map(|n| {
            let t = m.tile_of(*n);
            (m.tile_index(t), *n)
        })
        .collect();
    order.sort();
    let outs: Vec<&dma_sched::Transfer> = sched
        .transfers
        .iter()
        .filter(|t| t.direction == Direction::Out)
        .collect();
    let mut out_done = vec![false; outs.len()];

    loop {
        let mut best: Option<(u64, usize, NodeId, ShotId, Action)> = None;
        let mut unfinished = false;
        for &(tidx, node) in &order {
            for &s in &g.nodes[&node] {
                if e.done[s] {
                    continue;
                }
                let a = e.action(s)?;
                if a == Action::Done {
                    e.done[s] = true;
                    e.log(e.last_end[s], node, s, "done".into());
                    continue;
                }
                unfinished = true;
                if let Some(start) = e.start_of(s, node, &a)? {
                    if best.as_ref().is_none_or(|b| (start, tidx) < (b.0, b.1)) {
                        best = Some((start, tidx, node, s, a));
                    }
                    break;
                }
            }
        }
        // Write-backs of finished shots, in transfer order.
        for (i, t) in outs.iter().enumerate() {
            if out_done[i] || !t.dests.iter().all(|d| e.done[d.shot]) {
                continue;
            }
            out_done[i] = true;
            let ready = t.dests.iter().map(|d| e.last_end[d.shot]).max().unwrap_or(0);
            let tile = t.dests[0].tile;
            let key = (tile, Direction::Out, port_of[&(t.id, tile, Direction::Out)]);
            let start = ready.max(port_free.get(&key).copied().unwrap_or(0));
            let end = start + cfg.cost.dma_cycles(t.elements);
            port_free.insert(key, end);
            dma_end = dma_end.max(end);
        }
        match best {
            Some((start, _, node, s, a)) => e.execute(s, node, start, a)?,
            None if unfinished => {
                let pending: BTreeMap<ShotId, Action> = (0..g.shots.len())
                    .filter(|s| !e.done[*s])
                    .map(|s| (s, e.pending[s].clone().expect("polled")))
                    .collect();
                let now = e.clock.values().copied().max().unwrap_or(0);
                return Err(detect_deadlock(g, &pending, now)
                    .expect("quiescent with unfinished shots")
                    .into());
            }
            None => break,
        }
    }

    let cycles = e.clock.values().copied().max().unwrap_or(0).max(dma_end);
    let mut trace = e.trace;
    trace.cycles = cycles;
    for (i, f) in e.fifos.iter().enumerate() {
        let p = trace.fifo_peaks.entry(g.channels[i].label()).or_default();
        *p = (*p).max(f.peak);
    }
    let denom = (trace.active_tiles as u64 * cycles).max(1);
    trace.utilization = trace.mac_cycles as f64 / denom as f64;

    let mut outputs = inputs.clone();
    if !cfg.phantom {
        for (s, shot) in g.shots.iter().enumerate() {
            if let (Shot::Task(t), Proc::Task(p)) = (shot, &e.procs[s]) {
                for name in t.written_params() {
                    insert(outputs.get_mut(&name).unwrap(), &t.regions[&name].dims, &p.tiles[&name]);
                }
            }
        }
        for (s, shot) in g.shots.iter().enumerate() {
            if let (Shot::Combine(c), Proc::Combine(p)) = (shot, &e.procs[s]) {
                if let CombineOutput::Param { target, region } = &c.output {
                    let mut tile = extract(&inputs[&c.param], &region.dims);
                    let dims = target_dims(target, &tile.shape);
                    insert(&mut tile, &dims, p.result.as_ref().expect("root combined"));
                    insert(outputs.get_mut(&c.param).unwrap(), &region.dims, &tile);
                }
            }
        }
    }
    Ok(SimOutput { outputs, trace })
}

pub fn run_functional(
    m: &PhysicalMapping,
    sched: &DmaSchedule,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<SimOutput, SimError> {
    simulate(m, sched, inputs, &SimConfig::for_fabric(&m.fabric))
}

pub fn run_timed(
    m: &PhysicalMapping,
    sched: &DmaSchedule,
    inputs: &BTreeMap<String, TensorValue>,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    Ok(simulate(m, sched, inputs, cfg)?.trace)
}

/// Places, schedules and times one candidate shape-only. `None` when the
/// candidate cannot be placed or DMA-scheduled.
pub fn estimate(c: &MapState, cfg: &SimConfig) -> Result<Option<(PhysicalMapping, DmaSchedule, SimTrace)>, SimError> {
    let Ok(mut m) = place(&c.vmg, &c.applied, &cfg.fabric) else {
        return Ok(None);
    };
    let Ok(sched) = dma_sched::schedule(&m) else {
        return Ok(None);
    };
    let inputs = c
        .vmg
        .buffers
        .iter()
        .map(|(n, t)| (n.clone(), TensorValue::phantom(t.elem, t.shape.clone())))
        .collect();
    let phantom = SimConfig {
        phantom: true,
        ..cfg.clone()
    };
    let trace = simulate(&m, &sched, &inputs, &phantom)?.trace;
    m.estimated_cycles = Some(trace.cycles);
    Ok(Some((m, sched, trace)))
}

/// Estimates every candidate and returns the index of the fastest with its
/// mapping. Candidates that cannot be placed or scheduled are skipped;
/// ties keep the earlier candidate.
pub fn select_best(
    candidates: &[MapState],
    cfg: &SimConfig,
) -> Result<(usize, PhysicalMapping, DmaSchedule, SimTrace), SimError> {
    let mut best: Option<(usize, PhysicalMapping, DmaSchedule, SimTrace)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some((m, sched, trace)) = estimate(c, cfg)? else {
            continue;
        };
        if best.as_ref().is_none_or(|b| trace.cycles < b.3.cycles) {
            best = Some((i, m, sched, trace));
        }
    }
    best.ok_or(SimError::NoPlaceable)
}
