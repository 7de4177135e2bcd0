use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::events::{Event, EventCursor, EventError, EventKind, StreamInst};
use super::StreamTypeError;
use crate::ir::*;

/// Upper bound on the total number of events the checker will replay.
pub const EVENT_BUDGET: u64 = 1 << 24;

/// Token state of one stream instance. `free_count + used_count` is always
/// the stream depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub free_count: usize,
    pub used_count: usize,
}

impl StreamState {
    pub fn new(depth: usize) -> Self {
        Self {
            free_count: depth,
            used_count: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.free_count + self.used_count
    }

    /// Consumes a free token; false when the stream is full.
    pub fn put(&mut self) -> bool {
        if self.free_count == 0 {
            return false;
        }
        self.free_count -= 1;
        self.used_count += 1;
        true
    }

    /// Consumes a used token; false when the stream is empty.
    pub fn get(&mut self) -> bool {
        if self.used_count == 0 {
            return false;
        }
        self.used_count -= 1;
        self.free_count += 1;
        true
    }

    pub fn fire(&mut self, kind: EventKind) -> bool {
        match kind {
            EventKind::Put => self.put(),
            EventKind::Get => self.get(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamUsage {
    pub stream: String,
    pub depth: usize,
    pub transfers: u64,
    pub peak_occupancy: usize,
    pub producer: Option<String>,
    pub consumer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamReport {
    /// Only stream instances that carry traffic, in declaration order.
    pub streams: Vec<StreamUsage>,
    pub total_events: u64,
}

impl StreamReport {
    pub fn usage(&self, stream: &str) -> Option<&StreamUsage> {
        self.streams.iter().find(|u| u.stream == stream)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WaitEdge {
    pub task: String,
    pub stream: String,
    pub op: &'static str,
}

/// One task instance of a program: label, task, grid coordinate.
pub struct Instance<'a> {
    pub label: String,
    pub task: &'a TaskDef,
    pub coord: Vec<usize>,
}

pub fn instances(p: &Program) -> Vec<Instance<'_>> {
    let mut out = Vec::new();
    for t in &p.tasks {
        for c in t.coords() {
            out.push(Instance {
                label: instance_label(&t.name, &t.mapping, &c),
                task: t,
                coord: c,
            });
        }
    }
    out
}

pub fn instance_label(name: &str, extents: &[usize], coord: &[usize]) -> String {
    if extents.iter().product::<usize>() <= 1 {
        name.to_string()
    } else {
        let c: Vec<String> = coord.iter().map(|x| x.to_string()).collect();
        format!("{name}[{}]", c.join(","))
    }
}

pub fn stream_label(p: &Program, s: StreamInst) -> String {
    let decl = &p.streams[s.stream];
    if decl.grid.is_empty() {
        return decl.name.clone();
    }
    let mut rem = s.index;
    let mut idx = vec![0; decl.grid.len()];
    for d in (0..decl.grid.len()).rev() {
        idx[d] = rem % decl.grid[d];
        rem /= decl.grid[d];
    }
    let c: Vec<String> = idx.iter().map(|x| x.to_string()).collect();
    format!("{}[{}]", decl.name, c.join(","))
}

fn event_error(p: &Program, e: EventError) -> StreamTypeError {
    let _ = p;
    match e {
        EventError::OutOfRange { stream, index, span } => StreamTypeError::StreamIndex {
            stream,
            detail: format!("index {index:?} is outside the stream grid"),
            span,
        },
        EventError::Unresolved { stream, span } => StreamTypeError::StreamIndex {
            stream,
            detail: "index does not evaluate to a constant".into(),
            span,
        },
    }
}

#[derive(Default)]
struct Endpoints {
    puts: u64,
    gets: u64,
    producers: BTreeSet<usize>,
    consumers: BTreeSet<usize>,
}

/// Checks put/get usage of every stream: point-to-point connectivity,
/// balanced token counts, deadlock freedom under bounded FIFOs, and linear
/// use of get results.
pub fn check_streams(p: &Program) -> Result<StreamReport, StreamTypeError> {
    let insts = instances(p);
    let mut ends: BTreeMap<StreamInst, Endpoints> = BTreeMap::new();
    let mut total = 0u64;
    for (i, inst) in insts.iter().enumerate() {
        let mut cur = EventCursor::new(p, &inst.task.body, &inst.coord);
        while let Some(ev) = cur.next_event().map_err(|e| event_error(p, e))? {
            total += 1;
            if total > EVENT_BUDGET {
                return Err(StreamTypeError::TooManyEvents { limit: EVENT_BUDGET });
            }
            let e = ends.entry(ev.target).or_default();
            match ev.kind {
                EventKind::Put => {
                    e.puts += 1;
                    e.producers.insert(i);
                }
                EventKind::Get => {
                    e.gets += 1;
                    e.consumers.insert(i);
                }
            }
        }
    }

    for (s, e) in &ends {
        for (role, set) in [("producer", &e.producers), ("consumer", &e.consumers)] {
            if set.len() > 1 {
                return Err(StreamTypeError::NotPointToPoint {
                    stream: stream_label(p, *s),
                    role,
                    tasks: set.iter().map(|&i| insts[i].label.clone()).collect(),
                });
            }
        }
    }
    for (s, e) in &ends {
        if e.puts != e.gets {
            return Err(StreamTypeError::TokenLeak {
                stream: stream_label(p, *s),
                puts: e.puts,
                gets: e.gets,
                residual: e.puts as i64 - e.gets as i64,
            });
        }
    }

    let producer: BTreeMap<StreamInst, usize> = ends
        .iter()
        .filter_map(|(s, e)| e.producers.first().map(|&i| (*s, i)))
        .collect();
    let consumer: BTreeMap<StreamInst, usize> = ends
        .iter()
        .filter_map(|(s, e)| e.consumers.first().map(|&i| (*s, i)))
        .collect();

    let mut state: BTreeMap<StreamInst, StreamState> = ends
        .keys()
        .map(|s| (*s, StreamState::new(p.streams[s.stream].ty.depth)))
        .collect();
    let mut peak: BTreeMap<StreamInst, usize> = BTreeMap::new();
    let mut cursors: Vec<EventCursor> = insts
        .iter()
        .map(|i| EventCursor::new(p, &i.task.body, &i.coord))
        .collect();
    let mut blocked: Vec<Option<Event>> = vec![None; insts.len()];
    let mut waiting: BTreeMap<(StreamInst, EventKind), usize> = BTreeMap::new();
    let mut queue: VecDeque<usize> = (0..insts.len()).collect();

    while let Some(i) = queue.pop_front() {
        let mut ev = match blocked[i].take() {
            Some(ev) => Some(ev),
            None => cursors[i].next_event().map_err(|e| event_error(p, e))?,
        };
        while let Some(e) = ev {
            let st = state.get_mut(&e.target).expect("stream seen in first pass");
            if !st.fire(e.kind) {
                blocked[i] = Some(e);
                waiting.insert((e.target, e.kind), i);
                break;
            }
            let pk = peak.entry(e.target).or_default();
            *pk = (*pk).max(st.used_count);
            let other = match e.kind {
                EventKind::Put => EventKind::Get,
                EventKind::Get => EventKind::Put,
            };
            if let Some(w) = waiting.remove(&(e.target, other)) {
                queue.push_back(w);
            }
            ev = cursors[i].next_event().map_err(|e| event_error(p, e))?;
        }
    }

    if blocked.iter().any(|b| b.is_some()) {
        let edge = |i: usize| {
            let e = blocked[i].expect("blocked");
            WaitEdge {
                task: insts[i].label.clone(),
                stream: stream_label(p, e.target),
                op: match e.kind {
                    EventKind::Put => "put",
                    EventKind::Get => "get",
                },
            }
        };
        let next = |i: usize| -> Option<usize> {
            let e = blocked[i]?;
            let peer = match e.kind {
                EventKind::Get => producer.get(&e.target),
                EventKind::Put => consumer.get(&e.target),
            };
            peer.copied().filter(|&j| blocked[j].is_some())
        };
        let start = blocked.iter().position(|b| b.is_some()).expect("some blocked");
        let mut seen = vec![usize::MAX; insts.len()];
        let mut path = Vec::new();
        let mut cur = Some(start);
        let mut cycle = Vec::new();
        while let Some(c) = cur {
            if seen[c] != usize::MAX {
                cycle = path[seen[c]..].iter().map(|&j| edge(j)).collect();
                break;
            }
            seen[c] = path.len();
            path.push(c);
            cur = next(c);
        }
        let blocked_tasks = (0..insts.len()).filter(|&i| blocked[i].is_some()).map(edge).collect();
        return Err(StreamTypeError::Deadlock {
            blocked: blocked_tasks,
            cycle,
        });
    }

    check_futures(p)?;

    let streams = ends
        .iter()
        .map(|(s, e)| StreamUsage {
            stream: stream_label(p, *s),
            depth: p.streams[s.stream].ty.depth,
            transfers: e.puts,
            peak_occupancy: peak.get(s).copied().unwrap_or(0),
            producer: producer.get(s).map(|&i| insts[i].label.clone()),
            consumer: consumer.get(s).map(|&i| insts[i].label.clone()),
        })
        .collect();
    Ok(StreamReport {
        streams,
        total_events: total,
    })
}

/// Name bound directly to the result of a get by this statement, if any.
pub(crate) fn future_binding<'a>(s: &'a Stmt, task: &TaskDef) -> Option<&'a str> {
    match &s.kind {
        StmtKind::Local {
            name, init: Some(e), ..
        } if matches!(e.kind, ExprKind::Get(_)) => Some(name),
        StmtKind::Assign { target, value }
            if target.ranges.is_none()
                && task.param(&target.name).is_none()
                && matches!(value.kind, ExprKind::Get(_)) =>
        {
            Some(&target.name)
        }
        _ => None,
    }
}

fn rebinds(s: &Stmt, name: &str) -> bool {
    match &s.kind {
        StmtKind::Local { name: n, .. } => n == name,
        StmtKind::Assign { target, .. } => target.name == name && target.ranges.is_none(),
        _ => false,
    }
}

fn expr_uses(e: &Expr, name: &str) -> u64 {
    let mut n = 0;
    e.walk(&mut |x| match &x.kind {
        ExprKind::Var(v) | ExprKind::Slice { name: v, .. } if v == name => n += 1,
        _ => {}
    });
    n
}

/// Dynamic use count of `name` across `stmts`, stopping at a rebinding.
/// Returns the count and whether scanning hit a rebinding.
fn uses_in(stmts: &[Stmt], name: &str) -> (u64, bool) {
    let mut total = 0u64;
    for s in stmts {
        match &s.kind {
            StmtKind::For { lo, hi, body, .. } => {
                let (n, _) = uses_in(body, name);
                total = total.saturating_add(n.saturating_mul((hi - lo).max(0) as u64));
            }
            _ => {
                for e in s.exprs() {
                    total += expr_uses(e, name);
                }
                if let StmtKind::Assign { target, .. } = &s.kind {
                    if target.name == name && target.ranges.is_some() {
                        total += 1;
                    }
                }
                if rebinds(s, name) {
                    return (total, true);
                }
            }
        }
    }
    (total, false)
}

fn check_futures(p: &Program) -> Result<(), StreamTypeError> {
    fn block(task: &TaskDef, stmts: &[Stmt]) -> Result<(), StreamTypeError> {
        for (i, s) in stmts.iter().enumerate() {
            if let StmtKind::For { body, .. } = &s.kind {
                block(task, body)?;
            }
            if let Some(name) = future_binding(s, task) {
                let (uses, _) = uses_in(&stmts[i + 1..], name);
                if uses != 1 {
                    return Err(StreamTypeError::Future {
                        task: task.name.clone(),
                        name: name.to_string(),
                        uses,
                        span: s.span,
                    });
                }
            }
        }
        Ok(())
    }
    for t in &p.tasks {
        block(t, &t.body)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn self_drain_single_slot() {
        let p = parse_program("stream s: stream<i32> depth 1;\ntask t[1](A: i32) { s.put(1); A = s.get(); }").unwrap();
        let r = check_streams(&p).unwrap();
        assert_eq!(r.streams[0].peak_occupancy, 1);
        let mut st = StreamState::new(1);
        assert!(st.put());
        assert!(!st.put());
        assert!(st.get());
        assert_eq!(st, StreamState::new(1));
    }

    #[test]
    fn unused_future_rejected() {
        let p =
            parse_program("stream s: stream<i32>;\ntask a[1]() { s.put(1); }\ntask b[1]() { x = s.get(); }").unwrap();
        assert!(matches!(
            check_streams(&p),
            Err(StreamTypeError::Future { uses: 0, .. })
        ));
    }

    #[test]
    fn future_used_in_loop_is_reuse() {
        let p = parse_program(
            "stream s: stream<i32>;\ntask a[1]() { s.put(1); }\ntask b[1](A: i32) { x = s.get(); for i in range(2) { A = A + x; } }",
        )
        .unwrap();
        assert!(matches!(
            check_streams(&p),
            Err(StreamTypeError::Future { uses: 2, .. })
        ));
    }

    #[test]
    fn two_producers_rejected() {
        let p = parse_program(
            "stream s: stream<i32>;\ntask a[2]() { s.put(1); }\ntask b[1](A: i32) { A = s.get() + s.get(); }",
        )
        .unwrap();
        assert!(matches!(
            check_streams(&p),
            Err(StreamTypeError::NotPointToPoint { .. })
        ));
    }
}
