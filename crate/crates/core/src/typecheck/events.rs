//! Lazy extraction of the put/get event sequence of one task instance.

use crate::ir::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Put,
    Get,
}

/// A stream instance is identified by the declaration index and its
/// row-major position in the stream grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamInst {
    pub stream: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub target: StreamInst,
    pub span: SourceSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventError {
    /// An index evaluated outside the stream grid.
    OutOfRange {
        stream: String,
        index: Vec<i64>,
        span: SourceSpan,
    },
    Unresolved {
        stream: String,
        span: SourceSpan,
    },
}

struct Frame<'a> {
    body: &'a [Stmt],
    next: usize,
    /// Induction variable, current value and exclusive bound.
    lp: Option<(&'a str, i64, i64)>,
}

/// Walks a task body in program order, yielding stream events one at a
/// time. Loops are never materialized. Within a statement, gets are issued
/// left to right in evaluation order and the put (if any) comes last.
pub struct EventCursor<'a> {
    program: &'a Program,
    tid: Vec<usize>,
    stack: Vec<Frame<'a>>,
    pending: Vec<Event>,
}

impl<'a> EventCursor<'a> {
    pub fn new(program: &'a Program, body: &'a [Stmt], tid: &[usize]) -> Self {
        Self {
            program,
            tid: tid.to_vec(),
            stack: vec![Frame {
                body,
                next: 0,
                lp: None,
            }],
            pending: Vec::new(),
        }
    }

    fn lookup(&self, name: &str) -> Option<i64> {
        self.stack
            .iter()
            .rev()
            .filter_map(|f| f.lp)
            .find(|(iv, _, _)| *iv == name)
            .map(|(_, v, _)| v)
    }

    fn resolve(&self, r: &StreamRef) -> Result<StreamInst, EventError> {
        let Some(pos) = self.program.streams.iter().position(|s| s.name == r.name) else {
            return Err(EventError::Unresolved {
                stream: r.name.clone(),
                span: r.span,
            });
        };
        let decl = &self.program.streams[pos];
        let lookup = |n: &str| self.lookup(n);
        let mut vals = Vec::with_capacity(r.indices.len());
        for ix in &r.indices {
            match ix.eval(&self.tid, &lookup) {
                Some(v) => vals.push(v),
                None => {
                    return Err(EventError::Unresolved {
                        stream: r.name.clone(),
                        span: r.span,
                    })
                }
            }
        }
        if vals.len() != decl.grid.len() || vals.iter().zip(&decl.grid).any(|(&v, &g)| v < 0 || v as usize >= g) {
            return Err(EventError::OutOfRange {
                stream: r.name.clone(),
                index: vals,
                span: r.span,
            });
        }
        let mut flat = 0usize;
        for (v, g) in vals.iter().zip(&decl.grid) {
            flat = flat * g + *v as usize;
        }
        Ok(StreamInst {
            stream: pos,
            index: flat,
        })
    }

    fn stmt_events(&self, s: &Stmt) -> Result<Vec<Event>, EventError> {
        let mut out = Vec::new();
        for e in s.exprs() {
            let mut err = None;
            e.walk(&mut |x| {
                if let ExprKind::Get(r) = &x.kind {
                    match self.resolve(r) {
                        Ok(target) => out.push(Event {
                            kind: EventKind::Get,
                            target,
                            span: x.span,
                        }),
                        Err(e) => {
                            err.get_or_insert(e);
                        }
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        if let StmtKind::Put { stream, .. } = &s.kind {
            out.push(Event {
                kind: EventKind::Put,
                target: self.resolve(stream)?,
                span: s.span,
            });
        }
        out.reverse();
        Ok(out)
    }

    pub fn next_event(&mut self) -> Result<Option<Event>, EventError> {
        loop {
            if let Some(e) = self.pending.pop() {
                return Ok(Some(e));
            }
            let Some(top) = self.stack.last_mut() else {
                return Ok(None);
            };
            if top.next < top.body.len() {
                let s = &top.body[top.next];
                top.next += 1;
                match &s.kind {
                    StmtKind::For { iv, lo, hi, body } => {
                        if lo < hi {
                            self.stack.push(Frame {
                                body,
                                next: 0,
                                lp: Some((iv, *lo, *hi)),
                            });
                        }
                    }
                    _ => self.pending = self.stmt_events(s)?,
                }
                continue;
            }
            match &mut top.lp {
                Some((_, cur, hi)) if *cur + 1 < *hi => {
                    *cur += 1;
                    top.next = 0;
                }
                _ => {
                    self.stack.pop();
                }
            }
        }
    }
}

/// Collects every event of a task instance, up to `limit`.
pub fn collect_events(
    program: &Program,
    body: &[Stmt],
    tid: &[usize],
    limit: usize,
) -> Result<Option<Vec<Event>>, EventError> {
    let mut c = EventCursor::new(program, body, tid);
    let mut out = Vec::new();
    while let Some(e) = c.next_event()? {
        if out.len() == limit {
            return Ok(None);
        }
        out.push(e);
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn loop_events_in_order() {
        let p = parse_program(
            r#"
stream s: stream<i32>[2];
task t[1]() {
    for i in range(3) {
        for j in range(2) { s[j].put(i); }
        x = s[1].get() + s[0].get();
        s[0].put(x);
    }
}"#,
        )
        .unwrap();
        let ev = collect_events(&p, &p.tasks[0].body, &[0], 1000).unwrap().unwrap();
        let trace: Vec<(EventKind, usize)> = ev.iter().map(|e| (e.kind, e.target.index)).collect();
        use EventKind::*;
        let one = [(Put, 0), (Put, 1), (Get, 1), (Get, 0), (Put, 0)];
        let expect: Vec<_> = one.iter().cycle().take(15).copied().collect();
        assert_eq!(trace, expect);
        assert!(collect_events(&p, &p.tasks[0].body, &[0], 14).unwrap().is_none());
    }

    #[test]
    fn index_out_of_range() {
        let p = parse_program("stream s: stream<i32>[2];\ntask t[1]() { s[tid(0) + 2].put(1); }").unwrap();
        let err = collect_events(&p, &p.tasks[0].body, &[0], 10).unwrap_err();
        assert!(matches!(err, EventError::OutOfRange { .. }));
    }
}
