use std::collections::BTreeSet;

use super::streams::future_binding;
use crate::ir::*;

/// Makes every future unwrap explicit. A get consumed inside a larger
/// expression is awaited in place; a get bound to a local is awaited at the
/// single later use of that local.
pub fn insert_awaits(p: &Program) -> Program {
    let mut out = p.clone();
    for t in &mut out.tasks {
        let task = t.clone();
        let mut pending = BTreeSet::new();
        block(&task, &mut t.body, &mut pending);
    }
    out
}

fn block(task: &TaskDef, body: &mut [Stmt], pending: &mut BTreeSet<String>) {
    for s in body.iter_mut() {
        let binds = future_binding(s, task).map(str::to_string);
        match &mut s.kind {
            StmtKind::For { body, .. } => block(task, body, pending),
            StmtKind::Assign { value: e, .. }
            | StmtKind::Put { value: e, .. }
            | StmtKind::Local { init: Some(e), .. } => {
                if binds.is_none() {
                    rewrite(e, pending);
                }
            }
            StmtKind::Local { init: None, .. } => {}
        }
        if let StmtKind::Assign { target, .. } = &mut s.kind {
            if target.ranges.is_some() {
                pending.remove(&target.name);
            }
        }
        if let Some(name) = binds {
            pending.insert(name);
        }
    }
}

fn rewrite(e: &mut Expr, pending: &mut BTreeSet<String>) {
    let wrap = match &e.kind {
        ExprKind::Get(_) => true,
        ExprKind::Var(n) | ExprKind::Slice { name: n, .. } => pending.remove(n),
        ExprKind::Await(_) => return,
        _ => false,
    };
    if wrap {
        let inner = std::mem::replace(e, Expr::new(ExprKind::Int(0)));
        let span = inner.span;
        *e = Expr::with_span(ExprKind::Await(Box::new(inner)), span);
        return;
    }
    for c in e.children_mut() {
        rewrite(c, pending);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn count_awaits(body: &[Stmt]) -> usize {
        let mut n = 0;
        walk_stmts(body, &mut |_, s| {
            for e in s.exprs() {
                e.walk(&mut |x| n += matches!(x.kind, ExprKind::Await(_)) as usize);
            }
        });
        n
    }

    #[test]
    fn await_at_operand() {
        let p = parse_program("stream Z: stream<i8[4]>;\ntask c[1](B: i8[4]) { B[:] = Z.get() + 1; }").unwrap();
        let q = insert_awaits(&p);
        let StmtKind::Assign { value, .. } = &q.tasks[0].body[0].kind else {
            panic!()
        };
        let ExprKind::Binary(_, lhs, _) = &value.kind else {
            panic!()
        };
        assert!(matches!(&lhs.kind, ExprKind::Await(inner) if matches!(inner.kind, ExprKind::Get(_))));
    }

    #[test]
    fn await_at_later_use() {
        let p =
            parse_program("stream Z: stream<i8[4]>;\ntask c[1](B: i8[4]) { x = Z.get(); y: i8[4] = 2; B = y * x; }")
                .unwrap();
        let q = insert_awaits(&p);
        assert_eq!(count_awaits(&q.tasks[0].body), 1);
        let StmtKind::Assign { value, .. } = &q.tasks[0].body[2].kind else {
            panic!()
        };
        let ExprKind::Binary(_, _, rhs) = &value.kind else {
            panic!()
        };
        assert!(matches!(&rhs.kind, ExprKind::Await(_)));
    }
}
