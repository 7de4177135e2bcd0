use std::fmt::Write;

use crate::ir::*;

/// Prints a program in the textual syntax accepted by [`super::parse_program`].
pub fn emit_text(p: &Program) -> String {
    let mut out = String::new();
    for (name, v) in &p.consts {
        let _ = writeln!(out, "let {name} = {v};");
    }
    if !p.consts.is_empty() {
        out.push('\n');
    }
    for s in &p.streams {
        let _ = write!(out, "stream {}: stream<{}>", s.name, s.ty.elem);
        if !s.grid.is_empty() {
            let _ = write!(out, "[{}]", join(&s.grid));
        }
        let _ = write!(out, " depth {}", s.ty.depth);
        if s.ty.pack != 1 {
            let _ = write!(out, " pack {}", s.ty.pack);
        }
        out.push_str(";\n");
    }
    for t in &p.tasks {
        out.push('\n');
        let params: Vec<String> = t
            .params
            .iter()
            .map(|prm| {
                if prm.layout.axes().iter().all(|a| *a == AxisLayout::R) {
                    format!("{}: {}", prm.name, prm.ty)
                } else {
                    format!("{}: {} @ \"{}\"", prm.name, prm.ty, prm.layout)
                }
            })
            .collect();
        let _ = writeln!(out, "task {}[{}]({}) {{", t.name, join(&t.mapping), params.join(", "));
        body(&mut out, &t.body, 1);
        out.push_str("}\n");
    }
    out
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn body(out: &mut String, stmts: &[Stmt], depth: usize) {
    let pad = "    ".repeat(depth);
    for s in stmts {
        out.push_str(&pad);
        match &s.kind {
            StmtKind::For {
                iv,
                lo,
                hi,
                body: inner,
            } => {
                if *lo == 0 {
                    let _ = writeln!(out, "for {iv} in range({hi}) {{");
                } else {
                    let _ = writeln!(out, "for {iv} in range({lo}, {hi}) {{");
                }
                body(out, inner, depth + 1);
                out.push_str(&pad);
                out.push_str("}\n");
            }
            StmtKind::Assign { target, value } => {
                out.push_str(&target.name);
                if let Some(r) = &target.ranges {
                    out.push_str(&ranges(r));
                }
                let _ = writeln!(out, " = {};", expr(value, 0));
            }
            StmtKind::Put { stream, value } => {
                let _ = writeln!(out, "{}.put({});", stream_ref(stream), expr(value, 0));
            }
            StmtKind::Local { name, ty, init } => {
                out.push_str(name);
                if let Some(ty) = ty {
                    let _ = write!(out, ": {ty}");
                }
                if let Some(e) = init {
                    let _ = write!(out, " = {}", expr(e, 0));
                }
                out.push_str(";\n");
            }
        }
    }
}

fn stream_ref(r: &StreamRef) -> String {
    if r.indices.is_empty() {
        r.name.clone()
    } else {
        let ix: Vec<String> = r.indices.iter().map(|i| index(i, 0)).collect();
        format!("{}[{}]", r.name, ix.join(", "))
    }
}

fn ranges(rs: &[SliceRange]) -> String {
    let items: Vec<String> = rs
        .iter()
        .map(|r| match r {
            SliceRange::Full => ":".to_string(),
            SliceRange::Range(lo, hi) => format!("{}:{}", index(lo, 0), index(hi, 0)),
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// `min_prec` is the binding strength required by the context; operators
/// binding weaker than that are parenthesized.
fn index(e: &IndexExpr, min_prec: u8) -> String {
    let (s, prec) = match e {
        IndexExpr::Const(c) if *c < 0 => (c.to_string(), 3),
        IndexExpr::Const(c) => (c.to_string(), 4),
        IndexExpr::Var(v) => (v.clone(), 4),
        IndexExpr::Tid(k) => (format!("tid({k})"), 4),
        IndexExpr::Neg(a) => (format!("-{}", index(a, 3)), 3),
        IndexExpr::Add(a, b) => (format!("{} + {}", index(a, 1), index(b, 2)), 1),
        IndexExpr::Sub(a, b) => (format!("{} - {}", index(a, 1), index(b, 2)), 1),
        IndexExpr::Mul(a, b) => (format!("{} * {}", index(a, 2), index(b, 3)), 2),
        IndexExpr::FloorDiv(a, b) => (format!("{} // {}", index(a, 2), index(b, 3)), 2),
        IndexExpr::Mod(a, b) => (format!("{} % {}", index(a, 2), index(b, 3)), 2),
    };
    if prec < min_prec {
        format!("({s})")
    } else {
        s
    }
}

fn expr(e: &Expr, min_prec: u8) -> String {
    let (s, prec) = match &e.kind {
        ExprKind::Int(i) => (i.to_string(), if *i < 0 { 3 } else { 4 }),
        ExprKind::Float(f) => (format!("{f:?}"), if *f < 0.0 || f.is_sign_negative() { 3 } else { 4 }),
        ExprKind::Var(v) => (v.clone(), 4),
        ExprKind::Tid(k) => (format!("tid({k})"), 4),
        ExprKind::Get(r) => (format!("{}.get()", stream_ref(r)), 4),
        ExprKind::Await(inner) => return expr(inner, min_prec),
        ExprKind::Slice { name, ranges: r } => (format!("{name}{}", ranges(r)), 4),
        ExprKind::Matmul(a, b) => (format!("matmul({}, {})", expr(a, 0), expr(b, 0)), 4),
        ExprKind::Binary(BinOp::Max, a, b) => (format!("max({}, {})", expr(a, 0), expr(b, 0)), 4),
        ExprKind::Binary(BinOp::Min, a, b) => (format!("min({}, {})", expr(a, 0), expr(b, 0)), 4),
        ExprKind::Binary(BinOp::Mul, a, b) => (format!("{} * {}", expr(a, 2), expr(b, 3)), 2),
        ExprKind::Binary(op, a, b) => (format!("{} {} {}", expr(a, 1), op.symbol(), expr(b, 2)), 1),
        ExprKind::Reduce { op, axis, arg } => (format!("reduce(\"{}\", {axis}, {})", op.symbol(), expr(arg, 0)), 4),
        ExprKind::AllReduce { op, arg } => (format!("allreduce({}, \"{}\")", expr(arg, 0), op.symbol()), 4),
        ExprKind::Call { name, args } => {
            let a: Vec<String> = args.iter().map(|x| expr(x, 0)).collect();
            (format!("{name}({})", a.join(", ")), 4)
        }
    };
    if prec < min_prec {
        format!("({s})")
    } else {
        s
    }
}
