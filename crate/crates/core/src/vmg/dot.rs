use std::fmt::Write;

use serde_json::{json, Value};

use super::*;

/// Graphviz rendering. Nodes and edges are emitted in id order; channels
/// internal to a node are not drawn.
pub fn to_dot(g: &Vmg) -> String {
    let owner = g.shot_nodes();
    let mut out = String::from("digraph vmg {\n    node [shape=box];\n");
    for n in g.nodes.keys() {
        let _ = writeln!(out, "    n{n} [label=\"{}\"];", g.node_label(*n));
    }
    for ch in &g.channels {
        let (a, b) = (owner[ch.src], owner[ch.dst]);
        if a == b {
            continue;
        }
        let style = match ch.kind {
            ChannelKind::Stream { .. } => "solid",
            ChannelKind::Reduction { .. } => "dashed",
        };
        let _ = writeln!(out, "    n{a} -> n{b} [style={style}, label=\"{}\"];", ch.label());
    }
    out.push_str("}\n");
    out
}

/// `{nodes: [...], edges: [...]}` dump of the current node grouping.
pub fn to_json(g: &Vmg) -> Value {
    let owner = g.shot_nodes();
    let ports = g.port_pressure();
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|(n, shots)| {
            let (pi, po) = ports[n];
            json!({
                "id": n,
                "label": g.node_label(*n),
                "shots": shots.iter().map(|s| g.shots[*s].label()).collect::<Vec<_>>(),
                "ports_in": pi,
                "ports_out": po,
            })
        })
        .collect();
    let edges: Vec<Value> = g
        .channels
        .iter()
        .map(|ch| {
            let kind = match ch.kind {
                ChannelKind::Stream { .. } => "stream",
                ChannelKind::Reduction { .. } => "reduction",
            };
            json!({
                "src": owner[ch.src],
                "dst": owner[ch.dst],
                "kind": kind,
                "label": ch.label(),
                "payload": ch.payload.to_string(),
                "internal": owner[ch.src] == owner[ch.dst],
            })
        })
        .collect();
    json!({ "nodes": nodes, "edges": edges })
}

#[cfg(test)]
mod tests {
    use crate::parser::parse_program;
    use crate::vmg::*;

    #[test]
    fn producer_consumer_dot() {
        let p = parse_program(
            "stream s: stream<i32>;\ntask a[1](X: i32) { s.put(X); }\ntask b[1](Y: i32) { Y = s.get(); }",
        )
        .unwrap();
        let g = build_lowered(&p).unwrap();
        let dot = to_dot(&g);
        assert!(dot.contains("n0 [label=\"a@(0)/1\"]"));
        assert!(dot.contains("n0 -> n1 [style=solid, label=\"s\"]"));
        assert_eq!(dot.matches("->").count(), 1);
        assert_eq!(to_json(&g)["edges"].as_array().unwrap().len(), 1);
    }
}
