use super::*;
use crate::ir::FabricConfig;
use crate::mapping::{apply, place, Primitive};
use crate::parser::parse_program;
use crate::vmg::build_lowered;

fn mapped(src: &str, prims: &[Primitive]) -> PhysicalMapping {
    let f = FabricConfig::default();
    let mut g = build_lowered(&parse_program(src).unwrap()).unwrap();
    for p in prims {
        g = apply(&g, p, &f).unwrap();
    }
    place(&g, prims, &f).unwrap()
}

fn manual(buffer: &str, dims: Vec<(usize, usize)>, tile: Tile, step: usize) -> Transfer {
    let region = TileRegion {
        param: buffer.into(),
        dims,
    };
    Transfer {
        id: 0,
        buffer: buffer.into(),
        elements: region.numel(),
        region,
        direction: Direction::In,
        epoch: 0,
        token: 0,
        dests: vec![Dest {
            tile,
            node: 0,
            shot: 0,
            step,
        }],
    }
}

#[test]
fn single_task_one_epoch() {
    let m = mapped("task t[1](A: i32[4], B: i32[4]) { B = A + 1; }", &[]);
    let s = schedule(&m).unwrap();
    assert_eq!(s.epochs.len(), 1);
    assert_eq!(s.transfers.len(), 2);
}

#[test]
fn bundled_replicas_get_tokens() {
    let m = mapped(
        r#"task t[2](A: i32[8] @ "S0", B: i32[8] @ "S0") { B = A + 1; }"#,
        &[Primitive::Bundle(vec![0, 1])],
    );
    let (epochs, of) = compute_epochs(&m);
    assert_eq!(epochs.len(), 1);
    let raw = build_transfers(&m, &of);
    let toks: BTreeSet<usize> = raw.iter().map(|t| t.token).collect();
    assert_eq!(toks, BTreeSet::from([0, 1]));
    // adjacent replica slices on one tile coalesce
    let s = schedule(&m).unwrap();
    assert_eq!(s.transfers.iter().filter(|t| t.direction == Direction::In).count(), 1);
}

#[test]
fn chained_stages_two_epochs() {
    let m = mapped(
        r#"
stream h: stream<i32[4]>;
task s1[1](X: i32[4]) { h.put(X * 2); }
task s2[1](Y: i32[4]) { Y = h.get() + 1; }
"#,
        &[Primitive::Chain(0, 1)],
    );
    let (epochs, of) = compute_epochs(&m);
    assert_eq!(epochs.len(), 2);
    assert_eq!(of["s1"], 0);
    assert_eq!(of["s2"], 1);
}

#[test]
fn replicated_argument_is_multicast() {
    let src = r#"task t[4](A: i32[8] @ "R", B: i32[32] @ "S0") { B = B + A; }"#;
    let m = mapped(src, &[]);
    let (_, of) = compute_epochs(&m);
    let raw = build_transfers(&m, &of);
    let merged = merge_multicast(raw.clone());
    let a: Vec<&Transfer> = merged.iter().filter(|t| t.buffer == "A").collect();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].dests.len(), 4);
    assert_eq!(
        delivered_elements(&raw, &m.vmg.buffers),
        delivered_elements(&merged, &m.vmg.buffers)
    );
}

#[test]
fn no_duplicates_unchanged() {
    let ts = vec![
        manual("A", vec![(0, 8)], (0, 0), 0),
        manual("B", vec![(0, 8)], (0, 0), 0),
    ];
    assert_eq!(merge_multicast(ts.clone()).len(), 2);
}

#[test]
fn adjacent_rows_coalesce() {
    let ts = vec![
        manual("A", vec![(0, 1), (0, 8)], (0, 0), 0),
        manual("A", vec![(1, 1), (0, 8)], (0, 0), 1),
    ];
    let c = coalesce_spatial(ts);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].elements, 16);
    assert_eq!(c[0].region.dims, vec![(0, 2), (0, 8)]);
}

#[test]
fn different_tiles_not_coalesced() {
    let ts = vec![
        manual("A", vec![(0, 1), (0, 8)], (0, 0), 0),
        manual("A", vec![(1, 1), (0, 8)], (0, 1), 0),
    ];
    assert_eq!(coalesce_spatial(ts).len(), 2);
}

#[test]
fn giant_transfer_split_in_two() {
    let m = mapped("task t[1](A: i32[64, 64], B: i32[64, 64]) { B = A; }", &[]);
    let ts = vec![manual("A", vec![(0, 64), (0, 64)], (0, 0), 0)];
    let s = split_for_ports(ts.clone(), &m);
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].region.dims, vec![(0, 32), (0, 64)]);
    assert_eq!(
        delivered_elements(&ts, &m.vmg.buffers),
        delivered_elements(&s, &m.vmg.buffers)
    );
    assert!(assign_ports(&s, &m).is_ok());
}

#[test]
fn small_transfer_never_split() {
    let m = mapped("task t[1](A: i32[16], B: i32[16]) { B = A; }", &[]);
    let ts = vec![manual("A", vec![(0, 16)], (0, 0), 0)];
    assert_eq!(split_for_ports(ts, &m).len(), 1);
}

#[test]
fn ports_assigned_lowest_first() {
    let m = mapped("task t[1](A: i32[4], B: i32[4]) { B = A; }", &[]);
    let mut ts = vec![
        manual("A", vec![(0, 4)], (0, 0), 0),
        manual("B", vec![(0, 4)], (0, 0), 0),
    ];
    ts[1].id = 1;
    let pa = assign_ports(&ts, &m).unwrap();
    let ports: Vec<usize> = pa[0].slots.iter().map(|s| s.port).collect();
    assert_eq!(ports, vec![0, 1]);
    check_port_safety(&pa, &m.fabric).unwrap();
}

#[test]
fn pigeonhole_sched_error() {
    let m = mapped("task t[1](A: i32[4], B: i32[4]) { B = A; }", &[]);
    let mut ts: Vec<Transfer> = (0..3).map(|i| manual("A", vec![(i, 1)], (0, 0), 0)).collect();
    for (i, t) in ts.iter_mut().enumerate() {
        t.id = i;
    }
    let err = assign_ports(&ts, &m).unwrap_err();
    assert_eq!(err.tile, (0, 0));
    assert_eq!(err.step, 0);
}

#[test]
fn gantt_has_a_row_per_port() {
    let m = mapped("task t[1](A: i32[4], B: i32[4]) { B = A + 1; }", &[]);
    let s = schedule(&m).unwrap();
    let g = render_gantt(&s);
    assert_eq!(g.lines().count(), 2);
    assert!(g.contains("(0,0) in  p0 |#| A#"));
}
