//! Random program generators for property tests and benchmarks.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::layout_opt::{Transform, TransformChain};

const ELEMS: [&str; 3] = ["i8", "i16", "i32"];

/// Single-instance tasks exchanging tokens over a few streams in random
/// order. Puts and gets per stream usually balance; about one stream in
/// eight is unbalanced. At most `max_events` events in total.
pub fn stream_program<R: Rng>(rng: &mut R, max_events: usize) -> String {
    let tasks = rng.gen_range(2..=3);
    let streams = rng.gen_range(1..=3);
    let mut events: Vec<Vec<String>> = vec![Vec::new(); tasks];
    let mut src = String::new();
    let mut total = 0;
    for s in 0..streams {
        let p = rng.gen_range(0..tasks);
        let c = (p + rng.gen_range(1..tasks)) % tasks;
        let depth = rng.gen_range(1..=2);
        let puts = rng.gen_range(1..=2);
        let gets = if rng.gen_bool(0.125) {
            if rng.gen_bool(0.5) {
                puts + 1
            } else {
                puts - 1
            }
        } else {
            puts
        };
        if total + puts + gets > max_events {
            break;
        }
        total += puts + gets;
        writeln!(src, "stream s{s}: stream<i32[4]> depth {depth};").unwrap();
        for _ in 0..puts {
            events[p].push(format!("s{s}.put(X{p} + {});", s + 1));
        }
        for _ in 0..gets {
            events[c].push(format!("X{c} = X{c} + s{s}.get();"));
        }
    }
    for (t, ev) in events.iter_mut().enumerate() {
        ev.shuffle(rng);
        write!(src, "task t{t}[1](X{t}: i32[4]) {{").unwrap();
        for e in ev.iter() {
            write!(src, " {e}").unwrap();
        }
        src.push_str(" }\n");
    }
    src
}

/// A well-typed program: a linear pipeline of SPMD stages connected by
/// per-instance streams, optionally next to an independent reduction
/// task. Every stage is mapped on the same 1-D grid.
pub fn pipeline_program<R: Rng>(rng: &mut R) -> String {
    let elem = ELEMS[rng.gen_range(0..ELEMS.len())];
    let g = [1, 2, 4][rng.gen_range(0..3)];
    let stages: usize = rng.gen_range(1..=3);
    let iters = rng.gen_range(1..=3);
    let n = 4 * iters;
    let mut src = String::new();
    for k in 0..stages.saturating_sub(1) {
        let depth = rng.gen_range(1..=2);
        writeln!(src, "stream h{k}: stream<{elem}[4]>[{g}] depth {depth};").unwrap();
    }
    let c = |rng: &mut R| rng.gen_range(-3..=3);
    if stages == 1 {
        let (a, b) = (c(rng), c(rng));
        writeln!(
            src,
            "task s0[{g}](I: {elem}[{}] @ \"S0\", O: {elem}[{}] @ \"S0\") {{ O = I * {a} + {b}; }}",
            g * n,
            g * n
        )
        .unwrap();
    }
    for k in 0..stages {
        if stages == 1 {
            break;
        }
        let body = if k == 0 {
            let a = c(rng);
            writeln!(src, "task s0[{g}](I: {elem}[{}] @ \"S0\") {{", g * n).unwrap();
            format!("h0[tid(0)].put(I[i * 4 : i * 4 + 4] * {a});")
        } else if k + 1 == stages {
            writeln!(src, "task s{k}[{g}](O: {elem}[{}] @ \"S0\") {{", g * n).unwrap();
            let op = ["+", "-", "*"][rng.gen_range(0..3)];
            format!(
                "O[i * 4 : i * 4 + 4] = O[i * 4 : i * 4 + 4] {op} h{}[tid(0)].get();",
                k - 1
            )
        } else {
            writeln!(src, "task s{k}[{g}](W{k}: {elem}[4]) {{").unwrap();
            format!("h{k}[tid(0)].put(h{}[tid(0)].get() + W{k});", k - 1)
        };
        writeln!(src, "    for i in range({iters}) {{ {body} }}\n}}").unwrap();
    }
    if rng.gen_bool(0.3) {
        let q = [2, 3, 4][rng.gen_range(0..3)];
        writeln!(
            src,
            "task r[1, {q}](A: {elem}[4, {}] @ \"RS1\", B: {elem}[{}, 4] @ \"S1R\", C: {elem}[4, 4]) {{ C = allreduce(matmul(A, B), \"+\"); }}",
            4 * q,
            4 * q
        )
        .unwrap();
    }
    src
}

/// A random chain of layout transforms starting from a random tensor of
/// at most 2^12 elements.
pub fn layout_chain<R: Rng>(rng: &mut R, max_len: usize) -> TransformChain {
    let rank = rng.gen_range(1..=3);
    let dims = [1, 2, 3, 4, 6, 8];
    let input: Vec<usize> = (0..rank).map(|_| dims[rng.gen_range(0..dims.len())]).collect();
    let mut shape = input.clone();
    let mut steps = Vec::new();
    let len = rng.gen_range(0..=max_len);
    while steps.len() < len {
        let r = shape.len();
        let t = match rng.gen_range(0..5) {
            0 => {
                let axis = rng.gen_range(0..r);
                let divs: Vec<usize> = (1..=shape[axis]).filter(|f| shape[axis].is_multiple_of(*f)).collect();
                if r >= 5 {
                    continue;
                }
                Transform::Tile {
                    axis,
                    factor: divs[rng.gen_range(0..divs.len())],
                }
            }
            1 if r >= 2 => Transform::Pack {
                axis: rng.gen_range(0..r - 1),
            },
            2 => {
                let mut perm: Vec<usize> = (0..r).collect();
                perm.shuffle(rng);
                Transform::Transpose(perm)
            }
            3 => {
                let sizes: Vec<usize> = shape.iter().map(|&n| rng.gen_range(1..=n)).collect();
                let offsets = shape
                    .iter()
                    .zip(&sizes)
                    .map(|(&n, &s)| rng.gen_range(0..=n - s))
                    .collect();
                Transform::Slice { offsets, sizes }
            }
            4 => {
                let total: usize = shape.iter().product();
                let a = (1..=total).filter(|d| total.is_multiple_of(*d)).collect::<Vec<_>>();
                let d = a[rng.gen_range(0..a.len())];
                Transform::Reshape(if rng.gen_bool(0.5) {
                    vec![d, total / d]
                } else {
                    vec![total / d, d]
                })
            }
            _ => continue,
        };
        shape = t.to_map(&shape, steps.len()).expect("generated step is valid").sizes;
        steps.push(t);
    }
    TransformChain::new(input, steps)
}
