//! Independent oracles shared by the property tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use datoc::ir::Program;
use datoc::layout_opt::Transform;
use datoc::typecheck::events::{collect_events, EventKind};
use datoc::typecheck::instances;

type Inst = (usize, usize);

/// Explores every interleaving. Accepts when no reachable state is stuck
/// and every stream is empty at the end.
pub fn exhaustive_accepts(p: &Program) -> bool {
    let seqs: Vec<Vec<(EventKind, Inst)>> = instances(p)
        .iter()
        .map(|i| {
            collect_events(p, &i.task.body, &i.coord, 64)
                .unwrap()
                .unwrap()
                .into_iter()
                .map(|e| (e.kind, (e.target.stream, e.target.index)))
                .collect()
        })
        .collect();
    let depth = |s: Inst| p.streams[s.0].ty.depth;
    let mut seen = HashSet::new();
    let mut stack = vec![(vec![0usize; seqs.len()], BTreeMap::<Inst, usize>::new())];
    while let Some((pos, fill)) = stack.pop() {
        if !seen.insert((pos.clone(), fill.clone())) {
            continue;
        }
        let mut moved = false;
        for (i, seq) in seqs.iter().enumerate() {
            let Some(&(kind, s)) = seq.get(pos[i]) else { continue };
            let n = fill.get(&s).copied().unwrap_or(0);
            let next = match kind {
                EventKind::Put if n < depth(s) => n + 1,
                EventKind::Get if n > 0 => n - 1,
                _ => continue,
            };
            moved = true;
            let mut pos2 = pos.clone();
            pos2[i] += 1;
            let mut fill2 = fill.clone();
            fill2.insert(s, next);
            stack.push((pos2, fill2));
        }
        let finished = pos.iter().zip(&seqs).all(|(&k, s)| k == s.len());
        if !moved && (!finished || fill.values().any(|&n| n > 0)) {
            return false;
        }
    }
    true
}

fn unravel(mut f: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = f % shape[k];
        f /= shape[k];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Source index of every output element, computed by moving explicit
/// arrays around.
pub fn oracle(input: &[usize], steps: &[Transform]) -> (Vec<usize>, Vec<usize>) {
    let mut shape = input.to_vec();
    let mut data: Vec<usize> = (0..input.iter().product()).collect();
    for s in steps {
        match s {
            Transform::Tile { axis, factor } => {
                let n = shape[*axis];
                shape.splice(*axis..=*axis, [n / factor, *factor]);
            }
            Transform::Pack { axis } => {
                let n = shape[*axis] * shape[*axis + 1];
                shape.splice(*axis..=*axis + 1, [n]);
            }
            Transform::Reshape(s) => shape = s.clone(),
            Transform::Transpose(perm) => {
                let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
                data = (0..data.len())
                    .map(|f| {
                        let o = unravel(f, &out);
                        let mut src = vec![0; perm.len()];
                        for (k, &p) in perm.iter().enumerate() {
                            src[p] = o[k];
                        }
                        data[ravel(&src, &shape)]
                    })
                    .collect();
                shape = out;
            }
            Transform::Slice { offsets, sizes } => {
                data = (0..sizes.iter().product())
                    .map(|f| {
                        let i: Vec<usize> = unravel(f, sizes).iter().zip(offsets).map(|(a, b)| a + b).collect();
                        data[ravel(&i, &shape)]
                    })
                    .collect();
                shape = sizes.clone();
            }
            Transform::Map(m) => {
                data = (0..m.numel())
                    .map(|f| {
                        let i = unravel(f, &m.sizes);
                        let a = m.offset + i.iter().zip(&m.strides).map(|(&x, &s)| x as i64 * s).sum::<i64>();
                        data[a as usize]
                    })
                    .collect();
                shape = m.sizes.clone();
            }
        }
    }
    (shape, data)
}
