use std::collections::{BTreeMap, VecDeque};

use super::interp::*;
use super::value::*;
use super::*;
use crate::ir::{Program, ReduceOp};
use crate::vmg::{build_vmg, lower::root_target, Shot, ShotId};

type Site = (String, Vec<usize>, Vec<usize>);

fn tree_reduce(op: ReduceOp, mut level: Vec<TensorValue>) -> TensorValue {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(binary(reduce_binop(op), &a, &b, false, false)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop().expect("non-empty group")
}

/// Runs the program on the dense fabric-free interpreter: every task
/// instance is its own process, streams are unbounded queues and
/// allreduce partials are combined in coordinate order with the same
/// pairwise tree the lowering builds.
pub fn oracle_reference(
    p: &Program,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>, SimError> {
    let g = build_vmg(p).map_err(|e| SimError::Build(e.to_string()))?;
    for (name, ty) in &g.buffers {
        match inputs.get(name) {
            Some(v) if v.shape == ty.shape && v.elem == ty.elem => {}
            Some(v) => return Err(SimError::Input(name.clone(), format!("expected {ty}, got {}", v.ty()))),
            None => return Err(SimError::Input(name.clone(), "missing".into())),
        }
    }
    // Group members per allreduce site, keyed by the non-reduced coordinate.
    let mut group_size: BTreeMap<Site, usize> = BTreeMap::new();
    let mut site_of: BTreeMap<(ShotId, Vec<usize>), Site> = BTreeMap::new();
    for (id, s) in g.shots.iter().enumerate() {
        if let Shot::Task(t) = s {
            for (path, a) in &t.allreduce {
                let key: Vec<usize> = t
                    .coord
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !a.axes.contains(&(*i as u32)))
                    .map(|(_, c)| *c)
                    .collect();
                let site = (t.task.clone(), path.clone(), key);
                *group_size.entry(site.clone()).or_default() += 1;
                site_of.insert((id, path.clone()), site);
            }
        }
    }
    let cost = CostModel::default();
    let mut procs: Vec<Option<TaskProc>> = g
        .shots
        .iter()
        .enumerate()
        .map(|(id, s)| match s {
            Shot::Task(t) => {
                let tiles = t
                    .regions
                    .iter()
                    .map(|(n, r)| (n.clone(), extract(&inputs[n], &r.dims)))
                    .collect();
                let modes = t
                    .allreduce
                    .keys()
                    .map(|path| {
                        let m = if group_size[&site_of[&(id, path.clone())]] > 1 {
                            AllReduceMode::Collect
                        } else {
                            AllReduceMode::Assign
                        };
                        (path.clone(), m)
                    })
                    .collect();
                Some(TaskProc::new(
                    t.body.clone(),
                    t.coord.clone(),
                    tiles,
                    modes,
                    cost.clone(),
                    false,
                ))
            }
            Shot::Combine(_) => None,
        })
        .collect();

    let mut queues: BTreeMap<(String, Vec<usize>), VecDeque<TensorValue>> = BTreeMap::new();
    let mut partials: BTreeMap<Site, Vec<(Vec<usize>, ShotId, TensorValue)>> = BTreeMap::new();
    let mut done = vec![false; procs.len()];
    loop {
        let mut progress = false;
        let mut pending = BTreeMap::new();
        for id in 0..procs.len() {
            let Some(proc) = procs[id].as_mut() else {
                done[id] = true;
                continue;
            };
            if done[id] {
                continue;
            }
            // Run the process until it blocks or finishes.
            loop {
                match proc.poll()? {
                    Action::Done => {
                        done[id] = true;
                        break;
                    }
                    Action::Compute { .. } => proc.resolve(None),
                    Action::Put(Port::Stream(n, i), v) => {
                        queues.entry((n, i)).or_default().push_back(v);
                        proc.resolve(None);
                    }
                    Action::Put(Port::Partial(path), v) => {
                        let site = site_of[&(id, path)].clone();
                        let Shot::Task(t) = &g.shots[id] else { unreachable!() };
                        partials.entry(site).or_default().push((t.coord.clone(), id, v));
                        proc.resolve(None);
                    }
                    Action::Get(Port::Stream(n, i)) => {
                        match queues.get_mut(&(n.clone(), i.clone())).and_then(|q| q.pop_front()) {
                            Some(v) => proc.resolve(Some(v)),
                            None => {
                                pending.insert(id, Action::Get(Port::Stream(n, i)));
                                break;
                            }
                        }
                    }
                    a => return Err(EvalError(format!("unexpected action {a:?} in oracle")).into()),
                }
                progress = true;
            }
        }
        if done.iter().all(|d| *d) {
            break;
        }
        if !progress {
            let d = detect_deadlock(&g, &pending, 0).unwrap_or(SimDeadlock {
                cycle: 0,
                blocked: Vec::new(),
                wait_cycle: Vec::new(),
                cycle_channels: Vec::new(),
            });
            return Err(d.into());
        }
    }

    let mut outputs = inputs.clone();
    for (id, s) in g.shots.iter().enumerate() {
        let (Shot::Task(t), Some(proc)) = (s, &procs[id]) else {
            continue;
        };
        let mut written = t.writes.clone();
        for (path, a) in &t.allreduce {
            if group_size[&site_of[&(id, path.clone())]] == 1 {
                written.insert(a.param.clone());
            }
        }
        for name in written {
            insert(
                outputs.get_mut(&name).unwrap(),
                &t.regions[&name].dims,
                &proc.tiles[&name],
            );
        }
    }
    for ((_, path, _), mut parts) in partials {
        parts.sort_by(|a, b| a.0.cmp(&b.0));
        let root = parts[0].1;
        let Shot::Task(t) = &g.shots[root] else { unreachable!() };
        let op = t.allreduce[&path].op;
        let (target, region, _) = root_target(&g, root, &path, &t.allreduce[&path].param);
        let value = tree_reduce(op, parts.into_iter().map(|p| p.2).collect());
        let mut tile = extract(&inputs[&region.param], &region.dims);
        let dims = super::runtime::target_dims(&target, &tile.shape);
        insert(&mut tile, &dims, &value);
        insert(outputs.get_mut(&region.param).unwrap(), &region.dims, &tile);
    }
    Ok(outputs)
}
