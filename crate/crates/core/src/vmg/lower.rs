use std::collections::BTreeMap;

use super::*;

enum Source {
    Member(ShotId),
    Combine(ShotId),
}

/// Replaces every allreduce with a binary combining tree per reduction
/// group. Group members are paired left to right in coordinate order; an
/// odd member is carried up to the next level unchanged.
pub fn lower_allreduce(mut g: Vmg) -> Vmg {
    if g.lowered {
        return g;
    }
    g.lowered = true;
    let mut sites: BTreeMap<(String, Vec<usize>), Vec<ShotId>> = BTreeMap::new();
    for (id, s) in g.shots.iter().enumerate() {
        if let Shot::Task(t) = s {
            for path in t.allreduce.keys() {
                sites.entry((t.task.clone(), path.clone())).or_default().push(id);
            }
        }
    }
    let mut next_node = g.nodes.keys().next_back().map_or(0, |n| n + 1);
    for ((task, path), members) in sites {
        let Shot::Task(first) = &g.shots[members[0]] else {
            unreachable!()
        };
        let info = first.allreduce[&path].clone();
        let mut groups: BTreeMap<Vec<usize>, Vec<ShotId>> = BTreeMap::new();
        for &m in &members {
            let Shot::Task(t) = &g.shots[m] else { unreachable!() };
            let key: Vec<usize> = t
                .coord
                .iter()
                .enumerate()
                .filter(|(i, _)| !info.axes.contains(&(*i as u32)))
                .map(|(_, c)| *c)
                .collect();
            groups.entry(key).or_default().push(m);
        }
        for (key, mut group) in groups {
            if group.len() < 2 {
                continue;
            }
            group.sort_by_key(|&m| match &g.shots[m] {
                Shot::Task(t) => t.coord.clone(),
                _ => vec![],
            });
            let root_member = group[0];
            let (target, region, payload) = root_target(&g, root_member, &path, &info.param);
            let mut level: Vec<Source> = group.iter().map(|&m| Source::Member(m)).collect();
            while level.len() > 1 {
                let mut next = Vec::new();
                let mut it = level.into_iter();
                while let Some(a) = it.next() {
                    let Some(b) = it.next() else {
                        next.push(a);
                        break;
                    };
                    let cid = g.shots.len();
                    let lhs = connect(&mut g, a, cid, "lhs", &task, &info, &payload, &path);
                    let rhs = connect(&mut g, b, cid, "rhs", &task, &info, &payload, &path);
                    g.shots.push(Shot::Combine(CombineShot {
                        task: task.clone(),
                        param: info.param.clone(),
                        op: info.op,
                        group: key.clone(),
                        lhs,
                        rhs,
                        output: CombineOutput::Param {
                            target: target.clone(),
                            region: region.clone(),
                        },
                    }));
                    g.nodes.insert(next_node, vec![cid]);
                    next_node += 1;
                    next.push(Source::Combine(cid));
                }
                level = next;
            }
        }
    }
    g
}

#[allow(clippy::too_many_arguments)]
fn connect(
    g: &mut Vmg,
    src: Source,
    dst: ShotId,
    side: &str,
    task: &str,
    info: &AllReduceInfo,
    payload: &TensorType,
    path: &[usize],
) -> ChannelId {
    let ch = g.channels.len();
    let (src_id, src_role) = match src {
        Source::Member(m) => {
            if let Shot::Task(t) = &mut g.shots[m] {
                t.allreduce.get_mut(path).expect("site").channel = Some(ch);
            }
            (m, format!("{task}.reduce:{}", info.param))
        }
        Source::Combine(c) => {
            if let Shot::Combine(cs) = &mut g.shots[c] {
                cs.output = CombineOutput::Channel(ch);
            }
            (c, format!("{task}.combine.up:{}", info.param))
        }
    };
    g.channels.push(Channel {
        kind: ChannelKind::Reduction { op: info.op },
        src: src_id,
        dst,
        src_role,
        dst_role: format!("{task}.combine.{side}:{}", info.param),
        payload: payload.clone(),
        depth: 1,
    });
    ch
}

pub(crate) fn root_target(g: &Vmg, member: ShotId, path: &[usize], param: &str) -> (LValue, TileRegion, TensorType) {
    let Shot::Task(t) = &g.shots[member] else {
        unreachable!()
    };
    let mut body = t.body.as_slice();
    let mut stmt = None;
    for (depth, &i) in path.iter().enumerate() {
        let s = &body[i];
        if depth + 1 == path.len() {
            stmt = Some(s);
        } else if let StmtKind::For { body: inner, .. } = &s.kind {
            body = inner;
        }
    }
    let Some(Stmt {
        kind: StmtKind::Assign { target, .. },
        ..
    }) = stmt
    else {
        unreachable!("allreduce site is an assignment")
    };
    let region = t.regions[param].clone();
    let elem = g
        .buffers
        .iter()
        .find(|(n, _)| n == param)
        .map(|(_, ty)| ty.elem)
        .unwrap_or(ElemType::F32);
    let shape = match &target.ranges {
        None => region.sizes(),
        Some(rs) => rs
            .iter()
            .zip(region.sizes())
            .map(|(r, full)| match r {
                SliceRange::Full => full,
                SliceRange::Range(lo, hi) => {
                    let none = |_: &str| None;
                    let (l, h) = (lo.eval(&[], &none).unwrap_or(0), hi.eval(&[], &none).unwrap_or(0));
                    (h - l).max(0) as usize
                }
            })
            .collect(),
    };
    (target.clone(), region, TensorType::new(elem, shape))
}
