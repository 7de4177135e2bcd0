use std::collections::BTreeMap;

use super::*;

/// Merges input transfers of the same tile region that are consumed at the
/// same step into one transfer with several destinations. Uses at different
/// steps stay separate so a port is never held across idle steps.
/// Buffer, region, epoch and token.
type MulticastKey = (String, Vec<(usize, usize)>, usize, usize);

pub fn merge_multicast(ts: Vec<Transfer>) -> Vec<Transfer> {
    let mut out: Vec<Transfer> = Vec::new();
    let mut index: BTreeMap<MulticastKey, usize> = BTreeMap::new();
    for t in ts {
        if t.direction != Direction::In {
            out.push(t);
            continue;
        }
        let key = (t.buffer.clone(), t.region.dims.clone(), t.epoch, t.step_range().0);
        let (lo, hi) = t.step_range();
        match index.get(&key) {
            Some(&i) if lo == hi && out[i].step_range() == (lo, lo) => out[i].dests.extend(t.dests),
            _ => {
                index.insert(key, out.len());
                out.push(t);
            }
        }
    }
    for (i, t) in out.iter_mut().enumerate() {
        t.id = i;
    }
    out
}

/// Union region when `a` and `b` touch along exactly one axis and agree on
/// every other axis.
fn adjacent(a: &TileRegion, b: &TileRegion) -> Option<TileRegion> {
    if a.param != b.param || a.dims.len() != b.dims.len() {
        return None;
    }
    let differing: Vec<usize> = (0..a.dims.len()).filter(|&i| a.dims[i] != b.dims[i]).collect();
    let [axis] = differing[..] else { return None };
    let (x, y) = (a.dims[axis], b.dims[axis]);
    let joined = if x.0 + x.1 == y.0 {
        (x.0, x.1 + y.1)
    } else if y.0 + y.1 == x.0 {
        (y.0, x.1 + y.1)
    } else {
        return None;
    };
    let mut dims = a.dims.clone();
    dims[axis] = joined;
    Some(TileRegion {
        param: a.param.clone(),
        dims,
    })
}

fn coalescible(a: &Transfer, b: &Transfer) -> Option<TileRegion> {
    if a.buffer != b.buffer || a.direction != b.direction || a.epoch != b.epoch || a.tiles() != b.tiles() {
        return None;
    }
    let (ra, rb) = (a.step_range(), b.step_range());
    if rb.0 > ra.1 + 1 || ra.0 > rb.1 + 1 {
        return None;
    }
    adjacent(&a.region, &b.region)
}

/// Fuses transfers whose regions are adjacent along one axis, target the
/// same tiles and are used over contiguous steps. Repeats to a fixpoint.
pub fn coalesce_spatial(mut ts: Vec<Transfer>) -> Vec<Transfer> {
    loop {
        let mut merged = None;
        'outer: for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                if let Some(r) = coalescible(&ts[i], &ts[j]) {
                    merged = Some((i, j, r));
                    break 'outer;
                }
            }
        }
        let Some((i, j, region)) = merged else { break };
        let b = ts.remove(j);
        let a = &mut ts[i];
        a.elements = region.numel();
        a.region = region;
        a.dests.extend(b.dests);
        a.token = a.token.min(b.token);
    }
    for (i, t) in ts.iter_mut().enumerate() {
        t.id = i;
    }
    ts
}

/// Cuts `r` along its outermost axis with more than one row, at the
/// burst-aligned boundary nearest the middle.
fn halve(r: &TileRegion, burst: usize) -> Option<(TileRegion, TileRegion)> {
    let axis = r.dims.iter().position(|d| d.1 > 1)?;
    let (off, size) = r.dims[axis];
    let inner: usize = r.dims[axis + 1..].iter().map(|d| d.1).product();
    let mut best: Option<usize> = None;
    for cut in 1..size {
        if (cut * inner).is_multiple_of(burst) && best.is_none_or(|b| cut.abs_diff(size / 2) < b.abs_diff(size / 2)) {
            best = Some(cut);
        }
    }
    let cut = best?;
    let mut lo = r.clone();
    let mut hi = r.clone();
    lo.dims[axis] = (off, cut);
    hi.dims[axis] = (off + cut, size - cut);
    Some((lo, hi))
}

/// Peak number of transfers on `tile` in `dir` during `[lo, hi]`.
fn peak(ts: &[Transfer], tile: Tile, dir: Direction, lo: usize, hi: usize) -> usize {
    (lo..=hi)
        .map(|s| {
            ts.iter()
                .filter(|t| t.direction == dir)
                .filter_map(|t| t.lifetime_on(tile))
                .filter(|&(a, b)| a <= s && s <= b)
                .count()
        })
        .max()
        .unwrap_or(0)
}

/// Splits large transfers in two while every tile they touch has a spare
/// port over their lifetime. Transfers below two bursts are left alone.
pub fn split_for_ports(mut ts: Vec<Transfer>, m: &PhysicalMapping) -> Vec<Transfer> {
    let burst = m.fabric.burst_alignment.max(1);
    let budgets = dma_budgets(m);
    let mut i = 0;
    while i < ts.len() {
        let t = &ts[i];
        if t.elements < 2 * burst {
            i += 1;
            continue;
        }
        let spare = t.tiles().iter().all(|&tile| {
            let (lo, hi) = t.lifetime_on(tile).expect("tile of transfer");
            let budget = budgets.get(&(tile, t.direction)).copied().unwrap_or(0);
            peak(&ts, tile, t.direction, lo, hi) < budget
        });
        match (spare, halve(&t.region, burst)) {
            (true, Some((a, b))) => {
                let mut second = t.clone();
                ts[i].elements = a.numel();
                ts[i].region = a;
                second.elements = b.numel();
                second.region = b;
                ts.insert(i + 1, second);
            }
            _ => i += 1,
        }
    }
    for (i, t) in ts.iter_mut().enumerate() {
        t.id = i;
    }
    ts
}
