//! Intra-tile layout algebra.
//!
//! A view of a tensor is described by a [`LayoutMap`]: view index `i`
//! reads element `offset + Σ i[k] * strides[k]` of the row-major
//! flattening of its input. Every primitive transform is such a map over
//! a contiguous input, so a chain of transforms is a sequence of maps,
//! each reading the flattened output of its predecessor.

use serde::{Deserialize, Serialize};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutMap {
    pub offset: i64,
    pub sizes: Vec<usize>,
    pub strides: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    /// Splits `axis` into `(n / factor, factor)`.
    Tile {
        axis: usize,
        factor: usize,
    },
    /// Merges `axis` and `axis + 1`.
    Pack {
        axis: usize,
    },
    Transpose(Vec<usize>),
    Slice {
        offsets: Vec<usize>,
        sizes: Vec<usize>,
    },
    Reshape(Vec<usize>),
    Map(LayoutMap),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformChain {
    pub input: Vec<usize>,
    pub steps: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("step {step}: factor {factor} does not divide extent {extent}")]
    Divisibility { step: usize, factor: usize, extent: usize },
    #[error("step {step}: {msg}")]
    Shape { step: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Composed {
    Map(LayoutMap),
    /// Not expressible as one map; keep both steps.
    NonAffine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaCapability {
    pub max_dims: usize,
    pub stride_range: (i64, i64),
    pub burst_alignment: usize,
    pub supports_transpose2d: bool,
}

impl Default for DmaCapability {
    fn default() -> Self {
        Self {
            max_dims: 3,
            stride_range: (0, 1 << 20),
            burst_alignment: 1,
            supports_transpose2d: true,
        }
    }
}

pub fn row_major(shape: &[usize]) -> Vec<i64> {
    let mut w = vec![1i64; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        w[k] = w[k + 1] * shape[k + 1] as i64;
    }
    w
}

impl LayoutMap {
    pub fn new(offset: i64, sizes: Vec<usize>, strides: Vec<i64>) -> Self {
        Self { offset, sizes, strides }.canonical()
    }

    pub fn identity(shape: &[usize]) -> Self {
        Self::new(0, shape.to_vec(), row_major(shape))
    }

    /// Size-1 axes carry stride 0.
    fn canonical(mut self) -> Self {
        for (s, &n) in self.strides.iter_mut().zip(&self.sizes) {
            if n == 1 {
                *s = 0;
            }
        }
        self
    }

    pub fn rank(&self) -> usize {
        self.sizes.len()
    }

    pub fn numel(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn address(&self, idx: &[usize]) -> i64 {
        self.offset + idx.iter().zip(&self.strides).map(|(&i, &s)| i as i64 * s).sum::<i64>()
    }

    /// Smallest and largest address touched.
    pub fn extent(&self) -> (i64, i64) {
        let mut lo = self.offset;
        let mut hi = self.offset;
        for (&n, &s) in self.sizes.iter().zip(&self.strides) {
            let span = (n as i64 - 1) * s;
            if span < 0 {
                lo += span;
            } else {
                hi += span;
            }
        }
        (lo, hi)
    }

    pub fn is_identity_on(&self, input: &[usize]) -> bool {
        *self == Self::identity(input)
    }

    /// Drops size-1 axes and merges adjacent axes that walk memory
    /// contiguously.
    pub fn coalesced(&self) -> LayoutMap {
        let mut sizes: Vec<usize> = Vec::new();
        let mut strides: Vec<i64> = Vec::new();
        for (&n, &s) in self.sizes.iter().zip(&self.strides) {
            if n == 1 {
                continue;
            }
            if let (Some(pn), Some(ps)) = (sizes.last_mut(), strides.last_mut()) {
                if *ps == s * n as i64 {
                    *pn *= n;
                    *ps = s;
                    continue;
                }
            }
            sizes.push(n);
            strides.push(s);
        }
        LayoutMap::new(self.offset, sizes, strides)
    }

    /// All view indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.numel();
        (0..n).map(move |mut f| {
            let mut idx = vec![0; self.rank()];
            for k in (0..self.rank()).rev() {
                idx[k] = f % self.sizes[k];
                f /= self.sizes[k];
            }
            idx
        })
    }
}

fn digits(mut x: i64, radix: &[usize]) -> Option<Vec<i64>> {
    if x < 0 {
        return None;
    }
    let mut d = vec![0; radix.len()];
    for k in (0..radix.len()).rev() {
        d[k] = x % radix[k] as i64;
        x /= radix[k] as i64;
    }
    (x == 0).then_some(d)
}

/// `m2` applied to the flattened output of `m1`.
///
/// Every offset and stride of `m2` is written in the mixed radix of the
/// coalesced `m1`. When no digit can overflow over the whole index box the
/// composite is linear in the digits and therefore a single map.
pub fn compose(m1: &LayoutMap, m2: &LayoutMap) -> Composed {
    let a = m1.coalesced();
    let radix = &a.sizes;
    let Some(od) = digits(m2.offset, radix) else {
        return Composed::NonAffine;
    };
    let mut sums = od.clone();
    let mut sd = Vec::with_capacity(m2.rank());
    for (&n, &t) in m2.sizes.iter().zip(&m2.strides) {
        if n == 1 {
            sd.push(vec![0; radix.len()]);
            continue;
        }
        let Some(d) = digits(t, radix) else {
            return Composed::NonAffine;
        };
        for (s, x) in sums.iter_mut().zip(&d) {
            *s += (n as i64 - 1) * x;
        }
        sd.push(d);
    }
    if sums.iter().zip(radix).any(|(&s, &r)| s >= r as i64) {
        return Composed::NonAffine;
    }
    let lin = |d: &[i64]| d.iter().zip(&a.strides).map(|(x, s)| x * s).sum::<i64>();
    Composed::Map(LayoutMap::new(
        a.offset + lin(&od),
        m2.sizes.clone(),
        sd.iter().map(|d| lin(d)).collect(),
    ))
}

impl Transform {
    /// The map of this step over a contiguous input of shape `input`.
    pub fn to_map(&self, input: &[usize], step: usize) -> Result<LayoutMap, LayoutError> {
        let shape_err = |msg: String| LayoutError::Shape { step, msg };
        let w = row_major(input);
        let r = input.len();
        match self {
            Transform::Tile { axis, factor } => {
                let (a, f) = (*axis, *factor);
                if a >= r {
                    return Err(shape_err(format!("axis {a} out of range for rank {r}")));
                }
                if f == 0 || !input[a].is_multiple_of(f) {
                    return Err(LayoutError::Divisibility {
                        step,
                        factor: f,
                        extent: input[a],
                    });
                }
                let mut sizes = input.to_vec();
                let mut strides = w.clone();
                sizes.splice(a..=a, [input[a] / f, f]);
                strides.splice(a..=a, [w[a] * f as i64, w[a]]);
                Ok(LayoutMap::new(0, sizes, strides))
            }
            Transform::Pack { axis } => {
                let a = *axis;
                if a + 1 >= r {
                    return Err(shape_err(format!("cannot pack axes {a},{} of rank {r}", a + 1)));
                }
                let mut sizes = input.to_vec();
                let mut strides = w.clone();
                sizes.splice(a..=a + 1, [input[a] * input[a + 1]]);
                strides.splice(a..=a + 1, [w[a + 1]]);
                Ok(LayoutMap::new(0, sizes, strides))
            }
            Transform::Transpose(perm) => {
                let mut seen = perm.clone();
                seen.sort();
                if seen != (0..r).collect::<Vec<_>>() {
                    return Err(shape_err(format!("{perm:?} is not a permutation of rank {r}")));
                }
                Ok(LayoutMap::new(
                    0,
                    perm.iter().map(|&p| input[p]).collect(),
                    perm.iter().map(|&p| w[p]).collect(),
                ))
            }
            Transform::Slice { offsets, sizes } => {
                if offsets.len() != r || sizes.len() != r {
                    return Err(shape_err("slice rank mismatch".into()));
                }
                for k in 0..r {
                    if sizes[k] == 0 || offsets[k] + sizes[k] > input[k] {
                        return Err(shape_err(format!("slice out of bounds on axis {k}")));
                    }
                }
                let off = offsets.iter().zip(&w).map(|(&o, &s)| o as i64 * s).sum();
                Ok(LayoutMap::new(off, sizes.clone(), w))
            }
            Transform::Reshape(shape) => {
                let n: usize = input.iter().product();
                if shape.iter().product::<usize>() != n || shape.contains(&0) {
                    return Err(LayoutError::Divisibility {
                        step,
                        factor: shape.iter().product(),
                        extent: n,
                    });
                }
                Ok(LayoutMap::identity(shape))
            }
            Transform::Map(m) => {
                let n: usize = input.iter().product();
                let (lo, hi) = m.extent();
                if m.sizes.contains(&0) || lo < 0 || hi >= n as i64 {
                    return Err(shape_err(format!("map reads [{lo}, {hi}] outside {n} elements")));
                }
                Ok(m.clone().canonical())
            }
        }
    }
}

impl TransformChain {
    pub fn new(input: Vec<usize>, steps: Vec<Transform>) -> Self {
        Self { input, steps }
    }

    pub fn to_maps(&self) -> Result<Vec<LayoutMap>, LayoutError> {
        let mut shape = self.input.clone();
        let mut out = Vec::with_capacity(self.steps.len());
        for (i, s) in self.steps.iter().enumerate() {
            let m = s.to_map(&shape, i)?;
            shape = m.sizes.clone();
            out.push(m);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, LayoutError> {
        Ok(self.to_maps()?.last().map_or(self.input.clone(), |m| m.sizes.clone()))
    }

    /// Source element (row-major index into the input) of every output
    /// element, in row-major output order.
    pub fn gather(&self) -> Result<Vec<usize>, LayoutError> {
        let n: usize = self.input.iter().product();
        let mut cur: Vec<usize> = (0..n).collect();
        for m in self.to_maps()? {
            cur = m.indices().map(|i| cur[m.address(&i) as usize]).collect();
        }
        Ok(cur)
    }
}

fn fuse_pass(input: &[usize], maps: &[LayoutMap]) -> Vec<LayoutMap> {
    let mut out: Vec<LayoutMap> = Vec::new();
    let mut shape = input.to_vec();
    let mut acc: Option<LayoutMap> = None;
    for m in maps {
        acc = Some(match acc.take() {
            None => m.clone(),
            Some(a) => match compose(&a, m) {
                Composed::Map(c) => c,
                Composed::NonAffine => {
                    out.push(a);
                    m.clone()
                }
            },
        });
    }
    out.extend(acc);
    out.retain(|m| {
        let keep = !m.is_identity_on(&shape);
        shape = m.sizes.clone();
        keep
    });
    out
}

/// Fuses maximal runs of composable steps into single maps and drops
/// identities, repeating until nothing changes.
pub fn normalize(chain: &TransformChain) -> Result<TransformChain, LayoutError> {
    let mut maps = chain.to_maps()?;
    loop {
        let next = fuse_pass(&chain.input, &maps);
        if next == maps {
            break;
        }
        maps = next;
    }
    Ok(TransformChain::new(
        chain.input.clone(),
        maps.into_iter().map(Transform::Map).collect(),
    ))
}

/// Whether one descriptor can execute `m`.
pub fn dma_legal(m: &LayoutMap, cap: &DmaCapability) -> bool {
    let c = m.coalesced();
    if c.rank() > cap.max_dims.max(1) {
        return false;
    }
    if c.strides
        .iter()
        .any(|&s| s < cap.stride_range.0 || s > cap.stride_range.1)
    {
        return false;
    }
    let align = cap.burst_alignment.max(1) as i64;
    if c.offset % align != 0 {
        return false;
    }
    match (c.sizes.last(), c.strides.last()) {
        (Some(&n), Some(&1)) => n as i64 % align == 0,
        (Some(_), Some(_)) => c.rank() == 1 || (cap.supports_transpose2d && c.rank() == 2),
        _ => true,
    }
}

/// Splits `m` into a descriptor that gathers its trailing axes in source
/// order and an on-core permutation restoring the requested order.
fn split_map(m: &LayoutMap, cap: &DmaCapability) -> Option<(LayoutMap, LayoutMap)> {
    let r = m.rank();
    for j in (0..r).rev() {
        let mut order: Vec<usize> = (0..j).collect();
        let mut tail: Vec<usize> = (j..r).collect();
        tail.sort_by_key(|&k| std::cmp::Reverse(m.strides[k]));
        order.extend(tail);
        let d = LayoutMap::new(
            m.offset,
            order.iter().map(|&k| m.sizes[k]).collect(),
            order.iter().map(|&k| m.strides[k]).collect(),
        );
        // A plain contiguous copy does no layout work.
        let copy = d.coalesced() == LayoutMap::identity(&[d.numel()]);
        if copy || !dma_legal(&d, cap) {
            continue;
        }
        let w = row_major(&d.sizes);
        let mut pos = vec![0; r];
        for (p, &k) in order.iter().enumerate() {
            pos[k] = p;
        }
        let rest = LayoutMap::new(0, m.sizes.clone(), (0..r).map(|k| w[pos[k]]).collect());
        return Some((d, rest));
    }
    None
}

/// Emits the longest descriptor-executable prefix of `chain`; the rest
/// runs on the core. A step that is too complex for one descriptor may be
/// split into a gather and an on-core permutation.
pub fn hoist_to_dma(
    chain: &TransformChain,
    cap: &DmaCapability,
) -> Result<(Vec<LayoutMap>, TransformChain), LayoutError> {
    let maps = chain.to_maps()?;
    let mut desc = Vec::new();
    let mut shape = chain.input.clone();
    let mut i = 0;
    while i < maps.len() && dma_legal(&maps[i], cap) {
        shape = maps[i].sizes.clone();
        desc.push(maps[i].clone());
        i += 1;
    }
    let mut residual: Vec<Transform> = Vec::new();
    if i < maps.len() {
        if let Some((d, rest)) = split_map(&maps[i], cap) {
            shape = d.sizes.clone();
            desc.push(d);
            residual.push(Transform::Map(rest));
            i += 1;
        }
    }
    residual.extend(maps[i..].iter().cloned().map(Transform::Map));
    Ok((desc, TransformChain::new(shape, residual)))
}
