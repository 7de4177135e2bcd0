use super::*;

/// Explicit-array oracle: a view is (shape, source index of every element).
struct View {
    shape: Vec<usize>,
    data: Vec<usize>,
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

fn oracle(input: &[usize], steps: &[Transform]) -> Vec<usize> {
    let n = input.iter().product();
    let mut v = View {
        shape: input.to_vec(),
        data: (0..n).collect(),
    };
    for s in steps {
        v = match s {
            Transform::Tile { axis, factor } => {
                let mut shape = v.shape.clone();
                shape.splice(*axis..=*axis, [v.shape[*axis] / factor, *factor]);
                View { shape, data: v.data }
            }
            Transform::Pack { axis } => {
                let mut shape = v.shape.clone();
                shape.splice(*axis..=*axis + 1, [v.shape[*axis] * v.shape[*axis + 1]]);
                View { shape, data: v.data }
            }
            Transform::Reshape(shape) => View {
                shape: shape.clone(),
                data: v.data,
            },
            Transform::Transpose(perm) => {
                let shape: Vec<usize> = perm.iter().map(|&p| v.shape[p]).collect();
                let data = (0..v.data.len())
                    .map(|f| {
                        let out = unravel(f, &shape);
                        let mut src = vec![0; perm.len()];
                        for (k, &p) in perm.iter().enumerate() {
                            src[p] = out[k];
                        }
                        v.data[ravel(&src, &v.shape)]
                    })
                    .collect();
                View { shape, data }
            }
            Transform::Slice { offsets, sizes } => {
                let data = (0..sizes.iter().product())
                    .map(|f| {
                        let idx: Vec<usize> = unravel(f, sizes).iter().zip(offsets).map(|(i, o)| i + o).collect();
                        v.data[ravel(&idx, &v.shape)]
                    })
                    .collect();
                View {
                    shape: sizes.clone(),
                    data,
                }
            }
            Transform::Map(m) => {
                let data = (0..m.numel())
                    .map(|f| {
                        let idx = unravel(f, &m.sizes);
                        let a: i64 = m.offset + idx.iter().zip(&m.strides).map(|(&i, &s)| i as i64 * s).sum::<i64>();
                        v.data[a as usize]
                    })
                    .collect();
                View {
                    shape: m.sizes.clone(),
                    data,
                }
            }
        };
    }
    v.data
}

fn chain(input: &[usize], steps: Vec<Transform>) -> TransformChain {
    TransformChain::new(input.to_vec(), steps)
}

fn transpose2() -> Transform {
    Transform::Transpose(vec![1, 0])
}

#[test]
fn identity_absorbs() {
    let id = LayoutMap::identity(&[4, 4]);
    let t = transpose2().to_map(&[4, 4], 0).unwrap();
    assert_eq!(
        compose(&id, &t),
        Composed::Map(LayoutMap::new(0, vec![4, 4], vec![1, 4]))
    );
}

#[test]
fn transpose_is_involution() {
    let t = transpose2().to_map(&[4, 4], 0).unwrap();
    assert_eq!(compose(&t, &t), Composed::Map(LayoutMap::identity(&[4, 4])));
}

#[test]
fn tile_then_slice_matches_pointwise() {
    let c = chain(
        &[8, 8],
        vec![
            Transform::Tile { axis: 0, factor: 2 },
            Transform::Slice {
                offsets: vec![1, 0, 2],
                sizes: vec![2, 2, 4],
            },
        ],
    );
    let maps = c.to_maps().unwrap();
    let Composed::Map(m) = compose(&maps[0], &maps[1]) else {
        panic!("expected affine")
    };
    let single = chain(&[8, 8], vec![Transform::Map(m)]);
    assert_eq!(single.gather().unwrap(), oracle(&[8, 8], &c.steps));
}

#[test]
fn inverse_pair_cancels() {
    let n = normalize(&chain(&[4, 6], vec![transpose2(), transpose2()])).unwrap();
    assert!(n.steps.is_empty());
}

#[test]
fn pack_unpack_cancels() {
    let c = chain(
        &[4, 6],
        vec![Transform::Pack { axis: 0 }, Transform::Tile { axis: 0, factor: 6 }],
    );
    assert!(normalize(&c).unwrap().steps.is_empty());
}

#[test]
fn tiles_and_transpose_fuse() {
    let c = chain(
        &[8, 8],
        vec![
            Transform::Tile { axis: 0, factor: 2 },
            Transform::Tile { axis: 2, factor: 2 },
            Transform::Transpose(vec![0, 2, 1, 3]),
        ],
    );
    let n = normalize(&c).unwrap();
    assert_eq!(n.steps.len(), 1);
    assert_eq!(n.gather().unwrap(), oracle(&[8, 8], &c.steps));
}

#[test]
fn transposed_pack_is_not_affine() {
    let c = chain(&[4, 4], vec![transpose2(), Transform::Pack { axis: 0 }]);
    let n = normalize(&c).unwrap();
    assert_eq!(n.steps.len(), 2);
    assert_eq!(n.gather().unwrap(), oracle(&[4, 4], &c.steps));
}

#[test]
fn divisibility_is_checked() {
    let c = chain(&[6], vec![Transform::Tile { axis: 0, factor: 4 }]);
    assert!(matches!(
        normalize(&c),
        Err(LayoutError::Divisibility {
            factor: 4,
            extent: 6,
            ..
        })
    ));
}

#[test]
fn transpose_hoists_as_stride_swap() {
    let c = normalize(&chain(&[4, 8], vec![transpose2()])).unwrap();
    let (d, r) = hoist_to_dma(&c, &DmaCapability::default()).unwrap();
    assert_eq!(d, vec![LayoutMap::new(0, vec![8, 4], vec![1, 8])]);
    assert!(r.steps.is_empty());
}

#[test]
fn transpose_without_support_stays_on_core() {
    let cap = DmaCapability {
        supports_transpose2d: false,
        ..DmaCapability::default()
    };
    let c = normalize(&chain(&[4, 8], vec![transpose2()])).unwrap();
    let (d, r) = hoist_to_dma(&c, &cap).unwrap();
    assert!(d.is_empty());
    assert_eq!(r.steps.len(), 1);
}

#[test]
fn four_d_permutation_hoists_partially() {
    let c = normalize(&chain(&[2, 3, 4, 5], vec![Transform::Transpose(vec![3, 2, 1, 0])])).unwrap();
    let cap = DmaCapability::default();
    let (d, r) = hoist_to_dma(&c, &cap).unwrap();
    assert!(!d.is_empty());
    assert!(!r.steps.is_empty());
    assert!(d.iter().all(|m| dma_legal(m, &cap)));
    let mut steps: Vec<Transform> = d.into_iter().map(Transform::Map).collect();
    steps.extend(r.steps);
    assert_eq!(oracle(&[2, 3, 4, 5], &steps), oracle(&[2, 3, 4, 5], &c.steps));
}

#[test]
fn empty_chain_hoists_to_nothing() {
    let (d, r) = hoist_to_dma(&chain(&[4], vec![]), &DmaCapability::default()).unwrap();
    assert!(d.is_empty() && r.steps.is_empty());
}

#[test]
fn chain_serializes() {
    let c = chain(&[4, 4], vec![transpose2(), Transform::Tile { axis: 1, factor: 2 }]);
    let s = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<TransformChain>(&s).unwrap(), c);
}
