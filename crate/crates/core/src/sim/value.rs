//! Dense tensor values with element-type semantics.
//!
//! Integers are held as `i64` and wrapped to their bitwidth after every
//! operation; bf16 is held as `f32` with the low 16 mantissa bits cleared.

use serde::Serialize;

use crate::ir::{BinOp, ElemType, ReduceOp, TensorType};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Data {
    Int(Vec<i64>),
    Float(Vec<f32>),
    /// Shape-only value used when timing without computing.
    Phantom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorValue {
    pub elem: ElemType,
    pub shape: Vec<usize>,
    pub data: Data,
}

pub fn wrap_int(x: i64, bits: u32) -> i64 {
    let s = 64 - bits;
    (x << s) >> s
}

pub fn trunc_bf16(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & 0xFFFF_0000)
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl TensorValue {
    pub fn zeros(ty: &TensorType) -> Self {
        Self::filled(ty.elem, ty.shape.clone(), 0.0)
    }

    pub fn phantom(elem: ElemType, shape: Vec<usize>) -> Self {
        Self {
            elem,
            shape,
            data: Data::Phantom,
        }
    }

    pub fn filled(elem: ElemType, shape: Vec<usize>, v: f64) -> Self {
        let n = numel(&shape);
        let data = if elem.is_float() {
            Data::Float(vec![v as f32; n])
        } else {
            Data::Int(vec![v as i64; n])
        };
        Self { elem, shape, data }.normalized()
    }

    pub fn from_ints(elem: ElemType, shape: Vec<usize>, v: Vec<i64>) -> Self {
        assert_eq!(v.len(), numel(&shape));
        let data = if elem.is_float() {
            Data::Float(v.into_iter().map(|x| x as f32).collect())
        } else {
            Data::Int(v)
        };
        Self { elem, shape, data }.normalized()
    }

    pub fn from_floats(elem: ElemType, shape: Vec<usize>, v: Vec<f32>) -> Self {
        assert_eq!(v.len(), numel(&shape));
        let data = if elem.is_float() {
            Data::Float(v)
        } else {
            Data::Int(v.into_iter().map(|x| x as i64).collect())
        };
        Self { elem, shape, data }.normalized()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_phantom(&self) -> bool {
        matches!(self.data, Data::Phantom)
    }

    pub fn ty(&self) -> TensorType {
        TensorType::new(self.elem, self.shape.clone())
    }

    /// Wraps integers and truncates bf16 in place.
    pub fn normalized(mut self) -> Self {
        match (&mut self.data, self.elem) {
            (Data::Int(v), e) => {
                let bits = e.bitwidth();
                v.iter_mut().for_each(|x| *x = wrap_int(*x, bits));
            }
            (Data::Float(v), ElemType::Bf16) => v.iter_mut().for_each(|x| *x = trunc_bf16(*x)),
            _ => {}
        }
        self
    }

    /// Converts to another element type (store into a typed location).
    pub fn cast(&self, elem: ElemType) -> Self {
        if elem == self.elem {
            return self.clone();
        }
        let data = match (&self.data, elem.is_float()) {
            (Data::Phantom, _) => Data::Phantom,
            (Data::Int(v), true) => Data::Float(v.iter().map(|&x| x as f32).collect()),
            (Data::Int(v), false) => Data::Int(v.clone()),
            (Data::Float(v), true) => Data::Float(v.clone()),
            (Data::Float(v), false) => Data::Int(v.iter().map(|&x| x as i64).collect()),
        };
        Self {
            elem,
            shape: self.shape.clone(),
            data,
        }
        .normalized()
    }

    pub fn ints(&self) -> &[i64] {
        match &self.data {
            Data::Int(v) => v,
            _ => &[],
        }
    }

    pub fn floats(&self) -> &[f32] {
        match &self.data {
            Data::Float(v) => v,
            _ => &[],
        }
    }

    /// Element `i` widened to f64.
    pub fn get_f64(&self, i: usize) -> f64 {
        match &self.data {
            Data::Int(v) => v[i] as f64,
            Data::Float(v) => v[i] as f64,
            Data::Phantom => 0.0,
        }
    }

    /// Bit pattern of every element, used for digests and exact comparison.
    pub fn bits(&self) -> Vec<u64> {
        match &self.data {
            Data::Int(v) => v.iter().map(|&x| x as u64).collect(),
            Data::Float(v) => v.iter().map(|&x| x.to_bits() as u64).collect(),
            Data::Phantom => vec![],
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row-major flat indices of the box `dims` (offset, size) in `shape`.
pub fn box_indices(shape: &[usize], dims: &[(usize, usize)]) -> Vec<usize> {
    let st = strides(shape);
    let mut out = vec![0usize];
    for (axis, &(off, size)) in dims.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * size);
        for base in &out {
            for i in off..off + size {
                next.push(base + i * st[axis]);
            }
        }
        out = next;
    }
    out
}

/// Copies the box `dims` out of `v`.
pub fn extract(v: &TensorValue, dims: &[(usize, usize)]) -> TensorValue {
    let shape: Vec<usize> = dims.iter().map(|d| d.1).collect();
    let idx = box_indices(&v.shape, dims);
    let data = match &v.data {
        Data::Int(x) => Data::Int(idx.iter().map(|&i| x[i]).collect()),
        Data::Float(x) => Data::Float(idx.iter().map(|&i| x[i]).collect()),
        Data::Phantom => Data::Phantom,
    };
    TensorValue {
        elem: v.elem,
        shape,
        data,
    }
}

/// Writes `src` (cast to `dst`'s type) into the box `dims` of `dst`.
pub fn insert(dst: &mut TensorValue, dims: &[(usize, usize)], src: &TensorValue) {
    let src = src.cast(dst.elem);
    let idx = box_indices(&dst.shape, dims);
    let n = idx.len();
    match (&mut dst.data, &src.data) {
        (Data::Int(d), Data::Int(s)) => {
            for (k, &i) in idx.iter().enumerate() {
                d[i] = s[if s.len() == n { k } else { 0 }];
            }
        }
        (Data::Float(d), Data::Float(s)) => {
            for (k, &i) in idx.iter().enumerate() {
                d[i] = s[if s.len() == n { k } else { 0 }];
            }
        }
        _ => {}
    }
}

fn result_elem(a: &TensorValue, b: &TensorValue, a_lit: bool, b_lit: bool) -> ElemType {
    match (a_lit, b_lit) {
        (true, false) => b.elem,
        _ => a.elem,
    }
}

fn int_op(op: BinOp, x: i64, y: i64) -> i64 {
    match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::Max => x.max(y),
        BinOp::Min => x.min(y),
    }
}

fn float_op(op: BinOp, x: f32, y: f32) -> f32 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Max => x.max(y),
        BinOp::Min => x.min(y),
    }
}

/// Elementwise operation; a scalar (rank-0) operand broadcasts. `*_lit`
/// marks literal operands, which adopt the other side's element type.
pub fn binary(op: BinOp, a: &TensorValue, b: &TensorValue, a_lit: bool, b_lit: bool) -> TensorValue {
    let elem = result_elem(a, b, a_lit, b_lit);
    let shape = if a.shape.is_empty() {
        b.shape.clone()
    } else {
        a.shape.clone()
    };
    if a.is_phantom() || b.is_phantom() {
        return TensorValue::phantom(elem, shape);
    }
    let (a, b) = (a.cast(elem), b.cast(elem));
    let n = numel(&shape);
    let pick = |len: usize, i: usize| if len == 1 { 0 } else { i };
    let data = match (&a.data, &b.data) {
        (Data::Int(x), Data::Int(y)) => Data::Int(
            (0..n)
                .map(|i| int_op(op, x[pick(x.len(), i)], y[pick(y.len(), i)]))
                .collect(),
        ),
        (Data::Float(x), Data::Float(y)) => Data::Float(
            (0..n)
                .map(|i| float_op(op, x[pick(x.len(), i)], y[pick(y.len(), i)]))
                .collect(),
        ),
        _ => unreachable!("operands cast to one element type"),
    };
    TensorValue { elem, shape, data }.normalized()
}

pub fn reduce_binop(op: ReduceOp) -> BinOp {
    match op {
        ReduceOp::Add => BinOp::Add,
        ReduceOp::Mul => BinOp::Mul,
        ReduceOp::Max => BinOp::Max,
        ReduceOp::Min => BinOp::Min,
    }
}

/// `[m, k] x [k, n]`, accumulating along k in order. Rank-1 operands act
/// as a row (lhs) or column (rhs) vector.
pub fn matmul(a: &TensorValue, b: &TensorValue) -> TensorValue {
    let (m, k) = match a.shape[..] {
        [k] => (1, k),
        [m, k] => (m, k),
        _ => (1, 1),
    };
    let n = match b.shape[..] {
        [_] => 1,
        [_, n] => n,
        _ => 1,
    };
    let mut shape = Vec::new();
    if a.shape.len() == 2 {
        shape.push(m);
    }
    if b.shape.len() == 2 {
        shape.push(n);
    }
    let elem = a.elem;
    if a.is_phantom() || b.is_phantom() {
        return TensorValue::phantom(elem, shape);
    }
    let b = b.cast(elem);
    let data = match (&a.data, &b.data) {
        (Data::Int(x), Data::Int(y)) => {
            let mut out = vec![0i64; m * n];
            for i in 0..m {
                for p in 0..k {
                    let xv = x[i * k + p];
                    let row = &y[p * n..p * n + n];
                    let o = &mut out[i * n..i * n + n];
                    for j in 0..n {
                        o[j] = o[j].wrapping_add(xv.wrapping_mul(row[j]));
                    }
                }
            }
            Data::Int(out)
        }
        (Data::Float(x), Data::Float(y)) => {
            let mut out = vec![0f32; m * n];
            for i in 0..m {
                for p in 0..k {
                    let xv = x[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += xv * y[p * n + j];
                    }
                }
            }
            Data::Float(out)
        }
        _ => unreachable!(),
    };
    TensorValue { elem, shape, data }.normalized()
}

/// Folds `axis` away with `op`, in index order.
pub fn reduce(op: ReduceOp, axis: usize, v: &TensorValue) -> TensorValue {
    let mut shape = v.shape.clone();
    let len = shape.remove(axis);
    if v.is_phantom() {
        return TensorValue::phantom(v.elem, shape);
    }
    let outer: usize = v.shape[..axis].iter().product();
    let inner: usize = v.shape[axis + 1..].iter().product();
    let bop = reduce_binop(op);
    let idx = |o: usize, r: usize, i: usize| (o * len + r) * inner + i;
    let data = match &v.data {
        Data::Int(x) => Data::Int(
            (0..outer)
                .flat_map(|o| (0..inner).map(move |i| (o, i)))
                .map(|(o, i)| (1..len).fold(x[idx(o, 0, i)], |acc, r| int_op(bop, acc, x[idx(o, r, i)])))
                .collect(),
        ),
        Data::Float(x) => Data::Float(
            (0..outer)
                .flat_map(|o| (0..inner).map(move |i| (o, i)))
                .map(|(o, i)| (1..len).fold(x[idx(o, 0, i)], |acc, r| float_op(bop, acc, x[idx(o, r, i)])))
                .collect(),
        ),
        Data::Phantom => unreachable!(),
    };
    TensorValue {
        elem: v.elem,
        shape,
        data,
    }
    .normalized()
}

/// Built-in kernels. `online_softmax` normalizes each row (floats) or
/// subtracts the row maximum (integers); `rescale` multiplies row i by s[i].
pub fn call_kernel(name: &str, args: &[TensorValue]) -> Option<TensorValue> {
    let x = args.first()?;
    if x.is_phantom() {
        return Some(TensorValue::phantom(x.elem, x.shape.clone()));
    }
    let cols = *x.shape.last().unwrap_or(&1);
    let rows = x.numel() / cols.max(1);
    match name {
        "online_softmax" => Some(match &x.data {
            Data::Int(v) => {
                let mut out = v.clone();
                for r in 0..rows {
                    let row = &mut out[r * cols..(r + 1) * cols];
                    let m = *row.iter().max()?;
                    row.iter_mut().for_each(|e| *e = e.wrapping_sub(m));
                }
                TensorValue::from_ints(x.elem, x.shape.clone(), out)
            }
            Data::Float(v) => {
                let mut out = v.clone();
                for r in 0..rows {
                    let row = &mut out[r * cols..(r + 1) * cols];
                    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0f32;
                    for e in row.iter_mut() {
                        *e = (*e - m).exp();
                        sum += *e;
                    }
                    row.iter_mut().for_each(|e| *e /= sum);
                }
                TensorValue::from_floats(x.elem, x.shape.clone(), out)
            }
            Data::Phantom => unreachable!(),
        }),
        "rescale" => {
            let s = args.get(1)?.cast(x.elem);
            let mut out = x.clone();
            match (&mut out.data, &s.data) {
                (Data::Int(v), Data::Int(sv)) => {
                    for r in 0..rows {
                        v[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .for_each(|e| *e = e.wrapping_mul(sv[r % sv.len()]));
                    }
                }
                (Data::Float(v), Data::Float(sv)) => {
                    for r in 0..rows {
                        v[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .for_each(|e| *e *= sv[r % sv.len()]);
                    }
                }
                _ => {}
            }
            Some(out.normalized())
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_wraps() {
        assert_eq!(wrap_int(127 + 1, 8), -128);
        assert_eq!(wrap_int(8, 4), -8);
        assert_eq!(wrap_int(-9, 4), 7);
        let a = TensorValue::from_ints(ElemType::I8, vec![2], vec![100, -100]);
        let s = binary(BinOp::Add, &a, &a, false, false);
        assert_eq!(s.ints(), &[-56, 56]);
    }

    #[test]
    fn bf16_truncates() {
        let v = TensorValue::from_floats(ElemType::Bf16, vec![1], vec![1.0 + 1.0 / 1024.0]);
        assert_eq!(v.floats(), &[1.0]);
    }

    #[test]
    fn matmul_small() {
        let a = TensorValue::from_ints(ElemType::I32, vec![2, 2], vec![1, 2, 3, 4]);
        let b = TensorValue::from_ints(ElemType::I32, vec![2, 2], vec![5, 6, 7, 8]);
        assert_eq!(matmul(&a, &b).ints(), &[19, 22, 43, 50]);
    }

    #[test]
    fn reduce_middle_axis() {
        let v = TensorValue::from_ints(ElemType::I32, vec![2, 3, 2], (0..12).collect());
        let r = reduce(ReduceOp::Add, 1, &v);
        assert_eq!(r.shape, vec![2, 2]);
        assert_eq!(r.ints(), &[6, 9, 24, 27]);
        assert_eq!(reduce(ReduceOp::Max, 0, &v).ints()[0], 6);
    }

    #[test]
    fn box_roundtrip() {
        let v = TensorValue::from_ints(ElemType::I32, vec![4, 4], (0..16).collect());
        let t = extract(&v, &[(2, 2), (1, 2)]);
        assert_eq!(t.ints(), &[9, 10, 13, 14]);
        let mut z = TensorValue::zeros(&TensorType::new(ElemType::I32, vec![4, 4]));
        insert(&mut z, &[(2, 2), (1, 2)], &t);
        assert_eq!(extract(&z, &[(2, 2), (1, 2)]), t);
    }
}
