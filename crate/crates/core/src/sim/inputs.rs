use std::collections::BTreeMap;

use super::value::{wrap_int, TensorValue};
use crate::ir::TensorType;

/// 64-bit linear congruential generator:
/// `state' = state * 6364136223846793005 + 1442695040888963407`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lcg(pub u64);

impl Lcg {
    pub const MUL: u64 = 6364136223846793005;
    pub const INC: u64 = 1442695040888963407;

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(Self::MUL).wrapping_add(Self::INC);
        self.0
    }

    /// Integers: the low `bits` of the new state, sign-extended. Floats:
    /// the low byte as a signed integer divided by 16.
    pub fn tensor(&mut self, ty: &TensorType) -> TensorValue {
        let n = ty.numel();
        if ty.elem.is_float() {
            let v = (0..n).map(|_| (self.next_u64() as u8 as i8) as f32 / 16.0).collect();
            TensorValue::from_floats(ty.elem, ty.shape.clone(), v)
        } else {
            let bits = ty.elem.bitwidth();
            let v = (0..n).map(|_| wrap_int(self.next_u64() as i64, bits)).collect();
            TensorValue::from_ints(ty.elem, ty.shape.clone(), v)
        }
    }
}

/// Inputs for every buffer, drawn in declaration order from one generator
/// seeded with `seed`.
pub fn lcg_inputs(buffers: &[(String, TensorType)], seed: u64) -> BTreeMap<String, TensorValue> {
    let mut g = Lcg(seed);
    buffers.iter().map(|(n, t)| (n.clone(), g.tensor(t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ElemType;

    #[test]
    fn lcg_first_values() {
        let mut g = Lcg(0);
        assert_eq!(g.next_u64(), 1442695040888963407);
        assert_eq!(
            g.next_u64(),
            1442695040888963407u64.wrapping_mul(Lcg::MUL).wrapping_add(Lcg::INC)
        );
        let t = Lcg(0).tensor(&TensorType::new(ElemType::I8, vec![1]));
        assert_eq!(t.ints(), &[(1442695040888963407u64 as u8 as i8) as i64]);
    }
}
