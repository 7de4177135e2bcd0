//! Kernel contracts: which shapes and operand layouts a library kernel
//! accepts, and what it costs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::types::ElemType;

/// One dimension of a shape pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimPattern {
    Fixed(usize),
    /// Binds to any extent; repeated names must bind to the same extent.
    Var(String),
}

pub type ShapePattern = Vec<DimPattern>;

/// Operand layout requirement: every dimension divisible by the tile size,
/// and the innermost dimension divisible by the pack factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandLayout {
    pub tile: Vec<usize>,
    pub pack: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyModel {
    Constant(u64),
    /// `ceil(product of bound variables / divisor)`.
    Product {
        vars: Vec<String>,
        divisor: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostHint {
    pub latency: LatencyModel,
    pub initiation_interval: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelContract {
    pub name: String,
    /// Operation implemented: `matmul`, an elementwise operator name, or a
    /// kernel call name.
    pub op: String,
    pub elem: Option<ElemType>,
    /// One pattern list per admissible shape variant; each list has one
    /// pattern per operand.
    pub admissible_shapes: Vec<Vec<ShapePattern>>,
    pub required_layout: Vec<OperandLayout>,
    pub cost: CostHint,
}

pub type Binding = BTreeMap<String, usize>;

impl KernelContract {
    pub fn latency_cycles(&self, binding: &Binding) -> u64 {
        match &self.cost.latency {
            LatencyModel::Constant(c) => *c,
            LatencyModel::Product { vars, divisor } => {
                let prod: u64 = vars
                    .iter()
                    .map(|v| binding.get(v).copied().unwrap_or(1) as u64)
                    .product();
                prod.div_ceil((*divisor).max(1))
            }
        }
    }

    fn unify(&self, shapes: &[Vec<usize>]) -> Option<Binding> {
        'variant: for variant in &self.admissible_shapes {
            if variant.len() != shapes.len() {
                continue;
            }
            let mut binding = Binding::new();
            for (pat, shape) in variant.iter().zip(shapes) {
                if pat.len() != shape.len() {
                    continue 'variant;
                }
                for (d, &ext) in pat.iter().zip(shape) {
                    match d {
                        DimPattern::Fixed(f) if *f != ext => continue 'variant,
                        DimPattern::Fixed(_) => {}
                        DimPattern::Var(v) => match binding.get(v) {
                            Some(&b) if b != ext => continue 'variant,
                            Some(_) => {}
                            None => {
                                binding.insert(v.clone(), ext);
                            }
                        },
                    }
                }
            }
            return Some(binding);
        }
        None
    }

    fn layout_ok(&self, shapes: &[Vec<usize>]) -> bool {
        self.required_layout.iter().zip(shapes).all(|(req, shape)| {
            let tiles_ok = req.tile.iter().zip(shape).all(|(&t, &d)| t == 0 || d % t == 0);
            let pack_ok = match shape.last() {
                Some(&inner) => req.pack <= 1 || inner % req.pack == 0,
                None => true,
            };
            tiles_ok && pack_ok
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("kernel `{0}` is already registered")]
    DuplicateKernel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelHandle(pub usize);

/// A request to find a kernel for one operation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelQuery<'a> {
    pub op: &'a str,
    pub elem: ElemType,
    pub operand_shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default)]
pub struct KernelRegistry {
    contracts: Vec<KernelContract>,
    by_name: HashMap<String, usize>,
}

impl KernelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Contracts for the kernels the simulator knows how to execute.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        let var = |s: &str| DimPattern::Var(s.to_string());
        reg.register(KernelContract {
            name: "online_softmax".into(),
            op: "online_softmax".into(),
            elem: None,
            admissible_shapes: vec![vec![vec![var("tq"), var("tkv")]]],
            required_layout: vec![],
            cost: CostHint {
                latency: LatencyModel::Product {
                    vars: vec!["tq".into(), "tkv".into()],
                    divisor: 1,
                },
                initiation_interval: 1,
            },
        })
        .expect("fresh registry");
        reg.register(KernelContract {
            name: "rescale".into(),
            op: "rescale".into(),
            elem: None,
            admissible_shapes: vec![vec![vec![var("tq"), var("d")], vec![var("tq")]]],
            required_layout: vec![],
            cost: CostHint {
                latency: LatencyModel::Product {
                    vars: vec!["tq".into(), "d".into()],
                    divisor: 1,
                },
                initiation_interval: 1,
            },
        })
        .expect("fresh registry");
        reg
    }

    pub fn register(&mut self, contract: KernelContract) -> Result<KernelHandle, KernelError> {
        if self.by_name.contains_key(&contract.name) {
            return Err(KernelError::DuplicateKernel(contract.name));
        }
        let idx = self.contracts.len();
        self.by_name.insert(contract.name.clone(), idx);
        self.contracts.push(contract);
        Ok(KernelHandle(idx))
    }

    pub fn get(&self, name: &str) -> Option<&KernelContract> {
        self.by_name.get(name).map(|&i| &self.contracts[i])
    }

    pub fn handle(&self, handle: KernelHandle) -> &KernelContract {
        &self.contracts[handle.0]
    }

    /// Contracts in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &KernelContract> {
        self.contracts.iter()
    }

    pub fn implements(&self, op: &str) -> bool {
        self.contracts.iter().any(|c| c.op == op)
    }

    /// First contract, in registration order, whose shapes and layout
    /// requirements accept the query.
    pub fn match_kernel(&self, query: &KernelQuery<'_>) -> Option<(&KernelContract, Binding)> {
        self.contracts.iter().find_map(|c| {
            if c.op != query.op || c.elem.is_some_and(|e| e != query.elem) {
                return None;
            }
            let binding = c.unify(&query.operand_shapes)?;
            c.layout_ok(&query.operand_shapes).then_some((c, binding))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul_contract(name: &str, tile: usize) -> KernelContract {
        let var = |s: &str| DimPattern::Var(s.to_string());
        KernelContract {
            name: name.into(),
            op: "matmul".into(),
            elem: None,
            admissible_shapes: vec![vec![vec![var("m"), var("k")], vec![var("k"), var("n")]]],
            required_layout: vec![
                OperandLayout {
                    tile: vec![tile, tile],
                    pack: 1,
                },
                OperandLayout {
                    tile: vec![tile, tile],
                    pack: 1,
                },
            ],
            cost: CostHint {
                latency: LatencyModel::Product {
                    vars: vec!["m".into(), "k".into(), "n".into()],
                    divisor: 32,
                },
                initiation_interval: 1,
            },
        }
    }

    fn q<'a>(op: &'a str, shapes: Vec<Vec<usize>>) -> KernelQuery<'a> {
        KernelQuery {
            op,
            elem: ElemType::I16,
            operand_shapes: shapes,
        }
    }

    #[test]
    fn full_wildcard_matmul_binds_all_dims() {
        let mut reg = KernelRegistry::new();
        reg.register(matmul_contract("mm", 1)).unwrap();
        let (c, b) = reg
            .match_kernel(&q("matmul", vec![vec![64, 64], vec![64, 64]]))
            .unwrap();
        assert_eq!(c.name, "mm");
        assert_eq!(b, Binding::from([("m".into(), 64), ("k".into(), 64), ("n".into(), 64)]));
        assert_eq!(c.latency_cycles(&b), 64 * 64 * 64 / 32);
    }

    #[test]
    fn tile_divisibility_rejects() {
        let mut reg = KernelRegistry::new();
        reg.register(matmul_contract("mm8", 8)).unwrap();
        // k = 12 is not a multiple of 8.
        assert!(reg
            .match_kernel(&q("matmul", vec![vec![16, 12], vec![12, 16]]))
            .is_none());
        assert!(reg
            .match_kernel(&q("matmul", vec![vec![16, 16], vec![16, 16]]))
            .is_some());
    }

    #[test]
    fn first_registered_wins() {
        let mut reg = KernelRegistry::new();
        reg.register(matmul_contract("a", 8)).unwrap();
        reg.register(matmul_contract("b", 1)).unwrap();
        let shapes = vec![vec![16, 16], vec![16, 16]];
        assert_eq!(reg.match_kernel(&q("matmul", shapes)).unwrap().0.name, "a");
        let odd = vec![vec![6, 6], vec![6, 6]];
        assert_eq!(reg.match_kernel(&q("matmul", odd)).unwrap().0.name, "b");
    }

    #[test]
    fn softmax_arity_mismatch() {
        let reg = KernelRegistry::builtin();
        assert!(reg.match_kernel(&q("online_softmax", vec![vec![16, 16]])).is_some());
        assert!(reg
            .match_kernel(&q("online_softmax", vec![vec![16, 16], vec![16]]))
            .is_none());
    }

    #[test]
    fn duplicate_registration() {
        let mut reg = KernelRegistry::new();
        reg.register(matmul_contract("mm", 1)).unwrap();
        assert_eq!(
            reg.register(matmul_contract("mm", 1)),
            Err(KernelError::DuplicateKernel("mm".into()))
        );
    }

    #[test]
    fn iteration_is_insertion_ordered() {
        let mut reg = KernelRegistry::new();
        for n in ["z", "a", "m"] {
            reg.register(matmul_contract(n, 1)).unwrap();
        }
        let names: Vec<&str> = reg.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["z", "a", "m"]);
    }
}
