//! Semantic index from network symbols to MILP variable ids.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::milp::problem::VarId;

/// Semantic identity of a MILP variable.
///
/// Layers are 1-based (`layer in 1..=K`); rows index the layer's output units
/// and columns its inputs. `scenario` is 0 for nominal problems; robust
/// masters add one copy of the activation/product variables per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKey {
    /// `w[k][j][l]`: weight of layer `k`, output row `j`, input column `l`.
    Weight { layer: usize, row: usize, col: usize },
    /// `lambda[k]`: threshold of layer `k`.
    Lambda { layer: usize },
    /// `u[i][k][j]`: activation of unit `j` in layer `k` on point `i`.
    Unit { scenario: usize, point: usize, layer: usize, row: usize },
    /// `s[i][k][l][j]`: stand-in for `w[k][j][l] * u[i][k-1][l]`.
    Product { scenario: usize, point: usize, layer: usize, col: usize, row: usize },
    /// Sparsity indicator `z[k][j][l]` guarding `|w[k][j][l]| > 0`.
    SparsityFlag { layer: usize, row: usize, col: usize },
    /// Epigraph variable of a robust master.
    Epigraph,
    /// Perturbation component `delta[l]` of an adversarial subproblem.
    Delta { col: usize },
    /// Split parts of an l1 perturbation, `delta = plus - minus`.
    DeltaPlus { col: usize },
    DeltaMinus { col: usize },
}

impl VarKey {
    /// Stable textual name, also used by the MPS writer.
    pub fn name(&self) -> String {
        match *self {
            VarKey::Weight { layer, row, col } => format!("w_{layer}_{row}_{col}"),
            VarKey::Lambda { layer } => format!("lam_{layer}"),
            VarKey::Unit { scenario, point, layer, row } => {
                if scenario == 0 {
                    format!("u_{point}_{layer}_{row}")
                } else {
                    format!("u_s{scenario}_{point}_{layer}_{row}")
                }
            }
            VarKey::Product { scenario, point, layer, col, row } => {
                if scenario == 0 {
                    format!("s_{point}_{layer}_{col}_{row}")
                } else {
                    format!("s_s{scenario}_{point}_{layer}_{col}_{row}")
                }
            }
            VarKey::SparsityFlag { layer, row, col } => format!("z_{layer}_{row}_{col}"),
            VarKey::Epigraph => "eta".to_string(),
            VarKey::Delta { col } => format!("d_{col}"),
            VarKey::DeltaPlus { col } => format!("dp_{col}"),
            VarKey::DeltaMinus { col } => format!("dm_{col}"),
        }
    }
}

/// Bijection between semantic keys and the variables a builder created.
#[derive(Debug, Clone, Default)]
pub struct VariableCatalog {
    forward: HashMap<VarKey, VarId>,
    reverse: Vec<VarKey>,
}

impl VariableCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VarKey, id: VarId) {
        debug_assert_eq!(id.0, self.reverse.len(), "catalog must track creation order");
        let prev = self.forward.insert(key, id);
        debug_assert!(prev.is_none(), "duplicate catalog key {key:?}");
        self.reverse.push(key);
    }

    pub fn get(&self, key: VarKey) -> Option<VarId> {
        self.forward.get(&key).copied()
    }

    /// Id for a key that the builder must have created.
    pub fn require(&self, key: VarKey) -> Result<VarId> {
        self.get(key).ok_or_else(|| Error::MissingValue(key.name()))
    }

    pub fn key_of(&self, id: VarId) -> Option<VarKey> {
        self.reverse.get(id.0).copied()
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarKey, VarId)> + '_ {
        self.reverse.iter().enumerate().map(|(i, &k)| (k, VarId(i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_keys() {
        let mut cat = VariableCatalog::new();
        let key = VarKey::Weight { layer: 1, row: 0, col: 2 };
        cat.insert(key, VarId(0));
        assert_eq!(cat.get(key), Some(VarId(0)));
        assert_eq!(cat.key_of(VarId(0)), Some(key));
        assert_eq!(key.name(), "w_1_0_2");
    }
}
