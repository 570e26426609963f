use serde::{Deserialize, Serialize};

use super::graph::MolecularGraph;

/// Categorical encoding of a molecule for embedding lookups.
///
/// Atom indices are the atomic number itself (row 0 of the atom table is unused). Each
/// undirected bond appears twice, once per direction, with identical features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGraph {
    /// `(atomic number, chirality index)` per atom.
    pub nodes: Vec<[usize; 2]>,
    /// `(source, target)` per directed edge.
    pub edges: Vec<[usize; 2]>,
    /// `(bond type index, bond direction index)` per directed edge.
    pub edge_features: Vec<[usize; 2]>,
}

impl FeatureGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }
}

pub fn featurize(g: &MolecularGraph) -> FeatureGraph {
    let nodes = g
        .atoms
        .iter()
        .map(|a| [a.atomic_number as usize, a.chirality.index()])
        .collect();
    let mut edges = Vec::with_capacity(2 * g.m());
    let mut edge_features = Vec::with_capacity(2 * g.m());
    for b in &g.bonds {
        let f = [b.kind.index(), b.direction.index()];
        edges.push([b.u, b.v]);
        edges.push([b.v, b.u]);
        edge_features.push(f);
        edge_features.push(f);
    }
    FeatureGraph {
        nodes,
        edges,
        edge_features,
    }
}
