use std::collections::VecDeque;

use super::graph::MolecularGraph;

/// Bit set over bond indices, used as a GF(2) cycle vector.
#[derive(Clone, Debug, PartialEq, Eq)]
struct EdgeSet(Vec<u64>);

impl EdgeSet {
    fn new(m: usize) -> Self {
        EdgeSet(vec![0; m.div_ceil(64)])
    }

    fn flip(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }

    fn xor(&mut self, other: &EdgeSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }

    fn lowest(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

/// Cyclomatic number `m - n + c`.
pub fn cyclomatic_number(g: &MolecularGraph) -> usize {
    let (c, _) = g.components();
    g.m() + c - g.n()
}

/// A smallest set of smallest rings, each as the list of its bond indices.
///
/// Candidates are the Horton cycles (a shortest-path tree per root plus one non-tree bond);
/// the shortest linearly independent ones over GF(2) form a minimum cycle basis.
pub fn sssr(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let need = cyclomatic_number(g);
    if need == 0 {
        return Vec::new();
    }
    let n = g.n();
    let m = g.m();
    let adj = g.adjacency();
    let mut candidates: Vec<(usize, EdgeSet)> = Vec::new();
    for root in 0..n {
        // BFS tree: parent bond and depth.
        let mut depth = vec![usize::MAX; n];
        let mut parent_bond = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for &(b, bond) in &adj[a] {
                if depth[b] == usize::MAX {
                    depth[b] = depth[a] + 1;
                    parent_bond[b] = bond;
                    queue.push_back(b);
                }
            }
        }
        let path = |mut a: usize| {
            let mut bonds = Vec::new();
            while a != root {
                let bond = parent_bond[a];
                bonds.push(bond);
                a = g.bonds[bond].other(a);
            }
            bonds
        };
        for (i, b) in g.bonds.iter().enumerate() {
            if depth[b.u] == usize::MAX || parent_bond[b.u] == i || parent_bond[b.v] == i {
                continue;
            }
            let pu = path(b.u);
            let pv = path(b.v);
            // The two tree paths may only meet at the root.
            let mut set = EdgeSet::new(m);
            let mut shared = false;
            for &e in &pu {
                set.flip(e);
            }
            for &e in &pv {
                if set.contains(e) {
                    shared = true;
                    break;
                }
                set.flip(e);
            }
            let atoms_u: std::collections::HashSet<usize> =
                pu.iter().map(|&e| child_of(g, e, &depth)).collect();
            if shared
                || pv
                    .iter()
                    .any(|&e| atoms_u.contains(&child_of(g, e, &depth)))
            {
                continue;
            }
            set.flip(i);
            candidates.push((pu.len() + pv.len() + 1, set));
        }
    }
    candidates.sort_by_key(|(len, set)| (*len, set.0.clone()));
    candidates.dedup_by(|a, b| a.1 == b.1);

    let mut basis: Vec<EdgeSet> = Vec::new();
    let mut rings = Vec::new();
    for (_, cycle) in candidates {
        let mut reduced = cycle.clone();
        reduce(&mut reduced, &basis);
        if reduced.lowest().is_some() {
            insert_reduced(&mut basis, reduced);
            rings.push((0..m).filter(|&e| cycle.contains(e)).collect());
            if rings.len() == need {
                break;
            }
        }
    }
    rings
}

/// Deeper endpoint of a tree bond.
fn child_of(g: &MolecularGraph, bond: usize, depth: &[usize]) -> usize {
    let b = &g.bonds[bond];
    if depth[b.u] > depth[b.v] {
        b.u
    } else {
        b.v
    }
}

/// Basis kept in echelon form: entries have distinct pivots (lowest set bit).
fn reduce(v: &mut EdgeSet, basis: &[EdgeSet]) {
    for row in basis {
        let pivot = row.lowest().expect("basis rows are nonzero");
        if v.contains(pivot) {
            v.xor(row);
        }
    }
}

fn insert_reduced(basis: &mut Vec<EdgeSet>, v: EdgeSet) {
    let pivot = v.lowest().expect("nonzero");
    for row in basis.iter_mut() {
        if row.contains(pivot) {
            row.xor(&v);
        }
    }
    basis.push(v);
}

/// `(rings, aromatic rings)`: the cyclomatic number and the count of SSSR rings whose atoms
/// are all aromatic.
pub fn ring_counts(g: &MolecularGraph) -> (usize, usize) {
    let rings = sssr(g);
    let aromatic = rings
        .iter()
        .filter(|ring| {
            ring.iter().all(|&e| {
                let b = &g.bonds[e];
                g.atoms[b.u].aromatic && g.atoms[b.v].aromatic
            })
        })
        .count();
    (cyclomatic_number(g), aromatic)
}
