use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::molio::MolecularGraph;

/// Key reserved for the empty framework of acyclic molecules.
pub const EMPTY_SCAFFOLD: &str = "∅";

type Label = [u8; 32];

fn digest(h: Sha256) -> Label {
    h.finalize().into()
}

/// Length of the shortest cycle through each atom, 0 for acyclic atoms.
fn smallest_ring_through(g: &MolecularGraph) -> Vec<usize> {
    let adj = g.adjacency();
    let in_ring = g.ring_bonds();
    let mut best = vec![0usize; g.n()];
    for (skip, b) in g.bonds.iter().enumerate() {
        if !in_ring[skip] {
            continue;
        }
        // Shortest u→v path avoiding this bond closes the smallest ring containing it.
        let mut dist = vec![usize::MAX; g.n()];
        dist[b.u] = 0;
        let mut queue = VecDeque::from([b.u]);
        while let Some(a) = queue.pop_front() {
            if a == b.v {
                break;
            }
            for &(c, bond) in &adj[a] {
                if bond != skip && dist[c] == usize::MAX {
                    dist[c] = dist[a] + 1;
                    queue.push_back(c);
                }
            }
        }
        let len = dist[b.v] + 1;
        for end in [b.u, b.v] {
            if best[end] == 0 || len < best[end] {
                best[end] = len;
            }
        }
    }
    best
}

/// Weisfeiler-Lehman hash of a framework graph, as lowercase hex.
///
/// Atoms start from (atomic number, aromatic flag, smallest ring size) and are refined
/// by neighbor labels keyed on bond type until the partition stops splitting or `n`
/// rounds pass. Relabeled copies of a graph always receive the same key.
pub fn canonical_key(g: &MolecularGraph) -> String {
    if g.is_empty() {
        return EMPTY_SCAFFOLD.to_string();
    }
    let n = g.n();
    let adj = g.adjacency();
    let ring = smallest_ring_through(g);
    let mut labels: Vec<Label> = g
        .atoms
        .iter()
        .zip(&ring)
        .map(|(a, r)| {
            let mut h = Sha256::new();
            h.update([a.atomic_number, a.aromatic as u8]);
            h.update((*r as u32).to_le_bytes());
            digest(h)
        })
        .collect();
    let mut classes = distinct(&labels);
    for _ in 0..n {
        let next: Vec<Label> = (0..n)
            .map(|v| {
                let mut nbrs: Vec<(u8, Label)> = adj[v]
                    .iter()
                    .map(|&(w, bond)| (g.bonds[bond].kind.index() as u8, labels[w]))
                    .collect();
                nbrs.sort_unstable();
                let mut h = Sha256::new();
                h.update(labels[v]);
                for (kind, label) in &nbrs {
                    h.update([*kind]);
                    h.update(label);
                }
                digest(h)
            })
            .collect();
        labels = next;
        let refined = distinct(&labels);
        if refined == classes {
            break;
        }
        classes = refined;
    }
    let mut sorted = labels;
    sorted.sort_unstable();
    let mut h = Sha256::new();
    let (components, _) = g.components();
    for count in [n, g.m(), components] {
        h.update((count as u64).to_le_bytes());
    }
    for label in &sorted {
        h.update(label);
    }
    hex::encode(digest(h))
}

fn distinct(labels: &[Label]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Dense indices for the scaffold keys seen in a training set, in sorted key order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldVocab {
    index: BTreeMap<String, usize>,
}

impl ScaffoldVocab {
    pub fn build<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index: BTreeMap<String, usize> =
            keys.into_iter().map(|k| (k.to_string(), 0)).collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        ScaffoldVocab { index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `None` for scaffolds absent from the training set.
    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}
