use serde::{Deserialize, Serialize};

/// Tetrahedral tag of an atom as written in the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chirality {
    Unspecified,
    /// `@@`
    TetrahedralCw,
    /// `@`
    TetrahedralCcw,
    Other,
}

impl Chirality {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Chirality::Unspecified => 0,
            Chirality::TetrahedralCw => 1,
            Chirality::TetrahedralCcw => 2,
            Chirality::Other => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            BondType::Single => '-',
            BondType::Double => '=',
            BondType::Triple => '#',
            BondType::Aromatic => ':',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondDirection {
    None,
    /// `/`
    EndUpRight,
    /// `\`
    EndDownRight,
}

impl BondDirection {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    /// 1..=118
    pub atomic_number: u8,
    pub aromatic: bool,
    pub chirality: Chirality,
    pub charge: i8,
    pub isotope: Option<u16>,
    /// Explicit hydrogen count from a bracket atom; `None` for organic-subset atoms.
    pub hydrogens: Option<u8>,
    /// Whether the atom was written in brackets.
    pub bracket: bool,
}

impl Atom {
    pub fn organic(atomic_number: u8, aromatic: bool) -> Self {
        Atom {
            atomic_number,
            aromatic,
            chirality: Chirality::Unspecified,
            charge: 0,
            isotope: None,
            hydrogens: None,
            bracket: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    pub kind: BondType,
    pub direction: BondDirection,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.u == atom {
            self.v
        } else {
            self.u
        }
    }
}

/// Hydrogen-suppressed molecular graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("bond {index} endpoint out of range ({u}, {v}) for {n} atoms")]
    Endpoint {
        index: usize,
        u: usize,
        v: usize,
        n: usize,
    },
    #[error("bond {index} is a self loop on atom {u}")]
    SelfLoop { index: usize, u: usize },
    #[error("duplicate bond between atoms {u} and {v}")]
    Duplicate { u: usize, v: usize },
    #[error("aromatic bond {index} joins a non-aromatic atom")]
    AromaticMismatch { index: usize },
    #[error("atomic number {0} outside 1..=118")]
    AtomicNumber(u8),
}

impl MolecularGraph {
    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn m(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Neighbor lists: for every atom, `(neighbor, bond index)` in bond order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.u].push((b.v, i));
            adj[b.v].push((b.u, i));
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n()];
        for b in &self.bonds {
            deg[b.u] += 1;
            deg[b.v] += 1;
        }
        deg
    }

    /// Connected-component label per atom, numbered in order of first atom.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.n()];
        let mut count = 0;
        for start in 0..self.n() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = count;
            while let Some(a) = stack.pop() {
                for &(b, _) in &adj[a] {
                    if label[b] == usize::MAX {
                        label[b] = count;
                        stack.push(b);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n();
        for a in &self.atoms {
            if !(1..=118).contains(&a.atomic_number) {
                return Err(GraphError::AtomicNumber(a.atomic_number));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (index, b) in self.bonds.iter().enumerate() {
            if b.u >= n || b.v >= n {
                return Err(GraphError::Endpoint {
                    index,
                    u: b.u,
                    v: b.v,
                    n,
                });
            }
            if b.u == b.v {
                return Err(GraphError::SelfLoop { index, u: b.u });
            }
            if !seen.insert((b.u.min(b.v), b.u.max(b.v))) {
                return Err(GraphError::Duplicate { u: b.u, v: b.v });
            }
            if b.kind == BondType::Aromatic
                && !(self.atoms[b.u].aromatic && self.atoms[b.v].aromatic)
            {
                return Err(GraphError::AromaticMismatch { index });
            }
        }
        Ok(())
    }

    /// Induced subgraph on `keep` (ascending atom indices), preserving order.
    pub fn subgraph(&self, keep: &[bool]) -> MolecularGraph {
        let mut remap = vec![usize::MAX; self.n()];
        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if keep[i] {
                remap[i] = atoms.len();
                atoms.push(a.clone());
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.u] && keep[b.v])
            .map(|b| Bond {
                u: remap[b.u],
                v: remap[b.v],
                ..*b
            })
            .collect();
        MolecularGraph { atoms, bonds }
    }

    /// Bonds that lie on at least one cycle (i.e. are not bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.n();
        let adj = self.adjacency();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut is_bridge = vec![false; self.m()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative DFS: (atom, bond used to enter, next neighbor position).
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.last_mut() {
                let (a, via) = (top.0, top.1);
                if top.2 < adj[a].len() {
                    let (b, bond) = adj[a][top.2];
                    top.2 += 1;
                    if bond == via {
                        continue;
                    }
                    if disc[b] == usize::MAX {
                        disc[b] = timer;
                        low[b] = timer;
                        timer += 1;
                        stack.push((b, bond, 0));
                    } else {
                        low[a] = low[a].min(disc[b]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(parent, _, _)) = stack.last() {
                        low[parent] = low[parent].min(low[a]);
                        if low[a] > disc[parent] {
                            is_bridge[via] = true;
                        }
                    }
                }
            }
        }
        is_bridge.iter().map(|b| !b).collect()
    }

    /// Atoms that lie on at least one cycle.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut in_ring = vec![false; self.n()];
        for (b, ring) in self.bonds.iter().zip(self.ring_bonds()) {
            if ring {
                in_ring[b.u] = true;
                in_ring[b.v] = true;
            }
        }
        in_ring
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, closures: &[(usize, usize)]) -> MolecularGraph {
        let atoms = (0..n).map(|_| Atom::organic(6, false)).collect();
        let mut bonds: Vec<Bond> = (1..n)
            .map(|i| Bond {
                u: i - 1,
                v: i,
                kind: BondType::Single,
                direction: BondDirection::None,
            })
            .collect();
        for &(u, v) in closures {
            bonds.push(Bond {
                u,
                v,
                kind: BondType::Single,
                direction: BondDirection::None,
            });
        }
        MolecularGraph { atoms, bonds }
    }

    #[test]
    fn bridges_of_ring_with_tail() {
        // 0-1-2-3-0 ring, 3-4 tail
        let mut g = chain(4, &[(0, 3)]);
        g.atoms.push(Atom::organic(6, false));
        g.bonds.push(Bond {
            u: 3,
            v: 4,
            kind: BondType::Single,
            direction: BondDirection::None,
        });
        assert_eq!(g.ring_bonds(), vec![true, true, true, true, false]);
        assert_eq!(g.ring_atoms(), vec![true, true, true, true, false]);
    }

    #[test]
    fn validate_catches_duplicates_and_loops() {
        let g = chain(3, &[(0, 1)]);
        assert!(matches!(g.validate(), Err(GraphError::Duplicate { .. })));
        let g = chain(3, &[(2, 2)]);
        assert!(matches!(g.validate(), Err(GraphError::SelfLoop { .. })));
        assert!(chain(3, &[(0, 2)]).validate().is_ok());
    }

    #[test]
    fn components_counted() {
        let mut g = chain(3, &[]);
        g.atoms.push(Atom::organic(8, false));
        let (c, labels) = g.components();
        assert_eq!(c, 2);
        assert_eq!(labels, vec![0, 0, 0, 1]);
    }
}
