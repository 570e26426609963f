use crate::molio::{BondType, MolecularGraph};

/// Bemis-Murcko framework: ring systems, the linkers joining them, and atoms attached to
/// either by a double or triple bond. Acyclic molecules give an empty graph.
pub fn murcko_scaffold(g: &MolecularGraph) -> MolecularGraph {
    let core = core_atoms(g);
    if !core.iter().any(|&c| c) {
        return MolecularGraph::default();
    }
    let mut keep = core.clone();
    for b in &g.bonds {
        if !matches!(b.kind, BondType::Double | BondType::Triple) {
            continue;
        }
        for (inside, outside) in [(b.u, b.v), (b.v, b.u)] {
            if core[inside] && !core[outside] {
                keep[outside] = true;
            }
        }
    }
    let mut scaffold = g.subgraph(&keep);
    // Stereo and hydrogen annotations describe the parent molecule, not the framework.
    for a in &mut scaffold.atoms {
        a.chirality = crate::molio::Chirality::Unspecified;
        a.hydrogens = None;
        a.bracket = false;
        a.isotope = None;
    }
    for b in &mut scaffold.bonds {
        b.direction = crate::molio::BondDirection::None;
    }
    scaffold
}

/// Ring atoms plus atoms on paths between them: whatever survives repeatedly deleting
/// non-ring atoms of degree at most one.
fn core_atoms(g: &MolecularGraph) -> Vec<bool> {
    let ring = g.ring_atoms();
    let adj = g.adjacency();
    let mut alive = vec![true; g.n()];
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..g.n()).filter(|&a| !ring[a] && degree[a] <= 1).collect();
    while let Some(a) = queue.pop() {
        if !alive[a] {
            continue;
        }
        alive[a] = false;
        for &(b, _) in &adj[a] {
            if alive[b] {
                degree[b] -= 1;
                if !ring[b] && degree[b] <= 1 {
                    queue.push(b);
                }
            }
        }
    }
    alive
}
