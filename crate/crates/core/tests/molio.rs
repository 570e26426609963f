mod common;

use proptest::prelude::*;
use topexpert::molio::{
    featurize, parse_smiles, ring_counts, sssr, write_smiles, Atom, Bond, BondDirection, BondType,
    Chirality, MolecularGraph, SmilesError,
};

fn bond_between(g: &MolecularGraph, a: usize, b: usize) -> &Bond {
    g.bonds
        .iter()
        .find(|x| (x.u == a && x.v == b) || (x.u == b && x.v == a))
        .expect("bond exists")
}

#[test]
fn ethanol_chain() {
    let g = parse_smiles("CCO").unwrap();
    let z: Vec<u8> = g.atoms.iter().map(|a| a.atomic_number).collect();
    assert_eq!(z, vec![6, 6, 8]);
    assert_eq!(g.m(), 2);
    assert!(g.bonds.iter().all(|b| b.kind == BondType::Single));
    assert_eq!(ring_counts(&g), (0, 0));
}

#[test]
fn benzene_ring_closure() {
    let g = parse_smiles("c1ccccc1").unwrap();
    assert_eq!(g.n(), 6);
    assert!(g.atoms.iter().all(|a| a.aromatic && a.atomic_number == 6));
    assert_eq!(g.m(), 6);
    assert!(g.bonds.iter().all(|b| b.kind == BondType::Aromatic));
    assert_eq!(ring_counts(&g), (1, 1));
}

#[test]
fn directional_bonds() {
    // Atoms: C0 F1 C2 F3; '/' on C0-F1 and C2-F3.
    let g = parse_smiles("C(/F)=C/F").unwrap();
    assert_eq!(bond_between(&g, 0, 1).direction, BondDirection::EndUpRight);
    assert_eq!(bond_between(&g, 2, 3).direction, BondDirection::EndUpRight);
    assert_eq!(bond_between(&g, 0, 2).kind, BondType::Double);
    let g = parse_smiles("F/C=C\\F").unwrap();
    assert_eq!(bond_between(&g, 0, 1).direction, BondDirection::EndUpRight);
    assert_eq!(
        bond_between(&g, 2, 3).direction,
        BondDirection::EndDownRight
    );
    assert_eq!(bond_between(&g, 1, 2).direction, BondDirection::None);
}

#[test]
fn chirality_tags() {
    let g = parse_smiles("[C@@H](F)(Cl)Br").unwrap();
    assert_eq!(g.atoms[0].chirality, Chirality::TetrahedralCw);
    assert_eq!(featurize(&g).nodes[0], [6, 1]);
    let g = parse_smiles("[C@H](F)(Cl)Br").unwrap();
    assert_eq!(g.atoms[0].chirality, Chirality::TetrahedralCcw);
    let g = parse_smiles("F[C@TH1](Cl)(Br)I").unwrap();
    assert_eq!(g.atoms[1].chirality, Chirality::Other);
    assert_eq!(featurize(&g).nodes[1], [6, 3]);
}

#[test]
fn ethanol_features() {
    let f = featurize(&parse_smiles("CCO").unwrap());
    assert_eq!(f.nodes, vec![[6, 0], [6, 0], [8, 0]]);
    assert_eq!(f.edges.len(), 4);
    assert!(f
        .edge_features
        .iter()
        .all(|&e| e == [BondType::Single.index(), BondDirection::None.index()]));
}

#[test]
fn benzene_features() {
    let f = featurize(&parse_smiles("c1ccccc1").unwrap());
    assert_eq!(f.edges.len(), 12);
    assert!(f
        .edge_features
        .iter()
        .all(|&e| e == [BondType::Aromatic.index(), 0]));
}

#[test]
fn ring_count_examples() {
    assert_eq!(ring_counts(&parse_smiles("CCC").unwrap()), (0, 0));
    let naph = parse_smiles("c1ccc2ccccc2c1").unwrap();
    assert_eq!((naph.n(), naph.m()), (10, 11));
    assert_eq!(ring_counts(&naph), (2, 2));
    // Biphenyl: the linking bond is single, both rings aromatic.
    let biph = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
    assert_eq!(ring_counts(&biph), (2, 2));
    // Tetralin: one aromatic ring, one saturated ring.
    assert_eq!(
        ring_counts(&parse_smiles("c1ccc2CCCCc2c1").unwrap()),
        (2, 1)
    );
}

#[test]
fn aromatic_chain_bond_is_single() {
    let g = parse_smiles("c1ccccc1c1ccccc1").unwrap();
    let link = bond_between(&g, 5, 6);
    assert_eq!(link.kind, BondType::Single);
}

#[test]
fn bracket_atoms() {
    let g = parse_smiles("[13CH3][N+](C)(C)C.[Cl-]").unwrap();
    assert_eq!(g.atoms[0].isotope, Some(13));
    assert_eq!(g.atoms[0].hydrogens, Some(3));
    assert_eq!(g.atoms[1].charge, 1);
    assert_eq!(g.atoms[5].charge, -1);
    assert_eq!(g.components().0, 2);
    let g = parse_smiles("[Fe++]").unwrap();
    assert_eq!(g.atoms[0].charge, 2);
    let g = parse_smiles("c1cc[se]c1").unwrap();
    assert_eq!(g.atoms[3].atomic_number, 34);
    assert!(g.atoms[3].aromatic);
    let g = parse_smiles("C%12CC%12").unwrap();
    assert_eq!(g.m(), 3);
}

#[test]
fn explicit_hydrogens_folded() {
    let g = parse_smiles("[H]C([H])([H])O").unwrap();
    assert_eq!(g.n(), 2);
    let g = parse_smiles("[2H]C").unwrap();
    assert_eq!(g.n(), 2);
    let g = parse_smiles("[H][H]").unwrap();
    assert_eq!(g.n(), 2);
}

#[test]
fn rejections_carry_offsets() {
    assert!(matches!(
        parse_smiles("C1CC"),
        Err(SmilesError::UnclosedRing {
            label: 1,
            offset: 1
        })
    ));
    assert!(matches!(
        parse_smiles("CC(C"),
        Err(SmilesError::UnclosedBranch { offset: 2 })
    ));
    assert!(matches!(
        parse_smiles("CXC"),
        Err(SmilesError::UnknownElement { offset: 1, .. })
    ));
    assert!(matches!(
        parse_smiles("C*C"),
        Err(SmilesError::UnknownElement { offset: 1, .. })
    ));
    assert!(matches!(
        parse_smiles("C[Xx]"),
        Err(SmilesError::UnknownElement { offset: 2, .. })
    ));
    assert!(matches!(
        parse_smiles("C[C+H]"),
        Err(SmilesError::InvalidBracket { offset: 4, .. })
    ));
    assert!(matches!(
        parse_smiles("C[CH"),
        Err(SmilesError::InvalidBracket { .. })
    ));
    assert!(matches!(
        parse_smiles("CC)"),
        Err(SmilesError::Syntax { offset: 2, .. })
    ));
    assert!(matches!(
        parse_smiles("C=="),
        Err(SmilesError::Syntax { offset: 2, .. })
    ));
    assert!(matches!(
        parse_smiles("C11"),
        Err(SmilesError::Syntax { .. })
    ));
    assert!(matches!(
        parse_smiles("C1CC1C1"),
        Err(SmilesError::UnclosedRing { .. })
    ));
    assert!(matches!(
        parse_smiles("C12CC12"),
        Err(SmilesError::Syntax { .. })
    ));
    assert!(matches!(
        parse_smiles("C:C"),
        Err(SmilesError::Syntax { offset: 1, .. })
    ));
    assert!(matches!(parse_smiles("  "), Err(SmilesError::Empty)));
}

/// All simple cycles as sorted bond-index lists, by exhaustive path extension.
fn all_cycles(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let adj = g.adjacency();
    let mut out = std::collections::BTreeSet::new();
    fn extend(
        adj: &[Vec<(usize, usize)>],
        start: usize,
        at: usize,
        on_path: &mut Vec<bool>,
        bonds: &mut Vec<usize>,
        out: &mut std::collections::BTreeSet<Vec<usize>>,
    ) {
        for &(nb, bond) in &adj[at] {
            if bonds.last() == Some(&bond) {
                continue;
            }
            if nb == start && bonds.len() >= 2 {
                let mut c = bonds.clone();
                c.push(bond);
                c.sort();
                out.insert(c);
            } else if nb > start && !on_path[nb] {
                on_path[nb] = true;
                bonds.push(bond);
                extend(adj, start, nb, on_path, bonds, out);
                bonds.pop();
                on_path[nb] = false;
            }
        }
    }
    for start in 0..g.n() {
        let mut on_path = vec![false; g.n()];
        on_path[start] = true;
        extend(&adj, start, start, &mut on_path, &mut Vec::new(), &mut out);
    }
    out.into_iter().collect()
}

/// Minimum cycle basis sizes by greedy selection over every simple cycle, with rank
/// computed by dense GF(2) elimination.
fn oracle_ring_sizes(g: &MolecularGraph) -> Vec<usize> {
    let mut cycles = all_cycles(g);
    cycles.sort_by_key(Vec::len);
    let m = g.m();
    let mut rows: Vec<Vec<bool>> = Vec::new();
    let mut sizes = Vec::new();
    for c in cycles {
        let mut v = vec![false; m];
        for &e in &c {
            v[e] = true;
        }
        let mut trial = rows.clone();
        trial.push(v);
        if gf2_rank(trial.clone()) == trial.len() {
            rows = trial;
            sizes.push(c.len());
        }
    }
    sizes
}

fn gf2_rank(mut rows: Vec<Vec<bool>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        if let Some(p) = (rank..rows.len()).find(|&r| rows[r][col]) {
            rows.swap(rank, p);
            for r in 0..rows.len() {
                if r != rank && rows[r][col] {
                    let pivot = rows[rank].clone();
                    for (x, y) in rows[r].iter_mut().zip(pivot) {
                        *x ^= y;
                    }
                }
            }
            rank += 1;
        }
    }
    rank
}

#[test]
fn sssr_matches_exhaustive_oracle_on_named_molecules() {
    for s in [
        "c1ccc2ccccc2c1",
        "c1ccc2cc3ccccc3cc2c1",
        "C1CC2CC1C2",
        "C12C3C4C1C5C2C3C45",
        "C1CCC2(CC1)CCCC2",
        "c1ccc2c(c1)[nH]c1ccccc12",
        "C1C2CC3CC1CC(C2)C3",
    ] {
        let g = parse_smiles(s).unwrap();
        let mut ours: Vec<usize> = sssr(&g).iter().map(Vec::len).collect();
        ours.sort();
        assert_eq!(ours, oracle_ring_sizes(&g), "{s}");
    }
    // Naphthalene via the oracle: two six-membered aromatic rings.
    let naph = parse_smiles("c1ccc2ccccc2c1").unwrap();
    assert_eq!(oracle_ring_sizes(&naph), vec![6, 6]);
}

fn random_graph() -> impl Strategy<Value = MolecularGraph> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<u32>(), n - 1),
                proptest::collection::vec((0..n, 0..n), 0..4),
            )
        })
        .prop_map(|(n, parents, extra)| {
            let atoms = (0..n).map(|_| Atom::organic(6, false)).collect();
            let mut bonds: Vec<Bond> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (i, p) in parents.iter().enumerate() {
                let v = i + 1;
                let u = (*p as usize) % v;
                seen.insert((u, v));
                bonds.push(Bond {
                    u,
                    v,
                    kind: BondType::Single,
                    direction: BondDirection::None,
                });
            }
            for (a, b) in extra {
                let (u, v) = (a.min(b), a.max(b));
                if u != v && seen.insert((u, v)) {
                    bonds.push(Bond {
                        u,
                        v,
                        kind: BondType::Single,
                        direction: BondDirection::None,
                    });
                }
            }
            MolecularGraph { atoms, bonds }
        })
}

/// Atom specs that the writer can express and the parser reads back unchanged.
fn atom_strategy() -> impl Strategy<Value = Atom> {
    let organic = prop_oneof![
        Just(5u8),
        Just(6),
        Just(7),
        Just(8),
        Just(9),
        Just(15),
        Just(16),
        Just(17),
        Just(35),
        Just(53)
    ];
    prop_oneof![
        (organic, any::<bool>())
            .prop_map(|(z, aro)| Atom::organic(z, aro && [5, 6, 7, 8, 15, 16].contains(&z))),
        (
            prop_oneof![Just(6u8), Just(7), Just(14), Just(26), Just(34), Just(79)],
            0u8..4,
            -2i8..3,
            proptest::option::of(1u16..200),
            0usize..4,
            any::<bool>(),
        )
            .prop_map(|(z, h, charge, isotope, chir, aro)| Atom {
                atomic_number: z,
                aromatic: aro && [6, 7, 34].contains(&z),
                chirality: [
                    Chirality::Unspecified,
                    Chirality::TetrahedralCw,
                    Chirality::TetrahedralCcw,
                    Chirality::Other
                ][chir],
                charge,
                isotope,
                hydrogens: Some(h),
                bracket: true,
            }),
    ]
}

fn decorated_graph() -> impl Strategy<Value = MolecularGraph> {
    random_graph().prop_flat_map(|g| {
        let n = g.n();
        let m = g.m();
        (
            Just(g),
            proptest::collection::vec(atom_strategy(), n),
            proptest::collection::vec((0usize..4, 0usize..3), m),
        )
            .prop_map(|(mut g, atoms, kinds)| {
                g.atoms = atoms;
                let ring = g.ring_bonds();
                for ((b, (k, d)), r) in g.bonds.iter_mut().zip(kinds).zip(ring) {
                    let aro = g.atoms[b.u].aromatic && g.atoms[b.v].aromatic;
                    b.kind = match k {
                        0 => BondType::Single,
                        1 => BondType::Double,
                        2 => BondType::Triple,
                        _ if aro && r => BondType::Aromatic,
                        _ => BondType::Single,
                    };
                    b.direction = if b.kind == BondType::Single {
                        [
                            BondDirection::None,
                            BondDirection::EndUpRight,
                            BondDirection::EndDownRight,
                        ][d]
                    } else {
                        BondDirection::None
                    };
                }
                g
            })
    })
}

/// Order-free summary: atom feature multiset and bond multiset keyed by endpoint features.
fn signature(
    g: &MolecularGraph,
) -> (
    Vec<(u8, usize, i8, Option<u16>, bool)>,
    Vec<(usize, usize, Vec<u8>)>,
) {
    let mut atoms: Vec<_> = g
        .atoms
        .iter()
        .map(|a| {
            (
                a.atomic_number,
                a.chirality.index(),
                a.charge,
                a.isotope,
                a.aromatic,
            )
        })
        .collect();
    atoms.sort();
    let mut bonds: Vec<_> = g
        .bonds
        .iter()
        .map(|b| {
            let mut ends = vec![g.atoms[b.u].atomic_number, g.atoms[b.v].atomic_number];
            ends.sort();
            (b.kind.index(), b.direction.index(), ends)
        })
        .collect();
    bonds.sort();
    (atoms, bonds)
}

fn permuted(g: &MolecularGraph, perm: &[usize], swap_ends: bool) -> MolecularGraph {
    let mut atoms = vec![g.atoms[0].clone(); g.n()];
    for (old, &new) in perm.iter().enumerate() {
        atoms[new] = g.atoms[old].clone();
    }
    let bonds = g
        .bonds
        .iter()
        .map(|b| {
            let (u, v) = if swap_ends {
                (perm[b.v], perm[b.u])
            } else {
                (perm[b.u], perm[b.v])
            };
            Bond { u, v, ..*b }
        })
        .collect();
    MolecularGraph { atoms, bonds }
}

proptest! {
    #[test]
    fn parse_write_parse_round_trip(g in decorated_graph()) {
        let text = write_smiles(&g);
        let g1 = parse_smiles(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        let g2 = parse_smiles(&write_smiles(&g1)).unwrap();
        prop_assert_eq!(g1.n(), g.n());
        prop_assert_eq!(signature(&g1), signature(&g));
        prop_assert_eq!(signature(&g2), signature(&g1));
        let mut f1: Vec<_> = featurize(&g1).nodes;
        let mut f2: Vec<_> = featurize(&g2).nodes;
        f1.sort();
        f2.sort();
        prop_assert_eq!(f1, f2);
    }

    #[test]
    fn featurize_is_symmetric_and_doubles_bonds(g in decorated_graph(), swap in any::<bool>()) {
        let f = featurize(&g);
        prop_assert_eq!(f.edges.len(), 2 * g.m());
        let mut a: Vec<_> = f.edges.iter().zip(&f.edge_features).map(|(e, x)| (*e, *x)).collect();
        let identity: Vec<usize> = (0..g.n()).collect();
        let h = featurize(&permuted(&g, &identity, swap));
        let mut b: Vec<_> = h.edges.iter().zip(&h.edge_features).map(|(e, x)| (*e, *x)).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(f.nodes, h.nodes);
    }

    #[test]
    fn ring_counts_invariant_under_relabeling(g in decorated_graph(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..g.n()).collect();
        perm.shuffle(&mut common::rng(seed));
        let h = permuted(&g, &perm, false);
        prop_assert_eq!(ring_counts(&g), ring_counts(&h));
    }

    #[test]
    fn sssr_sizes_match_oracle(g in random_graph()) {
        let mut ours: Vec<usize> = sssr(&g).iter().map(Vec::len).collect();
        ours.sort();
        prop_assert_eq!(ours, oracle_ring_sizes(&g));
    }
}
