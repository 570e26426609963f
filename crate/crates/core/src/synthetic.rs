//! Generators of small molecule corpora with a planted topological partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::molio::{parse_smiles, LabeledDataset, Record};
use crate::rng::{stream, Stream};

/// Ring templates as atom tokens; substituents attach at tokens 0 and 3, both carbons.
const AROMATIC_RINGS: [&[&str]; 7] = [
    &["c1", "c", "c", "c", "c", "c1"],
    &["c1", "c", "n", "c", "c", "c1"],
    &["c1", "c", "n", "c", "n", "c1"],
    &["c1", "c", "n", "c", "c", "n1"],
    &["c1", "c", "s", "c", "c1"],
    &["c1", "c", "o", "c", "c1"],
    &["c1", "c", "[nH]", "c", "c1"],
];

const SATURATED_BICYCLES: [&[&str]; 7] = [
    &["C1", "C", "C", "C2", "C", "C", "C", "C", "C2", "C1"],
    &["C1", "C", "C", "C2", "C", "C", "C", "C2", "C1"],
    &["C1", "C", "C2", "C", "C", "C", "C2", "C1"],
    &["C1", "C", "C2", "C", "C", "C1", "C2"],
    &["C1", "C", "C2", "C", "C", "C1", "C", "C2"],
    &["C1", "C", "C", "C2", "N", "C", "C", "C", "C2", "C1"],
    &["C1", "C", "C", "C2", "C", "C", "N", "C2", "C1"],
];

const SUBSTITUENTS: [&str; 10] = ["", "C", "CC", "O", "N", "F", "Cl", "OC", "C(=O)O", "C#N"];

/// A corpus with the planted family of every record.
#[derive(Clone, Debug)]
pub struct Planted {
    pub dataset: LabeledDataset,
    pub families: Vec<usize>,
}

fn ring_smiles(tokens: &[&str], a: &str, b: &str) -> String {
    let mut s = String::from(a);
    for (i, t) in tokens.iter().enumerate() {
        s.push_str(t);
        if i == 3 && !b.is_empty() {
            s.push('(');
            s.push_str(b);
            s.push(')');
        }
    }
    s
}

/// Acyclic chain of 5 to 10 heavy atoms, at least half of them N or O, never two
/// heteroatoms in a row, with occasional methyl branches and carbonyls.
fn chain_smiles(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(5..=10);
    let mut s = String::new();
    let mut prev_hetero = true;
    for i in 0..len {
        let hetero = !prev_hetero && rng.gen_bool(0.8);
        if hetero {
            s.push(*b"NO".choose(rng).expect("non-empty") as char);
        } else {
            s.push('C');
            if i > 0 && i + 1 < len && rng.gen_bool(0.25) {
                s.push_str(if rng.gen_bool(0.5) { "(C)" } else { "(=O)" });
            }
        }
        prev_hetero = hetero;
    }
    s
}

fn record(smiles: String, labels: Vec<Option<bool>>) -> Record {
    let graph = parse_smiles(&smiles)
        .unwrap_or_else(|e| panic!("generated SMILES {smiles} is invalid: {e}"));
    Record {
        smiles,
        graph,
        labels,
    }
}

fn ring_member(rng: &mut ChaCha8Rng, templates: &[&[&str]]) -> (String, usize, usize) {
    let t = rng.gen_range(0..templates.len());
    let a = rng.gen_range(0..SUBSTITUENTS.len());
    let b = rng.gen_range(0..SUBSTITUENTS.len());
    (
        ring_smiles(templates[t], SUBSTITUENTS[a], SUBSTITUENTS[b]),
        a,
        b,
    )
}

/// Three families of `per_family` molecules each: substituted aromatic monocycles (family
/// 0), substituted saturated fused or bridged bicycles (family 1) and heteroatom-rich
/// acyclic chains (family 2). Records carry no labels.
pub fn planted_families(per_family: usize, seed: u64) -> Planted {
    let mut rng = stream(seed, Stream::Synthetic);
    let mut records = Vec::with_capacity(3 * per_family);
    let mut families = Vec::with_capacity(3 * per_family);
    for family in 0..3 {
        for _ in 0..per_family {
            let smiles = match family {
                0 => ring_member(&mut rng, &AROMATIC_RINGS).0,
                1 => ring_member(&mut rng, &SATURATED_BICYCLES).0,
                _ => chain_smiles(&mut rng),
            };
            records.push(record(smiles, Vec::new()));
            families.push(family);
        }
    }
    Planted {
        dataset: LabeledDataset::from_records(records, Vec::new()).expect("non-empty corpus"),
        families,
    }
}

/// Two groups of `per_group` molecules with one binary task whose rule depends on the group:
/// aromatic monocycles (group 0) are positive when a substituent is a halogen; acyclic
/// chains (group 1) are positive when they contain a carbonyl.
pub fn two_group_task(per_group: usize, seed: u64) -> Planted {
    let mut rng = stream(seed, Stream::Synthetic);
    let mut records = Vec::with_capacity(2 * per_group);
    let mut families = Vec::with_capacity(2 * per_group);
    let halogen = |i: usize| matches!(SUBSTITUENTS[i], "F" | "Cl");
    for _ in 0..per_group {
        let (smiles, a, b) = ring_member(&mut rng, &AROMATIC_RINGS);
        records.push(record(smiles, vec![Some(halogen(a) || halogen(b))]));
        families.push(0);
    }
    for _ in 0..per_group {
        let smiles = chain_smiles(&mut rng);
        let positive = smiles.contains("=O");
        records.push(record(smiles, vec![Some(positive)]));
        families.push(1);
    }
    Planted {
        dataset: LabeledDataset::from_records(records, vec!["label".to_string()])
            .expect("non-empty corpus"),
        families,
    }
}
