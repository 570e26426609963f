//! SMILES reader and writer for the tetrahedral / cis-trans subset of the grammar.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use super::elements;
use super::graph::{Atom, Bond, BondDirection, BondType, Chirality, GraphError, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown element '{symbol}' at byte {offset}")]
    UnknownElement { offset: usize, symbol: String },
    #[error("invalid bracket atom at byte {offset}: {message}")]
    InvalidBracket { offset: usize, message: String },
    #[error("ring closure {label} opened at byte {offset} is never closed")]
    UnclosedRing { label: u32, offset: usize },
    #[error("branch opened at byte {offset} is never closed")]
    UnclosedBranch { offset: usize },
    #[error("invalid molecular graph: {0}")]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct BondSpec {
    /// `None` when no bond symbol was written.
    kind: Option<BondType>,
    direction: BondDirection,
    offset: usize,
}

struct RawBond {
    u: usize,
    v: usize,
    kind: Option<BondType>,
    direction: BondDirection,
    offset: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<RawBond>,
}

const ORGANIC: [(&str, u8); 10] = [
    ("Cl", 17),
    ("Br", 35),
    ("B", 5),
    ("C", 6),
    ("N", 7),
    ("O", 8),
    ("P", 15),
    ("S", 16),
    ("F", 9),
    ("I", 53),
];

const AROMATIC_ORGANIC: [(&str, u8); 6] =
    [("b", 5), ("c", 6), ("n", 7), ("o", 8), ("p", 15), ("s", 16)];

const AROMATIC_BRACKET: [(&str, u8); 9] = [
    ("se", 34),
    ("as", 33),
    ("te", 52),
    ("b", 5),
    ("c", 6),
    ("n", 7),
    ("o", 8),
    ("p", 15),
    ("s", 16),
];

/// Parses a SMILES string into a hydrogen-suppressed graph.
///
/// Lowercase atoms are taken as aromatic without re-perception. An unmarked bond between two
/// aromatic atoms is aromatic when it closes or lies on a ring and single otherwise. Explicit
/// `[H]` atoms attached to a heavy atom are folded into that atom's hydrogen count.
pub fn parse_smiles(s: &str) -> Result<MolecularGraph, SmilesError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut p = Parser {
        s: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    p.run()?;
    let graph = p.finish()?;
    Ok(fold_hydrogens(graph))
}

impl<'a> Parser<'a> {
    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, SmilesError> {
        Err(SmilesError::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut pending: Option<BondSpec> = None;
        let mut rings: BTreeMap<u32, (usize, Option<BondSpec>, usize)> = BTreeMap::new();
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if pending.is_some() {
                        return self.syntax(start, "two consecutive bond symbols");
                    }
                    if prev.is_none() {
                        return self.syntax(start, "bond symbol without a preceding atom");
                    }
                    let (kind, direction) = match c {
                        b'-' => (BondType::Single, BondDirection::None),
                        b'=' => (BondType::Double, BondDirection::None),
                        b'#' => (BondType::Triple, BondDirection::None),
                        b':' => (BondType::Aromatic, BondDirection::None),
                        b'/' => (BondType::Single, BondDirection::EndUpRight),
                        b'\\' => (BondType::Single, BondDirection::EndDownRight),
                        _ => return self.syntax(start, "quadruple bonds are not supported"),
                    };
                    pending = Some(BondSpec {
                        kind: Some(kind),
                        direction,
                        offset: start,
                    });
                    self.pos += 1;
                }
                b'(' => {
                    if prev.is_none() {
                        return self.syntax(start, "branch without a preceding atom");
                    }
                    if pending.is_some() {
                        return self.syntax(start, "bond symbol before '('");
                    }
                    branches.push((prev, start));
                    self.pos += 1;
                    if self.peek() == Some(b')') {
                        return self.syntax(self.pos, "empty branch");
                    }
                }
                b')' => {
                    if pending.is_some() {
                        return self.syntax(start, "bond symbol before ')'");
                    }
                    match branches.pop() {
                        Some((atom, _)) => prev = atom,
                        None => return self.syntax(start, "unmatched ')'"),
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() {
                        return self.syntax(start, "bond symbol before '.'");
                    }
                    if !branches.is_empty() {
                        return self.syntax(start, "'.' inside a branch");
                    }
                    if prev.is_none() {
                        return self.syntax(start, "'.' without a preceding atom");
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return self.syntax(start, "ring closure without a preceding atom");
                    };
                    let label = self.ring_label()?;
                    let spec = pending.take();
                    match rings.remove(&label) {
                        Some((other, open_spec, _)) => {
                            if other == atom {
                                return self.syntax(
                                    start,
                                    format!("ring closure {label} bonds an atom to itself"),
                                );
                            }
                            let spec = merge_closure(open_spec, spec).ok_or_else(|| {
                                SmilesError::Syntax {
                                    offset: start,
                                    message: format!(
                                        "conflicting bond symbols on ring closure {label}"
                                    ),
                                }
                            })?;
                            self.bonds.push(RawBond {
                                u: other,
                                v: atom,
                                kind: spec.and_then(|b| b.kind),
                                direction: spec.map_or(BondDirection::None, |b| b.direction),
                                offset: spec.map_or(start, |b| b.offset),
                            });
                        }
                        None => {
                            rings.insert(label, (atom, spec, start));
                        }
                    }
                }
                _ => {
                    let atom = if c == b'[' {
                        self.bracket_atom()?
                    } else {
                        self.organic_atom()?
                    };
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        let spec = pending.take();
                        self.bonds.push(RawBond {
                            u: p,
                            v: idx,
                            kind: spec.and_then(|b| b.kind),
                            direction: spec.map_or(BondDirection::None, |b| b.direction),
                            offset: spec.map_or(start, |b| b.offset),
                        });
                    }
                    prev = Some(idx);
                }
            }
        }
        if let Some(spec) = pending {
            return self.syntax(spec.offset, "dangling bond symbol at end of input");
        }
        if let Some(&(_, offset)) = branches.last() {
            return Err(SmilesError::UnclosedBranch { offset });
        }
        if let Some((&label, &(_, _, offset))) = rings.iter().next() {
            return Err(SmilesError::UnclosedRing { label, offset });
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.s[start] == b'%' {
            let digits = self.s.get(start + 1..start + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.syntax(start, "'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            Ok((self.s[start] - b'0') as u32)
        }
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let rest = &self.s[start..];
        for (sym, z) in ORGANIC {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Ok(Atom::organic(z, false));
            }
        }
        for (sym, z) in AROMATIC_ORGANIC {
            if rest.starts_with(sym.as_bytes()) {
                self.pos += sym.len();
                return Ok(Atom::organic(z, true));
            }
        }
        let c = self.s[start];
        if c.is_ascii_alphabetic() || c == b'*' {
            let len = if c.is_ascii_uppercase() && rest.get(1).is_some_and(u8::is_ascii_lowercase) {
                2
            } else {
                1
            };
            return Err(SmilesError::UnknownElement {
                offset: start,
                symbol: String::from_utf8_lossy(&rest[..len]).into_owned(),
            });
        }
        self.syntax(start, format!("unexpected character '{}'", c as char))
    }

    fn bracket_err<T>(&self, message: impl Into<String>) -> Result<T, SmilesError> {
        Err(SmilesError::InvalidBracket {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let isotope = match self.digits() {
            Some(v) if v <= u16::MAX as u32 => Some(v as u16),
            Some(_) => return self.bracket_err("isotope out of range"),
            None => None,
        };

        let sym_start = self.pos;
        let rest = &self.s[sym_start..];
        let (atomic_number, aromatic, len) = if let Some(&(sym, z)) = AROMATIC_BRACKET
            .iter()
            .find(|(sym, _)| rest.starts_with(sym.as_bytes()))
        {
            (z, true, sym.len())
        } else if rest.first().is_some_and(u8::is_ascii_uppercase) {
            let two = rest
                .get(..2)
                .filter(|t| t[1].is_ascii_lowercase())
                .and_then(|t| std::str::from_utf8(t).ok())
                .and_then(|t| elements::atomic_number(t).map(|z| (z, 2)));
            let one = || {
                std::str::from_utf8(&rest[..1])
                    .ok()
                    .and_then(|t| elements::atomic_number(t).map(|z| (z, 1)))
            };
            match two.or_else(one) {
                Some((z, len)) => (z, false, len),
                None => {
                    let len = if rest.get(1).is_some_and(u8::is_ascii_lowercase) {
                        2
                    } else {
                        1
                    };
                    return Err(SmilesError::UnknownElement {
                        offset: sym_start,
                        symbol: String::from_utf8_lossy(&rest[..len]).into_owned(),
                    });
                }
            }
        } else {
            return match rest.first() {
                Some(b'*') => Err(SmilesError::UnknownElement {
                    offset: sym_start,
                    symbol: "*".into(),
                }),
                _ => self.bracket_err("missing element symbol"),
            };
        };
        self.pos += len;

        let mut chirality = Chirality::Unspecified;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                chirality = Chirality::TetrahedralCw;
            } else {
                let rest = &self.s[self.pos..];
                let class = ["TH", "AL", "SP", "TB", "OH"]
                    .iter()
                    .find(|c| rest.starts_with(c.as_bytes()));
                match class {
                    Some(c) => {
                        self.pos += c.len();
                        if self.digits().is_none() {
                            return self.bracket_err(format!("chirality class {c} needs a number"));
                        }
                        chirality = Chirality::Other;
                    }
                    None => chirality = Chirality::TetrahedralCcw,
                }
            }
        }

        let mut hydrogens = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = match self.digits() {
                Some(h) if h <= 9 => h as u8,
                Some(_) => return self.bracket_err("hydrogen count out of range"),
                None => 1,
            };
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(mag) = self.digits() {
                charge = unit * mag as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            if !(-15..=15).contains(&charge) {
                return self.bracket_err("charge out of range");
            }
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.digits().is_none() {
                return self.bracket_err("atom class needs a number");
            }
        }

        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(c) => {
                return self.bracket_err(format!("unexpected '{}' in bracket atom", c as char))
            }
            None => {
                return Err(SmilesError::InvalidBracket {
                    offset: open,
                    message: "unterminated bracket atom".into(),
                })
            }
        }

        Ok(Atom {
            atomic_number,
            aromatic,
            chirality,
            charge: charge as i8,
            isotope,
            hydrogens: Some(hydrogens),
            bracket: true,
        })
    }

    fn finish(self) -> Result<MolecularGraph, SmilesError> {
        let n = self.atoms.len();
        let mut seen = HashSet::new();
        for b in &self.bonds {
            if b.u == b.v {
                return Err(GraphError::SelfLoop { index: 0, u: b.u }.into());
            }
            if !seen.insert((b.u.min(b.v), b.u.max(b.v))) {
                return Err(SmilesError::Syntax {
                    offset: b.offset,
                    message: format!("duplicate bond between atoms {} and {}", b.u, b.v),
                });
            }
            if b.kind == Some(BondType::Aromatic)
                && !(self.atoms[b.u].aromatic && self.atoms[b.v].aromatic)
            {
                return Err(SmilesError::Syntax {
                    offset: b.offset,
                    message: "aromatic bond symbol between non-aromatic atoms".into(),
                });
            }
        }
        let tentative: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| Bond {
                u: b.u,
                v: b.v,
                kind: b
                    .kind
                    .unwrap_or(if self.atoms[b.u].aromatic && self.atoms[b.v].aromatic {
                        BondType::Aromatic
                    } else {
                        BondType::Single
                    }),
                direction: b.direction,
            })
            .collect();
        let mut graph = MolecularGraph {
            atoms: self.atoms,
            bonds: tentative,
        };
        let in_ring = graph.ring_bonds();
        for ((bond, raw), ring) in graph.bonds.iter_mut().zip(&self.bonds).zip(in_ring) {
            if raw.kind.is_none() && bond.kind == BondType::Aromatic && !ring {
                bond.kind = BondType::Single;
            }
        }
        debug_assert_eq!(graph.n(), n);
        graph.validate()?;
        Ok(graph)
    }
}

/// Combines the bond symbols written at the opening and closing digit of a ring closure.
fn merge_closure(open: Option<BondSpec>, close: Option<BondSpec>) -> Option<Option<BondSpec>> {
    match (open, close) {
        (Some(a), Some(b)) if a.kind != b.kind => None,
        (Some(a), Some(b))
            if a.direction != BondDirection::None && b.direction != BondDirection::None =>
        {
            // Directions are written relative to each end; keep the opening one.
            Some(Some(a))
        }
        (Some(a), Some(b)) => Some(Some(if a.direction != BondDirection::None {
            a
        } else {
            b
        })),
        (a, b) => Some(a.or(b)),
    }
}

/// Removes plain explicit hydrogens bonded to exactly one heavy atom.
fn fold_hydrogens(graph: MolecularGraph) -> MolecularGraph {
    let adj = graph.adjacency();
    let mut keep = vec![true; graph.n()];
    let mut extra_h = vec![0u8; graph.n()];
    for (i, a) in graph.atoms.iter().enumerate() {
        let plain = a.atomic_number == 1
            && a.isotope.is_none()
            && a.charge == 0
            && a.chirality == Chirality::Unspecified
            && a.hydrogens.unwrap_or(0) == 0;
        if !plain || adj[i].len() != 1 {
            continue;
        }
        let (nb, bond) = adj[i][0];
        if graph.atoms[nb].atomic_number != 1 && graph.bonds[bond].kind == BondType::Single {
            keep[i] = false;
            extra_h[nb] += 1;
        }
    }
    if keep.iter().all(|&k| k) {
        return graph;
    }
    let mut g = graph.subgraph(&keep);
    let mut j = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            if extra_h[i] > 0 {
                if let Some(h) = g.atoms[j].hydrogens.as_mut() {
                    *h = h.saturating_add(extra_h[i]);
                }
            }
            j += 1;
        }
    }
    g
}

fn organic_symbol(atom: &Atom) -> Option<&'static str> {
    let table: &[(&str, u8)] = if atom.aromatic {
        &AROMATIC_ORGANIC
    } else {
        &ORGANIC
    };
    table
        .iter()
        .find(|(_, z)| *z == atom.atomic_number)
        .map(|(s, _)| *s)
}

fn write_atom(out: &mut String, atom: &Atom) {
    if !atom.bracket
        && atom.chirality == Chirality::Unspecified
        && atom.charge == 0
        && atom.isotope.is_none()
    {
        if let Some(sym) = organic_symbol(atom) {
            out.push_str(sym);
            return;
        }
    }
    out.push('[');
    if let Some(iso) = atom.isotope {
        let _ = write!(out, "{iso}");
    }
    let sym = elements::symbol(atom.atomic_number);
    if atom.aromatic {
        out.push_str(&sym.to_ascii_lowercase());
    } else {
        out.push_str(sym);
    }
    match atom.chirality {
        Chirality::Unspecified => {}
        Chirality::TetrahedralCw => out.push_str("@@"),
        Chirality::TetrahedralCcw => out.push('@'),
        Chirality::Other => out.push_str("@TH1"),
    }
    match atom.hydrogens.unwrap_or(0) {
        0 => {}
        1 => out.push('H'),
        h => {
            let _ = write!(out, "H{h}");
        }
    }
    match atom.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{c}");
        }
        c => {
            let _ = write!(out, "-{}", -c);
        }
    }
    out.push(']');
}

fn bond_symbol(g: &MolecularGraph, bond: &Bond, in_ring: bool) -> &'static str {
    let both_aromatic = g.atoms[bond.u].aromatic && g.atoms[bond.v].aromatic;
    match (bond.kind, bond.direction) {
        (BondType::Single, BondDirection::EndUpRight) => "/",
        (BondType::Single, BondDirection::EndDownRight) => "\\",
        (BondType::Single, _) if both_aromatic => "-",
        (BondType::Single, _) => "",
        (BondType::Double, _) => "=",
        (BondType::Triple, _) => "#",
        (BondType::Aromatic, _) if in_ring => "",
        (BondType::Aromatic, _) => ":",
    }
}

/// Writes a SMILES string that parses back to the same graph up to atom order.
///
/// Bond directions are emitted as stored, so cis/trans meaning is not preserved when the
/// traversal order differs from the original string.
pub fn write_smiles(g: &MolecularGraph) -> String {
    let adj = g.adjacency();
    let in_ring = g.ring_bonds();
    let n = g.n();
    let mut order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    // Closure bonds listed on the atom visited first (opener) and the later one (closer).
    let mut opens: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; g.m()];
    let mut roots = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if order[root] != usize::MAX {
            continue;
        }
        roots.push(root);
        let mut stack = vec![(root, usize::MAX)];
        while let Some((a, via)) = stack.pop() {
            if order[a] != usize::MAX {
                continue;
            }
            order[a] = counter;
            counter += 1;
            if via != usize::MAX {
                tree_bond[via] = true;
                children[g.bonds[via].other(a)].push((a, via));
            }
            for &(b, bond) in adj[a].iter().rev() {
                if order[b] == usize::MAX {
                    stack.push((b, bond));
                }
            }
        }
    }
    for (i, b) in g.bonds.iter().enumerate() {
        if !tree_bond[i] {
            let (first, second) = if order[b.u] < order[b.v] {
                (b.u, b.v)
            } else {
                (b.v, b.u)
            };
            opens[first].push(i);
            closes[second].push(i);
        }
    }

    let mut out = String::new();
    let mut labels = vec![0u32; g.m()];
    let mut free: std::collections::BTreeSet<u32> = (1..=99).collect();
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        enum Step {
            Atom(usize, usize),
            Open,
            Close,
        }
        let mut stack = vec![Step::Atom(root, usize::MAX)];
        while let Some(step) = stack.pop() {
            let (a, via) = match step {
                Step::Open => {
                    out.push('(');
                    continue;
                }
                Step::Close => {
                    out.push(')');
                    continue;
                }
                Step::Atom(a, via) => (a, via),
            };
            if via != usize::MAX {
                out.push_str(bond_symbol(g, &g.bonds[via], in_ring[via]));
            }
            write_atom(&mut out, &g.atoms[a]);
            for &bi in &closes[a] {
                out.push_str(bond_symbol(g, &g.bonds[bi], in_ring[bi]));
                push_label(&mut out, labels[bi]);
                free.insert(labels[bi]);
            }
            for &bi in &opens[a] {
                let label = free.pop_first().expect("more than 99 open ring closures");
                labels[bi] = label;
                out.push_str(bond_symbol(g, &g.bonds[bi], in_ring[bi]));
                push_label(&mut out, label);
            }
            let kids = &children[a];
            // Last child continues the chain; earlier ones become branches.
            if let Some((&last, rest)) = kids.split_last() {
                stack.push(Step::Atom(last.0, last.1));
                for &(c, bond) in rest.iter().rev() {
                    stack.push(Step::Close);
                    stack.push(Step::Atom(c, bond));
                    stack.push(Step::Open);
                }
            }
        }
    }
    out
}

fn push_label(out: &mut String, label: u32) {
    if label < 10 {
        let _ = write!(out, "{label}");
    } else {
        let _ = write!(out, "%{label:02}");
    }
}
