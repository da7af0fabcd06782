//! SMILES subset parser and the molecular graph it produces.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I` and aromatic
//! `b c n o p s`), bracket atoms with isotope (parsed, discarded), chirality
//! (`@`, `@@`), hydrogen count, charge and atom class (discarded), the bond
//! symbols `- = # : / \`, branches, ring closures (single digit and `%nn`),
//! and disconnected components separated by `.`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::elements::Element;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("non-ASCII character at position {0}")]
    NonAscii(usize),
    #[error("unbalanced parenthesis at position {0}")]
    UnbalancedParenthesis(usize),
    #[error("ring bond {0} was opened but never closed")]
    UnclosedRingBond(u32),
    #[error("unknown symbol at position {0}")]
    UnknownSymbol(usize),
    #[error("unsupported SMILES feature: {0}")]
    UnsupportedFeature(String),
    #[error("bond symbol at position {0} is not followed by an atom or ring closure")]
    DanglingBond(usize),
    #[error("ring closure {0} bonds an atom to itself")]
    SelfBond(u32),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("ring closure {0} has conflicting bond symbols")]
    ConflictingRingBond(u32),
    #[error("element {0} cannot be aromatic")]
    InvalidAromatic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Chirality {
    #[default]
    None,
    Anticlockwise,
    Clockwise,
}

impl Chirality {
    pub fn code(self) -> u8 {
        match self {
            Chirality::None => 0,
            Chirality::Anticlockwise => 1,
            Chirality::Clockwise => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Valence contribution; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BondDirection {
    #[default]
    None,
    Up,
    Down,
}

impl BondDirection {
    pub fn code(self) -> u8 {
        match self {
            BondDirection::None => 0,
            BondDirection::Up => 1,
            BondDirection::Down => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub aromatic: bool,
    pub chirality: Chirality,
    pub index: usize,
}

impl Atom {
    pub fn new(element: Element, index: usize) -> Self {
        Atom {
            element,
            formal_charge: 0,
            explicit_h: None,
            aromatic: false,
            chirality: Chirality::None,
            index,
        }
    }

    pub fn atomic_number(&self) -> u8 {
        self.element.atomic_number()
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    /// Endpoints in writing order: `begin` was written before `end`.
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub direction: BondDirection,
    pub index: usize,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if atom == self.begin {
            self.end
        } else {
            self.begin
        }
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.begin == atom || self.end == atom
    }
}

/// A parsed molecular graph.
#[derive(Debug, Clone)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    n_components: usize,
    source_smiles: String,
}

impl Molecule {
    /// Assembles a molecule, checking the bond invariants.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>, source_smiles: impl Into<String>) -> Result<Self, SmilesError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            assert_eq!(b.index, i, "bond indices must be dense");
            assert!(b.begin < atoms.len() && b.end < atoms.len(), "bond endpoint out of range");
            if b.begin == b.end {
                return Err(SmilesError::SelfBond(0));
            }
            if adjacency[b.begin].iter().any(|&(n, _)| n == b.end) {
                return Err(SmilesError::DuplicateBond(b.begin.min(b.end), b.begin.max(b.end)));
            }
            adjacency[b.begin].push((b.end, i));
            adjacency[b.end].push((b.begin, i));
        }
        let mut atoms = atoms;
        for (i, a) in atoms.iter_mut().enumerate() {
            a.index = i;
        }
        let n_components = count_components(&adjacency);
        Ok(Molecule {
            atoms,
            bonds,
            adjacency,
            n_components,
            source_smiles: source_smiles.into(),
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor atom, bond index)` pairs in bond-creation order.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a].iter().find(|&&(n, _)| n == b).map(|&(_, bi)| bi)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn is_multi_component(&self) -> bool {
        self.n_components > 1
    }

    pub fn source_smiles(&self) -> &str {
        &self.source_smiles
    }

    /// The subgraph induced by `atom_set`, with atoms renumbered in ascending
    /// original index order. Returns the subgraph and the original index of
    /// every new atom.
    pub fn induced_subgraph(&self, atom_set: &[usize]) -> (Molecule, Vec<usize>) {
        let mut members: Vec<usize> = atom_set.to_vec();
        members.sort_unstable();
        members.dedup();
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in members.iter().enumerate() {
            remap[old] = new;
        }
        let atoms: Vec<Atom> = members.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut bonds = Vec::new();
        for b in &self.bonds {
            let (nb, ne) = (remap[b.begin], remap[b.end]);
            if nb != usize::MAX && ne != usize::MAX {
                bonds.push(Bond {
                    begin: nb,
                    end: ne,
                    order: b.order,
                    direction: b.direction,
                    index: bonds.len(),
                });
            }
        }
        let sub = Molecule::new(atoms, bonds, "").expect("subgraph of a valid molecule is valid");
        (sub, members)
    }
}

fn count_components(adjacency: &[Vec<(usize, usize)>]) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
}

impl BondSymbol {
    fn from_byte(c: u8) -> Option<Self> {
        Some(match c {
            b'-' => BondSymbol::Single,
            b'=' => BondSymbol::Double,
            b'#' => BondSymbol::Triple,
            b':' => BondSymbol::Aromatic,
            b'/' => BondSymbol::Up,
            b'\\' => BondSymbol::Down,
            _ => return None,
        })
    }

    fn order(self) -> BondOrder {
        match self {
            BondSymbol::Single | BondSymbol::Up | BondSymbol::Down => BondOrder::Single,
            BondSymbol::Double => BondOrder::Double,
            BondSymbol::Triple => BondOrder::Triple,
            BondSymbol::Aromatic => BondOrder::Aromatic,
        }
    }

    fn direction(self) -> BondDirection {
        match self {
            BondSymbol::Up => BondDirection::Up,
            BondSymbol::Down => BondDirection::Down,
            _ => BondDirection::None,
        }
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<usize>>,
    prev: Option<usize>,
    branches: Vec<(usize, usize)>,
    pending: Option<(BondSymbol, usize)>,
    rings: BTreeMap<u32, (usize, Option<BondSymbol>)>,
}

/// Parses a SMILES string in the supported subset.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(p) = trimmed.bytes().position(|c| !c.is_ascii()) {
        return Err(SmilesError::NonAscii(p));
    }
    let mut p = Parser {
        text: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        adjacency: Vec::new(),
        prev: None,
        branches: Vec::new(),
        pending: None,
        rings: BTreeMap::new(),
    };
    p.run()?;
    Molecule::new(p.atoms, p.bonds, trimmed)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<u8> {
        self.text.get(self.pos + offset).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let prev = self.prev.ok_or(SmilesError::UnbalancedParenthesis(start))?;
                    if self.pending.is_some() {
                        return Err(SmilesError::DanglingBond(start));
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    if let Some((_, p)) = self.pending {
                        return Err(SmilesError::DanglingBond(p));
                    }
                    let (atom, _) = self.branches.pop().ok_or(SmilesError::UnbalancedParenthesis(start))?;
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, p)) = self.pending {
                        return Err(SmilesError::DanglingBond(p));
                    }
                    if self.prev.is_none() {
                        return Err(SmilesError::UnknownSymbol(start));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let number = self.ring_number()?;
                    self.ring_closure(number, start)?;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, start)?;
                }
                b'*' => return Err(SmilesError::UnsupportedFeature("wildcard atom '*'".into())),
                b'$' => return Err(SmilesError::UnsupportedFeature("quadruple bond '$'".into())),
                _ => {
                    if let Some(sym) = BondSymbol::from_byte(c) {
                        if self.pending.is_some() || self.prev.is_none() {
                            return Err(SmilesError::DanglingBond(start));
                        }
                        self.pending = Some((sym, start));
                        self.pos += 1;
                    } else {
                        let atom = self.organic_atom()?;
                        self.add_atom(atom, start)?;
                    }
                }
            }
        }
        if let Some((_, p)) = self.pending {
            return Err(SmilesError::DanglingBond(p));
        }
        if let Some(&(_, p)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis(p));
        }
        if let Some((&n, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnclosedRingBond(n));
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, SmilesError> {
        let c = self.peek().unwrap();
        if c == b'%' {
            let (d1, d2) = (self.peek_at(1), self.peek_at(2));
            match (d1, d2) {
                (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                    self.pos += 3;
                    Ok(((a - b'0') * 10 + (b - b'0')) as u32)
                }
                _ => Err(SmilesError::UnknownSymbol(self.pos)),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn ring_closure(&mut self, number: u32, start: usize) -> Result<(), SmilesError> {
        let prev = self.prev.ok_or(SmilesError::UnknownSymbol(start))?;
        let sym = self.pending.take().map(|(s, _)| s);
        match self.rings.remove(&number) {
            None => {
                self.rings.insert(number, (prev, sym));
            }
            Some((opener, open_sym)) => {
                if opener == prev {
                    return Err(SmilesError::SelfBond(number));
                }
                let sym = match (open_sym, sym) {
                    (Some(a), Some(b)) if a.order() != b.order() => {
                        return Err(SmilesError::ConflictingRingBond(number));
                    }
                    (Some(a), _) => Some(a),
                    (None, b) => b,
                };
                self.add_bond(opener, prev, sym)?;
            }
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, _start: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(Atom { index: idx, ..atom });
        self.adjacency.push(Vec::new());
        if let Some(prev) = self.prev {
            let sym = self.pending.take().map(|(s, _)| s);
            self.add_bond(prev, idx, sym)?;
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn add_bond(&mut self, a: usize, b: usize, sym: Option<BondSymbol>) -> Result<(), SmilesError> {
        if self.adjacency[a].contains(&b) {
            return Err(SmilesError::DuplicateBond(a.min(b), a.max(b)));
        }
        let (order, direction) = match sym {
            Some(s) => (s.order(), s.direction()),
            None if self.atoms[a].aromatic && self.atoms[b].aromatic => (BondOrder::Aromatic, BondDirection::None),
            None => (BondOrder::Single, BondDirection::None),
        };
        let index = self.bonds.len();
        self.bonds.push(Bond {
            begin: a,
            end: b,
            order,
            direction,
            index,
        });
        self.adjacency[a].push(b);
        self.adjacency[b].push(a);
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let c = self.peek().unwrap();
        let next = self.peek_at(1);
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => return Err(SmilesError::UnknownSymbol(start)),
        };
        self.pos += len;
        let mut atom = Atom::new(Element::from_symbol(symbol).unwrap(), 0);
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        // isotope: parsed and discarded
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let sym_start = self.pos;
        let c = self.peek().ok_or(SmilesError::UnknownSymbol(sym_start))?;
        let (element, aromatic) = if c == b'*' {
            return Err(SmilesError::UnsupportedFeature("wildcard atom '*'".into()));
        } else if c.is_ascii_lowercase() {
            let two = self.peek_at(1);
            if c == b's' && two == Some(b'e') {
                self.pos += 2;
                (Element::SE, true)
            } else if c == b'a' && two == Some(b's') {
                self.pos += 2;
                (Element::AS, true)
            } else {
                let e = match c {
                    b'b' => Element::B,
                    b'c' => Element::C,
                    b'n' => Element::N,
                    b'o' => Element::O,
                    b'p' => Element::P,
                    b's' => Element::S,
                    _ => return Err(SmilesError::UnknownSymbol(sym_start)),
                };
                self.pos += 1;
                (e, true)
            }
        } else if c.is_ascii_uppercase() {
            let two = self.peek_at(1).filter(|b| b.is_ascii_lowercase());
            let two_sym = two.map(|b| String::from_utf8(vec![c, b]).unwrap());
            match two_sym.as_deref().and_then(Element::from_symbol) {
                Some(e) => {
                    self.pos += 2;
                    (e, false)
                }
                None => {
                    let one = String::from_utf8(vec![c]).unwrap();
                    let e = Element::from_symbol(&one).ok_or(SmilesError::UnknownSymbol(sym_start))?;
                    self.pos += 1;
                    (e, false)
                }
            }
        } else {
            return Err(SmilesError::UnknownSymbol(sym_start));
        };
        if aromatic && !element.may_be_aromatic() {
            return Err(SmilesError::InvalidAromatic(element.symbol().into()));
        }
        let mut atom = Atom::new(element, 0);
        atom.aromatic = aromatic;

        if self.peek() == Some(b'@') {
            self.pos += 1;
            atom.chirality = if self.peek() == Some(b'@') {
                self.pos += 1;
                Chirality::Clockwise
            } else {
                Chirality::Anticlockwise
            };
            if matches!(self.peek(), Some(b'T' | b'A' | b'S' | b'O')) {
                return Err(SmilesError::UnsupportedFeature("extended chirality class".into()));
            }
        }

        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = 1;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                h = d - b'0';
                self.pos += 1;
            }
        }
        atom.explicit_h = Some(h);

        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            let mut magnitude = 1i32;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                magnitude = (d - b'0') as i32;
                self.pos += 1;
                if let Some(d2 @ b'0'..=b'9') = self.peek() {
                    magnitude = magnitude * 10 + (d2 - b'0') as i32;
                    self.pos += 1;
                }
            } else {
                while self.peek() == Some(sign) {
                    magnitude += 1;
                    self.pos += 1;
                }
            }
            let charge = unit * magnitude;
            if !(-8..=8).contains(&charge) {
                return Err(SmilesError::UnsupportedFeature(format!("charge {charge}")));
            }
            atom.formal_charge = charge as i8;
        }

        if self.peek() == Some(b':') {
            // atom class: parsed and discarded
            self.pos += 1;
            let digits_start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            if self.pos == digits_start {
                return Err(SmilesError::UnknownSymbol(digits_start));
            }
        }

        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(atom)
            }
            Some(_) => Err(SmilesError::UnknownSymbol(self.pos)),
            None => Err(SmilesError::UnknownSymbol(open)),
        }
    }
}

/// Atom, its ordered `(neighbor, bond)` list and a cursor into that list.
type DfsFrame = (usize, Vec<(usize, usize)>, usize);

/// Writes a SMILES string for `m` by depth-first traversal.
///
/// Each component is rooted at its lowest-ranked atom and neighbors are
/// visited in ascending rank; `atom_text` renders one atom. Stereo marks
/// are not written.
pub fn write_smiles(m: &Molecule, ranks: &[usize], atom_text: impl Fn(usize) -> String) -> String {
    write_smiles_with_order(m, ranks, atom_text).0
}

/// [`write_smiles`] plus each atom's position in the written string.
pub fn write_smiles_with_order(m: &Molecule, ranks: &[usize], atom_text: impl Fn(usize) -> String) -> (String, Vec<usize>) {
    let n = m.n_atoms();
    assert_eq!(ranks.len(), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ranks[i], i));

    // Pass 1: spanning forest and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut dfs_pos = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut ring_open: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut ring_close: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut bond_used = vec![false; m.n_bonds()];
    let mut roots = Vec::new();
    let mut counter = 0usize;
    for &root in &order {
        if visited[root] {
            continue;
        }
        roots.push(root);
        // iterative DFS with explicit neighbor cursors
        let mut stack: Vec<DfsFrame> = Vec::new();
        visited[root] = true;
        dfs_pos[root] = counter;
        counter += 1;
        stack.push((root, sorted_neighbors(m, root, ranks), 0));
        while let Some(top) = stack.last_mut() {
            let (u, ref nbrs, ref mut cursor) = *top;
            if *cursor >= nbrs.len() {
                stack.pop();
                continue;
            }
            let (v, bi) = nbrs[*cursor];
            *cursor += 1;
            if bond_used[bi] {
                continue;
            }
            bond_used[bi] = true;
            if visited[v] {
                // v is an ancestor (undirected DFS): ring bond opened at v, closed at u
                ring_open[v].push((u, bi));
                ring_close[u].push((v, bi));
            } else {
                visited[v] = true;
                dfs_pos[v] = counter;
                counter += 1;
                children[u].push((v, bi));
                let vn = sorted_neighbors(m, v, ranks);
                stack.push((v, vn, 0));
            }
        }
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut digit_of_bond: BTreeMap<usize, u32> = BTreeMap::new();
    let mut free_digits: std::collections::BTreeSet<u32> = (1..=99).collect();
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        // explicit stack of emission actions
        enum Act {
            Atom(usize),
            Text(String),
        }
        let mut acts = vec![Act::Atom(root)];
        while let Some(act) = acts.pop() {
            let u = match act {
                Act::Text(t) => {
                    out.push_str(&t);
                    continue;
                }
                Act::Atom(u) => u,
            };
            out.push_str(&atom_text(u));
            let mut closes = ring_close[u].clone();
            closes.sort_by_key(|&(v, _)| dfs_pos[v]);
            for (_, bi) in closes {
                let d = digit_of_bond.remove(&bi).expect("ring bond opened before closing");
                push_ring_digit(&mut out, d);
                free_digits.insert(d);
            }
            let mut opens = ring_open[u].clone();
            opens.sort_by_key(|&(v, _)| dfs_pos[v]);
            for (_, bi) in opens {
                let d = *free_digits.iter().next().expect("more than 99 open ring bonds");
                free_digits.remove(&d);
                digit_of_bond.insert(bi, d);
                out.push_str(bond_text(m, bi));
                push_ring_digit(&mut out, d);
            }
            let kids = &children[u];
            // push in reverse so the first child is emitted first
            for (k, &(v, bi)) in kids.iter().enumerate().rev() {
                let last = k + 1 == kids.len();
                if !last {
                    acts.push(Act::Text(")".into()));
                }
                acts.push(Act::Atom(v));
                let mut t = String::new();
                if !last {
                    t.push('(');
                }
                t.push_str(bond_text(m, bi));
                acts.push(Act::Text(t));
            }
        }
    }
    (out, dfs_pos)
}

fn sorted_neighbors(m: &Molecule, u: usize, ranks: &[usize]) -> Vec<(usize, usize)> {
    let mut v = m.neighbors(u).to_vec();
    v.sort_by_key(|&(n, _)| (ranks[n], n));
    v
}

fn push_ring_digit(out: &mut String, d: u32) {
    if d < 10 {
        let _ = write!(out, "{d}");
    } else {
        let _ = write!(out, "%{d:02}");
    }
}

fn bond_text(m: &Molecule, bi: usize) -> &'static str {
    let b = m.bond(bi);
    let both_aromatic = m.atom(b.begin).aromatic && m.atom(b.end).aromatic;
    match b.order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

/// Bracket text for an atom with the given hydrogen count; stereo omitted.
pub fn bracket_text(atom: &Atom, h: Option<u8>) -> String {
    let mut s = String::from("[");
    if atom.aromatic {
        s.push_str(&atom.element.symbol().to_ascii_lowercase());
    } else {
        s.push_str(atom.element.symbol());
    }
    match h {
        Some(0) | None => {}
        Some(1) => s.push('H'),
        Some(k) => {
            let _ = write!(s, "H{k}");
        }
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        q if q > 0 => {
            let _ = write!(s, "+{q}");
        }
        q => {
            let _ = write!(s, "-{}", -q);
        }
    }
    s.push(']');
    s
}

/// Symbol text for an organic-subset atom written without brackets.
pub fn organic_text(atom: &Atom) -> String {
    if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.n_atoms(), 1);
        assert_eq!(m.n_bonds(), 0);
        assert_eq!(m.atom(0).element, Element::C);
    }

    #[test]
    fn benzene_ring() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.n_atoms(), 6);
        assert_eq!(m.n_bonds(), 6);
        assert!(m.atoms().iter().all(|a| a.aromatic && a.element == Element::C));
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        assert!((0..6).all(|i| m.degree(i) == 2));
        assert!(m.bond_between(0, 5).is_some());
    }

    #[test]
    fn branches() {
        let m = parse_smiles("C(C)(C)O").unwrap();
        assert_eq!(m.n_atoms(), 4);
        assert_eq!(m.n_bonds(), 3);
        assert_eq!(m.degree(0), 3);
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(parse_smiles("C1CC").unwrap_err(), SmilesError::UnclosedRingBond(1));
    }

    #[test]
    fn parenthesis_errors() {
        assert!(matches!(parse_smiles("C(C").unwrap_err(), SmilesError::UnbalancedParenthesis(_)));
        assert!(matches!(parse_smiles("CC)C").unwrap_err(), SmilesError::UnbalancedParenthesis(_)));
        assert!(matches!(parse_smiles("(C)").unwrap_err(), SmilesError::UnbalancedParenthesis(_)));
    }

    #[test]
    fn out_of_subset() {
        assert!(matches!(parse_smiles("C*").unwrap_err(), SmilesError::UnsupportedFeature(_)));
        assert!(matches!(parse_smiles("C$C").unwrap_err(), SmilesError::UnsupportedFeature(_)));
        assert!(matches!(parse_smiles("[C@TH1](F)(Cl)Br").unwrap_err(), SmilesError::UnsupportedFeature(_)));
        assert!(matches!(parse_smiles("CXC").unwrap_err(), SmilesError::UnknownSymbol(1)));
        assert!(matches!(parse_smiles("[Zz]").unwrap_err(), SmilesError::UnknownSymbol(1)));
        assert!(matches!(parse_smiles("C=").unwrap_err(), SmilesError::DanglingBond(1)));
        assert!(matches!(parse_smiles("C11").unwrap_err(), SmilesError::SelfBond(1)));
        assert!(matches!(parse_smiles("C12CC12").unwrap_err(), SmilesError::DuplicateBond(0, 2)));
        assert!(matches!(parse_smiles("[f]").unwrap_err(), SmilesError::UnknownSymbol(_)));
        assert_eq!(parse_smiles("  ").unwrap_err(), SmilesError::Empty);
        assert!(matches!(parse_smiles("C=1CC-1").unwrap_err(), SmilesError::ConflictingRingBond(1)));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[13CH3][NH3+].[O-2]").unwrap();
        assert_eq!(m.atom(0).explicit_h, Some(3));
        assert_eq!(m.atom(1).formal_charge, 1);
        assert_eq!(m.atom(1).explicit_h, Some(3));
        assert_eq!(m.atom(2).formal_charge, -2);
        assert!(m.is_multi_component());
        assert_eq!(m.n_components(), 2);
        let m = parse_smiles("[Fe+++]").unwrap();
        assert_eq!(m.atom(0).formal_charge, 3);
        let m = parse_smiles("[C@@H](F)(Cl)Br").unwrap();
        assert_eq!(m.atom(0).chirality, Chirality::Clockwise);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert!(m.atom(3).aromatic);
        assert_eq!(m.atom(3).explicit_h, Some(1));
        let m = parse_smiles("[se]1cccc1").unwrap();
        assert_eq!(m.atom(0).element, Element::SE);
        let m = parse_smiles("[CH3:7]C").unwrap();
        assert_eq!(m.n_atoms(), 2);
        let m = parse_smiles("[Sc]").unwrap();
        assert_eq!(m.atom(0).element.symbol(), "Sc");
    }

    #[test]
    fn bond_symbols_and_directions() {
        let m = parse_smiles("F/C=C\\F").unwrap();
        assert_eq!(m.bond(0).direction, BondDirection::Up);
        assert_eq!(m.bond(1).order, BondOrder::Double);
        assert_eq!(m.bond(2).direction, BondDirection::Down);
        let m = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        assert_eq!(m.bond_between(5, 6).map(|b| m.bond(b).order), Some(BondOrder::Single));
        let m = parse_smiles("C%12CCC%12").unwrap();
        assert_eq!(m.n_bonds(), 4);
        let m = parse_smiles("C=1CCC1").unwrap();
        assert_eq!(m.bond(3).order, BondOrder::Double);
    }

    #[test]
    fn writer_round_trips_structure() {
        let m = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let ranks: Vec<usize> = (0..m.n_atoms()).rev().collect();
        let text = write_smiles(&m, &ranks, |i| organic_text(m.atom(i)));
        let back = parse_smiles(&text).unwrap();
        assert_eq!(back.n_atoms(), m.n_atoms());
        assert_eq!(back.n_bonds(), m.n_bonds());
    }
}
