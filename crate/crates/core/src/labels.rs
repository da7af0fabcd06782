//! Self-supervised targets: functional-group bits per fragment, a hashed
//! linear-path fingerprint per molecule and the scaffold classes.
//!
//! Functional groups are small pattern graphs matched by backtracking
//! (monomorphism, pattern atoms visited in BFS order, candidates drawn from
//! the neighbors of already-mapped atoms, degree pruning). Hydrogen and
//! charge constraints read the atom in the full molecule, so a fragment can
//! only match what the whole molecule matches.
//!
//! Default library (`R` any carbon, hydrogens counted on the atom):
//!
//! ```text
//! hydroxyl          R-O(H>=1)
//! carbonyl          C=O
//! carboxyl          C(=O)-O(H>=1)
//! ester             C(=O)-O-R
//! ether             R-O(H0)-R
//! primary_amine     R-N(H2)
//! secondary_amine   R-N(H1)-R
//! tertiary_amine    R-N(H0)(-R)-R
//! amide             C(=O)-N
//! nitro             [N+](=O)-[O-]
//! nitrile           C#N
//! halide            R-X            X in F Cl Br I
//! thiol             R-S(H>=1)
//! sulfonyl          O=S=O
//! aldehyde          R-C(H1)=O
//! ketone            R-C(H0)(=O)-R
//! ```
//!
//! All pattern atoms are non-aromatic and pattern bonds never match
//! aromatic bonds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::perception::{scaffold_descriptors, PerceivedMolecule};
use crate::smiles::BondOrder;
use crate::vocab::Decomposition;

/// Ring-count classes are `0..=MAX_RING_CLASS`.
pub const MAX_RING_CLASS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomPattern {
    /// Allowed atomic numbers; empty means any heavy atom.
    pub elements: Vec<u8>,
    pub aromatic: Option<bool>,
    /// Inclusive range of total hydrogens.
    pub h: (u32, u32),
    pub charge: Option<i8>,
}

impl AtomPattern {
    fn new(elements: &[u8]) -> Self {
        AtomPattern {
            elements: elements.to_vec(),
            aromatic: Some(false),
            h: (0, u32::MAX),
            charge: None,
        }
    }

    fn any_aromaticity(mut self) -> Self {
        self.aromatic = None;
        self
    }

    fn h(mut self, lo: u32, hi: u32) -> Self {
        self.h = (lo, hi);
        self
    }

    fn charge(mut self, q: i8) -> Self {
        self.charge = Some(q);
        self
    }

    fn accepts(&self, pm: &PerceivedMolecule, i: usize) -> bool {
        let a = pm.base.atom(i);
        (self.elements.is_empty() || self.elements.contains(&a.atomic_number()))
            && self.aromatic.is_none_or(|ar| ar == a.aromatic)
            && (self.h.0..=self.h.1).contains(&pm.total_h(i))
            && self.charge.is_none_or(|q| q == a.formal_charge)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub name: String,
    pub atoms: Vec<AtomPattern>,
    /// `(i, j, order)`; `None` matches any order.
    pub bonds: Vec<(usize, usize, Option<BondOrder>)>,
}

impl Pattern {
    fn new(name: &str, atoms: Vec<AtomPattern>, bonds: &[(usize, usize, BondOrder)]) -> Self {
        Pattern {
            name: name.to_string(),
            atoms,
            bonds: bonds.iter().map(|&(i, j, o)| (i, j, Some(o))).collect(),
        }
    }

    fn degree(&self, i: usize) -> usize {
        self.bonds.iter().filter(|&&(a, b, _)| a == i || b == i).count()
    }

    fn bond(&self, i: usize, j: usize) -> Option<Option<BondOrder>> {
        self.bonds.iter().find(|&&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)).map(|&(_, _, o)| o)
    }

    /// BFS order from atom 0 with, for each later atom, one earlier neighbor.
    fn order(&self) -> Vec<(usize, Option<usize>)> {
        let mut out = vec![(0, None)];
        let mut seen = vec![false; self.atoms.len()];
        seen[0] = true;
        let mut head = 0;
        while head < out.len() {
            let u = out[head].0;
            head += 1;
            for &(a, b, _) in &self.bonds {
                let v = if a == u { b } else if b == u { a } else { continue };
                if !seen[v] {
                    seen[v] = true;
                    out.push((v, Some(u)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalGroupSet {
    patterns: Vec<Pattern>,
}

impl FunctionalGroupSet {
    /// Custom set; patterns must be connected, at most 8 atoms, uniquely named.
    pub fn new(patterns: Vec<Pattern>) -> Result<Self, String> {
        for (k, p) in patterns.iter().enumerate() {
            if p.atoms.is_empty() || p.atoms.len() > 8 {
                return Err(format!("pattern {} must have 1..=8 atoms", p.name));
            }
            if p.order().len() != p.atoms.len() {
                return Err(format!("pattern {} is disconnected", p.name));
            }
            if patterns[..k].iter().any(|q| q.name == p.name) {
                return Err(format!("duplicate pattern name {}", p.name));
            }
        }
        Ok(FunctionalGroupSet { patterns })
    }

    pub fn default_library() -> Self {
        use BondOrder::{Double, Single, Triple};
        let c = || AtomPattern::new(&[6]);
        let r = || AtomPattern::new(&[6]).any_aromaticity();
        let o = || AtomPattern::new(&[8]);
        let n = || AtomPattern::new(&[7]);
        let patterns = vec![
            Pattern::new("hydroxyl", vec![r(), o().h(1, 4).charge(0)], &[(0, 1, Single)]),
            Pattern::new("carbonyl", vec![c(), o()], &[(0, 1, Double)]),
            Pattern::new("carboxyl", vec![c(), o(), o().h(1, 4)], &[(0, 1, Double), (0, 2, Single)]),
            Pattern::new("ester", vec![c(), o(), o().h(0, 0), r()], &[(0, 1, Double), (0, 2, Single), (2, 3, Single)]),
            Pattern::new("ether", vec![r(), o().h(0, 0).charge(0), r()], &[(0, 1, Single), (1, 2, Single)]),
            Pattern::new("primary_amine", vec![r(), n().h(2, 2).charge(0)], &[(0, 1, Single)]),
            Pattern::new("secondary_amine", vec![r(), n().h(1, 1).charge(0), r()], &[(0, 1, Single), (1, 2, Single)]),
            Pattern::new(
                "tertiary_amine",
                vec![n().h(0, 0).charge(0), r(), r(), r()],
                &[(0, 1, Single), (0, 2, Single), (0, 3, Single)],
            ),
            Pattern::new("amide", vec![c(), o(), n()], &[(0, 1, Double), (0, 2, Single)]),
            Pattern::new("nitro", vec![n().charge(1), o(), o().charge(-1)], &[(0, 1, Double), (0, 2, Single)]),
            Pattern::new("nitrile", vec![c(), n()], &[(0, 1, Triple)]),
            Pattern::new("halide", vec![r(), AtomPattern::new(&[9, 17, 35, 53])], &[(0, 1, Single)]),
            Pattern::new("thiol", vec![r(), AtomPattern::new(&[16]).h(1, 4)], &[(0, 1, Single)]),
            Pattern::new("sulfonyl", vec![AtomPattern::new(&[16]), o(), o()], &[(0, 1, Double), (0, 2, Double)]),
            Pattern::new("aldehyde", vec![c().h(1, 1), o(), r()], &[(0, 1, Double), (0, 2, Single)]),
            Pattern::new("ketone", vec![c().h(0, 0), o(), r(), r()], &[(0, 1, Double), (0, 2, Single), (0, 3, Single)]),
        ];
        FunctionalGroupSet::new(patterns).expect("default library is well formed")
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.name.as_str())
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }
}

/// Whether `p` embeds into the subgraph of `pm` induced by `allowed`.
fn embeds(pm: &PerceivedMolecule, allowed: &[bool], p: &Pattern) -> bool {
    let m = &pm.base;
    let order = p.order();
    let in_degree: Vec<usize> = (0..m.n_atoms()).map(|i| m.neighbors(i).iter().filter(|&&(v, _)| allowed[v]).count()).collect();
    let fits = |pi: usize, t: usize| allowed[t] && in_degree[t] >= p.degree(pi) && p.atoms[pi].accepts(pm, t);
    let mut map = vec![usize::MAX; p.atoms.len()];
    let mut used = vec![false; m.n_atoms()];

    fn extend(
        depth: usize,
        order: &[(usize, Option<usize>)],
        p: &Pattern,
        pm: &PerceivedMolecule,
        map: &mut [usize],
        used: &mut [bool],
        fits: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        if depth == order.len() {
            return true;
        }
        let (pi, parent) = order[depth];
        let m = &pm.base;
        let candidates: Vec<usize> = match parent {
            Some(pp) => m.neighbors(map[pp]).iter().map(|&(v, _)| v).collect(),
            None => (0..m.n_atoms()).collect(),
        };
        for t in candidates {
            if used[t] || !fits(pi, t) {
                continue;
            }
            // every pattern bond to an already-mapped atom must be present
            let consistent = order[..depth].iter().all(|&(pj, _)| match p.bond(pi, pj) {
                None => true,
                Some(want) => m.bond_between(t, map[pj]).is_some_and(|b| want.is_none_or(|o| o == m.bond(b).order)),
            });
            if !consistent {
                continue;
            }
            map[pi] = t;
            used[t] = true;
            if extend(depth + 1, order, p, pm, map, used, fits) {
                return true;
            }
            used[t] = false;
            map[pi] = usize::MAX;
        }
        false
    }

    extend(0, &order, p, pm, &mut map, &mut used, &fits)
}

/// One bit per pattern for the fragment induced by `atoms`.
pub fn match_groups(pm: &PerceivedMolecule, atoms: &[usize], fgs: &FunctionalGroupSet) -> Vec<u8> {
    let mut allowed = vec![false; pm.base.n_atoms()];
    for &a in atoms {
        allowed[a] = true;
    }
    fgs.patterns.iter().map(|p| embeds(pm, &allowed, p) as u8).collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Longest path length, in bonds, hashed into the fingerprint.
pub const MAX_PATH_BONDS: usize = 7;

/// Hashed linear-path fingerprint of `d` bits.
///
/// Every simple path of 1 to 7 bonds is encoded as the token sequence
/// `atom, bond, atom, ..., atom` (atom token `2 * Z + aromatic`, bond token
/// the order code), oriented to the lexicographically smaller of its two
/// directions, serialized as little-endian `u16`s and hashed with FNV-1a;
/// the hash modulo `d` selects the bit.
pub fn topo_fingerprint(pm: &PerceivedMolecule, d: usize) -> Vec<u8> {
    assert!(d.is_power_of_two() && (64..=4096).contains(&d), "fingerprint length must be a power of two in 64..=4096");
    let m = &pm.base;
    let mut bits = vec![0u8; d];
    let atom_token = |i: usize| 2 * m.atom(i).atomic_number() as u16 + m.atom(i).aromatic as u16;
    let mut path = Vec::with_capacity(MAX_PATH_BONDS + 1);
    let mut bonds = Vec::with_capacity(MAX_PATH_BONDS);
    let mut on_path = vec![false; m.n_atoms()];

    fn walk(
        m: &crate::smiles::Molecule,
        path: &mut Vec<usize>,
        bonds: &mut Vec<usize>,
        on_path: &mut [bool],
        emit: &mut dyn FnMut(&[usize], &[usize]),
    ) {
        let last = *path.last().unwrap();
        for &(v, b) in m.neighbors(last) {
            if on_path[v] {
                continue;
            }
            path.push(v);
            bonds.push(b);
            on_path[v] = true;
            emit(path, bonds);
            if bonds.len() < MAX_PATH_BONDS {
                walk(m, path, bonds, on_path, emit);
            }
            on_path[v] = false;
            path.pop();
            bonds.pop();
        }
    }

    let mut emit = |atoms: &[usize], bs: &[usize]| {
        // each path is seen from both ends; hash it once
        if atoms[0] > *atoms.last().unwrap() {
            return;
        }
        let mut fwd = Vec::with_capacity(atoms.len() * 2);
        for (k, &a) in atoms.iter().enumerate() {
            fwd.push(atom_token(a));
            if k < bs.len() {
                fwd.push(m.bond(bs[k]).order.code() as u16);
            }
        }
        let rev: Vec<u16> = fwd.iter().rev().copied().collect();
        let tokens = fwd.min(rev);
        let bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
        bits[(fnv1a64(&bytes) % d as u64) as usize] = 1;
    };
    for start in 0..m.n_atoms() {
        path.push(start);
        on_path[start] = true;
        walk(m, &mut path, &mut bonds, &mut on_path, &mut emit);
        on_path[start] = false;
        path.pop();
    }
    bits
}

/// Scaffold classification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldLabels {
    pub ring_class: usize,
    pub aromatic_class: usize,
    /// fused, heterocyclic, bridged
    pub flags: [u8; 3],
}

pub fn scaffold_targets(pm: &PerceivedMolecule) -> ScaffoldLabels {
    let s = scaffold_descriptors(pm);
    ScaffoldLabels {
        ring_class: s.ring_count.min(MAX_RING_CLASS),
        aromatic_class: s.aromatic_ring_count.min(MAX_RING_CLASS),
        flags: [s.fused as u8, s.heterocyclic as u8, s.bridged as u8],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainTargets {
    /// One row of functional-group bits per fragment.
    pub frag_fg: Vec<Vec<u8>>,
    pub topo_fp: Vec<u8>,
    pub scaffold: ScaffoldLabels,
}

pub fn compute_targets(pm: &PerceivedMolecule, d: &Decomposition, fgs: &FunctionalGroupSet, fp_bits: usize) -> PretrainTargets {
    PretrainTargets {
        frag_fg: d.fragments.iter().map(|f| match_groups(pm, f, fgs)).collect(),
        topo_fp: topo_fingerprint(pm, fp_bits),
        scaffold: scaffold_targets(pm),
    }
}

/// Bits as lowercase hex, bit `i` being bit `i % 4` of nibble `i / 4`.
pub fn bits_to_hex(bits: &[u8]) -> String {
    let mut s = String::with_capacity(bits.len().div_ceil(4));
    for chunk in bits.chunks(4) {
        let nibble = chunk.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | ((b & 1) << k));
        let _ = write!(s, "{nibble:x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::perceive;
    use crate::smiles::parse_smiles;

    fn pm(s: &str) -> PerceivedMolecule {
        perceive(&parse_smiles(s).unwrap()).unwrap()
    }

    fn groups(s: &str) -> Vec<String> {
        let p = pm(s);
        let all: Vec<usize> = (0..p.base.n_atoms()).collect();
        let fgs = FunctionalGroupSet::default_library();
        let bits = match_groups(&p, &all, &fgs);
        fgs.names().zip(bits).filter(|(_, b)| *b == 1).map(|(n, _)| n.to_string()).collect()
    }

    #[test]
    fn library_shape() {
        let fgs = FunctionalGroupSet::default_library();
        assert_eq!(fgs.len(), 16);
    }

    #[test]
    fn group_examples() {
        assert!(groups("CC(=O)O").contains(&"carboxyl".to_string()));
        assert!(groups("CC").is_empty());
        let g = groups("CCO");
        assert!(g.contains(&"hydroxyl".to_string()));
        assert!(!g.contains(&"ether".to_string()));
        assert_eq!(groups("CC(=O)C"), vec!["carbonyl", "ketone"]);
        assert_eq!(groups("CC=O"), vec!["carbonyl", "aldehyde"]);
        assert_eq!(groups("C#N"), vec!["nitrile"]);
        assert_eq!(groups("C[N+](=O)[O-]"), vec!["nitro"]);
        assert_eq!(groups("CN(C)C"), vec!["tertiary_amine"]);
        assert_eq!(groups("CNC"), vec!["secondary_amine"]);
        assert_eq!(groups("CN"), vec!["primary_amine"]);
        assert_eq!(groups("CS(=O)(=O)C"), vec!["sulfonyl"]);
        assert_eq!(groups("CS"), vec!["thiol"]);
        assert_eq!(groups("ClC"), vec!["halide"]);
        assert!(groups("CC(=O)OC").contains(&"ester".to_string()));
        assert!(groups("CC(=O)N").contains(&"amide".to_string()));
        assert_eq!(groups("c1ccccc1"), Vec::<String>::new());
        assert_eq!(groups("c1ccccc1O"), vec!["hydroxyl"]);
    }

    #[test]
    fn fragment_bits_are_subset() {
        let p = pm("CC(=O)OCC");
        let fgs = FunctionalGroupSet::default_library();
        let whole = match_groups(&p, &[0, 1, 2, 3, 4, 5], &fgs);
        let part = match_groups(&p, &[1, 2, 3], &fgs);
        assert!(part.iter().zip(&whole).all(|(a, b)| a <= b));
        // C(=O)O without the ethyl carbon: no ester, and O has no H so no carboxyl
        assert_eq!(part.iter().sum::<u8>(), 1);
    }

    #[test]
    fn fingerprint_examples() {
        assert!(topo_fingerprint(&pm("C"), 512).iter().all(|&b| b == 0));
        let fp = topo_fingerprint(&pm("CCO"), 512);
        assert!(fp.iter().map(|&b| b as u32).sum::<u32>() >= 2);
        assert_eq!(topo_fingerprint(&pm("OCC"), 512), fp);
        assert_eq!(topo_fingerprint(&pm("c1ccccc1O"), 2048), topo_fingerprint(&pm("Oc1ccccc1"), 2048));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn scaffold_classes_clamp() {
        let s = scaffold_targets(&pm("c1ccccc1"));
        assert_eq!((s.ring_class, s.aromatic_class, s.flags), (1, 1, [0, 0, 0]));
        // ten separate cyclopropyl rings
        let s = scaffold_targets(&pm(&"C1CC1".repeat(10)));
        assert_eq!(s.ring_class, 8);
    }

    #[test]
    fn hex_encoding() {
        assert_eq!(bits_to_hex(&[1, 0, 0, 0, 0, 1, 0, 1]), "1a");
    }
}
