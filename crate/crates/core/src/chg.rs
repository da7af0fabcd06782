//! The compositional hierarchical graph: atom, bond, fragment and graph
//! nodes joined by six featureless edge sets, with 15 features per node.
//!
//! Node order is atoms, then bonds, then fragments, then the graph node.
//! Edge sets:
//!
//! | set  | joins                                                   |
//! |------|---------------------------------------------------------|
//! | E_a  | atoms sharing a bond                                    |
//! | E_b  | bonds sharing an atom                                   |
//! | E_f  | fragments joined by at least one bond                   |
//! | E_af | each atom and its fragment                              |
//! | E_bf | each intra-fragment bond and its fragment               |
//! | E_fg | each fragment and the graph node                        |
//!
//! A bond whose ends lie in different fragments belongs to no fragment.
//!
//! Text dump (one graph):
//!
//! ```text
//! #chg v1 atoms=<na> bonds=<nb> frags=<nf> graph=<0|1> variant=<name>
//! node <index> <atom|bond|frag|graph> <f0> ... <f14>
//! edge <a|b|f|af|bf|fg> <u> <v>
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{Hybridization, PerceivedMolecule};
use crate::smiles::{BondDirection, BondOrder, Chirality, Molecule};
use crate::vocab::Decomposition;

pub const FEATURE_DIM: usize = 15;

pub type Features = [f64; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChgError {
    #[error("decomposition does not partition the molecule: {0}")]
    PartitionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Atom,
    Bond,
    Fragment,
    Graph,
}

impl NodeType {
    pub fn tag(self) -> &'static str {
        match self {
            NodeType::Atom => "atom",
            NodeType::Bond => "bond",
            NodeType::Fragment => "frag",
            NodeType::Graph => "graph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeSet {
    A,
    B,
    F,
    AF,
    BF,
    FG,
}

impl EdgeSet {
    pub const ALL: [EdgeSet; 6] = [EdgeSet::A, EdgeSet::B, EdgeSet::F, EdgeSet::AF, EdgeSet::BF, EdgeSet::FG];

    pub fn tag(self) -> &'static str {
        match self {
            EdgeSet::A => "a",
            EdgeSet::B => "b",
            EdgeSet::F => "f",
            EdgeSet::AF => "af",
            EdgeSet::BF => "bf",
            EdgeSet::FG => "fg",
        }
    }
}

/// Which parts of the hierarchy are materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum GraphVariant {
    /// Atoms and E_a only.
    AtomGraph,
    /// Atoms, fragments and the graph node; no bond nodes, E_b or E_bf.
    Hierarchical,
    /// Everything.
    #[default]
    Compositional,
}

impl GraphVariant {
    pub const ALL: [GraphVariant; 3] = [GraphVariant::AtomGraph, GraphVariant::Hierarchical, GraphVariant::Compositional];

    pub fn name(self) -> &'static str {
        match self {
            GraphVariant::AtomGraph => "atom",
            GraphVariant::Hierarchical => "hierarchical",
            GraphVariant::Compositional => "compositional",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        GraphVariant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn has_bonds(self) -> bool {
        self == GraphVariant::Compositional
    }

    pub fn has_hierarchy(self) -> bool {
        self != GraphVariant::AtomGraph
    }

    pub fn edge_sets(self) -> &'static [EdgeSet] {
        match self {
            GraphVariant::AtomGraph => &[EdgeSet::A],
            GraphVariant::Hierarchical => &[EdgeSet::A, EdgeSet::F, EdgeSet::AF, EdgeSet::FG],
            GraphVariant::Compositional => &EdgeSet::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CHGraph {
    pub variant: GraphVariant,
    pub n_atoms: usize,
    pub n_bonds: usize,
    pub n_frags: usize,
    /// 1 when the graph node exists, else 0.
    pub n_graph: usize,
    /// Edges as global node-index pairs `(u, v)` with `u < v`, sorted.
    pub e_a: Vec<(u32, u32)>,
    pub e_b: Vec<(u32, u32)>,
    pub e_f: Vec<(u32, u32)>,
    pub e_af: Vec<(u32, u32)>,
    pub e_bf: Vec<(u32, u32)>,
    pub e_fg: Vec<(u32, u32)>,
    pub features: Vec<Features>,
    /// Local atom indices per fragment.
    pub frag_atom_members: Vec<Vec<usize>>,
    /// Local bond indices per fragment (intra-fragment bonds only).
    pub frag_bond_members: Vec<Vec<usize>>,
}

impl CHGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_atoms + self.n_bonds + self.n_frags + self.n_graph
    }

    pub fn atom_offset(&self) -> usize {
        0
    }

    pub fn bond_offset(&self) -> usize {
        self.n_atoms
    }

    pub fn frag_offset(&self) -> usize {
        self.n_atoms + self.n_bonds
    }

    pub fn graph_node(&self) -> Option<usize> {
        (self.n_graph == 1).then(|| self.n_atoms + self.n_bonds + self.n_frags)
    }

    pub fn node_range(&self, t: NodeType) -> std::ops::Range<usize> {
        let start = match t {
            NodeType::Atom => 0,
            NodeType::Bond => self.bond_offset(),
            NodeType::Fragment => self.frag_offset(),
            NodeType::Graph => self.frag_offset() + self.n_frags,
        };
        let len = match t {
            NodeType::Atom => self.n_atoms,
            NodeType::Bond => self.n_bonds,
            NodeType::Fragment => self.n_frags,
            NodeType::Graph => self.n_graph,
        };
        start..start + len
    }

    pub fn node_type(&self, node: usize) -> NodeType {
        if node < self.bond_offset() {
            NodeType::Atom
        } else if node < self.frag_offset() {
            NodeType::Bond
        } else if node < self.frag_offset() + self.n_frags {
            NodeType::Fragment
        } else {
            NodeType::Graph
        }
    }

    pub fn edges(&self, set: EdgeSet) -> &[(u32, u32)] {
        match set {
            EdgeSet::A => &self.e_a,
            EdgeSet::B => &self.e_b,
            EdgeSet::F => &self.e_f,
            EdgeSet::AF => &self.e_af,
            EdgeSet::BF => &self.e_bf,
            EdgeSet::FG => &self.e_fg,
        }
    }

    pub fn n_edges(&self) -> usize {
        EdgeSet::ALL.iter().map(|&s| self.edges(s).len()).sum()
    }

    /// Union of all edge sets.
    pub fn all_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        EdgeSet::ALL.into_iter().flat_map(move |s| self.edges(s).iter().copied())
    }

    /// Feature rows of one node type, sorted, for multiset comparisons.
    pub fn sorted_features(&self, t: NodeType) -> Vec<Features> {
        let mut rows: Vec<Features> = self.features[self.node_range(t)].to_vec();
        rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        rows
    }

    pub fn dump(&self) -> String {
        let mut s = format!(
            "#chg v1 atoms={} bonds={} frags={} graph={} variant={}\n",
            self.n_atoms,
            self.n_bonds,
            self.n_frags,
            self.n_graph,
            self.variant.name()
        );
        for (i, row) in self.features.iter().enumerate() {
            let _ = write!(s, "node {i} {}", self.node_type(i).tag());
            for v in row {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        for set in EdgeSet::ALL {
            for (u, v) in self.edges(set) {
                let _ = writeln!(s, "edge {} {u} {v}", set.tag());
            }
        }
        s
    }
}

/// Line graph of the molecule: bond pairs sharing an atom, `(i, j)` with `i < j`, sorted.
pub fn build_bond_graph(m: &Molecule) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..m.n_atoms() {
        let inc = m.neighbors(a);
        for x in 0..inc.len() {
            for y in x + 1..inc.len() {
                let (b1, b2) = (inc[x].1, inc[y].1);
                edges.push((b1.min(b2), b1.max(b2)));
            }
        }
    }
    edges.sort_unstable();
    edges
}

pub fn build_chg(pm: &PerceivedMolecule, d: &Decomposition) -> Result<CHGraph, ChgError> {
    build_chg_variant(pm, d, GraphVariant::Compositional)
}

pub fn build_chg_variant(pm: &PerceivedMolecule, d: &Decomposition, variant: GraphVariant) -> Result<CHGraph, ChgError> {
    let m = &pm.base;
    check_partition(m, d)?;
    let na = m.n_atoms();
    let nb = if variant.has_bonds() { m.n_bonds() } else { 0 };
    let (nf, ng) = if variant.has_hierarchy() { (d.len(), 1) } else { (0, 0) };
    let bond_off = na;
    let frag_off = na + nb;
    let g = (frag_off + nf) as u32;

    let mut e_a: Vec<(u32, u32)> = m.bonds().iter().map(|b| (b.begin.min(b.end) as u32, b.begin.max(b.end) as u32)).collect();
    e_a.sort_unstable();

    let mut frag_bond_members = vec![Vec::new(); d.len()];
    let mut e_f = Vec::new();
    for b in m.bonds() {
        let (fa, fb) = (d.frag_of_atom[b.begin], d.frag_of_atom[b.end]);
        if fa == fb {
            frag_bond_members[fa].push(b.index);
        } else {
            e_f.push(((frag_off + fa.min(fb)) as u32, (frag_off + fa.max(fb)) as u32));
        }
    }
    e_f.sort_unstable();
    e_f.dedup();

    let mut features: Vec<Features> = (0..na).map(|i| atom_features(pm, i)).collect();
    let (mut e_b, mut e_bf, mut e_af, mut e_fg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if variant.has_bonds() {
        e_b = build_bond_graph(m).into_iter().map(|(x, y)| ((bond_off + x) as u32, (bond_off + y) as u32)).collect();
        features.extend((0..m.n_bonds()).map(|b| bond_features(pm, b)));
        for (f, bonds) in frag_bond_members.iter().enumerate() {
            e_bf.extend(bonds.iter().map(|&b| ((bond_off + b) as u32, (frag_off + f) as u32)));
        }
        e_bf.sort_unstable();
    }
    if variant.has_hierarchy() {
        e_af = (0..na).map(|a| (a as u32, (frag_off + d.frag_of_atom[a]) as u32)).collect();
        e_fg = (0..nf).map(|f| ((frag_off + f) as u32, g)).collect();
        features.extend(d.fragments.iter().map(|f| fragment_features(pm, f)));
        features.push(graph_features(m, d, &frag_bond_members));
    } else {
        e_f.clear();
    }

    Ok(CHGraph {
        variant,
        n_atoms: na,
        n_bonds: nb,
        n_frags: nf,
        n_graph: ng,
        e_a,
        e_b,
        e_f,
        e_af,
        e_bf,
        e_fg,
        features,
        frag_atom_members: if variant.has_hierarchy() { d.fragments.clone() } else { Vec::new() },
        frag_bond_members: if variant.has_hierarchy() { frag_bond_members } else { Vec::new() },
    })
}

fn check_partition(m: &Molecule, d: &Decomposition) -> Result<(), ChgError> {
    let n = m.n_atoms();
    if d.frag_of_atom.len() != n {
        return Err(ChgError::PartitionMismatch(format!("{} atoms, decomposition covers {}", n, d.frag_of_atom.len())));
    }
    let mut seen = vec![false; n];
    for (f, members) in d.fragments.iter().enumerate() {
        if members.is_empty() {
            return Err(ChgError::PartitionMismatch(format!("fragment {f} is empty")));
        }
        for &a in members {
            if a >= n || seen[a] || d.frag_of_atom[a] != f {
                return Err(ChgError::PartitionMismatch(format!("atom {a} misassigned")));
            }
            seen[a] = true;
        }
    }
    if let Some(a) = seen.iter().position(|s| !s) {
        return Err(ChgError::PartitionMismatch(format!("atom {a} not covered")));
    }
    Ok(())
}

pub fn atom_features(pm: &PerceivedMolecule, i: usize) -> Features {
    let a = pm.base.atom(i);
    let mut f = [0.0; FEATURE_DIM];
    f[0] = a.atomic_number() as f64;
    f[1] = pm.degree[i] as f64;
    f[2] = a.formal_charge as f64;
    f[3] = pm.radical_electrons[i] as f64;
    f[4 + pm.hybridization[i].slot()] = 1.0;
    f[11] = a.element.mass() / 100.0;
    f[12] = pm.total_h(i) as f64;
    f[13] = (a.chirality != Chirality::None) as u8 as f64;
    f[14] = a.chirality.code() as f64;
    f
}

/// Stereo one-hot slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondStereo {
    None,
    Any,
    Z,
    E,
    Cis,
    Trans,
    Other,
}

impl BondStereo {
    pub fn slot(self) -> usize {
        self as usize
    }
}

/// Double-bond stereo from `/` and `\` marks on neighboring bonds.
///
/// Each marked substituent is placed above or below its double-bond atom.
/// Same side reads as Z/cis, opposite as E/trans. Z/E is used when both
/// double-bond atoms carry exactly one heavy substituent, cis/trans
/// otherwise. Unmarked or half-marked bonds are `None`. The `Any` and
/// `Other` slots are never produced from SMILES.
pub fn bond_stereo(m: &Molecule, bond: usize) -> BondStereo {
    let b = m.bond(bond);
    if b.order != BondOrder::Double {
        return BondStereo::None;
    }
    let side = |atom: usize| -> Option<bool> {
        m.neighbors(atom).iter().filter(|&&(_, nb)| nb != bond).find_map(|&(x, nb)| {
            let sb = m.bond(nb);
            let up = match sb.direction {
                BondDirection::None => return None,
                BondDirection::Up => true,
                BondDirection::Down => false,
            };
            // `x/atom` puts x below atom; `atom/x` puts x above.
            Some(if sb.begin == x { !up } else { up })
        })
    };
    let (Some(s1), Some(s2)) = (side(b.begin), side(b.end)) else {
        return BondStereo::None;
    };
    let simple = m.degree(b.begin) == 2 && m.degree(b.end) == 2;
    match (s1 == s2, simple) {
        (true, true) => BondStereo::Z,
        (false, true) => BondStereo::E,
        (true, false) => BondStereo::Cis,
        (false, false) => BondStereo::Trans,
    }
}

pub fn bond_features(pm: &PerceivedMolecule, i: usize) -> Features {
    let m = &pm.base;
    let b = m.bond(i);
    let (lo, hi) = (b.begin.min(b.end), b.begin.max(b.end));
    let mut f = [0.0; FEATURE_DIM];
    f[0] = 1.0;
    match b.order {
        BondOrder::Single => f[1] = 1.0,
        BondOrder::Double => f[2] = 1.0,
        BondOrder::Triple => f[3] = 1.0,
        BondOrder::Aromatic => {}
    }
    f[4] = (m.atom(lo).element != m.atom(hi).element) as u8 as f64;
    f[5] = b.direction.code() as f64;
    // unsigned: a signed difference would depend on atom numbering
    f[6] = (m.atom(hi).formal_charge as i32 - m.atom(lo).formal_charge as i32).abs() as f64;
    let unsaturated = |a: usize| matches!(pm.hybridization[a], Hybridization::SP | Hybridization::SP2);
    let conjugated = b.order == BondOrder::Aromatic || (b.order == BondOrder::Single && unsaturated(lo) && unsaturated(hi));
    f[7] = conjugated as u8 as f64;
    f[8 + bond_stereo(m, i).slot()] = 1.0;
    f
}

pub fn fragment_features(pm: &PerceivedMolecule, atoms: &[usize]) -> Features {
    let m = &pm.base;
    let inside = |a: usize| atoms.contains(&a);
    let mut f = [0.0; FEATURE_DIM];
    f[0] = atoms.len() as f64;
    let mut in_degree = 0usize;
    for b in m.bonds().iter().filter(|b| inside(b.begin) && inside(b.end)) {
        f[1] += 1.0;
        in_degree += 2;
        match b.order {
            BondOrder::Single => f[7] += 1.0,
            BondOrder::Double => f[8] += 1.0,
            BondOrder::Triple => f[9] += 1.0,
            BondOrder::Aromatic => {}
        }
    }
    // summed in sorted order so the rounding does not depend on atom numbering
    let mut masses: Vec<f64> = atoms.iter().map(|&a| m.atom(a).element.mass()).collect();
    masses.sort_by(f64::total_cmp);
    let mass: f64 = masses.iter().sum();
    for &a in atoms {
        let atom = m.atom(a);
        match atom.atomic_number() {
            6 => f[3] += 1.0,
            7 => f[4] += 1.0,
            8 => f[5] += 1.0,
            _ => {}
        }
        if !matches!(atom.atomic_number(), 1 | 6) {
            f[2] += 1.0;
        }
        if atom.element.is_halogen() {
            f[6] += 1.0;
        }
        f[12] += atom.formal_charge as f64;
        f[13] += pm.total_h(a) as f64;
        f[14] += pm.bond_order_sum(a) + pm.total_h(a) as f64;
    }
    let n = atoms.len().max(1) as f64;
    f[10] = mass / n / 100.0;
    f[11] = in_degree as f64 / n;
    f
}

/// Mean, max, min and population variance, independent of input order.
fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, max, min, var)
}

pub fn graph_features(m: &Molecule, d: &Decomposition, frag_bond_members: &[Vec<usize>]) -> Features {
    let sizes: Vec<f64> = d.fragments.iter().map(|f| f.len() as f64).collect();
    let bonds: Vec<f64> = frag_bond_members.iter().map(|b| b.len() as f64).collect();
    let (a_mean, a_max, a_min, a_var) = stats(&sizes);
    let (b_mean, b_max, b_min, b_var) = stats(&bonds);
    let count = |lo: usize, hi: usize| d.fragments.iter().filter(|f| f.len() >= lo && f.len() <= hi).count() as f64;
    [
        m.n_atoms() as f64,
        m.n_bonds() as f64,
        d.len() as f64,
        a_mean,
        a_max,
        a_min,
        b_mean,
        b_max,
        b_min,
        count(2, 3),
        count(4, 8),
        count(9, usize::MAX),
        count(1, 1),
        a_var,
        b_var,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::perceive;
    use crate::smiles::parse_smiles;

    fn pm(s: &str) -> PerceivedMolecule {
        perceive(&parse_smiles(s).unwrap()).unwrap()
    }

    #[test]
    fn bond_graph_examples() {
        assert_eq!(build_bond_graph(&parse_smiles("CCC").unwrap()), vec![(0, 1)]);
        assert!(build_bond_graph(&parse_smiles("C").unwrap()).is_empty());
        assert_eq!(build_bond_graph(&parse_smiles("c1ccccc1").unwrap()).len(), 6);
    }

    #[test]
    fn ethanol_counts() {
        let p = pm("CCO");
        let one = Decomposition::components(&p.base);
        let g = build_chg(&p, &one).unwrap();
        assert_eq!(g.n_nodes(), 7);
        assert_eq!(g.n_edges(), 9);
        assert_eq!((g.e_a.len(), g.e_b.len(), g.e_f.len(), g.e_af.len(), g.e_bf.len(), g.e_fg.len()), (2, 1, 0, 3, 2, 1));

        let three = Decomposition::singletons(&p.base);
        let g = build_chg(&p, &three).unwrap();
        assert_eq!(g.e_f.len(), 2);
        assert!(g.e_bf.is_empty());
        assert_eq!(g.features[g.graph_node().unwrap()][12], 3.0);
    }

    #[test]
    fn methane_features() {
        let p = pm("C");
        let g = build_chg(&p, &Decomposition::singletons(&p.base)).unwrap();
        assert_eq!((g.n_atoms, g.n_bonds, g.n_frags, g.n_graph), (1, 0, 1, 1));
        assert_eq!(g.features[0], [6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.12011, 4.0, 0.0, 0.0]);
        assert_eq!(g.features[1], [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.12011, 0.0, 0.0, 4.0, 4.0]);
        assert_eq!(g.features[2], [1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bond_feature_examples() {
        let p = pm("CC");
        assert_eq!(bond_features(&p, 0), [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let f = bond_features(&pm("c1ccccc1"), 0);
        assert_eq!(&f[1..4], &[0.0, 0.0, 0.0]);
        assert_eq!(f[7], 1.0);
        assert_eq!(bond_features(&pm("CCO"), 1)[4], 1.0);
        assert_eq!(bond_features(&pm("C=CC=C"), 1)[7], 1.0);
        assert_eq!(bond_features(&pm("[NH3+]C(=O)[O-]"), 2)[6], 1.0);
        assert_eq!(bond_features(&pm("[O-]C(=O)[NH3+]"), 0)[6], 1.0);
        assert_eq!(bond_features(&pm("C[N+](=O)[O-]"), 2)[6], 2.0);
    }

    #[test]
    fn stereo_from_marks() {
        let b = |s: &str| bond_stereo(&parse_smiles(s).unwrap(), 1);
        assert_eq!(b("F/C=C/F"), BondStereo::E);
        assert_eq!(b("F/C=C\\F"), BondStereo::Z);
        assert_eq!(b("F\\C=C\\F"), BondStereo::E);
        assert_eq!(b("FC=CF"), BondStereo::None);
        assert_eq!(b("F/C=CF"), BondStereo::None);
        assert_eq!(bond_stereo(&parse_smiles("F/C=C(C)/F").unwrap(), 1), BondStereo::Trans);
    }

    #[test]
    fn atom_feature_flags() {
        let f = atom_features(&pm("c1ccccc1"), 0);
        assert_eq!(f[4 + Hybridization::SP2.slot()], 1.0);
        assert_eq!(f[12], 1.0);
        let f = atom_features(&pm("N[C@H](C)O"), 1);
        assert_eq!((f[13], f[14]), (1.0, 1.0));
    }

    #[test]
    fn fragment_feature_counts() {
        let f = fragment_features(&pm("CCO"), &[0, 1, 2]);
        assert_eq!(&f[0..10], &[3.0, 2.0, 1.0, 2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(f[12], 0.0);
    }

    #[test]
    fn variants() {
        let p = pm("CCO");
        let d = Decomposition::singletons(&p.base);
        let atom = build_chg_variant(&p, &d, GraphVariant::AtomGraph).unwrap();
        assert_eq!((atom.n_nodes(), atom.n_edges()), (3, 2));
        let hier = build_chg_variant(&p, &d, GraphVariant::Hierarchical).unwrap();
        assert_eq!((hier.n_nodes(), hier.n_edges()), (7, 2 + 2 + 3 + 3));
        assert_eq!(hier.features.len(), hier.n_nodes());
    }

    #[test]
    fn partition_mismatch() {
        let p = pm("CCO");
        let d = Decomposition::singletons(&parse_smiles("CC").unwrap());
        assert!(matches!(build_chg(&p, &d), Err(ChgError::PartitionMismatch(_))));
    }

    #[test]
    fn dump_format() {
        let p = pm("C");
        let text = build_chg(&p, &Decomposition::singletons(&p.base)).unwrap().dump();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "#chg v1 atoms=1 bonds=0 frags=1 graph=1 variant=compositional");
        assert_eq!(lines[1], "node 0 atom 6 0 0 0 0 0 0 1 0 0 0 0.12011 4 0 0");
        assert_eq!(lines.last().unwrap(), &"edge fg 1 2");
    }
}
