//! Chemistry derived from a parsed [`Molecule`]: hydrogens, hybridization,
//! rings, scaffold descriptors and Murcko scaffolds.
//!
//! Default valences: B 3, C 4, N 3, O 2, P 3/5, S 2/4/6, halogens 1.
//! Formal charge shifts the allowed valences of bracket atoms:
//!
//! | element group        | allowed valence |
//! |----------------------|-----------------|
//! | B                    | v - q           |
//! | C                    | v - abs(q)      |
//! | N, P, O, S, halogens | v + q           |
//!
//! so N+ is 4-valent, O- 1-valent, B- 4-valent and C+ or C- 3-valent.
//! Aromaticity is taken from the SMILES flags as written.

use thiserror::Error;

use crate::elements::Element;
use crate::smiles::{BondOrder, Molecule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerceptionError {
    #[error("valence violation at atom {0}")]
    ValenceViolation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hybridization {
    S,
    SP,
    SP2,
    SP3,
    SP3D,
    SP3D2,
    Other,
}

impl Hybridization {
    pub const ALL: [Hybridization; 7] = [
        Hybridization::S,
        Hybridization::SP,
        Hybridization::SP2,
        Hybridization::SP3,
        Hybridization::SP3D,
        Hybridization::SP3D2,
        Hybridization::Other,
    ];

    pub fn slot(self) -> usize {
        Hybridization::ALL.iter().position(|&h| h == self).unwrap()
    }
}

/// Largest ring size searched explicitly.
pub const MAX_RING_SIZE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RingInfo {
    /// Atom cycles in traversal order, sorted by (size, sorted atoms).
    pub rings: Vec<Vec<usize>>,
    /// Bond indices of each ring, parallel to `rings`.
    pub ring_bonds: Vec<Vec<usize>>,
    pub atom_ring_count: Vec<usize>,
    pub bond_ring_count: Vec<usize>,
    /// Cyclomatic number `|E| - |V| + components`.
    pub ring_count: usize,
    /// Set when some independent cycle could not be listed within the size cap.
    pub ring_too_large: bool,
}

#[derive(Debug, Clone)]
pub struct PerceivedMolecule {
    pub base: Molecule,
    pub implicit_h: Vec<u8>,
    pub degree: Vec<usize>,
    pub hybridization: Vec<Hybridization>,
    pub radical_electrons: Vec<u8>,
    pub rings: RingInfo,
}

impl PerceivedMolecule {
    pub fn total_h(&self, atom: usize) -> u32 {
        self.implicit_h[atom] as u32 + self.base.atom(atom).explicit_h.unwrap_or(0) as u32
    }

    /// Sum of incident bond orders, aromatic bonds counting 1.5.
    pub fn bond_order_sum(&self, atom: usize) -> f64 {
        bond_order_sum(&self.base, atom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaffoldTargets {
    pub ring_count: usize,
    pub aromatic_ring_count: usize,
    pub fused: bool,
    pub heterocyclic: bool,
    pub bridged: bool,
}

pub(crate) fn default_valences(e: Element) -> Option<&'static [i32]> {
    Some(match e.atomic_number() {
        5 => &[3],
        6 => &[4],
        7 => &[3],
        8 => &[2],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        9 | 17 | 35 | 53 => &[1],
        _ => return None,
    })
}

fn charge_adjusted(e: Element, v: i32, q: i32) -> i32 {
    match e.atomic_number() {
        5 => v - q,
        6 => v - q.abs(),
        _ => v + q,
    }
}

fn allowed_valences(e: Element, q: i32) -> Option<Vec<i32>> {
    default_valences(e).map(|vs| vs.iter().map(|&v| charge_adjusted(e, v, q)).filter(|&v| v >= 0).collect())
}

fn bond_order_sum(m: &Molecule, atom: usize) -> f64 {
    m.neighbors(atom).iter().map(|&(_, b)| m.bond(b).order.valence()).sum()
}

/// Hydrogens the parser would assign to an unbracketed atom of this element
/// given its current bonds.
pub fn default_implicit_h(m: &Molecule, atom: usize) -> u8 {
    let Some(valences) = default_valences(m.atom(atom).element) else {
        return 0;
    };
    let used = bond_order_sum(m, atom).floor() as i32;
    valences
        .iter()
        .find(|&&v| v >= used)
        .map(|&v| (v - used).max(0) as u8)
        .unwrap_or(0)
}

/// Total hydrogen count per atom; never fails.
pub fn hydrogen_counts(m: &Molecule) -> Vec<u32> {
    (0..m.n_atoms())
        .map(|i| match m.atom(i).explicit_h {
            Some(h) => h as u32,
            None => default_implicit_h(m, i) as u32,
        })
        .collect()
}

pub fn perceive(m: &Molecule) -> Result<PerceivedMolecule, PerceptionError> {
    let n = m.n_atoms();
    let mut implicit_h = vec![0u8; n];
    let mut hybridization = Vec::with_capacity(n);
    let mut radicals = vec![0u8; n];
    let degree: Vec<usize> = (0..n).map(|i| m.degree(i)).collect();

    for i in 0..n {
        let atom = m.atom(i);
        if atom.explicit_h.is_none() {
            implicit_h[i] = default_implicit_h(m, i);
        }
        let h = implicit_h[i] as i32 + atom.explicit_h.unwrap_or(0) as i32;

        let mut min_valence = h;
        for &(_, b) in m.neighbors(i) {
            min_valence += match m.bond(b).order {
                BondOrder::Aromatic => 1,
                o => o.valence() as i32,
            };
        }
        if let Some(allowed) = allowed_valences(atom.element, atom.formal_charge as i32) {
            let max = allowed.iter().copied().max().unwrap_or(0);
            if min_valence > max {
                return Err(PerceptionError::ValenceViolation(i));
            }
            if atom.is_bracket() && !atom.aromatic {
                let used = bond_order_sum(m, i).floor() as i32 + h;
                if let Some(&target) = allowed.iter().find(|&&v| v >= used) {
                    radicals[i] = (target - used) as u8;
                }
            }
        }
        hybridization.push(hybridize(m, i, h as usize));
    }

    Ok(PerceivedMolecule {
        base: m.clone(),
        implicit_h,
        degree,
        hybridization,
        radical_electrons: radicals,
        rings: find_rings(m),
    })
}

fn hybridize(m: &Molecule, i: usize, h: usize) -> Hybridization {
    let atom = m.atom(i);
    let steric = m.degree(i) + h;
    if atom.atomic_number() <= 2 || steric == 0 {
        return Hybridization::S;
    }
    if steric >= 6 {
        return Hybridization::SP3D2;
    }
    if steric == 5 {
        return Hybridization::SP3D;
    }
    let mut doubles = 0;
    let mut triple = false;
    let mut aromatic = false;
    for &(_, b) in m.neighbors(i) {
        match m.bond(b).order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triple = true,
            BondOrder::Aromatic => aromatic = true,
            BondOrder::Single => {}
        }
    }
    if (triple || doubles >= 2) && steric <= 2 {
        Hybridization::SP
    } else if (doubles == 1 || aromatic || atom.aromatic) && steric <= 3 {
        Hybridization::SP2
    } else if default_valences(atom.element).is_none() && !matches!(atom.atomic_number(), 14 | 32 | 33 | 34 | 52) {
        Hybridization::Other
    } else {
        Hybridization::SP3
    }
}

/// Smallest-set-of-smallest-rings style perception with a size cap.
///
/// Candidates are the shortest cycle through every bond; if these do not
/// span the cycle space, Horton candidates (shortest paths from every atom
/// closed by every bond) are added. Candidates are taken greedily by size
/// while linearly independent over GF(2).
pub fn find_rings(m: &Molecule) -> RingInfo {
    let n = m.n_atoms();
    let nb = m.n_bonds();
    let ring_count = nb + m.n_components() - n;

    let mut selected: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    if ring_count > 0 {
        let mut candidates = Vec::new();
        for b in m.bonds() {
            if let Some(path) = shortest_path_avoiding(m, b.begin, b.end, Some(b.index), MAX_RING_SIZE - 1) {
                candidates.push(path);
            }
        }
        selected = select_independent(m, candidates, ring_count);
        if selected.len() < ring_count {
            let mut candidates = Vec::new();
            for root in 0..n {
                let (dist, parent) = bfs_tree(m, root);
                for b in m.bonds() {
                    let (x, y) = (b.begin, b.end);
                    if dist[x] == usize::MAX || dist[y] == usize::MAX {
                        continue;
                    }
                    if parent[x] == Some(b.index) || parent[y] == Some(b.index) {
                        continue;
                    }
                    if dist[x] + dist[y] + 1 > MAX_RING_SIZE {
                        continue;
                    }
                    // x..root and y..root must meet only at the root
                    let px = tree_path(m, &parent, x);
                    let py = tree_path(m, &parent, y);
                    if px.iter().filter(|a| py.contains(a)).count() != 1 {
                        continue;
                    }
                    let mut cycle = px;
                    cycle.extend(py.into_iter().rev().skip(1));
                    candidates.push(cycle);
                }
            }
            let mut all = selected.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>();
            all.extend(candidates);
            selected = select_independent(m, all, ring_count);
        }
    }

    selected.sort_by(|a, b| {
        let mut sa = a.0.clone();
        sa.sort_unstable();
        let mut sb = b.0.clone();
        sb.sort_unstable();
        (a.0.len(), sa).cmp(&(b.0.len(), sb))
    });

    let mut atom_ring_count = vec![0; n];
    let mut bond_ring_count = vec![0; nb];
    for (atoms, bonds) in &selected {
        for &a in atoms {
            atom_ring_count[a] += 1;
        }
        for &b in bonds {
            bond_ring_count[b] += 1;
        }
    }
    let ring_too_large = selected.len() < ring_count;
    let (rings, ring_bonds) = selected.into_iter().unzip();
    RingInfo {
        rings,
        ring_bonds,
        atom_ring_count,
        bond_ring_count,
        ring_count,
        ring_too_large,
    }
}

/// BFS from `from` to `to`, never using `banned` bond, at most `max_len`
/// bonds. Returns the atom path `from..=to`.
fn shortest_path_avoiding(m: &Molecule, from: usize, to: usize, banned: Option<usize>, max_len: usize) -> Option<Vec<usize>> {
    let n = m.n_atoms();
    let mut parent = vec![usize::MAX; n];
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        if dist[u] >= max_len {
            continue;
        }
        let mut nbrs = m.neighbors(u).to_vec();
        nbrs.sort_unstable();
        for (v, b) in nbrs {
            if Some(b) == banned || dist[v] != usize::MAX {
                continue;
            }
            dist[v] = dist[u] + 1;
            parent[v] = u;
            queue.push_back(v);
        }
    }
    if dist[to] == usize::MAX {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

fn bfs_tree(m: &Molecule, root: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = m.n_atoms();
    let mut dist = vec![usize::MAX; n];
    let mut parent = vec![None; n];
    let mut queue = std::collections::VecDeque::new();
    dist[root] = 0;
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        let mut nbrs = m.neighbors(u).to_vec();
        nbrs.sort_unstable();
        for (v, b) in nbrs {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                parent[v] = Some(b);
                queue.push_back(v);
            }
        }
    }
    (dist, parent)
}

/// Atoms from `x` back to the BFS root, inclusive.
fn tree_path(m: &Molecule, parent: &[Option<usize>], x: usize) -> Vec<usize> {
    let mut path = vec![x];
    let mut cur = x;
    while let Some(b) = parent[cur] {
        cur = m.bond(b).other(cur);
        path.push(cur);
    }
    path
}

fn cycle_bonds(m: &Molecule, cycle: &[usize]) -> Option<Vec<usize>> {
    let k = cycle.len();
    if k < 3 {
        return None;
    }
    let mut bonds = Vec::with_capacity(k);
    for i in 0..k {
        bonds.push(m.bond_between(cycle[i], cycle[(i + 1) % k])?);
    }
    Some(bonds)
}

fn select_independent(m: &Molecule, mut candidates: Vec<Vec<usize>>, limit: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    candidates.sort_by(|a, b| {
        let mut sa = a.clone();
        sa.sort_unstable();
        let mut sb = b.clone();
        sb.sort_unstable();
        (a.len(), sa).cmp(&(b.len(), sb))
    });
    let words = m.n_bonds().div_ceil(64).max(1);
    // reduced basis rows keyed by pivot bit
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for cycle in candidates {
        if out.len() >= limit {
            break;
        }
        let Some(bonds) = cycle_bonds(m, &cycle) else { continue };
        let mut key = bonds.clone();
        key.sort_unstable();
        if !seen.insert(key) {
            continue;
        }
        let mut row = vec![0u64; words];
        for &b in &bonds {
            row[b / 64] ^= 1 << (b % 64);
        }
        for (pivot, brow) in &basis {
            if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (r, x) in row.iter_mut().zip(brow) {
                    *r ^= x;
                }
            }
        }
        let pivot = row.iter().enumerate().find(|(_, w)| **w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize);
        if let Some(p) = pivot {
            // keep basis fully reduced on pivots
            for (_, brow) in basis.iter_mut() {
                if brow[p / 64] >> (p % 64) & 1 == 1 {
                    for (x, r) in brow.iter_mut().zip(&row) {
                        *x ^= r;
                    }
                }
            }
            basis.push((p, row));
            out.push((cycle, bonds));
        }
    }
    out
}

pub fn scaffold_descriptors(pm: &PerceivedMolecule) -> ScaffoldTargets {
    let m = &pm.base;
    let rings = &pm.rings;
    let aromatic_ring_count = rings
        .ring_bonds
        .iter()
        .filter(|bonds| bonds.iter().all(|&b| m.bond(b).order == BondOrder::Aromatic))
        .count();
    let heterocyclic = rings.rings.iter().any(|r| r.iter().any(|&a| m.atom(a).element != Element::C));
    let mut fused = false;
    let mut bridged = false;
    for i in 0..rings.rings.len() {
        for j in i + 1..rings.rings.len() {
            let shared_atoms: Vec<usize> = rings.rings[i].iter().copied().filter(|a| rings.rings[j].contains(a)).collect();
            let shared_bonds = rings.ring_bonds[i].iter().filter(|b| rings.ring_bonds[j].contains(b)).count();
            if shared_bonds == 1 {
                fused = true;
            }
            if shared_atoms.len() >= 3 || (shared_atoms.len() == 2 && m.bond_between(shared_atoms[0], shared_atoms[1]).is_none()) {
                bridged = true;
            }
        }
    }
    ScaffoldTargets {
        ring_count: rings.ring_count,
        aromatic_ring_count,
        fused,
        heterocyclic,
        bridged,
    }
}

/// Bonds that lie on no cycle (Tarjan bridge finding).
fn bridges(m: &Molecule) -> Vec<bool> {
    let n = m.n_atoms();
    let mut is_bridge = vec![false; m.n_bonds()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    for start in 0..n {
        if disc[start] != usize::MAX {
            continue;
        }
        // (atom, parent bond, neighbor cursor)
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(start, None, 0)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        while let Some(&mut (u, pb, ref mut cur)) = stack.last_mut() {
            if *cur < m.degree(u) {
                let (v, b) = m.neighbors(u)[*cur];
                *cur += 1;
                if Some(b) == pb {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, Some(b), 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let (Some(b), Some(&(p, _, _))) = (pb, stack.last()) {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[b] = true;
                    }
                }
            }
        }
    }
    is_bridge
}

/// Ring systems plus linkers: non-ring atoms of degree <= 1 are pruned
/// until none remain. Exocyclic double-bonded atoms are pruned too.
pub fn murcko_scaffold(m: &Molecule) -> Molecule {
    let n = m.n_atoms();
    let is_bridge = bridges(m);
    let in_ring: Vec<bool> = (0..n).map(|i| m.neighbors(i).iter().any(|&(_, b)| !is_bridge[b])).collect();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| m.degree(i)).collect();
    loop {
        let doomed: Vec<usize> = (0..n).filter(|&i| alive[i] && !in_ring[i] && degree[i] <= 1).collect();
        if doomed.is_empty() {
            break;
        }
        for &i in &doomed {
            alive[i] = false;
        }
        for &i in &doomed {
            for &(v, _) in m.neighbors(i) {
                if alive[v] {
                    degree[v] -= 1;
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    m.induced_subgraph(&keep).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn pm(s: &str) -> PerceivedMolecule {
        perceive(&parse_smiles(s).unwrap()).unwrap()
    }

    #[test]
    fn benzene_hydrogens() {
        let p = pm("c1ccccc1");
        assert!(p.implicit_h.iter().all(|&h| h == 1));
        assert!(p.hybridization.iter().all(|&h| h == Hybridization::SP2));
    }

    #[test]
    fn methane() {
        let p = pm("C");
        assert_eq!(p.implicit_h, vec![4]);
        assert_eq!(p.hybridization, vec![Hybridization::SP3]);
    }

    #[test]
    fn hydrogen_cyanide() {
        let p = pm("C#N");
        assert_eq!(p.implicit_h, vec![1, 0]);
        assert_eq!(p.hybridization[0], Hybridization::SP);
        assert_eq!(p.hybridization[1], Hybridization::SP);
    }

    #[test]
    fn valences() {
        assert_eq!(pm("CS(=O)(=O)C").implicit_h[1], 0);
        assert_eq!(pm("CS(=O)C").implicit_h[1], 0);
        assert_eq!(pm("CP(C)C").implicit_h[1], 0);
        assert_eq!(pm("c1cc[nH]c1").total_h(3), 1);
        assert_eq!(pm("c1ccncc1").implicit_h[3], 0);
        assert_eq!(pm("c1ccc2ccccc2c1").implicit_h[3], 0);
        assert_eq!(pm("[NH4+]").radical_electrons, vec![0]);
        assert_eq!(pm("[CH3]").radical_electrons, vec![1]);
        assert_eq!(pm("C[N+](=O)[O-]").radical_electrons, vec![0, 0, 0, 0]);
        assert_eq!(pm("O=c1cccc[nH]1").implicit_h[1], 0);
    }

    #[test]
    fn valence_violation() {
        let m = parse_smiles("C(C)(C)(C)(C)C").unwrap();
        assert_eq!(perceive(&m).unwrap_err(), PerceptionError::ValenceViolation(0));
        let m = parse_smiles("CN(=O)=O").unwrap();
        assert_eq!(perceive(&m).unwrap_err(), PerceptionError::ValenceViolation(1));
        assert!(perceive(&parse_smiles("[NH4+]").unwrap()).is_ok());
        assert!(perceive(&parse_smiles("[NH5+]").unwrap()).is_err());
    }

    #[test]
    fn ring_examples() {
        let r = find_rings(&parse_smiles("C1CCCCC1").unwrap());
        assert_eq!(r.ring_count, 1);
        assert_eq!(r.rings.len(), 1);
        assert_eq!(r.rings[0].len(), 6);

        let r = find_rings(&parse_smiles("c1ccc2ccccc2c1").unwrap());
        assert_eq!(r.rings.len(), 2);
        assert!(r.rings.iter().all(|x| x.len() == 6));
        let shared = r.ring_bonds[0].iter().filter(|b| r.ring_bonds[1].contains(b)).count();
        assert_eq!(shared, 1);

        let r = find_rings(&parse_smiles("CCO").unwrap());
        assert_eq!(r.ring_count, 0);
        assert!(r.rings.is_empty());
    }

    #[test]
    fn cubane_basis_complete() {
        let r = find_rings(&parse_smiles("C12C3C4C1C5C2C3C45").unwrap());
        assert_eq!(r.ring_count, 5);
        assert_eq!(r.rings.len(), 5);
        assert!(r.rings.iter().all(|x| x.len() == 4));
    }

    #[test]
    fn oversized_ring_flagged() {
        let r = find_rings(&parse_smiles("C1CCCCCCCCCCCCCC1").unwrap());
        assert_eq!(r.ring_count, 1);
        assert!(r.rings.is_empty());
        assert!(r.ring_too_large);
    }

    #[test]
    fn scaffold_examples() {
        let s = scaffold_descriptors(&pm("c1ccccc1"));
        assert_eq!(
            s,
            ScaffoldTargets {
                ring_count: 1,
                aromatic_ring_count: 1,
                fused: false,
                heterocyclic: false,
                bridged: false
            }
        );
        let s = scaffold_descriptors(&pm("c1ccncc1"));
        assert_eq!((s.ring_count, s.aromatic_ring_count, s.fused, s.heterocyclic, s.bridged), (1, 1, false, true, false));
        let s = scaffold_descriptors(&pm("C1CC2CCC1C2"));
        assert_eq!(s.ring_count, 2);
        assert!(s.bridged);
        assert!(!s.fused);
        let s = scaffold_descriptors(&pm("c1ccc2ccccc2c1"));
        assert!(s.fused && !s.bridged);
        assert_eq!(s.aromatic_ring_count, 2);
        let s = scaffold_descriptors(&pm("C1CCC2(CC1)CCC2"));
        assert!(!s.fused && !s.bridged);
    }

    #[test]
    fn murcko_examples() {
        let s = murcko_scaffold(&parse_smiles("Cc1ccccc1").unwrap());
        assert_eq!(s.n_atoms(), 6);
        let s = murcko_scaffold(&parse_smiles("CCO").unwrap());
        assert_eq!(s.n_atoms(), 0);
        let s = murcko_scaffold(&parse_smiles("c1ccc(-c2ccccc2)cc1").unwrap());
        assert_eq!(s.n_atoms(), 12);
        assert_eq!(s.n_bonds(), 13);
        let s = murcko_scaffold(&parse_smiles("O=C1CCCC1CCc1ccccc1").unwrap());
        assert_eq!(s.n_atoms(), 13);
    }
}
