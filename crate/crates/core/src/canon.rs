//! Canonical SMILES-like strings for molecules and fragment subgraphs.
//!
//! Atoms get an initial invariant (element, aromatic flag, charge, degree,
//! and for full molecules the total hydrogen count) that is iteratively
//! refined with the sorted ranks of the neighbors and the connecting bond
//! orders until the partition stops splitting. Remaining ties are broken by
//! trying each member of the lowest tied class, refining again, and keeping
//! the lexicographically smallest string written from the discrete ranking.
//! Tied terminal atoms hanging off the same neighbor are interchangeable and
//! only one of them is tried.

use crate::perception::{default_implicit_h, hydrogen_counts};
use crate::smiles::{bracket_text, organic_text, write_smiles_with_order, Molecule};

/// Leaves explored before the tie-break search settles for the best so far.
const SEARCH_BUDGET: usize = 4096;

/// Canonical string of a whole molecule. Hydrogen counts are normalized, so
/// `[CH4]` and `C` agree. Stereo marks are not part of the form.
pub fn canonical_form(m: &Molecule) -> String {
    canonical_form_and_ranks(m).0
}

/// Canonical form plus each atom's position in it. The string determines
/// the graph on those positions, so two writings of one molecule get
/// positions related by an isomorphism: a writing-independent atom order.
pub fn canonical_form_and_ranks(m: &Molecule) -> (String, Vec<usize>) {
    let hs = hydrogen_counts(m);
    let invariants: Vec<Vec<i64>> = (0..m.n_atoms())
        .map(|i| {
            let a = m.atom(i);
            vec![a.atomic_number() as i64, a.aromatic as i64, a.formal_charge as i64, hs[i] as i64, m.degree(i) as i64]
        })
        .collect();
    canonical_with(m, invariants, |i| {
        let a = m.atom(i);
        let organic = a.element.in_organic_subset()
            && a.formal_charge == 0
            && (!a.aromatic || a.element.may_be_aromatic())
            && default_implicit_h(m, i) as u32 == hs[i];
        if organic {
            organic_text(a)
        } else {
            bracket_text(a, Some(hs[i] as u8))
        }
    })
}

/// Canonical key of a (sub)graph ignoring hydrogens: element, aromatic
/// flag, charge and bond orders only. Used to key mined fragments.
pub fn canonical_key(m: &Molecule) -> String {
    let invariants: Vec<Vec<i64>> = (0..m.n_atoms())
        .map(|i| {
            let a = m.atom(i);
            vec![a.atomic_number() as i64, a.aromatic as i64, a.formal_charge as i64, m.degree(i) as i64]
        })
        .collect();
    canonical_with(m, invariants, |i| {
        let a = m.atom(i);
        if a.element.in_organic_subset() && a.formal_charge == 0 {
            organic_text(a)
        } else {
            bracket_text(a, None)
        }
    })
    .0
}

/// Key of the subgraph of `m` induced by `atoms`.
pub fn subgraph_key(m: &Molecule, atoms: &[usize]) -> String {
    canonical_key(&m.induced_subgraph(atoms).0)
}

fn canonical_with(m: &Molecule, invariants: Vec<Vec<i64>>, atom_text: impl Fn(usize) -> String) -> (String, Vec<usize>) {
    let n = m.n_atoms();
    if n == 0 {
        return (String::new(), Vec::new());
    }
    let ranks = rank_by_keys(&invariants);
    let ranks = refine(m, ranks);
    let mut search = Search {
        m,
        atom_text: &atom_text,
        best: None,
        leaves: 0,
    };
    search.explore(ranks);
    search.best.expect("at least one leaf explored")
}

struct Search<'a, F: Fn(usize) -> String> {
    m: &'a Molecule,
    atom_text: &'a F,
    best: Option<(String, Vec<usize>)>,
    leaves: usize,
}

impl<F: Fn(usize) -> String> Search<'_, F> {
    fn explore(&mut self, ranks: Vec<usize>) {
        let n = ranks.len();
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = (0..n).find(|&r| counts[r] > 1);
        let Some(r) = tied else {
            self.leaves += 1;
            let (s, order) = write_smiles_with_order(self.m, &ranks, self.atom_text);
            if self.best.as_ref().is_none_or(|(b, _)| s < *b) {
                self.best = Some((s, order));
            }
            return;
        };
        let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == r).collect();
        let mut tried_terminals: Vec<(usize, u8)> = Vec::new();
        for &c in &members {
            if self.leaves >= SEARCH_BUDGET && self.best.is_some() {
                return;
            }
            if self.m.degree(c) == 1 {
                let (p, b) = self.m.neighbors(c)[0];
                let sig = (p, self.m.bond(b).order.code());
                if tried_terminals.contains(&sig) {
                    continue;
                }
                tried_terminals.push(sig);
            }
            let mut next = ranks.clone();
            for &o in &members {
                if o != c {
                    next[o] = r + 1;
                }
            }
            let next = refine(self.m, next);
            self.explore(next);
        }
    }
}

/// Rank = number of items with a strictly smaller key.
fn rank_by_keys<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && keys[order[pos - 1]] == keys[i] {
            ranks[order[pos - 1]]
        } else {
            pos
        };
    }
    ranks
}

fn refine(m: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let n = ranks.len();
    let mut classes = distinct(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = m.neighbors(i).iter().map(|&(v, b)| (ranks[v], m.bond(b).order.code())).collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = rank_by_keys(&keys);
        let next_classes = distinct(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

fn distinct(ranks: &[usize]) -> usize {
    let mut seen = vec![false; ranks.len()];
    let mut count = 0;
    for &r in ranks {
        if !seen[r] {
            seen[r] = true;
            count += 1;
        }
    }
    count
}
