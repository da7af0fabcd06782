//! Principal-subgraph vocabulary mining and greedy fragment decomposition.
//!
//! Mining starts with every atom as its own fragment. Each round counts, for
//! every canonical key of a merged adjacent fragment pair, how many
//! non-overlapping occurrences exist (pairs scanned in ascending atom-index
//! order, first come first served), appends the most frequent key to the
//! vocabulary (ties broken by the lexicographically smaller key) and merges
//! those occurrences everywhere. Mining stops at the target size or when no
//! merged key occurs at least twice.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::canon::{canonical_form_and_ranks, subgraph_key};
use crate::smiles::Molecule;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is smaller than the {distinct} distinct atom keys in the corpus")]
    TargetTooSmall { target: usize, distinct: usize },
    #[error("unknown element {0} (not in vocabulary)")]
    UnknownElement(String),
    #[error("malformed vocabulary file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("fragments do not partition the atoms: {0}")]
    InvalidPartition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub key: String,
    pub frequency: usize,
    pub atom_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentVocab {
    entries: Vec<VocabEntry>,
    target_size: usize,
    index: HashMap<String, usize>,
}

impl FragmentVocab {
    pub fn from_entries(entries: Vec<VocabEntry>, target_size: usize) -> Result<Self, VocabError> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.key.clone(), i).is_some() {
                return Err(VocabError::Format {
                    line: i + 2,
                    msg: format!("duplicate key {}", e.key),
                });
            }
        }
        Ok(FragmentVocab {
            entries,
            target_size,
            index,
        })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn frequency(&self, key: &str) -> Option<usize> {
        self.index.get(key).map(|&i| self.entries[i].frequency)
    }

    /// Text form: header `#psm-vocab v1 size=<n>` then `key\tfreq\tatoms` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("#psm-vocab v1 size={}\n", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.key, e.frequency, e.atom_count);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(VocabError::Format {
            line: 1,
            msg: "missing header".into(),
        })?;
        let size: usize = header
            .strip_prefix("#psm-vocab v1 size=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or(VocabError::Format {
                line: 1,
                msg: format!("bad header {header:?}"),
            })?;
        let mut entries = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fmt_err = |msg: &str| VocabError::Format {
                line: i + 2,
                msg: msg.to_string(),
            };
            let mut cols = line.split('\t');
            let key = cols.next().filter(|k| !k.is_empty()).ok_or_else(|| fmt_err("missing key"))?;
            let frequency = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| fmt_err("bad frequency"))?;
            let atom_count = cols.next().and_then(|c| c.parse().ok()).ok_or_else(|| fmt_err("bad atom count"))?;
            if cols.next().is_some() {
                return Err(fmt_err("too many columns"));
            }
            entries.push(VocabEntry {
                key: key.to_string(),
                frequency,
                atom_count,
            });
        }
        if entries.len() != size {
            return Err(VocabError::Format {
                line: 1,
                msg: format!("header says {size} entries, found {}", entries.len()),
            });
        }
        FragmentVocab::from_entries(entries, size)
    }

    pub fn write(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, VocabError> {
        FragmentVocab::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Mining knobs beyond the target size.
#[derive(Debug, Clone)]
pub struct MiningConfig {
    pub target_size: usize,
    pub seed: u64,
    /// Mine on a seeded random subset of at most this many molecules.
    pub max_molecules: Option<usize>,
}

/// Fragment state of one molecule during mining or decomposition.
struct Partition<'a> {
    mol: &'a Molecule,
    frag_of_atom: Vec<usize>,
    members: Vec<Vec<usize>>,
    pair_keys: HashMap<(usize, usize), String>,
}

impl<'a> Partition<'a> {
    fn singletons(mol: &'a Molecule) -> Self {
        let n = mol.n_atoms();
        Partition {
            mol,
            frag_of_atom: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
            pair_keys: HashMap::new(),
        }
    }

    /// Adjacent fragment pairs in ascending atom-index order.
    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut set = HashSet::new();
        for b in self.mol.bonds() {
            let (fa, fb) = (self.frag_of_atom[b.begin], self.frag_of_atom[b.end]);
            if fa != fb {
                set.insert((fa.min(fb), fa.max(fb)));
            }
        }
        let mut pairs: Vec<(usize, usize)> = set.into_iter().collect();
        pairs.sort_by_key(|&(a, b)| {
            let (ma, mb) = (self.members[a][0], self.members[b][0]);
            (ma.min(mb), ma.max(mb))
        });
        pairs
    }

    fn pair_key(&mut self, pair: (usize, usize)) -> &str {
        if !self.pair_keys.contains_key(&pair) {
            let mut atoms = self.members[pair.0].clone();
            atoms.extend_from_slice(&self.members[pair.1]);
            let key = subgraph_key(self.mol, &atoms);
            self.pair_keys.insert(pair, key);
        }
        &self.pair_keys[&pair]
    }

    fn merge(&mut self, (a, b): (usize, usize)) {
        let moved = std::mem::take(&mut self.members[b]);
        for &atom in &moved {
            self.frag_of_atom[atom] = a;
        }
        self.members[a].extend(moved);
        self.members[a].sort_unstable();
        self.pair_keys.retain(|&(x, y), _| x != a && y != a && x != b && y != b);
    }

    fn into_decomposition(self) -> Decomposition {
        let mut frags: Vec<Vec<usize>> = self.members.into_iter().filter(|m| !m.is_empty()).collect();
        frags.sort_by_key(|f| f[0]);
        Decomposition::from_sorted(frags, self.frag_of_atom.len())
    }
}

pub fn build_vocab(corpus: &[Molecule], target_size: usize, seed: u64) -> Result<FragmentVocab, VocabError> {
    build_vocab_with(
        corpus,
        &MiningConfig {
            target_size,
            seed,
            max_molecules: None,
        },
    )
}

pub fn build_vocab_with(corpus: &[Molecule], cfg: &MiningConfig) -> Result<FragmentVocab, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut selected: Vec<&Molecule> = corpus.iter().collect();
    if let Some(cap) = cfg.max_molecules {
        if cap < selected.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx: Vec<usize> = (0..corpus.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            selected = idx.into_iter().map(|i| &corpus[i]).collect();
        }
    }

    let mut single: HashMap<String, usize> = HashMap::new();
    for m in &selected {
        for i in 0..m.n_atoms() {
            *single.entry(subgraph_key(m, &[i])).or_default() += 1;
        }
    }
    let mut entries: Vec<VocabEntry> = single
        .into_iter()
        .map(|(key, frequency)| VocabEntry {
            key,
            frequency,
            atom_count: 1,
        })
        .collect();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    if cfg.target_size < entries.len() {
        return Err(VocabError::TargetTooSmall {
            target: cfg.target_size,
            distinct: entries.len(),
        });
    }

    let mut parts: Vec<Partition> = selected.iter().map(|m| Partition::singletons(m)).collect();
    while entries.len() < cfg.target_size {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for part in parts.iter_mut() {
            let mut used: HashMap<String, HashSet<usize>> = HashMap::new();
            for pair in part.pairs() {
                let key = part.pair_key(pair).to_string();
                let u = used.entry(key.clone()).or_default();
                if u.contains(&pair.0) || u.contains(&pair.1) {
                    continue;
                }
                u.insert(pair.0);
                u.insert(pair.1);
                *counts.entry(key).or_default() += 1;
            }
        }
        let best = counts
            .into_iter()
            .filter(|(k, _)| !entries.iter().any(|e| &e.key == k))
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some((key, frequency)) = best else { break };
        if frequency < 2 {
            break;
        }
        let mut atom_count = 0;
        for part in parts.iter_mut() {
            let mut used = HashSet::new();
            for pair in part.pairs() {
                if used.contains(&pair.0) || used.contains(&pair.1) || part.pair_key(pair) != key {
                    continue;
                }
                used.insert(pair.0);
                used.insert(pair.1);
                atom_count = part.members[pair.0].len() + part.members[pair.1].len();
                part.merge(pair);
            }
        }
        entries.push(VocabEntry {
            key,
            frequency,
            atom_count,
        });
    }
    FragmentVocab::from_entries(entries, cfg.target_size)
}

/// A partition of a molecule's atoms into connected fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    /// Sorted member lists, ordered by their smallest atom index.
    pub fragments: Vec<Vec<usize>>,
    pub frag_of_atom: Vec<usize>,
}

impl Decomposition {
    fn from_sorted(fragments: Vec<Vec<usize>>, n_atoms: usize) -> Self {
        let mut frag_of_atom = vec![usize::MAX; n_atoms];
        for (f, members) in fragments.iter().enumerate() {
            for &a in members {
                frag_of_atom[a] = f;
            }
        }
        Decomposition { fragments, frag_of_atom }
    }

    /// Validates and normalizes an arbitrary fragment list.
    pub fn from_fragments(m: &Molecule, fragments: Vec<Vec<usize>>) -> Result<Self, VocabError> {
        let n = m.n_atoms();
        let mut seen = vec![false; n];
        let mut frags = Vec::with_capacity(fragments.len());
        for mut f in fragments {
            if f.is_empty() {
                return Err(VocabError::InvalidPartition("empty fragment".into()));
            }
            f.sort_unstable();
            for &a in &f {
                if a >= n || seen[a] {
                    return Err(VocabError::InvalidPartition(format!("atom {a} out of range or repeated")));
                }
                seen[a] = true;
            }
            let (sub, _) = m.induced_subgraph(&f);
            if sub.n_components() != 1 {
                return Err(VocabError::InvalidPartition(format!("fragment {f:?} is disconnected")));
            }
            frags.push(f);
        }
        if let Some(a) = seen.iter().position(|s| !s) {
            return Err(VocabError::InvalidPartition(format!("atom {a} not covered")));
        }
        frags.sort_by_key(|f| f[0]);
        Ok(Decomposition::from_sorted(frags, n))
    }

    /// Every atom its own fragment.
    pub fn singletons(m: &Molecule) -> Self {
        Decomposition::from_sorted((0..m.n_atoms()).map(|i| vec![i]).collect(), m.n_atoms())
    }

    /// One fragment per connected component.
    pub fn components(m: &Molecule) -> Self {
        let mut part = Partition::singletons(m);
        loop {
            let pairs = part.pairs();
            let Some(&p) = pairs.first() else { break };
            part.merge(p);
        }
        part.into_decomposition()
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

/// Frequency, merged key, sorted canonical positions and the fragment pair.
type MergeCandidate = (usize, String, Vec<usize>, (usize, usize));

/// Greedy decomposition: repeatedly merge the adjacent pair whose merged key
/// has the highest vocabulary frequency (ties: smaller key, then the pair whose
/// sorted canonical atom positions compare lowest) until no merged key is in
/// the vocabulary. Ranking by canonical position instead of atom index makes the
/// partition independent of how the SMILES was written.
pub fn decompose(m: &Molecule, vocab: &FragmentVocab) -> Result<Decomposition, VocabError> {
    for i in 0..m.n_atoms() {
        let key = subgraph_key(m, &[i]);
        if !vocab.contains(&key) {
            return Err(VocabError::UnknownElement(key));
        }
    }
    let ranks = canonical_form_and_ranks(m).1;
    let mut part = Partition::singletons(m);
    loop {
        let mut best: Option<MergeCandidate> = None;
        for pair in part.pairs() {
            let key = part.pair_key(pair).to_string();
            let Some(freq) = vocab.frequency(&key) else { continue };
            // the merged atoms' canonical positions are unique per pair
            let mut low: Vec<usize> = part.members[pair.0].iter().chain(&part.members[pair.1]).map(|&a| ranks[a]).collect();
            low.sort_unstable();
            let better = match &best {
                None => true,
                Some((bf, bk, bl, _)) => (freq, std::cmp::Reverse(&key), std::cmp::Reverse(&low)) > (*bf, std::cmp::Reverse(bk), std::cmp::Reverse(bl)),
            };
            if better {
                best = Some((freq, key, low, pair));
            }
        }
        match best {
            Some((_, _, _, pair)) => part.merge(pair),
            None => break,
        }
    }
    Ok(part.into_decomposition())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn mols(list: &[&str]) -> Vec<Molecule> {
        list.iter().map(|s| parse_smiles(s).unwrap()).collect()
    }

    #[test]
    fn ethanol_corpus_trace() {
        let corpus = mols(&["CCO"; 10]);
        let v = build_vocab(&corpus, 4, 0).unwrap();
        let keys: Vec<&str> = v.entries().iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["C", "O", "CC", "CCO"]);
        assert_eq!(v.entries()[2].frequency, 10);
        assert_eq!(v.entries()[3].atom_count, 3);
    }

    #[test]
    fn single_atom_corpus() {
        let v = build_vocab(&mols(&["C"]), 1, 0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.entries()[0].key, "C");
    }

    #[test]
    fn errors() {
        assert!(matches!(build_vocab(&[], 4, 0), Err(VocabError::EmptyCorpus)));
        assert!(matches!(build_vocab(&mols(&["CO"]), 1, 0), Err(VocabError::TargetTooSmall { .. })));
        let v = build_vocab(&mols(&["CC"]), 1, 0).unwrap();
        assert!(matches!(decompose(&parse_smiles("CN").unwrap(), &v), Err(VocabError::UnknownElement(k)) if k == "N"));
    }

    #[test]
    fn decompose_ignores_writing_order() {
        let v = build_vocab(&mols(&["CC", "CC", "CC", "O"]), 3, 0).unwrap();
        let by_rank = |smiles: &str| {
            let m = parse_smiles(smiles).unwrap();
            let ranks = canonical_form_and_ranks(&m).1;
            let mut frags: Vec<Vec<usize>> = decompose(&m, &v)
                .unwrap()
                .fragments
                .iter()
                .map(|f| {
                    let mut r: Vec<usize> = f.iter().map(|&a| ranks[a]).collect();
                    r.sort_unstable();
                    r
                })
                .collect();
            frags.sort();
            frags
        };
        assert_eq!(by_rank("CCCCCO"), by_rank("OCCCCC"));
        assert_eq!(by_rank("CCCCCO"), by_rank("C(CCO)CC"));
    }

    #[test]
    fn decompose_examples() {
        let corpus = mols(&["CCO"; 10]);
        let full = build_vocab(&corpus, 4, 0).unwrap();
        let d = decompose(&parse_smiles("CCO").unwrap(), &full).unwrap();
        assert_eq!(d.fragments, vec![vec![0, 1, 2]]);

        let singles = build_vocab(&corpus, 2, 0).unwrap();
        let d = decompose(&parse_smiles("CCO").unwrap(), &singles).unwrap();
        assert_eq!(d.fragments, vec![vec![0], vec![1], vec![2]]);

        let d = decompose(&parse_smiles("C").unwrap(), &singles).unwrap();
        assert_eq!(d.fragments, vec![vec![0]]);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let v = build_vocab(&mols(&["CCO", "CCN", "CCO", "c1ccccc1O"]), 8, 0).unwrap();
        let text = v.to_text();
        assert!(text.starts_with(&format!("#psm-vocab v1 size={}\n", v.len())));
        let back = FragmentVocab::from_text(&text).unwrap();
        assert_eq!(back.entries(), v.entries());
        assert!(FragmentVocab::from_text("#psm-vocab v1 size=2\nC\t1\t1\n").is_err());
        assert!(FragmentVocab::from_text("C\t1\t1\n").is_err());
        assert!(FragmentVocab::from_text("#psm-vocab v1 size=1\nC\tx\t1\n").is_err());
    }

    #[test]
    fn components_and_validation() {
        let m = parse_smiles("CCO.N").unwrap();
        let d = Decomposition::components(&m);
        assert_eq!(d.fragments, vec![vec![0, 1, 2], vec![3]]);
        assert!(Decomposition::from_fragments(&m, vec![vec![0, 2], vec![1], vec![3]]).is_err());
        assert!(Decomposition::from_fragments(&m, vec![vec![0, 1], vec![2]]).is_err());
        assert!(Decomposition::from_fragments(&m, vec![vec![0, 1], vec![2], vec![3]]).is_ok());
    }

    #[test]
    fn subsampling_is_seeded() {
        let corpus = mols(&["CCO", "CCN", "CCC", "c1ccccc1", "CC(=O)O", "CCOC", "NCCO", "OCCO"]);
        let cfg = |seed| MiningConfig {
            target_size: 20,
            seed,
            max_molecules: Some(4),
        };
        let a = build_vocab_with(&corpus, &cfg(1)).unwrap();
        let b = build_vocab_with(&corpus, &cfg(1)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }
}
