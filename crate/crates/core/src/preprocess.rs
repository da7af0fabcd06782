//! Dataset records to cached graphs and targets.
//!
//! Cache file: the 10 bytes `CHGCACHE1\n`, then a bincode-encoded
//! [`CacheFile`]. A cache is reused only when its corpus, vocabulary and
//! preprocessing hashes all match.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chg::{build_chg_variant, CHGraph, GraphVariant};
use crate::dataset::Record;
use crate::labels::{bits_to_hex, compute_targets, fnv1a64, FunctionalGroupSet, PretrainTargets};
use crate::vocab::{decompose, FragmentVocab};

/// `(record index, reason)` for records that could not be processed.
pub type Skipped = Vec<(usize, String)>;

pub const CACHE_MAGIC: &[u8; 10] = b"CHGCACHE1\n";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("not a cache file (bad header)")]
    BadHeader,
    #[error("cache is stale: {0}")]
    Stale(&'static str),
    #[error("cache decode failed: {0}")]
    Decode(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub smiles: String,
    pub chg: CHGraph,
    pub targets: PretrainTargets,
    pub labels: Vec<Option<f64>>,
}

impl Sample {
    /// One-line label record: functional-group rows, fingerprint hex and scaffold classes.
    pub fn label_record(&self) -> String {
        let rows: Vec<String> = self.targets.frag_fg.iter().map(|r| r.iter().map(|b| b.to_string()).collect()).collect();
        let s = &self.targets.scaffold;
        format!(
            "{}\tfrag_fg={}\ttopo_fp={}\tscaffold={},{},{}{}{}",
            self.smiles,
            rows.join("|"),
            bits_to_hex(&self.targets.topo_fp),
            s.ring_class,
            s.aromatic_class,
            s.flags[0],
            s.flags[1],
            s.flags[2]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheFile {
    pub corpus_hash: u64,
    pub vocab_hash: u64,
    pub preprocess_hash: u64,
    pub vocab_text: String,
    pub samples: Vec<Sample>,
}

impl CacheFile {
    pub fn write(&self, path: &Path) -> Result<(), CacheError> {
        let mut bytes = CACHE_MAGIC.to_vec();
        bytes.extend(bincode::serialize(self).map_err(|e| CacheError::Decode(e.to_string()))?);
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CacheError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < CACHE_MAGIC.len() || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
            return Err(CacheError::BadHeader);
        }
        bincode::deserialize(&bytes[CACHE_MAGIC.len()..]).map_err(|e| CacheError::Decode(e.to_string()))
    }

    /// Fails unless the cache was built from exactly these inputs.
    pub fn check(&self, corpus_hash: u64, vocab_hash: u64, preprocess_hash: u64) -> Result<(), CacheError> {
        if self.corpus_hash != corpus_hash {
            return Err(CacheError::Stale("corpus changed"));
        }
        if self.vocab_hash != vocab_hash {
            return Err(CacheError::Stale("vocabulary changed"));
        }
        if self.preprocess_hash != preprocess_hash {
            return Err(CacheError::Stale("graph settings changed"));
        }
        Ok(())
    }
}

pub fn corpus_hash(records: &[Record]) -> u64 {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.smiles);
        for l in &r.labels {
            text.push(',');
            if let Some(v) = l {
                text.push_str(&v.to_string());
            }
        }
        text.push('\n');
    }
    fnv1a64(text.as_bytes())
}

pub fn vocab_hash(vocab: &FragmentVocab) -> u64 {
    fnv1a64(vocab.to_text().as_bytes())
}

pub fn build_sample(r: &Record, vocab: &FragmentVocab, fgs: &FunctionalGroupSet, variant: GraphVariant, fp_bits: usize) -> Result<Sample, String> {
    let d = decompose(&r.mol.base, vocab).map_err(|e| e.to_string())?;
    let chg = build_chg_variant(&r.mol, &d, variant).map_err(|e| e.to_string())?;
    Ok(Sample {
        smiles: r.smiles.clone(),
        chg,
        targets: compute_targets(&r.mol, &d, fgs, fp_bits),
        labels: r.labels.clone(),
    })
}

/// Builds samples in record order. Records that cannot be decomposed are
/// skipped and returned as `(record index, reason)`.
pub fn preprocess(
    records: &[Record],
    vocab: &FragmentVocab,
    variant: GraphVariant,
    fp_bits: usize,
    threads: usize,
) -> Result<(Vec<Sample>, Skipped), CacheError> {
    let fgs = FunctionalGroupSet::default_library();
    let run = || records.par_iter().map(|r| build_sample(r, vocab, &fgs, variant, fp_bits)).collect::<Vec<_>>();
    let results = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CacheError::ThreadPool(e.to_string()))?
            .install(run)
    } else {
        run()
    };
    let mut samples = Vec::with_capacity(records.len());
    let mut failed = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(s) => samples.push(s),
            Err(reason) => {
                warn!("record {i} ({}): {reason}", records[i].smiles);
                failed.push((i, reason));
            }
        }
    }
    Ok((samples, failed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_csv_reader;
    use crate::vocab::build_vocab;

    #[test]
    fn preprocess_and_cache_round_trip() {
        let ds = load_csv_reader("smiles\nCCO\nc1ccccc1O\nCC(=O)O\n[Na+].[Cl-]\n".as_bytes()).unwrap();
        let mols: Vec<_> = ds.records.iter().take(3).map(|r| r.mol.base.clone()).collect();
        let vocab = build_vocab(&mols, 12, 0).unwrap();
        let (samples, failed) = preprocess(&ds.records, &vocab, GraphVariant::Compositional, 64, 2).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].0, 3);

        let (single, _) = preprocess(&ds.records, &vocab, GraphVariant::Compositional, 64, 1).unwrap();
        assert_eq!(single, samples);

        let cache = CacheFile {
            corpus_hash: corpus_hash(&ds.records),
            vocab_hash: vocab_hash(&vocab),
            preprocess_hash: 7,
            vocab_text: vocab.to_text(),
            samples,
        };
        let dir = std::env::temp_dir().join(format!("chg-cache-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.bin");
        cache.write(&path).unwrap();
        let back = CacheFile::read(&path).unwrap();
        assert_eq!(back, cache);
        assert!(back.check(cache.corpus_hash, cache.vocab_hash, 7).is_ok());
        assert!(matches!(back.check(cache.corpus_hash, cache.vocab_hash, 8), Err(CacheError::Stale(_))));
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(CacheFile::read(&path), Err(CacheError::BadHeader)));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn label_record_format() {
        let ds = load_csv_reader("smiles\nCCO\n".as_bytes()).unwrap();
        let vocab = build_vocab(&vec![ds.records[0].mol.base.clone(); 10], 4, 0).unwrap();
        let s = build_sample(&ds.records[0], &vocab, &FunctionalGroupSet::default_library(), GraphVariant::Compositional, 64).unwrap();
        let rec = s.label_record();
        assert!(rec.starts_with("CCO\tfrag_fg=1000000000000000\ttopo_fp="));
        assert!(rec.ends_with("scaffold=0,0,000"));
    }
}
