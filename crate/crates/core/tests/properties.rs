//! Property-based invariants over randomly generated molecules and inputs.

use std::collections::BTreeSet;

use chgraph::canon::canonical_form;
use chgraph::checkpoint::Checkpoint;
use chgraph::chg::{build_bond_graph, build_chg_variant, EdgeSet, GraphVariant};
use chgraph::config::{LossVariant, RunConfig};
use chgraph::metrics::{cluster_metrics, roc_auc};
use chgraph::perception::{perceive, PerceivedMolecule};
use chgraph::smiles::{organic_text, parse_smiles, write_smiles, Molecule};
use chgraph::tensor::Tensor;
use chgraph::vocab::{build_vocab, decompose};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tree-shaped molecule as SMILES: carbon backbone, heteroatoms only on leaves,
/// plus an optional ring closure between two backbone carbons.
fn tree_smiles(parents: &[usize], leaf_kinds: &[u8], ring: Option<(usize, usize)>) -> String {
    let n = parents.len() + 1;
    let mut children = vec![Vec::new(); n];
    for (i, &p) in parents.iter().enumerate() {
        children[p % (i + 1)].push(i + 1);
    }
    // carbon valence caps the branching, leaving room for the ring bond
    for (a, c) in children.iter_mut().enumerate() {
        c.truncate(if a == 0 { 3 } else { 2 });
    }
    let reachable = {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        while let Some(a) = stack.pop() {
            seen[a] = true;
            stack.extend(children[a].iter().copied());
        }
        seen
    };
    let ring = ring.map(|(a, b)| (a % n, b % n)).filter(|&(a, b)| {
        a != b && reachable[a] && reachable[b] && !children[a].is_empty() && !children[b].is_empty() && !children[a].contains(&b) && !children[b].contains(&a)
    });
    fn emit(a: usize, children: &[Vec<usize>], kinds: &[u8], ring: Option<(usize, usize)>, out: &mut String) {
        let leaf = children[a].is_empty();
        out.push_str(if leaf && a > 0 { ["C", "N", "O", "Cl", "F"][kinds[a % kinds.len()] as usize % 5] } else { "C" });
        if let Some((x, y)) = ring {
            if a == x || a == y {
                out.push('1');
            }
        }
        let k = children[a].len();
        for (j, &c) in children[a].iter().enumerate() {
            if j + 1 < k {
                out.push('(');
                emit(c, children, kinds, ring, out);
                out.push(')');
            } else {
                emit(c, children, kinds, ring, out);
            }
        }
    }
    let mut s = String::new();
    emit(0, &children, leaf_kinds, ring, &mut s);
    s
}

fn molecule_strategy() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(any::<usize>(), 0..14),
        prop::collection::vec(0u8..5, 1..8),
        prop::option::of((any::<usize>(), any::<usize>())),
    )
        .prop_map(|(p, k, r)| tree_smiles(&p, &k, r))
}

fn perceived(s: &str) -> PerceivedMolecule {
    perceive(&parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}"))).unwrap_or_else(|e| panic!("{s}: {e}"))
}

fn degrees(m: &Molecule) -> Vec<usize> {
    let mut d = vec![0; m.n_atoms()];
    for b in m.bonds() {
        d[b.begin] += 1;
        d[b.end] += 1;
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bond_graph_matches_handshake(s in molecule_strategy()) {
        let m = parse_smiles(&s).unwrap();
        let e = build_bond_graph(&m);
        let want: usize = degrees(&m).iter().map(|&k| k * k.saturating_sub(1) / 2).sum();
        prop_assert_eq!(e.len(), want);
        prop_assert!(e.iter().all(|&(a, b)| a != b));
        let unique: BTreeSet<_> = e.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        prop_assert_eq!(unique.len(), e.len());
    }

    #[test]
    fn canonical_form_ignores_writing(s in molecule_strategy(), seed in any::<u64>()) {
        let m = parse_smiles(&s).unwrap();
        let mut ranks: Vec<usize> = (0..m.n_atoms()).collect();
        ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let rewritten = write_smiles(&m, &ranks, |i| organic_text(m.atom(i)));
        prop_assert_eq!(canonical_form(&m), canonical_form(&parse_smiles(&rewritten).unwrap()), "{} vs {}", s, rewritten);
    }

    #[test]
    fn decomposition_partitions_into_connected_fragments(s in molecule_strategy()) {
        let pm = perceived(&s);
        let m = &pm.base;
        let vocab = build_vocab(&vec![m.clone(); 3], 12, 0).unwrap();
        let d = decompose(m, &vocab).unwrap();
        let mut seen = vec![0; m.n_atoms()];
        for f in &d.fragments {
            for &a in f {
                seen[a] += 1;
            }
            // connected: flood fill inside the fragment reaches every member
            let mut reached = BTreeSet::from([f[0]]);
            let mut stack = vec![f[0]];
            while let Some(a) = stack.pop() {
                for &(nb, _) in m.neighbors(a) {
                    if f.contains(&nb) && reached.insert(nb) {
                        stack.push(nb);
                    }
                }
            }
            prop_assert_eq!(reached.len(), f.len());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn variants_nest_and_keep_structural_invariants(s in molecule_strategy()) {
        let pm = perceived(&s);
        let vocab = build_vocab(&vec![pm.base.clone(); 3], 12, 0).unwrap();
        let d = decompose(&pm.base, &vocab).unwrap();
        let full = build_chg_variant(&pm, &d, GraphVariant::Compositional).unwrap();
        prop_assert_eq!(full.n_nodes(), pm.base.n_atoms() + pm.base.n_bonds() + d.len() + 1);
        prop_assert_eq!(full.edges(EdgeSet::AF).len(), pm.base.n_atoms());
        prop_assert_eq!(full.edges(EdgeSet::FG).len(), d.len());
        let intra = pm.base.bonds().iter().filter(|b| d.frag_of_atom[b.begin] == d.frag_of_atom[b.end]).count();
        prop_assert_eq!(full.edges(EdgeSet::BF).len(), intra);
        let mut previous = 0;
        for v in GraphVariant::ALL {
            let g = build_chg_variant(&pm, &d, v).unwrap();
            for set in EdgeSet::ALL {
                let on = v.edge_sets().contains(&set);
                prop_assert_eq!(g.edges(set).len(), if on { full.edges(set).len() } else { 0 });
            }
            prop_assert!(g.n_edges() >= previous);
            previous = g.n_edges();
        }
    }

    #[test]
    fn roc_auc_is_bounded_and_antisymmetric(raw in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
        let mut labels: Vec<u8> = raw.iter().map(|&(_, l)| l as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64).collect();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &labels).unwrap();
        let b = roc_auc(&neg, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_metrics_ignore_point_order(points in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 6..30), seed in any::<u64>()) {
        let pts: Vec<Vec<f64>> = points.iter().map(|&(x, y)| vec![x, y]).collect();
        let keys: Vec<usize> = (0..pts.len()).map(|i| i % 3).collect();
        let s = cluster_metrics(&pts, &keys).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s.silhouette));
        prop_assert!(s.dbi >= 0.0);
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let k2: Vec<usize> = order.iter().map(|&i| keys[i]).collect();
        let t = cluster_metrics(&p2, &k2).unwrap();
        prop_assert!((s.dbi - t.dbi).abs() < 1e-9 && (s.silhouette - t.silhouette).abs() < 1e-9);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), layers in 1usize..8, hidden in 8usize..512, tau in 0.01f64..2.0, lv in 0usize..7, v in 0usize..3, lr in 1e-5f64..1e-1) {
        let mut cfg = RunConfig { seed, ..Default::default() };
        cfg.model.layers = layers;
        cfg.model.hidden = hidden;
        cfg.weights.tau = tau;
        cfg.adam.lr = lr;
        cfg.loss_variant = LossVariant::ALL[lv];
        cfg.variant = GraphVariant::ALL[v];
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..64), blob in prop::collection::vec(any::<u8>(), 0..64), hash in any::<u64>()) {
        let mut ck = Checkpoint { config_hash: hash, ..Default::default() };
        ck.meta.insert("kind".into(), "pretrain".into());
        ck.tensors.push(("w".into(), Tensor::new(1, values.len(), values.clone())));
        ck.blobs.push(("b".into(), blob));
        prop_assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }
}
