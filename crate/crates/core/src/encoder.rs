//! GIN encoder over batched hierarchical graphs, pooling, and the
//! prediction heads.
//!
//! One set of GIN weights processes every node type over the union of all
//! edge sets, messages flowing both ways along each edge. Layer `l`:
//!
//! ```text
//! h_l = MLP_l((1 + eps_l) * h_{l-1} + sum_{u ~ v} h_{l-1}[u])
//! MLP_l = Linear -> ReLU -> Linear
//! ```
//!
//! with `h_0` a linear embedding of the 15 input features. The output is
//! the jumping-knowledge sum `h_1 + ... + h_L`.
//!
//! Parameter names:
//!
//! | name                          | shape         |
//! |-------------------------------|---------------|
//! | `enc.input.w`, `enc.input.b`  | 15 x H, 1 x H |
//! | `enc.l<k>.eps`                | 1 x 1         |
//! | `enc.l<k>.w1/b1/w2/b2`        | H x H, 1 x H  |
//! | `enc.l<k>.gain/shift`         | 1 x H (norm)  |
//! | `head.proj.w1/b1/w2/b2`       | H x H, H x P  |
//! | `head.proj_b.*` (unshared)    | as above      |
//! | `head.frag.w/b`               | H x C         |
//! | `head.topo.w/b`               | H x D         |
//! | `head.ring.w/b`, `head.aro.*` | H x 9         |
//! | `head.bin.w/b`                | H x 3         |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chg::{CHGraph, FEATURE_DIM};
use crate::labels::MAX_RING_CLASS;
use crate::optim::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const RING_CLASSES: usize = MAX_RING_CLASS + 1;
pub const SCAFFOLD_FLAGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub proj_dim: usize,
    /// Per-layer standardization with learnable gain and shift.
    pub layer_norm: bool,
    /// Atom and bond views share one projection head.
    pub share_projection: bool,
    pub n_groups: usize,
    pub fp_bits: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 5,
            hidden: 300,
            dropout: 0.5,
            proj_dim: 128,
            layer_norm: false,
            share_projection: true,
            n_groups: 16,
            fp_bits: 2048,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers < 1 {
            return Err("layers must be at least 1".into());
        }
        if self.hidden < 8 {
            return Err("hidden must be at least 8".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must lie in [0, 1)".into());
        }
        if self.proj_dim == 0 || self.n_groups == 0 {
            return Err("proj_dim and n_groups must be positive".into());
        }
        if !self.fp_bits.is_power_of_two() || !(64..=4096).contains(&self.fp_bits) {
            return Err("fp_bits must be a power of two in 64..=4096".into());
        }
        Ok(())
    }
}

fn linear(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.insert_uniform(&format!("{name}.w"), fan_in, fan_out, fan_in, rng);
    p.insert_uniform(&format!("{name}.b"), 1, fan_out, fan_in, rng);
}

fn projection(p: &mut ParamStore, name: &str, h: usize, out: usize, rng: &mut impl Rng) {
    p.insert_uniform(&format!("{name}.w1"), h, h, h, rng);
    p.insert_uniform(&format!("{name}.b1"), 1, h, h, rng);
    p.insert_uniform(&format!("{name}.w2"), h, out, h, rng);
    p.insert_uniform(&format!("{name}.b2"), 1, out, h, rng);
}

/// Fresh encoder and pretraining-head parameters.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let h = cfg.hidden;
    let mut p = ParamStore::new();
    linear(&mut p, "enc.input", FEATURE_DIM, h, rng);
    for l in 0..cfg.layers {
        p.insert(&format!("enc.l{l}.eps"), Tensor::scalar(0.0));
        p.insert_uniform(&format!("enc.l{l}.w1"), h, h, h, rng);
        p.insert_uniform(&format!("enc.l{l}.b1"), 1, h, h, rng);
        p.insert_uniform(&format!("enc.l{l}.w2"), h, h, h, rng);
        p.insert_uniform(&format!("enc.l{l}.b2"), 1, h, h, rng);
        if cfg.layer_norm {
            p.insert(&format!("enc.l{l}.gain"), Tensor::row(vec![1.0; h]));
            p.insert(&format!("enc.l{l}.shift"), Tensor::zeros(1, h));
        }
    }
    projection(&mut p, "head.proj", h, cfg.proj_dim, rng);
    if !cfg.share_projection {
        projection(&mut p, "head.proj_b", h, cfg.proj_dim, rng);
    }
    linear(&mut p, "head.frag", h, cfg.n_groups, rng);
    linear(&mut p, "head.topo", h, cfg.fp_bits, rng);
    linear(&mut p, "head.ring", h, RING_CLASSES, rng);
    linear(&mut p, "head.aro", h, RING_CLASSES, rng);
    linear(&mut p, "head.bin", h, SCAFFOLD_FLAGS, rng);
    p
}

/// Node slots of one graph inside a [`Batch`], as global row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSlots {
    pub atoms: Vec<usize>,
    pub bonds: Vec<usize>,
    pub frags: Vec<usize>,
    pub graph: Option<usize>,
    /// Global rows of each fragment's atoms.
    pub frag_atoms: Vec<Vec<usize>>,
    /// Global rows of each fragment's intra-fragment bonds (empty without bond nodes).
    pub frag_bonds: Vec<Vec<usize>>,
    /// Intra-fragment bond counts, independent of whether bond nodes exist.
    pub frag_bond_counts: Vec<usize>,
}

/// Disjoint union of graphs with message-passing index lists.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n_nodes: usize,
    pub features: Tensor,
    /// Message sources and destinations, both directions of every edge.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub graphs: Vec<GraphSlots>,
}

impl Batch {
    pub fn new(graphs: &[&CHGraph]) -> Self {
        let n_nodes: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let mut data = Vec::with_capacity(n_nodes * FEATURE_DIM);
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut slots = Vec::with_capacity(graphs.len());
        let mut off = 0;
        for g in graphs {
            for row in &g.features {
                data.extend_from_slice(row);
            }
            for (u, v) in g.all_edges() {
                let (u, v) = (off + u as usize, off + v as usize);
                src.push(u);
                dst.push(v);
                src.push(v);
                dst.push(u);
            }
            let shift = |r: std::ops::Range<usize>| r.map(|i| off + i).collect::<Vec<_>>();
            let bond_off = off + g.bond_offset();
            slots.push(GraphSlots {
                atoms: shift(g.node_range(crate::chg::NodeType::Atom)),
                bonds: shift(g.node_range(crate::chg::NodeType::Bond)),
                frags: shift(g.node_range(crate::chg::NodeType::Fragment)),
                graph: g.graph_node().map(|i| off + i),
                frag_atoms: g.frag_atom_members.iter().map(|f| f.iter().map(|&a| off + a).collect()).collect(),
                frag_bonds: g
                    .frag_bond_members
                    .iter()
                    .map(|f| if g.n_bonds > 0 { f.iter().map(|&b| bond_off + b).collect() } else { Vec::new() })
                    .collect(),
                frag_bond_counts: g.frag_bond_members.iter().map(|f| f.len()).collect(),
            });
            off += g.n_nodes();
        }
        Batch {
            n_nodes,
            features: Tensor::new(n_nodes, FEATURE_DIM, data),
            src,
            dst,
            graphs: slots,
        }
    }
}

/// `x W + b` using parameters `<name>.w` and `<name>.b`.
pub fn apply_linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, TensorError> {
    let y = tape.matmul(x, p.var(&format!("{name}.w")))?;
    tape.add_row(y, p.var(&format!("{name}.b")))
}

fn mlp2(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, TensorError> {
    let (w1, b1) = (p.var(&format!("{name}.w1")), p.var(&format!("{name}.b1")));
    let (w2, b2) = (p.var(&format!("{name}.w2")), p.var(&format!("{name}.b2")));
    let y = tape.matmul(x, w1)?;
    let y = tape.add_row(y, b1)?;
    let y = tape.relu(y);
    let y = tape.matmul(y, w2)?;
    tape.add_row(y, b2)
}

/// Node embeddings after the jumping-knowledge sum, `n_nodes x hidden`.
/// Dropout is applied only when `train` is set.
pub fn encode(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, batch: &Batch, train: bool, rng: &mut impl Rng) -> Result<Var, TensorError> {
    let x = tape.constant(batch.features.clone());
    let mut h = apply_linear(tape, p, "enc.input", x)?;
    let mut jk: Option<Var> = None;
    for l in 0..cfg.layers {
        let name = format!("enc.l{l}");
        let msgs = tape.gather_rows(h, &batch.src)?;
        let agg = tape.segment_sum(msgs, &batch.dst, batch.n_nodes)?;
        let eh = tape.scale_by(h, p.var(&format!("{name}.eps")))?;
        let self_term = tape.add(h, eh)?;
        let pre = tape.add(self_term, agg)?;
        let mut out = mlp2(tape, p, &name, pre)?;
        if cfg.layer_norm {
            out = tape.layer_norm_rows(out);
            out = tape.mul_row(out, p.var(&format!("{name}.gain")))?;
            out = tape.add_row(out, p.var(&format!("{name}.shift")))?;
        }
        if train {
            out = tape.dropout(out, cfg.dropout, rng)?;
        }
        jk = Some(match jk {
            None => out,
            Some(s) => tape.add(s, out)?,
        });
        h = out;
    }
    Ok(jk.expect("at least one layer"))
}

/// Mean of the listed rows per group, `groups x cols`; empty groups give zeros.
pub fn pool_mean(tape: &mut Tape, emb: Var, groups: &[Vec<usize>]) -> Result<Var, TensorError> {
    let idx: Vec<usize> = groups.iter().flatten().copied().collect();
    let seg: Vec<usize> = groups.iter().enumerate().flat_map(|(g, rows)| std::iter::repeat_n(g, rows.len())).collect();
    let gathered = tape.gather_rows(emb, &idx)?;
    let sums = tape.segment_sum(gathered, &seg, groups.len())?;
    let w: Vec<f64> = groups.iter().map(|r| if r.is_empty() { 0.0 } else { 1.0 / r.len() as f64 }).collect();
    tape.scale_rows(sums, &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolType {
    Atom,
    Bond,
    Fragment,
}

/// Per-graph mean over one node type, `graphs x hidden`.
pub fn pool_by_type(tape: &mut Tape, emb: Var, batch: &Batch, t: PoolType) -> Result<Var, TensorError> {
    let groups: Vec<Vec<usize>> = batch
        .graphs
        .iter()
        .map(|g| match t {
            PoolType::Atom => g.atoms.clone(),
            PoolType::Bond => g.bonds.clone(),
            PoolType::Fragment => g.frags.clone(),
        })
        .collect();
    pool_mean(tape, emb, &groups)
}

/// Graph-node rows, zeros for graphs without a graph node.
pub fn graph_rows(tape: &mut Tape, emb: Var, batch: &Batch) -> Result<Var, TensorError> {
    let groups: Vec<Vec<usize>> = batch.graphs.iter().map(|g| g.graph.into_iter().collect()).collect();
    pool_mean(tape, emb, &groups)
}

/// Contrastive projection head; `second` selects the bond-view head when unshared.
pub fn project_contrastive(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, x: Var, second: bool) -> Result<Var, TensorError> {
    let name = if second && !cfg.share_projection { "head.proj_b" } else { "head.proj" };
    mlp2(tape, p, name, x)
}

pub fn predict_frag(tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, TensorError> {
    apply_linear(tape, p, "head.frag", x)
}

pub fn predict_topo(tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, TensorError> {
    apply_linear(tape, p, "head.topo", x)
}

/// Ring-count, aromatic-ring-count and binary-flag logits.
pub fn predict_scaffold(tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var, Var), TensorError> {
    Ok((
        apply_linear(tape, p, "head.ring", x)?,
        apply_linear(tape, p, "head.aro", x)?,
        apply_linear(tape, p, "head.bin", x)?,
    ))
}

/// Finetuning readout: per graph, atom mean ‖ bond mean ‖ fragment mean ‖ graph node.
pub fn readout(tape: &mut Tape, emb: Var, batch: &Batch) -> Result<Var, TensorError> {
    let a = pool_by_type(tape, emb, batch, PoolType::Atom)?;
    let b = pool_by_type(tape, emb, batch, PoolType::Bond)?;
    let f = pool_by_type(tape, emb, batch, PoolType::Fragment)?;
    let g = graph_rows(tape, emb, batch)?;
    tape.concat_cols(&[a, b, f, g])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chg::build_chg;
    use crate::perception::perceive;
    use crate::smiles::parse_smiles;
    use crate::vocab::Decomposition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 8,
            dropout: 0.0,
            proj_dim: 4,
            n_groups: 16,
            fp_bits: 64,
            ..Default::default()
        }
    }

    fn chg(s: &str) -> CHGraph {
        let pm = perceive(&parse_smiles(s).unwrap()).unwrap();
        let d = Decomposition::components(&pm.base);
        build_chg(&pm, &d).unwrap()
    }

    #[test]
    fn shapes() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init_params(&cfg, &mut rng);
        let (g1, g2) = (chg("CCO"), chg("C"));
        let batch = Batch::new(&[&g1, &g2]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let emb = encode(&mut tape, &p, &cfg, &batch, false, &mut rng).unwrap();
        assert_eq!(tape.shape(emb), (7 + 3, 8));
        let r = readout(&mut tape, emb, &batch).unwrap();
        assert_eq!(tape.shape(r), (2, 32));
        // methane has no bonds: its bond pool is zero
        let bonds = pool_by_type(&mut tape, emb, &batch, PoolType::Bond).unwrap();
        assert!(tape.value(bonds).row_slice(1).iter().all(|&x| x == 0.0));
        assert!(matches!(predict_scaffold(&mut tape, &p, r), Err(TensorError::ShapeMismatch { .. })));
        let g = graph_rows(&mut tape, emb, &batch).unwrap();
        let (ring, _, bin) = predict_scaffold(&mut tape, &p, g).unwrap();
        assert_eq!(tape.shape(ring), (2, RING_CLASSES));
        assert_eq!(tape.shape(bin), (2, SCAFFOLD_FLAGS));
        let topo = predict_topo(&mut tape, &p, g).unwrap();
        assert_eq!(tape.shape(topo), (2, 64));
    }

    #[test]
    fn pool_mean_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 5.0]]));
        let m = pool_mean(&mut tape, x, &[vec![0, 1], vec![], vec![2, 2]]).unwrap();
        assert_eq!(tape.value(m).data, vec![2.0, 4.0, 0.0, 0.0, 5.0, 5.0]);
    }

    #[test]
    fn single_node_graph_uses_self_term_only() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_params(&cfg, &mut rng);
        let pm = perceive(&parse_smiles("C").unwrap()).unwrap();
        let g = crate::chg::build_chg_variant(&pm, &Decomposition::singletons(&pm.base), crate::chg::GraphVariant::AtomGraph).unwrap();
        let batch = Batch::new(&[&g]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let emb = encode(&mut tape, &p, &cfg, &batch, false, &mut rng).unwrap();

        // hand cascade with eps = 0
        let mut h = batch.features.matmul(params.get("enc.input.w").unwrap());
        add_bias(&mut h, params.get("enc.input.b").unwrap());
        let mut sum = vec![0.0; 8];
        for l in 0..2 {
            let mut y = h.matmul(params.get(&format!("enc.l{l}.w1")).unwrap());
            add_bias(&mut y, params.get(&format!("enc.l{l}.b1")).unwrap());
            y.data.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut z = y.matmul(params.get(&format!("enc.l{l}.w2")).unwrap());
            add_bias(&mut z, params.get(&format!("enc.l{l}.b2")).unwrap());
            sum.iter_mut().zip(&z.data).for_each(|(s, v)| *s += v);
            h = z;
        }
        for (a, b) in tape.value(emb).data.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn add_bias(t: &mut Tensor, b: &Tensor) {
        let c = t.cols;
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v += b.data[i % c]);
    }

    #[test]
    fn dropout_off_is_deterministic() {
        let cfg = ModelConfig { dropout: 0.5, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = init_params(&cfg, &mut rng);
        let g = chg("c1ccccc1O");
        let batch = Batch::new(&[&g]);
        let run = |train: bool, seed: u64| {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let e = encode(&mut tape, &p, &cfg, &batch, train, &mut r).unwrap();
            tape.value(e).clone()
        };
        assert_eq!(run(false, 1), run(false, 2));
        assert_ne!(run(true, 1), run(true, 2));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { layers: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { hidden: 4, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { fp_bits: 100, ..Default::default() }.validate().is_err());
    }
}
