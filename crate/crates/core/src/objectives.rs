//! Pretraining losses.
//!
//! * `L_ab`: symmetric NT-Xent between the atom view and the bond view of
//!   every valid fragment in the mini-batch (at least two atoms and one
//!   intra-fragment bond). Fragments of other molecules are negatives too.
//! * `L_frag`: functional-group BCE on fragment nodes, summed over classes
//!   and averaged over valid fragments.
//! * `L_topo`: fingerprint BCE on the graph node, averaged over bits.
//! * `L_scaf`: ring-count CE + aromatic-ring-count CE + mean BCE over the
//!   fused / heterocyclic / bridged flags, on the graph node.
//!
//! Binary cross-entropy on a logit `z` with label `y` is computed as
//! `softplus(z) - y z`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::chg::GraphVariant;
use crate::encoder::{graph_rows, pool_mean, predict_frag, predict_scaffold, predict_topo, project_contrastive, Batch, ModelConfig};
use crate::labels::{PretrainTargets, ScaffoldLabels};
use crate::optim::Bound;
use crate::tensor::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ab: f64,
    pub frag: f64,
    pub topo: f64,
    pub scaf: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ab: 0.2,
            frag: 0.4,
            topo: 0.4,
            scaf: 0.4,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if [self.ab, self.frag, self.topo, self.scaf].iter().any(|&w| w.is_nan() || w < 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err("temperature must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ab,
    Frag,
    Topo,
    Scaf,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Ab, LossKind::Frag, LossKind::Topo, LossKind::Scaf];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ab => "L_ab",
            LossKind::Frag => "L_frag",
            LossKind::Topo => "L_topo",
            LossKind::Scaf => "L_scaf",
        }
    }
}

/// Losses with positive weight whose inputs exist in the graph variant.
pub fn active_losses(variant: GraphVariant, w: &LossWeights) -> Vec<LossKind> {
    LossKind::ALL
        .into_iter()
        .filter(|k| match k {
            LossKind::Ab => w.ab > 0.0 && variant.has_bonds(),
            LossKind::Frag => w.frag > 0.0 && variant.has_hierarchy(),
            LossKind::Topo => w.topo > 0.0 && variant.has_hierarchy(),
            LossKind::Scaf => w.scaf > 0.0 && variant.has_hierarchy(),
        })
        .collect()
}

/// `(graph, fragment)` pairs that have both an atom view and a bond view.
pub fn valid_fragments(batch: &Batch) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (g, slots) in batch.graphs.iter().enumerate() {
        for f in 0..slots.frag_atoms.len() {
            if slots.frag_atoms[f].len() >= 2 && slots.frag_bond_counts[f] >= 1 {
                out.push((g, f));
            }
        }
    }
    out
}

/// Projected atom-view and bond-view summaries, one row per valid fragment.
pub struct FragmentViews {
    pub za: Var,
    pub zb: Var,
    pub members: Vec<(usize, usize)>,
}

/// `None` when the batch has no bond nodes or no valid fragment.
pub fn fragment_views(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, emb: Var, batch: &Batch) -> Result<Option<FragmentViews>> {
    let members = valid_fragments(batch);
    if members.is_empty() || members.iter().any(|&(g, f)| batch.graphs[g].frag_bonds[f].is_empty()) {
        return Ok(None);
    }
    let atom_groups: Vec<Vec<usize>> = members.iter().map(|&(g, f)| batch.graphs[g].frag_atoms[f].clone()).collect();
    let bond_groups: Vec<Vec<usize>> = members.iter().map(|&(g, f)| batch.graphs[g].frag_bonds[f].clone()).collect();
    let pa = pool_mean(tape, emb, &atom_groups)?;
    let pb = pool_mean(tape, emb, &bond_groups)?;
    let za = project_contrastive(tape, p, cfg, pa, false)?;
    let zb = project_contrastive(tape, p, cfg, pb, true)?;
    Ok(Some(FragmentViews { za, zb, members }))
}

/// Symmetric NT-Xent over `N` paired rows of `za` and `zb`.
pub fn loss_ab(tape: &mut Tape, za: Var, zb: Var, tau: f64) -> Result<Var> {
    let (n, _) = tape.shape(za);
    if tape.shape(za) != tape.shape(zb) {
        return Err(TensorError::ShapeMismatch {
            op: "loss_ab",
            lhs: tape.shape(za),
            rhs: tape.shape(zb),
        });
    }
    let na = tape.l2_normalize_rows(za);
    let nb = tape.l2_normalize_rows(zb);
    let nbt = tape.transpose(nb);
    let sim = tape.matmul(na, nbt)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let diag: Vec<usize> = (0..n).collect();
    let pos = tape.select_per_row(sim, &diag)?;
    let pos = tape.sum(pos);
    let lse_ab = tape.log_sum_exp_rows(sim);
    let lse_ab = tape.sum(lse_ab);
    let simt = tape.transpose(sim);
    let lse_ba = tape.log_sum_exp_rows(simt);
    let lse_ba = tape.sum(lse_ba);
    let both = tape.add(lse_ab, lse_ba)?;
    let pos2 = tape.scale(pos, 2.0);
    let total = tape.sub(both, pos2)?;
    Ok(tape.scale(total, 1.0 / (2.0 * n as f64)))
}

/// Elementwise `softplus(z) - y z`.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &Tensor) -> Result<Var> {
    if tape.shape(logits) != labels.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_with_logits",
            lhs: tape.shape(logits),
            rhs: labels.shape(),
        });
    }
    let y = tape.constant(labels.clone());
    let sp = tape.softplus(logits);
    let yz = tape.mul(y, logits)?;
    tape.sub(sp, yz)
}

/// `(1/|F|) sum_f sum_c BCE`.
pub fn loss_frag(tape: &mut Tape, logits: Var, labels: &Tensor) -> Result<Var> {
    let rows = labels.rows.max(1) as f64;
    let b = bce_with_logits(tape, logits, labels)?;
    let s = tape.sum(b);
    Ok(tape.scale(s, 1.0 / rows))
}

/// BCE averaged over bits (and over the molecules of a batch).
pub fn loss_topo(tape: &mut Tape, logits: Var, labels: &Tensor) -> Result<Var> {
    let b = bce_with_logits(tape, logits, labels)?;
    Ok(tape.mean(b))
}

/// Summed softmax cross-entropy of rows against class indices.
pub fn cross_entropy_sum(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let lse = tape.log_sum_exp_rows(logits);
    let lse = tape.sum(lse);
    let picked = tape.select_per_row(logits, targets)?;
    let picked = tape.sum(picked);
    tape.sub(lse, picked)
}

/// `L_ring + L_aro + L_bin`, averaged over the molecules of a batch.
pub fn loss_scaf(tape: &mut Tape, ring: Var, aro: Var, bin: Var, targets: &[ScaffoldLabels]) -> Result<Var> {
    let b = targets.len().max(1) as f64;
    let clamp = |c: usize| c.min(crate::labels::MAX_RING_CLASS);
    let ring_t: Vec<usize> = targets.iter().map(|t| clamp(t.ring_class)).collect();
    let aro_t: Vec<usize> = targets.iter().map(|t| clamp(t.aromatic_class)).collect();
    let flags = Tensor::new(targets.len(), 3, targets.iter().flat_map(|t| t.flags.iter().map(|&f| f as f64)).collect());
    let ce_ring = cross_entropy_sum(tape, ring, &ring_t)?;
    let ce_aro = cross_entropy_sum(tape, aro, &aro_t)?;
    let bce = bce_with_logits(tape, bin, &flags)?;
    let bce = tape.sum(bce);
    let bce = tape.scale(bce, 1.0 / 3.0);
    let s = tape.add(ce_ring, ce_aro)?;
    let s = tape.add(s, bce)?;
    Ok(tape.scale(s, 1.0 / b))
}

/// Component losses on the tape; absent terms were skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub ab: Option<Var>,
    pub frag: Option<Var>,
    pub topo: Option<Var>,
    pub scaf: Option<Var>,
}

impl LossTerms {
    pub fn get(&self, k: LossKind) -> Option<Var> {
        match k {
            LossKind::Ab => self.ab,
            LossKind::Frag => self.frag,
            LossKind::Topo => self.topo,
            LossKind::Scaf => self.scaf,
        }
    }
}

/// `λ_ab L_ab + λ_frag L_frag + λ_topo L_topo + λ_scaf L_scaf`; absent terms count 0.
pub fn loss_total(tape: &mut Tape, terms: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (k, lambda) in [(LossKind::Ab, w.ab), (LossKind::Frag, w.frag), (LossKind::Topo, w.topo), (LossKind::Scaf, w.scaf)] {
        if let Some(v) = terms.get(k) {
            let s = tape.scale(v, lambda);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// All active pretraining losses for one encoded batch.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_losses(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    w: &LossWeights,
    variant: GraphVariant,
    emb: Var,
    batch: &Batch,
    targets: &[&PretrainTargets],
) -> Result<LossTerms> {
    let active = active_losses(variant, w);
    let mut terms = LossTerms::default();
    if active.contains(&LossKind::Ab) {
        match fragment_views(tape, p, cfg, emb, batch)? {
            Some(v) => terms.ab = Some(loss_ab(tape, v.za, v.zb, w.tau)?),
            None => warn!("no valid fragments in batch; L_ab skipped"),
        }
    }
    if active.contains(&LossKind::Frag) {
        let members = valid_fragments(batch);
        if members.is_empty() {
            warn!("no valid fragments in batch; L_frag skipped");
        } else {
            let rows: Vec<usize> = members.iter().map(|&(g, f)| batch.graphs[g].frags[f]).collect();
            let x = tape.gather_rows(emb, &rows)?;
            let logits = predict_frag(tape, p, x)?;
            let labels: Vec<Vec<f64>> = members.iter().map(|&(g, f)| targets[g].frag_fg[f].iter().map(|&b| b as f64).collect()).collect();
            terms.frag = Some(loss_frag(tape, logits, &Tensor::from_rows(&labels))?);
        }
    }
    if active.contains(&LossKind::Topo) || active.contains(&LossKind::Scaf) {
        let g = graph_rows(tape, emb, batch)?;
        if active.contains(&LossKind::Topo) {
            let logits = predict_topo(tape, p, g)?;
            let labels: Vec<Vec<f64>> = targets.iter().map(|t| t.topo_fp.iter().map(|&b| b as f64).collect()).collect();
            terms.topo = Some(loss_topo(tape, logits, &Tensor::from_rows(&labels))?);
        }
        if active.contains(&LossKind::Scaf) {
            let (ring, aro, bin) = predict_scaffold(tape, p, g)?;
            let labels: Vec<ScaffoldLabels> = targets.iter().map(|t| t.scaffold).collect();
            terms.scaf = Some(loss_scaf(tape, ring, aro, bin, &labels)?);
        }
    }
    Ok(terms)
}
