//! Graph isomorphism network over categorical atom and bond features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, TensorError, Var};
use crate::molio::{BondDirection, BondType, Chirality, FeatureGraph};
use crate::nn::{xavier, Mlp};

/// Rows of the atom table: atomic numbers 1..=118 plus an unused row 0.
pub const ATOM_VOCAB: usize = 119;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GinConfig {
    pub hidden: usize,
    pub layers: usize,
    pub readout: Readout,
}

impl Default for GinConfig {
    fn default() -> Self {
        GinConfig {
            hidden: 300,
            layers: 5,
            readout: Readout::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("graph {graph}: {what} index {index} outside 0..{limit}")]
    Feature {
        graph: usize,
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("graph {0} has no atoms")]
    EmptyGraph(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Several graphs concatenated into one disjoint union.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphBatch {
    pub atom: Vec<usize>,
    pub chirality: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub bond_type: Vec<usize>,
    pub bond_dir: Vec<usize>,
    /// Graph index of every node.
    pub graph_of: Vec<usize>,
    pub node_counts: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&FeatureGraph]) -> Result<Self, EncoderError> {
        let mut b = GraphBatch::default();
        for (gi, g) in graphs.iter().enumerate() {
            if g.nodes.is_empty() {
                return Err(EncoderError::EmptyGraph(gi));
            }
            let offset = b.atom.len();
            let check = |what, index: usize, limit| {
                if index >= limit {
                    Err(EncoderError::Feature {
                        graph: gi,
                        what,
                        index,
                        limit,
                    })
                } else {
                    Ok(index)
                }
            };
            for &[z, c] in &g.nodes {
                if z == 0 {
                    return Err(EncoderError::Feature {
                        graph: gi,
                        what: "atomic number",
                        index: 0,
                        limit: ATOM_VOCAB,
                    });
                }
                b.atom.push(check("atomic number", z, ATOM_VOCAB)?);
                b.chirality.push(check("chirality", c, Chirality::COUNT)?);
                b.graph_of.push(gi);
            }
            for (&[s, d], &[t, dir]) in g.edges.iter().zip(&g.edge_features) {
                b.src.push(offset + check("edge source", s, g.nodes.len())?);
                b.dst.push(offset + check("edge target", d, g.nodes.len())?);
                b.bond_type.push(check("bond type", t, BondType::COUNT)?);
                b.bond_dir
                    .push(check("bond direction", dir, BondDirection::COUNT)?);
            }
            b.node_counts.push(g.nodes.len());
        }
        Ok(b)
    }

    pub fn num_graphs(&self) -> usize {
        self.node_counts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.atom.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GinLayer {
    pub bond_type: ParamId,
    pub bond_dir: ParamId,
    pub mlp: Mlp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GinEncoder {
    pub config: GinConfig,
    pub atom: ParamId,
    pub chirality: ParamId,
    pub layers: Vec<GinLayer>,
}

impl GinEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, config: GinConfig, rng: &mut R) -> Self {
        let d = config.hidden;
        let atom = store.add("encoder.atom_emb", xavier(rng, ATOM_VOCAB, d));
        let chirality = store.add("encoder.chirality_emb", xavier(rng, Chirality::COUNT, d));
        let layers = (0..config.layers)
            .map(|l| GinLayer {
                bond_type: store.add(
                    format!("encoder.{l}.bond_type_emb"),
                    xavier(rng, BondType::COUNT, d),
                ),
                bond_dir: store.add(
                    format!("encoder.{l}.bond_dir_emb"),
                    xavier(rng, BondDirection::COUNT, d),
                ),
                mlp: Mlp::new(store, &format!("encoder.{l}.mlp"), &[d, 2 * d, d], rng),
            })
            .collect();
        GinEncoder {
            config,
            atom,
            chirality,
            layers,
        }
    }

    /// `h0[u] = atom_emb[z_u] + chirality_emb[c_u]`.
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
    ) -> Result<Var, TensorError> {
        let atom = tape.param(store, self.atom);
        let chir = tape.param(store, self.chirality);
        let a = tape.gather_rows(atom, &batch.atom)?;
        let c = tape.gather_rows(chir, &batch.chirality)?;
        tape.add(a, c)
    }

    /// One message-passing round: `MLP(h_u + sum_v relu(h_v + bond_emb(v->u)))`, followed by
    /// ReLU on all but the last layer.
    pub fn layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        batch: &GraphBatch,
        l: usize,
    ) -> Result<Var, TensorError> {
        let spec = &self.layers[l];
        let n = batch.num_nodes();
        let agg_in = if batch.src.is_empty() {
            h
        } else {
            let bt = tape.param(store, spec.bond_type);
            let bd = tape.param(store, spec.bond_dir);
            let et = tape.gather_rows(bt, &batch.bond_type)?;
            let ed = tape.gather_rows(bd, &batch.bond_dir)?;
            let hv = tape.gather_rows(h, &batch.src)?;
            let m = tape.add(hv, et)?;
            let m = tape.add(m, ed)?;
            let m = tape.relu(m);
            let agg = tape.scatter_add_rows(m, &batch.dst, n)?;
            tape.add(h, agg)?
        };
        let out = spec.mlp.forward(tape, store, agg_in)?;
        Ok(if l + 1 < self.layers.len() {
            tape.relu(out)
        } else {
            out
        })
    }

    /// Pools node states into one row per graph.
    pub fn readout(&self, tape: &mut Tape, h: Var, batch: &GraphBatch) -> Result<Var, TensorError> {
        let pooled = tape.scatter_add_rows(h, &batch.graph_of, batch.num_graphs())?;
        match self.config.readout {
            Readout::Sum => Ok(pooled),
            Readout::Mean => {
                let inv: Vec<f64> = batch.node_counts.iter().map(|&c| 1.0 / c as f64).collect();
                tape.scale_rows(pooled, &inv)
            }
        }
    }

    /// Graph representations `h_G`, one row per graph.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
    ) -> Result<Var, TensorError> {
        let mut h = self.embed(tape, store, batch)?;
        for l in 0..self.layers.len() {
            h = self.layer(tape, store, h, batch, l)?;
        }
        self.readout(tape, h, batch)
    }
}
