//! Self-determined adjacency and graph propagation.
//!
//! Entry (u, v) of an adjacency matrix is the strength of the edge from
//! source u to target v: column v collects everything flowing into node v.
//! Scores are bilinear in the node states, scaled by 1/sqrt(d).

use crate::autodiff::{ParamStore, Tape, VarId};
use crate::model::{AdjacencyMode, Dropout, LayerIds, ModelError};
use crate::scalar::Scalar;

/// Denominator guard for mean normalization: a fully relu-masked column
/// divides by this instead of 0 and stays an all-zero column.
pub const EPS_DEN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Test hook: propagation without the nonlinearity.
    Identity,
}

/// Computes one head's `[n × n]` adjacency from node states `z` (`[n × d]`).
///
/// Raw score: (K z_u) . (Q z_v) / sqrt(d). In relu-mean mode negative scores
/// are cut to exact zeros and each column is divided by its sum (plus
/// [`EPS_DEN`]); in softmax mode each column is soft-maxed over valid source
/// rows, so no valid entry can reach zero. Rows and columns at masked
/// positions are exactly zero in both modes.
pub fn self_determined_adjacency<S: Scalar>(
    tape: &mut Tape<S>,
    z: VarId,
    att_k: VarId,
    att_q: VarId,
    mask: &[bool],
    mode: AdjacencyMode,
) -> Result<VarId, ModelError> {
    let d = tape.shape(z)[1];
    let src = tape.matmul(z, att_k, false, true)?; // row u holds K z_u
    let dst = tape.matmul(z, att_q, false, true)?; // row v holds Q z_v
    let scores = tape.matmul(src, dst, false, true)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let adj = match mode {
        AdjacencyMode::ReluMean => {
            let cut = tape.relu(scaled)?;
            let masked = tape.mask_matrix(cut, mask)?;
            tape.normalize_columns(masked, EPS_DEN)?
        }
        AdjacencyMode::Softmax => {
            let sm = tape.softmax_columns(scaled, mask)?;
            // The softmax already zeroes masked sources; this clears the
            // columns of masked targets as well.
            tape.mask_matrix(sm, mask)?
        }
    };
    Ok(adj)
}

/// One graph convolution: out_v = act( sum_u A(u, v) (W z_u + b) ).
pub fn gcn_propagate<S: Scalar>(
    tape: &mut Tape<S>,
    z: VarId,
    adj: VarId,
    gcn_w: VarId,
    gcn_b: VarId,
    activation: Activation,
) -> Result<VarId, ModelError> {
    let projected = tape.matmul(z, gcn_w, false, false)?;
    let shifted = tape.add_row_vec(projected, gcn_b)?;
    let mixed = tape.matmul(adj, shifted, true, false)?;
    Ok(match activation {
        Activation::Relu => tape.relu(mixed)?,
        Activation::Identity => mixed,
    })
}

/// One full layer: every head determines its own graph, propagates through
/// it, and the per-head outputs are concatenated back to width d. Dropout
/// (when given) hits the concatenated output; padded rows are re-zeroed
/// afterwards. Also returns each head's adjacency for export and inspection.
pub fn sgcn_layer<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    z: VarId,
    layer: &LayerIds,
    mask: &[bool],
    mode: AdjacencyMode,
    mut dropout: Option<&mut Dropout>,
) -> Result<(VarId, Vec<VarId>), ModelError> {
    let mut outputs = Vec::with_capacity(layer.heads.len());
    let mut adjacencies = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let att_k = tape.param(store, head.att_k);
        let att_q = tape.param(store, head.att_q);
        let gcn_w = tape.param(store, head.gcn_w);
        let gcn_b = tape.param(store, head.gcn_b);
        let adj = self_determined_adjacency(tape, z, att_k, att_q, mask, mode)?;
        let out = gcn_propagate(tape, z, adj, gcn_w, gcn_b, Activation::Relu)?;
        adjacencies.push(adj);
        outputs.push(out);
    }
    let mut combined = tape.concat_cols(&outputs)?;
    if let Some(dp) = dropout.as_deref_mut() {
        combined = dp.apply(tape, combined)?;
    }
    let combined = tape.mask_rows(combined, mask)?;
    Ok((combined, adjacencies))
}
