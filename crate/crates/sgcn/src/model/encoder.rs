//! Bidirectional LSTM over the embedded token features.
//!
//! Each direction owns half the hidden width. The recurrence touches only
//! the first `length` positions; padded positions contribute exactly zero
//! rows, so batch padding cannot leak into any state.

use crate::autodiff::{ParamStore, Tape, VarId};
use crate::model::{LstmCellIds, ModelError};
use crate::scalar::Scalar;

/// One direction. `reverse` runs the recurrence from the last valid position
/// toward the front; the returned row list is always in sequence order.
fn lstm_direction<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    x: VarId,
    length: usize,
    cell: &LstmCellIds,
    reverse: bool,
) -> Result<Vec<VarId>, ModelError> {
    let n = tape.shape(x)[0];
    let h_dim = store.get(cell.w_hh).shape()[0];
    let w_ih = tape.param(store, cell.w_ih);
    let w_hh = tape.param(store, cell.w_hh);
    let b = tape.param(store, cell.b);

    let zero_row = tape.constant(vec![1, h_dim], vec![S::zero(); h_dim])?;
    let mut h = zero_row;
    let mut c = zero_row;
    let mut rows = vec![zero_row; n];
    let steps: Vec<usize> = if reverse {
        (0..length).rev().collect()
    } else {
        (0..length).collect()
    };
    for t in steps {
        let x_t = tape.slice_rows(x, t, t + 1)?;
        let from_input = tape.matmul(x_t, w_ih, false, false)?;
        let from_state = tape.matmul(h, w_hh, false, false)?;
        let pre = tape.add(from_input, from_state)?;
        let gates = tape.add_row_vec(pre, b)?;

        let i_gate = tape.slice_cols(gates, 0, h_dim)?;
        let f_gate = tape.slice_cols(gates, h_dim, 2 * h_dim)?;
        let g_cand = tape.slice_cols(gates, 2 * h_dim, 3 * h_dim)?;
        let o_gate = tape.slice_cols(gates, 3 * h_dim, 4 * h_dim)?;
        let i_gate = tape.sigmoid(i_gate)?;
        let f_gate = tape.sigmoid(f_gate)?;
        let g_cand = tape.tanh(g_cand)?;
        let o_gate = tape.sigmoid(o_gate)?;

        let keep = tape.mul(f_gate, c)?;
        let write = tape.mul(i_gate, g_cand)?;
        c = tape.add(keep, write)?;
        let c_act = tape.tanh(c)?;
        h = tape.mul(o_gate, c_act)?;
        rows[t] = h;
    }
    Ok(rows)
}

/// Encodes `x` (`[n × input_dim]`) into `[n × 2H]`: forward-direction state
/// beside backward-direction state per position. Rows at positions `>=
/// length` are exactly zero.
pub fn bilstm_encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    x: VarId,
    length: usize,
    fw: &LstmCellIds,
    bw: &LstmCellIds,
) -> Result<VarId, ModelError> {
    let n = tape.shape(x)[0];
    if length == 0 || length > n {
        return Err(ModelError::EmptySequence);
    }
    let fw_rows = lstm_direction(tape, store, x, length, fw, false)?;
    let bw_rows = lstm_direction(tape, store, x, length, bw, true)?;
    let fw_stack = tape.concat_rows(&fw_rows)?;
    let bw_stack = tape.concat_rows(&bw_rows)?;
    Ok(tape.concat_cols(&[fw_stack, bw_stack])?)
}
