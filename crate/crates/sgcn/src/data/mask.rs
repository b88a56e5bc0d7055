//! Entity masking: hide the entity surface forms so the classifier cannot
//! memorize them, while exposing their types.

use crate::data::{DataError, RawExample};

/// Replaces every token inside the subject span with `SUBJ-<type>` and every
/// token inside the object span with `OBJ-<type>`; all other tokens pass
/// through unchanged (casing decisions happen at vocabulary time). Sequence
/// length and span indices are preserved.
pub fn mask_entities(ex: &RawExample) -> Result<Vec<String>, DataError> {
    ex.validate().map_err(|reason| DataError::BadRecord {
        id: ex.id.clone(),
        reason,
    })?;
    let overlap = ex.subj_start <= ex.obj_end && ex.obj_start <= ex.subj_end;
    if overlap {
        return Err(DataError::BadRecord {
            id: ex.id.clone(),
            reason: format!(
                "subject span {}..={} overlaps object span {}..={}",
                ex.subj_start, ex.subj_end, ex.obj_start, ex.obj_end
            ),
        });
    }
    let subj_token = format!("SUBJ-{}", ex.subj_type);
    let obj_token = format!("OBJ-{}", ex.obj_type);
    let masked = ex
        .tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            if (ex.subj_start..=ex.subj_end).contains(&i) {
                subj_token.clone()
            } else if (ex.obj_start..=ex.obj_end).contains(&i) {
                obj_token.clone()
            } else {
                tok.clone()
            }
        })
        .collect();
    Ok(masked)
}
