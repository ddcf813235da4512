//! Deletion-based faithfulness of a rationale to the model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{argmax, predict, Parameters};
use crate::textproc::Encoding;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    /// Drop in the predicted class's probability when the rationale is removed.
    pub comprehensiveness: f64,
    /// Drop when only the rationale is kept.
    pub sufficiency: f64,
}

/// `rationale` holds encoding positions. `full` is the model's probability
/// vector on the intact input.
pub fn faithfulness(
    params: &Parameters,
    enc: &Encoding,
    full: &[f64],
    rationale: &BTreeSet<usize>,
) -> Result<Faithfulness> {
    let y = argmax(full);
    let content: BTreeSet<usize> = enc.content_positions().collect();
    let inside: BTreeSet<usize> = rationale.intersection(&content).copied().collect();

    // Deleting nothing reproduces the intact input, so those drops are 0.
    let comprehensiveness = if inside.is_empty() {
        0.0
    } else {
        let rest: BTreeSet<usize> = content.difference(&inside).copied().collect();
        full[y] - predict(params, &enc.retain_content(&rest))?.1[y]
    };
    let sufficiency = if inside.len() == content.len() {
        0.0
    } else {
        full[y] - predict(params, &enc.retain_content(&inside))?.1[y]
    };
    Ok(Faithfulness { comprehensiveness, sufficiency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::textproc::{CLS, PAD, SEP};

    #[test]
    fn trivial_rationales() {
        let mut c = ModelConfig::desk(12, 2);
        c.d_model = 8;
        c.n_heads = 2;
        c.d_ff = 8;
        c.max_len = 6;
        let p = init_model(&c).unwrap();
        let enc = Encoding {
            ids: vec![CLS, 5, 6, 7, SEP, PAD],
            padding_mask: vec![1, 1, 1, 1, 1, 0],
            content_mask: vec![0, 1, 1, 1, 0, 0],
            offsets: vec![None; 6],
            word_index: vec![None, Some(0), Some(1), Some(2), None, None],
        };
        let full = predict(&p, &enc).unwrap().1;
        let f = faithfulness(&p, &enc, &full, &BTreeSet::new()).unwrap();
        assert_eq!(f.comprehensiveness, 0.0);
        let all: BTreeSet<usize> = [1, 2, 3].into();
        let f = faithfulness(&p, &enc, &full, &all).unwrap();
        assert_eq!(f.sufficiency, 0.0);
        let y = argmax(&full);
        let empty = enc.retain_content(&BTreeSet::new());
        assert_eq!(f.comprehensiveness, full[y] - predict(&p, &empty).unwrap().1[y]);
        let f = faithfulness(&p, &enc, &full, &[2].into()).unwrap();
        let only = predict(&p, &enc.retain_content(&[2].into())).unwrap().1;
        assert_eq!(f.sufficiency, full[y] - only[y]);
    }
}
