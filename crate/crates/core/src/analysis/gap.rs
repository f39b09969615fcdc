use crate::model::{Batch, Model};
use crate::Result;

/// Training accuracy minus test accuracy.
pub fn generalization_gap(model: &Model, w: &[f64], train: &Batch, test: &Batch) -> Result<f64> {
    Ok(model.accuracy(w, train)? - model.accuracy(w, test)?)
}
