use super::train::MetaModel;
use crate::error::{Error, Result};
use crate::raster::ScoreMap;
use crate::segments::ComponentRecord;

/// Zeroes the scores of components the model flags as false positives.
///
/// `rows[i]` holds the unstandardized metrics of `comps[i]`. A component is
/// removed when its predicted probability is at least `decision_threshold`;
/// the others are returned unchanged.
pub fn remove_false_positives(
    score: &ScoreMap,
    comps: &[ComponentRecord],
    model: &MetaModel,
    rows: &[Vec<f64>],
    decision_threshold: f64,
) -> Result<(ScoreMap, Vec<ComponentRecord>)> {
    if rows.len() != comps.len() {
        return Err(Error::invalid(format!(
            "{} metric rows for {} components",
            rows.len(),
            comps.len()
        )));
    }
    if let Some(c) = comps.iter().find(|c| c.image_dims != score.dims()) {
        return Err(Error::dims(format!(
            "component {} comes from a {:?} image, score map is {:?}",
            c.id,
            c.image_dims,
            score.dims()
        )));
    }
    let probs = model.predict_rows(rows)?;
    let mut out = score.clone();
    let mut kept = Vec::new();
    for (comp, p) in comps.iter().zip(probs) {
        if p >= decision_threshold {
            for &(r, c) in &comp.pixels {
                out.set(r, c, 0.0);
            }
        } else {
            kept.push(comp.clone());
        }
    }
    Ok((out, kept))
}
