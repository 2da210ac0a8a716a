use super::curves::{evaluate_scores, EvalReport};
use crate::error::{Error, Result};
use crate::raster::{Label, LabelMask, ScoreMap};

/// Pixel-level evaluation pooled over all images; OoD pixels are positives and
/// ignore pixels are dropped.
pub fn evaluate_pixels(scores: &[ScoreMap], masks: &[LabelMask]) -> Result<EvalReport> {
    if scores.len() != masks.len() {
        return Err(Error::dims(format!(
            "{} score maps for {} masks",
            scores.len(),
            masks.len()
        )));
    }
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (i, (map, mask)) in scores.iter().zip(masks).enumerate() {
        if map.dims() != mask.dims() {
            return Err(Error::dims(format!(
                "image {i}: score map {:?} vs mask {:?}",
                map.dims(),
                mask.dims()
            )));
        }
        for (&a, &l) in map.scores().iter().zip(mask.labels()) {
            if l != Label::Ignore {
                s.push(a as f64);
                y.push(l == Label::Ood);
            }
        }
    }
    if !y.contains(&true) {
        return Err(Error::SingleClass("no OoD pixels in any mask".into()));
    }
    evaluate_scores(&s, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: &[Label]) -> LabelMask {
        LabelMask::new(1, labels.len(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_constant_maps() {
        let m = mask(&[Label::Ood, Label::Class(0), Label::Class(1), Label::Ignore]);
        let perfect = ScoreMap::new(1, 4, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = evaluate_pixels(&[perfect], std::slice::from_ref(&m)).unwrap();
        assert_eq!((r.auprc, r.fpr95), (1.0, Some(0.0)));
        assert_eq!((r.positives, r.negatives), (1, 2));

        let flat = ScoreMap::new(1, 4, vec![0.4; 4]).unwrap();
        let r = evaluate_pixels(&[flat.clone(), flat], &[m.clone(), m]).unwrap();
        assert!((r.auprc - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.fpr95, Some(1.0));
    }

    #[test]
    fn errors() {
        let m = mask(&[Label::Class(0), Label::Ignore]);
        let s = ScoreMap::new(1, 2, vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            evaluate_pixels(std::slice::from_ref(&s), std::slice::from_ref(&m)),
            Err(Error::SingleClass(_))
        ));
        assert!(evaluate_pixels(&[s], &[]).is_err());
    }
}
