//! Prediction entropy, normalized anomaly scores and the entropy-maximization
//! training losses, all in nats.

use crate::error::{Error, Result};
use crate::raster::{Label, LabelMask, ProbabilityMap, SampleSet, ScoreMap};

/// Clamp applied to probabilities before every logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
fn entropy_unchecked(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| p * p.max(PROB_EPS).ln()).sum::<f64>()
}

/// Shannon entropy `-Σ p ln p` of one pixel's class distribution.
pub fn pixel_entropy(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::invalid(format!(
            "entropy needs at least 2 classes, got {}",
            probs.len()
        )));
    }
    Ok(entropy_unchecked(probs).max(0.0))
}

/// Entropy divided by `ln C`, clamped into `[0, 1]`.
pub fn normalized_entropy(probs: &[f64]) -> Result<f64> {
    let h = pixel_entropy(probs)?;
    Ok((h / (probs.len() as f64).ln()).clamp(0.0, 1.0))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Per-pixel normalized entropy of a probability map.
pub fn anomaly_score_map(pmap: &ProbabilityMap) -> ScoreMap {
    let c = pmap.num_classes();
    let log_c = (c as f64).ln();
    let mut buf = vec![0.0; c];
    let scores = (0..pmap.height() * pmap.width())
        .map(|idx| {
            pmap.pixel_into(idx, &mut buf);
            (entropy_unchecked(&buf) / log_c).clamp(0.0, 1.0) as f32
        })
        .collect();
    ScoreMap::new(pmap.height(), pmap.width(), scores).expect("dimensions come from a valid map")
}

fn check_dims(pmap: &ProbabilityMap, mask: &LabelMask) -> Result<()> {
    if pmap.dims() != mask.dims() {
        return Err(Error::dims(format!(
            "probabilities {:?} vs mask {:?}",
            pmap.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Cross-entropy summed over class-labelled pixels. OoD and ignore pixels are skipped.
pub fn loss_in(pmap: &ProbabilityMap, mask: &LabelMask) -> Result<f64> {
    check_dims(pmap, mask)?;
    let mut loss = 0.0;
    for r in 0..pmap.height() {
        for c in 0..pmap.width() {
            if let Label::Class(k) = mask.get(r, c) {
                let k = k as usize;
                if k >= pmap.num_classes() {
                    return Err(Error::UnknownLabel(k as u32));
                }
                loss -= pmap.prob(r, c, k).max(PROB_EPS).ln();
            }
        }
    }
    Ok(loss)
}

/// Uniform-target cross-entropy `-Σ_i (1/C) Σ_c ln p_i(c)` over OoD pixels.
pub fn loss_out(pmap: &ProbabilityMap, mask: &LabelMask) -> Result<f64> {
    check_dims(pmap, mask)?;
    let nc = pmap.num_classes();
    let mut buf = vec![0.0; nc];
    let mut loss = 0.0;
    for (idx, &l) in mask.labels().iter().enumerate() {
        if l == Label::Ood {
            pmap.pixel_into(idx, &mut buf);
            loss += pixel_loss_out(&buf);
        }
    }
    Ok(loss)
}

/// `loss_out` contribution of a single pixel.
pub fn pixel_loss_out(probs: &[f64]) -> f64 {
    let inv_c = 1.0 / probs.len() as f64;
    -probs
        .iter()
        .map(|&p| inv_c * p.max(PROB_EPS).ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_in: f64,
    pub l_out: f64,
    pub combined: f64,
    pub lambda: f64,
}

/// `(1 - λ)·mean l_in + λ·mean l_out`, each side averaged per sample.
///
/// A side whose weight is zero may be empty; its mean is then reported as 0.
pub fn combined_objective(
    in_batch: &SampleSet,
    out_batch: &SampleSet,
    lambda: f64,
) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0,1]")));
    }
    let mean = |set: &SampleSet, weight: f64, f: fn(&ProbabilityMap, &LabelMask) -> Result<f64>| {
        if set.is_empty() {
            return if weight == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::EmptyDataset)
            };
        }
        let mut total = 0.0;
        for s in set.iter() {
            total += f(&s.probs, &s.mask)?;
        }
        Ok(total / set.len() as f64)
    };
    let l_in = mean(in_batch, 1.0 - lambda, loss_in)?;
    let l_out = mean(out_batch, lambda, loss_out)?;
    Ok(LossBreakdown {
        l_in,
        l_out,
        combined: (1.0 - lambda) * l_in + lambda * l_out,
        lambda,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::raster::Sample;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform(c: usize) -> Vec<f64> {
        vec![1.0 / c as f64; c]
    }

    fn one_pixel(p: &[f64], label: Label) -> (ProbabilityMap, LabelMask) {
        (
            ProbabilityMap::from_f64(1, 1, p.len(), p).unwrap(),
            LabelMask::filled(1, 1, label),
        )
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(
            pixel_entropy(&uniform(19)).unwrap(),
            19f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(19f64.ln(), 2.944439, epsilon = 1e-6);
        let mut one_hot = vec![0.0; 7];
        one_hot[3] = 1.0;
        assert_eq!(pixel_entropy(&one_hot).unwrap(), 0.0);
        assert_abs_diff_eq!(
            pixel_entropy(&[0.9, 0.1]).unwrap(),
            0.325083,
            epsilon = 1e-6
        );
        assert!(pixel_entropy(&[1.0]).is_err());
    }

    #[test]
    fn score_examples() {
        let pm = ProbabilityMap::from_f64(2, 3, 19, &uniform(19).repeat(6)).unwrap();
        let s = anomaly_score_map(&pm);
        assert!(s.scores().iter().all(|&v| (v as f64 - 1.0).abs() < 1e-12));

        let mut oh = [0.0; 4];
        oh[1] = 1.0;
        let pm = ProbabilityMap::from_f64(1, 2, 4, &oh.repeat(2)).unwrap();
        assert!(anomaly_score_map(&pm).scores().iter().all(|&v| v == 0.0));

        let pm = ProbabilityMap::from_f64(1, 1, 2, &[0.9, 0.1]).unwrap();
        // 0.325083 nats / ln 2
        assert_abs_diff_eq!(
            pixel_entropy(&[0.9, 0.1]).unwrap(),
            0.325083,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(anomaly_score_map(&pm).get(0, 0), 0.468996, epsilon = 1e-6);
    }

    #[test]
    fn loss_in_examples() {
        let mut oh = vec![0.0; 3];
        oh[2] = 1.0;
        let (pm, mask) = one_pixel(&oh, Label::Class(2));
        assert_eq!(loss_in(&pm, &mask).unwrap(), 0.0);

        let (pm, mask) = one_pixel(&uniform(19), Label::Class(5));
        assert_abs_diff_eq!(loss_in(&pm, &mask).unwrap(), 19f64.ln(), epsilon = 1e-7);

        let pm = ProbabilityMap::from_f64(1, 2, 2, &[0.5, 0.5, 0.75, 0.25]).unwrap();
        let mask = LabelMask::new(1, 2, vec![Label::Class(0), Label::Class(1)]).unwrap();
        assert_abs_diff_eq!(loss_in(&pm, &mask).unwrap(), 2.079442, epsilon = 1e-6);
    }

    #[test]
    fn loss_in_skips_ood_and_ignore() {
        let pm = ProbabilityMap::from_f64(1, 2, 2, &[0.01, 0.99, 0.01, 0.99]).unwrap();
        let mask = LabelMask::new(1, 2, vec![Label::Ood, Label::Ignore]).unwrap();
        assert_eq!(loss_in(&pm, &mask).unwrap(), 0.0);
        assert_eq!(
            loss_out(&pm, &LabelMask::filled(1, 2, Label::Ignore)).unwrap(),
            0.0
        );
    }

    #[test]
    fn loss_out_examples() {
        let (pm, mask) = one_pixel(&[0.5, 0.5], Label::Ood);
        assert_abs_diff_eq!(loss_out(&pm, &mask).unwrap(), 0.693147, epsilon = 1e-6);

        // f32 storage cannot hold 1 - 1e-12, so check the pixel formula directly
        assert_abs_diff_eq!(
            pixel_loss_out(&[1.0 - 1e-12, 1e-12]),
            13.815511,
            epsilon = 1e-6
        );
        let (pm, mask) = one_pixel(&[1.0, 0.0], Label::Ood);
        assert_abs_diff_eq!(loss_out(&pm, &mask).unwrap(), 13.815511, epsilon = 1e-6);

        let (pm, mask) = one_pixel(&[0.3, 0.7], Label::Class(0));
        assert_eq!(loss_out(&pm, &mask).unwrap(), 0.0);
    }

    #[test]
    fn loss_dimension_mismatch() {
        let pm = ProbabilityMap::from_f64(1, 1, 2, &[0.5, 0.5]).unwrap();
        let mask = LabelMask::filled(2, 1, Label::Ood);
        assert!(matches!(
            loss_in(&pm, &mask),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            loss_out(&pm, &mask),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn set(entries: Vec<(&str, Vec<f64>, Label)>) -> SampleSet {
        SampleSet::new(
            entries
                .into_iter()
                .map(|(id, p, l)| {
                    let (probs, mask) = one_pixel(&p, l);
                    Sample {
                        id: id.into(),
                        probs,
                        mask,
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn combined_objective_weights() {
        let ins = set(vec![
            ("a", vec![0.5, 0.5], Label::Class(0)),
            ("b", vec![0.25, 0.75], Label::Class(0)),
        ]);
        let outs = set(vec![("o", vec![0.5, 0.5], Label::Ood)]);
        let mean_in = (2f64.ln() + 4f64.ln()) / 2.0;

        let lb = combined_objective(&ins, &outs, 0.0).unwrap();
        assert_eq!(lb.combined, lb.l_in);
        assert_abs_diff_eq!(lb.l_in, mean_in, epsilon = 1e-7);

        let lb = combined_objective(&ins, &outs, 0.9).unwrap();
        let expected = 0.1 * lb.l_in + 0.9 * lb.l_out;
        assert!((lb.combined - expected).abs() <= 1e-12 * expected.abs());

        let lb = combined_objective(&SampleSet::default(), &outs, 1.0).unwrap();
        assert_abs_diff_eq!(lb.combined, 2f64.ln(), epsilon = 1e-7);

        assert!(matches!(
            combined_objective(&SampleSet::default(), &outs, 0.5),
            Err(Error::EmptyDataset)
        ));
        assert!(combined_objective(&ins, &outs, 1.5).is_err());
    }

    fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-6f64..1.0, 2..24).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn entropy_bounds(p in prob_vec()) {
            let h = pixel_entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
        }

        #[test]
        fn loss_out_lower_bound(p in prob_vec()) {
            prop_assert!(pixel_loss_out(&p) - (p.len() as f64).ln() >= -1e-9);
        }

        #[test]
        fn scores_invariant_under_class_permutation(p in prob_vec(), rot in 0usize..24) {
            let c = p.len();
            let mut q = p.clone();
            q.rotate_left(rot % c);
            q.reverse();
            let a = anomaly_score_map(&ProbabilityMap::from_f64(1, 1, c, &p).unwrap());
            let b = anomaly_score_map(&ProbabilityMap::from_f64(1, 1, c, &q).unwrap());
            prop_assert!((a.get(0, 0) - b.get(0, 0)).abs() <= 1e-6);
        }
    }
}
