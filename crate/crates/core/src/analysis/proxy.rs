use crate::error::{Error, Result};
use crate::raster::{Label, LabelMask};

/// `|OoD pixels| / |non-ignore pixels|`.
pub fn ood_fraction(mask: &LabelMask) -> Result<f64> {
    let (mut ood, mut valid) = (0usize, 0usize);
    for &l in mask.labels() {
        match l {
            Label::Ood => {
                ood += 1;
                valid += 1;
            }
            Label::Class(_) => valid += 1,
            Label::Ignore => {}
        }
    }
    if valid == 0 {
        return Err(Error::invalid("mask has no non-ignore pixels"));
    }
    Ok(ood as f64 / valid as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProxySplit {
    /// Masks with OoD fraction `≤ low`.
    pub low: Vec<String>,
    /// Masks with OoD fraction `≥ high`.
    pub high: Vec<String>,
    pub rest: Vec<String>,
    pub fractions: Vec<(String, f64)>,
}

/// Partitions masks by OoD pixel fraction, e.g. `low = 0.2`, `high = 0.8` for the
/// "at most 20 %" and "at least 80 %" proxy sets. Input order is kept.
pub fn split_by_ood_fraction(
    masks: &[(String, LabelMask)],
    low: f64,
    high: f64,
) -> Result<ProxySplit> {
    if !(0.0 <= low && low <= high && high <= 1.0) {
        return Err(Error::invalid(format!(
            "need 0 <= low <= high <= 1, got {low}, {high}"
        )));
    }
    let mut split = ProxySplit::default();
    for (id, mask) in masks {
        let f = ood_fraction(mask).map_err(|e| Error::invalid(format!("mask {id:?}: {e}")))?;
        if f <= low {
            split.low.push(id.clone());
        } else if f >= high {
            split.high.push(id.clone());
        } else {
            split.rest.push(id.clone());
        }
        split.fractions.push((id.clone(), f));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(ood: usize, class: usize, ignore: usize) -> LabelMask {
        let mut labels = vec![Label::Ood; ood];
        labels.extend(vec![Label::Class(0); class]);
        labels.extend(vec![Label::Ignore; ignore]);
        LabelMask::new(1, labels.len(), labels).unwrap()
    }

    #[test]
    fn default_thresholds() {
        let masks = vec![
            ("a".to_string(), mask_with(1, 9, 5)),
            ("b".to_string(), mask_with(17, 3, 0)),
            ("c".to_string(), mask_with(5, 5, 1)),
            ("d".to_string(), mask_with(2, 8, 0)),
            ("e".to_string(), mask_with(8, 2, 3)),
        ];
        let s = split_by_ood_fraction(&masks, 0.2, 0.8).unwrap();
        assert_eq!(s.low, vec!["a", "d"]);
        assert_eq!(s.high, vec!["b", "e"]);
        assert_eq!(s.rest, vec!["c"]);
        assert_eq!(s.fractions[0].1, 0.1);
        assert_eq!(s.fractions[1].1, 0.85);
    }

    #[test]
    fn errors() {
        let masks = vec![("x".to_string(), mask_with(0, 0, 4))];
        assert!(split_by_ood_fraction(&masks, 0.2, 0.8).is_err());
        assert!(split_by_ood_fraction(&[], 0.9, 0.1).is_err());
    }
}
