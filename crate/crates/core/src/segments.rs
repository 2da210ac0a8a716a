//! Predicted OoD components: thresholding, 8-connected labelling, and TP/FP
//! assignment against the ground-truth mask.

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ScoreMap};

pub type Pixel = (usize, usize);

/// Score threshold `t`; pixels with `a ≥ t` are predicted OoD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    t: f64,
}

impl ThresholdConfig {
    pub const DEFAULT_T: f64 = 0.7;

    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("threshold {t} outside [0,1]")));
        }
        Ok(Self { t })
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { t: Self::DEFAULT_T }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}

/// One predicted OoD component.
///
/// `pixels`, `boundary` and `interior` are in raster order. A pixel is on the
/// boundary when one of its 4-neighbours lies outside the component or the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRecord {
    pub id: usize,
    pub image_dims: (usize, usize),
    pub pixels: Vec<Pixel>,
    pub boundary: Vec<Pixel>,
    pub interior: Vec<Pixel>,
    pub bbox: BBox,
    /// `None` until [`label_components`] has compared the component with a mask.
    pub is_false_positive: Option<bool>,
    pub source_sample: String,
}

impl ComponentRecord {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// `{ i | a_i ≥ t }` in raster order, compared at the score map's `f32` precision.
pub fn ood_pixel_set(score: &ScoreMap, cfg: ThresholdConfig) -> Vec<Pixel> {
    let w = score.width();
    let t = cfg.t() as f32;
    score
        .scores()
        .iter()
        .enumerate()
        .filter(|(_, &a)| a >= t)
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller provisional label as root
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Splits a pixel set into maximal 8-connected components.
///
/// Two-pass labelling with union-find; component ids follow the raster
/// position of each component's first pixel.
pub fn connected_components(
    pixels: &[Pixel],
    image_dims: (usize, usize),
) -> Result<Vec<ComponentRecord>> {
    let (h, w) = image_dims;
    const NONE: usize = usize::MAX;
    let mut grid = vec![NONE; h * w];
    for &(r, c) in pixels {
        if r >= h || c >= w {
            return Err(Error::invalid(format!(
                "pixel ({r},{c}) outside {h}x{w} image"
            )));
        }
        grid[r * w + c] = 0;
    }

    let mut parent: Vec<usize> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if grid[r * w + c] == NONE {
                continue;
            }
            let mut label = NONE;
            // already-visited neighbours: W, NW, N, NE
            let mut neighbours = [NONE; 4];
            if c > 0 {
                neighbours[0] = grid[r * w + c - 1];
            }
            if r > 0 {
                if c > 0 {
                    neighbours[1] = grid[(r - 1) * w + c - 1];
                }
                neighbours[2] = grid[(r - 1) * w + c];
                if c + 1 < w {
                    neighbours[3] = grid[(r - 1) * w + c + 1];
                }
            }
            for &n in neighbours.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    union(&mut parent, label, n);
                }
            }
            if label == NONE {
                label = parent.len();
                parent.push(label);
            }
            grid[r * w + c] = label;
        }
    }

    let mut final_id = vec![NONE; parent.len()];
    let mut members: Vec<Vec<Pixel>> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = grid[r * w + c];
            if l == NONE {
                continue;
            }
            let root = find(&mut parent, l);
            if final_id[root] == NONE {
                final_id[root] = members.len();
                members.push(Vec::new());
            }
            let id = final_id[root];
            grid[r * w + c] = id;
            members[id].push((r, c));
        }
    }

    Ok(members
        .into_iter()
        .enumerate()
        .map(|(id, pixels)| {
            let mut boundary = Vec::new();
            let mut interior = Vec::new();
            let mut bbox = BBox {
                row_min: usize::MAX,
                row_max: 0,
                col_min: usize::MAX,
                col_max: 0,
            };
            for &(r, c) in &pixels {
                bbox.row_min = bbox.row_min.min(r);
                bbox.row_max = bbox.row_max.max(r);
                bbox.col_min = bbox.col_min.min(c);
                bbox.col_max = bbox.col_max.max(c);
                let inside = |rr: usize, cc: usize| grid[rr * w + cc] == id;
                let is_interior = r > 0
                    && c > 0
                    && r + 1 < h
                    && c + 1 < w
                    && inside(r - 1, c)
                    && inside(r + 1, c)
                    && inside(r, c - 1)
                    && inside(r, c + 1);
                if is_interior {
                    interior.push((r, c));
                } else {
                    boundary.push((r, c));
                }
            }
            ComponentRecord {
                id,
                image_dims,
                pixels,
                boundary,
                interior,
                bbox,
                is_false_positive: None,
                source_sample: String::new(),
            }
        })
        .collect())
}

/// Thresholds a score map and returns its components, dropping those below `min_size` pixels.
pub fn extract_components(
    score: &ScoreMap,
    cfg: ThresholdConfig,
    min_size: usize,
    source: &str,
) -> Vec<ComponentRecord> {
    let pixels = ood_pixel_set(score, cfg);
    let comps =
        connected_components(&pixels, score.dims()).expect("thresholded pixels lie inside the map");
    let mut out: Vec<ComponentRecord> = comps
        .into_iter()
        .filter(|c| c.size() >= min_size.max(1))
        .collect();
    for (i, c) in out.iter_mut().enumerate() {
        c.id = i;
        c.source_sample = source.to_string();
    }
    out
}

fn check_dims(comp: &ComponentRecord, mask: &LabelMask) -> Result<()> {
    if comp.image_dims != mask.dims() {
        return Err(Error::dims(format!(
            "component from {:?} image vs mask {:?}",
            comp.image_dims,
            mask.dims()
        )));
    }
    Ok(())
}

/// IoU of the component with the mask's OoD pixels. Ignore pixels count as non-OoD.
pub fn component_iou(comp: &ComponentRecord, mask: &LabelMask) -> Result<f64> {
    check_dims(comp, mask)?;
    let intersection = comp
        .pixels
        .iter()
        .filter(|&&(r, c)| mask.is_ood(r, c))
        .count();
    let union = comp.size() + mask.ood_count() - intersection;
    Ok(intersection as f64 / union as f64)
}

/// Marks each component as false positive iff its IoU with the OoD mask is zero.
pub fn label_components(
    comps: &[ComponentRecord],
    mask: &LabelMask,
) -> Result<Vec<ComponentRecord>> {
    comps
        .iter()
        .map(|comp| {
            let iou = component_iou(comp, mask)?;
            Ok(ComponentRecord {
                is_false_positive: Some(iou == 0.0),
                ..comp.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Label;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn block(r0: usize, c0: usize, n: usize) -> Vec<Pixel> {
        (r0..r0 + n)
            .flat_map(|r| (c0..c0 + n).map(move |c| (r, c)))
            .collect()
    }

    #[test]
    fn threshold_examples() {
        let m = ScoreMap::new(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(
            ood_pixel_set(&m, ThresholdConfig::new(0.0).unwrap()).len(),
            4
        );
        assert!(ood_pixel_set(&m, ThresholdConfig::new(0.7).unwrap()).is_empty());

        let m = ScoreMap::new(2, 2, vec![0.8, 0.6, 0.71, 0.70]).unwrap();
        let t = ThresholdConfig::new(0.7).unwrap();
        assert_eq!(ood_pixel_set(&m, t), vec![(0, 0), (1, 0), (1, 1)]);

        assert!(ThresholdConfig::new(1.01).is_err());
        assert_eq!(ThresholdConfig::default().t(), 0.7);
    }

    #[test]
    fn diagonal_pixels_join() {
        let comps = connected_components(&[(0, 0), (1, 1)], (2, 2)).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].size(), 2);
    }

    #[test]
    fn solid_block_boundary() {
        let comps = connected_components(&block(1, 1, 3), (5, 5)).unwrap();
        assert_eq!(comps.len(), 1);
        let c = &comps[0];
        assert_eq!((c.size(), c.boundary.len(), c.interior.len()), (9, 8, 1));
        assert_eq!(c.interior, vec![(2, 2)]);
        assert_eq!(
            c.bbox,
            BBox {
                row_min: 1,
                row_max: 3,
                col_min: 1,
                col_max: 3
            }
        );
    }

    #[test]
    fn image_edge_counts_as_outside() {
        let comps = connected_components(&block(0, 0, 3), (3, 3)).unwrap();
        assert_eq!(comps[0].interior, vec![(1, 1)]);
        let comps = connected_components(&block(0, 0, 2), (2, 2)).unwrap();
        assert!(comps[0].interior.is_empty());
    }

    #[test]
    fn separated_pixels() {
        let comps = connected_components(&[(0, 2), (0, 0)], (1, 3)).unwrap();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].pixels, vec![(0, 0)]);
        assert_eq!(comps[1].pixels, vec![(0, 2)]);
        for c in &comps {
            assert_eq!(c.boundary.len(), 1);
            assert!(c.interior.is_empty());
        }
    }

    #[test]
    fn ids_follow_raster_order() {
        // a U shape whose arms are only joined at the bottom row
        let px = vec![
            (0, 0),
            (1, 0),
            (2, 0),
            (2, 1),
            (2, 2),
            (1, 2),
            (0, 2),
            (0, 4),
        ];
        let comps = connected_components(&px, (3, 5)).unwrap();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].size(), 7);
        assert_eq!(comps[1].pixels, vec![(0, 4)]);
    }

    #[test]
    fn out_of_bounds_pixel() {
        assert!(connected_components(&[(2, 0)], (2, 2)).is_err());
    }

    fn mask_with_ood(h: usize, w: usize, ood: &[Pixel]) -> LabelMask {
        let mut m = LabelMask::filled(h, w, Label::Class(0));
        for &(r, c) in ood {
            m.set(r, c, Label::Ood);
        }
        m
    }

    #[test]
    fn iou_examples() {
        let comp = &connected_components(&[(0, 0), (0, 1)], (1, 3)).unwrap()[0];
        assert_eq!(
            component_iou(comp, &mask_with_ood(1, 3, &[(0, 0), (0, 1)])).unwrap(),
            1.0
        );
        assert_eq!(
            component_iou(comp, &mask_with_ood(1, 3, &[(0, 2)])).unwrap(),
            0.0
        );
        let iou = component_iou(comp, &mask_with_ood(1, 3, &[(0, 1), (0, 2)])).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);

        let mut m = mask_with_ood(1, 3, &[(0, 1)]);
        m.set(0, 0, Label::Ignore);
        assert_eq!(component_iou(comp, &m).unwrap(), 0.5);
        assert!(component_iou(comp, &mask_with_ood(2, 3, &[])).is_err());
    }

    #[test]
    fn labelling() {
        let px: Vec<Pixel> = block(0, 0, 40)
            .into_iter()
            .filter(|&(r, _)| r < 25)
            .collect();
        let comps = connected_components(&px, (40, 40)).unwrap();
        assert_eq!(comps[0].size(), 1000);
        let labelled = label_components(&comps, &mask_with_ood(40, 40, &[(24, 39)])).unwrap();
        assert_eq!(labelled[0].is_false_positive, Some(false));
        let labelled = label_components(&comps, &mask_with_ood(40, 40, &[(39, 39)])).unwrap();
        assert_eq!(labelled[0].is_false_positive, Some(true));
        assert!(label_components(&[], &mask_with_ood(2, 2, &[]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn min_size_filter() {
        let mut s = vec![0.0f32; 25];
        for i in [0usize, 12, 13, 17, 18] {
            s[i] = 1.0;
        }
        let m = ScoreMap::new(5, 5, s).unwrap();
        let all = extract_components(&m, ThresholdConfig::default(), 0, "x");
        assert_eq!(all.len(), 2);
        let big = extract_components(&m, ThresholdConfig::default(), 2, "x");
        assert_eq!(big.len(), 1);
        assert_eq!(
            (big[0].id, big[0].size(), big[0].source_sample.as_str()),
            (0, 4, "x")
        );
    }

    proptest! {
        #[test]
        fn components_partition_input(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<Pixel> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c)))
                .filter(|_| rng.random_bool(0.45)).collect();
            let comps = connected_components(&px, (h, w)).unwrap();
            let mut seen = BTreeSet::new();
            for c in &comps {
                prop_assert!(!c.pixels.is_empty());
                prop_assert_eq!(c.boundary.len() + c.interior.len(), c.size());
                for p in &c.pixels {
                    prop_assert!(seen.insert(*p));
                }
            }
            prop_assert_eq!(seen, px.iter().copied().collect::<BTreeSet<_>>());

            let mask = mask_with_ood(h, w, &px[..px.len() / 2]);
            let once = label_components(&comps, &mask).unwrap();
            let twice = label_components(&once, &mask).unwrap();
            prop_assert_eq!(&once, &twice);
            let mut rev = comps.clone();
            rev.reverse();
            let mut rev_labelled = label_components(&rev, &mask).unwrap();
            rev_labelled.reverse();
            prop_assert_eq!(once, rev_labelled);
        }
    }
}
