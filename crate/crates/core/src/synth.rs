//! Synthetic scenes with planted anomalies, standing in for a segmentation
//! network's softmax output.
//!
//! Every pixel distribution is a mixture `w·uniform + (1-w)·base`, where the
//! base is one-hot or splits its mass between two classes. The weight `w` is
//! solved by bisection so the pixel hits a target normalized entropy.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Label, LabelMask, ProbabilityMap, Sample, SampleSet, DEFAULT_OOD_LABEL};
use crate::scoring::normalized_entropy;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// `(height, width)`.
    pub dims: (usize, usize),
    pub num_classes: usize,
    /// Inclusive range for the number of ground-truth anomaly blobs.
    pub blob_count: (usize, usize),
    /// Inclusive range of blob areas in pixels.
    pub blob_size: (usize, usize),
    pub anomaly_entropy: f64,
    pub background_entropy: f64,
    /// Poisson mean of high-entropy blobs with no ground truth behind them.
    pub false_blob_rate: f64,
    /// Ties the look of false blobs to the XOR of their size and margin bits.
    pub nonlinear_coupling: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            dims: (48, 48),
            num_classes: 19,
            blob_count: (1, 2),
            blob_size: (24, 120),
            anomaly_entropy: 0.95,
            background_entropy: 0.2,
            false_blob_rate: 1.5,
            nonlinear_coupling: true,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.dims;
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("empty scene {h}x{w}")));
        }
        if !(2..DEFAULT_OOD_LABEL as usize).contains(&self.num_classes) {
            return Err(Error::invalid(format!(
                "num_classes {} out of range",
                self.num_classes
            )));
        }
        if self.blob_count.0 > self.blob_count.1 {
            return Err(Error::invalid(format!(
                "empty blob_count range {:?}",
                self.blob_count
            )));
        }
        if self.blob_size.0 == 0 || self.blob_size.0 > self.blob_size.1 {
            return Err(Error::invalid(format!(
                "bad blob_size range {:?}",
                self.blob_size
            )));
        }
        if self.blob_size.1 > h * w {
            return Err(Error::invalid(format!(
                "blob of {} pixels is larger than the {h}x{w} image",
                self.blob_size.1
            )));
        }
        if !(self.anomaly_entropy > 0.0 && self.anomaly_entropy <= 1.0) {
            return Err(Error::invalid(format!(
                "anomaly_entropy {} not in (0,1]",
                self.anomaly_entropy
            )));
        }
        if !(self.background_entropy >= 0.0 && self.background_entropy < self.anomaly_entropy) {
            return Err(Error::invalid(format!(
                "need 0 <= background_entropy < anomaly_entropy, got {} and {}",
                self.background_entropy, self.anomaly_entropy
            )));
        }
        if !(self.false_blob_rate >= 0.0 && self.false_blob_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "false_blob_rate {}",
                self.false_blob_rate
            )));
        }
        Ok(())
    }

    /// Entropy of the darker centre of a ring-shaped blob.
    pub fn ring_interior_entropy(&self) -> f64 {
        self.anomaly_entropy - 0.25 * (self.anomaly_entropy - self.background_entropy)
    }
}

/// Mixture `w·uniform + (1-w)·base`.
fn mix(base: &[f64], w: f64) -> Vec<f64> {
    let u = 1.0 / base.len() as f64;
    base.iter().map(|&b| w * u + (1.0 - w) * b).collect()
}

/// Weight `w` for which `mix(base, w)` has normalized entropy `target`,
/// clamped to `[0, 1]` when the target lies outside the family's range.
pub fn mixing_weight(base: &[f64], target: f64) -> Result<f64> {
    if target >= 1.0 {
        return Ok(1.0);
    }
    if normalized_entropy(base)? >= target {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if normalized_entropy(&mix(base, mid))? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Distribution over `c` classes with normalized entropy `target`, peaked on
/// `top` or, with `second`, split evenly between two classes.
pub fn pixel_distribution(
    c: usize,
    top: usize,
    second: Option<usize>,
    target: f64,
) -> Result<Vec<f64>> {
    let mut base = vec![0.0; c];
    match second {
        Some(s) if s != top => {
            base[top] = 0.5;
            base[s] = 0.5;
        }
        _ => base[top] = 1.0,
    }
    Ok(mix(&base, mixing_weight(&base, target)?))
}

struct Blob {
    pixels: Vec<(usize, usize)>,
    is_anomaly: bool,
    ring: bool,
    top: usize,
    second: Option<usize>,
}

fn shape(rng: &mut ChaCha8Rng, area: usize, (h, w): (usize, usize)) -> Vec<(isize, isize)> {
    if rng.random_bool(0.5) {
        let aspect: f64 = rng.random_range(0.6..1.6);
        let bh = ((area as f64 * aspect).sqrt().round() as usize).clamp(1, h);
        let bw = ((area as f64 / bh as f64).round() as usize).clamp(1, w);
        (0..bh as isize)
            .flat_map(|r| (0..bw as isize).map(move |c| (r, c)))
            .collect()
    } else {
        let max_r = (h.min(w) as f64 - 1.0) / 2.0;
        let r = (area as f64 / std::f64::consts::PI)
            .sqrt()
            .min(max_r)
            .max(0.5);
        let ri = r.ceil() as isize;
        let mut px = Vec::new();
        for dr in -ri..=ri {
            for dc in -ri..=ri {
                if ((dr * dr + dc * dc) as f64) <= r * r {
                    px.push((dr + ri, dc + ri));
                }
            }
        }
        px
    }
}

/// Places `offsets` at a random free position keeping a two-pixel gap to
/// earlier blobs, so distinct blobs never merge into one component.
fn place(
    rng: &mut ChaCha8Rng,
    offsets: &[(isize, isize)],
    taken: &[bool],
    (h, w): (usize, usize),
) -> Option<Vec<(usize, usize)>> {
    let max_r = offsets.iter().map(|p| p.0).max()? as usize;
    let max_c = offsets.iter().map(|p| p.1).max()? as usize;
    if max_r >= h || max_c >= w {
        return None;
    }
    'attempt: for _ in 0..64 {
        let r0 = rng.random_range(0..h - max_r);
        let c0 = rng.random_range(0..w - max_c);
        let px: Vec<(usize, usize)> = offsets
            .iter()
            .map(|&(r, c)| ((r0 as isize + r) as usize, (c0 as isize + c) as usize))
            .collect();
        for &(r, c) in &px {
            for rr in r.saturating_sub(2)..=(r + 2).min(h - 1) {
                for cc in c.saturating_sub(2)..=(c + 2).min(w - 1) {
                    if taken[rr * w + cc] {
                        continue 'attempt;
                    }
                }
            }
        }
        return Some(px);
    }
    None
}

fn sample_blob(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    is_anomaly: bool,
    taken: &mut [bool],
) -> Option<Blob> {
    let c = spec.num_classes;
    // latent size and margin bits; anomalies always have them unequal under coupling
    let size_bit: bool = rng.random_bool(0.5);
    let margin_bit = if is_anomaly && spec.nonlinear_coupling {
        !size_bit
    } else {
        rng.random_bool(0.5)
    };
    let ring = !is_anomaly && spec.nonlinear_coupling && (size_bit ^ margin_bit);

    let (lo, hi) = spec.blob_size;
    let mid = lo + (hi - lo) / 2;
    let area = if size_bit {
        rng.random_range(mid..=hi)
    } else {
        rng.random_range(lo..=mid)
    };
    let offsets = shape(rng, area, spec.dims);
    let top = rng.random_range(0..c);
    let second = margin_bit.then(|| (top + rng.random_range(1..c)) % c);
    let pixels = place(rng, &offsets, taken, spec.dims)?;
    for &(r, col) in &pixels {
        taken[r * spec.dims.1 + col] = true;
    }
    Some(Blob {
        pixels,
        is_anomaly,
        ring,
        top,
        second,
    })
}

/// One scene drawn from `spec.seed + index`.
pub fn generate_sample(spec: &SceneSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));
    let (h, w) = spec.dims;
    let c = spec.num_classes;

    // background: four class regions split at a random row and column,
    // entropy jittered over eight levels up to background_entropy
    let split_r = rng.random_range(0..=h);
    let split_c = rng.random_range(0..=w);
    let classes: Vec<usize> = (0..4).map(|_| rng.random_range(0..c)).collect();
    let levels: Vec<f64> = (0..8)
        .map(|i| spec.background_entropy * (0.5 + i as f64 / 14.0))
        .collect();
    let level_weights: Vec<f64> = {
        let mut onehot = vec![0.0; c];
        onehot[0] = 1.0;
        levels
            .iter()
            .map(|&t| mixing_weight(&onehot, t))
            .collect::<Result<_>>()?
    };
    let mut probs = vec![0.0f64; h * w * c];
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let k = classes[(r >= split_r) as usize * 2 + (col >= split_c) as usize];
            let wgt = *level_weights.choose(&mut rng).unwrap();
            let px = &mut probs[(r * w + col) * c..][..c];
            px.fill(wgt / c as f64);
            px[k] += 1.0 - wgt;
            labels.push(Label::Class(k as u8));
        }
    }

    let mut taken = vec![false; h * w];
    let n_true = rng.random_range(spec.blob_count.0..=spec.blob_count.1);
    let n_false = if spec.false_blob_rate > 0.0 {
        Poisson::new(spec.false_blob_rate)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut blobs = Vec::new();
    for i in 0..n_true + n_false {
        match sample_blob(&mut rng, spec, i < n_true, &mut taken) {
            Some(b) => blobs.push(b),
            None => log::debug!("scene {index}: no room for blob {i}"),
        }
    }

    let inner = spec.ring_interior_entropy();
    for b in &blobs {
        let inside: std::collections::HashSet<(usize, usize)> = b.pixels.iter().copied().collect();
        let edge = pixel_distribution(c, b.top, b.second, spec.anomaly_entropy)?;
        let centre = pixel_distribution(c, b.top, b.second, inner)?;
        // uncoupled false blobs are solid but dimmer than true anomalies
        let solid = if b.is_anomaly || spec.nonlinear_coupling {
            &edge
        } else {
            &centre
        };
        for &(r, col) in &b.pixels {
            let boundary = [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)]
                .iter()
                .any(|&(dr, dc)| {
                    let (rr, cc) = (r as isize + dr, col as isize + dc);
                    rr < 0 || cc < 0 || !inside.contains(&(rr as usize, cc as usize))
                });
            let dist = if b.ring && !boundary {
                &centre
            } else if b.ring {
                &edge
            } else {
                solid
            };
            probs[(r * w + col) * c..][..c].copy_from_slice(dist);
            if b.is_anomaly {
                labels[r * w + col] = Label::Ood;
            }
        }
    }

    Ok(Sample {
        id: format!("scene_{index:05}"),
        probs: ProbabilityMap::from_f64(h, w, c, &probs)?,
        mask: LabelMask::new(h, w, labels)?,
    })
}

/// `count` scenes with ids `scene_00000`, `scene_00001`, ...
pub fn generate(spec: &SceneSpec, count: usize) -> Result<SampleSet> {
    spec.validate()?;
    let samples = (0..count)
        .into_par_iter()
        .map(|i| generate_sample(spec, i))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(samples)
}
