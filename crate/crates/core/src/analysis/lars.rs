//! Least angle regression, used only for the order in which predictors enter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::MetricsDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct LarsOrdering {
    /// Column indices in entry order; always a permutation of `0..num_features`.
    pub ordered_metric_indices: Vec<usize>,
    /// Largest absolute residual correlation at the step each column entered.
    pub entry_correlations: Vec<f64>,
}

const TINY: f64 = 1e-12;

/// Entry order of the dataset's columns against the 0/1 false-positive label.
pub fn lars_order(dataset: &MetricsDataset) -> Result<LarsOrdering> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y: Vec<f64> = dataset.labels.iter().map(|&l| l as u8 as f64).collect();
    lars_order_matrix(&dataset.rows, &y)
}

/// Classical LAR on row-major `rows` against response `y`.
///
/// Columns are centred and scaled to unit norm and `y` is centred. Exact ties
/// go to the lower index. Columns that can never enter (constant, or linearly
/// dependent on the active set) are appended after the path in order of
/// decreasing residual correlation.
pub fn lars_order_matrix(rows: &[Vec<f64>], y: &[f64]) -> Result<LarsOrdering> {
    let n = rows.len();
    if n != y.len() {
        return Err(Error::dims(format!("{n} rows for {} responses", y.len())));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::dims("ragged design matrix"));
    }

    let mut x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let mut usable = vec![false; p];
    for (j, ok) in usable.iter_mut().enumerate() {
        let mut col = x.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > TINY * (1.0 + mean.abs()) * (n as f64).sqrt() {
            col /= norm;
            *ok = true;
        } else {
            col.fill(0.0);
        }
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    if yc.norm() <= TINY {
        return Err(Error::invalid("response has zero variance"));
    }

    let mut mu = DVector::zeros(n);
    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; p];
    let mut order = Vec::with_capacity(p);
    let mut corrs = Vec::with_capacity(p);

    // first entrant: max |c|, lowest index on ties
    let c = x.tr_mul(&(&yc - &mu));
    let mut next = None;
    let mut best = -1.0;
    for j in (0..p).filter(|&j| usable[j]) {
        if c[j].abs() > best {
            best = c[j].abs();
            next = Some(j);
        }
    }
    let max_steps = p.min(n.saturating_sub(1));
    while let Some(j) = next.take() {
        let c = x.tr_mul(&(&yc - &mu));
        let c_max = c[j].abs();
        if c_max <= TINY {
            break;
        }
        active.push(j);
        in_active[j] = true;
        order.push(j);
        corrs.push(c_max);
        if active.len() >= max_steps {
            break;
        }

        let k = active.len();
        let xa = DMatrix::from_fn(n, k, |r, a| x[(r, active[a])] * c[active[a]].signum());
        let gram = xa.tr_mul(&xa);
        let Some(chol) = gram.cholesky() else {
            // dependent entrant: drop it again and stop the path
            active.pop();
            in_active[j] = false;
            order.pop();
            corrs.pop();
            usable[j] = false;
            break;
        };
        let g_inv_1 = chol.solve(&DVector::from_element(k, 1.0));
        let norm = 1.0 / g_inv_1.sum().sqrt();
        let u = &xa * (&g_inv_1 * norm);
        let a = x.tr_mul(&u);

        let gamma = loop {
            let mut gamma = c_max / norm;
            for m in (0..p).filter(|&m| usable[m] && !in_active[m]) {
                for (num, den) in [(c_max - c[m], norm - a[m]), (c_max + c[m], norm + a[m])] {
                    if den > TINY {
                        let g = num / den;
                        if g > TINY && g < gamma {
                            gamma = g;
                            next = Some(m);
                        }
                    }
                }
            }
            // a column dependent on the active set cannot enter
            match next {
                Some(m) if !independent(&x, &active, m) => {
                    usable[m] = false;
                    next = None;
                }
                _ => break gamma,
            }
        };
        mu += &u * gamma;
    }

    let c = x.tr_mul(&(&yc - &mu));
    let mut rest: Vec<usize> = (0..p).filter(|&j| !in_active[j]).collect();
    // columns that could still enter first, then those dependent on the path
    let dependent: Vec<bool> = (0..p)
        .map(|j| !in_active[j] && !independent(&x, &active, j))
        .collect();
    rest.sort_by(|&a, &b| {
        dependent[a]
            .cmp(&dependent[b])
            .then(c[b].abs().total_cmp(&c[a].abs()))
            .then(a.cmp(&b))
    });
    for j in rest {
        order.push(j);
        corrs.push(c[j].abs());
    }
    Ok(LarsOrdering {
        ordered_metric_indices: order,
        entry_correlations: corrs,
    })
}

fn independent(x: &DMatrix<f64>, active: &[usize], candidate: usize) -> bool {
    let cols: Vec<usize> = active.iter().copied().chain([candidate]).collect();
    let xt = DMatrix::from_fn(x.nrows(), cols.len(), |r, a| x[(r, cols[a])]);
    let gram = xt.tr_mul(&xt);
    match gram.clone().cholesky() {
        // reject near-singular pivots as well as outright failures
        Some(ch) => ch.l().diagonal().iter().all(|&d| d > 1e-7),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn is_permutation(v: &[usize], p: usize) -> bool {
        let mut s = v.to_vec();
        s.sort();
        s == (0..p).collect::<Vec<_>>()
    }

    #[test]
    fn exact_column_enters_first() {
        let rows = random_rows(40, 6, 1);
        let y: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let o = lars_order_matrix(&rows, &y).unwrap();
        assert_eq!(o.ordered_metric_indices[0], 3);
        assert!(is_permutation(&o.ordered_metric_indices, 6));
    }

    #[test]
    fn duplicate_column_lower_index_first() {
        let mut rows = random_rows(30, 4, 2);
        for r in rows.iter_mut() {
            r[3] = r[1];
        }
        let y: Vec<f64> = rows.iter().map(|r| r[1] + 0.1 * r[0]).collect();
        let o = lars_order_matrix(&rows, &y).unwrap();
        assert_eq!(o.ordered_metric_indices[0], 1);
        assert_eq!(*o.ordered_metric_indices.last().unwrap(), 3);
        assert!(is_permutation(&o.ordered_metric_indices, 4));
    }

    #[test]
    fn constant_columns_and_bad_response() {
        let mut rows = random_rows(20, 3, 3);
        for r in rows.iter_mut() {
            r[0] = 7.0;
        }
        let y: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        let o = lars_order_matrix(&rows, &y).unwrap();
        assert_eq!(o.ordered_metric_indices, vec![2, 1, 0]);
        assert!(lars_order_matrix(&rows, &[1.0; 20]).is_err());
    }

    #[test]
    fn deterministic_and_complete_on_wide_designs() {
        let rows = random_rows(5, 12, 4);
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0];
        let a = lars_order_matrix(&rows, &y).unwrap();
        assert_eq!(a, lars_order_matrix(&rows, &y).unwrap());
        assert!(is_permutation(&a.ordered_metric_indices, 12));
        assert_eq!(a.entry_correlations.len(), 12);
    }
}
