//! Exploratory factor analysis of the psychometric indicators: Pearson
//! correlations, principal-axis factor extraction with Kaiser retention, and
//! varimax rotation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Pearson correlation matrix together with the indicator names it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

/// Pairwise-complete Pearson correlations.
pub fn correlation_matrix(columns: &[(String, Vec<Option<f64>>)]) -> Result<CorrelationMatrix> {
    let p = columns.len();
    if p == 0 {
        return Err(Error::domain("no indicator columns"));
    }
    for (name, col) in columns {
        let present: Vec<f64> = col.iter().flatten().copied().collect();
        if present.len() < 2 {
            return Err(Error::domain(format!(
                "indicator `{name}` has fewer than two responses"
            )));
        }
        let first = present[0];
        if present.iter().all(|&v| v == first) {
            return Err(Error::DegenerateColumn(name.clone()));
        }
    }

    let mut m = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let pairs: Vec<(f64, f64)> = columns[i]
                .1
                .iter()
                .zip(&columns[j].1)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            if pairs.len() < 2 {
                return Err(Error::domain(format!(
                    "fewer than two complete rows for `{}` and `{}`",
                    columns[i].0, columns[j].0
                )));
            }
            let n = pairs.len() as f64;
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, y) in &pairs {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx).powi(2);
                syy += (y - my).powi(2);
            }
            if sxx == 0.0 || syy == 0.0 {
                let name = if sxx == 0.0 {
                    &columns[i].0
                } else {
                    &columns[j].0
                };
                return Err(Error::DegenerateColumn(name.clone()));
            }
            let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|c| c.0.clone()).collect(),
        matrix: m,
    })
}

/// How many factors to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retention {
    /// Eigenvalues of the correlation matrix above one.
    Kaiser,
    Count(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorSolution {
    pub names: Vec<String>,
    pub n_factors: usize,
    /// Indicator × factor, after rotation.
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of the analyzed correlation matrix, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Factor with the largest absolute loading, per indicator.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

impl FactorSolution {
    /// Row sums of squared loadings.
    pub fn communalities(&self) -> Vec<f64> {
        self.loadings
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect()
    }
}

/// Eigen-decomposition sorted by descending eigenvalue; each eigenvector's
/// first nonzero component is made positive.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub fn extract_factors(corr: &CorrelationMatrix, retain: Retention) -> Result<FactorSolution> {
    let r = &corr.matrix;
    let p = r.nrows();
    if r.ncols() != p || corr.names.len() != p || p == 0 {
        return Err(Error::domain("correlation matrix must be square and named"));
    }
    for i in 0..p {
        if (r[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(Error::domain(
                "correlation matrix must have a unit diagonal",
            ));
        }
        for j in 0..i {
            if (r[(i, j)] - r[(j, i)]).abs() > 1e-10 {
                return Err(Error::domain("correlation matrix is not symmetric"));
            }
        }
    }

    let (eigenvalues, _) = sorted_eigen(r);
    let n_factors = match retain {
        Retention::Kaiser => eigenvalues.iter().filter(|&&l| l > 1.0 + 1e-9).count(),
        Retention::Count(n) => n,
    };
    if n_factors == 0 {
        return Err(Error::domain(
            "no eigenvalue exceeds one; request an explicit factor count",
        ));
    }
    if n_factors > p {
        return Err(Error::domain(format!(
            "cannot extract {n_factors} factors from {p} indicators"
        )));
    }

    let (loadings, iterations) = principal_axis(r, n_factors);
    let mut loadings = if n_factors >= 2 {
        varimax(&loadings)
    } else {
        loadings
    };
    orient_and_order(&mut loadings);

    let assignment = loadings
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if v.abs() > row[best].abs() {
                    best = c;
                }
            }
            best
        })
        .collect();

    Ok(FactorSolution {
        names: corr.names.clone(),
        n_factors,
        loadings,
        eigenvalues,
        assignment,
        iterations,
    })
}

/// Iterated principal-axis factoring. Communalities start at each
/// indicator's largest absolute correlation and are capped at one.
fn principal_axis(r: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, usize) {
    let p = r.nrows();
    if p == 1 {
        return (DMatrix::from_element(1, 1, 1.0), 0);
    }
    let mut h: DVector<f64> = DVector::from_iterator(
        p,
        (0..p).map(|i| {
            (0..p)
                .filter(|&j| j != i)
                .map(|j| r[(i, j)].abs())
                .fold(0.0, f64::max)
        }),
    );
    let mut loadings = DMatrix::zeros(p, k);
    let mut iterations = 0;
    for it in 1..=2000 {
        iterations = it;
        let mut reduced = r.clone();
        for i in 0..p {
            reduced[(i, i)] = h[i];
        }
        let (values, vectors) = sorted_eigen(&reduced);
        for c in 0..k {
            let scale = values[c].max(0.0).sqrt();
            for i in 0..p {
                loadings[(i, c)] = vectors[(i, c)] * scale;
            }
        }
        let next = DVector::from_iterator(
            p,
            loadings
                .row_iter()
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().min(1.0)),
        );
        let change = (&next - &h).amax();
        h = next;
        if change < 1e-12 {
            break;
        }
    }
    // cap rows whose communality hit the bound
    for i in 0..p {
        let norm: f64 = loadings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            for c in 0..k {
                loadings[(i, c)] /= norm;
            }
        }
    }
    (loadings, iterations)
}

/// Kaiser-normalized varimax rotation.
pub fn varimax(loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, k) = loadings.shape();
    let norms: Vec<f64> = loadings
        .row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut x = loadings.clone();
    for i in 0..p {
        if norms[i] > 0.0 {
            for c in 0..k {
                x[(i, c)] /= norms[i];
            }
        }
    }
    let mut rotation = DMatrix::<f64>::identity(k, k);
    let mut criterion = 0.0;
    for _ in 0..1000 {
        let z = &x * &rotation;
        let col_ss: Vec<f64> = (0..k)
            .map(|c| z.column(c).iter().map(|v| v * v).sum())
            .collect();
        let mut target = DMatrix::zeros(p, k);
        for i in 0..p {
            for c in 0..k {
                let v = z[(i, c)];
                target[(i, c)] = v * v * v - v * col_ss[c] / p as f64;
            }
        }
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            break;
        };
        rotation = u * v_t;
        let previous = criterion;
        criterion = svd.singular_values.sum();
        if criterion < previous * (1.0 + 1e-12) {
            break;
        }
    }
    let mut out = &x * rotation;
    for i in 0..p {
        for c in 0..k {
            out[(i, c)] *= norms[i];
        }
    }
    out
}

/// Columns ordered by explained variance, each with a positive column sum.
fn orient_and_order(loadings: &mut DMatrix<f64>) {
    let k = loadings.ncols();
    let mut order: Vec<usize> = (0..k).collect();
    let ss: Vec<f64> = (0..k)
        .map(|c| loadings.column(c).iter().map(|v| v * v).sum())
        .collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]));
    let original = loadings.clone();
    for (dst, &src) in order.iter().enumerate() {
        let mut col = original.column(src).clone_owned();
        if col.sum() < 0.0 {
            col.neg_mut();
        }
        loadings.set_column(dst, &col);
    }
}
