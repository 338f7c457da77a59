//! Euclidean projection onto the probability simplex (sort-and-threshold).

use ndarray::{Array2, ArrayView2, ArrayViewMut1};

use crate::error::{Error, Result};

/// Projects `v` in place onto `{x ≥ 0, Σx = 1}`.
pub fn project_simplex_inplace(mut v: ArrayViewMut1<'_, f64>) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    v.mapv_inplace(|x| (x - tau).max(0.0));
}

pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = ndarray::Array1::from(v.to_vec());
    project_simplex_inplace(out.view_mut());
    out.to_vec()
}

/// Row-wise simplex projection: the result is right stochastic.
pub fn project_row_stochastic(matrix: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to project".into()));
    }
    let mut out = matrix.to_owned();
    for row in out.rows_mut() {
        project_simplex_inplace(row);
    }
    Ok(out)
}
