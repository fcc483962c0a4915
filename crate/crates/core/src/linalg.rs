//! Dense least squares by Householder QR. Sized for a handful of columns.

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular {
    pub column: usize,
}

/// Solves `min ||A x - y||` for row-major `a` with `cols` columns.
pub(crate) fn least_squares<F: Scalar>(a: &[F], cols: usize, y: &[F]) -> Result<Vec<F>, Singular> {
    let rows = y.len();
    assert_eq!(a.len(), rows * cols, "design shape");
    if rows < cols {
        return Err(Singular { column: rows });
    }
    // column-major working copy
    let mut q: Vec<Vec<F>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
        .collect();
    let mut rhs = y.to_vec();
    let mut diag = vec![F::zero(); cols];

    for k in 0..cols {
        let norm = q[k][k..].iter().map(|v| *v * *v).sum::<F>().sqrt();
        if norm == F::zero() {
            diag[k] = F::zero();
            continue;
        }
        let alpha = if q[k][k] > F::zero() { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k
        q[k][k] = q[k][k] - alpha;
        let vnorm2 = q[k][k..].iter().map(|v| *v * *v).sum::<F>();
        diag[k] = alpha;
        if vnorm2 == F::zero() {
            continue;
        }
        let (head, tail) = q.split_at_mut(k + 1);
        let v = &head[k][k..];
        for col in tail.iter_mut() {
            let dot = v.iter().zip(&col[k..]).map(|(a, b)| *a * *b).sum::<F>();
            let s = F::lit(2.0) * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(v) {
                *c = *c - s * *vi;
            }
        }
        let dot = v.iter().zip(&rhs[k..]).map(|(a, b)| *a * *b).sum::<F>();
        let s = F::lit(2.0) * dot / vnorm2;
        for (r, vi) in rhs[k..].iter_mut().zip(v) {
            *r = *r - s * *vi;
        }
    }

    let scale = diag.iter().fold(F::zero(), |m, d| m.max(d.abs()));
    let tol = F::epsilon().sqrt() * scale;
    if let Some(column) = diag.iter().position(|d| d.abs() <= tol) {
        return Err(Singular { column });
    }

    // back substitution with R (diag on the diagonal, q[j][i] above it)
    let mut x = vec![F::zero(); cols];
    for i in (0..cols).rev() {
        let mut acc = rhs[i];
        for j in i + 1..cols {
            acc = acc - q[j][i] * x[j];
        }
        x[i] = acc / diag[i];
    }
    Ok(x)
}
