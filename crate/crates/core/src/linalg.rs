//! Small dense symmetric systems (p x p, p rarely above ten).

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;

/// Relative pivot threshold below which a column counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Weighted Gram matrix `sum_i w_i x_i x_i^T`; `weights = None` means all ones.
pub fn weighted_gram(data: &Dataset, weights: Option<&[f64]>) -> DMatrix<f64> {
    let p = data.p();
    let mut upper = vec![0.0; p * p];
    for (i, row) in data.rows().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let wa = w * row[a];
            for b in a..p {
                upper[a * p + b] += wa * row[b];
            }
        }
    }
    DMatrix::from_fn(p, p, |r, c| {
        if r <= c {
            upper[r * p + c]
        } else {
            upper[c * p + r]
        }
    })
}

/// Solves `m x = rhs` for symmetric positive definite `m` after scaling it to
/// unit diagonal. Returns `None` if the scaled matrix is not numerically
/// positive definite.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = unit_diagonal_scale(m)?;
    let scaled = scale_sym(m, &scale);
    let chol = scaled.cholesky()?;
    let z = chol.solve(&rhs.component_mul(&scale));
    let x = z.component_mul(&scale);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Factorization reused for several right-hand sides.
pub struct SpdFactor {
    scale: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let scale = unit_diagonal_scale(m)?;
        let chol = scale_sym(m, &scale).cholesky()?;
        Some(Self { scale, chol })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve(&rhs.component_mul(&self.scale))
            .component_mul(&self.scale)
    }
}

/// Solves with a ridge `eps * I` added to the unit-diagonal-scaled matrix.
pub fn spd_solve_ridged(m: &DMatrix<f64>, rhs: &DVector<f64>, eps: f64) -> Option<DVector<f64>> {
    let scale = unit_diagonal_scale(m)?;
    let mut scaled = scale_sym(m, &scale);
    for i in 0..scaled.nrows() {
        scaled[(i, i)] += eps;
    }
    let chol = scaled.cholesky()?;
    let x = chol.solve(&rhs.component_mul(&scale)).component_mul(&scale);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn unit_diagonal_scale(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let d = DVector::from_iterator(m.nrows(), m.diagonal().iter().copied());
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    Some(d.map(|v| 1.0 / v.sqrt()))
}

fn scale_sym(m: &DMatrix<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * scale[r] * scale[c])
}

/// Pivoted Cholesky of the correlation-scaled Gram matrix. Returns the index
/// of the first column found to be (numerically) dependent on the others.
pub fn find_dependent_column(gram: &DMatrix<f64>) -> Option<usize> {
    let p = gram.nrows();
    if let Some(j) = (0..p).find(|&j| !(gram[(j, j)] > 0.0)) {
        return Some(j);
    }
    let scale = unit_diagonal_scale(gram)?;
    let mut a = scale_sym(gram, &scale);
    let mut perm: Vec<usize> = (0..p).collect();
    for k in 0..p {
        let (piv, &max_diag) = (k..p)
            .map(|j| &a[(j, j)])
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, v)| (i + k, v))
            .expect("nonempty range");
        if max_diag <= RANK_TOLERANCE {
            return Some(perm[piv]);
        }
        a.swap_rows(k, piv);
        a.swap_columns(k, piv);
        perm.swap(k, piv);
        let lkk = max_diag.sqrt();
        a[(k, k)] = lkk;
        for i in k + 1..p {
            a[(i, k)] /= lkk;
        }
        for j in k + 1..p {
            for i in j..p {
                let v = a[(i, k)] * a[(j, k)];
                a[(i, j)] -= v;
                if i != j {
                    a[(j, i)] = a[(i, j)];
                }
            }
        }
    }
    None
}
