//! Dense linear-algebra helpers shared by the lab and the store.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Singular values sorted non-increasing.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.singular_values().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Top two singular values and the leading left/right singular vectors.
pub struct LeadingPair {
    pub sigma1: f64,
    pub sigma2: f64,
    pub left: DVector<f64>,
    pub right: DVector<f64>,
}

pub fn leading_pair(m: &DMatrix<f64>) -> LeadingPair {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order[0];
    LeadingPair {
        sigma1: svd.singular_values[top],
        sigma2: order.get(1).map_or(0.0, |&i| svd.singular_values[i]),
        left: u.column(top).into_owned(),
        right: vt.row(top).transpose(),
    }
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill
    DMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Uniformly distributed point on the unit sphere in `R^dim`.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let g = gaussian_vector(rng, dim);
        let n = g.norm();
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// Random unit vector orthogonal to the unit vector `to`.
pub fn random_unit_orthogonal<R: Rng + ?Sized>(rng: &mut R, to: &DVector<f64>) -> DVector<f64> {
    loop {
        let mut g = gaussian_vector(rng, to.len());
        g -= to * to.dot(&g);
        // second pass keeps orthogonality at rounding level
        g -= to * to.dot(&g);
        let n = g.norm();
        if n > 1e-8 {
            return g / n;
        }
    }
}

/// Random orthogonal `n×n` matrix (Q factor of a Gaussian matrix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, n).qr().q()
}

/// Orthonormal basis (as columns) of the complement of `span(a, b)` in
/// `R^dim`, always `dim − 2` columns. When `a` and `b` are parallel the
/// complement of `span(a)` loses one further random direction.
pub fn complement_basis<R: Rng + ?Sized>(rng: &mut R, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let dim = a.len();
    let mut m = gaussian_matrix(rng, dim, dim);
    m.set_column(0, a);
    m.set_column(1, b);
    let q = m.qr().q();
    q.columns(2, dim - 2).into_owned()
}
