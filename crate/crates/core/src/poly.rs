//! Real polynomial helpers shared by the model, synthesis and analysis code.
//!
//! Full coefficient vectors are stored in ascending powers: `p[i]` multiplies `z^i`.
//! Monic polynomials are often passed by their lower coefficients only, with
//! the leading one implied.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Appends the implicit leading one to monic lower coefficients.
pub fn monic_full(lower: &[f64]) -> Vec<f64> {
    let mut full = lower.to_vec();
    full.push(1.0);
    full
}

/// Convolution of two full coefficient vectors.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Horner evaluation of a full coefficient vector at a complex point.
pub fn eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Drops trailing (highest power) coefficients that are exactly zero.
pub fn trim(coeffs: &[f64]) -> &[f64] {
    let mut len = coeffs.len();
    while len > 0 && coeffs[len - 1] == 0.0 {
        len -= 1;
    }
    &coeffs[..len]
}

/// Companion matrix whose characteristic polynomial is the monic polynomial
/// with the given lower coefficients: ones on the superdiagonal and
/// `-lower` in the last row.
pub fn companion_matrix(lower: &[f64]) -> DMatrix<f64> {
    let m = lower.len();
    let mut f = DMatrix::zeros(m, m);
    for i in 0..m.saturating_sub(1) {
        f[(i, i + 1)] = 1.0;
    }
    for (j, &b) in lower.iter().enumerate() {
        f[(m - 1, j)] = -b;
    }
    f
}

/// Roots of a full coefficient vector, via companion-matrix eigenvalues.
pub fn roots(coeffs: &[f64]) -> Vec<Complex64> {
    let p = trim(coeffs);
    if p.len() <= 1 {
        return Vec::new();
    }
    let lead = p[p.len() - 1];
    let lower: Vec<f64> = p[..p.len() - 1].iter().map(|c| c / lead).collect();
    eigenvalues(&companion_matrix(&lower))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    if m.nrows() == 1 {
        return vec![Complex64::new(m[(0, 0)], 0.0)];
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Groups numerically repeated roots and returns the centroid of each group.
///
/// A root of multiplicity `r` computed in floating point splits into a small
/// star of radius about `eps^(1/r)`; the centroid of that star is accurate to
/// roughly machine precision, so moduli of centroids can be compared against
/// tight tolerances.
pub fn root_clusters(roots: &[Complex64], radius: f64) -> Vec<(Complex64, usize)> {
    let mut assigned = vec![false; roots.len()];
    let mut clusters = Vec::new();
    for i in 0..roots.len() {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut members = vec![roots[i]];
        // grow transitively so a whole star ends up in one cluster
        let mut changed = true;
        while changed {
            changed = false;
            for j in 0..roots.len() {
                if !assigned[j] && members.iter().any(|r| (r - roots[j]).norm() < radius) {
                    assigned[j] = true;
                    members.push(roots[j]);
                    changed = true;
                }
            }
        }
        let count = members.len();
        let centroid = members.iter().sum::<Complex64>() / count as f64;
        clusters.push((centroid, count));
    }
    clusters
}

/// Cluster radius used when grouping repeated roots.
pub const CLUSTER_RADIUS: f64 = 1e-3;

/// Largest root modulus after merging numerically repeated roots.
pub fn max_root_modulus(coeffs: &[f64]) -> f64 {
    root_clusters(&roots(coeffs), CLUSTER_RADIUS)
        .iter()
        .map(|(c, _)| c.norm())
        .fold(0.0, f64::max)
}
