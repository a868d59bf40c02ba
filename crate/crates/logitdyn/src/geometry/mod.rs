//! Differential geometry of the fixed-feature softmax classifier.
//!
//! The model keeps a feature vector `phi` of length `d` frozen and trains a
//! `V x d` output matrix `W`. Logits are `z = W phi`, probabilities are
//! `p = softmax(z)`, and the per-example loss is cross-entropy. This module
//! provides the value types for those objects together with the first- and
//! second-order structure: the logit gradient `g = p - y`, the logit Hessian
//! `H = Diag(p) - p p^T`, its pullback to parameter space, minimum-norm
//! preimages of logit perturbations, and the spectral decomposition of `H`
//! restricted to the complement of the constant direction.
//!
//! Numerical conventions:
//!
//! - Softmax subtracts the maximum logit before exponentiating, and
//!   cross-entropy is evaluated through log-sum-exp, never as `-ln p_y`.
//!   The harness pushes logits far apart during negative-rate phases, so the
//!   naive forms would overflow or lose the tail entirely.
//! - Probabilities below about 1e-300 can round to zero; constructors here
//!   accept such entries and the logging layer clamps them, while the math
//!   paths work in the log domain and never divide by them.

mod jacobi;

use crate::error::{Error, Result};

pub(crate) use jacobi::eigen_symmetric;

const SYMMETRY_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;
const PROB_SUM_TOL: f64 = 1e-12;
const SPECTRAL_BOUND_SLACK: f64 = 1e-10;
const BASIS_ORTHO_TOL: f64 = 1e-10;

/// Smallest curvature eigenvalue the modal decomposition will resolve.
///
/// Below this the eigensolver's convergence threshold can leave the kernel
/// direction entangled with the retained modes, so the decomposition refuses
/// rather than return an unreliable basis.
const MODAL_EIGENVALUE_FLOOR: f64 = 1e-13;
const BASIS_RECONSTRUCT_TOL: f64 = 1e-9;

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Frozen feature vector of one example, with its squared norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    phi: Vec<f64>,
    mu: f64,
}

impl FeatureVector {
    /// Wraps a feature vector and caches `mu = ||phi||^2`.
    ///
    /// # Errors
    /// Rejects empty and non-finite input.
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::InvalidInput(
                "feature vector must have d >= 1".into(),
            ));
        }
        ensure_finite(&phi, "feature vector")?;
        let mu = phi.iter().map(|x| x * x).sum();
        Ok(Self { phi, mu })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    /// Cached squared Euclidean norm of the features.
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// One-hot class label: coordinate `index` is 1, the rest are 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    index: usize,
    num_classes: usize,
}

impl OneHotLabel {
    pub fn new(index: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if index >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label index {index} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { index, num_classes })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Value of coordinate `i` of the implied one-hot vector.
    pub fn indicator(&self, i: usize) -> f64 {
        if i == self.index {
            1.0
        } else {
            0.0
        }
    }
}

/// Trainable output matrix `W`, stored row-major with one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl ParameterMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    /// Builds a matrix from a row-major buffer.
    ///
    /// # Errors
    /// Rejects a buffer of the wrong length and non-finite entries.
    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "buffer of length {} cannot be {rows} x {cols}",
                data.len()
            )));
        }
        ensure_finite(&data, "parameter matrix")?;
        Ok(Self { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Forward map `z = W phi`.
    ///
    /// # Errors
    /// Rejects a feature vector whose length differs from the column count.
    pub fn logits(&self, phi: &FeatureVector) -> Result<LogitVector> {
        if phi.dim() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "feature dim {} does not match matrix cols {}",
                phi.dim(),
                self.cols
            )));
        }
        let mut z = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(phi.phi()) {
                acc += w * x;
            }
            z[i] = acc;
        }
        LogitVector::new(z)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest entry-wise absolute difference against another matrix.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(
                "matrices must share a shape to be compared".into(),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Frobenius norm of the difference against another matrix.
    pub fn frobenius_diff(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(
                "matrices must share a shape to be compared".into(),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Logit vector `z`, length V.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    z: Vec<f64>,
}

impl LogitVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        ensure_finite(&z, "logit vector")?;
        Ok(Self { z })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Probability vector on the simplex.
///
/// Entries are validated to lie in `[0, 1]` and sum to 1 within 1e-12. An
/// entry can be exactly 0 (or the top entry exactly 1) only when a logit gap
/// exceeds roughly 745, where the softmax tail underflows; interior states
/// always carry strictly positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    p: Vec<f64>,
}

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        ensure_finite(&p, "probability vector")?;
        if p.is_empty() {
            return Err(Error::InvalidInput("probability vector is empty".into()));
        }
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidInput(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(Self { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Logit gradient `g = p - y` of the cross-entropy loss, or a forecast of
/// one.
///
/// Coordinates sum to zero: the loss is invariant under adding a constant to
/// all logits, so its gradient is orthogonal to the all-ones direction. The
/// zero-sum check scales with the entry magnitude because forecast residuals
/// can grow past the unit box that true residuals live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    g: Vec<f64>,
}

impl Residual {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        ensure_finite(&g, "residual")?;
        let sum: f64 = g.iter().sum();
        let scale = g.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "residual coordinates sum to {sum}, expected 0"
            )));
        }
        Ok(Self { g })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Logit Hessian `H = Diag(p) - p p^T` of softmax cross-entropy.
///
/// Symmetric, positive semidefinite, rows sum to zero (the all-ones vector
/// spans the kernel on interior states), and the spectral norm never exceeds
/// 1/2. Construction checks symmetry, the row sums, and the spectral bound
/// through Gershgorin discs; semidefiniteness is a property test concern.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitHessian {
    h: Vec<f64>,
    v: usize,
}

impl LogitHessian {
    /// Validates and wraps a row-major V x V buffer.
    pub fn new(h: Vec<f64>, v: usize) -> Result<Self> {
        if h.len() != v * v {
            return Err(Error::DimensionMismatch(format!(
                "buffer of length {} cannot be {v} x {v}",
                h.len()
            )));
        }
        ensure_finite(&h, "logit Hessian")?;
        let mut max_disc = 0.0f64;
        for i in 0..v {
            let mut row_sum = 0.0;
            let mut radius = 0.0;
            for j in 0..v {
                let hij = h[i * v + j];
                if (hij - h[j * v + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "Hessian asymmetric at ({i}, {j})"
                    )));
                }
                row_sum += hij;
                if i != j {
                    radius += hij.abs();
                }
            }
            if row_sum.abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "Hessian row {i} sums to {row_sum}, expected 0"
                )));
            }
            max_disc = max_disc.max(h[i * v + i] + radius);
        }
        if max_disc > 0.5 + SPECTRAL_BOUND_SLACK {
            return Err(Error::InvalidInput(format!(
                "Hessian Gershgorin bound {max_disc} exceeds 1/2"
            )));
        }
        Ok(Self { h, v })
    }

    pub fn dim(&self) -> usize {
        self.v
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.v + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    /// Matrix-vector product `H x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.v {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} does not match Hessian dim {}",
                x.len(),
                self.v
            )));
        }
        let mut out = vec![0.0; self.v];
        for i in 0..self.v {
            let mut acc = 0.0;
            for j in 0..self.v {
                acc += self.h[i * self.v + j] * x[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }
}

/// Spectral decomposition of the logit Hessian restricted to the complement
/// of the all-ones direction: `V - 1` strictly positive eigenvalues in
/// descending order with orthonormal eigenvectors.
///
/// Sign policy: each eigenvector is flipped so that its entry of largest
/// absolute value is positive, ties resolved toward the lowest index. Equal
/// eigenvalues are ordered by lexicographic comparison of their sign-fixed
/// eigenvectors. Both rules exist so that mode indices and coefficient signs
/// are reproducible across runs and platforms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
}

impl ModalBasis {
    /// Validates eigenvalues and eigenvectors produced elsewhere.
    ///
    /// Checks positivity, the descending order, orthonormality, and
    /// orthogonality to the all-ones vector, each within fixed tolerances.
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Vec<Vec<f64>>) -> Result<Self> {
        if eigenvalues.len() != eigenvectors.len() {
            return Err(Error::DimensionMismatch(
                "eigenvalue and eigenvector counts differ".into(),
            ));
        }
        if eigenvalues.is_empty() {
            return Err(Error::InvalidInput("modal basis has no modes".into()));
        }
        let dim = eigenvectors[0].len();
        for w in eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidInput(
                    "eigenvalues must be in descending order".into(),
                ));
            }
        }
        for (k, lambda) in eigenvalues.iter().enumerate() {
            if !(*lambda > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "eigenvalue {k} is {lambda}, expected strictly positive"
                )));
            }
        }
        for (k, vk) in eigenvectors.iter().enumerate() {
            if vk.len() != dim {
                return Err(Error::DimensionMismatch(
                    "eigenvectors have inconsistent lengths".into(),
                ));
            }
            let ones_dot: f64 = vk.iter().sum();
            if ones_dot.abs() > BASIS_ORTHO_TOL {
                return Err(Error::InvalidInput(format!(
                    "eigenvector {k} is not orthogonal to the all-ones vector"
                )));
            }
            for (l, vl) in eigenvectors.iter().enumerate() {
                let dot: f64 = vk.iter().zip(vl).map(|(a, b)| a * b).sum();
                let expect = if k == l { 1.0 } else { 0.0 };
                if (dot - expect).abs() > BASIS_ORTHO_TOL {
                    return Err(Error::InvalidInput(format!(
                        "eigenvectors {k} and {l} are not orthonormal"
                    )));
                }
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Number of retained modes, `V - 1`.
    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Dimension V of the underlying logit space.
    pub fn dim(&self) -> usize {
        self.eigenvectors[0].len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k]
    }

    /// Projects a vector onto the modes, returning one coefficient per mode.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} does not match basis dim {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .eigenvectors
            .iter()
            .map(|vk| vk.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Numerically stable softmax with max-subtraction.
pub fn softmax(z: &LogitVector) -> Result<ProbVector> {
    if z.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    let zs = z.as_slice();
    let m = zs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut p: Vec<f64> = zs.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = p.iter().sum();
    for x in &mut p {
        *x /= sum;
    }
    ProbVector::new(p)
}

/// Cross-entropy `-ln p_y`, evaluated through log-sum-exp.
///
/// The returned value is `lse(z) - z_y`, which is nonnegative by construction
/// and does not lose the tail when the probabilities are extreme.
pub fn cross_entropy(z: &LogitVector, y: &OneHotLabel) -> Result<f64> {
    let zs = z.as_slice();
    if zs.len() != y.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "logit length {} does not match label classes {}",
            zs.len(),
            y.num_classes()
        )));
    }
    Ok(log_sum_exp(zs) - zs[y.index()])
}

/// `ln(sum_i e^{z_i})` with max-subtraction.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum: f64 = z.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Gradient of cross-entropy with respect to the logits: `g = p - y`.
pub fn logit_gradient(p: &ProbVector, y: &OneHotLabel) -> Result<Residual> {
    if p.len() != y.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "probability length {} does not match label classes {}",
            p.len(),
            y.num_classes()
        )));
    }
    let g: Vec<f64> = p
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &pi)| pi - y.indicator(i))
        .collect();
    Residual::new(g)
}

/// Hessian of cross-entropy with respect to the logits:
/// `H = Diag(p) - p p^T`.
pub fn logit_hessian(p: &ProbVector) -> LogitHessian {
    let ps = p.as_slice();
    let v = ps.len();
    let mut h = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..=i {
            let hij = if i == j {
                ps[i] - ps[i] * ps[i]
            } else {
                -(ps[i] * ps[j])
            };
            h[i * v + j] = hij;
            h[j * v + i] = hij;
        }
    }
    LogitHessian { h, v }
}

/// `H g` evaluated in closed form as `p_i (p_i - y_i - C)` with
/// `C = sum_k p_k^2 - p_y`, avoiding the matrix-vector product.
pub fn hessian_gradient_product(p: &ProbVector, y: &OneHotLabel) -> Result<Vec<f64>> {
    if p.len() != y.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "probability length {} does not match label classes {}",
            p.len(),
            y.num_classes()
        )));
    }
    let ps = p.as_slice();
    let c = ps.iter().map(|x| x * x).sum::<f64>() - ps[y.index()];
    Ok(ps
        .iter()
        .enumerate()
        .map(|(i, &pi)| pi * (pi - y.indicator(i) - c))
        .collect())
}

/// Gradient of the loss with respect to `W`: the rank-one matrix `g phi^T`.
pub fn parameter_gradient(g: &Residual, phi: &FeatureVector) -> ParameterMatrix {
    let rows = g.len();
    let cols = phi.dim();
    let mut data = vec![0.0; rows * cols];
    for (i, &gi) in g.as_slice().iter().enumerate() {
        for (a, &fa) in phi.phi().iter().enumerate() {
            data[i * cols + a] = gi * fa;
        }
    }
    ParameterMatrix { data, rows, cols }
}

/// Action of the parameter-space Hessian on a direction:
/// `H_W(dW) = H (dW phi) phi^T`.
///
/// Factoring through the induced logit perturbation `dW phi` keeps the cost
/// at `O(Vd)`; the result agrees with the explicit Kronecker form
/// `(phi phi^T) (x) H` acting on the column-stacked direction.
pub fn apply_parameter_hessian(
    h: &LogitHessian,
    dw: &ParameterMatrix,
    phi: &FeatureVector,
) -> Result<ParameterMatrix> {
    if dw.rows() != h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} rows but Hessian dim is {}",
            dw.rows(),
            h.dim()
        )));
    }
    if dw.cols() != phi.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} cols but feature dim is {}",
            dw.cols(),
            phi.dim()
        )));
    }
    let dz = dw.logits(phi)?;
    let hdz = h.apply(dz.as_slice())?;
    let rows = dw.rows();
    let cols = dw.cols();
    let mut data = vec![0.0; rows * cols];
    for (i, &hi) in hdz.iter().enumerate() {
        for (a, &fa) in phi.phi().iter().enumerate() {
            data[i * cols + a] = hi * fa;
        }
    }
    Ok(ParameterMatrix { data, rows, cols })
}

/// Minimum-Frobenius-norm parameter perturbation inducing a given logit
/// change: `dW = dz phi^T / mu`.
///
/// Any other preimage differs by an element of the kernel of `dW -> dW phi`,
/// which is orthogonal to this one, so adding kernel mass strictly increases
/// the Frobenius norm.
///
/// # Errors
/// [`Error::DegenerateFeature`] when `mu = 0`, where no preimage exists for a
/// nonzero `dz`.
pub fn min_norm_preimage(dz: &LogitVector, phi: &FeatureVector) -> Result<ParameterMatrix> {
    if phi.mu() == 0.0 {
        return Err(Error::DegenerateFeature);
    }
    let rows = dz.len();
    let cols = phi.dim();
    let mu = phi.mu();
    let mut data = vec![0.0; rows * cols];
    for (i, &dzi) in dz.as_slice().iter().enumerate() {
        let scale = dzi / mu;
        for (a, &fa) in phi.phi().iter().enumerate() {
            data[i * cols + a] = scale * fa;
        }
    }
    Ok(ParameterMatrix { data, rows, cols })
}

/// Eigendecomposition of the logit Hessian on the complement of the constant
/// direction.
///
/// The full V x V decomposition is computed by cyclic Jacobi rotations; the
/// eigenpair closest to the all-ones kernel direction is discarded and the
/// remaining `V - 1` pairs are sign-fixed and sorted as described on
/// [`ModalBasis`]. The reconstruction `sum_k lambda_k v_k v_k^T` is checked
/// against the input within 1e-9 in Frobenius norm before returning.
///
/// # Errors
/// Propagates eigensolver non-convergence; rejects bases whose retained
/// eigenvalues do not clear a small positive floor, which indicates
/// probabilities degenerate beyond what the decomposition can resolve.
pub fn spectral_decompose(h: &LogitHessian) -> Result<ModalBasis> {
    let v = h.dim();
    if v < 2 {
        return Err(Error::InvalidInput(
            "spectral decomposition needs V >= 2".into(),
        ));
    }
    let (vals, vecs) = eigen_symmetric(h.as_slice(), v)?;

    // The kernel candidate is the eigenvector most aligned with all-ones.
    let mut kernel_idx = 0;
    let mut best = -1.0;
    for (k, vec) in vecs.iter().enumerate() {
        let align = vec.iter().sum::<f64>().abs();
        if align > best {
            best = align;
            kernel_idx = k;
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = vals
        .into_iter()
        .zip(vecs)
        .enumerate()
        .filter(|(k, _)| *k != kernel_idx)
        .map(|(_, pair)| pair)
        .collect();

    // The kernel direction is known exactly, so the retained vectors are
    // deflated against all-ones and re-orthonormalized. This repairs the
    // slight kernel contamination the eigensolver's finite convergence
    // threshold leaves behind, which otherwise grows as eigenvalues shrink.
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
    for (_, vec) in &mut pairs {
        let mean = vec.iter().sum::<f64>() / v as f64;
        for x in vec.iter_mut() {
            *x -= mean;
        }
        for prev in &kept {
            let dot: f64 = vec.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, b) in vec.iter_mut().zip(prev) {
                *x -= dot * b;
            }
        }
        let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::InvalidInput(
                "eigenvector collapses under kernel deflation; probabilities are \
                 too close to a simplex vertex for modal diagnostics"
                    .into(),
            ));
        }
        for x in vec.iter_mut() {
            *x /= norm;
        }
        kept.push(vec.clone());
    }

    for (_, vec) in &mut pairs {
        apply_sign_convention(vec);
    }
    pairs.sort_by(
        |(la, va), (lb, vb)| match lb.partial_cmp(la).expect("eigenvalues are finite") {
            std::cmp::Ordering::Equal => lexicographic(va, vb),
            other => other,
        },
    );

    let eigenvalues: Vec<f64> = pairs.iter().map(|(l, _)| *l).collect();
    let eigenvectors: Vec<Vec<f64>> = pairs.into_iter().map(|(_, v)| v).collect();

    for (k, lambda) in eigenvalues.iter().enumerate() {
        if !(*lambda > MODAL_EIGENVALUE_FLOOR) {
            return Err(Error::InvalidInput(format!(
                "retained eigenvalue {k} is {lambda}; probabilities are too close \
                 to a simplex vertex for modal diagnostics"
            )));
        }
    }

    let basis = ModalBasis::new(eigenvalues, eigenvectors)?;

    let mut err = 0.0f64;
    for i in 0..v {
        for j in 0..v {
            let mut rec = 0.0;
            for k in 0..basis.num_modes() {
                rec += basis.eigenvalues[k] * basis.eigenvectors[k][i] * basis.eigenvectors[k][j];
            }
            let d = rec - h.get(i, j);
            err += d * d;
        }
    }
    if err.sqrt() > BASIS_RECONSTRUCT_TOL {
        return Err(Error::InvalidInput(format!(
            "spectral reconstruction error {:e} exceeds {BASIS_RECONSTRUCT_TOL:e}",
            err.sqrt()
        )));
    }

    Ok(basis)
}

/// Flips the vector so its entry of largest absolute value is positive, with
/// ties resolved toward the lowest index.
fn apply_sign_convention(vec: &mut [f64]) {
    let mut idx = 0;
    let mut best = -1.0;
    for (i, &x) in vec.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if vec[idx] < 0.0 {
        for x in vec.iter_mut() {
            *x = -*x;
        }
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("eigenvector entries are finite") {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}
