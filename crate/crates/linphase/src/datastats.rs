//! Second-moment statistics of the training data.
//!
//! Everything downstream (the effective landscape, the full-parameter loss,
//! sweeps, dynamics) consumes the data only through its second moments: the
//! input covariance `A0 = E[xx^T]`, the input-label correlation `E[xy]`, and
//! the label second moment `E[y^2]`. [`MomentData`] stores these together
//! with the eigendecomposition `A0 = Q diag(a) Q^T` and the rotated signal
//! `E[x'y] = Q^T E[xy]`, which is the basis in which every closed form is
//! evaluated.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rng::random_orthogonal;

/// Eigenvalues of the covariance this far below zero are repaired to zero;
/// anything more negative is rejected as not positive semi-definite.
const PSD_REPAIR_TOL: f64 = 1e-12;

/// Slack allowed in the `E[y^2] >= E[xy]^T pinv(A0) E[xy]` feasibility check.
const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("covariance is not symmetric: |cov[{i},{j}] - cov[{j},{i}]| = {delta:.3e}")]
    AsymmetricCov { i: usize, j: usize, delta: f64 },
    #[error("covariance eigenvalue {value:.6e} is below the PSD repair threshold")]
    NegativeEigenvalue { value: f64 },
    #[error("eigendecomposition round-trip error {error:.3e} exceeds {tol:.3e}")]
    Reconstruction { error: f64, tol: f64 },
    #[error(
        "E[y^2] = {y2} is not realizable by any joint distribution with these moments; \
         minimal feasible E[y^2] is {min_feasible}"
    )]
    InfeasibleSecondMoment { y2: f64, min_feasible: f64 },
    #[error(
        "signal component {value:.3e} on a zero-variance input direction is not realizable \
         (a zero-variance direction forces E[xy] to vanish along it)"
    )]
    SignalOnNullDirection { value: f64 },
    #[error("signal length {signal} does not match the number of eigenvalues {eigvals}")]
    SignalLength { signal: usize, eigvals: usize },
    #[error("eigenvalue input {value} is negative")]
    NegativeEigenvalueInput { value: f64 },
    #[error("row {row}: expected dimension {expected}, got {got}")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("row {row}: non-finite entry")]
    NonFinite { row: usize },
    #[error("no samples provided")]
    Empty,
    #[error("non-finite moment input")]
    NonFiniteInput,
    #[error("csv header: {0}")]
    Header(String),
    #[error("csv row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Second-moment statistics of a dataset, with the eigenstructure of the
/// input covariance attached.
///
/// Immutable after construction; construction enforces symmetry, positive
/// semi-definiteness (with a tiny repair band), the eigendecomposition
/// round-trip, and realizability of `E[y^2]`.
#[derive(Debug, Clone)]
pub struct MomentData {
    dim: usize,
    cov: DMatrix<f64>,
    xy: DVector<f64>,
    y2: f64,
    eigvals: DVector<f64>,
    rotation: DMatrix<f64>,
    xy_rot: DVector<f64>,
}

impl MomentData {
    /// Builds moment data from a covariance matrix, input-label correlation,
    /// and label second moment. The eigendecomposition is computed here.
    pub fn new(cov: DMatrix<f64>, xy: DVector<f64>, y2: f64) -> Result<Self, DataError> {
        let dim = cov.nrows();
        if cov.ncols() != dim || xy.len() != dim {
            return Err(DataError::DimensionMismatch {
                row: 0,
                expected: dim,
                got: xy.len().max(cov.ncols()),
            });
        }
        if !y2.is_finite() || cov.iter().any(|v| !v.is_finite()) || xy.iter().any(|v| !v.is_finite())
        {
            return Err(DataError::NonFiniteInput);
        }
        let scale = 1.0 + cov.amax();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let delta = (cov[(i, j)] - cov[(j, i)]).abs();
                if delta > PSD_REPAIR_TOL * scale {
                    return Err(DataError::AsymmetricCov { i, j, delta });
                }
            }
        }
        // Symmetrize before decomposing so roundoff asymmetry cannot leak
        // into the eigenvectors.
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();

        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let mut eigvals = DVector::zeros(dim);
        let mut rotation = DMatrix::zeros(dim, dim);
        for (k, &idx) in order.iter().enumerate() {
            let mut val = eig.eigenvalues[idx];
            if val < 0.0 {
                if val < -PSD_REPAIR_TOL * scale {
                    return Err(DataError::NegativeEigenvalue { value: val });
                }
                val = 0.0;
            }
            eigvals[k] = val;
            rotation.set_column(k, &eig.eigenvectors.column(idx));
        }

        let recon = &rotation * DMatrix::from_diagonal(&eigvals) * rotation.transpose();
        let err = (&recon - &sym).norm();
        let tol = 1e-10 * (1.0 + sym.norm());
        if err > tol {
            return Err(DataError::Reconstruction { error: err, tol });
        }

        let xy_rot = rotation.transpose() * &xy;
        let data = MomentData {
            dim,
            cov: sym,
            xy,
            y2,
            eigvals,
            rotation,
            xy_rot,
        };
        data.check_feasible()?;
        Ok(data)
    }

    /// Builds moment data directly from a known eigensystem; used by
    /// [`make_synthetic`] so the rotated signal is stored verbatim.
    fn from_eigensystem(
        eigvals: DVector<f64>,
        rotation: DMatrix<f64>,
        xy_rot: DVector<f64>,
        y2: f64,
    ) -> Result<Self, DataError> {
        let dim = eigvals.len();
        let cov = &rotation * DMatrix::from_diagonal(&eigvals) * rotation.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        let xy = &rotation * &xy_rot;
        let data = MomentData {
            dim,
            cov,
            xy,
            y2,
            eigvals,
            rotation,
            xy_rot,
        };
        data.check_feasible()?;
        Ok(data)
    }

    fn check_feasible(&self) -> Result<(), DataError> {
        if !self.y2.is_finite() {
            return Err(DataError::NonFiniteInput);
        }
        let min_feasible = self.min_feasible_y2();
        if self.y2 < 0.0 || self.y2 < min_feasible - FEASIBILITY_SLACK {
            return Err(DataError::InfeasibleSecondMoment {
                y2: self.y2,
                min_feasible,
            });
        }
        // A direction with vanishing input variance carries no input at
        // all, so the correlation with the label must vanish there too.
        let cutoff = 1e-12 * (1.0 + self.a_max());
        let signal_tol = FEASIBILITY_SLACK * (1.0 + self.xy.norm());
        for (a, s) in self.eigvals.iter().zip(self.xy_rot.iter()) {
            if *a <= cutoff && s.abs() > signal_tol {
                return Err(DataError::SignalOnNullDirection { value: *s });
            }
        }
        Ok(())
    }

    /// `E[xy]^T pinv(A0) E[xy]`, the smallest label second moment any joint
    /// distribution with these moments can have.
    pub fn min_feasible_y2(&self) -> f64 {
        let a_max = self.eigvals.max();
        let cutoff = 1e-12 * (1.0 + a_max);
        self.eigvals
            .iter()
            .zip(self.xy_rot.iter())
            .filter(|(&a, _)| a > cutoff)
            .map(|(&a, &s)| s * s / a)
            .sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Input covariance `A0 = E[xx^T]`.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Input-label correlation `E[xy]`.
    pub fn xy(&self) -> &DVector<f64> {
        &self.xy
    }

    /// Label second moment `E[y^2]`.
    pub fn y2(&self) -> f64 {
        self.y2
    }

    /// Eigenvalues of the covariance, sorted descending, clamped at zero.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Largest covariance eigenvalue.
    pub fn a_max(&self) -> f64 {
        if self.dim == 0 {
            0.0
        } else {
            self.eigvals[0]
        }
    }

    /// Orthogonal `Q` with `A0 = Q diag(a) Q^T`.
    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Signal in the eigenbasis, `E[x'y] = Q^T E[xy]`.
    pub fn xy_rot(&self) -> &DVector<f64> {
        &self.xy_rot
    }
}

/// The three signal norms every depth-1 closed form is written in:
/// `e0 = ||E[xy]||`, `e1 = ||E[xy]||_{A0}`, `e2 = ||E[xy]||_{A0^2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalNorms {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Computes the signal norms of [`MomentData`] in the eigenbasis.
pub fn signal_norms(data: &MomentData) -> SignalNorms {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (a, s) in data.eigvals.iter().zip(data.xy_rot.iter()) {
        let s_sq = s * s;
        s0 += s_sq;
        s1 += a * s_sq;
        s2 += a * a * s_sq;
    }
    SignalNorms {
        e0: s0.sqrt(),
        e1: s1.sqrt(),
        e2: s2.sqrt(),
    }
}

/// Builds moment data with prescribed covariance spectrum and signal, under
/// a seeded random orthogonal change of basis.
///
/// `signal` is given in the eigenbasis and is stored exactly: the returned
/// data has `xy_rot == signal` (after the joint descending sort on the
/// eigenvalues).
pub fn make_synthetic(
    eigvals: &[f64],
    signal: &[f64],
    y2: f64,
    seed: u64,
) -> Result<MomentData, DataError> {
    if signal.len() != eigvals.len() {
        return Err(DataError::SignalLength {
            signal: signal.len(),
            eigvals: eigvals.len(),
        });
    }
    if eigvals.is_empty() {
        return Err(DataError::Empty);
    }
    if eigvals.iter().chain(signal.iter()).any(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteInput);
    }
    if let Some(&bad) = eigvals.iter().find(|&&a| a < 0.0) {
        return Err(DataError::NegativeEigenvalueInput { value: bad });
    }
    let dim = eigvals.len();
    let mut pairs: Vec<(f64, f64)> = eigvals
        .iter()
        .copied()
        .zip(signal.iter().copied())
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let sorted_eigvals = DVector::from_iterator(dim, pairs.iter().map(|p| p.0));
    let sorted_signal = DVector::from_iterator(dim, pairs.iter().map(|p| p.1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = random_orthogonal(dim, &mut rng);
    MomentData::from_eigensystem(sorted_eigvals, rotation, sorted_signal, y2)
}

/// Population moments of a finite sample: `cov = mean(xx^T)`,
/// `xy = mean(x y)`, `y2 = mean(y^2)` (divide by n, not n-1).
pub fn from_samples(rows: &[(Vec<f64>, f64)]) -> Result<MomentData, DataError> {
    let n = rows.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let dim = rows[0].0.len();
    if dim == 0 {
        return Err(DataError::Empty);
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut xy = DVector::<f64>::zeros(dim);
    let mut y2 = 0.0;
    for (idx, (x, y)) in rows.iter().enumerate() {
        if x.len() != dim {
            return Err(DataError::DimensionMismatch {
                row: idx,
                expected: dim,
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: idx });
        }
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += x[i] * x[j];
            }
            xy[i] += x[i] * y;
        }
        y2 += y * y;
    }
    let inv_n = 1.0 / n as f64;
    cov *= inv_n;
    xy *= inv_n;
    y2 *= inv_n;
    MomentData::new(cov, xy, y2)
}

/// Reads sample rows from CSV: header `x_1,...,x_d,y` required, one sample
/// per row, `.` decimal separator.
pub fn read_csv<R: Read>(reader: R) -> Result<MomentData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ncols = headers.len();
    if ncols < 2 {
        return Err(DataError::Header(format!(
            "expected at least columns x_1,y; got {ncols} column(s)"
        )));
    }
    let dim = ncols - 1;
    for (i, name) in headers.iter().enumerate() {
        let expected = if i < dim {
            format!("x_{}", i + 1)
        } else {
            "y".to_string()
        };
        if name != expected {
            return Err(DataError::Header(format!(
                "column {} is named {name:?}, expected {expected:?}",
                i + 1
            )));
        }
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != ncols {
            return Err(DataError::DimensionMismatch {
                row: idx,
                expected: dim,
                got: record.len().saturating_sub(1),
            });
        }
        let mut x = Vec::with_capacity(dim);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| DataError::Parse {
                row: idx,
                column: headers[col].to_string(),
                value: field.to_string(),
            })?;
            if col < dim {
                x.push(value);
            } else {
                rows.push((std::mem::take(&mut x), value));
            }
        }
    }
    from_samples(&rows)
}

/// Convenience wrapper for [`read_csv`] over a file path.
pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<MomentData, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn synthetic_one_dim_identity() {
        let data = make_synthetic(&[1.0], &[0.5], 1.0, 0).unwrap();
        let norms = signal_norms(&data);
        assert_relative_eq!(norms.e0, 0.5, epsilon = 1e-15);
        assert_relative_eq!(norms.e1, 0.5, epsilon = 1e-15);
        assert_relative_eq!(norms.e2, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn synthetic_isotropic_two_dim() {
        let data = make_synthetic(&[1.0, 1.0], &[1.0, 0.0], 2.0, 1).unwrap();
        let norms = signal_norms(&data);
        assert_relative_eq!(norms.e0, 1.0, epsilon = 1e-14);
        assert_relative_eq!(norms.e1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(norms.e2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn synthetic_quadratic_forms_hand_evaluated() {
        // e1^2 = a s^2 = 2 * 0.25, e2^2 = a^2 s^2 = 4 * 0.25.
        let data = make_synthetic(&[2.0], &[0.5], 1.0, 2).unwrap();
        let norms = signal_norms(&data);
        assert_relative_eq!(norms.e0, 0.5, epsilon = 1e-15);
        assert_relative_eq!(norms.e1 * norms.e1, 0.5, epsilon = 1e-15);
        assert_relative_eq!(norms.e2 * norms.e2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn synthetic_signal_stored_exactly() {
        let data = make_synthetic(&[1.5, 0.5, 0.25], &[0.3, -0.2, 0.1], 2.0, 9).unwrap();
        assert_eq!(data.xy_rot()[0], 0.3);
        assert_eq!(data.xy_rot()[1], -0.2);
        assert_eq!(data.xy_rot()[2], 0.1);
    }

    #[test]
    fn synthetic_sorts_eigenvalues_with_signal() {
        let data = make_synthetic(&[0.5, 2.0], &[0.1, 0.4], 3.0, 5).unwrap();
        assert_eq!(data.eigvals()[0], 2.0);
        assert_eq!(data.eigvals()[1], 0.5);
        assert_eq!(data.xy_rot()[0], 0.4);
        assert_eq!(data.xy_rot()[1], 0.1);
    }

    #[test]
    fn synthetic_infeasible_y2_names_minimum() {
        let err = make_synthetic(&[1.0], &[1.0], 0.5, 0).unwrap_err();
        match err {
            DataError::InfeasibleSecondMoment { y2, min_feasible } => {
                assert_eq!(y2, 0.5);
                assert_relative_eq!(min_feasible, 1.0, epsilon = 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn from_samples_single_row() {
        let data = from_samples(&[(vec![1.0], 1.0)]).unwrap();
        assert_eq!(data.cov()[(0, 0)], 1.0);
        assert_eq!(data.xy()[0], 1.0);
        assert_eq!(data.y2(), 1.0);
    }

    #[test]
    fn from_samples_symmetric_cancellation() {
        let data = from_samples(&[(vec![1.0], 1.0), (vec![-1.0], 1.0)]).unwrap();
        assert_eq!(data.cov()[(0, 0)], 1.0);
        assert_eq!(data.xy()[0], 0.0);
        assert_eq!(data.y2(), 1.0);
    }

    #[test]
    fn from_samples_mean_of_outer_products() {
        let data = from_samples(&[(vec![1.0, 0.0], 2.0), (vec![0.0, 1.0], 0.0)]).unwrap();
        assert_eq!(data.cov()[(0, 0)], 0.5);
        assert_eq!(data.cov()[(1, 1)], 0.5);
        assert_eq!(data.cov()[(0, 1)], 0.0);
        assert_eq!(data.xy()[0], 1.0);
        assert_eq!(data.xy()[1], 0.0);
        assert_eq!(data.y2(), 2.0);
    }

    #[test]
    fn from_samples_rejects_ragged_rows() {
        let err = from_samples(&[(vec![1.0, 2.0], 1.0), (vec![1.0], 1.0)]).unwrap_err();
        match err {
            DataError::DimensionMismatch { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn from_samples_rejects_non_finite() {
        let err = from_samples(&[(vec![1.0], f64::NAN)]).unwrap_err();
        match err {
            DataError::NonFinite { row } => assert_eq!(row, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_signal_norms_are_zero() {
        let data = make_synthetic(&[1.0, 2.0], &[0.0, 0.0], 1.0, 0).unwrap();
        let norms = signal_norms(&data);
        assert_eq!(norms.e0, 0.0);
        assert_eq!(norms.e1, 0.0);
        assert_eq!(norms.e2, 0.0);
    }

    #[test]
    fn rotation_preserves_signal_norm() {
        let data = make_synthetic(&[2.0, 1.0, 0.5], &[0.3, 0.1, -0.2], 1.0, 11).unwrap();
        assert_relative_eq!(data.xy().norm(), data.xy_rot().norm(), epsilon = 1e-12);
    }

    #[test]
    fn eigendecomposition_round_trip() {
        let rows: Vec<(Vec<f64>, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                (vec![t.sin(), t.cos(), (2.0 * t).sin()], t.cos() * 0.5)
            })
            .collect();
        let data = from_samples(&rows).unwrap();
        let recon =
            data.rotation() * DMatrix::from_diagonal(data.eigvals()) * data.rotation().transpose();
        let err = (recon - data.cov()).norm();
        assert!(err <= 1e-10 * (1.0 + data.cov().norm()));
    }

    #[test]
    fn csv_round_trip() {
        let text = "x_1,x_2,y\n1.0,0.0,2.0\n0.0,1.0,0.0\n";
        let data = read_csv(text.as_bytes()).unwrap();
        assert_eq!(data.cov()[(0, 0)], 0.5);
        assert_eq!(data.xy()[0], 1.0);
        assert_eq!(data.y2(), 2.0);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "a,b\n1.0,2.0\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Header(_)));
    }

    #[test]
    fn csv_names_bad_cell() {
        let text = "x_1,y\n1.0,2.0\noops,3.0\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        match err {
            DataError::Parse { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x_1");
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric_cov() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        let err = MomentData::new(cov, DVector::zeros(2), 1.0).unwrap_err();
        assert!(matches!(err, DataError::AsymmetricCov { .. }));
    }

    #[test]
    fn rejects_indefinite_cov() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let err = MomentData::new(cov, DVector::zeros(2), 1.0).unwrap_err();
        assert!(matches!(err, DataError::NegativeEigenvalue { .. }));
    }
}
