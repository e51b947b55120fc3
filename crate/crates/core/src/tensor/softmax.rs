use crate::attention::AttentionMask;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Row-wise softmax restricted to the entries `mask` permits.
///
/// Masked entries come out exactly zero and are never exponentiated, so
/// arbitrarily large masked scores are harmless. Each row is shifted by its
/// largest permitted score.
pub fn softmax_rows_masked(scores: &Matrix, mask: &AttentionMask) -> Result<Matrix> {
    if scores.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_rows_masked",
            left: scores.shape(),
            right: mask.shape(),
        });
    }
    let cols = scores.cols();
    if cols == 0 && scores.rows() > 0 {
        return Err(Error::FullyMaskedRow { row: 0 });
    }
    let mut out = scores.clone();
    for (i, dst) in out.data_mut().chunks_mut(cols.max(1)).enumerate().take(scores.rows()) {
        if !softmax_row_in_place(dst, mask.row(i)) {
            return Err(Error::FullyMaskedRow { row: i });
        }
    }
    Ok(out)
}

/// Softmax of one score row over its permitted entries, in place. Returns
/// false, leaving the row unspecified, when nothing is permitted.
pub(crate) fn softmax_row_in_place(row: &mut [f64], permit: &[bool]) -> bool {
    let max = row
        .iter()
        .zip(permit)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (d, &p) in row.iter_mut().zip(permit) {
        *d = if p { (*d - max).exp() } else { 0.0 };
        total += *d;
    }
    let inv = 1.0 / total;
    for d in row.iter_mut() {
        *d *= inv;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_row(permit: &[bool]) -> AttentionMask {
        AttentionMask::from_fn(1, permit.len(), |_, j| permit[j])
    }

    #[test]
    fn uniform_row() {
        let s = Matrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let p = softmax_rows_masked(&s, &mask_row(&[true, true, true])).unwrap();
        for &x in p.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_survivor() {
        let s = Matrix::from_rows(&[[9.0, 1.0, 5.0]]).unwrap();
        let p = softmax_rows_masked(&s, &mask_row(&[true, false, false])).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn fully_masked_row_errors() {
        let s = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let err = softmax_rows_masked(&s, &mask_row(&[false, false])).unwrap_err();
        assert!(matches!(err, Error::FullyMaskedRow { row: 0 }));
    }

    #[test]
    fn shape_mismatch() {
        let s = Matrix::zeros(2, 2);
        assert!(softmax_rows_masked(&s, &mask_row(&[true, true])).is_err());
    }

    #[test]
    fn large_scores_stay_finite() {
        let s = Matrix::from_rows(&[[1e300, -1e300, 7e299]]).unwrap();
        let p = softmax_rows_masked(&s, &mask_row(&[true, true, true])).unwrap();
        assert!(p.is_finite());
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }
}
