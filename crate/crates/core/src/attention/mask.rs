use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// `n×n`, query `i` sees keys `0..=i`.
    Causal { n: usize },
    /// `n×(k+n)`, text query `i` sees all `k` visual keys and text keys `0..=i`.
    Trapezoidal { k: usize, n: usize },
    /// Arbitrary permission pattern, used by oracles.
    Custom,
}

/// Boolean permission matrix, query rows by key columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    kind: MaskKind,
    rows: usize,
    cols: usize,
    permit: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut permit = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                permit.push(f(i, j));
            }
        }
        Self {
            kind: MaskKind::Custom,
            rows,
            cols,
            permit,
        }
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.permit[i * self.cols..(i + 1) * self.cols]
    }

    pub fn permits(&self, i: usize, j: usize) -> bool {
        self.permit[i * self.cols + j]
    }

    pub fn permitted_in_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&p| p).count()
    }

    /// Same permission pattern, ignoring how the mask was built.
    pub fn same_pattern(&self, other: &AttentionMask) -> bool {
        self.shape() == other.shape() && self.permit == other.permit
    }
}

/// Lower-triangular mask for `n` tokens.
pub fn build_causal_mask(n: usize) -> Result<AttentionMask> {
    if n == 0 {
        return Err(Error::invalid("build_causal_mask", "n must be at least 1"));
    }
    let mut m = AttentionMask::from_fn(n, n, |i, j| j <= i);
    m.kind = MaskKind::Causal { n };
    Ok(m)
}

/// Mask for `n` text queries over `k` visual keys followed by `n` text keys.
pub fn build_trapezoidal_mask(k: usize, n: usize) -> Result<AttentionMask> {
    if n == 0 {
        return Err(Error::invalid("build_trapezoidal_mask", "n must be at least 1"));
    }
    let mut m = AttentionMask::from_fn(n, k + n, |i, j| j < k || j - k <= i);
    m.kind = MaskKind::Trapezoidal { k, n };
    Ok(m)
}
