use super::{GbdtError, Matrix};

/// Bin index reserved for missing (`NaN`) values.
pub const MISSING_BIN: u16 = u16::MAX;

/// Per-feature split thresholds. A value `x` falls in bin
/// `#{t in thresholds : t <= x}`, so splitting at threshold `j` sends bins
/// `0..=j` (i.e. `x < thresholds[j]`) left.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSchema {
    thresholds: Vec<Vec<f64>>,
}

/// A point strictly above `a` and at most `b`, for `a < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

fn feature_thresholds(mut values: Vec<f64>, n_bins: usize) -> Vec<f64> {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    // distinct values and how many samples lie strictly below each
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if distinct.last().is_none_or(|&(d, _)| d != v) {
            distinct.push((v, i));
        }
    }
    if distinct.len() <= n_bins {
        return distinct.windows(2).map(|w| midpoint(w[0].0, w[1].0)).collect();
    }
    let mut out: Vec<f64> = Vec::with_capacity(n_bins - 1);
    let mut j = 1;
    for k in 1..n_bins {
        let rank = (k as f64) * (n as f64) / (n_bins as f64);
        while j < distinct.len() && (distinct[j].1 as f64) < rank {
            j += 1;
        }
        if j >= distinct.len() {
            break;
        }
        let t = midpoint(distinct[j - 1].0, distinct[j].0);
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    out
}

impl BinSchema {
    /// Quantile thresholds per column of `matrix`. Columns with at most
    /// `n_bins` distinct values get a threshold between every adjacent pair.
    pub fn build(matrix: &Matrix, n_bins: usize) -> Result<Self, GbdtError> {
        if matrix.n_rows() == 0 {
            return Err(GbdtError::InvalidInput("cannot bin an empty matrix".into()));
        }
        if !(2..=256).contains(&n_bins) {
            return Err(GbdtError::InvalidInput(format!("n_bins must be in [2, 256], got {n_bins}")));
        }
        let thresholds = (0..matrix.n_cols())
            .map(|f| {
                let col: Vec<f64> = matrix.column(f).filter(|v| !v.is_nan()).collect();
                feature_thresholds(col, n_bins)
            })
            .collect();
        Ok(BinSchema { thresholds })
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self, feature: usize) -> &[f64] {
        &self.thresholds[feature]
    }

    #[inline]
    pub fn bin(&self, feature: usize, x: f64) -> u16 {
        if x.is_nan() {
            MISSING_BIN
        } else {
            self.thresholds[feature].partition_point(|&t| t <= x) as u16
        }
    }

    pub(crate) fn bin_matrix(&self, matrix: &Matrix) -> BinnedMatrix {
        let cols = (0..matrix.n_cols())
            .map(|f| matrix.column(f).map(|x| self.bin(f, x)).collect())
            .collect();
        BinnedMatrix { cols }
    }
}

/// Column-major bin indices.
pub(crate) struct BinnedMatrix {
    pub cols: Vec<Vec<u16>>,
}
