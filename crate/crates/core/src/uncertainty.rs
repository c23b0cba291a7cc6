//! Price-risk machinery: the exponentially weighted covariance estimate of
//! price forecast errors, the quadratic risk form, and the supporting
//! hyperplanes used to outer-approximate it inside the solver.

use serde::Serialize;
use thiserror::Error;

use crate::scenario::PriceHistory;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("price history is empty")]
    EmptyHistory,
    #[error("day {day}: actual has {actual} entries but forecast has {forecast}")]
    DayMismatch { day: usize, actual: usize, forecast: usize },
    #[error("day {day} has {len} entries, expected {expected}")]
    LengthMismatch { day: usize, len: usize, expected: usize },
    #[error("vector of length {len} does not match the {dim}-period covariance")]
    DimensionMismatch { len: usize, dim: usize },
}

/// Symmetric T x T covariance estimate of price forecast errors, with the
/// decay parameter and day count that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEstimate {
    dim: usize,
    /// Row-major symmetric matrix, ($/kWh)^2.
    matrix: Vec<f64>,
    pub alpha: f64,
    pub days_used: usize,
    /// True iff the smallest pivot of a symmetric factorization exceeds 1e-10.
    pub positive_definite: bool,
    pub smallest_pivot: f64,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Builds an estimate from an explicit symmetric matrix. Used by tests
    /// and by callers that already have a covariance.
    pub fn from_matrix(dim: usize, matrix: Vec<f64>, alpha: f64, days_used: usize) -> Self {
        assert_eq!(matrix.len(), dim * dim, "matrix must be dim x dim");
        let (positive_definite, smallest_pivot) = ldl_smallest_pivot(dim, &matrix);
        Self {
            dim,
            matrix,
            alpha,
            days_used,
            positive_definite,
            smallest_pivot,
        }
    }

    /// The product V * p.
    pub fn mul_vec(&self, p: &[f64]) -> Result<Vec<f64>, UncertaintyError> {
        if p.len() != self.dim {
            return Err(UncertaintyError::DimensionMismatch {
                len: p.len(),
                dim: self.dim,
            });
        }
        Ok((0..self.dim)
            .map(|i| self.row(i).iter().zip(p).map(|(v, x)| v * x).sum())
            .collect())
    }
}

/// Exponentially weighted covariance of price forecast errors.
///
/// Day ordering: `history.days` is oldest first; the decay exponent is zero
/// for the newest day, so days nearer the scheduling day carry the greater
/// coefficients. The `(1 - alpha)` normalizer is applied exactly as defined
/// even though the finite-sum weights then do not add to one.
pub fn estimate_covariance(history: &PriceHistory) -> Result<CovarianceEstimate, UncertaintyError> {
    let days = history.days.len();
    if days == 0 {
        return Err(UncertaintyError::EmptyHistory);
    }
    let dim = history.days[0].actual.len();
    for (d, day) in history.days.iter().enumerate() {
        if day.actual.len() != day.forecast.len() {
            return Err(UncertaintyError::DayMismatch {
                day: d,
                actual: day.actual.len(),
                forecast: day.forecast.len(),
            });
        }
        if day.actual.len() != dim {
            return Err(UncertaintyError::LengthMismatch {
                day: d,
                len: day.actual.len(),
                expected: dim,
            });
        }
    }

    let alpha = history.alpha;
    let mut matrix = vec![0.0; dim * dim];
    // newest day (index days-1) gets weight (1-alpha)*alpha^0
    for (age, day) in history.days.iter().rev().enumerate() {
        let weight = (1.0 - alpha) * alpha.powi(age as i32);
        if weight == 0.0 {
            continue;
        }
        let residual: Vec<f64> = day
            .actual
            .iter()
            .zip(&day.forecast)
            .map(|(a, f)| a - f)
            .collect();
        for i in 0..dim {
            let wi = weight * residual[i];
            for j in i..dim {
                matrix[i * dim + j] += wi * residual[j];
            }
        }
    }
    // mirror the upper triangle so the stored matrix is exactly symmetric
    for i in 0..dim {
        for j in 0..i {
            matrix[i * dim + j] = matrix[j * dim + i];
        }
    }
    Ok(CovarianceEstimate::from_matrix(dim, matrix, alpha, days))
}

/// The quadratic risk form p' V p. Nonnegative for the PSD estimates this
/// module produces.
pub fn risk_value(cov: &CovarianceEstimate, p: &[f64]) -> Result<f64, UncertaintyError> {
    let vp = cov.mul_vec(p)?;
    Ok(vp.iter().zip(p).map(|(a, b)| a * b).sum())
}

/// A supporting hyperplane of the risk form: z >= gradient . p - offset.
#[derive(Debug, Clone, Serialize)]
pub struct RiskCut {
    /// 2 V p0
    pub gradient: Vec<f64>,
    /// p0' V p0
    pub offset: f64,
}

impl RiskCut {
    /// Right-hand side of the cut evaluated at `p`.
    pub fn value_at(&self, p: &[f64]) -> f64 {
        self.gradient.iter().zip(p).map(|(g, x)| g * x).sum::<f64>() - self.offset
    }
}

/// Tangent plane of f(p) = p' V p at `p0`: tight at `p0`, valid globally by
/// convexity.
pub fn risk_cut(cov: &CovarianceEstimate, p0: &[f64]) -> Result<RiskCut, UncertaintyError> {
    let vp = cov.mul_vec(p0)?;
    let offset = vp.iter().zip(p0).map(|(a, b)| a * b).sum();
    Ok(RiskCut {
        gradient: vp.iter().map(|v| 2.0 * v).collect(),
        offset,
    })
}

/// Smallest pivot of an unpivoted LDL' factorization, and whether it clears
/// the 1e-10 positive-definiteness threshold. Bails out early once a pivot
/// drops below the threshold; later pivots of an indefinite factorization
/// are numerically meaningless anyway.
fn ldl_smallest_pivot(dim: usize, matrix: &[f64]) -> (bool, f64) {
    const PIVOT_TOL: f64 = 1e-10;
    if dim == 0 {
        return (false, 0.0);
    }
    let mut l = vec![0.0; dim * dim];
    let mut d = vec![0.0; dim];
    let mut smallest = f64::INFINITY;
    for j in 0..dim {
        let mut dj = matrix[j * dim + j];
        for k in 0..j {
            dj -= l[j * dim + k] * l[j * dim + k] * d[k];
        }
        d[j] = dj;
        smallest = smallest.min(dj);
        if dj <= PIVOT_TOL {
            return (false, smallest);
        }
        for i in (j + 1)..dim {
            let mut lij = matrix[i * dim + j];
            for k in 0..j {
                lij -= l[i * dim + k] * l[j * dim + k] * d[k];
            }
            l[i * dim + j] = lij / dj;
        }
    }
    (true, smallest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::HistoryDay;

    fn history(alpha: f64, days: Vec<(Vec<f64>, Vec<f64>)>) -> PriceHistory {
        PriceHistory {
            alpha,
            days: days
                .into_iter()
                .map(|(actual, forecast)| HistoryDay { actual, forecast })
                .collect(),
        }
    }

    /// Brute-force triple loop over Eq-style weights; the independent oracle
    /// for the estimator.
    fn covariance_oracle(history: &PriceHistory) -> Vec<f64> {
        let days = history.days.len();
        let dim = history.days[0].actual.len();
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                for (idx, day) in history.days.iter().enumerate() {
                    // idx 0 is the oldest day; weight exponent counts from the newest
                    let age = days - 1 - idx;
                    let w = (1.0 - history.alpha) * history.alpha.powi(age as i32);
                    let ei = day.actual[i] - day.forecast[i];
                    let ej = day.actual[j] - day.forecast[j];
                    out[i * dim + j] += w * ei * ej;
                }
            }
        }
        out
    }

    #[test]
    fn alpha_zero_keeps_only_newest_day() {
        let h = history(
            0.0,
            vec![
                (vec![9.0, 9.0], vec![0.0, 0.0]),
                (vec![1.0, 2.0], vec![0.0, 0.0]),
            ],
        );
        let cov = estimate_covariance(&h).unwrap();
        // newest residual (1, 2): outer product [[1,2],[2,4]]
        assert_eq!(cov.get(0, 0), 1.0);
        assert_eq!(cov.get(0, 1), 2.0);
        assert_eq!(cov.get(1, 1), 4.0);
    }

    #[test]
    fn zero_residuals_give_zero_matrix() {
        let h = history(0.5, vec![(vec![3.0, 4.0], vec![3.0, 4.0])]);
        let cov = estimate_covariance(&h).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(cov.get(i, j), 0.0);
            }
        }
        assert!(!cov.positive_definite);
    }

    #[test]
    fn two_day_hand_expansion() {
        // oldest day residual e1 = (0,1), newest day e2 = (1,0), alpha = 0.5:
        // V = 0.5*[[1,0],[0,0]] + 0.25*[[0,0],[0,1]]
        let h = history(
            0.5,
            vec![
                (vec![0.0, 1.0], vec![0.0, 0.0]),
                (vec![1.0, 0.0], vec![0.0, 0.0]),
            ],
        );
        let cov = estimate_covariance(&h).unwrap();
        assert!((cov.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((cov.get(1, 1) - 0.25).abs() < 1e-15);
        assert_eq!(cov.get(0, 1), 0.0);

        // risk at p = (2,2): 0.5*4 + 0.25*4 = 3
        let risk = risk_value(&cov, &[2.0, 2.0]).unwrap();
        assert!((risk - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_risk_is_sum_of_squares() {
        let cov = CovarianceEstimate::from_matrix(2, vec![1.0, 0.0, 0.0, 1.0], 0.0, 1);
        assert!((risk_value(&cov, &[3.0, 4.0]).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(risk_value(&cov, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(cov.positive_definite);
    }

    #[test]
    fn cuts_match_hand_gradients() {
        let identity = CovarianceEstimate::from_matrix(2, vec![1.0, 0.0, 0.0, 1.0], 0.0, 1);
        let cut = risk_cut(&identity, &[1.0, 0.0]).unwrap();
        assert_eq!(cut.gradient, vec![2.0, 0.0]);
        assert_eq!(cut.offset, 1.0);
        // tight at p0
        assert!((cut.value_at(&[1.0, 0.0]) - 1.0).abs() < 1e-15);

        let origin = risk_cut(&identity, &[0.0, 0.0]).unwrap();
        assert_eq!(origin.gradient, vec![0.0, 0.0]);
        assert_eq!(origin.offset, 0.0);

        let dense = CovarianceEstimate::from_matrix(2, vec![2.0, 1.0, 1.0, 2.0], 0.0, 1);
        let cut = risk_cut(&dense, &[1.0, 1.0]).unwrap();
        assert_eq!(cut.gradient, vec![6.0, 6.0]);
        assert_eq!(cut.offset, 6.0);
        assert!((cut.value_at(&[1.0, 1.0]) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cov = CovarianceEstimate::from_matrix(2, vec![1.0, 0.0, 0.0, 1.0], 0.0, 1);
        assert!(risk_value(&cov, &[1.0]).is_err());
        assert!(risk_cut(&cov, &[1.0, 2.0, 3.0]).is_err());
        let h = history(0.5, vec![(vec![1.0, 2.0], vec![0.0])]);
        assert!(estimate_covariance(&h).is_err());
    }

    #[test]
    fn estimator_matches_triple_loop_oracle() {
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..20 {
            let dim = 2 + case % 4;
            let days = 1 + case % 7;
            let alpha = next();
            let mut day_data = Vec::new();
            for _ in 0..days {
                let actual: Vec<f64> = (0..dim).map(|_| next() * 8.0 - 4.0).collect();
                let forecast: Vec<f64> = (0..dim).map(|_| next() * 8.0 - 4.0).collect();
                day_data.push((actual, forecast));
            }
            let h = history(alpha, day_data);
            let cov = estimate_covariance(&h).unwrap();
            let oracle = covariance_oracle(&h);
            for i in 0..dim {
                for j in 0..dim {
                    assert!(
                        (cov.get(i, j) - oracle[i * dim + j]).abs() < 1e-12,
                        "case {case} entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn scaling_residuals_scales_matrix_quadratically() {
        let base = history(
            0.6,
            vec![
                (vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]),
                (vec![-0.5, 1.5, 2.0], vec![0.0, 0.0, 0.0]),
            ],
        );
        let scaled = history(
            0.6,
            vec![
                (vec![3.0, -6.0, 1.5], vec![0.0, 0.0, 0.0]),
                (vec![-1.5, 4.5, 6.0], vec![0.0, 0.0, 0.0]),
            ],
        );
        let v = estimate_covariance(&base).unwrap();
        let v9 = estimate_covariance(&scaled).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((v9.get(i, j) - 9.0 * v.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
