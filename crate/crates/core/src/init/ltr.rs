//! Left-to-right segmentation by two-sample split tests.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{invalid, HhsmmError, Result};
use crate::linalg::spd_solve;

/// Statistic used to compare the two sides of a candidate split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTest {
    /// Hotelling two-sample statistic on the rows.
    Hotelling,
    /// F test for equal regression coefficients; the given columns are
    /// responses, the rest covariates.
    Regression { n_resp: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    /// Number of rows in the left part.
    pub at: usize,
    pub statistic: f64,
    /// 95th percentile of the reference F distribution.
    pub threshold: f64,
}

impl SplitCandidate {
    pub fn significant(&self) -> bool {
        self.statistic > self.threshold
    }
}

fn f95(d1: f64, d2: f64) -> Result<f64> {
    let f = FisherSnedecor::new(d1, d2).map_err(|e| HhsmmError::Numeric(e.to_string()))?;
    Ok(f.inverse_cdf(0.95))
}

fn column_means(rows: &[Vec<f64>]) -> DVector<f64> {
    let p = rows[0].len();
    let mut m = DVector::zeros(p);
    for r in rows {
        for i in 0..p {
            m[i] += r[i];
        }
    }
    m / rows.len() as f64
}

fn scatter(rows: &[Vec<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let p = mean.len();
    let mut s = DMatrix::zeros(p, p);
    for r in rows {
        let d = DVector::from_iterator(p, r.iter().zip(mean.iter()).map(|(a, b)| a - b));
        s += &d * d.transpose();
    }
    s
}

/// Scaled Hotelling statistic between `left` and `right` (F-distributed
/// under equal means with `p` and `k - 1 - p` degrees of freedom).
pub fn hotelling(left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<f64> {
    let (s, k) = (left.len() as f64, (left.len() + right.len()) as f64);
    let p = left[0].len();
    let (m1, m2) = (column_means(left), column_means(right));
    let mut pooled = (scatter(left, &m1) + scatter(right, &m2)) / (k - 2.0).max(1.0);
    let tr = pooled.trace();
    let ridge = 1e-8 * if tr > 0.0 { tr / p as f64 } else { 1.0 };
    for i in 0..p {
        pooled[(i, i)] += ridge;
    }
    let diff = &m1 - &m2;
    let sol = spd_solve(&pooled, &DMatrix::from_column_slice(p, 1, diff.as_slice()))
        .ok_or_else(|| HhsmmError::Numeric("singular pooled covariance in split test".into()))?;
    let t2 = (diff.transpose() * sol)[(0, 0)];
    let pf = p as f64;
    Ok(s * (k - s) / k * (k - pf - 1.0) / ((k - 2.0) * pf) * t2)
}

fn regression_sse(rows: &[Vec<f64>], n_resp: usize) -> Option<f64> {
    let q = n_resp;
    let d = rows[0].len() - q;
    let mut ztz = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut zty = DMatrix::<f64>::zeros(d + 1, q);
    for r in rows {
        let z: Vec<f64> = std::iter::once(1.0).chain(r[q..].iter().copied()).collect();
        for a in 0..=d {
            for b in 0..=d {
                ztz[(a, b)] += z[a] * z[b];
            }
            for c in 0..q {
                zty[(a, c)] += z[a] * r[c];
            }
        }
    }
    let beta = spd_solve(&ztz, &zty)?;
    Some(
        rows.iter()
            .map(|r| {
                (0..q)
                    .map(|c| {
                        let fit = beta[(0, c)] + (0..d).map(|a| r[q + a] * beta[(a + 1, c)]).sum::<f64>();
                        (r[c] - fit).powi(2)
                    })
                    .sum::<f64>()
            })
            .sum(),
    )
}

/// Chow F statistic for equal regression coefficients on both sides.
fn chow(left: &[Vec<f64>], right: &[Vec<f64>], n_resp: usize) -> Option<(f64, f64, f64)> {
    let npar = (left[0].len() - n_resp + 1) * n_resp;
    let n = (left.len() + right.len()) * n_resp;
    if n <= 2 * npar {
        return None;
    }
    let all: Vec<Vec<f64>> = left.iter().chain(right).cloned().collect();
    let pooled = regression_sse(&all, n_resp)?;
    let split = regression_sse(left, n_resp)? + regression_sse(right, n_resp)?;
    let df2 = (n - 2 * npar) as f64;
    let stat = if split > 0.0 { ((pooled - split) / npar as f64) / (split / df2) } else { f64::INFINITY };
    Some((stat, npar as f64, df2))
}

fn min_rows(test: SplitTest, width: usize) -> usize {
    match test {
        SplitTest::Hotelling => 2,
        SplitTest::Regression { n_resp } => width - n_resp + 2,
    }
}

/// Statistic of `test` between two adjacent blocks, or `None` when the
/// blocks are too small to compare.
pub fn pair_statistic(left: &[Vec<f64>], right: &[Vec<f64>], test: SplitTest) -> Result<Option<f64>> {
    match test {
        SplitTest::Hotelling => {
            let p = left[0].len();
            if left.len() + right.len() < p + 2 {
                return Ok(None);
            }
            hotelling(left, right).map(Some)
        }
        SplitTest::Regression { n_resp } => Ok(chow(left, right, n_resp).map(|c| c.0)),
    }
}

/// Best split point of a block and its significance.
pub fn best_split(block: &[Vec<f64>], test: SplitTest) -> Result<Option<SplitCandidate>> {
    let k = block.len();
    let width = block.first().map_or(0, |r| r.len());
    let lo = min_rows(test, width);
    if k < 6 || k < 2 * lo {
        return Ok(None);
    }
    let mut best: Option<SplitCandidate> = None;
    for s in lo.max(2)..=(k - lo).min(k - 2) {
        let (left, right) = block.split_at(s);
        let (stat, threshold) = match test {
            SplitTest::Hotelling => {
                let p = width as f64;
                if (k as f64) - 1.0 - p < 1.0 {
                    return Ok(None);
                }
                (hotelling(left, right)?, f95(p, k as f64 - 1.0 - p)?)
            }
            SplitTest::Regression { n_resp } => match chow(left, right, n_resp) {
                Some((stat, d1, d2)) => (stat, f95(d1, d2)?),
                None => continue,
            },
        };
        if best.is_none_or(|b| stat > b.statistic) {
            best = Some(SplitCandidate { at: s, statistic: stat, threshold });
        }
    }
    Ok(best)
}

/// Split point of a block (rows in the left part), if the Hotelling test
/// rejects equal means at the 5% level.
pub fn ltr_clus(block: &[Vec<f64>]) -> Result<Option<usize>> {
    let k = block.len();
    let p = block.first().map_or(0, |r| r.len());
    if k < 6 {
        return invalid(format!("split test needs at least 6 rows, got {k}"));
    }
    if k < p + 2 {
        return invalid(format!("split test needs more than {} rows for {p} columns", p + 1));
    }
    Ok(best_split(block, SplitTest::Hotelling)?.filter(|c| c.significant()).map(|c| c.at))
}

/// Segment one sequence into exactly `k` ordered blocks. Returns the block
/// start offsets (the first is 0).
pub fn ltr_cluster_k(seq: &[Vec<f64>], k: usize, test: SplitTest) -> Result<Vec<usize>> {
    if k == 0 {
        return invalid("number of segments must be positive");
    }
    if seq.len() < 3 * k {
        return invalid(format!("sequence of length {} is too short for {k} segments", seq.len()));
    }
    let mut starts = vec![0usize];
    let bounds = |starts: &[usize], i: usize| (starts[i], starts.get(i + 1).copied().unwrap_or(seq.len()));
    // Split every block that tests significant, pass after pass.
    loop {
        if starts.len() >= k {
            break;
        }
        let mut next = Vec::with_capacity(starts.len() * 2);
        let mut changed = false;
        for i in 0..starts.len() {
            let (a, b) = bounds(&starts, i);
            next.push(a);
            if let Some(c) = best_split(&seq[a..b], test)? {
                if c.significant() {
                    next.push(a + c.at);
                    changed = true;
                }
            }
        }
        starts = next;
        if !changed {
            break;
        }
    }
    // Too many blocks: merge the adjacent pair that is least distinguishable.
    while starts.len() > k {
        let mut best = (1, f64::INFINITY);
        for i in 1..starts.len() {
            let (a, m) = bounds(&starts, i - 1);
            let (_, b) = bounds(&starts, i);
            let stat = pair_statistic(&seq[a..m], &seq[m..b], test)?.unwrap_or(f64::NEG_INFINITY);
            if stat < best.1 {
                best = (i, stat);
            }
        }
        starts.remove(best.0);
    }
    // Too few: halve the longest block.
    while starts.len() < k {
        let mut longest = 0;
        for i in 0..starts.len() {
            let (a, b) = bounds(&starts, i);
            let (la, lb) = bounds(&starts, longest);
            if b - a > lb - la {
                longest = i;
            }
        }
        let (a, b) = bounds(&starts, longest);
        log::warn!("no significant split left; forcing a split of rows {a}..{b}");
        starts.insert(longest + 1, a + (b - a) / 2);
    }
    Ok(starts)
}
