//! Multi-sequence observation container and sequence utilities.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HhsmmError, Result};
use crate::json::fmt_real;

/// Stacked observations of one or more sequences.
///
/// Rows are observations; missing cells are stored as `NaN`. State labels
/// are 0-based in memory and 1-based in files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceSet {
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rul: Option<Vec<usize>>,
}

impl PartialEq for SequenceSet {
    /// Bitwise comparison of cells so that two missing markers compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.s == other.s
            && self.rul == other.rul
            && self.x.len() == other.x.len()
            && self.x.iter().zip(&other.x).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits())
            })
    }
}

/// Build a [`SequenceSet`] from a matrix and optional sequence lengths.
pub fn hhsmmdata(x: Vec<Vec<f64>>, n: Option<Vec<usize>>) -> Result<SequenceSet> {
    let n = n.unwrap_or_else(|| vec![x.len()]);
    SequenceSet::new(x, n)
}

impl SequenceSet {
    pub fn new(x: Vec<Vec<f64>>, n: Vec<usize>) -> Result<Self> {
        let set = Self { x, n, s: None, rul: None };
        set.check()?;
        Ok(set)
    }

    pub fn with_states(mut self, s: Vec<usize>) -> Result<Self> {
        self.s = Some(s);
        self.check()?;
        Ok(self)
    }

    /// Verify the container invariants.
    pub fn check(&self) -> Result<()> {
        let total: usize = self.n.iter().sum();
        if total != self.x.len() {
            return invalid(format!(
                "sequence lengths sum to {total} but the matrix has {} rows",
                self.x.len()
            ));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return invalid("every sequence must have at least one row");
        }
        let p = self.x[0].len();
        if p == 0 {
            return invalid("observations need at least one column");
        }
        if let Some(i) = self.x.iter().position(|r| r.len() != p) {
            return invalid(format!("row {i} has {} columns, expected {p}", self.x[i].len()));
        }
        if let Some(s) = &self.s {
            if s.len() != total {
                return invalid(format!("{} state labels for {total} rows", s.len()));
            }
        }
        if let Some(r) = &self.rul {
            if r.len() != self.n.len() {
                return invalid(format!("{} RUL labels for {} sequences", r.len(), self.n.len()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn n_seq(&self) -> usize {
        self.n.len()
    }

    pub fn total_len(&self) -> usize {
        self.x.len()
    }

    /// Row offset of each sequence in the stacked matrix.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.n.len() + 1);
        let mut acc = 0;
        off.push(0);
        for &k in &self.n {
            acc += k;
            off.push(acc);
        }
        off
    }

    pub fn sequence(&self, i: usize) -> &[Vec<f64>] {
        let off = self.offsets();
        &self.x[off[i]..off[i + 1]]
    }

    pub fn sequence_states(&self, i: usize) -> Option<&[usize]> {
        let off = self.offsets();
        self.s.as_ref().map(|s| &s[off[i]..off[i + 1]])
    }

    pub fn has_missing(&self) -> bool {
        self.x.iter().flatten().any(|v| v.is_nan())
    }

    /// Sequences at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> SequenceSet {
        let off = self.offsets();
        let mut x = Vec::new();
        let mut s = self.s.as_ref().map(|_| Vec::new());
        for &i in idx {
            x.extend_from_slice(&self.x[off[i]..off[i + 1]]);
            if let (Some(out), Some(src)) = (s.as_mut(), self.s.as_ref()) {
                out.extend_from_slice(&src[off[i]..off[i + 1]]);
            }
        }
        SequenceSet {
            x,
            n: idx.iter().map(|&i| self.n[i]).collect(),
            s,
            rul: self.rul.as_ref().map(|r| idx.iter().map(|&i| r[i]).collect()),
        }
    }
}

/// Lagged embedding: each output row is `[x_{t-lags}, ..., x_{t-1}, x_t]`.
pub fn lagdata(set: &SequenceSet, lags: usize) -> Result<SequenceSet> {
    if lags == 0 {
        return invalid("lags must be positive");
    }
    let mut x = Vec::new();
    let mut n = Vec::new();
    let mut s = set.s.as_ref().map(|_| Vec::new());
    let off = set.offsets();
    for (i, &len) in set.n.iter().enumerate() {
        if len <= lags {
            return invalid(format!("sequence {i} has {len} rows, needs more than {lags}"));
        }
        for t in lags..len {
            let row: Vec<f64> = (0..=lags)
                .flat_map(|l| set.x[off[i] + t - lags + l].iter().copied())
                .collect();
            x.push(row);
        }
        if let (Some(out), Some(src)) = (s.as_mut(), set.s.as_ref()) {
            out.extend_from_slice(&src[off[i] + lags..off[i + 1]]);
        }
        n.push(len - lags);
    }
    Ok(SequenceSet { x, n, s, rul: set.rul.clone() })
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: SequenceSet,
    pub test: SequenceSet,
    pub trimmed: SequenceSet,
    pub trimmed_count: Vec<usize>,
}

/// Random train/test partition of sequences with optional right trimming
/// of the test sequences. `train_ratio = 1` keeps every sequence in both.
pub fn train_test_split(
    set: &SequenceSet,
    train_ratio: f64,
    trim: bool,
    trim_ratio: f64,
    seed: u64,
) -> Result<Split> {
    if !(train_ratio > 0.0 && train_ratio <= 1.0) {
        return invalid("train_ratio must lie in (0, 1]");
    }
    if !(trim_ratio > 0.0 && trim_ratio <= 1.0) {
        return invalid("trim_ratio must lie in (0, 1]");
    }
    let m = set.n_seq();
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = if train_ratio >= 1.0 {
        ((0..m).collect(), (0..m).collect())
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = (train_ratio * m as f64).floor() as usize;
        let mut tr = idx[..k].to_vec();
        let mut te = idx[k..].to_vec();
        tr.sort_unstable();
        te.sort_unstable();
        (tr, te)
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return invalid("split produced an empty partition");
    }
    let train = set.subset(&train_idx);
    let test = set.subset(&test_idx);
    let (trimmed, trimmed_count) = if trim {
        trim_sequences(&test, trim_ratio)?
    } else {
        (test.clone(), vec![0; test.n_seq()])
    };
    Ok(Split { train, test, trimmed, trimmed_count })
}

fn trim_sequences(set: &SequenceSet, ratio: f64) -> Result<(SequenceSet, Vec<usize>)> {
    let off = set.offsets();
    let mut x = Vec::new();
    let mut s = set.s.as_ref().map(|_| Vec::new());
    let mut n = Vec::new();
    let mut removed = Vec::new();
    for (i, &len) in set.n.iter().enumerate() {
        let keep = (ratio * len as f64 + 1e-9).floor() as usize;
        if keep == 0 {
            return invalid(format!("trimming empties sequence {i}"));
        }
        x.extend_from_slice(&set.x[off[i]..off[i] + keep]);
        if let (Some(out), Some(src)) = (s.as_mut(), set.s.as_ref()) {
            out.extend_from_slice(&src[off[i]..off[i] + keep]);
        }
        n.push(keep);
        removed.push(len - keep);
    }
    let rul = set
        .rul
        .as_ref()
        .map(|r| r.iter().zip(&removed).map(|(a, b)| a + b).collect());
    Ok((SequenceSet { x, n, s, rul }, removed))
}

/// Per-state Jaccard agreement between two label sequences after the label
/// permutation of `s1` that maximizes total agreement. Labels are 0-based;
/// the result is indexed by the labels of `s2`.
pub fn homogeneity(s1: &[usize], s2: &[usize]) -> Result<Vec<f64>> {
    if s1.len() != s2.len() {
        return invalid(format!("state sequences differ in length: {} vs {}", s1.len(), s2.len()));
    }
    let j = s1.iter().chain(s2).copied().max().map_or(0, |m| m + 1);
    if j == 0 {
        return Ok(Vec::new());
    }
    if j > 20 {
        return invalid("homogeneity supports at most 20 labels");
    }
    let mut conf = vec![vec![0usize; j]; j];
    for (&a, &b) in s1.iter().zip(s2) {
        conf[a][b] += 1;
    }
    let sigma = best_assignment(&conf);
    let mut both = vec![0usize; j];
    let mut either = vec![0usize; j];
    for (&a, &b) in s1.iter().zip(s2) {
        let m = sigma[a];
        if m == b {
            both[b] += 1;
            either[b] += 1;
        } else {
            either[m] += 1;
            either[b] += 1;
        }
    }
    Ok(both
        .iter()
        .zip(&either)
        .map(|(&b, &e)| if e == 0 { 0.0 } else { b as f64 / e as f64 })
        .collect())
}

/// Maximum-weight perfect matching by dynamic programming over subsets.
/// Among optimal matchings the lexicographically smallest is returned.
fn best_assignment(conf: &[Vec<usize>]) -> Vec<usize> {
    let j = conf.len();
    let full = 1usize << j;
    // best[mask]: best score assigning rows (popcount(mask)..j) given that
    // the columns in `mask` are already used by earlier rows.
    let mut best = vec![0usize; full];
    for mask in (0..full).rev() {
        let row = mask.count_ones() as usize;
        if row == j {
            continue;
        }
        let mut b = 0;
        for c in 0..j {
            if mask & (1 << c) == 0 {
                b = b.max(conf[row][c] + best[mask | (1 << c)]);
            }
        }
        best[mask] = b;
    }
    let mut sigma = vec![0; j];
    let mut mask = 0usize;
    for (row, slot) in sigma.iter_mut().enumerate() {
        for c in 0..j {
            if mask & (1 << c) == 0 && conf[row][c] + best[mask | (1 << c)] == best[mask] {
                *slot = c;
                mask |= 1 << c;
                break;
            }
        }
    }
    sigma
}

/// Read sequences from CSV: `seq_id,<vars...>[,state][,rul]`.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<SequenceSet> {
    let f = std::fs::File::open(path)?;
    read_sequences(f)
}

pub fn read_sequences<R: Read>(reader: R) -> Result<SequenceSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"seq_id") {
        return Err(HhsmmError::Format("first column must be seq_id".into()));
    }
    let mut end = cols.len();
    let rul_col = (cols[end - 1] == "rul").then(|| {
        end -= 1;
        end
    });
    let state_col = (end > 1 && cols[end - 1] == "state").then(|| {
        end -= 1;
        end
    });
    let p = end - 1;
    if p == 0 {
        return Err(HhsmmError::Format("no observation columns".into()));
    }
    let mut x = Vec::new();
    let mut n: Vec<usize> = Vec::new();
    let mut s = state_col.map(|_| Vec::new());
    let mut rul: Option<Vec<usize>> = rul_col.map(|_| Vec::new());
    let mut prev_id: Option<i64> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = line + 2;
        let id: i64 = rec[0]
            .parse()
            .map_err(|_| HhsmmError::Format(format!("line {row_no}: bad seq_id `{}`", &rec[0])))?;
        let new_seq = match prev_id {
            None => true,
            Some(q) if id == q => false,
            Some(q) if id > q => true,
            Some(_) => {
                return Err(HhsmmError::Format(format!(
                    "line {row_no}: seq_id {id} breaks increasing contiguous order"
                )))
            }
        };
        let mut row = Vec::with_capacity(p);
        for c in 1..=p {
            row.push(parse_cell(&rec[c], row_no)?);
        }
        x.push(row);
        if let (Some(c), Some(out)) = (state_col, s.as_mut()) {
            let v: usize = rec[c]
                .parse()
                .map_err(|_| HhsmmError::Format(format!("line {row_no}: bad state `{}`", &rec[c])))?;
            if v == 0 {
                return Err(HhsmmError::Format(format!("line {row_no}: states are 1-based")));
            }
            out.push(v - 1);
        }
        let r_val = match rul_col {
            Some(c) => Some(rec[c].parse::<usize>().map_err(|_| {
                HhsmmError::Format(format!("line {row_no}: bad rul `{}`", &rec[c]))
            })?),
            None => None,
        };
        if new_seq {
            n.push(1);
            if let (Some(out), Some(v)) = (rul.as_mut(), r_val) {
                out.push(v);
            }
        } else {
            *n.last_mut().unwrap() += 1;
            if let (Some(out), Some(v)) = (rul.as_ref(), r_val) {
                if *out.last().unwrap() != v {
                    return Err(HhsmmError::Format(format!(
                        "line {row_no}: rul must be constant within a sequence"
                    )));
                }
            }
        }
        prev_id = Some(id);
    }
    let set = SequenceSet { x, n, s, rul };
    set.check()?;
    Ok(set)
}

fn parse_cell(cell: &str, row_no: usize) -> Result<f64> {
    if cell == "NA" {
        return Ok(f64::NAN);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| HhsmmError::Format(format!("line {row_no}: non-numeric cell `{cell}`")))?;
    if v.is_nan() {
        return Err(HhsmmError::Format(format!("line {row_no}: use NA for missing values")));
    }
    Ok(v)
}

pub fn store_sequences(set: &SequenceSet, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_sequences(set, std::io::BufWriter::new(f))
}

pub fn write_sequences<W: Write>(set: &SequenceSet, writer: W) -> Result<()> {
    set.check()?;
    let mut w = csv::Writer::from_writer(writer);
    let p = set.dim();
    let mut header = vec!["seq_id".to_string()];
    header.extend((1..=p).map(|i| format!("x{i}")));
    if set.s.is_some() {
        header.push("state".into());
    }
    if set.rul.is_some() {
        header.push("rul".into());
    }
    w.write_record(&header)?;
    let off = set.offsets();
    for i in 0..set.n_seq() {
        for t in off[i]..off[i + 1] {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(set.x[t].iter().map(|&v| fmt_real(v)));
            if let Some(s) = &set.s {
                rec.push((s[t] + 1).to_string());
            }
            if let Some(r) = &set.rul {
                rec.push(r[i].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
