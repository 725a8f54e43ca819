//! Observed-data containers: survival records, datasets with a maximum
//! follow-up time, CSV I/O, and cross-fitting fold assignment.

use crate::error::Error;
use crate::Result;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::path::Path;

/// One observed subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    /// Follow-up time (same unit as `tau`).
    pub x: f64,
    /// Event indicator: `true` when the event was observed at `x`.
    pub delta: bool,
    /// Binary treatment.
    pub a: bool,
    /// Baseline covariates.
    pub z: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(x: f64, delta: bool, a: bool, z: Vec<f64>) -> Self {
        SurvivalRecord { x, delta, a, z }
    }

    #[inline]
    pub fn a_f64(&self) -> f64 {
        if self.a {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn delta_f64(&self) -> f64 {
        if self.delta {
            1.0
        } else {
            0.0
        }
    }
}

/// A validated collection of records with administrative censoring at `tau`.
///
/// Construction truncates any record with `x > tau` to `(x = tau, delta =
/// false)`, so every downstream integral is well defined on `[0, tau]`.
/// Single-arm datasets are permitted here (degenerate fixtures need them);
/// entry points that require positivity check [`Dataset::has_both_arms`].
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<SurvivalRecord>,
    tau: f64,
    p: usize,
}

impl Dataset {
    pub fn new(mut records: Vec<SurvivalRecord>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::data("tau must be positive and finite"));
        }
        if records.is_empty() {
            return Err(Error::data("dataset has no records"));
        }
        let p = records[0].z.len();
        for (i, r) in records.iter_mut().enumerate() {
            if !r.x.is_finite() || r.x < 0.0 {
                return Err(Error::data(format!(
                    "negative follow-up time in record {i}: {}",
                    r.x
                )));
            }
            if r.z.len() != p {
                return Err(Error::data(format!(
                    "record {i} has {} covariates, expected {p}",
                    r.z.len()
                )));
            }
            if r.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("non-finite covariate in record {i}")));
            }
            if r.x > tau {
                r.x = tau;
                r.delta = false;
            }
        }
        Ok(Dataset { records, tau, p })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_both_arms(&self) -> bool {
        self.records.iter().any(|r| r.a) && self.records.iter().any(|r| !r.a)
    }

    /// Subset by record indices (used by cross-fitting and the bootstrap).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records, self.tau)
    }

    /// Write records as CSV with the canonical header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "event".into(), "treatment".into()];
        for j in 1..=self.p {
            header.push(format!("z{j}"));
        }
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.records {
            let mut row = vec![
                format!("{}", r.x),
                format!("{}", r.delta as u8),
                format!("{}", r.a as u8),
            ];
            for v in &r.z {
                row.push(format!("{v}"));
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("csv write failed: {other:?}")),
    }
}

/// Load a dataset from a CSV file with header `time,event,treatment,z1..zp`.
///
/// Records with `time > tau` are administratively censored at `tau`. The
/// loaded dataset must contain both treatment arms.
pub fn load_dataset<P: AsRef<Path>>(path: P, tau: f64) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_dataset(file, tau)
}

/// Same as [`load_dataset`] but from any reader (tests, stdin).
pub fn read_dataset<R: Read>(input: R, tau: f64) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let time_col = col("time")?;
    let event_col = col("event")?;
    let treatment_col = col("treatment")?;

    // Covariates are the columns named z1..zp, required to be contiguous in
    // their natural order; p is inferred from the header.
    let mut z_cols = Vec::new();
    loop {
        let name = format!("z{}", z_cols.len() + 1);
        match headers.iter().position(|h| *h == name) {
            Some(idx) => z_cols.push(idx),
            None => break,
        }
    }
    let declared: usize = headers.len();
    let recognized = 3 + z_cols.len();
    if recognized < declared {
        let unknown: Vec<&str> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                *i != time_col && *i != event_col && *i != treatment_col && !z_cols.contains(i)
            })
            .map(|(_, h)| h.as_str())
            .collect();
        return Err(Error::Data(format!(
            "unrecognized columns {unknown:?}; expected time,event,treatment,z1..zp"
        )));
    }

    let parse_num = |field: &str, row: usize, name: &str| -> Result<f64> {
        field.parse::<f64>().map_err(|_| {
            Error::Data(format!(
                "non-numeric value `{field}` in column `{name}`, row {row}"
            ))
        })
    };
    let parse_indicator = |field: &str, row: usize, name: &str| -> Result<bool> {
        match parse_num(field, row, name)? {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::Data(format!(
                "column `{name}` must be 0 or 1, found {v} in row {row}"
            ))),
        }
    };

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("cannot read row {}: {e}", i + 1)))?;
        let row = i + 1;
        let get = |idx: usize| rec.get(idx).unwrap_or("");
        let x = parse_num(get(time_col), row, "time")?;
        if x < 0.0 {
            return Err(Error::Data(format!(
                "negative follow-up time {x} in row {row}"
            )));
        }
        let delta = parse_indicator(get(event_col), row, "event")?;
        let a = parse_indicator(get(treatment_col), row, "treatment")?;
        let mut z = Vec::with_capacity(z_cols.len());
        for (j, &zc) in z_cols.iter().enumerate() {
            z.push(parse_num(get(zc), row, &format!("z{}", j + 1))?);
        }
        records.push(SurvivalRecord::new(x, delta, a, z));
    }
    if records.is_empty() {
        return Err(Error::data("empty file: no data rows"));
    }
    let ds = Dataset::new(records, tau)?;
    if !ds.has_both_arms() {
        return Err(Error::data(
            "single-arm dataset: both treatment arms are required",
        ));
    }
    Ok(ds)
}

/// Assignment of record indices to cross-fitting folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Fold index (0-based) of each record.
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Record indices in fold `m`, ascending.
    pub fn fold_indices(&self, m: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == m)
            .collect()
    }

    /// Record indices outside fold `m`, ascending. For `k = 1` this is the
    /// whole sample: the single fold is its own training set and
    /// cross-fitting degenerates to a plain fit.
    pub fn complement_indices(&self, m: usize) -> Vec<usize> {
        if self.k == 1 {
            return (0..self.fold_of.len()).collect();
        }
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != m)
            .collect()
    }
}

/// Randomly partition `n` records into `k` folds of near-equal size.
///
/// Deterministic given `seed`; fold sizes differ by at most one.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 1 {
        return Err(Error::config("fold count must be at least 1"));
    }
    if k > n {
        return Err(Error::config(format!(
            "fold count {k} exceeds sample size {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &idx) in perm.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> &'static str {
        "time,event,treatment,z1,z2\n0.5,1,0,0.1,-0.2\n0.8,0,1,1.0,0.3\n2.0,1,1,-0.4,0.0\n"
    }

    #[test]
    fn loads_well_formed_rows_and_infers_p() {
        let ds = read_dataset(sample_csv().as_bytes(), 1.0).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.records()[0].x, 0.5);
        assert!(ds.records()[0].delta);
    }

    #[test]
    fn truncates_beyond_tau_to_censored() {
        let ds = read_dataset(sample_csv().as_bytes(), 1.0).unwrap();
        let r = &ds.records()[2];
        assert_eq!(r.x, 1.0);
        assert!(!r.delta);
    }

    #[test]
    fn truncation_is_idempotent() {
        let ds = read_dataset(sample_csv().as_bytes(), 1.0).unwrap();
        let again = Dataset::new(ds.records().to_vec(), 1.0).unwrap();
        assert_eq!(ds.records(), again.records());
    }

    #[test]
    fn rejects_negative_time() {
        let csv = "time,event,treatment,z1\n-0.5,1,0,0.0\n0.5,0,1,0.0\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("negative follow-up time"));
    }

    #[test]
    fn rejects_missing_column_by_name() {
        let csv = "time,treatment,z1\n0.5,0,0.0\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("missing column `event`"));
    }

    #[test]
    fn rejects_non_numeric_cell_with_location() {
        let csv = "time,event,treatment,z1\n0.5,1,0,abc\n0.6,0,1,0.0\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("abc") && msg.contains("z1"));
    }

    #[test]
    fn rejects_indicator_outside_zero_one() {
        let csv = "time,event,treatment,z1\n0.5,2,0,0.0\n0.6,0,1,0.0\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("must be 0 or 1"));
    }

    #[test]
    fn rejects_empty_file() {
        let csv = "time,event,treatment,z1\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("empty file"));
    }

    #[test]
    fn rejects_single_arm_input() {
        let csv = "time,event,treatment,z1\n0.5,1,1,0.0\n0.6,0,1,0.1\n";
        let err = read_dataset(csv.as_bytes(), 1.0).unwrap_err();
        assert!(err.to_string().contains("single-arm"));
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let ds = read_dataset(sample_csv().as_bytes(), 1.0).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), 1.0).unwrap();
        assert_eq!(ds.records(), back.records());
    }

    #[test]
    fn folds_divide_evenly_when_possible() {
        let fa = assign_folds(10, 5, 1).unwrap();
        for m in 0..5 {
            assert_eq!(fa.fold_indices(m).len(), 2);
        }
    }

    #[test]
    fn folds_distribute_remainder() {
        let fa = assign_folds(7, 5, 1).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|m| fa.fold_indices(m).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn fold_assignment_is_deterministic() {
        assert_eq!(assign_folds(100, 7, 42).unwrap(), assign_folds(100, 7, 42).unwrap());
    }

    #[test]
    fn folds_form_a_partition() {
        let fa = assign_folds(23, 4, 9).unwrap();
        let mut seen = vec![false; 23];
        for m in 0..4 {
            for i in fa.fold_indices(m) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn fold_bounds_are_validated() {
        assert!(assign_folds(5, 6, 0).is_err());
        assert!(assign_folds(5, 0, 0).is_err());
    }

    #[test]
    fn complement_of_single_fold_is_whole_sample() {
        let fa = assign_folds(6, 1, 3).unwrap();
        assert_eq!(fa.complement_indices(0), vec![0, 1, 2, 3, 4, 5]);
    }
}
