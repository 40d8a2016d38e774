//! Loading, validation and preprocessing of minute-level activity data.
//!
//! A panel stores, for each subject, one row of `1440 / epoch_width` slots per
//! observed day. Slots absent from the input are kept as explicit missing
//! entries so that downstream windowed statistics pool only what was observed.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub const MINUTES_PER_DAY: usize = 1440;

/// Days with a smaller observed fraction are left out of pooled statistics.
pub const DEFAULT_MIN_DAY_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("row {row}: rejected record: {reason}")]
    RejectedRecord { row: usize, reason: String },
    #[error("row {row}: cannot parse column `{column}` value `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: duplicate key (subject `{subject}`, day {day}, minute {minute})")]
    DuplicateKey {
        row: usize,
        subject: String,
        day: i64,
        minute: i64,
    },
    #[error("row {row}: minute {minute} outside [0, 1439]")]
    MinuteOutOfRange { row: usize, minute: i64 },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("epoch width {0} does not divide 1440")]
    InvalidEpochWidth(usize),
    #[error("panel is already aggregated to {0}-minute epochs")]
    AlreadyAggregated(usize),
    #[error("row {row}: binary outcome must be 0 or 1, found {value}")]
    NonBinaryOutcome { row: usize, value: f64 },
    #[error("subject `{0}` not found")]
    UnknownSubject(String),
    #[error("input contains no records")]
    Empty,
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::RejectedRecord { .. } => "ingest.rejected_record",
            Self::Parse { .. } => "ingest.parse",
            Self::DuplicateKey { .. } => "ingest.duplicate_key",
            Self::MinuteOutOfRange { .. } => "ingest.minute_out_of_range",
            Self::MissingColumn(_) => "ingest.missing_column",
            Self::InvalidEpochWidth(_) => "ingest.invalid_epoch_width",
            Self::AlreadyAggregated(_) => "ingest.already_aggregated",
            Self::NonBinaryOutcome { .. } => "ingest.non_binary_outcome",
            Self::UnknownSubject(_) => "ingest.unknown_subject",
            Self::Empty => "ingest.empty",
            Self::InvalidValue(_) => "ingest.invalid_value",
            Self::Csv(_) => "ingest.csv",
            Self::Io(_) => "ingest.io",
        }
    }
}

/// Tri-axial composite: euclidean norm of the three axis counts.
pub fn vector_magnitude<T: Real>(ml: T, ap: T, vt: T) -> Result<T, IngestError> {
    for (name, v) in [("ml", ml), ("ap", ap), ("vt", vt)] {
        if !v.is_finite() || v < T::zero() {
            return Err(IngestError::RejectedRecord {
                row: 0,
                reason: format!("axis {name} = {v} is negative or non-finite"),
            });
        }
    }
    Ok((ml * ml + ap * ap + vt * vt).sqrt())
}

/// One calendar day of activity on the panel's slot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySeries<T> {
    pub day_index: i64,
    values: Vec<T>,
    observed: Vec<bool>,
}

impl<T: Real> DaySeries<T> {
    /// A fully observed day. Values must be finite and non-negative.
    pub fn new(day_index: i64, values: Vec<T>) -> Result<Self, IngestError> {
        let observed = vec![true; values.len()];
        Self::with_mask(day_index, values, observed)
    }

    pub fn with_mask(day_index: i64, values: Vec<T>, observed: Vec<bool>) -> Result<Self, IngestError> {
        if values.len() != observed.len() {
            return Err(IngestError::InvalidValue("value and mask lengths differ".into()));
        }
        if values.is_empty() || MINUTES_PER_DAY % values.len() != 0 {
            return Err(IngestError::InvalidValue(format!(
                "a day needs a divisor of 1440 slots, got {}",
                values.len()
            )));
        }
        let mut values = values;
        for (v, &obs) in values.iter_mut().zip(&observed) {
            if obs {
                if !v.is_finite() || *v < T::zero() {
                    return Err(IngestError::InvalidValue(format!(
                        "activity value {v} is negative or non-finite"
                    )));
                }
            } else {
                *v = T::zero();
            }
        }
        Ok(Self {
            day_index,
            values,
            observed,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a slot, `None` when missing.
    #[inline]
    pub fn get(&self, slot: usize) -> Option<T> {
        if self.observed[slot] {
            Some(self.values[slot])
        } else {
            None
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed.iter().filter(|&&o| o).count() as f64 / self.observed.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries<T> {
    pub subject_id: String,
    pub days: Vec<DaySeries<T>>,
}

impl<T: Real> SubjectSeries<T> {
    pub fn new(subject_id: impl Into<String>, days: Vec<DaySeries<T>>) -> Self {
        Self {
            subject_id: subject_id.into(),
            days,
        }
    }

    pub fn slots_per_day(&self) -> usize {
        self.days.first().map_or(0, DaySeries::len)
    }

    pub fn epoch_width(&self) -> usize {
        MINUTES_PER_DAY / self.slots_per_day().max(1)
    }

    /// Days whose observed fraction reaches `min_fraction`.
    pub fn valid_days(&self, min_fraction: f64) -> impl Iterator<Item = &DaySeries<T>> {
        self.days
            .iter()
            .filter(move |d| d.observed_fraction() + 1e-12 >= min_fraction)
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        let days = self
            .days
            .iter()
            .map(|d| DaySeries {
                day_index: d.day_index,
                values: d
                    .values
                    .iter()
                    .zip(&d.observed)
                    .map(|(&v, &o)| if o { f(v) } else { T::zero() })
                    .collect(),
                observed: d.observed.clone(),
            })
            .collect();
        Self {
            subject_id: self.subject_id.clone(),
            days,
        }
    }
}

/// Per-subject, per-day, per-slot activity. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPanel<T = f64> {
    subjects: Vec<SubjectSeries<T>>,
    epoch_width: usize,
}

impl<T: Real> ActivityPanel<T> {
    /// Every subject needs at least one day and every day `1440 / epoch_width` slots.
    pub fn new(subjects: Vec<SubjectSeries<T>>, epoch_width: usize) -> Result<Self, IngestError> {
        if epoch_width == 0 || MINUTES_PER_DAY % epoch_width != 0 {
            return Err(IngestError::InvalidEpochWidth(epoch_width));
        }
        let slots = MINUTES_PER_DAY / epoch_width;
        for s in &subjects {
            if s.days.is_empty() {
                return Err(IngestError::InvalidValue(format!(
                    "subject `{}` has no days",
                    s.subject_id
                )));
            }
            if let Some(d) = s.days.iter().find(|d| d.len() != slots) {
                return Err(IngestError::InvalidValue(format!(
                    "subject `{}` day {} has {} slots, expected {slots}",
                    s.subject_id,
                    d.day_index,
                    d.len()
                )));
            }
        }
        Ok(Self {
            subjects,
            epoch_width,
        })
    }

    pub fn subjects(&self) -> &[SubjectSeries<T>] {
        &self.subjects
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectSeries<T>> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn epoch_width(&self) -> usize {
        self.epoch_width
    }

    pub fn slots_per_day(&self) -> usize {
        MINUTES_PER_DAY / self.epoch_width
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn into_subjects(self) -> Vec<SubjectSeries<T>> {
        self.subjects
    }
}

/// Which input columns carry the activity signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueColumns {
    Single { value: String },
    Triaxial { ml: String, ap: String, vt: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub subject: String,
    pub day: String,
    pub minute: String,
    pub values: ValueColumns,
    /// Optional 0/1 column; a 1 marks the slot missing regardless of value.
    #[serde(default)]
    pub missing: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ColumnSchema {
    /// Schema of the canonical export.
    pub fn canonical() -> Self {
        Self {
            subject: "subject_id".into(),
            day: "day_index".into(),
            minute: "minute".into(),
            values: ValueColumns::Single {
                value: "value".into(),
            },
            missing: Some("missing".into()),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn is_missing_token(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

fn parse_field<F: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, column: &str, row: usize) -> Result<F, IngestError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<F>().map_err(|_| IngestError::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads minute-level records from a CSV file.
pub fn load_minutes(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<ActivityPanel<f64>, IngestError> {
    let file = std::fs::File::open(path)?;
    read_minutes(file, schema)
}

/// Reads minute-level records from any CSV source. Lines starting with `#`
/// are skipped. Row numbers in errors are 1-based file lines, header = 1.
pub fn read_minutes<R: Read>(reader: R, schema: &ColumnSchema) -> Result<ActivityPanel<f64>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let i_subject = column_index(&headers, &schema.subject)?;
    let i_day = column_index(&headers, &schema.day)?;
    let i_minute = column_index(&headers, &schema.minute)?;
    let value_idx: Vec<(usize, &str)> = match &schema.values {
        ValueColumns::Single { value } => vec![(column_index(&headers, value)?, value.as_str())],
        ValueColumns::Triaxial { ml, ap, vt } => vec![
            (column_index(&headers, ml)?, ml.as_str()),
            (column_index(&headers, ap)?, ap.as_str()),
            (column_index(&headers, vt)?, vt.as_str()),
        ],
    };
    let i_missing = schema
        .missing
        .as_deref()
        .map(|m| column_index(&headers, m))
        .transpose()?;

    // subject -> (day -> (values, observed, seen))
    let mut order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, std::collections::BTreeMap<i64, (Vec<f64>, Vec<bool>, Vec<bool>)>> =
        HashMap::new();

    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(k + 2, |p| p.line() as usize);
        let subject = rec.get(i_subject).unwrap_or("").trim().to_string();
        if subject.is_empty() {
            return Err(IngestError::Parse {
                row,
                column: schema.subject.clone(),
                value: String::new(),
            });
        }
        let day: i64 = parse_field(&rec, i_day, &schema.day, row)?;
        let minute: i64 = parse_field(&rec, i_minute, &schema.minute, row)?;
        if !(0..MINUTES_PER_DAY as i64).contains(&minute) {
            return Err(IngestError::MinuteOutOfRange { row, minute });
        }
        let flagged = match i_missing {
            Some(i) => {
                let raw = rec.get(i).unwrap_or("").trim();
                match raw {
                    "" | "0" => false,
                    "1" => true,
                    other => {
                        return Err(IngestError::Parse {
                            row,
                            column: schema.missing.clone().unwrap_or_default(),
                            value: other.to_string(),
                        })
                    }
                }
            }
            None => false,
        };
        let value = if flagged || value_idx.iter().any(|&(i, _)| is_missing_token(rec.get(i).unwrap_or(""))) {
            None
        } else {
            let mut parts = [0.0f64; 3];
            for (slot, &(i, name)) in value_idx.iter().enumerate() {
                parts[slot] = parse_field(&rec, i, name, row)?;
            }
            let v = if value_idx.len() == 3 {
                vector_magnitude(parts[0], parts[1], parts[2]).map_err(|e| match e {
                    IngestError::RejectedRecord { reason, .. } => IngestError::RejectedRecord { row, reason },
                    other => other,
                })?
            } else {
                let v = parts[0];
                if !v.is_finite() || v < 0.0 {
                    return Err(IngestError::RejectedRecord {
                        row,
                        reason: format!("activity value {v} is negative or non-finite"),
                    });
                }
                v
            };
            Some(v)
        };

        let days = subjects.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            Default::default()
        });
        let entry = days.entry(day).or_insert_with(|| {
            (
                vec![0.0; MINUTES_PER_DAY],
                vec![false; MINUTES_PER_DAY],
                vec![false; MINUTES_PER_DAY],
            )
        });
        let m = minute as usize;
        if entry.2[m] {
            return Err(IngestError::DuplicateKey {
                row,
                subject,
                day,
                minute,
            });
        }
        entry.2[m] = true;
        if let Some(v) = value {
            entry.0[m] = v;
            entry.1[m] = true;
        }
    }

    if order.is_empty() {
        return Err(IngestError::Empty);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let days = subjects.remove(&id).expect("subject recorded in order");
        let days = days
            .into_iter()
            .map(|(d, (v, o, _))| DaySeries::with_mask(d, v, o))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SubjectSeries::new(id, days));
    }
    ActivityPanel::new(out, 1)
}

/// Writes the canonical long format: `subject_id,day_index,minute,value,missing`.
/// Every slot is written; missing slots carry an empty value and `missing=1`.
/// For aggregated panels `minute` is the first minute of each epoch.
pub fn write_canonical<T: Real, W: Write>(panel: &ActivityPanel<T>, out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "day_index", "minute", "value", "missing"])?;
    let width = panel.epoch_width();
    for s in panel.subjects() {
        for d in &s.days {
            let day = d.day_index.to_string();
            for slot in 0..d.len() {
                let minute = (slot * width).to_string();
                match d.get(slot) {
                    Some(v) => w.write_record([s.subject_id.as_str(), &day, &minute, &format!("{v}"), "0"])?,
                    None => w.write_record([s.subject_id.as_str(), &day, &minute, "", "1"])?,
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Averages minute-level data into epochs of `width` minutes. An epoch is
/// the mean of its observed minutes and is missing only if none were observed.
pub fn aggregate_epochs<T: Real>(panel: &ActivityPanel<T>, width: usize) -> Result<ActivityPanel<T>, IngestError> {
    if width == 0 || MINUTES_PER_DAY % width != 0 {
        return Err(IngestError::InvalidEpochWidth(width));
    }
    if panel.epoch_width() != 1 {
        return Err(IngestError::AlreadyAggregated(panel.epoch_width()));
    }
    let slots = MINUTES_PER_DAY / width;
    let subjects = panel
        .subjects()
        .iter()
        .map(|s| {
            let days = s
                .days
                .iter()
                .map(|d| {
                    let mut values = Vec::with_capacity(slots);
                    let mut observed = Vec::with_capacity(slots);
                    for e in 0..slots {
                        let mut sum = T::zero();
                        let mut cnt = 0usize;
                        for m in e * width..(e + 1) * width {
                            if let Some(v) = d.get(m) {
                                sum += v;
                                cnt += 1;
                            }
                        }
                        if cnt > 0 {
                            values.push(sum / T::from_usize_lossy(cnt));
                            observed.push(true);
                        } else {
                            values.push(T::zero());
                            observed.push(false);
                        }
                    }
                    DaySeries {
                        day_index: d.day_index,
                        values,
                        observed,
                    }
                })
                .collect();
            SubjectSeries::new(s.subject_id.clone(), days)
        })
        .collect();
    ActivityPanel::new(subjects, width)
}

/// Outcome and covariates for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub subject: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Require outcomes coded 0/1.
    pub binary: bool,
}

/// Reads the subject table (one row per subject).
pub fn read_subject_records<R: Read>(reader: R, schema: &RecordSchema) -> Result<Vec<SubjectRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let i_subject = column_index(&headers, &schema.subject)?;
    let i_outcome = column_index(&headers, &schema.outcome)?;
    let i_cov = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(k + 2, |p| p.line() as usize);
        let subject_id = rec.get(i_subject).unwrap_or("").trim().to_string();
        if !seen.insert(subject_id.clone()) {
            return Err(IngestError::DuplicateKey {
                row,
                subject: subject_id,
                day: -1,
                minute: -1,
            });
        }
        let outcome: f64 = parse_field(&rec, i_outcome, &schema.outcome, row)?;
        if !outcome.is_finite() {
            return Err(IngestError::RejectedRecord {
                row,
                reason: "non-finite outcome".into(),
            });
        }
        if schema.binary && outcome != 0.0 && outcome != 1.0 {
            return Err(IngestError::NonBinaryOutcome { row, value: outcome });
        }
        let covariates = i_cov
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| {
                let v: f64 = parse_field(&rec, i, name, row)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(IngestError::RejectedRecord {
                        row,
                        reason: format!("non-finite covariate `{name}`"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SubjectRecord {
            subject_id,
            outcome,
            covariates,
        });
    }
    if out.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(out)
}

pub fn load_subject_records(path: impl AsRef<Path>, schema: &RecordSchema) -> Result<Vec<SubjectRecord>, IngestError> {
    read_subject_records(std::fs::File::open(path)?, schema)
}

pub fn write_subject_records<W: Write>(records: &[SubjectRecord], covariate_names: &[String], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject_id".to_string(), "outcome".to_string()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.subject_id.clone(), format!("{}", r.outcome)];
        row.extend(r.covariates.iter().map(|c| format!("{c}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn csv_of(rows: &[(&str, i64, i64, f64)]) -> String {
        let mut s = String::from("subject,day,minute,count\n");
        for (sub, d, m, v) in rows {
            s.push_str(&format!("{sub},{d},{m},{v}\n"));
        }
        s
    }

    fn simple_schema() -> ColumnSchema {
        ColumnSchema {
            subject: "subject".into(),
            day: "day".into(),
            minute: "minute".into(),
            values: ValueColumns::Single { value: "count".into() },
            missing: None,
        }
    }

    #[test]
    fn vector_magnitude_examples() {
        assert_eq!(vector_magnitude(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(vector_magnitude(3.0, 4.0, 0.0).unwrap(), 5.0);
        assert_abs_diff_eq!(vector_magnitude(1.0, 1.0, 1.0).unwrap(), 1.732_050_8, epsilon = 1e-7);
        assert!(matches!(
            vector_magnitude(-1.0, 0.0, 0.0),
            Err(IngestError::RejectedRecord { .. })
        ));
        assert!(vector_magnitude(f64::NAN, 0.0, 0.0).is_err());
        assert!(vector_magnitude(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn loads_two_subjects() {
        let text = csv_of(&[("s1", 1, 0, 1.0), ("s1", 1, 1, 2.0), ("s2", 3, 5, 7.5)]);
        let panel = read_minutes(text.as_bytes(), &simple_schema()).unwrap();
        assert_eq!(panel.len(), 2);
        let s1 = panel.subject("s1").unwrap();
        assert_eq!(s1.days.len(), 1);
        assert_eq!(s1.days[0].len(), 1440);
        assert_eq!(s1.days[0].get(1), Some(2.0));
        assert_eq!(s1.days[0].get(2), None);
        assert_eq!(panel.subject("s2").unwrap().days[0].day_index, 3);
    }

    #[test]
    fn duplicate_key_names_row() {
        let text = csv_of(&[("s1", 1, 5, 1.0), ("s1", 1, 6, 1.0), ("s1", 1, 5, 2.0)]);
        let err = read_minutes(text.as_bytes(), &simple_schema()).unwrap_err();
        match err {
            IngestError::DuplicateKey { row, minute, .. } => {
                assert_eq!(row, 4);
                assert_eq!(minute, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_minute_and_parse_errors() {
        let text = csv_of(&[("s1", 1, 1440, 1.0)]);
        assert!(matches!(
            read_minutes(text.as_bytes(), &simple_schema()),
            Err(IngestError::MinuteOutOfRange { row: 2, minute: 1440 })
        ));
        let text = "subject,day,minute,count\ns1,1,x,3\n";
        assert!(matches!(
            read_minutes(text.as_bytes(), &simple_schema()),
            Err(IngestError::Parse { row: 2, .. })
        ));
        let text = csv_of(&[("s1", 1, 3, -2.0)]);
        assert!(matches!(
            read_minutes(text.as_bytes(), &simple_schema()),
            Err(IngestError::RejectedRecord { row: 2, .. })
        ));
        let text = "subject,day,count\ns1,1,3\n";
        assert!(matches!(
            read_minutes(text.as_bytes(), &simple_schema()),
            Err(IngestError::MissingColumn(_))
        ));
    }

    #[test]
    fn triaxial_rows_combine() {
        let text = "id,d,m,x,y,z\na,0,0,3,4,0\na,0,1,1,1,1\na,0,2,2,3,6\n";
        let schema = ColumnSchema {
            subject: "id".into(),
            day: "d".into(),
            minute: "m".into(),
            values: ValueColumns::Triaxial {
                ml: "x".into(),
                ap: "y".into(),
                vt: "z".into(),
            },
            missing: None,
        };
        let panel = read_minutes(text.as_bytes(), &schema).unwrap();
        let day = &panel.subjects()[0].days[0];
        let expected = [(3.0f64, 4.0f64, 0.0f64), (1.0, 1.0, 1.0), (2.0, 3.0, 6.0)];
        for (m, (a, b, c)) in expected.iter().enumerate() {
            let norm = (a * a + b * b + c * c).sqrt();
            assert_eq!(day.get(m).unwrap(), norm);
        }
    }

    #[test]
    fn canonical_round_trip_is_bit_identical() {
        let text = csv_of(&[("s1", 1, 0, 0.1), ("s1", 1, 7, 1.0 / 3.0), ("s2", 2, 1439, 12.5)]);
        let panel = read_minutes(text.as_bytes(), &simple_schema()).unwrap();
        let mut first = Vec::new();
        write_canonical(&panel, &mut first).unwrap();
        let again = read_minutes(first.as_slice(), &ColumnSchema::canonical()).unwrap();
        assert_eq!(again, panel);
        let mut second = Vec::new();
        write_canonical(&again, &mut second).unwrap();
        assert_eq!(first, second);
    }

    fn panel_from_day(values: Vec<f64>) -> ActivityPanel<f64> {
        ActivityPanel::new(vec![SubjectSeries::new("a", vec![DaySeries::new(0, values).unwrap()])], 1).unwrap()
    }

    #[test]
    fn aggregate_constant_and_mean() {
        let p = panel_from_day(vec![4.0; 1440]);
        let agg = aggregate_epochs(&p, 10).unwrap();
        assert_eq!(agg.slots_per_day(), 144);
        assert!(agg.subjects()[0].days[0].values().iter().all(|&v| v == 4.0));

        let mut v = vec![0.0; 1440];
        v[9] = 10.0;
        let agg = aggregate_epochs(&panel_from_day(v), 10).unwrap();
        assert_eq!(agg.subjects()[0].days[0].get(0), Some(1.0));

        assert!(matches!(aggregate_epochs(&p, 7), Err(IngestError::InvalidEpochWidth(7))));
        assert!(matches!(aggregate_epochs(&agg, 2), Err(IngestError::AlreadyAggregated(10))));
    }

    #[test]
    fn aggregate_pools_observed_minutes_only() {
        let mut vals = vec![2.0; 1440];
        let mut obs = vec![true; 1440];
        vals[0] = 100.0;
        obs[0] = false;
        for m in 10..20 {
            obs[m] = false;
        }
        let day = DaySeries::with_mask(0, vals, obs).unwrap();
        let p = ActivityPanel::new(vec![SubjectSeries::new("a", vec![day])], 1).unwrap();
        let agg = aggregate_epochs(&p, 10).unwrap();
        let d = &agg.subjects()[0].days[0];
        assert_eq!(d.get(0), Some(2.0));
        assert_eq!(d.get(1), None);
    }

    #[test]
    fn subject_records_validate_binary() {
        let schema = RecordSchema {
            subject: "id".into(),
            outcome: "y".into(),
            covariates: vec!["age".into()],
            binary: true,
        };
        let ok = "id,y,age\na,1,70\nb,0,65\n";
        let recs = read_subject_records(ok.as_bytes(), &schema).unwrap();
        assert_eq!(recs[1].covariates, vec![65.0]);
        let bad = "id,y,age\na,2,70\n";
        assert!(matches!(
            read_subject_records(bad.as_bytes(), &schema),
            Err(IngestError::NonBinaryOutcome { row: 2, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggregation_preserves_grand_mean(vals in proptest::collection::vec(0.0f64..500.0, 1440), w_idx in 0usize..6) {
                let widths = [2usize, 5, 10, 15, 30, 60];
                let width = widths[w_idx];
                let grand: f64 = vals.iter().sum::<f64>() / 1440.0;
                let agg = aggregate_epochs(&panel_from_day(vals), width).unwrap();
                let d = &agg.subjects()[0].days[0];
                let m: f64 = d.values().iter().sum::<f64>() / d.len() as f64;
                prop_assert!((m - grand).abs() <= 1e-12 * grand.abs().max(1.0));
            }
        }
    }
}
