//! Longitudinal and survival records, dataset validation and CSV ingestion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for longitudinal times that coincide with the event time.
pub const EVENT_TIME_TOLERANCE: f64 = 1e-9;

/// One longitudinal measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub subject_id: String,
    pub time: f64,
    pub y: f64,
    pub x_covariates: Vec<f64>,
}

/// The survival outcome of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvRecord {
    pub subject_id: String,
    pub event_time: f64,
    /// `true` when the event was observed, `false` when censored.
    pub event: bool,
    pub w_covariates: Vec<f64>,
}

/// A validated joint dataset.
///
/// Subjects carry dense indices `0..n` in order of first appearance in the
/// longitudinal list; `survival[i]` belongs to subject `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub longitudinal: Vec<LongRecord>,
    pub survival: Vec<SurvRecord>,
    pub n: usize,
    pub long_covariate_names: Vec<String>,
    pub surv_covariate_names: Vec<String>,
    subject_rows: Vec<Vec<usize>>,
}

/// Validate raw record lists and assemble a [`Dataset`].
pub fn validate_dataset(long: Vec<LongRecord>, surv: Vec<SurvRecord>) -> Result<Dataset> {
    if long.is_empty() {
        return Err(Error::data("", 0, "longitudinal record list is empty"));
    }
    if surv.is_empty() {
        return Err(Error::data("", 0, "survival record list is empty"));
    }

    let p = long[0].x_covariates.len();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (row, rec) in long.iter().enumerate() {
        let row = row + 1;
        if !rec.time.is_finite() || rec.time < 0.0 {
            return Err(Error::data(&rec.subject_id, row, format!("invalid measurement time {}", rec.time)));
        }
        if !rec.y.is_finite() {
            return Err(Error::data(&rec.subject_id, row, "non-finite outcome value"));
        }
        if rec.x_covariates.len() != p {
            return Err(Error::data(
                &rec.subject_id,
                row,
                format!("expected {p} covariates, found {}", rec.x_covariates.len()),
            ));
        }
        if rec.x_covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(&rec.subject_id, row, "non-finite covariate value"));
        }
        if !index.contains_key(rec.subject_id.as_str()) {
            index.insert(rec.subject_id.as_str(), order.len());
            order.push(rec.subject_id.as_str());
        }
    }

    let n = order.len();
    let q = surv[0].w_covariates.len();
    let mut surv_slot: Vec<Option<usize>> = vec![None; n];
    for (row, rec) in surv.iter().enumerate() {
        let row = row + 1;
        if !rec.event_time.is_finite() || rec.event_time <= 0.0 {
            return Err(Error::data(&rec.subject_id, row, format!("invalid event time {}", rec.event_time)));
        }
        if rec.w_covariates.len() != q {
            return Err(Error::data(
                &rec.subject_id,
                row,
                format!("expected {q} survival covariates, found {}", rec.w_covariates.len()),
            ));
        }
        if rec.w_covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(&rec.subject_id, row, "non-finite survival covariate value"));
        }
        let Some(&i) = index.get(rec.subject_id.as_str()) else {
            return Err(Error::data(&rec.subject_id, row, "subject has no longitudinal records"));
        };
        if surv_slot[i].is_some() {
            return Err(Error::data(&rec.subject_id, row, "duplicate survival record"));
        }
        surv_slot[i] = Some(row - 1);
    }

    let mut survival = Vec::with_capacity(n);
    for (i, slot) in surv_slot.iter().enumerate() {
        match slot {
            Some(r) => survival.push(surv[*r].clone()),
            None => return Err(Error::data(order[i], 0, "missing survival record")),
        }
    }

    let mut subject_rows = vec![Vec::new(); n];
    for (row, rec) in long.iter().enumerate() {
        let i = index[rec.subject_id.as_str()];
        if rec.time > survival[i].event_time + EVENT_TIME_TOLERANCE {
            return Err(Error::data(
                &rec.subject_id,
                row + 1,
                format!(
                    "observation after event time ({} > {})",
                    rec.time, survival[i].event_time
                ),
            ));
        }
        subject_rows[i].push(row);
    }
    for rows in &mut subject_rows {
        rows.sort_by(|&a, &b| long[a].time.total_cmp(&long[b].time));
    }

    Ok(Dataset {
        long_covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
        surv_covariate_names: (1..=q).map(|j| format!("w{j}")).collect(),
        longitudinal: long,
        survival,
        n,
        subject_rows,
    })
}

impl Dataset {
    /// Attach covariate names (defaults are `x1..`, `w1..`).
    pub fn with_covariate_names(mut self, long_names: Vec<String>, surv_names: Vec<String>) -> Result<Self> {
        if long_names.len() != self.long_covariate_names.len() {
            return Err(Error::Config(format!(
                "{} longitudinal covariate names for {} columns",
                long_names.len(),
                self.long_covariate_names.len()
            )));
        }
        if surv_names.len() != self.surv_covariate_names.len() {
            return Err(Error::Config(format!(
                "{} survival covariate names for {} columns",
                surv_names.len(),
                self.surv_covariate_names.len()
            )));
        }
        self.long_covariate_names = long_names;
        self.surv_covariate_names = surv_names;
        Ok(self)
    }

    /// Longitudinal row indices of subject `i`, sorted by time.
    pub fn subject_rows(&self, i: usize) -> &[usize] {
        &self.subject_rows[i]
    }

    pub fn subject_id(&self, i: usize) -> &str {
        &self.survival[i].subject_id
    }

    pub fn n_observations(&self) -> usize {
        self.longitudinal.len()
    }

    pub fn long_covariate_index(&self, name: &str) -> Result<usize> {
        self.long_covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("unknown longitudinal covariate '{name}'")))
    }

    pub fn surv_covariate_index(&self, name: &str) -> Result<usize> {
        self.surv_covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("unknown survival covariate '{name}'")))
    }

    /// Fraction of subjects whose survival time is censored.
    pub fn censoring_rate(&self) -> f64 {
        self.survival.iter().filter(|s| !s.event).count() as f64 / self.n as f64
    }

    pub fn read_csv(long_path: &Path, surv_path: &Path) -> Result<Self> {
        let open = |p: &Path| {
            std::fs::File::open(p).map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))
        };
        let (long_names, long) = read_long_csv(open(long_path)?)?;
        let (surv_names, surv) = read_surv_csv(open(surv_path)?)?;
        validate_dataset(long, surv)?.with_covariate_names(long_names, surv_names)
    }

    pub fn write_csv(&self, long_path: &Path, surv_path: &Path) -> Result<()> {
        write_long_csv(std::fs::File::create(long_path)?, &self.long_covariate_names, &self.longitudinal)?;
        write_surv_csv(std::fs::File::create(surv_path)?, &self.surv_covariate_names, &self.survival)?;
        Ok(())
    }
}

fn parse_f64(field: &str, subject: &str, row: usize, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::data(subject, row, format!("cannot parse {what} '{field}'")))
}

fn check_header(header: &csv::StringRecord, expected: &[&str]) -> Result<Vec<String>> {
    for (k, name) in expected.iter().enumerate() {
        if header.get(k).map(str::trim) != Some(*name) {
            return Err(Error::Config(format!(
                "CSV header must start with {}; found {:?}",
                expected.join(","),
                header.iter().collect::<Vec<_>>()
            )));
        }
    }
    Ok(header.iter().skip(expected.len()).map(|s| s.trim().to_string()).collect())
}

/// Read `subject_id,time,y,<covariates...>`.
pub fn read_long_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<LongRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names = check_header(rdr.headers()?, &["subject_id", "time", "y"])?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let time = parse_f64(rec.get(1).unwrap_or(""), &id, row, "time")?;
        let y = parse_f64(rec.get(2).unwrap_or(""), &id, row, "y")?;
        let x = rec
            .iter()
            .skip(3)
            .map(|f| parse_f64(f, &id, row, "covariate"))
            .collect::<Result<Vec<_>>>()?;
        out.push(LongRecord { subject_id: id, time, y, x_covariates: x });
    }
    Ok((names, out))
}

/// Read `subject_id,event_time,event_indicator,<covariates...>`.
pub fn read_surv_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<SurvRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names = check_header(rdr.headers()?, &["subject_id", "event_time", "event_indicator"])?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let event_time = parse_f64(rec.get(1).unwrap_or(""), &id, row, "event_time")?;
        let event = match rec.get(2).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::data(&id, row, format!("event_indicator must be 0 or 1, found {other:?}")));
            }
        };
        let w = rec
            .iter()
            .skip(3)
            .map(|f| parse_f64(f, &id, row, "covariate"))
            .collect::<Result<Vec<_>>>()?;
        out.push(SurvRecord { subject_id: id, event_time, event, w_covariates: w });
    }
    Ok((names, out))
}

pub fn write_long_csv<W: Write>(writer: W, names: &[String], records: &[LongRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "time".into(), "y".into()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.subject_id.clone(), fmt_f64(r.time), fmt_f64(r.y)];
        row.extend(r.x_covariates.iter().map(|&v| fmt_f64(v)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_surv_csv<W: Write>(writer: W, names: &[String], records: &[SurvRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "event_time".into(), "event_indicator".into()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.subject_id.clone(),
            fmt_f64(r.event_time),
            if r.event { "1".into() } else { "0".into() },
        ];
        row.extend(r.w_covariates.iter().map(|&v| fmt_f64(v)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr(id: &str, t: f64, y: f64) -> LongRecord {
        LongRecord { subject_id: id.into(), time: t, y, x_covariates: vec![] }
    }

    fn sr(id: &str, t: f64, event: bool) -> SurvRecord {
        SurvRecord { subject_id: id.into(), event_time: t, event, w_covariates: vec![] }
    }

    #[test]
    fn minimal_dataset() {
        let d = validate_dataset(vec![lr("a", 0.5, 1.0)], vec![sr("a", 1.0, true)]).unwrap();
        assert_eq!(d.n, 1);
        assert_eq!(d.subject_rows(0), &[0]);
    }

    #[test]
    fn observation_after_event_rejected() {
        let err = validate_dataset(vec![lr("a", 2.0, 1.0)], vec![sr("a", 1.0, true)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("observation after event time"), "{msg}");
        assert!(msg.contains("subject a"), "{msg}");
    }

    #[test]
    fn observation_at_event_time_allowed() {
        let d = validate_dataset(vec![lr("a", 1.0 + 5e-10, 1.0)], vec![sr("a", 1.0, false)]);
        assert!(d.is_ok());
    }

    #[test]
    fn missing_survival_row_names_subject() {
        let err = validate_dataset(
            vec![lr("a", 0.0, 1.0), lr("b", 0.0, 2.0)],
            vec![sr("a", 1.0, true)],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("subject b") && msg.contains("missing survival record"), "{msg}");
    }

    #[test]
    fn survival_only_subject_rejected() {
        let err = validate_dataset(vec![lr("a", 0.0, 1.0)], vec![sr("a", 1.0, true), sr("z", 2.0, true)])
            .unwrap_err();
        assert!(err.to_string().contains("no longitudinal records"));
    }

    #[test]
    fn non_finite_value_reports_row() {
        let err = validate_dataset(
            vec![lr("a", 0.0, 1.0), lr("a", 0.5, f64::NAN)],
            vec![sr("a", 1.0, true)],
        )
        .unwrap_err();
        match err {
            Error::Data { subject, row, .. } => {
                assert_eq!(subject, "a");
                assert_eq!(row, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn indices_follow_first_appearance_and_validation_is_idempotent() {
        let long = vec![lr("b", 0.3, 1.0), lr("a", 0.0, 2.0), lr("b", 0.1, 3.0)];
        let surv = vec![sr("a", 1.0, true), sr("b", 2.0, false)];
        let d = validate_dataset(long, surv).unwrap();
        assert_eq!(d.subject_id(0), "b");
        assert_eq!(d.subject_id(1), "a");
        assert_eq!(d.subject_rows(0), &[2, 0]);
        let again = validate_dataset(d.longitudinal.clone(), d.survival.clone()).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn csv_round_trip() {
        let long = vec![LongRecord { subject_id: "s1".into(), time: 0.25, y: -1.5, x_covariates: vec![1.0] }];
        let surv = vec![SurvRecord { subject_id: "s1".into(), event_time: 3.0, event: false, w_covariates: vec![44.5] }];
        let mut lbuf = Vec::new();
        let mut sbuf = Vec::new();
        write_long_csv(&mut lbuf, &["male".into()], &long).unwrap();
        write_surv_csv(&mut sbuf, &["age".into()], &surv).unwrap();
        assert!(String::from_utf8(lbuf.clone()).unwrap().starts_with("subject_id,time,y,male\n"));
        let (ln, l2) = read_long_csv(lbuf.as_slice()).unwrap();
        let (sn, s2) = read_surv_csv(sbuf.as_slice()).unwrap();
        assert_eq!(ln, vec!["male"]);
        assert_eq!(sn, vec!["age"]);
        assert_eq!(l2, long);
        assert_eq!(s2, surv);
    }

    #[test]
    fn bad_header_rejected() {
        let err = read_long_csv("id,time,y\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
