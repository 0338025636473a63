//! Reading the static, visit and sensor tables; static-field imputation and encoding.
//!
//! Expected CSV layouts (UTF-8, header row required):
//!
//! ```text
//! static.csv   patient_id,<field>...
//! visits.csv   patient_id,day,source,q1,...,q12     (source: clinician|self, empty = missing)
//! sensors.csv  patient_id,day,channel,value          (long form)
//! ```
//!
//! Static columns are typed by content: a column whose non-empty cells all
//! parse as finite reals is numeric, anything else is categorical.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Diagnostic, Error, Result};
use crate::types::{QuestionId, Score, Source, VisitRecord, N_QUESTIONS};

#[derive(Debug, Clone, PartialEq)]
pub struct StaticRecord {
    pub patient_id: String,
    /// Aligned with [`StaticTable::numeric_fields`].
    pub numeric: Vec<Option<f64>>,
    /// Aligned with [`StaticTable::categorical_fields`].
    pub categorical: Vec<Option<String>>,
}

/// Static covariates for a cohort, sharing one column schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StaticTable {
    pub numeric_fields: Vec<String>,
    pub categorical_fields: Vec<String>,
    pub records: Vec<StaticRecord>,
}

impl StaticTable {
    pub fn get(&self, patient_id: &str) -> Option<&StaticRecord> {
        self.records.iter().find(|r| r.patient_id == patient_id)
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.records.iter().any(|r| {
            r.numeric.iter().any(Option::is_none) || r.categorical.iter().any(Option::is_none)
        })
    }
}

/// One daily sensor channel for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub patient_id: String,
    pub channel: String,
    /// `(day, value)`, days strictly increasing.
    pub samples: Vec<(i64, f64)>,
}

impl SensorSeries {
    /// Samples with `start <= day < end`.
    pub fn slice(&self, start: i64, end: i64) -> &[(i64, f64)] {
        let lo = self.samples.partition_point(|&(d, _)| d < start);
        let hi = self.samples.partition_point(|&(d, _)| d < end);
        &self.samples[lo..hi.max(lo)]
    }

    pub fn first_day(&self) -> Option<i64> {
        self.samples.first().map(|s| s.0)
    }

    pub fn last_day(&self) -> Option<i64> {
        self.samples.last().map(|s| s.0)
    }
}

/// Everything read from the three input tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub statics: StaticTable,
    /// Sorted by (patient, day, source).
    pub visits: Vec<VisitRecord>,
    /// Sorted by (patient, channel).
    pub sensors: Vec<SensorSeries>,
}

impl Cohort {
    pub fn patient_ids(&self) -> Vec<String> {
        self.statics.patient_ids()
    }

    pub fn visits_of<'a>(&'a self, patient_id: &'a str) -> impl Iterator<Item = &'a VisitRecord> {
        self.visits.iter().filter(move |v| v.patient_id == patient_id)
    }

    pub fn sensors_of<'a>(
        &'a self,
        patient_id: &'a str,
    ) -> impl Iterator<Item = &'a SensorSeries> {
        self.sensors.iter().filter(move |s| s.patient_id == patient_id)
    }

    /// Sorted, de-duplicated channel names across the cohort.
    pub fn channels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sensors.iter().map(|s| s.channel.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Restricts the cohort to the given patients, preserving order.
    pub fn subset(&self, keep: &HashSet<String>) -> Cohort {
        Cohort {
            statics: StaticTable {
                numeric_fields: self.statics.numeric_fields.clone(),
                categorical_fields: self.statics.categorical_fields.clone(),
                records: self
                    .statics
                    .records
                    .iter()
                    .filter(|r| keep.contains(&r.patient_id))
                    .cloned()
                    .collect(),
            },
            visits: self
                .visits
                .iter()
                .filter(|v| keep.contains(&v.patient_id))
                .cloned()
                .collect(),
            sensors: self
                .sensors
                .iter()
                .filter(|s| keep.contains(&s.patient_id))
                .cloned()
                .collect(),
        }
    }
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn diag(file: &str, row: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        file: file.to_owned(),
        row,
        message: message.into(),
    }
}

/// Reads and cross-validates the three tables.
pub fn load_cohort(static_path: &Path, visits_path: &Path, sensors_path: &Path) -> Result<Cohort> {
    let statics = read_static(open(static_path)?, &file_label(static_path))?;
    let visits = read_visits(open(visits_path)?, &file_label(visits_path))?;
    let sensors = read_sensors(open(sensors_path)?, &file_label(sensors_path))?;
    assemble_cohort(statics, visits, sensors, &file_label(visits_path), &file_label(sensors_path))
}

/// Cross-checks that every visit and sensor patient has a static record.
pub fn assemble_cohort(
    statics: StaticTable,
    visits: Vec<VisitRecord>,
    sensors: Vec<SensorSeries>,
    visits_label: &str,
    sensors_label: &str,
) -> Result<Cohort> {
    let known: HashSet<&str> = statics.records.iter().map(|r| r.patient_id.as_str()).collect();
    let mut diags = Vec::new();
    for v in &visits {
        if !known.contains(v.patient_id.as_str()) {
            diags.push(diag(
                visits_label,
                0,
                format!("patient {:?} has visits but no static record", v.patient_id),
            ));
        }
    }
    for s in &sensors {
        if !known.contains(s.patient_id.as_str()) {
            diags.push(diag(
                sensors_label,
                0,
                format!("patient {:?} has sensor data but no static record", s.patient_id),
            ));
        }
    }
    diags.dedup();
    if !diags.is_empty() {
        return Err(Error::Schema(diags));
    }
    Ok(Cohort {
        statics,
        visits,
        sensors,
    })
}

pub fn read_static<R: Read>(input: R, file: &str) -> Result<StaticTable> {
    let mut rdr = reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(vec![diag(file, 0, e.to_string())]))?
        .clone();
    let mut diags = Vec::new();
    if headers.get(0) != Some("patient_id") {
        diags.push(diag(file, 0, "first column must be patient_id"));
        return Err(Error::Schema(diags));
    }
    let fields: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut seen_fields = HashSet::new();
    for f in &fields {
        if f.is_empty() || !seen_fields.insert(f.as_str()) {
            diags.push(diag(file, 0, format!("empty or duplicate column {f:?}")));
        } else if f.contains("__") || f == "previous_value" {
            // `__` marks sensor feature columns downstream
            diags.push(diag(file, 0, format!("reserved static column name {f:?}")));
        }
    }

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(file, row, e.to_string()));
                continue;
            }
        };
        let pid = rec.get(0).unwrap_or("").to_owned();
        if pid.is_empty() {
            diags.push(diag(file, row, "empty patient_id"));
            continue;
        }
        if !seen.insert(pid.clone()) {
            diags.push(diag(file, row, format!("duplicate patient_id {pid:?}")));
            continue;
        }
        rows.push((pid, rec.iter().skip(1).map(str::to_owned).collect()));
    }
    if !diags.is_empty() {
        return Err(Error::Schema(diags));
    }

    let numeric_col: Vec<bool> = (0..fields.len())
        .map(|j| {
            rows.iter().all(|(_, cells)| {
                let c = cells[j].as_str();
                c.is_empty() || c.parse::<f64>().map(f64::is_finite).unwrap_or(false)
            })
        })
        .collect();

    let mut table = StaticTable::default();
    for (j, f) in fields.iter().enumerate() {
        if numeric_col[j] {
            table.numeric_fields.push(f.clone());
        } else {
            table.categorical_fields.push(f.clone());
        }
    }
    for (pid, cells) in rows {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for (j, cell) in cells.into_iter().enumerate() {
            if numeric_col[j] {
                numeric.push(if cell.is_empty() {
                    None
                } else {
                    cell.parse().ok()
                });
            } else {
                categorical.push(if cell.is_empty() { None } else { Some(cell) });
            }
        }
        table.records.push(StaticRecord {
            patient_id: pid,
            numeric,
            categorical,
        });
    }
    Ok(table)
}

fn visits_header() -> Vec<String> {
    let mut h = vec!["patient_id".to_owned(), "day".into(), "source".into()];
    h.extend((1..=N_QUESTIONS).map(|i| format!("q{i}")));
    h
}

pub fn read_visits<R: Read>(input: R, file: &str) -> Result<Vec<VisitRecord>> {
    let mut rdr = reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(vec![diag(file, 0, e.to_string())]))?
        .clone();
    let expected = visits_header();
    if headers.iter().collect::<Vec<_>>() != expected {
        let unknown: Vec<&str> = headers
            .iter()
            .filter(|h| !expected.iter().any(|e| e == h))
            .collect();
        return Err(Error::Schema(vec![diag(
            file,
            0,
            format!(
                "header must be {}; unknown columns: {:?}",
                expected.join(","),
                unknown
            ),
        )]));
    }

    let mut diags = Vec::new();
    let mut out = Vec::new();
    let mut keys = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(file, row, e.to_string()));
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<VisitRecord, String> {
            let pid = rec.get(0).unwrap_or("");
            if pid.is_empty() {
                return Err("empty patient_id".into());
            }
            let day: i64 = rec[1]
                .parse()
                .map_err(|_| format!("unparseable day {:?}", &rec[1]))?;
            let source: Source = rec[2].parse().map_err(|e: Error| e.to_string())?;
            let mut scores = [None; N_QUESTIONS];
            for (q, slot) in scores.iter_mut().enumerate() {
                let cell = &rec[3 + q];
                if cell.is_empty() {
                    continue;
                }
                let v: u8 = cell
                    .parse()
                    .map_err(|_| format!("q{}: unparseable score {cell:?}", q + 1))?;
                *slot = Some(
                    Score::new(v).map_err(|_| format!("q{}: score {v} outside 0..=4", q + 1))?,
                );
            }
            VisitRecord::new(pid, day, source, scores).map_err(|e| e.to_string())
        })();
        match parsed {
            Ok(v) => {
                if !keys.insert((v.patient_id.clone(), v.day, v.source)) {
                    diags.push(diag(
                        file,
                        row,
                        format!(
                            "duplicate visit (patient {:?}, day {}, source {})",
                            v.patient_id,
                            v.day,
                            v.source.as_str()
                        ),
                    ));
                } else {
                    out.push(v);
                }
            }
            Err(msg) => diags.push(diag(file, row, msg)),
        }
    }
    if !diags.is_empty() {
        return Err(Error::Schema(diags));
    }
    out.sort_by(|a, b| {
        (a.patient_id.as_str(), a.day, a.source).cmp(&(b.patient_id.as_str(), b.day, b.source))
    });
    Ok(out)
}

pub fn read_sensors<R: Read>(input: R, file: &str) -> Result<Vec<SensorSeries>> {
    let mut rdr = reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(vec![diag(file, 0, e.to_string())]))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["patient_id", "day", "channel", "value"] {
        return Err(Error::Schema(vec![diag(
            file,
            0,
            format!(
                "header must be patient_id,day,channel,value; got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        )]));
    }
    let mut diags = Vec::new();
    // (patient, channel) -> day -> value; later rows overwrite earlier ones.
    let mut series: BTreeMap<(String, String), BTreeMap<i64, f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(file, row, e.to_string()));
                continue;
            }
        };
        let pid = &rec[0];
        let channel = &rec[2];
        if pid.is_empty() || channel.is_empty() {
            diags.push(diag(file, row, "empty patient_id or channel"));
            continue;
        }
        let Ok(day) = rec[1].parse::<i64>() else {
            diags.push(diag(file, row, format!("unparseable day {:?}", &rec[1])));
            continue;
        };
        let value = match rec[3].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                diags.push(diag(file, row, format!("non-finite value {:?}", &rec[3])));
                continue;
            }
        };
        let days = series
            .entry((pid.to_owned(), channel.to_owned()))
            .or_default();
        if days.insert(day, value).is_some() {
            log::warn!(
                "{file}:{row}: duplicate sample for {pid}/{channel} at day {day}; keeping the last"
            );
        }
    }
    if !diags.is_empty() {
        return Err(Error::Schema(diags));
    }
    Ok(series
        .into_iter()
        .map(|((patient_id, channel), days)| SensorSeries {
            patient_id,
            channel,
            samples: days.into_iter().collect(),
        })
        .collect())
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median for numeric fields, most frequent label (smallest on ties) for categorical ones.
pub fn impute_static(table: &StaticTable) -> Result<StaticTable> {
    let mut out = table.clone();
    for (j, field) in table.numeric_fields.iter().enumerate() {
        let mut present: Vec<f64> = table.records.iter().filter_map(|r| r.numeric[j]).collect();
        if present.is_empty() {
            if table.records.is_empty() {
                continue;
            }
            return Err(Error::InvalidInput(format!(
                "static field {field:?} is missing for every patient"
            )));
        }
        // A patient's own value is absent exactly when it needs imputing, so the
        // cohort median equals the median over all other patients.
        let med = median_of(&mut present);
        for r in &mut out.records {
            r.numeric[j].get_or_insert(med);
        }
    }
    for (j, field) in table.categorical_fields.iter().enumerate() {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &table.records {
            if let Some(l) = &r.categorical[j] {
                *counts.entry(l.as_str()).or_default() += 1;
            }
        }
        let Some(max) = counts.values().copied().max() else {
            if table.records.is_empty() {
                continue;
            }
            return Err(Error::InvalidInput(format!(
                "static field {field:?} is missing for every patient"
            )));
        };
        // BTreeMap iterates labels in order, so the first hit is the smallest tie.
        let mode = counts
            .iter()
            .find(|(_, &c)| c == max)
            .map(|(l, _)| (*l).to_owned())
            .unwrap();
        for r in &mut out.records {
            if r.categorical[j].is_none() {
                r.categorical[j] = Some(mode.clone());
            }
        }
    }
    Ok(out)
}

/// One-hot encoder for static records with a fixed column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEncoder {
    numeric_fields: Vec<String>,
    /// (field, sorted labels)
    categorical: Vec<(String, Vec<String>)>,
}

impl StaticEncoder {
    pub fn fit(table: &StaticTable) -> Self {
        let categorical = table
            .categorical_fields
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let labels: BTreeSet<String> = table
                    .records
                    .iter()
                    .filter_map(|r| r.categorical[j].clone())
                    .collect();
                (f.clone(), labels.into_iter().collect())
            })
            .collect();
        StaticEncoder {
            numeric_fields: table.numeric_fields.clone(),
            categorical,
        }
    }

    /// Numeric fields in header order, then `field=label` indicator columns.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.numeric_fields.clone();
        for (f, labels) in &self.categorical {
            names.extend(labels.iter().map(|l| format!("{f}={l}")));
        }
        names
    }

    /// Encodes an imputed record; missing values (if any) come out as `None`.
    pub fn encode(&self, record: &StaticRecord) -> Vec<(String, Option<f64>)> {
        let mut out: Vec<(String, Option<f64>)> = self
            .numeric_fields
            .iter()
            .cloned()
            .zip(record.numeric.iter().copied())
            .collect();
        for ((f, labels), value) in self.categorical.iter().zip(&record.categorical) {
            for l in labels {
                let v = value.as_ref().map(|v| if v == l { 1.0 } else { 0.0 });
                out.push((format!("{f}={l}"), v));
            }
        }
        out
    }
}

/// Encodes one record against the label sets of the table it belongs to.
pub fn encode_static(table: &StaticTable, record: &StaticRecord) -> Vec<(String, Option<f64>)> {
    StaticEncoder::fit(table).encode(record)
}

pub fn write_static<W: Write>(out: W, table: &StaticTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_owned()];
    header.extend(table.numeric_fields.iter().cloned());
    header.extend(table.categorical_fields.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.records {
        let mut row = vec![r.patient_id.clone()];
        row.extend(r.numeric.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        row.extend(r.categorical.iter().map(|v| v.clone().unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<static>", e))
}

pub fn write_visits<W: Write>(out: W, visits: &[VisitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(visits_header()).map_err(csv_err)?;
    for v in visits {
        let mut row = vec![v.patient_id.clone(), v.day.to_string(), v.source.as_str().into()];
        row.extend(
            QuestionId::all().map(|q| v.score(q).map(|s| s.to_string()).unwrap_or_default()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<visits>", e))
}

pub fn write_sensors<W: Write>(out: W, sensors: &[SensorSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "day", "channel", "value"])
        .map_err(csv_err)?;
    for s in sensors {
        for (d, v) in &s.samples {
            w.write_record([
                s.patient_id.as_str(),
                &d.to_string(),
                s.channel.as_str(),
                &v.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<sensors>", e))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Index of records by patient id, for quick lookups during feature assembly.
pub fn static_index(table: &StaticTable) -> HashMap<&str, &StaticRecord> {
    table
        .records
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: &[Option<f64>]) -> StaticTable {
        StaticTable {
            numeric_fields: vec!["fvc".into()],
            categorical_fields: vec![],
            records: values
                .iter()
                .enumerate()
                .map(|(i, v)| StaticRecord {
                    patient_id: format!("p{i}"),
                    numeric: vec![*v],
                    categorical: vec![],
                })
                .collect(),
        }
    }

    fn column(t: &StaticTable) -> Vec<f64> {
        t.records.iter().map(|r| r.numeric[0].unwrap()).collect()
    }

    #[test]
    fn rejects_reserved_static_names() {
        let csv = "patient_id,steps__median,age\nP1,1,2\n";
        let err = read_static(csv.as_bytes(), "static.csv").unwrap_err();
        assert!(err.to_string().contains("steps__median"), "{err}");
    }

    #[test]
    fn imputes_median_of_remaining() {
        let t = table(&[Some(1.0), Some(2.0), None, Some(4.0)]);
        assert_eq!(column(&impute_static(&t).unwrap()), vec![1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn imputes_even_median() {
        let t = table(&[Some(10.0), None, Some(20.0), None]);
        assert_eq!(
            column(&impute_static(&t).unwrap()),
            vec![10.0, 15.0, 20.0, 15.0]
        );
    }

    #[test]
    fn imputation_is_identity_without_gaps() {
        let t = table(&[Some(3.0), Some(1.0)]);
        assert_eq!(impute_static(&t).unwrap(), t);
    }

    #[test]
    fn all_missing_field_is_an_error() {
        let t = table(&[None, None]);
        assert!(impute_static(&t).is_err());
    }

    #[test]
    fn categorical_mode_breaks_ties_lexicographically() {
        let t = StaticTable {
            numeric_fields: vec![],
            categorical_fields: vec!["site".into()],
            records: ["spinal", "bulbar", "", "spinal", "bulbar"]
                .iter()
                .enumerate()
                .map(|(i, l)| StaticRecord {
                    patient_id: format!("p{i}"),
                    numeric: vec![],
                    categorical: vec![(!l.is_empty()).then(|| l.to_string())],
                })
                .collect(),
        };
        let out = impute_static(&t).unwrap();
        assert_eq!(out.records[2].categorical[0].as_deref(), Some("bulbar"));
    }

    #[test]
    fn one_hot_uses_sorted_labels() {
        let csv = "patient_id,age_at_diagnosis,sex\na,61.0,F\nb,70,M\n";
        let t = read_static(csv.as_bytes(), "static.csv").unwrap();
        assert_eq!(t.numeric_fields, vec!["age_at_diagnosis"]);
        let enc = StaticEncoder::fit(&t);
        assert_eq!(
            enc.column_names(),
            vec!["age_at_diagnosis", "sex=F", "sex=M"]
        );
        let a = enc.encode(&t.records[0]);
        assert_eq!(
            a,
            vec![
                ("age_at_diagnosis".to_string(), Some(61.0)),
                ("sex=F".to_string(), Some(1.0)),
                ("sex=M".to_string(), Some(0.0)),
            ]
        );
        let b = encode_static(&t, &t.records[1]);
        let names_a: Vec<_> = a.iter().map(|c| &c.0).collect();
        let names_b: Vec<_> = b.iter().map(|c| &c.0).collect();
        assert_eq!(names_a, names_b);
    }

    #[test]
    fn visit_score_out_of_range_names_the_row() {
        let csv = "patient_id,day,source,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q12\n\
                   a,10,clinician,4,4,4,4,4,4,4,4,4,4,4,4\n\
                   a,20,clinician,5,4,4,4,4,4,4,4,4,4,4,4\n";
        match read_visits(csv.as_bytes(), "visits.csv") {
            Err(Error::Schema(d)) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].row, 2);
                assert!(d[0].message.contains("q1"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_visit_is_rejected_but_cross_source_is_fine() {
        let base = "patient_id,day,source,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q12\n";
        let ok = format!("{base}a,10,clinician,4,,,,,,,,,,,\na,10,self,3,,,,,,,,,,,\n");
        assert_eq!(read_visits(ok.as_bytes(), "v").unwrap().len(), 2);
        let dup = format!("{base}a,10,self,4,,,,,,,,,,,\na,10,self,3,,,,,,,,,,,\n");
        assert!(matches!(read_visits(dup.as_bytes(), "v"), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_visit_column_is_rejected() {
        let csv = "patient_id,day,source,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q13\n";
        assert!(matches!(read_visits(csv.as_bytes(), "v"), Err(Error::Schema(_))));
    }

    #[test]
    fn sensors_are_sorted_and_deduplicated() {
        let csv = "patient_id,day,channel,value\n\
                   a,5,steps,1.0\na,2,steps,2.0\na,5,steps,3.0\na,3,hr,60\n";
        let s = read_sensors(csv.as_bytes(), "s").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].channel, "hr");
        assert_eq!(s[1].samples, vec![(2, 2.0), (5, 3.0)]);
    }

    #[test]
    fn non_finite_sensor_value_is_rejected() {
        let csv = "patient_id,day,channel,value\na,5,steps,NaN\n";
        assert!(read_sensors(csv.as_bytes(), "s").is_err());
    }

    #[test]
    fn slice_is_half_open() {
        let s = SensorSeries {
            patient_id: "a".into(),
            channel: "c".into(),
            samples: vec![(1, 1.0), (2, 2.0), (3, 3.0), (5, 5.0)],
        };
        assert_eq!(s.slice(2, 5), &[(2, 2.0), (3, 3.0)]);
        assert!(s.slice(6, 9).is_empty());
        assert!(s.slice(4, 2).is_empty());
    }
}
