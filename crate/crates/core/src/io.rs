//! CSV ingestion and JSON/TSV report writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisConfig, AnalysisResult, RelatedPair, RelatedSelection};
use crate::data::{Dataset, FeatureKind, Outcome, ValidationError};
use crate::forest::join_errors;
use crate::selection::NullDistribution;
use crate::simulation::{MetricsReport, RawRecord};
use crate::surrogates::SquareMatrix;

/// Integer columns with at most this many distinct values are read as categorical.
pub const AUTO_CATEGORICAL_MAX_DISTINCT: usize = 12;
/// Largest level count accepted by automatic categorical typing.
const AUTO_CATEGORICAL_MAX_LEVELS: u32 = 64;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column '{column}': missing value")]
    Missing { row: usize, column: String },
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    NotNumeric { row: usize, column: String, value: String },
    #[error("row {row}, column '{column}': '{value}' is not a valid status (0/1/true/false)")]
    BadStatus { row: usize, column: String, value: String },
    #[error("column '{0}' not found in header")]
    UnknownColumn(String),
    #[error("no data rows")]
    Empty,
    #[error("invalid dataset: {}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OutcomeSpec {
    Classification { column: String },
    Regression { column: String },
    Survival { time: String, status: String },
}

impl OutcomeSpec {
    fn columns(&self) -> Vec<&str> {
        match self {
            OutcomeSpec::Classification { column } | OutcomeSpec::Regression { column } => vec![column],
            OutcomeSpec::Survival { time, status } => vec![time, status],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestConfig {
    pub outcome: Option<OutcomeSpec>,
    /// Per-column kind overrides by name.
    pub kinds: BTreeMap<String, FeatureKind>,
}

/// Automatic column typing: small non-negative integer codes become categorical, everything else continuous.
pub fn infer_kind(values: &[f64]) -> FeatureKind {
    let all_codes = values.iter().all(|v| v.fract() == 0.0 && *v >= 0.0 && *v < f64::from(AUTO_CATEGORICAL_MAX_LEVELS));
    if !all_codes {
        return FeatureKind::Continuous;
    }
    let distinct: BTreeSet<u32> = values.iter().map(|&v| v as u32).collect();
    if distinct.len() > AUTO_CATEGORICAL_MAX_DISTINCT {
        return FeatureKind::Continuous;
    }
    FeatureKind::Categorical { levels: distinct.last().map_or(1, |m| m + 1) }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64, IoError> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(IoError::Missing { row, column: column.to_string() });
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IoError::NotNumeric {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_status(raw: &str, row: usize, column: &str) -> Result<bool, IoError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" => Err(IoError::Missing { row, column: column.to_string() }),
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(IoError::BadStatus { row, column: column.to_string(), value: other.to_string() }),
    }
}

/// Class labels: non-negative integers are used as class indices, anything else is mapped to
/// indices in sorted label order.
fn class_labels(raw: &[String]) -> (Vec<u32>, u32) {
    let ints: Option<Vec<u32>> = raw.iter().map(|s| s.trim().parse::<u32>().ok()).collect();
    if let Some(labels) = ints {
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        return (labels, classes);
    }
    let levels: BTreeSet<&str> = raw.iter().map(|s| s.trim()).collect();
    let index: BTreeMap<&str, u32> = levels.iter().enumerate().map(|(i, &l)| (l, i as u32)).collect();
    let labels = raw.iter().map(|s| index[s.trim()]).collect();
    (labels, (levels.len() as u32).max(2))
}

/// Reads a comma-separated file with a header row. Columns not used by the outcome become features.
pub fn ingest_csv(path: &Path, cfg: &IngestConfig) -> Result<Dataset, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    ingest_csv_str(&text, cfg)
}

pub fn ingest_csv_str(text: &str, cfg: &IngestConfig) -> Result<Dataset, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record?;
        for (c, cell) in record.iter().enumerate() {
            cells[c].push(cell.to_string());
        }
    }
    let n = cells.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(IoError::Empty);
    }
    let find =
        |name: &str| header.iter().position(|h| h == name).ok_or_else(|| IoError::UnknownColumn(name.to_string()));

    let outcome_cols: Vec<usize> = match &cfg.outcome {
        Some(spec) => spec.columns().into_iter().map(find).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    for name in cfg.kinds.keys() {
        find(name)?;
    }

    let mut columns = Vec::new();
    let mut kinds = Vec::new();
    let mut names = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if outcome_cols.contains(&c) {
            continue;
        }
        // data rows start at line 2
        let values: Vec<f64> =
            cells[c].iter().enumerate().map(|(r, v)| parse_number(v, r + 2, name)).collect::<Result<_, _>>()?;
        let kind = cfg.kinds.get(name).copied().unwrap_or_else(|| infer_kind(&values));
        columns.push(values);
        kinds.push(kind);
        names.push(name.clone());
    }

    let outcome = match &cfg.outcome {
        None => Outcome::Regression { values: vec![0.0; n] },
        Some(OutcomeSpec::Classification { .. }) => {
            let (labels, classes) = class_labels(&cells[outcome_cols[0]]);
            Outcome::Classification { labels, classes }
        }
        Some(OutcomeSpec::Regression { column }) => Outcome::Regression {
            values: cells[outcome_cols[0]]
                .iter()
                .enumerate()
                .map(|(r, v)| parse_number(v, r + 2, column))
                .collect::<Result<_, _>>()?,
        },
        Some(OutcomeSpec::Survival { time, status }) => Outcome::Survival {
            time: cells[outcome_cols[0]]
                .iter()
                .enumerate()
                .map(|(r, v)| parse_number(v, r + 2, time))
                .collect::<Result<_, _>>()?,
            status: cells[outcome_cols[1]]
                .iter()
                .enumerate()
                .map(|(r, v)| parse_status(v, r + 2, status))
                .collect::<Result<_, _>>()?,
        },
    };

    let ds = Dataset::new(columns, kinds, names, outcome).map_err(IoError::Invalid)?;
    log::info!("read {} rows, {} features", ds.n_samples(), ds.n_features());
    for (name, kind) in ds.names().iter().zip(ds.kinds()) {
        log::debug!("  {name}: {kind:?}");
    }
    Ok(ds)
}

/// Writes features followed by the outcome column(s) (`y`, or `time`,`status`).
pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<(), IoError> {
    fs::write(path, export_csv_string(dataset)?).map_err(file_err(path))
}

pub fn export_csv_string(dataset: &Dataset) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = dataset.names().to_vec();
    match dataset.outcome() {
        Outcome::Survival { .. } => header.extend(["time".to_string(), "status".to_string()]),
        _ => header.push("y".to_string()),
    }
    w.write_record(&header)?;
    for row in 0..dataset.n_samples() {
        let mut rec: Vec<String> = dataset.columns().iter().map(|c| c[row].to_string()).collect();
        match dataset.outcome() {
            Outcome::Classification { labels, .. } => rec.push(labels[row].to_string()),
            Outcome::Regression { values } => rec.push(values[row].to_string()),
            Outcome::Survival { time, status } => {
                rec.push(time[row].to_string());
                rec.push(u8::from(status[row]).to_string());
            }
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::File { path: "<memory>".into(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Square matrix with feature names as row and column labels.
pub fn matrix_tsv(names: &[String], m: &SquareMatrix) -> String {
    let mut out = String::from("feature");
    for n in names {
        out.push('\t');
        out.push_str(n);
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(n);
        for v in m.row(i) {
            out.push('\t');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    feature: &'a str,
    impurity: f64,
    air: f64,
    smd: f64,
    mir: f64,
    p_air: f64,
    p_mir: f64,
}

#[derive(Serialize)]
struct ImportanceJson<'a> {
    config: &'a AnalysisConfig,
    mir_null: crate::selection::NullMethod,
    features: Vec<FeatureRow<'a>>,
}

fn feature_rows(res: &AnalysisResult) -> Vec<FeatureRow<'_>> {
    let r = &res.report;
    (0..r.names.len())
        .map(|i| FeatureRow {
            feature: &r.names[i],
            impurity: r.impurity[i],
            air: r.air[i],
            smd: r.smd[i],
            mir: r.mir[i],
            p_air: r.p_air[i],
            p_mir: r.p_mir[i],
        })
        .collect()
}

pub fn importance_json(res: &AnalysisResult, cfg: &AnalysisConfig) -> Result<String, IoError> {
    let doc = ImportanceJson { config: cfg, mir_null: res.selections.mir_null, features: feature_rows(res) };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn importance_tsv(res: &AnalysisResult) -> String {
    let mut out = String::from("feature\timpurity\tair\tsmd\tmir\tp_air\tp_mir\n");
    for row in feature_rows(res) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.feature,
            fmt_f64(row.impurity),
            fmt_f64(row.air),
            fmt_f64(row.smd),
            fmt_f64(row.mir),
            fmt_f64(row.p_air),
            fmt_f64(row.p_mir)
        );
    }
    out
}

#[derive(Serialize)]
struct SelectionsJson<'a> {
    alpha: f64,
    adjust_bh: bool,
    air: Vec<&'a str>,
    mir: Vec<&'a str>,
    mfi_null: crate::selection::NullMethod,
    mir_null: crate::selection::NullMethod,
    related_pairs: &'a [RelatedPair],
}

pub fn selections_json(res: &AnalysisResult, cfg: &AnalysisConfig) -> Result<String, IoError> {
    let names = &res.report.names;
    let pick = |sel: &[usize]| sel.iter().map(|&i| names[i].as_str()).collect();
    let doc = SelectionsJson {
        alpha: cfg.alpha,
        adjust_bh: cfg.adjust_bh,
        air: pick(&res.selections.air.selected),
        mir: pick(&res.selections.mir.selected),
        mfi_null: res.selections.mfi_null,
        mir_null: res.selections.mir_null,
        related_pairs: &res.selections.related_pairs,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

#[derive(Serialize)]
struct RelatedJson<'a> {
    alpha: f64,
    adjust_bh: bool,
    mfi_null: crate::selection::NullMethod,
    related_pairs: &'a [RelatedPair],
}

pub fn related_json(sel: &RelatedSelection, cfg: &AnalysisConfig) -> Result<String, IoError> {
    let doc = RelatedJson {
        alpha: cfg.alpha,
        adjust_bh: cfg.adjust_bh,
        mfi_null: sel.null_method,
        related_pairs: &sel.pairs,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn metrics_json(metrics: &MetricsReport) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(metrics)? + "\n")
}

pub fn raw_tsv(raw: &[RawRecord]) -> String {
    let mut out = String::from("replicate\tfeature\tmethod\tvalue\tp\tselected\n");
    for r in raw {
        let p = r.p.map_or_else(|| "NA".to_string(), fmt_f64);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.replicate,
            r.feature,
            r.method,
            fmt_f64(r.value),
            p,
            u8::from(r.selected)
        );
    }
    out
}

pub fn null_tsv(null: &NullDistribution) -> String {
    let mut out = String::from("value\n");
    for v in null.samples() {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(file_err(path))
}
