use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::sweep::{SweepRow, BASE_METHOD};
use crate::error::{Error, Result};

/// Column order of every report.
pub const HEADER: [&str; 16] = [
    "method",
    "sparsity",
    "calibration",
    "cross_entropy",
    "perplexity",
    "js_divergence",
    "em",
    "f1",
    "rouge1",
    "rel_perplexity",
    "rel_em",
    "rel_f1",
    "rel_rouge1",
    "judge_accuracy",
    "judge_completeness",
    "judge_relevance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    /// Per-method series for line plots.
    Plot,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plot" => Ok(Self::Plot),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

enum Cell<'a> {
    Text(&'a str),
    Num(Option<f64>),
}

fn cells(r: &SweepRow) -> [Cell<'_>; 16] {
    use Cell::{Num, Text};
    [
        Text(&r.method),
        Num(Some(r.sparsity)),
        Text(&r.calibration),
        Num(Some(r.cross_entropy)),
        Num(Some(r.perplexity)),
        Num(Some(r.js_divergence)),
        Num(r.em),
        Num(r.f1),
        Num(r.rouge1),
        Num(Some(r.rel_perplexity)),
        Num(r.rel_em),
        Num(r.rel_f1),
        Num(r.rel_rouge1),
        Num(r.judge_accuracy),
        Num(r.judge_completeness),
        Num(r.judge_relevance),
    ]
}

/// Six decimals; `None` and non-finite values become empty.
fn fmt_num(v: Option<f64>) -> Option<String> {
    v.filter(|x| x.is_finite()).map(|x| {
        let s = format!("{x:.6}");
        // avoid "-0.000000"
        if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    })
}

pub fn csv_string(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        let rec: Vec<String> = cells(r)
            .into_iter()
            .map(|c| match c {
                Cell::Text(t) => t.to_string(),
                Cell::Num(v) => fmt_num(v).unwrap_or_default(),
            })
            .collect();
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn json_string(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut out = String::from("[\n");
    for (i, r) in rows.iter().enumerate() {
        let fields: Vec<String> = HEADER
            .iter()
            .zip(cells(r))
            .map(|(k, c)| {
                let v = match c {
                    Cell::Text(t) => Value::String(t.to_string()).to_string(),
                    Cell::Num(v) => fmt_num(v).unwrap_or_else(|| "null".into()),
                };
                format!("\"{k}\": {v}")
            })
            .collect();
        out.push_str("  {");
        out.push_str(&fields.join(", "));
        out.push('}');
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    Ok(out)
}

fn round6(v: Option<f64>) -> Value {
    fmt_num(v)
        .and_then(|s| s.parse::<f64>().ok())
        .map(Value::from)
        .unwrap_or(Value::Null)
}

/// Groups rows per method; each series is sorted by sparsity and starts at
/// the base row (sparsity 0) when one is present.
pub fn plot_data(rows: &[SweepRow]) -> Result<Value> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let base = rows.iter().find(|r| r.method == BASE_METHOD);
    let mut groups: BTreeMap<(&str, &str), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method != BASE_METHOD) {
        groups.entry((&r.method, &r.calibration)).or_default().push(r);
    }
    let mut series = Vec::new();
    for ((method, calibration), mut pts) in groups {
        if let Some(b) = base {
            if !pts.iter().any(|p| p.sparsity == 0.0) {
                pts.push(b);
            }
        }
        pts.sort_by(|a, b| a.sparsity.total_cmp(&b.sparsity));
        let col = |f: &dyn Fn(&SweepRow) -> Option<f64>| Value::Array(pts.iter().map(|p| round6(f(p))).collect());
        series.push(json!({
            "method": method,
            "calibration": calibration,
            "sparsity": col(&|r| Some(r.sparsity)),
            "cross_entropy": col(&|r| Some(r.cross_entropy)),
            "perplexity": col(&|r| Some(r.perplexity)),
            "js_divergence": col(&|r| Some(r.js_divergence)),
            "em": col(&|r| r.em),
            "f1": col(&|r| r.f1),
            "rouge1": col(&|r| r.rouge1),
            "judge_accuracy": col(&|r| r.judge_accuracy),
            "judge_completeness": col(&|r| r.judge_completeness),
            "judge_relevance": col(&|r| r.judge_relevance),
        }));
    }
    Ok(json!({ "x": "sparsity", "series": series }))
}

/// Writes `rows` to `path` in `format`, creating parent directories.
pub fn emit_report(rows: &[SweepRow], format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => csv_string(rows)?,
        ReportFormat::Json => json_string(rows)?,
        ReportFormat::Plot => {
            let mut s = serde_json::to_string_pretty(&plot_data(rows)?).expect("serializable");
            s.push('\n');
            s
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_opt(path: &Path, line: usize, col: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("column {col}: {e}"),
    })
}

/// Reads a CSV report written by [`emit_report`].
pub fn read_csv_report(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(perr(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let num = |k: usize| parse_opt(path, line, HEADER[k], &rec[k]);
        let req = |k: usize| num(k)?.ok_or_else(|| perr(line, format!("column {} is empty", HEADER[k])));
        rows.push(SweepRow {
            method: rec[0].to_string(),
            sparsity: req(1)?,
            calibration: rec[2].to_string(),
            cross_entropy: req(3)?,
            perplexity: req(4)?,
            js_divergence: req(5)?,
            em: num(6)?,
            f1: num(7)?,
            rouge1: num(8)?,
            rel_perplexity: num(9)?.unwrap_or(f64::NAN),
            rel_em: num(10)?,
            rel_f1: num(11)?,
            rel_rouge1: num(12)?,
            judge_accuracy: num(13)?,
            judge_completeness: num(14)?,
            judge_relevance: num(15)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, s: f64, judge: bool) -> SweepRow {
        SweepRow {
            method: method.into(),
            sparsity: s,
            calibration: "calib, v1".into(),
            cross_entropy: 1.0 + s,
            perplexity: (1.0 + s).exp(),
            js_divergence: s / 10.0,
            em: Some(0.5),
            f1: Some(0.123_456_789),
            rouge1: None,
            rel_perplexity: 12.345_678_9,
            rel_em: Some(-3.0),
            rel_f1: None,
            rel_rouge1: None,
            judge_accuracy: judge.then_some(7.25),
            judge_completeness: judge.then_some(8.0),
            judge_relevance: judge.then_some(9.0),
        }
    }

    #[test]
    fn one_row_is_two_lines_with_empty_cells() {
        let csv = csv_string(&[row("wanda", 0.5, false)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], HEADER.join(","));
        assert!(lines[1].starts_with("wanda,0.500000,\"calib, v1\",1.500000,"));
        assert!(lines[1].ends_with(",,,"), "{}", lines[1]);
        assert!(!lines[1].contains(",0.000000,,"));
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(csv_string(&[]), Err(Error::EmptyRows)));
        assert!(matches!(json_string(&[]), Err(Error::EmptyRows)));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&[], ReportFormat::Csv, &dir.path().join("r.csv")),
            Err(Error::EmptyRows)
        ));
    }

    #[test]
    fn csv_json_round_trip() {
        let rows = vec![row("base", 0.0, true), row("wanda", 0.5, false)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_report(&rows, ReportFormat::Csv, &p).unwrap();
        let back = read_csv_report(&p).unwrap();
        let json: Value = serde_json::from_str(&json_string(&back).unwrap()).unwrap();
        let arr = json.as_array().unwrap();
        assert_eq!(arr.len(), 2);
        for (orig, obj) in rows.iter().zip(arr) {
            let keys: Vec<&str> = obj.as_object().unwrap().keys().map(String::as_str).collect();
            let mut want: Vec<&str> = HEADER.to_vec();
            want.sort_unstable();
            assert_eq!(keys, want);
            for (k, c) in HEADER.iter().zip(cells(orig)) {
                match c {
                    Cell::Text(t) => assert_eq!(obj[*k], Value::String(t.into())),
                    Cell::Num(None) => assert!(obj[*k].is_null(), "{k}"),
                    Cell::Num(Some(v)) => assert!((obj[*k].as_f64().unwrap() - v).abs() < 1e-6, "{k}"),
                }
            }
        }
    }

    #[test]
    fn plot_data_groups_by_method() {
        let rows = vec![row("base", 0.0, false), row("wanda", 0.2, false), row("wanda", 0.1, false), row("magnitude", 0.1, false)];
        let v = plot_data(&rows).unwrap();
        let series = v["series"].as_array().unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0]["method"], "magnitude");
        assert_eq!(series[1]["sparsity"], json!([0.0, 0.1, 0.2]));
        assert_eq!(series[1]["rouge1"], json!([null, null, null]));
    }
}
