//! Input parsers and output writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use meanfield_core::blr_ard::RegressionData;
use meanfield_core::data::Observations;
use meanfield_core::engine::FitReport;
use meanfield_core::lda::Corpus;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Numeric rows of a headerless CSV file with a consistent column count,
/// paired with their 1-based line numbers.
fn read_numeric_rows(path: &Path) -> CliResult<(usize, Vec<(usize, Vec<f64>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut width = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            CliError::data_at(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::data_at(
                path,
                line,
                format!("expected {expected} columns, found {}", record.len()),
            ));
        }
        let mut row = Vec::with_capacity(expected);
        for field in record.iter() {
            let value: f64 = field
                .parse()
                .map_err(|_| CliError::data_at(path, line, format!("`{field}` is not a number")))?;
            if !value.is_finite() {
                return Err(CliError::data_at(path, line, format!("`{field}` is not finite")));
            }
            row.push(value);
        }
        rows.push((line, row));
    }
    match width {
        Some(w) => Ok((w, rows)),
        None => Err(CliError::data(format!("{} contains no rows", path.display()))),
    }
}

/// One observation per row, `d` numeric columns, no header.
pub fn read_observations(path: &Path) -> CliResult<Observations> {
    let (dim, rows) = read_numeric_rows(path)?;
    let values = rows.into_iter().flat_map(|(_, r)| r).collect();
    Ok(Observations::new(dim, values)?)
}

/// Inputs in the leading columns, the response in the last.
pub fn read_regression(path: &Path) -> CliResult<RegressionData> {
    let (width, rows) = read_numeric_rows(path)?;
    if width < 2 {
        return Err(CliError::data_at(
            path,
            rows[0].0,
            "need at least one input column and a response column",
        ));
    }
    let dim = width - 1;
    let mut x = Vec::with_capacity(rows.len() * dim);
    let mut y = Vec::with_capacity(rows.len());
    for (_, row) in rows {
        x.extend_from_slice(&row[..dim]);
        y.push(row[dim]);
    }
    Ok(RegressionData::new(dim, x, y)?)
}

/// UCI bag-of-words: header lines `D`, `V`, `NNZ`, then `docID termID count`
/// triples with 1-based ids.
pub fn read_corpus(path: &Path) -> CliResult<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut header = |name: &str| -> CliResult<usize> {
        let (line, l) = lines
            .next()
            .ok_or_else(|| CliError::data(format!("{}: missing `{name}` header line", path.display())))?;
        l.parse()
            .map_err(|_| CliError::data_at(path, line, format!("expected the `{name}` count, found `{l}`")))
    };
    let d = header("D")?;
    let v = header("V")?;
    let nnz = header("NNZ")?;
    if v == 0 || v > u32::MAX as usize {
        return Err(CliError::data(format!("{}: vocabulary size must be in 1..=2^32-1", path.display())));
    }
    let mut docs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); d];
    let mut seen = 0usize;
    for (line, l) in lines {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CliError::data_at(path, line, "expected `docID termID count`"));
        }
        let parse = |s: &str, what: &str| -> CliResult<u64> {
            s.parse()
                .map_err(|_| CliError::data_at(path, line, format!("{what} `{s}` is not a nonnegative integer")))
        };
        let doc = parse(fields[0], "docID")?;
        let term = parse(fields[1], "termID")?;
        let count = parse(fields[2], "count")?;
        if doc == 0 || doc as usize > d {
            return Err(CliError::data_at(path, line, format!("docID {doc} outside 1..={d}")));
        }
        if term == 0 || term as usize > v {
            return Err(CliError::data_at(path, line, format!("termID {term} outside 1..={v}")));
        }
        if count > u32::MAX as u64 {
            return Err(CliError::data_at(path, line, "count too large"));
        }
        seen += 1;
        if count > 0 {
            docs[doc as usize - 1].push((term as u32 - 1, count as u32));
        }
    }
    if seen != nnz {
        return Err(CliError::data(format!(
            "{}: header declares {nnz} entries but {seen} were found",
            path.display()
        )));
    }
    Ok(Corpus::new(v, docs)?)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> CliResult<()> {
    let nnz: usize = corpus.docs().iter().map(Vec::len).sum();
    let mut out = format!("{}\n{}\n{nnz}\n", corpus.docs().len(), corpus.vocab_size());
    for (d, doc) in corpus.docs().iter().enumerate() {
        for &(w, c) in doc {
            let _ = writeln!(out, "{} {} {c}", d + 1, w + 1);
        }
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

/// Rows of numbers under an optional header, `num`-formatted.
pub fn write_matrix<'a>(
    path: &Path,
    header: Option<&[String]>,
    rows: impl Iterator<Item = (Option<String>, &'a [f64])>,
) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    if let Some(h) = header {
        writer.write_record(h).map_err(|e| CliError::output(path, e))?;
    }
    for (label, row) in rows {
        let fields = label.into_iter().chain(row.iter().map(|x| num(*x)));
        writer.write_record(fields).map_err(|e| CliError::output(path, e))?;
    }
    writer.flush().map_err(|e| CliError::output(path, e))
}

/// `iter,elbo,elapsed_ms,heldout_logpred`; the last column is empty when no
/// held-out set was monitored.
pub fn write_trace<S>(path: &Path, report: &FitReport<S>) -> CliResult<()> {
    let mut out = String::from("iter,elbo,elapsed_ms,heldout_logpred\n");
    for p in &report.elbo_trace {
        let heldout = report.heldout_at(p.iter).map(num).unwrap_or_default();
        let _ = writeln!(out, "{},{},{:.3},{heldout}", p.iter, num(p.elbo), p.elapsed_ms);
    }
    write_text(path, &out)
}
