use serde::Serialize;

use crate::error::Result;

/// Median of the finite values; `None` when there are none. Even counts
/// average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub network: String,
    pub params: u64,
    pub flops: u64,
    /// Test error per seed, `None` for aborted runs.
    pub per_seed: Vec<Option<f64>>,
}

impl TableRow {
    pub fn median_error(&self) -> Option<f64> {
        median(&self.per_seed.iter().flatten().copied().collect::<Vec<_>>())
    }
}

/// Results grid: one row per method or candidate, one error column per seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub seeds: Vec<u64>,
    pub rows: Vec<TableRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "aborted".to_string(), |e| format!("{:.2}", 100.0 * e))
}

impl Table {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> =
            ["method", "network", "test_err_median", "params", "flops"].iter().map(|s| s.to_string()).collect();
        h.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        h
    }

    /// Sorts rows by median error, aborted rows last.
    pub fn sort_by_error(&mut self) {
        self.rows.sort_by(|a, b| match (a.median_error(), b.median_error()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
    }

    /// Errors in percent.
    pub fn markdown(&self) -> String {
        let mut header = self.header();
        header[2] = "test error % (median)".into();
        let mut out = format!("| {} |\n", header.join(" | "));
        out += &format!("|{}\n", "---|".repeat(header.len()));
        for r in &self.rows {
            let mut cells = vec![r.label.clone(), r.network.clone(), pct(r.median_error()), r.params.to_string(), r.flops.to_string()];
            cells.extend(r.per_seed.iter().map(|e| pct(*e)));
            out += &format!("| {} |\n", cells.join(" | "));
        }
        out
    }

    /// Errors as fractions; aborted cells are empty.
    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        let f = |v: Option<f64>| v.map_or_else(String::new, |e| e.to_string());
        for r in &self.rows {
            let mut cells = vec![r.label.clone(), r.network.clone(), f(r.median_error()), r.params.to_string(), r.flops.to_string()];
            cells.extend(r.per_seed.iter().map(|e| f(*e)));
            w.write_record(cells)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
