//! Stage-by-stage WER table kept as CSV.

use std::path::Path;

use crate::decoder::WerCounts;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub stage: String,
    pub split: String,
    pub counts: WerCounts,
    pub utterances: usize,
    /// Logical write counter, so identical runs give identical files.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str =
    "stage,split,wer,substitutions,deletions,insertions,reference_words,utterances,timestamp";

impl MetricsReport {
    /// Missing files read as an empty report.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text).map_err(|m| Error::format(path, m)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Parses and checks that every WER matches its counts.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err("unexpected header".into());
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(format!("row {}: expected 9 fields", n + 1));
            }
            let num = |i: usize| f[i].parse::<usize>().map_err(|_| format!("row {}: bad number `{}`", n + 1, f[i]));
            let counts = WerCounts {
                substitutions: num(3)?,
                deletions: num(4)?,
                insertions: num(5)?,
                reference_words: num(6)?,
            };
            let wer: f64 = f[2].parse().map_err(|_| format!("row {}: bad WER", n + 1))?;
            if (wer - counts.wer()).abs() > 0.01 {
                return Err(format!(
                    "row {}: WER {wer} disagrees with counts ({:.2})",
                    n + 1,
                    counts.wer()
                ));
            }
            rows.push(MetricsRow {
                stage: f[0].to_string(),
                split: f[1].to_string(),
                counts,
                utterances: num(7)?,
                timestamp: f[8].parse().map_err(|_| format!("row {}: bad timestamp", n + 1))?,
            });
        }
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            let c = r.counts;
            out.push_str(&format!(
                "{},{},{:.2},{},{},{},{},{},{}\n",
                r.stage,
                r.split,
                c.wer(),
                c.substitutions,
                c.deletions,
                c.insertions,
                c.reference_words,
                r.utterances,
                r.timestamp
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Inserts or replaces the (stage, split) row.
    pub fn upsert(&mut self, stage: &str, split: &str, counts: WerCounts, utterances: usize) {
        let timestamp = self.rows.iter().map(|r| r.timestamp).max().map_or(1, |t| t + 1);
        let row = MetricsRow {
            stage: stage.to_string(),
            split: split.to_string(),
            counts,
            utterances,
            timestamp,
        };
        match self.rows.iter_mut().find(|r| r.stage == stage && r.split == split) {
            Some(r) => *r = row,
            None => self.rows.push(row),
        }
    }

    pub fn get(&self, stage: &str, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.stage == stage && r.split == split)
    }
}

/// Stages in pipeline order; used to sort the comparison table.
pub const STAGE_ORDER: [&str; 6] = ["ce", "nsdl", "ce+biapc", "nsdl+biapc", "ssl", "ssl+rescored"];

fn stage_rank(stage: &str) -> (usize, String) {
    if let Some(i) = STAGE_ORDER.iter().position(|s| *s == stage) {
        return (2 * i, String::new());
    }
    if let Some(k) = stage.strip_prefix("ssl-iter") {
        return (2 * 4 - 1, format!("{k:>8}"));
    }
    (2 * STAGE_ORDER.len(), stage.to_string())
}

/// Final-model rows (per-epoch rows dropped) from several reports, ordered
/// by pipeline stage then split. Expected stages that are absent are
/// logged and left out.
pub fn consolidate(reports: &[MetricsReport]) -> MetricsReport {
    let mut rows: Vec<MetricsRow> = Vec::new();
    for r in reports.iter().flat_map(|r| &r.rows) {
        if r.stage.contains('@') {
            continue;
        }
        match rows.iter_mut().find(|x| x.stage == r.stage && x.split == r.split) {
            Some(x) => *x = r.clone(),
            None => rows.push(r.clone()),
        }
    }
    for s in ["ce", "nsdl", "nsdl+biapc", "ssl"] {
        if !rows.iter().any(|r| r.stage == s) {
            log::warn!("stage `{s}` has no metrics; omitted from the table");
        }
    }
    rows.sort_by_key(|r| (stage_rank(&r.stage), r.split.clone()));
    MetricsReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(s: usize, d: usize, i: usize, n: usize) -> WerCounts {
        WerCounts {
            reference_words: n,
            substitutions: s,
            deletions: d,
            insertions: i,
        }
    }

    #[test]
    fn csv_round_trip_and_upsert() {
        let mut r = MetricsReport::default();
        r.upsert("ce", "dev", counts(1, 2, 3, 60), 10);
        r.upsert("nsdl", "dev", counts(1, 1, 1, 60), 10);
        r.upsert("ce", "dev", counts(0, 2, 3, 60), 10);
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.get("ce", "dev").unwrap().timestamp, 3);
        let back = MetricsReport::parse(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        let bad = r.to_csv().replace("8.33", "9.99");
        assert!(MetricsReport::parse(&bad).unwrap_err().contains("disagrees"));
    }

    #[test]
    fn consolidation_orders_stages() {
        let mut r = MetricsReport::default();
        for s in ["ssl", "ssl-iter2", "nsdl@0", "ce", "ssl-iter1", "nsdl+biapc", "ssl+rescored", "nsdl"] {
            r.upsert(s, "dev", counts(1, 0, 0, 10), 2);
        }
        let c = consolidate(&[r]);
        let order: Vec<&str> = c.rows.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(order, ["ce", "nsdl", "nsdl+biapc", "ssl-iter1", "ssl-iter2", "ssl", "ssl+rescored"]);
    }
}
