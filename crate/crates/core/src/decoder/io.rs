//! N-best files and scoring reports.

use std::fmt::Write as _;
use std::path::Path;

use super::search::{Hypothesis, NBestList};
use super::wer::WerCounts;
use crate::error::{Error, Result};

/// Tab-separated `id rank acoustic lm words`, ranks from 1, after a
/// `#digest` line.
pub fn write_nbest(path: &Path, digest: &str, lists: &[(String, NBestList)]) -> Result<()> {
    let mut out = format!("#digest\t{digest}\n");
    for (id, list) in lists {
        for (r, h) in list.hypotheses.iter().enumerate() {
            writeln!(out, "{id}\t{}\t{}\t{}\t{}", r + 1, h.acoustic, h.lm, h.words.join(" ")).unwrap();
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads lists back in file order. Alignments are not stored; scores are
/// rebuilt with `lm_weight`.
pub fn read_nbest(path: &Path, lm_weight: f64) -> Result<Vec<(String, NBestList)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lists: Vec<(String, NBestList)> = Vec::new();
    for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", no + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let rank: usize = f[1].parse().map_err(|_| bad("bad rank"))?;
        let acoustic: f64 = f[2].parse().map_err(|_| bad("bad acoustic score"))?;
        let lm: f64 = f[3].parse().map_err(|_| bad("bad lm score"))?;
        if lists.last().is_none_or(|(id, _)| id != f[0]) {
            lists.push((f[0].to_string(), NBestList::default()));
        }
        let list = &mut lists.last_mut().unwrap().1;
        if rank != list.len() + 1 {
            return Err(bad("ranks out of order"));
        }
        list.hypotheses.push(Hypothesis {
            words: f[4].split_whitespace().map(str::to_string).collect(),
            acoustic,
            lm,
            score: acoustic + lm_weight * lm,
            alignment: Vec::new(),
        });
    }
    Ok(lists)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub utterance: String,
    pub counts: WerCounts,
}

/// Per-utterance rows plus a summary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoringReport {
    pub rows: Vec<ScoreRow>,
}

impl ScoringReport {
    pub fn push(&mut self, utterance: &str, counts: WerCounts) {
        self.rows.push(ScoreRow {
            utterance: utterance.to_string(),
            counts,
        });
    }

    pub fn total(&self) -> WerCounts {
        self.rows.iter().map(|r| r.counts).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utterance,reference_words,substitutions,deletions,insertions,wer\n");
        let line = |out: &mut String, id: &str, c: WerCounts| {
            writeln!(
                out,
                "{id},{},{},{},{},{:.2}",
                c.reference_words, c.substitutions, c.deletions, c.insertions, c.wer()
            )
            .unwrap()
        };
        for r in &self.rows {
            line(&mut out, &r.utterance, r.counts);
        }
        line(&mut out, "all", self.total());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nbest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = |w: &str, a: f64, l: f64| Hypothesis {
            words: w.split_whitespace().map(str::to_string).collect(),
            acoustic: a,
            lm: l,
            score: a + 2.0 * l,
            alignment: Vec::new(),
        };
        let lists = vec![
            ("u1".to_string(), NBestList { hypotheses: vec![h("a b", -10.25, -3.5), h("a", -11.0, -1.0 / 3.0)] }),
            ("u2".to_string(), NBestList { hypotheses: vec![h("", -4.0, -0.1)] }),
        ];
        let p = dir.path().join("x/nbest.tsv");
        write_nbest(&p, "d", &lists).unwrap();
        assert_eq!(read_nbest(&p, 2.0).unwrap(), lists);
        std::fs::write(&p, "u1\t2\t0\t0\ta\n").unwrap();
        assert!(matches!(read_nbest(&p, 1.0), Err(Error::Format { .. })));
    }

    #[test]
    fn report_summary() {
        let mut r = ScoringReport::default();
        r.push("a", WerCounts { reference_words: 3, substitutions: 1, deletions: 0, insertions: 0 });
        r.push("b", WerCounts { reference_words: 0, substitutions: 0, deletions: 0, insertions: 1 });
        let csv = r.to_csv();
        assert!(csv.ends_with("all,3,1,0,1,66.67\n"), "{csv}");
        assert_eq!(csv.lines().count(), 4);
    }
}
