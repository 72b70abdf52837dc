//! Word error rate by Levenshtein alignment.

use std::ops::AddAssign;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerCounts {
    pub reference_words: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Percentage; 0 for an empty reference with no insertions, 100 per
    /// inserted word otherwise.
    pub fn wer(&self) -> f64 {
        if self.reference_words == 0 {
            return 100.0 * self.insertions as f64;
        }
        100.0 * self.errors() as f64 / self.reference_words as f64
    }
}

impl AddAssign for WerCounts {
    fn add_assign(&mut self, o: Self) {
        self.reference_words += o.reference_words;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
    }
}

impl std::iter::Sum for WerCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = Self::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

/// Edit counts for any pair, empty reference included. Among alignments of
/// equal edit cost the one with the most matched words wins; remaining ties
/// go to substitutions.
pub fn align_counts<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> WerCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (edits, -hits), compared lexicographically
    let mut d = vec![vec![(0usize, 0isize); m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = (i, 0);
    }
    for j in 0..=m {
        d[0][j] = (j, 0);
    }
    let diag = |d: &Vec<Vec<(usize, isize)>>, i: usize, j: usize| {
        let (e, h) = d[i - 1][j - 1];
        if reference[i - 1].as_ref() == hypothesis[j - 1].as_ref() {
            (e, h - 1)
        } else {
            (e + 1, h)
        }
    };
    for i in 1..=n {
        for j in 1..=m {
            let del = (d[i - 1][j].0 + 1, d[i - 1][j].1);
            let ins = (d[i][j - 1].0 + 1, d[i][j - 1].1);
            d[i][j] = diag(&d, i, j).min(del).min(ins);
        }
    }
    let mut c = WerCounts {
        reference_words: n,
        ..WerCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == diag(&d, i, j) {
            c.substitutions += usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == (d[i - 1][j].0 + 1, d[i - 1][j].1) {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

pub fn score_wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerCounts> {
    if reference.is_empty() {
        return Err(Error::Contract("empty reference".into()));
    }
    Ok(align_counts(reference, hypothesis))
}
