//! Word error rate from a minimum-edit-distance alignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    pub wer: f64,
}

impl WerCounts {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// One backtraced alignment operation; indices refer into the reference and
/// hypothesis sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { ref_pos: usize, hyp_pos: usize },
    Substitute { ref_pos: usize, hyp_pos: usize },
    Delete { ref_pos: usize },
    Insert { hyp_pos: usize },
}

/// Minimum-edit-distance alignment with unit costs. Ties in the backtrace
/// prefer substitution over deletion over insertion, which keeps counts
/// deterministic.
pub fn wer_align(reference: &[String], hypothesis: &[String]) -> Result<(WerCounts, Vec<AlignOp>)> {
    let m = reference.len();
    if m == 0 {
        return Err(Error::Validation("WER is undefined for an empty reference".into()));
    }
    let h = hypothesis.len();
    let mut dp = vec![vec![0usize; h + 1]; m + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=h {
        dp[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=h {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[i - 1][j - 1] + usize::from(!same);
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::new();
    let (mut i, mut j) = (m, h);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[i - 1][j - 1] + usize::from(!same);
            if dp[i][j] == diag {
                ops.push(if same {
                    AlignOp::Match {
                        ref_pos: i - 1,
                        hyp_pos: j - 1,
                    }
                } else {
                    AlignOp::Substitute {
                        ref_pos: i - 1,
                        hyp_pos: j - 1,
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(AlignOp::Delete { ref_pos: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(AlignOp::Insert { hyp_pos: j - 1 });
        j -= 1;
    }
    ops.reverse();

    let mut s = 0;
    let mut d = 0;
    let mut ins = 0;
    for op in &ops {
        match op {
            AlignOp::Substitute { .. } => s += 1,
            AlignOp::Delete { .. } => d += 1,
            AlignOp::Insert { .. } => ins += 1,
            AlignOp::Match { .. } => {}
        }
    }
    debug_assert_eq!(s + d + ins, dp[m][h]);
    Ok((
        WerCounts {
            substitutions: s,
            deletions: d,
            insertions: ins,
            reference_len: m,
            wer: (s + d + ins) as f64 / m as f64,
        },
        ops,
    ))
}

/// (S, D, I, M, WER) for a reference/hypothesis pair. WER may exceed 1.
pub fn wer(reference: &[String], hypothesis: &[String]) -> Result<WerCounts> {
    wer_align(reference, hypothesis).map(|(counts, _)| counts)
}
