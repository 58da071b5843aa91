use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// One scored multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoicePair {
    pub pred: BTreeSet<char>,
    pub gt: BTreeSet<char>,
    pub n_options: usize,
}

/// Exact-set accuracy and micro-F1 over pooled per-option decisions.
///
/// Micro-F1 = `2 TP / (2 TP + FP + FN)`, defined as 1.0 when all three
/// counts are zero.
pub fn score_multichoice(pairs: &[ChoicePair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::contract("score_multichoice over an empty list"));
    }
    let (mut exact, mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for p in pairs {
        if p.pred == p.gt {
            exact += 1;
        }
        tp += p.pred.intersection(&p.gt).count();
        fp += p.pred.difference(&p.gt).count();
        fneg += p.gt.difference(&p.pred).count();
    }
    let acc = exact as f64 / pairs.len() as f64;
    let denom = 2 * tp + fp + fneg;
    let f1 = if denom == 0 { 1.0 } else { (2 * tp) as f64 / denom as f64 };
    Ok((acc, f1))
}

/// Exact-match accuracy and mean absolute error of integer counts.
pub fn score_counting(pairs: &[(u32, u32)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::contract("score_counting over an empty list"));
    }
    let n = pairs.len() as f64;
    let exact = pairs.iter().filter(|(p, g)| p == g).count();
    let abs_sum: u64 = pairs.iter().map(|&(p, g)| (p as i64 - g as i64).unsigned_abs()).sum();
    Ok((exact as f64 / n, abs_sum as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: &str, gt: &str) -> ChoicePair {
        ChoicePair {
            pred: pred.chars().collect(),
            gt: gt.chars().collect(),
            n_options: 4,
        }
    }

    #[test]
    fn multichoice_examples() {
        assert_eq!(score_multichoice(&[pair("AC", "AC")]).unwrap(), (1.0, 1.0));
        let (acc, f1) = score_multichoice(&[pair("A", "AC")]).unwrap();
        assert_eq!(acc, 0.0);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(score_multichoice(&[pair("", "A")]).unwrap(), (0.0, 0.0));
        assert_eq!(score_multichoice(&[pair("", "")]).unwrap(), (1.0, 1.0));
        assert!(score_multichoice(&[]).unwrap_err().is_contract());
    }

    #[test]
    fn counting_examples() {
        assert_eq!(score_counting(&[(3, 3), (0, 0)]).unwrap(), (1.0, 0.0));
        assert_eq!(score_counting(&[(3, 4), (5, 5)]).unwrap(), (0.5, 0.5));
        assert_eq!(score_counting(&[(0, 7)]).unwrap(), (0.0, 7.0));
        assert!(score_counting(&[]).unwrap_err().is_contract());
    }
}
