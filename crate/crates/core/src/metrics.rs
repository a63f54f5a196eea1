//! AUC, log loss, normalized entropy and transfer ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::bce_loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub logloss: f64,
    pub ne: f64,
    pub n_samples: usize,
    pub base_rate: f64,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    Ok(())
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean clamped BCE in nats.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, f64::from(y)))
        .sum::<f64>()
        / scores.len() as f64)
}

pub fn normalized_entropy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let base = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64;
    if base <= 0.0 || base >= 1.0 {
        return Err(Error::UndefinedMetric(format!("base rate {base}")));
    }
    // Same summation as the numerator, so the base-rate predictor scores exactly 1.
    let h = logloss(&vec![base; labels.len()], labels)?;
    Ok(logloss(scores, labels)? / h)
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<EvalResult> {
    check_lengths(scores, labels)?;
    Ok(EvalResult {
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        ne: normalized_entropy(scores, labels)?,
        n_samples: scores.len(),
        base_rate: labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64,
    })
}

/// `(ne_vm_old - ne_vm_new) / (ne_fm_old - ne_fm_new)`.
pub fn transfer_ratio(ne_vm_old: f64, ne_vm_new: f64, ne_fm_old: f64, ne_fm_new: f64) -> Result<f64> {
    let denom = ne_fm_old - ne_fm_new;
    if denom == 0.0 {
        return Err(Error::Domain("teacher NE did not change".into()));
    }
    Ok((ne_vm_old - ne_vm_new) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.3, 0.4], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ne_examples() {
        let labels = [1, 0, 0, 1, 1];
        let ne = normalized_entropy(&[0.6; 5], &labels).unwrap();
        assert_eq!(ne, 1.0);
        // (-ln 0.8 - ln 0.6) / 2 / ln 2
        let ne = normalized_entropy(&[0.8, 0.4], &[1, 0]).unwrap();
        assert!((ne - 0.529_446_8).abs() < 1e-6, "{ne}");
        let ne = normalized_entropy(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(ne < 1e-6);
        assert!(normalized_entropy(&[0.5, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn transfer_ratio_examples() {
        assert_eq!(transfer_ratio(0.9, 0.8, 0.7, 0.6).unwrap(), 1.0);
        assert_eq!(transfer_ratio(0.9, 0.9, 0.7, 0.6).unwrap(), 0.0);
        assert!(transfer_ratio(0.9, 0.95, 0.7, 0.6).unwrap() < 0.0);
        assert!(transfer_ratio(0.9, 0.8, 0.7, 0.7).is_err());
    }
}
