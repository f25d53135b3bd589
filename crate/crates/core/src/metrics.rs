//! Evaluation arithmetic: SR, SPL, ΔSR, ROC-AUC and absolute token distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Point;

pub const SUCCESS_RADIUS_M: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavResult {
    pub episode_id: String,
    pub success: bool,
    pub taken_length: f64,
    pub shortest_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationCase {
    pub episode_id: String,
    pub gold_indices: Vec<usize>,
    pub predicted_indices: Vec<usize>,
    /// Length of the instruction the indices refer to; a missing prediction
    /// costs this much.
    pub instruction_length: usize,
}

/// Strictly closer than `radius`.
pub fn success(final_position: Point, goal: Point, radius: f64) -> bool {
    final_position.distance(goal) < radius
}

fn nonempty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        Err(Error::Metric(format!("{what} needs at least one result")))
    } else {
        Ok(())
    }
}

pub fn sr(results: &[NavResult]) -> Result<f64> {
    nonempty(results, "SR")?;
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// Mean of `success · l / max(p, l)`.
pub fn spl(results: &[NavResult]) -> Result<f64> {
    nonempty(results, "SPL")?;
    let total: f64 = results
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            let denom = r.taken_length.max(r.shortest_length);
            if denom > 0.0 {
                r.shortest_length / denom
            } else {
                1.0
            }
        })
        .sum();
    Ok(total / results.len() as f64)
}

/// `SR(correct) − SR(perturbed)` in percentage points.
pub fn delta_sr(correct: &[NavResult], perturbed: &[NavResult]) -> Result<f64> {
    Ok(100.0 * (sr(correct)? - sr(perturbed)?))
}

/// Area under the ROC curve for `(score, is_positive)` pairs via the
/// Mann–Whitney rank sum; tied scores get their average rank, so a tied
/// positive/negative pair counts one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Metric("AUC score is NaN".into()));
    }
    let positives = scores.iter().filter(|(_, p)| *p).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let tied_positives = sorted[i..j].iter().filter(|(_, p)| *p).count();
        positive_rank_sum += mean_rank * tied_positives as f64;
        i = j;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Cost of one localization case. Gold and predicted indices are sorted and
/// matched in order (the optimal matching for points on a line); surplus
/// predictions are dropped at no cost and every gold index left without a
/// prediction costs `instruction_length`.
pub fn case_distance(case: &LocalizationCase) -> Result<f64> {
    let j = case.gold_indices.len();
    if j == 0 {
        return Err(Error::Metric(format!(
            "localization case {} has no gold indices",
            case.episode_id
        )));
    }
    let mut gold = case.gold_indices.clone();
    let mut pred = case.predicted_indices.clone();
    gold.sort_unstable();
    pred.sort_unstable();
    let missing = case.instruction_length as f64;

    // best[g][p]: cheapest cost of the first g golds using the first p predictions.
    let n = pred.len();
    let mut best = vec![vec![0.0; n + 1]; j + 1];
    for g in 1..=j {
        best[g][0] = g as f64 * missing;
        for p in 1..=n {
            let matched = best[g - 1][p - 1] + gold[g - 1].abs_diff(pred[p - 1]) as f64;
            best[g][p] = matched.min(best[g][p - 1]).min(best[g - 1][p] + missing);
        }
    }
    Ok(best[j][n] / j as f64)
}

/// Mean over cases of the per-case mean absolute index gap.
pub fn atd(cases: &[LocalizationCase]) -> Result<f64> {
    nonempty(cases, "ATD")?;
    let total = cases.iter().map(case_distance).sum::<Result<f64>>()?;
    Ok(total / cases.len() as f64)
}
