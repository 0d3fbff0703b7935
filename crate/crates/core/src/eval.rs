//! Accuracy, precision/recall sweep and latency bookkeeping.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::reloc::RelocResult;

/// Fraction of queries whose top-ranked room is the true room.
pub fn accuracy<S: AsRef<str>>(results: &[(RelocResult, S)]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("query results"));
    }
    let hits = results
        .iter()
        .filter(|(r, truth)| r.top() == Some(truth.as_ref()))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// One (room, score) pair from a single query's final scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub room_id: String,
    pub score: f64,
    pub is_match: bool,
}

/// All rooms the query was scored against; rooms that could not be ranked
/// keep a score of negative infinity.
pub fn candidates_from_result(result: &RelocResult, true_room: &str) -> Vec<Candidate> {
    result
        .appearance_scores
        .keys()
        .map(|room| {
            let score = result
                .ranked
                .iter()
                .find(|(r, _)| r == room)
                .map_or(f64::NEG_INFINITY, |(_, s)| *s);
            Candidate {
                room_id: room.clone(),
                score,
                is_match: room == true_room,
            }
        })
        .collect()
}

/// Min-max normalization to [0, 1]. Non-finite entries map to 0; a constant
/// vector maps to all ones.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    scores
        .iter()
        .map(|&s| {
            if !s.is_finite() {
                0.0
            } else if hi == lo {
                1.0
            } else {
                (s - lo) / (hi - lo)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s > 0.0 {
            2.0 * self.precision * self.recall / s
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrSummary {
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub best_f1: f64,
}

/// `n` evenly spaced thresholds over [0, 1], inclusive.
pub fn thresholds(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_THRESHOLDS: usize = 101;

/// Sweeps thresholds over per-query min-max normalized scores. A candidate
/// is predicted when its normalized score is at least the threshold.
/// Precision with no predictions is 1.
pub fn pr_sweep(queries: &[Vec<Candidate>], thresholds: &[f64]) -> Result<PrSummary> {
    if queries.is_empty() || thresholds.is_empty() {
        return Err(Error::Empty("precision/recall input"));
    }
    let scored: Vec<(f64, bool)> = queries
        .iter()
        .flat_map(|q| {
            let raw: Vec<f64> = q.iter().map(|c| c.score).collect();
            min_max_normalize(&raw)
                .into_iter()
                .zip(q.iter().map(|c| c.is_match))
                .collect::<Vec<_>>()
        })
        .collect();
    let positives = scored.iter().filter(|(_, m)| *m).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }

    let points: Vec<PrPoint> = thresholds
        .iter()
        .map(|&rho| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for &(s, m) in &scored {
                if s >= rho {
                    if m {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            PrPoint {
                threshold: rho,
                precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
                recall: tp as f64 / positives as f64,
            }
        })
        .collect();
    let best_f1 = points.iter().map(PrPoint::f1).fold(0.0, f64::max);
    Ok(PrSummary {
        auc: pr_auc(&points),
        best_f1,
        points,
    })
}

/// Trapezoid area under precision as a function of recall. The curve is
/// sorted by recall and anchored at recall 0 with the precision of the
/// lowest-recall point.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut curve: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    if curve[0].0 > 0.0 {
        curve.insert(0, (0.0, curve[0].1));
    }
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Mean wall-clock milliseconds per stage. Geometry is averaged over the
/// queries that ran it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageLatencies {
    pub node_encoding_ms: f64,
    pub appearance_ms: f64,
    pub geometry_ms: f64,
    pub overall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub pr: PrSummary,
    pub latencies: StageLatencies,
    pub queries: usize,
    pub geometry_queries: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn cand(room: &str, score: f64, is_match: bool) -> Candidate {
        Candidate {
            room_id: room.to_string(),
            score,
            is_match,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), [0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[5.0, 5.0]), [1.0, 1.0]);
        assert_eq!(min_max_normalize(&[1.0, f64::NEG_INFINITY, 3.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn perfect_ranking_has_unit_auc() {
        let q = alloc::vec![
            alloc::vec![cand("a", 3.0, true), cand("b", 1.0, false)],
            alloc::vec![cand("a", 0.0, false), cand("b", 2.0, true)],
        ];
        let s = pr_sweep(&q, &thresholds(DEFAULT_THRESHOLDS)).unwrap();
        assert!((s.auc - 1.0).abs() < 1e-12);
        assert!((s.best_f1 - 1.0).abs() < 1e-12);
        assert_eq!(s.points.len(), 101);
    }

    #[test]
    fn threshold_zero_predicts_everything() {
        let q = alloc::vec![alloc::vec![cand("a", 1.0, false), cand("b", 2.0, true), cand("c", 0.0, false)]];
        let s = pr_sweep(&q, &[0.0, 1.0]).unwrap();
        assert_eq!(s.points[0].recall, 1.0);
        assert!((s.points[0].precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.points[1].precision, 1.0);
    }

    #[test]
    fn no_positives_is_an_error() {
        let q = alloc::vec![alloc::vec![cand("a", 1.0, false)]];
        assert_eq!(pr_sweep(&q, &[0.5]), Err(Error::NoPositives));
    }

    #[test]
    fn auc_of_flat_curve() {
        let pts = [
            PrPoint { threshold: 0.0, precision: 0.5, recall: 1.0 },
            PrPoint { threshold: 1.0, precision: 0.5, recall: 0.5 },
        ];
        assert!((pr_auc(&pts) - 0.5).abs() < 1e-12);
    }
}
