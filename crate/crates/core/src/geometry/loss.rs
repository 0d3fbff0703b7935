use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug)]
pub struct RoomPair<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub label: PairLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to `(a, b)` of every pair, in input order.
    pub grads: Vec<(Vec<f64>, Vec<f64>)>,
    /// Pairs dropped because one side had zero norm.
    pub skipped: usize,
}

/// Margin loss on cosine similarity: positives pay `1 - cos`, negatives pay
/// `max(0, cos - margin)`.
pub fn room_matching_loss(pairs: &[RoomPair<'_>], margin: f64) -> Result<LossOutput> {
    if pairs.is_empty() {
        return Err(Error::Empty("room pairs"));
    }
    let mut loss = 0.0;
    let mut skipped = 0;
    let mut grads = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.a.len() != p.b.len() {
            return Err(Error::DimensionMismatch {
                expected: p.a.len(),
                got: p.b.len(),
            });
        }
        let (na, nb) = (math::norm(p.a), math::norm(p.b));
        let mut ga = vec![0.0; p.a.len()];
        let mut gb = vec![0.0; p.b.len()];
        if na == 0.0 || nb == 0.0 {
            skipped += 1;
            grads.push((ga, gb));
            continue;
        }
        let cos = math::dot(p.a, p.b) / (na * nb);
        let d_cos = match p.label {
            PairLabel::Positive => {
                loss += 1.0 - cos;
                -1.0
            }
            PairLabel::Negative if cos > margin => {
                loss += cos - margin;
                1.0
            }
            PairLabel::Negative => 0.0,
        };
        if d_cos != 0.0 {
            // d cos / d a = b / (|a||b|) - cos * a / |a|^2
            let inv = 1.0 / (na * nb);
            for i in 0..ga.len() {
                ga[i] = d_cos * (p.b[i] * inv - cos * p.a[i] / (na * na));
                gb[i] = d_cos * (p.a[i] * inv - cos * p.b[i] / (nb * nb));
            }
        }
        grads.push((ga, gb));
    }
    Ok(LossOutput {
        loss,
        grads,
        skipped,
    })
}
