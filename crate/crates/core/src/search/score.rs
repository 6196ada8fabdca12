use crate::bundle::AttentionMatrix;
use crate::triple::{ArgumentPair, TokenSpan};

/// Weight of stepping from `frontier` to `next`: how much `next` attends back to `frontier`.
#[inline]
pub fn step_weight(attention: &AttentionMatrix, frontier: usize, next: usize) -> f64 {
    attention.get(next, frontier)
}

/// Step out of an anchor span into `next`; the best token of the span counts.
pub fn enter_weight(attention: &AttentionMatrix, anchor: TokenSpan, next: usize) -> f64 {
    anchor
        .indices()
        .map(|s| attention.get(next, s))
        .fold(0.0, f64::max)
}

/// Step from `frontier` into an anchor span.
pub fn exit_weight(attention: &AttentionMatrix, frontier: usize, anchor: TokenSpan) -> f64 {
    anchor
        .indices()
        .map(|e| attention.get(e, frontier))
        .fold(0.0, f64::max)
}

/// Every step weight along `path`, from [S] through the path and, when
/// `include_terminal` is set, into [E].
pub fn step_weights(
    path: &[usize],
    attention: &AttentionMatrix,
    anchors: &ArgumentPair,
    include_terminal: bool,
) -> Vec<f64> {
    let mut weights = Vec::with_capacity(path.len() + 1);
    match path {
        [] => {
            let direct = anchors
                .start
                .indices()
                .map(|s| exit_weight(attention, s, anchors.end))
                .fold(0.0, f64::max);
            weights.push(direct);
        }
        [first, rest @ ..] => {
            weights.push(enter_weight(attention, anchors.start, *first));
            let mut frontier = *first;
            for &next in rest {
                weights.push(step_weight(attention, frontier, next));
                frontier = next;
            }
            if include_terminal {
                weights.push(exit_weight(attention, frontier, anchors.end));
            }
        }
    }
    weights
}

/// Geometric mean of the step weights; 0 when any step has zero weight.
pub fn geometric_mean(weights: &[f64]) -> f64 {
    if weights.is_empty() || weights.iter().any(|&w| w <= 0.0) {
        return 0.0;
    }
    let log_sum: f64 = weights.iter().map(|w| w.ln()).sum();
    (log_sum / weights.len() as f64).exp()
}

/// Canonical search score of a path between `anchors`, in `[0, 1]`.
pub fn sequence_score(
    path: &[usize],
    attention: &AttentionMatrix,
    anchors: &ArgumentPair,
    include_terminal: bool,
) -> f64 {
    geometric_mean(&step_weights(path, attention, anchors, include_terminal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_weights() {
        assert!((geometric_mean(&[0.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_step_mean() {
        let got = geometric_mean(&[0.9, 0.4, 0.675]);
        assert!((got - 0.6240).abs() < 1e-4, "{got}");
    }

    #[test]
    fn zero_step_prunes() {
        assert_eq!(geometric_mean(&[0.9, 0.0]), 0.0);
        let m = AttentionMatrix::identity(4);
        let pair = ArgumentPair::new(TokenSpan::single(0), TokenSpan::single(3));
        assert_eq!(sequence_score(&[1], &m, &pair, true), 0.0);
        assert_eq!(sequence_score(&[1, 2], &m, &pair, true), 0.0);
    }

    #[test]
    fn single_step_path_uses_both_orientations() {
        // tokens: S=0, path=1, E=2. enter = A[1][0], exit = A[2][1]
        let m = AttentionMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let pair = ArgumentPair::new(TokenSpan::single(0), TokenSpan::single(2));
        assert_eq!(step_weights(&[1], &m, &pair, true), vec![0.5, 0.5]);
        assert!((sequence_score(&[1], &m, &pair, true) - 0.5).abs() < 1e-12);
        assert_eq!(step_weights(&[1], &m, &pair, false), vec![0.5]);
    }

    #[test]
    fn multi_token_anchor_takes_max() {
        let m = AttentionMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.1, 0.6, 0.3, 0.0],
            vec![0.0, 0.0, 0.2, 0.8],
        ])
        .unwrap();
        assert!((enter_weight(&m, TokenSpan::new(0, 2), 2) - 0.6).abs() < 1e-7);
        assert!((exit_weight(&m, 2, TokenSpan::new(3, 4)) - 0.2).abs() < 1e-7);
    }
}
