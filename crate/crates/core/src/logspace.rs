//! Log-space arithmetic and deterministic hypothesis ordering.

use std::cmp::Ordering;

use crate::{Error, Result, Token};

/// `log(sum(exp(v)))`, max-shifted. Returns `-inf` iff every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `|sum(exp(v)) - 1|`, the probability-space normalization error.
pub fn normalization_error(logp: &[f64]) -> f64 {
    let total: f64 = logp.iter().map(|v| v.exp()).sum();
    (total - 1.0).abs()
}

/// `weight * logp` with `0 * -inf = 0`, so a zero weight switches a term off
/// entirely. For positive weights `-inf` survives.
#[inline]
pub fn scale_log(weight: f64, logp: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * logp
    }
}

/// Orders `(score, tokens)` pairs best-first: higher score wins, equal scores
/// fall back to the lexicographically smaller token sequence. This is a total
/// order (scores compare with [`f64::total_cmp`]).
pub fn compare_hypotheses(a: (f64, &[Token]), b: (f64, &[Token])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Like [`compare_hypotheses`] with a secondary score consulted before the
/// token tie-break.
pub fn compare_ranked(a: (f64, f64, &[Token]), b: (f64, f64, &[Token])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| b.1.total_cmp(&a.1))
        .then_with(|| a.2.cmp(b.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(ids: &[u32]) -> Vec<Token> {
        ids.iter().copied().map(Token).collect()
    }

    #[test]
    fn logsumexp_closed_forms() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 1.25]).unwrap(), 1.25);
        assert_eq!(
            logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(logsumexp(&[]), Err(Error::EmptyDistribution));
    }

    #[test]
    fn logsumexp_matches_naive_arithmetic() {
        let v = [3.2, -1.7, 0.4];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_order_examples() {
        let (a, b) = (toks(&[2, 5]), toks(&[1, 1]));
        assert_eq!(compare_hypotheses((-1.0, &a), (-2.0, &b)), Ordering::Less);
        let c = toks(&[2, 4]);
        assert_eq!(compare_hypotheses((-1.0, &a), (-1.0, &c)), Ordering::Greater);
        assert_eq!(compare_hypotheses((-1.0, &a), (-1.0, &a)), Ordering::Equal);
    }

    #[test]
    fn scale_log_zero_weight_kills_neg_inf() {
        assert_eq!(scale_log(0.0, f64::NEG_INFINITY), 0.0);
        assert_eq!(scale_log(0.5, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    fn hyp() -> impl Strategy<Value = (f64, Vec<Token>)> {
        (
            prop_oneof![(-4i32..=0).prop_map(|s| s as f64 * 0.5), Just(f64::NEG_INFINITY)],
            proptest::collection::vec((0u32..3).prop_map(Token), 0..4),
        )
    }

    proptest! {
        #[test]
        fn logsumexp_is_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..12),
            c in -50.0f64..50.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = logsumexp(&shifted).unwrap();
            let rhs = logsumexp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn hypothesis_order_is_total(a in hyp(), b in hyp(), c in hyp()) {
            let cmp = |x: &(f64, Vec<Token>), y: &(f64, Vec<Token>)| {
                compare_hypotheses((x.0, &x.1), (y.0, &y.1))
            };
            prop_assert_eq!(cmp(&a, &b), cmp(&b, &a).reverse());
            if cmp(&a, &b) != Ordering::Greater && cmp(&b, &c) != Ordering::Greater {
                prop_assert_ne!(cmp(&a, &c), Ordering::Greater);
            }
            if cmp(&a, &b) == Ordering::Equal {
                prop_assert_eq!(&a.1, &b.1);
            }
        }
    }
}
