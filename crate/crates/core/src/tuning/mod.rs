//! Informativity-weight selection by coarse-to-fine grid search.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{Method, MethodSpec};
use crate::evaluation::Harness;
use crate::{Error, Result};

pub const DEFAULT_STEPS: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    MaximizeAccuracy,
    MatchPpl { target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub lo: f64,
    pub hi: f64,
    /// Strictly decreasing; each a whole multiple of the last.
    pub steps: Vec<f64>,
    /// Evaluate the whole grid at the finest step instead of refining.
    #[serde(default)]
    pub exhaustive: bool,
}

impl SearchSpec {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, steps: DEFAULT_STEPS.to_vec(), exhaustive: false }
    }

    pub fn for_method(method: Method) -> Result<Self> {
        let (lo, hi) = method
            .lambda_range()
            .ok_or_else(|| Error::InvalidConfig(format!("{method} has no lambda to tune")))?;
        Ok(Self::new(lo, hi))
    }

    pub fn exhaustive(self, exhaustive: bool) -> Self {
        Self { exhaustive, ..self }
    }

    /// Grid points are `index / denom`, which keeps repeated searches on
    /// bit-identical λ values.
    fn grid(&self) -> Result<Grid> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo >= self.hi {
            return Err(Error::InvalidConfig(format!("empty range [{}, {}]", self.lo, self.hi)));
        }
        let finest = *self.steps.last().ok_or_else(|| Error::InvalidConfig("empty step schedule".into()))?;
        if finest.is_nan() || finest <= 0.0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        let denom = (1.0 / finest).round();
        let to_units = |x: f64, what: &str| -> Result<i64> {
            let u = x * denom;
            if (u - u.round()).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!("{what} {x} is not a multiple of {finest}")));
            }
            Ok(u.round() as i64)
        };
        if (denom * finest - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("finest step {finest} must divide 1")));
        }
        let steps = self.steps.iter().map(|&s| to_units(s, "step")).collect::<Result<Vec<_>>>()?;
        for w in steps.windows(2) {
            if w[1] >= w[0] || w[0] % w[1] != 0 {
                return Err(Error::InvalidConfig("steps must strictly decrease, each dividing the previous".into()));
            }
        }
        Ok(Grid { lo: to_units(self.lo, "lo")?, hi: to_units(self.hi, "hi")?, denom, steps })
    }
}

struct Grid {
    lo: i64,
    hi: i64,
    denom: f64,
    steps: Vec<i64>,
}

impl Grid {
    fn lambda(&self, index: i64) -> f64 {
        index as f64 / self.denom
    }

    fn points(&self, from: i64, to: i64, step: i64) -> Vec<i64> {
        let (from, to) = (from.max(self.lo), to.min(self.hi));
        let mut out: Vec<i64> = (0..).map(|k| from + k * step).take_while(|&i| i <= to).collect();
        if out.last() != Some(&to) {
            out.push(to);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub lambda: f64,
    pub value: f64,
    /// Every point evaluated, in increasing λ.
    pub evaluated: Vec<(f64, f64)>,
}

/// Maximizes `objective` over `spec`'s range. The coarse grid is evaluated
/// first; each finer step then covers a window of one previous step on
/// either side of the incumbent, clipped to the range. Ties go to the
/// smaller λ and each λ is evaluated once. Points within a stage are
/// evaluated concurrently.
pub fn coarse_to_fine_search<F>(objective: F, spec: &SearchSpec) -> Result<SearchOutcome>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let grid = spec.grid()?;
    let mut seen: BTreeMap<i64, f64> = BTreeMap::new();
    let evaluate = |seen: &mut BTreeMap<i64, f64>, points: Vec<i64>| -> Result<()> {
        let fresh: Vec<i64> = points.into_iter().filter(|i| !seen.contains_key(i)).collect();
        let values: Vec<Result<f64>> = fresh.par_iter().map(|&i| objective(grid.lambda(i))).collect();
        for (i, v) in fresh.into_iter().zip(values) {
            let v = v?;
            if v.is_nan() {
                return Err(Error::InvalidConfig(format!("objective is NaN at {}", grid.lambda(i))));
            }
            seen.insert(i, v);
        }
        Ok(())
    };
    let best = |seen: &BTreeMap<i64, f64>| {
        // Ascending keys with strict improvement keeps the smallest λ on ties.
        seen.iter().fold(None, |acc: Option<(i64, f64)>, (&i, &v)| match acc {
            Some((_, bv)) if v <= bv => acc,
            _ => Some((i, v)),
        })
    };

    if spec.exhaustive {
        evaluate(&mut seen, grid.points(grid.lo, grid.hi, *grid.steps.last().expect("validated")))?;
    } else {
        evaluate(&mut seen, grid.points(grid.lo, grid.hi, grid.steps[0]))?;
        for w in grid.steps.windows(2) {
            let (prev, step) = (w[0], w[1]);
            let (center, _) = best(&seen).expect("coarse grid is non-empty");
            evaluate(&mut seen, grid.points(center - prev, center + prev, step))?;
        }
    }
    let (index, value) = best(&seen).expect("at least one point evaluated");
    Ok(SearchOutcome {
        lambda: grid.lambda(index),
        value,
        evaluated: seen.into_iter().map(|(i, v)| (grid.lambda(i), v)).collect(),
    })
}

/// Result of tuning one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRecord {
    pub method: Method,
    pub objective: Objective,
    pub schedule: Vec<f64>,
    pub exhaustive: bool,
    /// `(λ, accuracy or |ppl - target|)` for every evaluated point.
    pub evaluated: Vec<(f64, f64)>,
    pub chosen: f64,
    pub accuracy: f64,
    pub mean_perplexity: f64,
}

fn tune(harness: &Harness<'_>, method: Method, spec: &SearchSpec, objective: Objective) -> Result<TuningRecord> {
    let outcome = match objective {
        Objective::MaximizeAccuracy => coarse_to_fine_search(
            |lambda| Ok(harness.evaluate(&MethodSpec::new(method, lambda)?)?.retrieval_accuracy),
            spec,
        )?,
        Objective::MatchPpl { target } => {
            if target.is_nan() || target < 1.0 {
                return Err(Error::InvalidConfig(format!("perplexity target {target} must be >= 1")));
            }
            let out = coarse_to_fine_search(
                |lambda| Ok(-(harness.evaluate(&MethodSpec::new(method, lambda)?)?.mean_perplexity - target).abs()),
                spec,
            )?;
            SearchOutcome {
                evaluated: out.evaluated.into_iter().map(|(l, v)| (l, -v)).collect(),
                value: -out.value,
                ..out
            }
        }
    };
    let report = harness.evaluate(&MethodSpec::new(method, outcome.lambda)?)?;
    Ok(TuningRecord {
        method,
        objective,
        schedule: spec.steps.clone(),
        exhaustive: spec.exhaustive,
        evaluated: outcome.evaluated,
        chosen: outcome.lambda,
        accuracy: report.retrieval_accuracy,
        mean_perplexity: report.mean_perplexity,
    })
}

/// λ maximizing evaluative-listener accuracy on the harness problems.
pub fn select_lambda_informativity(harness: &Harness<'_>, method: Method, spec: &SearchSpec) -> Result<TuningRecord> {
    tune(harness, method, spec, Objective::MaximizeAccuracy)
}

/// λ whose mean perplexity is closest to `target_ppl`.
pub fn select_lambda_ppl_matched(
    harness: &Harness<'_>,
    method: Method,
    spec: &SearchSpec,
    target_ppl: f64,
) -> Result<TuningRecord> {
    tune(harness, method, spec, Objective::MatchPpl { target: target_ppl })
}

/// Mid-perplexity target: the mean of the two aggregate perplexities.
pub fn mid_ppl_target(a: f64, b: f64) -> f64 {
    (a + b) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn search(f: impl Fn(f64) -> f64 + Sync, lo: f64, hi: f64) -> SearchOutcome {
        coarse_to_fine_search(|x| Ok(f(x)), &SearchSpec::new(lo, hi)).unwrap()
    }

    #[test]
    fn quadratic_peak() {
        let out = search(|x| -(x - 0.37).powi(2), 0.0, 1.0);
        assert_eq!(out.lambda, 0.37);
    }

    #[test]
    fn constant_returns_lo_and_monotone_returns_hi() {
        assert_eq!(search(|_| 1.0, 0.0, 1.0).lambda, 0.0);
        assert_eq!(search(|x| x, 0.0, 2.0).lambda, 2.0);
    }

    #[test]
    fn stays_in_range_and_evaluates_each_point_once() {
        let calls = AtomicUsize::new(0);
        let out = coarse_to_fine_search(
            |x| {
                assert!((0.0..=2.0).contains(&x));
                calls.fetch_add(1, Ordering::Relaxed);
                Ok(-(x - 1.999f64).abs())
            },
            &SearchSpec::new(0.0, 2.0),
        )
        .unwrap();
        assert_eq!(out.lambda, 1.999);
        assert_eq!(calls.load(Ordering::Relaxed), out.evaluated.len());
        // 21 coarse + up to 20 + 20 new points.
        assert!(out.evaluated.len() <= 61);
    }

    #[test]
    fn exhaustive_covers_the_fine_grid() {
        let out = coarse_to_fine_search(|x| Ok(x.sin()), &SearchSpec::new(0.0, 1.0).exhaustive(true)).unwrap();
        assert_eq!(out.evaluated.len(), 1001);
        assert_eq!(out.lambda, 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let f = |x: f64| Ok(x);
        assert!(coarse_to_fine_search(f, &SearchSpec::new(1.0, 1.0)).is_err());
        let bad = SearchSpec { steps: vec![0.01, 0.1], ..SearchSpec::new(0.0, 1.0) };
        assert!(coarse_to_fine_search(f, &bad).is_err());
        let bad = SearchSpec { steps: vec![0.1, 0.03], ..SearchSpec::new(0.0, 1.0) };
        assert!(coarse_to_fine_search(f, &bad).is_err());
    }

    #[test]
    fn mid_target() {
        assert!((mid_ppl_target(99.4, 380.2) - 239.8).abs() < 1e-12);
    }
}
