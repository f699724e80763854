//! Hill-climb control loop over measurement segments.
//!
//! Each step measures the current knob vector and every neighbor, then moves
//! to the best neighbor iff it improves the score by at least `delta`, or —
//! the escape branch — the current p99 violates the SLO and any neighbor
//! improves the score at all. Failed segments score negative infinity and
//! never become the best-so-far; the run continues past them. After the
//! step budget the best configuration is re-measured once for the final
//! report.

use serde::{Deserialize, Serialize};

use crate::backend::MeasurementBackend;
use crate::error::{Error, Result};
use crate::knobs::{neighbors, KnobSpace, KnobVector};
use crate::metrics::SegmentMetrics;
use crate::scoring::{score, score_json, ScoreMode, ScoreWeights};

/// Controller parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunerOptions {
    pub budget: u32,
    pub slo_s: f64,
    pub delta: f64,
    pub weights: ScoreWeights,
    /// When true, only the current point may become best-so-far, exactly as
    /// in the plain loop; when false (default), a measured neighbor that
    /// achieves the run's maximum score is also eligible.
    pub strict_alg1: bool,
}

impl Default for TunerOptions {
    fn default() -> Self {
        TunerOptions {
            budget: 8,
            slo_s: 1.2,
            delta: 0.02,
            weights: ScoreWeights::default(),
            strict_alg1: false,
        }
    }
}

/// One measured candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborResult {
    pub knobs: KnobVector,
    pub metrics: SegmentMetrics,
    #[serde(with = "score_json")]
    pub score: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One controller step: the re-measured current point, all neighbor
/// measurements in enumeration order, and the move taken (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningStep {
    pub index: u32,
    pub current: KnobVector,
    pub current_metrics: SegmentMetrics,
    #[serde(with = "score_json")]
    pub current_score: f64,
    pub current_failed: bool,
    pub neighbor_results: Vec<NeighborResult>,
    pub moved_to: Option<KnobVector>,
}

/// A full tuning run plus the final re-measurement of the best point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTrajectory {
    pub steps: Vec<TuningStep>,
    pub best: KnobVector,
    #[serde(with = "score_json")]
    pub best_score: f64,
    pub final_metrics: SegmentMetrics,
    #[serde(with = "score_json")]
    pub final_score: f64,
}

impl TuningTrajectory {
    /// Nothing in the run produced a scorable segment.
    pub fn nothing_measurable(&self) -> bool {
        !self.best_score.is_finite()
    }
}

/// The move rule: improvement of at least `delta`, or any strict
/// improvement while the current p99 violates the SLO.
pub fn decide_move(
    current_score: f64,
    current_p99: f64,
    best_neighbor_score: f64,
    slo: f64,
    delta: f64,
) -> bool {
    best_neighbor_score - current_score >= delta
        || (current_p99 > slo && best_neighbor_score > current_score)
}

fn measure_scored(
    backend: &mut dyn MeasurementBackend,
    mode: ScoreMode,
    k: &KnobVector,
    opts: &TunerOptions,
) -> (SegmentMetrics, f64, bool, Option<String>) {
    match backend.measure(k) {
        Ok(m) => {
            let s = score(mode, &m.metrics, k, opts.slo_s, &opts.weights);
            (m.metrics, s, false, None)
        }
        Err(e) => (
            SegmentMetrics::invalid(0, 0.0),
            f64::NEG_INFINITY,
            true,
            Some(e.to_string()),
        ),
    }
}

/// Run the control loop for `opts.budget` steps from `k0`.
///
/// Segment count is bounded by `budget * (1 + max neighbors) + 1`; ties
/// among neighbors resolve to the first maximum in enumeration order, so a
/// deterministic backend yields a fully reproducible trajectory.
pub fn run_tuning(
    backend: &mut dyn MeasurementBackend,
    space: &KnobSpace,
    k0: KnobVector,
    opts: &TunerOptions,
) -> Result<TuningTrajectory> {
    if opts.budget < 1 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    if opts.delta < 0.0 {
        return Err(Error::InvalidArgument("delta must be >= 0".into()));
    }
    space.validate(&k0)?;
    for d in &space.dims {
        let v = k0.get(&d.name).expect("validated");
        if v < d.min || v > d.max {
            return Err(Error::OutOfBounds {
                dim: d.name.clone(),
                value: v,
                min: d.min,
                max: d.max,
            });
        }
    }

    let mode = backend.score_mode();
    let mut current = k0.clone();
    let mut best = k0;
    let mut best_score = f64::NEG_INFINITY;
    let mut steps: Vec<TuningStep> = Vec::with_capacity(opts.budget as usize);

    for index in 1..=opts.budget {
        let measured_at = current.clone();
        let (current_metrics, current_score, current_failed, _) =
            measure_scored(backend, mode, &current, opts);
        if current_score > best_score {
            best_score = current_score;
            best = current.clone();
        }

        let mut neighbor_results: Vec<NeighborResult> = Vec::new();
        for cand in neighbors(space, &current)? {
            let (metrics, cand_score, failed, error) =
                measure_scored(backend, mode, &cand, opts);
            if !opts.strict_alg1 && cand_score > best_score {
                best_score = cand_score;
                best = cand.clone();
            }
            neighbor_results.push(NeighborResult {
                knobs: cand,
                metrics,
                score: cand_score,
                failed,
                error,
            });
        }

        let best_neighbor = neighbor_results
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
                Some((_, s)) if r.score <= s => acc,
                _ if r.score.is_nan() => acc,
                _ => Some((i, r.score)),
            });

        let moved_to = best_neighbor.and_then(|(i, s)| {
            decide_move(
                current_score,
                current_metrics.control_p99(),
                s,
                opts.slo_s,
                opts.delta,
            )
            .then(|| neighbor_results[i].knobs.clone())
        });

        if let Some(next) = &moved_to {
            current = next.clone();
        }
        steps.push(TuningStep {
            index,
            current: measured_at,
            current_metrics,
            current_score,
            current_failed,
            neighbor_results,
            moved_to,
        });
    }

    let (final_metrics, final_score, _, _) = measure_scored(backend, mode, &best, opts);
    Ok(TuningTrajectory {
        steps,
        best,
        best_score,
        final_metrics,
        final_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FnBackend, Measurement};
    use crate::knobs::{live_space, live_start, DIM_CONC, DIM_MAX_SEQS, DIM_SPEC_TOKENS};

    fn zero_cost_opts(budget: u32, delta: f64) -> TunerOptions {
        TunerOptions {
            budget,
            slo_s: 1.2,
            delta,
            weights: ScoreWeights {
                w_conc: 0.0,
                w_max: 0.0,
                w_spec: 0.0,
                ..ScoreWeights::default()
            },
            strict_alg1: false,
        }
    }

    /// Backend whose goodput is a concave function of concurrency alone.
    fn concave_backend() -> FnBackend {
        FnBackend::new(ScoreMode::Live, |k| {
            let conc = k.get(DIM_CONC).unwrap() as f64;
            Ok(Measurement::synthetic(20.0 - 0.25 * (conc - 10.0).powi(2), 0.5))
        })
    }

    #[test]
    fn converges_on_concave_surface() {
        let mut backend = concave_backend();
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(8, 0.02),
        )
        .unwrap();
        assert_eq!(t.best.get(DIM_CONC), Some(10));
        assert!((t.best_score - 20.0).abs() < 1e-12);
        assert_eq!(t.steps.len(), 8);
    }

    #[test]
    fn infinite_delta_without_violation_never_moves() {
        let mut backend = concave_backend();
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(4, f64::INFINITY),
        )
        .unwrap();
        assert!(t.steps.iter().all(|s| s.moved_to.is_none()));
    }

    #[test]
    fn violation_escape_moves_below_delta() {
        // p99 above SLO everywhere; improvements are far below delta
        let mut backend = FnBackend::new(ScoreMode::Live, |k| {
            let conc = k.get(DIM_CONC).unwrap() as f64;
            Ok(Measurement::synthetic(1.0 + 0.001 * conc, 1.3))
        });
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(1, 10.0),
        )
        .unwrap();
        let step = &t.steps[0];
        assert_eq!(
            step.moved_to.as_ref().and_then(|k| k.get(DIM_CONC)),
            Some(10),
            "escape branch must take the improving neighbor"
        );
    }

    #[test]
    fn decide_move_rule() {
        assert!(decide_move(5.0, 1.0, 5.03, 1.2, 0.02));
        assert!(!decide_move(5.0, 1.0, 5.01, 1.2, 0.02));
        assert!(decide_move(5.0, 1.3, 5.001, 1.2, 0.02));
        assert!(!decide_move(5.0, 1.3, 5.0, 1.2, 0.02));
        // non-finite scores
        assert!(decide_move(f64::NEG_INFINITY, f64::INFINITY, 1.0, 1.2, 0.02));
        assert!(!decide_move(
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            1.2,
            0.02
        ));
    }

    #[test]
    fn ties_resolve_to_first_neighbor_in_order() {
        // value 20 at conc 6 and 10, 19 at 8: both improving, equal
        let mut backend = FnBackend::new(ScoreMode::Live, |k| {
            let conc = k.get(DIM_CONC).unwrap();
            let g = if conc == 8 { 19.0 } else { 20.0 };
            Ok(Measurement::synthetic(g, 0.5))
        });
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(1, 0.02),
        )
        .unwrap();
        assert_eq!(
            t.steps[0].moved_to.as_ref().and_then(|k| k.get(DIM_CONC)),
            Some(6),
            "minus step precedes plus step in enumeration order"
        );
    }

    #[test]
    fn failed_segments_are_flagged_and_skipped_for_best() {
        let mut backend = FnBackend::new(ScoreMode::Live, |k| {
            if k.get(DIM_MAX_SEQS) == Some(11) {
                return Err(Error::SegmentFailed("injected".into()));
            }
            Ok(Measurement::synthetic(5.0, 0.5))
        });
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(2, 0.02),
        )
        .unwrap();
        let failed: Vec<&NeighborResult> = t
            .steps
            .iter()
            .flat_map(|s| &s.neighbor_results)
            .filter(|r| r.failed)
            .collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.score == f64::NEG_INFINITY));
        assert_ne!(t.best.get(DIM_MAX_SEQS), Some(11));
        assert!(t.best_score.is_finite());
    }

    #[test]
    fn budget_bounds_segment_count() {
        let mut backend = concave_backend();
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(8, 0.02),
        )
        .unwrap();
        assert!(backend.calls() <= 8 * (1 + 7) + 1);
        assert_eq!(t.steps.len(), 8);
    }

    #[test]
    fn best_so_far_is_non_decreasing() {
        let mut backend = FnBackend::new(ScoreMode::Live, |k| {
            // deterministic pseudo-random surface
            let h = k
                .values
                .values()
                .fold(0u64, |a, v| a.wrapping_mul(31).wrapping_add(*v as u64));
            Ok(Measurement::synthetic((h % 97) as f64 / 10.0, 0.8))
        });
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(6, 0.02),
        )
        .unwrap();
        let mut running = f64::NEG_INFINITY;
        for s in &t.steps {
            running = running.max(s.current_score);
            for r in &s.neighbor_results {
                running = running.max(r.score);
            }
        }
        assert_eq!(running, t.best_score);
    }

    #[test]
    fn strict_alg1_ignores_unvisited_neighbors_for_best() {
        // neighbor scores higher than anything visited, but delta blocks the move
        let surface = |k: &KnobVector| {
            let conc = k.get(DIM_CONC).unwrap() as f64;
            Measurement::synthetic(10.0 + 0.05 * conc, 0.5)
        };
        let run = |strict: bool| {
            let mut backend = FnBackend::new(ScoreMode::Live, move |k| Ok(surface(k)));
            let opts = TunerOptions {
                strict_alg1: strict,
                ..zero_cost_opts(1, 5.0)
            };
            run_tuning(&mut backend, &live_space(), live_start(), &opts).unwrap()
        };
        let strict = run(true);
        assert_eq!(strict.best.get(DIM_CONC), Some(8));
        let loose = run(false);
        assert_eq!(loose.best.get(DIM_CONC), Some(10));
        assert!(loose.best_score > strict.best_score);
    }

    #[test]
    fn trajectory_records_neighbor_cover_and_move_membership() {
        let mut backend = concave_backend();
        let space = live_space();
        let t = run_tuning(&mut backend, &space, live_start(), &zero_cost_opts(3, 0.02)).unwrap();
        for s in &t.steps {
            let expected = neighbors(&space, &s.current).unwrap();
            let got: Vec<KnobVector> =
                s.neighbor_results.iter().map(|r| r.knobs.clone()).collect();
            assert_eq!(got, expected);
            if let Some(m) = &s.moved_to {
                assert!(got.contains(m));
            }
        }
    }

    #[test]
    fn rejects_invalid_start_or_budget() {
        let mut backend = concave_backend();
        assert!(run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &zero_cost_opts(0, 0.02)
        )
        .is_err());
        let out_of_bounds = live_start().with_value(DIM_SPEC_TOKENS, 99);
        assert!(run_tuning(
            &mut backend,
            &live_space(),
            out_of_bounds,
            &zero_cost_opts(1, 0.02)
        )
        .is_err());
    }
}
