//! Segment scoring: goodput minus SLO-violation penalty minus a hardware
//! cost proxy.
//!
//! The live score penalizes p99 overshoot linearly with weight `lambda`;
//! the simulator variant sharpens the violation term by a multiplier
//! (default 10x) and swaps the hardware proxy for draft/verifier-specific
//! costs, so the simulated controller retreats aggressively once the target
//! is exceeded. Segments with zero successful requests score negative
//! infinity: a configuration that completes nothing never beats one that
//! works.

use serde::{Deserialize, Serialize};

use crate::knobs::{self, KnobVector};
use crate::metrics::SegmentMetrics;

/// Cost and penalty weights. Defaults match the tuned operating values
/// shipped in the stock config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub w_conc: f64,
    pub w_max: f64,
    pub w_spec: f64,
    pub lambda: f64,
    pub sim_w_w: f64,
    pub sim_w_k: f64,
    pub sim_violation_multiplier: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            w_conc: 0.01,
            w_max: 0.01,
            w_spec: 0.02,
            lambda: 5.0,
            sim_w_w: 0.02,
            sim_w_k: 0.005,
            sim_violation_multiplier: 10.0,
        }
    }
}

/// Which score variant a backend's segments should be judged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    Live,
    Sim,
}

/// Hardware-intensity proxy for live knobs: linear in concurrency, batch
/// limit, and speculative width. Width counts as zero when the speculation
/// toggle is off, since width without speculation has no effect.
pub fn hw_cost(k: &KnobVector, w: &ScoreWeights) -> f64 {
    let spec_on = k.toggle(knobs::TOGGLE_SPEC).unwrap_or(true);
    let spec = if spec_on {
        k.get(knobs::DIM_SPEC_TOKENS).unwrap_or(0)
    } else {
        0
    };
    w.w_conc * k.get(knobs::DIM_CONC).unwrap_or(0) as f64
        + w.w_max * k.get(knobs::DIM_MAX_SEQS).unwrap_or(0) as f64
        + w.w_spec * spec as f64
}

/// Live score: goodput − lambda·max(0, p99 − SLO) − hw_cost.
pub fn score_live(m: &SegmentMetrics, k: &KnobVector, slo: f64, w: &ScoreWeights) -> f64 {
    if !m.is_valid() {
        return f64::NEG_INFINITY;
    }
    let p99 = m.p99.expect("valid metrics have percentiles");
    m.goodput - w.lambda * (p99 - slo).max(0.0) - hw_cost(k, w)
}

/// Simulator score: goodput − multiplier·lambda·max(0, p̂99 − SLO) − sim cost.
///
/// Uses the EMA-smoothed p99 when the metrics carry one. The cost term is
/// linear in draft width, in verification frequency (`k_max − k`: smaller
/// cadence means more verifier passes), and in batch size.
pub fn score_sim(m: &SegmentMetrics, k: &KnobVector, slo: f64, w: &ScoreWeights) -> f64 {
    if !m.is_valid() {
        return f64::NEG_INFINITY;
    }
    let p99 = m.control_p99();
    let cost = w.sim_w_w * k.get(knobs::DIM_W).unwrap_or(0) as f64
        + w.sim_w_k * (knobs::SIM_K_MAX - k.get(knobs::DIM_K).unwrap_or(knobs::SIM_K_MAX)) as f64
        + w.w_max * k.get(knobs::DIM_B).unwrap_or(0) as f64 / 4.0;
    m.goodput - w.sim_violation_multiplier * w.lambda * (p99 - slo).max(0.0) - cost
}

/// Score a segment under the given mode.
pub fn score(mode: ScoreMode, m: &SegmentMetrics, k: &KnobVector, slo: f64, w: &ScoreWeights) -> f64 {
    match mode {
        ScoreMode::Live => score_live(m, k, slo, w),
        ScoreMode::Sim => score_sim(m, k, slo, w),
    }
}

/// Serde helper for score fields: JSON has no −∞, so non-finite scores are
/// written as `null` and read back as −∞.
pub mod score_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}
