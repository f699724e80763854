//! Experiment suites over either backend: grid sweeps, one-knob ablations,
//! stress profiles, Pareto-front extraction, and file exports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{LiveBackend, MeasurementBackend};
use crate::config::{AppConfig, BackendKind};
use crate::controller::{TuningStep, TuningTrajectory};
use crate::error::{Error, Result};
use crate::knobs::{KnobSpace, KnobVector};
use crate::metrics::{summarize, SegmentMetrics};
use crate::scoring::{score, score_json, ScoreMode};
use crate::seed;
use crate::simulator::{simulate_segment_seeded, Regime, SimConfig};

pub const SWEEP_SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Row label: a repetition index or the per-cell mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedLabel {
    Rep(u32),
    Mean,
}

impl fmt::Display for SeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedLabel::Rep(n) => write!(f, "{n}"),
            SeedLabel::Mean => f.write_str("mean"),
        }
    }
}

impl FromStr for SeedLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mean" {
            return Ok(SeedLabel::Mean);
        }
        s.parse::<u32>()
            .map(SeedLabel::Rep)
            .map_err(|_| Error::InvalidArgument(format!("bad seed label `{s}`")))
    }
}

impl Serialize for SeedLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SeedLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluated (cell, repetition) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knobs: KnobVector,
    pub regime: Regime,
    pub seed: SeedLabel,
    pub metrics: SegmentMetrics,
    #[serde(with = "score_json")]
    pub score: f64,
    pub pareto: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A sweep's rows plus the knob column order for exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// A sweep: the cross product of per-knob value lists around a base point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub backend: BackendKind,
    pub base: KnobVector,
    /// `(dim, values)` in cross-product order; the last dim varies fastest.
    pub dims: Vec<(String, Vec<i64>)>,
    pub regime: Regime,
    pub seeds_per_cell: u32,
    /// Apply [`stress_profile`] to the simulator config first.
    pub stress: bool,
    /// Guard against accidental combinatorial blowups.
    pub max_cells: usize,
}

impl SweepSpec {
    /// The default baseline grid over draft width, verifier cadence, and
    /// batch size.
    pub fn baseline_grid(regime: Regime, seeds_per_cell: u32) -> SweepSpec {
        SweepSpec {
            backend: BackendKind::Sim,
            base: crate::knobs::sim_midpoint(),
            dims: vec![
                ("W".into(), vec![1, 2, 4]),
                ("k".into(), vec![2, 4, 8, 12]),
                ("B".into(), vec![4, 8, 16]),
            ],
            regime,
            seeds_per_cell,
            stress: false,
            max_cells: 4096,
        }
    }

    fn validate(&self, space: &KnobSpace) -> Result<()> {
        space.validate(&self.base)?;
        if self.seeds_per_cell < 1 {
            return Err(Error::InvalidArgument("seeds_per_cell must be >= 1".into()));
        }
        let mut product: usize = 1;
        for (name, values) in &self.dims {
            let dim = space
                .dim(name)
                .ok_or_else(|| Error::UnknownKnob(name.clone()))?;
            if values.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "empty value list for `{name}`"
                )));
            }
            for v in values {
                if *v < dim.min || *v > dim.max {
                    return Err(Error::OutOfBounds {
                        dim: name.clone(),
                        value: *v,
                        min: dim.min,
                        max: dim.max,
                    });
                }
            }
            product = product.saturating_mul(values.len());
        }
        if product.saturating_mul(self.seeds_per_cell as usize) > self.max_cells {
            return Err(Error::InvalidArgument(format!(
                "sweep would evaluate {product} cells x {} seeds > cap {}",
                self.seeds_per_cell, self.max_cells
            )));
        }
        Ok(())
    }

    /// Materialize the cells in deterministic cross-product order.
    pub fn cells(&self) -> Vec<KnobVector> {
        let mut out = vec![self.base.clone()];
        for (name, values) in &self.dims {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for cell in &out {
                for v in values {
                    next.push(cell.with_value(name, *v));
                }
            }
            out = next;
        }
        out
    }
}

/// Stress variant of a simulator config: prompt and output length means
/// scaled 1.5x (a `ln 1.5` shift of the log-normal location) and the bursty
/// arrival regime substituted unconditionally.
pub fn stress_profile(cfg: &SimConfig) -> SimConfig {
    let mut out = cfg.clone();
    out.prompt_mu += 1.5f64.ln();
    out.output_mu += 1.5f64.ln();
    out.regime = Regime::Bursty;
    out
}

/// Indices of the non-dominated points among `(goodput, p99)` pairs,
/// ordered by p99 ascending. A point is dominated when another has
/// goodput >= and p99 <=, at least one strictly.
pub fn pareto_front_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .1
            .partial_cmp(&points[b].1)
            .expect("p99 must not be NaN")
            .then(points[b].0.partial_cmp(&points[a].0).expect("goodput must not be NaN"))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_goodput = f64::NEG_INFINITY;
    let mut best_p99 = f64::NEG_INFINITY;
    for i in order {
        let (g, p) = points[i];
        if g > best_goodput {
            front.push(i);
            best_goodput = g;
            best_p99 = p;
        } else if g == best_goodput && p == best_p99 {
            front.push(i); // exact tie: neither dominates
        }
    }
    front
}

fn run_sim_cell(
    app: &AppConfig,
    cfg: &SimConfig,
    space: &KnobSpace,
    cell: &KnobVector,
    rep: u32,
) -> SweepRow {
    let cell_seed = seed::derive(
        app.root_seed,
        &format!("sweep:{}:rep{}", cell.label(space), rep),
    );
    let outcome = simulate_segment_seeded(cfg, cell, cell_seed).and_then(|out| {
        let mut m = summarize(&out.traces, app.slo_s, out.elapsed_s)?;
        m.residual = Some(out.residual);
        Ok(m)
    });
    match outcome {
        Ok(metrics) => SweepRow {
            score: score(ScoreMode::Sim, &metrics, cell, app.slo_s, &app.scoring),
            knobs: cell.clone(),
            regime: cfg.regime,
            seed: SeedLabel::Rep(rep),
            metrics,
            pareto: false,
            error: None,
        },
        Err(e) => SweepRow {
            knobs: cell.clone(),
            regime: cfg.regime,
            seed: SeedLabel::Rep(rep),
            metrics: SegmentMetrics::invalid(0, 0.0),
            score: f64::NEG_INFINITY,
            pareto: false,
            error: Some(e.to_string()),
        },
    }
}

fn mean_row(cell_rows: &[SweepRow]) -> SweepRow {
    let valid: Vec<&SweepRow> = cell_rows.iter().filter(|r| r.metrics.is_valid()).collect();
    let template = &cell_rows[0];
    if valid.is_empty() {
        return SweepRow {
            seed: SeedLabel::Mean,
            metrics: SegmentMetrics::invalid(0, 0.0),
            score: f64::NEG_INFINITY,
            pareto: false,
            error: Some("no valid repetitions".into()),
            ..template.clone()
        };
    }
    let n = valid.len() as f64;
    let mean = |f: &dyn Fn(&SweepRow) -> f64| valid.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
        let vals: Vec<f64> = valid.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    SweepRow {
        seed: SeedLabel::Mean,
        metrics: SegmentMetrics {
            p50: mean_opt(&|r| r.metrics.p50),
            p95: mean_opt(&|r| r.metrics.p95),
            p99: mean_opt(&|r| r.metrics.p99),
            goodput: mean(&|r| r.metrics.goodput),
            throughput: mean(&|r| r.metrics.throughput),
            completed: mean(&|r| r.metrics.completed as f64).round() as u64,
            failed: mean(&|r| r.metrics.failed as f64).round() as u64,
            window_s: mean(&|r| r.metrics.window_s),
            ema_p99: None,
            residual: mean_opt(&|r| r.metrics.residual.map(|v| v as f64))
                .map(|v| v.round() as u64),
        },
        score: mean(&|r| r.score),
        pareto: false,
        error: None,
        ..template.clone()
    }
}

/// Evaluate every cell x repetition of `spec`. Simulator cells derive their
/// seeds from the root seed and the cell's knob label, so a sweep is fully
/// reproducible and identical cells share seeds across regimes. When
/// `seeds_per_cell > 1` each cell also gets a `mean` row, and Pareto
/// membership is computed over the mean rows; otherwise over the per-seed
/// rows. Per-cell failures are recorded on the row and the sweep continues.
pub fn run_sweep(app: &AppConfig, spec: &SweepSpec) -> Result<SweepResult> {
    let space = AppConfig::space_for(spec.backend);
    spec.validate(&space)?;

    let sim_cfg = match spec.backend {
        BackendKind::Sim => {
            let mut cfg = app.simulator.clone();
            cfg.regime = spec.regime;
            if spec.stress {
                cfg = stress_profile(&cfg);
            }
            Some(cfg)
        }
        BackendKind::Live => None,
    };
    let mut live = match spec.backend {
        BackendKind::Live => Some(LiveBackend::new(app.live.clone(), app.slo_s)?),
        BackendKind::Sim => None,
    };

    let mut rows: Vec<SweepRow> = Vec::new();
    for cell in spec.cells() {
        let mut cell_rows: Vec<SweepRow> = Vec::new();
        for rep in 0..spec.seeds_per_cell {
            let row = match spec.backend {
                BackendKind::Sim => {
                    run_sim_cell(app, sim_cfg.as_ref().unwrap(), &space, &cell, rep)
                }
                BackendKind::Live => {
                    let backend = live.as_mut().unwrap();
                    match backend.measure(&cell) {
                        Ok(m) => SweepRow {
                            score: score(
                                ScoreMode::Live,
                                &m.metrics,
                                &cell,
                                app.slo_s,
                                &app.scoring,
                            ),
                            knobs: cell.clone(),
                            regime: spec.regime,
                            seed: SeedLabel::Rep(rep),
                            metrics: m.metrics,
                            pareto: false,
                            error: None,
                        },
                        Err(e) => SweepRow {
                            knobs: cell.clone(),
                            regime: spec.regime,
                            seed: SeedLabel::Rep(rep),
                            metrics: SegmentMetrics::invalid(0, 0.0),
                            score: f64::NEG_INFINITY,
                            pareto: false,
                            error: Some(e.to_string()),
                        },
                    }
                }
            };
            cell_rows.push(row);
        }
        if spec.seeds_per_cell > 1 {
            cell_rows.push(mean_row(&cell_rows));
        }
        rows.append(&mut cell_rows);
    }

    // Pareto flags over the plot-facing rows.
    let plot_label = if spec.seeds_per_cell > 1 {
        SeedLabel::Mean
    } else {
        SeedLabel::Rep(0)
    };
    let candidates: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.seed == plot_label && r.metrics.is_valid())
        .map(|(i, _)| i)
        .collect();
    let points: Vec<(f64, f64)> = candidates
        .iter()
        .map(|&i| (rows[i].metrics.goodput, rows[i].metrics.p99.unwrap()))
        .collect();
    for fi in pareto_front_indices(&points) {
        rows[candidates[fi]].pareto = true;
    }

    Ok(SweepResult {
        schema_version: SWEEP_SCHEMA_VERSION,
        columns: space.names(),
        rows,
    })
}

/// One-knob ablation around a base point: one cell per value, every other
/// knob fixed.
pub fn run_ablation(
    app: &AppConfig,
    backend: BackendKind,
    base: KnobVector,
    dim: &str,
    values: Vec<i64>,
    regime: Regime,
    seeds_per_cell: u32,
) -> Result<SweepResult> {
    let spec = SweepSpec {
        backend,
        base,
        dims: vec![(dim.to_string(), values)],
        regime,
        seeds_per_cell,
        stress: false,
        max_cells: 4096,
    };
    run_sweep(app, &spec)
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

const METRIC_COLUMNS: [&str; 11] = [
    "regime",
    "seed",
    "p50",
    "p95",
    "p99",
    "goodput",
    "throughput",
    "completed",
    "failed",
    "score",
    "pareto",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a sweep as plot-ready CSV: one knob column per dim/toggle, then
/// the fixed metric columns.
pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::file_format(path.display().to_string(), e.to_string()))?;
    let header: Vec<String> = result
        .columns
        .iter()
        .cloned()
        .chain(METRIC_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    w.write_record(&header)?;
    for row in &result.rows {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for col in &result.columns {
            rec.push(match (row.knobs.get(col), row.knobs.toggle(col)) {
                (Some(v), _) => v.to_string(),
                (None, Some(b)) => b.to_string(),
                (None, None) => String::new(),
            });
        }
        let m = &row.metrics;
        rec.extend([
            row.regime.to_string(),
            row.seed.to_string(),
            fmt_opt(m.p50),
            fmt_opt(m.p95),
            fmt_opt(m.p99),
            m.goodput.to_string(),
            m.throughput.to_string(),
            m.completed.to_string(),
            m.failed.to_string(),
            row.score.to_string(),
            row.pareto.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a sweep CSV back. The measurement window is not a CSV column; it is
/// reconstructed from completed/throughput, so prefer the JSON export when
/// full fidelity matters.
pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let label = path.display().to_string();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::file_format(label.clone(), e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::file_format(label.clone(), e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let regime_at = header
        .iter()
        .position(|h| h == "regime")
        .ok_or_else(|| Error::file_format(label.clone(), "missing `regime` column".to_string()))?;
    let columns: Vec<String> = header[..regime_at].to_vec();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::file_format(label.clone(), format!("missing `{name}` column")))
    };
    let (c_seed, c_p50, c_p95, c_p99) = (col("seed")?, col("p50")?, col("p95")?, col("p99")?);
    let (c_good, c_thru, c_done, c_fail) = (
        col("goodput")?,
        col("throughput")?,
        col("completed")?,
        col("failed")?,
    );
    let (c_score, c_pareto) = (col("score")?, col("pareto")?);

    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let ctx = |reason: String| Error::file_format(label.clone(), format!("line {line}: {reason}"));
        let rec = rec.map_err(|e| ctx(e.to_string()))?;
        let cell = |idx: usize| rec.get(idx).unwrap_or("").to_string();
        let parse_f = |idx: usize| -> Result<f64> {
            cell(idx)
                .parse::<f64>()
                .map_err(|e| ctx(format!("{}: {e}", header[idx])))
        };
        let parse_opt = |idx: usize| -> Result<Option<f64>> {
            let s = cell(idx);
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse::<f64>().map_err(|e| ctx(format!("{}: {e}", header[idx])))?))
            }
        };
        let mut values = BTreeMap::new();
        let mut toggles = BTreeMap::new();
        for (ci, name) in columns.iter().enumerate() {
            let s = cell(ci);
            if let Ok(v) = s.parse::<i64>() {
                values.insert(name.clone(), v);
            } else if let Ok(b) = s.parse::<bool>() {
                toggles.insert(name.clone(), b);
            } else {
                return Err(ctx(format!("knob `{name}`: bad value `{s}`")));
            }
        }
        let completed = cell(c_done)
            .parse::<u64>()
            .map_err(|e| ctx(format!("completed: {e}")))?;
        let throughput = parse_f(c_thru)?;
        let window_s = if throughput > 0.0 {
            completed as f64 / throughput
        } else {
            0.0
        };
        rows.push(SweepRow {
            knobs: KnobVector { values, toggles },
            regime: cell(regime_at).parse().map_err(|e: Error| ctx(e.to_string()))?,
            seed: cell(c_seed).parse().map_err(|e: Error| ctx(e.to_string()))?,
            metrics: SegmentMetrics {
                p50: parse_opt(c_p50)?,
                p95: parse_opt(c_p95)?,
                p99: parse_opt(c_p99)?,
                goodput: parse_f(c_good)?,
                throughput,
                completed,
                failed: cell(c_fail)
                    .parse::<u64>()
                    .map_err(|e| ctx(format!("failed: {e}")))?,
                window_s,
                ema_p99: None,
                residual: None,
            },
            score: parse_f(c_score)?,
            pareto: cell(c_pareto)
                .parse::<bool>()
                .map_err(|e| ctx(format!("pareto: {e}")))?,
            error: None,
        });
    }
    Ok(SweepResult {
        schema_version: SWEEP_SCHEMA_VERSION,
        columns,
        rows,
    })
}

/// Full-fidelity JSON export.
pub fn write_sweep_json(path: &Path, result: &SweepResult) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer_pretty(file, result)?;
    Ok(())
}

pub fn read_sweep_json(path: &Path) -> Result<SweepResult> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let result: SweepResult = serde_json::from_reader(file)
        .map_err(|e| Error::file_format(path.display().to_string(), e.to_string()))?;
    Ok(result)
}

/// Run summary persisted next to the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub schema_version: u32,
    pub best: KnobVector,
    #[serde(with = "score_json")]
    pub best_score: f64,
    pub final_metrics: SegmentMetrics,
    #[serde(with = "score_json")]
    pub final_score: f64,
    pub steps: u32,
    pub moves: u32,
}

impl TrajectorySummary {
    pub fn of(t: &TuningTrajectory) -> TrajectorySummary {
        TrajectorySummary {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            best: t.best.clone(),
            best_score: t.best_score,
            final_metrics: t.final_metrics.clone(),
            final_score: t.final_score,
            steps: t.steps.len() as u32,
            moves: t.steps.iter().filter(|s| s.moved_to.is_some()).count() as u32,
        }
    }
}

/// One JSON line per tuning step.
pub fn write_trajectory_jsonl(path: &Path, t: &TuningTrajectory) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for step in &t.steps {
        serde_json::to_writer(&mut file, step)?;
        file.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl(path: &Path) -> Result<Vec<TuningStep>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| {
            Error::file_format(path.display().to_string(), format!("line {}: {e}", i + 1))
        })?);
    }
    Ok(steps)
}

pub fn write_trajectory_summary(path: &Path, t: &TuningTrajectory) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer_pretty(file, &TrajectorySummary::of(t))?;
    Ok(())
}

pub fn read_trajectory_summary(path: &Path) -> Result<TrajectorySummary> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(file)
        .map_err(|e| Error::file_format(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knobs::{sim_midpoint, DIM_B, DIM_K};
    use proptest::prelude::*;

    fn fast_app() -> AppConfig {
        let mut app = AppConfig::default();
        app.simulator.min_completions = 60;
        app.simulator.min_sim_time_s = 3.0;
        app
    }

    #[test]
    fn baseline_grid_emits_36_rows() {
        let app = fast_app();
        let spec = SweepSpec::baseline_grid(Regime::Steady, 1);
        let result = run_sweep(&app, &spec).unwrap();
        assert_eq!(result.rows.len(), 36);
        assert_eq!(result.columns, vec!["W", "k", "B", "max_wait_ms"]);
    }

    #[test]
    fn sweep_is_deterministic_under_root_seed() {
        let app = fast_app();
        let mut spec = SweepSpec::baseline_grid(Regime::Steady, 1);
        spec.dims = vec![("k".into(), vec![2, 8])];
        let a = run_sweep(&app, &spec).unwrap();
        let b = run_sweep(&app, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_rejects_bad_specs() {
        let app = fast_app();
        let mut spec = SweepSpec::baseline_grid(Regime::Steady, 1);
        spec.dims = vec![("k".into(), vec![])];
        assert!(run_sweep(&app, &spec).is_err());
        spec.dims = vec![("nope".into(), vec![1])];
        assert!(run_sweep(&app, &spec).is_err());
        spec.dims = vec![("k".into(), vec![99])];
        assert!(run_sweep(&app, &spec).is_err());
    }

    #[test]
    fn multi_seed_cells_add_flagged_mean_rows() {
        let app = fast_app();
        let mut spec = SweepSpec::baseline_grid(Regime::Steady, 2);
        spec.dims = vec![("k".into(), vec![2, 8])];
        let result = run_sweep(&app, &spec).unwrap();
        assert_eq!(result.rows.len(), 2 * 3);
        let means: Vec<&SweepRow> = result
            .rows
            .iter()
            .filter(|r| r.seed == SeedLabel::Mean)
            .collect();
        assert_eq!(means.len(), 2);
        // pareto flags live on the mean rows only
        assert!(result
            .rows
            .iter()
            .filter(|r| r.pareto)
            .all(|r| r.seed == SeedLabel::Mean));
        assert!(means.iter().any(|r| r.pareto));
    }

    #[test]
    fn pareto_front_hand_cases() {
        // incomparable pair: each wins one objective
        assert_eq!(pareto_front_indices(&[(8.0, 1.0), (10.0, 1.5)]), vec![0, 1]);
        // better on both objectives dominates
        assert_eq!(pareto_front_indices(&[(10.0, 1.0), (9.0, 1.2)]), vec![0]);
        assert_eq!(pareto_front_indices(&[(10.0, 1.0), (8.0, 1.5)]), vec![0]);
        assert_eq!(pareto_front_indices(&[(10.0, 1.0)]), vec![0]);
        // exact duplicates both stay
        assert_eq!(
            pareto_front_indices(&[(5.0, 1.0), (5.0, 1.0)]),
            vec![0, 1]
        );
    }

    fn brute_force_front(points: &[(f64, f64)]) -> Vec<usize> {
        let mut front: Vec<usize> = (0..points.len())
            .filter(|&i| {
                !points.iter().enumerate().any(|(j, &(g, p))| {
                    j != i
                        && g >= points[i].0
                        && p <= points[i].1
                        && (g > points[i].0 || p < points[i].1)
                })
            })
            .collect();
        front.sort_by(|&a, &b| {
            points[a]
                .1
                .partial_cmp(&points[b].1)
                .unwrap()
                .then(points[b].0.partial_cmp(&points[a].0).unwrap())
                .then(a.cmp(&b))
        });
        front
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(points in prop::collection::vec((0u32..40, 0u32..40), 0..60)) {
            let points: Vec<(f64, f64)> = points
                .into_iter()
                .map(|(g, p)| (g as f64 / 4.0, p as f64 / 4.0))
                .collect();
            prop_assert_eq!(pareto_front_indices(&points), brute_force_front(&points));
        }
    }

    #[test]
    fn ablation_rows_differ_only_in_swept_dim() {
        let app = fast_app();
        let values: Vec<i64> = (1..=32).collect();
        let result = run_ablation(
            &app,
            BackendKind::Sim,
            sim_midpoint(),
            DIM_B,
            values,
            Regime::Steady,
            1,
        )
        .unwrap();
        assert_eq!(result.rows.len(), 32);
        let base = sim_midpoint();
        for row in &result.rows {
            let diffs: Vec<&String> = row
                .knobs
                .values
                .iter()
                .filter(|(name, v)| base.get(name) != Some(**v))
                .map(|(name, _)| name)
                .collect();
            assert!(diffs.is_empty() || diffs == vec![DIM_B]);
        }
        // single-value ablation equals a direct measurement
        let single = run_ablation(
            &app,
            BackendKind::Sim,
            sim_midpoint(),
            DIM_K,
            vec![8],
            Regime::Steady,
            1,
        )
        .unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].knobs, sim_midpoint());
    }

    #[test]
    fn stress_profile_shifts_means_and_forces_bursty() {
        let cfg = SimConfig::default();
        let stressed = stress_profile(&cfg);
        assert!((stressed.prompt_mu - (cfg.prompt_mu + 1.5f64.ln())).abs() < 1e-12);
        assert!((stressed.output_mu - (cfg.output_mu + 1.5f64.ln())).abs() < 1e-12);
        assert_eq!(stressed.regime, Regime::Bursty);
        let twice = stress_profile(&stressed);
        assert!((twice.prompt_mu - (cfg.prompt_mu + 2.25f64.ln())).abs() < 1e-12);
        // already-bursty input stays bursty
        let mut bursty = cfg.clone();
        bursty.regime = Regime::Bursty;
        assert_eq!(stress_profile(&bursty).regime, Regime::Bursty);
    }

    #[test]
    fn sweep_csv_has_header_and_one_line_per_row() {
        let app = fast_app();
        let spec = SweepSpec::baseline_grid(Regime::Steady, 1);
        let result = run_sweep(&app, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &result).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 37);
        assert_eq!(
            lines[0],
            "W,k,B,max_wait_ms,regime,seed,p50,p95,p99,goodput,throughput,completed,failed,score,pareto"
        );
        let parsed = read_sweep_csv(&path).unwrap();
        assert_eq!(parsed.rows.len(), 36);
        for (a, b) in parsed.rows.iter().zip(&result.rows) {
            assert_eq!(a.knobs, b.knobs);
            assert_eq!(a.metrics.p99, b.metrics.p99);
            assert_eq!(a.score, b.score);
            assert_eq!(a.pareto, b.pareto);
        }
    }

    #[test]
    fn sweep_json_round_trips_exactly() {
        let app = fast_app();
        let mut spec = SweepSpec::baseline_grid(Regime::Bursty, 2);
        spec.dims = vec![("W".into(), vec![1, 2])];
        let result = run_sweep(&app, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.json");
        write_sweep_json(&path, &result).unwrap();
        assert_eq!(read_sweep_json(&path).unwrap(), result);
    }

    #[test]
    fn trajectory_files_round_trip() {
        use crate::backend::{FnBackend, Measurement};
        use crate::controller::{run_tuning, TunerOptions};
        use crate::knobs::{live_space, live_start};

        let mut backend = FnBackend::new(ScoreMode::Live, |k| {
            let conc = k.get("conc").unwrap() as f64;
            Ok(Measurement::synthetic(20.0 - (conc - 10.0).abs(), 0.9))
        });
        let t = run_tuning(
            &mut backend,
            &live_space(),
            live_start(),
            &TunerOptions {
                budget: 8,
                ..TunerOptions::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("trajectory.jsonl");
        let summary = dir.path().join("summary.json");
        write_trajectory_jsonl(&jsonl, &t).unwrap();
        write_trajectory_summary(&summary, &t).unwrap();

        let text = std::fs::read_to_string(&jsonl).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert_eq!(read_trajectory_jsonl(&jsonl).unwrap(), t.steps);
        let s = read_trajectory_summary(&summary).unwrap();
        assert_eq!(s, TrajectorySummary::of(&t));
        assert_eq!(s.schema_version, TRAJECTORY_SCHEMA_VERSION);
    }

    #[test]
    fn malformed_files_report_line_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"not\": \"a step\"}\n").unwrap();
        let err = read_trajectory_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
