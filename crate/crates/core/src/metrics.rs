//! Latency percentiles, goodput, segment summaries, and EMA smoothing.
//!
//! Goodput is the rate of requests that meet the latency objective over a
//! fixed measurement window; requests that violate it (or fail outright)
//! contribute zero. Percentiles use the nearest-rank method over successful
//! requests only.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One request's lifecycle within a measurement segment.
///
/// Times are segment-relative seconds. Failed requests (timeout, connection
/// error) have `ok = false` and carry no latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub issue_time_s: f64,
    pub completion_time_s: f64,
    pub latency_s: Option<f64>,
    pub ok: bool,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl RequestTrace {
    pub fn completed(issue: f64, completion: f64, prompt_tokens: u64, output_tokens: u64) -> Self {
        RequestTrace {
            issue_time_s: issue,
            completion_time_s: completion,
            latency_s: Some(completion - issue),
            ok: true,
            prompt_tokens,
            output_tokens,
        }
    }

    pub fn failed(issue: f64, observed_at: f64) -> Self {
        RequestTrace {
            issue_time_s: issue,
            completion_time_s: observed_at,
            latency_s: None,
            ok: false,
            prompt_tokens: 0,
            output_tokens: 0,
        }
    }
}

/// Per-segment summary. `p50/p95/p99` are absent when the segment had no
/// successful requests; such segments are invalid and score worst-possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    pub goodput: f64,
    pub throughput: f64,
    pub completed: u64,
    pub failed: u64,
    pub window_s: f64,
    /// EMA-smoothed p99 maintained by the simulator backend across segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_p99: Option<f64>,
    /// Requests still queued or in service at segment cutoff (simulator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<u64>,
}

impl SegmentMetrics {
    /// An invalid segment: nothing completed, percentiles absent.
    pub fn invalid(failed: u64, window_s: f64) -> Self {
        SegmentMetrics {
            p50: None,
            p95: None,
            p99: None,
            goodput: 0.0,
            throughput: 0.0,
            completed: 0,
            failed,
            window_s,
            ema_p99: None,
            residual: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.completed > 0
    }

    /// The p99 the controller should act on: the EMA-smoothed value when the
    /// backend maintains one, the raw segment p99 otherwise. Invalid
    /// segments count as unbounded (always SLO-violating).
    pub fn control_p99(&self) -> f64 {
        self.ema_p99.or(self.p99).unwrap_or(f64::INFINITY)
    }
}

/// Nearest-rank percentile: sort ascending, take the `ceil(q*N)`-th element
/// (1-based). `q` must lie in (0, 1].
pub fn percentile(latencies: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile q={q} outside (0, 1]"
        )));
    }
    if latencies.is_empty() {
        return Err(Error::NoSuccessfulSamples);
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("latencies must not be NaN"));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Rate of requests that met the latency objective: successful traces with
/// latency <= `slo`, divided by the configured window. Failures and
/// violations contribute zero.
pub fn goodput(traces: &[RequestTrace], slo: f64, window: f64) -> Result<f64> {
    if window <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "goodput window {window} must be > 0"
        )));
    }
    let met = traces
        .iter()
        .filter(|t| t.ok && t.latency_s.is_some_and(|l| l <= slo))
        .count();
    Ok(met as f64 / window)
}

/// Summarize one measurement segment. Percentiles cover successful requests
/// only; failures are excluded from latency statistics and counted in
/// `failed`. Zero successful requests yields an invalid summary.
pub fn summarize(traces: &[RequestTrace], slo: f64, window: f64) -> Result<SegmentMetrics> {
    if window <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "summary window {window} must be > 0"
        )));
    }
    let failed = traces.iter().filter(|t| !t.ok).count() as u64;
    let latencies: Vec<f64> = traces.iter().filter(|t| t.ok).filter_map(|t| t.latency_s).collect();
    if latencies.is_empty() {
        return Ok(SegmentMetrics::invalid(failed, window));
    }
    Ok(SegmentMetrics {
        p50: Some(percentile(&latencies, 0.50)?),
        p95: Some(percentile(&latencies, 0.95)?),
        p99: Some(percentile(&latencies, 0.99)?),
        goodput: goodput(traces, slo, window)?,
        throughput: latencies.len() as f64 / window,
        completed: latencies.len() as u64,
        failed,
        window_s: window,
        ema_p99: None,
        residual: None,
    })
}

/// Exponentially weighted moving average of a scalar (here: segment p99).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub value: Option<f64>,
    pub beta: f64,
}

impl EmaState {
    pub fn new(beta: f64) -> Self {
        assert!(beta > 0.0 && beta < 1.0, "EMA beta must lie in (0, 1)");
        EmaState { value: None, beta }
    }
}

/// One EMA step: the first sample initializes the state, later samples blend
/// as `beta * sample + (1 - beta) * previous`.
pub fn ema_update(state: EmaState, sample: f64) -> EmaState {
    let value = match state.value {
        None => sample,
        Some(prev) => state.beta * sample + (1.0 - state.beta) * prev,
    };
    EmaState {
        value: Some(value),
        beta: state.beta,
    }
}

/// Write traces as CSV with the documented column order.
pub fn write_traces_csv(path: &Path, traces: &[RequestTrace]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(file);
    for t in traces {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read traces written by [`write_traces_csv`].
pub fn read_traces_csv(path: &Path) -> Result<Vec<RequestTrace>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<RequestTrace>().enumerate() {
        out.push(row.map_err(|e| {
            Error::file_format(path.display().to_string(), format!("line {}: {e}", i + 2))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_traces(latencies: &[f64]) -> Vec<RequestTrace> {
        latencies
            .iter()
            .map(|l| RequestTrace::completed(0.0, *l, 100, 10))
            .collect()
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&[7.0], 0.5).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0], 0.99).unwrap(), 7.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn percentile_rejects_empty_and_bad_q() {
        assert!(matches!(
            percentile(&[], 0.5),
            Err(Error::NoSuccessfulSamples)
        ));
        assert!(percentile(&[1.0], 0.0).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn goodput_counts_only_slo_satisfying() {
        let mut traces = ok_traces(&vec![0.5; 300]);
        assert_eq!(goodput(&traces, 1.2, 30.0).unwrap(), 10.0);
        for t in traces.iter_mut().take(150) {
            t.latency_s = Some(2.0);
            t.completion_time_s = 2.0;
        }
        assert_eq!(goodput(&traces, 1.2, 30.0).unwrap(), 5.0);
        assert!(goodput(&traces, 1.2, 0.0).is_err());
    }

    #[test]
    fn summarize_happy_path() {
        let m = summarize(&ok_traces(&vec![0.5; 100]), 1.2, 10.0).unwrap();
        assert_eq!(m.p99, Some(0.5));
        assert_eq!(m.goodput, 10.0);
        assert_eq!(m.throughput, 10.0);
        assert_eq!((m.completed, m.failed), (100, 0));
    }

    #[test]
    fn summarize_tail_outliers_set_p99() {
        // nearest-rank: with N=100 the p99 is the 99th element, so a single
        // outlier at position 100 stays below it while two outliers surface
        let mut lat = vec![0.5; 99];
        lat.push(5.0);
        let m = summarize(&ok_traces(&lat), 1.2, 10.0).unwrap();
        assert_eq!(m.p99, Some(0.5));
        assert_eq!(m.goodput, 9.9);

        let mut lat = vec![0.5; 98];
        lat.extend([5.0, 5.0]);
        let m = summarize(&ok_traces(&lat), 1.2, 10.0).unwrap();
        assert_eq!(m.p99, Some(5.0));
        assert_eq!(m.goodput, 9.8);
    }

    #[test]
    fn summarize_all_failed_is_invalid() {
        let traces: Vec<RequestTrace> = (0..5).map(|_| RequestTrace::failed(0.0, 1.0)).collect();
        let m = summarize(&traces, 1.2, 10.0).unwrap();
        assert!(!m.is_valid());
        assert_eq!(m.p99, None);
        assert_eq!(m.goodput, 0.0);
        assert_eq!(m.failed, 5);
        assert_eq!(m.control_p99(), f64::INFINITY);
    }

    #[test]
    fn ema_initializes_then_blends() {
        let s = EmaState::new(0.5);
        let s = ema_update(s, 1.3);
        assert_eq!(s.value, Some(1.3));
        let s = ema_update(EmaState { value: Some(1.0), beta: 0.5 }, 2.0);
        assert_eq!(s.value, Some(1.5));
        let s = ema_update(EmaState { value: Some(1.5), beta: 0.3 }, 1.0);
        assert!((s.value.unwrap() - 1.35).abs() < 1e-12);
    }

    #[test]
    fn traces_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        let mut traces = ok_traces(&[0.4, 0.9]);
        traces.push(RequestTrace::failed(0.1, 2.1));
        write_traces_csv(&path, &traces).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "issue_time_s,completion_time_s,latency_s,ok,prompt_tokens,output_tokens"
        ));
        assert_eq!(read_traces_csv(&path).unwrap(), traces);
    }
}
