//! Discrete-event simulator of a single-server LLM serving stack.
//!
//! Requests arrive under steady (Poisson) or bursty on/off regimes, join an
//! FCFS queue, and are served in batches of up to `B` requests (optionally
//! waiting up to `max_wait` ms to fill). Each batch runs a prefill phase
//! driven by its longest prompt, then a lockstep decode phase in which one
//! decode step produces one token for every active sequence.
//!
//! Speculative decoding is modeled with a draft width `W` and verifier
//! cadence `k`: sequences accumulate drafted tokens in chunks of `W` until
//! `k` are pending, then a verification event checks the pending run
//! token-by-token (each accepted with probability `p_acc`). The first
//! rejection commits the corrected token, discards the rest of the pending
//! run, and charges one corrective decode step — so sparse verification
//! (large `k`) throws away more drafted work per rejection, while frequent
//! verification (small `k`) bounds the loss. `W = 0` (or the speculation
//! toggle off) selects the plain decode path.
//!
//! Timing is calibrated by config, with light multiplicative noise; the
//! model targets queueing/batching trends, not absolute kernel timing.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knobs::{self, KnobVector};
use crate::metrics::RequestTrace;
use crate::seed;

/// Arrival regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Steady,
    Bursty,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Steady => "steady",
            Regime::Bursty => "bursty",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steady" => Ok(Regime::Steady),
            "bursty" => Ok(Regime::Bursty),
            other => Err(Error::InvalidArgument(format!(
                "regime must be `steady` or `bursty`, got `{other}`"
            ))),
        }
    }
}

/// Workload, timing, speculation, and stop-rule parameters.
///
/// All keys are flat so the config file section mirrors this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub regime: Regime,
    pub steady_rate_rps: f64,
    pub bursty_on_s: f64,
    pub bursty_off_s: f64,
    pub bursty_on_rate_rps: f64,

    pub prompt_mu: f64,
    pub prompt_sigma: f64,
    pub prompt_min_tokens: u64,
    pub prompt_max_tokens: u64,
    pub output_mu: f64,
    pub output_sigma: f64,
    pub output_min_tokens: u64,
    pub output_max_tokens: u64,

    pub prefill_tokens_per_s: f64,
    pub decode_base_s_per_token: f64,
    pub decode_per_seq_s_per_token: f64,
    pub draft_s_per_token: f64,
    pub verify_base_s: f64,
    pub verify_per_seq_s: f64,
    pub noise_rel_sd: f64,

    pub p_acc: f64,

    pub min_completions: u64,
    pub min_sim_time_s: f64,
    pub ema_beta: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            regime: Regime::Steady,
            steady_rate_rps: 7.0,
            bursty_on_s: 2.0,
            bursty_off_s: 1.0,
            bursty_on_rate_rps: 10.5,
            // log-normal with mean ~512 prompt / ~64 output tokens
            prompt_mu: 6.177_075,
            prompt_sigma: 0.35,
            prompt_min_tokens: 1,
            prompt_max_tokens: 4096,
            output_mu: 4.127_633,
            output_sigma: 0.25,
            output_min_tokens: 1,
            output_max_tokens: 1024,
            prefill_tokens_per_s: 8000.0,
            decode_base_s_per_token: 0.0022,
            decode_per_seq_s_per_token: 0.000_18,
            draft_s_per_token: 0.0007,
            verify_base_s: 0.0007,
            verify_per_seq_s: 0.000_07,
            noise_rel_sd: 0.05,
            p_acc: 0.4,
            min_completions: 1500,
            min_sim_time_s: 90.0,
            ema_beta: 0.5,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: String| Error::InvalidConfig {
            field: format!("simulator.{name}"),
            reason,
        };
        if self.steady_rate_rps <= 0.0 {
            return Err(field("steady_rate_rps", "must be > 0".into()));
        }
        if self.bursty_on_rate_rps <= 0.0 {
            return Err(field("bursty_on_rate_rps", "must be > 0".into()));
        }
        if self.bursty_on_s <= 0.0 {
            return Err(field("bursty_on_s", "must be > 0".into()));
        }
        if self.bursty_off_s < 0.0 {
            return Err(field("bursty_off_s", "must be >= 0".into()));
        }
        if self.prompt_sigma < 0.0 || self.output_sigma < 0.0 {
            return Err(field("prompt_sigma/output_sigma", "must be >= 0".into()));
        }
        if self.prompt_min_tokens < 1 || self.output_min_tokens < 1 {
            return Err(field("*_min_tokens", "must be >= 1".into()));
        }
        if self.prompt_min_tokens > self.prompt_max_tokens
            || self.output_min_tokens > self.output_max_tokens
        {
            return Err(field("*_max_tokens", "min exceeds max".into()));
        }
        if self.prefill_tokens_per_s <= 0.0 {
            return Err(field("prefill_tokens_per_s", "must be > 0".into()));
        }
        if self.decode_base_s_per_token <= 0.0 || self.verify_base_s <= 0.0 {
            return Err(field(
                "decode_base_s_per_token/verify_base_s",
                "must be > 0".into(),
            ));
        }
        if self.decode_per_seq_s_per_token < 0.0
            || self.verify_per_seq_s < 0.0
            || self.draft_s_per_token < 0.0
            || self.noise_rel_sd < 0.0
        {
            return Err(field("timing", "rates must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_acc) {
            return Err(field("p_acc", "must lie in [0, 1]".into()));
        }
        if self.min_completions < 1 {
            return Err(field("min_completions", "must be >= 1".into()));
        }
        if self.min_sim_time_s < 0.0 {
            return Err(field("min_sim_time_s", "must be >= 0".into()));
        }
        if !(self.ema_beta > 0.0 && self.ema_beta < 1.0) {
            return Err(field("ema_beta", "must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn mean_rate(&self) -> f64 {
        match self.regime {
            Regime::Steady => self.steady_rate_rps,
            Regime::Bursty => {
                self.bursty_on_rate_rps * self.bursty_on_s / (self.bursty_on_s + self.bursty_off_s)
            }
        }
    }
}

/// One queued request.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRequest {
    pub id: u64,
    pub arrival_s: f64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// One served batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub members: Vec<u64>,
    pub formed_at: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
}

/// Everything a simulated segment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub traces: Vec<RequestTrace>,
    pub batches: Vec<BatchRecord>,
    pub arrivals: u64,
    pub residual: u64,
    pub elapsed_s: f64,
}

/// Lazy arrival-time generator.
///
/// Bursty arrivals are generated as a Poisson process in cumulative on-time
/// and mapped onto the wall clock by inserting the off windows, which makes
/// `off = 0` draw-for-draw identical to the steady regime at the on rate.
pub struct ArrivalStream {
    regime: Regime,
    exp: Exp<f64>,
    on_s: f64,
    off_s: f64,
    clock: f64,
}

impl ArrivalStream {
    pub fn new(cfg: &SimConfig) -> Result<ArrivalStream> {
        cfg.validate()?;
        let rate = match cfg.regime {
            Regime::Steady => cfg.steady_rate_rps,
            Regime::Bursty => cfg.bursty_on_rate_rps,
        };
        Ok(ArrivalStream {
            regime: cfg.regime,
            exp: Exp::new(rate).map_err(|e| Error::Simulator(format!("arrival rate: {e}")))?,
            on_s: cfg.bursty_on_s,
            off_s: cfg.bursty_off_s,
            clock: 0.0,
        })
    }

    pub fn next(&mut self, rng: &mut impl Rng) -> f64 {
        self.clock += self.exp.sample(rng);
        match self.regime {
            Regime::Steady => self.clock,
            Regime::Bursty => {
                let cycles = (self.clock / self.on_s).floor();
                self.clock + cycles * self.off_s
            }
        }
    }
}

/// Sorted arrival times within `[0, horizon)`.
pub fn sample_arrivals(cfg: &SimConfig, horizon: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if horizon <= 0.0 {
        return Err(Error::InvalidArgument("horizon must be > 0".into()));
    }
    let mut stream = ArrivalStream::new(cfg)?;
    let mut out = Vec::new();
    loop {
        let t = stream.next(rng);
        if t >= horizon {
            return Ok(out);
        }
        out.push(t);
    }
}

/// Independent log-normal prompt/output token counts, rounded and clamped.
pub fn sample_lengths(cfg: &SimConfig, rng: &mut impl Rng) -> (u64, u64) {
    let draw = |mu: f64, sigma: f64, lo: u64, hi: u64, rng: &mut dyn rand::RngCore| {
        let d = LogNormal::new(mu, sigma).expect("sigma validated >= 0");
        (d.sample(rng).round() as i64).clamp(lo as i64, hi as i64) as u64
    };
    let prompt = draw(
        cfg.prompt_mu,
        cfg.prompt_sigma,
        cfg.prompt_min_tokens,
        cfg.prompt_max_tokens,
        rng,
    );
    let output = draw(
        cfg.output_mu,
        cfg.output_sigma,
        cfg.output_min_tokens,
        cfg.output_max_tokens,
        rng,
    );
    (prompt, output)
}

/// What the server should do with the current queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchDecision {
    /// Pop this many requests from the queue head and start serving.
    Form(usize),
    /// Idle until this time (or until an arrival fills the batch).
    WaitUntil(f64),
    /// Queue is empty; nothing to do.
    Idle,
}

/// Batch-formation rule for an idle server: a full batch of `B` starts
/// immediately; a partial queue starts once `max_wait` has elapsed since its
/// oldest request (immediately when `max_wait` is zero).
pub fn form_batch_decision(
    queue_arrivals: &VecDeque<f64>,
    batch_cap: usize,
    max_wait_s: f64,
    now: f64,
) -> BatchDecision {
    let oldest = match queue_arrivals.front() {
        None => return BatchDecision::Idle,
        Some(t) => *t,
    };
    if queue_arrivals.len() >= batch_cap {
        return BatchDecision::Form(batch_cap);
    }
    if max_wait_s <= 0.0 || now >= oldest + max_wait_s {
        return BatchDecision::Form(queue_arrivals.len());
    }
    BatchDecision::WaitUntil(oldest + max_wait_s)
}

fn noise_factor(sd: f64, rng: &mut impl Rng) -> f64 {
    let eps = Normal::new(0.0, sd)
        .expect("noise sd validated >= 0")
        .sample(rng)
        .clamp(-3.0 * sd, 3.0 * sd);
    (1.0 + eps).max(0.05)
}

/// Prefill duration: longest prompt over the calibrated token rate, with
/// one multiplicative noise draw.
pub fn prefill_time(members: &[SimRequest], cfg: &SimConfig, rng: &mut impl Rng) -> f64 {
    let longest = members.iter().map(|m| m.prompt_tokens).max().unwrap_or(0);
    longest as f64 / cfg.prefill_tokens_per_s * noise_factor(cfg.noise_rel_sd, rng)
}

/// Decode a batch to completion; returns the phase duration and each
/// member's completion offset from decode start.
///
/// Lockstep rounds over the active set (members that still owe tokens):
///
/// - `W == 0`: each round is one decode step costing
///   `decode_base + decode_per_seq * active`, producing one token per
///   active member.
/// - `W >= 1` (requires `k >= 2`): each round drafts pending runs in chunks
///   of `W` until `k` tokens are pending (or the member's output is fully
///   drafted), charging `draft_s_per_token` per drafted token-step; one
///   verification event (`verify_base + verify_per_seq * active`) then walks
///   each member's pending run, accepting tokens independently with
///   probability `p_acc`. A rejection commits the corrected token, discards
///   the rest of that member's pending run, and — once per round if any
///   member rejected — charges one corrective decode step.
///
/// Draw order is part of the contract: one noise factor first, then per
/// round, members in batch order, one uniform draw per pending token up to
/// and including the first rejection. One noise factor scales the whole
/// phase.
pub fn decode_time(
    members: &[SimRequest],
    draft_width: i64,
    cadence: i64,
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    if draft_width < 0 {
        return Err(Error::InvalidArgument("draft width must be >= 0".into()));
    }
    if draft_width >= 1 && cadence < 2 {
        return Err(Error::InvalidArgument(
            "verifier cadence must be >= 2 in speculative mode".into(),
        ));
    }
    let noise = noise_factor(cfg.noise_rel_sd, rng);
    let w = draft_width as u64;
    let k = cadence as u64;
    let mut committed: Vec<u64> = vec![0; members.len()];
    let mut offsets: Vec<f64> = vec![0.0; members.len()];
    let mut t = 0.0f64;

    loop {
        let active: Vec<usize> = (0..members.len())
            .filter(|&i| committed[i] < members[i].output_tokens)
            .collect();
        if active.is_empty() {
            break;
        }
        let a = active.len() as f64;
        let decode_step = cfg.decode_base_s_per_token + cfg.decode_per_seq_s_per_token * a;

        if w == 0 {
            t += decode_step;
            for &i in &active {
                committed[i] += 1;
                if committed[i] == members[i].output_tokens {
                    offsets[i] = t;
                }
            }
            continue;
        }

        // Draft phase: fill each member's pending run.
        let mut pending: Vec<u64> = Vec::with_capacity(active.len());
        let mut max_pending = 0u64;
        for &i in &active {
            let need = members[i].output_tokens - committed[i];
            let target = need.min(k);
            let mut p = 0u64;
            while p < target {
                p += w.min(need - p);
            }
            max_pending = max_pending.max(p);
            pending.push(p);
        }
        t += cfg.draft_s_per_token * max_pending as f64;

        // Verification event over all active members.
        t += cfg.verify_base_s + cfg.verify_per_seq_s * a;
        let mut any_rejection = false;
        for (slot, &i) in active.iter().enumerate() {
            let mut gained = 0u64;
            for _ in 0..pending[slot] {
                if rng.gen::<f64>() < cfg.p_acc {
                    gained += 1;
                } else {
                    // corrected token still advances the sequence
                    gained += 1;
                    any_rejection = true;
                    break;
                }
            }
            committed[i] += gained;
        }
        if any_rejection {
            t += decode_step;
        }
        for &i in &active {
            if committed[i] == members[i].output_tokens && offsets[i] == 0.0 {
                offsets[i] = t;
            }
        }
    }

    for o in offsets.iter_mut() {
        *o *= noise;
    }
    Ok((t * noise, offsets))
}

fn sim_knobs(knobs_vec: &KnobVector) -> Result<(i64, i64, usize, f64)> {
    let get = |name: &str| {
        knobs_vec
            .get(name)
            .ok_or_else(|| Error::MissingDim(name.to_string()))
    };
    let mut w = get(knobs::DIM_W)?;
    let k = get(knobs::DIM_K)?;
    let b = get(knobs::DIM_B)?;
    let wait_ms = get(knobs::DIM_MAX_WAIT_MS).unwrap_or(0);
    if knobs_vec.toggle(knobs::TOGGLE_SPEC) == Some(false) {
        w = 0;
    }
    if b < 1 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    Ok((w, k, b as usize, wait_ms.max(0) as f64 / 1000.0))
}

/// An in-flight batch: when it ends, its members, and their completion times.
struct ServingBatch {
    end: f64,
    members: Vec<SimRequest>,
    completion_times: Vec<f64>,
}

struct SegmentState {
    queue: VecDeque<SimRequest>,
    in_service: Option<ServingBatch>,
    wait_deadline: Option<f64>,
    batches: Vec<BatchRecord>,
}

impl SegmentState {
    /// Re-evaluate batch formation for an idle server at `now`.
    fn form(
        &mut self,
        now: f64,
        cfg: &SimConfig,
        w: i64,
        k: i64,
        batch_cap: usize,
        max_wait_s: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        debug_assert!(self.in_service.is_none());
        let arrivals: VecDeque<f64> = self.queue.iter().map(|r| r.arrival_s).collect();
        match form_batch_decision(&arrivals, batch_cap, max_wait_s, now) {
            BatchDecision::Idle => self.wait_deadline = None,
            BatchDecision::WaitUntil(t) => self.wait_deadline = Some(t),
            BatchDecision::Form(n) => {
                self.wait_deadline = None;
                let members: Vec<SimRequest> = self.queue.drain(..n).collect();
                let prefill = prefill_time(&members, cfg, rng);
                let (decode, offsets) = decode_time(&members, w, k, cfg, rng)?;
                self.batches.push(BatchRecord {
                    members: members.iter().map(|m| m.id).collect(),
                    formed_at: now,
                    prefill_s: prefill,
                    decode_s: decode,
                });
                let completion_times = offsets.iter().map(|o| now + prefill + o).collect();
                self.in_service = Some(ServingBatch {
                    end: now + prefill + decode,
                    members,
                    completion_times,
                });
            }
        }
        Ok(())
    }
}

/// Run one measurement segment at the given knobs.
///
/// The event loop runs until both stop conditions hold (completions and
/// simulated time); requests still queued at cutoff are excluded from the
/// traces and reported as `residual`. Identical `(cfg, knobs, seed)` yield
/// identical results.
pub fn simulate_segment(cfg: &SimConfig, knobs_vec: &KnobVector) -> Result<SegmentResult> {
    simulate_segment_seeded(cfg, knobs_vec, cfg.seed)
}

/// [`simulate_segment`] with an explicit seed overriding `cfg.seed`.
pub fn simulate_segment_seeded(
    cfg: &SimConfig,
    knobs_vec: &KnobVector,
    segment_seed: u64,
) -> Result<SegmentResult> {
    cfg.validate()?;
    let (w, k, batch_cap, max_wait_s) = sim_knobs(knobs_vec)?;
    if w >= 1 && k < 2 {
        return Err(Error::InvalidArgument(
            "verifier cadence must be >= 2 in speculative mode".into(),
        ));
    }
    if cfg.mean_rate() <= 0.0 {
        return Err(Error::Simulator(
            "arrival rate is zero; segment cannot terminate".into(),
        ));
    }

    let mut rng_arrivals = seed::rng_stream(segment_seed, 0);
    let mut rng_lengths = seed::rng_stream(segment_seed, 1);
    let mut rng_service = seed::rng_stream(segment_seed, 2);

    let mut stream = ArrivalStream::new(cfg)?;
    let mut next_arrival = stream.next(&mut rng_arrivals);
    let mut state = SegmentState {
        queue: VecDeque::new(),
        in_service: None,
        wait_deadline: None,
        batches: Vec::new(),
    };
    let mut traces: Vec<RequestTrace> = Vec::new();
    let mut arrivals: u64 = 0;
    let mut completions: u64 = 0;
    let mut next_id: u64 = 0;

    const EV_COMPLETION: u8 = 0;
    const EV_WAIT_EXPIRY: u8 = 1;
    const EV_ARRIVAL: u8 = 2;

    let elapsed = loop {
        // Next event; ties break completion < wait expiry < arrival.
        let completion_t = state.in_service.as_ref().map(|b| b.end);
        let (event_t, kind) = [
            (completion_t, EV_COMPLETION),
            (state.wait_deadline, EV_WAIT_EXPIRY),
            (Some(next_arrival), EV_ARRIVAL),
        ]
        .into_iter()
        .filter_map(|(t, kind)| t.map(|t| (t, kind)))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .expect("arrival stream is endless");

        match kind {
            EV_COMPLETION => {
                let batch = state.in_service.take().expect("completion event exists");
                for (m, ct) in batch.members.iter().zip(&batch.completion_times) {
                    traces.push(RequestTrace::completed(
                        m.arrival_s,
                        *ct,
                        m.prompt_tokens,
                        m.output_tokens,
                    ));
                }
                completions += batch.members.len() as u64;
                if completions >= cfg.min_completions && batch.end >= cfg.min_sim_time_s {
                    break batch.end;
                }
                state.form(batch.end, cfg, w, k, batch_cap, max_wait_s, &mut rng_service)?;
            }
            EV_WAIT_EXPIRY => {
                state.wait_deadline = None;
                if state.in_service.is_none() {
                    state.form(event_t, cfg, w, k, batch_cap, max_wait_s, &mut rng_service)?;
                }
            }
            _ => {
                let (prompt_tokens, output_tokens) = sample_lengths(cfg, &mut rng_lengths);
                state.queue.push_back(SimRequest {
                    id: next_id,
                    arrival_s: event_t,
                    prompt_tokens,
                    output_tokens,
                });
                next_id += 1;
                arrivals += 1;
                next_arrival = stream.next(&mut rng_arrivals);
                if state.in_service.is_none() {
                    state.form(event_t, cfg, w, k, batch_cap, max_wait_s, &mut rng_service)?;
                }
            }
        }
    };

    Ok(SegmentResult {
        residual: arrivals - completions,
        traces,
        batches: state.batches,
        arrivals,
        elapsed_s: elapsed,
    })
}
