//! Logical knob spaces, clamping, and deterministic neighbor generation.
//!
//! The controller is defined over stack-independent logical knobs (queueing
//! pressure, batch formation, speculation aggressiveness); backends map them
//! to concrete flags. Neighbor enumeration is deterministic: dims in space
//! order with the minus step before the plus step, then toggle flips, with
//! clamped-to-self candidates and duplicates dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM_CONC: &str = "conc";
pub const DIM_MAX_SEQS: &str = "max_seqs";
pub const DIM_SPEC_TOKENS: &str = "spec_tokens";
pub const TOGGLE_SPEC: &str = "spec_enabled";

pub const DIM_W: &str = "W";
pub const DIM_K: &str = "k";
pub const DIM_B: &str = "B";
pub const DIM_MAX_WAIT_MS: &str = "max_wait_ms";

/// Upper bound of the simulator's verifier-cadence dim, used by the
/// simulator score's verification-frequency cost term.
pub const SIM_K_MAX: i64 = 16;

/// One integer knob dimension with bounds and a fixed neighbor step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnobDim {
    pub name: String,
    pub min: i64,
    pub max: i64,
    pub step: i64,
    pub unit: String,
}

impl KnobDim {
    pub fn new(name: &str, min: i64, max: i64, step: i64, unit: &str) -> Self {
        assert!(min <= max, "dim {name}: min > max");
        assert!(step >= 1, "dim {name}: step < 1");
        KnobDim {
            name: name.to_string(),
            min,
            max,
            step,
            unit: unit.to_string(),
        }
    }

    pub fn clamp(&self, v: i64) -> i64 {
        v.clamp(self.min, self.max)
    }
}

/// An ordered set of knob dimensions plus boolean toggles.
///
/// The dim order is part of the contract: neighbor enumeration and CSV
/// column order follow it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnobSpace {
    pub dims: Vec<KnobDim>,
    pub toggles: Vec<String>,
}

impl KnobSpace {
    pub fn dim(&self, name: &str) -> Option<&KnobDim> {
        self.dims.iter().find(|d| d.name == name)
    }

    /// All dim and toggle names in enumeration order.
    pub fn names(&self) -> Vec<String> {
        self.dims
            .iter()
            .map(|d| d.name.clone())
            .chain(self.toggles.iter().cloned())
            .collect()
    }

    /// Check that `k` carries every dim and toggle of this space.
    pub fn validate(&self, k: &KnobVector) -> Result<()> {
        for d in &self.dims {
            if !k.values.contains_key(&d.name) {
                return Err(Error::MissingDim(d.name.clone()));
            }
        }
        for t in &self.toggles {
            if !k.toggles.contains_key(t) {
                return Err(Error::MissingDim(t.clone()));
            }
        }
        Ok(())
    }
}

/// A point in a knob space: `{dim name: value}` plus `{toggle name: bool}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct KnobVector {
    pub values: BTreeMap<String, i64>,
    #[serde(default)]
    pub toggles: BTreeMap<String, bool>,
}

impl KnobVector {
    pub fn new(values: &[(&str, i64)], toggles: &[(&str, bool)]) -> Self {
        KnobVector {
            values: values
                .iter()
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
            toggles: toggles
                .iter()
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.values.get(name).copied()
    }

    pub fn toggle(&self, name: &str) -> Option<bool> {
        self.toggles.get(name).copied()
    }

    pub fn with_value(&self, name: &str, v: i64) -> Self {
        let mut out = self.clone();
        out.values.insert(name.to_string(), v);
        out
    }

    pub fn with_toggle(&self, name: &str, v: bool) -> Self {
        let mut out = self.clone();
        out.toggles.insert(name.to_string(), v);
        out
    }

    /// Compact human-readable form, e.g. `conc=8 max_seqs=8 spec_tokens=8 spec_enabled=on`.
    pub fn label(&self, space: &KnobSpace) -> String {
        let mut parts: Vec<String> = space
            .dims
            .iter()
            .filter_map(|d| self.get(&d.name).map(|v| format!("{}={}", d.name, v)))
            .collect();
        for t in &space.toggles {
            if let Some(b) = self.toggle(t) {
                parts.push(format!("{}={}", t, if b { "on" } else { "off" }));
            }
        }
        parts.join(" ")
    }
}

/// Knob space for live OpenAI-compatible servers: client concurrency,
/// server batch limit, speculative token width, speculation toggle.
pub fn live_space() -> KnobSpace {
    KnobSpace {
        dims: vec![
            KnobDim::new(DIM_CONC, 2, 16, 2, "workers"),
            KnobDim::new(DIM_MAX_SEQS, 4, 16, 3, "sequences"),
            KnobDim::new(DIM_SPEC_TOKENS, 0, 16, 4, "tokens"),
        ],
        toggles: vec![TOGGLE_SPEC.to_string()],
    }
}

/// Default starting point for live tuning runs.
pub fn live_start() -> KnobVector {
    KnobVector::new(
        &[(DIM_CONC, 8), (DIM_MAX_SEQS, 8), (DIM_SPEC_TOKENS, 8)],
        &[(TOGGLE_SPEC, true)],
    )
}

/// Knob space for the simulator: draft width, verifier cadence, batch size,
/// optional batch-formation wait.
pub fn sim_space() -> KnobSpace {
    KnobSpace {
        dims: vec![
            KnobDim::new(DIM_W, 1, 4, 1, "tokens"),
            KnobDim::new(DIM_K, 2, SIM_K_MAX, 2, "tokens"),
            KnobDim::new(DIM_B, 1, 32, 4, "requests"),
            KnobDim::new(DIM_MAX_WAIT_MS, 0, 50, 10, "ms"),
        ],
        toggles: vec![],
    }
}

/// Default starting point for simulator tuning runs.
pub fn sim_start() -> KnobVector {
    KnobVector::new(
        &[(DIM_W, 2), (DIM_K, 12), (DIM_B, 16), (DIM_MAX_WAIT_MS, 0)],
        &[],
    )
}

/// Mid-point configuration used as the base for one-knob ablations.
pub fn sim_midpoint() -> KnobVector {
    KnobVector::new(
        &[(DIM_W, 2), (DIM_K, 8), (DIM_B, 8), (DIM_MAX_WAIT_MS, 0)],
        &[],
    )
}

/// Move every value of `k` to the nearest bound of its dim; toggles pass through.
pub fn clamp(space: &KnobSpace, k: &KnobVector) -> Result<KnobVector> {
    space.validate(k)?;
    let mut out = k.clone();
    for d in &space.dims {
        let v = out.values.get_mut(&d.name).expect("validated above");
        *v = d.clamp(*v);
    }
    Ok(out)
}

/// Deterministic one-hop neighborhood of `k`.
///
/// For each dim in space order: `k - step` then `k + step`, clamped to
/// bounds; then each toggle flipped. Candidates that collapse onto `k`
/// after clamping are dropped, as are duplicates.
pub fn neighbors(space: &KnobSpace, k: &KnobVector) -> Result<Vec<KnobVector>> {
    space.validate(k)?;
    let mut out: Vec<KnobVector> = Vec::with_capacity(2 * space.dims.len() + space.toggles.len());
    let push = |cand: KnobVector, out: &mut Vec<KnobVector>| {
        if cand != *k && !out.contains(&cand) {
            out.push(cand);
        }
    };
    for d in &space.dims {
        let v = k.get(&d.name).expect("validated above");
        for cand in [d.clamp(v - d.step), d.clamp(v + d.step)] {
            push(k.with_value(&d.name, cand), &mut out);
        }
    }
    for t in &space.toggles {
        let b = k.toggle(t).expect("validated above");
        push(k.with_toggle(t, !b), &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn live_space_matches_documented_bounds() {
        let s = live_space();
        assert_eq!(s.dims.len(), 3);
        assert_eq!(s.toggles, vec![TOGGLE_SPEC.to_string()]);
        assert_eq!((s.dims[0].min, s.dims[0].max, s.dims[0].step), (2, 16, 2));
        assert_eq!(s.dims[1].name, DIM_MAX_SEQS);
        assert_eq!((s.dims[1].min, s.dims[1].max, s.dims[1].step), (4, 16, 3));
        assert_eq!(s.dims[2].name, DIM_SPEC_TOKENS);
        assert_eq!((s.dims[2].min, s.dims[2].max, s.dims[2].step), (0, 16, 4));
    }

    #[test]
    fn sim_space_matches_documented_bounds() {
        let s = sim_space();
        let names: Vec<&str> = s.dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec![DIM_W, DIM_K, DIM_B, DIM_MAX_WAIT_MS]);
        assert_eq!((s.dims[0].min, s.dims[0].max), (1, 4));
        assert_eq!((s.dims[1].min, s.dims[1].max), (2, 16));
        assert_eq!((s.dims[2].min, s.dims[2].max), (1, 32));
        assert_eq!(s.dims[3].max, 50);
    }

    #[test]
    fn clamp_moves_to_nearest_bound() {
        let s = live_space();
        let k = live_start().with_value(DIM_CONC, 18);
        assert_eq!(clamp(&s, &k).unwrap().get(DIM_CONC), Some(16));
        let k = live_start().with_value(DIM_SPEC_TOKENS, -4);
        assert_eq!(clamp(&s, &k).unwrap().get(DIM_SPEC_TOKENS), Some(0));
        let k = live_start();
        assert_eq!(clamp(&s, &k).unwrap(), k);
    }

    #[test]
    fn clamp_rejects_missing_dim() {
        let s = live_space();
        let k = KnobVector::new(&[(DIM_CONC, 8)], &[(TOGGLE_SPEC, true)]);
        assert!(matches!(clamp(&s, &k), Err(Error::MissingDim(_))));
    }

    #[test]
    fn neighbors_of_live_start() {
        let s = live_space();
        let n = neighbors(&s, &live_start()).unwrap();
        let expect = vec![
            live_start().with_value(DIM_CONC, 6),
            live_start().with_value(DIM_CONC, 10),
            live_start().with_value(DIM_MAX_SEQS, 5),
            live_start().with_value(DIM_MAX_SEQS, 11),
            live_start().with_value(DIM_SPEC_TOKENS, 4),
            live_start().with_value(DIM_SPEC_TOKENS, 12),
            live_start().with_toggle(TOGGLE_SPEC, false),
        ];
        assert_eq!(n, expect);
    }

    #[test]
    fn neighbors_drop_clamped_to_self() {
        let s = live_space();
        let k = live_start().with_value(DIM_CONC, 16);
        let n = neighbors(&s, &k).unwrap();
        assert_eq!(n.len(), 6);
        assert!(n.iter().all(|c| c.get(DIM_CONC) != Some(18)));

        let k = KnobVector::new(
            &[(DIM_W, 1), (DIM_K, 2), (DIM_B, 12), (DIM_MAX_WAIT_MS, 0)],
            &[],
        );
        let n = neighbors(&sim_space(), &k).unwrap();
        let expect = vec![
            k.with_value(DIM_W, 2),
            k.with_value(DIM_K, 4),
            k.with_value(DIM_B, 8),
            k.with_value(DIM_B, 16),
            k.with_value(DIM_MAX_WAIT_MS, 10),
        ];
        assert_eq!(n, expect);
    }

    #[test]
    fn neighbors_are_pure() {
        let s = sim_space();
        let k = sim_start();
        assert_eq!(neighbors(&s, &k).unwrap(), neighbors(&s, &k).unwrap());
    }

    #[test]
    fn knob_vector_serializes_as_maps() {
        let k = live_start();
        let j = serde_json::to_value(&k).unwrap();
        assert_eq!(j["values"]["conc"], 8);
        assert_eq!(j["toggles"]["spec_enabled"], true);
        let back: KnobVector = serde_json::from_value(j).unwrap();
        assert_eq!(back, k);
    }
}
