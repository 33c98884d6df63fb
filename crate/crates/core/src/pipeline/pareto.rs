//! Accuracy-versus-cost frontiers.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Params,
    Macs,
    Cycles,
    /// Deployed bytes of weights and biases.
    Memory,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Params, Axis::Macs, Axis::Cycles, Axis::Memory];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Params => "params",
            Axis::Macs => "macs",
            Axis::Cycles => "cycles",
            Axis::Memory => "memory",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown axis `{s}` (params | macs | cycles | memory)")))
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluated model. `spec` is a bit-width list such as `8-4-4-8`, or
/// `float32`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub model_id: String,
    pub spec: String,
    pub lambda: f64,
    pub bas_mean: f64,
    pub bas_std: f64,
    pub params: u64,
    pub macs: u64,
    /// Simulated cycles per frame; absent for floating-point models.
    pub cycles: Option<u64>,
    pub memory: u64,
}

impl ParetoPoint {
    pub fn cost(&self, axis: Axis) -> Option<u64> {
        match axis {
            Axis::Params => Some(self.params),
            Axis::Macs => Some(self.macs),
            Axis::Cycles => self.cycles,
            Axis::Memory => Some(self.memory),
        }
    }

    pub fn is_float(&self) -> bool {
        self.spec == "float32"
    }
}

/// `a` dominates `b` on `axis`: no worse in both, strictly better in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint, axis: Axis) -> bool {
    match (a.cost(axis), b.cost(axis)) {
        (Some(ca), Some(cb)) => a.bas_mean >= b.bas_mean && ca <= cb && (a.bas_mean > b.bas_mean || ca < cb),
        _ => false,
    }
}

/// Non-dominated points that have a cost on `axis`, sorted by cost then
/// model id. Exact duplicates (same cost and BAS) keep only the lowest id.
pub fn pareto_extract(points: &[ParetoPoint], axis: Axis) -> Vec<ParetoPoint> {
    let mut cands: Vec<&ParetoPoint> = points.iter().filter(|p| p.cost(axis).is_some()).collect();
    cands.sort_by(|a, b| {
        a.cost(axis)
            .cmp(&b.cost(axis))
            .then(b.bas_mean.total_cmp(&a.bas_mean))
            .then(a.model_id.cmp(&b.model_id))
    });
    let mut out: Vec<ParetoPoint> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for p in cands {
        // sorted by cost, so p survives iff it beats every cheaper point
        if p.bas_mean > best {
            best = p.bas_mean;
            out.push(p.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: &str, bas: f64, params: u64) -> ParetoPoint {
        ParetoPoint {
            model_id: id.into(),
            spec: "8-8-8-8".into(),
            lambda: 0.0,
            bas_mean: bas,
            bas_std: 0.0,
            params,
            macs: params,
            cycles: None,
            memory: params,
        }
    }

    #[test]
    fn single_and_dominated() {
        let a = pt("a", 0.9, 10);
        assert_eq!(pareto_extract(&[a.clone()], Axis::Params), vec![a.clone()]);
        let b = pt("b", 0.8, 20);
        assert_eq!(pareto_extract(&[b, a.clone()], Axis::Params), vec![a]);
    }

    #[test]
    fn duplicates_keep_lowest_id() {
        let f = pareto_extract(&[pt("z", 0.9, 10), pt("m", 0.9, 10)], Axis::Params);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].model_id, "m");
    }

    #[test]
    fn missing_cycles_are_skipped() {
        assert!(pareto_extract(&[pt("a", 0.9, 10)], Axis::Cycles).is_empty());
    }

    #[test]
    fn axis_names() {
        for a in Axis::ALL {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert!("flops".parse::<Axis>().is_err());
    }
}
