//! Router resource constraints on Dual Sampling and the optimal operating point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fisher;
use crate::flowdist::FlowSizeDistribution;
use crate::normalize::{self, NormKind};
use crate::sampmat::{self, MethodSpec};

/// Link and memory parameters.
///
/// Capacity is in Gb/s and τ in ns, so τ·C is a number of bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceProfile {
    pub capacity_gbps: f64,
    /// Smallest packet size in bits.
    pub packet_bits: f64,
    /// Effective time per memory operation, ns.
    pub tau_ns: f64,
    /// Flow table capacity (records).
    pub t_max: f64,
    /// Average number of active flows D·λ_F.
    pub active_flows: f64,
}

pub const DEFAULT_PACKET_BITS: f64 = 320.0;

impl ResourceProfile {
    pub fn new(capacity_gbps: f64, tau_ns: f64, t_max: f64, active_flows: f64) -> Result<Self> {
        Self::with_packet_bits(capacity_gbps, DEFAULT_PACKET_BITS, tau_ns, t_max, active_flows)
    }

    pub fn with_packet_bits(
        capacity_gbps: f64,
        packet_bits: f64,
        tau_ns: f64,
        t_max: f64,
        active_flows: f64,
    ) -> Result<Self> {
        for (n, v) in [
            ("capacity", capacity_gbps),
            ("packet size", packet_bits),
            ("tau", tau_ns),
            ("T_max", t_max),
            ("active flows", active_flows),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{n} must be positive, got {v}")));
            }
        }
        Ok(Self { capacity_gbps, packet_bits, tau_ns, t_max, active_flows })
    }

    /// From SI units (bits/s, bits, seconds).
    pub fn from_si(c_bps: f64, packet_bits: f64, tau_s: f64, t_max: f64, active_flows: f64) -> Result<Self> {
        Self::with_packet_bits(c_bps / 1e9, packet_bits, tau_s * 1e9, t_max, active_flows)
    }

    /// Bits arriving during one memory operation.
    fn tau_c_bits(&self) -> f64 {
        self.tau_ns * self.capacity_gbps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PfBinding {
    /// p̂_f = T_max/(Dλ_F)
    Table,
    /// p̂_f = P/(τC)
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Caps {
    pub pf_hat: f64,
    pub pp_hat: f64,
    pub pf_binding: PfBinding,
    pub pf_saturated: bool,
    pub pp_saturated: bool,
}

/// p̂_f = min(T_max/(Dλ_F), P/(τC)) and p̂_p = P/(2τC), each capped at 1.
pub fn constraints(profile: &ResourceProfile) -> Caps {
    let table = profile.t_max / profile.active_flows;
    let lookup = profile.packet_bits / profile.tau_c_bits();
    let pp = profile.packet_bits / (2.0 * profile.tau_c_bits());
    let (pf, binding) = if table <= lookup { (table, PfBinding::Table) } else { (lookup, PfBinding::Capacity) };
    Caps {
        pf_hat: pf.min(1.0),
        pp_hat: pp.min(1.0),
        pf_binding: binding,
        pf_saturated: pf >= 1.0,
        pp_saturated: pp >= 1.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalDs {
    pub spec: MethodSpec,
    pub caps: Caps,
    /// ESR achieved at the corner, when a distribution is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub esr: Option<f64>,
}

/// The constrained optimum DS(p̂_f, p̂_p): both caps active.
pub fn optimal_ds(profile: &ResourceProfile, dist: Option<&FlowSizeDistribution>) -> Result<OptimalDs> {
    let caps = constraints(profile);
    let spec = MethodSpec::ds(caps.pf_hat, caps.pp_hat)?;
    let esr = dist.map(|d| normalize::rate(&spec, d, NormKind::Esr));
    Ok(OptimalDs { spec, caps, esr })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub base: Caps,
    pub doubled_t_max: Caps,
    pub doubled_capacity: Caps,
    pub base_crlb: Vec<f64>,
    /// crlb(2·T_max) / crlb, per size.
    pub ratio_t_max: Vec<f64>,
    /// crlb(2·C) / crlb, per size.
    pub ratio_capacity: Vec<f64>,
    /// p̂_f table-bound in all three profiles, no cap at 1.
    pub interior: bool,
    /// All `ratio_t_max` within 15% of 1/2.
    pub t_max_ok: bool,
    /// All `ratio_capacity` within 15% of 2.
    pub capacity_ok: bool,
}

fn corner_crlb(caps: &Caps, dist: &FlowSizeDistribution) -> Result<Vec<f64>> {
    let m = sampmat::build(&MethodSpec::ds(caps.pf_hat, caps.pp_hat)?, dist.w())?;
    fisher::crlb_diag(&m, dist)
}

/// CRLB diagonals at the corner for the profile, for 2·T_max and for 2·C.
pub fn crlb_scaling_report(profile: &ResourceProfile, dist: &FlowSizeDistribution) -> Result<ScalingReport> {
    let base = constraints(profile);
    let mut t2 = *profile;
    t2.t_max *= 2.0;
    let mut c2 = *profile;
    c2.capacity_gbps *= 2.0;
    let (doubled_t_max, doubled_capacity) = (constraints(&t2), constraints(&c2));
    for (name, c) in [("base", &base), ("2*T_max", &doubled_t_max), ("2*C", &doubled_capacity)] {
        if c.pf_saturated || c.pp_saturated {
            return Err(Error::CapSaturated(format!("{name} profile")));
        }
    }
    let b = corner_crlb(&base, dist)?;
    let t = corner_crlb(&doubled_t_max, dist)?;
    let c = corner_crlb(&doubled_capacity, dist)?;
    let ratio_t_max: Vec<f64> = t.iter().zip(&b).map(|(x, y)| x / y).collect();
    let ratio_capacity: Vec<f64> = c.iter().zip(&b).map(|(x, y)| x / y).collect();
    let interior = [base, doubled_t_max, doubled_capacity]
        .iter()
        .all(|c| c.pf_binding == PfBinding::Table);
    Ok(ScalingReport {
        t_max_ok: ratio_t_max.iter().all(|r| (r / 0.5 - 1.0).abs() <= 0.15),
        capacity_ok: ratio_capacity.iter().all(|r| (r / 2.0 - 1.0).abs() <= 0.15),
        base,
        doubled_t_max,
        doubled_capacity,
        base_crlb: b,
        ratio_t_max,
        ratio_capacity,
        interior,
    })
}

/// Result of comparing the corner against a grid of feasible (p_f, p_p).
#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    /// θ₂ ≥ ((D−1)/D)θ₁(1−θ₁): the corner is also optimal for j = 1.
    pub j1_condition: bool,
    /// (grid p_f, grid p_p, j) where a grid point beats the corner, j ≥ 2.
    pub violations: Vec<(f64, f64, usize)>,
    /// Same for j = 1 (only a violation when `j1_condition` holds).
    pub j1_violations: Vec<(f64, f64)>,
}

/// Check that the corner's CRLB diagonals are no larger than at any point of an
/// n×n grid inside the box (0, p̂_f] × (0, p̂_p].
pub fn corner_dominance(profile: &ResourceProfile, dist: &FlowSizeDistribution, n: usize) -> Result<DominanceReport> {
    let caps = constraints(profile);
    let corner = corner_crlb(&caps, dist)?;
    let th = dist.theta();
    let d = dist.mean();
    let j1_condition = dist.w() < 2 || th[1] >= (d - 1.0) / d * th[0] * (1.0 - th[0]);
    let mut violations = Vec::new();
    let mut j1_violations = Vec::new();
    for a in 1..=n {
        for b in 1..=n {
            let pf = caps.pf_hat * a as f64 / n as f64;
            let pp = caps.pp_hat * b as f64 / n as f64;
            let m = sampmat::build(&MethodSpec::ds(pf, pp)?, dist.w())?;
            let g = fisher::crlb_diag(&m, dist)?;
            for j in 0..g.len() {
                if corner[j] > g[j] * (1.0 + 1e-9) {
                    if j == 0 {
                        if j1_condition {
                            j1_violations.push((pf, pp));
                        }
                    } else {
                        violations.push((pf, pp, j + 1));
                    }
                }
            }
        }
    }
    Ok(DominanceReport { j1_condition, violations, j1_violations })
}
