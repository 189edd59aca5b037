//! PPR and ESR normalizations: average sampling rate of a method and the
//! parameter that achieves a target rate.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flowdist::FlowSizeDistribution;
use crate::sampmat::{Method, MethodSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// Packet processing rate: packets initially sampled.
    Ppr,
    /// Effective sampling rate: packets reaching the flow table.
    Esr,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Ppr => "PPR",
            NormKind::Esr => "ESR",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppr" => Ok(NormKind::Ppr),
            "esr" => Ok(NormKind::Esr),
            _ => Err(Error::InvalidParam(format!("unknown normalization {s:?}"))),
        }
    }
}

impl Serialize for NormKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationSpec {
    pub kind: NormKind,
    pub p: f64,
}

impl NormalizationSpec {
    pub fn new(kind: NormKind, p: f64) -> Result<Self> {
        if p > 0.0 && p <= 1.0 {
            Ok(Self { kind, p })
        } else {
            Err(Error::InvalidParam(format!("target rate {p} not in (0,1]")))
        }
    }
}

/// SH average sampling rate, (p_p/D) Σ_j j Σ_{k≥j} q^{k−j} θ_k.
pub fn sh_rate(pp: f64, dist: &FlowSizeDistribution) -> f64 {
    let q = 1.0 - pp;
    let th = dist.theta();
    let mut tail = 0.0;
    let mut acc = 0.0;
    for j in (1..=th.len()).rev() {
        tail = th[j - 1] + q * tail;
        acc += j as f64 * tail;
    }
    (pp / dist.mean() * acc).min(1.0)
}

/// Average sampling rate of `spec` on `dist` under `kind`.
pub fn rate(spec: &MethodSpec, dist: &FlowSizeDistribution, kind: NormKind) -> f64 {
    let d = dist.mean();
    let p = spec.pp();
    match (spec.method, kind) {
        (Method::Ps | Method::PsSeq, _) => p,
        (Method::PsSyn | Method::PsSynSeq, NormKind::Ppr) => p,
        (Method::PsSyn | Method::PsSynSeq, NormKind::Esr) => p * (p * (d - 1.0) + 1.0) / d,
        (Method::Fs, _) => spec.pf(),
        (Method::Sh, _) => sh_rate(p, dist),
        (Method::Ds, NormKind::Ppr) => spec.pf() / d + p * (1.0 - 1.0 / d),
        (Method::Ds, NormKind::Esr) => spec.pf() * (p * (d - 1.0) + 1.0) / d,
    }
}

/// The DS parameter held fixed during inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DsFree {
    /// Fix p_p, solve for p_f.
    Pp(f64),
    /// Fix p_f, solve for p_p.
    Pf(f64),
}

fn feasible(name: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x <= 1.0 + 1e-12 {
        Ok(x.min(1.0))
    } else {
        Err(Error::Infeasible(format!("required {name} = {x} is outside (0,1]")))
    }
}

/// Invert the rate map: the parameters of `method` giving average rate `p`.
pub fn invert(
    method: Method,
    p: f64,
    dist: &FlowSizeDistribution,
    kind: NormKind,
    free: Option<DsFree>,
) -> Result<MethodSpec> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParam(format!("target rate {p} not in (0,1]")));
    }
    let d = dist.mean();
    let dm1 = d - 1.0;
    let single_packet = dm1.abs() < 1e-12;
    match method {
        Method::Ps => MethodSpec::ps(p),
        Method::PsSeq => MethodSpec::ps_seq(p),
        Method::Fs => MethodSpec::fs(p),
        Method::PsSyn | Method::PsSynSeq => {
            let pp = match kind {
                NormKind::Ppr => p,
                // rationalized root of p_p(p_p(D−1)+1)/D = p
                NormKind::Esr => 2.0 * p * d / (1.0 + (1.0 + 4.0 * p * d * dm1).sqrt()),
            };
            MethodSpec::new(method, Some(feasible("p_p", pp)?), None)
        }
        Method::Sh => MethodSpec::sh(invert_sh(p, dist)?),
        Method::Ds => {
            let free = free.ok_or_else(|| Error::InvalidParam("DS inversion needs p_p or p_f fixed".into()))?;
            let (pf, pp) = match (kind, free) {
                (NormKind::Ppr, DsFree::Pp(pp)) => (p * d - pp * dm1, pp),
                (NormKind::Esr, DsFree::Pp(pp)) => (p * d / (pp * dm1 + 1.0), pp),
                (_, DsFree::Pf(_)) if single_packet => {
                    return Err(Error::Infeasible("p_p is not identifiable when D = 1".into()))
                }
                (NormKind::Ppr, DsFree::Pf(pf)) => (pf, (p * d - pf) / dm1),
                (NormKind::Esr, DsFree::Pf(pf)) => (pf, (p * d / pf - 1.0) / dm1),
            };
            MethodSpec::ds(feasible("p_f", pf)?, feasible("p_p", pp)?)
        }
    }
}

/// Solve sh_rate(p_p) = p by bisection on [1e-12, 1].
pub fn invert_sh(p: f64, dist: &FlowSizeDistribution) -> Result<f64> {
    let (mut lo, mut hi) = (1e-12, 1.0);
    if p < sh_rate(lo, dist) {
        return Err(Error::Infeasible(format!("SH cannot reach rate {p}")));
    }
    if p >= 1.0 {
        return Ok(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sh_rate(mid, dist) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A point of the DS ESR level curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub pp: f64,
    /// `None` when the required p_f exceeds 1.
    pub pf: Option<f64>,
}

/// p_f(p_p; p) = pD/(p_p(D−1)+1) over a grid of p_p.
pub fn ds_esr_curve(p: f64, dist: &FlowSizeDistribution, pp_grid: &[f64]) -> Vec<CurvePoint> {
    let d = dist.mean();
    pp_grid
        .iter()
        .map(|&pp| {
            let pf = p * d / (pp * (d - 1.0) + 1.0);
            CurvePoint { pp, pf: (pp > 0.0 && pp <= 1.0 && pf > 0.0 && pf <= 1.0).then_some(pf) }
        })
        .collect()
}
