//! Method comparisons under a shared normalization, and checks of the
//! diagonal ranking results between methods.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fisher;
use crate::flowdist::FlowSizeDistribution;
use crate::normalize::{self, DsFree, NormKind, NormalizationSpec};
use crate::sampmat::{self, Method, MethodSpec};

/// Relative slack for "a ≤ b" between diagonals.
pub const REL_TOL: f64 = 1e-9;

fn le(a: f64, b: f64) -> bool {
    a <= b + REL_TOL * b.abs().max(a.abs())
}

/// A method to include in a comparison. DS needs one parameter fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodRequest {
    pub method: Method,
    pub ds: Option<DsFree>,
}

impl MethodRequest {
    pub fn new(method: Method) -> Self {
        Self { method, ds: None }
    }

    pub fn ds_pp(pp: f64) -> Self {
        Self { method: Method::Ds, ds: Some(DsFree::Pp(pp)) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonEntry {
    pub spec: MethodSpec,
    pub label: String,
    pub rate: f64,
    pub crlb_diag: Vec<f64>,
    pub crlb_sqrt: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Dropped {
    pub method: Method,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRun {
    pub w: usize,
    pub mean: f64,
    pub norm: NormalizationSpec,
    pub entries: Vec<ComparisonEntry>,
    pub dropped: Vec<Dropped>,
}

fn normalized_entry(dist: &FlowSizeDistribution, norm: &NormalizationSpec, req: &MethodRequest) -> Result<ComparisonEntry> {
    let spec = normalize::invert(req.method, norm.p, dist, norm.kind, req.ds)?;
    let rate = normalize::rate(&spec, dist, norm.kind);
    if (rate - norm.p).abs() > 1e-8 {
        return Err(Error::Infeasible(format!("{spec} reaches rate {rate}, not {}", norm.p)));
    }
    let m = sampmat::build(&spec, dist.w())?;
    let crlb_diag = fisher::crlb_diag(&m, dist)?;
    let crlb_sqrt = crlb_diag.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(ComparisonEntry { label: spec.to_string(), spec, rate, crlb_diag, crlb_sqrt })
}

/// Normalize every requested method to `norm` and evaluate its per-size CRLB.
/// Methods that cannot be normalized or evaluated are dropped and listed.
pub fn run_comparison(
    dist: &FlowSizeDistribution,
    norm: &NormalizationSpec,
    requests: &[MethodRequest],
) -> ComparisonRun {
    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for req in requests {
        match normalized_entry(dist, norm, req) {
            Ok(e) => entries.push(e),
            Err(e) => dropped.push(Dropped { method: req.method, error: e.name().into(), message: e.to_string() }),
        }
    }
    ComparisonRun { w: dist.w(), mean: dist.mean(), norm: *norm, entries, dropped }
}

impl ComparisonRun {
    /// Long-format CSV `k,method,sqrt_crlb`, sorted by k.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let map = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(["k", "method", "sqrt_crlb"]).map_err(map)?;
        for k in 0..self.w {
            for e in &self.entries {
                wr.write_record([(k + 1).to_string(), e.label.clone(), format!("{:e}", e.crlb_sqrt[k])])
                    .map_err(map)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn entry(&self, method: Method) -> Option<&ComparisonEntry> {
        self.entries.iter().find(|e| e.spec.method == method)
    }
}

/// Diagonals of J⁻¹ for two methods; `reversals` lists the sizes j (1-based)
/// where the expected-better method is worse.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub better: MethodSpec,
    pub other: MethodSpec,
    pub better_diag: Vec<f64>,
    pub other_diag: Vec<f64>,
    pub reversals: Vec<usize>,
}

impl PairReport {
    fn new(dist: &FlowSizeDistribution, better: MethodSpec, other: MethodSpec) -> Result<Self> {
        let a = fisher::jinv_diag(&sampmat::build(&better, dist.w())?, dist)?;
        let b = fisher::jinv_diag(&sampmat::build(&other, dist.w())?, dist)?;
        let reversals = (0..a.len()).filter(|&j| !le(a[j], b[j])).map(|j| j + 1).collect();
        Ok(Self { better, other, better_diag: a, other_diag: b, reversals })
    }

    /// No reversal at any size j ≥ `from`.
    pub fn holds_from(&self, from: usize) -> bool {
        self.reversals.iter().all(|&j| j < from)
    }

    pub fn reversed_at(&self, j: usize) -> bool {
        self.reversals.contains(&j)
    }
}

/// PS+SYN against PS at the same normalized rate.
pub fn check_ps_vs_pssyn(dist: &FlowSizeDistribution, p: f64, kind: NormKind) -> Result<PairReport> {
    let syn = normalize::invert(Method::PsSyn, p, dist, kind, None)?;
    PairReport::new(dist, syn, MethodSpec::ps(p)?)
}

/// PS+SYN+SEQ against PS+SEQ at the same normalized rate.
pub fn check_pssynseq_vs_psseq(dist: &FlowSizeDistribution, p: f64, kind: NormKind) -> Result<PairReport> {
    if dist.w() < 3 {
        return Err(Error::InvalidParam("needs W >= 3".into()));
    }
    let syn = normalize::invert(Method::PsSynSeq, p, dist, kind, None)?;
    PairReport::new(dist, syn, MethodSpec::ps_seq(p)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ShFsReport {
    pub pair: PairReport,
    /// θ₂ ≥ θ₁(1−θ₁), or W = 2.
    pub j1_condition: bool,
    pub fs_wins_j1: bool,
}

/// FS against SH. The SH rate is the same under PPR and ESR.
pub fn check_sh_vs_fs(dist: &FlowSizeDistribution, p: f64, kind: NormKind) -> Result<ShFsReport> {
    let fs = normalize::invert(Method::Fs, p, dist, kind, None)?;
    let sh = normalize::invert(Method::Sh, p, dist, kind, None)?;
    let pair = PairReport::new(dist, fs, sh)?;
    let th = dist.theta();
    let j1_condition = dist.w() == 2 || (dist.w() > 2 && th[1] >= th[0] * (1.0 - th[0]));
    Ok(ShFsReport { fs_wins_j1: !pair.reversed_at(1), j1_condition, pair })
}

#[derive(Debug, Clone, Serialize)]
pub struct DsShReport {
    pub sh_pp: f64,
    pub bound: f64,
    pub pair: PairReport,
}

/// DS(p_p = `ds_pp`) against SH under ESR at rate p. Requires
/// p_p,SH ≤ (pD−1)/(D−1) ≤ p_p,DS (the upper inequality keeps p_f ≤ 1) and
/// p_p,SH ≤ p_p,DS; otherwise `HypothesisUnmet`.
pub fn check_ds_vs_sh(dist: &FlowSizeDistribution, p: f64, ds_pp: f64) -> Result<DsShReport> {
    let d = dist.mean();
    if d * p < 1.0 {
        return Err(Error::HypothesisUnmet(format!("pD = {} < 1", p * d)));
    }
    let sh_pp = normalize::invert_sh(p, dist)?;
    let bound = if d > 1.0 { (p * d - 1.0) / (d - 1.0) } else { f64::INFINITY };
    if sh_pp > bound {
        return Err(Error::HypothesisUnmet(format!("SH p_p = {sh_pp} exceeds (pD-1)/(D-1) = {bound}")));
    }
    if sh_pp > ds_pp {
        return Err(Error::HypothesisUnmet(format!("DS p_p = {ds_pp} below SH p_p = {sh_pp}")));
    }
    if ds_pp < bound {
        return Err(Error::HypothesisUnmet(format!("DS p_p = {ds_pp} needs p_f > 1 at rate {p}")));
    }
    let ds = normalize::invert(Method::Ds, p, dist, NormKind::Esr, Some(DsFree::Pp(ds_pp)))?;
    let pair = PairReport::new(dist, ds, MethodSpec::sh(sh_pp)?)?;
    Ok(DsShReport { sh_pp, bound, pair })
}

#[derive(Debug, Clone, Serialize)]
pub struct DsMonotonicityReport {
    /// Feasible p_p values used, ascending.
    pub grid: Vec<f64>,
    /// (j, p_p) with j ≥ 2 where the diagonal rose between a grid point and the previous one.
    pub violations: Vec<(usize, f64)>,
    /// θ₂ ≥ ((D−1)/D)θ₁(1−θ₁).
    pub j1_condition: bool,
    pub j1_monotone: bool,
    /// √(θ₂/((D−1)[θ₁(1−θ₁)−θ₂])), when the condition fails and D > 1.
    pub pp_star_formula: Option<f64>,
    /// Numerical minimizer of the j = 1 diagonal along the ESR curve.
    pub pp_star_numeric: Option<f64>,
}

fn ds_esr_diag(dist: &FlowSizeDistribution, p: f64, pp: f64) -> Result<Vec<f64>> {
    let spec = normalize::invert(Method::Ds, p, dist, NormKind::Esr, Some(DsFree::Pp(pp)))?;
    fisher::jinv_diag(&sampmat::build(&spec, dist.w())?, dist)
}

/// Smallest p_p for which DS can reach ESR rate p.
pub fn ds_esr_pp_min(dist: &FlowSizeDistribution, p: f64) -> f64 {
    let d = dist.mean();
    if d > 1.0 {
        ((p * d - 1.0) / (d - 1.0)).max(0.0)
    } else {
        0.0
    }
}

/// Minimize f on [lo, hi] by a log-spaced scan followed by golden section.
fn minimize<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let n = 200;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let xs: Vec<f64> = (0..=n).map(|i| (llo + (lhi - llo) * i as f64 / n as f64).exp()).collect();
    let fx: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let i = (0..=n).min_by(|&a, &b| fx[a].total_cmp(&fx[b])).unwrap();
    let (mut a, mut b) = (xs[i.saturating_sub(1)], xs[(i + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 * b {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Walk the DS ESR curve at rate p over `pp_grid` (infeasible points skipped)
/// and check the diagonals of J⁻¹ decrease as p_p grows.
pub fn check_ds_monotonicity(dist: &FlowSizeDistribution, p: f64, pp_grid: &[f64]) -> Result<DsMonotonicityReport> {
    let lo = ds_esr_pp_min(dist, p);
    let mut grid: Vec<f64> = pp_grid.iter().copied().filter(|&x| x > 0.0 && x <= 1.0 && x >= lo).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut violations = Vec::new();
    let mut j1_monotone = true;
    let mut prev: Option<Vec<f64>> = None;
    for &pp in &grid {
        let cur = ds_esr_diag(dist, p, pp)?;
        if let Some(pr) = &prev {
            for j in 0..cur.len() {
                if !le(cur[j], pr[j]) {
                    if j == 0 {
                        j1_monotone = false;
                    } else {
                        violations.push((j + 1, pp));
                    }
                }
            }
        }
        prev = Some(cur);
    }
    let th = dist.theta();
    let d = dist.mean();
    let j1_condition = dist.w() < 2 || th[1] >= (d - 1.0) / d * th[0] * (1.0 - th[0]);
    let (mut formula, mut numeric) = (None, None);
    if !j1_condition && d > 1.0 {
        let den = (d - 1.0) * (th[0] * (1.0 - th[0]) - th[1]);
        formula = Some((th[1] / den).sqrt());
        let f = |pp: f64| ds_esr_diag(dist, p, pp).map(|v| v[0]).unwrap_or(f64::INFINITY);
        numeric = Some(minimize(f, lo.max(1e-9), 1.0));
    }
    Ok(DsMonotonicityReport {
        grid,
        violations,
        j1_condition,
        j1_monotone,
        pp_star_formula: formula,
        pp_star_numeric: numeric,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DividendReport {
    /// Smallest eigenvalue of J_{PS+SEQ} − J_PS over the largest eigenvalue
    /// of the two operands (the scale of the roundoff in the difference).
    pub ps_rel_min_eig: f64,
    /// Same for J_{PS+SYN+SEQ} − J_{PS+SYN}.
    pub pssyn_rel_min_eig: f64,
}

impl DividendReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.ps_rel_min_eig >= -tol && self.pssyn_rel_min_eig >= -tol
    }
}

fn rel_min_eig(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let (lo, _) = fisher::eigen_extremes(&(a - b));
    let s = fisher::eigen_extremes(a).1.max(fisher::eigen_extremes(b).1);
    if s == 0.0 {
        0.0
    } else {
        lo / s
    }
}

/// Fisher information gained by sequence numbers at sampling rate p.
pub fn seq_dividend(dist: &FlowSizeDistribution, p: f64) -> Result<DividendReport> {
    let w = dist.w();
    let j = |s: MethodSpec| -> Result<_> { fisher::fisher_unconstrained(&sampmat::build(&s, w)?, dist) };
    Ok(DividendReport {
        ps_rel_min_eig: rel_min_eig(&j(MethodSpec::ps_seq(p)?)?, &j(MethodSpec::ps(p)?)?),
        pssyn_rel_min_eig: rel_min_eig(&j(MethodSpec::ps_syn_seq(p)?)?, &j(MethodSpec::ps_syn(p)?)?),
    })
}

/// 2 − 2q(1+q²)/(1+q) − 2(1+3q−4q³)/(1+2q) − q², the scalar displayed in
/// the counterexample to J_FS ≥ J_PS (W = 2, θ = [½, ½]).
pub fn fs_ps_counterexample_scalar(q: f64) -> f64 {
    2.0 - 2.0 * q * (1.0 + q * q) / (1.0 + q) - 2.0 * (1.0 + 3.0 * q - 4.0 * q * q * q) / (1.0 + 2.0 * q) - q * q
}

/// Extreme eigenvalues of J_FS − J_PS with p_f = p_p = p. A negative
/// smallest eigenvalue shows FS is not PSD-better than PS.
pub fn fs_minus_ps_eigen(dist: &FlowSizeDistribution, p: f64) -> Result<(f64, f64)> {
    let w = dist.w();
    let fs = fisher::fisher_unconstrained(&sampmat::build(&MethodSpec::fs(p)?, w)?, dist)?;
    let ps = fisher::fisher_unconstrained(&sampmat::build(&MethodSpec::ps(p)?, w)?, dist)?;
    Ok(fisher::eigen_extremes(&(fs - ps)))
}

/// A distribution with two large small-flow masses and a thin tail
/// ({0.4808, 0.4808, 8 × 0.004808}), renormalized to sum to 1.
pub fn skewed_counterexample_theta() -> FlowSizeDistribution {
    let mut t = vec![0.4808, 0.4808];
    t.extend(std::iter::repeat(0.004808).take(8));
    FlowSizeDistribution::from_weights(&t).expect("positive weights")
}
