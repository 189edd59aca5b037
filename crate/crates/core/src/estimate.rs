//! Closed-form estimators of θ from sampled flow counts, and their empirical
//! variance against the CRLB.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fisher;
use crate::flowdist::FlowSizeDistribution;
use crate::sampmat::{self, Method, MethodSpec, SamplingMatrix};
use crate::simulate::{self, SimConfig, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// θ̂ = B̃⁻¹[M′₁..M′_W]/N (SYN-based methods).
    Unbiased,
    /// θ̂ = B̃⁻¹ (p/ΣM′_{j≥1}) [M′₁..M′_W] (SYN-based methods); sums to one.
    MleSyn,
    /// θ̂ = B̃⁻¹[p(M′₀+M′₁), M′₂..M′_W]/N (SH).
    MleSh,
}

impl Estimator {
    /// The estimator used by default for a method.
    pub fn for_method(method: Method) -> Result<Self> {
        if method.is_syn_based() {
            Ok(Estimator::Unbiased)
        } else if method == Method::Sh {
            Ok(Estimator::MleSh)
        } else {
            Err(Error::UnsupportedMethod(method.to_string()))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Unbiased => "unbiased",
            Estimator::MleSyn => "mle",
            Estimator::MleSh => "mle-sh",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unbiased" => Ok(Estimator::Unbiased),
            "mle" | "mle-syn" => Ok(Estimator::MleSyn),
            "mle-sh" => Ok(Estimator::MleSh),
            _ => Err(Error::InvalidParam(format!("unknown estimator {s:?}"))),
        }
    }
}

impl Serialize for Estimator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

fn check_counts(m: &SamplingMatrix, counts: &[f64], n: f64) -> Result<()> {
    if counts.len() != m.w() + 1 {
        return Err(Error::InvalidParam(format!(
            "expected {} counts (j = 0..{}), got {}",
            m.w() + 1,
            m.w(),
            counts.len()
        )));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidParam("N must be positive".into()));
    }
    Ok(())
}

fn apply_binv(m: &SamplingMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let binv = m.binv()?;
    let w = m.w();
    Ok((0..w)
        .map(|r| (r..w).map(|c| binv[(r, c)] * x[c]).sum())
        .collect())
}

fn require_syn(m: &SamplingMatrix) -> Result<()> {
    if m.spec().method.is_syn_based() {
        Ok(())
    } else {
        Err(Error::UnsupportedMethod(m.spec().method.to_string()))
    }
}

/// θ̂ = B̃⁻¹[M′₁..M′_W]/N. Entries may be negative.
pub fn estimate_unbiased(m: &SamplingMatrix, counts: &[f64], n: f64) -> Result<Vec<f64>> {
    require_syn(m)?;
    check_counts(m, counts, n)?;
    let x: Vec<f64> = counts[1..].iter().map(|c| c / n).collect();
    apply_binv(m, &x)
}

/// Maximum likelihood estimate for SYN-based methods; sums to one.
pub fn estimate_mle_syn(m: &SamplingMatrix, counts: &[f64], n: f64) -> Result<Vec<f64>> {
    require_syn(m)?;
    check_counts(m, counts, n)?;
    let survived: f64 = counts[1..].iter().sum();
    if !(survived > 0.0) {
        return Err(Error::AllEvaporated);
    }
    let p = 1.0 - m.b()[(0, 0)];
    let x: Vec<f64> = counts[1..].iter().map(|c| c * p / survived).collect();
    apply_binv(m, &x)
}

/// Maximum likelihood estimate for SH (unbiased).
pub fn estimate_mle_sh(m: &SamplingMatrix, counts: &[f64], n: f64) -> Result<Vec<f64>> {
    if m.spec().method != Method::Sh {
        return Err(Error::UnsupportedMethod(m.spec().method.to_string()));
    }
    check_counts(m, counts, n)?;
    let p = m.spec().pp();
    let mut x: Vec<f64> = counts[1..].iter().map(|c| c / n).collect();
    x[0] = p * (counts[0] + counts[1]) / n;
    apply_binv(m, &x)
}

pub fn estimate(kind: Estimator, m: &SamplingMatrix, counts: &[f64], n: f64) -> Result<Vec<f64>> {
    match kind {
        Estimator::Unbiased => estimate_unbiased(m, counts, n),
        Estimator::MleSyn => estimate_mle_syn(m, counts, n),
        Estimator::MleSh => estimate_mle_sh(m, counts, n),
    }
}

/// Euclidean projection onto the probability simplex. Biased; for display only.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Trailing simple moving average; the first `window − 1` entries average
/// what is available.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= window {
            acc -= x[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// One estimate with its context.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub method: MethodSpec,
    pub estimator: Estimator,
    pub n: f64,
    pub theta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_empirical: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crlb_reference: Option<Vec<f64>>,
}

/// Per-size empirical variance across replicates against CRLB/N.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub method: MethodSpec,
    pub estimator: Estimator,
    pub n: u64,
    pub replicates: usize,
    pub theta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var_empirical: Vec<f64>,
    pub crlb_over_n: Vec<f64>,
    /// var_empirical / crlb_over_n; `None` where the empirical variance is zero.
    pub ratio: Vec<Option<f64>>,
    /// Sizes whose empirical variance is zero (no surviving mass).
    pub flagged: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothed_var: Option<Vec<f64>>,
}

/// Simulate `config.replicates` populations of `config.n_flows` flows, apply the
/// estimator, and compare its variance with the CRLB.
///
/// `window`: `None` smooths with a 100-wide moving average only when W > 200;
/// `Some(0)` disables smoothing; `Some(w)` always smooths with width `w`.
pub fn empirical_variance_vs_crlb(
    dist: &FlowSizeDistribution,
    spec: &MethodSpec,
    config: &SimConfig,
    estimator: Option<Estimator>,
    window: Option<usize>,
) -> Result<VarianceReport> {
    if config.replicates < 30 {
        return Err(Error::InvalidParam("at least 30 replicates are needed".into()));
    }
    let estimator = match estimator {
        Some(e) => e,
        None => Estimator::for_method(spec.method)?,
    };
    let m = sampmat::build(spec, dist.w())?;
    let crlb = fisher::crlb_diag(&m, dist)?;
    let runs = simulate::sample_population(Source::Dist(dist), spec, config, None)?;
    let w = dist.w();
    let n = config.n_flows as f64;
    let mut sum = vec![0.0; w];
    let mut sumsq = vec![0.0; w];
    for run in &runs {
        let est = estimate(estimator, &m, &run.to_f64(), n)?;
        for k in 0..w {
            sum[k] += est[k];
            sumsq[k] += est[k] * est[k];
        }
    }
    let r = runs.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let var: Vec<f64> = (0..w)
        .map(|k| ((sumsq[k] - r * mean[k] * mean[k]) / (r - 1.0)).max(0.0))
        .collect();
    let crlb_over_n: Vec<f64> = crlb.iter().map(|c| c / n).collect();
    let ratio = (0..w)
        .map(|k| (var[k] > 0.0 && crlb_over_n[k] > 0.0).then(|| var[k] / crlb_over_n[k]))
        .collect();
    let flagged = (0..w).filter(|&k| var[k] == 0.0).map(|k| k + 1).collect();
    let window = match window {
        None if w > 200 => Some(100),
        None | Some(0) => None,
        Some(x) => Some(x),
    };
    Ok(VarianceReport {
        method: *spec,
        estimator,
        n: config.n_flows,
        replicates: config.replicates,
        theta: dist.theta().to_vec(),
        mean,
        smoothed_var: window.map(|x| moving_average(&var, x)),
        var_empirical: var,
        crlb_over_n,
        ratio,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn injected(m: &SamplingMatrix, dist: &FlowSizeDistribution, n: f64) -> Vec<f64> {
        let d = fisher::sampled_dist(m, dist).unwrap();
        d.iter().map(|x| x * n).collect()
    }

    #[test]
    fn exact_expectation_recovers_theta() {
        let dist = FlowSizeDistribution::from_theta(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        for spec in [
            MethodSpec::ps_syn(0.5).unwrap(),
            MethodSpec::ps_syn_seq(0.3).unwrap(),
            MethodSpec::fs(0.2).unwrap(),
            MethodSpec::ds(0.2, 0.5).unwrap(),
        ] {
            let m = sampmat::build(&spec, 4).unwrap();
            let c = injected(&m, &dist, 1000.0);
            let a = estimate_unbiased(&m, &c, 1000.0).unwrap();
            let b = estimate_mle_syn(&m, &c, 1000.0).unwrap();
            for k in 0..4 {
                assert!((a[k] - dist.theta()[k]).abs() < 1e-12, "{spec}");
                assert!((b[k] - a[k]).abs() < 1e-12, "{spec}");
            }
        }
        let m = sampmat::build(&MethodSpec::sh(0.3).unwrap(), 4).unwrap();
        let c = injected(&m, &dist, 1000.0);
        let t = estimate_mle_sh(&m, &c, 1000.0).unwrap();
        for k in 0..4 {
            assert!((t[k] - dist.theta()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fs_proportions() {
        let m = sampmat::build(&MethodSpec::fs(0.37).unwrap(), 2).unwrap();
        let t = estimate_mle_syn(&m, &[123.0, 10.0, 30.0], 163.0).unwrap();
        assert!((t[0] - 0.25).abs() < 1e-15 && (t[1] - 0.75).abs() < 1e-15);
        let u = estimate_unbiased(&m, &[123.0, 10.0, 30.0], 163.0).unwrap();
        assert!((u[0] - 10.0 / (163.0 * 0.37)).abs() < 1e-15);
        assert_eq!(estimate_mle_syn(&m, &[5.0, 0.0, 0.0], 5.0), Err(Error::AllEvaporated));
    }

    #[test]
    fn sh_uses_evaporated_count_only_in_first_coordinate() {
        let m = sampmat::build(&MethodSpec::sh(0.5).unwrap(), 3).unwrap();
        let a = estimate_mle_sh(&m, &[0.0, 10.0, 20.0, 30.0], 100.0).unwrap();
        let b = estimate_mle_sh(&m, &[40.0, 10.0, 20.0, 30.0], 100.0).unwrap();
        assert!((a[0] - b[0]).abs() > 0.1);
        assert_eq!(a[1..], b[1..]);
    }

    #[test]
    fn unsupported() {
        let m = sampmat::build(&MethodSpec::ps(0.5).unwrap(), 3).unwrap();
        assert!(matches!(estimate_unbiased(&m, &[1.0; 4], 4.0), Err(Error::UnsupportedMethod(_))));
        assert!(matches!(estimate_mle_sh(&m, &[1.0; 4], 4.0), Err(Error::UnsupportedMethod(_))));
        assert!(Estimator::for_method(Method::PsSeq).is_err());
    }

    #[test]
    fn simplex_and_smoothing() {
        let p = project_simplex(&[0.7, 0.5, -0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn variance_report_guards() {
        let dist = FlowSizeDistribution::from_theta(vec![0.5, 0.5]).unwrap();
        let spec = MethodSpec::fs(0.5).unwrap();
        let cfg = SimConfig::new(1, 10, 100).unwrap();
        assert!(empirical_variance_vs_crlb(&dist, &spec, &cfg, None, None).is_err());
        let cfg = SimConfig::new(1, 40, 1000).unwrap();
        let r = empirical_variance_vs_crlb(&dist, &spec, &cfg, None, None).unwrap();
        assert!(r.ratio.iter().all(|x| x.is_some_and(|v| v.is_finite())));
        assert!(r.smoothed_var.is_none());
    }
}
