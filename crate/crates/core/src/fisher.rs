//! Fisher information of a sampled flow, its inverse and the constrained CRLB.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowdist::FlowSizeDistribution;
use crate::sampmat::{self, Method, MethodSpec, SamplingMatrix};

/// Smallest admissible d_j.
pub const D_FLOOR: f64 = 1e-300;

fn check_dims(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<()> {
    if m.w() != dist.w() {
        return Err(Error::InvalidParam(format!(
            "matrix has W = {} but distribution has W = {}",
            m.w(),
            dist.w()
        )));
    }
    Ok(())
}

fn finite_or(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// d = Bθ, the law of the observed size j = 0..W.
pub fn sampled_dist(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<DVector<f64>> {
    check_dims(m, dist)?;
    let d = m.b() * DVector::from_column_slice(dist.theta());
    // Without any sampling loss (p = 1) row 0 is identically zero; that
    // outcome is impossible rather than underflowed.
    let evaporation_impossible = m.b().row(0).iter().all(|&x| x == 0.0);
    for (j, &v) in d.iter().enumerate() {
        if !(v > D_FLOOR) && !(j == 0 && evaporation_impossible) {
            return Err(Error::Underflow { j, value: v });
        }
    }
    Ok(d)
}

/// J = Bᵀ diag(1/d) B.
pub fn fisher_unconstrained(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<DMatrix<f64>> {
    let d = sampled_dist(m, dist)?;
    Ok(fisher_from_d(m.b(), &d))
}

fn fisher_from_d(b: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        if d[j] > 0.0 {
            row /= d[j];
        }
    }
    b.transpose() * scaled
}

/// J̃⁻¹ = B̃⁻¹ diag(d₁..d_W) B̃⁻ᵀ.
pub fn jtilde_inverse(binv: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = binv.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[c + 1];
    }
    scaled * binv.transpose()
}

/// J⁻¹ via the rank-one update J̃⁻¹ − uuᵀ/(d₀ + b₀ᵀJ̃⁻¹b₀), for any B̃⁻¹ and b₀.
///
/// `v = B̃⁻ᵀb₀` is formed numerically here; the method-specific path uses its
/// closed form instead.
pub fn inverse_rank_one_general(binv: &DMatrix<f64>, b0: &[f64], d: &DVector<f64>) -> DMatrix<f64> {
    let v: Vec<f64> = (binv.transpose() * DVector::from_column_slice(b0)).iter().copied().collect();
    rank_one_with_pullback(binv, &v, d)
}

fn rank_one_with_pullback(binv: &DMatrix<f64>, v: &[f64], d: &DVector<f64>) -> DMatrix<f64> {
    let w = binv.ncols();
    let dv = DVector::from_fn(w, |j, _| d[j + 1] * v[j]);
    let u = binv * dv;
    let den = d[0] + (0..w).map(|j| d[j + 1] * v[j] * v[j]).sum::<f64>();
    let mut jinv = jtilde_inverse(binv, d);
    if den > 0.0 {
        jinv -= (&u * u.transpose()) / den;
    }
    jinv
}

/// J⁻¹ from the rank-one correction of J̃⁻¹, with the closed-form B̃⁻¹.
pub fn inverse_rank_one(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<DMatrix<f64>> {
    let d = sampled_dist(m, dist)?;
    let binv = m.binv()?;
    let v = sampmat::b0_pullback(m.spec(), m.w());
    finite_or(rank_one_with_pullback(binv, &v, &d), "inverse Fisher information overflows")
}

/// Diagonal of J⁻¹ in O(W²) using the closed-form B̃⁻¹.
pub fn jinv_diag(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<Vec<f64>> {
    let d = sampled_dist(m, dist)?;
    let binv = m.binv()?;
    let w = m.w();
    let v = sampmat::b0_pullback(m.spec(), w);
    let den = d[0] + (0..w).map(|j| d[j + 1] * v[j] * v[j]).sum::<f64>();
    let mut out = Vec::with_capacity(w);
    for r in 0..w {
        let mut jt = 0.0;
        let mut u = 0.0;
        for c in r..w {
            let b = binv[(r, c)];
            if b != 0.0 {
                jt += b * b * d[c + 1];
                u += b * d[c + 1] * v[c];
            }
        }
        out.push(jt - u * u / den);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("inverse Fisher information overflows".into()));
    }
    Ok(out)
}

/// Diagonal of C⁺ = J⁻¹ − θθᵀ.
pub fn crlb_diag(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<Vec<f64>> {
    let jd = jinv_diag(m, dist)?;
    Ok(jd.iter().zip(dist.theta()).map(|(j, t)| j - t * t).collect())
}

/// C⁺ = J⁻¹ − θθᵀ and its diagonal.
pub fn crlb(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let jinv = inverse_rank_one(m, dist)?;
    Ok(crlb_from_jinv(&jinv, dist))
}

fn crlb_from_jinv(jinv: &DMatrix<f64>, dist: &FlowSizeDistribution) -> (DMatrix<f64>, Vec<f64>) {
    let t = DVector::from_column_slice(dist.theta());
    let c = jinv - &t * t.transpose();
    let diag = c.diagonal().iter().copied().collect();
    (c, diag)
}

/// All Fisher quantities for one method and distribution.
#[derive(Debug, Clone)]
pub struct FisherBundle {
    pub d: DVector<f64>,
    pub j: DMatrix<f64>,
    pub jinv: DMatrix<f64>,
    pub jtilde_inv: DMatrix<f64>,
    pub cplus: DMatrix<f64>,
    pub crlb_diag: Vec<f64>,
}

pub fn bundle(m: &SamplingMatrix, dist: &FlowSizeDistribution) -> Result<FisherBundle> {
    let d = sampled_dist(m, dist)?;
    let binv = m.binv()?;
    let v = sampmat::b0_pullback(m.spec(), m.w());
    let jinv = finite_or(rank_one_with_pullback(binv, &v, &d), "inverse Fisher information overflows")?;
    let jtilde_inv = jtilde_inverse(binv, &d);
    let j = fisher_from_d(m.b(), &d);
    let (cplus, crlb_diag) = crlb_from_jinv(&jinv, dist);
    Ok(FisherBundle { d, j, jinv, jtilde_inv, cplus, crlb_diag })
}

/// Σ_{k≥j+1} q^{k−j} θ_k for j = 1..W (index 0 ↔ j = 1).
fn tail_sums(theta: &[f64], q: f64) -> Vec<f64> {
    let w = theta.len();
    let mut s = vec![0.0; w];
    for j in (0..w.saturating_sub(1)).rev() {
        s[j] = q * (theta[j + 1] + s[j + 1]);
    }
    s
}

/// Diagonal of J⁻¹ from each method's closed-form expression (no matrices).
pub fn closed_form_diag(spec: &MethodSpec, dist: &FlowSizeDistribution) -> Result<Vec<f64>> {
    let w = dist.w();
    let th = dist.theta();
    let p = spec.pp();
    let q = 1.0 - p;
    let out = match spec.method {
        Method::Ps | Method::PsSyn => {
            if spec.method == Method::Ps && w > sampmat::PS_INVERSE_MAX_W {
                return Err(Error::Unsupported(format!(
                    "PS closed form limited to W <= {}",
                    sampmat::PS_INVERSE_MAX_W
                )));
            }
            let m = sampmat::build(spec, w)?;
            let d = sampled_dist(&m, dist)?;
            let mut lf = vec![0.0; w + 1];
            for n in 1..=w {
                lf[n] = lf[n - 1] + (n as f64).ln();
            }
            let lc = |n: usize, r: usize| lf[n] - lf[r] - lf[n - r];
            let (lp, lq) = (p.ln(), q.ln());
            // q^a p^b with exact handling of q = 0
            let qp = |a: usize, b: f64| if a == 0 { (b * lp).exp() } else { (a as f64 * lq + b * lp).exp() };
            if spec.method == Method::Ps {
                let den: f64 = (0..=w).map(|k| qp(2 * k, -2.0 * k as f64) * d[k]).sum();
                (1..=w)
                    .map(|j| {
                        let mut a = 0.0;
                        let mut n = 0.0;
                        for k in j..=w {
                            let c = lc(k, j).exp();
                            a += c * c * qp(2 * (k - j), -2.0 * k as f64) * d[k];
                            n += d[k] * c * qp(2 * k - j, -2.0 * k as f64);
                        }
                        if den > 0.0 { a - n * n / den } else { a }
                    })
                    .collect::<Vec<_>>()
            } else {
                (1..=w)
                    .map(|j| {
                        let a: f64 = (j..=w)
                            .map(|k| {
                                let c = lc(k - 1, j - 1).exp();
                                c * c * qp(2 * (k - j), -2.0 * k as f64) * d[k]
                            })
                            .sum();
                        a - q / p * th[j - 1] * th[j - 1]
                    })
                    .collect()
            }
        }
        Method::PsSeq => {
            let m = sampmat::build(spec, w)?;
            let d = sampled_dist(&m, dist)?;
            let dd = |j: usize| if j <= w { d[j] } else { 0.0 };
            let (p2, p4) = (p * p, p.powi(4));
            let (q2, q4) = (q * q, q.powi(4));
            let r = dd(0) + q2 / p2 * dd(1) + q4 / p4 * dd(2);
            (1..=w)
                .map(|j| {
                    let body = |j: usize| (dd(j) + 4.0 * q2 * dd(j + 1) + q4 * dd(j + 2)) / p4;
                    match j {
                        1 => {
                            let n = q / p2 * dd(1) + 2.0 * q.powi(3) / p4 * dd(2);
                            dd(1) / p2 + 4.0 * q2 / p4 * dd(2) + q4 / p4 * dd(3) - n * n / r
                        }
                        2 => body(2) - q4 / p.powi(8) * dd(2) * dd(2) / r,
                        _ => body(j),
                    }
                })
                .collect()
        }
        Method::Fs => {
            let pf = spec.pf();
            th.iter().map(|t| t / pf + (1.0 - 1.0 / pf) * t * t).collect()
        }
        Method::Sh => {
            let s = tail_sums(th, q);
            (0..w)
                .map(|i| {
                    if i == 0 {
                        th[0] + s[0] / p
                    } else {
                        th[i] / p + (1.0 + q) / p * s[i]
                    }
                })
                .collect()
        }
        Method::PsSynSeq | Method::Ds => {
            let pf = spec.pf();
            let qf = 1.0 - pf;
            let s = tail_sums(th, q);
            (0..w)
                .map(|i| {
                    let corr = qf / pf * th[i] * th[i];
                    if i == 0 {
                        th[0] / pf + s[0] / (pf * p) - corr
                    } else {
                        th[i] / (pf * p) + (1.0 + q) * s[i] / (pf * p) - corr
                    }
                })
                .collect()
        }
    };
    if out.iter().any(|x: &f64| !x.is_finite()) {
        return Err(Error::NonFinite(format!("closed-form diagonal of {spec} overflows")));
    }
    Ok(out)
}

/// Outcome of the tridiagonal-structure check of J̃⁻¹.
#[derive(Debug, Clone, Serialize)]
pub struct TridiagonalReport {
    /// Largest |entry| outside the tridiagonal band.
    pub off_band_max: f64,
    /// Largest |entry| of J̃⁻¹.
    pub norm_max: f64,
    /// Largest relative error of the upper off-diagonal against its formula.
    pub offdiag_rel_err: f64,
    pub pass: bool,
}

/// Check that J̃⁻¹ is tridiagonal with upper off-diagonal −(p_f p_p)⁻² q_p d_{k+1}
/// (SH: p_f = 1; FS: zero off-diagonal).
pub fn tridiagonal_check(spec: &MethodSpec, dist: &FlowSizeDistribution) -> Result<TridiagonalReport> {
    if !matches!(spec.method, Method::Sh | Method::Ds | Method::PsSynSeq | Method::Fs) {
        return Err(Error::Unsupported(format!("{} has no tridiagonal J̃⁻¹", spec.method)));
    }
    let m = sampmat::build(spec, dist.w())?;
    let d = sampled_dist(&m, dist)?;
    let jt = jtilde_inverse(m.binv()?, &d);
    let w = dist.w();
    let p = spec.pp();
    let q = 1.0 - p;
    let scale = match spec.method {
        Method::Sh => p * p,
        Method::Fs => f64::INFINITY,
        _ => (spec.pf() * p).powi(2),
    };
    let mut off_band_max: f64 = 0.0;
    let mut err: f64 = 0.0;
    for r in 0..w {
        for c in 0..w {
            if r.abs_diff(c) > 1 {
                off_band_max = off_band_max.max(jt[(r, c)].abs());
            }
        }
        if r + 1 < w {
            let want = if scale.is_infinite() { 0.0 } else { -q * d[r + 2] / scale };
            let got = jt[(r, r + 1)];
            let e = (got - want).abs() / want.abs().max(D_FLOOR);
            err = err.max(if want == 0.0 && got == 0.0 { 0.0 } else { e });
        }
    }
    let norm_max = jt.abs().max();
    Ok(TridiagonalReport {
        off_band_max,
        norm_max,
        offdiag_rel_err: err,
        pass: off_band_max <= 1e-9 * norm_max && err <= 1e-8,
    })
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let sym = (a + a.transpose()) * 0.5;
    let e = sym.symmetric_eigenvalues();
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Positive semidefinite up to −tol·(largest |eigenvalue|).
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    let (lo, hi) = eigen_extremes(a);
    lo >= -tol * lo.abs().max(hi.abs())
}
