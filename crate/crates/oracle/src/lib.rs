//! Reference computations used to validate `flowsamp`.
//!
//! Nothing here calls into `flowsamp`. Sampling matrices come from direct
//! enumeration of every packet-sampling pattern (small W) or from
//! multiprecision evaluation of the per-entry probabilities; inverses are
//! computed by multiprecision Gauss-Jordan elimination at a precision raised
//! until two successive results agree.

use rug::ops::Pow;
use rug::{Assign, Float, Integer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ps,
    PsSeq,
    PsSyn,
    PsSynSeq,
    Fs,
    Sh,
    Ds,
}

pub const SCHEMES: [Scheme; 7] =
    [Scheme::Ps, Scheme::PsSeq, Scheme::PsSyn, Scheme::PsSynSeq, Scheme::Fs, Scheme::Sh, Scheme::Ds];

/// Sampling parameters. `pf` is the SYN/flow probability for FS and DS and is
/// ignored by the others; `pp` is ignored by FS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub scheme: Scheme,
    pub pp: f64,
    pub pf: f64,
}

impl Params {
    pub fn new(scheme: Scheme, pp: f64, pf: f64) -> Self {
        Self { scheme, pp, pf }
    }
}

/// Observed size of a flow of `k` packets given which packets were picked by
/// the per-packet coin (bit i of `mask` for packet i+1, packet 1 is the SYN).
fn observed(scheme: Scheme, k: usize, mask: u64) -> usize {
    let picked = |i: usize| mask >> i & 1 == 1;
    let first = (0..k).find(|&i| picked(i));
    let last = (0..k).rev().find(|&i| picked(i));
    let count = (0..k).filter(|&i| picked(i)).count();
    match scheme {
        Scheme::Ps => count,
        Scheme::PsSeq => match (first, last) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        },
        Scheme::PsSyn => {
            if picked(0) {
                count
            } else {
                0
            }
        }
        Scheme::PsSynSeq | Scheme::Ds => {
            if picked(0) {
                last.unwrap() + 1
            } else {
                0
            }
        }
        // once a packet is picked every later one is kept
        Scheme::Sh => first.map_or(0, |a| k - a),
        Scheme::Fs => {
            if picked(0) {
                k
            } else {
                0
            }
        }
    }
}

fn pattern_prob(par: &Params, k: usize, mask: u64) -> f64 {
    let mut pr = 1.0;
    for i in 0..k {
        let bit = mask >> i & 1 == 1;
        // FS decides on the first packet only; later packets are unconstrained.
        let p = match (par.scheme, i) {
            (Scheme::Fs, 0) | (Scheme::Ds, 0) => par.pf,
            (Scheme::Fs, _) => {
                if bit {
                    continue;
                }
                return 0.0;
            }
            _ => par.pp,
        };
        pr *= if bit { p } else { 1.0 - p };
    }
    pr
}

/// Outcome probabilities P(j | k), j = 0..=k, by summing over all 2^k patterns.
pub fn enumerate_column(par: &Params, k: usize) -> Vec<f64> {
    assert!((1..=20).contains(&k));
    let mut col = vec![0.0; k + 1];
    for mask in 0u64..1 << k {
        let pr = pattern_prob(par, k, mask);
        if pr != 0.0 {
            col[observed(par.scheme, k, mask)] += pr;
        }
    }
    col
}

/// (W+1)×W matrix of outcome probabilities, rows j = 0..W, columns k = 1..W.
pub fn enumerate_matrix(par: &Params, w: usize) -> Vec<Vec<f64>> {
    let mut b = vec![vec![0.0; w]; w + 1];
    for k in 1..=w {
        for (j, v) in enumerate_column(par, k).into_iter().enumerate() {
            b[j][k - 1] = v;
        }
    }
    b
}

/// Fisher information as the expectation, over flow sizes and sampling
/// patterns, of the outer product of the score of the observed size.
pub fn brute_force_fisher(par: &Params, theta: &[f64]) -> Vec<Vec<f64>> {
    let w = theta.len();
    let b = enumerate_matrix(par, w);
    let d: Vec<f64> = b.iter().map(|row| row.iter().zip(theta).map(|(x, t)| x * t).sum()).collect();
    let mut j = vec![vec![0.0; w]; w];
    for k in 1..=w {
        for mask in 0u64..1 << k {
            let pr = theta[k - 1] * pattern_prob(par, k, mask);
            if pr == 0.0 {
                continue;
            }
            let o = observed(par.scheme, k, mask);
            for a in 0..w {
                let sa = b[o][a] / d[o];
                for c in 0..w {
                    j[a][c] += pr * sa * b[o][c] / d[o];
                }
            }
        }
    }
    j
}

pub type MpMatrix = Vec<Vec<Float>>;

fn binom(n: usize, k: usize, prec: u32) -> Float {
    Float::with_val(prec, Integer::from(Integer::binomial_u(n as u32, k as u32)))
}

/// Entry (j, k) of the sampling matrix from its closed probability, with
/// q = 1 − p formed exactly at the working precision.
pub fn mp_entry(par: &Params, j: usize, k: usize, prec: u32) -> Float {
    let f = |x: f64| Float::with_val(prec, x);
    let p = f(par.pp);
    let q = Float::with_val(prec, 1 - &p);
    let pf = f(par.pf);
    let qf = Float::with_val(prec, 1 - &pf);
    let pw = |x: &Float, n: usize| Float::with_val(prec, x.pow(n as u32));
    let zero = f(0.0);
    if j > k {
        return zero;
    }
    match par.scheme {
        Scheme::Ps => binom(k, j, prec) * pw(&p, j) * pw(&q, k - j),
        Scheme::PsSeq => match j {
            0 => pw(&q, k),
            1 => f(k as f64) * &p * pw(&q, k - 1),
            _ => f((k - j + 1) as f64) * pw(&p, 2) * pw(&q, k - j),
        },
        Scheme::PsSyn => match j {
            0 => q,
            _ => binom(k - 1, j - 1, prec) * pw(&p, j) * pw(&q, k - j),
        },
        Scheme::PsSynSeq => match j {
            0 => q,
            1 => Float::with_val(prec, &p * pw(&q, k - 1)),
            _ => pw(&p, 2) * pw(&q, k - j),
        },
        Scheme::Fs => match j {
            0 => qf,
            _ if j == k => pf,
            _ => zero,
        },
        Scheme::Sh => match j {
            0 => pw(&q, k),
            _ => p * pw(&q, k - j),
        },
        Scheme::Ds => match j {
            0 => qf,
            1 => pf * pw(&q, k - 1),
            _ => pf * p * pw(&q, k - j),
        },
    }
}

pub fn mp_matrix(par: &Params, w: usize, prec: u32) -> MpMatrix {
    (0..=w).map(|j| (1..=w).map(|k| mp_entry(par, j, k, prec)).collect()).collect()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting. `None` if singular.
pub fn mp_inverse(a: &MpMatrix, prec: u32) -> Option<MpMatrix> {
    let n = a.len();
    let mut m: MpMatrix = a.iter().map(|r| r.iter().map(|x| Float::with_val(prec, x)).collect()).collect();
    let mut inv: MpMatrix = (0..n)
        .map(|i| (0..n).map(|j| Float::with_val(prec, if i == j { 1 } else { 0 })).collect())
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].clone().abs().partial_cmp(&m[y][c].clone().abs()).unwrap())?;
        if m[piv][c].is_zero() {
            return None;
        }
        m.swap(c, piv);
        inv.swap(c, piv);
        let s = Float::with_val(prec, 1 / &m[c][c]);
        for x in m[c][c..].iter_mut().chain(inv[c].iter_mut()) {
            *x *= &s;
        }
        let (prow, pinv) = (m[c].clone(), inv[c].clone());
        let mut t = Float::new(prec);
        for r in 0..n {
            if r == c || m[r][c].is_zero() {
                continue;
            }
            let f = m[r][c].clone();
            for (x, y) in m[r][c..].iter_mut().zip(&prow[c..]) {
                t.assign(&f * y);
                *x -= &t;
            }
            for (x, y) in inv[r].iter_mut().zip(&pinv) {
                if !y.is_zero() {
                    t.assign(&f * y);
                    *x -= &t;
                }
            }
        }
    }
    Some(inv)
}

/// Unconstrained Fisher information J = Σ_j b_jᵀb_j/d_j with d = Bθ.
pub fn mp_fisher(b: &MpMatrix, theta: &[f64], prec: u32) -> MpMatrix {
    let w = theta.len();
    let th: Vec<Float> = theta.iter().map(|&t| Float::with_val(prec, t)).collect();
    let mut j: MpMatrix = vec![vec![Float::with_val(prec, 0); w]; w];
    let mut t = Float::new(prec);
    for row in b {
        let mut d = Float::with_val(prec, 0);
        for (x, t) in row.iter().zip(&th) {
            d += Float::with_val(prec, x * t);
        }
        if d.is_zero() {
            continue;
        }
        for a in 0..w {
            if row[a].is_zero() {
                continue;
            }
            let s = Float::with_val(prec, &row[a] / &d);
            for c in 0..w {
                if !row[c].is_zero() {
                    t.assign(&s * &row[c]);
                    j[a][c] += &t;
                }
            }
        }
    }
    j
}

pub fn to_f64(m: &MpMatrix) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|x| x.to_f64()).collect()).collect()
}

fn agree(a: &[Vec<f64>], b: &[Vec<f64>], rel: f64) -> bool {
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= rel * scale)
}

/// Run `f` at increasing precision until two successive results agree to
/// 1e-14 of their largest entry. Returns the result and the precision used.
pub fn converged<F>(start: u32, f: F) -> Option<(Vec<Vec<f64>>, u32)>
where
    F: Fn(u32) -> Option<Vec<Vec<f64>>>,
{
    let mut prec = start.max(64);
    let mut prev = f(prec)?;
    while prec < 1 << 16 {
        prec *= 2;
        let cur = f(prec)?;
        if agree(&prev, &cur, 1e-14) {
            return Some((cur, prec));
        }
        prev = cur;
    }
    None
}

/// B̃⁻¹ (rows 1..W of the sampling matrix, inverted) in double precision.
pub fn btilde_inverse(par: &Params, w: usize, start_prec: u32) -> Option<Vec<Vec<f64>>> {
    converged(start_prec, |prec| {
        let b = mp_matrix(par, w, prec);
        mp_inverse(&b[1..].to_vec(), prec).map(|m| to_f64(&m))
    })
    .map(|r| r.0)
}

/// J in double precision from the multiprecision sampling matrix.
pub fn fisher(par: &Params, theta: &[f64], prec: u32) -> Vec<Vec<f64>> {
    to_f64(&mp_fisher(&mp_matrix(par, theta.len(), prec), theta, prec))
}

/// J⁻¹ by direct inversion of J, both formed at multiprecision.
pub fn fisher_inverse(par: &Params, theta: &[f64], start_prec: u32) -> Option<(Vec<Vec<f64>>, u32)> {
    converged(start_prec, |prec| {
        let j = mp_fisher(&mp_matrix(par, theta.len(), prec), theta, prec);
        mp_inverse(&j, prec).map(|m| to_f64(&m))
    })
}

/// Diagonal of J⁻¹, each entry converged to 1e-12 relative.
pub fn fisher_inverse_diag(par: &Params, theta: &[f64], start_prec: u32) -> Option<(Vec<f64>, u32)> {
    let diag = |prec: u32| {
        let j = mp_fisher(&mp_matrix(par, theta.len(), prec), theta, prec);
        mp_inverse(&j, prec).map(|m| (0..m.len()).map(|i| m[i][i].to_f64()).collect::<Vec<f64>>())
    };
    let mut prec = start_prec.max(64);
    let mut prev = diag(prec)?;
    while prec < 1 << 16 {
        prec *= 2;
        let cur = diag(prec)?;
        if prev.iter().zip(&cur).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs()) {
            return Some((cur, prec));
        }
        prev = cur;
    }
    None
}

/// Exact mean and variance of the inferred size of a k-packet flow under
/// SYN discarding and sequence inference, with the SYN kept with
/// probability `pf` and other packets with `pp`, by summing the outcome law.
/// Also returns the mean number of packets actually picked.
pub fn seq_inferred_moments(pf: f64, pp: f64, k: usize, prec: u32) -> (f64, f64, f64) {
    let par = Params::new(Scheme::Ds, pp, pf);
    let (mut m1, mut m2) = (Float::with_val(prec, 0), Float::with_val(prec, 0));
    for j in 1..=k {
        let b = mp_entry(&par, j, k, prec);
        m1 += Float::with_val(prec, &b * j as u32);
        m2 += Float::with_val(prec, &b * (j * j) as u32);
    }
    let var = Float::with_val(prec, &m2 - Float::with_val(prec, m1.square_ref()));
    let picked = pf * (1.0 + (k as f64 - 1.0) * pp);
    (m1.to_f64(), var.to_f64(), picked)
}
