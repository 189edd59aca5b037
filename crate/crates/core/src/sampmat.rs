//! Sampling matrices B for each method, and the closed-form inverse of the
//! square block B̃ (rows j = 1..W).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest W for which B is built.
pub const MAX_W: usize = 5000;
/// Largest W for which the PS analytic inverse is attempted.
pub const PS_INVERSE_MAX_W: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ps,
    PsSeq,
    PsSyn,
    PsSynSeq,
    Fs,
    Sh,
    Ds,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ps,
        Method::PsSeq,
        Method::PsSyn,
        Method::PsSynSeq,
        Method::Fs,
        Method::Sh,
        Method::Ds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ps => "PS",
            Method::PsSeq => "PS+SEQ",
            Method::PsSyn => "PS+SYN",
            Method::PsSynSeq => "PS+SYN+SEQ",
            Method::Fs => "FS",
            Method::Sh => "SH",
            Method::Ds => "DS",
        }
    }

    /// Methods whose top row is constant, b₀ = q·1 (flows kept only when the SYN is sampled).
    pub fn is_syn_based(self) -> bool {
        matches!(self, Method::PsSyn | Method::PsSynSeq | Method::Fs | Method::Ds)
    }

    pub fn uses_seq(self) -> bool {
        matches!(self, Method::PsSeq | Method::PsSynSeq | Method::Ds)
    }

    pub fn needs_pp(self) -> bool {
        self != Method::Fs
    }

    pub fn needs_pf(self) -> bool {
        matches!(self, Method::Fs | Method::Ds)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k: String = s
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, '+' | '_' | '-' | ' '))
            .collect();
        Ok(match k.as_str() {
            "ps" => Method::Ps,
            "psseq" => Method::PsSeq,
            "pssyn" => Method::PsSyn,
            "pssynseq" => Method::PsSynSeq,
            "fs" => Method::Fs,
            "sh" => Method::Sh,
            "ds" => Method::Ds,
            _ => return Err(Error::InvalidParam(format!("unknown method {s:?}"))),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// A method and its sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pf: Option<f64>,
}

fn check_prob(name: &str, p: f64) -> Result<f64> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(Error::InvalidParam(format!("{name} = {p} not in (0,1]")))
    }
}

impl MethodSpec {
    /// Validate and build. Parameters the method does not use must be `None`.
    pub fn new(method: Method, pp: Option<f64>, pf: Option<f64>) -> Result<Self> {
        let pp = match (method.needs_pp(), pp) {
            (true, Some(p)) => Some(check_prob("p_p", p)?),
            (true, None) => return Err(Error::InvalidParam(format!("{method} needs p_p"))),
            (false, Some(_)) => return Err(Error::InvalidParam(format!("{method} takes no p_p"))),
            (false, None) => None,
        };
        let pf = match (method.needs_pf(), pf) {
            (true, Some(p)) => Some(check_prob("p_f", p)?),
            (true, None) => return Err(Error::InvalidParam(format!("{method} needs p_f"))),
            (false, Some(_)) => return Err(Error::InvalidParam(format!("{method} takes no p_f"))),
            (false, None) => None,
        };
        Ok(Self { method, pp, pf })
    }

    pub fn ps(p: f64) -> Result<Self> {
        Self::new(Method::Ps, Some(p), None)
    }
    pub fn ps_seq(p: f64) -> Result<Self> {
        Self::new(Method::PsSeq, Some(p), None)
    }
    pub fn ps_syn(p: f64) -> Result<Self> {
        Self::new(Method::PsSyn, Some(p), None)
    }
    pub fn ps_syn_seq(p: f64) -> Result<Self> {
        Self::new(Method::PsSynSeq, Some(p), None)
    }
    pub fn fs(pf: f64) -> Result<Self> {
        Self::new(Method::Fs, None, Some(pf))
    }
    pub fn sh(p: f64) -> Result<Self> {
        Self::new(Method::Sh, Some(p), None)
    }
    pub fn ds(pf: f64, pp: f64) -> Result<Self> {
        Self::new(Method::Ds, Some(pp), Some(pf))
    }

    /// Packet-level sampling probability. FS behaves as p_p = 1.
    pub fn pp(&self) -> f64 {
        self.pp.unwrap_or(1.0)
    }

    /// Probability that the SYN packet is retained, for methods that discard
    /// flows without a sampled SYN; 1 for the others.
    pub fn pf(&self) -> f64 {
        match self.method {
            Method::Fs | Method::Ds => self.pf.unwrap_or(1.0),
            Method::PsSyn | Method::PsSynSeq => self.pp(),
            _ => 1.0,
        }
    }

    /// The same method with a single parameter replaced (p_p, or p_f for FS).
    pub fn with_param(&self, p: f64) -> Result<Self> {
        match self.method {
            Method::Fs => Self::fs(p),
            Method::Ds => Self::ds(self.pf(), p),
            m => Self::new(m, Some(p), None),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method {
            Method::Fs => write!(f, "FS(pf={})", self.pf()),
            Method::Ds => write!(f, "DS(pf={},pp={})", self.pf(), self.pp()),
            m => write!(f, "{m}(pp={})", self.pp()),
        }
    }
}

/// ln(n!) for n = 0..=w.
fn ln_factorials(w: usize) -> Vec<f64> {
    let mut lf = vec![0.0; w + 1];
    for n in 1..=w {
        lf[n] = lf[n - 1] + (n as f64).ln();
    }
    lf
}

/// C(n,k)·a^k·b^(n−k) evaluated in log space; exact zeros handled.
fn binom_term(lf: &[f64], n: usize, k: usize, a: f64, b: f64) -> f64 {
    if (a == 0.0 && k > 0) || (b == 0.0 && n > k) {
        return 0.0;
    }
    let mut l = lf[n] - lf[k] - lf[n - k];
    if k > 0 {
        l += k as f64 * a.ln();
    }
    if n > k {
        l += (n - k) as f64 * b.ln();
    }
    l.exp()
}

fn powi(x: f64, n: usize) -> f64 {
    x.powi(n as i32)
}

/// Column k of B: entries b_{jk} for j = 0..=k (the rest are zero).
pub fn column(spec: &MethodSpec, k: usize) -> Vec<f64> {
    let lf = ln_factorials(k);
    column_with(spec, k, &lf)
}

fn column_with(spec: &MethodSpec, k: usize, lf: &[f64]) -> Vec<f64> {
    assert!(k >= 1);
    let p = spec.pp();
    let q = 1.0 - p;
    let pf = spec.pf();
    let qf = 1.0 - pf;
    let mut c = vec![0.0; k + 1];
    match spec.method {
        Method::Ps => {
            for j in 0..=k {
                c[j] = binom_term(lf, k, j, p, q);
            }
        }
        Method::PsSeq => {
            c[0] = powi(q, k);
            c[1] = k as f64 * p * powi(q, k - 1);
            for j in 2..=k {
                c[j] = (k - j + 1) as f64 * p * p * powi(q, k - j);
            }
        }
        Method::PsSyn => {
            c[0] = q;
            for j in 1..=k {
                c[j] = p * binom_term(lf, k - 1, j - 1, p, q);
            }
        }
        Method::PsSynSeq | Method::Ds => {
            // PS+SYN+SEQ is DS with p_f = p_p.
            c[0] = qf;
            c[1] = pf * powi(q, k - 1);
            for j in 2..=k {
                c[j] = pf * p * powi(q, k - j);
            }
        }
        Method::Fs => {
            c[0] = qf;
            c[k] = pf;
        }
        Method::Sh => {
            c[0] = powi(q, k);
            for j in 1..=k {
                c[j] = p * powi(q, k - j);
            }
        }
    }
    c
}

/// B together with the closed-form inverse of its lower block.
#[derive(Debug, Clone)]
pub struct SamplingMatrix {
    spec: MethodSpec,
    b: DMatrix<f64>,
    binv: std::result::Result<DMatrix<f64>, Error>,
}

impl SamplingMatrix {
    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn w(&self) -> usize {
        self.b.ncols()
    }

    /// The (W+1)×W matrix; row j is the observed size j = 0..W.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Top row b₀ (probability that a size-k flow evaporates).
    pub fn b0(&self) -> Vec<f64> {
        self.b.row(0).iter().copied().collect()
    }

    /// Lower W×W block B̃.
    pub fn btilde(&self) -> DMatrixView<'_, f64> {
        self.b.rows(1, self.w())
    }

    /// Closed-form B̃⁻¹, or the reason it is unavailable in double precision.
    pub fn binv(&self) -> Result<&DMatrix<f64>> {
        self.binv.as_ref().map_err(Clone::clone)
    }
}

/// Build B for `spec` with maximum flow size `w`.
pub fn build(spec: &MethodSpec, w: usize) -> Result<SamplingMatrix> {
    if w < 2 {
        return Err(Error::InvalidParam("W must be at least 2".into()));
    }
    if w > MAX_W {
        return Err(Error::Unsupported(format!("W = {w} exceeds {MAX_W}")));
    }
    let lf = ln_factorials(w);
    let mut b = DMatrix::zeros(w + 1, w);
    for k in 1..=w {
        let c = column_with(spec, k, &lf);
        for (j, v) in c.into_iter().enumerate() {
            b[(j, k - 1)] = v;
        }
    }
    Ok(SamplingMatrix {
        spec: *spec,
        b,
        binv: analytic_inverse(spec, w),
    })
}

/// Closed-form inverse of B̃ (row/column index r ↔ size r+1).
pub fn analytic_inverse(spec: &MethodSpec, w: usize) -> Result<DMatrix<f64>> {
    if w < 1 {
        return Err(Error::InvalidParam("W must be positive".into()));
    }
    let p = spec.pp();
    let q = 1.0 - p;
    let pf = spec.pf();
    let mut m = DMatrix::zeros(w, w);
    match spec.method {
        Method::Ps | Method::PsSyn => {
            if spec.method == Method::Ps && w > PS_INVERSE_MAX_W {
                return Err(Error::Unsupported(format!(
                    "PS analytic inverse limited to W <= {PS_INVERSE_MAX_W}"
                )));
            }
            let lf = ln_factorials(w);
            let lnp = p.ln();
            for k in 1..=w {
                for j in 1..=k {
                    // b'_{jk} = (−1)^{k−j} C(n, m) q^{k−j} p^{−k}
                    let (n, r) = if spec.method == Method::Ps { (k, j) } else { (k - 1, j - 1) };
                    let mag = if q == 0.0 {
                        if j == k { 1.0 } else { 0.0 }
                    } else {
                        (lf[n] - lf[r] - lf[n - r] + (k - j) as f64 * q.ln() - k as f64 * lnp).exp()
                    };
                    m[(j - 1, k - 1)] = if (k - j) % 2 == 0 { mag } else { -mag };
                }
            }
        }
        Method::PsSeq => {
            let band = [1.0, -2.0 * q, q * q];
            for j in 1..=w {
                for (o, &c) in band.iter().enumerate() {
                    if j + o <= w {
                        // row 1 starts with 1/p, every other entry carries 1/p²
                        let s = if j == 1 && o == 0 { 1.0 / p } else { 1.0 / (p * p) };
                        m[(j - 1, j - 1 + o)] = c * s;
                    }
                }
            }
        }
        Method::PsSynSeq | Method::Ds => {
            for j in 1..=w {
                m[(j - 1, j - 1)] = if j == 1 { 1.0 / pf } else { 1.0 / (pf * p) };
                if j < w {
                    m[(j - 1, j)] = -q / (pf * p);
                }
            }
        }
        Method::Fs => {
            for j in 0..w {
                m[(j, j)] = 1.0 / pf;
            }
        }
        Method::Sh => {
            for j in 0..w {
                m[(j, j)] = 1.0 / p;
                if j + 1 < w {
                    m[(j, j + 1)] = -q / p;
                }
            }
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "analytic inverse of {spec} at W = {w} overflows"
        )));
    }
    Ok(m)
}

/// v = B̃⁻ᵀ b₀ in closed form (the vector entering the rank-one correction of
/// the inverse Fisher information).
pub fn b0_pullback(spec: &MethodSpec, w: usize) -> Vec<f64> {
    let p = spec.pp();
    let q = 1.0 - p;
    let mut v = vec![0.0; w];
    match spec.method {
        Method::Ps => {
            let r = q / p;
            let mut t = 1.0;
            for (i, x) in v.iter_mut().enumerate() {
                t *= r;
                *x = if i % 2 == 0 { t } else { -t };
            }
        }
        Method::PsSeq => {
            v[0] = q / p;
            if w > 1 {
                v[1] = -(q * q) / (p * p);
            }
        }
        Method::PsSyn | Method::PsSynSeq | Method::Fs | Method::Ds => {
            let pf = spec.pf();
            v.iter_mut().for_each(|x| *x = (1.0 - pf) / pf);
        }
        Method::Sh => v[0] = q / p,
    }
    v
}

/// Write B as CSV, one line per row j = 0..W.
pub fn write_matrix_csv<W: std::io::Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:e}")).collect();
        wr.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
