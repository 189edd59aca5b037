use std::fs;
use std::path::Path;

use clap::Args;
use flowsamp::flowdist::{self, solve_rate_for_mean, FlowPopulation, RawDist};
use flowsamp::{Error, FlowSizeDistribution, Method, MethodSpec, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Where the flow size distribution comes from.
#[derive(Args, Debug, Clone, Serialize)]
pub struct DistArgs {
    /// Distribution CSV (`size,theta` or `size,count`), or `texp` / `dirichlet`
    #[arg(long, value_name = "FILE|texp|dirichlet")]
    pub dist: Option<String>,
    /// Maximum flow size for generated distributions
    #[arg(long)]
    pub w: Option<usize>,
    /// Truncated exponential decay rate
    #[arg(long, conflicts_with = "mean")]
    pub rate: Option<f64>,
    /// Truncated exponential mean (solves for the rate)
    #[arg(long)]
    pub mean: Option<f64>,
    /// Dirichlet concentration
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Dirichlet draws with any bin below this are rejected
    #[arg(long, default_value_t = 1e-6)]
    pub floor: f64,
    /// Add eps to every bin of a file distribution, then renormalize
    #[arg(long, value_name = "EPS")]
    pub smooth: Option<f64>,
}

impl DistArgs {
    pub fn given(&self) -> bool {
        self.dist.is_some()
    }

    pub fn file(&self) -> Option<&Path> {
        match self.dist.as_deref() {
            None | Some("texp") | Some("dirichlet") => None,
            Some(p) => Some(Path::new(p)),
        }
    }

    pub fn is_random(&self) -> bool {
        self.dist.as_deref() == Some("dirichlet")
    }

    fn need_w(&self, kind: &str) -> Result<usize> {
        self.w.ok_or_else(|| Error::InvalidParam(format!("--dist {kind} needs --w")))
    }

    pub fn load(&self, seed: Option<u64>) -> Result<FlowSizeDistribution> {
        let dist = self.dist.as_deref().ok_or_else(|| Error::InvalidParam("no distribution given".into()))?;
        match dist {
            "texp" => {
                let w = self.need_w("texp")?;
                let rate = match (self.rate, self.mean) {
                    (Some(r), _) => r,
                    (None, Some(m)) => solve_rate_for_mean(w, m)?,
                    (None, None) => return Err(Error::InvalidParam("--dist texp needs --rate or --mean".into())),
                };
                FlowSizeDistribution::truncated_exponential(w, rate)
            }
            "dirichlet" => {
                let seed = seed.ok_or_else(|| Error::InvalidParam("--dist dirichlet needs --seed".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                FlowSizeDistribution::dirichlet(self.need_w("dirichlet")?, self.alpha, self.floor, &mut rng)
            }
            path => {
                let text = fs::read_to_string(path)?;
                let (raw, _) = flowdist::parse_distribution_csv_raw(&text)?;
                match (raw, self.smooth) {
                    (RawDist::Theta(t), None) => FlowSizeDistribution::from_theta(t),
                    (RawDist::Theta(t), Some(eps)) => smoothed(&t, eps),
                    (RawDist::Counts(c), None) => FlowSizeDistribution::from_histogram(&c),
                    (RawDist::Counts(c), Some(eps)) => FlowSizeDistribution::from_histogram_smoothed(&c, eps),
                }
            }
        }
    }
}

fn smoothed(theta: &[f64], eps: f64) -> Result<FlowSizeDistribution> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam("smoothing eps must be positive".into()));
    }
    let w: Vec<f64> = theta.iter().map(|t| t + eps).collect();
    FlowSizeDistribution::from_weights(&w)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MethodArgs {
    /// ps, ps+seq, ps+syn, ps+syn+seq, fs, sh or ds
    #[arg(long)]
    pub method: String,
    /// Packet sampling probability (all methods except fs)
    #[arg(long)]
    pub pp: Option<f64>,
    /// Flow (SYN) sampling probability (fs, ds)
    #[arg(long)]
    pub pf: Option<f64>,
}

impl MethodArgs {
    pub fn spec(&self) -> Result<MethodSpec> {
        let m: Method = self.method.parse()?;
        MethodSpec::new(m, self.pp, self.pf)
    }
}

/// Observed counts from a `j,count` CSV; the j = 0 row is required.
pub fn read_counts(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let h = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if h.len() != 2 || &h[0] != "j" || &h[1] != "count" {
        return Err(Error::Parse { line: 1, msg: "header must be j,count".into() });
    }
    let mut counts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let num = |s: &str| s.parse::<u64>().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") });
        let j = num(&rec[0])?;
        if j as usize != i {
            let msg = if i == 0 { "first row must be j = 0".to_string() } else { format!("expected j = {i}, found {j}") };
            return Err(Error::Parse { line, msg });
        }
        counts.push(num(&rec[1])?);
    }
    if counts.len() < 2 {
        return Err(Error::EmptyInput);
    }
    Ok(counts)
}

pub fn read_population(path: &Path, w: usize) -> Result<FlowPopulation> {
    flowdist::read_flow_records(path, w)
}
