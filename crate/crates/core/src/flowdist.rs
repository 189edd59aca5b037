//! Flow size distributions: construction, synthetic families and file ingestion.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Relative frequencies θ₁..θ_W of flow sizes 1..W.
///
/// Every θ_k is strictly positive and the vector sums to one. The mean flow
/// size `D` is cached.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSizeDistribution {
    theta: Vec<f64>,
    mean: f64,
}

impl FlowSizeDistribution {
    /// Build from probabilities that already sum to one (within 1e-9); the
    /// vector is renormalized so the sum is exact to rounding.
    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        let s: f64 = theta.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("theta sums to {s}, expected 1")));
        }
        Self::from_weights(&theta)
    }

    /// Normalize arbitrary positive weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Empty);
        }
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidParam(format!("weight {} is {x}", i + 1)));
            }
            if x == 0.0 {
                return Err(Error::ZeroMass { bin: i + 1 });
            }
        }
        let s: f64 = w.iter().sum();
        let theta: Vec<f64> = w.iter().map(|x| x / s).collect();
        if let Some(i) = theta.iter().position(|&t| t == 0.0) {
            return Err(Error::ZeroMass { bin: i + 1 });
        }
        let mean = theta
            .iter()
            .enumerate()
            .map(|(i, t)| (i + 1) as f64 * t)
            .sum();
        Ok(Self { theta, mean })
    }

    /// θ_j = M_j / N from a histogram of flow counts per size.
    pub fn from_histogram(counts: &[u64]) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Empty);
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::ZeroMass { bin: i + 1 });
        }
        let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Self::from_weights(&w)
    }

    /// Histogram with `eps` added to every bin before normalizing.
    pub fn from_histogram_smoothed(counts: &[u64], eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParam("smoothing eps must be positive".into()));
        }
        if counts.is_empty() {
            return Err(Error::Empty);
        }
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 + eps).collect();
        Self::from_weights(&w)
    }

    /// θ_k ∝ exp(−rate·k), k = 1..W. A rate of 0 gives the uniform law.
    pub fn truncated_exponential(w: usize, rate: f64) -> Result<Self> {
        if w < 2 {
            return Err(Error::InvalidParam("truncated exponential needs W >= 2".into()));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::OutOfRange(format!("rate {rate}")));
        }
        let weights: Vec<f64> = (0..w).map(|i| (-rate * i as f64).exp()).collect();
        Self::from_weights(&weights)
    }

    /// Symmetric Dirichlet(alpha) draw, rejecting draws with any θ_k < `floor`.
    pub fn dirichlet<R: Rng + ?Sized>(w: usize, alpha: f64, floor: f64, rng: &mut R) -> Result<Self> {
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParam(e.to_string()))?;
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..w).map(|_| gamma.sample(rng)).collect();
            let s: f64 = g.iter().sum();
            if g.iter().all(|x| x / s >= floor) {
                return Self::from_weights(&g);
            }
        }
        Err(Error::Infeasible(format!("no Dirichlet draw above floor {floor}")))
    }

    pub fn w(&self) -> usize {
        self.theta.len()
    }

    /// θ₁..θ_W (index 0 holds θ₁).
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Mean flow size D = Σ k θ_k.
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

fn texp_mean(w: usize, rate: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..w {
        let e = (-rate * i as f64).exp();
        num += (i + 1) as f64 * e;
        den += e;
    }
    num / den
}

/// Rate of the truncated exponential on 1..W whose mean is `target`.
///
/// The mean decreases strictly in the rate, from (W+1)/2 at rate 0 towards 1,
/// so the root is bracketed and found by bisection.
pub fn solve_rate_for_mean(w: usize, target: f64) -> Result<f64> {
    let top = (w as f64 + 1.0) / 2.0;
    if w < 2 || !(target > 1.0) || target > top + 1e-12 {
        return Err(Error::OutOfRange(format!(
            "target mean {target} outside (1, {top}] for W = {w}"
        )));
    }
    if (target - top).abs() <= 1e-12 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while texp_mean(w, hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::OutOfRange(format!("target mean {target} too close to 1")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = texp_mean(w, mid);
        if (d - target).abs() <= 1e-11 {
            return Ok(mid);
        }
        if d > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Histogram of observed flow sizes, truncated at W.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPopulation {
    histogram: Vec<u64>,
    n: u64,
}

impl FlowPopulation {
    pub fn from_histogram(histogram: Vec<u64>) -> Result<Self> {
        let n = histogram.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { histogram, n })
    }

    /// Collect sizes, discarding any above `w`.
    pub fn from_sizes<I: IntoIterator<Item = u64>>(sizes: I, w: usize) -> Result<Self> {
        let mut h = vec![0u64; w];
        for s in sizes {
            if s >= 1 && s as usize <= w {
                h[s as usize - 1] += 1;
            }
        }
        Self::from_histogram(h)
    }

    pub fn w(&self) -> usize {
        self.histogram.len()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// M_j for j = 1..W (index 0 holds M₁).
    pub fn histogram(&self) -> &[u64] {
        &self.histogram
    }

    /// Flow sizes in ascending order, one entry per flow.
    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.histogram
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(i + 1).take(c as usize))
    }

    pub fn to_distribution(&self) -> Result<FlowSizeDistribution> {
        FlowSizeDistribution::from_histogram(&self.histogram)
    }
}

fn parse_u64(field: &str, line: usize) -> Result<u64> {
    field.trim().parse::<u64>().map_err(|e| Error::Parse {
        line,
        msg: format!("{:?}: {e}", field.trim()),
    })
}

/// Read flow sizes: either one positive integer per line, or CSV with header
/// `size,count`. Sizes above `w` are dropped.
pub fn read_flow_records<P: AsRef<Path>>(path: P, w: usize) -> Result<FlowPopulation> {
    let text = fs::read_to_string(path)?;
    parse_flow_records(&text, w)
}

pub fn parse_flow_records(text: &str, w: usize) -> Result<FlowPopulation> {
    if w == 0 {
        return Err(Error::InvalidParam("W must be positive".into()));
    }
    let mut h = vec![0u64; w];
    let mut csv_mode = false;
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !seen_data && !csv_mode && l.replace(' ', "").eq_ignore_ascii_case("size,count") {
            csv_mode = true;
            continue;
        }
        seen_data = true;
        let (size, count) = if csv_mode {
            let mut it = l.split(',');
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse { line, msg: "expected size,count".into() });
            };
            (parse_u64(a, line)?, parse_u64(b, line)?)
        } else {
            (parse_u64(l, line)?, 1)
        };
        if size == 0 {
            return Err(Error::Parse { line, msg: "flow size must be positive".into() });
        }
        if size as usize <= w {
            h[size as usize - 1] += count;
        }
    }
    FlowPopulation::from_histogram(h)
}

/// Read a distribution CSV with header `size,theta` or `size,count`.
/// Sizes must run 1..W contiguously.
pub fn read_distribution_csv<P: AsRef<Path>>(path: P) -> Result<FlowSizeDistribution> {
    let text = fs::read_to_string(path)?;
    parse_distribution_csv(&text)
}

pub fn parse_distribution_csv(text: &str) -> Result<FlowSizeDistribution> {
    let (dist, _) = parse_distribution_csv_raw(text)?;
    match dist {
        RawDist::Theta(t) => FlowSizeDistribution::from_theta(t),
        RawDist::Counts(c) => FlowSizeDistribution::from_histogram(&c),
    }
}

/// Parsed distribution file before validation.
#[derive(Debug, Clone, PartialEq)]
pub enum RawDist {
    Theta(Vec<f64>),
    Counts(Vec<u64>),
}

/// Parse without enforcing positivity; the second value is the header kind.
pub fn parse_distribution_csv_raw(text: &str) -> Result<(RawDist, &'static str)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let kind = match (headers.get(0), headers.get(1), headers.len()) {
        (Some("size"), Some("theta"), 2) => "theta",
        (Some("size"), Some("count"), 2) => "count",
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be size,theta or size,count".into(),
            })
        }
    };
    let mut thetas = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let size = parse_u64(&rec[0], line)?;
        if size as usize != i + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("sizes must be 1..W in order; found {size} at position {}", i + 1),
            });
        }
        if kind == "theta" {
            let t: f64 = rec[1].parse().map_err(|e| Error::Parse {
                line,
                msg: format!("{:?}: {e}", &rec[1]),
            })?;
            thetas.push(t);
        } else {
            counts.push(parse_u64(&rec[1], line)?);
        }
    }
    if thetas.is_empty() && counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(if kind == "theta" {
        (RawDist::Theta(thetas), "theta")
    } else {
        (RawDist::Counts(counts), "count")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_basics() {
        let d = FlowSizeDistribution::from_histogram(&[1, 1]).unwrap();
        assert_eq!(d.theta(), &[0.5, 0.5]);
        assert!((d.mean() - 1.5).abs() < 1e-15);
        assert_eq!(
            FlowSizeDistribution::from_histogram(&[0, 5]),
            Err(Error::ZeroMass { bin: 1 })
        );
        assert_eq!(FlowSizeDistribution::from_histogram(&[0, 0]), Err(Error::Empty));
    }

    #[test]
    fn five_bin_example() {
        let d = FlowSizeDistribution::from_histogram(&[22, 21, 20, 19, 8]).unwrap();
        let want = [22.0 / 90.0, 21.0 / 90.0, 20.0 / 90.0, 19.0 / 90.0, 8.0 / 90.0];
        for (a, b) in d.theta().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        // 240/90
        assert!((d.mean() - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn texp_ratio_and_limit() {
        let d = FlowSizeDistribution::truncated_exponential(50, 1.0).unwrap();
        assert!((d.theta()[0] / d.theta()[1] - std::f64::consts::E).abs() < 1e-12);
        let u = FlowSizeDistribution::truncated_exponential(2, 1e-12).unwrap();
        assert!((u.theta()[0] - 0.5).abs() < 1e-11);
    }

    #[test]
    fn rate_solver() {
        let r = solve_rate_for_mean(50, 16.039).unwrap();
        let d = FlowSizeDistribution::truncated_exponential(50, r).unwrap();
        assert!((d.mean() - 16.039).abs() <= 1e-9);
        assert_eq!(solve_rate_for_mean(50, 25.5).unwrap(), 0.0);
        assert!(matches!(solve_rate_for_mean(50, 40.0), Err(Error::OutOfRange(_))));
        assert!(matches!(solve_rate_for_mean(50, 1.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn flow_records() {
        let p = parse_flow_records("1\n1\n3", 3).unwrap();
        assert_eq!((p.n(), p.histogram()), (3, &[2u64, 0, 1][..]));
        let p = parse_flow_records("size,count\n1,10\n2,5", 2).unwrap();
        assert_eq!(p.n(), 15);
        let p = parse_flow_records("5\n900", 10).unwrap();
        assert_eq!(p.n(), 1);
        assert_eq!(
            parse_flow_records("1\nx\n", 3),
            Err(Error::Parse { line: 2, msg: "\"x\": invalid digit found in string".into() })
        );
        assert_eq!(parse_flow_records("", 3), Err(Error::EmptyInput));
        assert_eq!(parse_flow_records("7\n", 3), Err(Error::EmptyInput));
    }

    #[test]
    fn distribution_csv() {
        let d = parse_distribution_csv("size,count\n1,3\n2,1\n").unwrap();
        assert_eq!(d.theta(), &[0.75, 0.25]);
        let d = parse_distribution_csv("size,theta\n1,0.25\n2,0.75\n").unwrap();
        assert_eq!(d.theta(), &[0.25, 0.75]);
        assert!(matches!(
            parse_distribution_csv("size,theta\n1,0.5\n3,0.5\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_distribution_csv("k,v\n1,1\n"), Err(Error::Parse { .. })));
    }
}
