//! Monte Carlo sampling of flow populations, and exact SEQ-gain moments.
//!
//! Packets of a size-k flow are numbered 1..k in order; packet 1 is the SYN
//! and the packet number doubles as its sequence number.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowdist::{FlowPopulation, FlowSizeDistribution};
use crate::sampmat::{self, Method, MethodSpec};

/// Post-inference perturbation of the inferred size of SEQ methods, e.g. to
/// emulate an imperfect sequence-number mapping. Called only for flows that
/// were not discarded (j ≥ 1).
pub trait SeqNoise: Sync {
    fn perturb(&self, j: usize, k: usize, rng: &mut dyn RngCore) -> usize;
}

impl<F> SeqNoise for F
where
    F: Fn(usize, usize, &mut dyn RngCore) -> usize + Sync,
{
    fn perturb(&self, j: usize, k: usize, rng: &mut dyn RngCore) -> usize {
        self(j, k, rng)
    }
}

/// Per-flow sampler with the method's constants precomputed.
#[derive(Debug, Clone)]
pub struct FlowSampler {
    method: Method,
    pp: f64,
    pf: f64,
    ln_q: f64,
}

impl FlowSampler {
    pub fn new(spec: &MethodSpec) -> Self {
        let pp = spec.pp();
        Self {
            method: spec.method,
            pp,
            pf: spec.pf(),
            ln_q: (-pp).ln_1p(),
        }
    }

    /// Number of unsampled packets before the next sampled one.
    #[inline]
    fn gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.ln_q == f64::NEG_INFINITY {
            return 0.0;
        }
        let u: f64 = 1.0 - rng.gen::<f64>();
        (u.ln() / self.ln_q).floor()
    }

    /// First sampled packet at or after `from`, if any up to `k`.
    #[inline]
    fn first_from<R: Rng + ?Sized>(&self, from: usize, k: usize, rng: &mut R) -> Option<usize> {
        if from > k {
            return None;
        }
        let pos = from as f64 + self.gap(rng);
        (pos <= k as f64).then_some(pos as usize)
    }

    /// Last sampled packet in `from..=k`, if any.
    #[inline]
    fn last_in<R: Rng + ?Sized>(&self, from: usize, k: usize, rng: &mut R) -> Option<usize> {
        if from > k {
            return None;
        }
        let pos = k as f64 - self.gap(rng);
        (pos >= from as f64).then_some(pos as usize)
    }

    fn count_in<R: Rng + ?Sized>(&self, from: usize, k: usize, rng: &mut R) -> usize {
        let mut n = 0;
        let mut at = from;
        while let Some(pos) = self.first_from(at, k, rng) {
            n += 1;
            at = pos + 1;
        }
        n
    }

    /// Observed size j ∈ 0..=k of a size-k flow. The first draw is always the
    /// SYN decision.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        debug_assert!(k >= 1);
        let syn_p = match self.method {
            Method::Fs | Method::Ds => self.pf,
            _ => self.pp,
        };
        let syn = rng.gen::<f64>() < syn_p;
        match self.method {
            Method::Ps => syn as usize + self.count_in(2, k, rng),
            Method::PsSeq => {
                let first = if syn { Some(1) } else { self.first_from(2, k, rng) };
                match first {
                    None => 0,
                    Some(f) => self.last_in(f + 1, k, rng).unwrap_or(f) - f + 1,
                }
            }
            Method::PsSyn => {
                if syn {
                    1 + self.count_in(2, k, rng)
                } else {
                    0
                }
            }
            Method::PsSynSeq | Method::Ds => {
                if syn {
                    self.last_in(2, k, rng).unwrap_or(1)
                } else {
                    0
                }
            }
            Method::Fs => {
                if syn {
                    k
                } else {
                    0
                }
            }
            Method::Sh => {
                let first = if syn { Some(1) } else { self.first_from(2, k, rng) };
                first.map_or(0, |f| k - f + 1)
            }
        }
    }
}

/// Observed size of one size-k flow under `spec`.
pub fn sample_flow<R: Rng + ?Sized>(spec: &MethodSpec, k: usize, rng: &mut R) -> usize {
    FlowSampler::new(spec).sample(k, rng)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replicate `replicate`; flows use `stream = flow index`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = splitmix(seed) ^ splitmix(replicate.wrapping_add(0x5851_F42D_4C95_7F2D));
    for chunk in key.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The generator for flow `flow` of replicate `replicate`.
pub fn flow_rng(seed: u64, replicate: u64, flow: u64) -> ChaCha8Rng {
    let mut r = replicate_rng(seed, replicate);
    r.set_stream(flow);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
    pub n_flows: u64,
}

impl SimConfig {
    pub fn new(seed: u64, replicates: usize, n_flows: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::InvalidParam("replicates must be at least 1".into()));
        }
        if n_flows == 0 {
            return Err(Error::InvalidParam("number of flows must be positive".into()));
        }
        Ok(Self { seed, replicates, n_flows })
    }
}

/// Counts M′₀..M′_W of observed sizes and the original flow count N.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampledCounts {
    pub n: u64,
    pub counts: Vec<u64>,
}

impl SampledCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { n: counts.iter().sum(), counts }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Observed empirical law θ′_j = M′_j / N.
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }
}

/// Where original flow sizes come from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Draw N i.i.d. sizes from a distribution (N from the config).
    Dist(&'a FlowSizeDistribution),
    /// A fixed population; every replicate samples the same flows.
    Population(&'a FlowPopulation),
}

impl Source<'_> {
    fn w(&self) -> usize {
        match self {
            Source::Dist(d) => d.w(),
            Source::Population(p) => p.w(),
        }
    }
}

struct SizeTable {
    cdf: Vec<f64>,
}

impl SizeTable {
    fn new(dist: &FlowSizeDistribution) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = dist
            .theta()
            .iter()
            .map(|t| {
                acc += t;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = f64::INFINITY;
        Self { cdf }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u) + 1
    }
}

fn run_replicate(
    source: Source<'_>,
    table: Option<&SizeTable>,
    sampler: &FlowSampler,
    seq: bool,
    noise: Option<&dyn SeqNoise>,
    seed: u64,
    replicate: u64,
    n_flows: u64,
) -> SampledCounts {
    let w = source.w();
    let mut counts = vec![0u64; w + 1];
    let base = replicate_rng(seed, replicate);
    let mut one = |flow: u64, k: Option<usize>| {
        let mut rng = base.clone();
        rng.set_stream(flow);
        let k = k.unwrap_or_else(|| table.unwrap().draw(&mut rng));
        let mut j = sampler.sample(k, &mut rng);
        if seq && j > 0 {
            if let Some(nz) = noise {
                j = nz.perturb(j, k, &mut rng).min(w);
            }
        }
        counts[j] += 1;
    };
    match source {
        Source::Dist(_) => (0..n_flows).for_each(|f| one(f, None)),
        Source::Population(p) => p.sizes().enumerate().for_each(|(f, k)| one(f as u64, Some(k))),
    }
    SampledCounts::new(counts)
}

/// Sample every flow independently under `spec`, once per replicate.
///
/// Results depend only on (seed, replicate, flow index), never on thread
/// scheduling.
pub fn sample_population(
    source: Source<'_>,
    spec: &MethodSpec,
    config: &SimConfig,
    noise: Option<&dyn SeqNoise>,
) -> Result<Vec<SampledCounts>> {
    if config.replicates == 0 {
        return Err(Error::InvalidParam("replicates must be at least 1".into()));
    }
    let table = match source {
        Source::Dist(d) => Some(SizeTable::new(d)),
        Source::Population(_) => None,
    };
    let sampler = FlowSampler::new(spec);
    let seq = spec.method.uses_seq();
    Ok((0..config.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(source, table.as_ref(), &sampler, seq, noise, config.seed, r, config.n_flows))
        .collect())
}

/// Exact moments of the inferred size of a SEQ method against the physically
/// sampled packet count of the same method without SEQ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeqGain {
    pub k: usize,
    pub mean_inferred: f64,
    pub mean_physical: f64,
    /// E[Ñ_k] / E[N_k].
    pub r: f64,
    pub var_inferred: f64,
}

pub fn seq_gain_exact(spec: &MethodSpec, k: usize) -> Result<SeqGain> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let p = spec.pp();
    let mean_physical = match spec.method {
        Method::PsSeq => k as f64 * p,
        Method::PsSynSeq => p * (1.0 + (k - 1) as f64 * p),
        Method::Ds => spec.pf() * (1.0 + (k - 1) as f64 * p),
        m => return Err(Error::UnsupportedMethod(format!("{m} (SEQ methods only)"))),
    };
    let col = sampmat::column(spec, k);
    let m1: f64 = col.iter().enumerate().map(|(j, b)| j as f64 * b).sum();
    let m2: f64 = col.iter().enumerate().map(|(j, b)| (j * j) as f64 * b).sum();
    Ok(SeqGain {
        k,
        mean_inferred: m1,
        mean_physical,
        r: m1 / mean_physical,
        var_inferred: m2 - m1 * m1,
    })
}

/// Large-flow approximation of Var(Ñ_k) under PS+SYN+SEQ: 4/p + k(k−2)p + 2k − 3.
pub fn seq_var_approx(pp: f64, k: usize) -> f64 {
    let k = k as f64;
    4.0 / pp + k * (k - 2.0) * pp + 2.0 * k - 3.0
}

/// Flow size above which the SEQ gain reaches α of its asymptote:
/// ⌈q(1+α)/(p(1−α))⌉.
pub fn seq_gain_threshold(alpha: f64, pp: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha} not in (0,1)")));
    }
    if !(pp > 0.0 && pp <= 1.0) {
        return Err(Error::InvalidParam(format!("p_p = {pp} not in (0,1]")));
    }
    let x = (1.0 - pp) * (1.0 + alpha) / (pp * (1.0 - alpha));
    // absorb representation error before rounding up (27.000000000000004 → 27)
    let x = (x * 1e9).round() / 1e9;
    Ok(x.ceil().max(1.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_rates() {
        let mut rng = flow_rng(1, 0, 0);
        for k in 1..20 {
            assert_eq!(sample_flow(&MethodSpec::fs(1.0).unwrap(), k, &mut rng), k);
            assert_eq!(sample_flow(&MethodSpec::ps(1.0).unwrap(), k, &mut rng), k);
            assert_eq!(sample_flow(&MethodSpec::ps_seq(1.0).unwrap(), k, &mut rng), k);
            assert_eq!(sample_flow(&MethodSpec::sh(1.0).unwrap(), k, &mut rng), k);
        }
    }

    #[test]
    fn ds_single_packet() {
        let spec = MethodSpec::ds(0.5, 0.5).unwrap();
        let mut rng = flow_rng(2, 0, 0);
        let n = 200_000;
        let ones = (0..n).filter(|_| sample_flow(&spec, 1, &mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn ds_reduces_to_fs() {
        let ds = FlowSampler::new(&MethodSpec::ds(0.3, 1.0).unwrap());
        let fs = FlowSampler::new(&MethodSpec::fs(0.3).unwrap());
        for f in 0..2000 {
            let k = 1 + f as usize % 17;
            assert_eq!(ds.sample(k, &mut flow_rng(9, 3, f)), fs.sample(k, &mut flow_rng(9, 3, f)));
        }
    }

    #[test]
    fn deterministic_population() {
        let d = FlowSizeDistribution::truncated_exponential(10, 0.3).unwrap();
        let spec = MethodSpec::ps_syn_seq(0.4).unwrap();
        let cfg = SimConfig::new(42, 3, 5000).unwrap();
        let a = sample_population(Source::Dist(&d), &spec, &cfg, None).unwrap();
        let b = sample_population(Source::Dist(&d), &spec, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|c| c.n == 5000));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| sample_population(Source::Dist(&d), &spec, &cfg, None).unwrap());
        assert_eq!(a, c);
        assert!(SimConfig::new(1, 0, 10).is_err());
    }

    #[test]
    fn noise_hook_applies_to_seq_only() {
        let d = FlowSizeDistribution::truncated_exponential(6, 0.3).unwrap();
        let cfg = SimConfig::new(5, 1, 2000).unwrap();
        let shift = |j: usize, _k: usize, _r: &mut dyn RngCore| j + 100;
        let seq = sample_population(Source::Dist(&d), &MethodSpec::ps_seq(0.5).unwrap(), &cfg, Some(&shift)).unwrap();
        assert_eq!(seq[0].counts[1..6].iter().sum::<u64>(), 0);
        let plain = sample_population(Source::Dist(&d), &MethodSpec::ps(0.5).unwrap(), &cfg, Some(&shift)).unwrap();
        assert!(plain[0].counts[1] > 0);
    }

    #[test]
    fn population_source() {
        let pop = FlowPopulation::from_histogram(vec![3, 0, 2]).unwrap();
        let cfg = SimConfig::new(1, 2, 1).unwrap();
        let out = sample_population(Source::Population(&pop), &MethodSpec::fs(1.0).unwrap(), &cfg, None).unwrap();
        assert_eq!(out[0].counts, vec![0, 3, 0, 2]);
    }

    #[test]
    fn gain_small_flows() {
        for spec in [MethodSpec::ps_seq(0.1).unwrap(), MethodSpec::ps_syn_seq(0.1).unwrap(), MethodSpec::ds(0.3, 0.1).unwrap()] {
            for k in [1, 2] {
                assert!((seq_gain_exact(&spec, k).unwrap().r - 1.0).abs() < 1e-12, "{spec} k={k}");
            }
            assert!(seq_gain_exact(&spec, 50).unwrap().r > 1.0);
        }
        assert!(seq_gain_exact(&MethodSpec::ps(0.1).unwrap(), 5).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(seq_gain_threshold(0.5, 0.1).unwrap(), 27);
        assert_eq!(seq_gain_threshold(1e-12, 0.5).unwrap(), 1);
        assert!(seq_gain_threshold(1.0, 0.5).is_err());
    }
}
