use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flowsamp::compare::{self, MethodRequest};
use flowsamp::estimate::{self, Estimator};
use flowsamp::normalize::{self, DsFree, NormKind, NormalizationSpec};
use flowsamp::rsrcopt::{self, ResourceProfile};
use flowsamp::simulate::{self, SimConfig, Source};
use flowsamp::{fisher, sampmat, Method};

mod inputs;
mod output;

use inputs::{DistArgs, MethodArgs};
use output::{csv_bytes, write_atomic, write_results, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "flowsamp", version, about = "Flow size distribution sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the sampling matrix B as CSV, row j = 0 first
    Matrix(MatrixArgs),
    /// Per-size Cramér-Rao bounds for one method
    Fisher(FisherArgs),
    /// Parameters of a method that reach a target sampling rate
    Normalize(NormalizeArgs),
    /// CRLBs of several methods at a shared normalized rate
    Compare(CompareArgs),
    /// Sample flow populations and count observed sizes
    Simulate(SimulateArgs),
    /// Estimate the original distribution from observed counts
    Estimate(EstimateArgs),
    /// Simulate, estimate, and compare estimator variance with the CRLB
    Evaluate(EvaluateArgs),
    /// Dual Sampling operating point under router resource limits
    Optimize(OptimizeArgs),
    /// Gain from sequence-number inference for a SEQ method
    Seqgain(SeqgainArgs),
}

#[derive(Args, Debug, Serialize)]
struct MatrixArgs {
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    w: usize,
    /// Write the inverse of the lower block instead
    #[arg(long)]
    inverse: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FisherArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Results JSON (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV `k,sqrt_crlb`
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct NormalizeArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    method: String,
    #[arg(long)]
    p: f64,
    /// ppr or esr
    #[arg(long)]
    norm: String,
    /// DS: fix p_p and solve for p_f
    #[arg(long, conflicts_with = "ds_pf")]
    ds_pp: Option<f64>,
    /// DS: fix p_f and solve for p_p
    #[arg(long)]
    ds_pf: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    dist: DistArgs,
    /// ppr or esr
    #[arg(long)]
    norm: String,
    #[arg(long)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_value = "ps,ps+seq,ps+syn,ps+syn+seq,fs,sh")]
    methods: Vec<String>,
    /// Add DS with this p_p (repeatable)
    #[arg(long)]
    ds_pp: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV `k,method,sqrt_crlb`
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    dist: DistArgs,
    /// Flow records (one size per line, or `size,count` CSV) instead of --dist
    #[arg(long, conflicts_with = "dist")]
    flows: Option<PathBuf>,
    #[command(flatten)]
    method: MethodArgs,
    /// Flows per replicate when drawing from --dist
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    /// CSV `replicate,j,count` (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Results JSON with the manifest and per-replicate totals
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    /// Counts CSV `j,count` including j = 0
    #[arg(long)]
    counts: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
    /// Original number of flows (defaults to the total count)
    #[arg(long)]
    n: Option<u64>,
    /// unbiased, mle or mle-sh
    #[arg(long)]
    estimator: Option<String>,
    /// Also report the Euclidean projection onto the simplex (biased)
    #[arg(long)]
    project_simplex: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV `k,theta_hat` (plus `theta_projected` when projecting)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    estimator: Option<String>,
    /// Moving-average width for the variance column; 0 disables
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV `k,theta,mean,var_empirical,crlb_over_n,ratio`
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct OptimizeArgs {
    #[arg(long)]
    capacity_gbps: f64,
    #[arg(long)]
    tau_ns: f64,
    #[arg(long)]
    tmax: f64,
    #[arg(long)]
    active_flows: f64,
    #[arg(long, default_value_t = rsrcopt::DEFAULT_PACKET_BITS)]
    packet_bits: f64,
    /// Evaluate ESR and CRLB at the corner for this distribution
    #[command(flatten)]
    dist: DistArgs,
    /// Also report CRLB ratios after doubling T_max and C
    #[arg(long)]
    scaling: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SeqgainArgs {
    #[command(flatten)]
    method: MethodArgs,
    /// Flow sizes to evaluate
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Report the size at which the gain reaches this fraction of 1/p_p
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Domain(flowsamp::Error),
    Io(io::Error),
}

impl From<flowsamp::Error> for Failure {
    fn from(e: flowsamp::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Domain(e) => write!(f, "{}: {e}", e.name()),
            Failure::Io(e) => write!(f, "IoError: {e}"),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

fn parse<T: std::str::FromStr<Err = flowsamp::Error>>(flag: &str, s: &str) -> Res<T> {
    s.parse().map_err(|e: flowsamp::Error| Failure::Usage(format!("{flag}: {e}")))
}

/// Distribution plus the files it was read from, with the seed rule enforced.
fn load_dist(d: &DistArgs, seed: Option<u64>) -> Res<flowsamp::FlowSizeDistribution> {
    if !d.given() {
        return usage("--dist is required");
    }
    if d.is_random() && seed.is_none() {
        return usage("--dist dirichlet is randomized and needs --seed");
    }
    Ok(d.load(seed)?)
}

fn files<'a>(list: &[Option<&'a Path>]) -> Vec<&'a Path> {
    list.iter().flatten().copied().collect()
}

fn fmt_f(x: f64) -> String {
    format!("{x:e}")
}

fn matrix(a: &MatrixArgs) -> Res<()> {
    let spec = a.method.spec()?;
    let m = sampmat::build(&spec, a.w)?;
    let mut buf = Vec::new();
    if a.inverse {
        sampmat::write_matrix_csv(m.binv()?, &mut buf)?;
    } else {
        sampmat::write_matrix_csv(m.b(), &mut buf)?;
    }
    Ok(write_atomic(a.out.as_deref(), &buf)?)
}

#[derive(Serialize)]
struct FisherPayload {
    method: flowsamp::MethodSpec,
    w: usize,
    mean: f64,
    d: Vec<f64>,
    crlb_diag: Vec<f64>,
    crlb_sqrt: Vec<f64>,
}

fn fisher_cmd(a: &FisherArgs) -> Res<()> {
    let dist = load_dist(&a.dist, a.seed)?;
    let spec = a.method.spec()?;
    let m = sampmat::build(&spec, dist.w())?;
    let d = fisher::sampled_dist(&m, &dist)?;
    let crlb_diag = fisher::crlb_diag(&m, &dist)?;
    let crlb_sqrt: Vec<f64> = crlb_diag.iter().map(|v| v.max(0.0).sqrt()).collect();
    let manifest = RunManifest::new("fisher", a, &files(&[a.dist.file()]), a.seed)?;
    if let Some(p) = &a.csv {
        let rows = crlb_sqrt.iter().enumerate().map(|(k, v)| [(k + 1).to_string(), fmt_f(*v)]);
        write_atomic(Some(p), &csv_bytes(&["k", "sqrt_crlb"], rows)?)?;
    }
    let payload = FisherPayload { method: spec, w: dist.w(), mean: dist.mean(), d: d.iter().copied().collect(), crlb_diag, crlb_sqrt };
    Ok(write_results(a.out.as_deref(), &manifest, &payload)?)
}

#[derive(Serialize)]
struct NormalizePayload {
    norm: NormalizationSpec,
    spec: flowsamp::MethodSpec,
    rate: f64,
}

fn normalize_cmd(a: &NormalizeArgs) -> Res<()> {
    let dist = load_dist(&a.dist, a.seed)?;
    let method: Method = parse("--method", &a.method)?;
    let kind: NormKind = parse("--norm", &a.norm)?;
    let free = match (a.ds_pp, a.ds_pf) {
        (Some(pp), _) => Some(DsFree::Pp(pp)),
        (None, Some(pf)) => Some(DsFree::Pf(pf)),
        (None, None) if method == Method::Ds => return usage("DS needs --ds-pp or --ds-pf"),
        (None, None) => None,
    };
    let norm = NormalizationSpec::new(kind, a.p)?;
    let spec = normalize::invert(method, a.p, &dist, kind, free)?;
    let rate = normalize::rate(&spec, &dist, kind);
    let manifest = RunManifest::new("normalize", a, &files(&[a.dist.file()]), a.seed)?;
    Ok(write_results(a.out.as_deref(), &manifest, &NormalizePayload { norm, spec, rate })?)
}

fn compare_cmd(a: &CompareArgs) -> Res<()> {
    let dist = load_dist(&a.dist, a.seed)?;
    let kind: NormKind = parse("--norm", &a.norm)?;
    let norm = NormalizationSpec::new(kind, a.p)?;
    let mut reqs = Vec::new();
    for m in &a.methods {
        let m: Method = parse("--methods", m)?;
        if m == Method::Ds {
            if a.ds_pp.is_empty() {
                return usage("ds in --methods needs at least one --ds-pp");
            }
        } else {
            reqs.push(MethodRequest::new(m));
        }
    }
    reqs.extend(a.ds_pp.iter().map(|&pp| MethodRequest::ds_pp(pp)));
    let run = compare::run_comparison(&dist, &norm, &reqs);
    let manifest = RunManifest::new("compare", a, &files(&[a.dist.file()]), a.seed)?;
    if let Some(p) = &a.csv {
        let mut buf = Vec::new();
        run.write_csv(&mut buf)?;
        write_atomic(Some(p), &buf)?;
    }
    Ok(write_results(a.out.as_deref(), &manifest, &run)?)
}

#[derive(Serialize)]
struct SimulatePayload {
    method: flowsamp::MethodSpec,
    n: u64,
    replicates: usize,
    /// Flows observed (j ≥ 1) per replicate.
    observed: Vec<u64>,
}

fn simulate_cmd(a: &SimulateArgs) -> Res<()> {
    let spec = a.method.spec()?;
    let (runs, n) = match (&a.flows, a.dist.given()) {
        (Some(path), _) => {
            let Some(w) = a.dist.w else { return usage("--flows needs --w") };
            let pop = inputs::read_population(path, w)?;
            let cfg = SimConfig::new(a.seed, a.replicates, pop.n())?;
            (simulate::sample_population(Source::Population(&pop), &spec, &cfg, None)?, pop.n())
        }
        (None, true) => {
            let dist = load_dist(&a.dist, Some(a.seed))?;
            let Some(n) = a.n else { return usage("--dist needs --n") };
            let cfg = SimConfig::new(a.seed, a.replicates, n)?;
            (simulate::sample_population(Source::Dist(&dist), &spec, &cfg, None)?, n)
        }
        (None, false) => return usage("one of --dist or --flows is required"),
    };
    let rows = runs.iter().enumerate().flat_map(|(r, c)| {
        c.counts.iter().enumerate().map(move |(j, v)| [r.to_string(), j.to_string(), v.to_string()])
    });
    write_atomic(a.out.as_deref(), &csv_bytes(&["replicate", "j", "count"], rows)?)?;
    if let Some(p) = &a.report {
        let manifest = RunManifest::new("simulate", a, &files(&[a.dist.file(), a.flows.as_deref()]), Some(a.seed))?;
        let observed = runs.iter().map(|c| c.n - c.counts[0]).collect();
        write_results(Some(p), &manifest, &SimulatePayload { method: spec, n, replicates: runs.len(), observed })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimatePayload {
    method: flowsamp::MethodSpec,
    estimator: Estimator,
    n: u64,
    theta_hat: Vec<f64>,
    sum: f64,
    /// Simplex projection of `theta_hat`; biased, for presentation only.
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_projected_biased: Option<Vec<f64>>,
}

fn estimator_for(name: Option<&str>, method: Method) -> Res<Estimator> {
    match name {
        Some(s) => parse("--estimator", s),
        None => Ok(Estimator::for_method(method)?),
    }
}

fn estimate_cmd(a: &EstimateArgs) -> Res<()> {
    let spec = a.method.spec()?;
    let counts = inputs::read_counts(&a.counts)?;
    let total: u64 = counts.iter().sum();
    let n = a.n.unwrap_or(total);
    if n != total {
        return Err(flowsamp::Error::InvalidParam(format!("--n {n} differs from the total count {total}")).into());
    }
    let est = estimator_for(a.estimator.as_deref(), spec.method)?;
    let m = sampmat::build(&spec, counts.len() - 1)?;
    let c: Vec<f64> = counts.iter().map(|&x| x as f64).collect();
    let theta_hat = estimate::estimate(est, &m, &c, n as f64)?;
    let projected = a.project_simplex.then(|| estimate::project_simplex(&theta_hat));
    if let Some(p) = &a.csv {
        let bytes = match &projected {
            Some(pr) => csv_bytes(
                &["k", "theta_hat", "theta_projected"],
                theta_hat.iter().zip(pr).enumerate().map(|(k, (t, q))| [(k + 1).to_string(), fmt_f(*t), fmt_f(*q)].to_vec()),
            )?,
            None => csv_bytes(&["k", "theta_hat"], theta_hat.iter().enumerate().map(|(k, t)| [(k + 1).to_string(), fmt_f(*t)].to_vec()))?,
        };
        write_atomic(Some(p), &bytes)?;
    }
    let manifest = RunManifest::new("estimate", a, &[a.counts.as_path()], None)?;
    let payload = EstimatePayload {
        method: spec,
        estimator: est,
        n,
        sum: theta_hat.iter().sum(),
        theta_hat,
        theta_projected_biased: projected,
    };
    Ok(write_results(a.out.as_deref(), &manifest, &payload)?)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Res<()> {
    let dist = load_dist(&a.dist, Some(a.seed))?;
    let spec = a.method.spec()?;
    let est = estimator_for(a.estimator.as_deref(), spec.method)?;
    let cfg = SimConfig::new(a.seed, a.replicates, a.n)?;
    let rep = estimate::empirical_variance_vs_crlb(&dist, &spec, &cfg, Some(est), a.window)?;
    if let Some(p) = &a.csv {
        let rows = (0..dist.w()).map(|k| {
            [
                (k + 1).to_string(),
                fmt_f(rep.theta[k]),
                fmt_f(rep.mean[k]),
                fmt_f(rep.var_empirical[k]),
                fmt_f(rep.crlb_over_n[k]),
                rep.ratio[k].map(fmt_f).unwrap_or_default(),
            ]
        });
        write_atomic(Some(p), &csv_bytes(&["k", "theta", "mean", "var_empirical", "crlb_over_n", "ratio"], rows)?)?;
    }
    let manifest = RunManifest::new("evaluate", a, &files(&[a.dist.file()]), Some(a.seed))?;
    Ok(write_results(a.out.as_deref(), &manifest, &rep)?)
}

#[derive(Serialize)]
struct OptimizePayload {
    pf_hat: f64,
    pp_hat: f64,
    pf_binding: rsrcopt::PfBinding,
    pf_saturated: bool,
    pp_saturated: bool,
    esr: Option<f64>,
    crlb_diag_at_corner: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling: Option<rsrcopt::ScalingReport>,
}

fn optimize_cmd(a: &OptimizeArgs) -> Res<()> {
    let profile = ResourceProfile::with_packet_bits(a.capacity_gbps, a.packet_bits, a.tau_ns, a.tmax, a.active_flows)?;
    let dist = if a.dist.given() { Some(load_dist(&a.dist, a.seed)?) } else { None };
    if a.scaling && dist.is_none() {
        return usage("--scaling needs --dist");
    }
    let opt = rsrcopt::optimal_ds(&profile, dist.as_ref())?;
    let crlb = match &dist {
        Some(d) => Some(fisher::crlb_diag(&sampmat::build(&opt.spec, d.w())?, d)?),
        None => None,
    };
    let scaling = match (&dist, a.scaling) {
        (Some(d), true) => Some(rsrcopt::crlb_scaling_report(&profile, d)?),
        _ => None,
    };
    let c = opt.caps;
    let payload = OptimizePayload {
        pf_hat: c.pf_hat,
        pp_hat: c.pp_hat,
        pf_binding: c.pf_binding,
        pf_saturated: c.pf_saturated,
        pp_saturated: c.pp_saturated,
        esr: opt.esr,
        crlb_diag_at_corner: crlb,
        scaling,
    };
    let manifest = RunManifest::new("optimize", a, &files(&[a.dist.file()]), a.seed)?;
    Ok(write_results(a.out.as_deref(), &manifest, &payload)?)
}

#[derive(Serialize)]
struct SeqgainRow {
    #[serde(flatten)]
    gain: simulate::SeqGain,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_approx: Option<f64>,
}

#[derive(Serialize)]
struct SeqgainPayload {
    method: flowsamp::MethodSpec,
    rows: Vec<SeqgainRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<u64>,
}

fn seqgain_cmd(a: &SeqgainArgs) -> Res<()> {
    let spec = a.method.spec()?;
    let mut rows = Vec::new();
    for &k in &a.k {
        let gain = simulate::seq_gain_exact(&spec, k)?;
        let var_approx = (spec.method == Method::PsSynSeq).then(|| simulate::seq_var_approx(spec.pp(), k));
        rows.push(SeqgainRow { gain, var_approx });
    }
    let threshold = a.alpha.map(|al| simulate::seq_gain_threshold(al, spec.pp())).transpose()?;
    if let Some(p) = &a.csv {
        let lines = rows.iter().map(|r| {
            let g = &r.gain;
            [
                g.k.to_string(),
                fmt_f(g.r),
                fmt_f(g.mean_inferred),
                fmt_f(g.mean_physical),
                fmt_f(g.var_inferred),
                r.var_approx.map(fmt_f).unwrap_or_default(),
            ]
        });
        write_atomic(Some(p), &csv_bytes(&["k", "r", "mean_inferred", "mean_physical", "var_inferred", "var_approx"], lines)?)?;
    }
    let manifest = RunManifest::new("seqgain", a, &[], None)?;
    Ok(write_results(a.out.as_deref(), &manifest, &SeqgainPayload { method: spec, rows, threshold })?)
}

fn run(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Matrix(a) => matrix(a),
        Command::Fisher(a) => fisher_cmd(a),
        Command::Normalize(a) => normalize_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Optimize(a) => optimize_cmd(a),
        Command::Seqgain(a) => seqgain_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Failure::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
