use flowsamp::simulate::{self, SimConfig, Source};
use flowsamp::{sampmat, FlowPopulation, FlowSizeDistribution, MethodSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_specs() -> Vec<MethodSpec> {
    vec![
        MethodSpec::ps(0.3).unwrap(),
        MethodSpec::ps_seq(0.3).unwrap(),
        MethodSpec::ps_syn(0.3).unwrap(),
        MethodSpec::ps_syn_seq(0.3).unwrap(),
        MethodSpec::fs(0.3).unwrap(),
        MethodSpec::sh(0.15).unwrap(),
        MethodSpec::ds(0.5, 0.2).unwrap(),
    ]
}

#[test]
fn sampled_sizes_follow_the_matrix_column() {
    let draws = 200_000;
    for spec in all_specs() {
        for k in [1usize, 4, 17] {
            let col = sampmat::column(&spec, k);
            let mut hist = vec![0u64; k + 1];
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            for _ in 0..draws {
                hist[simulate::sample_flow(&spec, k, &mut rng)] += 1;
            }
            for (j, (&h, &b)) in hist.iter().zip(&col).enumerate() {
                let n = draws as f64;
                let sd = (n * b * (1.0 - b)).sqrt().max(1.0);
                assert!((h as f64 - n * b).abs() <= 5.0 * sd, "{spec} k={k} j={j}: {h} vs {}", n * b);
            }
        }
    }
}

#[test]
fn replicates_do_not_depend_on_thread_count() {
    let dist = FlowSizeDistribution::truncated_exponential(30, 0.2).unwrap();
    let spec = MethodSpec::ds(0.4, 0.3).unwrap();
    let cfg = SimConfig::new(99, 6, 20_000).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate::sample_population(Source::Dist(&dist), &spec, &cfg, None).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_ne!(one[0], one[1]);
    for c in &one {
        assert_eq!(c.n, 20_000);
        assert_eq!(c.counts.len(), 31);
    }
}

#[test]
fn population_counts_every_flow_once() {
    let pop = FlowPopulation::from_sizes([1u64, 2, 2, 5, 5, 5, 9], 6).unwrap();
    let cfg = SimConfig::new(1, 3, pop.n()).unwrap();
    let full = simulate::sample_population(Source::Population(&pop), &MethodSpec::fs(1.0).unwrap(), &cfg, None).unwrap();
    for c in &full {
        assert_eq!(c.counts, vec![0, 1, 2, 0, 0, 3, 0]);
    }
    let thin = simulate::sample_population(Source::Population(&pop), &MethodSpec::ps(0.5).unwrap(), &cfg, None).unwrap();
    assert!(thin.iter().all(|c| c.n == 6));
}

#[test]
fn seq_gain_threshold_grows_as_p_shrinks() {
    let mut last = 0;
    for pp in [0.5, 0.1, 0.02, 0.005] {
        let t = simulate::seq_gain_threshold(0.9, pp).unwrap();
        assert!(t > last);
        last = t;
        let g = simulate::seq_gain_exact(&MethodSpec::ps_syn_seq(pp).unwrap(), t as usize).unwrap();
        assert!(g.r * pp > 0.85, "pp={pp}: r p = {}", g.r * pp);
    }
}
