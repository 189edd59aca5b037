use flowsamp::estimate;
use flowsamp::fisher;
use flowsamp::flowdist;
use flowsamp::normalize::{self, DsFree, NormKind};
use flowsamp::sampmat;
use flowsamp::{FlowSizeDistribution, Method, MethodSpec};
use nalgebra::DVector;
use proptest::prelude::*;

fn any_dist(max_w: usize) -> impl Strategy<Value = FlowSizeDistribution> {
    prop::collection::vec(0.01f64..1.0, 2..=max_w).prop_map(|w| FlowSizeDistribution::from_weights(&w).unwrap())
}

fn any_spec() -> impl Strategy<Value = MethodSpec> {
    (0usize..7, 0.05f64..=1.0, 0.05f64..=1.0).prop_map(|(i, pp, pf)| {
        let m = Method::ALL[i];
        MethodSpec::new(m, m.needs_pp().then_some(pp), m.needs_pf().then_some(pf)).unwrap()
    })
}

/// PS and PS+SYN lose precision fast as W grows at small p.
fn well_conditioned(spec: &MethodSpec, w: usize) -> bool {
    match spec.method {
        Method::Ps | Method::PsSyn => (1.0 + 2.0 * (1.0 - spec.pp()) / spec.pp()).powi(w as i32) < 1e6,
        _ => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn columns_are_distributions(spec in any_spec(), w in 2usize..80) {
        let m = sampmat::build(&spec, w).unwrap();
        for k in 0..w {
            let col = m.b().column(k);
            prop_assert!(col.iter().all(|&x| x >= 0.0));
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            // nobody observes more packets than the flow had
            prop_assert!(col.iter().skip(k + 2).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn inverse_fisher_structure(spec in any_spec(), dist in any_dist(25)) {
        prop_assume!(well_conditioned(&spec, dist.w()));
        let m = sampmat::build(&spec, dist.w()).unwrap();
        let b = fisher::bundle(&m, &dist).unwrap();
        let one = DVector::from_element(dist.w(), 1.0);
        let th = DVector::from_column_slice(dist.theta());
        let scale = b.jinv.amax();
        prop_assert!((&b.jinv * &one - &th).amax() <= 1e-9 * scale.max(1.0));
        prop_assert!((&b.cplus * &one).amax() <= 1e-9 * scale.max(1.0));
        prop_assert!(b.crlb_diag.iter().all(|&c| c >= -1e-9 * scale));
        // rank-one difference; roundoff is on the scale of the operands
        let lo = fisher::eigen_extremes(&(&b.jtilde_inv - &b.jinv)).0;
        prop_assert!(lo >= -1e-12 * fisher::eigen_extremes(&b.jtilde_inv).1);
    }

    #[test]
    fn normalization_roundtrip(dist in any_dist(40), p in 0.01f64..0.9, pp in 0.05f64..=1.0, i in 0usize..7) {
        let method = Method::ALL[i];
        for kind in [NormKind::Ppr, NormKind::Esr] {
            let free = (method == Method::Ds).then_some(DsFree::Pp(pp));
            if let Ok(spec) = normalize::invert(method, p, &dist, kind, free) {
                prop_assert!((normalize::rate(&spec, &dist, kind) - p).abs() < 1e-9, "{spec} {kind}");
            }
        }
    }

    #[test]
    fn unbiased_estimator_inverts_expected_counts(spec in any_spec(), dist in any_dist(30)) {
        prop_assume!(spec.method.is_syn_based() && well_conditioned(&spec, dist.w()));
        let m = sampmat::build(&spec, dist.w()).unwrap();
        let d = fisher::sampled_dist(&m, &dist).unwrap();
        let n = 1e6;
        let counts: Vec<f64> = d.iter().map(|x| x * n).collect();
        let th = estimate::estimate_unbiased(&m, &counts, n).unwrap();
        for (a, b) in th.iter().zip(dist.theta()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mle_sums_to_one(counts in prop::collection::vec(0u32..1000, 3..30), pf in 0.05f64..=1.0, pp in 0.05f64..=1.0) {
        prop_assume!(counts[1..].iter().any(|&c| c > 0));
        let c: Vec<f64> = counts.iter().map(|&x| x as f64).collect();
        let n: f64 = c.iter().sum();
        let m = sampmat::build(&MethodSpec::ds(pf, pp).unwrap(), c.len() - 1).unwrap();
        let th = estimate::estimate_mle_syn(&m, &c, n).unwrap();
        prop_assert!((th.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_projection(v in prop::collection::vec(-2.0f64..2.0, 1..40)) {
        let p = estimate::project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = estimate::project_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_csv_roundtrip(dist in any_dist(50)) {
        let mut text = String::from("size,theta\n");
        for (k, t) in dist.theta().iter().enumerate() {
            text.push_str(&format!("{},{t:e}\n", k + 1));
        }
        let back = flowdist::parse_distribution_csv(&text).unwrap();
        for (a, b) in back.theta().iter().zip(dist.theta()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn ds_reduces_to_fs_and_pssynseq() {
    for w in [2, 7, 40] {
        let a = sampmat::build(&MethodSpec::ds(0.3, 1.0).unwrap(), w).unwrap();
        let b = sampmat::build(&MethodSpec::fs(0.3).unwrap(), w).unwrap();
        assert_eq!(a.b(), b.b());
        let a = sampmat::build(&MethodSpec::ds(0.4, 0.4).unwrap(), w).unwrap();
        let b = sampmat::build(&MethodSpec::ps_syn_seq(0.4).unwrap(), w).unwrap();
        assert_eq!(a.b(), b.b());
    }
}
