use meanfield_core::blr_ard::{update_coeff_precision, BlrArd, BlrArdConfig, BlrArdState, RegressionData};
use meanfield_core::condconj::{global_step, local_steps};
use meanfield_core::data::{split_indices, Observations};
use meanfield_core::engine::{meanfield_gaussian_fixed_point, CaviModel, InitStrategy};
use meanfield_core::expfam::ExpFamParam;
use meanfield_core::gmm::{update_assignments, update_components, DiagGmm, DiagGmmConfig, Gmm, GmmConfig};
use meanfield_core::lda::{Corpus, Lda, LdaConfig};
use meanfield_core::linalg::Cholesky;
use proptest::prelude::*;

fn nondecreasing(prev: f64, cur: f64) -> bool {
    cur >= prev - 1e-8 * (1.0 + prev.abs())
}

fn points(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 1..max_n)
}

fn corpus(v: usize) -> impl Strategy<Value = Corpus> {
    prop::collection::vec(prop::collection::vec((0..v as u32, 1u32..5), 0..12), 1..15)
        .prop_map(move |docs| Corpus::new(v, docs).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gmm_elbo_never_decreases(xs in points(60), k in 1usize..5, sigma2 in 0.5f64..50.0, seed in 0u64..1000) {
        let data = Observations::univariate(xs).unwrap();
        let model = Gmm::new(GmmConfig::new(k, sigma2).unwrap(), 1).unwrap();
        let mut s = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
        let mut prev = model.elbo(&s, &data).unwrap();
        for _ in 0..25 {
            model.sweep(&mut s, &data).unwrap();
            let cur = model.elbo(&s, &data).unwrap();
            prop_assert!(nondecreasing(prev, cur), "{} -> {}", prev, cur);
            prev = cur;
        }
    }

    #[test]
    fn responsibilities_are_distributions(xs in points(40), k in 1usize..6, seed in 0u64..1000) {
        let data = Observations::univariate(xs).unwrap();
        let model = Gmm::new(GmmConfig::new(k, 10.0).unwrap(), 1).unwrap();
        let mut s = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
        update_assignments(&mut s, &data).unwrap();
        for i in 0..data.values().len() {
            let row = s.resp_row(i);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        update_components(&mut s, &data, 10.0).unwrap();
        prop_assert!(s.variances().iter().all(|&v| v > 0.0 && v <= 10.0));
    }

    #[test]
    fn typed_sweep_matches_global_local_steps(xs in points(30), k in 1usize..4, seed in 0u64..1000) {
        let data = Observations::univariate(xs).unwrap();
        let model = Gmm::new(GmmConfig::new(k, 4.0).unwrap(), 1).unwrap();
        let init = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
        let lambda = model.global_from_state(&init);
        let phis: Vec<ExpFamParam> = local_steps(&model, &lambda, &data).unwrap();
        let next = global_step(&model, &phis, &data).unwrap();
        let (means, vars) = model.components_from_global(&next).unwrap();

        let mut typed = init.clone();
        model.sweep(&mut typed, &data).unwrap();
        for (a, b) in typed.means().iter().zip(&means) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in typed.variances().iter().zip(&vars) {
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn diag_gmm_elbo_never_decreases(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40),
        k in 1usize..4,
        seed in 0u64..1000,
    ) {
        let data = Observations::from_rows(&rows).unwrap();
        let model = DiagGmm::new(DiagGmmConfig::with_defaults(k), 3).unwrap();
        let mut s = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
        let mut prev = model.elbo(&s, &data).unwrap();
        for _ in 0..20 {
            model.sweep(&mut s, &data).unwrap();
            let cur = model.elbo(&s, &data).unwrap();
            prop_assert!(nondecreasing(prev, cur), "{} -> {}", prev, cur);
            prev = cur;
        }
    }

    #[test]
    fn lda_sum_identities_and_monotone_elbo(c in corpus(12), k in 1usize..4, eta in 0.05f64..1.0, seed in 0u64..1000) {
        let config = LdaConfig::symmetric(k, eta, 0.4);
        let model = Lda::new(config.clone(), 12).unwrap();
        let mut s = model.init_state(&c, InitStrategy::DataCalibrated, seed).unwrap();
        let mut prev = model.elbo(&s, &c).unwrap();
        let alpha_sum: f64 = config.alpha.iter().sum();
        for _ in 0..10 {
            model.sweep(&mut s, &c).unwrap();
            for d in 0..c.docs().len() {
                let want = alpha_sum + c.doc_len(d);
                prop_assert!((s.gamma_row(d).iter().sum::<f64>() - want).abs() <= 1e-12 * want);
            }
            let want = (k * 12) as f64 * eta + c.total_tokens();
            prop_assert!((s.lambda.iter().sum::<f64>() - want).abs() <= 1e-12 * want);
            let cur = model.elbo(&s, &c).unwrap();
            prop_assert!(nondecreasing(prev, cur), "{} -> {}", prev, cur);
            prev = cur;
        }
    }

    #[test]
    fn blr_precision_stays_positive_definite(
        dim in 1usize..6,
        n in 0usize..30,
        values in prop::collection::vec(-3.0f64..3.0, 200),
        seed in 0u64..1000,
    ) {
        let x: Vec<f64> = values.iter().cycle().take(n * dim).copied().collect();
        let y: Vec<f64> = values.iter().rev().take(n).copied().collect();
        let data = RegressionData::new(dim, x, y).unwrap();
        let config = BlrArdConfig::default();
        let model = BlrArd::new(config, dim).unwrap();
        let mut s: BlrArdState = model.init_state(&data, InitStrategy::DataCalibrated, seed).unwrap();
        let mut prev = model.elbo(&s, &data).unwrap();
        for _ in 0..15 {
            model.sweep(&mut s, &data).unwrap();
            prop_assert!(Cholesky::new(&s.v_inv, dim).is_ok());
            prop_assert!(s.b_star > 0.0 && s.d_star.iter().all(|d| *d > 0.0));
            let cur = model.elbo(&s, &data).unwrap();
            prop_assert!(nondecreasing(prev, cur), "{} -> {}", prev, cur);
            prev = cur;
        }
        update_coeff_precision(&mut s, &data, &config).unwrap();
        prop_assert!((s.a_star - (config.a0 + n as f64 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn meanfield_variance_is_inverse_precision_diagonal(
        s1 in 0.1f64..5.0,
        s2 in 0.1f64..5.0,
        r in -0.99f64..0.99,
    ) {
        let c = r * (s1 * s2).sqrt();
        let (_, v) = meanfield_gaussian_fixed_point([0.0, 0.0], [[s1, c], [c, s2]]).unwrap();
        let det = s1 * s2 - c * c;
        prop_assert!((v[0] - det / s2).abs() <= 1e-12 * s1);
        prop_assert!((v[1] - det / s1).abs() <= 1e-12 * s2);
        prop_assert!(v[0] <= s1 && v[1] <= s2);
    }

    #[test]
    fn heldout_split_partitions_indices(n in 0usize..500, fraction in 0.0f64..0.5, seed in 0u64..1000) {
        let (train, held) = split_indices(n, fraction, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, fraction, seed).unwrap(), (train, held));
    }
}
