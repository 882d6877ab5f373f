use exlab::attacks::{bim, fgsm, pgd, AttackConfig, AttackKind, Scenario};
use exlab::autodiff::{apply_primitive, Primitive, Tensor};
use exlab::commands::RunConfig;
use exlab::data_io::checkpoint::{decode_tensors, encode_tensors};
use exlab::data_io::{format_sig, permutation, CheckpointHeader, SeedTree};
use exlab::nets::{init_params, NetworkSpec};
use exlab::oracle::{AccessMode, LedgerKind, TargetOracle};
use exlab::stealing::forward_diff_grad_with_dirs;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 5, -30.0, 30.0)) {
        let p = apply_primitive(Primitive::Softmax, &[&x]).unwrap();
        for row in p.row_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
        seed in any::<u64>(),
        round in any::<u64>(),
    ) {
        let t = Tensor::vector(data).unwrap();
        let header = CheckpointHeader::new("spec", seed, round, "phase");
        let bytes = encode_tensors(&header, &[&t]);
        let (h, back) = decode_tensors(&bytes).unwrap();
        prop_assert_eq!(h, header);
        prop_assert!(back[0].bit_eq(&t));
    }

    #[test]
    fn format_sig_keeps_nine_digits(x in -1e12f64..1e12) {
        let back: f64 = format_sig(x, 9).parse().unwrap();
        prop_assert!((back - x).abs() <= 1e-8 * x.abs().max(1e-300), "{} -> {}", x, back);
    }

    #[test]
    fn permutations_are_bijections(n in 0usize..200, seed in any::<u64>()) {
        let mut p = permutation(&mut SeedTree::new(seed).stream("p", 0), n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn attacks_stay_in_ball_and_box(
        x in matrix(6, 2, 0.0, 1.0),
        seed in any::<u64>(),
        eps in 0.01f64..0.5,
        kind in prop_oneof![Just(AttackKind::Fgsm), Just(AttackKind::Bim), Just(AttackKind::Pgd)],
        targeted in any::<bool>(),
    ) {
        let spec = NetworkSpec::classifier(&[2, 8, 3]).unwrap();
        let params = init_params(&spec, seed);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let cfg = AttackConfig {
            kind,
            eps,
            alpha: eps / 4.0,
            iterations: 6,
            scenario: if targeted { Scenario::Targeted } else { Scenario::Untargeted },
            ..AttackConfig::default()
        };
        let adv = match kind {
            AttackKind::Fgsm => fgsm(&spec, &params, &x, &labels, &cfg),
            AttackKind::Bim => bim(&spec, &params, &x, &labels, &cfg),
            AttackKind::Pgd => pgd(&spec, &params, &x, &labels, &cfg, seed),
        }
        .unwrap();
        for (a, o) in adv.data().iter().zip(x.data()) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - o).abs() <= eps + 1e-12);
        }
    }

    #[test]
    fn forward_diff_is_exact_on_linear_functions(c in prop::collection::vec(-5.0f64..5.0, 3), x in prop::collection::vec(-1.0f64..1.0, 3)) {
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let f = |p: &[f64]| Ok(p.iter().zip(&c).map(|(a, b)| a * b).sum());
        let g = forward_diff_grad_with_dirs(f, &x, &basis, 1e-3).unwrap();
        for (gi, ci) in g.iter().zip(&c) {
            prop_assert!((gi - ci).abs() < 1e-9);
        }
    }

    #[test]
    fn label_only_answers_are_one_hot(x in matrix(5, 2, 0.0, 1.0), seed in any::<u64>()) {
        let spec = NetworkSpec::classifier(&[2, 4, 3]).unwrap();
        let oracle = TargetOracle::deploy(spec.clone(), init_params(&spec, seed), AccessMode::LabelOnly).unwrap();
        let y = oracle.query(&x).unwrap();
        for row in y.row_iter() {
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
        prop_assert_eq!(oracle.ledger(LedgerKind::Steal), 5);
        prop_assert_eq!(oracle.ledger(LedgerKind::Attack), 0);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), rounds in 1usize..1000, lr in 1e-6f64..1.0, eps in 1e-3f64..1.0) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.steal.rounds = rounds;
        cfg.steal.generator_opt.learning_rate = lr;
        cfg.attack.eps = eps;
        cfg.attack.alpha = eps;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
