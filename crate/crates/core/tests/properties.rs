use proptest::prelude::*;

use tiktoc::config::{ExperimentConfig, Profile};
use tiktoc::data::{Dataset, Outcomes};
use tiktoc::metrics::{auc, classification_metrics, code_dist_n, codebleu, dist_n, mean_sd, paired_t_test, CodeBleuWeights};
use tiktoc::models::{predict_test_outcomes, test_case_pred_loss};
use tiktoc::pipeline::parse_checkpoint;
use tiktoc::synth::{self, SynthConfig};
use tiktoc::tokenizer::Tokenizer;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..25).prop_map(|k| k as f64 / 25.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps((s, l) in scored()) {
        let a = auc(&s, &l).unwrap();
        let mapped: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert!((a - auc(&mapped, &l).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn flipping_labels_complements_auc((s, l) in scored()) {
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        let sum = auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_rates_are_bounded((s, l) in scored(), t in 0.05f64..0.95) {
        let c = classification_metrics(&s, &l, t).unwrap();
        for v in [c.precision, c.recall, c.f1, c.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-12);
    }

    #[test]
    fn dist_n_is_a_fraction(texts in prop::collection::vec("[a-c ]{0,12}", 1..8), n in 1usize..3) {
        if let Ok(d) = dist_n(&texts, n) {
            prop_assert!(d > 0.0 && d <= 1.0);
        }
        if let Ok(d) = code_dist_n(&texts, n) {
            prop_assert!(d > 0.0 && d <= 1.0);
        }
    }

    #[test]
    fn t_test_is_antisymmetric(a in prop::collection::vec(0.0f64..1.0, 3..8), shift in prop::collection::vec(-0.1f64..0.1, 8)) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, d)| x + d).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-9);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn mean_matches_arithmetic_mean(xs in prop::collection::vec(-5.0f64..5.0, 2..10)) {
        let (m, sd) = mean_sd(&xs);
        prop_assert!((m - xs.iter().sum::<f64>() / xs.len() as f64).abs() < 1e-12);
        prop_assert!(sd >= 0.0);
    }

    #[test]
    fn head_probabilities_and_loss_are_bounded(r in prop::collection::vec(-3.0f64..3.0, 4), w in prop::collection::vec(-3.0f64..3.0, 12), y in prop::collection::vec(any::<bool>(), 3)) {
        let p = predict_test_outcomes(&r, &w, 3).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let l = test_case_pred_loss(&p, &y).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn outcomes_round_trip(bits in prop::collection::vec(any::<bool>(), 0..40)) {
        let o = Outcomes(bits);
        prop_assert_eq!(Outcomes::parse(&o.to_string()).unwrap(), o);
    }

    #[test]
    fn byte_tokenizer_round_trips(text in "\\PC{0,60}") {
        let tok = Tokenizer::bytes_only();
        prop_assert_eq!(tok.decode(&tok.encode(&text)), text);
    }

    #[test]
    fn config_text_round_trips(batch in 1usize..64, lambda in 0.0f64..=1.0, seed in any::<u32>(), desk in any::<bool>()) {
        let mut c = ExperimentConfig::profile(if desk { Profile::Desk } else { Profile::Paper });
        c.batch_size = batch;
        c.lambda = lambda;
        c.seed = seed as u64;
        prop_assert_eq!(ExperimentConfig::parse(&c.to_kv_string(), &[]).unwrap(), c);
    }

    #[test]
    fn checkpoint_parser_rejects_garbage(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let mut framed = b"TIKTOCK1".to_vec();
        framed.extend_from_slice(&bytes);
        prop_assert!(parse_checkpoint(&bytes).is_err());
        let _ = parse_checkpoint(&framed);
    }
}

fn corpus() -> Dataset {
    synth::generate(&SynthConfig::desk(0)).unwrap()
}

#[test]
fn codebleu_stays_in_unit_interval_across_submissions() {
    let data = corpus();
    let codes: Vec<&str> = data.interactions().take(60).map(|i| i.code.as_str()).collect();
    for a in &codes {
        for b in codes.iter().step_by(7) {
            let s = codebleu(a, b, CodeBleuWeights::default()).unwrap().score;
            assert!((0.0..=1.0 + 1e-12).contains(&s), "{s}");
        }
    }
}

#[test]
fn bundled_corpora_match_the_generator() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for (dir, cfg) in [("desk", SynthConfig::desk(0)), ("full", SynthConfig::full(0))] {
        let d = synth::generate(&cfg).unwrap();
        let csv = std::fs::read_to_string(root.join(dir).join("submissions.csv")).unwrap();
        let json = std::fs::read_to_string(root.join(dir).join("problems.json")).unwrap();
        assert_eq!(csv, d.submissions_csv(), "{dir} submissions drifted from the generator");
        assert_eq!(json, d.problems_json(), "{dir} problems drifted from the generator");
    }
    let desk = synth::generate(&SynthConfig::desk(0)).unwrap();
    assert_eq!((desk.problems.len(), desk.num_interactions()), (10, 2000));
}
