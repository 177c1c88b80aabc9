//! Property tests over seeded toy worlds.

use std::sync::Arc;

use proptest::prelude::*;

use pragcap_core::decoding::{decode, Method, MethodSpec, Scorers};
use pragcap_core::evaluation::{retrieve, Harness, UniformLm};
use pragcap_core::listeners::{listener_posterior, make_eval_listener, SimilarityMode, ToySimilarity};
use pragcap_core::logspace::normalization_error;
use pragcap_core::speakers::{ToyLexiconSpeaker, ToyWorld, WorldParams};
use pragcap_core::tuning::{coarse_to_fine_search, SearchSpec};
use pragcap_core::{DecodeConfig, RefGameContext};

fn world(seed: u64) -> Arc<ToyWorld> {
    WorldParams { n_sets: 3, n_attributes: 8, overlap_min: 2, seed, ..WorldParams::default() }
        .generate()
        .unwrap()
        .into_shared()
}

const METHODS: [Method; 6] =
    [Method::Base, Method::Picl, Method::Es, Method::IncreRsa, Method::PiclFullRerank, Method::PiclNoDistractors];

fn lambda_for(method: Method, unit: f64) -> f64 {
    method.lambda_range().map_or(0.0, |(lo, hi)| lo + unit * (hi - lo))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoded_captions_are_complete_and_bounded(
        seed in 0u64..1000,
        unit in 0.0f64..=1.0,
        beam in 1usize..6,
        max_len in 1usize..6,
    ) {
        let w = world(seed);
        let speaker = ToyLexiconSpeaker::new(w.clone(), 0.15, 0.3).unwrap();
        let listener = ToySimilarity::new(w.clone(), SimilarityMode::Dot);
        let scorers = Scorers { speaker: &speaker, listener: &listener, prior: None };
        let config = DecodeConfig { beam_width: beam, pool_size: 4 * beam, max_len: max_len.max(2), ..DecodeConfig::default() };
        let context = w.problem_sets()[0].context();
        for method in METHODS {
            let r = decode(&MethodSpec::new(method, lambda_for(method, unit)).unwrap(), &scorers, &context, &config).unwrap();
            prop_assert!(r.caption.is_complete(), "{method}: {:?}", r.tokens());
            prop_assert!(r.tokens().len() <= config.max_len);
            prop_assert!(r.speaker_logp.is_finite() && r.speaker_logp <= 0.0);
            prop_assert!(r.combined_score.is_finite());
        }
    }

    #[test]
    fn lambda_zero_matches_base(seed in 0u64..1000, beam in 1usize..6) {
        let w = world(seed);
        let speaker = ToyLexiconSpeaker::new(w.clone(), 0.15, 0.3).unwrap();
        let listener = ToySimilarity::new(w.clone(), SimilarityMode::Cosine);
        let scorers = Scorers { speaker: &speaker, listener: &listener, prior: None };
        let config = DecodeConfig { beam_width: beam, pool_size: 3 * beam, max_len: 4, ..DecodeConfig::default() };
        for set in w.problem_sets() {
            let context = set.context();
            let base = decode(&MethodSpec::base(), &scorers, &context, &config).unwrap();
            for method in &METHODS[1..] {
                let r = decode(&MethodSpec::new(*method, 0.0).unwrap(), &scorers, &context, &config).unwrap();
                if *method == Method::PiclFullRerank {
                    // Reranks a width-N base beam, whose top caption can beat the width-B one.
                    let wide = DecodeConfig { beam_width: config.pool_size, ..config.clone() };
                    let top = decode(&MethodSpec::base(), &scorers, &context, &wide).unwrap();
                    prop_assert_eq!(r.tokens(), top.tokens());
                } else {
                    prop_assert_eq!(r.tokens(), base.tokens(), "{}", method);
                }
            }
        }
    }

    #[test]
    fn retrieval_ignores_distractor_order(seed in 0u64..1000, rotate in 0usize..9, words in proptest::collection::vec(0usize..8, 0..4)) {
        let w = world(seed);
        let eval = make_eval_listener(w.clone(), 0.3, seed).unwrap();
        let vocab = w.vocabulary();
        let text = words.iter().map(|&i| vocab.words()[i].as_str()).collect::<Vec<_>>().join(" ");
        let context = w.problem_sets()[1].context();
        let mut distractors = context.distractors().to_vec();
        distractors.rotate_left(rotate);
        let shuffled = RefGameContext::new(context.target().clone(), distractors).unwrap();
        let a = retrieve(&eval, &context, &text).unwrap();
        let b = retrieve(&eval, &shuffled, &text).unwrap();
        prop_assert_eq!(a, b);
        let posterior = listener_posterior(&eval, &context, &text).unwrap();
        prop_assert!(normalization_error(posterior.logp()) <= 1e-12);
    }

    #[test]
    fn coarse_to_fine_finds_unimodal_peaks(mode in 0.0f64..2.0, left in 0.1f64..10.0, right in 0.1f64..10.0, power in 0.5f64..4.0) {
        let f = move |l: f64| -> pragcap_core::Result<f64> {
            let d = l - mode;
            Ok(-(if d < 0.0 { left } else { right }) * d.abs().powf(power))
        };
        let spec = SearchSpec::new(0.0, 2.0);
        let fine = coarse_to_fine_search(f, &spec).unwrap();
        let full = coarse_to_fine_search(f, &spec.clone().exhaustive(true)).unwrap();
        prop_assert_eq!(fine.lambda.to_bits(), full.lambda.to_bits());
        prop_assert!(fine.evaluated.len() < full.evaluated.len());
    }
}

#[test]
fn harness_accuracy_is_the_fraction_of_correct_problems() {
    let w = world(5);
    let speaker = ToyLexiconSpeaker::new(w.clone(), 0.15, 0.3).unwrap();
    let listener = ToySimilarity::new(w.clone(), SimilarityMode::Dot);
    let eval = make_eval_listener(w.clone(), 0.3, 9).unwrap();
    let lm = UniformLm::new(w.vocabulary().len()).unwrap();
    let config = DecodeConfig { max_len: 4, ..DecodeConfig::default() };
    let h = Harness::new(&speaker, &listener, &eval, &lm, w.problem_sets(), config).unwrap();
    for method in METHODS {
        let report = h.evaluate(&MethodSpec::new(method, lambda_for(method, 0.8)).unwrap()).unwrap();
        let correct = report.problems.iter().filter(|p| p.correct).count() as f64;
        assert_eq!(report.retrieval_accuracy, correct / report.problems.len() as f64);
        assert!(Arc::ptr_eq(&report, &h.evaluate(&MethodSpec::new(method, lambda_for(method, 0.8)).unwrap()).unwrap()));
        for p in &report.problems {
            assert!(p.perplexity >= 1.0);
        }
    }
    // Base and any method at λ = 0 share one cached report.
    let base = h.evaluate(&MethodSpec::base()).unwrap();
    assert_eq!(base.problems, h.evaluate(&MethodSpec::new(Method::Picl, 0.0).unwrap()).unwrap().problems);
}
