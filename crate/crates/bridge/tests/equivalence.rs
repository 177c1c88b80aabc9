use std::sync::Arc;
use std::time::Duration;

use pragcap_bridge::loopback::{Backends, LoopbackServer, ServerOptions};
use pragcap_bridge::{BridgeClient, BridgeLm, BridgeSimilarity, BridgeSpeaker, ClientOptions};
use pragcap_core::bench::{derive_seed, BenchmarkSpec, ToyScorers};
use pragcap_core::decoding::{decode, Method, MethodSpec, Scorers};
use pragcap_core::evaluation::Harness;

const LAMBDAS: [(Method, f64); 6] = [
    (Method::Base, 0.0),
    (Method::Picl, 0.9),
    (Method::Es, 0.7),
    (Method::IncreRsa, 1.5),
    (Method::PiclFullRerank, 0.9),
    (Method::PiclNoDistractors, 0.5),
];

fn check(options: ServerOptions) {
    let spec = BenchmarkSpec::default();
    let world = spec.world_params("validation").generate().unwrap().into_shared();
    let seed = derive_seed(spec.seed, "scorers/validation");
    let local = ToyScorers::build(world.clone(), &spec.scorers, seed, spec.decode.max_len).unwrap();
    let backends = Arc::new(Backends::toy(world.clone(), &spec.scorers, seed, spec.decode.max_len).unwrap());
    let server = LoopbackServer::spawn(backends, options).unwrap();
    let client = Arc::new(BridgeClient::connect(&server.endpoint(), ClientOptions::default()).unwrap());
    let speaker = BridgeSpeaker::new(client.clone(), None).unwrap();
    let listener = BridgeSimilarity::new(client.clone(), 1.0).unwrap();
    let lm = BridgeLm::new(client.clone(), world.vocabulary().clone()).unwrap();

    let here = Scorers { speaker: &local.speaker, listener: &local.listener, prior: None };
    let there = Scorers { speaker: &speaker, listener: &listener, prior: None };
    for set in world.problem_sets().iter().take(12) {
        let context = set.context();
        for (method, lambda) in LAMBDAS {
            let spec_m = MethodSpec::new(method, lambda).unwrap();
            let a = decode(&spec_m, &here, &context, &spec.decode).unwrap();
            let b = decode(&spec_m, &there, &context, &spec.decode).unwrap();
            assert_eq!(a.tokens(), b.tokens(), "{} {method}", set.set_id);
            assert!((a.combined_score - b.combined_score).abs() <= 1e-9);
            assert!((a.speaker_logp - b.speaker_logp).abs() <= 1e-9);
        }
    }

    let problems = &world.problem_sets()[..12];
    let h_local = Harness::new(&local.speaker, &local.listener, &local.eval_listener, &local.lm, problems, spec.decode.clone()).unwrap();
    let h_bridge = Harness::new(&speaker, &listener, &local.eval_listener, &lm, problems, spec.decode.clone()).unwrap();
    let spec_m = MethodSpec::new(Method::Picl, 0.9).unwrap();
    let (a, b) = (h_local.evaluate(&spec_m).unwrap(), h_bridge.evaluate(&spec_m).unwrap());
    assert_eq!(a.retrieval_accuracy, b.retrieval_accuracy);
    assert!((a.mean_perplexity - b.mean_perplexity).abs() <= 1e-9);
    assert_eq!(client.poisoned(), None);
}

#[test]
fn bridged_scorers_decode_like_in_process_ones() {
    check(ServerOptions::default());
}

#[test]
fn equivalence_survives_out_of_order_answers() {
    check(ServerOptions { shuffle: Some((5, Duration::from_micros(300))), ..ServerOptions::default() });
}
