//! The examples in PROTOCOL.md are replayed against the loopback server.

use pragcap_bridge::loopback::{handle_line, Backends, ServerOptions};
use pragcap_core::bench::ScorerParams;
use pragcap_core::speakers::WorldParams;

#[test]
fn documented_exchanges_are_byte_exact() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../PROTOCOL.md")).unwrap();
    let world = WorldParams { n_sets: 1, n_attributes: 5, n_fillers: 1, overlap_min: 2, seed: 0, ..WorldParams::default() }
        .generate()
        .unwrap()
        .into_shared();
    let backends = Backends::toy(world, &ScorerParams::default(), 0, 5).unwrap();
    let options = ServerOptions::default();
    let requests: Vec<&str> = doc.lines().filter_map(|l| l.strip_prefix("> ")).collect();
    let responses: Vec<&str> = doc.lines().filter_map(|l| l.strip_prefix("< ")).collect();
    assert_eq!(requests.len(), 8);
    assert_eq!(requests.len(), responses.len());
    for (req, resp) in requests.iter().zip(&responses) {
        assert_eq!(handle_line(&backends, &options, req).2, *resp, "{req}");
    }
}
