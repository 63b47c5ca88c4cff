//! Recomputes fixtures/expectations.json from fixtures/oracle.toml.

use gem_synth::fixtures::{compute_expectations, oracle_config};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/expectations.json").into());
    let expectations = compute_expectations(&oracle_config()).expect("oracles run");
    let mut json = serde_json::to_string_pretty(&expectations).expect("serialisable");
    json.push('\n');
    std::fs::write(&out, json).expect("write expectations");
    for f in &expectations.fixtures {
        println!("{:<18} m={} oracle log-likelihood {:.6}", f.name, f.m, f.oracle_log_likelihood);
    }
    println!("wrote {out}");
}
