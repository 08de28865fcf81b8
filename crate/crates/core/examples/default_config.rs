//! Prints the complete default study configuration as JSON. The shipped
//! `configs/default.json` is this output.

use enrichment::study::StudyConfig;

fn main() {
    let cfg = StudyConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
}
