//! Fuzzes the ground-truth file parser: parsing must never panic, and any
//! truth that parses must survive a serialize/reparse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(truth) = agentfm::simulator::GroundTruth::from_json_str(text) else {
        return;
    };
    let rendered = truth.to_json_string();
    let reparsed = agentfm::simulator::GroundTruth::from_json_str(&rendered)
        .expect("rendered truth must reparse");
    assert_eq!(truth, reparsed, "truth round trip changed the data");
});
