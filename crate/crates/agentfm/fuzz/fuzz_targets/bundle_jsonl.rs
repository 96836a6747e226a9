//! Fuzzes the telemetry bundle JSONL parser: parsing must never panic, and
//! any bundle that parses and validates must survive a render/reparse
//! round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(bundle) = agentfm::telemetry::parse_bundle_str(text) else {
        return;
    };
    // Validation rejects non-finite values, so equality below is exact.
    if bundle.validate().is_err() {
        return;
    }
    let rendered = agentfm::telemetry::render_bundle_string(&bundle)
        .expect("validated bundle must render");
    let reparsed = agentfm::telemetry::parse_bundle_str(&rendered)
        .expect("rendered bundle must reparse");
    assert_eq!(bundle, reparsed, "bundle round trip changed the data");
});
