//! Fuzzes the retrieval-store JSONL parser: parsing must never panic, and
//! any store that parses must answer retrieval queries without panicking.

#![no_main]

use agentfm::rag::FeatureVector;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(store) = agentfm::rag::ExampleStore::from_jsonl_str(text) else {
        return;
    };
    if let Some(example) = store.examples().first() {
        let query = FeatureVector(vec![0.5; example.features.dim()]);
        let _ = store.retrieve(&query, 3, None);
    }
});
