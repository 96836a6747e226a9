//! Fuzzes the cluster config parser: parsing must never panic, and any
//! config that parses must either bootstrap a valid role table or fail
//! with a clean error.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = agentfm::roles::ClusterConfig::from_json_str(text) else {
        return;
    };
    let _ = agentfm::roles::bootstrap_roles(&config);
});
