//! Fuzzes the scripted-provider config parser: parsing must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = agentfm::llm::MockScript::from_json_str(text);
});
