//! Fuzzes the chat-completion response decoder: arbitrary provider bodies
//! must never panic the gateway.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = agentfm::llm::parse_chat_completion_body(text);
});
