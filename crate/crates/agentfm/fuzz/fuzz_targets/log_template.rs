//! Fuzzes the log template miner: mining must never panic, never go lossy
//! (pattern + parameters always reconstructs the message's tokens), and
//! re-parsing the same message must land on the same template.

#![no_main]

use agentfm::log_agent::TemplateMiner;
use agentfm::telemetry::{LogEntry, LogLevel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let mut miner = TemplateMiner::new();
    let entries: Vec<LogEntry> = text
        .lines()
        .enumerate()
        .map(|(i, line)| LogEntry {
            timestamp: i as f64,
            level: LogLevel::Info,
            message: line.to_string(),
        })
        .collect();
    for entry in &entries {
        let parsed = miner.parse_log(entry);
        assert!(
            miner.reconstructs(&entry.message, &parsed),
            "lossy parse of {:?}",
            entry.message
        );
    }
    // The converged table must still parse every message losslessly and
    // assign it a stable template.
    for entry in &entries {
        let first = miner.parse_log(entry);
        let second = miner.parse_log(entry);
        assert_eq!(first.template_id, second.template_id);
        assert!(miner.reconstructs(&entry.message, &second));
    }
});
