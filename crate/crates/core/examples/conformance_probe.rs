//! Runs the protocol conformance checks against a backend.
//!
//! With no argument the in-process mock is probed; otherwise pass a base URL.

use std::time::Duration;

use auralabel::gateway::conformance_probe;
use auralabel::gateway::mock::MockBackend;

#[tokio::main]
async fn main() {
    let mock;
    let endpoint = match std::env::args().nth(1) {
        Some(url) => url,
        None => {
            mock = MockBackend::start().await.expect("mock backend");
            mock.endpoint()
        }
    };
    let report = conformance_probe(&endpoint, Duration::from_secs(5)).await;
    print!("{}", report.render());
    std::process::exit(if report.passed() { 0 } else { 1 });
}
