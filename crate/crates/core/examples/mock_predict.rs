//! Calling the in-process mock backend through the gateway.

use auralabel::gateway::mock::MockBackend;
use auralabel::gateway::{parse_config, Gateway, GatewayOptions, Prediction};
use auralabel::storage::wav::silence_wav;
use auralabel::storage::Store;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let backend = MockBackend::start().await?;
    backend.set_predictions(vec![
        Prediction::Segment {
            label: "dog".into(),
            start: 0.4,
            end: 1.1,
            confidence: Some(0.92),
        },
        Prediction::Segment {
            label: "car".into(),
            start: 1.5,
            end: 2.8,
            confidence: Some(0.41),
        },
        Prediction::Text {
            label: "Caption".into(),
            text: "A dog barks as a car passes.".into(),
            confidence: None,
        },
    ]);
    let config = parse_config(&backend.config_yaml(&[("segment", "events"), ("text", "Caption")]))?;

    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path().join("data"))?;
    let audio = silence_wav(8_000, 3.0);
    let asset = store.ingest_audio(&audio, "street.wav")?.asset;

    let gateway = Gateway::new(GatewayOptions::default());
    let health = gateway.health(&config).await?;
    println!("backend says: {health:?}");
    let predictions = gateway.predict(&config, &asset, &audio).await?;
    for p in &predictions {
        println!("{}", serde_json::to_string(p)?);
    }

    // a backend that answers garbage is rejected as a whole
    backend.set_behavior(auralabel::gateway::mock::Behavior::Garbage);
    match gateway.predict(&config, &asset, &audio).await {
        Ok(p) => println!("accepted {} predictions?", p.len()),
        Err(e) => println!("{}: {e}", e.class()),
    }
    Ok(())
}
