//! Parsing model backend YAML, including the errors a bad file produces.

use auralabel::gateway::{parse_config, serialize_config};

const CONFIG: &str = r#"
name: "music-captioner"
image: "registry.example/captioner:1.4"
endpoint: "http://127.0.0.1:9000"
input_schema: { "audio": "wav" }
resources: { "gpu": "true" }
output_schema:
  - { "type": "text", "label": "Caption" }
  - { "type": "segment", "label": "events" }
"#;

fn main() {
    let config = parse_config(CONFIG).expect("valid config");
    println!(
        "{} at {} takes {:?}",
        config.name,
        config.base_url(),
        config.input_format
    );
    for out in &config.outputs {
        println!("  declares {:?} as {:?}", out.output_type, out.label);
    }
    println!("normalised:\n{}", serialize_config(&config));

    for broken in [
        CONFIG.replace("endpoint: \"http://127.0.0.1:9000\"\n", ""),
        CONFIG.replace("\"wav\"", "\"ogg\""),
        CONFIG.replace("\"text\"", "\"heatmap\""),
    ] {
        match parse_config(&broken) {
            Ok(_) => println!("accepted?"),
            Err(e) => println!("error: {e}"),
        }
    }
}
