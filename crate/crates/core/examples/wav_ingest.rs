//! Content-addressed ingestion of a WAV file into a fresh store.

use auralabel::storage::wav::encode_pcm16_mono;
use auralabel::storage::{parse_wav_header, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path().join("data"))?;

    // half a second of a 440 Hz tone at 16 kHz
    let rate = 16_000;
    let samples: Vec<i16> = (0..rate / 2)
        .map(|i| ((i as f64 * 440.0 * std::f64::consts::TAU / rate as f64).sin() * 8000.0) as i16)
        .collect();
    let bytes = encode_pcm16_mono(rate, &samples);

    let header = parse_wav_header(&bytes)?;
    println!(
        "header: {} Hz, {} channel(s), {:.3} s",
        header.sample_rate_hz,
        header.channels,
        header.duration_s()
    );

    let first = store.ingest_audio(&bytes, "tone.wav")?;
    println!(
        "stored {} ({} bytes, digest {}...)",
        first.asset.id,
        first.asset.byte_length,
        &first.asset.digest[..12]
    );
    let again = store.ingest_audio(&bytes, "copy-of-tone.wav")?;
    println!("second upload created a new asset: {}", again.created);

    match store.ingest_audio(b"ID3\x04 not a wav", "song.wav") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
