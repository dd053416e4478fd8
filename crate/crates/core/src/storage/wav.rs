//! RIFF/WAVE header parsing, enough to get duration and sample rate.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavHeaderInfo {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub bits_per_sample: u16,
    pub data_bytes: u64,
}

impl WavHeaderInfo {
    pub fn bytes_per_second(&self) -> u64 {
        self.sample_rate_hz as u64 * self.channels as u64 * (self.bits_per_sample as u64 / 8)
    }

    /// data_bytes / (sample_rate * channels * bytes_per_sample)
    pub fn duration_s(&self) -> f64 {
        self.data_bytes as f64 / self.bytes_per_second() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed WAV header: {0}")]
pub struct MalformedWavHeader(pub String);

fn malformed(msg: impl Into<String>) -> MalformedWavHeader {
    MalformedWavHeader(msg.into())
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Parses a little-endian RIFF/WAVE file with `fmt ` before `data`.
///
/// A data chunk whose declared size runs past the end of the buffer is
/// clamped to the bytes actually present.
pub fn parse_wav_header(bytes: &[u8]) -> Result<WavHeaderInfo, MalformedWavHeader> {
    if bytes.len() < 12 {
        return Err(malformed("file shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE form type"));
    }

    let mut fmt: Option<(u16, u32, u16)> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(malformed("fmt chunk too short"));
                }
                let format = u16_at(bytes, body);
                if !matches!(format, FORMAT_PCM | FORMAT_FLOAT | FORMAT_EXTENSIBLE) {
                    return Err(malformed(format!("unsupported format tag {format:#06x}")));
                }
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if channels == 0 {
                    return Err(malformed("zero channels"));
                }
                if rate == 0 {
                    return Err(malformed("zero sample rate"));
                }
                if !matches!(bits, 8 | 16 | 24 | 32) {
                    return Err(malformed(format!("unsupported bits per sample {bits}")));
                }
                fmt = Some((channels, rate, bits));
            }
            b"data" => {
                let Some((channels, sample_rate_hz, bits_per_sample)) = fmt else {
                    return Err(malformed("data chunk before fmt chunk"));
                };
                let available = bytes.len() - body;
                let data_bytes = size.min(available) as u64;
                if data_bytes == 0 {
                    return Err(malformed("empty data chunk"));
                }
                return Ok(WavHeaderInfo {
                    sample_rate_hz,
                    channels,
                    bits_per_sample,
                    data_bytes,
                });
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body.saturating_add(size).saturating_add(size & 1);
    }
    Err(malformed(if fmt.is_none() {
        "missing fmt chunk"
    } else {
        "missing data chunk"
    }))
}

/// Encodes mono 16-bit PCM samples as a canonical WAV file.
pub fn encode_pcm16_mono(sample_rate_hz: u32, samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// `seconds` of digital silence, mono 16-bit.
pub fn silence_wav(sample_rate_hz: u32, seconds: f64) -> Vec<u8> {
    let n = (sample_rate_hz as f64 * seconds).round() as usize;
    encode_pcm16_mono(sample_rate_hz, &vec![0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Builds a header by hand, independent of `encode_pcm16_mono`.
    fn synth(
        rate: u32,
        channels: u16,
        bits: u16,
        data_bytes: u32,
        extra_chunk: bool,
        fmt_len: u32,
    ) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(b"RIFF");
        v.extend_from_slice(&0u32.to_le_bytes());
        v.extend_from_slice(b"WAVE");
        if extra_chunk {
            v.extend_from_slice(b"LIST");
            v.extend_from_slice(&3u32.to_le_bytes());
            v.extend_from_slice(&[1, 2, 3, 0]); // odd size + pad byte
        }
        v.extend_from_slice(b"fmt ");
        v.extend_from_slice(&fmt_len.to_le_bytes());
        let tag: u16 = if fmt_len > 16 { 0xFFFE } else { 1 };
        v.extend_from_slice(&tag.to_le_bytes());
        v.extend_from_slice(&channels.to_le_bytes());
        v.extend_from_slice(&rate.to_le_bytes());
        let block = channels as u32 * bits as u32 / 8;
        v.extend_from_slice(&(rate * block).to_le_bytes());
        v.extend_from_slice(&(block as u16).to_le_bytes());
        v.extend_from_slice(&bits.to_le_bytes());
        v.extend(std::iter::repeat_n(0u8, (fmt_len - 16) as usize));
        v.extend_from_slice(b"data");
        v.extend_from_slice(&data_bytes.to_le_bytes());
        v.extend(std::iter::repeat_n(0u8, data_bytes as usize));
        v
    }

    #[test]
    fn one_second_mono_16bit() {
        let bytes = synth(44_100, 1, 16, 88_200, false, 16);
        let info = parse_wav_header(&bytes).unwrap();
        assert_eq!(info.sample_rate_hz, 44_100);
        assert_eq!(info.data_bytes, 88_200);
        assert_eq!(info.duration_s(), 1.0);
    }

    #[test]
    fn skips_unknown_chunks_and_reads_extensible_fmt() {
        let bytes = synth(48_000, 2, 24, 48_000 * 6 / 2, true, 40);
        let info = parse_wav_header(&bytes).unwrap();
        assert_eq!(info.channels, 2);
        assert_eq!(info.bits_per_sample, 24);
        assert_eq!(info.duration_s(), 0.5);
    }

    #[test]
    fn encoder_output_parses() {
        let info = parse_wav_header(&silence_wav(16_000, 0.1)).unwrap();
        assert_eq!(info.data_bytes, 3_200);
        assert!((info.duration_s() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_missing_parts() {
        assert!(parse_wav_header(b"RIFX\0\0\0\0WAVE").is_err());
        assert!(parse_wav_header(b"RIFF\0\0\0\0AVI ").is_err());
        let mut no_data = synth(8_000, 1, 8, 4, false, 16);
        no_data.truncate(no_data.len() - 12);
        assert_eq!(
            parse_wav_header(&no_data).unwrap_err(),
            MalformedWavHeader("missing data chunk".into())
        );
        let mut no_fmt = b"RIFF\0\0\0\0WAVE".to_vec();
        no_fmt.extend_from_slice(b"data\x02\0\0\0\0\0");
        assert_eq!(
            parse_wav_header(&no_fmt).unwrap_err(),
            MalformedWavHeader("data chunk before fmt chunk".into())
        );
        assert!(parse_wav_header(&synth(8_000, 1, 12, 4, false, 16)).is_err());
        assert!(parse_wav_header(&synth(8_000, 1, 16, 0, false, 16)).is_err());
    }

    #[test]
    fn truncated_data_is_clamped() {
        let mut bytes = synth(8_000, 1, 16, 1_600, false, 16);
        bytes.truncate(bytes.len() - 800);
        let info = parse_wav_header(&bytes).unwrap();
        assert_eq!(info.data_bytes, 800);
    }

    proptest! {
        #[test]
        fn duration_matches_closed_form(
            rate in 1u32..200_000,
            channels in 1u16..8,
            bits in prop::sample::select(vec![8u16, 16, 24, 32]),
            frames in 1u32..2_000,
            extra in any::<bool>(),
        ) {
            let data = frames * channels as u32 * bits as u32 / 8;
            let info = parse_wav_header(&synth(rate, channels, bits, data, extra, 16)).unwrap();
            let expected = data as f64 / (rate as f64 * channels as f64 * (bits / 8) as f64);
            prop_assert_eq!(info.duration_s(), expected);
        }
    }
}
