//! 16-bit little-endian mono PCM and WAV fixtures.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn i16_to_f32(v: i16) -> f32 {
    v as f32 / 32_768.0
}

pub fn f32_to_i16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) * 32_767.0).round() as i16
}

/// Decodes raw s16le bytes; a trailing odd byte is an error.
pub fn decode_s16le(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Validation(format!("odd PCM byte count {}", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16_to_f32(i16::from_le_bytes([b[0], b[1]])))
        .collect())
}

pub fn encode_s16le(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|&v| f32_to_i16(v).to_le_bytes()).collect()
}

pub fn read_s16le(mut reader: impl Read) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_s16le(&bytes)
}

pub fn write_s16le(mut writer: impl Write, samples: &[f32]) -> Result<()> {
    writer.write_all(&encode_s16le(samples))?;
    Ok(())
}

/// Reads a mono WAV file (16-bit integer or 32-bit float) as `(rate, samples)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(u32, Vec<f32>)> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Validation(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(i16_to_f32))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Validation(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    Ok((spec.sample_rate, samples))
}

pub fn write_wav(path: impl AsRef<Path>, rate: u32, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(f32_to_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}
