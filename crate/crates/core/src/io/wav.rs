use std::path::Path;

use crate::conditioning::SAMPLE_RATE;
use crate::error::{invalid, Result};

/// Reads a mono 16 kHz WAV (16-bit integer or 32-bit float) as samples in [−1, 1].
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return invalid(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return invalid(format!(
            "{}: expected {SAMPLE_RATE} Hz, found {} Hz",
            path.display(),
            spec.sample_rate
        ));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => Ok(reader.samples::<f32>().collect::<std::result::Result<_, _>>()?),
        (hound::SampleFormat::Int, 16) => Ok(reader
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?),
        (fmt, bits) => invalid(format!(
            "{}: unsupported sample format {fmt:?} with {bits} bits",
            path.display()
        )),
    }
}

/// Writes mono 16 kHz 16-bit PCM; samples are clipped to [−1, 1].
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
