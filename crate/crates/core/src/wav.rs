//! Mono WAV input and output (16-bit PCM or 32-bit float).

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavAudio {
    pub sample_rate: u32,
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
}

pub fn read_wav<R: Read>(reader: R) -> Result<WavAudio> {
    let mut r = hound::WavReader::new(reader)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::format(format!(
            "only mono WAV is supported, file has {} channels",
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(format!(
                "unsupported WAV sample format {fmt:?} with {bits} bits"
            )))
        }
    };
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("WAV samples"));
    }
    Ok(WavAudio {
        sample_rate: spec.sample_rate,
        samples,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<WavAudio> {
    read_wav(Cursor::new(bytes))
}

pub fn read_wav_file(path: impl AsRef<Path>) -> Result<WavAudio> {
    read_wav(BufReader::new(File::open(path)?))
}

pub fn write_wav<W: Write + Seek>(out: W, audio: &WavAudio, encoding: WavEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut w = hound::WavWriter::new(out, spec)?;
    for &v in &audio.samples {
        match encoding {
            WavEncoding::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            WavEncoding::Float32 => w.write_sample(v as f32)?,
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn encode_wav(audio: &WavAudio, encoding: WavEncoding) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write_wav(&mut buf, audio, encoding)?;
    Ok(buf.into_inner())
}

pub fn write_wav_file(path: impl AsRef<Path>, audio: &WavAudio, encoding: WavEncoding) -> Result<()> {
    write_wav(BufWriter::new(File::create(path)?), audio, encoding)
}
