use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Planar audio in `[-1, 1]` full scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_refs(&self) -> Vec<&[f64]> {
        self.channels.iter().map(Vec::as_slice).collect()
    }
}

/// Reads 16/24/32-bit integer PCM or 32-bit float WAV.
pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch == 0 {
        return Err(Error::InvalidArgument(format!("{}: no channels", path.display())));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: &Path, channels: &[&[f64]], sample_rate: u32) -> Result<()> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("channels must be non-empty and of equal length".into()));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for i in 0..n {
        for c in channels {
            w.write_sample(c[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let l = [0.0, 0.5, -0.25, 1.0];
        let r = [0.1, -0.1, 0.2, -1.0];
        write_wav(&path, &[&l, &r], 44100).unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.sample_rate, 44100);
        assert_eq!(a.channels.len(), 2);
        for (x, y) in a.channels[0].iter().zip(&l).chain(a.channels[1].iter().zip(&r)) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn reads_integer_pcm() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [16u16, 24] {
            let path = dir.path().join(format!("i{bits}.wav"));
            let spec = WavSpec {
                channels: 1,
                sample_rate: 48000,
                bits_per_sample: bits,
                sample_format: SampleFormat::Int,
            };
            let full = 1i32 << (bits - 1);
            let mut w = WavWriter::create(&path, spec).unwrap();
            for v in [0, full / 2, -full] {
                w.write_sample(v).unwrap();
            }
            w.finalize().unwrap();
            let a = read_wav(&path).unwrap();
            assert_eq!(a.channels[0], vec![0.0, 0.5, -1.0]);
        }
    }

    #[test]
    fn ragged_channels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        assert!(write_wav(&path, &[&[0.0, 1.0], &[0.0]], 44100).is_err());
    }
}
