use ebur128::{EbuR128, Mode};
use serde::{Deserialize, Serialize};

use super::io::Audio;
use crate::error::{Error, Result};
use crate::fft::{irfft, next_fast_len, rfft};

pub const TARGET_LUFS: f64 = -18.0;

/// Integrated loudness (BS.1770 with gating) of planar channels, in LUFS.
pub fn integrated_loudness(channels: &[&[f64]], sample_rate: f64) -> Result<f64> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("channels must be non-empty and of equal length".into()));
    }
    let mut meter = EbuR128::new(channels.len() as u32, sample_rate.round() as u32, Mode::I)
        .map_err(|e| Error::Loudness(e.to_string()))?;
    meter.add_frames_planar_f64(channels).map_err(|e| Error::Loudness(e.to_string()))?;
    let l = meter.loudness_global().map_err(|e| Error::Loudness(e.to_string()))?;
    if !l.is_finite() {
        return Err(Error::Silent);
    }
    Ok(l)
}

/// Scales all channels by one gain so the integrated loudness is `target` LUFS. Returns the
/// scaled channels and the linear gain.
pub fn normalize_lufs(channels: &[&[f64]], sample_rate: f64, target: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut gain = 1.0;
    let mut out: Vec<Vec<f64>> = channels.iter().map(|c| c.to_vec()).collect();
    // the absolute gate can admit or drop blocks after scaling, so re-measure
    for _ in 0..4 {
        let refs: Vec<&[f64]> = out.iter().map(Vec::as_slice).collect();
        let l = integrated_loudness(&refs, sample_rate)?;
        if (l - target).abs() < 0.01 {
            break;
        }
        let g = 10f64.powf((target - l) / 20.0);
        gain *= g;
        out.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v *= g));
    }
    Ok((out, gain))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    /// Sliding RMS block for the side-energy measurement.
    pub block_seconds: f64,
    pub threshold_db: f64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            block_seconds: 0.4,
            threshold_db: -10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MonoFold {
    Mono { signal: Vec<f64>, side_db: f64 },
    /// Too much side energy for a mono source.
    Rejected { side_db: f64 },
}

fn max_block_energy(x: &[f64], block: usize) -> f64 {
    let block = block.clamp(1, x.len().max(1));
    let hop = (block / 4).max(1);
    let mut best: f64 = 0.0;
    let mut start = 0;
    loop {
        let end = (start + block).min(x.len());
        let e = x[start..end].iter().map(|v| v * v).sum::<f64>() / block as f64;
        best = best.max(e);
        if end == x.len() {
            break;
        }
        start += hop;
    }
    best
}

/// Peak-normalises both channels with one gain, then compares the loudest side block
/// `(L - R) / 2` with the loudest mid block `(L + R) / 2`. Accepted inputs return the mid.
pub fn fold_to_mono(left: &[f64], right: &[f64], sample_rate: f64, cfg: &FoldConfig) -> Result<MonoFold> {
    if left.len() != right.len() || left.is_empty() {
        return Err(Error::InvalidArgument("stereo channels must be non-empty and of equal length".into()));
    }
    let peak = left.iter().chain(right).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Silent);
    }
    let g = 1.0 / peak;
    let mid: Vec<f64> = left.iter().zip(right).map(|(l, r)| 0.5 * g * (l + r)).collect();
    let side: Vec<f64> = left.iter().zip(right).map(|(l, r)| 0.5 * g * (l - r)).collect();
    let block = (cfg.block_seconds * sample_rate).round() as usize;
    let (em, es) = (max_block_energy(&mid, block), max_block_energy(&side, block));
    let side_db = if es == 0.0 {
        f64::NEG_INFINITY
    } else if em == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (es / em).log10()
    };
    Ok(if side_db > cfg.threshold_db {
        MonoFold::Rejected { side_db }
    } else {
        MonoFold::Mono { signal: mid, side_db }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Largest lag searched in either direction.
    pub max_lag_seconds: f64,
    /// Normalised correlation below which the alignment is flagged.
    pub confidence_floor: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_lag_seconds: 2.0,
            confidence_floor: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Samples by which the processed signal lags the source.
    pub offset: i64,
    /// Peak correlation divided by the product of the signal norms.
    pub confidence: f64,
    pub low_confidence: bool,
}

/// Lag maximising the cross-correlation between `raw` and the mid channel of `wet`.
pub fn align(raw: &[f64], wet: [&[f64]; 2], sample_rate: f64, cfg: &AlignConfig) -> Result<Alignment> {
    if raw.is_empty() || wet[0].is_empty() || wet[0].len() != wet[1].len() {
        return Err(Error::InvalidArgument("alignment needs non-empty signals and equal wet channels".into()));
    }
    let mid: Vec<f64> = wet[0].iter().zip(wet[1]).map(|(l, r)| 0.5 * (l + r)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt() * mid.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Silent);
    }
    let n = next_fast_len(raw.len() + mid.len() - 1);
    let (a, b) = rayon::join(|| rfft(&mid, n), || rfft(raw, n));
    let prod: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y.conj()).collect();
    // c[k] = sum_n mid[n] raw[n - k], negative lags wrap to the end
    let c = irfft(&prod, n);
    let max_lag = ((cfg.max_lag_seconds * sample_rate) as usize).max(1);
    let pos = max_lag.min(mid.len() - 1);
    let neg = max_lag.min(raw.len() - 1);
    let mut best = (0i64, c[0]);
    for k in 1..=pos {
        if c[k] > best.1 {
            best = (k as i64, c[k]);
        }
    }
    for k in 1..=neg {
        if c[n - k] > best.1 {
            best = (-(k as i64), c[n - k]);
        }
    }
    let confidence = best.1 / norm;
    Ok(Alignment {
        offset: best.0,
        confidence,
        low_confidence: confidence < cfg.confidence_floor,
    })
}

/// `x` delayed by `offset` samples (advanced when negative), zero-filled.
pub fn shift(x: &[f64], offset: i64) -> Vec<f64> {
    if offset >= 0 {
        let k = offset as usize;
        let mut v = vec![0.0; k];
        v.extend_from_slice(x);
        v
    } else {
        x[(offset.unsigned_abs() as usize).min(x.len())..].to_vec()
    }
}

/// Source and processed target, aligned, cropped to a common length and loudness-normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPair {
    pub source: Vec<f64>,
    pub target: [Vec<f64>; 2],
    pub sample_rate: f64,
    pub offset: i64,
    pub id: String,
    pub flags: Vec<String>,
}

impl TrackPair {
    /// Normalises already aligned signals to the target loudness.
    pub fn from_aligned(source: &[f64], target: [&[f64]; 2], sample_rate: f64, id: &str) -> Result<Self> {
        let n = source.len();
        if n == 0 || target[0].len() != n || target[1].len() != n {
            return Err(Error::InvalidArgument(format!(
                "source ({n}) and target ({}, {}) lengths differ",
                target[0].len(),
                target[1].len()
            )));
        }
        let (s, _) = normalize_lufs(&[source], sample_rate, TARGET_LUFS)?;
        let (t, _) = normalize_lufs(&target, sample_rate, TARGET_LUFS)?;
        let mut s = s.into_iter();
        let mut t = t.into_iter();
        Ok(Self {
            source: s.next().unwrap(),
            target: [t.next().unwrap(), t.next().unwrap()],
            sample_rate,
            offset: 0,
            id: id.to_string(),
            flags: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub fold: FoldConfig,
    pub align: AlignConfig,
}

/// Folds the raw stem to mono, aligns it to the processed stem, crops and normalises both.
pub fn prepare_pair(raw: &Audio, wet: &Audio, id: &str, cfg: &PrepareConfig) -> Result<TrackPair> {
    if raw.sample_rate != wet.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rates differ: raw {} Hz, processed {} Hz",
            raw.sample_rate, wet.sample_rate
        )));
    }
    let fs = raw.sample_rate as f64;
    let mut flags = Vec::new();
    let source = match raw.channels.len() {
        1 => raw.channels[0].clone(),
        2 => match fold_to_mono(&raw.channels[0], &raw.channels[1], fs, &cfg.fold)? {
            MonoFold::Mono { signal, .. } => signal,
            MonoFold::Rejected { side_db } => {
                return Err(Error::Rejected(format!("raw stem is not mono (side energy {side_db:.1} dB)")))
            }
        },
        n => return Err(Error::InvalidArgument(format!("raw stem has {n} channels"))),
    };
    let target: [Vec<f64>; 2] = match wet.channels.len() {
        1 => {
            flags.push("mono_target".to_string());
            [wet.channels[0].clone(), wet.channels[0].clone()]
        }
        2 => [wet.channels[0].clone(), wet.channels[1].clone()],
        n => return Err(Error::InvalidArgument(format!("processed stem has {n} channels"))),
    };
    let a = align(&source, [&target[0], &target[1]], fs, &cfg.align)?;
    if a.low_confidence {
        log::warn!("{id}: alignment confidence {:.3} below floor", a.confidence);
        flags.push("low_alignment_confidence".to_string());
    }
    let shifted = shift(&source, a.offset);
    let n = shifted.len().min(target[0].len());
    let mut pair = TrackPair::from_aligned(&shifted[..n], [&target[0][..n], &target[1][..n]], fs, id)?;
    pair.offset = a.offset;
    pair.flags = flags;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen_range(-0.5..0.5)).collect()
    }

    fn sine(f: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    // K-weighting at 48 kHz from its published biquad coefficients
    fn k_weighted_mean_square(x: &[f64]) -> f64 {
        let stages = [
            ([1.53512485958697, -2.69169618940638, 1.19839281085285], [-1.69065929318241, 0.73248077421585]),
            ([1.0, -2.0, 1.0], [-1.99004745483398, 0.99007225036621]),
        ];
        let mut v = x.to_vec();
        for (b, a) in stages {
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for s in v.iter_mut() {
                let y = b[0] * *s + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
                x2 = x1;
                x1 = *s;
                y2 = y1;
                y1 = y;
                *s = y;
            }
        }
        // skip the filter settling time
        let tail = &v[v.len() / 4..];
        tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64
    }

    #[test]
    fn full_scale_sine_loudness_matches_reference() {
        let fs = 48000.0;
        let x = sine(1000.0, 10 * 48000, fs);
        let reference = -0.691 + 10.0 * (2.0 * k_weighted_mean_square(&x)).log10();
        let l = integrated_loudness(&[&x, &x], fs).unwrap();
        assert!((l - reference).abs() < 0.05, "{l} vs {reference}");
        let (y, g) = normalize_lufs(&[&x, &x], fs, TARGET_LUFS).unwrap();
        assert!((integrated_loudness(&[&y[0], &y[1]], fs).unwrap() - TARGET_LUFS).abs() < 0.1);
        assert!((g - 10f64.powf((TARGET_LUFS - l) / 20.0)).abs() < 1e-3 * g);
    }

    #[test]
    fn normalisation_is_idempotent_and_image_preserving() {
        let fs = 44100.0;
        let l = noise(3 * 44100, 1);
        let r: Vec<f64> = noise(3 * 44100, 2).iter().map(|v| 0.3 * v).collect();
        let (y, _) = normalize_lufs(&[&l, &r], fs, TARGET_LUFS).unwrap();
        let (z, g) = normalize_lufs(&[&y[0], &y[1]], fs, TARGET_LUFS).unwrap();
        assert!((g - 1.0).abs() < 0.0116, "gain {g}");
        assert!((integrated_loudness(&[&z[0], &z[1]], fs).unwrap() - TARGET_LUFS).abs() < 0.1);
        for i in (0..l.len()).step_by(997) {
            if l[i].abs() > 1e-3 {
                assert!((y[1][i] / y[0][i] - r[i] / l[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn silence_cannot_be_normalised() {
        let z = vec![0.0; 44100];
        assert!(matches!(normalize_lufs(&[&z], 44100.0, TARGET_LUFS), Err(Error::Silent)));
    }

    #[test]
    fn identical_channels_fold_to_that_channel() {
        let x = noise(44100, 3);
        match fold_to_mono(&x, &x, 44100.0, &FoldConfig::default()).unwrap() {
            MonoFold::Mono { signal, side_db } => {
                assert_eq!(side_db, f64::NEG_INFINITY);
                let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (a, b) in signal.iter().zip(&x) {
                    assert!((a - b / peak).abs() < 1e-15);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decorrelated_channels_are_rejected() {
        let r = fold_to_mono(&noise(44100, 4), &noise(44100, 5), 44100.0, &FoldConfig::default()).unwrap();
        assert!(matches!(r, MonoFold::Rejected { side_db } if side_db > -1.0));
    }

    #[test]
    fn nearly_identical_channels_are_accepted() {
        let l = noise(44100, 6);
        let r: Vec<f64> = l.iter().map(|v| 0.99 * v).collect();
        match fold_to_mono(&l, &r, 44100.0, &FoldConfig::default()).unwrap() {
            MonoFold::Mono { side_db, .. } => {
                let expected = 20.0 * (0.005f64 / 0.995).log10();
                assert!((side_db - expected).abs() < 1e-9, "{side_db}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn delayed_copy_aligns_at_its_delay() {
        let x = noise(20000, 7);
        let d = shift(&x, 1000);
        let a = align(&x, [&d, &d], 44100.0, &AlignConfig::default()).unwrap();
        assert_eq!(a.offset, 1000);
        assert!(!a.low_confidence);
        let a = align(&x, [&x, &x], 44100.0, &AlignConfig::default()).unwrap();
        assert_eq!(a.offset, 0);
        assert!((a.confidence - 1.0).abs() < 1e-9);
        let early = shift(&x, -300);
        assert_eq!(align(&x, [&early, &early], 44100.0, &AlignConfig::default()).unwrap().offset, -300);
    }

    #[test]
    fn unrelated_signals_are_flagged() {
        let a = align(&noise(20000, 8), [&noise(20000, 9), &noise(20000, 10)], 44100.0, &AlignConfig::default()).unwrap();
        assert!(a.low_confidence);
    }

    #[test]
    fn prepared_pair_is_aligned_and_normalised() {
        let fs = 44100u32;
        let x = noise(3 * 44100, 11);
        let wet = shift(&x, 500);
        let raw = Audio {
            sample_rate: fs,
            channels: vec![x.clone()],
        };
        let processed = Audio {
            sample_rate: fs,
            channels: vec![wet.iter().map(|v| 0.2 * v).collect(), wet.iter().map(|v| 0.1 * v).collect()],
        };
        let p = prepare_pair(&raw, &processed, "t", &PrepareConfig::default()).unwrap();
        assert_eq!(p.offset, 500);
        assert_eq!(p.source.len(), p.target[0].len());
        let ls = integrated_loudness(&[&p.source], fs as f64).unwrap();
        let lt = integrated_loudness(&[&p.target[0], &p.target[1]], fs as f64).unwrap();
        assert!((ls - TARGET_LUFS).abs() < 0.1 && (lt - TARGET_LUFS).abs() < 0.1);
        // target channel ratio survives normalisation
        let i = 2000;
        assert!((p.target[1][i] / p.target[0][i] - 0.5).abs() < 1e-9);
        // source now lines up with the processed mid
        let corr: f64 = p.source.iter().zip(&p.target[0]).map(|(a, b)| a * b).sum();
        assert!(corr > 0.0);
    }

    #[test]
    fn stereo_raw_with_wide_image_is_rejected() {
        let raw = Audio {
            sample_rate: 44100,
            channels: vec![noise(44100, 12), noise(44100, 13)],
        };
        let wet = Audio {
            sample_rate: 44100,
            channels: vec![noise(44100, 14), noise(44100, 15)],
        };
        assert!(matches!(prepare_pair(&raw, &wet, "w", &PrepareConfig::default()), Err(Error::Rejected(_))));
    }
}
