//! Deterministic sung-vowel test signal: phrases of glided notes with vibrato, formants,
//! breath noise and pauses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::biquad::{design, filter_sequential, FilterKind, FilterSpec};

// (F1, F2, F3) in Hz for a few vowels
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

// semitones above the phrase root
const SCALE: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

fn formants(x: &[f64], vowel: &[f64; 3], fs: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    for (k, &f) in vowel.iter().enumerate() {
        if f >= 0.45 * fs {
            continue;
        }
        let spec = FilterSpec {
            kind: FilterKind::Peak,
            freq: f,
            q: 4.0 + 2.0 * k as f64,
            gain_db: 14.0 - 3.0 * k as f64,
            sample_rate: fs,
        };
        let c = design(&spec).expect("formant filter");
        v = filter_sequential(&v, &c, [0.0; 2]).0;
    }
    v
}

/// `seconds` of synthetic vocal at `sample_rate`, peak 0.5.
pub fn synthetic_vocal(seconds: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    let fs = sample_rate;
    let n = (seconds * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let root = 110.0 * 2f64.powf(rng.gen_range(0.0..12.0) / 12.0);
    let mut t = (rng.gen_range(0.05..0.3) * fs) as usize;
    while t < n {
        let phrase = ((rng.gen_range(1.5..4.0) * fs) as usize).min(n - t);
        let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
        // pitch contour with glides between notes
        let mut f0 = vec![0.0; phrase];
        let mut i = 0;
        let mut prev = root * 2f64.powf(SCALE[rng.gen_range(0..SCALE.len())] as f64 / 12.0);
        while i < phrase {
            let len = ((rng.gen_range(0.25..0.8) * fs) as usize).min(phrase - i);
            let octave = if rng.gen_bool(0.3) { 2.0 } else { 1.0 };
            let note = octave * root * 2f64.powf(SCALE[rng.gen_range(0..SCALE.len())] as f64 / 12.0);
            let glide = (0.04 * fs) as usize;
            for k in 0..len {
                let a = (k as f64 / glide as f64).min(1.0);
                f0[i + k] = prev * (1.0 - a) + note * a;
            }
            prev = note;
            i += len;
        }
        let vib_rate = rng.gen_range(4.5..6.5);
        let vib_depth = rng.gen_range(0.01..0.03);
        let level = rng.gen_range(0.4..1.0);
        let mut phase = 0.0;
        let mut voiced = vec![0.0; phrase];
        for k in 0..phrase {
            let tt = k as f64 / fs;
            let onset = (tt / 0.6).min(1.0);
            let f = f0[k] * (1.0 + vib_depth * onset * (2.0 * PI * vib_rate * tt).sin());
            phase += 2.0 * PI * f / fs;
            let mut s = 0.0;
            let mut h = 1;
            while (h as f64) * f < 0.45 * fs && h <= 40 {
                s += (h as f64 * phase).sin() / h as f64;
                h += 1;
            }
            let attack = (tt / 0.05).min(1.0);
            let release = ((phrase - k) as f64 / fs / 0.12).min(1.0);
            // syllable-rate amplitude movement
            let syllable = 0.75 + 0.25 * (2.0 * PI * 3.0 * tt).sin();
            voiced[k] = level * attack * release * syllable * s;
        }
        let voiced = formants(&voiced, &vowel, fs);
        let breath = (0.08 * fs) as usize;
        for k in 0..phrase {
            let mut v = 0.15 * voiced[k];
            if k < breath {
                v += 0.02 * level * rng.gen_range(-1.0..1.0) * (1.0 - k as f64 / breath as f64);
            }
            out[t + k] += v;
        }
        t += phrase + (rng.gen_range(0.2..0.8) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = synthetic_vocal(3.0, 44100.0, 3);
        assert_eq!(a, synthetic_vocal(3.0, 44100.0, 3));
        assert_ne!(a, synthetic_vocal(3.0, 44100.0, 4));
        assert_eq!(a.len(), 132_300);
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn has_pauses_and_sound() {
        let a = synthetic_vocal(10.0, 44100.0, 1);
        let block = 4410;
        let rms: Vec<f64> = a
            .chunks(block)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        assert!(rms.iter().any(|&r| r < 1e-6));
        assert!(rms.iter().filter(|&&r| r > 0.02).count() > rms.len() / 2);
    }
}
