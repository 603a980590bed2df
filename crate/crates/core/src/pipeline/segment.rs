use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prepare::TrackPair;
use crate::error::Result;
use crate::grad::Segment;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub window_seconds: f64,
    pub step_seconds: f64,
    /// Leading part of every window that is rendered but excluded from the loss.
    pub warmup_seconds: f64,
    /// Segments whose target loss region is quieter than this (dBFS RMS) are dropped.
    pub silence_db: f64,
    /// Adds a window ending at the last sample when the regular grid stops short of it.
    pub tail_window: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window_seconds: 12.0,
            step_seconds: 7.0,
            warmup_seconds: 5.0,
            silence_db: -60.0,
            tail_window: true,
        }
    }
}

/// Window starts for a `len`-sample track; empty when the track is shorter than one window.
pub fn window_starts(len: usize, window: usize, step: usize, tail: bool) -> Vec<usize> {
    if len < window || window == 0 {
        return Vec::new();
    }
    let step = step.max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|s| s + window <= len).collect();
    let last = *starts.last().unwrap();
    if tail && last + window < len {
        starts.push(len - window);
    }
    starts
}

#[derive(Clone, Debug)]
pub struct SegmentPlan {
    pub segments: Vec<Segment>,
    /// Start sample of each kept segment in track coordinates (negative for padding).
    pub starts: Vec<i64>,
    /// The track was shorter than one window and was front-padded with zeros.
    pub padded: bool,
    pub dropped_silent: usize,
}

fn rms_db(chans: [&[f64]; 2]) -> f64 {
    let n = chans[0].len().max(1) as f64;
    let e: f64 = chans.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() / (2.0 * n);
    10.0 * e.log10()
}

pub fn segment(pair: &TrackPair, cfg: &SegmentConfig) -> Result<SegmentPlan> {
    let fs = pair.sample_rate;
    let window = (cfg.window_seconds * fs).round() as usize;
    let step = (cfg.step_seconds * fs).round() as usize;
    let warmup = ((cfg.warmup_seconds * fs).round() as usize).min(window.saturating_sub(1));
    let n = pair.len();

    let mut windows: Vec<(i64, Vec<f64>, [Vec<f64>; 2])> = Vec::new();
    let padded = n < window;
    if padded {
        log::warn!("{}: {n} samples is shorter than one window; padding", pair.id);
        let pad = window - n;
        let front = |x: &[f64]| {
            let mut v = vec![0.0; pad];
            v.extend_from_slice(x);
            v
        };
        windows.push((
            -(pad as i64),
            front(&pair.source),
            [front(&pair.target[0]), front(&pair.target[1])],
        ));
    } else {
        for s in window_starts(n, window, step, cfg.tail_window) {
            let r = s..s + window;
            windows.push((
                s as i64,
                pair.source[r.clone()].to_vec(),
                [pair.target[0][r.clone()].to_vec(), pair.target[1][r].to_vec()],
            ));
        }
    }

    let mut plan = SegmentPlan {
        segments: Vec::new(),
        starts: Vec::new(),
        padded,
        dropped_silent: 0,
    };
    for (start, input, target) in windows {
        if rms_db([&target[0][warmup..], &target[1][warmup..]]) < cfg.silence_db {
            plan.dropped_silent += 1;
            continue;
        }
        plan.segments.push(Segment::new(input, [&target[0], &target[1]], warmup, fs)?);
        plan.starts.push(start);
    }
    Ok(plan)
}

/// Chooses which segments enter each step: all of them when there are at most `max`,
/// otherwise `max` drawn uniformly without replacement, either once or anew every step.
pub struct BatchSampler {
    count: usize,
    max: usize,
    resample: bool,
    rng: ChaCha8Rng,
    fixed: Option<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(count: usize, max: usize, resample: bool, seed: u64) -> Self {
        let mut s = Self {
            count,
            max: max.max(1),
            resample,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fixed: None,
        };
        if !resample {
            s.fixed = Some(s.draw());
        }
        s
    }

    fn draw(&mut self) -> Vec<usize> {
        if self.count <= self.max {
            return (0..self.count).collect();
        }
        let mut v = sample(&mut self.rng, self.count, self.max).into_vec();
        v.sort_unstable();
        v
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        match (&self.fixed, self.resample) {
            (Some(f), false) => f.clone(),
            _ => self.draw(),
        }
    }
}
