use serde::{Deserialize, Serialize};

use super::segment::BatchSampler;
use crate::error::{Error, Result};
use crate::grad::{value_and_grad, Objective, Segment};
use crate::params::{Preset, NUM_LOGITS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Thresholds of the run filter. Their values are empirical and meant to be tuned per corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Reject when the lowest loss of the run is above this.
    pub max_min_loss: f64,
    /// Reject when the std of step-to-step loss differences over the last `window` steps is
    /// above this.
    pub max_fluctuation: f64,
    pub window: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_min_loss: 2.5,
            max_fluctuation: 0.1,
            window: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RejectReason {
    EmptyTrace,
    HighLoss { min_loss: f64, threshold: f64 },
    Fluctuating { std: f64, threshold: f64 },
    NotDecreasing { first_quarter_min: f64, last_quarter_min: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

fn min_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn filter_run(trace: &[f64], cfg: &FilterConfig) -> Verdict {
    if trace.is_empty() {
        return Verdict {
            accepted: false,
            reasons: vec![RejectReason::EmptyTrace],
        };
    }
    let mut reasons = Vec::new();
    let min_loss = min_of(trace);
    if min_loss > cfg.max_min_loss {
        reasons.push(RejectReason::HighLoss {
            min_loss,
            threshold: cfg.max_min_loss,
        });
    }
    let tail = &trace[trace.len().saturating_sub(cfg.window + 1)..];
    if tail.len() >= 3 {
        let d: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64).sqrt();
        if std > cfg.max_fluctuation {
            reasons.push(RejectReason::Fluctuating {
                std,
                threshold: cfg.max_fluctuation,
            });
        }
    }
    let q = (trace.len() / 4).max(1);
    let (first, last) = (min_of(&trace[..q]), min_of(&trace[trace.len() - q..]));
    if last >= first {
        reasons.push(RejectReason::NotDecreasing {
            first_quarter_min: first,
            last_quarter_min: last,
        });
    }
    Verdict {
        accepted: reasons.is_empty(),
        reasons,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    /// Seeds the per-step segment selection.
    pub seed: u64,
    pub max_segments_per_step: usize,
    /// Draw a new selection every step instead of fixing one per track.
    pub resample_per_step: bool,
    /// Keep loss targets in memory when the track has at most this many segments.
    pub cache_targets_up_to: usize,
    pub filter: FilterConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            adam: AdamConfig::default(),
            seed: 0,
            max_segments_per_step: 35,
            resample_per_step: true,
            cache_targets_up_to: 8,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Logits of the lowest-loss step.
    pub preset: Preset,
    /// Batch loss at the start of every step.
    pub trace: Vec<f64>,
    pub best_step: usize,
    pub best_loss: f64,
    pub verdict: Verdict,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Adam on the batch loss; `on_step(step, loss)` runs after every evaluation.
pub fn fit(
    mut segments: Vec<Segment>,
    init: &[f64],
    obj: &Objective,
    cfg: &FitConfig,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<FitResult> {
    if init.len() != NUM_LOGITS {
        return Err(Error::Layout {
            expected: NUM_LOGITS,
            actual: init.len(),
        });
    }
    if segments.is_empty() {
        return Err(Error::Rejected("no non-silent segments".into()));
    }
    if segments.len() <= cfg.cache_targets_up_to {
        for s in &mut segments {
            s.cache_target()?;
        }
    }
    let mut sampler = BatchSampler::new(segments.len(), cfg.max_segments_per_step, cfg.resample_per_step, cfg.seed);
    let mut adam = Adam::new(NUM_LOGITS, cfg.adam);
    let mut x = init.to_vec();
    let mut best = (0, f64::INFINITY, x.clone());
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Segment> = sampler.next_batch().into_iter().map(|i| segments[i].clone()).collect();
        let vg = match value_and_grad(&x, &batch, obj) {
            Ok(vg) if vg.loss.is_finite() => vg,
            Ok(_) | Err(Error::Stage(_)) | Err(Error::NonFinite(_)) => {
                log::error!("loss became non-finite at step {step}");
                return Err(Error::Diverged { step, trace });
            }
            Err(e) => return Err(e),
        };
        trace.push(vg.loss);
        on_step(step, vg.loss);
        if vg.loss < best.1 {
            best = (step, vg.loss, x.clone());
        }
        adam.step(&mut x, &vg.grad);
    }
    let verdict = filter_run(&trace, &cfg.filter);
    Ok(FitResult {
        preset: Preset::new(best.2, &obj.bounds)?,
        trace,
        best_step: best.0,
        best_loss: best.1,
        verdict,
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(3, AdamConfig::default());
        let mut x = [0.0, 1.0, 2.0];
        a.step(&mut x, &[2.0, -0.5, 0.0]);
        assert!((x[0] + 0.01).abs() < 1e-9);
        assert!((x[1] - 1.01).abs() < 1e-9);
        assert_eq!(x[2], 2.0);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut a = Adam::new(2, cfg);
        let mut x = [3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 8.0 * (x[1] + 0.5)];
            a.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-2 && (x[1] + 0.5).abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn decreasing_trace_is_accepted() {
        let t: Vec<f64> = (0..2000).map(|i| 1.0 / (1.0 + i as f64 * 0.01)).collect();
        let v = filter_run(&t, &FilterConfig::default());
        assert!(v.accepted, "{v:?}");
    }

    #[test]
    fn constant_high_trace_is_rejected() {
        let v = filter_run(&[5.0; 400], &FilterConfig::default());
        assert!(!v.accepted);
        assert!(v.reasons.iter().any(|r| matches!(r, RejectReason::NotDecreasing { .. })));
        assert!(v.reasons.iter().any(|r| matches!(r, RejectReason::HighLoss { .. })));
    }

    #[test]
    fn noisy_trace_is_rejected_for_fluctuation() {
        let t: Vec<f64> = (0..1000).map(|i| 1.0 - i as f64 * 1e-4 + if i % 2 == 0 { 0.3 } else { 0.0 }).collect();
        let v = filter_run(&t, &FilterConfig::default());
        assert!(v.reasons.iter().any(|r| matches!(r, RejectReason::Fluctuating { .. })), "{v:?}");
    }

    #[test]
    fn thresholds_come_from_config() {
        let t: Vec<f64> = (0..100).map(|i| 3.0 - i as f64 * 1e-3).collect();
        assert!(!filter_run(&t, &FilterConfig::default()).accepted);
        let loose = FilterConfig {
            max_min_loss: 10.0,
            ..FilterConfig::default()
        };
        assert!(filter_run(&t, &loose).accepted);
        let cfg: FilterConfig = serde_json::from_str(r#"{"max_min_loss": 0.5}"#).unwrap();
        assert_eq!(cfg.max_min_loss, 0.5);
        assert_eq!(cfg.window, 500);
    }

    #[test]
    fn empty_trace_is_rejected() {
        assert_eq!(filter_run(&[], &FilterConfig::default()).reasons, vec![RejectReason::EmptyTrace]);
    }
}
