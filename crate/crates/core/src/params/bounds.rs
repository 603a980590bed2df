//! Numeric bounds of every bounded parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed description of an open interval `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::InvalidInterval {
                name: name.to_string(),
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Frequency and Q ranges of one filter. Gains are unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBounds {
    pub freq: Interval,
    pub q: Interval,
}

/// Per-sample decay that reaches -60 dB after `t60` seconds.
pub fn decay_for_t60(t60: f64, sample_rate: f64) -> f64 {
    10f64.powf(-3.0 / (t60 * sample_rate))
}

/// Bounds for all bounded parameters, keyed by an id so presets can name the set they were
/// fitted with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub id: String,
    pub version: u32,
    pub sample_rate: f64,
    pub pk1: FilterBounds,
    pub pk2: FilterBounds,
    pub low_shelf_freq: Interval,
    pub high_shelf_freq: Interval,
    /// Fixed Q of both shelving filters.
    pub shelf_q: f64,
    pub low_pass: FilterBounds,
    pub high_pass: FilterBounds,
    pub comp_ratio: Interval,
    /// Modulus of the look-ahead map (the maximum look-ahead in samples).
    pub lookahead_max: f64,
    /// Delay time in samples.
    pub delay_time: Interval,
    pub delay_low_pass: FilterBounds,
    /// Per-sample attenuation of the FDN lines.
    pub fdn_gamma: Interval,
    pub tone_pk1: FilterBounds,
    pub tone_pk2: FilterBounds,
    pub tone_low_shelf_freq: Interval,
    pub tone_high_shelf_freq: Interval,
}

impl BoundsConfig {
    /// Default bounds at the given sample rate.
    pub fn for_sample_rate(sample_rate: f64) -> Self {
        let eq_q = Interval::new(0.2, 20.0);
        let pass_q = Interval::new(0.5, 10.0);
        let low_pass = FilterBounds {
            freq: Interval::new(200.0, 18000.0),
            q: pass_q,
        };
        let tone_q = Interval::new(0.1, 3.0);
        let low_shelf = Interval::new(30.0, 450.0);
        let high_shelf = Interval::new(750.0, 8300.0);
        Self {
            id: "default".into(),
            version: 1,
            sample_rate,
            pk1: FilterBounds {
                freq: Interval::new(33.0, 5400.0),
                q: eq_q,
            },
            pk2: FilterBounds {
                freq: Interval::new(200.0, 17500.0),
                q: eq_q,
            },
            low_shelf_freq: low_shelf,
            high_shelf_freq: high_shelf,
            shelf_q: 0.707,
            low_pass,
            high_pass: FilterBounds {
                freq: Interval::new(16.0, 5300.0),
                q: pass_q,
            },
            comp_ratio: Interval::new(1.0, 20.0),
            lookahead_max: 32.0,
            delay_time: Interval::new(0.1 * sample_rate, sample_rate),
            delay_low_pass: low_pass,
            fdn_gamma: Interval::new(
                decay_for_t60(0.1, sample_rate),
                decay_for_t60(9.0, sample_rate),
            ),
            tone_pk1: FilterBounds {
                freq: Interval::new(200.0, 2500.0),
                q: tone_q,
            },
            tone_pk2: FilterBounds {
                freq: Interval::new(2000.0, 16000.0),
                q: tone_q,
            },
            tone_low_shelf_freq: low_shelf,
            tone_high_shelf_freq: high_shelf,
        }
    }

    /// Checks every interval and the filter-specific constraints.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        let nyquist = 0.5 * self.sample_rate;
        let filters = [
            ("pk1", self.pk1),
            ("pk2", self.pk2),
            ("low_pass", self.low_pass),
            ("high_pass", self.high_pass),
            ("delay_low_pass", self.delay_low_pass),
            ("tone_pk1", self.tone_pk1),
            ("tone_pk2", self.tone_pk2),
        ];
        for (name, f) in filters {
            f.freq.validate(&format!("{name}.freq"))?;
            f.q.validate(&format!("{name}.q"))?;
            if f.freq.lo <= 0.0 || f.freq.hi >= nyquist || f.q.lo <= 0.0 {
                return Err(Error::InvalidInterval {
                    name: format!("{name} (must satisfy 0 < f < fs/2, Q > 0)"),
                    lo: f.freq.lo,
                    hi: f.freq.hi,
                });
            }
        }
        for (name, f) in [("low_pass", self.low_pass), ("high_pass", self.high_pass)] {
            if f.q.lo < 0.5 {
                return Err(Error::InvalidInterval {
                    name: format!("{name}.q (lower bound must be at least 0.5)"),
                    lo: f.q.lo,
                    hi: f.q.hi,
                });
            }
        }
        let shelves = [
            ("low_shelf_freq", self.low_shelf_freq),
            ("high_shelf_freq", self.high_shelf_freq),
            ("tone_low_shelf_freq", self.tone_low_shelf_freq),
            ("tone_high_shelf_freq", self.tone_high_shelf_freq),
        ];
        for (name, iv) in shelves {
            iv.validate(name)?;
            if iv.lo <= 0.0 || iv.hi >= nyquist {
                return Err(Error::InvalidInterval {
                    name: name.to_string(),
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        if !(self.shelf_q > 0.0) {
            return Err(Error::InvalidArgument("shelf Q must be positive".into()));
        }
        self.comp_ratio.validate("comp_ratio")?;
        if self.comp_ratio.lo < 1.0 {
            return Err(Error::InvalidInterval {
                name: "comp_ratio (must be at least 1)".into(),
                lo: self.comp_ratio.lo,
                hi: self.comp_ratio.hi,
            });
        }
        if !(self.lookahead_max > 0.0) {
            return Err(Error::InvalidArgument("look-ahead modulus must be positive".into()));
        }
        self.delay_time.validate("delay_time")?;
        if self.delay_time.lo < 1.0 {
            return Err(Error::InvalidInterval {
                name: "delay_time (must be at least one sample)".into(),
                lo: self.delay_time.lo,
                hi: self.delay_time.hi,
            });
        }
        self.fdn_gamma.validate("fdn_gamma")?;
        if self.fdn_gamma.lo <= 0.0 || self.fdn_gamma.hi >= 1.0 {
            return Err(Error::InvalidInterval {
                name: "fdn_gamma (must lie inside (0, 1))".into(),
                lo: self.fdn_gamma.lo,
                hi: self.fdn_gamma.hi,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self::for_sample_rate(44100.0)
    }
}
