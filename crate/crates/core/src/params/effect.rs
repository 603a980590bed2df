//! Structured effect parameters and the logit <-> parameter maps of the full chain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bounds::{BoundsConfig, Interval};
use super::layout::*;
use super::maps::*;
use super::orthogonal::{expm_vjp, expm_with_tape, skew_from_upper, skew_vjp, unmap_orthogonal, ExpmTape};
use crate::error::{Error, Result};

/// Frequency (Hz), Q and gain (dB) of one filter. Gain is ignored by pass filters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub freq: f64,
    pub q: f64,
    pub gain_db: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeqParams {
    pub pk1: FilterParams,
    pub pk2: FilterParams,
    pub low_shelf: FilterParams,
    pub high_shelf: FilterParams,
    pub low_pass: FilterParams,
    pub high_pass: FilterParams,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub comp_threshold: f64,
    pub exp_threshold: f64,
    pub comp_ratio: f64,
    pub exp_ratio: f64,
    pub attack: f64,
    pub release: f64,
    pub rms_smoothing: f64,
    pub makeup_db: f64,
    /// Look-ahead in samples.
    pub lookahead: f64,
}

impl DynamicsParams {
    /// Whether the expander threshold sits at or above the compressor threshold.
    pub fn thresholds_inverted(&self) -> bool {
        self.exp_threshold >= self.comp_threshold
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Delay time in samples.
    pub delay: f64,
    pub feedback: f64,
    pub gain: f64,
    pub low_pass: FilterParams,
    pub pan_odd: f64,
    pub pan_even: f64,
    /// `ln(eta)`, never positive.
    pub log_eta: f64,
}

impl DelayParams {
    pub fn eta(&self) -> f64 {
        self.log_eta.exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToneParams {
    pub pk1: FilterParams,
    pub pk2: FilterParams,
    pub low_shelf: FilterParams,
    pub high_shelf: FilterParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FdnParams {
    pub b: [[f64; 2]; FDN_LINES],
    pub c: [[f64; FDN_LINES]; 2],
    pub u: [[f64; FDN_LINES]; FDN_LINES],
    pub gamma: Vec<f64>,
    pub tone: ToneParams,
}

/// Decoded parameters of the whole chain. The same shape doubles as a cotangent container.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectParams {
    pub peq: PeqParams,
    pub dynamics: DynamicsParams,
    pub delay: DelayParams,
    pub fdn: FdnParams,
    pub pan: f64,
    pub send: f64,
}

impl EffectParams {
    /// All-zero record, used as a gradient accumulator.
    pub fn zeros() -> Self {
        let mut p = Self::default();
        p.fdn.gamma = vec![0.0; GAMMA_POINTS];
        p
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(FDN_LINES, FDN_LINES, |i, j| self.fdn.u[i][j])
    }

    /// Checks the decoded-parameter invariants against `bounds`.
    pub fn validate(&self, bounds: &BoundsConfig) -> Result<()> {
        let inside = |name: &str, v: f64, iv: Interval| -> Result<()> {
            if v >= iv.lo && v <= iv.hi {
                Ok(())
            } else {
                Err(Error::OutOfBounds {
                    name: name.to_string(),
                    value: v,
                    lo: iv.lo,
                    hi: iv.hi,
                })
            }
        };
        let unit = Interval::new(0.0, 1.0);
        let p = &self.peq;
        inside("peq.pk1.freq", p.pk1.freq, bounds.pk1.freq)?;
        inside("peq.pk1.q", p.pk1.q, bounds.pk1.q)?;
        inside("peq.pk2.freq", p.pk2.freq, bounds.pk2.freq)?;
        inside("peq.pk2.q", p.pk2.q, bounds.pk2.q)?;
        inside("peq.ls.freq", p.low_shelf.freq, bounds.low_shelf_freq)?;
        inside("peq.hs.freq", p.high_shelf.freq, bounds.high_shelf_freq)?;
        inside("peq.lp.freq", p.low_pass.freq, bounds.low_pass.freq)?;
        inside("peq.lp.q", p.low_pass.q, bounds.low_pass.q)?;
        inside("peq.hp.freq", p.high_pass.freq, bounds.high_pass.freq)?;
        inside("peq.hp.q", p.high_pass.q, bounds.high_pass.q)?;
        let d = &self.dynamics;
        inside("dynamics.cr", d.comp_ratio, bounds.comp_ratio)?;
        inside("dynamics.er", d.exp_ratio, unit)?;
        inside("dynamics.attack", d.attack, unit)?;
        inside("dynamics.release", d.release, unit)?;
        inside("dynamics.rms", d.rms_smoothing, unit)?;
        inside("dynamics.lookahead", d.lookahead, Interval::new(0.0, bounds.lookahead_max))?;
        let dl = &self.delay;
        inside("delay.time", dl.delay, bounds.delay_time)?;
        inside("delay.feedback", dl.feedback, unit)?;
        inside("delay.gain", dl.gain, unit)?;
        inside("delay.lp.freq", dl.low_pass.freq, bounds.delay_low_pass.freq)?;
        inside("delay.lp.q", dl.low_pass.q, bounds.delay_low_pass.q)?;
        inside("delay.pan_odd", dl.pan_odd, unit)?;
        inside("delay.pan_even", dl.pan_even, unit)?;
        if dl.log_eta > 0.0 {
            return Err(Error::OutOfBounds {
                name: "delay.log_eta".into(),
                value: dl.log_eta,
                lo: f64::NEG_INFINITY,
                hi: 0.0,
            });
        }
        let f = &self.fdn;
        if f.gamma.len() != GAMMA_POINTS {
            return Err(Error::Layout {
                expected: GAMMA_POINTS,
                actual: f.gamma.len(),
            });
        }
        for (k, &g) in f.gamma.iter().enumerate() {
            inside(&format!("fdn.gamma[{k}]"), g, bounds.fdn_gamma)?;
        }
        inside("fdn.tone.pk1.freq", f.tone.pk1.freq, bounds.tone_pk1.freq)?;
        inside("fdn.tone.pk1.q", f.tone.pk1.q, bounds.tone_pk1.q)?;
        inside("fdn.tone.pk2.freq", f.tone.pk2.freq, bounds.tone_pk2.freq)?;
        inside("fdn.tone.pk2.q", f.tone.pk2.q, bounds.tone_pk2.q)?;
        inside("fdn.tone.ls.freq", f.tone.low_shelf.freq, bounds.tone_low_shelf_freq)?;
        inside("fdn.tone.hs.freq", f.tone.high_shelf.freq, bounds.tone_high_shelf_freq)?;
        let u = self.u_matrix();
        let err = (u.transpose() * &u - DMatrix::<f64>::identity(FDN_LINES, FDN_LINES))
            .abs()
            .max();
        if err > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "feedback matrix deviates from orthogonality by {err:e}"
            )));
        }
        inside("pan", self.pan, unit)?;
        inside("send", self.send, unit)?;
        Ok(())
    }
}

/// Values retained from [`decode_with_tape`] for [`decode_vjp`].
#[derive(Clone, Debug)]
pub struct DecodeTape {
    logits: Vec<f64>,
    expm: ExpmTape,
}

fn check_len(logits: &[f64]) -> Result<()> {
    if logits.len() != NUM_LOGITS {
        return Err(Error::Layout {
            expected: NUM_LOGITS,
            actual: logits.len(),
        });
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(parameter_name(i)));
    }
    Ok(())
}

fn filter(t: &[f64], f: usize, q: Option<usize>, g: Option<usize>, fb: Interval, qb: Interval, fixed_q: f64) -> Result<FilterParams> {
    Ok(FilterParams {
        freq: map_bounded(t[f], fb.lo, fb.hi)?,
        q: match q {
            Some(i) => map_bounded(t[i], qb.lo, qb.hi)?,
            None => fixed_q,
        },
        gain_db: g.map_or(0.0, |i| t[i]),
    })
}

/// Maps a logit vector to bounded effect parameters.
pub fn decode(logits: &[f64], bounds: &BoundsConfig) -> Result<EffectParams> {
    decode_with_tape(logits, bounds).map(|(p, _)| p)
}

pub fn decode_with_tape(t: &[f64], b: &BoundsConfig) -> Result<(EffectParams, DecodeTape)> {
    check_len(t)?;
    let unused = Interval::new(0.0, 1.0);
    let peq = PeqParams {
        pk1: filter(t, PK1_FREQ, Some(PK1_Q), Some(PK1_GAIN), b.pk1.freq, b.pk1.q, 0.0)?,
        pk2: filter(t, PK2_FREQ, Some(PK2_Q), Some(PK2_GAIN), b.pk2.freq, b.pk2.q, 0.0)?,
        low_shelf: filter(t, LS_FREQ, None, Some(LS_GAIN), b.low_shelf_freq, unused, b.shelf_q)?,
        high_shelf: filter(t, HS_FREQ, None, Some(HS_GAIN), b.high_shelf_freq, unused, b.shelf_q)?,
        low_pass: filter(t, LP_FREQ, Some(LP_Q), None, b.low_pass.freq, b.low_pass.q, 0.0)?,
        high_pass: filter(t, HP_FREQ, Some(HP_Q), None, b.high_pass.freq, b.high_pass.q, 0.0)?,
    };
    let dynamics = DynamicsParams {
        comp_threshold: t[COMP_THRESHOLD],
        exp_threshold: t[EXP_THRESHOLD],
        comp_ratio: map_bounded(t[COMP_RATIO], b.comp_ratio.lo, b.comp_ratio.hi)?,
        exp_ratio: map_unit(t[EXP_RATIO])?,
        attack: map_unit(t[ATTACK])?,
        release: map_unit(t[RELEASE])?,
        rms_smoothing: map_unit(t[RMS_SMOOTHING])?,
        makeup_db: t[MAKEUP],
        lookahead: map_modulo(t[LOOKAHEAD], b.lookahead_max)?,
    };
    let dl = b.delay_low_pass;
    let delay = DelayParams {
        delay: map_bounded(t[DELAY_TIME], b.delay_time.lo, b.delay_time.hi)?,
        feedback: map_unit(t[DELAY_FEEDBACK])?,
        gain: map_unit(t[DELAY_GAIN])?,
        low_pass: filter(t, DELAY_LP_FREQ, Some(DELAY_LP_Q), None, dl.freq, dl.q, 0.0)?,
        pan_odd: map_unit(t[DELAY_PAN_ODD])?,
        pan_even: map_unit(t[DELAY_PAN_EVEN])?,
        log_eta: map_nonpositive(t[DELAY_LOG_ETA]),
    };

    let mut fdn = FdnParams::default();
    for r in 0..FDN_LINES {
        for c in 0..2 {
            fdn.b[r][c] = t[FDN_B + 2 * r + c];
            fdn.c[c][r] = t[FDN_C + FDN_LINES * c + r];
        }
    }
    let theta = DMatrix::from_fn(FDN_LINES, FDN_LINES, |i, j| t[FDN_U + FDN_LINES * i + j]);
    let (u, expm) = expm_with_tape(&skew_from_upper(&theta));
    for i in 0..FDN_LINES {
        for j in 0..FDN_LINES {
            fdn.u[i][j] = u[(i, j)];
        }
    }
    fdn.gamma = (0..GAMMA_POINTS)
        .map(|k| map_bounded(t[FDN_GAMMA + k], b.fdn_gamma.lo, b.fdn_gamma.hi))
        .collect::<Result<_>>()?;
    fdn.tone = ToneParams {
        pk1: filter(t, TONE_PK1_FREQ, Some(TONE_PK1_Q), Some(TONE_PK1_GAIN), b.tone_pk1.freq, b.tone_pk1.q, 0.0)?,
        pk2: filter(t, TONE_PK2_FREQ, Some(TONE_PK2_Q), Some(TONE_PK2_GAIN), b.tone_pk2.freq, b.tone_pk2.q, 0.0)?,
        low_shelf: filter(t, TONE_LS_FREQ, None, Some(TONE_LS_GAIN), b.tone_low_shelf_freq, unused, b.shelf_q)?,
        high_shelf: filter(t, TONE_HS_FREQ, None, Some(TONE_HS_GAIN), b.tone_high_shelf_freq, unused, b.shelf_q)?,
    };

    let params = EffectParams {
        peq,
        dynamics,
        delay,
        fdn,
        pan: map_unit(t[PAN])?,
        send: map_unit(t[SEND])?,
    };
    Ok((
        params,
        DecodeTape {
            logits: t.to_vec(),
            expm,
        },
    ))
}

/// Pulls a cotangent of the decoded parameters back to the 152 logits. Dead logits receive
/// exactly zero.
pub fn decode_vjp(tape: &DecodeTape, b: &BoundsConfig, g: &EffectParams) -> Vec<f64> {
    let t = &tape.logits;
    let mut out = vec![0.0; NUM_LOGITS];
    let bnd = |i: usize, iv: Interval| map_bounded_grad(t[i], iv.lo, iv.hi);
    let unit = |i: usize| map_unit_grad(t[i]);

    let filt = |out: &mut Vec<f64>, gf: &FilterParams, f: usize, q: Option<usize>, gain: Option<usize>, fb: Interval, qb: Interval| {
        out[f] = gf.freq * bnd(f, fb);
        if let Some(i) = q {
            out[i] = gf.q * bnd(i, qb);
        }
        if let Some(i) = gain {
            out[i] = gf.gain_db;
        }
    };
    let unused = Interval::new(0.0, 1.0);
    let p = &g.peq;
    filt(&mut out, &p.pk1, PK1_FREQ, Some(PK1_Q), Some(PK1_GAIN), b.pk1.freq, b.pk1.q);
    filt(&mut out, &p.pk2, PK2_FREQ, Some(PK2_Q), Some(PK2_GAIN), b.pk2.freq, b.pk2.q);
    filt(&mut out, &p.low_shelf, LS_FREQ, None, Some(LS_GAIN), b.low_shelf_freq, unused);
    filt(&mut out, &p.high_shelf, HS_FREQ, None, Some(HS_GAIN), b.high_shelf_freq, unused);
    filt(&mut out, &p.low_pass, LP_FREQ, Some(LP_Q), None, b.low_pass.freq, b.low_pass.q);
    filt(&mut out, &p.high_pass, HP_FREQ, Some(HP_Q), None, b.high_pass.freq, b.high_pass.q);

    let d = &g.dynamics;
    out[COMP_THRESHOLD] = d.comp_threshold;
    out[EXP_THRESHOLD] = d.exp_threshold;
    out[COMP_RATIO] = d.comp_ratio * bnd(COMP_RATIO, b.comp_ratio);
    out[EXP_RATIO] = d.exp_ratio * unit(EXP_RATIO);
    out[ATTACK] = d.attack * unit(ATTACK);
    out[RELEASE] = d.release * unit(RELEASE);
    out[RMS_SMOOTHING] = d.rms_smoothing * unit(RMS_SMOOTHING);
    out[MAKEUP] = d.makeup_db;
    out[LOOKAHEAD] = d.lookahead;

    let dl = &g.delay;
    out[DELAY_TIME] = dl.delay * bnd(DELAY_TIME, b.delay_time);
    out[DELAY_FEEDBACK] = dl.feedback * unit(DELAY_FEEDBACK);
    out[DELAY_GAIN] = dl.gain * unit(DELAY_GAIN);
    filt(&mut out, &dl.low_pass, DELAY_LP_FREQ, Some(DELAY_LP_Q), None, b.delay_low_pass.freq, b.delay_low_pass.q);
    out[DELAY_PAN_ODD] = dl.pan_odd * unit(DELAY_PAN_ODD);
    out[DELAY_PAN_EVEN] = dl.pan_even * unit(DELAY_PAN_EVEN);
    out[DELAY_LOG_ETA] = dl.log_eta * map_nonpositive_grad(t[DELAY_LOG_ETA]);

    let f = &g.fdn;
    for r in 0..FDN_LINES {
        for c in 0..2 {
            out[FDN_B + 2 * r + c] = f.b[r][c];
            out[FDN_C + FDN_LINES * c + r] = f.c[c][r];
        }
    }
    let grad_u = DMatrix::from_fn(FDN_LINES, FDN_LINES, |i, j| f.u[i][j]);
    let grad_theta = skew_vjp(&expm_vjp(&tape.expm, &grad_u));
    for i in 0..FDN_LINES {
        for j in 0..FDN_LINES {
            out[FDN_U + FDN_LINES * i + j] = grad_theta[(i, j)];
        }
    }
    for (k, gk) in f.gamma.iter().enumerate() {
        out[FDN_GAMMA + k] = gk * bnd(FDN_GAMMA + k, b.fdn_gamma);
    }
    let tn = &f.tone;
    filt(&mut out, &tn.pk1, TONE_PK1_FREQ, Some(TONE_PK1_Q), Some(TONE_PK1_GAIN), b.tone_pk1.freq, b.tone_pk1.q);
    filt(&mut out, &tn.pk2, TONE_PK2_FREQ, Some(TONE_PK2_Q), Some(TONE_PK2_GAIN), b.tone_pk2.freq, b.tone_pk2.q);
    filt(&mut out, &tn.low_shelf, TONE_LS_FREQ, None, Some(TONE_LS_GAIN), b.tone_low_shelf_freq, unused);
    filt(&mut out, &tn.high_shelf, TONE_HS_FREQ, None, Some(TONE_HS_GAIN), b.tone_high_shelf_freq, unused);

    out[PAN] = g.pan * unit(PAN);
    out[SEND] = g.send * unit(SEND);
    out
}

fn unfilter(out: &mut [f64], p: &FilterParams, f: usize, q: Option<usize>, g: Option<usize>, fb: Interval, qb: Interval) -> Result<()> {
    out[f] = unmap_bounded(p.freq, fb.lo, fb.hi)?;
    if let Some(i) = q {
        out[i] = unmap_bounded(p.q, qb.lo, qb.hi)?;
    }
    if let Some(i) = g {
        out[i] = p.gain_db;
    }
    Ok(())
}

/// Inverse of [`decode`] for parameters strictly inside their bounds.
pub fn encode(p: &EffectParams, b: &BoundsConfig) -> Result<Vec<f64>> {
    let mut t = vec![0.0; NUM_LOGITS];
    let unused = Interval::new(0.0, 1.0);
    let e = &p.peq;
    unfilter(&mut t, &e.pk1, PK1_FREQ, Some(PK1_Q), Some(PK1_GAIN), b.pk1.freq, b.pk1.q)?;
    unfilter(&mut t, &e.pk2, PK2_FREQ, Some(PK2_Q), Some(PK2_GAIN), b.pk2.freq, b.pk2.q)?;
    unfilter(&mut t, &e.low_shelf, LS_FREQ, None, Some(LS_GAIN), b.low_shelf_freq, unused)?;
    unfilter(&mut t, &e.high_shelf, HS_FREQ, None, Some(HS_GAIN), b.high_shelf_freq, unused)?;
    unfilter(&mut t, &e.low_pass, LP_FREQ, Some(LP_Q), None, b.low_pass.freq, b.low_pass.q)?;
    unfilter(&mut t, &e.high_pass, HP_FREQ, Some(HP_Q), None, b.high_pass.freq, b.high_pass.q)?;

    let d = &p.dynamics;
    t[COMP_THRESHOLD] = d.comp_threshold;
    t[EXP_THRESHOLD] = d.exp_threshold;
    t[COMP_RATIO] = unmap_bounded(d.comp_ratio, b.comp_ratio.lo, b.comp_ratio.hi)?;
    t[EXP_RATIO] = unmap_unit(d.exp_ratio)?;
    t[ATTACK] = unmap_unit(d.attack)?;
    t[RELEASE] = unmap_unit(d.release)?;
    t[RMS_SMOOTHING] = unmap_unit(d.rms_smoothing)?;
    t[MAKEUP] = d.makeup_db;
    if !(d.lookahead >= 0.0 && d.lookahead < b.lookahead_max) {
        return Err(Error::OutOfBounds {
            name: "dynamics.lookahead".into(),
            value: d.lookahead,
            lo: 0.0,
            hi: b.lookahead_max,
        });
    }
    t[LOOKAHEAD] = d.lookahead;

    let dl = &p.delay;
    t[DELAY_TIME] = unmap_bounded(dl.delay, b.delay_time.lo, b.delay_time.hi)?;
    t[DELAY_FEEDBACK] = unmap_unit(dl.feedback)?;
    t[DELAY_GAIN] = unmap_unit(dl.gain)?;
    unfilter(&mut t, &dl.low_pass, DELAY_LP_FREQ, Some(DELAY_LP_Q), None, b.delay_low_pass.freq, b.delay_low_pass.q)?;
    t[DELAY_PAN_ODD] = unmap_unit(dl.pan_odd)?;
    t[DELAY_PAN_EVEN] = unmap_unit(dl.pan_even)?;
    t[DELAY_LOG_ETA] = unmap_nonpositive(dl.log_eta)?;

    let f = &p.fdn;
    if f.gamma.len() != GAMMA_POINTS {
        return Err(Error::Layout {
            expected: GAMMA_POINTS,
            actual: f.gamma.len(),
        });
    }
    for r in 0..FDN_LINES {
        for c in 0..2 {
            t[FDN_B + 2 * r + c] = f.b[r][c];
            t[FDN_C + FDN_LINES * c + r] = f.c[c][r];
        }
    }
    let theta = unmap_orthogonal(&p.u_matrix())?;
    for i in 0..FDN_LINES {
        for j in 0..FDN_LINES {
            t[FDN_U + FDN_LINES * i + j] = theta[(i, j)];
        }
    }
    for (k, &g) in f.gamma.iter().enumerate() {
        t[FDN_GAMMA + k] = unmap_bounded(g, b.fdn_gamma.lo, b.fdn_gamma.hi)?;
    }
    let tn = &f.tone;
    unfilter(&mut t, &tn.pk1, TONE_PK1_FREQ, Some(TONE_PK1_Q), Some(TONE_PK1_GAIN), b.tone_pk1.freq, b.tone_pk1.q)?;
    unfilter(&mut t, &tn.pk2, TONE_PK2_FREQ, Some(TONE_PK2_Q), Some(TONE_PK2_GAIN), b.tone_pk2.freq, b.tone_pk2.q)?;
    unfilter(&mut t, &tn.low_shelf, TONE_LS_FREQ, None, Some(TONE_LS_GAIN), b.tone_low_shelf_freq, unused)?;
    unfilter(&mut t, &tn.high_shelf, TONE_HS_FREQ, None, Some(TONE_HS_GAIN), b.tone_high_shelf_freq, unused)?;

    t[PAN] = unmap_unit(p.pan)?;
    t[SEND] = unmap_unit(p.send)?;
    Ok(t)
}
