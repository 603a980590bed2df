//! Starting point of a fit: a preset close to an identity chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::bounds::BoundsConfig;
use super::effect::{decode, encode};
use super::layout::*;
use crate::error::Result;

/// Values of the starting preset that are free choices rather than fixed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct InitOptions {
    pub attack: f64,
    pub release: f64,
    pub rms_smoothing: f64,
    pub lookahead: f64,
    pub eta_logit: f64,
    /// Range of the normalised position of every attenuation sample inside its bounds.
    pub gamma_position: (f64, f64),
    /// Standard deviation of the upper-triangle feedback logits.
    pub feedback_logit_std: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            attack: 0.01,
            release: 0.001,
            rms_smoothing: 0.01,
            lookahead: 1.0,
            eta_logit: -12.0,
            gamma_position: (0.4, 0.6),
            feedback_logit_std: 1.0,
        }
    }
}

/// Initial logits: zero EQ gains, LP at 17.5 kHz and HP at 200 Hz, CR = 2, ER = 1/2,
/// CT = -18 dB, ET = -48 dB, 0 dB make-up, 400 ms delay with feedback and gain 0.1,
/// B = 1, C = 0, randomised attenuation and feedback matrix, send 0.01.
pub fn initial_logits(bounds: &BoundsConfig, seed: u64) -> Result<Vec<f64>> {
    initial_logits_with(bounds, seed, &InitOptions::default())
}

pub fn initial_logits_with(bounds: &BoundsConfig, seed: u64, opts: &InitOptions) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = decode(&vec![0.0; NUM_LOGITS], bounds)?;

    for f in [&mut p.peq.pk1, &mut p.peq.pk2, &mut p.peq.low_shelf, &mut p.peq.high_shelf] {
        f.gain_db = 0.0;
    }
    p.peq.low_pass.freq = 17500.0;
    p.peq.low_pass.q = 0.707;
    p.peq.high_pass.freq = 200.0;
    p.peq.high_pass.q = 0.707;

    let d = &mut p.dynamics;
    d.comp_threshold = -18.0;
    d.exp_threshold = -48.0;
    d.comp_ratio = 2.0;
    d.exp_ratio = 0.5;
    d.attack = opts.attack;
    d.release = opts.release;
    d.rms_smoothing = opts.rms_smoothing;
    d.makeup_db = 0.0;
    d.lookahead = opts.lookahead;

    p.delay.delay = 0.4 * bounds.sample_rate;
    p.delay.feedback = 0.1;
    p.delay.gain = 0.1;
    p.delay.log_eta = -1.0;

    p.fdn.b = [[1.0; 2]; FDN_LINES];
    p.fdn.c = [[0.0; FDN_LINES]; 2];
    p.send = 0.01;
    p.pan = 0.5;

    let mut t = encode(&p, bounds)?;
    t[DELAY_LOG_ETA] = opts.eta_logit;
    for i in FDN_U..FDN_GAMMA {
        t[i] = if is_dead_u_logit(i) {
            0.0
        } else {
            opts.feedback_logit_std * rng.sample::<f64, _>(StandardNormal)
        };
    }
    let (lo, hi) = opts.gamma_position;
    for k in 0..GAMMA_POINTS {
        let pos: f64 = rng.gen_range(lo..hi);
        t[FDN_GAMMA + k] = (pos / (1.0 - pos)).ln();
    }
    Ok(t)
}
