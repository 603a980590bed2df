use std::fmt::Write as _;

use crate::biquad::{cascade_response, design, log_grid};
use crate::chain::{peq_response, Routing};
use crate::error::Result;
use crate::fdn::{t60_map, tone_specs, Interpolation};
use crate::params::{decode, BoundsConfig, EffectParams};

use super::pca::{PcaModel, PERTURB_SCALES};

fn db(z: num_complex::Complex64) -> f64 {
    20.0 * z.norm().max(1e-12).log10()
}

fn curves(p: &EffectParams, fs: f64, freqs: &[f64]) -> Result<[Vec<f64>; 3]> {
    let peq = peq_response(&p.peq, fs, &Routing::default(), freqs)?;
    let tone = tone_specs(&p.fdn.tone, fs).iter().map(design).collect::<Result<Vec<_>>>()?;
    let tone = cascade_response(&tone, freqs, fs);
    // t60_map samples 0..=Nyquist uniformly; read it at the nearest bin
    let bins = 4097;
    let t60 = t60_map(&p.fdn.gamma, bins, fs, Interpolation::Pchip);
    let t60 = freqs
        .iter()
        .map(|f| t60[((f / (fs / 2.0)) * (bins - 1) as f64).round().min((bins - 1) as f64) as usize])
        .collect();
    Ok([peq.into_iter().map(db).collect(), tone.into_iter().map(db).collect(), t60])
}

/// Responses of the mean preset and of the first `components` principal-component
/// perturbations at every scale in [`PERTURB_SCALES`], as
/// `component,scale,freq_hz,peq_db,reverb_tone_db,t60_s` rows. The mean preset has component 0.
pub fn perturbation_responses(m: &PcaModel, components: usize, bounds: &BoundsConfig, points: usize) -> Result<String> {
    let fs = bounds.sample_rate;
    let freqs = log_grid(20.0, 20_000.0, points);
    let mut out = String::from("component,scale,freq_hz,peq_db,reverb_tone_db,t60_s\n");
    let mut emit = |c: usize, s: f64, logits: &[f64]| -> Result<()> {
        let [a, b, t] = curves(&decode(logits, bounds)?, fs, &freqs)?;
        for k in 0..freqs.len() {
            let _ = writeln!(out, "{c},{s},{},{},{},{}", freqs[k], a[k], b[k], t[k]);
        }
        Ok(())
    };
    emit(0, 0.0, &m.perturb_logits(0, 0.0)?)?;
    for i in 0..components.min(m.rank()) {
        for s in PERTURB_SCALES {
            emit(i + 1, s, &m.perturb_logits(i, s)?)?;
        }
    }
    Ok(out)
}
