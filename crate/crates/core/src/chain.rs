//! The fixed effect graph: PEQ, compressor/expander, then a panned dry path mixed with a
//! ping-pong delay and an FDN reverb that also receives the delay output through a send.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biquad::{
    cascade_response, design_vjp, design_with_jacobian, filter_forward, filter_vjp, BiquadCoeffs, DesignJacobian,
    FilterKind, FilterSpec,
};
use crate::delay::{delay_ir, delay_ir_vjp, pan_gains, pan_gains_deriv, DelayConfig, DelayIr};
use crate::dynamics::{compexp_forward, compexp_vjp, DynamicsTape};
use crate::error::{Error, Result};
use crate::fdn::{fdn_ir_forward, fdn_ir_vjp, FdnConfig, FdnIr, FdnIrTape};
use crate::fft::{irfft, next_fast_len, rfft};
use crate::params::{decode, BoundsConfig, EffectParams, FilterParams, PeqParams};

/// Which blocks of the graph are active. Disabled wet blocks contribute silence; disabled
/// PEQ or dynamics pass their input through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub peq: bool,
    /// Low- and high-pass stages of the PEQ.
    pub pass_filters: bool,
    pub dynamics: bool,
    pub delay: bool,
    pub fdn: bool,
}

impl Default for Routing {
    fn default() -> Self {
        Self {
            peq: true,
            pass_filters: true,
            dynamics: true,
            delay: true,
            fdn: true,
        }
    }
}

impl Routing {
    /// Named configuration: `full`, `peq_dynamics`, `delay` (no FDN) or `fdn` (no delay).
    pub fn named(name: &str) -> Result<Self> {
        let full = Self::default();
        Ok(match name {
            "full" => full,
            "peq_dynamics" => Self {
                delay: false,
                fdn: false,
                ..full
            },
            "delay" => Self { fdn: false, ..full },
            "fdn" => Self { delay: false, ..full },
            other => return Err(Error::InvalidArgument(format!("unknown routing `{other}`"))),
        })
    }
}

/// Stereo signal feeding the FDN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdnFeed {
    /// Dynamics output on both channels plus the delay send.
    #[default]
    Duplicated,
    /// Panned dry signal plus the delay send.
    PannedDry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub sample_rate: f64,
    pub delay: DelayConfig,
    pub fdn: FdnConfig,
    pub routing: Routing,
    pub fdn_feed: FdnFeed,
    /// Render the delay with `eta = 1`, as done at inference time.
    pub unit_eta: bool,
}

impl ChainConfig {
    /// 4 s delay and 12 s FDN IRs.
    pub fn new(sample_rate: f64) -> Self {
        Self {
            sample_rate,
            delay: DelayConfig::for_sample_rate(sample_rate),
            fdn: FdnConfig::for_sample_rate(sample_rate),
            routing: Routing::default(),
            fdn_feed: FdnFeed::Duplicated,
            unit_eta: false,
        }
    }

    /// Untruncated rendering of a `len`-sample input: IRs cover the whole input and the delay
    /// runs undamped.
    pub fn inference(sample_rate: f64, len: usize) -> Self {
        let base = Self::new(sample_rate);
        Self {
            delay: DelayConfig::new(base.delay.ir_len.max(len)),
            fdn: FdnConfig {
                interpolation: base.fdn.interpolation,
                ..FdnConfig::new(base.fdn.ir_len.max(len))
            },
            unit_eta: true,
            ..base
        }
    }

    pub fn check_bounds(&self, bounds: &BoundsConfig) -> Result<()> {
        if (self.sample_rate - bounds.sample_rate).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "chain runs at {} Hz but bounds `{}` were built for {} Hz",
                self.sample_rate, bounds.id, bounds.sample_rate
            )));
        }
        Ok(())
    }
}

/// PEQ stages in processing order: PK1, PK2, LS, HS, LP, HP.
pub fn peq_specs(p: &PeqParams, sample_rate: f64) -> [FilterSpec; 6] {
    [
        FilterSpec::new(FilterKind::Peak, &p.pk1, sample_rate),
        FilterSpec::new(FilterKind::Peak, &p.pk2, sample_rate),
        FilterSpec::new(FilterKind::LowShelf, &p.low_shelf, sample_rate),
        FilterSpec::new(FilterKind::HighShelf, &p.high_shelf, sample_rate),
        FilterSpec::new(FilterKind::LowPass, &p.low_pass, sample_rate),
        FilterSpec::new(FilterKind::HighPass, &p.high_pass, sample_rate),
    ]
}

fn active_stages(routing: &Routing) -> usize {
    match (routing.peq, routing.pass_filters) {
        (false, _) => 0,
        (true, false) => 4,
        (true, true) => 6,
    }
}

/// Biquad coefficients of the active PEQ stages.
pub fn peq_coeffs(p: &PeqParams, sample_rate: f64, routing: &Routing) -> Result<Vec<BiquadCoeffs>> {
    peq_specs(p, sample_rate)[..active_stages(routing)]
        .iter()
        .map(|s| design_with_jacobian(s).map(|(c, _)| c))
        .collect()
}

/// Complex response of the active PEQ at `freqs` Hz.
pub fn peq_response(p: &PeqParams, sample_rate: f64, routing: &Routing, freqs: &[f64]) -> Result<Vec<num_complex::Complex64>> {
    Ok(cascade_response(&peq_coeffs(p, sample_rate, routing)?, freqs, sample_rate))
}

/// Six-filter PEQ cascade.
pub fn peq(x: &[f64], p: &PeqParams, sample_rate: f64) -> Result<Vec<f64>> {
    let mut v = x.to_vec();
    for s in &peq_specs(p, sample_rate) {
        let (c, _) = design_with_jacobian(s)?;
        v = filter_forward(&v, &c)?.0;
    }
    Ok(v)
}

/// Delay and FDN impulse responses for one parameter set. They do not depend on the input, so
/// one set serves every segment of a batch.
pub struct ImpulseResponses {
    delay: Option<DelayIr>,
    fdn: Option<(FdnIr, FdnIrTape)>,
    spectra: IrSpectra,
}

/// IR spectra at the convolution length of one input length, shared by all segments.
struct IrSpectra {
    input_len: usize,
    fft_len: usize,
    delay: Option<[Vec<Complex64>; 2]>,
    fdn: Option<[[Vec<Complex64>; 2]; 2]>,
}

impl IrSpectra {
    fn new(delay: Option<&DelayIr>, fdn: Option<&FdnIr>, n: usize) -> Self {
        let m = delay.map_or(0, |d| d.left.len()).max(fdn.map_or(0, |f| f.len())).min(n);
        let fft_len = next_fast_len(n + m.max(1) - 1);
        let spec = |h: &[f64]| rfft(&h[..h.len().min(n)], fft_len);
        let (delay, fdn) = rayon::join(
            || delay.map(|d| [spec(&d.left), spec(&d.right)]),
            || fdn.map(|f| std::array::from_fn(|c| std::array::from_fn(|j| spec(&f.h[c][j])))),
        );
        Self {
            input_len: n,
            fft_len,
            delay,
            fdn,
        }
    }
}

impl ImpulseResponses {
    pub fn delay(&self) -> Option<&DelayIr> {
        self.delay.as_ref()
    }

    pub fn fdn(&self) -> Option<&FdnIr> {
        self.fdn.as_ref().map(|(ir, _)| ir)
    }
}

/// Cotangents of the impulse responses, accumulated over segments.
#[derive(Clone, Debug)]
pub struct IrGrads {
    pub delay: [Vec<f64>; 2],
    pub fdn: [[Vec<f64>; 2]; 2],
}

impl IrGrads {
    pub fn zeros(irs: &ImpulseResponses) -> Self {
        let dl = irs.delay.as_ref().map_or(0, |d| d.left.len());
        let fl = irs.fdn.as_ref().map_or(0, |(f, _)| f.len());
        Self {
            delay: [vec![0.0; dl], vec![0.0; dl]],
            fdn: std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; fl])),
        }
    }

    pub fn add(&mut self, other: &IrGrads) {
        let acc = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        for c in 0..2 {
            acc(&mut self.delay[c], &other.delay[c]);
            for j in 0..2 {
                acc(&mut self.fdn[c][j], &other.fdn[c][j]);
            }
        }
    }
}

fn effective(p: &EffectParams, cfg: &ChainConfig) -> EffectParams {
    let mut q = p.clone();
    if cfg.unit_eta {
        q.delay.log_eta = 0.0;
    }
    q
}

/// IRs for inputs of up to `len` samples (longer IR samples would be truncated away anyway).
pub fn impulse_responses(p: &EffectParams, cfg: &ChainConfig, len: usize) -> Result<ImpulseResponses> {
    let p = effective(p, cfg);
    let fs = cfg.sample_rate;
    let (delay, fdn) = rayon::join(
        || -> Result<Option<DelayIr>> {
            if !cfg.routing.delay {
                return Ok(None);
            }
            let mut ir = delay_ir(&p.delay, fs, &cfg.delay)?;
            let m = len.min(ir.left.len());
            for v in [&mut ir.odd, &mut ir.even, &mut ir.left, &mut ir.right] {
                v.truncate(m);
            }
            check_finite("delay", &[&ir.left, &ir.right])?;
            Ok(Some(ir))
        },
        || -> Result<Option<(FdnIr, FdnIrTape)>> {
            if !cfg.routing.fdn {
                return Ok(None);
            }
            let (ir, t) = fdn_ir_forward(&p.fdn, fs, &cfg.fdn, len)?;
            check_finite("fdn", &[&ir.h[0][0], &ir.h[0][1], &ir.h[1][0], &ir.h[1][1]])?;
            Ok(Some((ir, t)))
        },
    );
    let (delay, fdn) = (delay?, fdn?);
    let spectra = IrSpectra::new(delay.as_ref(), fdn.as_ref().map(|(f, _)| f), len);
    Ok(ImpulseResponses { delay, fdn, spectra })
}

/// Intermediate signals kept for [`render_vjp_with`].
pub struct RenderTape {
    peq: Vec<(BiquadCoeffs, DesignJacobian, Vec<f64>)>,
    eq_out: Vec<f64>,
    dynamics: Option<DynamicsTape>,
    dry: Vec<f64>,
    // unscaled delay convolutions
    delay_wet: Option<[Vec<f64>; 2]>,
    // spectra of the dry signal and the FDN feed at the convolution length
    dry_spec: Option<Vec<Complex64>>,
    feed_spec: Option<[Vec<Complex64>; 2]>,
}

fn mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn mul_conj(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).collect()
}

fn add_into(a: &mut [Complex64], b: &[Complex64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn inverse(spec: &[Complex64], fft_len: usize, len: usize) -> Vec<f64> {
    let mut v = irfft(spec, fft_len);
    v.truncate(len);
    v
}

fn check_finite(stage: &'static str, xs: &[&[f64]]) -> Result<()> {
    if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        Err(Error::Stage(stage))
    } else {
        Ok(())
    }
}

/// Renders a mono input to stereo with decoded parameters.
pub fn render_params(x: &[f64], p: &EffectParams, cfg: &ChainConfig) -> Result<[Vec<f64>; 2]> {
    render_forward(x, p, cfg).map(|(y, _)| y)
}

/// Renders a mono input to stereo from a logit vector.
pub fn render(x: &[f64], logits: &[f64], bounds: &BoundsConfig, cfg: &ChainConfig) -> Result<[Vec<f64>; 2]> {
    cfg.check_bounds(bounds)?;
    render_params(x, &decode(logits, bounds)?, cfg)
}

/// Forward pass keeping everything needed by [`render_vjp`].
pub fn render_forward(x: &[f64], p: &EffectParams, cfg: &ChainConfig) -> Result<([Vec<f64>; 2], (ImpulseResponses, RenderTape))> {
    check_finite("input", &[x])?;
    let irs = impulse_responses(p, cfg, x.len())?;
    let (y, tape) = render_with(x, p, cfg, &irs)?;
    Ok((y, (irs, tape)))
}

/// Forward pass with precomputed IRs.
pub fn render_with(x: &[f64], p: &EffectParams, cfg: &ChainConfig, irs: &ImpulseResponses) -> Result<([Vec<f64>; 2], RenderTape)> {
    check_finite("input", &[x])?;
    let p = effective(p, cfg);
    let fs = cfg.sample_rate;
    let n = x.len();

    let mut stages = Vec::new();
    let mut v = x.to_vec();
    for s in &peq_specs(&p.peq, fs)[..active_stages(&cfg.routing)] {
        let (c, jac) = design_with_jacobian(s)?;
        let (y, w) = filter_forward(&v, &c)?;
        stages.push((c, jac, w));
        v = y;
    }
    check_finite("peq", &[&v])?;
    let eq_out = v;

    let (dry, dyn_tape) = if cfg.routing.dynamics {
        let (y, t) = compexp_forward(&eq_out, &p.dynamics);
        (y, Some(t))
    } else {
        (eq_out.clone(), None)
    };
    check_finite("dynamics", &[&dry])?;

    let (pl, pr) = pan_gains(p.pan);
    let mut out = [dry.iter().map(|v| pl * v).collect::<Vec<_>>(), dry.iter().map(|v| pr * v).collect()];

    let own;
    let sp = if irs.spectra.input_len == n {
        &irs.spectra
    } else {
        own = IrSpectra::new(irs.delay.as_ref(), irs.fdn.as_ref().map(|(f, _)| f), n);
        &own
    };
    let l = sp.fft_len;
    let dry_spec = (sp.delay.is_some() || sp.fdn.is_some()).then(|| rfft(&dry, l));

    let delay_wet = sp.delay.as_ref().map(|h| {
        let x = dry_spec.as_ref().unwrap();
        let (a, b) = rayon::join(|| inverse(&mul(x, &h[0]), l, n), || inverse(&mul(x, &h[1]), l, n));
        [a, b]
    });

    let mut feed_spec = None;
    if let Some(h) = &sp.fdn {
        let feed_s = match &delay_wet {
            None if cfg.fdn_feed == FdnFeed::Duplicated => {
                let x = dry_spec.clone().unwrap();
                [x.clone(), x]
            }
            _ => {
                let mut feed = match cfg.fdn_feed {
                    FdnFeed::Duplicated => [dry.clone(), dry.clone()],
                    FdnFeed::PannedDry => out.clone(),
                };
                if let Some(wet) = &delay_wet {
                    let k = p.send * p.delay.gain;
                    for c in 0..2 {
                        feed[c].iter_mut().zip(&wet[c]).for_each(|(f, d)| *f += k * d);
                    }
                }
                let (a, b) = rayon::join(|| rfft(&feed[0], l), || rfft(&feed[1], l));
                [a, b]
            }
        };
        let y: Vec<Vec<f64>> = (0..2)
            .into_par_iter()
            .map(|c| {
                let mut acc = mul(&feed_s[0], &h[c][0]);
                add_into(&mut acc, &mul(&feed_s[1], &h[c][1]));
                inverse(&acc, l, n)
            })
            .collect();
        check_finite("fdn", &[&y[0], &y[1]])?;
        for c in 0..2 {
            out[c].iter_mut().zip(&y[c]).for_each(|(o, v)| *o += v);
        }
        feed_spec = Some(feed_s);
    }
    if let Some(wet) = &delay_wet {
        for c in 0..2 {
            out[c].iter_mut().zip(&wet[c]).for_each(|(o, v)| *o += p.delay.gain * v);
        }
    }
    Ok((
        out,
        RenderTape {
            peq: stages,
            eq_out,
            dynamics: dyn_tape,
            dry,
            delay_wet,
            dry_spec,
            feed_spec,
        },
    ))
}

/// Cotangent of the decoded parameters given the cotangent of the stereo output.
pub fn render_vjp(x: &[f64], p: &EffectParams, cfg: &ChainConfig, tape: &(ImpulseResponses, RenderTape), gy: [&[f64]; 2]) -> Result<EffectParams> {
    let (irs, t) = tape;
    let (mut grad, g_ir) = render_vjp_with(x, p, cfg, irs, t, gy)?;
    add_params(&mut grad, &ir_vjp(p, cfg, irs, &g_ir)?);
    Ok(grad)
}

/// Parameter cotangent of everything except the IR shapes, plus the IR cotangents (to be
/// summed over segments and passed to [`ir_vjp`]).
pub fn render_vjp_with(
    x: &[f64],
    p: &EffectParams,
    cfg: &ChainConfig,
    irs: &ImpulseResponses,
    tape: &RenderTape,
    gy: [&[f64]; 2],
) -> Result<(EffectParams, IrGrads)> {
    let p = effective(p, cfg);
    let n = x.len();
    let mut grad = EffectParams::zeros();
    let mut g_ir = IrGrads::zeros(irs);

    let (pl, pr) = pan_gains(p.pan);
    let (dpl, dpr) = pan_gains_deriv(p.pan);
    let mut g_dry: Vec<f64> = (0..n).map(|i| pl * gy[0][i] + pr * gy[1][i]).collect();
    grad.pan = (0..n).map(|i| tape.dry[i] * (dpl * gy[0][i] + dpr * gy[1][i])).sum();

    if let Some(wet) = &tape.delay_wet {
        grad.delay.gain = (0..2).map(|c| gy[c].iter().zip(&wet[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
    }

    let own;
    let sp = if irs.spectra.input_len == n {
        &irs.spectra
    } else {
        own = IrSpectra::new(irs.delay.as_ref(), irs.fdn.as_ref().map(|(f, _)| f), n);
        &own
    };
    let l = sp.fft_len;
    let gy_spec: Option<[Vec<Complex64>; 2]> = (sp.delay.is_some() || sp.fdn.is_some()).then(|| {
        let (a, b) = rayon::join(|| rfft(gy[0], l), || rfft(gy[1], l));
        [a, b]
    });

    let mut g_feed_spec = None;
    if let (Some(h), Some(fspec), Some(gs)) = (&sp.fdn, &tape.feed_spec, &gy_spec) {
        let m = irs.fdn.as_ref().map_or(0, |(f, _)| f.len()).min(n);
        let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let gh: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(c, j)| inverse(&mul_conj(&gs[c], &fspec[j]), l, m))
            .collect();
        for (&(c, j), v) in pairs.iter().zip(gh) {
            g_ir.fdn[c][j][..m].copy_from_slice(&v);
        }
        let g_feed: Vec<Vec<f64>> = (0..2)
            .into_par_iter()
            .map(|j| {
                let mut acc = mul_conj(&gs[0], &h[0][j]);
                add_into(&mut acc, &mul_conj(&gs[1], &h[1][j]));
                inverse(&acc, l, n)
            })
            .collect();
        match cfg.fdn_feed {
            FdnFeed::Duplicated => {
                for i in 0..n {
                    g_dry[i] += g_feed[0][i] + g_feed[1][i];
                }
            }
            FdnFeed::PannedDry => {
                for i in 0..n {
                    g_dry[i] += pl * g_feed[0][i] + pr * g_feed[1][i];
                }
                grad.pan += (0..n)
                    .map(|i| tape.dry[i] * (dpl * g_feed[0][i] + dpr * g_feed[1][i]))
                    .sum::<f64>();
            }
        }
        if let Some(wet) = &tape.delay_wet {
            let k = p.send * p.delay.gain;
            for c in 0..2 {
                let dot: f64 = wet[c].iter().zip(&g_feed[c]).map(|(a, b)| a * b).sum();
                grad.send += p.delay.gain * dot;
                grad.delay.gain += p.send * dot;
            }
            let (a, b) = rayon::join(|| rfft(&g_feed[0], l), || rfft(&g_feed[1], l));
            g_feed_spec = Some((k, [a, b]));
        }
    }

    if let (Some(h), Some(x), Some(gs)) = (&sp.delay, &tape.dry_spec, &gy_spec) {
        let m = irs.delay.as_ref().map_or(0, |d| d.left.len()).min(n);
        // spectrum of the cotangent of the unscaled delay convolutions
        let gw: Vec<Vec<Complex64>> = (0..2)
            .map(|c| {
                let mut v: Vec<Complex64> = gs[c].iter().map(|z| z * p.delay.gain).collect();
                if let Some((k, gf)) = &g_feed_spec {
                    v.iter_mut().zip(&gf[c]).for_each(|(a, b)| *a += b * k);
                }
                v
            })
            .collect();
        let ((hl, hr), gx) = rayon::join(
            || rayon::join(|| inverse(&mul_conj(&gw[0], x), l, m), || inverse(&mul_conj(&gw[1], x), l, m)),
            || {
                let mut acc = mul_conj(&gw[0], &h[0]);
                add_into(&mut acc, &mul_conj(&gw[1], &h[1]));
                inverse(&acc, l, n)
            },
        );
        g_dry.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
        g_ir.delay[0][..m].copy_from_slice(&hl);
        g_ir.delay[1][..m].copy_from_slice(&hr);
    }

    let mut g = match &tape.dynamics {
        Some(t) => {
            let (ge, gp) = compexp_vjp(&tape.eq_out, &p.dynamics, t, &g_dry);
            grad.dynamics = gp;
            ge
        }
        None => g_dry,
    };

    let mut filter_grads = [FilterParams::default(); 6];
    for (k, (c, jac, w)) in tape.peq.iter().enumerate().rev() {
        let (gx, gc) = filter_vjp(w, c, &g)?;
        filter_grads[k] = design_vjp(jac, &gc);
        g = gx;
    }
    let [pk1, pk2, ls, hs, lp, hp] = filter_grads;
    grad.peq = PeqParams {
        pk1,
        pk2,
        low_shelf: ls,
        high_shelf: hs,
        low_pass: lp,
        high_pass: hp,
    };
    Ok((grad, g_ir))
}

/// Parameter cotangent of the IR shapes.
pub fn ir_vjp(p: &EffectParams, cfg: &ChainConfig, irs: &ImpulseResponses, g: &IrGrads) -> Result<EffectParams> {
    let p = effective(p, cfg);
    let mut grad = EffectParams::zeros();
    let (d, f) = rayon::join(
        || irs.delay.as_ref().map(|ir| delay_ir_vjp(&p.delay, cfg.sample_rate, &cfg.delay, ir, &g.delay[0], &g.delay[1])),
        || irs.fdn.as_ref().map(|(_, t)| fdn_ir_vjp(&p.fdn, &cfg.fdn, t, &g.fdn)),
    );
    if let Some(d) = d {
        grad.delay = d?;
        if cfg.unit_eta {
            grad.delay.log_eta = 0.0;
        }
    }
    if let Some(f) = f {
        grad.fdn = f?;
    }
    Ok(grad)
}

fn add_filter(a: &mut FilterParams, b: &FilterParams) {
    a.freq += b.freq;
    a.q += b.q;
    a.gain_db += b.gain_db;
}

/// `a += b` field by field.
pub fn add_params(a: &mut EffectParams, b: &EffectParams) {
    for (x, y) in [
        (&mut a.peq.pk1, &b.peq.pk1),
        (&mut a.peq.pk2, &b.peq.pk2),
        (&mut a.peq.low_shelf, &b.peq.low_shelf),
        (&mut a.peq.high_shelf, &b.peq.high_shelf),
        (&mut a.peq.low_pass, &b.peq.low_pass),
        (&mut a.peq.high_pass, &b.peq.high_pass),
        (&mut a.delay.low_pass, &b.delay.low_pass),
        (&mut a.fdn.tone.pk1, &b.fdn.tone.pk1),
        (&mut a.fdn.tone.pk2, &b.fdn.tone.pk2),
        (&mut a.fdn.tone.low_shelf, &b.fdn.tone.low_shelf),
        (&mut a.fdn.tone.high_shelf, &b.fdn.tone.high_shelf),
    ] {
        add_filter(x, y);
    }
    let (d, e) = (&mut a.dynamics, &b.dynamics);
    for (x, y) in [
        (&mut d.comp_threshold, e.comp_threshold),
        (&mut d.exp_threshold, e.exp_threshold),
        (&mut d.comp_ratio, e.comp_ratio),
        (&mut d.exp_ratio, e.exp_ratio),
        (&mut d.attack, e.attack),
        (&mut d.release, e.release),
        (&mut d.rms_smoothing, e.rms_smoothing),
        (&mut d.makeup_db, e.makeup_db),
        (&mut d.lookahead, e.lookahead),
    ] {
        *x += y;
    }
    let (d, e) = (&mut a.delay, &b.delay);
    for (x, y) in [
        (&mut d.delay, e.delay),
        (&mut d.feedback, e.feedback),
        (&mut d.gain, e.gain),
        (&mut d.pan_odd, e.pan_odd),
        (&mut d.pan_even, e.pan_even),
        (&mut d.log_eta, e.log_eta),
    ] {
        *x += y;
    }
    for i in 0..6 {
        for j in 0..2 {
            a.fdn.b[i][j] += b.fdn.b[i][j];
            a.fdn.c[j][i] += b.fdn.c[j][i];
        }
        for j in 0..6 {
            a.fdn.u[i][j] += b.fdn.u[i][j];
        }
    }
    if a.fdn.gamma.len() < b.fdn.gamma.len() {
        a.fdn.gamma.resize(b.fdn.gamma.len(), 0.0);
    }
    a.fdn.gamma.iter_mut().zip(&b.fdn.gamma).for_each(|(x, y)| *x += y);
    a.pan += b.pan;
    a.send += b.send;
}

/// Renders several mono inputs in parallel.
pub fn render_batch(xs: &[Vec<f64>], p: &EffectParams, cfg: &ChainConfig) -> Result<Vec<[Vec<f64>; 2]>> {
    xs.par_iter().map(|x| render_params(x, p, cfg)).collect()
}
