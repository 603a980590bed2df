//! Feed-forward compressor/expander: RMS detector, static curve, attack/release ballistics,
//! fractional look-ahead by truncated sinc interpolation, and make-up gain.

use std::f64::consts::{LN_10, PI};
use std::fmt::Write;

use crate::biquad::scan::{one_pole, one_pole_varying};
use crate::params::DynamicsParams;

/// Energy floor inside the dB conversion; sets a -120 dB level floor.
pub const LEVEL_EPS: f64 = 1e-12;
/// Interpolation taps before the output sample.
pub const LOOKAHEAD_L1: usize = 32;
/// Interpolation taps after the output sample (the window reaches `L2 + 1`).
pub const LOOKAHEAD_L2: usize = 32;

/// One-pole smoothed energy `e[n] = (1 - a) e[n-1] + a x[n]^2`.
pub fn smoothed_energy(x: &[f64], alpha: f64) -> Vec<f64> {
    let u: Vec<f64> = x.iter().map(|v| alpha * v * v).collect();
    one_pole(1.0 - alpha, &u)
}

/// Detector level in dB, `10 log10(e + 1e-12)`.
pub fn rms_level(x: &[f64], alpha: f64) -> Vec<f64> {
    smoothed_energy(x, alpha)
        .iter()
        .map(|e| 10.0 * (e + LEVEL_EPS).log10())
        .collect()
}

/// Which branch of the static curve is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveRegion {
    Identity,
    Compress,
    Expand,
}

fn curve(level: f64, p: &DynamicsParams) -> (f64, CurveRegion) {
    let comp = (1.0 - 1.0 / p.comp_ratio) * (p.comp_threshold - level);
    let exp = (1.0 - 1.0 / p.exp_ratio) * (p.exp_threshold - level);
    let mut best = (0.0, CurveRegion::Identity);
    if comp < best.0 {
        best = (comp, CurveRegion::Compress);
    }
    if exp < best.0 {
        best = (exp, CurveRegion::Expand);
    }
    best
}

/// Static gain in dB: `min(0, (1 - 1/CR)(CT - L), (1 - 1/ER)(ET - L))`.
pub fn gain_computer(level_db: f64, p: &DynamicsParams) -> f64 {
    curve(level_db, p).0
}

/// `z[n] = (1 - a) z[n-1] + a g[n]` with `a = attack` when `z[n-1] > g[n]` and `a = release`
/// otherwise, from `z[-1] = 1`. Also returns which samples used the attack coefficient.
pub fn ballistics(target: &[f64], attack: f64, release: f64) -> (Vec<f64>, Vec<bool>) {
    let mut z = 1.0;
    let mut attacking = Vec::with_capacity(target.len());
    let out = target
        .iter()
        .map(|&g| {
            let at = z > g;
            let a = if at { attack } else { release };
            attacking.push(at);
            z = (1.0 - a) * z + a * g;
            z
        })
        .collect();
    (out, attacking)
}

/// Normalised sinc `sin(pi t) / (pi t)`.
pub fn sinc(t: f64) -> f64 {
    if t != 0.0 && t == t.round() {
        0.0
    } else if t.abs() < 1e-8 {
        1.0 - (PI * t).powi(2) / 6.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Derivative of [`sinc`].
pub fn sinc_deriv(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        let p2 = PI * PI;
        -p2 * t / 3.0 + p2 * p2 * t.powi(3) / 30.0
    } else {
        let pt = PI * t;
        (pt * pt.cos() - pt.sin()) / (PI * t * t)
    }
}

fn tap_range() -> std::ops::RangeInclusive<isize> {
    -(LOOKAHEAD_L1 as isize)..=(LOOKAHEAD_L2 as isize + 1)
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// `g(n + l) ~ sum_k g[n + k] sinc(k - l)` for `k = -L1 ..= L2 + 1`, with edge replication.
pub fn lookahead(g: &[f64], l: f64) -> Vec<f64> {
    let n = g.len();
    if n == 0 {
        return Vec::new();
    }
    let w: Vec<(isize, f64)> = tap_range().map(|k| (k, sinc(k as f64 - l))).collect();
    (0..n as isize)
        .map(|i| w.iter().map(|&(k, wk)| g[clamp_index(i + k, n)] * wk).sum())
        .collect()
}

/// Adjoint of [`lookahead`]: cotangents of `g` and of `l`.
pub fn lookahead_vjp(g: &[f64], l: f64, upstream: &[f64]) -> (Vec<f64>, f64) {
    let n = g.len();
    let mut gg = vec![0.0; n];
    let mut gl = 0.0;
    if n == 0 {
        return (gg, gl);
    }
    for k in tap_range() {
        let wk = sinc(k as f64 - l);
        let dk = -sinc_deriv(k as f64 - l);
        for (i, &u) in upstream.iter().enumerate() {
            let j = clamp_index(i as isize + k, n);
            gg[j] += u * wk;
            gl += u * g[j] * dk;
        }
    }
    (gg, gl)
}

/// Values kept from [`compexp_forward`] for [`compexp_vjp`].
#[derive(Clone, Debug)]
pub struct DynamicsTape {
    energy: Vec<f64>,
    level: Vec<f64>,
    region: Vec<CurveRegion>,
    target: Vec<f64>,
    smoothed: Vec<f64>,
    attacking: Vec<bool>,
    gain: Vec<f64>,
    makeup: f64,
}

impl DynamicsTape {
    /// Ballistics output (linear gain before look-ahead and make-up).
    pub fn smoothed_gain(&self) -> &[f64] {
        &self.smoothed
    }

    /// Gain after look-ahead, before make-up.
    pub fn gain(&self) -> &[f64] {
        &self.gain
    }
}

/// Full compressor/expander: `y[n] = g(n + l) 10^(makeup/20) x[n]`.
pub fn compexp(x: &[f64], p: &DynamicsParams) -> Vec<f64> {
    compexp_forward(x, p).0
}

pub fn compexp_forward(x: &[f64], p: &DynamicsParams) -> (Vec<f64>, DynamicsTape) {
    let energy = smoothed_energy(x, p.rms_smoothing);
    let level: Vec<f64> = energy.iter().map(|e| 10.0 * (e + LEVEL_EPS).log10()).collect();
    let (target, region): (Vec<f64>, Vec<CurveRegion>) = level
        .iter()
        .map(|&l| {
            let (db, r) = curve(l, p);
            (10f64.powf(db / 20.0), r)
        })
        .unzip();
    let (smoothed, attacking) = ballistics(&target, p.attack, p.release);
    let gain = lookahead(&smoothed, p.lookahead);
    let makeup = 10f64.powf(p.makeup_db / 20.0);
    let y = x.iter().zip(&gain).map(|(v, g)| v * g * makeup).collect();
    (
        y,
        DynamicsTape {
            energy,
            level,
            region,
            target,
            smoothed,
            attacking,
            gain,
            makeup,
        },
    )
}

/// Cotangents of the input and of the nine dynamics parameters.
pub fn compexp_vjp(x: &[f64], p: &DynamicsParams, tape: &DynamicsTape, gy: &[f64]) -> (Vec<f64>, DynamicsParams) {
    let n = x.len();
    let mut grad = DynamicsParams::default();
    let mut gx: Vec<f64> = (0..n).map(|i| gy[i] * tape.gain[i] * tape.makeup).collect();
    let g_gain: Vec<f64> = (0..n).map(|i| gy[i] * x[i] * tape.makeup).collect();
    grad.makeup_db = (0..n).map(|i| gy[i] * x[i] * tape.gain[i] * tape.makeup).sum::<f64>() * LN_10 / 20.0;

    let (g_smooth, gl) = lookahead_vjp(&tape.smoothed, p.lookahead, &g_gain);
    grad.lookahead = gl;

    // ballistics adjoint: lambda[n] = gz[n] + (1 - a[n+1]) lambda[n+1]
    let coef: Vec<f64> = tape
        .attacking
        .iter()
        .map(|&at| if at { p.attack } else { p.release })
        .collect();
    let mut m_rev: Vec<f64> = (0..n).map(|i| if i + 1 < n { 1.0 - coef[i + 1] } else { 0.0 }).collect();
    m_rev.reverse();
    let mut u_rev = g_smooth.clone();
    u_rev.reverse();
    let mut lambda = one_pole_varying(&m_rev, &u_rev, 0.0);
    lambda.reverse();
    let mut g_target = vec![0.0; n];
    for i in 0..n {
        let prev = if i > 0 { tape.smoothed[i - 1] } else { 1.0 };
        g_target[i] = coef[i] * lambda[i];
        let dz_da = tape.target[i] - prev;
        if tape.attacking[i] {
            grad.attack += lambda[i] * dz_da;
        } else {
            grad.release += lambda[i] * dz_da;
        }
    }

    // static curve
    let mut g_level = vec![0.0; n];
    for i in 0..n {
        let g_db = g_target[i] * tape.target[i] * LN_10 / 20.0;
        let l = tape.level[i];
        match tape.region[i] {
            CurveRegion::Identity => {}
            CurveRegion::Compress => {
                let s = 1.0 - 1.0 / p.comp_ratio;
                grad.comp_threshold += g_db * s;
                grad.comp_ratio += g_db * (p.comp_threshold - l) / (p.comp_ratio * p.comp_ratio);
                g_level[i] = -g_db * s;
            }
            CurveRegion::Expand => {
                let s = 1.0 - 1.0 / p.exp_ratio;
                grad.exp_threshold += g_db * s;
                grad.exp_ratio += g_db * (p.exp_threshold - l) / (p.exp_ratio * p.exp_ratio);
                g_level[i] = -g_db * s;
            }
        }
    }

    // detector: e[n] = (1 - a) e[n-1] + a x^2, adjoint mu[n] = ge[n] + (1 - a) mu[n+1]
    let a = p.rms_smoothing;
    let mut ge: Vec<f64> = (0..n)
        .map(|i| g_level[i] * 10.0 / (LN_10 * (tape.energy[i] + LEVEL_EPS)))
        .collect();
    ge.reverse();
    let mut mu = one_pole(1.0 - a, &ge);
    mu.reverse();
    for i in 0..n {
        let prev = if i > 0 { tape.energy[i - 1] } else { 0.0 };
        grad.rms_smoothing += mu[i] * (x[i] * x[i] - prev);
        gx[i] += 2.0 * x[i] * a * mu[i];
    }
    (gx, grad)
}

/// CSV of the static curve, columns `input_db,gain_db,output_db`.
pub fn static_curve_csv(p: &DynamicsParams, lo_db: f64, hi_db: f64, points: usize) -> String {
    let mut out = String::from("input_db,gain_db,output_db\n");
    for i in 0..points {
        let l = lo_db + (hi_db - lo_db) * i as f64 / (points.max(2) - 1) as f64;
        let g = gain_computer(l, p);
        let _ = writeln!(out, "{l:.6},{g:.9},{:.9}", l + g + p.makeup_db);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> DynamicsParams {
        DynamicsParams {
            comp_threshold: -18.0,
            exp_threshold: -48.0,
            comp_ratio: 2.0,
            exp_ratio: 0.5,
            attack: 0.05,
            release: 0.01,
            rms_smoothing: 0.02,
            makeup_db: 1.5,
            lookahead: 2.3,
        }
    }

    fn voice(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let env = 0.6 * (0.5 + 0.5 * (i as f64 * 0.003).sin()).powi(3) + 1e-3;
                env * rng.gen_range(-1.0..1.0)
            })
            .collect()
    }

    #[test]
    fn constant_input_level() {
        let l = rms_level(&vec![0.25; 20_000], 0.01);
        assert!((l.last().unwrap() - 20.0 * 0.25f64.log10()).abs() < 1e-9);
        let z = rms_level(&[0.0; 10], 0.01);
        assert!(z.iter().all(|&v| (v + 120.0).abs() < 1e-12));
    }

    #[test]
    fn level_matches_direct_recursion() {
        let mut x = vec![0.0; 500];
        x[100..].iter_mut().for_each(|v| *v = 0.7);
        let e = smoothed_energy(&x, 0.03);
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc = 0.97 * acc + 0.03 * x[i] * x[i];
            assert!((e[i] - acc).abs() <= 1e-9);
        }
    }

    #[test]
    fn static_curve_examples() {
        let p = params();
        assert_eq!(gain_computer(-30.0, &p), 0.0);
        assert!((gain_computer(-8.0, &p) + 5.0).abs() < 1e-12);
        assert!((gain_computer(-58.0, &p) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn ballistics_behaviour() {
        let (z, _) = ballistics(&vec![0.3; 4000], 0.05, 0.01);
        assert!((z.last().unwrap() - 0.3).abs() < 1e-12);

        let g: Vec<f64> = (0..300).map(|i| if (100..200).contains(&i) { 0.2 } else { 0.9 }).collect();
        let (z, _) = ballistics(&g, 0.1, 0.02);
        let mut acc = 1.0;
        for i in 0..g.len() {
            let a = if acc > g[i] { 0.1 } else { 0.02 };
            acc = (1.0 - a) * acc + a * g[i];
            assert!((z[i] - acc).abs() <= 1e-9);
        }

        let (z, _) = ballistics(&g, 0.04, 0.04);
        let mut u: Vec<f64> = g.iter().map(|v| 0.04 * v).collect();
        u[0] += 0.96;
        let s = one_pole(0.96, &u);
        assert!(z.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn integer_lookahead_is_a_shift() {
        let g: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(lookahead(&g, 0.0), g);
        let s = lookahead(&g, 3.0);
        for i in 0..197 {
            assert!((s[i] - g[i + 3]).abs() < 1e-15);
        }
    }

    #[test]
    fn fractional_lookahead_on_quarter_rate_tone() {
        let w = PI / 2.0;
        let g: Vec<f64> = (0..4000).map(|i| (w * i as f64).cos()).collect();
        let s = lookahead(&g, 0.5);
        let mut err: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for i in 100..3900 {
            let e = (w * (i as f64 + 0.5)).cos();
            err = err.max((s[i] - e).abs());
            peak = peak.max(e.abs());
        }
        assert!(20.0 * (err / peak).log10() <= -60.0);
    }

    #[test]
    fn sinc_derivative_matches_finite_differences() {
        for &t in &[-3.7, -0.5, -1e-5, 0.0, 2e-5, 0.3, 5.2] {
            let h = 1e-6;
            let fd = (sinc(t + h) - sinc(t - h)) / (2.0 * h);
            assert!((fd - sinc_deriv(t)).abs() < 1e-8, "{t}");
        }
    }

    #[test]
    fn defeated_thresholds_leave_only_makeup() {
        let p = DynamicsParams {
            comp_threshold: 60.0,
            exp_threshold: -200.0,
            lookahead: 0.0,
            ..params()
        };
        let x = voice(1, 3000);
        let y = compexp(&x, &p);
        let m = 10f64.powf(p.makeup_db / 20.0);
        assert!(x.iter().zip(&y).all(|(a, b)| (a * m - b).abs() < 1e-12));
    }

    #[test]
    fn identity_region_is_homogeneous() {
        let base = DynamicsParams {
            comp_threshold: 10.0,
            exp_threshold: -150.0,
            ..params()
        };
        let x = voice(2, 2000);
        let c: f64 = 3.0;
        let shift = 20.0 * c.log10();
        let scaled = DynamicsParams {
            comp_threshold: base.comp_threshold + shift,
            exp_threshold: base.exp_threshold + shift,
            ..base
        };
        let y = compexp(&x, &base);
        let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
        let ys = compexp(&xs, &scaled);
        assert!(y.iter().zip(&ys).all(|(a, b)| (c * a - b).abs() < 1e-12));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let p = params();
        let x = voice(3, 4000);
        let loss = |x: &[f64], p: &DynamicsParams| compexp(x, p).iter().map(|v| v * v).sum::<f64>();
        let (y, tape) = compexp_forward(&x, &p);
        let gy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let (gx, gp) = compexp_vjp(&x, &p, &tape, &gy);
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        let fields: [(&str, fn(&mut DynamicsParams) -> &mut f64, f64); 9] = [
            ("ct", |p| &mut p.comp_threshold, gp.comp_threshold),
            ("et", |p| &mut p.exp_threshold, gp.exp_threshold),
            ("cr", |p| &mut p.comp_ratio, gp.comp_ratio),
            ("er", |p| &mut p.exp_ratio, gp.exp_ratio),
            ("attack", |p| &mut p.attack, gp.attack),
            ("release", |p| &mut p.release, gp.release),
            ("rms", |p| &mut p.rms_smoothing, gp.rms_smoothing),
            ("makeup", |p| &mut p.makeup_db, gp.makeup_db),
            ("lookahead", |p| &mut p.lookahead, gp.lookahead),
        ];
        for (name, get, analytic) in fields {
            let mut pp = p;
            *get(&mut pp) += h;
            let mut pm = p;
            *get(&mut pm) -= h;
            let fd = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
            assert!(rel(analytic, fd) <= 1e-3, "{name}: {analytic} vs {fd}");
        }
        for i in [5, 1000, 2500, 3999] {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h);
            assert!(rel(gx[i], fd) <= 1e-3, "x[{i}]: {} vs {fd}", gx[i]);
        }
    }

    #[test]
    fn curve_csv_rows() {
        let csv = static_curve_csv(&params(), -80.0, 0.0, 81);
        assert_eq!(csv.lines().count(), 82);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gain_never_exceeds_unity(
            seed in any::<u64>(),
            ct in -60.0f64..0.0,
            et in -100.0f64..-20.0,
            cr in 1.0f64..20.0,
            er in 0.05f64..1.0,
        ) {
            let p = DynamicsParams { comp_threshold: ct, exp_threshold: et, comp_ratio: cr, exp_ratio: er, ..params() };
            let x = voice(seed, 1500);
            let (_, tape) = compexp_forward(&x, &p);
            prop_assert!(tape.smoothed_gain().iter().all(|&g| g <= 1.0 + 1e-15));
            for l in [-200.0, -40.0, -10.0, 6.0] {
                prop_assert!(gain_computer(l, &p) <= 0.0);
            }
        }
    }
}
