//! Loss-to-logits gradients over batches of segments, and a central-difference checker.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{add_params, impulse_responses, ir_vjp, render_vjp_with, render_with, ChainConfig, IrGrads};
use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossBreakdown, LossTarget, LossWeights};
use crate::params::{decode, decode_vjp, decode_with_tape, BoundsConfig, EffectParams, NUM_LOGITS};

/// One training excerpt: the dry input is rendered in full, the loss only sees samples from
/// `loss_start` on (the earlier samples warm up the recursive blocks). The loss-side target
/// features are large (about 120 MB for a 7 s region), so by default they are rebuilt whenever
/// the segment is evaluated; [`Segment::cache_target`] keeps them instead.
#[derive(Clone, Debug)]
pub struct Segment {
    pub input: Vec<f64>,
    pub target: [Vec<f64>; 2],
    pub loss_start: usize,
    pub sample_rate: f64,
    cached: Option<Arc<LossTarget>>,
}

impl Segment {
    /// `target` covers the same span as `input`.
    pub fn new(input: Vec<f64>, target: [&[f64]; 2], loss_start: usize, sample_rate: f64) -> Result<Self> {
        if target[0].len() != input.len() || target[1].len() != input.len() {
            return Err(Error::InvalidArgument(format!(
                "segment target length {} does not match input length {}",
                target[0].len(),
                input.len()
            )));
        }
        if loss_start >= input.len() {
            return Err(Error::InvalidArgument(format!(
                "loss region starts at {loss_start} but the segment has {} samples",
                input.len()
            )));
        }
        Ok(Self {
            input,
            target: [target[0].to_vec(), target[1].to_vec()],
            loss_start,
            sample_rate,
            cached: None,
        })
    }

    /// Builds the loss target once and keeps it for later evaluations.
    pub fn cache_target(&mut self) -> Result<()> {
        if self.cached.is_none() {
            self.cached = Some(Arc::new(self.build_target()?));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn loss_target(&self) -> Result<Arc<LossTarget>> {
        match &self.cached {
            Some(t) => Ok(t.clone()),
            None => self.build_target().map(Arc::new),
        }
    }

    fn build_target(&self) -> Result<LossTarget> {
        let k = self.loss_start;
        LossTarget::new([&self.target[0][k..], &self.target[1][k..]], self.sample_rate)
    }
}

/// Everything the objective depends on besides the logits.
#[derive(Clone, Debug)]
pub struct Objective {
    pub bounds: BoundsConfig,
    pub chain: ChainConfig,
    pub weights: LossWeights,
}

impl Objective {
    pub fn new(bounds: BoundsConfig, chain: ChainConfig) -> Result<Self> {
        chain.check_bounds(&bounds)?;
        Ok(Self {
            bounds,
            chain,
            weights: LossWeights::default(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ValueAndGrad {
    /// Mean total loss over the batch.
    pub loss: f64,
    /// Batch-mean loss terms.
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let mut m = LossBreakdown::default();
    for b in parts {
        m.mrs_lr += b.mrs_lr / n;
        m.mrs_ms += b.mrs_ms / n;
        m.mldr_lr += b.mldr_lr / n;
        m.mldr_ms += b.mldr_ms / n;
        m.eta += b.eta / n;
        m.total += b.total / n;
    }
    m
}

fn check_batch(segments: &[Segment]) -> Result<usize> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("empty segment batch".into()));
    }
    Ok(segments.iter().map(Segment::len).max().unwrap_or(0))
}

// Segments run in chunks of the worker count so at most that many render tapes and loss
// targets are alive.
fn chunk_size() -> usize {
    rayon::current_num_threads().max(1)
}

/// Mean batch loss without gradients.
pub fn value(logits: &[f64], segments: &[Segment], obj: &Objective) -> Result<LossBreakdown> {
    let len = check_batch(segments)?;
    let p = decode(logits, &obj.bounds)?;
    let irs = impulse_responses(&p, &obj.chain, len)?;
    let eta = p.delay.eta();
    let mut parts = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(chunk_size()) {
        let r: Vec<LossBreakdown> = chunk
            .par_iter()
            .map(|s| {
                let (y, _) = render_with(&s.input, &p, &obj.chain, &irs)?;
                let k = s.loss_start;
                Ok(total_loss_grad([&y[0][k..], &y[1][k..]], &*s.loss_target()?, eta, &obj.weights)?.breakdown)
            })
            .collect::<Result<_>>()?;
        parts.extend(r);
    }
    Ok(mean_breakdown(&parts))
}

/// Mean batch loss and its gradient with respect to all 152 logits.
pub fn value_and_grad(logits: &[f64], segments: &[Segment], obj: &Objective) -> Result<ValueAndGrad> {
    let len = check_batch(segments)?;
    let (p, tape) = decode_with_tape(logits, &obj.bounds)?;
    let irs = impulse_responses(&p, &obj.chain, len)?;
    let eta = p.delay.eta();

    let mut parts = Vec::with_capacity(segments.len());
    let mut g_params = EffectParams::zeros();
    let mut g_ir = IrGrads::zeros(&irs);
    for chunk in segments.chunks(chunk_size()) {
        let results: Vec<(LossBreakdown, f64, EffectParams, IrGrads)> = chunk
            .par_iter()
            .map(|s| {
                let (y, rt) = render_with(&s.input, &p, &obj.chain, &irs)?;
                let k = s.loss_start;
                let lg = total_loss_grad([&y[0][k..], &y[1][k..]], &*s.loss_target()?, eta, &obj.weights)?;
                let n = s.len();
                let mut gy = [vec![0.0; n], vec![0.0; n]];
                for c in 0..2 {
                    gy[c][k..].copy_from_slice(&lg.grad[c]);
                }
                let (gp, gi) = render_vjp_with(&s.input, &p, &obj.chain, &irs, &rt, [&gy[0], &gy[1]])?;
                Ok((lg.breakdown, lg.grad_eta, gp, gi))
            })
            .collect::<Result<_>>()?;
        // fixed-order reduction keeps the result independent of the worker count
        for (b, ge, gp, gi) in results {
            parts.push(b);
            add_params(&mut g_params, &gp);
            g_params.delay.log_eta += ge * eta;
            g_ir.add(&gi);
        }
    }
    add_params(&mut g_params, &ir_vjp(&p, &obj.chain, &irs, &g_ir)?);

    let inv = 1.0 / segments.len() as f64;
    let grad: Vec<f64> = decode_vjp(&tape, &obj.bounds, &g_params).into_iter().map(|g| g * inv).collect();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Stage("gradient"));
    }
    let breakdown = mean_breakdown(&parts);
    Ok(ValueAndGrad {
        loss: breakdown.total,
        breakdown,
        grad,
    })
}

/// Analytic gradient against central differences on chosen coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    pub rel_err: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err.iter().all(|e| *e <= tol)
    }

    /// One row per coordinate; `names` labels coordinates when given.
    pub fn to_csv(&self, names: Option<&dyn Fn(usize) -> String>) -> String {
        let mut s = String::from("index,name,analytic,finite_difference,rel_err,h\n");
        for (k, &i) in self.coords.iter().enumerate() {
            let name = names.map(|f| f(i)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{i},{name},{:e},{:e},{:e},{:e}",
                self.analytic[k], self.fd[k], self.rel_err[k], self.h
            );
        }
        s
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for each `i` in `coords`,
/// compared with `analytic[i]`.
pub fn finite_difference_check<F>(f: F, point: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::Layout {
            expected: point.len(),
            actual: analytic.len(),
        });
    }
    if let Some(&i) = coords.iter().find(|&&i| i >= point.len()) {
        return Err(Error::InvalidArgument(format!("coordinate {i} out of range")));
    }
    let eval = |x: &[f64]| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite-difference evaluation".into()))
        }
    };
    let fd: Vec<f64> = coords
        .par_iter()
        .map(|&i| {
            let mut x = point.to_vec();
            x[i] = point[i] + h;
            let fp = eval(&x)?;
            x[i] = point[i] - h;
            let fm = eval(&x)?;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let a: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
    let rel_err = a.iter().zip(&fd).map(|(x, y)| relative_error(*x, *y)).collect();
    Ok(GradCheckReport {
        h,
        coords: coords.to_vec(),
        analytic: a,
        fd,
        rel_err,
    })
}

/// Checks `value_and_grad` on `coords` of `logits`.
pub fn check_logit_gradient(logits: &[f64], segments: &[Segment], obj: &Objective, coords: &[usize], h: f64) -> Result<GradCheckReport> {
    if logits.len() != NUM_LOGITS {
        return Err(Error::Layout {
            expected: NUM_LOGITS,
            actual: logits.len(),
        });
    }
    let vg = value_and_grad(logits, segments, obj)?;
    finite_difference_check(|t| value(t, segments, obj).map(|b| b.total), logits, &vg.grad, coords, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::tests::{noise, random_logits, small_config};
    use crate::chain::render_params;
    use crate::params::layout::{self, is_dead_u_logit};
    use crate::params::initial_logits;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_and_constant() {
        let r = finite_difference_check(|x| Ok(x[0] * x[0]), &[3.0], &[6.0], &[0], 1e-6).unwrap();
        assert!((r.fd[0] - 6.0).abs() < 1e-6);
        assert!(r.passes(1e-9));
        let r = finite_difference_check(|_| Ok(2.5), &[3.0, 1.0], &[0.0, 0.0], &[0, 1], 1e-6).unwrap();
        assert_eq!(r.fd, vec![0.0, 0.0]);
        assert_eq!(r.max_rel_err(), 0.0);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let r = finite_difference_check(|x| Ok(1.0 / (x[0] - 1e-7)), &[0.0], &[0.0], &[0], 1e-7);
        assert!(r.is_err());
        let r = finite_difference_check(|x| Ok(x[0]), &[0.0], &[0.0], &[3], 1e-6);
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_has_one_row_per_coordinate() {
        let r = finite_difference_check(|x| Ok(x[0] * x[1]), &[2.0, 3.0], &[3.0, 2.0], &[0, 1], 1e-6).unwrap();
        let csv = r.to_csv(Some(&|i| format!("x{i}")));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,x0,"));
    }

    fn toy(seed: u64, secs: f64) -> (Objective, Vec<f64>) {
        let cfg = small_config();
        let fs = cfg.sample_rate;
        let obj = Objective::new(BoundsConfig::for_sample_rate(fs), cfg).unwrap();
        (obj, noise((secs * fs) as usize, seed, 0.3))
    }

    #[test]
    fn exact_match_has_zero_gradient_and_dead_logits_are_zero() {
        let (obj, x) = toy(1, 0.25);
        let mut t = initial_logits(&obj.bounds, 3).unwrap();
        // eta = 1 so the regulariser is flat too
        t[layout::DELAY_LOG_ETA] = -40.0;
        let y = render_params(&x, &decode(&t, &obj.bounds).unwrap(), &obj.chain).unwrap();
        let seg = Segment::new(x.clone(), [&y[0], &y[1]], 2000, obj.chain.sample_rate).unwrap();
        let vg = value_and_grad(&t, &[seg], &obj).unwrap();
        assert!(vg.loss.abs() < 1e-12, "loss {}", vg.loss);
        let norm = vg.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "gradient norm {norm}");

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_logits(&mut rng);
        let target = [noise(x.len(), 7, 0.2), noise(x.len(), 8, 0.2)];
        let seg = Segment::new(x, [&target[0], &target[1]], 0, obj.chain.sample_rate).unwrap();
        let vg = value_and_grad(&t, &[seg], &obj).unwrap();
        for i in 0..NUM_LOGITS {
            if is_dead_u_logit(i) {
                assert_eq!(vg.grad[i], 0.0, "logit {i}");
            }
        }
        assert!(vg.grad.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_segment_gradients() {
        let (obj, x1) = toy(2, 0.2);
        let x2 = noise(x1.len(), 3, 0.5);
        let fs = obj.chain.sample_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_logits(&mut rng);
        let tg = [noise(x1.len(), 10, 0.2), noise(x1.len(), 11, 0.2)];
        let s1 = Segment::new(x1.clone(), [&tg[0], &tg[1]], 500, fs).unwrap();
        let s2 = Segment::new(x2.clone(), [&tg[1], &tg[0]], 500, fs).unwrap();
        let g1 = value_and_grad(&t, std::slice::from_ref(&s1), &obj).unwrap();
        let g2 = value_and_grad(&t, std::slice::from_ref(&s2), &obj).unwrap();
        let gb = value_and_grad(&t, &[s1, s2], &obj).unwrap();
        assert!((gb.loss - 0.5 * (g1.loss + g2.loss)).abs() < 1e-12);
        for i in 0..NUM_LOGITS {
            let m = 0.5 * (g1.grad[i] + g2.grad[i]);
            assert!((gb.grad[i] - m).abs() <= 1e-9 * m.abs() + 1e-11, "logit {i}: {} vs {m}", gb.grad[i]);
        }
        let again = value_and_grad(&t, &[
            Segment::new(x1, [&tg[0], &tg[1]], 500, fs).unwrap(),
            Segment::new(x2, [&tg[1], &tg[0]], 500, fs).unwrap(),
        ], &obj)
        .unwrap();
        assert_eq!(again.grad, gb.grad);
    }

    #[test]
    fn value_matches_value_and_grad() {
        let (obj, x) = toy(5, 0.2);
        let t = initial_logits(&obj.bounds, 0).unwrap();
        let tg = [noise(x.len(), 12, 0.1), noise(x.len(), 13, 0.1)];
        let seg = Segment::new(x, [&tg[0], &tg[1]], 100, obj.chain.sample_rate).unwrap();
        let a = value(&t, std::slice::from_ref(&seg), &obj).unwrap();
        let b = value_and_grad(&t, &[seg], &obj).unwrap();
        assert_eq!(a.total, b.loss);
    }

    #[test]
    fn segment_rejects_bad_regions() {
        let x = vec![0.1; 100];
        assert!(Segment::new(x.clone(), [&x, &x], 100, 44100.0).is_err());
        assert!(Segment::new(x.clone(), [&x[..50], &x], 0, 44100.0).is_err());
    }
}
