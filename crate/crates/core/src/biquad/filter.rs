//! Time-domain evaluation of a biquad: the sequential Direct Form II recursion and the
//! scan-based paths (complex one-pole, two real one-poles, general 2x2), plus the VJP.

use num_complex::Complex;
use num_traits::Float;

use super::design::BiquadCoeffs;
use super::scan::{inclusive_scan, one_pole, one_pole_in_place, MatrixAffine};
use crate::error::{Error, Result};

/// Relative pole separation below which poles count as repeated.
pub const TIE_BREAK: f64 = 1e-6;

/// Largest admissible pole modulus.
pub const MAX_POLE_MODULUS: f64 = 1.0 - 1e-9;

/// Roots of `z^2 + a1 z + a2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Poles {
    /// `a1 = a2 = 0`: no recursion at all.
    Fir,
    /// Complex-conjugate pair; the pole with positive imaginary part.
    Complex(Complex<f64>),
    /// Distinct real poles.
    Real(f64, f64),
    /// (Nearly) repeated real poles, with the pair as computed.
    Repeated(f64, f64),
}

impl Poles {
    pub fn max_modulus(&self) -> f64 {
        match *self {
            Poles::Fir => 0.0,
            Poles::Complex(l) => l.norm(),
            Poles::Real(a, b) | Poles::Repeated(a, b) => a.abs().max(b.abs()),
        }
    }
}

fn near(l1: f64, l2: f64) -> bool {
    (l1 - l2).abs() < TIE_BREAK * l1.abs().max(1.0)
}

/// Classifies the poles. Fails if a pole lies on or outside `|z| = 1 - 1e-9`.
pub fn poles(c: &BiquadCoeffs) -> Result<Poles> {
    if c.a1 == 0.0 && c.a2 == 0.0 {
        return Ok(Poles::Fir);
    }
    let disc = c.a1 * c.a1 - 4.0 * c.a2;
    let p = if disc < 0.0 {
        let l = Complex::new(-0.5 * c.a1, 0.5 * (-disc).sqrt());
        if near(l.im, -l.im) {
            Poles::Repeated(l.re, l.re)
        } else {
            Poles::Complex(l)
        }
    } else {
        // numerically stable quadratic roots
        let s = disc.sqrt();
        let sign = if c.a1 >= 0.0 { 1.0 } else { -1.0 };
        let q = -0.5 * (c.a1 + sign * s);
        let l1 = q;
        let l2 = if q != 0.0 { c.a2 / q } else { 0.0 };
        if near(l1, l2) {
            Poles::Repeated(l1, l2)
        } else {
            Poles::Real(l1, l2)
        }
    };
    let m = p.max_modulus();
    if m >= MAX_POLE_MODULUS || !m.is_finite() {
        return Err(Error::Unstable(m));
    }
    Ok(p)
}

/// Tie-break for the decoupled path: moves `l2` away from `l1` by `1e-6`.
pub fn separate_poles(l1: f64, l2: f64) -> (f64, f64) {
    if near(l1, l2) {
        (l1, l1 - TIE_BREAK * l1.abs().max(1.0))
    } else {
        (l1, l2)
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("float conversion")
}

/// Direct Form II: `w[n] = x[n] - a1 w[n-1] - a2 w[n-2]`,
/// `y[n] = b0 w[n] + b1 w[n-1] + b2 w[n-2]`. `state` is `[w[-1], w[-2]]`; returns the output
/// and the final state.
pub fn filter_sequential<T: Float>(x: &[T], c: &BiquadCoeffs, state: [T; 2]) -> (Vec<T>, [T; 2]) {
    let (b0, b1, b2, a1, a2) = (cast::<T>(c.b0), cast::<T>(c.b1), cast::<T>(c.b2), cast::<T>(c.a1), cast::<T>(c.a2));
    let [mut w1, mut w2] = state;
    let y = x
        .iter()
        .map(|&xn| {
            let w = xn - a1 * w1 - a2 * w2;
            let y = b0 * w + b1 * w1 + b2 * w2;
            w2 = w1;
            w1 = w;
            y
        })
        .collect();
    (y, [w1, w2])
}

/// All-pole part `w[n] = x[n] - a1 w[n-1] - a2 w[n-2]` by plain recursion.
pub fn all_pole_sequential<T: Float>(x: &[T], a1: f64, a2: f64) -> Vec<T> {
    let (a1, a2) = (cast::<T>(a1), cast::<T>(a2));
    let (mut w1, mut w2) = (T::zero(), T::zero());
    x.iter()
        .map(|&xn| {
            let w = xn - a1 * w1 - a2 * w2;
            w2 = w1;
            w1 = w;
            w
        })
        .collect()
}

/// States `x_bar[n]`, `n = 0..=N`, of `x_bar[n+1] = l x_bar[n] - i x[n]` from `x_bar[0] = 0`.
pub fn filter_complex_pole<T: Float + Send + Sync>(x: &[T], l: Complex<T>) -> Vec<Complex<T>> {
    let mut s = Vec::with_capacity(x.len() + 1);
    s.push(Complex::new(T::zero(), T::zero()));
    s.extend(x.iter().map(|&v| Complex::new(T::zero(), -v)));
    one_pole_in_place(l, &mut s[1..]);
    s
}

/// Real states `[w[n-1], w[n-2]]` for `n = 0..=N` recovered from complex one-pole states.
pub fn complex_states_to_real<T: Float>(s: &[Complex<T>], l: Complex<T>) -> Vec<[T; 2]> {
    let inv = T::one() / l.im;
    s.iter().map(|&v| [(l * v).re * inv, v.re * inv]).collect()
}

/// States `[w[n-1], w[n-2]]`, `n = 0..=N`, through two decoupled one-pole scans with eigenvalues
/// `l1`, `l2`. Fails when the poles are within the tie-break distance.
pub fn filter_real_poles<T: Float + Send + Sync>(x: &[T], l1: f64, l2: f64) -> Result<Vec<[T; 2]>> {
    if near(l1, l2) {
        return Err(Error::RepeatedPoles(l1, l2));
    }
    let k = cast::<T>(1.0 / (l1 - l2));
    let u: Vec<T> = x.iter().map(|&v| v * k).collect();
    let p = one_pole(cast::<T>(l1), &u);
    let q = one_pole(cast::<T>(l2), &u);
    let (tl1, tl2) = (cast::<T>(l1), cast::<T>(l2));
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push([T::zero(), T::zero()]);
    // partial fractions: w[n] = l1 p[n] - l2 q[n], w[n-1] = p[n] - q[n]
    for (&pn, &qn) in p.iter().zip(&q) {
        out.push([tl1 * pn - tl2 * qn, pn - qn]);
    }
    Ok(out)
}

/// States `[w[n-1], w[n-2]]`, `n = 0..=N`, with the general 2x2 affine scan.
pub fn filter_matrix_scan<T: Float + Send + Sync>(x: &[T], c: &BiquadCoeffs) -> Vec<[T; 2]> {
    let a = c.transition();
    let m = [[cast::<T>(a[0][0]), cast(a[0][1])], [cast(a[1][0]), cast(a[1][1])]];
    let mut e: Vec<MatrixAffine<T>> = x.iter().map(|&v| MatrixAffine { m, v: [v, T::zero()] }).collect();
    inclusive_scan(&mut e);
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push([T::zero(), T::zero()]);
    out.extend(e.into_iter().map(|s| s.v));
    out
}

/// States `[w[n-1], w[n-2]]`, `n = 0..=N`, from zero initial state, by the scan path matching
/// the pole configuration. Near-repeated poles use the general 2x2 scan, which needs no
/// eigen-decomposition.
pub fn scan_states<T: Float + Send + Sync>(x: &[T], c: &BiquadCoeffs) -> Result<Vec<[T; 2]>> {
    Ok(match poles(c)? {
        Poles::Fir => {
            let mut out = Vec::with_capacity(x.len() + 1);
            out.push([T::zero(), T::zero()]);
            let mut prev = T::zero();
            for &v in x {
                out.push([v, prev]);
                prev = v;
            }
            out
        }
        Poles::Complex(l) => {
            let l = Complex::new(cast::<T>(l.re), cast::<T>(l.im));
            complex_states_to_real(&filter_complex_pole(x, l), l)
        }
        Poles::Real(l1, l2) => filter_real_poles(x, l1, l2)?,
        Poles::Repeated(..) => filter_matrix_scan(x, c),
    })
}

/// All-pole signal `w[n]` by the scan path.
pub fn all_pole_scan<T: Float + Send + Sync>(x: &[T], c: &BiquadCoeffs) -> Result<Vec<T>> {
    Ok(match poles(c)? {
        Poles::Fir => x.to_vec(),
        Poles::Complex(l) => {
            let l = Complex::new(cast::<T>(l.re), cast::<T>(l.im));
            let mut s: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(T::zero(), -v)).collect();
            one_pole_in_place(l, &mut s);
            let inv = T::one() / l.im;
            s.into_iter().map(|v| (l * v).re * inv).collect()
        }
        Poles::Real(l1, l2) => {
            if near(l1, l2) {
                return Err(Error::RepeatedPoles(l1, l2));
            }
            let k = cast::<T>(1.0 / (l1 - l2));
            let (tl1, tl2) = (cast::<T>(l1), cast::<T>(l2));
            let mut p: Vec<T> = x.iter().map(|&v| v * k).collect();
            let mut q = p.clone();
            one_pole_in_place(tl1, &mut p);
            one_pole_in_place(tl2, &mut q);
            p.iter().zip(&q).map(|(&pn, &qn)| tl1 * pn - tl2 * qn).collect()
        }
        Poles::Repeated(..) => {
            let s = filter_matrix_scan(x, c);
            s[1..].iter().map(|v| v[0]).collect()
        }
    })
}

fn fir_part<T: Float>(w: &[T], c: &BiquadCoeffs) -> Vec<T> {
    let (b0, b1, b2) = (cast::<T>(c.b0), cast::<T>(c.b1), cast::<T>(c.b2));
    (0..w.len())
        .map(|n| {
            let w1 = if n >= 1 { w[n - 1] } else { T::zero() };
            let w2 = if n >= 2 { w[n - 2] } else { T::zero() };
            b0 * w[n] + b1 * w1 + b2 * w2
        })
        .collect()
}

/// Filters `x` from zero state with the scan path.
pub fn filter<T: Float + Send + Sync>(x: &[T], c: &BiquadCoeffs) -> Result<Vec<T>> {
    Ok(fir_part(&all_pole_scan(x, c)?, c))
}

/// Output together with the all-pole signal needed by [`filter_vjp`].
pub fn filter_forward(x: &[f64], c: &BiquadCoeffs) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = all_pole_scan(x, c)?;
    Ok((fir_part(&w, c), w))
}

/// Gradients of the input and of `(b0, b1, b2, a1, a2)` given the upstream gradient `gy` and the
/// all-pole signal `w` from the forward pass.
pub fn filter_vjp(w: &[f64], c: &BiquadCoeffs, gy: &[f64]) -> Result<(Vec<f64>, BiquadCoeffs)> {
    let n = w.len();
    assert_eq!(gy.len(), n, "gradient length");
    let at = |v: &[f64], i: isize| if i >= 0 && (i as usize) < v.len() { v[i as usize] } else { 0.0 };
    let mut gw = vec![0.0; n];
    let (mut gb0, mut gb1, mut gb2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let k = i as isize;
        gw[i] = c.b0 * gy[i] + c.b1 * at(gy, k + 1) + c.b2 * at(gy, k + 2);
        gb0 += gy[i] * w[i];
        gb1 += gy[i] * at(w, k - 1);
        gb2 += gy[i] * at(w, k - 2);
    }
    // the adjoint of the all-pole recursion is the same recursion run backwards in time
    gw.reverse();
    let mut u = all_pole_scan(&gw, &BiquadCoeffs { b0: 1.0, b1: 0.0, b2: 0.0, ..*c })?;
    u.reverse();
    let (mut ga1, mut ga2) = (0.0, 0.0);
    for i in 0..n {
        let k = i as isize;
        ga1 -= u[i] * at(w, k - 1);
        ga2 -= u[i] * at(w, k - 2);
    }
    Ok((
        u,
        BiquadCoeffs {
            b0: gb0,
            b1: gb1,
            b2: gb2,
            a1: ga1,
            a2: ga2,
        },
    ))
}
