//! Inclusive associative scan over affine maps, split into fixed-size blocks so that the
//! result does not depend on how many workers run it.

use num_complex::Complex;
use std::ops::{Add, Mul};

use num_traits::{Float, One, Zero};
use rayon::prelude::*;

/// Block length of the parallel scan. Fixed, so the reduction order is identical for any
/// worker count.
pub const SCAN_BLOCK: usize = 4096;

/// An element of an associative scan.
pub trait ScanElem: Copy + Send + Sync {
    /// `self` applied first, then `later`.
    fn then(self, later: Self) -> Self;
}

/// Scalar affine map `s -> m s + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T> {
    pub m: T,
    pub b: T,
}

impl<T: Float + Send + Sync> ScanElem for Affine<T> {
    #[inline]
    fn then(self, later: Self) -> Self {
        Affine {
            m: later.m * self.m,
            b: later.m * self.b + later.b,
        }
    }
}

/// Complex affine map `s -> m s + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexAffine<T> {
    pub m: Complex<T>,
    pub b: Complex<T>,
}

impl<T: Float + Send + Sync> ScanElem for ComplexAffine<T> {
    #[inline]
    fn then(self, later: Self) -> Self {
        ComplexAffine {
            m: later.m * self.m,
            b: later.m * self.b + later.b,
        }
    }
}

/// Two-dimensional affine map `s -> M s + v`, the general (U, v) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixAffine<T> {
    pub m: [[T; 2]; 2],
    pub v: [T; 2],
}

impl<T: Float + Send + Sync> ScanElem for MatrixAffine<T> {
    #[inline]
    fn then(self, later: Self) -> Self {
        let (a, b) = (later.m, self.m);
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let v = [
            a[0][0] * self.v[0] + a[0][1] * self.v[1] + later.v[0],
            a[1][0] * self.v[0] + a[1][1] * self.v[1] + later.v[1],
        ];
        MatrixAffine { m, v }
    }
}

/// Replaces every element with the composition of all elements up to and including it.
pub fn inclusive_scan<E: ScanElem>(xs: &mut [E]) {
    if xs.len() <= SCAN_BLOCK {
        sequential_scan(xs);
        return;
    }
    xs.par_chunks_mut(SCAN_BLOCK).for_each(sequential_scan);
    let blocks = xs.len().div_ceil(SCAN_BLOCK);
    let mut carries = Vec::with_capacity(blocks);
    let mut acc = xs[SCAN_BLOCK - 1];
    carries.push(acc);
    for k in 1..blocks - 1 {
        acc = acc.then(xs[(k + 1) * SCAN_BLOCK - 1]);
        carries.push(acc);
    }
    xs.par_chunks_mut(SCAN_BLOCK)
        .skip(1)
        .zip(carries.par_iter())
        .for_each(|(chunk, &carry)| {
            for e in chunk.iter_mut() {
                *e = carry.then(*e);
            }
        });
}

fn sequential_scan<E: ScanElem>(xs: &mut [E]) {
    for i in 1..xs.len() {
        xs[i] = xs[i - 1].then(xs[i]);
    }
}

/// In-place constant-coefficient one-pole `s[n] = m s[n-1] + s[n]` from zero state. Blocks
/// run the recursion from zero, the block-end states are chained serially, then every block
/// adds `m^(i+1)` times its incoming state. Same fixed blocks as [`inclusive_scan`].
pub fn one_pole_in_place<S>(m: S, s: &mut [S])
where
    S: Copy + Send + Sync + Zero + One + Mul<Output = S> + Add<Output = S>,
{
    let run = |c: &mut [S]| {
        let mut acc = S::zero();
        for v in c.iter_mut() {
            acc = m * acc + *v;
            *v = acc;
        }
    };
    if s.len() <= SCAN_BLOCK {
        run(s);
        return;
    }
    s.par_chunks_mut(SCAN_BLOCK).for_each(run);
    let mut m_block = S::one();
    for _ in 0..SCAN_BLOCK {
        m_block = m_block * m;
    }
    let blocks = s.len().div_ceil(SCAN_BLOCK);
    let mut carries = Vec::with_capacity(blocks - 1);
    let mut acc = s[SCAN_BLOCK - 1];
    carries.push(acc);
    for k in 1..blocks - 1 {
        acc = s[(k + 1) * SCAN_BLOCK - 1] + m_block * acc;
        carries.push(acc);
    }
    s.par_chunks_mut(SCAN_BLOCK)
        .skip(1)
        .zip(carries.par_iter())
        .for_each(|(chunk, &carry)| {
            let mut p = m;
            for v in chunk.iter_mut() {
                *v = *v + p * carry;
                p = p * m;
            }
        });
}

/// `s[n] = m s[n-1] + u[n]` from `s[-1] = 0`.
pub fn one_pole<T: Float + Send + Sync>(m: T, u: &[T]) -> Vec<T> {
    let mut s = u.to_vec();
    one_pole_in_place(m, &mut s);
    s
}

/// `s[n] = m[n] s[n-1] + u[n]` from `s[-1] = s0`.
pub fn one_pole_varying<T: Float + Send + Sync>(m: &[T], u: &[T], s0: T) -> Vec<T> {
    assert_eq!(m.len(), u.len());
    let mut e: Vec<Affine<T>> = m.iter().zip(u).map(|(&m, &b)| Affine { m, b }).collect();
    if let Some(first) = e.first_mut() {
        first.b = first.m * s0 + first.b;
        first.m = T::zero();
    }
    inclusive_scan(&mut e);
    e.into_iter().map(|a| a.b).collect()
}

/// Complex one-pole `s[n] = m s[n-1] + u[n]` from `s[-1] = 0`.
pub fn one_pole_complex<T: Float + Send + Sync>(m: Complex<T>, u: &[Complex<T>]) -> Vec<Complex<T>> {
    let mut s = u.to_vec();
    one_pole_in_place(m, &mut s);
    s
}
