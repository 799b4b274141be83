//! Truncated Fourier series on the torus `T^n = R^n / Z^n`.
//!
//! Functions are stored densely on the frequency box `|k|_inf <= K`. The
//! module provides the constant-coefficient small-divisor solver, Sobolev
//! norms, pseudo-spectral pullback of vector fields by near-identity maps,
//! the Newton (KAM) iteration conjugating a perturbed Diophantine flow back
//! to the linear one, and closed-form Birkhoff averages.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::Serialize;
use thiserror::Error;

use crate::diophantine::{self, DiophantineError};
use crate::fft::fft_nd;

const TAU: f64 = 2.0 * PI;

/// Coefficients below this fraction of the largest one are skipped when
/// evaluating at scattered points.
const EVAL_DROP: f64 = 1e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("nonzero average {0:e}")]
    NonzeroAverage(f64),
    #[error("resonant frequency {0:?}")]
    Resonance(Vec<i64>),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("near-identity map is not invertible: sup|u| = {sup_u:.3e}, sup|Du| = {sup_jacobian:.3e}")]
    NonInvertible { sup_u: f64, sup_jacobian: f64 },
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}): {cause}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        cause: String,
    },
    #[error(transparent)]
    Witness(#[from] DiophantineError),
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A band-limited function on `T^n`, `f(x) = sum_k c_k e^{2 pi i k.x}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusFunction {
    dim: usize,
    trunc: usize,
    coeffs: Vec<Complex64>,
}

impl TorusFunction {
    pub fn zeros(dim: usize, trunc: usize) -> Self {
        let side = 2 * trunc + 1;
        Self {
            dim,
            trunc,
            coeffs: vec![ZERO; side.pow(dim as u32)],
        }
    }

    pub fn constant(dim: usize, trunc: usize, c: Complex64) -> Self {
        let mut f = Self::zeros(dim, trunc);
        f.set_coeff(&vec![0; dim], c);
        f
    }

    /// `c e^{2 pi i k.x}`.
    pub fn single_mode(dim: usize, trunc: usize, k: &[i64], c: Complex64) -> Self {
        let mut f = Self::zeros(dim, trunc);
        f.set_coeff(k, c);
        f
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sup-norm frequency bound `K`.
    pub fn truncation(&self) -> usize {
        self.trunc
    }

    fn side(&self) -> usize {
        2 * self.trunc + 1
    }

    fn flat(&self, k: &[i64]) -> Option<usize> {
        debug_assert_eq!(k.len(), self.dim);
        let t = self.trunc as i64;
        let mut idx = 0usize;
        for &ki in k {
            if ki.abs() > t {
                return None;
            }
            idx = idx * self.side() + (ki + t) as usize;
        }
        Some(idx)
    }

    fn mode_at(&self, mut idx: usize, buf: &mut [i64]) {
        let side = self.side();
        for slot in buf.iter_mut().rev() {
            *slot = (idx % side) as i64 - self.trunc as i64;
            idx /= side;
        }
    }

    /// Coefficient at `k`; zero outside the stored box.
    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.flat(k).map_or(ZERO, |i| self.coeffs[i])
    }

    /// Panics if `k` lies outside the box.
    pub fn set_coeff(&mut self, k: &[i64], c: Complex64) {
        let i = self.flat(k).expect("frequency outside truncation box");
        self.coeffs[i] = c;
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn for_each_mode(&self, mut f: impl FnMut(&[i64], Complex64)) {
        let mut k = vec![0i64; self.dim];
        for (i, &c) in self.coeffs.iter().enumerate() {
            self.mode_at(i, &mut k);
            f(&k, c);
        }
    }

    pub fn map_modes(&self, f: impl Fn(&[i64], Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        let mut k = vec![0i64; self.dim];
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            self.mode_at(i, &mut k);
            *c = f(&k, *c);
        }
        out
    }

    /// Same function on a different box: modes outside are dropped, new
    /// modes are zero.
    pub fn resized(&self, trunc: usize) -> Self {
        if trunc == self.trunc {
            return self.clone();
        }
        let mut out = Self::zeros(self.dim, trunc);
        self.for_each_mode(|k, c| {
            if let Some(i) = out.flat(k) {
                out.coeffs[i] = c;
            }
        });
        out
    }

    pub fn average(&self) -> Complex64 {
        self.coeff(&vec![0; self.dim])
    }

    pub fn zero_average(&self) -> Self {
        let mut out = self.clone();
        out.set_coeff(&vec![0; self.dim], ZERO);
        out
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let t = self.trunc.max(other.trunc);
        let a = self.resized(t);
        let b = other.resized(t);
        Self {
            dim: self.dim,
            trunc: t,
            coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            trunc: self.trunc,
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }

    /// `(sum_k |c_k|^2 (1 + |k|^2)^r)^{1/2}`.
    pub fn sobolev_norm(&self, r: f64) -> f64 {
        let mut s = 0.0;
        self.for_each_mode(|k, c| {
            if c != ZERO {
                let k2: f64 = k.iter().map(|&x| (x * x) as f64).sum();
                s += c.norm_sqr() * (1.0 + k2).powf(r);
            }
        });
        s.sqrt()
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `d/dx_axis`.
    pub fn partial(&self, axis: usize) -> Self {
        self.map_modes(|k, c| c * Complex64::new(0.0, TAU * k[axis] as f64))
    }

    /// `sum_i alpha_i d/dx_i`: multiplies mode `k` by `2 pi i (k . alpha)`.
    pub fn directional_derivative(&self, alpha: &[f64]) -> Self {
        assert_eq!(alpha.len(), self.dim, "dimension mismatch");
        self.map_modes(|k, c| c * Complex64::new(0.0, TAU * dot(k, alpha)))
    }

    /// Samples on the grid `x_j = j / g` (row-major, last axis fastest).
    /// Requires `g > 2K`.
    pub fn to_grid(&self, g: usize) -> Vec<Complex64> {
        assert!(g > 2 * self.trunc, "grid too coarse for the truncation");
        let mut data = vec![ZERO; g.pow(self.dim as u32)];
        self.for_each_mode(|k, c| {
            let mut idx = 0;
            for &ki in k {
                idx = idx * g + ki.rem_euclid(g as i64) as usize;
            }
            data[idx] = c;
        });
        fft_nd(&mut data, self.dim, g, FftDirection::Inverse);
        data
    }

    /// Re-expands grid samples and keeps the modes with `|k|_inf <= trunc`.
    pub fn from_grid(dim: usize, g: usize, values: &[Complex64], trunc: usize) -> Self {
        assert!(g > 2 * trunc, "grid too coarse for the requested truncation");
        let mut data = values.to_vec();
        fft_nd(&mut data, dim, g, FftDirection::Forward);
        let norm = 1.0 / (g.pow(dim as u32) as f64);
        let mut out = Self::zeros(dim, trunc);
        let mut k = vec![0i64; dim];
        for i in 0..out.coeffs.len() {
            out.mode_at(i, &mut k);
            let mut idx = 0;
            for &ki in &k {
                idx = idx * g + ki.rem_euclid(g as i64) as usize;
            }
            out.coeffs[i] = data[idx] * norm;
        }
        out
    }

    pub fn from_real_grid(dim: usize, g: usize, values: &[f64], trunc: usize) -> Self {
        let c: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_grid(dim, g, &c, trunc)
    }

    /// Evaluates at scattered points, given flat as `npts * dim` reals.
    pub fn eval_at(&self, points: &[f64]) -> Vec<Complex64> {
        let dim = self.dim;
        let t = self.trunc as i64;
        let cut = self.max_coeff() * EVAL_DROP;
        let mut modes: Vec<(Vec<usize>, Complex64)> = Vec::new();
        self.for_each_mode(|k, c| {
            if c.norm() > cut {
                modes.push((k.iter().map(|&x| (x + t) as usize).collect(), c));
            }
        });
        points
            .par_chunks(dim)
            .map(|x| {
                let tables: Vec<Vec<Complex64>> = x
                    .iter()
                    .map(|&xa| {
                        let mut tab = vec![ZERO; 2 * self.trunc + 1];
                        for m in -t..=t {
                            tab[(m + t) as usize] = Complex64::cis(TAU * (m as f64) * xa.rem_euclid(1.0));
                        }
                        tab
                    })
                    .collect();
                modes
                    .iter()
                    .map(|(k, c)| {
                        let mut e = *c;
                        for (a, &ka) in k.iter().enumerate() {
                            e *= tables[a][ka];
                        }
                        e
                    })
                    .sum()
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        self.eval_at(x)[0]
    }

    /// Pointwise product; the result lives on the box `K1 + K2` and is exact
    /// up to rounding.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let t = self.trunc + other.trunc;
        let g = 2 * t + 2;
        let a = self.to_grid(g);
        let b = other.to_grid(g);
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Self::from_grid(self.dim, g, &prod, t)
    }

    /// Whether `c_{-k} = conj(c_k)` within `tol`.
    pub fn is_real_valued(&self, tol: f64) -> bool {
        let mut ok = true;
        self.for_each_mode(|k, c| {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            if (self.coeff(&neg) - c.conj()).norm() > tol {
                ok = false;
            }
        });
        ok
    }

    /// Max of `|f|` over a `g^n` sample grid (a lower bound for the sup norm).
    pub fn max_abs_on_grid(&self, g: usize) -> f64 {
        self.to_grid(g).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn dot(k: &[i64], a: &[f64]) -> f64 {
    k.iter().zip(a).map(|(&x, y)| x as f64 * y).sum()
}

/// `sum_i alpha_i d/dx_i f`.
pub fn directional_derivative(alpha: &[f64], f: &TorusFunction) -> TorusFunction {
    f.directional_derivative(alpha)
}

pub fn sobolev_norm(f: &TorusFunction, r: f64) -> f64 {
    f.sobolev_norm(r)
}

/// Whether `k . alpha` counts as an exact resonance.
pub(crate) fn is_resonant(k: &[i64], alpha: &[f64]) -> bool {
    let kn: f64 = k.iter().map(|&x| (x as f64).abs()).sum();
    let an: f64 = alpha.iter().map(|x| x.abs()).fold(0.0, f64::max);
    dot(k, alpha).abs() <= 1e-14 * (1.0 + kn * an)
}

/// Solves `sum_i alpha_i d/dx_i h = f` for zero-average `h`.
pub fn solve_small_divisor(alpha: &[f64], f: &TorusFunction, tol_avg: f64) -> Result<TorusFunction, TorusError> {
    if alpha.len() != f.dim() {
        return Err(TorusError::DimensionMismatch);
    }
    let avg = f.average().norm();
    if avg > tol_avg {
        return Err(TorusError::NonzeroAverage(avg));
    }
    let mut out = TorusFunction::zeros(f.dim(), f.truncation());
    let mut k = vec![0i64; f.dim()];
    for (i, &c) in f.coeffs.iter().enumerate() {
        f.mode_at(i, &mut k);
        if c == ZERO || k.iter().all(|&x| x == 0) {
            continue;
        }
        if is_resonant(&k, alpha) {
            return Err(TorusError::Resonance(k.clone()));
        }
        out.coeffs[i] = c / Complex64::new(0.0, TAU * dot(&k, alpha));
    }
    Ok(out)
}

/// Random real-valued band-limited function with amplitudes decaying like
/// `(1 + |k|^2)^{-decay/2}`.
pub fn random_torus_function<R: Rng>(rng: &mut R, dim: usize, trunc: usize, decay: f64, zero_average: bool) -> TorusFunction {
    let mut f = TorusFunction::zeros(dim, trunc);
    let n = f.coeffs.len();
    let mut k = vec![0i64; dim];
    // index n-1-i holds -k when index i holds k
    for i in 0..n / 2 {
        f.mode_at(i, &mut k);
        let k2: f64 = k.iter().map(|&x| (x * x) as f64).sum();
        let amp = (1.0 + k2).powf(-decay / 2.0);
        let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * amp;
        f.coeffs[i] = c;
        f.coeffs[n - 1 - i] = c.conj();
    }
    if !zero_average {
        f.coeffs[n / 2] = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
    }
    f
}

#[derive(Clone, Debug, Serialize)]
pub struct TameReport {
    pub r: f64,
    pub sigma: f64,
    pub trunc: usize,
    /// Max of `|h|_r / |f|_{r+sigma}` with the corpus truncated at `K`.
    pub ratio_k: f64,
    /// Same at `2K`.
    pub ratio_2k: f64,
    pub plateau: bool,
}

/// Measures the tame constant of the small-divisor inverse on a corpus of
/// zero-average functions at truncations `K` and `2K`.
pub fn tame_ratio_report(
    alpha: &[f64],
    corpus: &[TorusFunction],
    r: f64,
    sigma: f64,
    trunc: usize,
) -> Result<TameReport, TorusError> {
    if corpus.is_empty() {
        return Err(TorusError::EmptyCorpus);
    }
    let ratio_at = |t: usize| -> Result<f64, TorusError> {
        let mut best: f64 = 0.0;
        for f in corpus {
            let ft = f.resized(t);
            let h = solve_small_divisor(alpha, &ft, 1e-12 * ft.sobolev_norm(0.0).max(1.0))?;
            let den = ft.sobolev_norm(r + sigma);
            if den > 0.0 {
                best = best.max(h.sobolev_norm(r) / den);
            }
        }
        Ok(best)
    };
    let ratio_k = ratio_at(trunc)?;
    let ratio_2k = ratio_at(2 * trunc)?;
    Ok(TameReport {
        r,
        sigma,
        trunc,
        ratio_k,
        ratio_2k,
        plateau: (ratio_2k - ratio_k).abs() < 0.1 * ratio_k.max(f64::MIN_POSITIVE),
    })
}

/// A vector field on `T^n` (also used for displacements `u` of maps `id + u`).
#[derive(Clone, Debug, PartialEq)]
pub struct TorusVectorField {
    pub components: Vec<TorusFunction>,
}

impl TorusVectorField {
    pub fn zeros(dim: usize, trunc: usize) -> Self {
        Self {
            components: (0..dim).map(|_| TorusFunction::zeros(dim, trunc)).collect(),
        }
    }

    pub fn constant(v: &[f64], trunc: usize) -> Self {
        let dim = v.len();
        Self {
            components: v.iter().map(|&x| TorusFunction::constant(dim, trunc, Complex64::new(x, 0.0))).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn truncation(&self) -> usize {
        self.components.iter().map(TorusFunction::truncation).max().unwrap_or(0)
    }

    pub fn resized(&self, trunc: usize) -> Self {
        Self {
            components: self.components.iter().map(|c| c.resized(trunc)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            components: self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            components: self.components.iter().zip(&other.components).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    /// Real parts of the component averages.
    pub fn average(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.average().re).collect()
    }

    /// `(sum_i |X_i|_r^2)^{1/2}`.
    pub fn sobolev_norm(&self, r: f64) -> f64 {
        self.components.iter().map(|c| c.sobolev_norm(r).powi(2)).sum::<f64>().sqrt()
    }

    fn check(&self) -> Result<usize, TorusError> {
        let n = self.dim();
        if self.components.iter().any(|c| c.dim() != n) {
            return Err(TorusError::DimensionMismatch);
        }
        Ok(n)
    }
}

/// Grid size used for pseudo-spectral products at truncation `K`: at least
/// `4K` points per axis and enough to resolve `2K` without aliasing.
pub fn grid_size(trunc: usize) -> usize {
    4 * trunc.max(1) + 2
}

/// Values of a displacement `u` and its Jacobian on a sample grid.
struct DisplacementGrid {
    dim: usize,
    g: usize,
    u: Vec<Vec<f64>>,
    /// `jac[i * dim + j][p] = d u_i / d x_j` at grid point `p`.
    jac: Vec<Vec<f64>>,
}

impl DisplacementGrid {
    fn new(u: &TorusVectorField, g: usize) -> Self {
        let dim = u.dim();
        let real = |f: &TorusFunction| f.to_grid(g).into_iter().map(|c| c.re).collect::<Vec<f64>>();
        let vals = u.components.iter().map(real).collect();
        let mut jac = Vec::with_capacity(dim * dim);
        for ui in &u.components {
            for j in 0..dim {
                jac.push(real(&ui.partial(j)));
            }
        }
        Self { dim, g, u: vals, jac }
    }

    fn npts(&self) -> usize {
        self.g.pow(self.dim as u32)
    }

    fn sup_u(&self) -> f64 {
        self.u.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Sup over the grid of the induced infinity norm of `Du`.
    fn sup_jacobian(&self) -> f64 {
        let d = self.dim;
        (0..self.npts())
            .map(|p| {
                (0..d)
                    .map(|i| (0..d).map(|j| self.jac[i * d + j][p].abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn check_invertible(&self) -> Result<(), TorusError> {
        let sup_u = self.sup_u();
        let sup_jacobian = self.sup_jacobian();
        if !(sup_u < 0.5 && sup_jacobian < 0.5) {
            return Err(TorusError::NonInvertible { sup_u, sup_jacobian });
        }
        Ok(())
    }

    fn grid_point(&self, mut p: usize, out: &mut [f64]) {
        for slot in out.iter_mut().rev() {
            *slot = (p % self.g) as f64 / self.g as f64;
            p /= self.g;
        }
    }

    /// Flat `x + u(x)` for every grid point.
    fn displaced_points(&self) -> Vec<f64> {
        let d = self.dim;
        let mut pts = vec![0.0; self.npts() * d];
        for p in 0..self.npts() {
            self.grid_point(p, &mut pts[p * d..(p + 1) * d]);
            for i in 0..d {
                pts[p * d + i] += self.u[i][p];
            }
        }
        pts
    }

    /// Solves `(I + Du(x_p)) w = rhs` in place.
    fn solve_at(&self, p: usize, rhs: &mut [f64]) {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = self.jac[i * d + j][p] + if i == j { 1.0 } else { 0.0 };
            }
        }
        solve_dense(&mut a, rhs, d);
    }
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap_or(col);
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in (r + 1)..n {
            s -= a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
}

/// `(D(id + u))^{-1} X o (id + u)`, computed by sampling on a grid of
/// `grid_size(K)` points per axis and re-expanding at truncation `2K`.
pub fn pullback_field(u: &TorusVectorField, x: &TorusVectorField) -> Result<TorusVectorField, TorusError> {
    let dim = u.check()?;
    if x.check()? != dim {
        return Err(TorusError::DimensionMismatch);
    }
    let trunc = u.truncation().max(x.truncation()).max(1);
    if u.components.iter().all(|c| c.max_coeff() == 0.0) {
        return Ok(x.resized(2 * trunc));
    }
    let g = grid_size(trunc);
    let grid = DisplacementGrid::new(u, g);
    grid.check_invertible()?;
    let pts = grid.displaced_points();
    let xs: Vec<Vec<Complex64>> = x.components.iter().map(|c| c.eval_at(&pts)).collect();
    let npts = grid.npts();
    let mut out = vec![vec![0.0; npts]; dim];
    let mut w = vec![0.0; dim];
    for p in 0..npts {
        for i in 0..dim {
            w[i] = xs[i][p].re;
        }
        grid.solve_at(p, &mut w);
        for i in 0..dim {
            out[i][p] = w[i];
        }
    }
    Ok(TorusVectorField {
        components: out.iter().map(|v| TorusFunction::from_real_grid(dim, g, v, 2 * trunc)).collect(),
    })
}

/// Displacement of the composition: `id + w = (id + u) o (id + v)`, i.e.
/// `w(x) = v(x) + u(x + v(x))`, truncated at `trunc_out`.
pub fn compose_displacements(
    u: &TorusVectorField,
    v: &TorusVectorField,
    trunc_out: usize,
) -> Result<TorusVectorField, TorusError> {
    let dim = u.check()?;
    if v.check()? != dim {
        return Err(TorusError::DimensionMismatch);
    }
    let trunc = u.truncation().max(v.truncation()).max(trunc_out).max(1);
    let g = grid_size(trunc);
    let grid = DisplacementGrid::new(v, g);
    grid.check_invertible()?;
    let pts = grid.displaced_points();
    let components = u
        .components
        .iter()
        .enumerate()
        .map(|(i, ui)| {
            let shifted = ui.eval_at(&pts);
            let vals: Vec<f64> = shifted.iter().zip(&grid.u[i]).map(|(s, vi)| s.re + vi).collect();
            TorusFunction::from_real_grid(dim, g, &vals, trunc_out)
        })
        .collect();
    Ok(TorusVectorField { components })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    /// `L^2` norm of the residual field.
    pub r0: f64,
    /// `H^2` norm of the residual field.
    pub r2: f64,
    pub lambda_bar: Vec<f64>,
}

/// State of the Newton conjugacy scheme for `rho_lambda + beta` near the
/// linear flow `omega`.
#[derive(Clone, Debug)]
pub struct KamState {
    pub omega: Vec<f64>,
    /// The fixed perturbation.
    pub beta: TorusVectorField,
    /// Current family parameter.
    pub lambda_bar: Vec<f64>,
    /// Accumulated conjugacy `h = id + u`.
    pub u: TorusVectorField,
    /// `h^*(lambda_bar + beta) - omega`.
    pub beta_cur: TorusVectorField,
    pub history: Vec<ResidualRecord>,
    /// Constant truncation degree of the scheme.
    pub trunc: usize,
}

impl KamState {
    pub fn new(omega: &[f64], beta: &TorusVectorField, trunc: usize) -> Result<Self, TorusError> {
        let dim = omega.len();
        if beta.check()? != dim {
            return Err(TorusError::DimensionMismatch);
        }
        let beta = beta.resized(trunc);
        let u = TorusVectorField::zeros(dim, trunc);
        let lambda_bar = omega.to_vec();
        let beta_cur = field_residual(&u, &lambda_bar, &beta, omega)?;
        let mut s = Self {
            omega: omega.to_vec(),
            beta,
            lambda_bar,
            u,
            beta_cur,
            history: Vec::new(),
            trunc,
        };
        s.record();
        Ok(s)
    }

    fn record(&mut self) {
        self.history.push(ResidualRecord {
            iteration: self.history.len(),
            r0: self.beta_cur.sobolev_norm(0.0),
            r2: self.beta_cur.sobolev_norm(2.0),
            lambda_bar: self.lambda_bar.clone(),
        });
    }

    pub fn residual(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |r| r.r0)
    }

    /// CSV table of the residual history.
    pub fn residual_csv(&self) -> String {
        let dim = self.omega.len();
        let mut s = String::from("iteration,residual_r0,residual_r2");
        for i in 0..dim {
            s.push_str(&format!(",lambda_bar_{i}"));
        }
        s.push('\n');
        for r in &self.history {
            s.push_str(&format!("{},{:e},{:e}", r.iteration, r.r0, r.r2));
            for l in &r.lambda_bar {
                s.push_str(&format!(",{l:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// `(id + u)^*(lambda + beta) - omega`.
fn field_residual(
    u: &TorusVectorField,
    lambda: &[f64],
    beta: &TorusVectorField,
    omega: &[f64],
) -> Result<TorusVectorField, TorusError> {
    let trunc = beta.truncation().max(u.truncation());
    let total = beta.add(&TorusVectorField::constant(lambda, trunc));
    let pulled = pullback_field(u, &total)?;
    Ok(pulled.sub(&TorusVectorField::constant(omega, pulled.truncation())))
}

/// One Newton step: fix the family parameter so the pulled-back field has
/// the average of `omega`, solve the linearized conjugacy equation
/// `omega . grad v = residual`, and compose `h <- h o (id + v)`.
pub fn kam_step(state: &KamState) -> Result<KamState, TorusError> {
    let dim = state.omega.len();
    let trunc = state.trunc;
    if state.residual() == 0.0 {
        return Ok(state.clone());
    }
    // the parameter enters through (Dh)^{-1}, so invert the averaged Jacobian
    let mut avg_inv = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = pullback_field(&state.u, &TorusVectorField::constant(&e, 1))?.average();
        for i in 0..dim {
            avg_inv[i * dim + j] = col[i];
        }
    }
    let mut c: Vec<f64> = state.beta_cur.average().iter().map(|x| -x).collect();
    solve_dense(&mut avg_inv, &mut c, dim);
    let lambda_bar: Vec<f64> = state.lambda_bar.iter().zip(&c).map(|(l, d)| l + d).collect();

    let e = field_residual(&state.u, &lambda_bar, &state.beta, &state.omega)?.resized(trunc);
    let mut v = TorusVectorField::zeros(dim, trunc);
    for (vi, ei) in v.components.iter_mut().zip(&e.components) {
        *vi = solve_small_divisor(&state.omega, &ei.zero_average(), 0.0)?;
    }
    let u = compose_displacements(&state.u, &v, trunc)?;
    let beta_cur = field_residual(&u, &lambda_bar, &state.beta, &state.omega)?;
    let mut next = KamState {
        omega: state.omega.clone(),
        beta: state.beta.clone(),
        lambda_bar,
        u,
        beta_cur,
        history: state.history.clone(),
        trunc,
    };
    next.record();
    Ok(next)
}

/// Runs [`kam_step`] until the residual falls below `floor`.
///
/// Fails with `NoConvergence` when the residual grows, a step breaks down,
/// or `max_iter` is exhausted.
pub fn kam_iterate(
    omega: &[f64],
    beta: &TorusVectorField,
    trunc: usize,
    max_iter: usize,
    floor: f64,
) -> Result<KamState, TorusError> {
    let w = diophantine::fit_witness(omega, omega.len() as f64, trunc.max(1) as u32)?;
    if !w.is_valid() {
        return Err(TorusError::Resonance(w.argmin));
    }
    let mut state = KamState::new(omega, beta, trunc)?;
    let fail = |state: &KamState, cause: String| TorusError::NoConvergence {
        iterations: state.history.len() - 1,
        residual: state.residual(),
        cause,
    };
    while state.residual() >= floor {
        if state.history.len() > max_iter {
            return Err(fail(&state, "iteration budget exhausted".into()));
        }
        let next = match kam_step(&state) {
            Ok(n) => n,
            Err(e) => return Err(fail(&state, e.to_string())),
        };
        if next.residual() >= state.residual() {
            return Err(fail(&next, "residual stopped decreasing".into()));
        }
        state = next;
    }
    Ok(state)
}

/// Max over a `g^n` grid of `|(Dh)^{-1}(lambda_bar + beta)(h(x)) - omega|`,
/// evaluated pointwise without re-expansion.
pub fn conjugacy_error(state: &KamState, g: usize) -> Result<f64, TorusError> {
    let grid = DisplacementGrid::new(&state.u, g);
    grid.check_invertible()?;
    let dim = state.omega.len();
    let pts = grid.displaced_points();
    let vals: Vec<Vec<Complex64>> = state.beta.components.iter().map(|c| c.eval_at(&pts)).collect();
    let mut worst: f64 = 0.0;
    let mut w = vec![0.0; dim];
    for p in 0..grid.npts() {
        for i in 0..dim {
            w[i] = state.lambda_bar[i] + vals[i][p].re;
        }
        grid.solve_at(p, &mut w);
        for i in 0..dim {
            worst = worst.max((w[i] - state.omega[i]).abs());
        }
    }
    Ok(worst)
}

/// `(1/T) int_0^T f(x0 + t alpha) dt` in closed form, accumulated over
/// `steps` equal sub-intervals with phases reduced mod 1.
pub fn birkhoff_average(alpha: &[f64], f: &TorusFunction, x0: &[f64], t: f64, steps: usize) -> f64 {
    assert!(steps >= 1, "steps must be positive");
    assert!(t > 0.0, "time must be positive");
    let dt = t / steps as f64;
    let mut total = ZERO;
    f.for_each_mode(|k, c| {
        if c == ZERO {
            return;
        }
        let d = dot(k, alpha);
        let kx = dot(k, x0);
        if d == 0.0 {
            total += c * Complex64::cis(TAU * kx.rem_euclid(1.0));
            return;
        }
        let seg = (Complex64::cis(TAU * (d * dt).rem_euclid(1.0)) - 1.0) / Complex64::new(0.0, TAU * d);
        let mut acc = ZERO;
        for s in 0..steps {
            let phase = (kx + d * dt * s as f64).rem_euclid(1.0);
            acc += Complex64::cis(TAU * phase) * seg;
        }
        total += c * acc / t;
    });
    total.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PHI: f64 = 1.618_033_988_749_895;
    const I: Complex64 = Complex64::new(0.0, 1.0);

    fn golden() -> Vec<f64> {
        vec![1.0, PHI]
    }

    #[test]
    fn derivative_basics() {
        let c = TorusFunction::constant(2, 3, Complex64::new(2.5, 0.0));
        assert_eq!(directional_derivative(&golden(), &c).max_coeff(), 0.0);
        let f = TorusFunction::single_mode(2, 3, &[1, 0], Complex64::new(1.0, 0.0));
        let d = directional_derivative(&golden(), &f);
        assert!((d.coeff(&[1, 0]) - TAU * I).norm() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trunc = 4;
        let f = random_torus_function(&mut rng, 2, trunc, 1.0, false);
        let alpha = golden();
        let df = directional_derivative(&alpha, &f);
        // central difference along alpha at grid points of a 4K grid
        let g = 4 * trunc;
        let h = 1e-5;
        for p in 0..g * g {
            let x = [(p / g) as f64 / g as f64, (p % g) as f64 / g as f64];
            let xp = [x[0] + h * alpha[0], x[1] + h * alpha[1]];
            let xm = [x[0] - h * alpha[0], x[1] - h * alpha[1]];
            let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
            assert!((fd - df.eval(&x)).norm() < 1e-6 * (1.0 + df.max_coeff()), "point {p}");
        }
    }

    #[test]
    fn solver_examples() {
        let f = TorusFunction::single_mode(2, 2, &[1, 0], Complex64::new(1.0, 0.0));
        let h = solve_small_divisor(&golden(), &f, 1e-12).unwrap();
        assert!((h.coeff(&[1, 0]) - 1.0 / (TAU * I)).norm() < 1e-16);
        let c = TorusFunction::constant(2, 2, Complex64::new(1.0, 0.0));
        assert_eq!(solve_small_divisor(&golden(), &c, 1e-12), Err(TorusError::NonzeroAverage(1.0)));
        let r = TorusFunction::single_mode(2, 2, &[1, -2], Complex64::new(1.0, 0.0));
        assert_eq!(solve_small_divisor(&[1.0, 0.5], &r, 1e-12), Err(TorusError::Resonance(vec![1, -2])));
    }

    #[test]
    fn solve_inverts_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let h0 = random_torus_function(&mut rng, 2, 12, 1.0, true);
            let f = directional_derivative(&golden(), &h0);
            let h = solve_small_divisor(&golden(), &f, 1e-14).unwrap();
            assert!(h.sub(&h0).sobolev_norm(0.0) <= 1e-12 * h0.sobolev_norm(0.0));
            // and the other way round, up to the average
            let g = random_torus_function(&mut rng, 2, 12, 1.0, false);
            let back = directional_derivative(&golden(), &solve_small_divisor(&golden(), &g.zero_average(), 0.0).unwrap());
            assert!(back.sub(&g.zero_average()).sobolev_norm(0.0) <= 1e-12 * g.sobolev_norm(0.0));
        }
    }

    #[test]
    fn sobolev_examples() {
        let one = TorusFunction::constant(2, 3, Complex64::new(1.0, 0.0));
        for r in [-1.0, 0.0, 2.5] {
            assert!((one.sobolev_norm(r) - 1.0).abs() < 1e-15);
        }
        let f = TorusFunction::single_mode(2, 3, &[2, -1], Complex64::new(0.0, 3.0));
        assert!((f.sobolev_norm(1.5) - 3.0 * 6f64.powf(0.75)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_torus_function(&mut rng, 2, 5, 0.5, false);
            let b = random_torus_function(&mut rng, 2, 5, 0.5, false);
            for r in [0.0, 1.0, 3.0] {
                assert!(a.add(&b).sobolev_norm(r) <= a.sobolev_norm(r) + b.sobolev_norm(r) + 1e-12);
            }
        }
    }

    #[test]
    fn tame_report_single_modes() {
        let alpha = golden();
        let w = diophantine::fit_witness(&alpha, 1.0, 8).unwrap();
        let sigma = w.gamma;
        let mut corpus = Vec::new();
        for k1 in -8i64..=8 {
            for k2 in -8i64..=8 {
                if (k1, k2) != (0, 0) {
                    corpus.push(TorusFunction::single_mode(2, 8, &[k1, k2], Complex64::new(1.0, 0.0)));
                }
            }
        }
        let rep = tame_ratio_report(&alpha, &corpus, 0.0, sigma, 8).unwrap();
        // per-mode closed form (2 pi |k.a|)^-1 (1+|k|^2)^{-sigma/2} <= 1/(2 pi C)
        let mut closed: f64 = 0.0;
        for f in &corpus {
            f.for_each_mode(|k, c| {
                if c != ZERO {
                    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
                    closed = closed.max(1.0 / (TAU * dot(k, &alpha).abs()) * (1.0 + k2).powf(-sigma / 2.0));
                }
            });
        }
        assert!((rep.ratio_k - closed).abs() < 1e-12 * closed);
        assert!(rep.ratio_k <= 1.0 / (TAU * w.c) + 1e-12);
        assert!(matches!(tame_ratio_report(&alpha, &[], 0.0, 1.0, 4), Err(TorusError::EmptyCorpus)));
    }

    #[test]
    fn tame_report_random_plateau() {
        let alpha = golden();
        let w = diophantine::fit_witness(&alpha, 1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let corpus: Vec<TorusFunction> = (0..50).map(|_| random_torus_function(&mut rng, 2, 32, 4.0, true)).collect();
        let rep = tame_ratio_report(&alpha, &corpus, 1.0, w.gamma + 1.0, 16).unwrap();
        assert!(rep.plateau, "{rep:?}");
    }

    #[test]
    fn grid_roundtrip_and_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_torus_function(&mut rng, 2, 5, 0.0, false);
        let g = grid_size(5);
        let back = TorusFunction::from_grid(2, g, &f.to_grid(g), 5);
        assert!(back.sub(&f).max_coeff() < 1e-14);
        let a = TorusFunction::single_mode(2, 2, &[1, 2], Complex64::new(2.0, 0.0));
        let b = TorusFunction::single_mode(2, 3, &[-3, 1], Complex64::new(0.0, 1.0));
        let p = a.mul(&b);
        assert_eq!(p.truncation(), 5);
        assert!((p.coeff(&[-2, 3]) - Complex64::new(0.0, 2.0)).norm() < 1e-14);
        assert!(p.zero_average().sub(&TorusFunction::single_mode(2, 5, &[-2, 3], Complex64::new(0.0, 2.0))).max_coeff() < 1e-14);
        assert!(f.is_real_valued(1e-15));
    }

    #[test]
    fn pullback_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = TorusVectorField {
            components: (0..2).map(|_| random_torus_function(&mut rng, 2, 4, 1.0, false)).collect(),
        };
        let out = pullback_field(&TorusVectorField::zeros(2, 4), &x).unwrap();
        assert!(out.resized(4).sub(&x).sobolev_norm(0.0) < 1e-14);
        let c = TorusVectorField::constant(&[0.3, -1.0], 2);
        let out = pullback_field(&TorusVectorField::zeros(2, 2), &c).unwrap();
        assert!(out.resized(2).sub(&c).sobolev_norm(0.0) < 1e-15);
    }

    #[test]
    fn pullback_of_constant_matches_dense_grid() {
        let mut u = TorusVectorField::zeros(2, 3);
        u.components[0] = TorusFunction::single_mode(2, 3, &[1, 1], Complex64::new(0.0, -0.005))
            .add(&TorusFunction::single_mode(2, 3, &[-1, -1], Complex64::new(0.0, 0.005)));
        let x = TorusVectorField::constant(&[1.0, PHI], 1);
        let out = pullback_field(&u, &x).unwrap();
        // oracle: (I + Du)^{-1} X directly at points of a finer grid
        let g = 37;
        for p in 0..g * g {
            let pt = [(p / g) as f64 / g as f64, (p % g) as f64 / g as f64];
            // u0 = 0.01 sin(2 pi (x1 + x2)), so du0/dx1 = du0/dx2 = s
            let s = 0.01 * TAU * (TAU * (pt[0] + pt[1])).cos();
            let (a, b, c, d) = (1.0 + s, s, 0.0, 1.0);
            let det = a * d - b * c;
            let w0 = (d * 1.0 - b * PHI) / det;
            let w1 = (-c * 1.0 + a * PHI) / det;
            assert!((out.components[0].eval(&pt).re - w0).abs() < 1e-8);
            assert!((out.components[1].eval(&pt).re - w1).abs() < 1e-8);
        }
    }

    #[test]
    fn pullback_rejects_large_displacement() {
        let mut u = TorusVectorField::zeros(1, 1);
        u.components[0] = TorusFunction::single_mode(1, 1, &[1], Complex64::new(0.2, 0.0))
            .add(&TorusFunction::single_mode(1, 1, &[-1], Complex64::new(0.2, 0.0)));
        let x = TorusVectorField::constant(&[1.0], 1);
        assert!(matches!(pullback_field(&u, &x), Err(TorusError::NonInvertible { .. })));
    }

    fn sine_perturbation(eps: f64, trunc: usize) -> TorusVectorField {
        // eps * (sin 2 pi (x1 + x2), 0)
        let mut b = TorusVectorField::zeros(2, trunc);
        b.components[0] = TorusFunction::single_mode(2, trunc, &[1, 1], Complex64::new(0.0, -eps / 2.0))
            .add(&TorusFunction::single_mode(2, trunc, &[-1, -1], Complex64::new(0.0, eps / 2.0)));
        b
    }

    #[test]
    fn kam_step_trivial_cases() {
        let zero = TorusVectorField::zeros(2, 4);
        let s = KamState::new(&golden(), &zero, 4).unwrap();
        let n = kam_step(&s).unwrap();
        assert_eq!(n.residual(), 0.0);
        assert_eq!(n.lambda_bar, golden());

        let c = TorusVectorField::constant(&[0.01, -0.02], 4);
        let s = KamState::new(&golden(), &c, 4).unwrap();
        let n = kam_step(&s).unwrap();
        assert!(n.residual() < 1e-15);
        assert!(n.u.sobolev_norm(0.0) < 1e-15);
        assert!((n.lambda_bar[0] - (1.0 - 0.01)).abs() < 1e-15);
        assert!((n.lambda_bar[1] - (PHI + 0.02)).abs() < 1e-15);
    }

    #[test]
    fn kam_zero_perturbation_is_immediate() {
        let s = kam_iterate(&golden(), &TorusVectorField::zeros(2, 8), 8, 5, 1e-12).unwrap();
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.lambda_bar, golden());
        assert_eq!(s.u.sobolev_norm(0.0), 0.0);
    }

    #[test]
    fn kam_converges_quadratically_at_small_scale() {
        let beta = sine_perturbation(1e-3, 16);
        let s = kam_iterate(&golden(), &beta, 16, 8, 1e-12).unwrap();
        assert!(s.residual() < 1e-12);
        assert!(s.history.len() <= 7);
        assert!(conjugacy_error(&s, 64).unwrap() < 1e-10);
    }

    #[test]
    fn kam_large_perturbation_reports_no_convergence() {
        let beta = sine_perturbation(1.0, 16);
        match kam_iterate(&golden(), &beta, 16, 10, 1e-12) {
            Err(TorusError::NoConvergence { cause, .. }) => assert!(cause.contains("not invertible")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kam_resonant_frequency_is_rejected() {
        let beta = sine_perturbation(1e-3, 4);
        assert!(matches!(kam_iterate(&[1.0, 0.5], &beta, 4, 5, 1e-12), Err(TorusError::Resonance(_))));
    }

    #[test]
    fn birkhoff_examples() {
        let c = TorusFunction::constant(2, 2, Complex64::new(0.7, 0.0));
        for t in [0.5, 10.0, 1e4] {
            assert!((birkhoff_average(&golden(), &c, &[0.1, 0.2], t, 3) - 0.7).abs() < 1e-15);
        }
        let f = TorusFunction::single_mode(2, 3, &[2, -1], Complex64::new(1.0, 0.0))
            .add(&TorusFunction::single_mode(2, 3, &[-2, 1], Complex64::new(1.0, 0.0)));
        let kd = (2.0 - PHI).abs();
        for t in [1.0, 37.0, 1000.0] {
            let avg = birkhoff_average(&golden(), &f, &[0.3, 0.9], t, 1);
            assert!(avg.abs() <= 2.0 / (PI * kd * t) + 1e-12);
        }
    }

    #[test]
    fn birkhoff_matches_quadrature_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_torus_function(&mut rng, 2, 3, 1.0, false);
        let g = random_torus_function(&mut rng, 2, 3, 1.0, false);
        let x0 = [0.25, 0.6];
        let t = 3.7;
        // composite Simpson rule along the orbit
        let n = 20_000;
        let h = t / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let tt = i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f.eval(&[x0[0] + tt, x0[1] + tt * PHI]).re;
        }
        let quad = s * h / 3.0 / t;
        assert!((birkhoff_average(&golden(), &f, &x0, t, 1) - quad).abs() < 1e-9);
        assert!((birkhoff_average(&golden(), &f, &x0, t, 7) - quad).abs() < 1e-9);
        let lin = birkhoff_average(&golden(), &f.add(&g.scale(Complex64::new(-2.0, 0.0))), &x0, t, 2);
        let sep = birkhoff_average(&golden(), &f, &x0, t, 2) - 2.0 * birkhoff_average(&golden(), &g, &x0, t, 2);
        assert!((lin - sep).abs() < 1e-13);
    }
}
