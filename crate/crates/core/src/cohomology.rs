//! Coboundary operators over the Heisenberg action
//! `X1 = sum (alpha_i + a_i) Y_i`, `X2 = mu sum alpha_i Y_i + (beta + b) Z`,
//! their tame inverses, the leafwise Laplacian and its spectral checks, and
//! the triangular solver for vector-field-valued cochains.
//!
//! Solvers work in the frame `mu = 0`: a cochain `(f, g)` over the action
//! with parameter `mu` corresponds to `(f, g - mu f)` over the one with
//! `mu = 0`, and `delta1` is the same for both.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::{self, ActionParams, AlgebraError, ConstantCocycle, TwoStepAlgebra};
use crate::diophantine::{self, DiophantineError, DiophantineWitness};
use crate::nilrep::{apply_element, apply_x1, apply_x2, nil_sobolev_norm, rep_matrix, NilFunction};
use crate::torus::{self, TorusError, TorusFunction};

const TAU: f64 = 2.0 * PI;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Extra Hermite modes used by the banded Laplacian solve.
pub const LAPLACIAN_HEADROOM: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohomologyError {
    #[error("not a cocycle: |delta1| / |omega|_1 = {0:.3e}")]
    NotACocycle(f64),
    #[error("nonzero trivial-representation part: f = {f_triv}, g = {g_triv}")]
    NonzeroAverage { f_triv: Complex64, g_triv: Complex64 },
    #[error("resonant toral frequency {0:?}")]
    Resonance(Vec<i64>),
    #[error("central coefficient of X2 vanishes")]
    DegenerateBeta,
    #[error("the analytic model needs the Heisenberg algebra (q = 2, p = 1)")]
    NotHeisenberg,
    #[error("eigensolver failure for n = {0}")]
    Eigen(i64),
    #[error(transparent)]
    Torus(#[from] TorusError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Witness(#[from] DiophantineError),
}

/// Diophantine data and Sobolev orders used to report tame constants.
#[derive(Clone, Debug, Serialize)]
pub struct Witnesses {
    pub toral: DiophantineWitness,
    /// Derivative loss, `gamma + 1` of the toral witness.
    pub sigma: f64,
    /// Sobolev order at which tame ratios are measured.
    pub r: f64,
}

impl Witnesses {
    /// Fits a witness for the toral frequency of `X1` with `gamma = q` on
    /// the box `|k|_inf <= k_max`.
    pub fn fit(params: &ActionParams, k_max: u32) -> Result<Self, CohomologyError> {
        let q = params.q();
        let alpha = &params.x1()[..q];
        let w = diophantine::fit_witness(alpha, q as f64, k_max.max(1))?;
        if !w.is_valid() {
            return Err(CohomologyError::Resonance(w.argmin));
        }
        Ok(Self {
            sigma: w.gamma + 1.0,
            toral: w,
            r: 1.0,
        })
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }
}

fn check_heisenberg(params: &ActionParams) -> Result<(), CohomologyError> {
    if params.q() != 2 || params.p() != 1 || params.a.len() != 2 || params.b.len() != 1 {
        return Err(CohomologyError::NotHeisenberg);
    }
    Ok(())
}

fn coeffs3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// The same action with `mu = 0`.
fn frame0(params: &ActionParams) -> ActionParams {
    let mut p = params.clone();
    p.mu = 0.0;
    p
}

/// `2 pi i n (beta + b)`, the scalar by which `X2` acts on `pi_n` at `mu = 0`.
fn central_scalar(params: &ActionParams, n: i64) -> Result<Complex64, CohomologyError> {
    let b = params.beta[0] + params.b[0];
    if b == 0.0 {
        return Err(CohomologyError::DegenerateBeta);
    }
    Ok(Complex64::new(0.0, TAU * n as f64 * b))
}

/// A 1-cochain: values on `X1` and `X2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochain1 {
    pub f: NilFunction,
    pub g: NilFunction,
}

impl Cochain1 {
    pub fn new(f: NilFunction, g: NilFunction) -> Self {
        Self { f, g }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.f.add(&o.f), self.g.add(&o.g))
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.f.sub(&o.f), self.g.sub(&o.g))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.f.scale(s), self.g.scale(s))
    }

    /// `max(|f|_r, |g|_r)`.
    pub fn norm(&self, r: f64) -> f64 {
        nil_sobolev_norm(&self.f, r).max(nil_sobolev_norm(&self.g, r))
    }

    /// Moves between the frames `mu` and `0`: `(f, g) -> (f, g - mu f)`.
    fn to_frame0(&self, mu: f64) -> Self {
        if mu == 0.0 {
            return self.clone();
        }
        Self::new(self.f.clone(), self.g.sub(&self.f.scale(Complex64::new(mu, 0.0))))
    }
}

/// `h -> (X1 h, X2 h)`.
pub fn delta0(params: &ActionParams, h: &NilFunction) -> Cochain1 {
    Cochain1::new(apply_x1(params, h), apply_x2(params, h))
}

/// `(f, g) -> X2 f - X1 g`.
pub fn delta1(params: &ActionParams, w: &Cochain1) -> NilFunction {
    apply_x2(params, &w.f).sub(&apply_x1(params, &w.g))
}

/// `|delta1 w|_0 / |w|_1`, zero for the zero cochain.
pub fn cocycle_defect(params: &ActionParams, w: &Cochain1) -> f64 {
    let den = w.norm(1.0);
    if den == 0.0 {
        return 0.0;
    }
    nil_sobolev_norm(&delta1(params, w), 0.0) / den
}

#[derive(Clone, Debug)]
pub struct Delta0Star {
    pub h: NilFunction,
    /// `|h|_r / max(|f|, |g|)_{r + sigma}`.
    pub tame_ratio: f64,
}

/// Tame inverse of `delta0` on cocycles without trivial-representation
/// part. `tol` bounds the relative cocycle defect, the relative size of the
/// averages and of the toral part of `g` (which must vanish at `mu = 0`).
pub fn delta0_star(
    params: &ActionParams,
    w: &Cochain1,
    witnesses: &Witnesses,
    tol: f64,
) -> Result<Delta0Star, CohomologyError> {
    check_heisenberg(params)?;
    let p0 = frame0(params);
    let w0 = w.to_frame0(params.mu);
    let scale = w0.norm(0.0);
    if scale == 0.0 {
        return Ok(Delta0Star {
            h: NilFunction::zeros(w.f.toral.truncation()),
            tame_ratio: 0.0,
        });
    }
    let f_triv = w0.f.average();
    let g_triv = w0.g.average();
    if f_triv.norm().max(g_triv.norm()) > tol * scale {
        return Err(CohomologyError::NonzeroAverage { f_triv, g_triv });
    }
    let defect = cocycle_defect(&p0, &w0);
    if defect > tol {
        return Err(CohomologyError::NotACocycle(defect));
    }
    let g_toral = w0.g.toral.sobolev_norm(0.0);
    if g_toral > tol * scale {
        return Err(CohomologyError::NotACocycle(g_toral / scale));
    }
    let alpha = &p0.x1()[..2];
    let toral = solve_toral(alpha, &w0.f.toral.zero_average())?;
    let mut h = NilFunction::from_toral(toral);
    for (key, v) in &w0.g.reps {
        let s = central_scalar(&p0, key.n)?;
        h.reps.insert(*key, v.iter().map(|c| c / s).collect());
    }
    let den = w.norm(witnesses.r + witnesses.sigma);
    let tame_ratio = nil_sobolev_norm(&h, witnesses.r) / den;
    Ok(Delta0Star { h, tame_ratio })
}

fn solve_toral(alpha: &[f64], f: &TorusFunction) -> Result<TorusFunction, CohomologyError> {
    torus::solve_small_divisor(alpha, f, 0.0).map_err(|e| match e {
        TorusError::Resonance(k) => CohomologyError::Resonance(k),
        other => CohomologyError::Torus(other),
    })
}

/// `w = delta0(H) + (f_err, g_err) + (f_triv, g_triv)`.
#[derive(Clone, Debug)]
pub struct SplittingResult {
    pub h: NilFunction,
    pub f_err: NilFunction,
    pub g_err: NilFunction,
    pub f_triv: Complex64,
    pub g_triv: Complex64,
    /// `|H|_r / max(|f|, |g|)_{r + sigma}`.
    pub h_ratio: f64,
    /// `max(|f_err|, |g_err|)_r / |delta1 w|_{r + sigma}`; zero when
    /// `delta1 w = 0`.
    pub err_ratio: f64,
}

impl SplittingResult {
    pub fn error_part(&self) -> Cochain1 {
        Cochain1::new(self.f_err.clone(), self.g_err.clone())
    }

    /// Largest coefficient of `w - delta0(H) - err - triv`.
    pub fn reconstruction_error(&self, params: &ActionParams, w: &Cochain1) -> f64 {
        let k = w.f.toral.truncation();
        let d = delta0(params, &self.h);
        let rf = w
            .f
            .sub(&d.f)
            .sub(&self.f_err)
            .sub(&NilFunction::constant(k, self.f_triv));
        let rg = w
            .g
            .sub(&d.g)
            .sub(&self.g_err)
            .sub(&NilFunction::constant(k, self.g_triv));
        rf.max_coeff().max(rg.max_coeff())
    }
}

/// Splits a cochain into a coboundary, an error part controlled by
/// `delta1 w`, and constants. Toral part: `H_0` solves
/// `X1 H_0 = f_0 - avg`, the error is `(0, g_0 - avg)`. Part in `pi_n`:
/// `H = g / (2 pi i n beta)` and the error is `(delta1 w / (2 pi i n beta), 0)`.
pub fn delta1_star_split(
    params: &ActionParams,
    w: &Cochain1,
    witnesses: &Witnesses,
) -> Result<SplittingResult, CohomologyError> {
    check_heisenberg(params)?;
    let mu = params.mu;
    let p0 = frame0(params);
    let w0 = w.to_frame0(mu);
    let phi = delta1(&p0, &w0);
    let f_triv = w0.f.average();
    let g_triv = w0.g.average();
    let alpha = &p0.x1()[..2];
    let mut h = NilFunction::from_toral(solve_toral(alpha, &w0.f.toral.zero_average())?);
    let k = w.f.toral.truncation();
    let mut f_err = NilFunction::zeros(k);
    let mut g_err = NilFunction::from_toral(w0.g.toral.zero_average());
    for (key, v) in &w0.g.reps {
        let s = central_scalar(&p0, key.n)?;
        h.reps.insert(*key, v.iter().map(|c| c / s).collect());
    }
    for (key, v) in &phi.reps {
        let s = central_scalar(&p0, key.n)?;
        f_err.reps.insert(*key, v.iter().map(|c| c / s).collect());
    }
    let mut g_triv_out = g_triv;
    if mu != 0.0 {
        g_err = g_err.add(&f_err.scale(Complex64::new(mu, 0.0)));
        g_triv_out += f_triv * mu;
    }
    let r = witnesses.r;
    let rs = r + witnesses.sigma;
    let den_h = w.norm(rs);
    let den_e = nil_sobolev_norm(&phi, rs);
    let err_norm = nil_sobolev_norm(&f_err, r).max(nil_sobolev_norm(&g_err, r));
    Ok(SplittingResult {
        h_ratio: if den_h > 0.0 { nil_sobolev_norm(&h, r) / den_h } else { 0.0 },
        err_ratio: if den_e > 0.0 { err_norm / den_e } else { 0.0 },
        h,
        f_err,
        g_err,
        f_triv,
        g_triv: g_triv_out,
    })
}

/// `X1^2 F + X2^2 F`.
pub fn leafwise_laplacian_apply(params: &ActionParams, f: &NilFunction) -> NilFunction {
    let a = apply_x1(params, &apply_x1(params, f));
    let b = apply_x2(params, &apply_x2(params, f));
    a.add(&b)
}

/// Compression of the Laplacian to the first `m` Hermite functions of
/// `pi_n`: `-(B^* B + C^* C)` with `B`, `C` the `(m+1) x m` matrices of
/// `X1`, `X2`.
pub fn rep_laplacian_matrix(params: &ActionParams, n: i64, m: usize) -> DMatrix<Complex64> {
    let b = rep_matrix(&coeffs3(&params.x1()), n, m);
    let c = rep_matrix(&coeffs3(&params.x2()), n, m);
    -(b.adjoint() * &b + c.adjoint() * &c)
}

#[derive(Clone, Debug, Serialize)]
pub struct RepSpectrum {
    pub n: i64,
    pub m: usize,
    /// All eigenvalues, ordered by increasing magnitude.
    pub eigenvalues: Vec<f64>,
    /// The first `trusted` entries are unaffected by the truncation edge.
    pub trusted: usize,
}

impl RepSpectrum {
    pub fn trusted_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.trusted]
    }

    pub fn min_trusted_abs(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |x| x.abs())
    }
}

/// Spectrum of the compressed Laplacian in `pi_n`; the lowest third by
/// magnitude is trusted.
pub fn rep_spectrum(params: &ActionParams, n: i64, m: usize) -> Result<RepSpectrum, CohomologyError> {
    check_heisenberg(params)?;
    if n == 0 {
        return Err(CohomologyError::Eigen(0));
    }
    let l = rep_laplacian_matrix(params, n, m);
    let eig = l.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if ev.iter().any(|x| !x.is_finite()) {
        return Err(CohomologyError::Eigen(n));
    }
    ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    Ok(RepSpectrum {
        n,
        m,
        trusted: (m / 3).max(1),
        eigenvalues: ev,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GhRow {
    pub n: i64,
    /// Smallest trusted `|eigenvalue|` over `pi_n` and `pi_{-n}`.
    pub min_abs: f64,
    pub near_zero: bool,
    pub trusted: usize,
    pub raw: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GhReport {
    pub convention: &'static str,
    /// `min (2 pi k . alpha)^2` over `0 < |k|_inf <= K`.
    pub toral_min: f64,
    pub toral_argmin: Vec<i64>,
    /// `(2 pi C |k|^-gamma)^2` at the argmin, from the witness with
    /// `gamma = q`; zero when the witness is invalid.
    pub toral_bound: f64,
    pub toral_near_zero: bool,
    pub rows: Vec<GhRow>,
    /// Fit `min_abs ~ c |n|^d`.
    pub fit_c: f64,
    pub fit_exponent: f64,
    /// Per-row minima non-decreasing in `|n|` up to 5%.
    pub monotone: bool,
    /// `X2` has no central component: `L` reduces to `X1^2` on every `pi_n`.
    pub degenerate_beta: bool,
    /// Relative change of the `n = 1` minimum when `M` doubles.
    pub truncation_drift: f64,
    /// Nontrivial near-kernel modes found.
    pub near_kernel_modes: usize,
    pub certified: bool,
}

pub const CONVENTION: &str = "dpi(Y1)=d/dx, dpi(Y2)=2*pi*i*n*x, dpi(Z)=2*pi*i*n";

/// Global hypoellipticity check at truncation: toral symbol bounded away
/// from zero off `k = 0`, rep spectra bounded away from zero, and an
/// honest central part in `X2`.
pub fn gh_certificate(params: &ActionParams, n_max: i64, m: usize, k_max: usize) -> Result<GhReport, CohomologyError> {
    check_heisenberg(params)?;
    let x1 = params.x1();
    let x2 = params.x2();
    let amax = x1[..2].iter().chain(&x2[..2]).map(|x| x.abs()).fold(0.0, f64::max);
    let toral_tol = 1e-8 * TAU * TAU * amax.max(f64::MIN_POSITIVE).powi(2);
    let (toral_min, toral_argmin) = toral_symbol_min(&x1, &x2, k_max);
    let w = diophantine::fit_witness(&x1[..2], 2.0, k_max.max(1) as u32)?;
    let toral_bound = if w.is_valid() {
        let d = TAU * w.lower_bound(&toral_argmin);
        d * d
    } else {
        0.0
    };
    let toral_near_zero = toral_min <= toral_tol;

    let rows: Vec<GhRow> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let pos = rep_spectrum(params, n, m)?;
            let neg = rep_spectrum(params, -n, m)?;
            let min_abs = pos.min_trusted_abs().min(neg.min_trusted_abs());
            let top = pos
                .eigenvalues
                .iter()
                .chain(&neg.eigenvalues)
                .map(|x| x.abs())
                .fold(0.0, f64::max);
            Ok(GhRow {
                n,
                min_abs,
                near_zero: min_abs <= 1e-8 * top,
                trusted: pos.trusted,
                raw: pos.eigenvalues.len(),
            })
        })
        .collect::<Result<_, CohomologyError>>()?;

    let (fit_c, fit_exponent) = power_fit(&rows);
    let monotone = rows.windows(2).all(|w| w[1].min_abs >= 0.95 * w[0].min_abs);
    let degenerate_beta = x2[2] == 0.0;
    let truncation_drift = if n_max >= 1 {
        let a = rep_spectrum(params, 1, m)?.min_trusted_abs();
        let b = rep_spectrum(params, 1, 2 * m)?.min_trusted_abs();
        if a > 0.0 {
            (a - b).abs() / a
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    let near_kernel_modes = usize::from(toral_near_zero) + rows.iter().filter(|r| r.near_zero).count();
    Ok(GhReport {
        convention: CONVENTION,
        toral_min,
        toral_argmin,
        toral_bound,
        toral_near_zero,
        rows,
        fit_c,
        fit_exponent,
        monotone,
        degenerate_beta,
        truncation_drift,
        near_kernel_modes,
        certified: near_kernel_modes == 0 && !degenerate_beta,
    })
}

/// Min over `0 < |k|_inf <= K` of `(2 pi k.x1)^2 + (2 pi k.x2)^2` on the
/// Y-components, with a deterministic argmin.
fn toral_symbol_min(x1: &[f64], x2: &[f64], k_max: usize) -> (f64, Vec<i64>) {
    let k = k_max as i64;
    let mut best = (f64::INFINITY, vec![0, 0]);
    for k1 in 0..=k {
        for k2 in -k..=k {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            let a = TAU * (k1 as f64 * x1[0] + k2 as f64 * x1[1]);
            let b = TAU * (k1 as f64 * x2[0] + k2 as f64 * x2[1]);
            let v = a * a + b * b;
            if v < best.0 {
                best = (v, vec![k1, k2]);
            }
        }
    }
    best
}

/// Least-squares fit of `log min_abs = log c + d log n`.
fn power_fit(rows: &[GhRow]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.min_abs > 0.0)
        .map(|r| ((r.n as f64).ln(), r.min_abs.ln()))
        .collect();
    if pts.len() < 2 {
        return (pts.first().map_or(0.0, |p| p.1.exp()), 0.0);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let d = sxy / sxx;
    ((my - d * mx).exp(), d)
}

/// Number of independent modes killed by both `X1` and `X2` within `tol`
/// (relative), counted over toral frequencies `|k|_inf <= K` and over the
/// compressions to `m` Hermite functions of `pi_n`, `1 <= |n| <= N`.
pub fn joint_kernel_dim(params: &ActionParams, n_max: i64, m: usize, k_max: usize, tol: f64) -> Result<usize, CohomologyError> {
    check_heisenberg(params)?;
    let x1 = params.x1();
    let x2 = params.x2();
    let scale = TAU * x1.iter().chain(&x2).map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let k = k_max as i64;
    let mut count = 0;
    for k1 in -k..=k {
        for k2 in -k..=k {
            let a = TAU * (k1 as f64 * x1[0] + k2 as f64 * x1[1]);
            let b = TAU * (k1 as f64 * x2[0] + k2 as f64 * x2[1]);
            if a.abs() <= tol * scale && b.abs() <= tol * scale {
                count += 1;
            }
        }
    }
    let reps: usize = (1..=n_max)
        .into_par_iter()
        .flat_map(|n| [n, -n])
        .map(|n| {
            let b = rep_matrix(&coeffs3(&x1), n, m);
            let c = rep_matrix(&coeffs3(&x2), n, m);
            let mut s = DMatrix::from_element(2 * (m + 1), m, ZERO);
            s.view_mut((0, 0), (m + 1, m)).copy_from(&b);
            s.view_mut((m + 1, 0), (m + 1, m)).copy_from(&c);
            let sv = s.singular_values();
            let top = sv.iter().copied().fold(0.0, f64::max);
            sv.iter().filter(|&&x| x <= tol * top.max(scale)).count()
        })
        .sum();
    Ok(count + reps)
}

/// Solves `L h = s` mode by mode: division by the toral symbol, and a
/// Hermitian solve of the compressed Laplacian with `LAPLACIAN_HEADROOM`
/// extra Hermite modes in each `pi_n`.
pub fn laplacian_solve(params: &ActionParams, s: &NilFunction, tol: f64) -> Result<NilFunction, CohomologyError> {
    check_heisenberg(params)?;
    let avg = s.average();
    if avg.norm() > tol * s.max_coeff().max(f64::MIN_POSITIVE) && avg.norm() > 0.0 {
        return Err(CohomologyError::NonzeroAverage { f_triv: avg, g_triv: ZERO });
    }
    let x1 = params.x1();
    let x2 = params.x2();
    let symbol = |k: &[i64]| {
        let a = TAU * (k[0] as f64 * x1[0] + k[1] as f64 * x1[1]);
        let b = TAU * (k[0] as f64 * x2[0] + k[1] as f64 * x2[1]);
        -(a * a + b * b)
    };
    let mut bad = None;
    s.toral.for_each_mode(|k, c| {
        if c != ZERO && k != [0, 0] && bad.is_none() && torus_is_resonant(k, &x1[..2]) && torus_is_resonant(k, &x2[..2]) {
            bad = Some(k.to_vec());
        }
    });
    if let Some(k) = bad {
        return Err(CohomologyError::Resonance(k));
    }
    let toral = s.toral.map_modes(|k, c| {
        if c == ZERO || k == [0, 0] {
            ZERO
        } else {
            c / symbol(k)
        }
    });
    let mut h = NilFunction::from_toral(toral);
    let solved: Vec<_> = s
        .reps
        .par_iter()
        .map(|(key, v)| Ok((*key, solve_rep_laplacian(params, key.n, v)?)))
        .collect::<Result<_, CohomologyError>>()?;
    h.reps.extend(solved);
    Ok(h)
}

/// Largest Hermite length tried by the banded solve.
pub const LAPLACIAN_MAX_LEN: usize = 1 << 15;

/// Column `j` of a generator in `pi_n`: entries at rows `j - 1`, `j`, `j + 1`.
fn ladder_column(x: &[f64; 3], n: i64, j: usize) -> [Complex64; 3] {
    let t = TAU * n as f64;
    let up = ((j + 1) as f64 / 2.0).sqrt();
    let down = (j as f64 / 2.0).sqrt();
    [
        Complex64::new(x[0], x[1] * t) * down,
        Complex64::new(0.0, x[2] * t),
        Complex64::new(-x[0], x[1] * t) * up,
    ]
}

/// Band of `X1^2 + X2^2` in `pi_n` on the first `m` Hermite functions:
/// `band[j][d]` is the entry at row `j + d - 2`, column `j`.
fn laplacian_band(params: &ActionParams, n: i64, m: usize) -> Vec<[Complex64; 5]> {
    let gens = [coeffs3(&params.x1()), coeffs3(&params.x2())];
    (0..m)
        .map(|j| {
            let mut col = [ZERO; 5];
            for x in &gens {
                let first = ladder_column(x, n, j);
                for (a, &c) in first.iter().enumerate() {
                    let Some(k) = (j + a).checked_sub(1) else { continue };
                    for (b, &d) in ladder_column(x, n, k).iter().enumerate() {
                        if let Some(row) = (k + b).checked_sub(1) {
                            if row + 2 >= j && row < j + 3 {
                                col[row + 2 - j] += d * c;
                            }
                        }
                    }
                }
            }
            col
        })
        .collect()
}

/// Gaussian elimination without pivoting on a pentadiagonal system given by
/// columns; the matrix is Hermitian definite up to sign.
fn solve_band(band: &[[Complex64; 5]], rhs: &[Complex64]) -> Option<Vec<Complex64>> {
    let m = band.len();
    let mut a = vec![[ZERO; 5]; m];
    // row-major band: a[i][d] = entry at column i + d - 2
    for (j, col) in band.iter().enumerate() {
        for (d, &v) in col.iter().enumerate() {
            if let Some(i) = (j + d).checked_sub(2) {
                if i < m {
                    a[i][4 - d] = v;
                }
            }
        }
    }
    let mut y = rhs.to_vec();
    y.resize(m, ZERO);
    for i in 0..m {
        let p = a[i][2];
        if p.norm() == 0.0 || !p.is_finite() {
            return None;
        }
        for r in 1..=2 {
            if i + r >= m {
                break;
            }
            let f = a[i + r][2 - r] / p;
            if f == ZERO {
                continue;
            }
            for c in 0..=2 {
                let src = a[i][2 + c];
                if c + 2 - r <= 4 {
                    a[i + r][2 - r + c] -= f * src;
                }
            }
            y[i + r] = y[i + r] - f * y[i];
        }
    }
    for i in (0..m).rev() {
        let mut acc = y[i];
        for c in 1..=2 {
            if i + c < m {
                acc -= a[i][2 + c] * y[i + c];
            }
        }
        y[i] = acc / a[i][2];
    }
    Some(y)
}

/// Solves the Laplacian in `pi_n`, doubling the Hermite length until the
/// solution's tail is below roundoff; trailing negligible coefficients are
/// dropped.
fn solve_rep_laplacian(params: &ActionParams, n: i64, v: &[Complex64]) -> Result<Vec<Complex64>, CohomologyError> {
    let mut m = v.len() + LAPLACIAN_HEADROOM;
    loop {
        let band = laplacian_band(params, n, m);
        let mut h = solve_band(&band, v).ok_or(CohomologyError::Eigen(n))?;
        let top = h.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tail = h[m - 4..].iter().map(|c| c.norm()).fold(0.0, f64::max);
        if tail <= 1e-15 * top || m >= LAPLACIAN_MAX_LEN {
            if tail > 1e-15 * top {
                log::warn!("laplacian solve in pi_{n}: tail {:.2e} at length {m}", tail / top);
            }
            while h.len() > v.len() && h.last().is_some_and(|c| c.norm() <= 1e-17 * top) {
                h.pop();
            }
            return Ok(h);
        }
        m = (2 * m).min(LAPLACIAN_MAX_LEN);
    }
}

fn torus_is_resonant(k: &[i64], a: &[f64]) -> bool {
    let d: f64 = k.iter().zip(a).map(|(&x, y)| x as f64 * y).sum();
    let kn: f64 = k.iter().map(|&x| (x as f64).abs()).sum();
    let an = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
    d.abs() <= 1e-14 * (1.0 + kn * an)
}

/// The Laplacian-based splitting: `h` solves `L h = delta1 w`, the error
/// part is close to `(X2 h, -X1 h)`, and the coboundary part comes from the
/// remainder.
#[derive(Clone, Debug)]
pub struct LaplacianSplit {
    pub lap_h: NilFunction,
    pub split: SplittingResult,
    /// Largest coefficient of `(f_err, g_err) - (X2 h, -X1 h)`.
    pub leak: f64,
}

pub fn laplacian_split(params: &ActionParams, w: &Cochain1, witnesses: &Witnesses) -> Result<LaplacianSplit, CohomologyError> {
    check_heisenberg(params)?;
    let mu = params.mu;
    let p0 = frame0(params);
    let w0 = w.to_frame0(mu);
    let phi = delta1(&p0, &w0);
    let lap_h = laplacian_solve(&p0, &phi, 1e-9)?;
    let f_tilde = apply_x2(&p0, &lap_h);
    let g_tilde = apply_x1(&p0, &lap_h).scale(Complex64::new(-1.0, 0.0));
    let rest = Cochain1::new(w0.f.sub(&f_tilde), w0.g.sub(&g_tilde));
    let inner = delta1_star_split(&p0, &rest, witnesses)?;
    // fold everything that is not coboundary or constant into the error part
    let d = delta0(&p0, &inner.h);
    let k = w.f.toral.truncation();
    let f_err = w0.f.sub(&d.f).sub(&NilFunction::constant(k, inner.f_triv));
    let g_err = w0.g.sub(&d.g).sub(&NilFunction::constant(k, inner.g_triv));
    let leak = f_err.sub(&f_tilde).max_coeff().max(g_err.sub(&g_tilde).max_coeff());
    let (g_err, g_triv) = if mu != 0.0 {
        (g_err.add(&f_err.scale(Complex64::new(mu, 0.0))), inner.g_triv + inner.f_triv * mu)
    } else {
        (g_err, inner.g_triv)
    };
    let r = witnesses.r;
    let rs = r + witnesses.sigma;
    let den_e = nil_sobolev_norm(&phi, rs);
    let err_norm = nil_sobolev_norm(&f_err, r).max(nil_sobolev_norm(&g_err, r));
    Ok(LaplacianSplit {
        lap_h,
        leak,
        split: SplittingResult {
            h_ratio: inner.h_ratio,
            err_ratio: if den_e > 0.0 { err_norm / den_e } else { 0.0 },
            h: inner.h,
            f_err,
            g_err,
            f_triv: inner.f_triv,
            g_triv,
        },
    })
}

/// A vector-field-valued 1-cochain: coefficients on `(Y1.., Z..)` of the
/// values on `X1` and `X2`.
#[derive(Clone, Debug, PartialEq)]
pub struct VfCochain {
    pub x1: Vec<NilFunction>,
    pub x2: Vec<NilFunction>,
}

impl VfCochain {
    pub fn zeros(dim: usize, k: usize) -> Self {
        Self {
            x1: vec![NilFunction::zeros(k); dim],
            x2: vec![NilFunction::zeros(k); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.x1.len()
    }

    pub fn truncation(&self) -> usize {
        self.x1
            .iter()
            .chain(&self.x2)
            .map(|f| f.toral.truncation())
            .max()
            .unwrap_or(0)
    }

    /// Constant cochain with the given values.
    pub fn constant(c: &ConstantCocycle, k: usize) -> Self {
        let lift = |v: Vec<f64>| v.into_iter().map(|x| NilFunction::constant(k, Complex64::new(x, 0.0))).collect();
        Self {
            x1: lift(c.on_x1()),
            x2: lift(c.on_x2()),
        }
    }

    fn zip(&self, o: &Self, f: impl Fn(&NilFunction, &NilFunction) -> NilFunction) -> Self {
        Self {
            x1: self.x1.iter().zip(&o.x1).map(|(a, b)| f(a, b)).collect(),
            x2: self.x2.iter().zip(&o.x2).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip(o, NilFunction::add)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.zip(o, NilFunction::sub)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            x1: self.x1.iter().map(|f| f.scale(s)).collect(),
            x2: self.x2.iter().map(|f| f.scale(s)).collect(),
        }
    }

    /// Scalar cochain of component `i`.
    pub fn component(&self, i: usize) -> Cochain1 {
        Cochain1::new(self.x1[i].clone(), self.x2[i].clone())
    }

    pub fn from_components(parts: Vec<Cochain1>) -> Self {
        let (x1, x2) = parts.into_iter().map(|c| (c.f, c.g)).unzip();
        Self { x1, x2 }
    }

    /// Real parts of the averages as a constant cocycle of an algebra with
    /// `q` non-central generators.
    pub fn averages(&self, q: usize) -> ConstantCocycle {
        let av = |v: &[NilFunction]| v.iter().map(|f| f.average().re).collect::<Vec<f64>>();
        let a = av(&self.x1);
        let b = av(&self.x2);
        ConstantCocycle {
            a1: a[..q].to_vec(),
            b1: a[q..].to_vec(),
            a2: b[..q].to_vec(),
            b2: b[q..].to_vec(),
        }
    }

    /// `(sum_i max(|Omega(X1)_i|_r, |Omega(X2)_i|_r)^2)^{1/2}`.
    pub fn norm(&self, r: f64) -> f64 {
        (0..self.dim()).map(|i| self.component(i).norm(r).powi(2)).sum::<f64>().sqrt()
    }

    pub fn max_coeff(&self) -> f64 {
        self.x1.iter().chain(&self.x2).map(NilFunction::max_coeff).fold(0.0, f64::max)
    }

    fn to_frame0(&self, mu: f64) -> Self {
        Self::from_components((0..self.dim()).map(|i| self.component(i).to_frame0(mu)).collect())
    }
}

/// `Lie derivative of H = sum h_a E_a along a constant field X`:
/// `sum (X h_a) E_a + sum_i h_i [X, Y_i]`.
fn vf_lie(alg: &TwoStepAlgebra, x: &[f64], h: &[NilFunction]) -> Vec<NilFunction> {
    let (q, p) = (alg.q(), alg.p());
    let mut out: Vec<NilFunction> = h.iter().map(|ha| apply_element(&coeffs3(x), ha)).collect();
    for j in 0..p {
        for i in 0..q {
            let c: f64 = (0..q).map(|l| x[l] * num_traits::ToPrimitive::to_f64(alg.structure_constant(l, i, j)).unwrap_or(0.0)).sum();
            if c != 0.0 {
                out[q + j] = out[q + j].add(&h[i].scale(Complex64::new(c, 0.0)));
            }
        }
    }
    out
}

/// `H -> ([X1, H], [X2, H])` on vector fields with function coefficients.
pub fn vf_delta0(alg: &TwoStepAlgebra, params: &ActionParams, h: &[NilFunction]) -> Result<VfCochain, CohomologyError> {
    check_heisenberg(params)?;
    if alg.q() != 2 || alg.p() != 1 || h.len() != 3 {
        return Err(CohomologyError::NotHeisenberg);
    }
    Ok(VfCochain {
        x1: vf_lie(alg, &params.x1(), h),
        x2: vf_lie(alg, &params.x2(), h),
    })
}

#[derive(Clone, Debug)]
pub struct VfSolution {
    /// Coefficients of `H` on `(Y1.., Z..)`.
    pub h: Vec<NilFunction>,
    /// Projection of the constant part onto the cohomology representatives.
    pub residual: ConstantCocycle,
    /// Coordinates of `residual` on the representatives.
    pub coords: Vec<f64>,
}

/// Triangular solve of `vf_delta0(H) = Omega - residual`: the Y-coefficient
/// equations first, then the Z-coefficient equations with the bracket terms
/// of the Y-solution moved to the right-hand side. The constant part is
/// split into representatives plus a constant coboundary.
pub fn vf_coboundary_solve(
    alg: &TwoStepAlgebra,
    params: &ActionParams,
    omega: &VfCochain,
    witnesses: &Witnesses,
) -> Result<VfSolution, CohomologyError> {
    check_heisenberg(params)?;
    let (q, p) = (alg.q(), alg.p());
    if q != 2 || p != 1 || omega.dim() != q + p {
        return Err(CohomologyError::NotHeisenberg);
    }
    let p0 = frame0(params);
    let w0 = omega.to_frame0(params.mu);
    let x1 = p0.x1();
    let mut h: Vec<NilFunction> = Vec::with_capacity(q + p);
    for i in 0..q {
        h.push(delta1_star_split(&p0, &w0.component(i).zero_avg(), witnesses)?.h);
    }
    for j in 0..p {
        let mut f = w0.x1[q + j].clone();
        for i in 0..q {
            let c: f64 = (0..q).map(|l| x1[l] * num_traits::ToPrimitive::to_f64(alg.structure_constant(l, i, j)).unwrap_or(0.0)).sum();
            if c != 0.0 {
                f = f.sub(&h[i].scale(Complex64::new(c, 0.0)));
            }
        }
        let part = Cochain1::new(f, w0.x2[q + j].clone()).zero_avg();
        h.push(delta1_star_split(&p0, &part, witnesses)?.h);
    }
    let cohom = algebra::const_cohomology_basis(alg, params)?;
    let (coords, hc) = algebra::decompose_constant(alg, params, &cohom, &omega.averages(q))?;
    let k = omega.truncation();
    for (ha, c) in h.iter_mut().zip(&hc) {
        *ha = ha.add(&NilFunction::constant(k, Complex64::new(*c, 0.0)));
    }
    let mut residual = ConstantCocycle::zero(q, p);
    for (t, rep) in coords.iter().zip(&cohom.representatives) {
        let v: Vec<f64> = residual.to_vec().iter().zip(rep.to_vec()).map(|(a, b)| a + t * b).collect();
        residual = ConstantCocycle::from_vec(&v, q, p);
    }
    Ok(VfSolution { h, residual, coords })
}

impl Cochain1 {
    fn zero_avg(&self) -> Self {
        Self::new(self.f.zero_average(), self.g.zero_average())
    }
}
