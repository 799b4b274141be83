//! Band-limited functions on the Heisenberg nilmanifold in the Kirillov
//! picture: a Fourier series on the associated 2-torus plus, for each
//! central frequency `n != 0`, Hermite coefficient vectors in the
//! Schrodinger model of `pi_n`.
//!
//! Convention: `dpi(Y1) = d/dx`, `dpi(Y2) = 2 pi i n x`, `dpi(Z) = 2 pi i n`,
//! with `x` and `d/dx` acting on Hermite functions through the ladder
//! recurrences.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::torus::{random_torus_function, TorusFunction};

const TAU: f64 = 2.0 * PI;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NilError {
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error("representation index n = 0 is the toral part")]
    ToralIndex,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Basis of the Heisenberg algebra.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Y1,
    Y2,
    Z,
}

impl std::str::FromStr for Generator {
    type Err = NilError;
    fn from_str(s: &str) -> Result<Self, NilError> {
        match s {
            "Y1" => Ok(Self::Y1),
            "Y2" => Ok(Self::Y2),
            "Z" => Ok(Self::Z),
            _ => Err(NilError::UnknownGenerator(s.to_string())),
        }
    }
}

/// `x h_j` in the Hermite basis; output has length `len + 1`.
pub fn hermite_x(v: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; v.len() + 1];
    for (j, &c) in v.iter().enumerate() {
        out[j + 1] += c * ((j + 1) as f64 / 2.0).sqrt();
        if j > 0 {
            out[j - 1] += c * (j as f64 / 2.0).sqrt();
        }
    }
    out
}

/// `d/dx h_j` in the Hermite basis; output has length `len + 1`.
pub fn hermite_d(v: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; v.len() + 1];
    for (j, &c) in v.iter().enumerate() {
        out[j + 1] -= c * ((j + 1) as f64 / 2.0).sqrt();
        if j > 0 {
            out[j - 1] += c * (j as f64 / 2.0).sqrt();
        }
    }
    out
}

/// `dpi_n(gen) v`. Y-generators grow the support by one.
pub fn dpi_apply(gen: Generator, n: i64, v: &[Complex64]) -> Vec<Complex64> {
    let s = Complex64::new(0.0, TAU * n as f64);
    match gen {
        Generator::Y1 => hermite_d(v),
        Generator::Y2 => hermite_x(v).into_iter().map(|c| c * s).collect(),
        Generator::Z => v.iter().map(|&c| c * s).collect(),
    }
}

/// Matrix of `dpi_n(c1 Y1 + c2 Y2 + c3 Z)` from the first `m` Hermite
/// functions to the first `m + 1`.
pub fn rep_matrix(coeffs: &[f64; 3], n: i64, m: usize) -> DMatrix<Complex64> {
    let s = TAU * n as f64;
    let mut a = DMatrix::from_element(m + 1, m, ZERO);
    for j in 0..m {
        let up = ((j + 1) as f64 / 2.0).sqrt();
        let down = (j as f64 / 2.0).sqrt();
        a[(j + 1, j)] = Complex64::new(-coeffs[0] * up, coeffs[1] * s * up);
        if j > 0 {
            a[(j - 1, j)] = Complex64::new(coeffs[0] * down, coeffs[1] * s * down);
        }
        a[(j, j)] = Complex64::new(0.0, coeffs[2] * s);
    }
    a
}

/// Representation component index: central frequency and copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RepKey {
    pub n: i64,
    pub copy: usize,
}

impl RepKey {
    pub fn new(n: i64, copy: usize) -> Self {
        Self { n, copy }
    }
}

/// Sobolev weight `1 + n^2 + |n|(2j + 1)` of Hermite mode `j` in `pi_n`.
pub fn rep_weight(n: i64, j: usize) -> f64 {
    let a = n.unsigned_abs() as f64;
    1.0 + a * a + a * (2 * j + 1) as f64
}

/// Truncation bounds: toral `|k|_inf <= k`, `1 <= |n| <= n`, Hermite
/// index `< m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SupportBounds {
    pub k: usize,
    pub n: i64,
    pub m: usize,
}

/// A band-limited function on the Heisenberg nilmanifold.
#[derive(Clone, Debug, PartialEq)]
pub struct NilFunction {
    pub toral: TorusFunction,
    pub reps: BTreeMap<RepKey, Vec<Complex64>>,
}

impl NilFunction {
    pub fn zeros(k: usize) -> Self {
        Self {
            toral: TorusFunction::zeros(2, k),
            reps: BTreeMap::new(),
        }
    }

    pub fn constant(k: usize, c: Complex64) -> Self {
        Self {
            toral: TorusFunction::constant(2, k, c),
            reps: BTreeMap::new(),
        }
    }

    pub fn from_toral(toral: TorusFunction) -> Self {
        assert_eq!(toral.dim(), 2, "the associated torus is two-dimensional");
        Self {
            toral,
            reps: BTreeMap::new(),
        }
    }

    /// Single Hermite mode `c h_j` in copy 0 of `pi_n`.
    pub fn rep_mode(k: usize, n: i64, j: usize, c: Complex64) -> Self {
        let mut f = Self::zeros(k);
        let mut v = vec![ZERO; j + 1];
        v[j] = c;
        f.reps.insert(RepKey::new(n, 0), v);
        f
    }

    pub fn rep(&self, n: i64, copy: usize) -> Option<&Vec<Complex64>> {
        self.reps.get(&RepKey::new(n, copy))
    }

    pub fn average(&self) -> Complex64 {
        self.toral.average()
    }

    /// Largest `|n|` carried.
    pub fn max_n(&self) -> i64 {
        self.reps.keys().map(|k| k.n.abs()).max().unwrap_or(0)
    }

    /// Longest Hermite vector carried.
    pub fn hermite_len(&self) -> usize {
        self.reps.values().map(Vec::len).max().unwrap_or(0)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        let toral = {
            let t = self.toral.truncation().max(other.toral.truncation());
            let a = self.toral.resized(t);
            let b = other.toral.resized(t);
            let mut out = TorusFunction::zeros(2, t);
            a.for_each_mode(|k, c| out.set_coeff(k, f(c, b.coeff(k))));
            out
        };
        let mut reps = BTreeMap::new();
        for key in self.reps.keys().chain(other.reps.keys()) {
            if reps.contains_key(key) {
                continue;
            }
            let empty = Vec::new();
            let a = self.reps.get(key).unwrap_or(&empty);
            let b = other.reps.get(key).unwrap_or(&empty);
            let len = a.len().max(b.len());
            let v = (0..len)
                .map(|j| f(a.get(j).copied().unwrap_or(ZERO), b.get(j).copied().unwrap_or(ZERO)))
                .collect();
            reps.insert(*key, v);
        }
        Self { toral, reps }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            toral: self.toral.scale(s),
            reps: self.reps.iter().map(|(k, v)| (*k, v.iter().map(|&c| c * s).collect())).collect(),
        }
    }

    /// Applies `f(n, v)` to every representation component.
    pub fn map_reps(&self, f: impl Fn(i64, &[Complex64]) -> Vec<Complex64>) -> BTreeMap<RepKey, Vec<Complex64>> {
        self.reps.iter().map(|(k, v)| (*k, f(k.n, v))).collect()
    }

    /// Only the toral part.
    pub fn toral_part(&self) -> Self {
        Self::from_toral(self.toral.clone())
    }

    /// Only the representation parts.
    pub fn rep_part(&self) -> Self {
        Self {
            toral: TorusFunction::zeros(2, self.toral.truncation()),
            reps: self.reps.clone(),
        }
    }

    pub fn zero_average(&self) -> Self {
        Self {
            toral: self.toral.zero_average(),
            reps: self.reps.clone(),
        }
    }

    /// Restriction to the given bounds; toral modes are cut in sup-norm.
    pub fn truncated(&self, b: &SupportBounds) -> Self {
        Self {
            toral: self.toral.resized(b.k),
            reps: self
                .reps
                .iter()
                .filter(|(k, _)| k.n.abs() <= b.n)
                .map(|(k, v)| (*k, v.iter().take(b.m).copied().collect()))
                .collect(),
        }
    }

    pub fn max_coeff(&self) -> f64 {
        self.reps
            .values()
            .flatten()
            .map(|c| c.norm())
            .fold(self.toral.max_coeff(), f64::max)
    }

    /// `|F_{pi_n}|_r` summed over the copies of `pi_n`.
    pub fn rep_norm(&self, n: i64, r: f64) -> f64 {
        self.reps
            .iter()
            .filter(|(k, _)| k.n == n)
            .map(|(_, v)| rep_vec_norm_sq(n, v, r))
            .sum::<f64>()
            .sqrt()
    }

    /// Text form: one `toral k1 k2 re im` or `rep n m j re im` line per
    /// nonzero coefficient.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.toral.for_each_mode(|k, c| {
            if c != ZERO {
                let _ = writeln!(s, "toral {} {} {:e} {:e}", k[0], k[1], c.re, c.im);
            }
        });
        for (key, v) in &self.reps {
            for (j, c) in v.iter().enumerate() {
                if *c != ZERO {
                    let _ = writeln!(s, "rep {} {} {} {:e} {:e}", key.n, key.copy, j, c.re, c.im);
                }
            }
        }
        s
    }

    /// Inverse of [`to_text`](Self::to_text). Rejects coefficients outside
    /// `bounds` and copy indices `>= |n|`.
    pub fn parse(text: &str, bounds: &SupportBounds) -> Result<Self, NilError> {
        let mut f = Self::zeros(bounds.k);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: &str| NilError::Parse { line, msg: msg.to_string() };
            let tok: Vec<&str> = body.split_whitespace().collect();
            let int = |s: &str| s.parse::<i64>().map_err(|_| err(&format!("bad integer {s:?}")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number {s:?}")));
            match tok.as_slice() {
                ["toral", k1, k2, re, im] => {
                    let k = [int(k1)?, int(k2)?];
                    if k.iter().any(|x| x.unsigned_abs() as usize > bounds.k) {
                        return Err(err("toral frequency outside bounds"));
                    }
                    f.toral.set_coeff(&k, Complex64::new(real(re)?, real(im)?));
                }
                ["rep", n, m, j, re, im] => {
                    let n = int(n)?;
                    let m = int(m)?;
                    let j = int(j)?;
                    if n == 0 || n.abs() > bounds.n {
                        return Err(err("central frequency outside bounds"));
                    }
                    if m < 0 || m >= n.abs() {
                        return Err(err("copy index exceeds multiplicity"));
                    }
                    if j < 0 || j as usize >= bounds.m {
                        return Err(err("Hermite index outside bounds"));
                    }
                    let v = f.reps.entry(RepKey::new(n, m as usize)).or_default();
                    if v.len() <= j as usize {
                        v.resize(j as usize + 1, ZERO);
                    }
                    v[j as usize] = Complex64::new(real(re)?, real(im)?);
                }
                _ => return Err(err("expected `toral k1 k2 re im` or `rep n m j re im`")),
            }
        }
        Ok(f)
    }
}

fn rep_vec_norm_sq(n: i64, v: &[Complex64], r: f64) -> f64 {
    v.iter()
        .enumerate()
        .map(|(j, c)| c.norm_sqr() * rep_weight(n, j).powf(r))
        .sum()
}

/// Action of `c1 Y1 + c2 Y2 + c3 Z`: on the torus `Y_i` is `d/dx_i` and `Z`
/// vanishes.
pub fn apply_element(coeffs: &[f64; 3], f: &NilFunction) -> NilFunction {
    let toral = f.toral.directional_derivative(&coeffs[..2]);
    let reps = f.map_reps(|n, v| {
        let s = Complex64::new(0.0, TAU * n as f64);
        let mut out: Vec<Complex64> = if coeffs[0] != 0.0 || coeffs[1] != 0.0 {
            let d = hermite_d(v);
            let x = hermite_x(v);
            d.iter().zip(&x).map(|(&a, &b)| a * coeffs[0] + b * s * coeffs[1]).collect()
        } else {
            vec![ZERO; v.len()]
        };
        for (o, &c) in out.iter_mut().zip(v) {
            *o += c * s * coeffs[2];
        }
        out
    });
    NilFunction { toral, reps }
}

pub fn apply_generator(gen: Generator, f: &NilFunction) -> NilFunction {
    let c = match gen {
        Generator::Y1 => [1.0, 0.0, 0.0],
        Generator::Y2 => [0.0, 1.0, 0.0],
        Generator::Z => [0.0, 0.0, 1.0],
    };
    apply_element(&c, f)
}

fn heisenberg_coeffs(v: &[f64]) -> [f64; 3] {
    assert_eq!(v.len(), 3, "the analytic model is the Heisenberg algebra (q = 2, p = 1)");
    [v[0], v[1], v[2]]
}

/// `X1 = sum (alpha_i + a_i) Y_i`.
pub fn apply_x1(params: &crate::algebra::ActionParams, f: &NilFunction) -> NilFunction {
    apply_element(&heisenberg_coeffs(&params.x1()), f)
}

/// `X2 = mu sum alpha_i Y_i + (beta + b) Z`.
pub fn apply_x2(params: &crate::algebra::ActionParams, f: &NilFunction) -> NilFunction {
    apply_element(&heisenberg_coeffs(&params.x2()), f)
}

/// Toral modes weighted by `(1 + |k|^2)^{r/2}`, Hermite mode `j` of `pi_n`
/// by `(1 + n^2 + |n|(2j+1))^{r/2}`.
pub fn nil_sobolev_norm(f: &NilFunction, r: f64) -> f64 {
    let t = f.toral.sobolev_norm(r).powi(2);
    let reps: f64 = f.reps.iter().map(|(k, v)| rep_vec_norm_sq(k.n, v, r)).sum();
    (t + reps).sqrt()
}

/// `|pi_n| = |n|`: distance from the origin to the coadjoint orbit
/// `{lambda(Z) = n}`.
pub fn pi_norm(n: i64) -> Result<f64, NilError> {
    if n == 0 {
        return Err(NilError::ToralIndex);
    }
    Ok(n.unsigned_abs() as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct CgReport {
    pub s: f64,
    pub k: f64,
    pub n_max: i64,
    /// Max over corpus and `n` of `|F_n|_s |pi_n|^k / |F|_{s+k}`; `None`
    /// when no member has representation components.
    pub max_ratio: Option<f64>,
    pub argmax_n: Option<i64>,
    /// `(N', sum_{1 <= |n| <= N'} |n|^{-k})` for `N'` doubling up to `N`.
    pub partial_sums: Vec<(i64, f64)>,
}

/// Measures the Corwin-Greenleaf decay ratio on a corpus restricted to
/// `|n| <= n_max`.
pub fn cg_decay_report(corpus: &[NilFunction], s: f64, k: f64, n_max: i64) -> Result<CgReport, NilError> {
    if corpus.is_empty() {
        return Err(NilError::EmptyCorpus);
    }
    let mut best: Option<(f64, i64)> = None;
    for f in corpus {
        let mut g = f.clone();
        g.reps.retain(|key, _| key.n.abs() <= n_max);
        let den = nil_sobolev_norm(&g, s + k);
        if den == 0.0 {
            continue;
        }
        let ns: std::collections::BTreeSet<i64> = g.reps.keys().map(|key| key.n).collect();
        for n in ns {
            let ratio = g.rep_norm(n, s) * (n.unsigned_abs() as f64).powf(k) / den;
            if best.is_none_or(|(b, _)| ratio > b) {
                best = Some((ratio, n));
            }
        }
    }
    let mut partial_sums = Vec::new();
    let mut cut = 1;
    loop {
        let cut_now = cut.min(n_max.max(1));
        let sum: f64 = (1..=cut_now).map(|n| 2.0 * (n as f64).powf(-k)).sum();
        partial_sums.push((cut_now, sum));
        if cut_now >= n_max {
            break;
        }
        cut *= 2;
    }
    Ok(CgReport {
        s,
        k,
        n_max,
        max_ratio: best.map(|b| b.0),
        argmax_n: best.map(|b| b.1),
        partial_sums,
    })
}

/// Relative drift of the measured ratio between `N` and `2N`.
pub fn cg_plateau_drift(lo: &CgReport, hi: &CgReport) -> Option<f64> {
    match (lo.max_ratio, hi.max_ratio) {
        (Some(a), Some(b)) if a > 0.0 => Some((b - a).abs() / a),
        _ => None,
    }
}

/// Random function with toral and representation parts, amplitudes
/// decaying like `weight^{-decay/2}`. One copy per `n`; the component at
/// `-n` is the conjugate of the one at `n`, as for real functions.
pub fn random_nil_function<R: Rng>(rng: &mut R, bounds: &SupportBounds, decay: f64, zero_average: bool) -> NilFunction {
    let mut f = NilFunction::from_toral(random_torus_function(rng, 2, bounds.k, decay, zero_average));
    for n in 1..=bounds.n {
        let v: Vec<Complex64> = (0..bounds.m)
            .map(|j| {
                let amp = rep_weight(n, j).powf(-decay / 2.0);
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * amp
            })
            .collect();
        f.reps.insert(RepKey::new(-n, 0), v.iter().map(|c| c.conj()).collect());
        f.reps.insert(RepKey::new(n, 0), v);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ActionParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Hermite functions from the explicit physicists' polynomials.
    fn hermite_fn(j: usize, x: f64) -> f64 {
        let h = match j {
            0 => 1.0,
            1 => 2.0 * x,
            2 => 4.0 * x * x - 2.0,
            3 => 8.0 * x.powi(3) - 12.0 * x,
            4 => 16.0 * x.powi(4) - 48.0 * x * x + 12.0,
            _ => unreachable!(),
        };
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0][j];
        h * (-x * x / 2.0).exp() / (2f64.powi(j as i32) * fact * PI.sqrt()).sqrt()
    }

    fn quad(f: impl Fn(f64) -> f64) -> f64 {
        let (a, n) = (12.0, 24_000);
        let h = 2.0 * a / n as f64;
        (0..=n).map(|i| f(-a + i as f64 * h)).sum::<f64>() * h
    }

    #[test]
    fn ladder_matches_quadrature() {
        for j in 0..4 {
            let mut e = vec![ZERO; j + 1];
            e[j] = c(1.0, 0.0);
            let xv = hermite_x(&e);
            let dv = hermite_d(&e);
            for i in 0..=4 {
                let xq = quad(|x| x * hermite_fn(j, x) * hermite_fn(i, x));
                let dq = quad(|x| {
                    let h = 1e-5;
                    (hermite_fn(j, x + h) - hermite_fn(j, x - h)) / (2.0 * h) * hermite_fn(i, x)
                });
                let xa = xv.get(i).map_or(0.0, |z| z.re);
                let da = dv.get(i).map_or(0.0, |z| z.re);
                assert!((xq - xa).abs() < 1e-9, "x: j={j} i={i}");
                assert!((dq - da).abs() < 1e-8, "d: j={j} i={i}");
            }
        }
        let h0 = [c(1.0, 0.0)];
        assert!((hermite_x(&h0)[1].re - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((hermite_d(&h0)[1].re + 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn central_action_is_scalar() {
        let v = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)];
        let out = dpi_apply(Generator::Z, 3, &v);
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b * c(0.0, TAU * 3.0)).norm() < 1e-14);
        }
        assert!(matches!("W".parse::<Generator>(), Err(NilError::UnknownGenerator(_))));
    }

    #[test]
    fn heisenberg_relation_on_interior_modes() {
        let m = 20;
        for n in [-3i64, 1, 4] {
            for j in 0..m {
                let mut e = vec![ZERO; j + 1];
                e[j] = c(1.0, 0.0);
                let y1y2 = dpi_apply(Generator::Y1, n, &dpi_apply(Generator::Y2, n, &e));
                let y2y1 = dpi_apply(Generator::Y2, n, &dpi_apply(Generator::Y1, n, &e));
                let z = dpi_apply(Generator::Z, n, &e);
                for i in 0..y1y2.len() {
                    let lhs = y1y2[i] - y2y1[i];
                    let rhs = z.get(i).copied().unwrap_or(ZERO);
                    assert!((lhs - rhs).norm() < 1e-12 * (1.0 + n.abs() as f64 * j as f64));
                }
            }
        }
    }

    #[test]
    fn generators_are_skew_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 15;
        let rv = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
            (0..m).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        for gen in [Generator::Y1, Generator::Y2, Generator::Z] {
            let u = rv(&mut rng);
            let v = rv(&mut rng);
            // zero the top entries so nothing leaves the truncation
            let trim = |mut w: Vec<Complex64>| {
                w[m - 1] = ZERO;
                w
            };
            let (u, v) = (trim(u), trim(v));
            let gu = dpi_apply(gen, 2, &u);
            let gv = dpi_apply(gen, 2, &v);
            let ip = |a: &[Complex64], b: &[Complex64]| -> Complex64 { a.iter().zip(b).map(|(x, y)| x * y.conj()).sum() };
            let lhs = ip(&gu, &v);
            let rhs = -ip(&u, &gv);
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn rep_matrix_agrees_with_ladder() {
        let coeffs = [0.7, -1.3, 0.4];
        let m = 9;
        let a = rep_matrix(&coeffs, -2, m);
        for j in 0..m {
            let mut e = vec![ZERO; m];
            e[j] = c(1.0, 0.0);
            let f = NilFunction {
                toral: TorusFunction::zeros(2, 0),
                reps: [(RepKey::new(-2, 0), e)].into_iter().collect(),
            };
            let out = apply_element(&coeffs, &f);
            let col = &out.reps[&RepKey::new(-2, 0)];
            for i in 0..=m {
                assert!((col[i] - a[(i, j)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn action_examples() {
        let p = ActionParams::heisenberg_golden();
        let one = NilFunction::constant(3, c(1.0, 0.0));
        assert_eq!(nil_sobolev_norm(&apply_x1(&p, &one), 0.0), 0.0);
        assert_eq!(nil_sobolev_norm(&apply_x2(&p, &one), 0.0), 0.0);
        let f = NilFunction::rep_mode(3, 1, 0, c(1.0, 0.0));
        let x2f = apply_x2(&p, &f);
        assert!(nil_sobolev_norm(&x2f.sub(&f.scale(c(0.0, TAU))), 0.0) < 1e-14);
    }

    #[test]
    fn x1_and_x2_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = SupportBounds { k: 4, n: 3, m: 10 };
        let mut p = ActionParams::heisenberg_golden();
        // with mu != 0 and a != 0 the pair is not abelian: [X1, X2] = mu (a1 alpha2 - a2 alpha1) Z
        for (mu, a) in [(0.0, vec![0.01, -0.02]), (0.7, vec![0.0, 0.0])] {
            p.mu = mu;
            p.a = a;
            let f = random_nil_function(&mut rng, &b, 1.0, false);
            let ab = apply_x1(&p, &apply_x2(&p, &f));
            let ba = apply_x2(&p, &apply_x1(&p, &f));
            let d = ab.sub(&ba);
            assert!(d.max_coeff() <= 1e-12 * ab.max_coeff().max(1.0), "mu={mu}");
        }
    }

    #[test]
    fn sobolev_examples() {
        let one = NilFunction::constant(2, c(1.0, 0.0));
        assert!((nil_sobolev_norm(&one, 3.0) - 1.0).abs() < 1e-15);
        let f = NilFunction::rep_mode(2, -3, 4, c(0.0, 2.0));
        let w: f64 = 1.0 + 9.0 + 3.0 * 9.0;
        assert!((nil_sobolev_norm(&f, 1.5) - 2.0 * w.powf(0.75)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_nil_function(&mut rng, &SupportBounds { k: 3, n: 2, m: 6 }, 0.0, false);
        let mut prev = 0.0;
        for r in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let v = nil_sobolev_norm(&g, r);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn pi_norm_examples() {
        assert_eq!(pi_norm(1), Ok(1.0));
        assert_eq!(pi_norm(-5), Ok(5.0));
        assert_eq!(pi_norm(0), Err(NilError::ToralIndex));
        // grid minimisation of |(y1, y2, n)| over the orbit hyperplane
        for n in [-4i64, 2, 7] {
            let mut best = f64::INFINITY;
            for a in -50..=50 {
                for b in -50..=50 {
                    let (y1, y2) = (a as f64 * 0.1, b as f64 * 0.1);
                    best = best.min((y1 * y1 + y2 * y2 + (n * n) as f64).sqrt());
                }
            }
            assert!((best - pi_norm(n).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_single_modes_and_toral() {
        let mut corpus = Vec::new();
        for n in [-4i64, -1, 2, 5] {
            for j in [0usize, 3, 7] {
                corpus.push(NilFunction::rep_mode(1, n, j, c(1.0, 0.0)));
            }
        }
        let rep = cg_decay_report(&corpus, 0.0, 2.0, 10).unwrap();
        let ratio = rep.max_ratio.unwrap();
        let closed = corpus
            .iter()
            .map(|f| {
                let (key, v) = f.reps.iter().next().unwrap();
                let j = v.len() - 1;
                (key.n as f64).powi(2) / rep_weight(key.n, j)
            })
            .fold(0.0, f64::max);
        assert!((ratio - closed).abs() < 1e-14);
        assert!(ratio <= 1.0);
        let toral = vec![NilFunction::constant(2, c(1.0, 0.0))];
        assert!(cg_decay_report(&toral, 0.0, 2.0, 5).unwrap().max_ratio.is_none());
        assert_eq!(cg_decay_report(&[], 0.0, 2.0, 5).unwrap_err(), NilError::EmptyCorpus);
    }

    #[test]
    fn cg_random_plateau() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let b = SupportBounds { k: 4, n: 40, m: 24 };
        let corpus: Vec<NilFunction> = (0..30).map(|_| random_nil_function(&mut rng, &b, 4.0, false)).collect();
        let lo = cg_decay_report(&corpus, 0.0, 2.0, 20).unwrap();
        let hi = cg_decay_report(&corpus, 0.0, 2.0, 40).unwrap();
        assert!(cg_plateau_drift(&lo, &hi).unwrap() < 0.1);
        let sums: Vec<f64> = hi.partial_sums.iter().map(|p| p.1).collect();
        assert!(sums.windows(2).all(|w| w[1] >= w[0] && w[1] < PI * PI / 3.0 + 1e-12));
    }

    #[test]
    fn text_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = SupportBounds { k: 2, n: 3, m: 4 };
        let f = random_nil_function(&mut rng, &b, 1.0, false);
        let g = NilFunction::parse(&f.to_text(), &b).unwrap();
        assert!(g.sub(&f).max_coeff() == 0.0);
        let bad = [
            "toral 3 0 1 0",
            "rep 0 0 0 1 0",
            "rep 2 2 0 1 0",
            "rep 1 0 4 1 0",
            "rep 1 0 x 1 0",
            "banana",
        ];
        for (i, t) in bad.iter().enumerate() {
            let text = format!("# header\n{t}\n");
            match NilFunction::parse(&text, &b) {
                Err(NilError::Parse { line: 2, .. }) => {}
                other => panic!("case {i}: {other:?}"),
            }
        }
    }
}
