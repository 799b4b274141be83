//! Finite-frequency certificates for Diophantine lower bounds.
//!
//! A witness records `C = min_{0 < |k|_inf <= K} d(k) * |k|_2^gamma` where
//! `d(k)` is either the linear form `|a . k|` or the simultaneous form
//! `max_i dist(m . theta_i, Z)`. Enumeration is exhaustive over the sup-norm
//! box; the weight uses the Euclidean norm.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Largest number of lattice points a single search may visit.
pub const MAX_SEARCH_POINTS: u128 = 200_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("frequency bound must be at least 1")]
    ZeroBound,
    #[error("search box with K={k} in dimension {dim} exceeds the configured cap")]
    TooLarge { k: u32, dim: usize },
    #[error("empty frequency vector")]
    EmptyVector,
    #[error("inconsistent dimensions in simultaneous witness")]
    DimensionMismatch,
    #[error("gamma must be non-negative")]
    NegativeGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessKind {
    LinearForm,
    Simultaneous,
}

impl WitnessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WitnessKind::LinearForm => "linear-form",
            WitnessKind::Simultaneous => "simultaneous",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiophantineWitness {
    pub kind: WitnessKind,
    pub c: f64,
    pub gamma: f64,
    pub k_max: u32,
    pub argmin: Vec<i64>,
    /// Divisor value at `argmin`.
    pub divisor: f64,
}

impl DiophantineWitness {
    /// A witness with `C = 0` certifies nothing: an exact resonance was found.
    pub fn is_valid(&self) -> bool {
        self.c > 0.0
    }

    /// Lower bound `C |k|^-gamma` this witness certifies at frequency `k`.
    pub fn lower_bound(&self, k: &[i64]) -> f64 {
        self.c * euclid(k).powf(-self.gamma)
    }

    /// CSV header for [`to_csv_row`](Self::to_csv_row).
    pub fn csv_header(dim: usize) -> String {
        let mut s = String::from("kind,gamma,K,C");
        for i in 0..dim {
            s.push_str(&format!(",argmin_{i}"));
        }
        s
    }

    pub fn to_csv_row(&self) -> String {
        let mut s = format!("{},{},{},{:e}", self.kind.as_str(), self.gamma, self.k_max, self.c);
        for k in &self.argmin {
            s.push_str(&format!(",{k}"));
        }
        s
    }
}

fn euclid(k: &[i64]) -> f64 {
    k.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

fn check_box(dim: usize, k: u32) -> Result<(), DiophantineError> {
    if dim == 0 {
        return Err(DiophantineError::EmptyVector);
    }
    if k == 0 {
        return Err(DiophantineError::ZeroBound);
    }
    let side = 2 * k as u128 + 1;
    let mut total: u128 = 1;
    for _ in 0..dim {
        total = total.saturating_mul(side);
        if total > MAX_SEARCH_POINTS {
            return Err(DiophantineError::TooLarge { k, dim });
        }
    }
    Ok(())
}

/// Nonzero `k` with `|k|_inf <= bound` and first nonzero entry positive,
/// indexed by a linear counter so the search can be split across workers.
struct HalfBox {
    bound: i64,
    side: u64,
    total: u64,
}

impl HalfBox {
    fn new(dim: usize, bound: u32) -> Self {
        let side = 2 * bound as u64 + 1;
        Self {
            bound: bound as i64,
            side,
            total: side.pow(dim as u32),
        }
    }

    /// Decodes counter `idx` into `k`; `None` for zero or the negative half.
    fn decode(&self, mut idx: u64, k: &mut [i64]) -> bool {
        for slot in k.iter_mut().rev() {
            *slot = (idx % self.side) as i64 - self.bound;
            idx /= self.side;
        }
        match k.iter().find(|&&x| x != 0) {
            Some(&x) => x > 0,
            None => false,
        }
    }
}

/// Deterministic reduction: smaller value, then smaller sup-norm, then
/// lexicographic order.
fn better(a: &(f64, Vec<i64>), b: &(f64, Vec<i64>)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    let na = a.1.iter().map(|x| x.abs()).max();
    let nb = b.1.iter().map(|x| x.abs()).max();
    if na != nb {
        return na < nb;
    }
    a.1 < b.1
}

fn search<F>(dim: usize, bound: u32, score: F) -> (f64, Vec<i64>)
where
    F: Fn(&[i64]) -> f64 + Sync,
{
    let hb = HalfBox::new(dim, bound);
    const CHUNK: u64 = 1 << 14;
    let chunks = hb.total.div_ceil(CHUNK);
    let partial: Vec<(f64, Vec<i64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut k = vec![0i64; dim];
            let mut best = (f64::INFINITY, vec![0i64; dim]);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(hb.total) {
                if !hb.decode(idx, &mut k) {
                    continue;
                }
                let cand = (score(&k), k.clone());
                if better(&cand, &best) {
                    best = cand;
                }
            }
            best
        })
        .collect();
    partial
        .into_iter()
        .fold((f64::INFINITY, vec![0; dim]), |acc, x| if better(&x, &acc) { x } else { acc })
}

/// Exhaustive minimum of `|a . k|` over nonzero integer `k` with
/// `|k|_inf <= bound`. The sign of `k` is fixed by making its first nonzero
/// entry positive.
pub fn min_small_divisor(a: &[f64], bound: u32) -> Result<(Vec<i64>, f64), DiophantineError> {
    check_box(a.len(), bound)?;
    let (v, k) = search(a.len(), bound, |k| dot(a, k).abs());
    Ok((k, v))
}

fn dot(a: &[f64], k: &[i64]) -> f64 {
    a.iter().zip(k).map(|(x, &y)| x * y as f64).sum()
}

/// `C = min |a . k| |k|^gamma` over the box.
pub fn fit_witness(a: &[f64], gamma: f64, bound: u32) -> Result<DiophantineWitness, DiophantineError> {
    if gamma < 0.0 {
        return Err(DiophantineError::NegativeGamma);
    }
    check_box(a.len(), bound)?;
    let (c, k) = search(a.len(), bound, |k| dot(a, k).abs() * euclid(k).powf(gamma));
    let divisor = dot(a, &k).abs();
    Ok(DiophantineWitness {
        kind: WitnessKind::LinearForm,
        c,
        gamma,
        k_max: bound,
        argmin: k,
        divisor,
    })
}

/// `C = min_m (max_i dist(m . theta_i, Z)) |m|^gamma` over the box.
pub fn simultaneous_witness(
    theta: &[Vec<f64>],
    gamma: f64,
    bound: u32,
) -> Result<DiophantineWitness, DiophantineError> {
    if gamma < 0.0 {
        return Err(DiophantineError::NegativeGamma);
    }
    let dim = theta.first().ok_or(DiophantineError::EmptyVector)?.len();
    if theta.iter().any(|t| t.len() != dim) {
        return Err(DiophantineError::DimensionMismatch);
    }
    check_box(dim, bound)?;
    let divisor = |m: &[i64]| {
        theta
            .iter()
            .map(|t| dist_to_integer(dot(t, m)))
            .fold(0.0, f64::max)
    };
    let (c, m) = search(dim, bound, |m| divisor(m) * euclid(m).powf(gamma));
    let d = divisor(&m);
    Ok(DiophantineWitness {
        kind: WitnessKind::Simultaneous,
        c,
        gamma,
        k_max: bound,
        argmin: m,
        divisor: d,
    })
}
