//! Two-step nilpotent Lie algebras with rational structure constants, the
//! constant-coefficient coboundary maps over an `R^2` action generated by
//! `X1 = sum alpha_i Y_i` and `X2 = sum beta_j Z_j`, and the first cohomology
//! with coefficients in the algebra itself.
//!
//! Everything here is finite-dimensional linear algebra. The [`Field`] trait
//! lets the same elimination code run exactly over [`BigRational`] or with a
//! pivot tolerance over `f64`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Relative pivot tolerance for floating-point rank computations.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("structure constants are not antisymmetric at ({l},{i},{j})")]
    NotAntisymmetric { l: usize, i: usize, j: usize },
    #[error("alpha has a vanishing component ({index}); cohomology basis extraction needs generic alpha")]
    DegenerateAlpha { index: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("least-squares solve failed: {0}")]
    Solve(String),
}

/// Scalars the elimination routines can work over.
pub trait Field:
    Clone
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Zero
    + One
{
    fn div(&self, other: &Self) -> Self;
    /// Magnitude used for pivot selection.
    fn magnitude(&self) -> f64;
    /// Whether the value counts as zero relative to `scale`.
    fn is_negligible(&self, scale: f64) -> bool;
    fn from_rational(r: &BigRational) -> Self;
    fn to_f64(&self) -> f64;
}

impl Field for f64 {
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn is_negligible(&self, scale: f64) -> bool {
        self.abs() <= RANK_TOL * scale.max(1.0)
    }
    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Field for BigRational {
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn magnitude(&self) -> f64 {
        ToPrimitive::to_f64(&self.abs()).unwrap_or(f64::INFINITY)
    }
    fn is_negligible(&self, _scale: f64) -> bool {
        self.is_zero()
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Parses `n` or `n/d` into an exact rational.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(BigRational::new(n, d))
        }
        None => Some(BigRational::from_integer(s.parse().ok()?)),
    }
}

pub fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// A 2-step nilpotent Lie algebra with basis `Y_1..Y_q, Z_1..Z_p` where
/// `[Y_l, Y_i] = sum_j c[l][i][j] Z_j` and every bracket with a `Z` vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStepAlgebra {
    q: usize,
    p: usize,
    c: Vec<BigRational>,
}

impl TwoStepAlgebra {
    /// The abelian algebra of the given shape; brackets are added with
    /// [`set_bracket`](Self::set_bracket).
    pub fn new(q: usize, p: usize) -> Self {
        Self {
            q,
            p,
            c: vec![BigRational::zero(); q * q * p],
        }
    }

    /// The 3-dimensional Heisenberg algebra, `[Y1, Y2] = Z1`.
    pub fn heisenberg() -> Self {
        let mut a = Self::new(2, 1);
        a.set_bracket(0, 1, 0, BigRational::one()).expect("valid indices");
        a
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.q + self.p
    }

    fn idx(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.q + i) * self.p + j
    }

    /// Sets `c[l][i][j] = value` and `c[i][l][j] = -value` (0-based indices).
    pub fn set_bracket(
        &mut self,
        l: usize,
        i: usize,
        j: usize,
        value: BigRational,
    ) -> Result<(), AlgebraError> {
        if l >= self.q || i >= self.q || j >= self.p {
            return Err(AlgebraError::IndexOutOfRange(format!("({l},{i},{j})")));
        }
        if l == i {
            if value.is_zero() {
                return Ok(());
            }
            return Err(AlgebraError::NotAntisymmetric { l, i, j });
        }
        let a = self.idx(l, i, j);
        let b = self.idx(i, l, j);
        self.c[b] = -value.clone();
        self.c[a] = value;
        Ok(())
    }

    /// `c[l][i][j]`, 0-based.
    pub fn structure_constant(&self, l: usize, i: usize, j: usize) -> &BigRational {
        &self.c[self.idx(l, i, j)]
    }

    /// Checks antisymmetry of the stored constants.
    pub fn validate(&self) -> Result<(), AlgebraError> {
        for l in 0..self.q {
            for i in 0..self.q {
                for j in 0..self.p {
                    let a = self.structure_constant(l, i, j);
                    let b = self.structure_constant(i, l, j);
                    if *a != -b.clone() {
                        return Err(AlgebraError::NotAntisymmetric { l, i, j });
                    }
                }
            }
        }
        Ok(())
    }

    /// Lie bracket of two elements given in the `(Y.., Z..)` basis.
    pub fn bracket<T: Field>(&self, u: &[T], v: &[T]) -> Result<Vec<T>, AlgebraError> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        let mut out = vec![T::zero(); self.dim()];
        for l in 0..self.q {
            if u[l].is_zero() {
                continue;
            }
            for i in 0..self.q {
                if v[i].is_zero() {
                    continue;
                }
                let uv = u[l].clone() * v[i].clone();
                for j in 0..self.p {
                    let c = self.structure_constant(l, i, j);
                    if !c.is_zero() {
                        out[self.q + j] =
                            out[self.q + j].clone() + uv.clone() * T::from_rational(c);
                    }
                }
            }
        }
        Ok(out)
    }

    fn check_len(&self, got: usize) -> Result<(), AlgebraError> {
        if got != self.dim() {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Parses the line-oriented definition format:
    ///
    /// ```text
    /// q=2 p=1
    /// c 1 2 1 1/1
    /// ```
    ///
    /// Indices are 1-based; omitted entries are zero and the antisymmetric
    /// partner of every entry is filled in.
    pub fn parse(text: &str) -> Result<Self, AlgebraError> {
        let mut alg: Option<TwoStepAlgebra> = None;
        let mut seen: Vec<(usize, usize, usize, BigRational)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: &str| AlgebraError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            match alg.as_mut() {
                None => {
                    let mut q = None;
                    let mut p = None;
                    for tok in line.split_whitespace() {
                        let (k, v) = tok.split_once('=').ok_or_else(|| perr("expected header `q=<int> p=<int>`"))?;
                        let v: usize = v.parse().map_err(|_| perr("header value is not an integer"))?;
                        match k {
                            "q" => q = Some(v),
                            "p" => p = Some(v),
                            _ => return Err(perr("unknown header key")),
                        }
                    }
                    match (q, p) {
                        (Some(q), Some(p)) => alg = Some(TwoStepAlgebra::new(q, p)),
                        _ => return Err(perr("header must set both q and p")),
                    }
                }
                Some(a) => {
                    let toks: Vec<&str> = line.split_whitespace().collect();
                    if toks.len() != 5 || toks[0] != "c" {
                        return Err(perr("expected `c <l> <i> <j> <num>/<den>`"));
                    }
                    let ix = |s: &str| -> Result<usize, AlgebraError> {
                        let v: usize = s.parse().map_err(|_| perr("index is not an integer"))?;
                        v.checked_sub(1).ok_or_else(|| perr("indices are 1-based"))
                    };
                    let (l, i, j) = (ix(toks[1])?, ix(toks[2])?, ix(toks[3])?);
                    let val = parse_rational(toks[4]).ok_or_else(|| perr("malformed rational"))?;
                    for (sl, si, sj, sv) in &seen {
                        let clash = (*sl == l && *si == i && *sj == j && *sv != val)
                            || (*sl == i && *si == l && *sj == j && *sv != -val.clone());
                        if clash {
                            return Err(perr("entry contradicts an earlier antisymmetric entry"));
                        }
                    }
                    a.set_bracket(l, i, j, val.clone()).map_err(|e| perr(&e.to_string()))?;
                    seen.push((l, i, j, val));
                }
            }
        }
        alg.ok_or(AlgebraError::Parse {
            line: 0,
            msg: "missing header".into(),
        })
    }

    /// Writes the definition format, listing each pair `l < i` once.
    pub fn to_text(&self) -> String {
        let mut s = format!("q={} p={}\n", self.q, self.p);
        for l in 0..self.q {
            for i in (l + 1)..self.q {
                for j in 0..self.p {
                    let c = self.structure_constant(l, i, j);
                    if !c.is_zero() {
                        s.push_str(&format!("c {} {} {} {}/{}\n", l + 1, i + 1, j + 1, c.numer(), c.denom()));
                    }
                }
            }
        }
        s
    }
}

/// Parameters of the action `X1 = sum (alpha_i + a_i) Y_i`,
/// `X2 = mu * sum alpha_i Y_i + sum (beta_j + b_j) Z_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionParams<T = f64> {
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
    pub mu: T,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Field> ActionParams<T> {
    pub fn new(alpha: Vec<T>, beta: Vec<T>) -> Self {
        let q = alpha.len();
        let p = beta.len();
        Self {
            alpha,
            beta,
            mu: T::zero(),
            a: vec![T::zero(); q],
            b: vec![T::zero(); p],
        }
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Coefficients of `X1` in the `(Y.., Z..)` basis.
    pub fn x1(&self) -> Vec<T> {
        let mut v: Vec<T> = self
            .alpha
            .iter()
            .zip(&self.a)
            .map(|(x, y)| x.clone() + y.clone())
            .collect();
        v.extend(std::iter::repeat_n(T::zero(), self.p()));
        v
    }

    /// Coefficients of `X2` in the `(Y.., Z..)` basis.
    pub fn x2(&self) -> Vec<T> {
        let mut v: Vec<T> = self.alpha.iter().map(|x| self.mu.clone() * x.clone()).collect();
        v.extend(self.beta.iter().zip(&self.b).map(|(x, y)| x.clone() + y.clone()));
        v
    }

    fn check(&self, alg: &TwoStepAlgebra) -> Result<(), AlgebraError> {
        if self.q() != alg.q() || self.a.len() != alg.q() {
            return Err(AlgebraError::DimensionMismatch { expected: alg.q(), got: self.q() });
        }
        if self.p() != alg.p() || self.b.len() != alg.p() {
            return Err(AlgebraError::DimensionMismatch { expected: alg.p(), got: self.p() });
        }
        Ok(())
    }
}

impl ActionParams<f64> {
    /// `alpha = (1, golden mean)`, `beta = (1)`: the reference Heisenberg action.
    pub fn heisenberg_golden() -> Self {
        Self::new(vec![1.0, (1.0 + 5f64.sqrt()) / 2.0], vec![1.0])
    }
}

/// Precomposes the action with the coordinate change `X1 -> X1`,
/// `X2 -> X2 + mu1 X1`. Composition adds the parameters.
pub fn apply_coordinate_change<T: Field>(params: &ActionParams<T>, mu1: T) -> ActionParams<T> {
    let mut out = params.clone();
    out.mu = out.mu + mu1;
    out
}

/// A constant 1-cochain: `omega(X_k) = sum a^k_i Y_i + sum b^k_j Z_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantCocycle<T = f64> {
    pub a1: Vec<T>,
    pub b1: Vec<T>,
    pub a2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Field> ConstantCocycle<T> {
    pub fn zero(q: usize, p: usize) -> Self {
        Self {
            a1: vec![T::zero(); q],
            b1: vec![T::zero(); p],
            a2: vec![T::zero(); q],
            b2: vec![T::zero(); p],
        }
    }

    /// Flattened as `(a1, b1, a2, b2)`.
    pub fn to_vec(&self) -> Vec<T> {
        self.a1
            .iter()
            .chain(&self.b1)
            .chain(&self.a2)
            .chain(&self.b2)
            .cloned()
            .collect()
    }

    pub fn from_vec(v: &[T], q: usize, p: usize) -> Self {
        assert_eq!(v.len(), 2 * (q + p));
        Self {
            a1: v[..q].to_vec(),
            b1: v[q..q + p].to_vec(),
            a2: v[q + p..2 * q + p].to_vec(),
            b2: v[2 * q + p..].to_vec(),
        }
    }

    /// Value on `X1` in the `(Y.., Z..)` basis.
    pub fn on_x1(&self) -> Vec<T> {
        self.a1.iter().chain(&self.b1).cloned().collect()
    }

    /// Value on `X2` in the `(Y.., Z..)` basis.
    pub fn on_x2(&self) -> Vec<T> {
        self.a2.iter().chain(&self.b2).cloned().collect()
    }

    fn from_values(x1: &[T], x2: &[T], q: usize) -> Self {
        Self {
            a1: x1[..q].to_vec(),
            b1: x1[q..].to_vec(),
            a2: x2[..q].to_vec(),
            b2: x2[q..].to_vec(),
        }
    }
}

impl ConstantCocycle<f64> {
    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `H -> ([X1, H], [X2, H])`.
pub fn const_delta0<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
    h: &[T],
) -> Result<ConstantCocycle<T>, AlgebraError> {
    params.check(alg)?;
    let v1 = alg.bracket(&params.x1(), h)?;
    let v2 = alg.bracket(&params.x2(), h)?;
    Ok(ConstantCocycle::from_values(&v1, &v2, alg.q()))
}

/// `[X2, omega(X1)] - [X1, omega(X2)]`, the constant second coboundary.
pub fn const_delta1<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
    omega: &ConstantCocycle<T>,
) -> Result<Vec<T>, AlgebraError> {
    params.check(alg)?;
    let l = alg.bracket(&params.x2(), &omega.on_x1())?;
    let r = alg.bracket(&params.x1(), &omega.on_x2())?;
    Ok(l.into_iter().zip(r).map(|(a, b)| a - b).collect())
}

/// Whether `[X2, omega(X1)] = [X1, omega(X2)]` within `tol` (exactly, over
/// the rationals, where `tol` is ignored).
pub fn const_cocycle_check<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
    omega: &ConstantCocycle<T>,
    tol: f64,
) -> Result<bool, AlgebraError> {
    let d = const_delta1(alg, params, omega)?;
    Ok(d.iter().all(|x| x.is_zero() || x.magnitude() <= tol))
}

/// Dense row-major matrix used by the elimination routines.
#[derive(Clone, Debug)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Field> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    fn scale(&self) -> f64 {
        self.data.iter().map(Field::magnitude).fold(0.0, f64::max)
    }

    /// Reduced row echelon form in place; returns the pivot columns.
    pub fn rref(&mut self) -> Vec<usize> {
        let scale = self.scale();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row == self.rows {
                break;
            }
            let (best, mag) = (row..self.rows)
                .map(|r| (r, self.get(r, col).magnitude()))
                .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if mag < 0.0 || self.get(best, col).is_negligible(scale) {
                for r in row..self.rows {
                    self.set(r, col, T::zero());
                }
                continue;
            }
            for c in 0..self.cols {
                self.data.swap(row * self.cols + c, best * self.cols + c);
            }
            let piv = self.get(row, col).clone();
            for c in 0..self.cols {
                let v = self.get(row, c).div(&piv);
                self.set(row, c, v);
            }
            for r in 0..self.rows {
                if r == row {
                    continue;
                }
                let f = self.get(r, col).clone();
                if f.is_zero() {
                    continue;
                }
                for c in 0..self.cols {
                    let v = self.get(r, c).clone() - f.clone() * self.get(row, c).clone();
                    self.set(r, c, v);
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().rref().len()
    }

    /// Basis of the right null space, one vector per free column.
    pub fn nullspace(&self) -> Vec<Vec<T>> {
        let mut m = self.clone();
        let pivots = m.rref();
        let mut basis = Vec::new();
        for free in (0..self.cols).filter(|c| !pivots.contains(c)) {
            let mut v = vec![T::zero(); self.cols];
            v[free] = T::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m.get(r, free).clone();
            }
            basis.push(v);
        }
        basis
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<T>], rows: usize) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (c, v) in cols.iter().enumerate() {
            for (r, x) in v.iter().enumerate() {
                m.set(r, c, x.clone());
            }
        }
        m
    }
}

/// Matrix of the constant `delta0`: columns are `const_delta0(e_k)`.
pub fn delta0_matrix<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
) -> Result<Mat<T>, AlgebraError> {
    let n = alg.dim();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![T::zero(); n];
        e[k] = T::one();
        cols.push(const_delta0(alg, params, &e)?.to_vec());
    }
    Ok(Mat::from_columns(&cols, 2 * n))
}

/// Matrix of the constant `delta1` on flattened cochains `(a1, b1, a2, b2)`.
pub fn delta1_matrix<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
) -> Result<Mat<T>, AlgebraError> {
    let n = alg.dim();
    let (q, p) = (alg.q(), alg.p());
    let mut cols = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        let mut e = vec![T::zero(); 2 * n];
        e[k] = T::one();
        let w = ConstantCocycle::from_vec(&e, q, p);
        cols.push(const_delta1(alg, params, &w)?);
    }
    Ok(Mat::from_columns(&cols, n))
}

/// Result of the constant cohomology computation.
#[derive(Clone, Debug)]
pub struct ConstCohomology<T = f64> {
    pub dimension: usize,
    pub kernel_dim: usize,
    pub image_rank: usize,
    /// Cocycles spanning a complement of the coboundaries inside the cocycles.
    pub representatives: Vec<ConstantCocycle<T>>,
    /// Basis of the constant coboundaries.
    pub coboundaries: Vec<ConstantCocycle<T>>,
}

/// `H^1` of the action with coefficients in the algebra, by explicit ranks
/// of the two constant coboundary maps.
pub fn const_cohomology_basis<T: Field>(
    alg: &TwoStepAlgebra,
    params: &ActionParams<T>,
) -> Result<ConstCohomology<T>, AlgebraError> {
    params.check(alg)?;
    let scale = params.alpha.iter().map(Field::magnitude).fold(0.0, f64::max);
    if let Some(index) = params.alpha.iter().position(|x| x.is_negligible(scale)) {
        log::warn!("degenerate alpha: component {index} vanishes");
        return Err(AlgebraError::DegenerateAlpha { index });
    }
    let (q, p) = (alg.q(), alg.p());
    let d1 = delta1_matrix(alg, params)?;
    let kernel = d1.nullspace();
    let d0 = delta0_matrix(alg, params)?;
    let image_rank = d0.rank();

    // independent image columns
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut coboundaries = Vec::new();
    for c in 0..d0.cols {
        let col: Vec<T> = (0..d0.rows).map(|r| d0.get(r, c).clone()).collect();
        let mut trial = basis.clone();
        trial.push(col.clone());
        if Mat::from_columns(&trial, d0.rows).rank() == trial.len() {
            basis = trial;
            coboundaries.push(ConstantCocycle::from_vec(&col, q, p));
        }
    }
    // extend by kernel vectors
    let mut representatives = Vec::new();
    for v in &kernel {
        let mut trial = basis.clone();
        trial.push(v.clone());
        if Mat::from_columns(&trial, d0.rows).rank() == trial.len() {
            basis = trial;
            representatives.push(ConstantCocycle::from_vec(v, q, p));
        }
    }
    Ok(ConstCohomology {
        dimension: kernel.len() - image_rank,
        kernel_dim: kernel.len(),
        image_rank,
        representatives,
        coboundaries,
    })
}

/// Splits a constant cocycle as `sum t_r rep_r + const_delta0(H)`, returning
/// `(t, H)`. The cocycle must lie in the span of coboundaries and
/// representatives.
pub fn decompose_constant(
    alg: &TwoStepAlgebra,
    params: &ActionParams<f64>,
    cohom: &ConstCohomology<f64>,
    omega: &ConstantCocycle<f64>,
) -> Result<(Vec<f64>, Vec<f64>), AlgebraError> {
    let n = alg.dim();
    let d0 = delta0_matrix(alg, params)?;
    let rows = 2 * n;
    let ncols = n + cohom.representatives.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(rows, ncols);
    for r in 0..rows {
        for c in 0..n {
            m[(r, c)] = *d0.get(r, c);
        }
    }
    for (k, rep) in cohom.representatives.iter().enumerate() {
        for (r, x) in rep.to_vec().into_iter().enumerate() {
            m[(r, n + k)] = x;
        }
    }
    let rhs = nalgebra::DVector::from_vec(omega.to_vec());
    let svd = m.svd(true, true);
    let sol = svd
        .solve(&rhs, RANK_TOL * omega.norm().max(1.0))
        .map_err(|e| AlgebraError::Solve(e.to_string()))?;
    let h: Vec<f64> = (0..n).map(|k| sol[k]).collect();
    let t: Vec<f64> = (n..ncols).map(|k| sol[k]).collect();
    Ok((t, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64) -> BigRational {
        rational(n, 1)
    }

    fn e(k: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    #[test]
    fn heisenberg_brackets() {
        let h = TwoStepAlgebra::heisenberg();
        assert_eq!(h.bracket(&e(0, 3), &e(1, 3)).unwrap(), e(2, 3));
        assert_eq!(h.bracket(&e(1, 3), &e(0, 3)).unwrap(), vec![0.0, 0.0, -1.0]);
        let v = vec![0.3, -1.2, 4.0];
        assert_eq!(h.bracket(&e(2, 3), &v).unwrap(), vec![0.0; 3]);
        assert_eq!(h.bracket(&v, &v).unwrap(), vec![0.0; 3]);
        assert!(h.bracket(&v, &[1.0]).is_err());
    }

    #[test]
    fn delta0_examples() {
        let alg = TwoStepAlgebra::heisenberg();
        let params = ActionParams::new(vec![r(2), r(3)], vec![r(1)]);
        let z = const_delta0(&alg, &params, &[r(0), r(0), r(1)]).unwrap();
        assert_eq!(z, ConstantCocycle::zero(2, 1));
        let w = const_delta0(&alg, &params, &[r(0), r(1), r(0)]).unwrap();
        assert_eq!(w.b1, vec![r(2)]);
        assert!(w.a1.iter().chain(&w.a2).chain(&w.b2).all(Zero::is_zero));
        let x1 = params.x1();
        assert_eq!(const_delta0(&alg, &params, &x1).unwrap(), ConstantCocycle::zero(2, 1));
    }

    #[test]
    fn cocycle_check_examples() {
        let alg = TwoStepAlgebra::heisenberg();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let params = ActionParams::new(vec![1.0, phi], vec![1.0]);
        let mut w = ConstantCocycle::zero(2, 1);
        assert!(const_cocycle_check(&alg, &params, &w, 1e-12).unwrap());
        w.a2 = vec![1.0, 0.0];
        assert!(!const_cocycle_check(&alg, &params, &w, 1e-12).unwrap());
        w.a2 = vec![-2.5, -2.5 * phi];
        w.b1 = vec![7.0];
        assert!(const_cocycle_check(&alg, &params, &w, 1e-12).unwrap());
    }

    #[test]
    fn heisenberg_cohomology_is_four_dimensional() {
        let alg = TwoStepAlgebra::heisenberg();
        let exact = ActionParams::new(vec![r(1), rational(1618, 1000)], vec![r(1)]);
        let c = const_cohomology_basis(&alg, &exact).unwrap();
        assert_eq!(c.dimension, 4);
        assert_eq!(c.kernel_dim, 5);
        assert_eq!(c.image_rank, 1);
        assert_eq!(c.representatives.len(), 4);
        let c = const_cohomology_basis(&alg, &ActionParams::heisenberg_golden()).unwrap();
        assert_eq!(c.dimension, 4);
    }

    #[test]
    fn image_members_have_the_bracket_form() {
        // b1_j = h_i alpha_l - alpha_i h_l whenever [Y_l, Y_i] = Z_j
        let alg = TwoStepAlgebra::heisenberg();
        let params = ActionParams::new(vec![r(3), r(5)], vec![r(1)]);
        let c = const_cohomology_basis(&alg, &params).unwrap();
        for (k, cob) in c.coboundaries.iter().enumerate() {
            let h = {
                let mut v = vec![r(0); 3];
                v[k] = r(1);
                v
            };
            assert!(cob.a1.iter().chain(&cob.a2).chain(&cob.b2).all(Zero::is_zero));
            let expect = h[1].clone() * params.alpha[0].clone() - params.alpha[1].clone() * h[0].clone();
            assert_eq!(cob.b1[0], expect);
        }
    }

    #[test]
    fn degenerate_alpha_is_rejected() {
        let alg = TwoStepAlgebra::heisenberg();
        let params = ActionParams::new(vec![1.0, 0.0], vec![1.0]);
        assert_eq!(
            const_cohomology_basis(&alg, &params).unwrap_err(),
            AlgebraError::DegenerateAlpha { index: 1 }
        );
        // cocycle checks still work
        let w = ConstantCocycle::zero(2, 1);
        assert!(const_cocycle_check(&alg, &params, &w, 0.0).unwrap());
    }

    #[test]
    fn coordinate_change_group_law() {
        let p = ActionParams::heisenberg_golden();
        assert_eq!(apply_coordinate_change(&p, 0.0), p);
        assert_eq!(apply_coordinate_change(&apply_coordinate_change(&p, 1.0), -1.0), p);
        let q = apply_coordinate_change(&p, 0.7);
        let x2 = q.x2();
        assert!((x2[0] - 0.7 * p.alpha[0]).abs() < 1e-15);
        assert!((x2[1] - 0.7 * p.alpha[1]).abs() < 1e-15);
        assert_eq!(x2[2], 1.0);
        assert_eq!(q.x1(), p.x1());
    }

    #[test]
    fn parse_and_print_roundtrip() {
        let text = "# heisenberg-like\nq=3 p=2\nc 1 2 1 1/1\nc 3 1 2 -1/2\n";
        let a = TwoStepAlgebra::parse(text).unwrap();
        assert_eq!(*a.structure_constant(0, 1, 0), r(1));
        assert_eq!(*a.structure_constant(1, 0, 0), r(-1));
        assert_eq!(*a.structure_constant(0, 2, 1), rational(1, 2));
        a.validate().unwrap();
        assert_eq!(TwoStepAlgebra::parse(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "q=2 p=1\nc 1 1 1 1\n";
        assert!(matches!(TwoStepAlgebra::parse(bad), Err(AlgebraError::Parse { line: 2, .. })));
        let clash = "q=2 p=1\nc 1 2 1 1\nc 2 1 1 1\n";
        assert!(matches!(TwoStepAlgebra::parse(clash), Err(AlgebraError::Parse { line: 3, .. })));
        assert!(TwoStepAlgebra::parse("c 1 2 1 1").is_err());
        assert!(TwoStepAlgebra::parse("q=2 p=1\nc 1 2 1 1/0").is_err());
    }

    #[test]
    fn decompose_recovers_parts() {
        let alg = TwoStepAlgebra::heisenberg();
        let params = ActionParams::heisenberg_golden();
        let c = const_cohomology_basis(&alg, &params).unwrap();
        let t = [0.5, -1.0, 2.0, 0.25];
        let mut v = vec![0.0; 6];
        for (rep, tk) in c.representatives.iter().zip(t) {
            for (x, y) in v.iter_mut().zip(rep.to_vec()) {
                *x += tk * y;
            }
        }
        let cob = const_delta0(&alg, &params, &[0.3, -0.2, 0.0]).unwrap().to_vec();
        for (x, y) in v.iter_mut().zip(cob) {
            *x += y;
        }
        let (tt, h) = decompose_constant(&alg, &params, &c, &ConstantCocycle::from_vec(&v, 2, 1)).unwrap();
        for (a, b) in tt.iter().zip(t) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rebuilt = const_delta0(&alg, &params, &h).unwrap().to_vec();
        for (rep, tk) in c.representatives.iter().zip(&tt) {
            for (x, y) in rebuilt.iter_mut().zip(rep.to_vec()) {
                *x += tk * y;
            }
        }
        for (a, b) in rebuilt.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
