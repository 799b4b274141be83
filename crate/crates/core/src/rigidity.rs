//! Operators of the rigidity scheme on the Heisenberg model: averaging
//! projection onto the family coordinates, the section back into constant
//! cochains, the reduction to coboundary-plus-constant cochains, smoothing,
//! and a single Newton step with a second-order remainder.
//!
//! Vector fields are coefficient vectors on `(Y1, Y2, Z)` with [`NilFunction`]
//! entries. Products of coefficients are only formed when both factors are
//! toral or one is constant; anything else needs pointwise synthesis in the
//! representations and is rejected.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::{ActionParams, TwoStepAlgebra};
use crate::cohomology::{self, Cochain1, CohomologyError, VfCochain, Witnesses};
use crate::nilrep::{apply_element, rep_weight, NilError, NilFunction, SupportBounds};
use crate::torus::random_torus_function;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Component labels of a Heisenberg vector field.
pub const COMPONENTS: [&str; 3] = ["Y1", "Y2", "Z"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigidityError {
    #[error("alpha_1 vanishes; the coordinate-change direction is undefined")]
    DegenerateAlpha,
    #[error("perturbation norm {norm:.3e} exceeds threshold {threshold:.3e}")]
    ThresholdExceeded { norm: f64, threshold: f64 },
    #[error("product of coefficients with representation parts needs pointwise synthesis")]
    ProductRequiresSynthesis,
    #[error("expected a Heisenberg vector field with 3 components, got {0}")]
    DimensionMismatch(usize),
    #[error(transparent)]
    Cohomology(#[from] CohomologyError),
    #[error(transparent)]
    Parse(#[from] NilError),
}

/// Coordinates on the transversal family: the coordinate-change direction
/// `mu1` and the offsets `lambda = (a_1, a_2, b)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyCoordinates {
    pub mu1: f64,
    pub lambda: Vec<f64>,
}

impl FamilyCoordinates {
    pub fn zero() -> Self {
        Self {
            mu1: 0.0,
            lambda: vec![0.0; 3],
        }
    }

    pub fn new(mu1: f64, a: [f64; 2], b: f64) -> Self {
        Self {
            mu1,
            lambda: vec![a[0], a[1], b],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu1];
        v.extend(&self.lambda);
        v
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.to_vec()
            .iter()
            .zip(o.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_vf(omega: &VfCochain) -> Result<(), RigidityError> {
    if omega.dim() != 3 || omega.x2.len() != 3 {
        return Err(RigidityError::DimensionMismatch(omega.dim()));
    }
    Ok(())
}

/// Averages of `Omega` read as family coordinates: the Y-averages of
/// `Omega(X1)` give `a`, the Y1-average of `Omega(X2)` over `alpha_1` gives
/// `mu1`, and the Z-average of `Omega(X2)` minus `mu` times that of
/// `Omega(X1)` gives `b`. Constant coboundaries have zero coordinates.
pub fn project_p(params: &ActionParams, omega: &VfCochain) -> Result<FamilyCoordinates, RigidityError> {
    check_vf(omega)?;
    let alpha1 = params.alpha[0];
    if alpha1 == 0.0 {
        return Err(RigidityError::DegenerateAlpha);
    }
    let av = |f: &NilFunction| f.average().re;
    Ok(FamilyCoordinates {
        mu1: av(&omega.x2[0]) / alpha1,
        lambda: vec![
            av(&omega.x1[0]),
            av(&omega.x1[1]),
            av(&omega.x2[2]) - params.mu * av(&omega.x1[2]),
        ],
    })
}

/// The constant cochain `rho_{mu + mu1, lambda} - rho_{mu, 0}`.
pub fn section_s(params: &ActionParams, coords: &FamilyCoordinates, k: usize) -> VfCochain {
    let c = |x: f64| NilFunction::constant(k, Complex64::new(x, 0.0));
    let al = &params.alpha;
    VfCochain {
        x1: vec![c(coords.lambda[0]), c(coords.lambda[1]), c(0.0)],
        x2: vec![c(coords.mu1 * al[0]), c(coords.mu1 * al[1]), c(coords.lambda[2])],
    }
}

/// `omega - (f_err, g_err)`: the coboundary-plus-constant part of a scalar
/// cochain.
pub fn delta_op(params: &ActionParams, w: &Cochain1, witnesses: &Witnesses) -> Result<Cochain1, RigidityError> {
    let s = cohomology::delta1_star_split(params, w, witnesses)?;
    Ok(w.sub(&s.error_part()))
}

/// [`delta_op`] applied to each coefficient of a vector-field cochain;
/// averages are kept.
pub fn delta_op_vf(params: &ActionParams, omega: &VfCochain, witnesses: &Witnesses) -> Result<VfCochain, RigidityError> {
    check_vf(omega)?;
    let parts = (0..omega.dim())
        .map(|i| delta_op(params, &omega.component(i), witnesses))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VfCochain::from_components(parts))
}

/// Drops toral modes with `|k| > cutoff` and representation modes with
/// `1 + n^2 + |n|(2j+1) > 1 + cutoff^2`. The constant term is kept.
pub fn smoothing_truncate(f: &NilFunction, cutoff: f64) -> NilFunction {
    let c2 = cutoff * cutoff;
    let toral = f.toral.map_modes(|k, c| {
        let k2: f64 = k.iter().map(|&x| (x * x) as f64).sum();
        if k2 <= c2 {
            c
        } else {
            ZERO
        }
    });
    let mut reps = f.reps.clone();
    reps.retain(|key, v| {
        let keep = v
            .iter()
            .enumerate()
            .take_while(|(j, _)| rep_weight(key.n, *j) <= 1.0 + c2)
            .count();
        v.truncate(keep);
        keep > 0
    });
    NilFunction { toral, reps }
}

pub fn smoothing_truncate_vf(omega: &VfCochain, cutoff: f64) -> VfCochain {
    VfCochain {
        x1: omega.x1.iter().map(|f| smoothing_truncate(f, cutoff)).collect(),
        x2: omega.x2.iter().map(|f| smoothing_truncate(f, cutoff)).collect(),
    }
}

fn is_toral(f: &NilFunction) -> bool {
    f.reps.values().all(|v| v.iter().all(|c| *c == ZERO))
}

fn constant_value(f: &NilFunction) -> Option<Complex64> {
    if !is_toral(f) {
        return None;
    }
    let mut only_zero = true;
    f.toral.for_each_mode(|k, c| {
        if c != ZERO && k.iter().any(|&x| x != 0) {
            only_zero = false;
        }
    });
    only_zero.then(|| f.average())
}

/// Product of two coefficient functions.
pub fn product(a: &NilFunction, b: &NilFunction) -> Result<NilFunction, RigidityError> {
    if let Some(c) = constant_value(a) {
        return Ok(b.scale(c));
    }
    if let Some(c) = constant_value(b) {
        return Ok(a.scale(c));
    }
    if is_toral(a) && is_toral(b) {
        return Ok(NilFunction::from_toral(a.toral.mul(&b.toral)));
    }
    Err(RigidityError::ProductRequiresSynthesis)
}

fn basis(i: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[i] = 1.0;
    e
}

/// `U(f) = sum_a u_a E_a f`.
pub fn vf_apply(u: &[NilFunction], f: &NilFunction) -> Result<NilFunction, RigidityError> {
    let mut out = NilFunction::zeros(f.toral.truncation());
    for (a, ua) in u.iter().enumerate() {
        let d = apply_element(&basis(a), f);
        out = out.add(&product(ua, &d)?);
    }
    Ok(out)
}

/// Lie bracket of vector fields with function coefficients:
/// `[U, V] = sum_b (U v_b - V u_b) E_b + sum u_a v_b [E_a, E_b]`.
pub fn vf_bracket(alg: &TwoStepAlgebra, u: &[NilFunction], v: &[NilFunction]) -> Result<Vec<NilFunction>, RigidityError> {
    if u.len() != alg.dim() || v.len() != alg.dim() {
        return Err(RigidityError::DimensionMismatch(u.len()));
    }
    let (q, p) = (alg.q(), alg.p());
    let mut out = Vec::with_capacity(q + p);
    for b in 0..q + p {
        out.push(vf_apply(u, &v[b])?.sub(&vf_apply(v, &u[b])?));
    }
    for l in 0..q {
        for i in 0..q {
            for j in 0..p {
                let c = num_traits::ToPrimitive::to_f64(alg.structure_constant(l, i, j)).unwrap_or(0.0);
                if c != 0.0 {
                    let t = product(&u[l], &v[i])?.scale(Complex64::new(c, 0.0));
                    out[q + j] = out[q + j].add(&t);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
fn constant_field(x: &[f64], k: usize) -> Vec<NilFunction> {
    x.iter().map(|&c| NilFunction::constant(k, Complex64::new(c, 0.0))).collect()
}

#[derive(Clone, Debug)]
pub struct NewtonConfig {
    /// Largest admissible `|Omega|_0`.
    pub threshold: f64,
    /// Smoothing cutoff applied to the input; `None` keeps everything.
    pub cutoff: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            cutoff: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonStep {
    pub coords: FamilyCoordinates,
    /// Generator of the conjugacy, coefficients on `(Y1, Y2, Z)`.
    pub h: Vec<NilFunction>,
    /// Perturbation left after conjugating by `exp(H)` and moving to the
    /// family member `coords`, to second order.
    pub remainder: VfCochain,
    pub input_norm: f64,
    pub residual_norm: f64,
    /// Constant obstruction left by the vector-field solve.
    pub obstruction: f64,
}

/// One step of the scheme for the perturbed action `X + Omega`:
/// `coords = P(Delta Omega)`, `H` solves `delta0 H = Delta Omega - s(coords)`,
/// and the remainder is
/// `Omega - s - delta0 H + [H, Omega] - 1/2 [H, delta0 H]`.
pub fn newton_step(
    alg: &TwoStepAlgebra,
    params: &ActionParams,
    omega: &VfCochain,
    witnesses: &Witnesses,
    config: &NewtonConfig,
) -> Result<NewtonStep, RigidityError> {
    check_vf(omega)?;
    let omega = match config.cutoff {
        Some(c) => smoothing_truncate_vf(omega, c),
        None => omega.clone(),
    };
    let input_norm = omega.norm(0.0);
    if input_norm > config.threshold {
        return Err(RigidityError::ThresholdExceeded {
            norm: input_norm,
            threshold: config.threshold,
        });
    }
    let k = omega.truncation();
    let reduced = delta_op_vf(params, &omega, witnesses)?;
    let coords = project_p(params, &reduced)?;
    let s = section_s(params, &coords, k);
    let sol = cohomology::vf_coboundary_solve(alg, params, &reduced.sub(&s), witnesses)?;
    let h = sol.h;
    let dh = cohomology::vf_delta0(alg, params, &h)?;
    let mut rem = omega.sub(&s).sub(&dh);
    let pairs = [(&omega.x1, &dh.x1), (&omega.x2, &dh.x2)];
    let mut out = [Vec::new(), Vec::new()];
    for (slot, (om, d)) in pairs.into_iter().enumerate() {
        let first = vf_bracket(alg, &h, om)?;
        let second = vf_bracket(alg, &h, d)?;
        out[slot] = first
            .iter()
            .zip(&second)
            .map(|(a, b)| a.sub(&b.scale(Complex64::new(0.5, 0.0))))
            .collect();
    }
    let [c1, c2] = out;
    rem = rem.add(&VfCochain { x1: c1, x2: c2 });
    Ok(NewtonStep {
        residual_norm: rem.norm(0.0),
        coords,
        h,
        remainder: rem,
        input_norm,
        obstruction: sol.residual.norm(),
    })
}

/// `delta0` of a vector field: `([X1, H], [X2, H])`.
pub fn vf_coboundary(alg: &TwoStepAlgebra, params: &ActionParams, h: &[NilFunction]) -> Result<VfCochain, RigidityError> {
    Ok(cohomology::vf_delta0(alg, params, h)?)
}

/// Real zero-average toral vector field with coefficients decaying like
/// `(1 + |k|^2)^(-decay/2)`.
pub fn random_toral_field<R: Rng>(rng: &mut R, k: usize, decay: f64) -> Vec<NilFunction> {
    (0..3)
        .map(|_| NilFunction::from_toral(random_torus_function(rng, 2, k, decay, true)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub scale: f64,
    pub input_norm: f64,
    pub residual_norm: f64,
    pub coords_error: f64,
}

/// Runs [`newton_step`] on `eps * (s(coords) + delta0(H0))` for each `eps`.
pub fn newton_scaling_sweep(
    alg: &TwoStepAlgebra,
    params: &ActionParams,
    h0: &[NilFunction],
    coords: &FamilyCoordinates,
    scales: &[f64],
    witnesses: &Witnesses,
) -> Result<Vec<ScalingPoint>, RigidityError> {
    let base = vf_coboundary(alg, params, h0)?;
    let k = base.truncation();
    let omega = base.add(&section_s(params, coords, k));
    let config = NewtonConfig {
        threshold: f64::INFINITY,
        cutoff: None,
    };
    scales
        .iter()
        .map(|&eps| {
            let w = omega.scale(Complex64::new(eps, 0.0));
            let step = newton_step(alg, params, &w, witnesses, &config)?;
            let expect = FamilyCoordinates {
                mu1: eps * coords.mu1,
                lambda: coords.lambda.iter().map(|x| eps * x).collect(),
            };
            Ok(ScalingPoint {
                scale: eps,
                input_norm: step.input_norm,
                residual_norm: step.residual_norm,
                coords_error: step.coords.max_abs_diff(&expect),
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Text form of a vector-field cochain: lines of [`NilFunction::to_text`]
/// prefixed by a slot such as `X1.Y2` or `X2.Z`.
pub fn vf_to_text(omega: &VfCochain) -> String {
    let mut s = String::new();
    for (g, part) in [("X1", &omega.x1), ("X2", &omega.x2)] {
        for (c, f) in COMPONENTS.iter().zip(part) {
            for line in f.to_text().lines() {
                s.push_str(&format!("{g}.{c} {line}\n"));
            }
        }
    }
    s
}

/// Inverse of [`vf_to_text`]; errors carry the line number.
pub fn vf_parse(text: &str, bounds: &SupportBounds) -> Result<VfCochain, RigidityError> {
    let lines: Vec<&str> = text.lines().collect();
    for (i, raw) in lines.iter().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let slot = body.split_whitespace().next().unwrap_or("");
        let ok = ["X1", "X2"]
            .iter()
            .any(|g| COMPONENTS.iter().any(|c| slot == format!("{g}.{c}")));
        if !ok {
            return Err(NilError::Parse {
                line: i + 1,
                msg: format!("unknown slot {slot:?}"),
            }
            .into());
        }
    }
    let pick = |name: &str| -> Result<NilFunction, RigidityError> {
        let sub: Vec<&str> = lines
            .iter()
            .map(|l| {
                let body = l.split('#').next().unwrap_or("").trim();
                match body.split_once(char::is_whitespace) {
                    Some((slot, rest)) if slot == name => rest,
                    _ => "",
                }
            })
            .collect();
        Ok(NilFunction::parse(&sub.join("\n"), bounds)?)
    };
    let mut out = VfCochain::zeros(3, bounds.k);
    for (i, c) in COMPONENTS.iter().enumerate() {
        out.x1[i] = pick(&format!("X1.{c}"))?;
        out.x2[i] = pick(&format!("X2.{c}"))?;
    }
    Ok(out)
}
