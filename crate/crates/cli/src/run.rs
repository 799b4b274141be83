use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nilflow::algebra::{self, ActionParams, TwoStepAlgebra};
use nilflow::cohomology::{self, Cochain1, Witnesses};
use nilflow::diophantine::{self, DiophantineWitness};
use nilflow::nilrep::{self, nil_sobolev_norm, random_nil_function, NilFunction, SupportBounds};
use nilflow::rigidity::{self, FamilyCoordinates, NewtonConfig};
use nilflow::torus::{self, TorusError, TorusFunction, TorusVectorField};
use num_rational::BigRational;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{CliError, ExperimentConfig, Outcome};

/// Executes the configured subcommand without touching the output
/// directory.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.subcommand.as_str() {
        "witness" => witness(cfg),
        "solve-coboundary" => solve_coboundary(cfg),
        "split" => split(cfg),
        "spectrum" => spectrum(cfg),
        "gh-report" => gh_report(cfg),
        "kernel-dim" => kernel_dim(cfg),
        "constant-cohomology" => constant_cohomology(cfg),
        "kam" => kam(cfg),
        "rigidity-step" => rigidity_step(cfg),
        "cg-decay" => cg_decay(cfg),
        other => Err(crate::ConfigError::UnknownSubcommand(other.to_string()).into()),
    }
}

fn rng(cfg: &ExperimentConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed())
}

fn params(cfg: &ExperimentConfig) -> ActionParams {
    let mut p = ActionParams::new(cfg.list("alpha"), cfg.list("beta"));
    p.mu = cfg.real("mu");
    p
}

fn bounds(cfg: &ExperimentConfig) -> SupportBounds {
    SupportBounds {
        k: cfg.count("k"),
        n: cfg.count("n") as i64,
        m: cfg.count("m"),
    }
}

fn doubled(b: &SupportBounds) -> SupportBounds {
    SupportBounds {
        k: 2 * b.k,
        n: 2 * b.n,
        m: 2 * b.m,
    }
}

fn witnesses(p: &ActionParams, k: usize, r: f64) -> Result<Witnesses, CliError> {
    Ok(Witnesses::fit(p, k.max(1) as u32).map_err(|e| CliError::module("Cohomology", e))?.with_r(r))
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

fn witness(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let alpha = cfg.list("alpha");
    let gamma = cfg.opt_real("gamma").unwrap_or(alpha.len() as f64);
    let w = diophantine::fit_witness(&alpha, gamma, cfg.count("k") as u32).map_err(|e| CliError::module("Diophantine", e))?;
    let csv = format!("{}\n{}\n", DiophantineWitness::csv_header(alpha.len()), w.to_csv_row());
    Ok(Outcome {
        positive: w.is_valid(),
        csv,
        summary: json!({"kind": w.kind.as_str(), "C": w.c, "gamma": w.gamma, "K": w.k_max, "argmin": w.argmin, "divisor": w.divisor}),
    })
}

fn solve_coboundary(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let b = bounds(cfg);
    let tol = cfg.real("tol");
    let w = witnesses(&p, b.k.max(16), cfg.real("r"))?;
    let mut rng = rng(cfg);
    let mut csv = String::from("sample,rel_error,tame_ratio\n");
    let (mut worst, mut ratio) = (0.0f64, 0.0f64);
    for i in 0..cfg.count("samples") {
        let h0 = random_nil_function(&mut rng, &doubled(&b), cfg.real("decay"), true).truncated(&b);
        let om = cohomology::delta0(&p, &h0);
        let out = cohomology::delta0_star(&p, &om, &w, tol).map_err(|e| CliError::module("Cohomology", e))?;
        let err = nil_sobolev_norm(&out.h.sub(&h0), 0.0) / nil_sobolev_norm(&h0, 0.0).max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        ratio = ratio.max(out.tame_ratio);
        let _ = writeln!(csv, "{i},{},{}", e(err), e(out.tame_ratio));
    }
    Ok(Outcome {
        positive: worst <= 1e-10,
        csv,
        summary: json!({"max_rel_error": worst, "max_tame_ratio": ratio, "sigma": w.sigma, "r": w.r}),
    })
}

fn split(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let b = bounds(cfg);
    let big = doubled(&b);
    let w = witnesses(&p, big.k.max(16), cfg.real("r"))?;
    let decay = cfg.real("decay");
    let mut rng = rng(cfg);
    let mut csv = String::from("sample,truncation,reconstruction,h_ratio,err_ratio,laplacian_leak\n");
    let mut worst = 0.0f64;
    let mut ratios = [[0.0f64; 2]; 2];
    for i in 0..cfg.count("samples") {
        let f = random_nil_function(&mut rng, &big, decay, false);
        let g = random_nil_function(&mut rng, &big, decay, false);
        for (t, bb) in [b, big].iter().enumerate() {
            let om = Cochain1::new(f.truncated(bb), g.truncated(bb));
            let s = cohomology::delta1_star_split(&p, &om, &w).map_err(|e| CliError::module("Cohomology", e))?;
            let lap = cohomology::laplacian_split(&p, &om, &w).map_err(|e| CliError::module("Cohomology", e))?;
            let rec = s.reconstruction_error(&p, &om) / om.norm(0.0).max(f64::MIN_POSITIVE);
            worst = worst.max(rec);
            ratios[t][0] = ratios[t][0].max(s.h_ratio);
            ratios[t][1] = ratios[t][1].max(s.err_ratio);
            let _ = writeln!(csv, "{i},{},{},{},{},{}", bb.k, e(rec), e(s.h_ratio), e(s.err_ratio), e(lap.leak));
        }
    }
    let drift = |j: usize| (ratios[1][j] - ratios[0][j]).abs() / ratios[0][j].max(f64::MIN_POSITIVE);
    let (dh, de) = (drift(0), drift(1));
    Ok(Outcome {
        positive: worst <= 1e-10 && dh < 0.1 && de < 0.1,
        csv,
        summary: json!({
            "max_reconstruction": worst,
            "h_ratio": [ratios[0][0], ratios[1][0]],
            "err_ratio": [ratios[0][1], ratios[1][1]],
            "h_ratio_drift": dh,
            "err_ratio_drift": de,
        }),
    })
}

fn spectrum(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let s = cohomology::rep_spectrum(&p, cfg.int("n"), cfg.count("m")).map_err(|e| CliError::module("Cohomology", e))?;
    let mut csv = String::from("index,eigenvalue,trusted\n");
    for (i, x) in s.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{}", e(*x), i < s.trusted);
    }
    Ok(Outcome {
        positive: true,
        csv,
        summary: json!({"n": s.n, "M": s.m, "trusted": s.trusted, "min_abs": s.min_trusted_abs(), "convention": cohomology::CONVENTION}),
    })
}

fn gh_report(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let r = cohomology::gh_certificate(&p, cfg.count("n") as i64, cfg.count("m"), cfg.count("k"))
        .map_err(|e| CliError::module("Cohomology", e))?;
    let mut csv = String::from("n,min_abs_eigenvalue,near_zero,trusted,raw\n");
    for row in &r.rows {
        let _ = writeln!(csv, "{},{},{},{},{}", row.n, e(row.min_abs), row.near_zero, row.trusted, row.raw);
    }
    let mut summary = serde_json::to_value(&r).map_err(|e| CliError::module("Serialize", e))?;
    if let Some(o) = summary.as_object_mut() {
        o.remove("rows");
        o.insert("verdict".into(), json!(if r.certified { "certified" } else { "negative" }));
    }
    Ok(Outcome {
        positive: r.certified,
        csv,
        summary,
    })
}

fn kernel_dim(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let (n, m, k) = (cfg.count("n"), cfg.count("m"), cfg.count("k"));
    let d = cohomology::joint_kernel_dim(&p, n as i64, m, k, cfg.real("tol")).map_err(|e| CliError::module("Cohomology", e))?;
    Ok(Outcome {
        positive: d == 1,
        csv: format!("N,M,K,joint_kernel_dim\n{n},{m},{k},{d}\n"),
        summary: json!({"joint_kernel_dim": d, "uniquely_ergodic": d == 1}),
    })
}

fn rationals(raw: &str) -> Option<Vec<BigRational>> {
    raw.split(',').map(algebra::parse_rational).collect()
}

fn constant_cohomology(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let alg = match cfg.opt_text("algebra_file") {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(Path::new(path), e))?;
            TwoStepAlgebra::parse(&text).map_err(|e| CliError::module("Algebra", e))?
        }
        None => TwoStepAlgebra::heisenberg(),
    };
    let exact = (|| {
        let mut p = ActionParams::new(rationals(cfg.raw("alpha"))?, rationals(cfg.raw("beta"))?);
        p.mu = algebra::parse_rational(cfg.raw("mu"))?;
        Some(p)
    })();
    let (dim, kernel, image, reps) = match exact {
        Some(p) => {
            let c = algebra::const_cohomology_basis(&alg, &p).map_err(|e| CliError::module("Algebra", e))?;
            let reps: Vec<Vec<String>> = c
                .representatives
                .iter()
                .map(|r| r.to_vec().iter().map(|x| x.to_string()).collect())
                .collect();
            (c.dimension, c.kernel_dim, c.image_rank, reps)
        }
        None => {
            let c = algebra::const_cohomology_basis(&alg, &params(cfg)).map_err(|e| CliError::module("Algebra", e))?;
            let reps: Vec<Vec<String>> = c
                .representatives
                .iter()
                .map(|r| r.to_vec().iter().map(|x| e(*x)).collect())
                .collect();
            (c.dimension, c.kernel_dim, c.image_rank, reps)
        }
    };
    let n = alg.dim();
    let mut csv = String::from("representative");
    for slot in ["X1", "X2"] {
        for i in 0..n {
            let _ = write!(csv, ",{slot}_{i}");
        }
    }
    csv.push('\n');
    for (i, r) in reps.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", r.join(","));
    }
    Ok(Outcome {
        positive: true,
        csv,
        summary: json!({
            "dimension": dim,
            "kernel_dim": kernel,
            "image_rank": image,
            "q": alg.q(),
            "p": alg.p(),
            "exact": exact_flag(cfg),
        }),
    })
}

fn exact_flag(cfg: &ExperimentConfig) -> bool {
    rationals(cfg.raw("alpha")).is_some() && rationals(cfg.raw("beta")).is_some() && algebra::parse_rational(cfg.raw("mu")).is_some()
}

/// `eps sin(2 pi (x_1 + ... + x_d))` in the first component, zero elsewhere.
pub fn sine_perturbation(dim: usize, eps: f64) -> TorusVectorField {
    let k = vec![1i64; dim];
    let neg = vec![-1i64; dim];
    let mut s = TorusFunction::single_mode(dim, 1, &k, Complex64::new(0.0, -0.5 * eps));
    s.set_coeff(&neg, Complex64::new(0.0, 0.5 * eps));
    let mut components = vec![s];
    components.extend((1..dim).map(|_| TorusFunction::zeros(dim, 1)));
    TorusVectorField { components }
}

/// Residuals below this are roundoff and excluded from the order fit.
pub const ROUNDOFF_FLOOR: f64 = 1e-15;

/// Least-squares slope of `log r_{i+1}` against `log r_i` over pairs whose
/// second record is above `floor`.
pub fn convergence_order(residuals: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = residuals
        .windows(2)
        .filter(|w| w[1] > floor && w[0] > 0.0)
        .map(|w| (w[0], w[1]))
        .collect();
    rigidity::loglog_slope(&pts)
}

fn kam(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let omega = cfg.list("omega");
    let beta = sine_perturbation(omega.len(), cfg.real("eps"));
    let floor = cfg.real("floor");
    match torus::kam_iterate(&omega, &beta, cfg.count("k"), cfg.count("max_iter"), floor) {
        Ok(state) => {
            let res: Vec<f64> = state.history.iter().map(|r| r.r0).collect();
            let conj = torus::conjugacy_error(&state, cfg.count("grid")).map_err(|e| CliError::module("Torus", e))?;
            let order = convergence_order(&res, ROUNDOFF_FLOOR);
            Ok(Outcome {
                positive: true,
                csv: state.residual_csv(),
                summary: json!({
                    "converged": true,
                    "iterations": state.history.len() - 1,
                    "residual": state.residual(),
                    "order": order,
                    "conjugacy_error": conj,
                    "lambda_bar": state.lambda_bar,
                }),
            })
        }
        Err(TorusError::NoConvergence { iterations, residual, cause }) => Ok(Outcome {
            positive: false,
            csv: String::from("iteration,residual_r0\n"),
            summary: json!({"converged": false, "iterations": iterations, "residual": residual, "cause": cause}),
        }),
        Err(e) => Err(CliError::module("Torus", e)),
    }
}

fn rigidity_step(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = params(cfg);
    let alg = TwoStepAlgebra::heisenberg();
    let w = witnesses(&p, 16, 1.0)?;
    let mu = p.mu;
    let ps = rigidity::project_p(&p, &rigidity::section_s(&p, &FamilyCoordinates::new(0.3, [-0.2, 0.1], 0.5), 1))
        .map_err(|e| CliError::module("Rigidity", e))?
        .max_abs_diff(&FamilyCoordinates::new(0.3, [-0.2, 0.1], 0.5));
    if let Some(path) = cfg.opt_text("perturbation_file") {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(Path::new(path), e))?;
        let omega = rigidity::vf_parse(&text, &bounds(cfg)).map_err(|e| CliError::module("Rigidity", e))?;
        let config = NewtonConfig {
            threshold: cfg.real("threshold"),
            cutoff: cfg.opt_real("cutoff"),
        };
        let step = rigidity::newton_step(&alg, &p, &omega, &w, &config).map_err(|e| CliError::module("Rigidity", e))?;
        let c = &step.coords;
        let csv = format!(
            "mu1,a1,a2,b,input_norm,residual_norm,obstruction\n{},{},{},{},{},{},{}\n",
            e(c.mu1),
            e(c.lambda[0]),
            e(c.lambda[1]),
            e(c.lambda[2]),
            e(step.input_norm),
            e(step.residual_norm),
            e(step.obstruction)
        );
        let quad = step.residual_norm / step.input_norm.powi(2).max(f64::MIN_POSITIVE);
        return Ok(Outcome {
            positive: true,
            csv,
            summary: json!({"mu": mu, "coords": c, "input_norm": step.input_norm, "residual_norm": step.residual_norm, "quadratic_constant": quad, "p_of_s_error": ps}),
        });
    }
    let mut rng = rng(cfg);
    let scales = cfg.list("scales");
    let mut csv = String::from("sample,scale,input_norm,residual_norm,coords_error\n");
    let mut slopes = Vec::new();
    let mut quad = 0.0f64;
    for i in 0..cfg.count("samples") {
        let h0 = rigidity::random_toral_field(&mut rng, cfg.count("k"), cfg.real("decay"));
        let coords = FamilyCoordinates::new(rng.random_range(-1.0..1.0), [0.0, 0.0], rng.random_range(-1.0..1.0));
        let pts = rigidity::newton_scaling_sweep(&alg, &p, &h0, &coords, &scales, &w).map_err(|e| CliError::module("Rigidity", e))?;
        for q in &pts {
            let _ = writeln!(csv, "{i},{},{},{},{}", e(q.scale), e(q.input_norm), e(q.residual_norm), e(q.coords_error));
            quad = quad.max(q.residual_norm / q.input_norm.powi(2));
        }
        let xy: Vec<(f64, f64)> = pts.iter().map(|q| (q.input_norm, q.residual_norm)).collect();
        slopes.push(rigidity::loglog_slope(&xy).unwrap_or(f64::NAN));
    }
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Outcome {
        positive: slopes.iter().all(|s| (s - 2.0).abs() <= 0.3) && ps <= 1e-12,
        csv,
        summary: json!({"mu": mu, "slope_min": lo, "slope_max": hi, "quadratic_constant": quad, "p_of_s_error": ps}),
    })
}

fn cg_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let n = cfg.count("n") as i64;
    let b = SupportBounds {
        k: cfg.count("k"),
        n: 2 * n,
        m: cfg.count("m"),
    };
    let mut rng = rng(cfg);
    let corpus: Vec<NilFunction> = (0..cfg.count("samples"))
        .map(|_| random_nil_function(&mut rng, &b, cfg.real("decay"), false))
        .collect();
    let (s, k) = (cfg.real("s"), cfg.real("order"));
    let lo = nilrep::cg_decay_report(&corpus, s, k, n).map_err(|e| CliError::module("Nilrep", e))?;
    let hi = nilrep::cg_decay_report(&corpus, s, k, 2 * n).map_err(|e| CliError::module("Nilrep", e))?;
    let drift = nilrep::cg_plateau_drift(&lo, &hi);
    let mut csv = String::from("n_max,n,partial_sup_ratio\n");
    for r in [&lo, &hi] {
        for (m, v) in &r.partial_sums {
            let _ = writeln!(csv, "{},{m},{}", r.n_max, e(*v));
        }
    }
    Ok(Outcome {
        positive: drift.is_some_and(|d| d < 0.1),
        csv,
        summary: json!({"s": s, "k": k, "ratio": [lo.max_ratio, hi.max_ratio], "argmax_n": [lo.argmax_n, hi.argmax_n], "drift": drift}),
    })
}
