//! Maximum (simulated) likelihood estimation: BFGS with backtracking line
//! search, sandwich standard errors, fit indices, and the warm-start
//! pipeline that seeds complex models from simpler ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{draws_for, Engine};
use crate::modelspec::{Family, ModelSpec, ParameterVector};

/// A log-likelihood over free parameters.
pub trait Objective: Sync {
    fn n_free(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Gradient contribution of every observation.
    fn observation_gradients(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>>;
}

impl Objective for Engine<'_> {
    fn n_free(&self) -> usize {
        Engine::n_free(self)
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Engine::value(self, theta)
    }

    fn value_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Engine::value_gradient(self, theta)
    }

    fn observation_gradients(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        Engine::observation_gradients(self, theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Options {
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of every accepted iterate, starting point first.
    pub history: Vec<f64>,
    pub message: String,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn project(theta: &mut [f64], bounds: &[(Option<f64>, Option<f64>)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        if let Some(lo) = lo {
            *t = t.max(*lo);
        }
        if let Some(hi) = hi {
            *t = t.min(*hi);
        }
    }
}

/// Projected gradient of a minimization: components whose descent direction
/// leaves the box at an active bound are zero.
fn projected(theta: &[f64], g: &[f64], bounds: &[(Option<f64>, Option<f64>)]) -> Vec<f64> {
    theta
        .iter()
        .zip(g)
        .zip(bounds)
        .map(|((t, g), (lo, hi))| {
            if lo.is_some_and(|l| *t <= l && *g > 0.0) || hi.is_some_and(|h| *t >= h && *g < 0.0) {
                0.0
            } else {
                *g
            }
        })
        .collect()
}

/// Starting inverse Hessian of the negative log-likelihood: the inverse of
/// the outer product of observation gradients when it is positive definite,
/// the identity otherwise. The flag tells whether the first step still needs
/// scaling.
fn initial_inverse(objective: &dyn Objective, x: &[f64], n: usize) -> (DMatrix<f64>, bool) {
    if let Ok(rows) = objective.observation_gradients(x) {
        let mut outer = DMatrix::<f64>::zeros(n, n);
        for g in &rows {
            let v = DVector::from_column_slice(g);
            outer += &v * v.transpose();
        }
        if let Some(inv) = outer.cholesky().map(|c| c.inverse()) {
            if inv.iter().all(|v| v.is_finite()) {
                return (inv, false);
            }
        }
    }
    (DMatrix::identity(n, n), true)
}

const STALL_WINDOW: usize = 10;

/// BFGS ascent with Armijo backtracking; box bounds by projection.
pub fn maximize(
    objective: &dyn Objective,
    start: &[f64],
    bounds: &[(Option<f64>, Option<f64>)],
    options: Options,
) -> Result<Optimum> {
    let n = start.len();
    if objective.n_free() != n || bounds.len() != n {
        return Err(Error::Arity {
            what: "optimizer start".into(),
            expected: objective.n_free(),
            found: n,
        });
    }
    let mut x = start.to_vec();
    project(&mut x, bounds);
    let (f0, g0) = objective.value_gradient(&x)?;
    if !f0.is_finite() {
        return Err(Error::NumericDomain {
            parameter: "start".into(),
            detail: "objective is not finite at the starting values".into(),
        });
    }
    // minimize the negative log-likelihood
    let mut f = -f0;
    let mut g: Vec<f64> = g0.iter().map(|v| -v).collect();
    let mut history = vec![f0];
    let mut gnorms = vec![max_norm(&projected(&x, &g, bounds))];
    let (mut hinv, mut fresh) = initial_inverse(objective, &x, n);
    // no update applied since the last (re)initialization
    let mut untouched = true;
    let mut iterations = 0;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;

    while iterations < options.max_iter {
        let pg = projected(&x, &g, bounds);
        if max_norm(&pg) < options.tol {
            converged = true;
            message = "gradient below tolerance".into();
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut d = -(&hinv * &gv);
        if d.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            untouched = true;
            d = -gv.clone();
        }
        if fresh {
            let scale = 1.0 / max_norm(d.as_slice()).max(1.0);
            d *= scale;
        }
        let slope0 = d.dot(&gv);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            project(&mut trial, bounds);
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                break;
            }
            if let Ok(v) = objective.value(&trial) {
                let ft = -v;
                if ft.is_finite() && ft <= f + 1e-4 * slope {
                    accepted = Some((trial, s, None));
                    break;
                }
                // Near the optimum the decrease drowns in rounding error;
                // fall back to the directional derivative.
                if ft.is_finite() && (f - ft).abs() <= 1e-10 * f.abs().max(1.0) {
                    if let Ok((vt, gt)) = objective.value_gradient(&trial) {
                        let dd: f64 = gt.iter().zip(d.iter()).map(|(a, b)| -a * b).sum();
                        if 0.9 * slope0 <= dd && dd <= -0.8 * slope0 {
                            accepted = Some((trial, s, Some((vt, gt))));
                            break;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        let Some((trial, s, evaluated)) = accepted else {
            if fresh {
                message = "line search failed".into();
                break;
            }
            if untouched {
                hinv = DMatrix::identity(n, n);
                fresh = true;
            } else {
                (hinv, fresh) = initial_inverse(objective, &x, n);
                untouched = true;
            }
            continue;
        };
        let (fv, gt) = match evaluated {
            Some(r) => r,
            None => match objective.value_gradient(&trial) {
                Ok(r) => r,
                Err(_) => {
                    message = "gradient failed at accepted step".into();
                    break;
                }
            },
        };
        let g_new: Vec<f64> = gt.iter().map(|v| -v).collect();
        let sv = DVector::from_vec(s);
        let yv = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if fresh {
                hinv *= sy / yv.dot(&(&hinv * &yv));
                fresh = false;
            }
            untouched = false;
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= rho * (&hy * sv.transpose() + &sv * hy.transpose());
            hinv += (rho * rho * yhy + rho) * (&sv * sv.transpose());
        }
        x = trial;
        f = -fv;
        g = g_new;
        history.push(fv);
        gnorms.push(max_norm(&projected(&x, &g, bounds)));
        if history.len() > STALL_WINDOW {
            let first = history.len() - 1 - STALL_WINDOW;
            let gain = fv - history[first];
            // neither the value nor the gradient is improving
            let recent = gnorms[first + 1..]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if gain <= 1e-12 * fv.abs().max(1.0) && recent > 0.5 * gnorms[first] {
                message = format!("no progress over {STALL_WINDOW} iterations");
                break;
            }
        }
    }
    if !converged && iterations >= options.max_iter {
        let pg = projected(&x, &g, bounds);
        converged = max_norm(&pg) < options.tol;
    }
    Ok(Optimum {
        gradient: g.iter().map(|v| -v).collect(),
        value: -f,
        theta: x,
        iterations,
        converged,
        history,
        message,
    })
}

#[derive(Clone, Debug)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    /// Outer product of per-observation gradients.
    pub meat: DMatrix<f64>,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

/// Pseudo-inverse of a symmetric matrix; eigenvalues below `rtol·max|λ|`
/// are dropped.
fn symmetric_pinv(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, f64, usize) {
    let eig = SymmetricEigen::new(m.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    let mut inv = DVector::zeros(abs.len());
    let mut dropped = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > rtol * max && l != 0.0 {
            inv[i] = 1.0 / l;
        } else {
            dropped += 1;
        }
    }
    let q = &eig.eigenvectors;
    (
        q * DMatrix::from_diagonal(&inv) * q.transpose(),
        cond,
        dropped,
    )
}

/// Central-difference Hessian of the analytic gradient, symmetrized.
pub fn numeric_hessian(objective: &dyn Objective, theta: &[f64]) -> Result<DMatrix<f64>> {
    let n = theta.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = 1e-4 * theta[i].abs().max(1.0);
        let mut up = theta.to_vec();
        up[i] += step;
        let mut dn = theta.to_vec();
        dn[i] -= step;
        let (_, gu) = objective.value_gradient(&up)?;
        let (_, gd) = objective.value_gradient(&dn)?;
        for j in 0..n {
            h[(j, i)] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Sandwich `H⁻¹ B H⁻¹`.
pub fn robust_covariance(objective: &dyn Objective, theta: &[f64]) -> Result<Covariance> {
    let hessian = numeric_hessian(objective, theta)?;
    let per = objective.observation_gradients(theta)?;
    let n = theta.len();
    let mut meat = DMatrix::zeros(n, n);
    for g in &per {
        let v = DVector::from_column_slice(g);
        meat += &v * v.transpose();
    }
    sandwich(hessian, meat)
}

pub fn sandwich(hessian: DMatrix<f64>, meat: DMatrix<f64>) -> Result<Covariance> {
    let mut warnings = Vec::new();
    let (hinv, cond, dropped) = symmetric_pinv(&hessian, 1e-12);
    if dropped > 0 {
        warnings.push(format!(
            "singular Hessian (condition number {cond:.3e}); pseudo-inverse used, {dropped} direction(s) dropped"
        ));
    } else if cond > 1e10 {
        warnings.push(format!(
            "ill-conditioned Hessian (condition number {cond:.3e})"
        ));
    }
    let max_eig = SymmetricEigen::new(hessian.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max_eig > 0.0 {
        warnings.push("Hessian is not negative definite; the point may not be a maximum".into());
    }
    let v = &hinv * &meat * &hinv;
    let matrix = (&v + v.transpose()) * 0.5;
    Ok(Covariance {
        matrix,
        hessian,
        meat,
        condition_number: cond,
        warnings,
    })
}

/// `1 − (LL_final − k) / LL_initial`.
pub fn rho_square_bar(ll_final: f64, ll_initial: f64, k: usize) -> f64 {
    1.0 - (ll_final - k as f64) / ll_initial
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Significance {
    /// |t| ≥ 1.96
    P95,
    /// 1.645 ≤ |t| < 1.96
    P90,
    None,
}

impl Significance {
    pub fn of(t: f64) -> Self {
        let a = t.abs();
        if a >= 1.96 {
            Significance::P95
        } else if a >= 1.645 {
            Significance::P90
        } else {
            Significance::None
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub family: Family,
    pub params: ParameterVector,
    /// Free parameters, in table order; the vectors below align with it.
    pub free_names: Vec<String>,
    pub robust_se: Vec<f64>,
    pub robust_t: Vec<f64>,
    pub significance: Vec<Significance>,
    pub covariance: DMatrix<f64>,
    pub ll_initial: f64,
    pub ll_start: f64,
    pub ll_final: f64,
    pub rho_square_bar: f64,
    pub n_free: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.free_names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.params.value(name)
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.robust_se[i])
    }

    pub fn t(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.robust_t[i])
    }
}

/// Maximizes from `start`; `initial` only supplies the reported initial
/// log-likelihood.
pub fn estimate_engine(
    engine: &Engine,
    initial: &ParameterVector,
    start: &ParameterVector,
    options: Options,
) -> Result<EstimationResult> {
    let free_names = engine.free_names();
    let ll_initial = engine.loglik(initial)?.total;
    let mut start = start.clone();
    start.project();
    let theta0: Vec<f64> = free_names
        .iter()
        .map(|n| start.value(n).expect("same table"))
        .collect();
    let bounds: Vec<(Option<f64>, Option<f64>)> = free_names
        .iter()
        .map(|n| {
            let p = engine.template().get(n).expect("same table");
            (p.lower, p.upper)
        })
        .collect();
    let opt = maximize(engine, &theta0, &bounds, options)?;
    let cov = robust_covariance(engine, &opt.theta)?;
    let robust_se: Vec<f64> = (0..free_names.len())
        .map(|i| {
            let v = cov.matrix[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    let robust_t: Vec<f64> = opt
        .theta
        .iter()
        .zip(&robust_se)
        .map(|(e, s)| e / s)
        .collect();
    let significance = robust_t.iter().map(|&t| Significance::of(t)).collect();
    let mut warnings = cov.warnings.clone();
    if robust_se.iter().any(|s| s.is_nan()) {
        warnings.push("non-positive variance for some parameters".into());
    }
    if !opt.converged {
        warnings.push(format!("optimizer did not converge: {}", opt.message));
    }
    let n_free = free_names.len();
    Ok(EstimationResult {
        family: engine.family(),
        params: engine.parameters(&opt.theta)?,
        robust_se,
        robust_t,
        significance,
        covariance: cov.matrix,
        ll_initial,
        ll_start: opt.history[0],
        ll_final: opt.value,
        rho_square_bar: rho_square_bar(opt.value, ll_initial, n_free),
        n_free,
        n_obs: engine.n_observations(),
        converged: opt.converged,
        iterations: opt.iterations,
        gradient_norm: max_norm(&opt.gradient),
        history: opt.history,
        warnings,
        free_names,
    })
}

/// Estimates a spec from its own start values (or `start`), drawing
/// `spec.draws` scrambled Halton points seeded by `spec.seed`.
pub fn estimate(
    spec: &ModelSpec,
    data: &Dataset,
    start: Option<&ParameterVector>,
    options: Options,
) -> Result<EstimationResult> {
    let draws = draws_for(spec, data.len())?;
    let engine = Engine::new(spec, data, draws.as_ref())?;
    estimate_engine(
        &engine,
        &spec.params,
        start.unwrap_or(&spec.params),
        options,
    )
}

// ---------------------------------------------------------------------------
// Warm starts

/// `B_PURPOSE_C2` → `B_PURPOSE`.
fn class_base(name: &str) -> Option<&str> {
    let (base, suffix) = name.rsplit_once("_C")?;
    (!suffix.is_empty() && suffix.chars().all(|c| c.is_ascii_digit())).then_some(base)
}

/// Start values for `spec` from earlier estimates: exact names first, then
/// the class-free base name with uniform jitter in ±`jitter`.
pub fn seed_start(
    spec: &ModelSpec,
    earlier: &[&ParameterVector],
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> (ParameterVector, Vec<String>) {
    let mut start = spec.params.clone();
    let mut copied = Vec::new();
    let names: Vec<String> = start
        .entries()
        .iter()
        .filter(|p| p.is_free())
        .map(|p| p.name.clone())
        .collect();
    for name in names {
        let exact = earlier.iter().rev().find_map(|p| p.value(&name));
        let value = match exact {
            Some(v) => Some(v),
            None => class_base(&name).and_then(|base| {
                earlier
                    .iter()
                    .rev()
                    .find_map(|p| p.value(base))
                    .map(|v| v + jitter * (2.0 * rng.random::<f64>() - 1.0))
            }),
        };
        if let Some(v) = value {
            start.set_value(&name, v).expect("own parameter");
            copied.push(name);
        }
    }
    (start, copied)
}

#[derive(Clone, Debug)]
pub struct StageRecord {
    pub family: Family,
    /// Families whose estimates seeded this stage.
    pub seeded_from: Vec<Family>,
    pub seeded_parameters: usize,
    pub converged: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub results: Vec<Option<EstimationResult>>,
    pub provenance: Vec<StageRecord>,
    /// For class models: the membership class holds the larger fitted share
    /// of low-income users.
    pub canonical_classes: Option<bool>,
}

/// Average fitted probability of the first (non-reference) class among
/// observations with `LowIncome = 1`.
pub fn low_income_share(
    result: &EstimationResult,
    spec: &ModelSpec,
    data: &Dataset,
) -> Option<f64> {
    if !spec.family.has_classes() {
        return None;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for obs in data.observations() {
        if obs.value("LowIncome") != Some(1.0) {
            continue;
        }
        let pi =
            crate::likelihood::membership_probabilities(obs, &spec.classes, &result.params).ok()?;
        total += pi[0];
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

/// Estimates `stages` in order, each seeded from the earlier results.
/// Class-specific copies of single-class parameters get seeded jitter in
/// ±0.1. A failed stage is recorded and later stages continue from what is
/// available.
pub fn warm_start_pipeline(
    data: &Dataset,
    stages: &[ModelSpec],
    seed: u64,
    options: Options,
) -> PipelineOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<Option<EstimationResult>> = Vec::new();
    let mut provenance = Vec::new();
    for spec in stages {
        let earlier: Vec<&ParameterVector> = results.iter().flatten().map(|r| &r.params).collect();
        let seeded_from: Vec<Family> = results.iter().flatten().map(|r| r.family).collect();
        let (start, copied) = seed_start(spec, &earlier, 0.1, &mut rng);
        let upstream_failed = results
            .iter()
            .any(|r| r.as_ref().is_none_or(|r| !r.converged));
        match estimate(spec, data, Some(&start), options) {
            Ok(r) => {
                provenance.push(StageRecord {
                    family: spec.family,
                    seeded_from,
                    seeded_parameters: copied.len(),
                    converged: r.converged,
                    note: upstream_failed
                        .then(|| "an upstream stage failed or did not converge".to_string()),
                });
                results.push(Some(r));
            }
            Err(e) => {
                provenance.push(StageRecord {
                    family: spec.family,
                    seeded_from,
                    seeded_parameters: copied.len(),
                    converged: false,
                    note: Some(e.to_string()),
                });
                results.push(None);
            }
        }
    }
    let canonical_classes = stages
        .iter()
        .zip(&results)
        .rev()
        .find(|(s, r)| s.family.has_classes() && r.is_some())
        .and_then(|(s, r)| low_income_share(r.as_ref().expect("checked"), s, data))
        .map(|share| share >= 0.5);
    PipelineOutcome {
        results,
        provenance,
        canonical_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_alternatives, Observation, VarKind};
    use crate::modelspec::{ClassSpec, UtilityTerm, CONSTANT};
    use std::collections::BTreeMap;

    struct Quadratic {
        a: f64,
        m: f64,
        xs: Vec<f64>,
    }

    /// Σ_n −a (x − m − d_n)², with offsets d_n centred on zero.
    impl Objective for Quadratic {
        fn n_free(&self) -> usize {
            1
        }
        fn value(&self, t: &[f64]) -> Result<f64> {
            Ok(self
                .xs
                .iter()
                .map(|d| -self.a * (t[0] - self.m - d).powi(2))
                .sum())
        }
        fn value_gradient(&self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
            let g = self
                .xs
                .iter()
                .map(|d| -2.0 * self.a * (t[0] - self.m - d))
                .sum();
            Ok((self.value(t)?, vec![g]))
        }
        fn observation_gradients(&self, t: &[f64]) -> Result<Vec<Vec<f64>>> {
            Ok(self
                .xs
                .iter()
                .map(|d| vec![-2.0 * self.a * (t[0] - self.m - d)])
                .collect())
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let q = Quadratic {
            a: 1.0,
            m: 3.0,
            xs: vec![0.0],
        };
        let opt = maximize(&q, &[0.0], &[(None, None)], Options::default()).unwrap();
        assert!((opt.theta[0] - 3.0).abs() < 1e-8);
        assert!(opt.converged);
        assert!(opt.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn bounds_are_respected() {
        let q = Quadratic {
            a: 1.0,
            m: 3.0,
            xs: vec![0.0],
        };
        let opt = maximize(&q, &[0.0], &[(None, Some(2.0))], Options::default()).unwrap();
        assert_eq!(opt.theta[0], 2.0);
        assert!(opt.converged);
    }

    #[test]
    fn scalar_sandwich_closed_form() {
        let q = Quadratic {
            a: 2.0,
            m: 1.0,
            xs: vec![-0.5, 0.1, 0.4],
        };
        let cov = robust_covariance(&q, &[1.0]).unwrap();
        let h = -2.0 * 2.0 * 3.0;
        let b: f64 = [-0.5f64, 0.1, 0.4].iter().map(|d| (4.0 * d).powi(2)).sum();
        assert!((cov.hessian[(0, 0)] - h).abs() < 1e-6);
        assert!((cov.matrix[(0, 0)] - b / (h * h)).abs() < 1e-9);
    }

    #[test]
    fn singular_hessian_is_flagged() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]);
        let b = DMatrix::identity(2, 2);
        let cov = sandwich(h, b).unwrap();
        assert!(!cov.warnings.is_empty());
        assert!(cov.matrix.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rho_square_bar_examples() {
        assert!((rho_square_bar(-47.49, -79.1, 11) - 0.2606).abs() < 1e-4);
        assert!((rho_square_bar(-567.44, -951.43, 50) - 0.3510).abs() < 1e-4);
        assert_eq!(rho_square_bar(-10.0, -10.0, 0), 0.0);
    }

    #[test]
    fn significance_thresholds() {
        assert_eq!(Significance::of(1.96), Significance::P95);
        assert_eq!(Significance::of(-1.7), Significance::P90);
        assert_eq!(Significance::of(1.644), Significance::None);
    }

    fn asc_only_spec() -> ModelSpec {
        let mut params = ParameterVector::new();
        params = params.free("ASC_ODT", 0.0).free("ASC_INDIFF", 0.0);
        ModelSpec {
            family: Family::Mnl,
            alternatives: default_alternatives(),
            classes: vec![ClassSpec {
                label: "All".into(),
                membership: vec![],
                utilities: vec![
                    vec![],
                    vec![UtilityTerm::new("ASC_ODT", CONSTANT)],
                    vec![UtilityTerm::new("ASC_INDIFF", CONSTANT)],
                ],
            }],
            latents: vec![],
            draws: 1,
            seed: 1,
            params,
        }
    }

    fn shares_data(counts: [usize; 3], times: usize) -> Dataset {
        let mut obs = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            for i in 0..c * times {
                obs.push(Observation::new(format!("{k}-{i}")).with_choice(k as u32 + 1));
            }
        }
        Dataset::new(
            obs,
            BTreeMap::<String, VarKind>::new(),
            default_alternatives(),
        )
        .unwrap()
    }

    #[test]
    fn saturated_ascs_reproduce_shares() {
        let spec = asc_only_spec();
        let data = shares_data([40, 23, 9], 1);
        let r = estimate(&spec, &data, None, Options::default()).unwrap();
        assert!(r.converged);
        let odt = r.estimate("ASC_ODT").unwrap();
        let ind = r.estimate("ASC_INDIFF").unwrap();
        let p = crate::likelihood::mnl_probabilities(&[0.0, odt, ind]).unwrap();
        for (pi, c) in p.iter().zip([40.0, 23.0, 9.0]) {
            assert!((pi - c / 72.0).abs() < 1e-6);
        }
        assert!((r.ll_initial + 79.10).abs() < 0.01);
        assert!(r.ll_final >= r.ll_start);
    }

    #[test]
    fn duplicated_data_shrinks_errors() {
        let spec = asc_only_spec();
        let a = estimate(
            &spec,
            &shares_data([40, 23, 9], 1),
            None,
            Options::default(),
        )
        .unwrap();
        let b = estimate(
            &spec,
            &shares_data([40, 23, 9], 2),
            None,
            Options::default(),
        )
        .unwrap();
        for i in 0..2 {
            let ratio = b.robust_se[i] / a.robust_se[i];
            assert!(
                (ratio - std::f64::consts::FRAC_1_SQRT_2).abs()
                    < 0.01 * std::f64::consts::FRAC_1_SQRT_2
            );
        }
    }

    #[test]
    fn class_base_names() {
        assert_eq!(class_base("B_PURPOSE_C2"), Some("B_PURPOSE"));
        assert_eq!(class_base("ASC_ODT"), None);
        assert_eq!(class_base("B_CAR"), None);
    }

    #[test]
    fn seeding_copies_and_jitters() {
        let lc = crate::modelspec::preset(Family::Lc);
        let mnl = crate::modelspec::reference_truth(Family::Mnl);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (start, copied) = seed_start(&lc, &[&mnl], 0.1, &mut rng);
        let v1 = start.value("B_INVEH_C1").unwrap();
        let v2 = start.value("B_INVEH_C2").unwrap();
        assert!((v1 - 1.35).abs() <= 0.1 && (v2 - 1.35).abs() <= 0.1);
        assert_ne!(v1, v2);
        assert!(!copied.contains(&"G_CAP".to_string()));
        assert_eq!(start.value("B_UNASSIGNED_C1"), Some(0.0));
    }
}
