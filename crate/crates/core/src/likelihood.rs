//! Log-likelihoods of the four model families and their analytic gradients.
//!
//! The name-based functions at the top evaluate single model pieces directly
//! from a [`ModelSpec`]; they are slow and meant for checking. [`Engine`]
//! compiles a spec against a dataset once and evaluates the full simulated
//! likelihood with gradients, in parallel over observations.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::modelspec::{
    ClassSpec, Family, LatentVariableSpec, MeasurementEq, ModelSpec, ParameterVector, UtilityTerm,
    CONSTANT,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodValue {
    pub total: f64,
    pub per_observation: Vec<f64>,
}

fn param(params: &ParameterVector, name: &str) -> Result<f64> {
    params
        .value(name)
        .ok_or_else(|| Error::spec(format!("unknown parameter `{name}`")))
}

fn variable(obs: &Observation, name: &str, lv: &BTreeMap<String, f64>) -> Result<f64> {
    if name == CONSTANT {
        return Ok(1.0);
    }
    if let Some(v) = lv.get(name) {
        return Ok(*v);
    }
    obs.value(name).ok_or_else(|| {
        Error::spec(format!(
            "variable `{name}` not available for observation `{}`",
            obs.id
        ))
    })
}

/// `Σ parameter × variable` with latent names resolved from `lv`.
pub fn systematic_utility(
    obs: &Observation,
    terms: &[UtilityTerm],
    params: &ParameterVector,
    lv: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut v = 0.0;
    for t in terms {
        v += param(params, &t.parameter)? * variable(obs, &t.variable, lv)?;
    }
    Ok(v)
}

/// Softmax with max subtraction.
pub fn mnl_probabilities(utilities: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = utilities.iter().find(|u| !u.is_finite()) {
        return Err(Error::NumericDomain {
            parameter: "utility".into(),
            detail: format!("non-finite utility {bad}"),
        });
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `log Σ exp(x)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Class probabilities; the reference class has membership utility 0.
pub fn membership_probabilities(
    obs: &Observation,
    classes: &[ClassSpec],
    params: &ParameterVector,
) -> Result<Vec<f64>> {
    let refs = classes.iter().filter(|c| c.membership.is_empty()).count();
    if refs != 1 {
        return Err(Error::spec(format!(
            "exactly one reference class is required, found {refs}"
        )));
    }
    let none = BTreeMap::new();
    let u = classes
        .iter()
        .map(|c| systematic_utility(obs, &c.membership, params, &none))
        .collect::<Result<Vec<_>>>()?;
    mnl_probabilities(&u)
}

/// Systematic part plus `|σ| ω`.
pub fn structural_value(
    obs: &Observation,
    lv: &LatentVariableSpec,
    params: &ParameterVector,
    omega: f64,
) -> Result<f64> {
    let none = BTreeMap::new();
    let systematic = systematic_utility(obs, &lv.structural, params, &none)?;
    Ok(systematic + param(params, &lv.scale)?.abs() * omega)
}

/// Likert response, or a continuous column of the same name.
pub fn indicator_value(obs: &Observation, name: &str) -> Option<f64> {
    obs.indicators
        .get(name)
        .or_else(|| obs.covariates.get(name))
        .copied()
}

/// Normal log-densities of the present indicators.
pub fn measurement_loglik(
    obs: &Observation,
    lv_values: &BTreeMap<String, f64>,
    measurements: &[(String, MeasurementEq)],
    params: &ParameterVector,
) -> Result<f64> {
    let mut total = 0.0;
    for (latent, m) in measurements {
        let Some(y) = indicator_value(obs, &m.indicator) else {
            continue;
        };
        let lv = *lv_values
            .get(latent)
            .ok_or_else(|| Error::spec(format!("no value for latent `{latent}`")))?;
        let sd = param(params, &m.scale)?.abs();
        if sd == 0.0 {
            return Err(Error::NumericDomain {
                parameter: m.scale.clone(),
                detail: "degenerate measurement scale".into(),
            });
        }
        let mean = param(params, &m.intercept)? + param(params, &m.loading)? * lv;
        let z = (y - mean) / sd;
        total += -LN_SQRT_2PI - sd.ln() - 0.5 * z * z;
    }
    Ok(total)
}

/// Measurement equations paired with the latent they load on.
pub fn measurement_list(spec: &ModelSpec) -> Vec<(String, MeasurementEq)> {
    spec.latents
        .iter()
        .flat_map(|l| l.measurements.iter().map(|m| (l.name.clone(), m.clone())))
        .collect()
}

/// Integrand of one observation at fixed latent values:
/// `log Σ_c π_c P_c(choice | LV) + measurement log-density`.
pub fn conditional_loglik(
    obs: &Observation,
    spec: &ModelSpec,
    params: &ParameterVector,
    lv_values: &BTreeMap<String, f64>,
) -> Result<f64> {
    let choice = obs
        .choice
        .ok_or_else(|| Error::spec(format!("observation `{}` has no choice", obs.id)))?;
    let y = spec
        .alternatives
        .iter()
        .position(|a| a.index == choice)
        .ok_or_else(|| Error::spec(format!("choice {choice} is not a spec alternative")))?;
    let pi = membership_probabilities(obs, &spec.classes, params)?;
    let mut terms = Vec::with_capacity(pi.len());
    for (c, class) in spec.classes.iter().enumerate() {
        let u = class
            .utilities
            .iter()
            .map(|t| systematic_utility(obs, t, params, lv_values))
            .collect::<Result<Vec<_>>>()?;
        let log_p = u[y] - log_sum_exp(&u);
        terms.push(pi[c].ln() + log_p);
    }
    let choice_part = log_sum_exp(&terms);
    Ok(choice_part + measurement_loglik(obs, lv_values, &measurement_list(spec), params)?)
}

// ---------------------------------------------------------------------------
// Draws

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Standard-normal draws indexed by (observation, draw, dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct DrawSet {
    pub n_obs: usize,
    pub n_draws: usize,
    pub dims: usize,
    pub skip: usize,
    /// `None` for the plain Halton sequence.
    pub scramble_seed: Option<u64>,
    values: Vec<f64>,
}

impl DrawSet {
    pub fn get(&self, obs: usize, draw: usize, dim: usize) -> f64 {
        self.values[(obs * self.n_draws + draw) * self.dims + dim]
    }

    /// Draws of one observation, draw-major.
    pub fn observation(&self, obs: usize) -> &[f64] {
        let w = self.n_draws * self.dims;
        &self.values[obs * w..(obs + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Radical inverse of `index` in `base` with per-position digit
/// permutations; unpermuted positions beyond the table keep digit 0.
fn radical_inverse(mut index: u64, base: u64, perms: &[Vec<u64>]) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    let mut k = 0;
    if perms.is_empty() {
        while index > 0 {
            out += (index % base) as f64 * scale;
            index /= base;
            scale *= inv;
        }
        return out;
    }
    while k < perms.len() {
        out += perms[k][(index % base) as usize] as f64 * scale;
        index /= base;
        scale *= inv;
        k += 1;
    }
    // centre of the last cell keeps the point strictly inside (0, 1)
    out + 0.5 * scale * base as f64 * inv
}

/// Plain Halton points of one dimension, starting after `skip` points.
pub fn halton_sequence(base: u64, skip: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| radical_inverse((skip + i + 1) as u64, base, &[]))
        .collect()
}

/// Observation `o` takes points `o·R .. (o+1)·R` of each dimension's
/// sequence, after dropping the first `skip`. With a seed, every digit
/// position of every dimension gets an independent random permutation.
pub fn halton_draws(
    n_obs: usize,
    n_draws: usize,
    dims: usize,
    skip: usize,
    scramble_seed: Option<u64>,
) -> Result<DrawSet> {
    if n_draws == 0 {
        return Err(Error::domain("number of draws must be positive"));
    }
    if dims > PRIMES.len() {
        return Err(Error::domain(format!(
            "at most {} draw dimensions are supported",
            PRIMES.len()
        )));
    }
    let total = (n_obs * n_draws + skip) as u64;
    let normal = Normal::standard();
    let mut values = vec![0.0; n_obs * n_draws * dims];
    for (d, &base) in PRIMES.iter().take(dims).enumerate() {
        let perms: Vec<Vec<u64>> = match scramble_seed {
            None => Vec::new(),
            Some(seed) => {
                let mut digits = 1;
                let mut reach = base;
                while reach <= total {
                    reach = reach.saturating_mul(base);
                    digits += 1;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (base << 32));
                (0..digits)
                    .map(|_| {
                        let mut p: Vec<u64> = (0..base).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            }
        };
        for i in 0..n_obs * n_draws {
            let u = radical_inverse((skip + i + 1) as u64, base, &perms);
            values[i * dims + d] = normal.inverse_cdf(u);
        }
    }
    Ok(DrawSet {
        n_obs,
        n_draws,
        dims,
        skip,
        scramble_seed,
        values,
    })
}

// ---------------------------------------------------------------------------
// Compiled engine

#[derive(Clone, Copy, Debug)]
struct Term {
    param: usize,
    x: f64,
}

#[derive(Clone, Copy, Debug)]
struct LatentTerm {
    param: usize,
    latent: usize,
}

#[derive(Clone, Copy, Debug)]
struct Indicator {
    value: f64,
    latent: usize,
    intercept: usize,
    loading: usize,
    scale: usize,
}

#[derive(Clone, Debug)]
struct CompiledObs {
    row: usize,
    choice: usize,
    weight: f64,
    /// Observed-variable utility terms, indexed `c * J + j`.
    utility: Vec<Vec<Term>>,
    membership: Vec<Vec<Term>>,
    structural: Vec<Vec<Term>>,
    indicators: Vec<Indicator>,
}

/// Output of one engine evaluation; gradients are over the full parameter
/// table.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub total: f64,
    pub per_observation: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
    pub observation_gradients: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Want {
    Value,
    Gradient,
    ObservationGradients,
}

/// A spec compiled against a dataset and a draw set.
#[derive(Debug)]
pub struct Engine<'a> {
    family: Family,
    template: ParameterVector,
    names: Vec<String>,
    free: Vec<usize>,
    n_alt: usize,
    n_class: usize,
    n_latent: usize,
    /// Latent terms of each class/alternative, indexed `c * J + j`.
    latent_terms: Vec<Vec<LatentTerm>>,
    latent_scale: Vec<usize>,
    obs: Vec<CompiledObs>,
    draws: Option<&'a DrawSet>,
    n_draws: usize,
}

impl<'a> Engine<'a> {
    pub fn new(spec: &ModelSpec, data: &Dataset, draws: Option<&'a DrawSet>) -> Result<Self> {
        spec.check().into_result()?;
        let names: Vec<String> = spec
            .params
            .entries()
            .iter()
            .map(|p| p.name.clone())
            .collect();
        let index = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::spec(format!("unknown parameter `{name}`")))
        };
        let latent_pos: BTreeMap<&str, usize> = spec
            .latents
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let n_alt = spec.alternatives.len();
        let n_class = spec.classes.len();
        let n_latent = spec.latents.len();

        let mut latent_terms = vec![Vec::new(); n_class * n_alt];
        for (c, class) in spec.classes.iter().enumerate() {
            for (j, terms) in class.utilities.iter().enumerate() {
                for t in terms {
                    if let Some(&l) = latent_pos.get(t.variable.as_str()) {
                        latent_terms[c * n_alt + j].push(LatentTerm {
                            param: index(&t.parameter)?,
                            latent: l,
                        });
                    }
                }
            }
        }
        let latent_scale = spec
            .latents
            .iter()
            .map(|l| index(&l.scale))
            .collect::<Result<Vec<_>>>()?;

        let (n_draws, draws) = if n_latent == 0 {
            (1, None)
        } else {
            let d = draws.ok_or_else(|| {
                Error::domain("a draw set is required for models with latent variables")
            })?;
            if d.dims != n_latent {
                return Err(Error::Arity {
                    what: "draw dimensions".into(),
                    expected: n_latent,
                    found: d.dims,
                });
            }
            if d.n_obs < data.len() {
                return Err(Error::domain(format!(
                    "draw set covers {} observations, data has {}",
                    d.n_obs,
                    data.len()
                )));
            }
            (d.n_draws, Some(d))
        };

        let compile_terms = |obs: &Observation, terms: &[UtilityTerm]| -> Result<Vec<Term>> {
            let mut out = Vec::new();
            for t in terms {
                if latent_pos.contains_key(t.variable.as_str()) {
                    continue;
                }
                let x = if t.variable == CONSTANT {
                    1.0
                } else {
                    obs.value(&t.variable).ok_or_else(|| {
                        Error::spec(format!(
                            "observation `{}` lacks variable `{}`",
                            obs.id, t.variable
                        ))
                    })?
                };
                if x != 0.0 {
                    out.push(Term {
                        param: index(&t.parameter)?,
                        x,
                    });
                }
            }
            Ok(out)
        };

        let mut compiled = Vec::with_capacity(data.len());
        for (row, obs) in data.observations().iter().enumerate() {
            let code = obs
                .choice
                .ok_or_else(|| Error::spec(format!("observation `{}` has no choice", obs.id)))?;
            let choice = spec
                .alternatives
                .iter()
                .position(|a| a.index == code)
                .ok_or_else(|| Error::spec(format!("choice {code} is not a spec alternative")))?;
            let mut utility = Vec::with_capacity(n_class * n_alt);
            for class in &spec.classes {
                for terms in &class.utilities {
                    utility.push(compile_terms(obs, terms)?);
                }
            }
            let membership = spec
                .classes
                .iter()
                .map(|c| compile_terms(obs, &c.membership))
                .collect::<Result<Vec<_>>>()?;
            let structural = spec
                .latents
                .iter()
                .map(|l| compile_terms(obs, &l.structural))
                .collect::<Result<Vec<_>>>()?;
            let mut indicators = Vec::new();
            for (l, lv) in spec.latents.iter().enumerate() {
                for m in &lv.measurements {
                    if let Some(value) = indicator_value(obs, &m.indicator) {
                        indicators.push(Indicator {
                            value,
                            latent: l,
                            intercept: index(&m.intercept)?,
                            loading: index(&m.loading)?,
                            scale: index(&m.scale)?,
                        });
                    }
                }
            }
            compiled.push(CompiledObs {
                row,
                choice,
                weight: obs.weight,
                utility,
                membership,
                structural,
                indicators,
            });
        }

        Ok(Self {
            family: spec.family,
            free: spec.params.free_positions(),
            template: spec.params.clone(),
            names,
            n_alt,
            n_class,
            n_latent,
            latent_terms,
            latent_scale,
            obs: compiled,
            draws,
            n_draws,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn template(&self) -> &ParameterVector {
        &self.template
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free.iter().map(|&i| self.names[i].clone()).collect()
    }

    pub fn n_observations(&self) -> usize {
        self.obs.len()
    }

    /// Full parameter values with the free entries taken from `theta`.
    pub fn full(&self, theta: &[f64]) -> Vec<f64> {
        let mut full: Vec<f64> = self.template.entries().iter().map(|p| p.value).collect();
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = theta[k];
        }
        full
    }

    pub fn parameters(&self, theta: &[f64]) -> Result<ParameterVector> {
        self.template.with_free_values(theta)
    }

    /// Evaluates at a full parameter vector.
    pub fn evaluate(&self, values: &[f64], want: Want) -> Result<Evaluation> {
        if values.len() != self.names.len() {
            return Err(Error::Arity {
                what: "parameter values".into(),
                expected: self.names.len(),
                found: values.len(),
            });
        }
        let grad = want != Want::Value;
        let results: Vec<Result<(f64, Option<Vec<f64>>)>> = self
            .obs
            .par_iter()
            .map(|o| self.observation(o, values, grad, false))
            .collect();
        let mut per_observation = Vec::with_capacity(results.len());
        let mut gradient = grad.then(|| vec![0.0; values.len()]);
        let mut observation_gradients = (want == Want::ObservationGradients).then(Vec::new);
        for r in results {
            let (ll, g) = r?;
            per_observation.push(ll);
            if let (Some(total), Some(g)) = (gradient.as_mut(), g) {
                for (t, v) in total.iter_mut().zip(&g) {
                    *t += v;
                }
                if let Some(all) = observation_gradients.as_mut() {
                    all.push(g);
                }
            }
        }
        let total = per_observation.iter().sum();
        if let Some(g) = &gradient {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericDomain {
                    parameter: self.names[i].clone(),
                    detail: "non-finite gradient".into(),
                });
            }
        }
        Ok(Evaluation {
            total,
            per_observation,
            gradient,
            observation_gradients,
        })
    }

    pub fn loglik(&self, params: &ParameterVector) -> Result<LikelihoodValue> {
        let values = self.values_of(params)?;
        let e = self.evaluate(&values, Want::Value)?;
        Ok(LikelihoodValue {
            total: e.total,
            per_observation: e.per_observation,
        })
    }

    fn values_of(&self, params: &ParameterVector) -> Result<Vec<f64>> {
        self.names
            .iter()
            .map(|n| {
                params
                    .value(n)
                    .ok_or_else(|| Error::spec(format!("unknown parameter `{n}`")))
            })
            .collect()
    }

    /// Log-likelihood at free values.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(&self.full(theta), Want::Value)?.total)
    }

    /// Log-likelihood and its gradient over the free parameters.
    pub fn value_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(&self.full(theta), Want::Gradient)?;
        let g = e.gradient.expect("requested");
        Ok((e.total, self.free.iter().map(|&i| g[i]).collect()))
    }

    /// Per-observation gradients over the free parameters.
    pub fn observation_gradients(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let e = self.evaluate(&self.full(theta), Want::ObservationGradients)?;
        Ok(e.observation_gradients
            .expect("requested")
            .into_iter()
            .map(|g| self.free.iter().map(|&i| g[i]).collect())
            .collect())
    }

    fn non_finite(&self, values: &[f64], o: &CompiledObs) -> Error {
        let worst = self
            .free
            .iter()
            .copied()
            .max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()))
            .unwrap_or(0);
        Error::NumericDomain {
            parameter: self.names.get(worst).cloned().unwrap_or_default(),
            detail: format!("non-finite log-likelihood at observation row {}", o.row + 1),
        }
    }

    fn observation(
        &self,
        o: &CompiledObs,
        th: &[f64],
        want_grad: bool,
        robust: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let (nc, nj, nl) = (self.n_class, self.n_alt, self.n_latent);
        let ncj = nc * nj;
        let y = o.choice;

        // structural means and scales
        let mut s = vec![0.0; nl];
        let mut sig = vec![0.0; nl];
        for l in 0..nl {
            s[l] = o.structural[l].iter().map(|t| th[t.param] * t.x).sum();
            sig[l] = th[self.latent_scale[l]].abs();
        }

        // utilities as base + Σ_l slope·ω
        let mut base = vec![0.0; ncj];
        let mut slope = vec![0.0; ncj * nl];
        let mut lv_coef = vec![0.0; ncj * nl];
        for cj in 0..ncj {
            let mut v: f64 = o.utility[cj].iter().map(|t| th[t.param] * t.x).sum();
            for lt in &self.latent_terms[cj] {
                let g = th[lt.param];
                lv_coef[cj * nl + lt.latent] += g;
                v += g * s[lt.latent];
                slope[cj * nl + lt.latent] += g * sig[lt.latent];
            }
            base[cj] = v;
        }

        // class shares
        let mut log_pi = vec![0.0; nc];
        for c in 0..nc {
            log_pi[c] = o.membership[c].iter().map(|t| th[t.param] * t.x).sum();
        }
        let lse = log_sum_exp(&log_pi);
        for v in &mut log_pi {
            *v -= lse;
        }
        let pi: Vec<f64> = log_pi.iter().map(|v| v.exp()).collect();

        // measurement: Σ_k e_k² = Σ_l (saa - 2ω sab + ω² sbb)
        let mut m_const = 0.0;
        let mut saa = vec![0.0; nl];
        let mut sab = vec![0.0; nl];
        let mut sbb = vec![0.0; nl];
        let mut ind_a = Vec::with_capacity(o.indicators.len());
        let mut ind_b = Vec::with_capacity(o.indicators.len());
        for ind in &o.indicators {
            let sd = th[ind.scale].abs();
            if sd == 0.0 {
                return Err(Error::NumericDomain {
                    parameter: self.names[ind.scale].clone(),
                    detail: "degenerate measurement scale".into(),
                });
            }
            let l = ind.latent;
            let a = (ind.value - th[ind.intercept] - th[ind.loading] * s[l]) / sd;
            let b = th[ind.loading] * sig[l] / sd;
            m_const -= LN_SQRT_2PI + sd.ln();
            saa[l] += a * a;
            sab[l] += a * b;
            sbb[l] += b * b;
            ind_a.push(a);
            ind_b.push(b);
        }

        let omega_all: &[f64] = match self.draws {
            Some(d) => d.observation(o.row),
            None => &[],
        };
        let r_count = self.n_draws;

        let kernel = Kernel {
            base: &base,
            slope: &slope,
            log_pi: &log_pi,
            pi: &pi,
            saa: &saa,
            sab: &sab,
            sbb: &sbb,
            omega: omega_all,
            n_draws: r_count,
            choice: y,
            want_grad,
            robust,
        };
        let Accumulated {
            m,
            wsum,
            a: mut acc_a,
            b: mut acc_b,
            h: mut acc_h,
            w1: mut acc_w1,
            w2: mut acc_w2,
        } = match (nc, nj, nl) {
            (1, 3, 0) => kernel.run(Fixed::<1, 3, 0>),
            (2, 3, 0) => kernel.run(Fixed::<2, 3, 0>),
            (1, 3, 1) => kernel.run(Fixed::<1, 3, 1>),
            (2, 3, 1) => kernel.run(Fixed::<2, 3, 1>),
            (1, 3, 2) => kernel.run(Fixed::<1, 3, 2>),
            (2, 3, 2) => kernel.run(Fixed::<2, 3, 2>),
            _ => kernel.run(Dynamic { nc, nj, nl }),
        };
        if !robust && !(wsum > 0.0 && wsum.is_finite()) {
            // every draw underflowed in probability space
            return self.observation(o, th, want_grad, true);
        }

        let ll = m + wsum.ln() - (r_count as f64).ln() + m_const;
        if !ll.is_finite() {
            return Err(self.non_finite(th, o));
        }
        let weight = o.weight;
        if !want_grad {
            return Ok((weight * ll, None));
        }

        let inv = 1.0 / wsum;
        for a in acc_a
            .iter_mut()
            .chain(acc_b.iter_mut())
            .chain(acc_h.iter_mut())
            .chain(acc_w1.iter_mut())
            .chain(acc_w2.iter_mut())
        {
            *a *= inv;
        }

        let mut g = vec![0.0; th.len()];
        for cj in 0..ncj {
            for t in &o.utility[cj] {
                g[t.param] += t.x * acc_a[cj];
            }
            for lt in &self.latent_terms[cj] {
                let l = lt.latent;
                g[lt.param] += s[l] * acc_a[cj] + sig[l] * acc_b[cj * nl + l];
            }
        }
        for c in 0..nc {
            let share = pi[c];
            for t in &o.membership[c] {
                g[t.param] += t.x * (acc_h[c] - share);
            }
        }

        // d log f / d LV, and the same times ω, posterior means
        let mut d_lv = vec![0.0; nl];
        let mut d_lv_w = vec![0.0; nl];
        for cj in 0..ncj {
            for l in 0..nl {
                let coef = lv_coef[cj * nl + l];
                if coef != 0.0 {
                    d_lv[l] += coef * acc_a[cj];
                    d_lv_w[l] += coef * acc_b[cj * nl + l];
                }
            }
        }
        for (k, ind) in o.indicators.iter().enumerate() {
            let l = ind.latent;
            let sd = th[ind.scale].abs();
            let (a, b) = (ind_a[k], ind_b[k]);
            let (w1, w2) = (acc_w1[l], acc_w2[l]);
            let e1 = a - b * w1;
            let ew = a * w1 - b * w2;
            let e2 = a * a - 2.0 * a * b * w1 + b * b * w2;
            let e_lv = s[l] * e1 + sig[l] * ew;
            g[ind.intercept] += e1 / sd;
            g[ind.loading] += e_lv / sd;
            g[ind.scale] += th[ind.scale].signum() * (e2 - 1.0) / sd;
            let beta = th[ind.loading];
            d_lv[l] += beta * e1 / sd;
            d_lv_w[l] += beta * ew / sd;
        }
        for l in 0..nl {
            for t in &o.structural[l] {
                g[t.param] += t.x * d_lv[l];
            }
            let sc = self.latent_scale[l];
            g[sc] += th[sc].signum() * d_lv_w[l];
        }
        if weight != 1.0 {
            for v in &mut g {
                *v *= weight;
            }
        }
        Ok((weight * ll, Some(g)))
    }
}

/// Loop sizes of the draw kernel; the fixed variant lets the compiler unroll
/// the small inner loops.
trait Dims: Copy {
    fn sizes(self) -> (usize, usize, usize);
}

#[derive(Clone, Copy)]
struct Fixed<const C: usize, const J: usize, const L: usize>;

impl<const C: usize, const J: usize, const L: usize> Dims for Fixed<C, J, L> {
    #[inline(always)]
    fn sizes(self) -> (usize, usize, usize) {
        (C, J, L)
    }
}

#[derive(Clone, Copy)]
struct Dynamic {
    nc: usize,
    nj: usize,
    nl: usize,
}

impl Dims for Dynamic {
    #[inline(always)]
    fn sizes(self) -> (usize, usize, usize) {
        (self.nc, self.nj, self.nl)
    }
}

/// Per-observation inputs of the draw loop.
struct Kernel<'k> {
    base: &'k [f64],
    slope: &'k [f64],
    log_pi: &'k [f64],
    pi: &'k [f64],
    saa: &'k [f64],
    sab: &'k [f64],
    sbb: &'k [f64],
    omega: &'k [f64],
    n_draws: usize,
    choice: usize,
    want_grad: bool,
    robust: bool,
}

/// Draw sums scaled by `exp(-m)`.
struct Accumulated {
    m: f64,
    wsum: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl Kernel<'_> {
    #[inline(always)]
    fn run<D: Dims>(&self, dims: D) -> Accumulated {
        let (nc, nj, nl) = dims.sizes();
        let ncj = nc * nj;
        let y = self.choice;
        let want_grad = self.want_grad;
        let robust = self.robust;
        let base = &self.base[..ncj];
        let slope = &self.slope[..ncj * nl];
        let log_pi = &self.log_pi[..nc];
        let pi = &self.pi[..nc];
        let saa = &self.saa[..nl];
        let sab = &self.sab[..nl];
        let sbb = &self.sbb[..nl];
        let omega = &self.omega[..self.n_draws * nl];

        let mut v = vec![0.0; ncj];
        let mut p = vec![0.0; ncj];
        let mut lp = vec![0.0; nc];
        let mut h = vec![0.0; nc];

        let mut m = f64::NEG_INFINITY;
        let mut wsum = 0.0;
        let mut acc_a = vec![0.0; if want_grad { ncj } else { 0 }];
        let mut acc_b = vec![0.0; if want_grad { ncj * nl } else { 0 }];
        let mut acc_h = vec![0.0; if want_grad { nc } else { 0 }];
        let mut acc_w1 = vec![0.0; if want_grad { nl } else { 0 }];
        let mut acc_w2 = vec![0.0; if want_grad { nl } else { 0 }];

        for r in 0..self.n_draws {
            let om = if nl > 0 {
                &omega[r * nl..(r + 1) * nl]
            } else {
                &[][..]
            };
            for cj in 0..ncj {
                let mut u = base[cj];
                for l in 0..nl {
                    u += slope[cj * nl + l] * om[l];
                }
                v[cj] = u;
            }
            let mut mq = 0.0;
            for l in 0..nl {
                let w = om[l];
                mq -= 0.5 * (saa[l] - 2.0 * w * sab[l] + w * w * sbb[l]);
            }
            // choice probabilities per class, mixed over classes
            let mut mix = 0.0;
            for c in 0..nc {
                let vs = &v[c * nj..(c + 1) * nj];
                let mut top = 0;
                for j in 1..nj {
                    if vs[j] > vs[top] {
                        top = j;
                    }
                }
                let mx = vs[top];
                let mut se = 0.0;
                for j in 0..nj {
                    let e = if j == top { 1.0 } else { (vs[j] - mx).exp() };
                    p[c * nj + j] = e;
                    se += e;
                }
                if robust {
                    lp[c] = log_pi[c] + vs[y] - mx - se.ln();
                } else {
                    let py = p[c * nj + y] / se;
                    h[c] = pi[c] * py;
                    mix += h[c];
                }
                if want_grad {
                    let inv = 1.0 / se;
                    for j in 0..nj {
                        p[c * nj + j] *= inv;
                    }
                }
            }
            // log weight = key + log(factor)
            let (key, factor) = if robust {
                let lmax = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sl = 0.0;
                for c in 0..nc {
                    h[c] = (lp[c] - lmax).exp();
                    sl += h[c];
                }
                for hc in h.iter_mut() {
                    *hc /= sl;
                }
                (lmax + sl.ln() + mq, 1.0)
            } else {
                if want_grad && mix > 0.0 {
                    let inv = 1.0 / mix;
                    for hc in h.iter_mut() {
                        *hc *= inv;
                    }
                }
                (mq, mix)
            };
            if key > m {
                if m != f64::NEG_INFINITY {
                    let scale = (m - key).exp();
                    wsum *= scale;
                    for a in acc_a
                        .iter_mut()
                        .chain(acc_b.iter_mut())
                        .chain(acc_h.iter_mut())
                        .chain(acc_w1.iter_mut())
                        .chain(acc_w2.iter_mut())
                    {
                        *a *= scale;
                    }
                }
                m = key;
            }
            let w = if key == m {
                factor
            } else {
                factor * (key - m).exp()
            };
            wsum += w;
            if want_grad && w > 0.0 {
                for c in 0..nc {
                    let wh = w * h[c];
                    acc_h[c] += wh;
                    for j in 0..nj {
                        let cj = c * nj + j;
                        let delta = if j == y { 1.0 } else { 0.0 };
                        let d = wh * (delta - p[cj]);
                        acc_a[cj] += d;
                        for l in 0..nl {
                            acc_b[cj * nl + l] += d * om[l];
                        }
                    }
                }
                for l in 0..nl {
                    acc_w1[l] += w * om[l];
                    acc_w2[l] += w * om[l] * om[l];
                }
            }
        }
        Accumulated {
            m,
            wsum,
            a: acc_a,
            b: acc_b,
            h: acc_h,
            w1: acc_w1,
            w2: acc_w2,
        }
    }
}

fn require(spec: &ModelSpec, family: Family) -> Result<()> {
    if spec.family != family {
        return Err(Error::spec(format!(
            "expected a {family} specification, found {}",
            spec.family
        )));
    }
    Ok(())
}

pub fn mnl_loglik(
    data: &Dataset,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<LikelihoodValue> {
    require(spec, Family::Mnl)?;
    Engine::new(spec, data, None)?.loglik(params)
}

pub fn lc_loglik(
    data: &Dataset,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<LikelihoodValue> {
    require(spec, Family::Lc)?;
    Engine::new(spec, data, None)?.loglik(params)
}

pub fn iclv_simulated_loglik(
    data: &Dataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    draws: &DrawSet,
) -> Result<LikelihoodValue> {
    require(spec, Family::Iclv)?;
    Engine::new(spec, data, Some(draws))?.loglik(params)
}

pub fn lc_iclv_simulated_loglik(
    data: &Dataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    draws: &DrawSet,
) -> Result<LikelihoodValue> {
    require(spec, Family::LcIclv)?;
    Engine::new(spec, data, Some(draws))?.loglik(params)
}

/// Draws sized for a spec and dataset: `spec.draws` scrambled Halton points
/// per observation, seeded by `spec.seed`. `None` for models without
/// latent variables.
pub fn draws_for(spec: &ModelSpec, n_obs: usize) -> Result<Option<DrawSet>> {
    if spec.latents.is_empty() {
        return Ok(None);
    }
    halton_draws(n_obs, spec.draws, spec.latents.len(), 10, Some(spec.seed)).map(Some)
}

/// `log φ(0)` per unit: the density constant used in closed-form checks.
pub fn gaussian_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * z * z
}
