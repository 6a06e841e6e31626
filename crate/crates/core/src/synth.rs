//! Synthetic populations drawn from a model at known parameters, and the
//! Gauss–Hermite quadrature likelihood used to check simulated likelihoods.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Observation, VarKind};
use crate::error::{Error, Result};
use crate::likelihood::{
    conditional_loglik, log_sum_exp, membership_probabilities, mnl_probabilities, structural_value,
    systematic_utility, LikelihoodValue,
};
use crate::modelspec::{ModelSpec, ParameterVector};

/// Mutually exclusive dummies; with probability `1 − Σ p` none is set.
#[derive(Clone, Debug, PartialEq)]
pub struct DummyGroup {
    pub name: String,
    pub levels: Vec<(String, f64)>,
}

impl DummyGroup {
    pub fn new(name: &str, levels: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            levels: levels.iter().map(|(l, p)| (l.to_string(), *p)).collect(),
        }
    }
}

/// How generated indicator values are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IndicatorScale {
    /// Rounded to the nearest integer and clamped to 1–5.
    #[default]
    Likert,
    /// Raw draws, kept as continuous columns.
    Continuous,
}

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub n: usize,
    pub marginals: Vec<DummyGroup>,
    pub spec: ModelSpec,
    pub truth: ParameterVector,
    pub seed: u64,
    pub indicators: IndicatorScale,
}

impl GeneratorConfig {
    pub fn new(spec: ModelSpec, truth: ParameterVector, n: usize, seed: u64) -> Self {
        Self {
            n,
            marginals: survey_marginals(),
            spec,
            truth,
            seed,
            indicators: IndicatorScale::Likert,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("population size must be positive"));
        }
        let mut covered = BTreeSet::new();
        for g in &self.marginals {
            let mut sum = 0.0;
            for (level, p) in &g.levels {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::domain(format!(
                        "probability of `{level}` is outside [0, 1]"
                    )));
                }
                if !covered.insert(level.as_str()) {
                    return Err(Error::domain(format!("`{level}` appears in two groups")));
                }
                sum += p;
            }
            if sum > 1.0 + 1e-12 {
                return Err(Error::domain(format!(
                    "probabilities of group `{}` sum to {sum}",
                    g.name
                )));
            }
        }
        for v in self.spec.covariates() {
            if !covered.contains(v.as_str()) {
                return Err(Error::domain(format!("no marginal for covariate `{v}`")));
            }
        }
        self.spec.check().into_result()?;
        for name in self.spec.referenced_parameters() {
            if self.truth.value(&name).is_none() {
                return Err(Error::spec(format!("truth lacks parameter `{name}`")));
            }
        }
        Ok(())
    }
}

/// Sample shares of the 72-respondent fused survey.
pub fn survey_marginals() -> Vec<DummyGroup> {
    let f = |k: f64| k / 72.0;
    vec![
        DummyGroup::new("age", &[("Young", f(29.0)), ("MiddleAge", f(10.0))]),
        DummyGroup::new("gender", &[("Male", f(34.0))]),
        DummyGroup::new("marital", &[("Single", f(45.0))]),
        DummyGroup::new(
            "education",
            &[("Sec_school", f(30.0)), ("HigherEdu", f(18.0))],
        ),
        DummyGroup::new("income", &[("LowIncome", f(39.0)), ("HighIncome", f(11.0))]),
        DummyGroup::new("household", &[("Hhld_L", f(44.0)), ("Hhld_H", f(28.0))]),
        DummyGroup::new("car", &[("Car", f(4.0))]),
        DummyGroup::new(
            "in_vehicle",
            &[("InVeh_less", f(19.0)), ("InVeh_more", f(28.0))],
        ),
        DummyGroup::new(
            "purpose",
            &[
                ("WorkTrip", f(29.0)),
                ("NonworkTrip", f(11.0)),
                ("MixedTrip", f(32.0)),
            ],
        ),
        DummyGroup::new(
            "mode",
            &[("ActiveMode", f(25.0)), ("FixedService", f(14.0))],
        ),
        DummyGroup::new(
            "assigned",
            &[("Assigned_L", f(46.0)), ("Assigned_H", f(10.0))],
        ),
        DummyGroup::new(
            "unassigned",
            &[("Unassigned_L", f(46.0)), ("Unassigned_H", f(10.0))],
        ),
        DummyGroup::new("waiting", &[("Waiting_L", f(19.0)), ("Waiting_H", f(25.0))]),
    ]
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub data: Dataset,
    /// Indicator draws that fell outside [0.5, 5.5) before rounding.
    pub clamped: usize,
    pub indicator_draws: usize,
    /// Latent values per observation, in spec order.
    pub latent_values: Vec<Vec<f64>>,
    /// Drawn class per observation.
    pub classes: Vec<usize>,
}

impl Synthetic {
    pub fn clamp_rate(&self) -> f64 {
        if self.indicator_draws == 0 {
            0.0
        } else {
            self.clamped as f64 / self.indicator_draws as f64
        }
    }
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws covariates, latent values, indicators, a class and a choice for
/// each individual from one seeded stream.
pub fn generate(config: &GeneratorConfig) -> Result<Synthetic> {
    config.validate()?;
    let spec = &config.spec;
    let params = &config.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut dictionary = BTreeMap::new();
    for g in &config.marginals {
        for (level, _) in &g.levels {
            dictionary.insert(level.clone(), VarKind::Binary);
        }
    }
    let indicator_kind = match config.indicators {
        IndicatorScale::Likert => VarKind::Likert,
        IndicatorScale::Continuous => VarKind::Continuous,
    };
    for i in spec.indicators() {
        dictionary.insert(i, indicator_kind);
    }

    let width = config.n.to_string().len().max(4);
    let mut observations = Vec::with_capacity(config.n);
    let mut latent_values = Vec::with_capacity(config.n);
    let mut classes = Vec::with_capacity(config.n);
    let mut clamped = 0;
    let mut indicator_draws = 0;
    for i in 0..config.n {
        let mut obs = Observation::new(format!("s{i:0width$}"));
        for g in &config.marginals {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut hit = None;
            for (k, (_, p)) in g.levels.iter().enumerate() {
                acc += p;
                if hit.is_none() && u < acc {
                    hit = Some(k);
                }
            }
            for (k, (level, _)) in g.levels.iter().enumerate() {
                obs.covariates
                    .insert(level.clone(), if hit == Some(k) { 1.0 } else { 0.0 });
            }
        }

        let mut lv = BTreeMap::new();
        let mut lv_row = Vec::with_capacity(spec.latents.len());
        for l in &spec.latents {
            let omega: f64 = rng.sample(StandardNormal);
            let v = structural_value(&obs, l, params, omega)?;
            lv.insert(l.name.clone(), v);
            lv_row.push(v);
        }
        for l in &spec.latents {
            for m in &l.measurements {
                let alpha = params.value(&m.intercept).expect("validated");
                let beta = params.value(&m.loading).expect("validated");
                let sd = params.value(&m.scale).expect("validated").abs();
                let eps: f64 = rng.sample(StandardNormal);
                let raw = alpha + beta * lv[&l.name] + sd * eps;
                indicator_draws += 1;
                match config.indicators {
                    IndicatorScale::Likert => {
                        if !(0.5..5.5).contains(&raw) {
                            clamped += 1;
                        }
                        let v = raw.round().clamp(1.0, 5.0);
                        obs.indicators.insert(m.indicator.clone(), v);
                    }
                    IndicatorScale::Continuous => {
                        obs.covariates.insert(m.indicator.clone(), raw);
                    }
                }
            }
        }

        let pi = membership_probabilities(&obs, &spec.classes, params)?;
        let class = categorical(&mut rng, &pi);
        let utilities = spec.classes[class]
            .utilities
            .iter()
            .map(|t| systematic_utility(&obs, t, params, &lv))
            .collect::<Result<Vec<_>>>()?;
        let p = mnl_probabilities(&utilities)?;
        let choice = categorical(&mut rng, &p);
        obs.choice = Some(spec.alternatives[choice].index);

        observations.push(obs);
        latent_values.push(lv_row);
        classes.push(class);
    }
    Ok(Synthetic {
        data: Dataset::new(observations, dictionary, spec.alternatives.clone())?,
        clamped,
        indicator_draws,
        latent_values,
        classes,
    })
}

/// Gauss–Hermite nodes and weights for the weight function `exp(−x²)`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 64 {
        return Err(Error::domain(format!(
            "quadrature order {n} outside 1..=64"
        )));
    }
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Nodes and log-weights for a standard-normal expectation.
fn normal_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, w) = gauss_hermite(n)?;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    Ok((
        x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| (v / sqrt_pi).ln()).collect(),
    ))
}

/// Log of the integrand over the structural disturbances `omega`,
/// including their standard-normal kernel `−|ω|²/2`.
fn log_integrand(
    obs: &Observation,
    spec: &ModelSpec,
    params: &ParameterVector,
    omega: &[f64],
) -> Result<f64> {
    let mut lv = BTreeMap::new();
    for (latent, &w) in spec.latents.iter().zip(omega) {
        lv.insert(
            latent.name.clone(),
            structural_value(obs, latent, params, w)?,
        );
    }
    let kernel: f64 = omega.iter().map(|w| 0.5 * w * w).sum();
    Ok(conditional_loglik(obs, spec, params, &lv)? - kernel)
}

/// Mode and Cholesky factor of the inverse curvature of the log integrand,
/// by damped Newton steps on finite-difference derivatives.
fn posterior_shape(
    obs: &Observation,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = spec.latents.len();
    let h = 1e-4;
    let f = |w: &DVector<f64>| log_integrand(obs, spec, params, w.as_slice());
    let derivatives = |w: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let f0 = f(w)?;
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[i] += h;
            dn[i] -= h;
            let (fu, fd) = (f(&up)?, f(&dn)?);
            grad[i] = (fu - fd) / (2.0 * h);
            hess[(i, i)] = (fu - 2.0 * f0 + fd) / (h * h);
            for j in 0..i {
                let mut pp = w.clone();
                let mut pm = w.clone();
                let mut mp = w.clone();
                let mut mm = w.clone();
                pp[i] += h;
                pp[j] += h;
                pm[i] += h;
                pm[j] -= h;
                mp[i] -= h;
                mp[j] += h;
                mm[i] -= h;
                mm[j] -= h;
                let v = (f(&pp)? - f(&pm)? - f(&mp)? + f(&mm)?) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok((grad, hess))
    };

    let mut w = DVector::zeros(d);
    let mut fw = f(&w)?;
    for _ in 0..100 {
        let (grad, hess) = derivatives(&w)?;
        if grad.amax() < 1e-9 {
            break;
        }
        // Newton direction when the curvature is negative definite,
        // steepest ascent otherwise
        let step = match (-&hess).cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial = &w + &step * t;
            let ft = f(&trial)?;
            if ft.is_finite() && ft >= fw {
                w = trial;
                fw = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (_, hess) = derivatives(&w)?;
    let scale = (-hess)
        .cholesky()
        .and_then(|c| c.inverse().cholesky())
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::identity(d, d));
    Ok((w, scale))
}

/// Adaptive tensor-product Gauss–Hermite integration over the structural
/// disturbances, in place of the draw average. The rule is centred at each
/// observation's posterior mode and scaled by its curvature, so narrow
/// posteriors are integrated as accurately as wide ones.
pub fn quadrature_loglik(
    data: &Dataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    nodes: usize,
) -> Result<LikelihoodValue> {
    let dims = spec.latents.len();
    if dims > 2 {
        return Err(Error::UnsupportedDimension(dims));
    }
    let (x, lw) = normal_rule(nodes)?;
    let grid: Vec<Vec<usize>> = match dims {
        0 => vec![vec![]],
        1 => (0..nodes).map(|i| vec![i]).collect(),
        _ => (0..nodes)
            .flat_map(|i| (0..nodes).map(move |j| vec![i, j]))
            .collect(),
    };
    let mut per_observation = Vec::with_capacity(data.len());
    for obs in data.observations() {
        let (mode, scale) = posterior_shape(obs, spec, params)?;
        let log_det: f64 = scale.diagonal().iter().map(|v| v.ln()).sum();
        let mut terms = Vec::with_capacity(grid.len());
        for point in &grid {
            let u = DVector::from_iterator(dims, point.iter().map(|&k| x[k]));
            let omega = &mode + &scale * &u;
            let log_w: f64 = point.iter().map(|&k| lw[k]).sum();
            let kernel = 0.5 * u.norm_squared();
            terms.push(log_w + kernel + log_integrand(obs, spec, params, omega.as_slice())?);
        }
        per_observation.push(obs.weight * (log_det + log_sum_exp(&terms)));
    }
    Ok(LikelihoodValue {
        total: per_observation.iter().sum(),
        per_observation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_alternatives;
    use crate::modelspec::{
        preset, reference_truth, ClassSpec, Family, LatentVariableSpec, MeasurementEq, UtilityTerm,
        CONSTANT,
    };
    use crate::stats::mean_sd;

    #[test]
    fn hermite_weights_and_exactness() {
        for n in [1, 2, 5, 10, 32, 64] {
            let (x, w) = gauss_hermite(n).unwrap();
            let sqrt_pi = std::f64::consts::PI.sqrt();
            assert!((w.iter().sum::<f64>() - sqrt_pi).abs() < 1e-12, "{n}");
            // ∫ x^{2k} e^{-x²} = Γ(k + 1/2), exact for 2k ≤ 2n − 1
            let mut gamma = sqrt_pi;
            for k in 0..n.min(12) {
                let q: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * x.powi(2 * k as i32))
                    .sum();
                assert!(
                    (q - gamma).abs() < 1e-10 * gamma,
                    "n={n} k={k}: {q} vs {gamma}"
                );
                gamma *= k as f64 + 0.5;
            }
            assert!(x.windows(2).all(|p| p[0] > p[1]));
        }
        assert!(gauss_hermite(0).is_err() && gauss_hermite(65).is_err());
    }

    #[test]
    fn constant_integrand_is_exact() {
        // MNL has no latents: the rule reduces to the conditional value
        let spec = preset(Family::Mnl);
        let truth = reference_truth(Family::Mnl);
        let syn = generate(&GeneratorConfig::new(spec.clone(), truth.clone(), 30, 1)).unwrap();
        let q = quadrature_loglik(&syn.data, &spec, &truth, 8).unwrap();
        let m = crate::likelihood::mnl_loglik(&syn.data, &spec, &truth).unwrap();
        assert!((q.total - m.total).abs() < 1e-12);
    }

    fn measurement_only_spec() -> ModelSpec {
        let params = ParameterVector::new()
            .free("A_CONS", 0.7)
            .free("A_X", -0.4)
            .free("SIGMA_LV", 1.3)
            .fixed("ALPHA_I1", 0.0)
            .fixed("BETA_I1", 1.0)
            .fixed("SIGMA_I1", 1.0)
            .free("ALPHA_I2", 0.5)
            .free("BETA_I2", 0.8)
            .free("SIGMA_I2", 0.6)
            .free("ALPHA_I3", -0.2)
            .free("BETA_I3", 1.4)
            .free("SIGMA_I3", 1.1);
        let meas = |i: &str| MeasurementEq {
            indicator: i.into(),
            intercept: format!("ALPHA_{i}"),
            loading: format!("BETA_{i}"),
            scale: format!("SIGMA_{i}"),
        };
        ModelSpec {
            family: Family::Iclv,
            alternatives: default_alternatives(),
            classes: vec![ClassSpec {
                label: "All".into(),
                membership: vec![],
                utilities: vec![vec![], vec![], vec![]],
            }],
            latents: vec![LatentVariableSpec {
                name: "LV".into(),
                structural: vec![
                    UtilityTerm::new("A_CONS", CONSTANT),
                    UtilityTerm::new("A_X", "X"),
                ],
                scale: "SIGMA_LV".into(),
                measurements: vec![meas("I1"), meas("I2"), meas("I3")],
            }],
            draws: 100,
            seed: 1,
            params,
        }
    }

    #[test]
    fn gaussian_measurement_matches_closed_form() {
        let spec = measurement_only_spec();
        let p = &spec.params;
        let obs = vec![
            Observation::new("a")
                .with_choice(1)
                .with_covariate("X", 1.0)
                .with_indicator("I1", 2.0)
                .with_indicator("I2", 3.0)
                .with_indicator("I3", 1.0),
            Observation::new("b")
                .with_choice(3)
                .with_covariate("X", 0.0)
                .with_indicator("I1", 4.0)
                .with_indicator("I3", 5.0),
        ];
        let dict = BTreeMap::from([
            ("X".to_string(), VarKind::Binary),
            ("I1".to_string(), VarKind::Likert),
            ("I2".to_string(), VarKind::Likert),
            ("I3".to_string(), VarKind::Likert),
        ]);
        let data = Dataset::new(obs, dict, default_alternatives()).unwrap();
        let q = quadrature_loglik(&data, &spec, p, 20).unwrap();

        let v = |n: &str| p.value(n).unwrap();
        for (k, o) in data.observations().iter().enumerate() {
            let present: Vec<&str> = ["I1", "I2", "I3"]
                .into_iter()
                .filter(|i| o.indicators.contains_key(*i))
                .collect();
            let m = present.len();
            let mean_lv = v("A_CONS") + v("A_X") * o.covariates["X"];
            let s2 = v("SIGMA_LV").powi(2);
            let mean = DVector::from_iterator(
                m,
                present
                    .iter()
                    .map(|i| v(&format!("ALPHA_{i}")) + v(&format!("BETA_{i}")) * mean_lv),
            );
            let beta = DVector::from_iterator(m, present.iter().map(|i| v(&format!("BETA_{i}"))));
            let mut cov: DMatrix<f64> = &beta * beta.transpose() * s2;
            for (r, i) in present.iter().enumerate() {
                cov[(r, r)] += v(&format!("SIGMA_{i}")).powi(2);
            }
            let y = DVector::from_iterator(m, present.iter().map(|i| o.indicators[*i]));
            let resid = y - mean;
            let chol = cov.clone().cholesky().unwrap();
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let quad = resid.dot(&chol.solve(&resid));
            let closed = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
                + (1.0f64 / 3.0).ln();
            assert!(
                (q.per_observation[k] - closed).abs() < 1e-6,
                "{} vs {closed}",
                q.per_observation[k]
            );
        }
    }

    #[test]
    fn three_latents_unsupported() {
        let mut spec = preset(Family::Iclv);
        let mut extra = spec.latents[1].clone();
        extra.name = "THIRD".into();
        extra.measurements.clear();
        spec.latents.push(extra);
        let data = Dataset::new(vec![], BTreeMap::new(), default_alternatives()).unwrap();
        assert!(matches!(
            quadrature_loglik(&data, &spec, &spec.params, 8),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = GeneratorConfig::new(
            preset(Family::LcIclv),
            reference_truth(Family::LcIclv),
            200,
            5,
        );
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.data, b.data);
        let mut other = cfg.clone();
        other.seed = 6;
        assert_ne!(generate(&other).unwrap().data, a.data);
    }

    #[test]
    fn uniform_model_gives_equal_shares() {
        let spec = preset(Family::Mnl);
        let zero = spec.params.clone();
        let syn = generate(&GeneratorConfig::new(spec, zero, 100_000, 3)).unwrap();
        let counts = syn.data.choice_counts();
        let n: f64 = 100_000.0;
        let sd = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n / 3.0).abs() < 3.0 * sd, "{c}");
        }
    }

    #[test]
    fn marginals_are_reproduced() {
        let spec = preset(Family::Mnl);
        let cfg = GeneratorConfig::new(spec, reference_truth(Family::Mnl), 20_000, 8);
        let syn = generate(&cfg).unwrap();
        let n = 20_000.0;
        for g in &cfg.marginals {
            for (level, p) in &g.levels {
                let hits: f64 = syn
                    .data
                    .observations()
                    .iter()
                    .map(|o| o.covariates[level])
                    .sum();
                let sd = (n * p * (1.0 - p)).sqrt().max(1e-9);
                assert!(
                    (hits - n * p).abs() <= 3.0 * sd + 1e-9,
                    "{level}: {hits} vs {}",
                    n * p
                );
            }
            // exclusivity
            for o in syn.data.observations() {
                let set: f64 = g.levels.iter().map(|(l, _)| o.covariates[l]).sum();
                assert!(set <= 1.0);
            }
        }
    }

    #[test]
    fn choice_shares_match_exact_probabilities() {
        let spec = preset(Family::Mnl);
        let truth = reference_truth(Family::Mnl);
        let syn = generate(&GeneratorConfig::new(spec.clone(), truth.clone(), 72, 11)).unwrap();
        let none = BTreeMap::new();
        let mut expected = [0.0; 3];
        for o in syn.data.observations() {
            let u: Vec<f64> = spec.classes[0]
                .utilities
                .iter()
                .map(|t| systematic_utility(o, t, &truth, &none).unwrap())
                .collect();
            for (e, p) in expected.iter_mut().zip(mnl_probabilities(&u).unwrap()) {
                *e += p / 72.0;
            }
        }
        let counts = syn.data.choice_counts();
        for (c, p) in counts.iter().zip(expected) {
            let band = 1.96 * (p * (1.0 - p) / 72.0).sqrt();
            assert!((*c as f64 / 72.0 - p).abs() <= band, "{c} vs {p}");
        }
    }

    #[test]
    fn zero_loadings_decouple_indicators() {
        let spec = preset(Family::Iclv);
        let mut truth = reference_truth(Family::Iclv);
        for name in spec.indicators() {
            let n = format!("BETA_{name}");
            let p = truth.get_mut(&n).unwrap();
            p.value = 0.0;
        }
        let mut cfg = GeneratorConfig::new(spec.clone(), truth, 10_000, 4);
        cfg.indicators = IndicatorScale::Continuous;
        let syn = generate(&cfg).unwrap();
        let obs = syn.data.observations();
        for ind in spec.indicators() {
            for cov in ["Young", "Male", "LowIncome", "MiddleAge"] {
                let xs: Vec<f64> = obs.iter().map(|o| o.covariates[cov]).collect();
                let ys: Vec<f64> = obs.iter().map(|o| o.covariates[&ind]).collect();
                let (mx, sx) = mean_sd(&xs);
                let (my, sy) = mean_sd(&ys);
                let r = xs
                    .iter()
                    .zip(&ys)
                    .map(|(x, y)| (x - mx) * (y - my))
                    .sum::<f64>()
                    / ((xs.len() - 1) as f64 * sx * sy);
                assert!(r.abs() < 0.05, "{ind} vs {cov}: {r}");
            }
        }
    }

    #[test]
    fn clamp_rate_is_reported() {
        let cfg =
            GeneratorConfig::new(preset(Family::Iclv), reference_truth(Family::Iclv), 2000, 2);
        let syn = generate(&cfg).unwrap();
        assert_eq!(syn.indicator_draws, 2000 * 7);
        assert!(syn.clamp_rate() > 0.0 && syn.clamp_rate() < 1.0);
    }

    /// Twelve indicators with zero loadings, means at the midpoints of
    /// twelve equal slices of [1.5, 4.5], all with scale `sd`.
    fn spread_indicators(sd: f64) -> (ModelSpec, ParameterVector) {
        let mut spec = measurement_only_spec();
        let latent = &mut spec.latents[0];
        latent.structural.truncate(1);
        let mut params = ParameterVector::new()
            .free("A_CONS", 0.0)
            .free("SIGMA_LV", 1.0);
        let mut truth = params.clone();
        latent.measurements.clear();
        for k in 0..12 {
            let i = format!("I{}", k + 1);
            let (a, b, c) = (
                format!("ALPHA_{i}"),
                format!("BETA_{i}"),
                format!("SIGMA_{i}"),
            );
            if k == 0 {
                params = params.fixed(&a, 0.0).fixed(&b, 1.0).fixed(&c, 1.0);
            } else {
                params = params.free(&a, 0.0).free(&b, 1.0).free(&c, 1.0);
            }
            let mean = 1.5 + 3.0 * (k as f64 + 0.5) / 12.0;
            truth = truth.free(&a, mean).free(&b, 0.0).free(&c, sd);
            latent.measurements.push(MeasurementEq {
                indicator: i,
                intercept: a,
                loading: b,
                scale: c,
            });
        }
        spec.params = params;
        (spec, truth)
    }

    #[test]
    fn clamping_is_bounded_when_means_span_the_scale() {
        use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
        let mut runner = TestRunner::new_with_rng(
            Config::with_cases(8),
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        );
        runner
            .run(&(0.05f64..=1.5, 0u64..1000), |(sd, seed)| {
                let (spec, truth) = spread_indicators(sd);
                let mut cfg = GeneratorConfig::new(spec, truth, 20_000, seed);
                cfg.marginals = vec![DummyGroup::new("x", &[("X", 0.5)])];
                let rate = generate(&cfg).unwrap().clamp_rate();
                proptest::prop_assert!(rate < 0.15, "sd {sd}: {rate}");
                Ok(())
            })
            .unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let cfg = GeneratorConfig::new(preset(Family::Iclv), reference_truth(Family::Iclv), 50, 9);
        let syn = generate(&cfg).unwrap();
        let mut buf = Vec::new();
        crate::dataset::write_csv(&syn.data, &mut buf).unwrap();
        let back =
            crate::dataset::read_csv(&buf[..], &crate::dataset::schema_for(&syn.data)).unwrap();
        assert_eq!(back, syn.data);
    }

    #[test]
    fn rejects_bad_marginals() {
        let mut cfg =
            GeneratorConfig::new(preset(Family::Mnl), reference_truth(Family::Mnl), 10, 1);
        cfg.marginals[0].levels[0].1 = 0.95;
        assert!(generate(&cfg).is_err());
        let mut cfg =
            GeneratorConfig::new(preset(Family::Mnl), reference_truth(Family::Mnl), 10, 1);
        cfg.marginals.retain(|g| g.name != "gender");
        assert!(generate(&cfg).is_err());
        let cfg = GeneratorConfig::new(preset(Family::Mnl), reference_truth(Family::Mnl), 0, 1);
        assert!(generate(&cfg).is_err());
    }
}
