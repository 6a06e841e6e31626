use hybridchoice::dataset::{read_csv, schema_for, write_csv};
use hybridchoice::estimator::{estimate, warm_start_pipeline, Options};
use hybridchoice::modelspec::{preset, reference_truth, validate, Family};
use hybridchoice::specfile::{parse_model, write_model};
use hybridchoice::synth::{generate, GeneratorConfig, IndicatorScale};

#[test]
fn generated_csv_estimates_like_the_original() {
    let spec = preset(Family::Mnl);
    let cfg = GeneratorConfig::new(spec.clone(), reference_truth(Family::Mnl), 2000, 5);
    let data = generate(&cfg).unwrap().data;

    let mut bytes = Vec::new();
    write_csv(&data, &mut bytes).unwrap();
    let reloaded = read_csv(bytes.as_slice(), &schema_for(&data)).unwrap();
    assert!(validate(&spec, &reloaded).is_empty());

    let (parsed, _) = parse_model(&write_model(&spec)).unwrap();
    let a = estimate(&spec, &data, None, Options::default()).unwrap();
    let b = estimate(&parsed, &reloaded, None, Options::default()).unwrap();
    assert!(a.converged);
    assert_eq!(a.free_names, b.free_names);
    assert!((a.ll_final - b.ll_final).abs() < 1e-8);

    let truth = reference_truth(Family::Mnl);
    for (i, name) in a.free_names.iter().enumerate() {
        let t = truth.value(name).unwrap();
        let est = a.params.value(name).unwrap();
        assert!(
            (est - t).abs() <= 4.0 * a.robust_se[i],
            "{name}: {est} vs {t}"
        );
    }
}

#[test]
fn warm_start_seeds_the_class_model() {
    let cfg = GeneratorConfig::new(preset(Family::Lc), reference_truth(Family::Lc), 1500, 8);
    let data = generate(&cfg).unwrap().data;
    let stages = [preset(Family::Mnl), preset(Family::Lc)];
    let out = warm_start_pipeline(&data, &stages, 3, Options::default());

    assert_eq!(out.results.len(), 2);
    assert_eq!(out.provenance[1].seeded_from, vec![Family::Mnl]);
    assert!(out.provenance[1].seeded_parameters > 0);
    let mnl = out.results[0].as_ref().unwrap();
    let lc = out.results[1].as_ref().unwrap();
    assert!(mnl.converged);
    // the class model nests the single-class one
    assert!(lc.ll_final >= mnl.ll_final - 1e-6);
    assert!(out.canonical_classes.is_some());
}

/// Recovery with continuous indicators, where the measurement model is
/// exactly the estimated one.
#[test]
#[ignore = "slow; run with --ignored"]
fn continuous_indicators_recover_the_iclv_truth() {
    let family = Family::Iclv;
    let truth = reference_truth(family);
    let mut spec = preset(family);
    spec.draws = 500;
    let mut misses = Vec::new();
    for seed in 0..5 {
        let mut cfg = GeneratorConfig::new(preset(family), truth.clone(), 2000, 900 + seed);
        cfg.indicators = IndicatorScale::Continuous;
        let data = generate(&cfg).unwrap().data;
        let mut start = spec.params.clone();
        start.overlay(&truth);
        let r = estimate(&spec, &data, Some(&start), Options::default()).unwrap();
        for (i, name) in r.free_names.iter().enumerate() {
            let t = truth.value(name).unwrap();
            let est = r.params.value(name).unwrap();
            let ok = if t.abs() > 10.0 {
                est.signum() == t.signum()
            } else if name.starts_with("SIGMA_") {
                (est.abs() - t.abs()).abs() <= 3.0 * r.robust_se[i]
            } else {
                (est - t).abs() <= 3.0 * r.robust_se[i]
            };
            if !ok {
                misses.push(format!("seed {seed} {name}: {est:.3} vs {t:.3}"));
            }
        }
    }
    // about one miss in 370 is expected at 3 standard errors
    assert!(misses.len() <= 3, "{misses:#?}");
}
