use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, LogNormal, Normal};

use super::*;
use crate::data::{MetaAnalysis, Trial};

/// `n_meta` meta-analyses of `per_meta` trials; flags alternate so every
/// meta-analysis has a contrast on every characteristic.
pub(crate) fn fixture(n_meta: usize, per_meta: usize, p: usize) -> Dataset {
    let metas = (0..n_meta)
        .map(|m| MetaAnalysis {
            meta_id: format!("m{m}"),
            trials: (0..per_meta)
                .map(|i| Trial {
                    trial_id: format!("t{i}"),
                    events_treat: (3 + 2 * i + m) as u32,
                    size_treat: 40 + 5 * i as u32,
                    events_ctrl: (5 + i + 2 * m) as u32,
                    size_ctrl: 42 + 3 * i as u32,
                    flags: (0..p)
                        .map(|j| (i + j) % 2 == 0 || (i == 0 && j > 0))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    Dataset::new(metas, (0..p).map(|j| format!("c{j}")).collect()).unwrap()
}

pub(crate) fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("c{j}")).collect()
}

pub(crate) fn random_state(model: &Model, rng: &mut ChaCha8Rng) -> ParameterState {
    let l = model.layout().clone();
    let mut s = model.initial_state(0, 1, 1);
    for k in 0..l.dim() {
        s.values[k] = match l.param(k) {
            Param::TauSd => rng.random_range(-2.0..0.6),
            Param::Tau(_) if !l.tau_hierarchy => rng.random_range(-3.0..0.6),
            Param::Lambda(_) | Param::PhiSlab(_) | Param::KappaSlab(_) | Param::Tau(_) => {
                rng.random_range(-3.0..1.0)
            }
            _ => rng.random_range(-1.5..1.5),
        };
    }
    for z in &mut s.indicators {
        *z = rng.random_bool(0.6);
    }
    s
}

#[test]
fn effect_mean_examples() {
    assert_abs_diff_eq!(
        effect_mean(&[false; 3], 0.3, &[0.1, 0.2, 0.3]).unwrap(),
        0.3
    );
    let b = [-0.05, -0.04, -0.09];
    assert_abs_diff_eq!(
        effect_mean(&[true, true, false], 0.0, &b).unwrap(),
        -0.09,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        effect_mean(&[true, true, true], 0.0, &b).unwrap(),
        -0.18,
        epsilon = 1e-15
    );
    assert!(effect_mean(&[true], 0.0, &b).is_err());
}

#[test]
fn effect_variance_examples() {
    for structure in [
        VarianceStructure::Additive,
        VarianceStructure::LabelInvariant,
    ] {
        let v = effect_variance(&[false], 0.04, structure, &[0.7], true).unwrap();
        assert_eq!(v.variance, 0.04);
    }
    let v = effect_variance(&[true], 0.04, VarianceStructure::Additive, &[0.0484], true).unwrap();
    assert_abs_diff_eq!(v.variance, 0.0884, epsilon = 1e-15);
    let v = effect_variance(
        &[true, true, false],
        0.04,
        VarianceStructure::LabelInvariant,
        &[1.25, 0.77, 1.51],
        false,
    )
    .unwrap();
    assert_abs_diff_eq!(v.variance, 0.0385, epsilon = 1e-15);
    assert!(!v.informs_variance_parameters);
    assert!(effect_variance(&[true], -0.1, VarianceStructure::Additive, &[0.1], true).is_err());
    assert!(effect_variance(&[true], 0.1, VarianceStructure::Additive, &[-0.1], true).is_err());
}

proptest! {
    #[test]
    fn additive_variance_never_below_tau_sq(
        flags in prop::collection::vec(any::<bool>(), 1..5),
        tau_sq in 0.0f64..2.0,
        kappa in prop::collection::vec(0.0f64..1.0, 5),
    ) {
        let het = &kappa[..flags.len()];
        let v = effect_variance(&flags, tau_sq, VarianceStructure::Additive, het, true).unwrap().variance;
        prop_assert!(v >= tau_sq);
        let extra: f64 = flags.iter().zip(het).filter(|(f, _)| **f).map(|(_, k)| k).sum();
        prop_assert_eq!(v == tau_sq, extra == 0.0);
    }

    #[test]
    fn unit_ratios_give_tau_sq(flags in prop::collection::vec(any::<bool>(), 1..6), tau_sq in 0.0f64..3.0) {
        let ones = vec![1.0; flags.len()];
        let v = effect_variance(&flags, tau_sq, VarianceStructure::LabelInvariant, &ones, true).unwrap();
        prop_assert_eq!(v.variance, tau_sq);
    }

    #[test]
    fn mean_and_variance_permutation_equivariant(
        entries in prop::collection::vec((any::<bool>(), -1.0f64..1.0, 0.1f64..3.0), 1..6),
        rotate in 0usize..6,
        d in -1.0f64..1.0,
        tau_sq in 0.01f64..1.0,
    ) {
        let mut permuted = entries.clone();
        let r = rotate % entries.len();
        permuted.rotate_left(r);
        let split = |e: &[(bool, f64, f64)]| -> (Vec<bool>, Vec<f64>, Vec<f64>) {
            (e.iter().map(|x| x.0).collect(), e.iter().map(|x| x.1).collect(), e.iter().map(|x| x.2).collect())
        };
        let (f1, b1, h1) = split(&entries);
        let (f2, b2, h2) = split(&permuted);
        prop_assert!((effect_mean(&f1, d, &b1).unwrap() - effect_mean(&f2, d, &b2).unwrap()).abs() < 1e-12);
        for s in [VarianceStructure::Additive, VarianceStructure::LabelInvariant] {
            let v1 = effect_variance(&f1, tau_sq, s, &h1, true).unwrap().variance;
            let v2 = effect_variance(&f2, tau_sq, s, &h2, true).unwrap().variance;
            prop_assert!((v1 - v2).abs() < 1e-12 * v1.max(1.0));
        }
    }
}

fn single_trial(et: u32, nt: u32, ec: u32, nc: u32) -> Dataset {
    Dataset::new(
        vec![MetaAnalysis {
            meta_id: "m".into(),
            trials: vec![
                Trial {
                    trial_id: "a".into(),
                    events_treat: et,
                    size_treat: nt,
                    events_ctrl: ec,
                    size_ctrl: nc,
                    flags: vec![true],
                },
                Trial {
                    trial_id: "b".into(),
                    events_treat: 1,
                    size_treat: 2,
                    events_ctrl: 1,
                    size_ctrl: 2,
                    flags: vec![false],
                },
            ],
        }],
        vec!["c0".into()],
    )
    .unwrap()
}

#[test]
fn likelihood_symmetric_case() {
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, names(1), false);
    let model = Model::new(&spec, &single_trial(5, 10, 5, 10)).unwrap();
    let s = ParameterState::zeros(model.layout());
    // second trial: 1/2 vs 1/2 at p = 0.5 contributes 2 ln(2 / 4)
    let expected = 2.0 * (252.0f64 / 1024.0).ln() + 2.0 * 0.5f64.ln();
    assert_abs_diff_eq!(model.log_likelihood(&s), expected, epsilon = 1e-10);
}

#[test]
fn likelihood_zero_events_arm() {
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, names(1), false);
    let model = Model::new(&spec, &single_trial(5, 10, 0, 10)).unwrap();
    let s = ParameterState::zeros(model.layout());
    let rest = (252.0f64 / 1024.0).ln() + 2.0 * 0.5f64.ln();
    assert_abs_diff_eq!(
        model.log_likelihood(&s),
        10.0 * 0.5f64.ln() + rest,
        epsilon = 1e-10
    );
}

/// Binomial log-pmf by direct products, independent of the kernel form.
fn brute_binomial(r: u32, n: u32, p: f64) -> f64 {
    let ln_coef: f64 = (1..=r)
        .map(|i| f64::from(n - r + i).ln() - f64::from(i).ln())
        .sum();
    ln_coef + f64::from(r) * p.ln() + f64::from(n - r) * (1.0 - p).ln()
}

#[test]
fn likelihood_matches_brute_force() {
    let data = fixture(3, 5, 2);
    let spec = ModelSpec::new(VarianceStructure::Additive, names(2), true);
    let model = Model::new(&spec, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let s = random_state(&model, &mut rng);
        let mut expected = 0.0;
        let mut t = 0;
        for ma in &data.meta_analyses {
            for trial in &ma.trials {
                let g = s.values[model.layout().baseline(t)];
                let th = s.values[model.layout().effect(t)];
                let pc = 1.0 / (1.0 + (-g).exp());
                let pt = 1.0 / (1.0 + (-(g + th)).exp());
                expected += brute_binomial(trial.events_ctrl, trial.size_ctrl, pc);
                expected += brute_binomial(trial.events_treat, trial.size_treat, pt);
                t += 1;
            }
        }
        assert_abs_diff_eq!(model.log_likelihood(&s), expected, epsilon = 1e-8);
    }
}

#[test]
fn lambda_prior_term_at_one() {
    let prior = PriorSpec::LogNormal {
        meanlog: 0.0,
        sdlog: 1.0,
    };
    assert_abs_diff_eq!(
        prior.ln_pdf(1.0),
        -(1.0 * (2.0 * std::f64::consts::PI).sqrt()).ln(),
        epsilon = 1e-14
    );
}

#[test]
fn sigma_outside_uniform_support_is_flagged() {
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, names(1), true);
    let model = Model::new(&spec, &fixture(2, 4, 1)).unwrap();
    let mut s = model.initial_state(0, 1, 0);
    s.values[model.layout().tau_sd().unwrap()] = 2.5f64.ln();
    match model.log_prior(&s) {
        Err(DensityError::OutOfSupport(name)) => assert_eq!(name, "sigma"),
        other => panic!("expected out-of-support, got {other:?}"),
    }
}

/// Term-by-term prior written against statrs distributions.
fn oracle_log_prior(model: &Model, s: &ParameterState) -> f64 {
    let l = model.layout();
    let vague = Normal::new(0.0, 1000f64.sqrt()).unwrap();
    let std = Normal::new(0.0, 1.0).unwrap();
    let ig = |v: f64| {
        let (a, b) = (0.001f64, 0.001f64);
        a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * v.ln() - b / v
    };
    let mut total = 0.0;
    let p0 = 1.0 / (1.0 + (-s.values[l.mixing_weight()]).exp());
    for j in 0..l.p {
        total += vague.ln_pdf(s.values[l.b0(j)]);
        total += ig(s.values[l.phi_slab(j)].exp());
        let het = s.values[l.het(j)].exp();
        total += match l.structure {
            VarianceStructure::Additive => ig(het),
            VarianceStructure::LabelInvariant => LogNormal::new(0.0, 1.0).unwrap().ln_pdf(het),
        };
    }
    for &z in &s.indicators {
        total += if z { (1.0 - p0).ln() } else { p0.ln() };
    }
    // p0 ~ Beta(1, 1) has log density 0
    if l.tau_hierarchy {
        let mu = s.values[l.tau_mean().unwrap()];
        let sigma = s.values[l.tau_sd().unwrap()].exp();
        total += vague.ln_pdf(mu) + (0.5f64).ln();
        for m in 0..l.n_meta {
            let tau = s.values[l.tau(m)].exp();
            // density of tau when ln tau^2 ~ N(mu, sigma^2)
            total += Normal::new(mu, sigma).unwrap().ln_pdf((tau * tau).ln()) + (2.0 / tau).ln();
        }
    } else {
        total += l.n_meta as f64 * (0.5f64).ln();
    }
    for m in 0..l.n_meta {
        total += vague.ln_pdf(s.values[l.effect_mean(m)]);
        for j in 0..l.p {
            total += std.ln_pdf(s.values[l.bias(m, j)]);
        }
    }
    for t in 0..l.n_trials {
        total += vague.ln_pdf(s.values[l.baseline(t)]);
        let m = model.meta_of_trial(t);
        let flags = model.trial_flags(t);
        let d = s.values[l.effect_mean(m)];
        let mut mean = d;
        let tau_sq = s.values[l.tau(m)].exp().powi(2);
        let mut var = tau_sq;
        for j in 0..l.p {
            if flags[j] {
                let phi = if s.indicators[j] {
                    s.values[l.phi_slab(j)].exp().sqrt()
                } else {
                    0.0
                };
                mean += s.values[l.b0(j)] + phi * s.values[l.bias(m, j)];
                let h = s.values[l.het(j)].exp();
                match l.structure {
                    VarianceStructure::Additive => {
                        if s.indicators[l.p + j] {
                            var += h;
                        }
                    }
                    VarianceStructure::LabelInvariant => var *= h,
                }
            }
        }
        total += Normal::new(mean, var.sqrt())
            .unwrap()
            .ln_pdf(s.values[l.effect(t)]);
    }
    total
}

#[test]
fn log_prior_matches_oracle() {
    let data = fixture(3, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for structure in [
        VarianceStructure::Additive,
        VarianceStructure::LabelInvariant,
    ] {
        for h in [false, true] {
            let model = Model::new(&ModelSpec::new(structure, names(2), h), &data).unwrap();
            for _ in 0..10 {
                let s = random_state(&model, &mut rng);
                let lp = model.log_prior(&s).unwrap();
                assert_abs_diff_eq!(lp, oracle_log_prior(&model, &s), epsilon = 1e-8);
                let target = model.log_target(&s);
                let parts = lp + model.log_likelihood(&s) + model.log_jacobian(&s);
                assert_abs_diff_eq!(target, parts, epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn parameter_counts() {
    let data = fixture(3, 4, 1);
    let li = Model::new(
        &ModelSpec::new(VarianceStructure::LabelInvariant, names(1), false),
        &data,
    )
    .unwrap();
    assert_eq!(li.dim(), 37);
    let li_h = Model::new(
        &ModelSpec::new(VarianceStructure::LabelInvariant, names(1), true),
        &data,
    )
    .unwrap();
    assert_eq!(li_h.dim(), 39);
    let add = Model::new(
        &ModelSpec::new(VarianceStructure::Additive, names(1), false),
        &data,
    )
    .unwrap();
    assert_eq!(add.dim(), 37);
    assert_eq!(li.parameter_name(2), "lambda[c0]");
    assert_eq!(add.parameter_name(2), "kappa_slab_var[c0]");
}

#[test]
fn build_errors() {
    let data = fixture(2, 4, 1);
    let spec = ModelSpec::new(
        VarianceStructure::LabelInvariant,
        vec!["nope".into()],
        false,
    );
    assert!(matches!(
        Model::new(&spec, &data),
        Err(ModelError::UnknownCharacteristic(_))
    ));
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, vec![], false);
    assert!(Model::new(&spec, &data).is_err());
    let flat = data::relabel(&fixture(1, 1, 1), 0);
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, names(1), false);
    assert!(matches!(
        Model::new(&spec, &flat),
        Err(ModelError::EmptyInformativeSubset)
    ));
}

#[test]
fn label_invariance_of_likelihood_and_effect_terms() {
    let data = fixture(3, 6, 1);
    let relabelled = data::relabel(&data, 0);
    let spec = ModelSpec::new(VarianceStructure::LabelInvariant, names(1), true);
    let a = Model::new(&spec, &data).unwrap();
    let b = Model::new(&spec, &relabelled).unwrap();
    let la = a.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let s = random_state(&a, &mut rng);
        let mut r = s.clone();
        let lambda_u = s.values[la.het(0)];
        r.values[la.het(0)] = -lambda_u;
        r.values[la.b0(0)] = -s.values[la.b0(0)];
        for m in 0..la.n_meta {
            r.values[la.effect_mean(m)] = s.values[la.effect_mean(m)] + a.bias(&s, m, 0);
            r.values[la.bias(m, 0)] = -s.values[la.bias(m, 0)];
            r.values[la.tau(m)] = s.values[la.tau(m)] + 0.5 * lambda_u;
        }
        for m in 0..la.n_meta {
            assert_abs_diff_eq!(b.bias(&r, m, 0), -a.bias(&s, m, 0), epsilon = 1e-12);
        }
        let terms = |model: &Model, st: &ParameterState| {
            model.log_likelihood(st)
                + (0..model.n_trials())
                    .map(|t| model.theta_term(st, t))
                    .sum::<f64>()
        };
        assert_abs_diff_eq!(terms(&a, &s), terms(&b, &r), epsilon = 1e-9);
    }
}

proptest! {
    #[test]
    fn densities_finite_in_support(seed in any::<u64>(), additive in any::<bool>(), h in any::<bool>()) {
        let structure = if additive { VarianceStructure::Additive } else { VarianceStructure::LabelInvariant };
        let model = Model::new(&ModelSpec::new(structure, names(2), h), &fixture(2, 4, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&model, &mut rng);
        let lp = model.log_prior(&s);
        prop_assert!(lp.is_ok(), "{:?}", lp);
        prop_assert!(model.log_likelihood(&s).is_finite());
        prop_assert!(model.log_target(&s).is_finite());
    }
}

#[test]
fn initial_states_are_dispersed_and_deterministic() {
    let data = fixture(3, 4, 1);
    let model = Model::new(
        &ModelSpec::new(VarianceStructure::LabelInvariant, names(1), true),
        &data,
    )
    .unwrap();
    let single = model.initial_state(0, 1, 9);
    assert_eq!(model.b0(&single, 0), 0.0);
    assert_abs_diff_eq!(model.het(&single, 0), 1.0, epsilon = 1e-12);
    let chains: Vec<_> = (0..3).map(|c| model.initial_state(c, 3, 9)).collect();
    assert_eq!(chains[1], model.initial_state(1, 3, 9));
    for x in 0..3 {
        for y in x + 1..3 {
            assert_ne!(
                model.effect_mean_of(&chains[x], 0),
                model.effect_mean_of(&chains[y], 0)
            );
        }
    }
    for s in &chains {
        model.check_support(s).unwrap();
    }
}
