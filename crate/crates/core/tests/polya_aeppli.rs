use billiard_evt::compound_poisson::{
    goodness_of_fit, histogram, polya_aeppli_cdf, polya_aeppli_pmf, sample_compound_poisson,
    support_cutoff, total_variation, PolyaAeppliParams,
};

const THETAS: [f64; 4] = [0.1, 0.5, 0.9, 1.0];
const WINDOWS: [f64; 3] = [0.5, 1.0, 5.0];

fn params(theta: f64, t: f64) -> PolyaAeppliParams {
    PolyaAeppliParams::new(theta, t).unwrap()
}

fn kahan(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[test]
fn pmf_is_normalized_with_the_right_mean() {
    for theta in THETAS {
        for t in WINDOWS {
            let p = params(theta, t);
            let kmax = support_cutoff(&p) + 50;
            let mass = kahan((0..=kmax).map(|k| polya_aeppli_pmf(&p, k)));
            let mean = kahan((0..=kmax).map(|k| k as f64 * polya_aeppli_pmf(&p, k)));
            assert!((mass - 1.0).abs() < 1e-12, "theta {theta}, t {t}: mass {mass}");
            assert!((mean - t).abs() < 1e-10, "theta {theta}, t {t}: mean {mean}");
            assert!((polya_aeppli_cdf(&p, kmax) - 1.0).abs() < 1e-12);
            assert_eq!(polya_aeppli_pmf(&p, 0), (-theta * t).exp());
        }
    }
}

#[test]
fn theta_one_is_poisson() {
    for t in WINDOWS.into_iter().chain([20.0]) {
        let p = params(1.0, t);
        let mut poisson = (-t).exp();
        for k in 0..120u64 {
            if k > 0 {
                poisson *= t / k as f64;
            }
            let v = polya_aeppli_pmf(&p, k);
            assert!((v - poisson).abs() < 1e-12, "t {t}, k {k}");
            assert!((v - poisson).abs() <= 1e-12 * poisson, "t {t}, k {k}");
        }
    }
}

#[test]
fn cdf_is_monotone_and_telescopes() {
    for theta in THETAS {
        let p = params(theta, 5.0);
        let mut prev = 0.0;
        for k in 0..200 {
            let c = polya_aeppli_cdf(&p, k);
            assert!(c >= prev);
            if k > 0 {
                assert!((c - prev - polya_aeppli_pmf(&p, k)).abs() < 1e-14);
            }
            prev = c;
        }
    }
}

#[test]
fn sampler_matches_the_pmf() {
    for (i, theta) in THETAS.into_iter().enumerate() {
        for (j, t) in WINDOWS.into_iter().enumerate() {
            let p = params(theta, t);
            let draws = sample_compound_poisson(&p, 1000 + (i * 10 + j) as u64, 1_000_000);
            let tv = total_variation(&histogram(&draws), &p);
            assert!(tv < 0.005, "theta {theta}, t {t}: tv {tv}");
        }
    }
}

#[test]
fn single_term_value_against_monte_carlo() {
    let p = params(0.5, 1.0);
    let exact = (-0.5f64).exp() * 0.25;
    assert!((polya_aeppli_pmf(&p, 1) - exact).abs() < 1e-16);
    let draws = sample_compound_poisson(&p, 7, 10_000_000);
    let freq = draws.iter().filter(|&&k| k == 1).count() as f64 / draws.len() as f64;
    let se = (exact * (1.0 - exact) / draws.len() as f64).sqrt();
    assert!((freq - exact).abs() < 4.0 * se, "{freq} vs {exact}");
}

#[test]
fn sampler_ignores_the_worker_count() {
    let p = params(0.3, 4.0);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_compound_poisson(&p, 99, 100_000))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn goodness_of_fit_is_calibrated() {
    let p = params(0.5, 2.0);
    let pvalues: Vec<f64> = (0..1000)
        .map(|trial| {
            let draws = sample_compound_poisson(&p, 5_000 + trial, 2_000);
            goodness_of_fit(&histogram(&draws), &p).unwrap().p_value
        })
        .collect();
    let rejected = pvalues.iter().filter(|&&v| v < 0.01).count();
    // Binomial(1000, 0.01) has standard deviation 3.1
    assert!((2..=22).contains(&rejected), "{rejected} rejections");
    let below_half = pvalues.iter().filter(|&&v| v < 0.5).count();
    assert!((430..=570).contains(&below_half), "{below_half}");
}

#[test]
fn goodness_of_fit_has_power() {
    let poisson = sample_compound_poisson(&params(1.0, 2.0), 3, 20_000);
    let fit = goodness_of_fit(&histogram(&poisson), &params(0.5, 2.0)).unwrap();
    assert!(fit.p_value < 1e-6, "{fit:?}");
    assert!(fit.pooled_bins.iter().all(|b| b.expected >= 5.0));
    assert_eq!(fit.pooled_bins.last().unwrap().hi, None);
    assert_eq!(fit.dof, fit.pooled_bins.len() - 1);
}
