mod common;

use common::{analytic_gradient, dense_posterior_mean, series};
use nexus_core::gp::optimize::fd_gradient;
use nexus_core::gp::{
    build_gram, fit_hierarchical, fit_map, fit_map_detailed, log_marginal, log_posterior, matern32, posterior_mean,
    KernelParams, PriorSpec, HALF_NORMAL_SD,
};
use nexus_core::ingest::DyadMonthSeries;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn matern_unit_distance() {
    let expected = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
    let got = matern32(1.0, 1.0, 1.0).unwrap();
    assert!((got - expected).abs() < 1e-15);
    assert!((got - 0.48335).abs() < 1e-5);
}

#[test]
fn posterior_mean_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=8 {
        for _ in 0..10 {
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..5.0)).collect();
            let s = series(&y);
            let p = KernelParams::new(
                rng.random_range(0.5..50.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.05..1.5),
            )
            .unwrap();
            let t = s.times();
            let grid: Vec<f64> = (0..2 * n + 3).map(|i| t[0] - 1.0 + 0.5 * i as f64).collect();
            let got = posterior_mean(&s, &p, &grid).unwrap();
            let want = dense_posterior_mean(&t, &y, &p, &grid);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8, "n={n}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn log_marginal_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=6 {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let s = series(&y);
        let p = KernelParams::new(rng.random_range(1.0..30.0), 1.3, 0.4).unwrap();
        let k = common::gram(&s.times(), &p);
        let alpha = common::dense_solve(&k, &y);
        // log det via the LU pivots of an independent elimination
        let mut m = k.clone();
        let mut logdet = 0.0;
        for c in 0..n {
            for r in c + 1..n {
                let f = m[r * n + c] / m[c * n + c];
                for j in c..n {
                    m[r * n + j] -= f * m[c * n + j];
                }
            }
            logdet += m[c * n + c].ln();
        }
        let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let want = -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        assert!((log_marginal(&s, &p).unwrap() - want).abs() < 1e-10);
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams::new(
        rng.random_range(2.0f64..200.0),
        rng.random_range(0.3f64..4.0),
        rng.random_range(0.1f64..2.0),
    )
    .unwrap()
}

#[test]
fn gradient_cross_check_two_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let y: Vec<f64> = (0..24).map(|t| 2.0 + (t as f64 / 5.0).sin() + rng.random_range(-0.3..0.3)).collect();
    let s = series(&y);
    let prior = PriorSpec::default();
    let f = |z: &[f64]| log_posterior(&s, &KernelParams::from_log(z), &prior).unwrap();
    for _ in 0..20 {
        let p = random_point(&mut rng);
        let z = p.to_log();
        let g5 = fd_gradient(&f, &z, 1e-5).unwrap();
        let g6 = fd_gradient(&f, &z, 1e-6).unwrap();
        let exact = analytic_gradient(&s.times(), &y, &p, prior.log_median, prior.log_sd, HALF_NORMAL_SD);
        for i in 0..3 {
            let scale = exact[i].abs().max(1e-2);
            assert!((g5[i] - g6[i]).abs() / scale < 1e-3, "steps disagree at {p:?}");
            assert!((g5[i] - exact[i]).abs() / scale < 1e-3, "fd {} vs analytic {} at {p:?}", g5[i], exact[i]);
        }
    }
}

#[test]
fn objective_trace_non_decreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let y: Vec<f64> = (0..36).map(|t| 3.0 + (t as f64 / 7.0).cos() + rng.random_range(-0.5..0.5)).collect();
        let fit = fit_map_detailed(&series(&y), &PriorSpec::default(), &KernelParams::default()).unwrap();
        for s in &fit.starts {
            let trace = &s.result.as_ref().unwrap().trace;
            assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn prior_pull_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let tight = PriorSpec::from_median(122.38, 1e-4).unwrap();
    for period in [6.0, 24.0] {
        let y: Vec<f64> = (0..48)
            .map(|t| 2.0 + (2.0 * std::f64::consts::PI * t as f64 / period).sin() + rng.random_range(-0.2..0.2))
            .collect();
        let p = fit_map(&series(&y), &tight, &KernelParams::default()).unwrap();
        assert!((p.length_scale / 122.38 - 1.0).abs() < 0.01, "l = {}", p.length_scale);
    }
}

#[test]
fn gram_factorizes_with_little_jitter() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let n = rng.random_range(2..=64);
        let mut times: Vec<f64> = (0..200).map(|i| i as f64).collect();
        for i in (1..times.len()).rev() {
            times.swap(i, rng.random_range(0..=i));
        }
        times.truncate(n);
        times.sort_by(f64::total_cmp);
        let p = KernelParams {
            length_scale: rng.random_range(0.5..500.0),
            amplitude: rng.random_range(0.1..5.0),
            noise_sd: if rng.random_bool(0.3) { 0.0 } else { rng.random_range(1e-3..2.0) },
        };
        let g = build_gram(&times, &p).unwrap();
        assert!(g.jitter_level <= 1, "jitter level {} for n={n} {p:?}", g.jitter_level);
    }
}

#[test]
fn white_noise_has_small_signal_ratio() {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let y: Vec<f64> = (0..60).map(|_| noise.sample(&mut rng)).collect();
    let p = fit_map(&series(&y), &PriorSpec::default(), &KernelParams::default()).unwrap();
    assert!(p.amplitude.powi(2) / p.noise_sd.powi(2) < 1.0, "{p:?}");
}

#[test]
fn long_sine_gets_longer_scale() {
    let wave = |period: f64| -> Vec<f64> {
        (0..96).map(|t| 2.0 + 1.5 * (2.0 * std::f64::consts::PI * t as f64 / period).sin()).collect()
    };
    let flat = PriorSpec::from_median(4.0, 3.0).unwrap();
    let long = fit_map(&series(&wave(48.0)), &flat, &KernelParams::default()).unwrap();
    let short = fit_map(&series(&wave(6.0)), &flat, &KernelParams::default()).unwrap();
    assert!(long.length_scale > short.length_scale, "{} vs {}", long.length_scale, short.length_scale);
}

fn sample_gp(n: usize, l: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let p = KernelParams::new(l, 1.5, 1e-3).unwrap();
    let k = common::gram(&times, &p);
    let mut chol = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| chol[i * n + m] * chol[j * n + m]).sum();
            chol[i * n + j] = if i == j { (k[i * n + i] - s).sqrt() } else { (k[i * n + j] - s) / chol[j * n + j] };
        }
    }
    let z: Vec<f64> = (0..n).map(|_| Normal::new(0.0, 1.0).unwrap().sample(rng)).collect();
    let noise = Normal::new(0.0, 0.1).unwrap();
    (0..n)
        .map(|i| (0..=i).map(|j| chol[i * n + j] * z[j]).sum::<f64>() + noise.sample(rng))
        .collect()
}

#[test]
fn two_country_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut all: Vec<DyadMonthSeries> = Vec::new();
    for (country, l) in [("SHORT", 6.0), ("LONG", 60.0)] {
        for d in 0..3 {
            let mut s = series(&sample_gp(96, l, &mut rng));
            s.dyad_id = format!("{country}-{d}");
            s.country_id = country.into();
            all.push(s);
        }
    }
    let prior = PriorSpec::from_median(20.0, 1.5).unwrap();
    let (fits, countries) = fit_hierarchical(&all, &prior, &KernelParams::default()).unwrap();
    assert_eq!(fits.len(), 6);
    let scale = |c: &str| countries.iter().find(|x| x.country_id == c).unwrap().length_scale;
    assert!(scale("SHORT") < scale("LONG"), "{} vs {}", scale("SHORT"), scale("LONG"));
}
