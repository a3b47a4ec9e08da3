use quantctl::model::Matrix;
use quantctl::noise::{bg_inverse_cdf, bg_pdf};
use quantctl::{NoiseSpec, trial_rng};

/// CDF of the Bucklew–Gallagher law: `|X| + 1` is Pareto(1, 2 + δ).
fn bg_cdf(delta: f64, x: f64) -> f64 {
    let tail = 0.5 * (1.0 + x.abs()).powf(-(2.0 + delta));
    if x >= 0.0 { 1.0 - tail } else { tail }
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn bg_samples_pass_kolmogorov_smirnov() {
    for (delta, stream) in [(2.0, 0), (0.5, 1), (5.0, 2)] {
        let spec = NoiseSpec::scaled_bg(1.0, delta, 1).unwrap();
        let sampler = spec.sampler();
        let mut rng = trial_rng(31, stream);
        let mut buf = [0.0];
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                sampler.sample_into(&mut rng, &mut buf);
                buf[0]
            })
            .collect();
        let d = ks_statistic(xs, |x| bg_cdf(delta, x));
        // 1% critical value 1.63/sqrt(n)
        assert!(d < 1.63 / 100_000f64.sqrt(), "delta = {delta}: D = {d}");
    }
}

#[test]
fn bg_inverse_cdf_inverts_the_cdf() {
    for delta in [0.5, 2.0, 7.0] {
        for i in 1..1000 {
            let u = f64::from(i) / 1000.0;
            assert!((bg_cdf(delta, bg_inverse_cdf(delta, u)) - u).abs() < 1e-12);
        }
        assert!((bg_pdf(delta, 0.0) - (1.0 + delta / 2.0)).abs() < 1e-15);
    }
}

#[test]
fn bg_moments_match_beta_function_values() {
    // E|Z|^m = s B(m + 1, s - m) with s = 2 + δ; for δ = 2 that is 1/3, 1/3, 1.
    let spec = NoiseSpec::scaled_bg(1.0, 2.0, 1).unwrap();
    for (order, expected) in [(1.0, 1.0 / 3.0), (2.0, 1.0 / 3.0), (3.0, 1.0)] {
        let m = spec.moment(order).unwrap();
        assert!((m - expected).abs() < 1e-8 * expected, "order {order}: {m}");
    }
    assert!(spec.moment(4.0).is_err() || spec.moment(4.0).unwrap().is_infinite());
    let scaled = NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap();
    assert!((scaled.second_moment_matrix().unwrap()[(0, 0)] - 16.0 / 3.0).abs() < 1e-12);
    assert!((scaled.tail(4.0).unwrap() - 2f64.powi(-4)).abs() < 1e-15);
}

#[test]
fn bg_first_absolute_moment_by_monte_carlo() {
    let spec = NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap();
    let sampler = spec.sampler();
    let mut rng = trial_rng(32, 0);
    let mut buf = [0.0];
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        sampler.sample_into(&mut rng, &mut buf);
        s += buf[0].abs();
        s2 += buf[0] * buf[0];
    }
    let mean = s / f64::from(n);
    let se = ((s2 / f64::from(n) - mean * mean) / f64::from(n)).sqrt();
    assert!((mean - 4.0 / 3.0).abs() < 5.0 * se, "mean |w| = {mean}, se {se}");
}

#[test]
fn correlated_gaussian_has_requested_covariance() {
    let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
    let spec = NoiseSpec::gaussian(cov.clone()).unwrap();
    let sampler = spec.sampler();
    let mut rng = trial_rng(33, 0);
    let n = 400_000;
    let mut buf = [0.0; 2];
    let mut acc = [0.0f64; 5];
    for _ in 0..n {
        sampler.sample_into(&mut rng, &mut buf);
        acc[0] += buf[0];
        acc[1] += buf[1];
        acc[2] += buf[0] * buf[0];
        acc[3] += buf[0] * buf[1];
        acc[4] += buf[1] * buf[1];
    }
    let nf = f64::from(n);
    assert!((acc[0] / nf).abs() < 0.01 && (acc[1] / nf).abs() < 0.01);
    for (got, want) in [(acc[2] / nf, 2.0), (acc[3] / nf, 0.6), (acc[4] / nf, 0.5)] {
        assert!((got - want).abs() < 0.02, "{got} vs {want}");
    }
}

#[test]
fn scalar_gaussian_fourth_moment() {
    let spec = NoiseSpec::scalar_gaussian(1.5).unwrap();
    let sampler = spec.sampler();
    let mut rng = trial_rng(34, 0);
    let mut buf = [0.0];
    let n = 1_000_000;
    let m4: f64 = (0..n)
        .map(|_| {
            sampler.sample_into(&mut rng, &mut buf);
            buf[0].powi(4)
        })
        .sum::<f64>()
        / f64::from(n);
    assert!((m4 - 3.0 * 1.5 * 1.5).abs() < 0.1, "{m4}");
    assert!((spec.moment(4.0).unwrap() - 6.75).abs() < 1e-9);
}
