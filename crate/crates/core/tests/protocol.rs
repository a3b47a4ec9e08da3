use quantctl::codec::{ClosedLoop, CoderState, Decoder, Encoder, Scheme};
use quantctl::config::ExperimentConfig;
use quantctl::model::{SchemeParams, SystemModel};
use quantctl::sim::sweep;
use quantctl::{NoiseSpec, trial_rng};

fn example_model() -> SystemModel {
    SystemModel::scalar(1.2, 1.0, NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap()).unwrap()
}

/// Midpoint quantizer written out directly: `Δ floor(x/Δ) + Δ/2` on
/// `[-MΔ/2, MΔ/2]`, the right edge going to the top bin, zero outside.
fn reference_quantize(m: u32, delta: f64, x: f64) -> f64 {
    let r = f64::from(m) / 2.0 * delta;
    if x.abs() > r {
        return 0.0;
    }
    if x == r {
        return r - delta / 2.0;
    }
    delta * (x / delta).floor() + delta / 2.0
}

#[test]
fn golden_three_step_trace() {
    let model = example_model();
    let params = SchemeParams::scalar_example(100);
    let scheme = Scheme::new(params, 1).unwrap();
    let mut cl = ClosedLoop::new(scheme, &model, &[0.0]).unwrap();
    cl.set_verify(true);

    let fine = 2.0 * 100f64.powf(-1.0 / 3.0);
    let noise = [0.1, -0.2, 3.0];
    let mut x = 0.0f64;
    let mut delta = 9.0f64;
    for (t, &w) in noise.iter().enumerate() {
        let coarse = reference_quantize(2, delta, x);
        let e = x - coarse;
        let xhat = coarse + reference_quantize(100, fine, e);
        let u = -1.2 * xhat;
        let next = 1.2 * x + u + w;
        let in_view = x.abs() <= delta;
        let next_delta = match (in_view, delta >= 9.0) {
            (false, _) => delta * 64.0 / 27.0,
            (true, true) => delta * 0.75,
            (true, false) => delta,
        };

        assert_eq!(cl.encoder().state().bin_size(&params), delta, "t = {t}");
        cl.step_with_noise(&[w]).unwrap();
        assert!((cl.encoder().coarse()[0] - coarse).abs() < 1e-12, "t = {t}");
        assert!((cl.decoder().estimate()[0] - xhat).abs() < 1e-12, "t = {t}");
        assert!((cl.decoder().control()[0] - u).abs() < 1e-12, "t = {t}");
        assert!((cl.state()[0] - next).abs() < 1e-12, "t = {t}: {} vs {next}", cl.state()[0]);
        assert!((cl.encoder().state().bin_size(&params) - next_delta).abs() < 1e-12);
        x = next;
        delta = next_delta;
    }
    // First step by hand: 0 lands in the upper adaptive bin, midpoint 4.5.
    let first = 1.2 * (-4.5 - reference_quantize(100, fine, -4.5)) + 0.1;
    assert!((first - 0.129_175).abs() < 1e-5);
}

#[test]
fn overflow_zooms_out_and_recaptures() {
    let model = example_model();
    let params = SchemeParams::scalar_example(10);
    let scheme = Scheme::new(params, 1).unwrap();
    let mut cl = ClosedLoop::new(scheme, &model, &[100.0]).unwrap();
    let mut exps = Vec::new();
    for _ in 0..6 {
        let o = cl.step_with_noise(&[0.0]).unwrap();
        exps.push((o.in_view, o.delta_exp));
    }
    // u = 0 while the fine range (4.64) is exceeded: x = 100, 120, 144,
    // 172.8 against Δ = 9, 21.3, 50.6, 119.9, then 207.4 in view at 284.1
    assert_eq!(&exps[..5], &[(false, 0), (false, 3), (false, 6), (false, 9), (true, 12)]);
    assert_eq!(exps[5], (true, 11));
}

#[test]
fn encoder_and_decoder_agree_on_a_long_run() {
    let model = example_model();
    let scheme = Scheme::new(SchemeParams::scalar_example(100), 1).unwrap();
    let mut enc = Encoder::new(scheme);
    let mut dec = Decoder::new(scheme, &model).unwrap();
    let sampler = model.noise().sampler();
    let mut rng = trial_rng(21, 0);
    let (mut x, mut w) = (0.0f64, [0.0]);
    for t in 0..1_000_000u32 {
        let msg = enc.encode(&[x]).unwrap().clone();
        let bytes = msg.to_bytes();
        let received = quantctl::ChannelMessage::from_bytes(&bytes, 1).unwrap();
        let u = dec.decode(&received).unwrap()[0];
        assert_eq!(enc.state(), dec.state(), "t = {t}");
        sampler.sample_into(&mut rng, &mut w);
        x = 1.2 * x + u + w[0];
    }
}

#[test]
fn corrupted_message_leaves_decoder_state_alone() {
    let model = example_model();
    let scheme = Scheme::new(SchemeParams::scalar_example(10), 1).unwrap();
    let mut dec = Decoder::with_state(scheme, &model, CoderState { delta_exp: 2 }).unwrap();
    let mut bad = quantctl::ChannelMessage::zeros(1);
    bad.adaptive = quantctl::AdaptiveSymbol(7);
    assert!(dec.decode(&bad).is_err());
    assert_eq!(dec.state(), CoderState { delta_exp: 2 });
}

#[test]
fn snapshot_restore_continues_identically() {
    let model = example_model();
    let scheme = Scheme::new(SchemeParams::scalar_example(50), 1).unwrap();
    let mut a = ClosedLoop::new(scheme, &model, &[3.0]).unwrap();
    let mut rng = trial_rng(9, 4);
    for _ in 0..1000 {
        a.step(&mut rng).unwrap();
    }
    let snap = a.snapshot();
    let mut b = ClosedLoop::restore(scheme, &model, &snap).unwrap();
    let mut rng_b = rng.clone();
    for _ in 0..1000 {
        assert_eq!(a.step(&mut rng).unwrap(), b.step(&mut rng_b).unwrap());
        assert_eq!(a.state(), b.state());
    }
}

#[test]
fn sweeps_are_byte_identical_across_runs_and_worker_counts() {
    let mut exp = ExperimentConfig::preset("smoke").unwrap().build().unwrap();
    exp.stop.max_steps = 50_000;
    exp.n_list = vec![4, 8, 16, 32];
    exp.seeds = 2;
    let csv = |workers| {
        let result = sweep(&exp.sweep_config(workers), |_| {}).unwrap();
        let mut buf = Vec::new();
        result.write_csv(&mut buf).unwrap();
        buf
    };
    let first = csv(1);
    assert_eq!(first, csv(1));
    assert_eq!(first, csv(3));
}
