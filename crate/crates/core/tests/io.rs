use std::fs::File;
use std::io::{BufReader, BufWriter};

use quantctl::config::{ExperimentConfig, REPRODUCE_PAPER, SMOKE};
use quantctl::dump::{Dump, TrajectoryWriter};
use quantctl::{ClosedLoop, Scheme, trial_rng};

#[test]
fn presets_round_trip_through_toml() {
    for text in [REPRODUCE_PAPER, SMOKE] {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        let (a, b) = (cfg.build().unwrap(), again.build().unwrap());
        assert_eq!(a.params, b.params);
        assert_eq!(a.n_list, b.n_list);
    }
}

#[test]
fn reproduce_preset_covers_the_full_grid() {
    let exp = ExperimentConfig::preset("reproduce-paper").unwrap().build().unwrap();
    assert_eq!(exp.n_list.len(), 496);
    assert_eq!((exp.n_list[0], *exp.n_list.last().unwrap()), (10, 1000));
    assert_eq!(exp.model.optimal_cost().unwrap(), 16.0 / 3.0);
    assert_eq!((exp.stop.eps, exp.stop.settle, exp.stop.max_steps), (1e-4, 10_000, 50_000_000));
}

#[test]
fn dump_file_round_trip() {
    let exp = ExperimentConfig::preset("smoke").unwrap().build().unwrap();
    let scheme = Scheme::new(exp.params, 1).unwrap();
    let mut cl = ClosedLoop::new(scheme, &exp.model, &[0.0]).unwrap();
    cl.set_ring_capacity(2000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.qctr");
    let mut w = TrajectoryWriter::new(BufWriter::new(File::create(&path).unwrap()), &scheme).unwrap();
    let mut rng = trial_rng(40, 0);
    for _ in 0..2000 {
        let (x, state) = (cl.state().to_vec(), cl.encoder().state());
        cl.step(&mut rng).unwrap();
        w.push(cl.t() - 1, &x, state, cl.encoder().message()).unwrap();
    }
    w.finish().unwrap();
    let dump = Dump::read(&mut BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(dump.records.len(), 2000);
    let rebuilt = dump.step_records(&scheme, &exp.model).unwrap();
    assert!(rebuilt.iter().eq(cl.records()));
    let mut csv = Vec::new();
    dump.write_csv(&exp.params, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2001);
}
