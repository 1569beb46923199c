use std::fs;

use flashsim::config::Config;
use flashsim::experiments::{run_single, run_sweep, SweepPlan};

const BASE: &str = "\
include = slc-small
[hardware]
channels = 2
luns_per_channel = 1
blocks_per_lun = 32
pages_per_block = 16
[workload]
precondition = sequential
threads = w
w.generator = random_writer
w.ios = 1500
";

#[test]
fn sweep_cells_match_isolated_runs() {
    let dir = tempfile::tempdir().unwrap();
    let base = Config::parse(BASE).unwrap();
    let plan = SweepPlan {
        name: "k".into(),
        param: "controller.greediness_K".into(),
        values: vec!["1".into(), "3".into()],
        seeds: vec![5, 6],
    };
    let cells = run_sweep(&base, &plan, dir.path()).unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(
        cells.iter().map(|c| (c.value.as_str(), c.seed)).collect::<Vec<_>>(),
        [("1", 5), ("1", 6), ("3", 5), ("3", 6)]
    );
    for cell in &cells {
        let mut config = base.clone();
        config.set("controller.greediness_K", &cell.value).unwrap();
        let alone = dir.path().join(format!("alone-{}-{}", cell.value, cell.seed));
        run_single(&config.resolve().unwrap(), cell.seed, &alone).unwrap();
        for f in ["trace.csv", "metrics.csv", "config_resolved"] {
            assert_eq!(fs::read(cell.dir.join(f)).unwrap(), fs::read(alone.join(f)).unwrap(), "{f}");
        }
    }
    let csv = fs::read_to_string(dir.path().join("k/sweep.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..5], ["param", "value", "seed", "status", "write_amplification"]);
    assert!(header.contains(&"w.throughput_iops"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn sweep_rejects_bad_values_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let base = Config::parse(BASE).unwrap();
    for values in [vec![], vec!["2".to_string(), "a/b".into()], vec!["0".into()]] {
        let plan = SweepPlan { name: "bad".into(), param: "controller.greediness_K".into(), values, seeds: vec![0] };
        assert!(run_sweep(&base, &plan, dir.path()).is_err());
    }
    assert!(!dir.path().join("bad").exists());
}
