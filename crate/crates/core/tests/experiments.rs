use maxlow_core::experiments::{run, write_outputs, ExperimentConfig, ExperimentKind, Geometry, GridConfig};
use maxlow_core::BoundaryLabel;

fn cfg(kind: ExperimentKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(kind);
    c.seed = Some(seed);
    c
}

#[test]
fn bounded_lowfreq_approaches_static_limit() {
    let mut c = cfg(ExperimentKind::LowfreqSweep, 5);
    c.bounded = true;
    let r = run(&c).unwrap();
    let d = r.table("convergence").unwrap().column("difference").unwrap();
    assert_eq!(d.len(), c.frequencies.len());
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    assert!(r.flags["difference_decreasing"]);
}

#[test]
fn single_frequency_gives_single_row() {
    let mut c = cfg(ExperimentKind::LowfreqSweep, 5);
    c.bounded = true;
    c.frequencies = vec![0.0625];
    let r = run(&c).unwrap();
    assert_eq!(r.table("convergence").unwrap().rows.len(), 1);
}

#[test]
fn ring_obstacle_has_one_magnetic_basis_element() {
    let mut c = cfg(ExperimentKind::VerifyB1, 2);
    c.grid = GridConfig { geometry: Geometry::RingObstacle, n: 9, m: 3, thickness: 1, h: 0.25, label: BoundaryLabel::Gamma1 };
    let r = run(&c).unwrap();
    assert!(r.flags["magnetic_steps"], "{:?}", r.flags);
    let t = r.table("steps").unwrap();
    let basis = t.column("basis").unwrap();
    // electric then magnetic rows
    assert!(basis.contains(&1.0), "{basis:?}");
}

#[test]
fn spectrum_reports_cavity_dimension_and_invariance() {
    let mut c = cfg(ExperimentKind::Spectrum, 3);
    c.expected_dims = Some([1, 0]);
    let r = run(&c).unwrap();
    assert!(r.passed(), "{:?}", r.flags);
    let dims = r.table("dimensions").unwrap();
    assert!(dims.column("electric").unwrap().iter().all(|&k| k == 1.0));
    assert!(dims.column("magnetic").unwrap().iter().all(|&k| k == 0.0));
}

#[test]
fn neumann_rejects_frequency_at_smallest_singular_value() {
    let mut c = cfg(ExperimentKind::NeumannCheck, 1);
    c.frequencies = vec![0.1, 1.0];
    assert!(run(&c).is_err());
}

#[test]
fn outputs_are_deterministic_and_summary_survives_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg(ExperimentKind::NeumannCheck, 8);
    let a = write_outputs(&tmp.path().join("a"), &c, &run(&c)).unwrap();
    let b = write_outputs(&tmp.path().join("b"), &c, &run(&c)).unwrap();
    assert!(a.passed);
    for f in &a.files {
        let x = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let y = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert_eq!(a.files, b.files);

    let mut bad = c.clone();
    bad.seed = None;
    let s = write_outputs(&tmp.path().join("c"), &bad, &run(&bad)).unwrap();
    assert!(!s.passed);
    assert!(s.error.is_some());
    let text = std::fs::read_to_string(tmp.path().join("c/summary.json")).unwrap();
    assert!(text.contains("\"error\""));
}
