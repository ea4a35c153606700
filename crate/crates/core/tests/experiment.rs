use std::fs;
use std::path::Path;

use proctensor::experiment::{
    csv_string, curves, parse_csv, read_csv, run_experiment, run_stage, svg_plot, CsvRow, ExperimentConfig, Stage,
    SweepVar, CSV_FILE, CSV_HEADER,
};
use proctensor::Error;
use proptest::prelude::*;

const SMALL: &str = "
experiment_id = tiny
L = 1
N = 2
M_train = 16
M_test = 8
sweeps = 2
bootstrap = 20
seed = 3
";

fn small(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("{SMALL}\n{extra}")).unwrap()
}

/// Structural check: one `<svg>` root, balanced tags, finite coordinates.
fn check_svg(svg: &str) {
    let body = svg.trim();
    assert!(body.starts_with("<svg") && body.ends_with("</svg>"), "root element");
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0;
    let mut rest = body;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close tag");
            continue;
        }
        let name = tag.split_whitespace().next().unwrap().trim_end_matches('/').to_string();
        if stack.is_empty() {
            roots += 1;
        }
        for attr in [
            "x", "y", "x1", "y1", "x2", "y2", "cx", "cy", "r", "width", "height", "points",
        ] {
            let key = format!(" {attr}=\"");
            if let Some(i) = tag.find(&key) {
                let v = &tag[i + key.len()..];
                let v = &v[..v.find('"').unwrap()];
                for num in v.split([' ', ',']).filter(|s| !s.is_empty()) {
                    let x: f64 = num.parse().unwrap_or_else(|_| panic!("{attr}={v:?} is not numeric"));
                    assert!(x.is_finite(), "{attr}={v:?}");
                }
            }
        }
        if !tag.ends_with('/') {
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed {stack:?}");
    assert_eq!(roots, 1);
}

fn point_rows(rows: &[CsvRow], value: f64) -> Vec<CsvRow> {
    rows.iter().filter(|r| r.sweep_value == value).cloned().collect()
}

#[test]
fn config_parsing_and_overrides() {
    let c = small("sweep_var = gamma\nsweep_values = 0.5, 1.0\nD = 1,2");
    assert_eq!(c.sweep_var, SweepVar::Gamma);
    assert_eq!(c.points().unwrap().len(), 2);
    assert_eq!(c.points().unwrap()[1].params.gamma, 1.0);

    let env = vec![
        ("PROCTENSOR_M_TRAIN".to_string(), "40".to_string()),
        ("PROCTENSOR_GAMMA".to_string(), "2.5".to_string()),
        ("UNRELATED".to_string(), "1".to_string()),
    ];
    let o = ExperimentConfig::parse_with_env(SMALL, env).unwrap();
    assert_eq!((o.m_train, o.params.gamma), (40, 2.5));

    for bad in [
        "L = 0",
        "bogus = 1",
        "N = x",
        "sweep_var = nope",
        "gamma = -1",
        "sweep_var = D\nsweep_values = 1.5",
    ] {
        assert!(ExperimentConfig::parse(&format!("{SMALL}\n{bad}")).is_err(), "{bad}");
    }
}

#[test]
fn defaults_follow_the_reference_setting() {
    let c = ExperimentConfig::default();
    let p = c.params;
    assert_eq!((c.steps, c.m_train, c.m_test), (6, 1000, 500));
    assert_eq!((p.j, p.delta, p.h, p.gamma, p.r, p.dt), (4.0, 1.5, 0.5, 1.0, 0.0, 0.1));
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small(""), dir.path(), 1).unwrap();
    assert!(out.success() && out.rows.is_empty());
    let text = fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.trim_end(), CSV_HEADER.join(","));
}

#[test]
fn csv_round_trip() {
    let row = CsvRow {
        experiment_id: "a,b".into(),
        sweep_var: "gamma".into(),
        sweep_value: 0.1,
        bond: 4,
        n: Some(2),
        metric: "I_n".into(),
        value: 1.234_567_890_123_456_7e-7,
        ci_low: Some(1e-8),
        ci_high: None,
        seed: u64::MAX,
    };
    let one = csv_string(std::slice::from_ref(&row)).unwrap();
    assert_eq!(one.lines().count(), 2);
    let agg = CsvRow {
        n: None,
        metric: "I".into(),
        ..row.clone()
    };
    let rows = vec![row, agg];
    assert_eq!(parse_csv(&csv_string(&rows).unwrap()).unwrap(), rows);
    assert!(matches!(parse_csv("a,b\n1,2\n"), Err(Error::Format(_))));
}

#[test]
fn bond_sweep_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("sweep_var = D\nsweep_values = 1, 2");
    let out = run_experiment(&cfg, dir.path(), 2).unwrap();
    assert!(out.success(), "{:?}", out.failures);
    let rows = read_csv(&dir.path().join(CSV_FILE)).unwrap();
    assert_eq!(rows, out.rows);
    for bond in [1, 2] {
        let mine: Vec<_> = rows.iter().filter(|r| r.bond == bond).collect();
        let metrics: Vec<&str> = mine.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(metrics, ["I", "I_n", "I_n", "Delta_Upsilon", "Delta_Y"]);
        for r in &mine {
            assert!(r.value >= 0.0 && r.value.is_finite());
            if let (Some(lo), Some(hi)) = (r.ci_low, r.ci_high) {
                assert!(lo <= r.value && r.value <= hi);
            }
        }
    }
    for f in ["I.svg", "Delta_Upsilon.svg", "Delta_Y.svg"] {
        check_svg(&fs::read_to_string(dir.path().join(f)).unwrap());
    }
    for f in [
        "train.ptd",
        "test.ptd",
        "exact.ptm",
        "trained_D1.ptm",
        "trained_D2.ptm",
        "train_D2.txt",
    ] {
        assert!(dir.path().join("point_000").join(f).exists(), "{f}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small("sweep_var = r\nsweep_values = 0, 0.5\nD = 1, 2");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path(), 1).unwrap();
    run_experiment(&cfg, b.path(), 2).unwrap();
    let read = |p: &Path| fs::read(p.join(CSV_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn failing_point_does_not_disturb_others() {
    let cfg = small("sweep_var = r\nsweep_values = 0, 0.5\nD = 1");
    let clean = tempfile::tempdir().unwrap();
    let good = run_experiment(&cfg, clean.path(), 1).unwrap();

    let broken = tempfile::tempdir().unwrap();
    fs::write(broken.path().join("point_001"), b"in the way").unwrap();
    let out = run_experiment(&cfg, broken.path(), 2).unwrap();
    assert!(!out.success());
    assert_eq!(out.failures.iter().map(|f| f.0).collect::<Vec<_>>(), [1]);
    let rows = read_csv(&broken.path().join(CSV_FILE)).unwrap();
    assert_eq!(point_rows(&rows, 0.0), point_rows(&good.rows, 0.0));
    let errs = point_rows(&rows, 0.5);
    assert_eq!(errs.len(), 1);
    assert_eq!(errs[0].metric, "error");
    assert!(broken.path().join("errors.txt").exists());
}

#[test]
fn stages_reproduce_the_full_run() {
    let cfg = small("sweep_var = gamma\nsweep_values = 0.5\nD = 2");
    let (whole, staged) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, whole.path(), 1).unwrap();
    for s in ["gen-data", "build-exact", "train", "evaluate"] {
        assert!(
            run_stage(&cfg, staged.path(), Stage::parse(s).unwrap(), 1)
                .unwrap()
                .success(),
            "{s}"
        );
    }
    let read = |p: &Path| fs::read(p.join(CSV_FILE)).unwrap();
    assert_eq!(read(whole.path()), read(staged.path()));
    let plotted = run_stage(&cfg, staged.path(), Stage::Plot, 1).unwrap();
    assert!(!plotted.files.is_empty());
    assert!(Stage::parse("deploy").is_err());
}

#[test]
fn train_stage_without_data_fails_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_stage(
        &small("sweep_var = gamma\nsweep_values = 0.5"),
        dir.path(),
        Stage::Train,
        1,
    )
    .unwrap();
    assert!(!out.success());
}

#[test]
fn svg_of_empty_curves_is_an_error() {
    assert!(svg_plot("t", "x", "y", &[]).is_err());
}

proptest! {
    #![proptest_config(proptest::test_runner::Config { cases: 200, failure_persistence: None, ..Default::default() })]

    #[test]
    fn csv_rows_round_trip(
        id in "[a-z ,\"]{0,8}",
        value in prop::num::f64::NORMAL | prop::num::f64::ZERO,
        lo in proptest::option::of(prop::num::f64::NORMAL),
        n in proptest::option::of(1usize..10),
        bond in 0usize..20,
        seed in any::<u64>(),
    ) {
        let r = CsvRow {
            experiment_id: id,
            sweep_var: "J".into(),
            sweep_value: value,
            bond,
            n,
            metric: "I".into(),
            value,
            ci_low: lo,
            ci_high: lo,
            seed,
        };
        let rows = vec![r];
        prop_assert_eq!(parse_csv(&csv_string(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn generated_svg_is_well_formed(ys in proptest::collection::vec((1e-18f64..10.0, 0.0f64..1.0), 1..8), curvesn in 1usize..4) {
        let rows: Vec<CsvRow> = (0..curvesn)
            .flat_map(|c| {
                ys.iter().enumerate().map(move |(k, &(y, w))| CsvRow {
                    experiment_id: "p<&>".into(),
                    sweep_var: "gamma".into(),
                    sweep_value: c as f64,
                    bond: k + 1,
                    n: None,
                    metric: "I".into(),
                    value: y,
                    ci_low: Some(y * w),
                    ci_high: Some(y * (1.0 + w)),
                    seed: 0,
                })
            })
            .collect();
        let cs = curves(&rows, "I");
        prop_assert_eq!(cs.len(), curvesn);
        check_svg(&svg_plot("t<1>", "D", "I", &cs).unwrap());
    }
}
