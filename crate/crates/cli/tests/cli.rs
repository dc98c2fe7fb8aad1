use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use remkit::ObservationTable;

fn remkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remkit"))
        .args(args)
        .output()
        .expect("run remkit")
}

fn ok(args: &[&str]) -> Output {
    let out = remkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    ok(&[
        "simulate",
        "--users",
        "8",
        "--articles",
        "8",
        "--n-events",
        "300",
        "--seed",
        "3",
        "--out",
        path(&out),
    ]);
    out.join("events.csv")
}

fn header(file: &Path) -> String {
    fs::read_to_string(file)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn pipeline_outputs_carry_manifest_headers() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let c = dir.path().join("c");
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--p",
        "0.5",
        "--m",
        "4",
        "--out",
        path(&c),
    ]);
    let f = dir.path().join("f");
    let fit = ok(&[
        "fit",
        "--table",
        path(&c.join("table.csv")),
        "--out",
        path(&f),
    ]);
    assert!(String::from_utf8_lossy(&fit.stdout).contains("Num. events"));
    let d = dir.path().join("d");
    ok(&[
        "diagnose",
        "--table",
        path(&c.join("table.csv")),
        "--out",
        path(&d),
    ]);

    for (run, files) in [
        (&dir.path().join("sim"), &["events.csv"][..]),
        (&c, &["table.csv"]),
        (&f, &["fit.csv", "fit.txt"]),
        (&d, &["density.csv", "covariance.csv"]),
    ] {
        let manifest = header(&run.join("manifest.txt"));
        assert!(manifest.starts_with("# manifest="));
        for name in files {
            assert_eq!(header(&run.join(name)), manifest, "{name}");
        }
    }
}

#[test]
fn table_round_trips_through_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let c = dir.path().join("c");
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--m",
        "2",
        "--seed",
        "9",
        "--out",
        path(&c),
    ]);
    let file = fs::File::open(c.join("table.csv")).unwrap();
    let (table, _) = ObservationTable::read_csv(std::io::BufReader::new(file)).unwrap();
    assert_eq!(table.meta("m"), Some("2"));
    assert_eq!(table.meta("seed"), Some("9"));
    assert!(table.n_strata() > 250);
    assert!(table.strata().iter().all(|s| s.len <= 3));
}

#[test]
fn several_configs_write_one_table_each() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let c = dir.path().join("c");
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--p",
        "0.25,0.5",
        "--m",
        "1,3",
        "--out",
        path(&c),
    ]);
    for i in 0..4 {
        assert!(c.join(format!("table_{i}.csv")).exists());
    }
    assert!(!c.join("table.csv").exists());
}

#[test]
fn config_file_settings_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# sampling\np = 0.5\nm = 2\nseed = 4\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[
        "compute",
        "--config",
        path(&conf),
        "--events",
        path(&events),
        "--out",
        path(&a),
    ]);
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--p",
        "0.5",
        "--m",
        "2",
        "--seed",
        "4",
        "--out",
        path(&b),
    ]);
    assert_eq!(
        fs::read(a.join("table.csv")).unwrap(),
        fs::read(b.join("table.csv")).unwrap()
    );
    let c = dir.path().join("c");
    ok(&[
        "compute",
        "--config",
        path(&conf),
        "--events",
        path(&events),
        "--m",
        "1",
        "--out",
        path(&c),
    ]);
    let text = fs::read_to_string(c.join("manifest.txt")).unwrap();
    assert!(text.contains("\nm=1\n"));
    assert!(text.contains("\np=0.5\n"));
}

#[test]
fn manifest_replays_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let a = dir.path().join("a");
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--p",
        "0.75",
        "--m",
        "3",
        "--seed",
        "11",
        "--halflife",
        "500000",
        "--risk-set",
        "closed",
        "--out",
        path(&a),
    ]);
    let b = dir.path().join("b");
    ok(&[
        "compute",
        "--config",
        path(&a.join("manifest.txt")),
        "--events",
        path(&events),
        "--out",
        path(&b),
    ]);
    assert_eq!(
        fs::read(a.join("table.csv")).unwrap(),
        fs::read(b.join("table.csv")).unwrap()
    );
}

#[test]
fn experiment_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let e = dir.path().join("e");
    ok(&[
        "experiment",
        "--events",
        path(&events),
        "--design",
        "fixed",
        "--p",
        "0.5",
        "--m",
        "3",
        "--replicates",
        "4",
        "--workers",
        "2",
        "--out",
        path(&e),
    ]);
    for name in ["summary.csv", "replicates.csv", "boxplot.csv"] {
        assert!(e.join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(e.join("summary.csv")).unwrap();
    // Header, column names, 5 effects x 3 quantities.
    assert_eq!(summary.lines().count(), 2 + 15);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate(dir.path());
    let cases: [(&[&str], &str, i32); 5] = [
        (
            &["compute", "--events", path(&events), "--p", "0"],
            "usage",
            2,
        ),
        (
            &["compute", "--events", path(&events), "--m", "0"],
            "usage",
            2,
        ),
        (&["compute", "--events", "/no/such/file"], "input", 1),
        (
            &["experiment", "--events", path(&events), "--design", "grid"],
            "usage",
            2,
        ),
        (&["frobnicate"], "usage", 2),
    ];
    for (args, kind, code) in cases {
        let out = remkit(args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        let first = stderr.lines().next().unwrap();
        assert!(
            first.starts_with(&format!("error: kind={kind} message=")),
            "{first}"
        );
    }
}

#[test]
fn unordered_input_needs_sort() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    fs::write(&events, "source,target,time\nx,y,10\nz,y,5\nx,w,20\n").unwrap();
    let out = remkit(&[
        "compute",
        "--events",
        path(&events),
        "--header",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: kind=input"));
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--header",
        "--sort",
        "--out",
        path(dir.path()),
    ]);
}

#[test]
fn near_degenerate_statistics_are_warned_about() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    // Every event is a new dyad, so repetition is zero throughout.
    let text: String = (0..40)
        .map(|i| format!("u{i},a{},{}\n", i % 7, i * 100))
        .collect();
    fs::write(&events, text).unwrap();
    let c = dir.path().join("c");
    ok(&[
        "compute",
        "--events",
        path(&events),
        "--m",
        "3",
        "--out",
        path(&c),
    ]);
    let out = ok(&[
        "diagnose",
        "--table",
        path(&c.join("table.csv")),
        "--out",
        path(&c),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("near-degenerate statistic repetition"),
        "{stderr}"
    );
}
