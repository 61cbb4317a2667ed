use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use speechknn_core::synthetic::{SyntheticCorpus, SyntheticSpec};
use speechknn_core::Split;

struct Fixture {
    dir: tempfile::TempDir,
    manifest: PathBuf,
    corpus: SyntheticCorpus,
}

impl Fixture {
    fn new() -> Self {
        let spec = SyntheticSpec { n_train: 60, n_test: 20, frames: 12, dim: 8, ..Default::default() };
        let corpus = SyntheticCorpus::generate(&spec);
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus.write_to_dir(dir.path()).unwrap();
        Fixture { dir, manifest, corpus }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn stores(&self) -> PathBuf {
        self.path("stores")
    }

    fn build(&self) {
        let out = run(&["build", "--manifest", s(&self.manifest), "--store-dir", s(&self.stores())]);
        assert_ok(&out);
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechknn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr:\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn build_single_store_writes_snapshot_and_stats_line() {
    let f = Fixture::new();
    let out = run(&[
        "build", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--layer", "3", "--channel", "original",
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    assert!(lines[0].starts_with("layer=3 channel=original entries=60 dim=8 "), "{text}");
    let snapshots: Vec<_> = std::fs::read_dir(f.stores()).unwrap().collect();
    assert_eq!(snapshots.len(), 1);

    let stats = run(&["stats", "--store-dir", s(&f.stores())]);
    assert_ok(&stats);
    assert_eq!(stdout(&stats), text);
}

#[test]
fn evaluate_is_byte_identical_across_runs_and_thread_counts() {
    let f = Fixture::new();
    f.build();
    let mut reports = Vec::new();
    for (i, jobs) in ["1", "4", "4"].into_iter().enumerate() {
        let dir = f.path(&format!("report{i}"));
        let out = run(&[
            "evaluate", "--jobs", jobs, "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--report-dir",
            s(&dir),
        ]);
        assert_ok(&out);
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        reports.push((stdout(&out), files));
    }
    assert!(reports[0].1.iter().any(|(n, _)| n == "report.json"));
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
    let header = String::from_utf8(reports[0].1.iter().find(|(n, _)| n == "report.json").unwrap().1.clone()).unwrap();
    assert!(header.contains("\"seed\""), "{header}");
}

#[test]
fn removed_sample_never_appears_in_provenance() {
    let f = Fixture::new();
    f.build();
    let assess = || {
        let out = run(&[
            "assess", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--provenance",
        ]);
        assert_ok(&out);
        stdout(&out)
    };
    let before = assess();
    let victim = f
        .corpus
        .split(Split::Train)
        .into_iter()
        .find(|r| before.contains(&format!("\"{}\"", r.sample_id)))
        .expect("some training sample is retrieved")
        .sample_id;

    let out = run(&["remove", "--store-dir", s(&f.stores()), "--id", &victim]);
    assert_ok(&out);
    let after = assess();
    assert_eq!(after.lines().count(), 20);
    assert!(!after.contains(&format!("\"{victim}\"")), "{victim} still retrieved");

    let again = run(&["remove", "--store-dir", s(&f.stores()), "--id", &victim]);
    assert_eq!(again.status.code(), Some(1));

    let out = run(&["add", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--id", &victim]);
    assert_ok(&out);
    assert_eq!(assess(), before);
}

#[test]
fn report_from_assessments_matches_evaluate() {
    let f = Fixture::new();
    f.build();
    let jsonl = f.path("scores.jsonl");
    assert_ok(&run(&["assess", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--out", s(&jsonl)]));
    let rebuilt = run(&[
        "report", "--manifest", s(&f.manifest), "--assessments", s(&jsonl), "--report-dir", s(&f.path("r")),
    ]);
    assert_ok(&rebuilt);
    let direct = run(&["evaluate", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores())]);
    assert_ok(&direct);
    assert_eq!(stdout(&rebuilt), stdout(&direct));
    let scores = std::fs::read_to_string(f.path("r").join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 21);
}

#[test]
fn select_n_and_ablate_write_csv() {
    let f = Fixture::new();
    let out = run(&["select-n", "--manifest", s(&f.manifest), "--layer", "4", "--candidates", "2,3,20"]);
    assert_ok(&out);
    let csv = stdout(&out);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "candidate_n,mean_silhouette,sequences_skipped");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3], "20,,60");
    assert!(String::from_utf8_lossy(&out.stderr).contains("selected_n="));

    f.build();
    let out = run(&[
        "ablate", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--axes", "refinement",
    ]);
    assert_ok(&out);
    let csv = stdout(&out);
    assert_eq!(csv.lines().count(), 1 + 1 + 3, "{csv}");
}

#[test]
fn config_file_supplies_paths_and_flags_override() {
    let f = Fixture::new();
    let cfg = f.path("run.toml");
    std::fs::write(
        &cfg,
        format!("manifest = {:?}\nstore_dir = {:?}\nk = 3\n", s(&f.manifest), s(&f.stores())),
    )
    .unwrap();
    assert_ok(&run(&["--config", s(&cfg), "build"]));
    let via_file = run(&["--config", s(&cfg), "evaluate", "--k", "5"]);
    let via_flags = run(&["evaluate", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores())]);
    assert_ok(&via_file);
    assert_eq!(stdout(&via_file), stdout(&via_flags));
}

#[test]
fn version_names_format_versions() {
    let out = run(&["--version"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("(feature file v1, snapshot v1)"), "{}", stdout(&out));
}

#[test]
fn usage_errors_exit_2_and_data_errors_exit_1() {
    let f = Fixture::new();
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["build", "--store-dir", s(&f.stores())]).status.code(), Some(2));
    assert_eq!(
        run(&["evaluate", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores()), "--threshold", "2"])
            .status
            .code(),
        Some(2)
    );
    let bad_cfg = f.path("bad.toml");
    std::fs::write(&bad_cfg, "nonsense = true\n").unwrap();
    assert_eq!(run(&["--config", s(&bad_cfg), "stats"]).status.code(), Some(2));

    let missing = run(&["stats", "--store-dir", s(&f.path("nowhere"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    // Corrupt one test sample's feature file: assess reports it and exits 1.
    f.build();
    let victim = f.corpus.split(Split::Test)[0].clone();
    let path = f.path("features").join(format!("{}.l3.original.npsa", victim.sample_id));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let out = run(&["assess", "--manifest", s(&f.manifest), "--store-dir", s(&f.stores())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout(&out).lines().count(), 19);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&victim.sample_id));
}
