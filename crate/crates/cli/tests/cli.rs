use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use antigenic_core::corpus::write_fasta;
use antigenic_core::eval::{ExperimentConfig, ExperimentReport, SCHEMA_VERSION};
use antigenic_core::synthetic::raw_fixture;
use tempfile::TempDir;

const GRIDS: &str = r#"
[experiment.grids.rf]
n_estimators = [10]
max_depth = ["None"]

[experiment.grids.svm]
c = [1.0]
gamma = [0.1]

[experiment.grids.label_spreading]
alpha = [0.2]
n_neighbors = [5]
max_iter = [20]
tol = 0.001

[experiment.grids.self_training]
threshold = [0.9]
criterion = ["threshold"]
k_best = [5]
max_iter = [3]
"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(experiment: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = raw_fixture(10, 2, 3);
        fs::write(dir.path().join("strains.fasta"), write_fasta(&fx.strains)).unwrap();
        fs::write(dir.path().join("titres.csv"), &fx.titres_csv).unwrap();
        fs::write(dir.path().join("toy.emb"), fx.embeddings[1].to_binary()).unwrap();
        let config = format!(
            "[paths]\nsequences = \"strains.fasta\"\ntitres = \"titres.csv\"\nembeddings = [\"toy.emb\"]\nout = \"out\"\n\n\
             [experiment]\nseed = 5\nbootstrap_resamples = 50\n{experiment}\n{GRIDS}"
        );
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("config.toml");
        let mut all = vec!["--config", config.to_str().unwrap()];
        all.extend_from_slice(args);
        antigenic(&all)
    }
}

fn antigenic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_antigenic")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn ingest_writes_corpus_and_counts() {
    let fx = Fixture::new("");
    let o = fx.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = read(&fx.path("out/ingest.log"));
    assert!(log.contains("censored: line"));
    assert!(log.contains("merged:"));
    let counts: Vec<&str> = log.lines().skip_while(|l| !l.starts_with("subtype,")).skip(1).collect();
    assert_eq!(counts.len(), 5);
    for row in counts {
        let f: Vec<usize> = row.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[2] + f[3] + f[4], f[1], "{row}");
    }
    assert!(read(&fx.path("out/corpus.csv")).starts_with("a,b,subtype,d_dv,label\n"));
}

#[test]
fn reingest_is_byte_identical() {
    let fx = Fixture::new("");
    fx.run(&["ingest"]);
    let first = read(&fx.path("out/corpus.csv"));
    fx.run(&["ingest"]);
    assert_eq!(first, read(&fx.path("out/corpus.csv")));
}

#[test]
fn missing_fasta_exits_2_naming_path() {
    let fx = Fixture::new("");
    fs::remove_file(fx.path("strains.fasta")).unwrap();
    let o = fx.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strains.fasta"), "{}", stderr(&o));
}

#[test]
fn duplicate_titres_merge_by_geometric_mean() {
    let fx = Fixture::new("");
    fs::write(fx.path("strains.fasta"), ">A|H3N2\nMKTIIALSY\n>B|H3N2\nMKTIIALSF\n").unwrap();
    fs::write(
        fx.path("titres.csv"),
        "virus_id,antiserum_id,titre\nA,A,640\nB,B,640\nA,B,40\nA,B,160\nB,A,<10\n",
    )
    .unwrap();
    let o = fx.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = read(&fx.path("out/ingest.log"));
    assert!(log.contains("(A, B) [40, 160] -> geometric mean 80"), "{log}");
    assert!(log.contains("censored: line 6 (B, A) `<10` -> 5"), "{log}");
    assert!(log.contains("H3N2,2,1,0,1,0"), "{log}");
}

#[test]
fn malformed_titres_report_line() {
    let fx = Fixture::new("");
    fs::write(fx.path("titres.csv"), "virus_id,antiserum_id,titre\nA,A,640\nA,B,abc\n").unwrap();
    let o = fx.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_1_before_compute() {
    let fx = Fixture::new("unknown_key = 1");
    let o = fx.run(&["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));
    assert!(!fx.path("out").exists());

    let fx = Fixture::new("");
    let o = fx.run(&["run", "--ratios", "0.3"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fx.run(&["--threads", "0", "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!fx.path("out").exists());
}

#[test]
fn dry_run_prints_cell_matrix() {
    let fx = Fixture::new("");
    let o = fx.run(&["run", "--dry-run", "--ratios", "0.25,0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    // 2 learners x 2 paradigms + label spreading, per ratio
    assert!(out.starts_with("10 cells\n"), "{out}");
    assert!(out.contains("toy/label_spreading/kNN/25%"));
    assert!(out.contains("toy/self_training/SVM/50%"));
    assert!(!fx.path("out/report.json").exists());
}

#[test]
fn run_is_filtered_and_deterministic() {
    let fx = Fixture::new("paradigms = [\"supervised\", \"self_training\"]\nlearners = [\"rf\"]");
    assert_eq!(fx.run(&["ingest"]).status.code(), Some(0));
    let o = fx.run(&["run", "--ratios", "0.25"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = read(&fx.path("out/report.json"));
    let report = ExperimentReport::from_json(&first).unwrap();
    assert_eq!(report.cells.len(), 2);
    assert!(report.cells.iter().all(|c| c.key.ratio.value() == 0.25 && c.is_ok()));
    assert!(read(&fx.path("out/predictions.csv")).lines().count() > 1);

    let o = fx.run(&["--threads", "1", "run", "--ratios", "0.25"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, read(&fx.path("out/report.json")));

    let o = fx.run(&["--seed", "6", "run", "--ratios", "0.25"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(first, read(&fx.path("out/report.json")));
}

#[test]
fn failed_cell_exits_3() {
    let fx = Fixture::new("paradigms = [\"supervised\", \"label_spreading\"]\nlearners = [\"rf\"]");
    let cfg = read(&fx.path("config.toml")).replace("n_neighbors = [5]", "n_neighbors = [100000]");
    fs::write(fx.path("config.toml"), cfg).unwrap();
    assert_eq!(fx.run(&["ingest"]).status.code(), Some(0));
    let o = fx.run(&["run", "--ratios", "0.25"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("1 of 2 cells failed"), "{}", stderr(&o));
    let report = ExperimentReport::from_json(&read(&fx.path("out/report.json"))).unwrap();
    assert_eq!(report.failed_cells().len(), 1);
}

#[test]
fn report_outputs() {
    let fx = Fixture::new("paradigms = [\"supervised\", \"label_spreading\"]\nlearners = [\"rf\"]");
    assert_eq!(fx.run(&["ingest"]).status.code(), Some(0));
    assert_eq!(fx.run(&["run", "--ratios", "0.5"]).status.code(), Some(0));

    let o = fx.run(&["report"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bars = read(&fx.path("out/figures/grouped_bars.csv"));
    assert_eq!(bars.lines().count(), 3);
    assert!(!fx.path("out/figures/subtype_H1N1.csv").exists());

    let o = fx.run(&["report", "--per-subtype", "--svg"]);
    assert_eq!(o.status.code(), Some(0));
    for s in ["H1N1", "H3N2", "H5N1", "H9N2"] {
        let panel = read(&fx.path(&format!("out/figures/subtype_{s}.csv")));
        assert_eq!(panel.lines().count(), 3, "{panel}");
    }
    assert!(read(&fx.path("out/figures/grouped_bars.svg")).starts_with("<svg"));
}

#[test]
fn empty_report_gives_header_only_csvs() {
    let fx = Fixture::new("");
    let empty = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config: ExperimentConfig::default(),
        folds_by_subtype: true,
        datasets: vec![],
        cells: vec![],
    };
    fs::write(fx.path("empty.json"), empty.to_json()).unwrap();
    let input = fx.path("empty.json");
    let o = fx.run(&["report", "--per-subtype", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["grouped_bars", "subtype_H1N1", "subtype_H3N2", "subtype_H5N1", "subtype_H9N2"] {
        assert_eq!(read(&fx.path(&format!("out/figures/{f}.csv"))).lines().count(), 1);
    }
}

#[test]
fn report_rejects_schema_mismatch() {
    let fx = Fixture::new("");
    let mut r = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config: ExperimentConfig::default(),
        folds_by_subtype: true,
        datasets: vec![],
        cells: vec![],
    };
    r.schema_version = SCHEMA_VERSION + 1;
    fs::write(fx.path("old.json"), r.to_json()).unwrap();
    let input = fx.path("old.json");
    let o = fx.run(&["report", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
    assert!(!fx.path("out/figures").exists());
}

#[test]
fn effective_config_round_trips() {
    let fx = Fixture::new("");
    let o = fx.run(&["--seed", "99", "--print-effective-config", "run", "--ratios", "0.75"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed = stdout(&o);
    assert!(printed.contains("seed = 99"));
    assert!(printed.contains("ratios = [0.75]"));
    assert!(printed.contains("n_estimators = [10]"));

    let dumped = fx.path("effective.toml");
    fs::write(&dumped, &printed).unwrap();
    let o = antigenic(&["--config", dumped.to_str().unwrap(), "--print-effective-config", "ingest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), printed);
}
