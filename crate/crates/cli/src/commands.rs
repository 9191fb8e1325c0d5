//! The four pipeline stages.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use antigenic_core::corpus::{build_corpus, parse_fasta, parse_titre_csv, Corpus, HiTitreTable};
use antigenic_core::eval::figures::{figure_files, FigureOptions};
use antigenic_core::eval::{run_experiment, Dataset, EvalError, ExperimentReport};
use antigenic_core::features::{featurize_corpus_with, EmbeddingStore};
use log::info;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CORPUS_FILE: &str = "corpus.csv";
pub const INGEST_LOG: &str = "ingest.log";
pub const REPORT_JSON: &str = "report.json";

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Parse inputs, label pairs, and write the corpus and its log.
pub fn ingest(cfg: &RunConfig, dry_run: bool) -> Result<Corpus, CliError> {
    let seq_path = cfg.require(&cfg.paths.sequences, "sequences")?;
    let titre_path = cfg.require(&cfg.paths.titres, "titres")?;
    let strains = parse_fasta(&read_text(seq_path)?).map_err(|e| CliError::io(seq_path, e))?;
    let floor = cfg.corpus.censored_floor;
    let measurements = parse_titre_csv(&read_text(titre_path)?, floor).map_err(|e| CliError::io(titre_path, e))?;
    let (table, notes) = HiTitreTable::from_measurements(&measurements, floor);
    let corpus = build_corpus(&strains, &table, &cfg.corpus.threshold).map_err(|e| CliError::io(titre_path, e))?;

    let mut log = String::new();
    let _ = writeln!(log, "sequences: {} ({} strains)", seq_path.display(), strains.len());
    let _ = writeln!(
        log,
        "titres: {} ({} readings, {} cells)",
        titre_path.display(),
        measurements.len(),
        table.len()
    );
    let _ = writeln!(log, "censored floor: {floor}");
    let _ = writeln!(log, "threshold: default {}", cfg.corpus.threshold.default);
    for (s, t) in &cfg.corpus.threshold.per_subtype {
        let _ = writeln!(log, "threshold: {s} {t}");
    }
    for n in &notes {
        let _ = writeln!(log, "{n}");
    }
    log.push_str("counts:\n");
    log.push_str(&corpus.counts_table());

    print!("{}", corpus.counts_table());
    if dry_run {
        println!("dry run: would write {} and {}", CORPUS_FILE, INGEST_LOG);
        return Ok(corpus);
    }
    let out = cfg.out_dir();
    write_file(&out.join(CORPUS_FILE), &corpus.to_csv())?;
    write_file(&out.join(INGEST_LOG), &log)?;
    Ok(corpus)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let path = cfg.out_dir().join(CORPUS_FILE);
    Corpus::from_csv(&read_text(&path)?).map_err(|e| CliError::io(&path, e))
}

fn load_stores(cfg: &RunConfig) -> Result<Vec<EmbeddingStore>, CliError> {
    if cfg.paths.embeddings.is_empty() {
        return Err(CliError::Config("paths.embeddings is empty".into()));
    }
    let mut names = BTreeSet::new();
    let mut out = Vec::new();
    for p in &cfg.paths.embeddings {
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        let store = EmbeddingStore::from_bytes(&bytes).map_err(|e| CliError::io(p, e))?;
        if !names.insert(store.model_name().to_string()) {
            return Err(CliError::Config(format!("model `{}` appears in more than one embedding file", store.model_name())));
        }
        out.push(store);
    }
    Ok(out)
}

fn datasets(cfg: &RunConfig, corpus: &Corpus, stores: &[EmbeddingStore], paths: &[PathBuf]) -> Result<Vec<(Dataset, String)>, CliError> {
    stores
        .iter()
        .zip(paths)
        .map(|(store, p)| {
            let fs = featurize_corpus_with(store, &corpus.pairs, cfg.corpus.combine).map_err(|e| CliError::io(p, e))?;
            let csv = fs.to_csv();
            Ok((Dataset::from_features(store.model_name(), &fs), csv))
        })
        .collect()
}

/// Write one feature CSV per embedding file.
pub fn featurize(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let stores = load_stores(cfg)?;
    let out = cfg.out_dir();
    for (d, csv) in datasets(cfg, &corpus, &stores, &cfg.paths.embeddings)? {
        let name = format!("features_{}.csv", d.embedding);
        println!("{}: {} labelled, {} unlabelled, {} features", d.embedding, d.y.len(), d.unlab_ids.len(), d.x.ncols());
        if dry_run {
            println!("dry run: would write {name}");
        } else {
            write_file(&out.join(name), &csv)?;
        }
    }
    Ok(())
}

fn predictions_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("embedding,paradigm,learner,ratio,fold,pair_id,subtype,truth,predicted\n");
    for c in &report.cells {
        let k = &c.key;
        for p in &c.predictions {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                k.embedding,
                k.paradigm,
                k.learner_name(),
                k.ratio.value(),
                p.fold,
                p.pair_id,
                p.subtype,
                p.truth,
                p.predicted
            );
        }
    }
    s
}

fn audit_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("embedding,learner,ratio,fold,iteration,pair_id,label,confidence\n");
    for c in &report.cells {
        let k = &c.key;
        for a in &c.audit {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                k.embedding,
                k.learner_name(),
                k.ratio.value(),
                a.fold,
                a.iteration,
                a.pair_id,
                a.label,
                a.confidence
            );
        }
    }
    s
}

/// Run the sweep. Exit status reflects failed cells.
pub fn run(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let stores = load_stores(cfg)?;
    let names: Vec<String> = stores.iter().map(|s| s.model_name().to_string()).collect();
    let cells = cfg.experiment.cells(&names);
    if dry_run {
        println!("{} cells", cells.len());
        for c in &cells {
            println!("{c}");
        }
        return Ok(());
    }
    let corpus = load_corpus(cfg)?;
    let data: Vec<Dataset> = datasets(cfg, &corpus, &stores, &cfg.paths.embeddings)?
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    info!("running {} cells", cells.len());
    let report = run_experiment(&cfg.experiment, &data).map_err(|e| match e {
        EvalError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Io(other.to_string()),
    })?;

    let out = cfg.out_dir();
    write_file(&out.join(REPORT_JSON), &report.to_json())?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(&out.join("predictions.csv"), &predictions_csv(&report))?;
    write_file(&out.join("self_training_audit.csv"), &audit_csv(&report))?;
    write_file(&out.join("effective_config.toml"), &cfg.to_toml())?;
    println!("report digest {}", report.digest());

    let failed = report.failed_cells();
    if failed.is_empty() {
        println!("{} cells ok", report.cells.len());
        Ok(())
    } else {
        let lines: Vec<String> = failed
            .iter()
            .map(|c| format!("{}: {}", c.key, c.error.as_deref().unwrap_or("")))
            .collect();
        Err(CliError::Partial(format!(
            "{} of {} cells failed\n{}",
            failed.len(),
            report.cells.len(),
            lines.join("\n")
        )))
    }
}

/// Figure tables (and optionally SVG bars) from a saved report.
pub fn report(cfg: &RunConfig, input: Option<&Path>, opts: FigureOptions, dry_run: bool) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| out.join(REPORT_JSON));
    let report = ExperimentReport::from_json(&read_text(&input)?).map_err(|e| CliError::io(&input, e))?;
    let dir = out.join("figures");
    for (name, contents) in figure_files(&report, opts) {
        if dry_run {
            println!("dry run: would write {}", dir.join(name).display());
        } else {
            write_file(&dir.join(name), &contents)?;
        }
    }
    Ok(())
}
