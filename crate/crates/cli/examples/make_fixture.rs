//! Write a small synthetic input set plus a quick-running config.
//!
//! `cargo run -p antigenic-cli --example make_fixture -- demo`

use std::fs;
use std::path::PathBuf;

use antigenic_core::corpus::write_fasta;
use antigenic_core::synthetic::raw_fixture;

const CONFIG: &str = r#"[paths]
sequences = "strains.fasta"
titres = "titres.csv"
embeddings = ["protvec.emb", "toy.emb"]
out = "out"

[experiment]
seed = 7
bootstrap_resamples = 200

[experiment.grids.rf]
n_estimators = [10, 20]
max_depth = ["None", 5]

[experiment.grids.svm]
c = [1.0, 10.0]
gamma = [0.01, 0.1]

[experiment.grids.label_spreading]
alpha = [0.1, 0.2]
n_neighbors = [3, 5]
max_iter = [20]
tol = 0.001

[experiment.grids.self_training]
threshold = [0.8, 0.95]
criterion = ["threshold", "k_best"]
k_best = [5]
max_iter = [5]
"#;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    fs::create_dir_all(&dir)?;
    let fx = raw_fixture(16, 2, 11);
    fs::write(dir.join("strains.fasta"), write_fasta(&fx.strains))?;
    fs::write(dir.join("titres.csv"), &fx.titres_csv)?;
    fs::write(dir.join("protvec.emb"), fx.embeddings[0].to_binary())?;
    fs::write(dir.join("toy.emb"), fx.embeddings[1].to_text())?;
    fs::write(dir.join("config.toml"), CONFIG)?;
    println!("wrote fixture to {}", dir.display());
    Ok(())
}
