//! Problem-directory layout: `problem.dmat` (observed), `truth_L.dmat`,
//! `truth_S.coo` (lines `i j value`, zero-based), `meta.toml`.

use std::fmt::Write as _;
use std::path::Path;

use dcf_pca::matrix::DenseMatrix;
use dcf_pca::problem::{generate, RpcaProblem};
use dcf_pca::{Error, Result};

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Meta {
    m: usize,
    n: usize,
    rank: usize,
    sparsity: f64,
    seed: u64,
}

pub fn save_problem(problem: &RpcaProblem, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    problem.observed.write_dmat(&dir.join("problem.dmat"))?;
    problem
        .truth_low_rank
        .write_dmat(&dir.join("truth_L.dmat"))?;

    let mut coo = String::new();
    for i in 0..problem.m {
        for j in 0..problem.n {
            let value = problem.truth_sparse[(i, j)];
            if value != 0.0 {
                let _ = writeln!(coo, "{i} {j} {value}");
            }
        }
    }
    let coo_path = dir.join("truth_S.coo");
    std::fs::write(&coo_path, coo).map_err(|e| io_err(&coo_path, e))?;

    let meta = Meta {
        m: problem.m,
        n: problem.n,
        rank: problem.true_rank,
        sparsity: problem.sparsity,
        seed: problem.seed,
    };
    let meta_path = dir.join("meta.toml");
    let text = toml::to_string(&meta).expect("meta serializes");
    std::fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;
    Ok(())
}

pub fn load_problem(dir: &Path) -> Result<RpcaProblem> {
    let meta_path = dir.join("meta.toml");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: Meta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;

    let low = DenseMatrix::read_dmat(&dir.join("truth_L.dmat"))?;
    let coo_path = dir.join("truth_S.coo");
    let coo_text = std::fs::read_to_string(&coo_path).map_err(|e| io_err(&coo_path, e))?;
    let mut sparse = DenseMatrix::zeros(meta.m, meta.n);
    for (lineno, line) in coo_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bad = || Error::Parse {
            path: coo_path.clone(),
            detail: format!("bad coordinate line {}: {line:?}", lineno + 1),
        };
        let i: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let j: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let value: f64 = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        if i >= meta.m || j >= meta.n {
            return Err(bad());
        }
        sparse[(i, j)] = value;
    }

    let mut problem =
        RpcaProblem::from_parts(meta.rank, meta.sparsity, meta.seed, low, sparse, None)?;

    let observed = DenseMatrix::read_dmat(&dir.join("problem.dmat"))?;
    if observed != problem.observed {
        return Err(Error::Parse {
            path: dir.join("problem.dmat"),
            detail: "observed matrix does not equal truth_L + truth_S".to_string(),
        });
    }

    // Problems written by `generate` can be re-derived from their seed;
    // recover the low-rank factors when the files match the regeneration.
    if let Ok(regen) = generate(meta.m, meta.n, meta.rank, meta.sparsity, meta.seed) {
        if regen.truth_low_rank == problem.truth_low_rank {
            problem.factors = regen.factors;
        }
    }
    Ok(problem)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
