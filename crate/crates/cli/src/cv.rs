//! K-fold cross-validation over a hyperparameter grid, scored by the
//! e-statistic of held-out PIT values.

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use vortes::data_io::{CsvFrame, SchemaHints};
use vortes::diagnostics::PitMode;
use vortes::{Hyperparams, Mode};

use crate::args::GridArgs;
use crate::pipeline::{evaluate, prepare, response_columns};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub nu: f64,
    pub q: f64,
    pub k: f64,
    pub lambda_c: f64,
}

impl GridCell {
    pub fn apply(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            nu: self.nu,
            q: self.q,
            k: self.k,
            lambda_c: self.lambda_c,
            ..base.clone()
        }
    }
}

fn parse_list(flag: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("{flag}: {s:?} is not a number"))
        })
        .collect()
}

/// Cartesian product in the order (nu, q) pairs, then k, then lambda_c.
pub fn grid(args: &GridArgs) -> Result<Vec<GridCell>> {
    let pairs: Vec<(f64, f64)> = args
        .grid_nu_q
        .split(',')
        .map(|pair| {
            let (nu, q) = pair
                .split_once(':')
                .with_context(|| format!("--grid-nu-q: {pair:?} is not nu:q"))?;
            Ok((
                nu.trim().parse().with_context(|| format!("--grid-nu-q: bad nu {nu:?}"))?,
                q.trim().parse().with_context(|| format!("--grid-nu-q: bad q {q:?}"))?,
            ))
        })
        .collect::<Result<_>>()?;
    let ks = parse_list("--grid-k", &args.grid_k)?;
    let lcs = parse_list("--grid-lambda-c", &args.grid_lambda_c)?;
    let mut out = Vec::new();
    for &(nu, q) in &pairs {
        for &k in &ks {
            for &lambda_c in &lcs {
                out.push(GridCell { nu, q, k, lambda_c });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CvScore {
    pub cell: usize,
    #[serde(flatten)]
    pub params: GridCell,
    /// Mean held-out e-statistic over folds.
    pub e_stat: f64,
    /// Mean held-out RMSE over folds.
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub scores: Vec<CvScore>,
    pub best: usize,
}

impl CvResult {
    pub fn best_score(&self) -> &CvScore {
        &self.scores[self.best]
    }
}

/// Fold labels for `n` rows: a seeded shuffle dealt round-robin.
pub fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        labels[i] = pos % folds;
    }
    labels
}

/// Lowest mean e-statistic; ties go to lower RMSE, then to grid order.
pub fn select_best(scores: &[CvScore]) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .e_stat
            .total_cmp(&scores[b].e_stat)
            .then(scores[a].rmse.total_cmp(&scores[b].rmse))
            .then(a.cmp(&b))
    });
    order[0]
}

/// Every (cell, fold) fit runs on the current rayon pool; fold `f` uses seed
/// `base.seed + f` for all cells so that cells are compared on equal terms.
pub fn cross_validate(
    frame: &CsvFrame,
    response: &str,
    hints: &SchemaHints,
    base: &Hyperparams,
    mode: Mode,
    cells: &[GridCell],
    folds: usize,
) -> Result<CvResult> {
    if cells.is_empty() {
        bail!("empty hyperparameter grid");
    }
    if folds < 2 {
        bail!("need at least 2 folds, got {folds}");
    }
    if frame.len() < 2 * folds {
        bail!(
            "insufficient rows for folding: {} rows for {} folds",
            frame.len(),
            folds
        );
    }
    let labels = fold_labels(frame.len(), folds, base.seed);
    let splits: Vec<(CsvFrame, CsvFrame)> = (0..folds)
        .map(|f| {
            let (tr, te): (Vec<usize>, Vec<usize>) =
                (0..frame.len()).partition(|&i| labels[i] != f);
            (frame.select_rows(&tr), frame.select_rows(&te))
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(c, f)| -> Result<(f64, f64)> {
            let (train, test) = &splits[f];
            let mut hyper = cells[c].apply(base);
            hyper.seed = base.seed.wrapping_add(f as u64);
            let prepared = prepare(train, Some(test), response, hints)?;
            let trace = crate::pipeline::fit(&prepared, &hyper, mode)?;
            let (y, _) = response_columns(test, response)?;
            let (eval, _) = evaluate(&trace, &y, None, PitMode::default(), hyper.seed)?;
            Ok((eval.e_stat, eval.rmse))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<CvScore> = cells
        .iter()
        .enumerate()
        .map(|(c, &params)| {
            let per_fold = &results[c * folds..(c + 1) * folds];
            CvScore {
                cell: c,
                params,
                e_stat: per_fold.iter().map(|r| r.0).sum::<f64>() / folds as f64,
                rmse: per_fold.iter().map(|r| r.1).sum::<f64>() / folds as f64,
            }
        })
        .collect();
    let best = select_best(&scores);
    Ok(CvResult { scores, best })
}

pub fn write_scores(path: &std::path::Path, result: &CvResult) -> Result<()> {
    let mut out = String::from("cell,nu,q,k,lambda_c,e_stat,rmse,selected\n");
    for s in &result.scores {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.cell,
            s.params.nu,
            s.params.q,
            s.params.k,
            s.params.lambda_c,
            s.e_stat,
            s.rmse,
            u8::from(s.cell == result.best)
        ));
    }
    crate::write_atomic(path, out.as_bytes())
}
