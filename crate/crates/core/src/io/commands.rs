use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{load_dataset, CommandError, RunConfig};
use crate::data::{ObservedDataset, SpatialRef};
use crate::harness::{
    derive_seed, loo_mspe, run_study, spec_key, LooOptions, MspeReport, Scoreboard,
};
use crate::mcmc::{
    chain_sidecar, posterior_summary, run_chain, write_chain_csv, write_summary_csv, ChainOutput,
    McmcError, SummaryRow,
};
use crate::models::{ModelContext, ModelSpec, ProcessPrior};
use crate::spatial::{has_intercept_column, moran_basis, verify_theorem1_with, QPolicy};

const FIT_TAG: u64 = 0x0066_6974;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CommandError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CommandError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CommandError::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_csv(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>,
) -> Result<(), CommandError> {
    let mut buf = Vec::new();
    f(&mut buf)
        .map_err(|e| CommandError::Config(format!("cannot format {}: {e}", path.display())))?;
    write_bytes(path, &buf)
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CommandError> {
    write_csv(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Loads the dataset and rejects a Moran-ICAR roster without an intercept.
fn prepare(cfg: &RunConfig) -> Result<ObservedDataset<f64>, CommandError> {
    cfg.validate()?;
    let data = load_dataset(cfg.require_dataset()?)?;
    if uses_moran(&cfg.models) && !has_intercept_column(&data.x) {
        return Err(CommandError::Config(
            "Moran-ICAR models need an intercept column in the design".into(),
        ));
    }
    Ok(data)
}

fn echo(cfg: &RunConfig) -> Result<(), CommandError> {
    write_json(&cfg.out_dir().join("config.json"), cfg)
}

/// Aligned text table of posterior summaries.
pub fn format_summary(model: &str, rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(9);
    let mut s = format!("model {model}\n");
    let _ = writeln!(
        s,
        "{:<width$} {:>12} {:>12} {:>12} {:>12}",
        "parameter", "mean", "median", "2.5%", "97.5%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
            r.name, r.mean, r.median, r.lower, r.upper
        );
    }
    s
}

fn fit_one(
    cfg: &RunConfig,
    spec: &ModelSpec,
    data: &ObservedDataset<f64>,
) -> Result<ChainOutput, CommandError> {
    let ctx = ModelContext::full(spec, data, cfg.el)?;
    let sampler = crate::mcmc::SamplerConfig {
        seed: derive_seed(cfg.seed, &[FIT_TAG, spec_key(spec)]),
        ..cfg.sampler.clone()
    };
    Ok(run_chain(&ctx, &sampler)?)
}

fn write_chain(
    dir: &Path,
    chain: &ChainOutput,
    sidecar: serde_json::Value,
) -> Result<(), CommandError> {
    write_csv(&dir.join("chain.csv"), |b| write_chain_csv(chain, b))?;
    write_json(&dir.join("chain.json"), &chain_sidecar(chain, sidecar))
}

/// Fits every model in the roster to the dataset. Writes, per model, the
/// chain, a sidecar with acceptance statistics, the posterior summary and
/// per-location fitted values; returns the summary tables.
pub fn cmd_fit(cfg: &RunConfig) -> Result<String, CommandError> {
    let data = prepare(cfg)?;
    let roster = cfg.require_models()?;
    let out = cfg.out_dir();
    echo(cfg)?;
    let results: Vec<Result<ChainOutput, CommandError>> = roster
        .par_iter()
        .map(|spec| fit_one(cfg, spec, &data))
        .collect();

    let mut tables = String::new();
    let mut first_error = None;
    for (spec, result) in roster.iter().zip(results) {
        let dir = out.join(&spec.name);
        let sidecar = serde_json::json!({
            "model": spec,
            "seed": derive_seed(cfg.seed, &[FIT_TAG, spec_key(spec)]),
        });
        let chain = match result {
            Ok(chain) => chain,
            Err(CommandError::Mcmc(McmcError::ChainDiverged { iteration, partial })) => {
                write_chain(&dir, &partial, sidecar)?;
                first_error.get_or_insert(CommandError::Numerical(format!(
                    "model {:?}: chain diverged at iteration {iteration}; partial chain written",
                    spec.name
                )));
                continue;
            }
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        write_chain(&dir, &chain, sidecar)?;
        let rows = posterior_summary(&chain, false)?;
        write_csv(&dir.join("summary.csv"), |b| write_summary_csv(&rows, b))?;
        let mean = chain.theta_mean();
        let median = chain.theta_median();
        write_rows(
            &dir.join("theta.csv"),
            &["id", "z", "theta_mean", "theta_median"],
            (0..data.n()).map(|i| {
                vec![
                    data.ids[i].clone(),
                    data.z[i].to_string(),
                    mean[i].to_string(),
                    median[i].to_string(),
                ]
            }),
        )?;
        tables.push_str(&format_summary(&spec.name, &rows));
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(tables),
    }
}

fn write_loo_csv(
    path: &Path,
    report: &MspeReport,
    ids: Option<&[String]>,
) -> Result<(), CommandError> {
    write_rows(
        path,
        &["location", "id", "observed", "predicted", "squared_error"],
        (0..report.locations.len()).map(|k| {
            let loc = report.locations[k];
            vec![
                loc.to_string(),
                ids.map_or_else(|| loc.to_string(), |ids| ids[loc].clone()),
                report.observed[k].to_string(),
                report.predicted[k].to_string(),
                report.squared_errors[k].to_string(),
            ]
        }),
    )
}

fn failed_folds(reports: &[MspeReport]) -> usize {
    reports.iter().map(|r| r.failed.len()).sum()
}

/// Leave-one-out MSPE for the roster on the configured dataset.
pub fn cmd_loo(cfg: &RunConfig) -> Result<Scoreboard, CommandError> {
    let data = prepare(cfg)?;
    let roster = cfg.require_models()?;
    let out = cfg.out_dir();
    echo(cfg)?;
    let opts = LooOptions {
        sampler: cfg.sampler.clone(),
        el: cfg.el,
        master_seed: cfg.seed,
        prediction: cfg.prediction,
        folds: cfg.folds.clone(),
    };
    let reports = loo_mspe(roster, &data, &opts, 0)?;
    write_json(&out.join("mspe_report.json"), &reports)?;
    for r in &reports {
        write_loo_csv(
            &out.join(format!("loo_{}.csv", r.model)),
            r,
            Some(&data.ids),
        )?;
    }
    let echo = serde_json::to_value(cfg).expect("configs serialize");
    let board = Scoreboard::from_reports(echo, roster, vec![reports]);
    write_json(&out.join("scoreboard.json"), &board)?;
    match failed_folds(&board.reports[0]) {
        0 => Ok(board),
        k => Err(CommandError::Numerical(format!(
            "{k} folds failed; see mspe_report.json"
        ))),
    }
}

/// Runs a simulation study: replicate generation, leave-one-out for the
/// roster, and the cross-replicate scoreboard.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Scoreboard, CommandError> {
    cfg.validate()?;
    let plan = cfg.to_plan()?;
    let out = cfg.out_dir();
    echo(cfg)?;
    let board = run_study(&plan)?;
    write_json(&out.join("scoreboard.json"), &board)?;
    let rows = board.reports.iter().flat_map(|reps| {
        reps.iter().flat_map(|r| {
            (0..r.locations.len()).map(move |k| {
                vec![
                    r.replicate.to_string(),
                    r.model.clone(),
                    r.locations[k].to_string(),
                    r.observed[k].to_string(),
                    r.predicted[k].to_string(),
                    r.squared_errors[k].to_string(),
                ]
            })
        })
    });
    write_rows(
        &out.join("deviations.csv"),
        &[
            "replicate",
            "model",
            "location",
            "observed",
            "predicted",
            "squared_error",
        ],
        rows,
    )?;
    let failed: usize = board.reports.iter().map(|r| failed_folds(r)).sum();
    match failed {
        0 => Ok(board),
        k => Err(CommandError::Numerical(format!(
            "{k} folds failed; see scoreboard.json"
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
struct BasisReport {
    n: usize,
    q: usize,
    policy: QPolicy,
    min_eig: f64,
    pd: bool,
}

/// Moran basis, retained eigenvalues and the positive-definiteness report
/// for the dataset's lattice.
pub fn cmd_basis(cfg: &RunConfig) -> Result<String, CommandError> {
    let data = prepare(cfg)?;
    let SpatialRef::Lattice(graph) = &data.spatial else {
        return Err(CommandError::Data("basis needs an edge list".into()));
    };
    let policy = cfg
        .basis
        .or_else(|| cfg.models.first().map(|m| m.basis))
        .unwrap_or_default();
    echo(cfg)?;
    let basis = moran_basis(graph, &data.x, policy)?;
    let report = verify_theorem1_with(graph, &data.x, policy)?;
    let out = cfg.out_dir();
    let mut header = vec!["id".to_string()];
    header.extend((1..=basis.q()).map(|k| format!("m{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &out.join("moran_basis.csv"),
        &header_refs,
        (0..data.n()).map(|i| {
            let mut row = vec![data.ids[i].clone()];
            row.extend(basis.moran.row(i).iter().map(|v| v.to_string()));
            row
        }),
    )?;
    write_rows(
        &out.join("eigenvalues.csv"),
        &["index", "eigenvalue"],
        basis
            .eigvals
            .iter()
            .enumerate()
            .map(|(k, v)| vec![(k + 1).to_string(), v.to_string()]),
    )?;
    let summary = BasisReport {
        n: data.n(),
        q: report.q,
        policy,
        min_eig: report.min_eig,
        pd: report.pd,
    };
    write_json(&out.join("theorem1.json"), &summary)?;
    Ok(format!(
        "n = {}, q = {}, min eigenvalue of M'QM = {:.6e}, positive definite: {}\n",
        summary.n, summary.q, summary.min_eig, summary.pd
    ))
}

/// True when some model in the roster uses the Moran-ICAR process.
pub fn uses_moran(models: &[ModelSpec]) -> bool {
    models
        .iter()
        .any(|m| matches!(m.process, ProcessPrior::MoranIcar { .. }))
}
