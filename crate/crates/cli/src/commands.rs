use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sugar::analysis::{build_profile, export_grid, export_profile, loss_grid, sample_directions};
use sugar::gradcheck::{CheckOutcome, Suite};
use sugar::stats::Summary;
use sugar::toy::{Aggregate, OutcomeCategory, RunRecord, TaskId, ToyExperiment};
use sugar::train::evaluate;
use sugar::Method;

use crate::config::ExperimentConfig;
use crate::error::{io_err, CliError};

pub fn gradcheck(suite: &Suite, out: &mut dyn Write) -> Result<(), CliError> {
    let outcomes = suite.run();
    for o in &outcomes {
        writeln!(out, "{o}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    let failing: Vec<&CheckOutcome> = outcomes.iter().filter(|o| !o.passed).collect();
    if failing.is_empty() {
        writeln!(out, "{} checks passed", outcomes.len())
            .map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    } else {
        let names: Vec<&str> = failing.iter().map(|o| o.name.as_str()).collect();
        Err(CliError::Verification(format!(
            "{} of {} checks failed: {}",
            failing.len(),
            outcomes.len(),
            names.join(", ")
        )))
    }
}

pub fn runs_dir(out: &Path, task: TaskId, method: &Method) -> PathBuf {
    out.join("runs").join(task.to_string()).join(method.slug())
}

fn run_path(out: &Path, task: TaskId, method: &Method, seed: u64) -> PathBuf {
    runs_dir(out, task, method).join(format!("run_{seed}.jsonl"))
}

fn read_record(path: &Path) -> Result<RunRecord, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let line = text.lines().next().unwrap_or_default();
    RunRecord::from_line(line).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes to a sibling temp file first so an interrupted run never leaves a
/// truncated record behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Loads a finished run or trains it. Existing records from a different
/// configuration are refused rather than mixed in.
fn load_or_run(exp: &ToyExperiment, out: &Path, seed: u64) -> Result<(RunRecord, bool), CliError> {
    let path = run_path(out, exp.task, &exp.method, seed);
    if path.exists() {
        let record = read_record(&path)?;
        let hash = exp.config_hash();
        if record.config_hash != hash {
            return Err(CliError::Usage(format!(
                "{} was produced by a different configuration ({} vs {hash}); use another --out",
                path.display(),
                record.config_hash
            )));
        }
        return Ok((record, false));
    }
    let record = exp.run(seed)?;
    write_atomic(&path, &(record.to_line() + "\n"))?;
    Ok((record, true))
}

pub struct ToySummary {
    pub rows: Vec<(TaskId, Method, Aggregate)>,
    pub new_runs: usize,
    pub reused_runs: usize,
}

pub fn toy(config: &ExperimentConfig) -> Result<ToySummary, CliError> {
    let seeds = config.seeds();
    let mut rows = Vec::new();
    let (mut new_runs, mut reused_runs) = (0, 0);
    for &task in &config.tasks {
        for &method in &config.methods {
            let exp = config.experiment(task, method);
            let results = seeds
                .par_iter()
                .map(|&s| load_or_run(&exp, &config.out_dir, s))
                .collect::<Result<Vec<_>, _>>()?;
            new_runs += results.iter().filter(|r| r.1).count();
            reused_runs += results.iter().filter(|r| !r.1).count();
            let aggregate = Aggregate::from_records(results.iter().map(|r| &r.0));
            rows.push((task, method, aggregate));
        }
    }
    let mut csv = String::from(Aggregate::csv_header());
    csv.push('\n');
    for (task, method, agg) in &rows {
        csv.push_str(&agg.csv_row(*task, method));
        csv.push('\n');
    }
    write_atomic(&config.out_dir.join("aggregate.csv"), &csv)?;
    Ok(ToySummary {
        rows,
        new_runs,
        reused_runs,
    })
}

/// Trains every (task, method, seed) and writes activation profiles at the
/// configured epochs. Returns the written paths.
pub fn profile(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let epochs = config.profile_epochs();
    let mut jobs = Vec::new();
    for &task in &config.tasks {
        for &method in &config.methods {
            for seed in config.seeds() {
                jobs.push((task, method, seed));
            }
        }
    }
    let written = jobs
        .par_iter()
        .map(|&(task, method, seed)| {
            let exp = config.experiment(task, method);
            let data = exp.dataset(seed);
            let dir = config
                .out_dir
                .join("profiles")
                .join(task.to_string())
                .join(method.slug());
            let mut paths = Vec::new();
            let mut failure = None;
            exp.run_observed(seed, &mut |epoch, model| {
                if failure.is_some() || !epochs.contains(&epoch) {
                    return;
                }
                let path = dir.join(format!("seed_{seed}_epoch_{epoch}.csv"));
                match build_profile(model, &data, epoch).and_then(|p| export_profile(&p, &path)) {
                    Ok(()) => paths.push(path),
                    Err(e) => failure = Some(e),
                }
            })?;
            match failure {
                Some(e) => Err(CliError::from(e)),
                None => Ok(paths),
            }
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(written.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeEntry {
    pub task: TaskId,
    pub seed: u64,
    pub method: Method,
    pub path: PathBuf,
    pub final_loss: f64,
    pub center: f64,
    pub min: f64,
}

/// One grid per (task, seed, method); all methods for a seed share a
/// directory so paired grids sit side by side.
pub fn landscape(config: &ExperimentConfig) -> Result<Vec<LandscapeEntry>, CliError> {
    let range = (-config.analysis.range, config.analysis.range);
    let mut jobs = Vec::new();
    for &task in &config.tasks {
        for seed in config.seeds() {
            for &method in &config.methods {
                jobs.push((task, seed, method));
            }
        }
    }
    let entries = jobs
        .par_iter()
        .map(|&(task, seed, method)| {
            let exp = config.experiment(task, method);
            let (_, result) = exp.run_observed(seed, &mut |_, _| {})?;
            let data = exp.dataset(seed);
            let final_loss = evaluate(&result.model, &data)?.mean_loss;
            let (d1, d2) = sample_directions(&result.model, seed);
            let grid = loss_grid(
                &result.model,
                &data,
                &d1,
                &d2,
                range,
                config.analysis.resolution,
            )?;
            let path = config
                .out_dir
                .join("landscapes")
                .join(task.to_string())
                .join(format!("seed_{seed}"))
                .join(format!("{}.csv", method.slug()));
            export_grid(&grid, &path)?;
            Ok(LandscapeEntry {
                task,
                seed,
                method,
                path,
                final_loss,
                center: grid.center(),
                min: grid.min(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut index = String::from("task,seed,method,final_loss,center,min,file\n");
    for e in &entries {
        let rel = e.path.strip_prefix(&config.out_dir).unwrap_or(&e.path);
        index.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{}\n",
            e.task,
            e.seed,
            e.method,
            e.final_loss,
            e.center,
            e.min,
            rel.display()
        ));
    }
    write_atomic(&config.out_dir.join("landscapes").join("index.csv"), &index)?;
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: TaskId,
    pub method: Method,
    pub aggregate: Aggregate,
    /// Over runs that did not diverge, on the batch-sum scale.
    pub loss: Summary,
}

fn collect_records(dir: &Path, into: &mut Vec<RunRecord>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_records(&path, into)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            into.push(read_record(&path)?);
        }
    }
    Ok(())
}

pub fn load_records(out: &Path) -> Result<Vec<RunRecord>, CliError> {
    let runs = out.join("runs");
    let mut records = Vec::new();
    if runs.is_dir() {
        collect_records(&runs, &mut records)?;
    }
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "no run records under {}; run `sugar toy` first",
            out.display()
        )));
    }
    Ok(records)
}

pub fn summarize(records: &[RunRecord]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(TaskId, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.task, r.method.to_string()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let mut sorted = rs;
            sorted.sort_by_key(|r| r.seed);
            ReportRow {
                task: sorted[0].task,
                method: sorted[0].method,
                aggregate: Aggregate::from_records(sorted.iter().copied()),
                loss: sorted
                    .iter()
                    .filter_map(|r| r.final_batch_sum_loss)
                    .collect(),
            }
        })
        .collect()
}

fn pct(agg: &Aggregate, task: TaskId, c: OutcomeCategory) -> String {
    let used = task.categories().contains(&c)
        || matches!(c, OutcomeCategory::Diverged | OutcomeCategory::Unclassified);
    if used {
        format!("{:.1}", agg.percent(c))
    } else {
        "-".into()
    }
}

pub fn render_report(rows: &[ReportRow]) -> String {
    use OutcomeCategory::*;
    let mut md = String::from("# Toy sweep report\n\n");
    md.push_str(
        "Outcome percentages per task and method. Final losses are on the batch-sum scale ",
    );
    md.push_str("(64 x per-sample squared error) and exclude diverged runs.\n\n");
    md.push_str("| task | method | runs | A | B | C | D | Diverged | Unclassified | final loss mean ± std |\n");
    md.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---|\n");
    for r in rows {
        let loss = match (r.loss.mean(), r.loss.std()) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "n/a".into(),
        };
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {loss} |\n",
            r.task,
            r.method,
            r.aggregate.total(),
            pct(&r.aggregate, r.task, A),
            pct(&r.aggregate, r.task, B),
            pct(&r.aggregate, r.task, C),
            pct(&r.aggregate, r.task, D),
            pct(&r.aggregate, r.task, Diverged),
            pct(&r.aggregate, r.task, Unclassified),
        ));
    }
    let flagged: Vec<String> = rows
        .iter()
        .filter(|r| r.aggregate.count(Diverged) + r.aggregate.count(Unclassified) > 0)
        .map(|r| {
            format!(
                "- **{} {}**: {} diverged, {} unclassified of {} runs",
                r.task,
                r.method,
                r.aggregate.count(Diverged),
                r.aggregate.count(Unclassified),
                r.aggregate.total()
            )
        })
        .collect();
    md.push_str("\n## Runs outside the outcome bands\n\n");
    if flagged.is_empty() {
        md.push_str("None.\n");
    } else {
        md.push_str(&flagged.join("\n"));
        md.push('\n');
    }
    md
}

pub fn report(out: &Path) -> Result<String, CliError> {
    let md = render_report(&summarize(&load_records(out)?));
    write_atomic(&out.join("report.md"), &md)?;
    Ok(md)
}
