//! `run`, `sweep` and `verify`. Workers compute in parallel; all files are
//! written afterwards by one [`OutputWriter`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fdlab_core::flow::{fmt_f64, run_method, IntegratorConfig, Method, Trajectory};
use fdlab_core::harness::{
    lp_scaling_report, ood_ratio_report, run_suites, SweepRow, VerificationConfig,
};
use fdlab_core::problem::build_instance;
use fdlab_core::report::{summary_table, ResultId, TheoremReport};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::OutputWriter;
use crate::{CliError, ExitStatus};

pub const SWEEP_HEADER: &str = "sweep_value,seed,method,l_id,l_ood_min,l_ood_terminal";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    /// Overrides the configured output directory.
    pub out: Option<PathBuf>,
}

impl RunOptions {
    fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
    }
}

/// One trajectory of one instance.
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if jobs == Some(0) {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Builds `cfg.instances` instances and runs every configured method on each.
pub fn execute_runs(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, CliError> {
    let configs = cfg.instance.battery(cfg.master_seed, cfg.instances);
    let nested = configs
        .par_iter()
        .enumerate()
        .map(|(index, c)| {
            let inst = build_instance(c)?;
            cfg.methods
                .iter()
                .map(|&m| {
                    Ok(RunRecord {
                        index,
                        seed: c.seed,
                        trajectory: run_method(&inst, m, &cfg.integrator)?,
                    })
                })
                .collect::<fdlab_core::Result<Vec<_>>>()
        })
        .collect::<fdlab_core::Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn status_of(reports: &[TheoremReport]) -> ExitStatus {
    if reports.iter().all(|r| !r.is_assertable() || r.pass) {
        ExitStatus::Success
    } else {
        ExitStatus::CheckFailed
    }
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn loss_table(
    out: &mut String,
    title: &str,
    methods: &[Method],
    records: &[RunRecord],
    metric: impl Fn(&Trajectory) -> f64,
) {
    let n = records.iter().map(|r| r.index + 1).max().unwrap_or(0);
    let _ = writeln!(out, "## {title}\n");
    out.push_str("| method |");
    for i in 0..n {
        let _ = write!(out, " i{i:03} |");
    }
    out.push_str(" mean |\n|---|");
    out.push_str(&"---|".repeat(n + 1));
    out.push('\n');
    for &m in methods {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.trajectory.method == m)
            .map(|r| metric(&r.trajectory))
            .collect();
        let _ = write!(out, "| {m} |");
        for v in &vals {
            let _ = write!(out, " {} |", sci(*v));
        }
        let _ = writeln!(
            out,
            " {} |",
            sci(vals.iter().sum::<f64>() / vals.len() as f64)
        );
    }
    out.push('\n');
}

fn run_summary(cfg: &ExperimentConfig, records: &[RunRecord], reports: &[TheoremReport]) -> String {
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.to_string()).collect();
    let mut out = format!(
        "# fdlab run\n\nmaster_seed {}, {} instance(s), methods {}, d={} k={} m={} n={} eps={}\n\n",
        cfg.master_seed,
        cfg.instances,
        methods.join(", "),
        cfg.instance.d,
        cfg.instance.k,
        cfg.instance.m,
        cfg.instance.n,
        cfg.instance.eps
    );
    loss_table(&mut out, "ID loss (terminal)", &cfg.methods, records, |t| {
        t.terminal().metrics.l_id
    });
    loss_table(
        &mut out,
        "OOD loss (terminal)",
        &cfg.methods,
        records,
        |t| t.terminal().metrics.l_ood,
    );
    loss_table(
        &mut out,
        "OOD loss (minimum over t)",
        &cfg.methods,
        records,
        Trajectory::min_l_ood,
    );
    out.push_str("## Integration\n\n| instance | method | converged | stop | steps | t_end |\n|---|---|---|---|---|---|\n");
    for r in records {
        let t = &r.trajectory;
        let _ = writeln!(
            out,
            "| i{:03} | {} | {} | {:?} | {} | {} |",
            r.index,
            t.method,
            t.converged,
            t.stop_reason,
            t.steps,
            sci(t.terminal().state.t)
        );
    }
    if !reports.is_empty() {
        out.push_str("\n## Checks\n\n");
        out.push_str(&summary_table(reports));
    }
    out
}

fn write_run(
    w: &mut OutputWriter,
    prefix: &str,
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    reports: &[TheoremReport],
) -> Result<(), CliError> {
    for r in records {
        let mut buf = Vec::new();
        r.trajectory.write_csv(&mut buf)?;
        w.write(
            &format!(
                "{prefix}trajectories/i{:03}_{}.csv",
                r.index, r.trajectory.method
            ),
            &buf,
        )?;
    }
    write_reports(w, prefix, reports)?;
    w.write(
        &format!("{prefix}summary.md"),
        run_summary(cfg, records, reports).as_bytes(),
    )
}

fn write_reports(
    w: &mut OutputWriter,
    prefix: &str,
    reports: &[TheoremReport],
) -> Result<(), CliError> {
    for r in reports {
        w.write(
            &format!("{prefix}reports/{}.json", r.result_id),
            (r.to_json() + "\n").as_bytes(),
        )?;
    }
    Ok(())
}

/// `fdlab run`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExitStatus, CliError> {
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let (records, reports) = with_pool(opts.jobs, || -> Result<_, CliError> {
        let records = execute_runs(cfg)?;
        timings.insert("runs".to_string(), start.elapsed().as_secs_f64());
        let t = Instant::now();
        let reports = run_suites(&cfg.verify.suites, &cfg.verify, &cfg.integrator)?;
        timings.insert("verification".to_string(), t.elapsed().as_secs_f64());
        Ok((records, reports))
    })??;
    let config_text = cfg.to_toml();
    let mut w = OutputWriter::new(&opts.output_dir(cfg))?;
    w.write("config.toml", config_text.as_bytes())?;
    write_run(&mut w, "", cfg, &records, &reports)?;
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    w.finish(&config_text, timings)?;
    Ok(status_of(&reports))
}

/// Aggregate sweep table, one row per value, seed and method.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.sweep_value),
            r.seed,
            r.method,
            fmt_f64(r.l_id),
            fmt_f64(r.l_ood_min),
            fmt_f64(r.l_ood_terminal)
        );
    }
    out
}

/// Ratio and LP-scaling reports from an ε-sweep, when the rows allow them.
pub fn eps_sweep_reports(
    values: &[f64],
    rows: &[SweepRow],
) -> Result<(Vec<TheoremReport>, Vec<String>), CliError> {
    let has = |m: Method| rows.iter().any(|r| r.method == m);
    let mut reports = Vec::new();
    let mut notes = Vec::new();
    if has(Method::LinearProbing) && has(Method::FineTuning) {
        match ood_ratio_report(values, rows) {
            Ok(r) => reports.push(r),
            Err(e) => notes.push(format!("{}: not evaluated ({e})", ResultId::Thm2Ratio)),
        }
    }
    if has(Method::LinearProbing) {
        match lp_scaling_report(rows) {
            Ok(r) => reports.push(r),
            Err(e) => notes.push(format!("{}: not evaluated ({e})", ResultId::LemLpUpper)),
        }
    }
    Ok((reports, notes))
}

/// `fdlab sweep`.
pub fn sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExitStatus, CliError> {
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep requires a [sweep] block".into()))?;
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let mut per_value = Vec::new();
    with_pool(opts.jobs, || -> Result<(), CliError> {
        for (i, &value) in spec.values.iter().enumerate() {
            let t = Instant::now();
            let sub = cfg.with_parameter(&spec.parameter, value)?;
            let records = execute_runs(&sub)?;
            let reports = run_suites(&sub.verify.suites, &sub.verify, &sub.integrator)?;
            timings.insert(format!("value_{i:03}"), t.elapsed().as_secs_f64());
            per_value.push((value, sub, records, reports));
        }
        Ok(())
    })??;

    let rows: Vec<SweepRow> = per_value
        .iter()
        .flat_map(|(value, _, records, _)| {
            records
                .iter()
                .map(|r| SweepRow::from_trajectory(*value, r.seed, &r.trajectory))
        })
        .collect();
    let (aggregate, notes) = if spec.parameter == "instance.eps" {
        eps_sweep_reports(&spec.values, &rows)?
    } else {
        (Vec::new(), Vec::new())
    };

    let config_text = cfg.to_toml();
    let mut w = OutputWriter::new(&opts.output_dir(cfg))?;
    w.write("config.toml", config_text.as_bytes())?;
    let mut all_reports = aggregate.clone();
    let mut summary = format!(
        "# fdlab sweep\n\nparameter `{}`, {} value(s), {} instance(s) per value\n\n| index | value | directory |\n|---|---|---|\n",
        spec.parameter,
        spec.values.len(),
        cfg.instances
    );
    for (i, (value, sub, records, reports)) in per_value.iter().enumerate() {
        let dir = format!("sweep_{i:03}/");
        write_run(&mut w, &dir, sub, records, reports)?;
        let _ = writeln!(summary, "| {i} | {} | {dir} |", fmt_f64(*value));
        all_reports.extend(reports.iter().cloned());
    }
    w.write("sweep_summary.csv", sweep_csv(&rows).as_bytes())?;
    write_reports(&mut w, "", &aggregate)?;
    if !aggregate.is_empty() {
        summary.push_str("\n## Sweep checks\n\n");
        summary.push_str(&summary_table(&aggregate));
    }
    for n in &notes {
        let _ = writeln!(summary, "\n{n}");
    }
    w.write("summary.md", summary.as_bytes())?;
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    w.finish(&config_text, timings)?;
    Ok(status_of(&all_reports))
}

/// `fdlab verify`: runs suites with the given settings, prints a summary and
/// optionally writes the reports.
pub fn verify(
    ids: &[ResultId],
    vcfg: &VerificationConfig,
    integrator: &IntegratorConfig,
    out: Option<&Path>,
    jobs: Option<usize>,
) -> Result<(ExitStatus, Vec<TheoremReport>), CliError> {
    let start = Instant::now();
    let reports = with_pool(jobs, || run_suites(ids, vcfg, integrator))??;
    if let Some(dir) = out {
        let mut w = OutputWriter::new(dir)?;
        write_reports(&mut w, "", &reports)?;
        w.write("summary.md", summary_table(&reports).as_bytes())?;
        let settings =
            serde_json::to_string_pretty(&(vcfg, integrator)).expect("settings serialize");
        let mut timings = BTreeMap::new();
        timings.insert("total".to_string(), start.elapsed().as_secs_f64());
        w.finish(&settings, timings)?;
    }
    Ok((status_of(&reports), reports))
}
