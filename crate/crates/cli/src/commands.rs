use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use nnrnn_core::analysis::{
    connectivity_report, run_comparison, write_histogram_csv, write_profile_csv, ConnectivityReport,
};
use nnrnn_core::memory::{fisher_memory_curve, prop1_sweep, transient_ensemble, SeriesStats};
use nnrnn_core::optim::{train_loop, write_log_csv};
use nnrnn_core::propcheck::{
    iterate_growth_probe, labeled_growth_suite, verify_prop2, GrowthClass, GrowthLabel,
};
use nnrnn_core::rnn::{CellKind, ModelCheckpoint, RnnModel};
use nnrnn_core::schur::{init_params, InitScheme, SchurCheckpoint, SchurParams};
use nnrnn_core::tasks::{
    copy_baseline_loss, nats_to_bpc, BatchSource, CharLmSpec, CharLmStream, CopyTask, CopyTaskSpec,
    COPY_INPUT_DIM, COPY_OUTPUT_DIM,
};
use nnrnn_core::Error;

use crate::config::{
    load, resolve_relative, FmcSweepConfig, PropsConfig, TaskConfig, TrainRunConfig,
    TransientsConfig,
};
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn config_error(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn write_connectivity(out: &Path, report: &ConnectivityReport) -> Result<(), CliError> {
    write_json(&out.join("connectivity.json"), report)?;
    let mut w = create(&out.join("subdiag_profile.csv"))?;
    write_profile_csv(report, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("theta_histogram.csv"))?;
    write_histogram_csv(&report.theta_histogram, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("gamma_histogram.csv"))?;
    write_histogram_csv(&report.gamma_histogram, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    cell: CellKind,
    hidden_size: usize,
    updates: usize,
    stopped_early: bool,
    final_task_loss: Option<f64>,
    /// Copy task only.
    baseline_loss: Option<f64>,
    /// Character task only.
    final_bpc: Option<f64>,
    failure: Option<String>,
}

pub fn train(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: TrainRunConfig = load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate().map_err(config_error)?;
    let seed = cfg.train.seed;
    let n = cfg.model.hidden_size;

    let (mut source, d_in, d_out, task_scheme, baseline): (Box<dyn BatchSource>, _, _, _, _) =
        match &cfg.task {
            TaskConfig::Copy { delay } => {
                let spec = CopyTaskSpec {
                    delay: *delay,
                    batch_size: cfg.train.batch_size,
                    seed,
                };
                let task = CopyTask::new(spec).map_err(config_error)?;
                (
                    Box::new(task),
                    COPY_INPUT_DIM,
                    COPY_OUTPUT_DIM,
                    InitScheme::Henaff,
                    Some(copy_baseline_loss(*delay)),
                )
            }
            TaskConfig::CharLm { corpus, window } => {
                let spec = CharLmSpec {
                    window: *window,
                    batch_size: cfg.train.batch_size,
                };
                let stream = CharLmStream::from_path(&resolve_relative(config_path, corpus), spec)
                    .map_err(config_error)?;
                let v = stream.vocabulary().len();
                (Box::new(stream), v, v, InitScheme::Cayley, None)
            }
        };

    let scheme = cfg.model.init.unwrap_or(task_scheme);
    let mut model = match cfg.model.cell {
        CellKind::NnRnn => {
            let schur = init_params(n, scheme, seed).map_err(config_error)?;
            RnnModel::nnrnn(schur, d_in, d_out, seed)
        }
        CellKind::VanillaRnn => {
            if n == 0 {
                return Err(CliError::Config("hidden_size must be >= 1".into()));
            }
            RnnModel::vanilla(n, d_in, d_out, seed)
        }
    };
    if let Some(a) = cfg.model.activation {
        model.activation = a;
    }

    fs::create_dir_all(out)?;
    let log = train_loop(&mut model, source.as_mut(), &cfg.train)?;

    let mut w = create(&out.join("train_log.csv"))?;
    write_log_csv(&log.records, &mut w)?;
    w.flush()?;
    let ck_scheme = matches!(cfg.model.cell, CellKind::NnRnn).then_some(scheme);
    write_json(
        &out.join("checkpoint.json"),
        &model.to_checkpoint(ck_scheme, Some(seed)),
    )?;
    if let Some(p) = model.schur() {
        match connectivity_report(p) {
            Ok(rep) => write_connectivity(out, &rep)?,
            // After a numerical failure the parameters may be unusable; the
            // failure itself is what gets reported.
            Err(e) if log.failure.is_some() => eprintln!("connectivity report skipped: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    let final_task_loss = log.task_losses.last().copied();
    let is_char = matches!(cfg.task, TaskConfig::CharLm { .. });
    let summary = TrainSummary {
        cell: model.cell_kind(),
        hidden_size: n,
        updates: log.updates,
        stopped_early: log.stopped_early,
        final_task_loss,
        baseline_loss: baseline,
        final_bpc: final_task_loss.filter(|_| is_char).map(nats_to_bpc),
        failure: log.failure.as_ref().map(ToString::to_string),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "train: {} updates, final task loss {}",
        log.updates,
        final_task_loss.map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    match log.failure {
        Some(e) => Err(CliError::Numerical(e.to_string())),
        None => Ok(()),
    }
}

pub fn fmc(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg: FmcSweepConfig = load(config_path)?;
    for (i, c) in cfg.configs.iter().enumerate() {
        c.validate()
            .map_err(|e| CliError::Config(format!("configs[{i}]: {e}")))?;
    }
    fs::create_dir_all(out)?;
    let mut summary = create(&out.join("fmc_summary.csv"))?;
    writeln!(summary, "index,n,d,alpha,beta,j_tot,terms,truncated,status")?;
    let mut failed = Vec::new();
    for (i, c) in cfg.configs.iter().enumerate() {
        let prefix = format!("{i},{},{},{},{}", c.n, c.d, c.alpha, c.beta);
        match fisher_memory_curve(c) {
            Ok(r) => {
                let mut w = create(&out.join(format!("fmc_{i:03}.csv")))?;
                writeln!(w, "k,j")?;
                for (k, j) in r.j_curve.iter().enumerate() {
                    writeln!(w, "{k},{j}")?;
                }
                w.flush()?;
                writeln!(
                    summary,
                    "{prefix},{},{},{},ok",
                    r.j_tot, r.truncation_terms, r.truncated
                )?;
                println!("fmc[{i}]: J_tot = {:.6}", r.j_tot);
            }
            Err(e) if e.is_numerical() => {
                writeln!(summary, "{prefix},,,,diverged")?;
                println!("fmc[{i}]: {e}");
                failed.push(i);
            }
            Err(e) => return Err(e.into()),
        }
    }
    summary.flush()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "series did not converge for configs {failed:?}"
        )))
    }
}

fn write_series(path: &Path, s: &SeriesStats) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "t,value,std")?;
    for (t, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
        writeln!(w, "{t},{m},{sd}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn transients(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg: TransientsConfig = load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    if cfg.n_samples == 0 {
        return Err(CliError::Config("n_samples must be >= 1".into()));
    }
    for (i, c) in cfg.configs.iter().enumerate() {
        c.validate()
            .map_err(|e| CliError::Config(format!("configs[{i}]: {e}")))?;
    }
    fs::create_dir_all(out)?;
    let mut summary = create(&out.join("transients_summary.csv"))?;
    writeln!(summary, "index,n,d,alpha,beta,peak_mean_norm")?;
    for (i, c) in cfg.configs.iter().enumerate() {
        let stats = transient_ensemble(c, cfg.n_samples, cfg.t_max, seed)?;
        write_series(&out.join(format!("transient_{i:03}_norm.csv")), &stats.norm)?;
        write_series(
            &out.join(format!("transient_{i:03}_unit_std.csv")),
            &stats.unit_std,
        )?;
        let peak = if cfg.t_max >= 1 {
            stats.peak_mean_norm()
        } else {
            1.0
        };
        writeln!(summary, "{i},{},{},{},{},{peak}", c.n, c.d, c.alpha, c.beta)?;
        println!("transients[{i}]: peak mean norm {peak:.6}");
    }
    summary.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GrowthRow {
    name: String,
    label: GrowthLabel,
    class: GrowthClass,
    loglog_slope: f64,
    passed: bool,
}

pub fn props(config_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: PropsConfig = match config_path {
        Some(p) => load(p)?,
        None => PropsConfig::default(),
    };
    if let Some(s) = seed {
        cfg.prop1.seed = s;
        cfg.growth.seed = s;
    }
    if cfg.prop2.n_max < 2 || cfg.prop2.n_max > 8 || cfg.prop2.t_max == 0 || cfg.prop2.t_max > 30 {
        return Err(CliError::Config(
            "prop2 grid must satisfy 2 <= n_max <= 8 and 1 <= t_max <= 30".into(),
        ));
    }
    fs::create_dir_all(out)?;
    let mut table: Vec<(String, bool)> = Vec::new();

    let mut prop2 = Vec::new();
    for n in 2..=cfg.prop2.n_max {
        let rep = verify_prop2(n, cfg.prop2.t_max)?;
        table.push((
            format!("prop2 n={n} t<={}", cfg.prop2.t_max),
            rep.checks.all(),
        ));
        prop2.push(rep);
    }
    write_json(&out.join("prop2_report.json"), &prop2)?;

    let sweep = prop1_sweep(
        cfg.prop1.samples,
        cfg.prop1.n_max,
        &cfg.prop1.alphas,
        cfg.prop1.seed,
    )
    .map_err(|e| match e {
        Error::InvalidParameter(m) => CliError::Config(m),
        other => other.into(),
    })?;
    table.push((
        format!("prop1 {} samples n<={}", sweep.samples, sweep.n_max),
        sweep.violations.is_empty(),
    ));
    write_json(&out.join("prop1_report.json"), &sweep)?;

    let mut growth = Vec::new();
    for case in labeled_growth_suite(cfg.growth.seed)? {
        let probe = iterate_growth_probe(&case.m, cfg.growth.t_max)?;
        growth.push(GrowthRow {
            passed: case.label.accepts(probe.class, case.m.rows()),
            name: case.name,
            label: case.label,
            class: probe.class,
            loglog_slope: probe.loglog_slope,
        });
    }
    let misses = growth.iter().filter(|g| !g.passed).count();
    table.push((
        format!("growth suite ({} cases)", growth.len()),
        misses == 0,
    ));
    write_json(&out.join("growth_report.json"), &growth)?;

    let width = table.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (name, ok) in &table {
        println!("{name:<width$}  {}", if *ok { "pass" } else { "FAIL" });
    }
    if table.iter().all(|(_, ok)| *ok) {
        Ok(())
    } else {
        Err(CliError::Numerical(
            "one or more proposition checks failed".into(),
        ))
    }
}

fn load_schur(path: &Path) -> Result<SchurParams, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
    if value.get("cell").is_some() {
        let ck: ModelCheckpoint = serde_json::from_value(value).map_err(bad)?;
        let model = RnnModel::from_checkpoint(&ck).map_err(config_error)?;
        model
            .schur()
            .cloned()
            .ok_or_else(|| CliError::Config("connectivity reports need an nnrnn checkpoint".into()))
    } else {
        let ck: SchurCheckpoint = serde_json::from_value(value).map_err(bad)?;
        SchurParams::from_checkpoint(&ck).map_err(config_error)
    }
}

pub fn report(checkpoint: &Path, compare: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let params = load_schur(checkpoint)?;
    let rep = connectivity_report(&params)?;
    fs::create_dir_all(out)?;
    write_connectivity(out, &rep)?;
    println!(
        "report: n={}, mean gamma {:.6}, ||T||_F {:.6}, regime {:?}",
        rep.n,
        rep.mean_gamma,
        rep.t_frobenius,
        rep.regime()
    );
    if let Some(other) = compare {
        let other = connectivity_report(&load_schur(other)?)?;
        let diff = run_comparison(&rep, &other).map_err(config_error)?;
        write_json(&out.join("comparison.json"), &diff)?;
        println!(
            "compare: regimes {:?} -> {:?}",
            diff.regime_a, diff.regime_b
        );
    }
    Ok(())
}
