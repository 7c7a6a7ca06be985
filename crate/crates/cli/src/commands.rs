use crate::config::FitConfig;
use crate::error::{CliError, Result};
use crate::evaluation::evaluate_fit;
use crate::io::{self, read_dataset, read_truth, write_dataset, write_json, write_table, write_truth};
use crate::manifest::{ManifestBuilder, RunManifest};
use crate::output::{chain_dir, chain_dirs, read_chain, write_chain};
use rayon::prelude::*;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use zinmf_core::conformance::distribution_checks;
use zinmf_core::gibbs::oracle::{check_all_kernels, getting_it_right};
use zinmf_core::gibbs::SamplerError;
use zinmf_core::model::validate_dataset;
use zinmf_core::simulate::{generate, ClusteringBase, Scenario};
use zinmf_core::{run_chain, ChainOutput, SweepDiagnostics};

pub fn parse_scenario(name: &str) -> Result<Scenario> {
    match name {
        "1" => Ok(Scenario::One),
        "2" => Ok(Scenario::Two),
        "3" => Ok(Scenario::Three),
        "clustering" | "clustering1" => Ok(Scenario::Clustering(ClusteringBase::Scenario1)),
        "clustering2" => Ok(Scenario::Clustering(ClusteringBase::Scenario2)),
        other => Err(CliError::Usage(format!(
            "unknown scenario `{other}`; expected one of 1, 2, 3, clustering, clustering2"
        ))),
    }
}

pub fn cmd_simulate(scenario: &str, seed: u64, scale: f64, out: &Path) -> Result<RunManifest> {
    let parsed = parse_scenario(scenario)?;
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(CliError::Usage(format!("--scale must lie in (0, 1], got {scale}")));
    }
    let manifest = ManifestBuilder::start("simulate", json!({"scenario": scenario, "seed": seed, "scale": scale}));
    let (data, truth) = generate(parsed, seed, scale)?;
    let mut outputs = write_dataset(out, &data)?;
    outputs.extend(write_truth(&out.join("truth"), &data, &truth)?);
    manifest.finish(out, &[], &outputs)
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct FitOverrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub prune: bool,
}

pub fn resolve_config(config_file: Option<&Path>, overrides: &FitOverrides) -> Result<FitConfig> {
    let mut config = match config_file {
        Some(path) => FitConfig::load(path)?,
        None => FitConfig::default(),
    };
    let run = &mut config.run;
    run.seed = overrides.seed.unwrap_or(run.seed);
    run.iterations = overrides.iterations.unwrap_or(run.iterations);
    run.burn_in = overrides.burn_in.unwrap_or(run.burn_in);
    run.thin = overrides.thin.unwrap_or(run.thin);
    run.chains = overrides.chains.unwrap_or(run.chains);
    run.prune |= overrides.prune;
    config.validate()?;
    Ok(config)
}

/// Runs every chain of `config` on a pool of `threads` workers; results are
/// independent of the pool size.
pub fn run_chains(
    data: &zinmf_core::CountDataset,
    config: &FitConfig,
    threads: usize,
) -> Result<Vec<(ChainOutput, Vec<SweepDiagnostics>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| {
        (0..config.run.chains as u64)
            .into_par_iter()
            .map(|c| {
                let mut trace = Vec::with_capacity(config.run.iterations);
                let mut sink = |d: &SweepDiagnostics| trace.push(d.clone());
                let chain = run_chain(data, &config.hyper, &config.run_config(c), Some(&mut sink))?;
                Ok((chain, trace))
            })
            .collect()
    })
}

pub fn cmd_fit(
    data_dir: &Path,
    config_file: Option<&Path>,
    out: &Path,
    overrides: &FitOverrides,
    threads: usize,
    warn: &mut dyn Write,
) -> Result<RunManifest> {
    let config = resolve_config(config_file, overrides)?;
    let manifest = ManifestBuilder::start("fit", config.to_value());
    let (data, mut inputs, warnings) = read_dataset(data_dir)?;
    for w in warnings {
        let _ = writeln!(warn, "warning: {w}");
    }
    let violations = validate_dataset(&data);
    if !violations.is_empty() {
        return Err(CliError::InvalidDataset(violations));
    }
    if let Some(path) = config_file {
        inputs.push(path.to_owned());
    }

    let chains = run_chains(&data, &config, threads)?;
    io::create_dir(out)?;
    let mut outputs = Vec::new();
    let path = out.join("config.json");
    write_json(&path, &config.to_value())?;
    outputs.push(path);
    for (c, (chain, trace)) in chains.iter().enumerate() {
        outputs.extend(write_chain(&chain_dir(out, c as u64), &data, chain, trace)?);
    }
    manifest.finish(out, &inputs, &outputs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn cmd_evaluate(fit_dir: &Path, truth_dir: &Path, out: &Path, baseline_dir: Option<&Path>) -> Result<RunManifest> {
    let manifest = ManifestBuilder::start(
        "evaluate",
        json!({
            "fit": fit_dir.display().to_string(),
            "truth": truth_dir.display().to_string(),
            "baseline": baseline_dir.map(|p| p.display().to_string()),
        }),
    );
    let truth = read_truth(truth_dir)?;
    let baseline = match baseline_dir {
        Some(dir) => Some(read_chain(&chain_dirs(dir)?[0].1)?),
        None => None,
    };
    let mut metric_rows = Vec::new();
    let mut match_rows = Vec::new();
    let studies = truth.sharing.ncols();
    for (c, dir) in chain_dirs(fit_dir)? {
        let fit = read_chain(&dir)?;
        let ev = evaluate_fit(&fit, &truth, baseline.as_ref())?;
        let mut row = |metric: &str, pattern: Option<usize>, value: String| {
            metric_rows.push(vec![
                c.to_string(),
                metric.to_owned(),
                pattern.map_or_else(String::new, |k| (k + 1).to_string()),
                value,
            ]);
        };
        for (t, cos) in ev.cosines.iter().enumerate() {
            row("cosine", Some(t), cos.to_string());
        }
        row("median_cosine", None, ev.median_cosine().to_string());
        row("score_error", None, fmt_opt(ev.score_error));
        row("reconstruction_error", None, ev.reconstruction_error.to_string());
        row("pattern_count", None, ev.pattern_count.to_string());
        for (t, a) in &ev.ari {
            row("ari", Some(*t), a.to_string());
        }
        for (t, a) in &ev.baseline_ari {
            row("baseline_ari", Some(*t), a.to_string());
        }
        for t in 0..truth.w_true.ncols() {
            let e = ev.matching.estimated_for(t);
            let mut r = vec![
                c.to_string(),
                (t + 1).to_string(),
                e.map_or_else(String::new, |e| (e + 1).to_string()),
                fmt_opt(ev.matching.similarity_for(t)),
            ];
            let prevalence = ev.matched_prevalence[t].clone();
            r.extend((0..studies).map(|s| fmt_opt(prevalence.as_ref().and_then(|p| p.get(s).copied()))));
            match_rows.push(r);
        }
    }
    io::create_dir(out)?;
    let metrics = out.join("metrics.csv");
    let header: Vec<String> = ["chain", "metric", "pattern", "value"].map(String::from).to_vec();
    write_table(&metrics, &header, metric_rows)?;
    let matches = out.join("pattern_matches.csv");
    let mut header: Vec<String> = ["chain", "true_pattern", "estimated_pattern", "cosine"].map(String::from).to_vec();
    header.extend((1..=studies).map(|s| format!("prevalence_study_{s}")));
    write_table(&matches, &header, match_rows)?;
    let mut inputs: Vec<PathBuf> = Vec::new();
    for (_, dir) in chain_dirs(fit_dir)? {
        inputs.push(dir.join("w_median.csv"));
    }
    inputs.push(truth_dir.join("w_true.csv"));
    manifest.finish(out, &inputs, &[metrics, matches])
}

/// Sampling-primitive checks, the conditional oracle on every kernel, then
/// the joint-distribution test. Prints one line per check; returns whether
/// all passed.
pub fn cmd_selfcheck(pairs: usize, rounds: usize, seed: u64, out: &mut dyn Write) -> Result<bool> {
    let mut all = true;
    for check in distribution_checks(seed).map_err(SamplerError::from)? {
        all &= check.passed;
        let _ = writeln!(
            out,
            "{} distribution {} {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    for report in check_all_kernels(pairs, seed)? {
        all &= report.passed;
        let _ = writeln!(
            out,
            "{} conditional oracle {:<20} pairs={} max_rel_err={:.3e}",
            if report.passed { "PASS" } else { "FAIL" },
            format!("{:?}", report.block),
            report.pairs,
            report.max_error
        );
    }
    let gir = getting_it_right(rounds, 50, 4.0, seed)?;
    all &= gir.passed;
    let worst = gir.worst().map_or_else(String::new, |w| format!(" worst={} |z|={:.2}", w.name, w.z.abs()));
    let _ = writeln!(
        out,
        "{} joint-distribution test rounds={} moments={}{}",
        if gir.passed { "PASS" } else { "FAIL" },
        gir.rounds,
        gir.comparisons.len(),
        worst
    );
    Ok(all)
}
