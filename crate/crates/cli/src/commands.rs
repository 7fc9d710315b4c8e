use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mvop_core::da::{run_da, write_trace, DaConfig, PosteriorDraws};
use mvop_core::diagnostics::{ppc as run_ppc, Statistic};
use mvop_core::io::{
    read_dataset, read_manifest, read_stack, sha256_hex, stack_file_name, write_stack, StackFile, StackManifest,
    MANIFEST,
};
use mvop_core::mcem::{fit_mcem, McemConfig};
use mvop_core::model::{IdentificationMode, MvopParams, OrdinalDataset};
use mvop_core::nested::{
    equate as run_equate, functional_change_estimates, pool as pool_stack, translate_mvop, translate_regression,
    Engine, EquatingProblem, NestedStack, PooledEstimate, StackEntry, TranslateConfig,
};
use mvop_core::rng::derive_seed;
use mvop_core::simlab::{run_replications, SimGrid, StudyPopulation};
use mvop_core::{MvopError, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{RunRecorder, RUN_MANIFEST};
use crate::{EngineArg, EquateArgs, FitArgs, ModeArg, PoolArgs, PpcArgs, SimulateArgs, TranslateArgs, TranslateModel};

fn mode_of(m: Option<ModeArg>) -> IdentificationMode {
    match m {
        Some(ModeArg::Correlation) => IdentificationMode::Correlation,
        _ => IdentificationMode::Threshold,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Header and one row of flattened parameters.
fn param_columns(data: &OrdinalDataset, p: &MvopParams) -> (Vec<String>, Vec<f64>) {
    let items = data.item_names();
    let covs = data.covariate_names();
    let (mut names, mut values) = (Vec::new(), Vec::new());
    for (a, item) in items.iter().enumerate() {
        for (c, cov) in covs.iter().enumerate() {
            names.push(format!("beta[{item},{cov}]"));
            values.push(p.beta()[(a, c)]);
        }
    }
    for a in 0..items.len() {
        for b in a..items.len() {
            names.push(format!("sigma[{},{}]", items[a], items[b]));
            values.push(p.sigma()[(a, b)]);
        }
    }
    for (a, item) in items.iter().enumerate() {
        for (l, g) in p.gamma()[a].iter().enumerate() {
            names.push(format!("gamma[{item},{}]", l + 1));
            values.push(*g);
        }
    }
    (names, values)
}

fn write_draws_csv(path: &Path, data: &OrdinalDataset, rows: &[(usize, usize, &MvopParams)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let (names, _) = param_columns(data, rows[0].2);
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(names);
    w.write_record(&header)?;
    for &(chain, it, p) in rows {
        let (_, vals) = param_columns(data, p);
        let mut rec = vec![chain.to_string(), it.to_string()];
        rec.extend(vals.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Componentwise posterior mean; the constraints of every mode are
/// preserved under averaging.
fn posterior_mean(chains: &[PosteriorDraws]) -> Result<MvopParams> {
    let all: Vec<&MvopParams> = chains.iter().flat_map(|c| &c.params).collect();
    let first = all
        .first()
        .ok_or_else(|| MvopError::estimation("no retained posterior draws"))?;
    let n = all.len() as f64;
    let mut beta = DMatrix::zeros(first.beta().nrows(), first.beta().ncols());
    let mut sigma = DMatrix::zeros(first.sigma().nrows(), first.sigma().ncols());
    let mut gamma: Vec<Vec<f64>> = first.gamma().iter().map(|g| vec![0.0; g.len()]).collect();
    for p in &all {
        beta += p.beta() / n;
        sigma += p.sigma() / n;
        for (acc, g) in gamma.iter_mut().zip(p.gamma()) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v / n;
            }
        }
    }
    MvopParams::new(first.mode(), gamma, beta, sigma)
}

fn out_dir(p: &Path) -> Result<PathBuf> {
    fs::create_dir_all(p)?;
    Ok(p.to_path_buf())
}

fn inputs_with_sidecar(path: &Path, schema: Option<&Path>) -> Vec<PathBuf> {
    let mut v = vec![path.to_path_buf()];
    let side = schema
        .map(Path::to_path_buf)
        .unwrap_or_else(|| mvop_core::io::schema_path_for(path));
    if side.exists() {
        v.push(side);
    }
    v
}

#[derive(Serialize)]
struct FitRun<'a> {
    engine: &'static str,
    da: Option<&'a DaConfig>,
    mcem: Option<&'a McemConfig>,
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(0);
    let mode = mode_of(a.mode);
    let dir = out_dir(&a.common.out)?;
    let data = read_dataset(&a.data, a.schema.as_deref())?;
    let inputs = inputs_with_sidecar(&a.data, a.schema.as_deref());
    let mut outputs = Vec::new();
    let params_json = dir.join("params.json");
    let params_csv = dir.join("params.csv");
    let recorder;
    match a.engine {
        EngineArg::Da => {
            let da = DaConfig { mode, seed, ..cfg.da };
            recorder = RunRecorder::start(
                "fit",
                &FitRun {
                    engine: "da",
                    da: Some(&da),
                    mcem: None,
                },
                seed,
                &inputs,
            )?;
            let chains = run_da(&data, &da)?;
            let rows: Vec<(usize, usize, &MvopParams)> = chains
                .iter()
                .flat_map(|c| c.iterations.iter().zip(&c.params).map(move |(&it, p)| (c.chain, it, p)))
                .collect();
            if rows.is_empty() {
                return Err(MvopError::validation(
                    "no retained draws; increase iterations or reduce thin",
                ));
            }
            write_draws_csv(&params_csv, &data, &rows)?;
            let mean = posterior_mean(&chains)?;
            fs::write(
                &params_json,
                mvop_core::io::params_to_json(&mean, data.item_names(), data.covariate_names())?,
            )?;
            if chains.len() > 1 {
                let rhat = mvop_core::da::gelman_rubin_params(&data, &chains)?;
                let path = dir.join("rhat.csv");
                write_csv(&path, &rhat)?;
                outputs.push(path);
            }
            if a.trace {
                let path = dir.join("trace.bin");
                let mut f = fs::File::create(&path)?;
                write_trace(&mut f, data.n_units(), &chains)?;
                outputs.push(path);
            }
        }
        EngineArg::Mcem => {
            let mc = McemConfig { mode, seed, ..cfg.mcem };
            recorder = RunRecorder::start(
                "fit",
                &FitRun {
                    engine: "mcem",
                    da: None,
                    mcem: Some(&mc),
                },
                seed,
                &inputs,
            )?;
            let fit = fit_mcem(&data, &mc)?;
            write_draws_csv(&params_csv, &data, &[(0, fit.iterations, &fit.params)])?;
            fs::write(
                &params_json,
                mvop_core::io::params_to_json(&fit.params, data.item_names(), data.covariate_names())?,
            )?;
            let path = dir.join("loglik.csv");
            let rows: Vec<(usize, f64, f64)> = fit
                .loglik_trace
                .iter()
                .zip(&fit.loglik_se)
                .enumerate()
                .map(|(i, (l, s))| (i + 1, *l, *s))
                .collect();
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["iteration", "loglik", "se"])?;
            for (i, l, s) in rows {
                w.write_record([i.to_string(), l.to_string(), s.to_string()])?;
            }
            w.flush()?;
            outputs.push(path);
            if !fit.converged {
                log::warn!(
                    "MCEM stopped after {} iterations without meeting the tolerance",
                    fit.iterations
                );
            }
        }
    }
    outputs.insert(0, params_json);
    outputs.insert(0, params_csv);
    recorder.finish(&dir.join(RUN_MANIFEST), &outputs)?;
    info!("fit written to {}", dir.display());
    Ok(())
}

fn stack_outputs(dir: &Path, m: &StackManifest) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = m.entries.iter().map(|e| dir.join(&e.file)).collect();
    v.push(dir.join(MANIFEST));
    v
}

fn stack_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let m = read_manifest(dir)?;
    Ok(stack_outputs(dir, &m))
}

pub fn equate(a: &EquateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(0);
    let mode = mode_of(a.mode);
    let engine = match a.engine {
        EngineArg::Da => Engine::Da(DaConfig { mode, seed, ..cfg.da }),
        EngineArg::Mcem => Engine::Mcem(McemConfig { mode, seed, ..cfg.mcem }),
    };
    let mut inputs = inputs_with_sidecar(&a.anchor, None);
    inputs.extend(inputs_with_sidecar(&a.target, None));
    let recorder = RunRecorder::start("equate", &(&engine, a.k), seed, &inputs)?;
    let problem = EquatingProblem::new(read_dataset(&a.anchor, None)?, read_dataset(&a.target, None)?)?;
    let completed = run_equate(&problem, &engine, a.k)?;
    let stack = NestedStack {
        k: completed.len(),
        l: 1,
        entries: completed
            .into_iter()
            .enumerate()
            .map(|(k, data)| StackEntry {
                k,
                l: 0,
                seed: derive_seed(seed, &[k as u64]),
                data,
            })
            .collect(),
    };
    let dir = out_dir(&a.common.out)?;
    let name = match a.engine {
        EngineArg::Da => "da",
        EngineArg::Mcem => "mcem",
    };
    let manifest = write_stack(&dir, &stack, seed, name, recorder.config_hash())?;
    let outputs = stack_outputs(&dir, &manifest);
    recorder.finish(&dir.join(RUN_MANIFEST), &outputs)?;
    Ok(())
}

fn item_indices(data: &OrdinalDataset, names: &[String]) -> Result<Vec<usize>> {
    if names.is_empty() {
        return Ok((0..data.n_items()).collect());
    }
    names
        .iter()
        .map(|n| {
            data.item_index(n)
                .ok_or_else(|| MvopError::validation(format!("unknown item {n}")))
        })
        .collect()
}

fn write_totals_stack(dir: &Path, stack: &NestedStack<Vec<f64>>, seed: u64, hash: &str) -> Result<StackManifest> {
    let mut entries = Vec::new();
    for e in &stack.entries {
        let file = stack_file_name(e.k, e.l);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["total"])?;
        for v in &e.data {
            w.write_record([v.to_string()])?;
        }
        let buf = w.into_inner().map_err(|e| MvopError::Io(e.into_error()))?;
        fs::write(dir.join(&file), &buf)?;
        entries.push(StackFile {
            k: e.k,
            l: e.l,
            seed: e.seed,
            file,
            sha256: sha256_hex(&buf),
        });
    }
    let m = StackManifest {
        root_seed: seed,
        k: stack.k,
        l: stack.l,
        engine: "regression".into(),
        config_hash: hash.into(),
        entries,
    };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

fn read_totals_stack(dir: &Path) -> Result<NestedStack<Vec<f64>>> {
    let m = read_manifest(dir)?;
    if m.entries.len() != m.k * m.l {
        return Err(MvopError::validation(format!(
            "manifest lists {} files for K = {}, L = {}",
            m.entries.len(),
            m.k,
            m.l
        )));
    }
    let mut entries = Vec::new();
    for f in &m.entries {
        let bytes = fs::read(dir.join(&f.file))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(MvopError::validation(format!("digest mismatch for {}", f.file)));
        }
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let data = r
            .records()
            .map(|rec| {
                let rec = rec?;
                rec.get(0)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|_| MvopError::validation(format!("bad total in {}", f.file)))
            })
            .collect::<Result<Vec<f64>>>()?;
        entries.push(StackEntry {
            k: f.k,
            l: f.l,
            seed: f.seed,
            data,
        });
    }
    Ok(NestedStack {
        k: m.k,
        l: m.l,
        entries,
    })
}

pub fn translate(a: &TranslateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(0);
    let mut inputs = stack_inputs(&a.stage1)?;
    inputs.extend(inputs_with_sidecar(&a.other, None));
    inputs.extend(inputs_with_sidecar(&a.later, None));
    let tcfg = TranslateConfig {
        da: DaConfig { seed, ..cfg.da },
        impute_sweeps: cfg.translate.impute_sweeps,
        sampler: cfg.translate.sampler,
        seed,
    };
    let model = match a.model {
        TranslateModel::Mvop => "mvop",
        TranslateModel::Regression => "regression",
    };
    let recorder = RunRecorder::start("translate", &(model, &tcfg, a.l), seed, &inputs)?;
    let (stage1, m1) = read_stack(&a.stage1)?;
    if m1.l != 1 {
        return Err(MvopError::validation("the Stage-1 stack must have L = 1"));
    }
    let other = read_dataset(&a.other, None)?;
    let later = read_dataset(&a.later, None)?;
    let dir = out_dir(&a.common.out)?;
    let manifest = match a.model {
        TranslateModel::Mvop => {
            let joints: Vec<OrdinalDataset> = stage1
                .entries
                .iter()
                .map(|e| e.data.hstack(&other))
                .collect::<Result<_>>()?;
            let stack = translate_mvop(&joints, &later, a.l, &tcfg)?;
            write_stack(&dir, &stack, seed, model, recorder.config_hash())?
        }
        TranslateModel::Regression => {
            let first = &stage1.entries[0].data;
            let all_first: Vec<usize> = (0..first.n_items()).collect();
            let s1: Vec<Vec<f64>> = stage1
                .entries
                .iter()
                .map(|e| e.data.totals(&all_first))
                .collect::<Result<_>>()?;
            let other_items: Vec<usize> = (0..other.n_items()).collect();
            let s2_adm = other.totals(&other_items)?;
            let later_other = item_indices(&later, other.item_names())?;
            let s2_later = later.totals(&later_other)?;
            let stack = translate_regression(&s1, &s2_adm, &s2_later, a.l, seed)?;
            write_totals_stack(&dir, &stack, seed, recorder.config_hash())?
        }
    };
    let outputs = stack_outputs(&dir, &manifest);
    recorder.finish(&dir.join(RUN_MANIFEST), &outputs)?;
    Ok(())
}

#[derive(Serialize)]
struct PooledRow {
    estimand: String,
    estimate: f64,
    se: f64,
    df: f64,
    ci_lo: f64,
    ci_hi: f64,
    k: usize,
    l: usize,
    ubar: f64,
    mb: f64,
    mw: f64,
}

impl PooledRow {
    fn new(estimand: &str, p: &PooledEstimate) -> Self {
        PooledRow {
            estimand: estimand.into(),
            estimate: p.qbar,
            se: p.se(),
            df: p.df,
            ci_lo: p.ci.0,
            ci_hi: p.ci.1,
            k: p.k,
            l: p.l,
            ubar: p.ubar,
            mb: p.mb,
            mw: p.mw,
        }
    }
}

fn group_labels(data: &OrdinalDataset, name: &str) -> Result<Vec<bool>> {
    let c = data
        .covariate_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| MvopError::validation(format!("unknown group covariate {name}")))?;
    (0..data.n_units())
        .map(|i| match data.covariates()[(i, c)] {
            v if v == 1.0 => Ok(true),
            v if v == 0.0 => Ok(false),
            v => Err(MvopError::validation(format!(
                "group covariate {name} must be 0/1, found {v}"
            ))),
        })
        .collect()
}

pub fn pool(a: &PoolArgs) -> Result<()> {
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let manifest_path = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    let mut inputs = stack_inputs(&a.stack)?;
    let (recorder, rows) = if a.change {
        let adm_dir = a.admission.as_ref().expect("clap requires admission with change");
        let group = a.group.as_ref().expect("clap requires group with change");
        inputs.extend(stack_inputs(adm_dir)?);
        let recorder = RunRecorder::start("pool", &("change", &a.items, a.alpha, group), 0, &inputs)?;
        (recorder, pool_change(a, adm_dir, group)?)
    } else {
        let recorder = RunRecorder::start("pool", &("mean-total", &a.items, a.alpha), 0, &inputs)?;
        (recorder, pool_mean_total(a)?)
    };
    write_csv(&a.out, &rows)?;
    recorder.finish(&manifest_path, std::slice::from_ref(&a.out))?;
    Ok(())
}

fn mean_with_variance(t: &[f64]) -> (f64, f64) {
    (
        mvop_core::stats::mean(t),
        mvop_core::stats::sample_variance(t) / t.len() as f64,
    )
}

fn pool_mean_total(a: &PoolArgs) -> Result<Vec<PooledRow>> {
    // Regression stacks already hold per-unit totals; `--items` does not apply.
    let est = if read_manifest(&a.stack)?.engine == "regression" {
        pool_stack(&read_totals_stack(&a.stack)?, |t| Ok(mean_with_variance(t)), a.alpha)?
    } else {
        let (stack, _) = read_stack(&a.stack)?;
        let idx = item_indices(&stack.entries[0].data, &a.items)?;
        pool_stack(&stack, |d| Ok(mean_with_variance(&d.totals(&idx)?)), a.alpha)?
    };
    Ok(vec![PooledRow::new("mean_total", &est)])
}

fn pool_change(a: &PoolArgs, adm_dir: &Path, group_name: &str) -> Result<Vec<PooledRow>> {
    let (adm, adm_m) = read_stack(adm_dir)?;
    let later_m = read_manifest(&a.stack)?;
    if adm_m.k != later_m.k {
        return Err(MvopError::validation(format!(
            "nest count mismatch: admission K = {}, later K = {}",
            adm_m.k, later_m.k
        )));
    }
    let first = &adm.entries[0].data;
    let idx = item_indices(first, &a.items)?;
    let names: Vec<String> = idx.iter().map(|&j| first.item_names()[j].clone()).collect();
    let admission: Vec<Vec<f64>> = adm.entries.iter().map(|e| e.data.totals(&idx)).collect::<Result<_>>()?;
    let group = group_labels(first, group_name)?;
    let later: NestedStack<Vec<f64>> = if later_m.engine == "regression" {
        read_totals_stack(&a.stack)?
    } else {
        let (s, _) = read_stack(&a.stack)?;
        let lidx = item_indices(&s.entries[0].data, &names)?;
        s.map(|d| d.totals(&lidx)).entries.into_iter().try_fold(
            NestedStack {
                k: s.k,
                l: s.l,
                entries: Vec::new(),
            },
            |mut acc, e| {
                acc.entries.push(StackEntry {
                    k: e.k,
                    l: e.l,
                    seed: e.seed,
                    data: e.data?,
                });
                Ok::<_, MvopError>(acc)
            },
        )?
    };
    let (d, p) = functional_change_estimates(&admission, &later, &group, a.alpha)?;
    Ok(vec![
        PooledRow::new("d_difference", &d),
        PooledRow::new("p_difference", &p),
    ])
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let mut grid = match &a.grid {
        Some(p) => {
            inputs.push(p.clone());
            let text = fs::read_to_string(p)?;
            toml::from_str::<SimGrid>(&text).map_err(|e| MvopError::validation(format!("{}: {e}", p.display())))?
        }
        None if a.full => SimGrid::full(),
        None => SimGrid::desk(),
    };
    if let Some(r) = a.replicates {
        grid.replicates = r;
    }
    if let Some(s) = a.seed {
        grid.seed = s;
    }
    grid.validate()?;
    let recorder = RunRecorder::start("simulate", &grid, grid.seed, &inputs)?;
    let dir = out_dir(&a.out)?;
    let study = StudyPopulation::new(&grid.population)?;
    let report = run_replications(&grid, &study)?;
    let (q1, q2, fail) = (dir.join("q1.csv"), dir.join("q2.csv"), dir.join("failures.csv"));
    report.write_q1_csv(fs::File::create(&q1)?)?;
    report.write_q2_csv(fs::File::create(&q2)?)?;
    let mut w = csv::Writer::from_path(&fail)?;
    w.write_record(["configuration", "method", "replicate", "error"])?;
    for f in &report.failures {
        w.write_record([
            f.configuration.clone(),
            f.method.clone(),
            f.replicate.to_string(),
            f.error.clone(),
        ])?;
    }
    w.flush()?;
    for row in report.rows.iter().filter(|r| r.coverage_flag) {
        log::warn!(
            "{} {}: coverage {:.3} is significantly below nominal",
            row.configuration,
            row.method,
            row.coverage
        );
    }
    recorder.finish(&dir.join(RUN_MANIFEST), &[q1, q2, fail])?;
    Ok(())
}

pub fn ppc(a: &PpcArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(0);
    let data = read_dataset(&a.data, a.schema.as_deref())?;
    let mut da = DaConfig {
        mode: mode_of(a.mode),
        seed,
        imputations: a.draws,
        chains: 1,
        ..cfg.da
    };
    if da.iterations < da.burn_in() + a.draws {
        return Err(MvopError::validation(format!(
            "{} post-burn-in iterations cannot supply {} draws",
            da.iterations.saturating_sub(da.burn_in()),
            a.draws
        )));
    }
    da.thin = da.thin.max(1);
    let inputs = inputs_with_sidecar(&a.data, a.schema.as_deref());
    let recorder = RunRecorder::start("ppc", &da, seed, &inputs)?;
    let draws = run_da(&data, &da)?.swap_remove(0);
    let stats = [Statistic::T1, Statistic::T2, Statistic::T3];
    let report = run_ppc(&data, &draws, &stats, derive_seed(seed, &[7]))?;
    let dir = out_dir(&a.common.out)?;
    let csv_path = dir.join("ppc.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    let summary_path = dir.join("summary.json");
    let summaries: Vec<_> = stats.iter().filter_map(|&s| report.summary(s)).collect();
    write_json(&summary_path, &summaries)?;
    let mut outputs = vec![csv_path, summary_path];
    if a.dump_pairs {
        let p = dir.join("pairs.csv");
        report.write_pairs_csv(fs::File::create(&p)?)?;
        outputs.push(p);
    }
    recorder.finish(&dir.join(RUN_MANIFEST), &outputs)?;
    Ok(())
}
