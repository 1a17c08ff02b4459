use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use annealflow::anneal::{AnnealConfig, Annealer};
use annealflow::evidence::{
    evidence_is, evidence_ti, ti_ladder_from_checkpoints, EvidenceEstimate, Proposal, TiLadder, WeightedSampleSet,
};
use annealflow::mcmc::{chain_columns, chain_rows, diagnostics_table, run_annealed_ensemble_with, McmcConfig};
use annealflow::table::{Table, TableWriter};
use annealflow::target::ode::Tsit5;
use annealflow::target::{generate_data, Dataset};
use annealflow::{Executor, FlowModel, SampleMatrix};

use crate::config::{simulate_params, RunConfig};
use crate::Validation;

pub const MANIFEST: &str = "manifest.toml";
pub const SCHEDULE: &str = "schedule.csv";
pub const ARCHIVE: &str = "archive.csv";
pub const SAMPLES: &str = "samples.csv";
pub const FINAL_MODEL: &str = "final_model.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CHAINS: &str = "chains.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const LADDER: &str = "ladder.csv";
pub const EVIDENCE_REPORT: &str = "evidence.json";
pub const TI_TABLE: &str = "ti_integrand.csv";

fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

fn write_manifest(dir: &Path, cfg: &RunConfig, run: toml::Table, stages: Vec<toml::Table>) -> anyhow::Result<()> {
    let mut m = cfg.clone();
    m.run = Some(run);
    m.stage = if stages.is_empty() { None } else { Some(stages) };
    let text = toml::to_string(&m).context("serializing the manifest")?;
    fs::write(dir.join(MANIFEST), text).context("writing the manifest")?;
    Ok(())
}

fn run_table(command: &str, status: &str) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("version".into(), version().into());
    t.insert("status".into(), status.into());
    t
}

fn executor(cfg: &RunConfig) -> Executor {
    Executor::new(cfg.workers)
}

fn noiseless_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.noiseless.csv"))
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let (r, theta) = simulate_params(cfg)?;
    let s = &r.simulate;
    let times = Dataset::grid(s.t0, s.t_end, s.dt);
    let data = generate_data(&theta, s.sigma2, &times, s.seed, &Tsit5::new(r.rtol, r.atol))
        .context("simulating the repressilator at the configured parameters")?;
    if let Some(parent) = r.dataset.parent() {
        fs::create_dir_all(parent)?;
    }
    data.dataset.save(&r.dataset)?;
    let mut noiseless = Table::new(["time", "noiseless"]);
    for (t, v) in times.iter().zip(&data.noiseless) {
        noiseless.push(vec![*t, *v]);
    }
    noiseless.write(noiseless_path(&r.dataset))?;
    fs::create_dir_all(&cfg.output.dir)?;
    let mut run = run_table("simulate", "complete");
    run.insert("rows".into(), (times.len() as i64).into());
    write_manifest(&cfg.output.dir, cfg, run, Vec::new())?;
    println!("wrote {} rows to {}", times.len(), r.dataset.display());
    Ok(())
}

fn nf_config(cfg: &RunConfig) -> anyhow::Result<AnnealConfig> {
    cfg.nf
        .clone()
        .ok_or_else(|| Validation("nf-run requires an [nf] section".into()).into())
}

fn checkpoint_file(i: usize) -> String {
    format!("{CHECKPOINT_DIR}/stage_{i:04}.json")
}

fn samples_table(samples: &SampleMatrix, lq: &[f64], lp: &[f64], ll: &[f64]) -> Table {
    let mut cols: Vec<String> = (0..samples.dim()).map(|i| format!("x{i}")).collect();
    cols.extend(["log_q", "log_prior", "log_lik"].map(String::from));
    let mut t = Table::new(cols);
    for (i, row) in samples.iter().enumerate() {
        let mut r = row.to_vec();
        r.extend([lq[i], lp[i], ll[i]]);
        t.push(r);
    }
    t
}

pub fn nf_run(cfg: &RunConfig) -> anyhow::Result<()> {
    let nf = nf_config(cfg)?;
    let built = cfg.build_target()?;
    let target = built.target.as_ref();
    let exec = executor(cfg);
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;

    let mut annealer = Annealer::new(target, nf.clone(), exec.clone())?;
    let outcome = annealer.run();

    let mut schedule = Table::new(["batch", "beta", "n_eff", "ema", "evaluations", "loss", "skipped_steps"]);
    for h in annealer.history() {
        schedule.push(vec![
            h.batch as f64,
            h.beta,
            h.n_eff,
            h.ema,
            h.evaluations as f64,
            h.loss,
            h.skipped_steps as f64,
        ]);
    }
    schedule.write(dir.join(SCHEDULE))?;
    if !annealer.archive().is_empty() {
        annealer.archive().to_table().write(dir.join(ARCHIVE))?;
    }
    let mut stages = Vec::new();
    for (i, c) in annealer.checkpoints().iter().enumerate() {
        let file = checkpoint_file(i);
        c.model.save(dir.join(&file))?;
        let mut s = toml::Table::new();
        s.insert("beta".into(), c.beta.into());
        s.insert("batch".into(), (c.batch as i64).into());
        s.insert("n_eff".into(), c.n_eff.into());
        s.insert("ema".into(), c.ema.into());
        s.insert("evaluations".into(), (c.evaluations as i64).into());
        s.insert("checkpoint".into(), file.into());
        stages.push(s);
    }
    annealer.model().save(dir.join(FINAL_MODEL))?;

    let status = if outcome.is_ok() { "complete" } else { "failed" };
    let mut run = run_table("nf-run", status);
    run.insert("batches".into(), (annealer.history().len() as i64).into());
    run.insert("evaluations".into(), (annealer.evaluations() as i64).into());
    run.insert("final_beta".into(), annealer.beta().into());
    if let Err(e) = &outcome {
        run.insert("error".into(), e.to_string().into());
    }
    if outcome.is_ok() {
        let mut rng = ChaCha8Rng::seed_from_u64(nf.seed.wrapping_add(1));
        let (samples, lq) = annealer.model().sample(nf.batch_size, &mut rng, &exec)?;
        let comps = exec.map_range(samples.rows(), |i| target.components(samples.row(i)));
        let lp: Vec<f64> = comps.iter().map(|c| c.log_prior).collect();
        let ll: Vec<f64> = comps.iter().map(|c| c.log_lik).collect();
        samples_table(&samples, &lq, &lp, &ll).write(dir.join(SAMPLES))?;
    }
    write_manifest(dir, cfg, run, stages)?;
    outcome?;
    println!(
        "annealing reached beta = 1 after {} batches ({} likelihood evaluations)",
        annealer.history().len(),
        annealer.evaluations()
    );
    Ok(())
}

fn mcmc_config(cfg: &RunConfig) -> anyhow::Result<McmcConfig> {
    cfg.mcmc
        .clone()
        .ok_or_else(|| Validation("mcmc-run requires an [mcmc] section".into()).into())
}

pub fn mcmc_run(cfg: &RunConfig) -> anyhow::Result<()> {
    let mc = mcmc_config(cfg)?;
    let built = cfg.build_target()?;
    let target = built.target.as_ref();
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    let mut chains = TableWriter::create(dir.join(CHAINS), &chain_columns(target.dim()))?;
    let run = run_annealed_ensemble_with(target, mc, |rec, samples| {
        for row in chain_rows(samples) {
            chains.write_row(&row)?;
        }
        eprintln!(
            "stage {:>5} beta {:.6e} acceptance {:.3} <log L> {:.4e}",
            rec.stage, rec.beta, rec.acceptance, rec.mean_log_lik
        );
        Ok(())
    })?;
    chains.finish()?;
    diagnostics_table(&run.stages).write(dir.join(DIAGNOSTICS))?;
    run.ladder.to_table(f64::NEG_INFINITY).write(dir.join(LADDER))?;
    let stages = run
        .stages
        .iter()
        .map(|s| {
            let mut t = toml::Table::new();
            t.insert("stage".into(), (s.stage as i64).into());
            t.insert("beta".into(), s.beta.into());
            t.insert("acceptance".into(), s.acceptance.into());
            t.insert("mean_log_lik".into(), s.mean_log_lik.into());
            t
        })
        .collect();
    let mut summary = run_table("mcmc-run", "complete");
    summary.insert("stages".into(), (run.stages.len() as i64).into());
    if let Some(last) = run.stages.last() {
        summary.insert("final_acceptance".into(), last.acceptance.into());
    }
    write_manifest(dir, cfg, summary, stages)?;
    println!("completed {} stages", run.stages.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Is,
    Ti,
    Both,
}

#[derive(Serialize)]
struct EvidenceReport {
    run: PathBuf,
    command: String,
    analytic_log_evidence: Option<f64>,
    estimates: Vec<EvidenceEstimate>,
}

fn require(path: PathBuf) -> anyhow::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        bail!(Validation(format!("required file {} is missing", path.display())))
    }
}

fn manifest_command(cfg: &RunConfig) -> anyhow::Result<String> {
    cfg.run
        .as_ref()
        .and_then(|r| r.get("command"))
        .and_then(|c| c.as_str())
        .map(String::from)
        .ok_or_else(|| Validation("manifest has no [run] command".into()).into())
}

fn nf_checkpoints(dir: &Path, cfg: &RunConfig) -> anyhow::Result<Vec<annealflow::anneal::Checkpoint>> {
    let stages = cfg.stage.as_deref().unwrap_or(&[]);
    let mut out = Vec::with_capacity(stages.len());
    for s in stages {
        let get_f = |k: &str| s.get(k).and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)));
        let beta = get_f("beta").ok_or_else(|| Validation("stage record without beta".into()))?;
        let file = s
            .get("checkpoint")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Validation("stage record without checkpoint".into()))?;
        let path = require(dir.join(file))?;
        out.push(annealflow::anneal::Checkpoint {
            beta,
            batch: get_f("batch").unwrap_or(0.0) as usize,
            n_eff: get_f("n_eff").unwrap_or(f64::NAN),
            ema: get_f("ema").unwrap_or(f64::NAN),
            evaluations: get_f("evaluations").unwrap_or(0.0) as usize,
            model: FlowModel::load(&path).with_context(|| format!("loading {}", path.display()))?,
        });
    }
    Ok(out)
}

fn archive_set(dir: &Path) -> anyhow::Result<WeightedSampleSet> {
    let t = Table::read(require(dir.join(ARCHIVE))?)?;
    let lp = t.column("log_prior")?;
    let ll = t.column("log_lik")?;
    let lq = t.column("log_q_mixture")?;
    let dim = t.columns.iter().filter(|c| c.starts_with('x')).count();
    let mut data = Vec::with_capacity(t.rows.len() * dim);
    for r in &t.rows {
        data.extend_from_slice(&r[..dim]);
    }
    let target = lp.iter().zip(&ll).map(|(p, l)| p + l).collect();
    Ok(WeightedSampleSet::new(SampleMatrix::new(dim.max(1), data), target, lq)?)
}

pub fn evidence(run_dir: &Path, method: Method) -> anyhow::Result<()> {
    let manifest = require(run_dir.join(MANIFEST))?;
    let cfg = RunConfig::load(&manifest)?;
    let command = manifest_command(&cfg)?;
    let status = cfg.run.as_ref().and_then(|r| r.get("status")).and_then(|s| s.as_str());
    if status != Some("complete") {
        bail!(Validation(format!(
            "run in {} did not complete (status {}); no evidence can be computed",
            run_dir.display(),
            status.unwrap_or("missing")
        )));
    }
    let ev = cfg.evidence_config();
    let exec = executor(&cfg);
    let mut estimates = Vec::new();
    let mut analytic = None;
    let want_is = matches!(method, Method::Is | Method::Both);
    let want_ti = matches!(method, Method::Ti | Method::Both);
    match command.as_str() {
        "nf-run" => {
            let nf = nf_config(&cfg)?;
            let built = cfg.build_target()?;
            analytic = built.analytic_log_evidence;
            let target = built.target.as_ref();
            let mut rng = ChaCha8Rng::seed_from_u64(ev.seed);
            if want_is {
                let set = match ev.proposal {
                    Proposal::Mixture => archive_set(run_dir)?,
                    Proposal::Model => {
                        let model = FlowModel::load(require(run_dir.join(FINAL_MODEL))?)?;
                        let n = ev.is_samples.unwrap_or(10 * nf.batch_size);
                        WeightedSampleSet::from_model(target, &model, n, &mut rng, &exec)?
                    }
                };
                estimates.push(evidence_is(&set, true)?);
                estimates.push(evidence_is(&set, false)?);
            }
            if want_ti {
                let checkpoints = nf_checkpoints(run_dir, &cfg)?;
                let n = ev.ti_samples.unwrap_or(10 * nf.batch_size);
                let ladder = ti_ladder_from_checkpoints(target, &checkpoints, n, &mut rng, &exec)?;
                ladder.to_table(ev.cutoff).write(run_dir.join(TI_TABLE))?;
                estimates.push(evidence_ti(&ladder, ev.cutoff)?);
            }
        }
        "mcmc-run" => {
            if method == Method::Is {
                bail!(Validation(format!(
                    "importance sampling needs {}, which an mcmc-run does not produce",
                    run_dir.join(ARCHIVE).display()
                )));
            }
            if let Ok(built) = cfg.build_target() {
                analytic = built.analytic_log_evidence;
            }
            let table = Table::read(require(run_dir.join(LADDER))?)?;
            let ladder = TiLadder::from_table(&table)?;
            ladder.to_table(ev.cutoff).write(run_dir.join(TI_TABLE))?;
            estimates.push(evidence_ti(&ladder, ev.cutoff)?);
        }
        other => bail!(Validation(format!("cannot estimate evidence for a {other:?} run"))),
    }
    let report = EvidenceReport {
        run: run_dir.to_path_buf(),
        command,
        analytic_log_evidence: analytic,
        estimates,
    };
    fs::write(run_dir.join(EVIDENCE_REPORT), serde_json::to_string_pretty(&report)?)?;
    for e in &report.estimates {
        println!("{:?}: log P(D|M) = {:.6}", e.method, e.log_evidence);
    }
    if let Some(z) = analytic {
        println!("analytic: log P(D|M) = {z:.6}");
    }
    Ok(())
}
