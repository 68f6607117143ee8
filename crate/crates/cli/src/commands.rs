use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stylematch::baselines::{lmt_train, pca_fit, CoocTable, Preset};
use stylematch::data::{
    cheat_bank, load_dataset, project_2d, render_svg, save_dataset, synth_generate, write_projection_csv,
    GroundTruth, Provenance,
};
use stylematch::eval::{auc, silhouette, write_pair_scores_csv, LmtScorer, PairScore};
use stylematch::trainer::Trainer;
use stylematch::{load_checkpoint, Checkpoint, CheckpointModel, Dataset, EvalReport, TrainConfig, TrainOutcome};

use crate::config::{invalid, ExperimentConfig};
use crate::run::RunDir;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn run_dir(&self, command: &'static str) -> Result<RunDir> {
        let mut run = RunDir::create(&self.cfg.output.dir, command)?;
        run.write("resolved_config.json", self.cfg.to_json()?.as_bytes())?;
        Ok(run)
    }
}

/// The dataset with its split installed, plus ground truth when it is known.
struct Loaded {
    ds: Dataset,
    truth: Option<GroundTruth>,
}

fn load_data(cfg: &ExperimentConfig) -> Result<Loaded> {
    let data = &cfg.data;
    let mut ds = match (&data.synth, &data.items, &data.pairs) {
        (Some(s), _, _) => synth_generate(s)?,
        (None, Some(items), Some(pairs)) => {
            let mut ds = load_dataset(items, pairs)?;
            if data.standardize {
                ds.standardize();
            }
            ds
        }
        _ => bail!(invalid("data: no source configured")),
    };
    let mut truth = match &ds.provenance {
        Provenance::Synthetic { truth, .. } => Some((**truth).clone()),
        _ => None,
    };
    if let Some(p) = &data.provenance {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let prov: Provenance =
            serde_json::from_str(&text).map_err(|e| invalid(format!("provenance {}: {e}", p.display())))?;
        if let Provenance::Synthetic { truth: t, .. } = prov {
            truth = Some(*t);
        }
    }
    ds.apply_split_config(&data.split)?;
    log::info!(
        "dataset: {} items, {} pairs, {} train, {} test",
        ds.items().len(),
        ds.pairs().len(),
        ds.train_pairs().len(),
        ds.test_pairs().len()
    );
    Ok(Loaded { ds, truth })
}

fn write_report(ctx: &Ctx, run: &mut RunDir, prefix: &str, report: &EvalReport, rows: &[PairScore]) -> Result<()> {
    run.write_json(&format!("{prefix}eval_report.json"), report)?;
    if ctx.cfg.output.pair_scores {
        let mut buf = Vec::new();
        write_pair_scores_csv(rows, &mut buf)?;
        run.write(&format!("{prefix}pair_scores.csv"), &buf)?;
    }
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.data.synth.is_none() {
        bail!(invalid("synth: the config's data section must describe a synthetic corpus"));
    }
    let Loaded { ds, .. } = load_data(&ctx.cfg)?;
    let mut run = ctx.run_dir("synth")?;
    save_dataset(&ds, &run.path("items.jsonl"), &run.path("pairs.csv"))?;
    for name in ["items.jsonl", "pairs.csv"] {
        let bytes = std::fs::read(run.path(name))?;
        run.write(name, &bytes)?;
    }
    run.write_json("provenance.json", &ds.provenance)?;
    ctx.say(format!("synth: {} items, {} pairs -> {}", ds.items().len(), ds.pairs().len(), ctx.cfg.output.dir.display()));
    run.finish()
}

fn trace_bytes(outcome_trace: &stylematch::TrainTrace) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut trace = Vec::new();
    outcome_trace.write_csv(&mut trace)?;
    let mut cps = Vec::new();
    outcome_trace.write_checkpoints_csv(&mut cps)?;
    Ok((trace, cps))
}

/// Trains with the CLI's bookkeeping; on failure the partial trace is still written.
fn train_into(ds: &Dataset, config: &TrainConfig, run: &mut RunDir, prefix: &str, save_models: bool) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(ds, config.clone())?;
    let result: Result<()> = (|| {
        let mut saved = 0;
        loop {
            let more = trainer.advance()?;
            let cps = &trainer.trace().checkpoints;
            if save_models && cps.len() > saved {
                saved = cps.len();
                let ck = Checkpoint::new(
                    CheckpointModel::Scgan { bank: trainer.bank().clone(), critic: trainer.critic().clone() },
                    Some(config.clone()),
                );
                run.write(&format!("{prefix}models/iter_{:06}.json", trainer.iteration()), ck.to_json()?.as_bytes())?;
            }
            if !more {
                return Ok(());
            }
        }
    })();
    let outcome = trainer.into_outcome();
    let (trace, cps) = trace_bytes(&outcome.trace)?;
    run.write(&format!("{prefix}trace.csv"), &trace)?;
    run.write(&format!("{prefix}checkpoints.csv"), &cps)?;
    result.map(|()| outcome)
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let Loaded { ds, .. } = load_data(&ctx.cfg)?;
    let mut run = ctx.run_dir("train")?;
    let config = &ctx.cfg.train;
    let outcome = match train_into(&ds, config, &mut run, "", ctx.cfg.output.checkpoint_models) {
        Ok(o) => o,
        Err(e) => {
            run.finish()?;
            return Err(e.context("training aborted; partial trace written"));
        }
    };
    let ck = Checkpoint::new(
        CheckpointModel::Scgan { bank: outcome.bank.clone(), critic: outcome.critic.clone() },
        Some(config.clone()),
    );
    run.write("checkpoint.json", ck.to_json()?.as_bytes())?;
    if !ds.test_pairs().is_empty() {
        let (report, rows) = auc(&outcome.bank, &ds, ds.test_pairs(), &ctx.cfg.eval)?;
        write_report(ctx, &mut run, "", &report, &rows)?;
        ctx.say(format!("train: {} iterations, test auc {:.4}", outcome.trace.records.len(), report.auc));
    } else {
        ctx.say(format!("train: {} iterations, no test pairs", outcome.trace.records.len()));
    }
    run.finish()
}

/// Anything that can score pairs, resolved from a checkpoint or an oracle.
enum Model {
    Scgan(stylematch::GeneratorBank),
    Nn(stylematch::baselines::PcaModel),
    Ct(CoocTable),
    Lmt(stylematch::Matrix),
}

impl Model {
    fn from_checkpoint(ck: Checkpoint) -> Self {
        match ck.model {
            CheckpointModel::Scgan { bank, .. } => Model::Scgan(bank),
            CheckpointModel::Nn { pca } => Model::Nn(pca),
            CheckpointModel::Ct { table } => Model::Ct(table),
            CheckpointModel::Lmt { matrix } => Model::Lmt(matrix),
        }
    }

    fn evaluate(&self, ds: &Dataset, opts: &stylematch::EvalOptions) -> Result<(EvalReport, Vec<PairScore>)> {
        let pairs = ds.test_pairs();
        Ok(match self {
            Model::Scgan(b) => auc(b, ds, pairs, opts)?,
            Model::Nn(p) => auc(p, ds, pairs, opts)?,
            Model::Ct(t) => auc(t, ds, pairs, opts)?,
            Model::Lmt(m) => auc(&LmtScorer(m), ds, pairs, opts)?,
        })
    }

    /// Style-space vector of every item, when the model has one.
    fn vectors(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        ds.items()
            .iter()
            .map(|it| -> Result<Vec<f64>> {
                Ok(match self {
                    Model::Scgan(b) => b.project_features(&it.category, &it.features)?,
                    Model::Nn(p) => p.transform(&it.features)?,
                    Model::Lmt(m) => m.matvec(&it.features)?,
                    Model::Ct(_) => bail!(invalid("project: a co-occurrence table has no item vectors")),
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EvalTarget<'a> {
    Checkpoint(&'a Path),
    Cheat,
    Untrained,
}

fn untrained(ds: &Dataset, config: &TrainConfig) -> Result<stylematch::GeneratorBank> {
    let config = TrainConfig { max_iterations: 0, ..config.clone() };
    Ok(Trainer::new(ds, config)?.into_outcome().bank)
}

pub fn eval(ctx: &Ctx, target: EvalTarget<'_>) -> Result<()> {
    let Loaded { ds, truth } = load_data(&ctx.cfg)?;
    let (label, model) = match target {
        EvalTarget::Checkpoint(p) => ("checkpoint", Model::from_checkpoint(load_checkpoint(p)?)),
        EvalTarget::Cheat => {
            let truth = truth.ok_or_else(|| invalid("eval --cheat needs synthetic data or data.provenance"))?;
            ("cheat", Model::Scgan(cheat_bank(&truth)?))
        }
        EvalTarget::Untrained => ("untrained", Model::Scgan(untrained(&ds, &ctx.cfg.train)?)),
    };
    if ds.test_pairs().is_empty() {
        bail!(invalid("eval: the split has no test pairs"));
    }
    let mut run = ctx.run_dir("eval")?;
    let (report, rows) = model.evaluate(&ds, &ctx.cfg.eval)?;
    write_report(ctx, &mut run, "", &report, &rows)?;
    ctx.say(format!("eval ({label}): auc {:.4} over {} pairs", report.auc, report.n_test_pairs));
    run.finish()
}

#[derive(Debug, Serialize)]
struct AblationRow {
    preset: String,
    auc: f64,
    n_test_pairs: usize,
    generator_updates: usize,
    skipped_generator_steps: usize,
}

pub fn ablate(ctx: &Ctx, parallel: bool) -> Result<()> {
    let Loaded { ds, .. } = load_data(&ctx.cfg)?;
    if ds.test_pairs().is_empty() {
        bail!(invalid("ablate: the split has no test pairs"));
    }
    let mut run = ctx.run_dir("ablate")?;
    let configs: Vec<(Preset, TrainConfig)> = Preset::ALL.iter().map(|&p| (p, p.apply(ctx.cfg.train.clone()))).collect();

    let run_one = |(preset, config): &(Preset, TrainConfig)| -> Result<(TrainOutcome, EvalReport)> {
        log::info!("ablate: training {preset}");
        let outcome = stylematch::train(&ds, config)?;
        let (report, _) = auc(&outcome.bank, &ds, ds.test_pairs(), &ctx.cfg.eval)?;
        Ok((outcome, report))
    };
    let results: Vec<Result<(TrainOutcome, EvalReport)>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_one(c))).collect();
            handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
        })
    } else {
        configs.iter().map(run_one).collect()
    };

    let mut rows = Vec::new();
    for ((preset, _), res) in configs.iter().zip(results) {
        let (outcome, report) = res.with_context(|| format!("preset {preset}"))?;
        let (trace, _) = trace_bytes(&outcome.trace)?;
        run.write(&format!("traces/{preset}.csv"), &trace)?;
        rows.push(AblationRow {
            preset: preset.name().to_string(),
            auc: report.auc,
            n_test_pairs: report.n_test_pairs,
            generator_updates: outcome.trace.generator_updates,
            skipped_generator_steps: outcome.trace.skipped_generator_steps,
        });
    }
    let mut csv = String::from("preset,auc\n");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.preset, r.auc));
        ctx.say(format!("{:<8} {:.4}", r.preset, r.auc));
    }
    run.write("ablation.csv", csv.as_bytes())?;
    run.write_json("ablation.json", &rows)?;
    run.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Nn,
    Ct,
    Lmt,
}

pub fn baseline(ctx: &Ctx, method: Method) -> Result<()> {
    let Loaded { ds, .. } = load_data(&ctx.cfg)?;
    let mut run = ctx.run_dir("baseline")?;
    let b = &ctx.cfg.baselines;
    let model = match method {
        Method::Nn => {
            let d = b.nn_dim.unwrap_or_else(|| ctx.cfg.train.effective_style_dim(ds.feature_dim()));
            let feats: Vec<&[f64]> = ds.items().iter().map(|i| i.features.as_slice()).collect();
            CheckpointModel::Nn { pca: pca_fit(&feats, d)? }
        }
        Method::Ct => CheckpointModel::Ct { table: CoocTable::build(&ds, b.ct_smoothing) },
        Method::Lmt => {
            let fit = lmt_train(&ds, &b.lmt)?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in fit.losses.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", i + 1));
            }
            run.write("lmt_losses.csv", csv.as_bytes())?;
            CheckpointModel::Lmt { matrix: fit.matrix }
        }
    };
    let ck = Checkpoint::new(model, None);
    run.write("checkpoint.json", ck.to_json()?.as_bytes())?;
    let model = Model::from_checkpoint(ck);
    if ds.test_pairs().is_empty() {
        bail!(invalid("baseline: the split has no test pairs"));
    }
    let (report, rows) = model.evaluate(&ds, &ctx.cfg.eval)?;
    write_report(ctx, &mut run, "", &report, &rows)?;
    ctx.say(format!("baseline {method:?}: auc {:.4}", report.auc));
    run.finish()
}

#[derive(Debug, Serialize)]
struct Silhouettes {
    vectors: &'static str,
    by_category: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_style: Option<f64>,
}

fn labels<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut ids = BTreeMap::new();
    keys.map(|k| {
        let n = ids.len();
        *ids.entry(k).or_insert(n)
    })
    .collect()
}

pub fn project(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let Loaded { ds, truth } = load_data(&ctx.cfg)?;
    let (kind, vectors) = match checkpoint {
        Some(p) => ("style", Model::from_checkpoint(load_checkpoint(p)?).vectors(&ds)?),
        None => ("raw", ds.items().iter().map(|i| i.features.clone()).collect()),
    };
    let styles = truth.as_ref().map(|t| &t.styles);
    let points = project_2d(ds.items(), &vectors, styles)?;
    let mut run = ctx.run_dir("project")?;
    let mut buf = Vec::new();
    write_projection_csv(&points, &mut buf)?;
    run.write("projection.csv", &buf)?;
    if ctx.cfg.output.svg {
        run.write("projection.svg", render_svg(&points).as_bytes())?;
    }
    let by_category = silhouette(&vectors, &labels(ds.items().iter().map(|i| i.category.as_str())))?;
    let by_style = match styles {
        Some(s) if ds.items().iter().all(|i| s.contains_key(&i.id)) => {
            let l: Vec<usize> = ds.items().iter().map(|i| s[&i.id]).collect();
            Some(silhouette(&vectors, &l)?)
        }
        _ => None,
    };
    run.write_json("silhouette.json", &Silhouettes { vectors: kind, by_category, by_style })?;
    ctx.say(format!(
        "project ({kind}): silhouette by category {by_category:.4}{}",
        by_style.map(|s| format!(", by style {s:.4}")).unwrap_or_default()
    ));
    run.finish()
}
