use std::path::Path;

use aimlab::corpus::{build_vocab, generate_synthetic, load_tsv, tokenize, write_tsv, Dataset, SyntheticTask};
use aimlab::metrics::{build_report, EmbeddingTable, MetricsConfig, MetricsReport};
use aimlab::objectives::Objective;
use aimlab::selftest::{self, CheckReport, CHECK_IDS};
use aimlab::trainer::{
    evaluate_model, generate_responses, pretrain, prepare_data, rerank_corpus, select_mmi_weight, train_adversarial, Checkpoint,
    DecodeConfig, PreparedData, RunOutcome, TrainConfig,
};
use aimlab::{Error, Result};
use serde_json::json;

use crate::plots::{self, csv_err, GENERATIONS_TSV, STEPS_CSV};
use crate::run_dir::{self, RunDir, RunManifest, Timing};
use crate::{Cli, Command, DataArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub enum Outcome {
    Success,
    /// The command ran but some self-test check did not pass.
    ChecksFailed,
}

/// Reads a TOML config, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", p.display())))?;
            TrainConfig::from_toml(&text)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {what} {}: {e}", path.display())))
}

struct Ctx<'a> {
    cli: &'a Cli,
    argv: &'a [String],
}

impl Ctx<'_> {
    /// Runs `body` in a fresh run directory and always leaves a manifest behind,
    /// recording the error when `body` fails.
    fn run(&self, seed: u64, config: Option<&TrainConfig>, body: impl FnOnce(&mut RunDir) -> Result<Outcome>) -> Result<Outcome> {
        let name = self.cli.command.name();
        let dir = run_dir::resolve(self.cli.global.run_dir.as_deref(), &format!("{name}-seed{seed}"));
        let mut rd = RunDir::create(dir)?;
        if let Some(cfg) = config {
            rd.write(CONFIG_FILE, cfg.to_toml().as_bytes())?;
            log::info!("resolved config:\n{}", cfg.to_toml());
        }
        let result = body(&mut rd);
        let path = rd.path().to_path_buf();
        let manifest = RunManifest {
            command: name.to_string(),
            argv: self.argv.to_vec(),
            seed,
            config: config.map(TrainConfig::to_toml),
            config_hash: config.map(TrainConfig::hash),
            artifacts: Vec::new(),
            status: match &result {
                Ok(Outcome::Success) => "ok",
                Ok(Outcome::ChecksFailed) => "checks_failed",
                Err(_) => "error",
            }
            .to_string(),
            error: result.as_ref().err().map(ToString::to_string),
            timing: Timing::default(),
        };
        rd.finish(manifest)?;
        if result.is_ok() {
            eprintln!("wrote {}", path.display());
        }
        result
    }
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<Outcome> {
    let ctx = Ctx { cli, argv };
    let g = &cli.global;
    match &cli.command {
        Command::Pretrain { data, resume, stop_after } => {
            let mut cfg = load_config(g.config.as_deref())?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            let resume = resume.as_deref().map(load_checkpoint).transpose()?;
            ctx.run(cfg.seed, Some(&cfg), |rd| {
                let (ds, _) = load_dataset(data, &cfg, cfg.seed)?;
                let vocab = match &resume {
                    Some(ck) => ck.vocab.clone(),
                    None => build_vocab(&ds, cfg.model.vocab_size)?,
                };
                let prepared = prepare(&ds, vocab, &cfg)?;
                rd.lap("data");
                let out = pretrain(&cfg, &prepared, resume, *stop_after)?;
                rd.lap("pretrain");
                write_training(rd, &out)
            })
        }
        Command::Train { data, init, mode, stop_after } => {
            let mut cfg = load_config(g.config.as_deref())?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            if let Some(m) = mode {
                cfg.mode = Objective::from(*m);
            }
            cfg.validate()?;
            let start = init.as_deref().map(load_checkpoint).transpose()?;
            ctx.run(cfg.seed, Some(&cfg), |rd| {
                let (ds, _) = load_dataset(data, &cfg, cfg.seed)?;
                let vocab = match &start {
                    Some(ck) => ck.vocab.clone(),
                    None => build_vocab(&ds, cfg.model.vocab_size)?,
                };
                let prepared = prepare(&ds, vocab, &cfg)?;
                rd.lap("data");
                let out = train_adversarial(&cfg, &prepared, start, *stop_after)?;
                rd.lap("train");
                write_training(rd, &out)
            })
        }
        Command::Eval {
            checkpoint,
            data,
            emb,
            sample,
        } => {
            let ck = load_checkpoint(checkpoint)?;
            let seed = g.seed.unwrap_or(ck.config.seed);
            let table = emb.as_deref().map(EmbeddingTable::load).transpose()?;
            ctx.run(seed, Some(&ck.config), |rd| {
                let (ds, task) = load_dataset(data, &ck.config, seed)?;
                let prepared = prepare_for(&ds, &ck)?;
                rd.lap("data");
                let decode = DecodeConfig { sample: *sample, seed };
                let ev = evaluate_model(&ck, &prepared.test, &metrics_config(table.is_some()), table.as_ref(), &decode, task.as_ref())?;
                rd.lap("eval");
                write_generations(rd, &ev.sources, &ev.generations)?;
                write_report(rd, &ev.report, json!({}))?;
                Ok(Outcome::Success)
            })
        }
        Command::Generate { checkpoint, input, sample } => {
            let ck = load_checkpoint(checkpoint)?;
            let seed = g.seed.unwrap_or(ck.config.seed);
            let text = read_text(input, "input")?;
            ctx.run(seed, None, |rd| {
                let max_len = ck.dims().max_len;
                let sources: Vec<Vec<String>> = text.lines().filter(|l| !l.trim().is_empty()).map(tokenize).collect();
                if sources.is_empty() {
                    return Err(Error::Empty("input file"));
                }
                let ids: Vec<Vec<usize>> = sources
                    .iter()
                    .map(|s| {
                        let mut v = ck.vocab.encode(s);
                        v.truncate(max_len);
                        v
                    })
                    .collect();
                let out = generate_responses(&ck.forward, &ids, &DecodeConfig { sample: *sample, seed })?;
                let gens: Vec<Vec<String>> = out.iter().map(|g| ck.vocab.decode(g)).collect();
                rd.lap("generate");
                write_generations(rd, &sources, &gens)
            })
        }
        Command::Rerank {
            checkpoint,
            data,
            weight,
            emb,
        } => {
            let ck = load_checkpoint(checkpoint)?;
            let seed = g.seed.unwrap_or(ck.config.seed);
            let table = emb.as_deref().map(EmbeddingTable::load).transpose()?;
            ctx.run(seed, Some(&ck.config), |rd| rerank(rd, &ck, data, seed, *weight, table.as_ref()))
        }
        Command::Metrics { hyp, reference, emb } => {
            let hyps = read_lines(hyp, "hypothesis file")?;
            let refs = read_lines(reference, "reference file")?;
            let table = emb.as_deref().map(EmbeddingTable::load).transpose()?;
            ctx.run(g.seed.unwrap_or(0), None, |rd| {
                let report = build_report(&hyps, &refs, &metrics_config(table.is_some()), table.as_ref())?;
                write_report(rd, &report, json!({}))?;
                Ok(Outcome::Success)
            })
        }
        Command::Synth { pairs } => {
            let mut cfg = load_config(g.config.as_deref())?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            if let Some(n) = pairs {
                cfg.synthetic_pairs = *n;
            }
            cfg.validate()?;
            ctx.run(cfg.seed, Some(&cfg), |rd| {
                let task = cfg.task.build()?;
                let ds = generate_synthetic(&task, cfg.synthetic_pairs, cfg.seed)?;
                write_tsv(&ds.pairs, &rd.join("corpus.tsv"))?;
                rd.record("corpus.tsv");
                rd.write_json("joint.json", &task.entries())?;
                Ok(Outcome::Success)
            })
        }
        Command::Gradbench => {
            let seed = g.seed.unwrap_or(0);
            ctx.run(seed, None, |rd| {
                let grad = selftest::gradient_correctness(seed)?;
                rd.lap("gradcheck");
                let var = selftest::variance_reduction(seed)?;
                rd.lap("variance");
                write_check_tables(rd, &[grad.clone(), var.clone()])?;
                for r in [&grad, &var] {
                    println!("{}", r.line());
                }
                rd.write_json(REPORT_FILE, &[grad, var])?;
                Ok(Outcome::Success)
            })
        }
        Command::Selftest { only } => {
            let ids: Vec<u8> = if only.is_empty() { CHECK_IDS.to_vec() } else { only.clone() };
            if let Some(bad) = ids.iter().find(|i| !CHECK_IDS.contains(i)) {
                return Err(Error::InvalidArgument(format!("--only: no check with id {bad}; known ids are 1-9")));
            }
            let seed = g.seed.unwrap_or(0);
            ctx.run(seed, None, |rd| {
                let mut reports = Vec::new();
                for id in ids {
                    let r = if id == 8 {
                        selftest::directional_ordering_with(seed, &mut |line| log::info!("{line}"))?
                    } else {
                        selftest::run_check(id, seed)?
                    };
                    rd.lap(&format!("check{id}"));
                    println!("{}", r.line());
                    reports.push(r);
                }
                write_check_tables(rd, &reports)?;
                rd.write_json("selftest.json", &reports)?;
                let passed = reports.iter().filter(|r| r.passed).count();
                println!("{passed}/{} checks passed", reports.len());
                Ok(if passed == reports.len() { Outcome::Success } else { Outcome::ChecksFailed })
            })
        }
    }
}

fn load_dataset(data: &DataArgs, cfg: &TrainConfig, seed: u64) -> Result<(Dataset, Option<SyntheticTask>)> {
    let data_seed = data.data_seed.unwrap_or(seed);
    match &data.data {
        Some(path) => {
            let ds = load_tsv(path, data_seed).map_err(|e| match e {
                Error::Io(io) => Error::InvalidArgument(format!("cannot read corpus {}: {io}", path.display())),
                other => other,
            })?;
            Ok((ds, None))
        }
        None => {
            let task = cfg.task.build()?;
            let ds = generate_synthetic(&task, cfg.synthetic_pairs, data_seed)?;
            Ok((ds, Some(task)))
        }
    }
}

fn prepare(ds: &Dataset, vocab: aimlab::corpus::Vocab, cfg: &TrainConfig) -> Result<PreparedData> {
    let p = prepare_data(ds, vocab, &cfg.model)?;
    if p.truncated > 0 {
        log::warn!("{} sentences truncated to the model's length limit", p.truncated);
    }
    Ok(p)
}

fn prepare_for(ds: &Dataset, ck: &Checkpoint) -> Result<PreparedData> {
    let p = prepare_data(ds, ck.vocab.clone(), ck.dims())?;
    if p.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    Ok(p)
}

fn metrics_config(with_embeddings: bool) -> MetricsConfig {
    let all = MetricsConfig::default();
    if with_embeddings {
        all
    } else {
        all.without_embeddings()
    }
}

/// Line-aligned tokenized sentences; an empty line is an empty sentence.
fn read_lines(path: &Path, what: &str) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path, what)?.lines().map(tokenize).collect())
}

fn write_training(rd: &mut RunDir, out: &RunOutcome) -> Result<Outcome> {
    out.checkpoint.save(&rd.join(CHECKPOINT_FILE))?;
    rd.record(CHECKPOINT_FILE);
    rd.write(STEPS_CSV, &plots::steps_csv(&out.logs)?)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    let last = out.logs.last();
    rd.write_json(
        "summary.json",
        &json!({
            "phase": out.checkpoint.phase,
            "steps": out.checkpoint.step,
            "cold_start": out.checkpoint.cold_start,
            "final_mle": last.map(|l| l.mle),
            "final_gan": last.and_then(|l| l.gan),
            "final_mi": last.and_then(|l| l.mi),
            "last_valid_mle": out.logs.iter().rev().find_map(|l| l.valid_mle),
            "warnings": out.warnings,
        }),
    )?;
    emit(rd)?;
    Ok(Outcome::Success)
}

fn emit(rd: &mut RunDir) -> Result<()> {
    for name in plots::emit_plots(rd.path())? {
        rd.record(name);
    }
    Ok(())
}

fn write_generations(rd: &mut RunDir, sources: &[Vec<String>], gens: &[Vec<String>]) -> Result<Outcome> {
    let mut text = String::new();
    for (s, g) in sources.iter().zip(gens) {
        text.push_str(&s.join(" "));
        text.push('\t');
        text.push_str(&g.join(" "));
        text.push('\n');
    }
    rd.write(GENERATIONS_TSV, text.as_bytes())?;
    emit(rd)?;
    Ok(Outcome::Success)
}

fn write_report(rd: &mut RunDir, report: &MetricsReport, extra: serde_json::Value) -> Result<()> {
    let mut doc = serde_json::to_value(report)?;
    if let (Some(obj), serde_json::Value::Object(more)) = (doc.as_object_mut(), extra) {
        obj.extend(more);
    }
    rd.write_json(REPORT_FILE, &doc)?;
    let cols = [
        ("bleu", report.bleu),
        ("rouge_l", report.rouge_l),
        ("greedy", report.greedy),
        ("average", report.average),
        ("extreme", report.extreme),
        ("dist_1", report.dist_1),
        ("dist_2", report.dist_2),
        ("ent_4", report.ent_4),
        ("source_specificity", report.source_specificity),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = Path::new(METRICS_CSV);
    w.write_record(cols.iter().map(|c| c.0)).map_err(|e| csv_err(p, e))?;
    w.write_record(cols.iter().map(|c| c.1.map(|v| v.to_string()).unwrap_or_default())).map_err(|e| csv_err(p, e))?;
    rd.write(METRICS_CSV, &w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
}

fn rerank(rd: &mut RunDir, ck: &Checkpoint, data: &DataArgs, seed: u64, weight: Option<f64>, table: Option<&EmbeddingTable>) -> Result<Outcome> {
    let (ds, task) = load_dataset(data, &ck.config, seed)?;
    let prepared = prepare_for(&ds, ck)?;
    rd.lap("data");
    let width = ck.config.beam_width;
    let (w, grid) = match weight {
        Some(w) => (w, None),
        None => {
            let sel = select_mmi_weight(&ck.forward, &ck.backward, &prepared.valid, &ck.vocab, width, &ck.config.mmi_grid)?;
            (sel.weight, Some(sel.scores))
        }
    };
    if let Some(scores) = &grid {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let p = Path::new("mmi_grid.csv");
        wtr.write_record(["weight", "valid_bleu"]).map_err(|e| csv_err(p, e))?;
        for (gw, b) in scores {
            wtr.write_record([gw.to_string(), b.to_string()]).map_err(|e| csv_err(p, e))?;
        }
        rd.write("mmi_grid.csv", &wtr.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)?;
    }
    let sources: Vec<Vec<usize>> = prepared.test.iter().map(|e| e.source.clone()).collect();
    let picked = rerank_corpus(&ck.forward, &ck.backward, &sources, width, w)?;
    rd.lap("rerank");
    let src_words: Vec<Vec<String>> = sources.iter().map(|s| ck.vocab.decode(s)).collect();
    let gens: Vec<Vec<String>> = picked.iter().map(|r| ck.vocab.decode(&r.tokens)).collect();
    let refs: Vec<Vec<String>> = prepared.test.iter().map(|e| ck.vocab.decode(&e.target)).collect();
    let mut report = build_report(&gens, &refs, &metrics_config(table.is_some()), table)?;
    if let Some(task) = &task {
        let pairs: Vec<(Vec<String>, Vec<String>)> = src_words.iter().cloned().zip(gens.iter().cloned()).collect();
        report.source_specificity = Some(task.specificity(&pairs)?);
    }
    report.config_hash = Some(ck.config_hash());
    write_generations(rd, &src_words, &gens)?;
    write_report(rd, &report, json!({ "mmi_weight": w, "beam_width": width }))?;
    Ok(Outcome::Success)
}

/// CSV tables for the checks that carry a grid: per-kind gradient errors,
/// variance ratios and the per-run directional metrics.
fn write_check_tables(rd: &mut RunDir, reports: &[CheckReport]) -> Result<()> {
    for r in reports {
        let (name, header, rows): (&str, Vec<&str>, Vec<Vec<String>>) = match r.id {
            1 => (
                "gradcheck.csv",
                vec!["graph", "max_rel_error"],
                r.details["max_rel_error"]
                    .as_object()
                    .map(|m| m.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect())
                    .unwrap_or_default(),
            ),
            5 => (
                "variance_ratios.csv",
                vec!["coordinate", "ratio"],
                r.details["ratios"]
                    .as_array()
                    .map(|a| a.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]).collect())
                    .unwrap_or_default(),
            ),
            8 => (
                "directional.csv",
                vec!["mode", "seed", "ent_4", "dist_2", "specificity"],
                r.details["runs"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .map(|run| {
                                ["mode", "seed", "ent_4", "dist_2", "specificity"]
                                    .iter()
                                    .map(|k| match &run[*k] {
                                        serde_json::Value::String(s) => s.clone(),
                                        v => v.to_string(),
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
            ),
            _ => continue,
        };
        let p = Path::new(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(|e| csv_err(p, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| csv_err(p, e))?;
        }
        rd.write(name, &w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)?;
    }
    Ok(())
}
