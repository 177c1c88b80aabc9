//! Subcommand implementations.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use pragcap_bridge::loopback::{serve_connection, Backends, ServerOptions};
use pragcap_core::bench::derive_seed;
use pragcap_core::decoding::{decode, DecodeResult, Method, MethodSpec, Scorers};
use pragcap_core::evaluation::{sweep_csv, tradeoff_sweep, EvalReport};
use pragcap_core::speakers::ToyWorld;
use pragcap_core::tuning::{
    mid_ppl_target, select_lambda_informativity, select_lambda_ppl_matched, SearchSpec, TuningRecord,
};

use crate::config::{BridgeConfig, RunConfig};
use crate::manifest::ProblemManifest;
use crate::output::{Provenance, Sink};
use crate::wiring::Wiring;
use crate::{Cli, Command, Common, ObjectiveArg};

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut c = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.seed {
        c.seed = v;
    }
    if let Some(v) = common.method {
        c.method = v;
    }
    if let Some(v) = common.lambda {
        c.lambda = v;
    }
    if let Some(v) = common.beam_width {
        c.decode.beam_width = v;
    }
    if let Some(v) = common.pool_size {
        c.decode.pool_size = v;
    }
    if let Some(v) = common.max_len {
        c.decode.max_len = v;
    }
    c.decode.trace |= common.trace;
    c.tuning.exhaustive |= common.exhaustive_fine;
    c.decode.lambda = c.lambda;
    let bridge = |endpoint: &String, current: &Option<BridgeConfig>| BridgeConfig {
        endpoint: endpoint.clone(),
        ..current.clone().unwrap_or_default()
    };
    if let Some(e) = &common.bridge {
        c.bridge = Some(bridge(e, &c.bridge));
    }
    if let Some(e) = &common.eval_bridge {
        c.eval_bridge = Some(bridge(e, &c.eval_bridge));
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli.common)?;
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            bail!("--jobs must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker pool")?;
    }
    let sink = Sink { force: cli.common.force };
    match &cli.command {
        Command::GenWorld { split, n_sets, out } => gen_world(&config, split, *n_sets, out, sink),
        Command::Decode { manifest, out } => decode_cmd(&config, manifest, out, sink),
        Command::Eval { manifest, tuning, out, csv } => eval_cmd(&config, manifest, tuning.as_deref(), out, csv.as_deref(), sink),
        Command::Sweep { manifest, methods, grid, out } => sweep_cmd(&config, manifest, methods, grid, out, sink),
        Command::Tune { validation, objective, target_ppl, out } => {
            tune_cmd(&config, validation, *objective, *target_ppl, out, sink)
        }
        Command::Ablate { validation, test, out } => ablate_cmd(&config, validation, test, out, sink),
        Command::ServeToy { world } => serve_toy(&config, world),
    }
}

fn load_manifest(config: &RunConfig, path: &Path) -> anyhow::Result<ProblemManifest> {
    ProblemManifest::load(path, config.bridge.is_some())
}

fn gen_world(config: &RunConfig, split: &str, n_sets: Option<usize>, out: &Path, sink: Sink) -> anyhow::Result<()> {
    let mut params = config.world.clone();
    params.seed = derive_seed(config.seed, &format!("world/{split}"));
    if let Some(n) = n_sets {
        params.n_sets = n;
    }
    let world = params.generate()?;
    let mut text = world.to_json()?;
    text.push('\n');
    let provenance = Provenance::new("gen-world", config, &[])?;
    sink.write_with_sidecar(out, text.as_bytes(), &provenance, json!({ "split": split, "world_seed": params.seed }))
}

#[derive(Serialize)]
struct CaptionRecord<'a> {
    set_id: &'a str,
    target: &'a str,
    text: String,
    #[serde(flatten)]
    result: &'a DecodeResult,
}

fn decode_cmd(config: &RunConfig, manifest_path: &Path, out: &Path, sink: Sink) -> anyhow::Result<()> {
    let manifest = load_manifest(config, manifest_path)?;
    let wiring = Wiring::build(config, &manifest)?;
    let spec = MethodSpec::new(config.method, config.lambda)?;
    let scorers = Scorers { speaker: wiring.speaker.as_ref(), listener: wiring.listener.as_ref(), prior: None };
    let results: Vec<anyhow::Result<DecodeResult>> = wiring
        .problems
        .par_iter()
        .map(|p| decode(&spec, &scorers, &p.context(), &config.decode).with_context(|| format!("set {}", p.set_id)))
        .collect();
    let results = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let vocab = wiring.speaker.vocabulary();

    let mut trace_lines = String::new();
    for (p, r) in wiring.problems.iter().zip(&results) {
        for s in r.trace.iter().flatten() {
            let line = json!({ "set_id": p.set_id, "step": s.step, "pool": s.pool, "survivors": s.survivors });
            trace_lines.push_str(&serde_json::to_string(&line)?);
            trace_lines.push('\n');
        }
    }
    let stripped: Vec<DecodeResult> = results.into_iter().map(|r| DecodeResult { trace: None, ..r }).collect();
    let records = wiring
        .problems
        .iter()
        .zip(&stripped)
        .map(|(p, r)| {
            Ok(CaptionRecord {
                set_id: &p.set_id,
                target: p.target.as_str(),
                text: vocab.detokenize(r.tokens())?,
                result: r,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let provenance = Provenance::new("decode", config, &[manifest_path])?;
    sink.write_json(out, &json!({ "provenance": provenance, "method": spec.method, "lambda": spec.lambda, "captions": records }))?;
    if config.decode.trace {
        let mut trace_path = out.as_os_str().to_owned();
        trace_path.push(".trace.jsonl");
        sink.write(&PathBuf::from(trace_path), trace_lines.as_bytes())?;
    }
    Ok(())
}

/// The part of a `tune` output that `eval --tuning` reads back.
#[derive(Deserialize)]
struct TuningFile {
    record: ChosenLambda,
}

#[derive(Deserialize)]
struct ChosenLambda {
    method: Method,
    chosen: f64,
}

fn eval_cmd(
    config: &RunConfig,
    manifest_path: &Path,
    tuning: Option<&Path>,
    out: &Path,
    csv: Option<&Path>,
    sink: Sink,
) -> anyhow::Result<()> {
    let mut config = config.clone();
    let mut inputs = vec![manifest_path];
    if let Some(path) = tuning {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: TuningFile = serde_json::from_str(&text).with_context(|| format!("tuning file {}", path.display()))?;
        config.method = file.record.method;
        config.lambda = file.record.chosen;
        config.decode.lambda = file.record.chosen;
        inputs.push(path);
    }
    let manifest = load_manifest(&config, manifest_path)?;
    let wiring = Wiring::build(&config, &manifest)?;
    let harness = wiring.harness(&config)?;
    let report = harness.evaluate(&MethodSpec::new(config.method, config.lambda)?)?;
    let provenance = Provenance::new("eval", &config, &inputs)?;
    sink.write_json(out, &json!({ "provenance": provenance, "report": report.as_ref() }))?;
    if let Some(csv) = csv {
        sink.write_with_sidecar(csv, report.csv().as_bytes(), &provenance, json!({}))?;
    }
    Ok(())
}

fn sweep_cmd(
    config: &RunConfig,
    manifest_path: &Path,
    methods: &[Method],
    grid: &[f64],
    out: &Path,
    sink: Sink,
) -> anyhow::Result<()> {
    let mut config = config.clone();
    if !methods.is_empty() {
        config.sweep.methods = methods.to_vec();
    }
    if !grid.is_empty() {
        config.sweep.grid = grid.to_vec();
    }
    let manifest = load_manifest(&config, manifest_path)?;
    let wiring = Wiring::build(&config, &manifest)?;
    let harness = wiring.harness(&config)?;
    let rows = tradeoff_sweep(&harness, &config.sweep.methods, &config.sweep.grid)?;
    let provenance = Provenance::new("sweep", &config, &[manifest_path])?;
    sink.write_with_sidecar(out, sweep_csv(&rows).as_bytes(), &provenance, json!({ "rows": rows }))
}

fn search_spec(config: &RunConfig, method: Method) -> anyhow::Result<SearchSpec> {
    let mut spec = SearchSpec::for_method(method)?;
    spec.steps = config.tuning.steps.clone();
    Ok(spec.exhaustive(config.tuning.exhaustive))
}

fn tune_cmd(
    config: &RunConfig,
    validation: &Path,
    objective: ObjectiveArg,
    target_ppl: Option<f64>,
    out: &Path,
    sink: Sink,
) -> anyhow::Result<()> {
    let manifest = load_manifest(config, validation)?;
    let wiring = Wiring::build(config, &manifest)?;
    let harness = wiring.harness(config)?;
    let method = config.method;
    let picl_reference = |harness| -> anyhow::Result<TuningRecord> {
        Ok(select_lambda_informativity(harness, Method::Picl, &search_spec(config, Method::Picl)?)?)
    };
    let (record, target, reference): (TuningRecord, Option<f64>, Option<TuningRecord>) = match objective {
        ObjectiveArg::Informativity => (select_lambda_informativity(&harness, method, &search_spec(config, method)?)?, None, None),
        ObjectiveArg::PplMatched => {
            let (target, reference) = match target_ppl {
                Some(t) => (t, None),
                None => {
                    let r = picl_reference(&harness)?;
                    (r.mean_perplexity, Some(r))
                }
            };
            (select_lambda_ppl_matched(&harness, method, &search_spec(config, method)?, target)?, Some(target), reference)
        }
        ObjectiveArg::MidPpl => {
            if target_ppl.is_some() {
                bail!("--target-ppl does not apply to the mid-ppl objective");
            }
            let reference = picl_reference(&harness)?;
            let base = harness.evaluate(&MethodSpec::base())?.mean_perplexity;
            let target = mid_ppl_target(base, reference.mean_perplexity);
            (select_lambda_ppl_matched(&harness, method, &search_spec(config, method)?, target)?, Some(target), Some(reference))
        }
    };
    let provenance = Provenance::new("tune", config, &[validation])?;
    sink.write_json(
        out,
        &json!({ "provenance": provenance, "target_ppl": target, "picl_reference": reference, "record": record }),
    )
}

#[derive(Serialize)]
struct AblationRow {
    method: Method,
    lambda: f64,
    validation_accuracy: f64,
    test_accuracy: f64,
    test_mean_perplexity: f64,
}

fn ablate_cmd(config: &RunConfig, validation: &Path, test: &Path, out: &Path, sink: Sink) -> anyhow::Result<()> {
    let val_manifest = load_manifest(config, validation)?;
    let test_manifest = load_manifest(config, test)?;
    let val_wiring = Wiring::build(config, &val_manifest)?;
    let test_wiring = Wiring::build(config, &test_manifest)?;
    let val = val_wiring.harness(config)?;
    let test_h = test_wiring.harness(config)?;
    let mut rows = Vec::new();
    for method in [Method::Picl, Method::PiclFullRerank, Method::PiclNoDistractors] {
        let record = select_lambda_informativity(&val, method, &search_spec(config, method)?)?;
        let report = test_h.evaluate(&MethodSpec::new(method, record.chosen)?)?;
        rows.push(AblationRow {
            method,
            lambda: record.chosen,
            validation_accuracy: record.accuracy,
            test_accuracy: report.retrieval_accuracy,
            test_mean_perplexity: report.mean_perplexity,
        });
    }
    let base: Arc<EvalReport> = test_h.evaluate(&MethodSpec::base())?;
    let ordering_holds = rows[0].test_accuracy > rows[1].test_accuracy && rows[1].test_accuracy > rows[2].test_accuracy;
    let provenance = Provenance::new("ablate", config, &[validation, test])?;
    sink.write_json(
        out,
        &json!({
            "provenance": provenance,
            "base": { "test_accuracy": base.retrieval_accuracy, "test_mean_perplexity": base.mean_perplexity },
            "rows": rows,
            "ordering_holds": ordering_holds,
        }),
    )
}

fn serve_toy(config: &RunConfig, world_path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(world_path).with_context(|| format!("reading {}", world_path.display()))?;
    let world = ToyWorld::from_json(&text)?.into_shared();
    let backends = Backends::toy(world, &config.scorers, derive_seed(config.seed, "scorers"), config.decode.max_len)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_connection(Arc::new(backends), ServerOptions::default(), BufReader::new(stdin.lock()), stdout)?;
    std::io::stderr().flush()?;
    Ok(())
}
