//! One function per subcommand.

use std::path::{Path, PathBuf};

use polyglot_ner::analysis::{
    self, common_entity_rate, entity_mentions, error_counts, language_vs_rest, overprune_threshold, span_errors, topk_overlap,
    FisherDiagonal, OverlapReport,
};
use polyglot_ner::bts_codec::{self, ByteSpan, ByteWindow};
use polyglot_ner::corpus::{concat_polyglot, LabeledCorpus, Split};
use polyglot_ner::evaluation::{evaluate, predict_all};
use polyglot_ner::syncorpus::{generate, SynthConfig};
use polyglot_ner::training::{self, best_run_index, load_checkpoint, Checkpoint, Regime, RunHistory};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{digest_inputs, OutputDir};
use crate::spec::{load_corpora, load_corpus, load_tagset, read_config, ExperimentSpec};
use crate::{usage, BtsDecodeArgs, BtsEncodeArgs, CliResult, CommonArgs, ErrorsArgs, EvalArgs, FinetuneArgs, FisherArgs};
use crate::{GenSynthArgs, OverlapArgs, PolyglotArgs, PruneArgs, TrainArgs};

pub fn gen_synth(a: &GenSynthArgs) -> CliResult<()> {
    let mut config = match (&a.config, a.languages) {
        (Some(path), _) => read_config(path)?,
        (None, Some(n)) => SynthConfig::with_languages(n),
        (None, None) => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate().map_err(usage)?;
    let suite = generate(&config)?;
    suite.write_to(&a.out)?;
    let mut out = OutputDir::create(&a.out)?;
    out.record("tagset.json")?;
    out.record("manifest.json")?;
    for (lang, corpus) in &suite.corpora {
        for split in corpus.splits().keys() {
            out.record(&format!("{lang}/{split}.conll"))?;
        }
    }
    let inputs = a.config.as_deref().map(|p| digest_inputs(&[p])).transpose()?.unwrap_or_default();
    out.finish("gen-synth", serde_json::to_value(&config).map_err(anyhow::Error::from)?, Some(config.seed), inputs)?;
    println!("{} languages written to {}", suite.corpora.len(), a.out.display());
    Ok(())
}

fn resolve_spec(a: &TrainArgs) -> CliResult<ExperimentSpec> {
    let mut spec: ExperimentSpec = read_config(&a.config)?;
    if !a.data.is_empty() {
        spec.data = a.data.clone();
    }
    if a.tagset.is_some() {
        spec.tagset = a.tagset.clone();
    }
    if a.out.is_some() {
        spec.output = a.out.clone();
    }
    if a.seed.is_some() {
        spec.seed = a.seed;
    }
    if let Some(n) = a.max_epochs {
        spec.training.max_epochs = n;
    }
    if let Some(n) = a.patience {
        spec.training.patience = n;
    }
    if let Some(lr) = a.lr {
        spec.training.adam.lr = lr;
    }
    Ok(spec)
}

pub fn train_mono(a: &TrainArgs) -> CliResult<()> {
    run_training(resolve_spec(a)?, Regime::Mono, "train")
}

pub fn train_polyglot(a: &PolyglotArgs) -> CliResult<()> {
    let mut spec = resolve_spec(&a.train)?;
    if a.uniform_sampling {
        spec.training.uniform_sampling = true;
    }
    run_training(spec, Regime::Polyglot, "train-polyglot")
}

pub fn finetune(a: &FinetuneArgs) -> CliResult<()> {
    let mut spec = resolve_spec(&a.train)?;
    if a.init.is_some() {
        spec.init = a.init.clone();
    }
    if a.finetune_lr.is_some() {
        spec.training.finetune_lr = a.finetune_lr;
    }
    if a.reset_optimizer {
        spec.training.reset_optimizer = true;
    }
    run_training(spec, Regime::Finetune, "finetune")
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    dev_score: f64,
    best_epoch: usize,
    epochs_run: usize,
}

#[derive(Serialize)]
struct Selection {
    selected_seed: u64,
    runs: Vec<SeedResult>,
}

fn run_training(spec: ExperimentSpec, regime: Regime, command: &str) -> CliResult<()> {
    spec.validate(regime)?;
    let tagset = load_tagset(spec.tagset.as_deref(), &spec.data)?;
    let corpora = load_corpora(&spec.data, &tagset)?;
    let init = spec.init.as_deref().filter(|_| regime == Regime::Finetune).map(load_checkpoint).transpose()?;
    let poly = match regime {
        Regime::Polyglot => Some(concat_polyglot(corpora.clone(), spec.training.uniform_sampling)?),
        _ => None,
    };
    let seeds = spec.seeds();
    let runs = seeds
        .par_iter()
        .map(|&seed| match (&poly, &init) {
            (Some(p), _) => training::train(&spec.training, p, seed),
            (None, Some(i)) => training::finetune(i, &corpora[0], &spec.training, seed),
            (None, None) => training::train(&spec.training, &corpora[0], seed),
        })
        .collect::<Result<Vec<(Checkpoint, RunHistory)>, _>>()?;
    let best = best_run_index(&runs)?;

    let mut out = OutputDir::create(spec.output.as_deref().expect("validated"))?;
    for ((ckpt, history), seed) in runs.iter().zip(&seeds) {
        out.write(&format!("seed-{seed}/model.pnlc"), &ckpt.to_bytes()?)?;
        out.write_json(&format!("seed-{seed}/history.json"), history)?;
    }
    out.write("model.pnlc", &runs[best].0.to_bytes()?)?;
    let selection = Selection {
        selected_seed: seeds[best],
        runs: runs
            .iter()
            .zip(&seeds)
            .map(|((ckpt, h), &seed)| SeedResult {
                seed,
                dev_score: ckpt.selection_score(),
                best_epoch: h.best_epoch,
                epochs_run: h.epochs.iter().filter(|e| e.train_loss.is_some()).count(),
            })
            .collect(),
    };
    out.write_json("selection.json", &selection)?;

    let mut input_paths: Vec<&Path> = spec.data.iter().map(PathBuf::as_path).collect();
    input_paths.extend(spec.init.as_deref());
    let inputs = digest_inputs(&input_paths)?;
    let config = serde_json::to_value(ExperimentSpec { output: None, ..spec.clone() }).map_err(anyhow::Error::from)?;
    let root = out.root().to_path_buf();
    out.finish(command, config, spec.seed, inputs)?;
    let chosen = &selection.runs[best];
    println!("selected seed {} (dev {:.4}, epoch {}) -> {}", chosen.seed, chosen.dev_score, chosen.best_epoch, root.join("model.pnlc").display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let tagset = load_tagset(a.tagset.as_deref(), &a.data)?;
    let corpora = load_corpora(&a.data, &tagset)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let reports = corpora.iter().map(|c| evaluate(&ckpt, c, a.split)).collect::<Result<Vec<_>, _>>()?;
    let mut tsv = String::new();
    for r in &reports {
        tsv.push_str(&r.tsv_line());
        if r.zero_shot {
            tsv.push_str("\tzero-shot");
        }
        tsv.push('\n');
    }
    print!("{tsv}");
    if let Some(dir) = &a.out {
        let mut out = OutputDir::create(dir)?;
        out.write_json("eval.json", &reports)?;
        out.write("eval.tsv", tsv.as_bytes())?;
        finish_analysis(out, "eval", json!({ "split": a.split, "data": a.data }), None, &a.ckpt, &a.data)?;
    }
    Ok(())
}

fn finish_analysis(out: OutputDir, command: &str, config: serde_json::Value, seed: Option<u64>, ckpt: &Path, data: &[PathBuf]) -> CliResult<()> {
    let mut paths: Vec<&Path> = vec![ckpt];
    paths.extend(data.iter().map(PathBuf::as_path));
    let inputs = digest_inputs(&paths)?;
    out.finish(command, config, seed, inputs)?;
    Ok(())
}

pub fn prune_sweep(a: &PruneArgs) -> CliResult<()> {
    let tagset = load_tagset(a.tagset.as_deref(), &a.data)?;
    let corpora = load_corpora(&a.data, &tagset)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let fractions = a.fractions.clone().unwrap_or_else(analysis::prune::default_fractions);
    let refs: Vec<&LabeledCorpus> = corpora.iter().collect();
    let curve = analysis::prune_sweep(&ckpt, &refs, a.split, &fractions)?;
    let thresholds = corpora
        .iter()
        .map(|c| {
            let lang = c.language().to_string();
            overprune_threshold(&curve, &lang, a.delta).map(|t| (lang, t))
        })
        .collect::<Result<std::collections::BTreeMap<_, _>, _>>()?;
    for (lang, t) in &thresholds {
        println!("{lang}\tover-prune threshold {t}");
    }
    let mut out = OutputDir::create(&a.out)?;
    out.write("curve.csv", curve.to_csv().as_bytes())?;
    out.write("curve.gp", curve.to_gnuplot().as_bytes())?;
    out.write_json("curve.json", &curve)?;
    out.write_json("thresholds.json", &thresholds)?;
    let config = json!({ "split": a.split, "data": a.data, "fractions": fractions, "delta": a.delta });
    finish_analysis(out, "prune-sweep", config, None, &a.ckpt, &a.data)
}

pub fn fisher(a: &FisherArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(usage("--samples must be >= 1"));
    }
    let data = [a.data.clone()];
    let tagset = load_tagset(a.tagset.as_deref(), &data)?;
    let corpus = load_corpus(&a.data, &tagset)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let diag = analysis::fisher_diagonal(&ckpt, &corpus, a.samples, a.seed)?;
    let mut out = OutputDir::create(&a.out)?;
    out.write_json("fisher.json", &diag)?;
    let config = json!({ "data": a.data, "samples": a.samples });
    finish_analysis(out, "fisher", config, Some(a.seed), &a.ckpt, &data)?;
    println!("fisher diagonal for {} over {} sentences -> {}", diag.language, diag.examples, a.out.join("fisher.json").display());
    Ok(())
}

pub fn fisher_overlap(a: &OverlapArgs) -> CliResult<()> {
    if a.fisher.len() < 2 {
        return Err(usage("fisher-overlap needs at least two --fisher files"));
    }
    if a.vs_rest && a.fisher.len() < 3 {
        return Err(usage("--vs-rest needs at least three --fisher files"));
    }
    if a.ks.iter().any(|&k| !(k > 0.0 && k <= 100.0)) {
        return Err(usage("--ks values must be in (0, 100]"));
    }
    let diags = a
        .fisher
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading {}: {e}", p.display()))?;
            serde_json::from_str::<FisherDiagonal>(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let reports: Vec<OverlapReport> = if a.vs_rest {
        language_vs_rest(&diags, &a.ks)?
    } else {
        let mut r = Vec::new();
        for i in 0..diags.len() {
            for j in i + 1..diags.len() {
                r.push(topk_overlap(&diags[i], &diags[j], &a.ks)?);
            }
        }
        r
    };
    let mut csv = String::from("a,b,layer,k,overlap\n");
    for r in &reports {
        csv.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        println!("{} vs {}: {:?}", r.a, r.b, r.average);
    }
    let mut out = OutputDir::create(&a.out)?;
    out.write("overlap.csv", csv.as_bytes())?;
    out.write_json("overlap.json", &reports)?;
    let paths: Vec<&Path> = a.fisher.iter().map(PathBuf::as_path).collect();
    let inputs = digest_inputs(&paths)?;
    out.finish("fisher-overlap", json!({ "ks": a.ks, "vs_rest": a.vs_rest, "fisher": a.fisher }), None, inputs)?;
    Ok(())
}

fn predicted_labels(ckpt: &Checkpoint, corpus: &LabeledCorpus, split: Split) -> CliResult<Vec<Vec<usize>>> {
    let tagger = ckpt.tagger()?;
    Ok(corpus.split(split).iter().map(|s| tagger.predict_labels(&ckpt.params, s)).collect::<Result<_, _>>()?)
}

pub fn errors(a: &ErrorsArgs) -> CliResult<()> {
    let data = [a.data.clone()];
    let tagset = load_tagset(a.tagset.as_deref(), &data)?;
    let corpus = load_corpus(&a.data, &tagset)?;
    if corpus.split(a.split).is_empty() {
        return Err(polyglot_ner::Error::EmptySplit(a.split.to_string()).into());
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let predicted = predicted_labels(&ckpt, &corpus, a.split)?;
    let reference = a.reference.as_deref().map(load_checkpoint).transpose()?;
    let reference = reference.map(|r| predicted_labels(&r, &corpus, a.split)).transpose()?;
    let report = error_counts(corpus.split(a.split), &predicted, reference.as_deref(), &tagset)?;
    print!("{}", report.to_csv());
    let mut out = OutputDir::create(&a.out)?;
    out.write("errors.csv", report.to_csv().as_bytes())?;
    out.write_json("errors.json", &report)?;
    let mut paths = data.to_vec();
    paths.extend(a.reference.clone());
    finish_analysis(out, "errors", json!({ "split": a.split, "data": a.data, "reference": a.reference }), None, &a.ckpt, &paths)
}

pub fn common_entities(a: &CommonArgs) -> CliResult<()> {
    let data = [a.data.clone()];
    let tagset = load_tagset(a.tagset.as_deref(), &data)?;
    let corpus = load_corpus(&a.data, &tagset)?;
    let others = load_corpora(&a.other, &tagset)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let gold = corpus.split(a.split);
    if gold.is_empty() {
        return Err(polyglot_ner::Error::EmptySplit(a.split.to_string()).into());
    }
    let predicted = predict_all(&ckpt.tagger()?, &ckpt.params, &tagset, gold)?;
    let (precision_errors, recall_errors) = span_errors(gold, &predicted, &tagset)?;
    let other_train: Vec<_> = others.iter().flat_map(|c| entity_mentions(c.train(), &tagset)).collect();
    let report = common_entity_rate(&precision_errors, &recall_errors, &other_train);
    print!("{}", report.to_csv());
    let mut out = OutputDir::create(&a.out)?;
    out.write("common.csv", report.to_csv().as_bytes())?;
    out.write_json("common.json", &report)?;
    let mut paths = data.to_vec();
    paths.extend(a.other.iter().cloned());
    finish_analysis(out, "common-entities", json!({ "split": a.split, "data": a.data, "other": a.other }), None, &a.ckpt, &paths)
}

/// The split's sentences joined by newlines, with gold spans as byte spans
/// of that stream.
pub fn split_stream(corpus: &LabeledCorpus, split: Split) -> (Vec<u8>, Vec<ByteSpan>) {
    let mut stream = Vec::new();
    let mut spans = Vec::new();
    for (i, s) in corpus.split(split).iter().enumerate() {
        if i > 0 {
            stream.push(b'\n');
        }
        let gold = polyglot_ner::corpus::extract_spans(&s.labels(), corpus.tagset());
        let (text, byte_spans) = bts_codec::sentence_byte_spans(s, &gold);
        let base = stream.len();
        spans.extend(byte_spans.into_iter().map(|b| ByteSpan { start: b.start + base, ..b }));
        stream.extend_from_slice(&text);
    }
    (stream, spans)
}

pub fn bts_encode(a: &BtsEncodeArgs) -> CliResult<()> {
    let stride = a.stride.unwrap_or(a.window);
    if a.window == 0 || stride == 0 {
        return Err(usage("--window and --stride must be >= 1"));
    }
    let data = [a.data.clone()];
    let tagset = load_tagset(a.tagset.as_deref(), &data)?;
    let corpus = load_corpus(&a.data, &tagset)?;
    let (stream, spans) = split_stream(&corpus, a.split);
    let mut targets = String::new();
    for w in bts_codec::window_stream(&stream, a.window, stride)? {
        let symbols = bts_codec::encode_spans(&w, &spans)?;
        targets.push_str(&bts_codec::format_line(&w, &symbols));
        targets.push('\n');
    }
    let mut out = OutputDir::create(&a.out)?;
    out.write("stream.txt", &stream)?;
    out.write("targets.txt", targets.as_bytes())?;
    out.write_json("spans.json", &spans)?;
    let inputs = digest_inputs(&[a.data.as_path()])?;
    out.finish("bts-encode", json!({ "data": a.data, "split": a.split, "window": a.window, "stride": stride }), None, inputs)?;
    println!("{} bytes, {} spans -> {}", stream.len(), spans.len(), a.out.join("targets.txt").display());
    Ok(())
}

#[derive(Serialize)]
struct DecodedSpan {
    #[serde(flatten)]
    span: ByteSpan,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

pub fn bts_decode(a: &BtsDecodeArgs) -> CliResult<()> {
    if a.window == 0 {
        return Err(usage("--window must be >= 1"));
    }
    let text = std::fs::read_to_string(&a.targets).map_err(|e| anyhow::anyhow!("reading {}: {e}", a.targets.display()))?;
    let stream = a.stream.as_deref().map(std::fs::read).transpose().map_err(|e| anyhow::anyhow!("reading stream: {e}"))?;
    let mut per_window = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (offset, symbols) = bts_codec::parse_line(line).map_err(|e| anyhow::anyhow!("{} line {}: {e}", a.targets.display(), n + 1))?;
        let bytes = match &stream {
            Some(s) => s[offset.min(s.len())..(offset + a.window).min(s.len())].to_vec(),
            None => vec![0; a.window],
        };
        per_window.push(bts_codec::decode_targets(&symbols, &ByteWindow { bytes, global_offset: offset, window_size: a.window }));
    }
    let spans: Vec<DecodedSpan> = bts_codec::merge_window_spans(&per_window)
        .into_iter()
        .map(|span| {
            let text = stream.as_ref().map(|s| String::from_utf8_lossy(&s[span.start..span.end()]).into_owned());
            DecodedSpan { span, text }
        })
        .collect();
    let mut out = OutputDir::create(&a.out)?;
    out.write_json("spans.json", &spans)?;
    let mut paths = vec![a.targets.as_path()];
    paths.extend(a.stream.as_deref());
    let inputs = digest_inputs(&paths)?;
    out.finish("bts-decode", json!({ "window": a.window }), None, inputs)?;
    println!("{} spans -> {}", spans.len(), a.out.join("spans.json").display());
    Ok(())
}
