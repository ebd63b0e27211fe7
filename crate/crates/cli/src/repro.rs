//! The desk-scale pipeline: generate a suite, train monolingual, polyglot and
//! fine-tuned models over several seeds, then run every analysis on the
//! selected models.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use polyglot_ner::analysis::{
    self, common_entity_rate, entity_mentions, error_counts, language_vs_rest, overprune_threshold, span_errors, CommonEntityReport,
    Mention, ParameterBudget,
};
use polyglot_ner::bts_codec;
use polyglot_ner::corpus::{concat_polyglot, LabeledCorpus, Split};
use polyglot_ner::evaluation::{evaluate, predict_all};
use polyglot_ner::numerics::adam::AdamConfig;
use polyglot_ner::syncorpus::{generate, GeneratedSuite, SynthConfig};
use polyglot_ner::taggers::{HierCrfConfig, ModelConfig};
use polyglot_ner::training::{self, Checkpoint, RunHistory, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::split_stream;
use crate::manifest::OutputDir;
use crate::spec::read_config;
use crate::{usage, CliResult, ReproArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub fisher_samples: usize,
    pub fisher_seed: u64,
    pub prune_fractions: Vec<f64>,
    pub overlap_ks: Vec<f64>,
    /// F1 points the selected fine-tuned model may lose against the
    /// selected monolingual one.
    pub max_degradation: f64,
    pub overprune_delta: f64,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            synth: SynthConfig::default(),
            model: ModelConfig::HiercrfByte(HierCrfConfig::toy(8)),
            adam: AdamConfig::default(),
            max_epochs: 100,
            patience: 10,
            seeds: (1..=5).collect(),
            fisher_samples: 200,
            fisher_seed: 1,
            prune_fractions: analysis::prune::default_fractions(),
            overlap_ks: analysis::DEFAULT_KS.to_vec(),
            max_degradation: 1.0,
            overprune_delta: 1.0,
        }
    }
}

impl ReproConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: self.adam,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seeds: self.seeds.clone(),
            ..TrainConfig::new(self.model.clone())
        }
    }

    pub fn validate(&self) -> polyglot_ner::Result<()> {
        self.synth.validate()?;
        self.train_config().validate()?;
        if self.synth.languages.len() < 2 {
            return Err(polyglot_ner::Error::InvalidConfig("the pipeline needs at least 2 languages".into()));
        }
        if self.fisher_samples == 0 {
            return Err(polyglot_ner::Error::InvalidConfig("fisher_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub regime: String,
    pub language: String,
    pub seed: u64,
    pub dev_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub seed: u64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSummary {
    pub language: String,
    pub median_mono: f64,
    pub median_polyglot: f64,
    pub median_finetune: f64,
    pub selected_mono: Selected,
    pub selected_finetune: Selected,
    /// Largest per-seed drop of fine-tuned below monolingual F1, in points.
    pub worst_seed_drop: f64,
    pub median_holds: bool,
    pub selected_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub median_finetune_at_least_mono: bool,
    pub selected_finetune_within_tolerance: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub model: String,
    pub language: String,
    pub f1: f64,
    pub zero_shot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproSummary {
    pub languages: Vec<LanguageSummary>,
    pub direction: DirectionCheck,
    pub selected_polyglot_seed: u64,
    /// Over-pruning thresholds per model, then per language.
    pub overprune: BTreeMap<String, BTreeMap<String, f64>>,
    pub budget: ParameterBudget,
    /// Average top-k overlap of each language with the rest, per k.
    pub fisher_overlap: BTreeMap<String, Vec<f64>>,
    /// Manifest loop closure: exact-match common rate of the declared
    /// shared entities, per language.
    pub shared_entity_rate: BTreeMap<String, f64>,
    pub bts_roundtrip: bool,
    pub zero_shot: Vec<ZeroShot>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Treats each shared entity of the manifest that occurs in another
/// language's train split as an error of every language containing it, and
/// scores those errors against the other languages' train mentions.
pub fn shared_entity_loop(suite: &GeneratedSuite) -> BTreeMap<String, CommonEntityReport> {
    let tagset = suite.tagset();
    let mut out = BTreeMap::new();
    for (lang, _) in &suite.corpora {
        let lang = lang.as_str();
        let errors: Vec<Mention> = suite
            .manifest
            .shared
            .iter()
            .filter(|e| e.languages.iter().any(|l| l == lang) && e.train_languages.iter().any(|l| l != lang))
            .map(|e| Mention::new(&e.surface, &e.etype))
            .collect();
        let others: Vec<Mention> = suite
            .corpora
            .iter()
            .filter(|(l, _)| l.as_str() != lang)
            .flat_map(|(_, c)| entity_mentions(c.train(), &tagset))
            .collect();
        out.insert(lang.to_string(), common_entity_rate(&errors, &errors, &others));
    }
    out
}

fn exact_rate(report: &CommonEntityReport) -> f64 {
    report.rates.first().map_or(0.0, |r| r.recall_rate.min(r.precision_rate))
}

/// Encodes the dev stream of `corpus` window by window and checks that the
/// decoded spans are exactly the gold spans lying inside some window.
fn bts_roundtrip(corpus: &LabeledCorpus, window: usize) -> polyglot_ner::Result<bool> {
    let (stream, spans) = split_stream(corpus, Split::Dev);
    let windows = bts_codec::window_stream(&stream, window, window)?;
    let mut per_window = Vec::new();
    let mut expected = Vec::new();
    for w in &windows {
        let symbols = bts_codec::encode_spans(w, &spans)?;
        per_window.push(bts_codec::decode_targets(&symbols, w));
        let hi = w.global_offset + w.bytes.len();
        expected.extend(spans.iter().filter(|s| s.start >= w.global_offset && s.end() <= hi).cloned());
    }
    Ok(bts_codec::merge_window_spans(&per_window) == expected)
}

fn dev_f1(ckpt: &Checkpoint, corpus: &LabeledCorpus) -> polyglot_ner::Result<f64> {
    Ok(evaluate(ckpt, corpus, Split::Dev)?.micro.f1)
}

/// Runs everything, writing below `out_dir`.
pub fn run(config: &ReproConfig, out_dir: &Path) -> anyhow::Result<ReproSummary> {
    config.validate()?;
    let tc = config.train_config();
    let mut out = OutputDir::create(out_dir)?;

    let suite = generate(&config.synth)?;
    suite.write_to(&out.path("data"))?;
    out.record("data/tagset.json")?;
    out.record("data/manifest.json")?;
    let tagset = suite.tagset();
    let corpora: Vec<LabeledCorpus> = suite.corpora.values().cloned().collect();
    let langs: Vec<String> = corpora.iter().map(|c| c.language().to_string()).collect();
    let poly_data = concat_polyglot(corpora.clone(), tc.uniform_sampling)?;
    let seeds = &config.seeds;
    let (nl, ns) = (corpora.len(), seeds.len());

    log::info!("training {} monolingual and {} polyglot models", nl * ns, ns);
    let jobs: Vec<(usize, Option<usize>)> = (0..ns).flat_map(|s| (0..nl).map(move |l| (s, Some(l))).chain([(s, None)])).collect();
    let trained = jobs
        .par_iter()
        .map(|&(s, l)| match l {
            Some(l) => training::train(&tc, &corpora[l], seeds[s]),
            None => training::train(&tc, &poly_data, seeds[s]),
        })
        .collect::<polyglot_ner::Result<Vec<(Checkpoint, RunHistory)>>>()?;
    let stride = nl + 1;
    let mono = |s: usize, l: usize| &trained[s * stride + l];
    let poly = |s: usize| &trained[s * stride + nl];

    log::info!("fine-tuning {} models", nl * ns);
    let ft_jobs: Vec<(usize, usize)> = (0..ns).flat_map(|s| (0..nl).map(move |l| (s, l))).collect();
    let tuned = ft_jobs
        .par_iter()
        .map(|&(s, l)| training::finetune(&poly(s).0, &corpora[l], &tc, seeds[s]))
        .collect::<polyglot_ner::Result<Vec<_>>>()?;
    let ft = |s: usize, l: usize| &tuned[s * nl + l];

    let mut scores = Vec::new();
    let mut mono_f1 = vec![vec![0.0; ns]; nl];
    let mut poly_f1 = vec![vec![0.0; ns]; nl];
    let mut ft_f1 = vec![vec![0.0; ns]; nl];
    for s in 0..ns {
        let dir = format!("runs/seed-{}", seeds[s]);
        out.write(&format!("{dir}/polyglot.pnlc"), &poly(s).0.to_bytes()?)?;
        for l in 0..nl {
            out.write(&format!("{dir}/mono-{}.pnlc", langs[l]), &mono(s, l).0.to_bytes()?)?;
            out.write(&format!("{dir}/finetune-{}.pnlc", langs[l]), &ft(s, l).0.to_bytes()?)?;
            mono_f1[l][s] = dev_f1(&mono(s, l).0, &corpora[l])?;
            poly_f1[l][s] = dev_f1(&poly(s).0, &corpora[l])?;
            ft_f1[l][s] = dev_f1(&ft(s, l).0, &corpora[l])?;
            for (regime, f1, hist) in [
                ("mono", mono_f1[l][s], &mono(s, l).1),
                ("polyglot", poly_f1[l][s], &poly(s).1),
                ("finetune", ft_f1[l][s], &ft(s, l).1),
            ] {
                scores.push(RunScore { regime: regime.into(), language: langs[l].clone(), seed: seeds[s], dev_f1: f1, best_epoch: hist.best_epoch });
            }
        }
    }
    let mut csv = String::from("regime,language,seed,dev_f1,best_epoch\n");
    for r in &scores {
        csv.push_str(&format!("{},{},{},{},{}\n", r.regime, r.language, r.seed, r.dev_f1, r.best_epoch));
    }
    out.write("results.csv", csv.as_bytes())?;

    let mut summaries = Vec::new();
    let mut best_mono = Vec::new();
    let mut best_ft = Vec::new();
    for l in 0..nl {
        let (bm, bf) = (argmax(&mono_f1[l]), argmax(&ft_f1[l]));
        best_mono.push(bm);
        best_ft.push(bf);
        let (median_mono, median_finetune) = (median(&mono_f1[l]), median(&ft_f1[l]));
        let selected_mono = Selected { seed: seeds[bm], dev_f1: mono_f1[l][bm] };
        let selected_finetune = Selected { seed: seeds[bf], dev_f1: ft_f1[l][bf] };
        let worst_seed_drop = (0..ns).map(|s| 100.0 * (mono_f1[l][s] - ft_f1[l][s])).fold(f64::NEG_INFINITY, f64::max);
        summaries.push(LanguageSummary {
            language: langs[l].clone(),
            median_mono,
            median_polyglot: median(&poly_f1[l]),
            median_finetune,
            worst_seed_drop,
            median_holds: median_finetune >= median_mono,
            selected_holds: 100.0 * (selected_mono.dev_f1 - selected_finetune.dev_f1) <= config.max_degradation,
            selected_mono,
            selected_finetune,
        });
    }
    let direction = DirectionCheck {
        median_finetune_at_least_mono: summaries.iter().all(|s| s.median_holds),
        selected_finetune_within_tolerance: summaries.iter().all(|s| s.selected_holds),
        pass: summaries.iter().all(|s| s.median_holds && s.selected_holds),
    };
    let poly_runs: Vec<(Checkpoint, RunHistory)> = (0..ns).map(|s| poly(s).clone()).collect();
    let bp = training::best_run_index(&poly_runs)?;
    let best_poly = &poly_runs[bp].0;
    out.write("selected/polyglot.pnlc", &best_poly.to_bytes()?)?;
    for l in 0..nl {
        out.write(&format!("selected/mono-{}.pnlc", langs[l]), &mono(best_mono[l], l).0.to_bytes()?)?;
        out.write(&format!("selected/finetune-{}.pnlc", langs[l]), &ft(best_ft[l], l).0.to_bytes()?)?;
    }

    log::info!("pruning sweeps");
    let refs: Vec<&LabeledCorpus> = corpora.iter().collect();
    let mut sweeps = vec![("polyglot".to_string(), best_poly, refs.clone())];
    for l in 0..nl {
        sweeps.push((format!("mono-{}", langs[l]), &mono(best_mono[l], l).0, vec![&corpora[l]]));
    }
    let curves = sweeps
        .iter()
        .map(|(name, ckpt, data)| analysis::prune_sweep(ckpt, data, Split::Dev, &config.prune_fractions).map(|c| (name.clone(), c)))
        .collect::<polyglot_ner::Result<Vec<_>>>()?;
    let mut overprune = BTreeMap::new();
    for (name, curve) in &curves {
        out.write(&format!("prune/{name}.csv"), curve.to_csv().as_bytes())?;
        let t = curve
            .f1
            .keys()
            .map(|lang| overprune_threshold(curve, lang, config.overprune_delta).map(|t| (lang.clone(), t)))
            .collect::<polyglot_ner::Result<BTreeMap<_, _>>>()?;
        overprune.insert(name.clone(), t);
    }
    let poly_fraction = overprune["polyglot"].values().copied().fold(f64::INFINITY, f64::min);
    let mut budget_models: Vec<(String, &Checkpoint, f64)> = vec![("polyglot".into(), best_poly, poly_fraction)];
    for l in 0..nl {
        let name = format!("mono-{}", langs[l]);
        let fraction = overprune[&name][&langs[l]];
        budget_models.push((name, &mono(best_mono[l], l).0, fraction));
    }
    let budget_refs: Vec<(&str, &polyglot_ner::numerics::ParamStore, f64)> =
        budget_models.iter().map(|(n, c, f)| (n.as_str(), &c.params, *f)).collect();
    let budget = ParameterBudget::new(&budget_refs)?;
    out.write_json("prune/thresholds.json", &overprune)?;
    out.write_json("prune/budget.json", &budget)?;

    log::info!("fisher diagonals");
    let diags = corpora
        .par_iter()
        .map(|c| analysis::fisher_diagonal(best_poly, c, config.fisher_samples, config.fisher_seed))
        .collect::<polyglot_ner::Result<Vec<_>>>()?;
    for d in &diags {
        out.write_json(&format!("fisher/{}.json", d.language), d)?;
    }
    let overlaps = language_vs_rest(&diags, &config.overlap_ks)?;
    let mut csv = String::from("a,b,layer,k,overlap\n");
    let mut fisher_overlap = BTreeMap::new();
    for r in &overlaps {
        csv.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        fisher_overlap.insert(r.a.clone(), r.average.clone());
    }
    out.write("fisher/overlap.csv", csv.as_bytes())?;

    log::info!("error analyses");
    for l in 0..nl {
        let (tuned, reference) = (&ft(best_ft[l], l).0, &mono(best_mono[l], l).0);
        let dev = corpora[l].dev();
        let labels = |c: &Checkpoint| -> polyglot_ner::Result<Vec<Vec<usize>>> {
            let tagger = c.tagger()?;
            dev.iter().map(|s| tagger.predict_labels(&c.params, s)).collect()
        };
        let report = error_counts(dev, &labels(tuned)?, Some(&labels(reference)?), &tagset)?;
        out.write(&format!("errors/{}.csv", langs[l]), report.to_csv().as_bytes())?;
        let predicted = predict_all(&tuned.tagger()?, &tuned.params, &tagset, dev)?;
        let (p_err, r_err) = span_errors(dev, &predicted, &tagset)?;
        let others: Vec<Mention> = (0..nl).filter(|&m| m != l).flat_map(|m| entity_mentions(corpora[m].train(), &tagset)).collect();
        let common = common_entity_rate(&p_err, &r_err, &others);
        out.write(&format!("common/{}.csv", langs[l]), common.to_csv().as_bytes())?;
    }
    let shared_entity_rate: BTreeMap<String, f64> = shared_entity_loop(&suite).iter().map(|(l, r)| (l.clone(), exact_rate(r))).collect();

    let mut bts_ok = true;
    for c in &corpora {
        bts_ok &= bts_roundtrip(c, bts_codec::DEFAULT_WINDOW)?;
    }

    let mut zero_shot = Vec::new();
    for l in 0..nl {
        let model = &mono(best_mono[l], l).0;
        for (m, c) in corpora.iter().enumerate() {
            let r = evaluate(model, c, Split::Dev)?;
            zero_shot.push(ZeroShot { model: format!("mono-{}", langs[l]), language: langs[m].clone(), f1: r.micro.f1, zero_shot: r.zero_shot });
        }
    }

    let summary = ReproSummary {
        languages: summaries,
        direction,
        selected_polyglot_seed: seeds[bp],
        overprune,
        budget,
        fisher_overlap,
        shared_entity_rate,
        bts_roundtrip: bts_ok,
        zero_shot,
    };
    out.write_json("summary.json", &summary)?;
    out.finish("repro", serde_json::to_value(config)?, Some(config.synth.seed), Vec::new())?;
    Ok(summary)
}

pub fn run_cli(a: &ReproArgs) -> CliResult<()> {
    let mut config: ReproConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => ReproConfig::default(),
    };
    if let Some(s) = &a.seeds {
        config.seeds = s.clone();
    }
    if let Some(n) = a.max_epochs {
        config.max_epochs = n;
    }
    if let Some(n) = a.patience {
        config.patience = n;
    }
    if let Some(n) = a.fisher_samples {
        config.fisher_samples = n;
    }
    config.validate().map_err(usage)?;
    let summary = run(&config, &a.out).context("repro pipeline failed")?;
    println!("language\tmono\tpolyglot\tfinetune\tselected mono\tselected finetune");
    for s in &summary.languages {
        println!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            s.language, s.median_mono, s.median_polyglot, s.median_finetune, s.selected_mono.dev_f1, s.selected_finetune.dev_f1
        );
    }
    println!("direction check: {}", if summary.direction.pass { "PASS" } else { "FAIL" });
    Ok(())
}
