use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sra_core::corpus::{self, generate_synthetic, Dataset, SplitAssignment, SplitName, SyntheticSpec};
use sra_core::explain::{self, ExtractionStrategy, Heatmap};
use sra_core::metrics::{self, MetricsReport};
use sra_core::model::checkpoint::{self, CheckpointManifest};
use sra_core::model::{self, HeadSelection, Parameters};
use sra_core::pipeline::{self, Experiment, Prepared, SeedRun, Splits};
use sra_core::textproc::Vocabulary;
use sra_core::trainer::{multi_seed_run, AggregateReport, PreparedExample};

use crate::data::{self, DatasetRecord};
use crate::output::Staging;
use crate::settings::Settings;
use crate::{AblateArgs, Cli, Command, EvalArgs, ExplainArgs, SynthArgs, TrainArgs, Which};

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    profile: &'a str,
    seeds: Vec<u64>,
    settings: &'a Settings,
    datasets: Vec<DatasetRecord>,
    split: Option<SplitRecord>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct SplitRecord {
    source: String,
    sizes: [usize; 3],
}

impl SplitRecord {
    fn new(split: &SplitAssignment, file: Option<&Path>) -> Self {
        Self {
            source: file.map_or_else(|| format!("stratified, seed {}", split.seed), |p| p.display().to_string()),
            sizes: [split.train.len(), split.validation.len(), split.test.len()],
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Explain(_) => "explain",
        Command::Ablate(_) => "ablate",
    };
    let settings = Settings::resolve(cli.config.as_deref(), cli.profile.as_deref(), cli.seed)?;
    let mut out = Staging::new(&cli.out_dir)?;
    let result = match &cli.command {
        Command::Synth(a) => synth(&settings, a, &mut out),
        Command::Train(a) => train(&settings, a, &mut out),
        Command::Eval(a) => eval(cli, &settings, a, &mut out),
        Command::Explain(a) => explain_cmd(cli, &settings, a, &mut out),
        Command::Ablate(a) => ablate(&settings, a, &mut out),
    };
    match result {
        Ok(()) => {
            out.commit()?;
            Ok(())
        }
        Err(e) => {
            if let Some(q) = out.quarantine(name) {
                eprintln!("partial outputs kept in {}", q.display());
            }
            Err(e.context(format!("`{name}` failed")))
        }
    }
}

fn manifest(
    out: &mut Staging,
    command: &str,
    settings: &Settings,
    seeds: Vec<u64>,
    datasets: Vec<DatasetRecord>,
    split: Option<SplitRecord>,
) -> Result<()> {
    let mut outputs = out.names().to_vec();
    outputs.sort();
    let m = Manifest {
        tool: "sra",
        version: env!("CARGO_PKG_VERSION"),
        command,
        profile: &settings.profile,
        seeds,
        settings,
        datasets,
        split,
        outputs,
    };
    out.write("manifest.json", serde_json::to_string_pretty(&m)? + "\n")
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn synth(settings: &Settings, a: &SynthArgs, out: &mut Staging) -> Result<()> {
    let spec = SyntheticSpec::with_classes(a.classes, 0, settings.seed);
    let sizes = [a.train, a.validation, a.test];
    let ds = generate_synthetic(&SyntheticSpec { num_examples: sizes.iter().sum(), ..spec })?;
    let ids = |from: usize, to: usize| -> BTreeSet<String> {
        ds.examples[from..to].iter().map(|e| e.id.clone()).collect()
    };
    let (b1, b2, n) = (a.train, a.train + a.validation, ds.len());
    let split = SplitAssignment {
        train: ids(0, b1),
        validation: ids(b1, b2),
        test: ids(b2, n),
        seed: settings.seed,
        ratios: sizes.map(|s| s as f64 / n.max(1) as f64),
    };
    corpus::io::write_dataset(&ds, out.path("dataset.jsonl")?)?;
    corpus::io::write_split(&split, out.path("split.json")?)?;
    let rec = data::record(Path::new("dataset.jsonl"), &ds);
    println!("{} examples, {} classes, sha256 {}", ds.len(), ds.num_classes, rec.sha256);
    manifest(out, "synth", settings, vec![settings.seed], vec![rec], Some(SplitRecord::new(&split, None)))
}

struct Loaded {
    dataset: Dataset,
    split: SplitAssignment,
    record: DatasetRecord,
}

fn load_with_split(settings: &Settings, d: &crate::DataArgs) -> Result<Loaded> {
    let dataset = data::load(&d.data, d.format)?;
    let split = data::split(&dataset, d.split.as_deref(), settings.data.split_ratios, settings.seed)?;
    let record = data::record(&d.data, &dataset);
    Ok(Loaded { dataset, split, record })
}

fn write_seed_run(out: &mut Staging, prefix: &str, run: &SeedRun, alpha: f64, vocab: &Vocabulary) -> Result<()> {
    let ck = CheckpointManifest { seed: run.seed, alpha, epoch: run.history.best_epoch };
    checkpoint::save(&run.params, &ck, out.path(&format!("{prefix}checkpoint.json"))?)?;
    vocab.save(out.path(&format!("{prefix}vocab.txt"))?)?;
    out.write(&format!("{prefix}history.json"), json(&run.history)?)?;
    out.write(&format!("{prefix}report.json"), json(&run.report)?)?;
    metrics::write_instance_evals(&run.evals, out.path(&format!("{prefix}predictions.jsonl"))?)?;
    Ok(())
}

fn print_report(label: &str, r: &MetricsReport) {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{label}: acc {:.4}  macro-F1 {:.4}  AUROC {}  IoU-F1 {:.4}  token-F1 {:.4}  AUPRC {}  comp {}  suff {}  GMB-sub {}",
        r.accuracy,
        r.macro_f1,
        opt(r.auroc),
        r.iou_f1,
        r.token_f1,
        opt(r.auprc),
        opt(r.comprehensiveness),
        opt(r.sufficiency),
        opt(r.gmb_subgroup),
    );
}

fn seeds_or_default(seeds: &[u64], settings: &Settings) -> Vec<u64> {
    if seeds.is_empty() {
        vec![settings.seed]
    } else {
        seeds.to_vec()
    }
}

fn train(settings: &Settings, a: &TrainArgs, out: &mut Staging) -> Result<()> {
    let mut settings = settings.clone();
    if let Some(alpha) = a.alpha {
        settings.train.alpha = alpha;
    }
    settings.train.validate()?;
    let loaded = load_with_split(&settings, &a.data)?;
    let splits = Splits::from_assignment(&loaded.dataset, &loaded.split);
    let data = Prepared::new(&splits, settings.train.max_len, settings.data.min_freq)?;
    let exp = settings.experiment();
    let seeds = seeds_or_default(&a.seeds, &settings);
    corpus::io::write_split(&loaded.split, out.path("split.json")?)?;

    if seeds.len() == 1 {
        let run = exp.run_seed(&data, seeds[0])?;
        write_seed_run(out, "", &run, settings.train.alpha, &data.vocab)?;
        print_report(&format!("seed {} (best epoch {})", run.seed, run.history.best_epoch), &run.report);
    } else {
        let agg = multi_seed_run(&seeds, |seed| {
            let run = exp.run_seed(&data, seed)?;
            write_seed_run(out, &format!("seed-{seed}/"), &run, settings.train.alpha, &data.vocab)
                .map_err(|e| sra_core::Error::Other(format!("{e:#}")))?;
            print_report(&format!("seed {seed}"), &run.report);
            Ok(run.report)
        })?;
        out.write("aggregate.json", json(&agg)?)?;
        print!("{}", summary_table(&agg));
        if agg.partial {
            eprintln!("warning: some seeds failed; see aggregate.json");
        }
    }
    let split = SplitRecord::new(&loaded.split, a.data.split.as_deref());
    manifest(out, "train", &settings, seeds, vec![loaded.record], Some(split))
}

fn summary_table(agg: &AggregateReport) -> String {
    let mut s = String::from("metric\tmean\tstd\tn\n");
    for (k, v) in &agg.summary {
        let std = v.std.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
        let _ = writeln!(s, "{k}\t{:.4}\t{std}\t{}", v.mean, v.n);
    }
    s
}

struct RunDir {
    params: Parameters,
    vocab: Vocabulary,
    split: SplitAssignment,
    settings: Option<Settings>,
}

fn open_run(dir: &Path) -> Result<RunDir> {
    let (params, _) = checkpoint::load(dir.join("checkpoint.json"))
        .with_context(|| format!("{} is not a single-seed training run", dir.display()))?;
    let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
    let split = corpus::io::read_split(dir.join("split.json"))?;
    if params.config.vocab_size != vocab.len() {
        bail!("checkpoint expects {} vocabulary entries, vocab.txt has {}", params.config.vocab_size, vocab.len());
    }
    let settings = std::fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|raw| serde_json::from_str::<serde_json::Value>(&raw).ok())
        .and_then(|v| serde_json::from_value(v["settings"].clone()).ok());
    Ok(RunDir { params, vocab, split, settings })
}

/// Settings from the command line when any were given, else the run's own.
fn effective(cli: &Cli, resolved: &Settings, run: &RunDir) -> Settings {
    let explicit = cli.config.is_some() || cli.profile.is_some();
    match (&run.settings, explicit) {
        (Some(s), false) => s.clone(),
        _ => resolved.clone(),
    }
}

fn select_split(run: &RunDir, ds: &Dataset, which: Which) -> Result<Vec<PreparedExample>> {
    let name = match which {
        Which::Train => SplitName::Train,
        Which::Validation => SplitName::Validation,
        Which::Test => SplitName::Test,
    };
    let subset = ds.subset(run.split.ids(name));
    if subset.len() != run.split.ids(name).len() {
        bail!(
            "the dataset is missing {} of the split's ids",
            run.split.ids(name).len() - subset.len()
        );
    }
    if subset.num_classes != run.params.config.num_classes {
        bail!("dataset has {} classes, model {}", subset.num_classes, run.params.config.num_classes);
    }
    Ok(pipeline::prepare(&subset, &run.vocab, run.params.config.max_len))
}

fn eval(cli: &Cli, resolved: &Settings, a: &EvalArgs, out: &mut Staging) -> Result<()> {
    if let Some(preds) = &a.offline {
        let classes = a.classes.context("--offline needs --classes")?;
        // stored faithfulness came from a model this mode does not load
        let mut evals = metrics::read_instance_evals(preds)?;
        evals.iter_mut().for_each(|e| e.faithfulness = None);
        let report = MetricsReport::compute(&evals, classes, &resolved.eval.report)?;
        out.write("report.json", report.to_json()? + "\n")?;
        print_report("offline", &report);
        return manifest(out, "eval", resolved, vec![], vec![], None);
    }
    let (run_dir, data_path) = (a.run.as_deref().unwrap(), a.data.as_deref().unwrap());
    let run = open_run(run_dir)?;
    let settings = effective(cli, resolved, &run);
    let ds = data::load(data_path, a.format)?;
    let examples = select_split(&run, &ds, a.which)?;
    let evals = pipeline::evaluate(&run.params, &examples, &settings.eval)?;
    let report = MetricsReport::compute(&evals, run.params.config.num_classes, &settings.eval.report)?;
    out.write("report.json", report.to_json()? + "\n")?;
    metrics::write_instance_evals(&evals, out.path("predictions.jsonl")?)?;
    print_report(&format!("{:?}", a.which).to_lowercase(), &report);
    let rec = data::record(data_path, &ds);
    manifest(out, "eval", &settings, vec![], vec![rec], Some(SplitRecord::new(&run.split, None)))
}

#[derive(Serialize)]
struct RationaleLine<'a> {
    id: &'a str,
    label: usize,
    predicted: usize,
    tokens: Vec<String>,
    attention: Vec<f64>,
    rationale: Vec<usize>,
    gold: Vec<usize>,
}

fn explain_cmd(cli: &Cli, resolved: &Settings, a: &ExplainArgs, out: &mut Staging) -> Result<()> {
    let run = open_run(&a.run)?;
    let settings = effective(cli, resolved, &run);
    let strategy: ExtractionStrategy = match &a.strategy {
        Some(s) => s.parse()?,
        None => settings.eval.strategy,
    };
    let ds = data::load(&a.data, a.format)?;
    let mut examples = select_split(&run, &ds, a.which)?;
    if a.ids.is_empty() {
        examples.truncate(a.limit);
    } else {
        let known: BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
        if let Some(missing) = a.ids.iter().find(|id| !known.contains(id.as_str())) {
            bail!("id `{missing}` is not in the {:?} split", a.which);
        }
        examples.retain(|e| a.ids.contains(&e.id));
    }

    let mut lines = String::new();
    let mut rows = Vec::new();
    for ex in &examples {
        let fwd = model::forward(&run.params, &ex.enc, None)?;
        let scores = explain::content_scores(&fwd.cls_attention, &ex.enc);
        let tokens: Vec<String> = ex
            .enc
            .content_positions()
            .map(|p| ex.enc.word_index[p].map_or_else(|| "?".into(), |w| ex.words[w].clone()))
            .collect();
        let rationale = explain::select(&scores, strategy);
        let gold_pos: BTreeSet<usize> = ex.rationale.positions().into_iter().collect();
        let gold = explain::to_content_indices(&gold_pos, &ex.enc);
        let line = RationaleLine {
            id: &ex.id,
            label: ex.label,
            predicted: model::argmax(&fwd.probabilities),
            tokens,
            attention: scores,
            rationale: rationale.into_iter().collect(),
            gold: gold.iter().copied().collect(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
        rows.push((line, gold));
    }
    let titles: Vec<String> = rows
        .iter()
        .map(|(l, _)| format!("{} (gold {}, predicted {})", l.id, l.label, l.predicted))
        .collect();
    let maps: Vec<Heatmap<'_>> = rows
        .iter()
        .zip(&titles)
        .map(|((l, gold), title)| Heatmap { title, tokens: &l.tokens, scores: &l.attention, gold: Some(gold) })
        .collect();
    if !a.quiet {
        for m in &maps {
            print!("{}", explain::render_terminal(m));
        }
    }
    out.write("heatmap.html", explain::render_html(&maps))?;
    out.write("rationales.jsonl", lines)?;
    let rec = data::record(&a.data, &ds);
    manifest(out, "explain", &settings, vec![], vec![rec], None)
}

#[derive(Serialize)]
struct AblationRow {
    alpha: f64,
    layer: usize,
    head: HeadSelection,
    seeds: Vec<u64>,
    report: Option<MetricsReport>,
    aggregate: Option<AggregateReport>,
}

const ABLATION_COLUMNS: [&str; 6] = ["macro_f1", "iou_f1", "token_f1", "auprc", "comprehensiveness", "sufficiency"];

fn ablate(settings: &Settings, a: &AblateArgs, out: &mut Staging) -> Result<()> {
    let loaded = load_with_split(settings, &a.data)?;
    let splits = Splits::from_assignment(&loaded.dataset, &loaded.split);
    let data = Prepared::new(&splits, settings.train.max_len, settings.data.min_freq)?;
    let layers = if a.layers.is_empty() { vec![settings.model.supervision_layer] } else { a.layers.clone() };
    let heads: Vec<HeadSelection> = if a.head.is_empty() {
        vec![settings.model.supervision_head]
    } else {
        a.head.iter().map(|h| h.parse()).collect::<Result<_, _>>()?
    };
    let seeds = seeds_or_default(&a.seeds, settings);

    let mut table = format!("alpha\tlayer\thead\t{}\n", ABLATION_COLUMNS.join("\t"));
    let mut rows = Vec::new();
    for &layer in &layers {
        for &head in &heads {
            for &alpha in &a.alpha {
                let mut exp: Experiment = settings.experiment();
                exp.model.supervision_layer = layer;
                exp.model.supervision_head = head;
                exp.train.alpha = alpha;
                exp.train.validate()?;
                exp.model_for(&data, seeds[0]).validate()?;
                let (report, aggregate) = if seeds.len() == 1 {
                    (Some(exp.run_seed(&data, seeds[0])?.report), None)
                } else {
                    (None, Some(multi_seed_run(&seeds, |s| Ok(exp.run_seed(&data, s)?.report))?))
                };
                let cells: Vec<String> = ABLATION_COLUMNS
                    .iter()
                    .map(|c| cell(c, report.as_ref(), aggregate.as_ref()))
                    .collect();
                let line = format!("{alpha}\t{layer}\t{head}\t{}\n", cells.join("\t"));
                print!("{line}");
                table.push_str(&line);
                rows.push(AblationRow { alpha, layer, head, seeds: seeds.clone(), report, aggregate });
            }
        }
    }
    out.write("ablation.json", json(&rows)?)?;
    out.write("ablation.tsv", table)?;
    let split = SplitRecord::new(&loaded.split, a.data.split.as_deref());
    manifest(out, "ablate", settings, seeds, vec![loaded.record], Some(split))
}

fn cell(metric: &str, report: Option<&MetricsReport>, agg: Option<&AggregateReport>) -> String {
    if let Some(r) = report {
        return r
            .scalars()
            .into_iter()
            .find(|(k, _)| *k == metric)
            .and_then(|(_, v)| v)
            .map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
    }
    match agg.and_then(|a| a.summary.get(metric)) {
        Some(s) => match s.std {
            Some(sd) => format!("{:.4}±{sd:.4}", s.mean),
            None => format!("{:.4}", s.mean),
        },
        None => "n/a".into(),
    }
}
