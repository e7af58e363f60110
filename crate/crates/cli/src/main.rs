use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dtparse::classtree::DEFAULT_WINDOW;
use dtparse::corpus::{
    build_vocabularies, line_of_offset, parse_treebank, split_corpus, strip_penn_annotations, CorpusError, RawTree,
    TreebankFormat, DEFAULT_UNK_THRESHOLD,
};
use dtparse::derivation::{DerivationContext, DEFAULT_MAX_UNARY};
use dtparse::headfinder::HeadRuleTable;
use dtparse::modelfile::{classes_from_bytes, classes_to_bytes, load_model, save_model, ClassFile, ModelFileError};
use dtparse::models::{build_class_trees, train_with, ModelConfig, TrainError};
use dtparse::parseval::{
    aggregate, per_length_csv, score_pair_with, sentence_tsv, ParsevalError, ParsevalOptions, DEFAULT_RANGES,
};
use dtparse::search::{parse, SearchConfig, SearchError, SearchStatus};

#[derive(Parser)]
#[command(name = "dtparse", version, about = "Decision-tree statistical parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Treebank notation: `underscore` (word_TAG leaves) or `penn`.
    #[arg(long, default_value = "underscore", global = true)]
    format: TreebankFormat,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Keep Penn function tags and empty elements.
    #[arg(long, global = true)]
    keep_annotations: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build word, tag and label class trees from a treebank.
    Classes {
        treebank: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        unk_threshold: Option<u64>,
        #[arg(long)]
        window: Option<usize>,
        /// Also write `id TAB symbol TAB bits` files into this directory.
        #[arg(long)]
        export: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Split the treebank, train the three models and write a model file.
    Train {
        treebank: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        head_rules: Option<PathBuf>,
        #[arg(long)]
        grow_fraction: Option<f64>,
        #[arg(long)]
        max_unary: Option<usize>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Parse one whitespace-tokenized sentence per line.
    Parse {
        #[arg(long, short)]
        model: PathBuf,
        /// Input file; standard input when absent.
        input: Option<PathBuf>,
        #[arg(long)]
        max_length: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        max_hypotheses: Option<usize>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Score parses against gold trees; prints the aggregate CSV.
    Eval {
        gold: PathBuf,
        test: PathBuf,
        /// Comma-separated inclusive length ranges, e.g. `4:40,4:25,10:20`.
        #[arg(long)]
        ranges: Option<String>,
        /// Write per-sentence scores here as TSV.
        #[arg(long)]
        sentences: Option<PathBuf>,
        #[arg(long)]
        exclude_root: bool,
        #[arg(long)]
        collapse_unary: bool,
        #[command(flatten)]
        shared: Shared,
    },
    /// Like `eval`, followed by a per-length CSV.
    Report {
        gold: PathBuf,
        test: PathBuf,
        #[arg(long)]
        ranges: Option<String>,
        /// Write the per-length CSV here instead of standard output.
        #[arg(long)]
        per_length: Option<PathBuf>,
        #[arg(long)]
        exclude_root: bool,
        #[arg(long)]
        collapse_unary: bool,
        #[command(flatten)]
        shared: Shared,
    },
}

/// Problems with the invocation rather than the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Data that does not line up: different sentence counts or words.
#[derive(Debug)]
struct AlignmentMismatch {
    line: usize,
    reason: String,
}

impl std::fmt::Display for AlignmentMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "alignment mismatch at sentence {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for AlignmentMismatch {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Every tunable, with defaults, overridden by `--config` then by flags.
#[derive(Debug, Clone)]
struct Settings {
    model: ModelConfig,
    search: SearchConfig,
    unk_threshold: u64,
    window: usize,
    max_unary: usize,
    grow_fraction: f64,
    seed: u64,
    workers: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: ModelConfig::default(),
            search: SearchConfig::default(),
            unk_threshold: DEFAULT_UNK_THRESHOLD,
            window: DEFAULT_WINDOW,
            max_unary: DEFAULT_MAX_UNARY,
            grow_fraction: 0.9,
            seed: 0,
            workers: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| usage(format!("bad value `{value}` for `{key}`")))
}

impl Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "beam_width" => self.search.beam_width = parse_value(key, value)?,
            "switch_threshold" => self.search.switch_threshold = parse_value(key, value)?,
            "max_hypotheses" => self.search.max_hypotheses = parse_value(key, value)?,
            "max_length" => self.search.max_length = parse_value(key, value)?,
            "min_events" => self.model.grow.min_events = parse_value(key, value)?,
            "min_gain" => self.model.grow.min_gain = parse_value(key, value)?,
            "max_depth" => self.model.grow.max_depth = parse_value(key, value)?,
            "em_max_iterations" => self.model.smooth.max_iterations = parse_value(key, value)?,
            "em_tolerance" => self.model.smooth.tolerance = parse_value(key, value)?,
            "renormalize" => self.model.renormalize = parse_value(key, value)?,
            "unk_threshold" => self.unk_threshold = parse_value(key, value)?,
            "window" => self.window = parse_value(key, value)?,
            "max_unary" => self.max_unary = parse_value(key, value)?,
            "grow_fraction" => self.grow_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            _ => return Err(usage(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    fn load(shared: &Shared) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = &shared.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
                s.set(k.trim(), v.trim()).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            }
        }
        if let Some(seed) = shared.seed {
            s.seed = seed;
        }
        Ok(s)
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_treebank(path: &Path, shared: &Shared) -> Result<Vec<RawTree>> {
    let text = read_input(path)?;
    let trees = parse_treebank(&text, shared.format).map_err(|e| {
        let at = match &e {
            CorpusError::UnbalancedBrackets { position }
            | CorpusError::EmptyConstituent { position }
            | CorpusError::BareLeaf { position } => Some(line_of_offset(&text, *position)),
            _ => None,
        };
        match at {
            Some(line) => anyhow::Error::new(e).context(format!("{}:{line}", path.display())),
            None => anyhow::Error::new(e).context(path.display().to_string()),
        }
    })?;
    let trees: Vec<RawTree> = if shared.format == TreebankFormat::Penn && !shared.keep_annotations {
        trees.iter().filter_map(strip_penn_annotations).collect()
    } else {
        trees
    };
    if trees.is_empty() {
        return Err(anyhow::Error::new(CorpusError::EmptyCorpus).context(path.display().to_string()));
    }
    Ok(trees)
}

fn cmd_classes(
    treebank: &Path,
    out: &Path,
    unk_threshold: Option<u64>,
    window: Option<usize>,
    export: Option<&Path>,
    shared: &Shared,
) -> Result<()> {
    let mut s = Settings::load(shared)?;
    if let Some(t) = unk_threshold {
        s.unk_threshold = t;
    }
    if let Some(w) = window {
        s.window = w;
    }
    let trees = read_treebank(treebank, shared)?;
    let vocab = build_vocabularies(&trees, s.unk_threshold)?;
    let classes = build_class_trees(&trees, &vocab, s.window)?;
    let file = ClassFile { vocab, classes };
    fs::write(out, classes_to_bytes(&file)).with_context(|| format!("writing {}", out.display()))?;
    if let Some(dir) = export {
        fs::create_dir_all(dir)?;
        let v = &file.vocab;
        fs::write(dir.join("words.txt"), file.classes.words.export_text(|i| v.words.symbol(i).to_string()))?;
        fs::write(dir.join("tags.txt"), file.classes.tags.export_text(|i| v.tags.symbol(i).to_string()))?;
        let n_labels = v.labels.len() as u32;
        let label_name =
            |i: u32| if i == n_labels { "<tagged-leaf>".to_string() } else { v.labels.symbol(i).to_string() };
        fs::write(dir.join("labels.txt"), file.classes.labels.export_text(label_name))?;
    }
    let c = &file.classes;
    println!("sentences\t{}", trees.len());
    println!("words\t{}\tdepth\t{}\tbits\t{}", c.words.len(), c.words.depth(), c.words.effective_width());
    println!("tags\t{}\tdepth\t{}\tbits\t{}", c.tags.len(), c.tags.depth(), c.tags.effective_width());
    println!("labels\t{}\tdepth\t{}\tbits\t{}", c.labels.len(), c.labels.depth(), c.labels.effective_width());
    for (name, t) in [("words", &c.words), ("tags", &c.tags), ("labels", &c.labels)] {
        if t.has_collisions() {
            log::warn!("{name} class tree deeper than its bit budget; some codes collide");
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    treebank: &Path,
    classes: &Path,
    out: &Path,
    head_rules: Option<&Path>,
    grow_fraction: Option<f64>,
    max_unary: Option<usize>,
    shared: &Shared,
) -> Result<()> {
    let mut s = Settings::load(shared)?;
    if let Some(f) = grow_fraction {
        s.grow_fraction = f;
    }
    if let Some(u) = max_unary {
        s.max_unary = u;
    }
    let file = classes_from_bytes(&fs::read(classes).with_context(|| format!("reading {}", classes.display()))?)
        .with_context(|| classes.display().to_string())?;
    let rules = match head_rules {
        Some(p) => HeadRuleTable::parse(&read_input(p)?).with_context(|| p.display().to_string())?,
        None => HeadRuleTable::default(),
    };
    for w in rules.warnings() {
        eprintln!("warning: {w}");
    }
    let trees = read_treebank(treebank, shared)?;
    let split = split_corpus(trees, s.grow_fraction, s.seed)?;
    if split.degenerate {
        eprintln!("warning: no held-out trees; smoothing falls back to fixed weights");
    }
    let ctx = DerivationContext::new(file.vocab, rules, s.max_unary);
    let models = train_with(&split.grow, &split.smooth, ctx, file.classes, &s.model)?;
    save_model(&models, out).with_context(|| format!("writing {}", out.display()))?;
    let st = &models.stats;
    println!("grow sentences\t{}\tsmooth sentences\t{}", st.grow_sentences, st.smooth_sentences);
    for (name, g, h, m) in [
        ("tag", st.grow_events.tag, st.smooth_events.tag, &models.tag),
        ("extension", st.grow_events.extension, st.smooth_events.extension, &models.extension),
        ("label", st.grow_events.label, st.smooth_events.label, &models.label),
    ] {
        println!(
            "{name} events\t{g}\theld-out\t{h}\tleaves\t{}\tem iterations\t{}",
            m.tree().leaf_count(),
            m.report().iterations
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_parse(
    model: &Path,
    input: Option<&Path>,
    max_length: Option<usize>,
    workers: Option<usize>,
    beam_width: Option<usize>,
    max_hypotheses: Option<usize>,
    shared: &Shared,
) -> Result<()> {
    let mut s = Settings::load(shared)?;
    if let Some(v) = max_length {
        s.search.max_length = v;
    }
    if let Some(v) = workers {
        s.workers = v;
    }
    if let Some(v) = beam_width {
        s.search.beam_width = v;
    }
    if let Some(v) = max_hypotheses {
        s.search.max_hypotheses = v;
    }
    let models = load_model(model).with_context(|| model.display().to_string())?;
    let text = match input {
        Some(p) => read_input(p)?,
        None => {
            let mut t = String::new();
            io::stdin().read_to_string(&mut t)?;
            t
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(s.workers).build()?;
    let cfg = s.search;
    let outputs: Vec<String> = pool.install(|| {
        lines
            .par_iter()
            .map(|line| {
                let words: Vec<&str> = line.split_whitespace().collect();
                match parse(&models, &words, &cfg) {
                    Ok(r) => match (&r.tree, r.status) {
                        (Some(t), status) => format!("{}\t{:.17e}\t{status}", t.to_underscore_string(), r.logprob),
                        (None, _) => "NOPARSE\t-inf\tno-parse".to_string(),
                    },
                    Err(SearchError::EmptyInput) => "SKIP\t-\tempty".to_string(),
                    Err(SearchError::TooLong { len, .. }) => format!("SKIP\t-\ttoo-long:{len}"),
                    Err(e) => format!("NOPARSE\t-inf\t{e}"),
                }
            })
            .collect()
    });
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let mut counts = [0usize; 3];
    for o in &outputs {
        writeln!(out, "{o}")?;
        if o.ends_with(SearchStatus::Optimal.name()) {
            counts[0] += 1;
        } else if o.ends_with(SearchStatus::SearchErrorMemory.name()) {
            counts[1] += 1;
        } else {
            counts[2] += 1;
        }
    }
    out.flush()?;
    eprintln!("optimal {}\tsearch-error-memory {}\tskipped or failed {}", counts[0], counts[1], counts[2]);
    Ok(())
}

fn parse_ranges(spec: Option<&str>) -> Result<Vec<(usize, usize)>> {
    let Some(spec) = spec else { return Ok(DEFAULT_RANGES.to_vec()) };
    spec.split(',')
        .map(|r| {
            let (a, b) = r.trim().split_once([':', '-']).ok_or_else(|| usage(format!("bad range `{r}`")))?;
            let (a, b): (usize, usize) = (parse_value("range", a.trim())?, parse_value("range", b.trim())?);
            if a > b {
                return Err(usage(format!("empty range `{r}`")));
            }
            Ok((a, b))
        })
        .collect()
}

/// Reads parser output (tree in the first tab field) or a plain treebank.
/// Returns one entry per line; `None` marks skipped or failed sentences.
fn read_test_file(path: &Path, shared: &Shared) -> Result<Vec<Option<RawTree>>> {
    let text = read_input(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split('\t').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        if field == "SKIP" || field == "NOPARSE" {
            out.push(None);
            continue;
        }
        let tree = dtparse::corpus::parse_tree(field, shared.format)
            .map_err(anyhow::Error::new)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(Some(tree));
    }
    Ok(out)
}

fn score_files(
    gold: &Path,
    test: &Path,
    options: &ParsevalOptions,
    shared: &Shared,
) -> Result<Vec<dtparse::parseval::SentenceScore>> {
    let gold_text = read_input(gold)?;
    let gold_trees = parse_treebank(&gold_text, shared.format).with_context(|| gold.display().to_string())?;
    let gold_trees: Vec<RawTree> = if shared.format == TreebankFormat::Penn && !shared.keep_annotations {
        gold_trees.iter().filter_map(strip_penn_annotations).collect()
    } else {
        gold_trees
    };
    let test_trees = read_test_file(test, shared)?;
    if gold_trees.len() != test_trees.len() {
        return Err(anyhow::Error::new(AlignmentMismatch {
            line: gold_trees.len().min(test_trees.len()) + 1,
            reason: format!("{} gold trees but {} test lines", gold_trees.len(), test_trees.len()),
        }));
    }
    let mut scores = Vec::new();
    let mut skipped = 0;
    for (i, (g, t)) in gold_trees.iter().zip(&test_trees).enumerate() {
        let Some(t) = t else {
            skipped += 1;
            continue;
        };
        let s = score_pair_with(g, t, options).map_err(|e| match e {
            ParsevalError::WordMismatch { position } => anyhow::Error::new(AlignmentMismatch {
                line: i + 1,
                reason: format!("words differ at position {}", position + 1),
            }),
        })?;
        scores.push(s);
    }
    if skipped > 0 {
        eprintln!("warning: {skipped} sentence(s) without a parse were left out");
    }
    Ok(scores)
}

fn options(exclude_root: bool, collapse_unary: bool) -> ParsevalOptions {
    ParsevalOptions { include_root: !exclude_root, count_unary_levels: !collapse_unary }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Classes { treebank, out, unk_threshold, window, export, shared } => {
            cmd_classes(&treebank, &out, unk_threshold, window, export.as_deref(), &shared)
        }
        Command::Train { treebank, classes, out, head_rules, grow_fraction, max_unary, shared } => {
            cmd_train(&treebank, &classes, &out, head_rules.as_deref(), grow_fraction, max_unary, &shared)
        }
        Command::Parse { model, input, max_length, workers, beam_width, max_hypotheses, shared } => {
            cmd_parse(&model, input.as_deref(), max_length, workers, beam_width, max_hypotheses, &shared)
        }
        Command::Eval { gold, test, ranges, sentences, exclude_root, collapse_unary, shared } => {
            Settings::load(&shared)?;
            let ranges = parse_ranges(ranges.as_deref())?;
            let scores = score_files(&gold, &test, &options(exclude_root, collapse_unary), &shared)?;
            if let Some(p) = sentences {
                fs::write(&p, sentence_tsv(&scores)).with_context(|| format!("writing {}", p.display()))?;
            }
            print_report(&scores, &ranges)
        }
        Command::Report { gold, test, ranges, per_length, exclude_root, collapse_unary, shared } => {
            Settings::load(&shared)?;
            let ranges = parse_ranges(ranges.as_deref())?;
            let scores = score_files(&gold, &test, &options(exclude_root, collapse_unary), &shared)?;
            print_report(&scores, &ranges)?;
            let csv = per_length_csv(&scores);
            match per_length {
                Some(p) => fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => {
                    println!();
                    print!("{csv}");
                }
            }
            Ok(())
        }
    }
}

fn print_report(scores: &[dtparse::parseval::SentenceScore], ranges: &[(usize, usize)]) -> Result<()> {
    if scores.is_empty() {
        bail!(anyhow!(CorpusError::EmptyCorpus));
    }
    let report = aggregate(scores, ranges);
    for (a, b) in &report.empty_ranges {
        eprintln!("warning: no sentences of length {a}-{b}; column omitted");
    }
    print!("{}", report.to_csv());
    Ok(())
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<CorpusError>()
            || cause.is::<io::Error>()
            || cause.is::<ModelFileError>()
            || cause.is::<TrainError>()
            || cause.is::<ParsevalError>()
            || cause.is::<AlignmentMismatch>()
            || cause.is::<dtparse::headfinder::HeadRuleError>()
            || cause.is::<dtparse::classtree::ClassTreeError>()
        {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
