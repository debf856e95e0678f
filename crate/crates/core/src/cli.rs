//! Command-line entry point.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analytics::{build_report, Judgment};
use crate::error::{Error, Result};
use crate::mnist::DigitSet;
use crate::nn::{accuracy, load_checkpoint, LabeledImages, NetworkParams, TrainConfig, CE_CLASSES, MNIST_CLASSES};
use crate::pairs::{generate_synthetic, select_exemplars, split_train_test, Dataset, Direction};
use crate::pipeline::{
    evaluate_from_embeddings, raster_batch, reproduce, sample_embeddings, train_network, ReproduceConfig,
};
use crate::quiz::{read_log, serve, QuizData, ServeConfig};
use crate::raster::{rasterize_with, Intensity};
use crate::repr::{embed_pairs, embeddings_from_csv, embeddings_to_csv, MethodConfig, MethodResult, Source};
use crate::tsne::{cluster_purity, coords_to_csv, coords_to_svg, tsne_embed, TsneConfig};

#[derive(Debug, Parser)]
#[command(
    name = "celab",
    version,
    about = "Cause-effect attribution with CNN representations, k-NN and a crowd quiz"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled synthetic pairs and split them into train/test/exemplars.
    Generate(GenerateArgs),
    /// Rasterize pairs into 28x28 PGM images.
    Raster(RasterArgs),
    /// Train the 3-class cause-effect network on rasterized pairs.
    TrainCe(TrainCeArgs),
    /// Train the 10-class network on MNIST digits.
    TrainMnist(TrainMnistArgs),
    /// Write 128-d fully-connected-layer embeddings as CSV.
    Embed(EmbedArgs),
    /// Score one k-NN method (CE-all, CE-9, MNIST-all, MNIST-9) on a test set.
    Classify(ClassifyArgs),
    /// Embed a CSV of embeddings into 2-D with exact t-SNE.
    Tsne(TsneArgs),
    /// Build the accuracy and correlation report from a judgment log.
    Analyze(AnalyzeArgs),
    /// Run the quiz HTTP service.
    Serve(ServeArgs),
    /// Run the whole pipeline into a run directory.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 4050)]
    count: usize,
    #[arg(long, default_value_t = 60)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for pairs.tsv, train.tsv, test.tsv and exemplars.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RasterArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Only this pair; all pairs otherwise.
    #[arg(long)]
    id: Option<u64>,
    /// Mark occupied cells with full intensity instead of log counts.
    #[arg(long)]
    binary: bool,
    /// Output directory; one `<id>.pgm` per pair.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 359)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout_pool: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout_hidden: f64,
    /// Seeds shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeds the weight initialization.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            epochs: self.epochs,
            dropout_pool: self.dropout_pool,
            dropout_hidden: self.dropout_hidden,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct TrainCeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct MnistFiles {
    #[arg(long, default_value = "data/mnist/digits-images-idx3-ubyte.gz")]
    images: PathBuf,
    #[arg(long, default_value = "data/mnist/digits-labels-idx1-ubyte.gz")]
    labels: PathBuf,
}

#[derive(Debug, Args)]
struct TrainMnistArgs {
    #[command(flatten)]
    files: MnistFiles,
    /// Train on the first N images only.
    #[arg(long)]
    limit: Option<usize>,
    /// Report accuracy on the N images following the training images.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// CE-all, CE-9, MNIST-all or MNIST-9.
    #[arg(long)]
    method: MethodConfig,
    /// Checkpoint of the network named by the method.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    exemplars: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Write the MethodResult as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TsneOpts {
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    tsne_seed: u64,
}

impl TsneOpts {
    fn config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed: self.tsne_seed,
            ..TsneConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TsneArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Output CSV `pair_id,label,x,y`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Embed a seeded sample of this many rows.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 10)]
    purity_k: usize,
    #[command(flatten)]
    opts: TsneOpts,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Labeled pairs holding the ground truth of the judged items.
    #[arg(long)]
    truth: PathBuf,
    /// JSONL judgment log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// methods.json with machine MethodResults.
    #[arg(long)]
    methods: Option<PathBuf>,
    /// Directory for report.txt, report.csv and report.json; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "CELAB_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "CELAB_HOST", default_value = "127.0.0.1")]
    host: String,
    /// Reproduce run directory supplying test.tsv, exemplars.tsv and methods.json.
    #[arg(long, env = "CELAB_RUN_DIR")]
    run_dir: Option<PathBuf>,
    /// Labeled pairs to draw questions from.
    #[arg(long, env = "CELAB_DATASET")]
    dataset: Option<PathBuf>,
    #[arg(long, env = "CELAB_EXEMPLARS")]
    exemplars: Option<PathBuf>,
    #[arg(long, env = "CELAB_METHODS")]
    methods: Option<PathBuf>,
    /// Checkpoints and training pairs for computing machine results at startup.
    #[arg(long, env = "CELAB_CE_CHECKPOINT")]
    ce_checkpoint: Option<PathBuf>,
    #[arg(long, env = "CELAB_MNIST_CHECKPOINT")]
    mnist_checkpoint: Option<PathBuf>,
    #[arg(long, env = "CELAB_TRAIN")]
    train: Option<PathBuf>,
    #[arg(long, env = "CELAB_LOG")]
    log: Option<PathBuf>,
    /// Static UI bundle served at `/`.
    #[arg(long = "static", env = "CELAB_STATIC")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    #[command(flatten)]
    files: MnistFiles,
    #[arg(long, default_value_t = 4050)]
    pairs: usize,
    #[arg(long, default_value_t = 60)]
    test: usize,
    /// Epochs for both networks unless overridden individually.
    #[arg(long, default_value_t = 359)]
    epochs: usize,
    #[arg(long)]
    ce_epochs: Option<usize>,
    #[arg(long)]
    mnist_epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Train the digit network on the first N images only.
    #[arg(long)]
    mnist_limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    tsne_iterations: usize,
    /// Embed a seeded sample of this many pairs per space.
    #[arg(long)]
    tsne_sample: Option<usize>,
    /// Reuse intact stage outputs from an earlier run with the same settings.
    #[arg(long)]
    resume: bool,
}

impl ReproduceArgs {
    fn config(&self) -> ReproduceConfig {
        let mut c = ReproduceConfig::new(self.seed, self.files.images.clone(), self.files.labels.clone());
        c.pairs = self.pairs;
        c.test_count = self.test;
        c.ce_train.epochs = self.ce_epochs.unwrap_or(self.epochs);
        c.mnist_train.epochs = self.mnist_epochs.unwrap_or(self.epochs);
        c.ce_train.batch_size = self.batch;
        c.mnist_train.batch_size = self.batch;
        c.mnist_limit = self.mnist_limit;
        c.k = self.k;
        c.tsne.perplexity = self.perplexity;
        c.tsne.iterations = self.tsne_iterations;
        c.tsne_sample = self.tsne_sample;
        c
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn read_checkpoint(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(load_checkpoint(&bytes)?.params)
}

fn source_of(params: &NetworkParams) -> Result<Source> {
    match params.classes() {
        CE_CLASSES => Ok(Source::CauseEffect),
        MNIST_CLASSES => Ok(Source::Mnist),
        c => Err(Error::Checkpoint(format!("unexpected {c}-class output layer"))),
    }
}

fn read_methods(path: &Path) -> Result<Vec<MethodResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let all = generate_synthetic(a.count, a.seed)?;
    let (train, test) = split_train_test(&all, a.test, a.seed.wrapping_add(1))?;
    let exemplars = select_exemplars(&train, 3, a.seed.wrapping_add(2))?;
    fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    for (name, d) in [
        ("pairs.tsv", &all),
        ("train.tsv", &train),
        ("test.tsv", &test),
        ("exemplars.tsv", &exemplars),
    ] {
        d.write_file(a.out.join(name))?;
    }
    println!(
        "wrote {} pairs ({} train, {} test, {} exemplars) to {}",
        all.len(),
        train.len(),
        test.len(),
        exemplars.len(),
        a.out.display()
    );
    Ok(())
}

fn raster(a: &RasterArgs) -> Result<()> {
    let data = Dataset::read_file(&a.pairs)?;
    let mode = if a.binary {
        Intensity::Binary
    } else {
        Intensity::LogCount
    };
    let pairs: Vec<_> = match a.id {
        Some(id) => vec![data
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("pair {id}")))?
            .clone()],
        None => data.pairs().to_vec(),
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    for p in &pairs {
        write(
            &a.out.join(format!("{}.pgm", p.id())),
            rasterize_with(p, mode)?.to_pgm(),
        )?;
    }
    println!("wrote {} raster(s) to {}", pairs.len(), a.out.display());
    Ok(())
}

fn train_ce(a: &TrainCeArgs) -> Result<()> {
    let data = Dataset::read_file(&a.train)?;
    let (images, labels) = raster_batch(&data)?;
    let refs: Vec<&[f64]> = images.iter().map(|i| i.pixels()).collect();
    let config = a.opts.config();
    let (params, bytes) = train_network(Source::CauseEffect, &refs, &labels, &config, a.opts.init_seed)?;
    write(&a.out, bytes)?;
    let acc = accuracy(
        &params,
        LabeledImages {
            images: &refs,
            labels: &labels,
        },
    )?;
    println!("training accuracy {acc:.4}; checkpoint {}", a.out.display());
    Ok(())
}

fn train_mnist(a: &TrainMnistArgs) -> Result<()> {
    let digits = DigitSet::load(&a.files.images, &a.files.labels)?;
    let n = a.limit.unwrap_or(digits.len()).min(digits.len());
    let train = digits.slice(0, n);
    let refs: Vec<&[f64]> = train.images().iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = train.labels().iter().map(|&l| usize::from(l)).collect();
    let (params, bytes) = train_network(Source::Mnist, &refs, &labels, &a.opts.config(), a.opts.init_seed)?;
    write(&a.out, bytes)?;
    println!("trained on {n} digits; checkpoint {}", a.out.display());
    if a.holdout > 0 {
        let held = digits.slice(n, n + a.holdout);
        let hrefs: Vec<&[f64]> = held.images().iter().map(Vec::as_slice).collect();
        let hlabels: Vec<usize> = held.labels().iter().map(|&l| usize::from(l)).collect();
        let acc = accuracy(
            &params,
            LabeledImages {
                images: &hrefs,
                labels: &hlabels,
            },
        )?;
        println!("held-out accuracy on {} digits: {acc:.4}", held.len());
    }
    Ok(())
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let data = Dataset::read_file(&a.pairs)?;
    let emb = embed_pairs(&params, source_of(&params)?, data.pairs())?;
    write(&a.out, embeddings_to_csv(&emb))?;
    println!("wrote {} embeddings to {}", emb.len(), a.out.display());
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let method = a.method.with_k(a.k);
    if source_of(&params)? != method.source {
        return Err(Error::invalid(format!(
            "{method} needs a {}-trained checkpoint",
            method.source.tag()
        )));
    }
    let train = Dataset::read_file(&a.train)?;
    let exemplars = Dataset::read_file(&a.exemplars)?;
    let test = Dataset::read_file(&a.test)?;
    let support = match method.support {
        crate::repr::SupportSize::All => &train,
        crate::repr::SupportSize::Nine => &exemplars,
    };
    let pairs: Vec<_> = support.pairs().iter().chain(test.pairs()).cloned().collect();
    let emb = embed_pairs(&params, method.source, &pairs)?;
    let result = evaluate_from_embeddings(&method, &emb, &train, &exemplars, &test)?;
    println!(
        "{method} (k={}, {} support items): accuracy {:.4} on {} test items",
        method.k,
        support.len(),
        result.accuracy,
        result.item_ids.len()
    );
    if let Some(out) = &a.out {
        write(out, serde_json::to_string_pretty(&result)? + "\n")?;
    }
    Ok(())
}

fn tsne(a: &TsneArgs) -> Result<()> {
    let text = fs::read_to_string(&a.embeddings).map_err(|e| Error::file(&a.embeddings, e))?;
    let all = embeddings_from_csv(&text, Source::CauseEffect)?;
    let config = a.opts.config();
    let chosen = sample_embeddings(&all, a.sample, config.seed);
    let x: Vec<Vec<f64>> = chosen.iter().map(|e| e.vector.clone()).collect();
    let result = tsne_embed(&x, &config)?;
    let ids: Vec<u64> = chosen.iter().map(|e| e.pair_id).collect();
    let labels: Vec<Option<Direction>> = chosen.iter().map(|e| e.label).collect();
    write(&a.out, coords_to_csv(&ids, &labels, &result.coords))?;
    if let Some(svg) = &a.svg {
        let title = a
            .embeddings
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        write(svg, coords_to_svg(&labels, &result.coords, &title))?;
    }
    println!(
        "{} points: KL {:.4} -> {:.4}; cluster purity (k={}) {:.4}",
        chosen.len(),
        result.initial_kl(),
        result.final_kl(),
        a.purity_k,
        cluster_purity(&result.coords, &labels, a.purity_k)?
    );
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let truth: BTreeMap<u64, Direction> = Dataset::read_file(&a.truth)?
        .pairs()
        .iter()
        .filter_map(|p| p.label().map(|l| (p.id(), l)))
        .collect();
    let judgments: Vec<Judgment> = match &a.log {
        Some(path) => read_log(path)?,
        None => Vec::new(),
    };
    let mut sets: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for j in &judgments {
        let items = sets.entry(j.session_id.clone()).or_default();
        if !items.contains(&j.item_id) {
            items.push(j.item_id);
        }
    }
    let machine = match &a.methods {
        Some(p) => read_methods(p)?,
        None => Vec::new(),
    };
    let report = build_report(&truth, &sets, &judgments, &machine)?;
    match &a.out {
        Some(dir) => {
            write(&dir.join("report.txt"), report.to_text())?;
            write(&dir.join("report.csv"), report.to_csv())?;
            write(&dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            println!("wrote report to {}", dir.display());
        }
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn machine_results_from_checkpoints(
    a: &ServeArgs,
    questions: &Dataset,
    exemplars: &Dataset,
) -> Result<Vec<MethodResult>> {
    let Some(train_path) = &a.train else {
        return Ok(Vec::new());
    };
    let train = Dataset::read_file(train_path)?;
    let mut out = Vec::new();
    for ck in [&a.ce_checkpoint, &a.mnist_checkpoint].into_iter().flatten() {
        let params = read_checkpoint(ck)?;
        let source = source_of(&params)?;
        let pairs: Vec<_> = train
            .pairs()
            .iter()
            .chain(exemplars.pairs())
            .chain(questions.pairs())
            .cloned()
            .collect();
        let mut seen = std::collections::HashSet::new();
        let pairs: Vec<_> = pairs.into_iter().filter(|p| seen.insert(p.id())).collect();
        let emb = embed_pairs(&params, source, &pairs)?;
        for m in MethodConfig::ALL.iter().filter(|m| m.source == source) {
            out.push(evaluate_from_embeddings(m, &emb, &train, exemplars, questions)?);
        }
    }
    Ok(out)
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let from_run = |name: &str| a.run_dir.as_ref().map(|d| d.join(name));
    let dataset_path = a
        .dataset
        .clone()
        .or_else(|| from_run("test.tsv"))
        .ok_or_else(|| Error::invalid("serve needs --dataset or --run-dir"))?;
    let questions = Dataset::read_file(&dataset_path)?;
    let exemplars = match a.exemplars.clone().or_else(|| from_run("exemplars.tsv")) {
        Some(p) => Some(Dataset::read_file(&p)?),
        None => None,
    };
    let mut machine = match a
        .methods
        .clone()
        .or_else(|| from_run("methods.json").filter(|p| p.exists()))
    {
        Some(p) => read_methods(&p)?,
        None => Vec::new(),
    };
    if machine.is_empty() {
        let ex = match &exemplars {
            Some(e) => e.clone(),
            None => select_exemplars(&questions, 3, a.partition_seed)?,
        };
        machine = machine_results_from_checkpoints(a, &questions, &ex)?;
    }
    let data = QuizData::new(&questions, exemplars.as_ref(), machine, a.partition_seed)?;
    let log_path = a
        .log
        .clone()
        .or_else(|| from_run("judgments.jsonl"))
        .unwrap_or_else(|| PathBuf::from("judgments.jsonl"));
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::invalid(format!("bad listen address: {e}")))?;
    println!(
        "serving {} task sets on http://{addr} (log {})",
        data.set_count(),
        log_path.display()
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(
        data,
        ServeConfig {
            addr,
            log_path,
            static_dir: a.static_dir.clone(),
        },
    ))
}

fn reproduce_cmd(a: &ReproduceArgs) -> Result<()> {
    let config = a.config();
    let summary = reproduce(&a.run_dir, &config, a.resume)?;
    if !summary.skipped.is_empty() {
        println!("reused stages: {}", summary.skipped.join(", "));
    }
    for m in &summary.methods {
        println!("{:<10} accuracy {:.3}", m.method, m.accuracy);
    }
    for (tag, p) in &summary.purity {
        println!("t-SNE {tag} cluster purity {p:.3}");
    }
    println!("artifacts in {}", a.run_dir.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Raster(a) => raster(a),
        Command::TrainCe(a) => train_ce(a),
        Command::TrainMnist(a) => train_mnist(a),
        Command::Embed(a) => embed(a),
        Command::Classify(a) => classify(a),
        Command::Tsne(a) => tsne(a),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Reproduce(a) => reproduce_cmd(a),
    }
}
