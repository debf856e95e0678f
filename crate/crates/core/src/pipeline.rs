//! The end-to-end `reproduce` run: data, both network bodies, the four k-NN
//! methods, t-SNE of both representation spaces and the study report, written
//! stage by stage into a run directory with a content-hashed manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::build_report;
use crate::error::{Error, Result};
use crate::mnist::DigitSet;
use crate::nn::{
    load_checkpoint, save_checkpoint, train, LabeledImages, NetworkParams, TrainConfig, CE_CLASSES, MNIST_CLASSES,
};
use crate::pairs::{generate_synthetic, select_exemplars, split_train_test, Dataset, Direction};
use crate::raster::{rasterize, RasterImage};
use crate::repr::{
    embed_pairs, embeddings_from_csv, embeddings_to_csv, evaluate_embeddings, Embedding, MethodConfig, MethodResult,
    Source, SupportSize,
};
use crate::tsne::{cluster_purity, coords_to_csv, coords_to_svg, tsne_embed, TsneConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceConfig {
    pub seed: u64,
    pub pairs: usize,
    pub test_count: usize,
    pub ce_train: TrainConfig,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    /// Train the digit network on the first `n` images only.
    pub mnist_limit: Option<usize>,
    pub mnist_train: TrainConfig,
    pub k: usize,
    pub tsne: TsneConfig,
    /// Embed a seeded sample of this many pairs instead of all of them.
    pub tsne_sample: Option<usize>,
    /// Neighbourhood size for the cluster-purity summary.
    pub purity_k: usize,
}

impl ReproduceConfig {
    /// Full-scale defaults: 4,050 pairs split 3,990 / 60, 359 epochs of
    /// batch-128 training for both bodies, k = 1.
    pub fn new(seed: u64, mnist_images: PathBuf, mnist_labels: PathBuf) -> Self {
        ReproduceConfig {
            seed,
            pairs: 4050,
            test_count: 60,
            ce_train: TrainConfig::default(),
            mnist_images,
            mnist_labels,
            mnist_limit: None,
            mnist_train: TrainConfig::default(),
            k: 1,
            tsne: TsneConfig::default(),
            tsne_sample: None,
            purity_k: 10,
        }
    }
}

/// Independent sub-seeds for each randomized stage.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    data: u64,
    split: u64,
    exemplars: u64,
    ce_init: u64,
    ce_train: u64,
    mnist_init: u64,
    mnist_train: u64,
    tsne: u64,
    sample: u64,
}

impl Seeds {
    fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || rng.next_u64();
        Seeds {
            data: next(),
            split: next(),
            exemplars: next(),
            ce_init: next(),
            ce_train: next(),
            mnist_init: next(),
            mnist_train: next(),
            tsne: next(),
            sample: next(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Output file (relative to the run directory) to SHA-256 hex digest.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ReproduceConfig,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub methods: Vec<MethodResult>,
    pub purity: BTreeMap<String, f64>,
    /// Stages reused from an earlier run with the same configuration.
    pub skipped: Vec<String>,
}

const STAGES: [&str; 7] = ["data", "train-ce", "train-mnist", "embed", "classify", "tsne", "report"];

struct Run<'a> {
    dir: &'a Path,
    config: &'a ReproduceConfig,
    manifest: Manifest,
    previous: Option<Manifest>,
    reusing: bool,
    skipped: Vec<String>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// True when the stage's recorded outputs are still on disk unchanged
    /// and every earlier stage was reused too.
    fn reusable(&mut self, stage: &str) -> bool {
        if !self.reusing {
            return false;
        }
        let Some(rec) = self
            .previous
            .as_ref()
            .and_then(|m| m.stages.iter().find(|s| s.name == stage))
            .cloned()
        else {
            self.reusing = false;
            return false;
        };
        let intact = rec
            .outputs
            .iter()
            .all(|(file, digest)| fs::read(self.path(file)).is_ok_and(|b| &sha256_hex(&b) == digest));
        if intact {
            self.manifest.stages.push(rec);
            self.skipped.push(stage.to_string());
            log::info!("stage {stage}: reusing outputs from the previous run");
        } else {
            self.reusing = false;
        }
        intact
    }

    /// Writes every output through a temporary file and rename, then records
    /// the stage in the manifest on disk.
    fn commit(&mut self, stage: &str, outputs: Vec<(String, Vec<u8>)>) -> Result<()> {
        let mut rec = StageRecord {
            name: stage.to_string(),
            outputs: BTreeMap::new(),
        };
        for (name, bytes) in &outputs {
            let path = self.path(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
            }
            let tmp = path.with_extension("partial");
            fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::file(&path, e))?;
            rec.outputs.insert(name.clone(), sha256_hex(bytes));
        }
        self.manifest.stages.retain(|s| s.name != stage);
        self.manifest.stages.push(rec);
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.path(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::file(&path, e))
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.path(name);
        fs::read(&path).map_err(|e| Error::file(&path, e))
    }

    fn read_text(&self, name: &str) -> Result<String> {
        String::from_utf8(self.read(name)?).map_err(|_| Error::invalid(format!("{name} is not UTF-8")))
    }
}

struct Data {
    train: Dataset,
    test: Dataset,
    exemplars: Dataset,
}

fn stage_data(run: &mut Run<'_>, seeds: &Seeds) -> Result<Data> {
    let files = ["pairs.tsv", "train.tsv", "test.tsv", "exemplars.tsv"];
    if run.reusable("data") {
        let load = |f: &str| -> Result<Dataset> { Dataset::read_file(run.path(f)) };
        return Ok(Data {
            train: load(files[1])?,
            test: load(files[2])?,
            exemplars: load(files[3])?,
        });
    }
    let all = generate_synthetic(run.config.pairs, seeds.data)?;
    let (train, test) = split_train_test(&all, run.config.test_count, seeds.split)?;
    let exemplars = select_exemplars(&train, 3, seeds.exemplars)?;
    run.commit(
        "data",
        [&all, &train, &test, &exemplars]
            .iter()
            .zip(files)
            .map(|(d, f)| (f.to_string(), d.to_pairs_file().into_bytes()))
            .collect(),
    )?;
    Ok(Data { train, test, exemplars })
}

fn meta_json(source: Source, config: &TrainConfig, samples: usize, loss_history: &[f64]) -> String {
    serde_json::json!({
        "source": source.tag(),
        "train": config,
        "samples": samples,
        "loss_history": loss_history,
    })
    .to_string()
}

/// Trains a fresh network and returns it with its serialized checkpoint.
pub fn train_network(
    source: Source,
    images: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(NetworkParams, Vec<u8>)> {
    let classes = match source {
        Source::CauseEffect => CE_CLASSES,
        Source::Mnist => MNIST_CLASSES,
    };
    let params = NetworkParams::init(classes, init_seed)?;
    let data = LabeledImages { images, labels };
    let out = train(params, None, data, config, |epoch, loss| {
        log::info!("{} epoch {}/{}: loss {loss:.5}", source.tag(), epoch, config.epochs);
    })?;
    let meta = meta_json(source, config, images.len(), &out.loss_history);
    let bytes = save_checkpoint(&out.params, &out.optimizer, &meta)?;
    Ok((out.params, bytes))
}

pub fn raster_batch(data: &Dataset) -> Result<(Vec<RasterImage>, Vec<usize>)> {
    let images = data.pairs().iter().map(rasterize).collect::<Result<Vec<_>>>()?;
    let labels = data.labels()?.into_iter().map(Direction::class_index).collect();
    Ok((images, labels))
}

fn stage_train_ce(run: &mut Run<'_>, seeds: &Seeds, data: &Data) -> Result<NetworkParams> {
    let file = "checkpoints/ce.cepn";
    if run.reusable("train-ce") {
        return Ok(load_checkpoint(&run.read(file)?)?.params);
    }
    let (images, labels) = raster_batch(&data.train)?;
    let refs: Vec<&[f64]> = images.iter().map(RasterImage::pixels).collect();
    let config = TrainConfig {
        seed: seeds.ce_train,
        ..run.config.ce_train.clone()
    };
    let (params, bytes) = train_network(Source::CauseEffect, &refs, &labels, &config, seeds.ce_init)?;
    run.commit("train-ce", vec![(file.into(), bytes)])?;
    Ok(params)
}

fn stage_train_mnist(run: &mut Run<'_>, seeds: &Seeds) -> Result<NetworkParams> {
    let file = "checkpoints/mnist.cepn";
    if run.reusable("train-mnist") {
        return Ok(load_checkpoint(&run.read(file)?)?.params);
    }
    let digits = DigitSet::load(&run.config.mnist_images, &run.config.mnist_labels)?;
    let digits = match run.config.mnist_limit {
        Some(n) => digits.slice(0, n),
        None => digits,
    };
    if digits.is_empty() {
        return Err(Error::invalid("no MNIST images to train on"));
    }
    let refs: Vec<&[f64]> = digits.images().iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = digits.labels().iter().map(|&l| usize::from(l)).collect();
    let config = TrainConfig {
        seed: seeds.mnist_train,
        ..run.config.mnist_train.clone()
    };
    let (params, bytes) = train_network(Source::Mnist, &refs, &labels, &config, seeds.mnist_init)?;
    run.commit("train-mnist", vec![(file.into(), bytes)])?;
    Ok(params)
}

/// Embeddings of train then test pairs, per source.
struct Embedded {
    ce: Vec<Embedding>,
    mnist: Vec<Embedding>,
}

fn stage_embed(run: &mut Run<'_>, data: &Data, ce: &NetworkParams, mnist: &NetworkParams) -> Result<Embedded> {
    let files = ["embeddings_ce.csv", "embeddings_mnist.csv"];
    if run.reusable("embed") {
        return Ok(Embedded {
            ce: embeddings_from_csv(&run.read_text(files[0])?, Source::CauseEffect)?,
            mnist: embeddings_from_csv(&run.read_text(files[1])?, Source::Mnist)?,
        });
    }
    let pairs: Vec<_> = data.train.pairs().iter().chain(data.test.pairs()).cloned().collect();
    let out = Embedded {
        ce: embed_pairs(ce, Source::CauseEffect, &pairs)?,
        mnist: embed_pairs(mnist, Source::Mnist, &pairs)?,
    };
    run.commit(
        "embed",
        vec![
            (files[0].into(), embeddings_to_csv(&out.ce).into_bytes()),
            (files[1].into(), embeddings_to_csv(&out.mnist).into_bytes()),
        ],
    )?;
    Ok(out)
}

fn ids_of(d: &Dataset) -> HashSet<u64> {
    d.pairs().iter().map(|p| p.id()).collect()
}

fn select(embeddings: &[Embedding], ids: &HashSet<u64>) -> Vec<Embedding> {
    embeddings
        .iter()
        .filter(|e| ids.contains(&e.pair_id))
        .cloned()
        .collect()
}

/// Scores one method from precomputed embeddings of train and test pairs.
pub fn evaluate_from_embeddings(
    method: &MethodConfig,
    embeddings: &[Embedding],
    train: &Dataset,
    exemplars: &Dataset,
    test: &Dataset,
) -> Result<MethodResult> {
    let support_ids = match method.support {
        SupportSize::All => ids_of(train),
        SupportSize::Nine => {
            if exemplars.len() != 9 {
                return Err(Error::invalid(format!("expected 9 exemplars, got {}", exemplars.len())));
            }
            ids_of(exemplars)
        }
    };
    let support = select(embeddings, &support_ids);
    if support.len() != support_ids.len() {
        return Err(Error::NotFound("support pairs missing from the embeddings".into()));
    }
    let test_ids: Vec<u64> = test.pairs().iter().map(|p| p.id()).collect();
    let index: BTreeMap<u64, &Embedding> = embeddings.iter().map(|e| (e.pair_id, e)).collect();
    let queries = test_ids
        .iter()
        .map(|id| {
            index
                .get(id)
                .map(|e| (*e).clone())
                .ok_or_else(|| Error::NotFound(format!("test pair {id} has no embedding")))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_embeddings(method, &support, &queries)
}

fn stage_classify(run: &mut Run<'_>, data: &Data, emb: &Embedded) -> Result<Vec<MethodResult>> {
    let file = "methods.json";
    if run.reusable("classify") {
        return Ok(serde_json::from_str(&run.read_text(file)?)?);
    }
    let methods = MethodConfig::ALL
        .iter()
        .map(|m| {
            let m = m.with_k(run.config.k);
            let e = match m.source {
                Source::CauseEffect => &emb.ce,
                Source::Mnist => &emb.mnist,
            };
            evaluate_from_embeddings(&m, e, &data.train, &data.exemplars, &data.test)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = serde_json::to_string_pretty(&methods)?;
    text.push('\n');
    run.commit("classify", vec![(file.into(), text.into_bytes())])?;
    Ok(methods)
}

/// Seeded subset (in original order) when `limit` is below the set size.
pub fn sample_embeddings(embeddings: &[Embedding], limit: Option<usize>, seed: u64) -> Vec<Embedding> {
    match limit {
        Some(n) if n < embeddings.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, embeddings.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| embeddings[i].clone()).collect()
        }
        _ => embeddings.to_vec(),
    }
}

fn purity_of(path: &Path, k: usize) -> Result<f64> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            message: format!("{}: expected pair_id,label,x,y", path.display()),
        };
        if f.len() != 4 {
            return Err(bad());
        }
        let x: f64 = f[2].parse().map_err(|_| bad())?;
        let y: f64 = f[3].parse().map_err(|_| bad())?;
        coords.push([x, y]);
        labels.push(f[1].to_string());
    }
    cluster_purity(&coords, &labels, k)
}

fn stage_tsne(run: &mut Run<'_>, seeds: &Seeds, emb: &Embedded) -> Result<BTreeMap<String, f64>> {
    let spaces = [("ce", &emb.ce), ("mnist", &emb.mnist)];
    if run.reusable("tsne") {
        return spaces
            .iter()
            .map(|(tag, _)| {
                Ok((
                    tag.to_string(),
                    purity_of(&run.path(&format!("tsne_{tag}.csv")), run.config.purity_k)?,
                ))
            })
            .collect();
    }
    let mut outputs = Vec::new();
    let mut purity = BTreeMap::new();
    for (tag, all) in spaces {
        let chosen = sample_embeddings(all, run.config.tsne_sample, seeds.sample);
        let x: Vec<Vec<f64>> = chosen.iter().map(|e| e.vector.clone()).collect();
        let config = TsneConfig {
            seed: seeds.tsne,
            ..run.config.tsne.clone()
        };
        let result = tsne_embed(&x, &config)?;
        let ids: Vec<u64> = chosen.iter().map(|e| e.pair_id).collect();
        let labels: Vec<Option<Direction>> = chosen.iter().map(|e| e.label).collect();
        purity.insert(
            tag.to_string(),
            cluster_purity(&result.coords, &labels, run.config.purity_k)?,
        );
        log::info!("t-SNE {tag}: KL {:.4} -> {:.4}", result.initial_kl(), result.final_kl());
        let title = format!("{} representation", tag.to_uppercase());
        outputs.push((
            format!("tsne_{tag}.csv"),
            coords_to_csv(&ids, &labels, &result.coords).into_bytes(),
        ));
        outputs.push((
            format!("tsne_{tag}.svg"),
            coords_to_svg(&labels, &result.coords, &title).into_bytes(),
        ));
    }
    run.commit("tsne", outputs)?;
    Ok(purity)
}

fn stage_report(
    run: &mut Run<'_>,
    data: &Data,
    methods: &[MethodResult],
    purity: &BTreeMap<String, f64>,
) -> Result<()> {
    if run.reusable("report") {
        return Ok(());
    }
    let truth: BTreeMap<u64, Direction> = data
        .test
        .pairs()
        .iter()
        .filter_map(|p| p.label().map(|l| (p.id(), l)))
        .collect();
    let report = build_report(&truth, &BTreeMap::new(), &[], methods)?;
    let mut text = report.to_text();
    text.push_str(&format!(
        "\nt-SNE cluster purity ({} nearest neighbours)\n",
        run.config.purity_k
    ));
    for (tag, p) in purity {
        text.push_str(&format!("{:<6} {p:.4}\n", tag.to_uppercase()));
    }
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    run.commit(
        "report",
        vec![
            ("report.txt".into(), text.into_bytes()),
            ("report.csv".into(), report.to_csv().into_bytes()),
            ("report.json".into(), json.into_bytes()),
        ],
    )
}

/// Runs every stage into `dir`. With `resume`, stages whose recorded outputs
/// are intact under an identical configuration are reused. A failing stage
/// is reported by name and leaves earlier stages committed.
pub fn reproduce(dir: &Path, config: &ReproduceConfig, resume: bool) -> Result<RunSummary> {
    if config.test_count == 0 || config.test_count >= config.pairs {
        return Err(Error::invalid("test_count must lie between 1 and the pair count"));
    }
    config.ce_train.validate()?;
    config.mnist_train.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let previous = if resume {
        fs::read_to_string(dir.join(MANIFEST))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| &m.config == config)
    } else {
        None
    };
    let mut run = Run {
        dir,
        config,
        manifest: Manifest {
            config: config.clone(),
            stages: Vec::new(),
        },
        reusing: previous.is_some(),
        previous,
        skipped: Vec::new(),
    };
    let seeds = Seeds::derive(config.seed);
    let data = stage_data(&mut run, &seeds).map_err(|e| e.in_stage(STAGES[0]))?;
    let ce = stage_train_ce(&mut run, &seeds, &data).map_err(|e| e.in_stage(STAGES[1]))?;
    let mnist = stage_train_mnist(&mut run, &seeds).map_err(|e| e.in_stage(STAGES[2]))?;
    let emb = stage_embed(&mut run, &data, &ce, &mnist).map_err(|e| e.in_stage(STAGES[3]))?;
    let methods = stage_classify(&mut run, &data, &emb).map_err(|e| e.in_stage(STAGES[4]))?;
    let purity = stage_tsne(&mut run, &seeds, &emb).map_err(|e| e.in_stage(STAGES[5]))?;
    stage_report(&mut run, &data, &methods, &purity).map_err(|e| e.in_stage(STAGES[6]))?;
    run.write_manifest()?;
    Ok(RunSummary {
        methods,
        purity,
        skipped: run.skipped,
    })
}
