//! Subcommand definitions and drivers.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use omnitraj::config::KeyValues;
use omnitraj::data::{Dataset, Frame, RoadNetwork};
use omnitraj::encoders::{EncoderConfig, Encoders, Modality, ModalitySet, ENCODER_KEYS};
use omnitraj::evaluation::{
    condition_sweep, coverage_table, ranking_table, run_condition_eval, run_heuristic_eval, run_similarity_eval,
    run_two_stage_eval, similarity_variants, to_jsonl, ConditionProtocol, ReportContext,
};
use omnitraj::measures::Measure;
use omnitraj::nn::{fingerprint_hex, Checkpoint};
use omnitraj::pipeline::{generate_corpus, train_model, CorpusSpec, CORPUS_KEYS};
use omnitraj::retrieval::build_store;
use omnitraj::training::TrainConfig;
use omnitraj::{Error, Exec};

use crate::layout;
use crate::service::{answer, serve, QueryBody, QueryModalities, TwoStageBody};
use crate::snapshot::{read_grid, resolve, write_grid, Snapshot};

#[derive(Debug, Parser)]
#[command(name = "omnitraj", version, about = "Multimodal trajectory retrieval engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice of the stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value settings file; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (defaults to the data directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Artifact directory to read from.
    #[arg(long, env = "OMNITRAJ_DATA_DIR", default_value = layout::DEFAULT_ROOT)]
    pub data: PathBuf,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

impl Common {
    fn out_dir(&self) -> Result<PathBuf, Error> {
        let dir = self.out.clone().unwrap_or_else(|| self.data.clone());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    fn settings(&self, known: &[&str]) -> Result<KeyValues, Error> {
        let kv = match &self.config {
            Some(p) => KeyValues::parse(&fs::read_to_string(p)?)?,
            None => KeyValues::default(),
        };
        kv.reject_unknown(known)?;
        Ok(kv)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic road network and trajectories.
    GenData(GenData),
    /// Derive topology and region views and split train/test.
    Extract(Extract),
    /// Train the encoders.
    Train(Train),
    /// Encode a dataset into embedding stores.
    Embed(Embed),
    /// Run one retrieval query against the stores.
    Query(Query),
    /// Self-retrieval evaluation.
    EvalSim(EvalSim),
    /// Condition-based retrieval evaluation.
    EvalCond(EvalCond),
    /// Classical-distance baselines.
    BenchHeuristics(BenchHeuristics),
    /// Serve queries over HTTP.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub min_hops: Option<usize>,
    #[arg(long)]
    pub max_hops: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Extract {
    #[command(flatten)]
    pub common: Common,
    /// Trailing trajectories held out for testing.
    #[arg(long, default_value_t = 200)]
    pub test: usize,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Embed {
    #[command(flatten)]
    pub common: Common,
    /// Dataset to index, relative to the data directory.
    #[arg(long, default_value = layout::TEST)]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct Query {
    #[command(flatten)]
    pub common: Common,
    /// Topology points as `x,y;x,y;...` in map coordinates.
    #[arg(long)]
    pub top: Option<String>,
    /// Road segment ids, comma separated.
    #[arg(long)]
    pub road: Option<String>,
    /// Region cell ids, comma separated.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Coarse filter modality (road or region).
    #[arg(long)]
    pub coarse: Option<Modality>,
    /// Survivors of the coarse stage.
    #[arg(long, default_value_t = 200)]
    pub subset: usize,
}

#[derive(Debug, Args)]
pub struct EvalSim {
    #[command(flatten)]
    pub common: Common,
    /// Query variants, e.g. `top,road,top+road`; all by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<ModalitySet>,
    /// Also run road-filtered two-stage retrieval keeping this many candidates.
    #[arg(long)]
    pub two_stage_subset: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalCond {
    #[command(flatten)]
    pub common: Common,
    /// Condition modalities; road and region by default.
    #[arg(long, value_delimiter = ',')]
    pub modality: Vec<Modality>,
    /// Condition lengths for the length-by-k sweep.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5, 10])]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct BenchHeuristics {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    /// EDR match threshold in frame units.
    #[arg(long, default_value_t = 0.25)]
    pub edr_eps: f64,
    /// Dataset to sample from, relative to the data directory.
    #[arg(long, default_value = layout::TRAIN)]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Extract(c) => extract(c),
        Command::Train(c) => train(c),
        Command::Embed(c) => embed(c),
        Command::Query(c) => query(c),
        Command::EvalSim(c) => eval_sim(c),
        Command::EvalCond(c) => eval_cond(c),
        Command::BenchHeuristics(c) => bench_heuristics(c),
        Command::Serve(c) => serve_cmd(c),
    }
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn corpus_spec(dir: &Path) -> Result<CorpusSpec, Error> {
    let kv = KeyValues::parse(&fs::read_to_string(dir.join(layout::CORPUS_CONF))?)?;
    CorpusSpec::from_kv(&kv, &CorpusSpec::toy(0))
}

fn gen_data(c: GenData) -> Result<(), Error> {
    let mut kv = c.common.settings(CORPUS_KEYS)?;
    let overrides = [
        ("seed", c.common.seed.map(|v| v.to_string())),
        ("count", c.count.map(|v| v.to_string())),
        ("rows", c.rows.map(|v| v.to_string())),
        ("cols", c.cols.map(|v| v.to_string())),
        ("min_hops", c.min_hops.map(|v| v.to_string())),
        ("max_hops", c.max_hops.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    let spec = CorpusSpec::from_kv(&kv, &CorpusSpec::toy(0))?;
    let corpus = generate_corpus(&spec)?;
    let out = c.common.out_dir()?;
    corpus.network.write(out.join(layout::NETWORK))?;
    write_grid(&out.join(layout::GRID), &corpus.grid)?;
    corpus.dataset.write(out.join(layout::RAW))?;
    let mut conf = KeyValues::default();
    spec.to_kv(&mut conf);
    fs::write(out.join(layout::CORPUS_CONF), conf.to_text())?;
    emit(json!({
        "trajectories": corpus.dataset.len(),
        "segments": corpus.network.segment_count(),
        "out": out,
    }));
    Ok(())
}

fn extract(c: Extract) -> Result<(), Error> {
    let mut kv = c.common.settings(CORPUS_KEYS)?;
    let base = corpus_spec(&c.common.data)?;
    if let Some(s) = c.common.seed {
        kv.set("seed", s);
    }
    let spec = CorpusSpec::from_kv(&kv, &base)?;
    let grid = read_grid(&c.common.data.join(layout::GRID))?;
    let mut data = Dataset::read(c.common.data.join(layout::RAW))?;
    data.extract(&grid, &spec.topology)?;
    if c.test >= data.len() {
        return Err(Error::Data(format!("cannot hold out {} of {} trajectories", c.test, data.len())));
    }
    let n_train = data.len() - c.test;
    let (train, test) = data.split_at(n_train);
    let out = c.common.out_dir()?;
    train.write(out.join(layout::TRAIN))?;
    test.write(out.join(layout::TEST))?;
    emit(json!({"train": train.len(), "test": test.len()}));
    Ok(())
}

fn train(c: Train) -> Result<(), Error> {
    let mut known: Vec<&str> = ENCODER_KEYS.to_vec();
    known.extend(TrainConfig::known_keys());
    let mut kv = c.common.settings(&known)?;
    if let Some(v) = c.common.seed {
        kv.set("seed", v);
    }
    if let Some(v) = c.epochs {
        kv.set("epochs", v);
    }
    if let Some(v) = c.lr {
        kv.set("lr", v);
    }
    if let Some(v) = c.batch {
        kv.set("batch", v);
    }
    let dir = &c.common.data;
    let network = RoadNetwork::read(dir.join(layout::NETWORK))?;
    let grid = read_grid(&dir.join(layout::GRID))?;
    let base = EncoderConfig::toy(network.segment_count(), Frame::from_bbox(&grid.bbox)?);
    let enc = EncoderConfig::from_kv(&kv, &EncoderConfig { grid: grid.rows as usize, ..base })?;
    let cfg = TrainConfig::from_kv(&kv, &TrainConfig::toy(0))?;
    let data = Dataset::read(dir.join(layout::TRAIN))?;
    let out = c.common.out_dir()?;
    let mut curve = String::new();
    let trained = train_model(&enc, &cfg, &data.records, c.common.exec(), |e, _| {
        let line = serde_json::to_string(e)?;
        eprintln!("{line}");
        curve.push_str(&line);
        curve.push('\n');
        Ok(())
    })?;
    let fp = trained.checkpoint.write(&out.join(layout::MODEL))?;
    fs::write(out.join(layout::LOSSES), curve)?;
    emit(json!({
        "fingerprint": fingerprint_hex(&fp),
        "epochs": trained.curve.len(),
        "final_loss": trained.curve.last().map(|e| e.total),
    }));
    Ok(())
}

fn load_encoders(dir: &Path) -> Result<Encoders, Error> {
    let (ck, fp) = Checkpoint::read(&dir.join(layout::MODEL))?;
    Encoders::from_checkpoint(&ck, fp)
}

fn embed(c: Embed) -> Result<(), Error> {
    c.common.settings(&[])?;
    let encoders = load_encoders(&c.common.data)?;
    let data = Dataset::read(resolve(&c.common.data, &c.dataset))?;
    let out = c.common.out_dir()?;
    fs::create_dir_all(out.join(layout::STORES))?;
    let mut rows = Vec::new();
    for m in Modality::CANONICAL {
        let store = build_store(&encoders, &data.records, m, c.common.exec())?;
        store.write(&layout::store_file(&out, m.name()))?;
        rows.push(json!({"modality": m, "rows": store.len()}));
    }
    let dataset_path = resolve(&c.common.data, &c.dataset);
    let dataset_path = fs::canonicalize(&dataset_path).unwrap_or(dataset_path);
    let mut manifest = KeyValues::default();
    manifest.set("dataset", dataset_path.display());
    manifest.set("fingerprint", fingerprint_hex(&encoders.fingerprint));
    fs::write(out.join(layout::STORES).join(layout::MANIFEST), manifest.to_text())?;
    emit(json!({"fingerprint": fingerprint_hex(&encoders.fingerprint), "stores": rows}));
    Ok(())
}

fn parse_ids(s: &str) -> Result<Vec<u32>, Error> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::Parameter(format!("bad id {t:?}"))))
        .collect()
}

fn parse_points(s: &str) -> Result<Vec<[f64; 2]>, Error> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let xy: Vec<f64> = t
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Error::Parameter(format!("bad point {t:?}"))))
                .collect::<Result<_, _>>()?;
            match xy[..] {
                [x, y] => Ok([x, y]),
                _ => Err(Error::Parameter(format!("point {t:?} needs two coordinates"))),
            }
        })
        .collect()
}

fn query(c: Query) -> Result<(), Error> {
    c.common.settings(&[])?;
    let snapshot = Snapshot::load(&c.common.data)?;
    let body = QueryBody {
        modalities: QueryModalities {
            topology: c.top.as_deref().map(parse_points).transpose()?,
            road: c.road.as_deref().map(parse_ids).transpose()?,
            region: c.region.as_deref().map(parse_ids).transpose()?,
        },
        k: c.k,
        two_stage: c.coarse.map(|coarse| TwoStageBody {
            coarse,
            subset: c.subset,
        }),
    };
    match answer(&snapshot, &body) {
        Ok(r) => {
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Err(e) => {
            let kind = e.body["error"].as_str().unwrap_or("query").to_string();
            let message = e.body["message"].as_str().unwrap_or_default().to_string();
            Err(if kind == "unsupported_subset" {
                Error::Config(format!("{message}; supported: {}", e.body["supported"]))
            } else {
                Error::Parameter(message)
            })
        }
    }
}

fn context(dir: &Path, encoders: &Encoders, seed: u64) -> Result<ReportContext, Error> {
    let ck = Checkpoint::read(&dir.join(layout::MODEL))?.0;
    Ok(ReportContext::new(&KeyValues::parse(&ck.config)?, seed, fingerprint_hex(&encoders.fingerprint)))
}

fn eval_sim(c: EvalSim) -> Result<(), Error> {
    c.common.settings(&[])?;
    let exec = c.common.exec();
    let snap = Snapshot::load(&c.common.data)?;
    let ctx = context(&c.common.data, &snap.encoders, c.common.seed.unwrap_or(0))?;
    let queries = queries_in_store(&snap)?;
    let variants = if c.variants.is_empty() {
        similarity_variants()
    } else {
        c.variants.clone()
    };
    let mut reports = Vec::new();
    for v in variants {
        reports.push(run_similarity_eval(&snap.encoders, &snap.stores, &queries, v, &ctx, exec)?);
    }
    if let Some(s) = c.two_stage_subset {
        reports.push(run_two_stage_eval(&snap.encoders, &snap.stores, &queries, Modality::Road, s, &ctx, exec)?);
    }
    let out = c.common.out_dir()?;
    fs::write(out.join(layout::EVAL_SIM), to_jsonl(&reports)?)?;
    print!("{}", ranking_table(&reports));
    Ok(())
}

/// Records indexed by the trajectory store, in store order.
fn queries_in_store(snap: &Snapshot) -> Result<Vec<omnitraj::data::TrajectoryRecord>, Error> {
    let store = snap.stores.get(Modality::Traj)?;
    Ok(store.ids().iter().map(|id| snap.records[id].clone()).collect())
}

fn eval_cond(c: EvalCond) -> Result<(), Error> {
    c.common.settings(&[])?;
    let exec = c.common.exec();
    let snap = Snapshot::load(&c.common.data)?;
    let ctx = context(&c.common.data, &snap.encoders, c.common.seed.unwrap_or(0))?;
    let queries = queries_in_store(&snap)?;
    let modalities = if c.modality.is_empty() {
        vec![Modality::Road, Modality::Region]
    } else {
        c.modality.clone()
    };
    let mut reports = Vec::new();
    let mut lines = String::new();
    for &m in &modalities {
        let r = run_condition_eval(&snap.encoders, &snap.stores, &queries, &queries, ConditionProtocol::full(m), &ctx, exec)?;
        reports.push(r);
    }
    lines.push_str(&to_jsonl(&reports)?);
    if !c.lengths.is_empty() {
        for &m in &modalities {
            let cells = condition_sweep(&snap.encoders, &snap.stores, &queries, &queries, m, &c.lengths, &c.ks, exec)?;
            for cell in &cells {
                println!("sweep {} len {:>3} k {:>3} CR {:.3}", cell.modality, cell.condition_len, cell.k, cell.cr);
            }
            lines.push_str(&to_jsonl(&cells)?);
        }
    }
    let out = c.common.out_dir()?;
    fs::write(out.join(layout::EVAL_COND), lines)?;
    print!("{}", coverage_table(&reports));
    Ok(())
}

fn bench_heuristics(c: BenchHeuristics) -> Result<(), Error> {
    c.common.settings(&[])?;
    let seed = c.common.seed.unwrap_or(0);
    let data = Dataset::read(resolve(&c.common.data, &c.dataset))?;
    let grid = read_grid(&c.common.data.join(layout::GRID))?;
    let frame = Frame::from_bbox(&grid.bbox)?;
    if c.queries == 0 || c.queries > data.len() {
        return Err(Error::Parameter(format!("cannot draw {} queries from {} trajectories", c.queries, data.len())));
    }
    let mut picked = data.records;
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(c.queries);
    picked.sort_by_key(|r| r.id());
    let mut kv = KeyValues::default();
    kv.set("edr_eps", c.edr_eps);
    kv.set("queries", c.queries);
    let ctx = ReportContext::new(&kv, seed, "");
    let mut reports = Vec::new();
    for m in Measure::all(c.edr_eps) {
        reports.push(run_heuristic_eval(&picked, &frame, m, &ctx, c.common.exec())?);
    }
    let out = c.common.out_dir()?;
    fs::write(out.join(layout::HEURISTICS), to_jsonl(&reports)?)?;
    print!("{}", ranking_table(&reports));
    Ok(())
}

fn serve_cmd(c: Serve) -> Result<(), Error> {
    c.common.settings(&[])?;
    let snapshot = Arc::new(Snapshot::load(&c.common.data)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(snapshot, c.addr))?;
    Ok(())
}
