use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use bcie_core::belief::CouplingSign;
use bcie_core::critique::{
    simulate, tune_precisions, write_jsonl, Engine, Mode, Objective, PrecisionGrid, SessionConfig, SessionTrace,
    SimulationPlan, Strategy,
};
use bcie_core::dataset::{Dataset, DatasetStats};
use bcie_core::embed::{hit_rates, train_with_callback, EmbeddingTable, Likelihood, Popularity, TrainConfig};
use bcie_core::kg::{build_user_item_kg, filter_min_facts, load_kg_triples, load_ratings, split_likes};
use bcie_core::metrics::{aggregate, emit_report, RankReport};
use bcie_core::synthetic::{generate_synthetic_kg, SyntheticSpec};
use bcie_service::{AppState, ServiceConfig};

use crate::args::{Params, PrepareArgs, ServeArgs, Settings, SimulateArgs};
use crate::error::{CliError, CliResult};

fn data_dir(s: &Settings, p: &Params) -> CliResult<PathBuf> {
    s.require("data", p.data.clone())
}

fn checkpoint_path(s: &Settings, p: &Params, data: &Path) -> CliResult<PathBuf> {
    s.or("checkpoint", p.checkpoint.clone(), data.join("model.bin"))
}

fn at(path: &Path) -> impl FnOnce(bcie_core::Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    }
}

/// Dataset and checkpoint, checked against each other.
pub fn load_model(data: &Path, checkpoint: &Path) -> CliResult<(Dataset, EmbeddingTable)> {
    let dataset = Dataset::read(data).map_err(at(data))?;
    let emb = EmbeddingTable::load(checkpoint).map_err(at(checkpoint))?;
    if emb.entity_count() != dataset.kg.entity_count() || emb.relation_count() != dataset.kg.relation_count() {
        return Err(CliError::data(format!(
            "checkpoint {} has {} entities / {} relations but the dataset has {} / {}",
            checkpoint.display(),
            emb.entity_count(),
            emb.relation_count(),
            dataset.kg.entity_count(),
            dataset.kg.relation_count()
        )));
    }
    Ok((dataset, emb))
}

pub fn cmd_prepare(params: &Params, args: &PrepareArgs) -> CliResult<DatasetStats> {
    let s = Settings::load(params)?;
    let out: PathBuf = s.require("out", params.out.clone())?;
    let min_facts = s.or("min_facts", args.min_facts, 5)?;
    let valid_frac = s.or("valid_frac", args.valid_frac, 0.1)?;
    let test_frac = s.or("test_frac", args.test_frac, 0.1)?;
    let synthetic: Option<PathBuf> = s.opt("synthetic", args.synthetic.clone())?;

    let (ids, kg, seed) = if let Some(spec_path) = synthetic {
        let spec = SyntheticSpec::load(&spec_path).map_err(at(&spec_path))?;
        let seed = s.or("seed", params.seed, spec.seed)?;
        let syn = generate_synthetic_kg(&spec, seed)?;
        (syn.ids, syn.kg, seed)
    } else {
        let ratings: PathBuf = s
            .opt("ratings", args.ratings.clone())?
            .ok_or_else(|| CliError::usage("give --synthetic SPEC or --ratings, --kg and --item-map"))?;
        let kg_path: PathBuf = s.require("kg", args.kg.clone())?;
        let map_path: PathBuf = s.require("item_map", args.item_map.clone())?;
        let threshold = s.or("threshold", args.threshold, 3.5)?;
        let mut r = load_ratings(&ratings, threshold).map_err(at(&ratings))?;
        let side = load_kg_triples(&kg_path, &map_path, &mut r.ids).map_err(at(&kg_path))?;
        let kg = build_user_item_kg(&r.likes, &side, &r.ids)?;
        (r.ids, kg, s.or("seed", params.seed, 0)?)
    };
    let kg = filter_min_facts(&kg, min_facts)?;
    let split = split_likes(&kg, valid_frac, test_frac, seed)?;
    let dataset = Dataset { ids, kg, split };
    dataset.write(&out)?;
    let stats = dataset.stats();
    tracing::info!(dir = %out.display(), "dataset written");
    Ok(stats)
}

pub fn train_config(s: &Settings, p: &Params) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        dim: s.or("dim", p.dim, d.dim)?,
        lr: s.or("lr", p.lr, d.lr)?,
        lambda: s.or("lambda", p.lambda, d.lambda)?,
        neg_ratio: s.or("neg_ratio", None, d.neg_ratio)?,
        batch_size: s.or("batch_size", None, d.batch_size)?,
        epochs: s.or("epochs", p.epochs, d.epochs)?,
        likelihood: s.or("likelihood", p.likelihood, Likelihood::Gaussian)?,
        seed: s.or("seed", p.seed, 0)?,
        init_scale: s.or("init_scale", None, d.init_scale)?,
        select_k: s.or("select_k", None, d.select_k)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_validation_hit: Option<f64>,
}

pub fn cmd_train(params: &Params) -> CliResult<TrainSummary> {
    let s = Settings::load(params)?;
    let data = data_dir(&s, params)?;
    let out = s.or("out", params.out.clone(), data.join("model.bin"))?;
    let cfg = train_config(&s, params)?;
    let dataset = Dataset::read(&data).map_err(at(&data))?;
    tracing::info!(dim = cfg.dim, lr = cfg.lr, epochs = cfg.epochs, likelihood = %cfg.likelihood, "training");
    let outcome = train_with_callback(&dataset.kg, &dataset.split, &cfg, |e| {
        tracing::info!(
            epoch = e.epoch,
            loss = e.loss,
            validation_hit10 = e.validation_hit.unwrap_or(f64::NAN),
            "epoch"
        );
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    outcome.table.save(&out)?;
    tracing::info!(best_epoch = outcome.best_epoch, checkpoint = %out.display(), "checkpoint written");
    Ok(TrainSummary {
        checkpoint: out,
        best_epoch: outcome.best_epoch,
        best_validation_hit: outcome.best_validation_hit,
    })
}

fn parse_ks(raw: &str) -> CliResult<Vec<usize>> {
    let ks: Vec<usize> = raw
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("--k: expected positive integers, got `{raw}`")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::usage(format!("--k: expected positive integers, got `{raw}`")));
    }
    Ok(ks)
}

/// Test-set hit@k CSV: a header, the model row and the popularity row.
pub fn cmd_evaluate(params: &Params) -> CliResult<String> {
    let s = Settings::load(params)?;
    let data = data_dir(&s, params)?;
    let ckpt = checkpoint_path(&s, params, &data)?;
    let ks = parse_ks(&s.or("k", params.k.clone(), "5,10".to_string())?)?;
    let (dataset, emb) = load_model(&data, &ckpt)?;
    let likes = dataset.kg.likes_relation();
    let items: Vec<_> = dataset.kg.item_ids().iter().copied().collect();
    let exclude = dataset.split.train_likes(likes);
    if dataset.split.test.is_empty() {
        return Err(CliError::data("the dataset has no test likes"));
    }
    let model = hit_rates(&emb, likes, &items, &dataset.split.test, &exclude, &ks);
    let pop = Popularity::fit(&dataset.split.train, likes, &items).hit_rates(&dataset.split.test, &exclude, &ks);

    let mut csv = String::from("model");
    for k in &ks {
        let _ = write!(csv, ",hit@{k}");
    }
    csv.push('\n');
    for (name, row) in [("simple", &model), ("popularity", &pop)] {
        csv.push_str(name);
        for v in row.iter() {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    if let Some(out) = s.opt::<PathBuf>("out", params.out.clone())? {
        std::fs::write(&out, &csv)?;
    }
    Ok(csv)
}

pub fn session_config(s: &Settings, p: &Params) -> CliResult<SessionConfig> {
    let d = SessionConfig::default();
    let k = match s.opt::<String>("k", p.k.clone())? {
        None => d.k,
        Some(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--k: expected one positive integer, got `{raw}`")))?,
    };
    let cfg = SessionConfig {
        k,
        max_steps: s.or("steps", p.steps, d.max_steps)?,
        alpha: s.or("alpha", p.alpha, d.alpha)?,
        j_m: s.or("jm", p.jm, d.j_m)?,
        j0: s.or("j0", p.j0, d.j0)?,
        eps: s.or("eps", p.eps, d.eps)?,
        sign: s.or("sign", p.sign, CouplingSign::Compat)?,
        mapped_max_items: s.or("mapped_max_items", None, d.mapped_max_items)?,
        rho: s.opt("rho", None)?,
        stop_at_top1: s.or("stop_at_top1", None, d.stop_at_top1)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_strategies(raw: &str) -> CliResult<Vec<Strategy>> {
    if raw == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    raw.split(',')
        .map(|p| p.trim().parse::<Strategy>().map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub report: RankReport,
    /// The configuration each strategy ran with.
    pub configs: Vec<(Strategy, SessionConfig)>,
}

pub fn cmd_simulate(params: &Params, args: &SimulateArgs) -> CliResult<SimulateSummary> {
    let s = Settings::load(params)?;
    let data = data_dir(&s, params)?;
    let ckpt = checkpoint_path(&s, params, &data)?;
    let out = s.or("out", params.out.clone(), data.join("simulation"))?;
    let strategies = parse_strategies(&s.or("strategy", params.strategy.clone(), "all".to_string())?)?;
    let mode = s.or("mode", params.mode, Mode::Diff)?;
    if mode == Mode::Human {
        return Err(CliError::usage("--mode must be diff or random"));
    }
    let runs = s.or("runs", params.runs, 3)?;
    let seed = s.or("seed", params.seed, 0)?;
    let workers = s.or("workers", params.workers, 0)?;
    let tune = args.tune || s.or("tune", None, false)?;
    let base = session_config(&s, params)?;
    if runs == 0 {
        return Err(CliError::usage("--runs must be positive"));
    }

    let (dataset, emb) = load_model(&data, &ckpt)?;
    let engine = Engine::new(dataset.kg, emb, &dataset.split)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("--workers: {e}")))?;
    std::fs::create_dir_all(&out)?;

    let grid = {
        let d = PrecisionGrid::default();
        PrecisionGrid {
            j0: s.list("tune_j0")?.unwrap_or(d.j0),
            j_m: s.list("tune_jm")?.unwrap_or(d.j_m),
            alpha: s.list("tune_alpha")?.unwrap_or(d.alpha),
        }
    };
    let (configs, mut traces) = pool.install(|| -> CliResult<_> {
        let mut configs = Vec::new();
        let mut traces: Vec<SessionTrace> = Vec::new();
        for &strategy in &strategies {
            let cfg = if tune {
                let objective = Objective::for_steps(base.max_steps);
                let t = tune_precisions(&engine, &dataset.split.validation, strategy, mode, &base, &grid, objective, seed)?;
                tracing::info!(%strategy, j0 = t.config.j0, jm = t.config.j_m, alpha = t.config.alpha, score = t.score, "tuned");
                t.config
            } else {
                base.clone()
            };
            let plan = SimulationPlan {
                strategies: vec![strategy],
                mode,
                runs,
                seed,
                config: cfg.clone(),
            };
            traces.extend(simulate(&engine, &dataset.split.test, &plan)?);
            configs.push((strategy, cfg));
        }
        Ok((configs, traces))
    })?;
    let order = |st: Strategy| strategies.iter().position(|&x| x == st).unwrap_or(usize::MAX);
    traces.sort_by_key(|t| (t.run, order(t.strategy), t.session));

    let mut jsonl = Vec::new();
    write_jsonl(&traces, &mut jsonl)?;
    std::fs::write(out.join("traces.jsonl"), jsonl)?;
    let mut cfg_csv = String::from("strategy,k,steps,j0,jm,alpha,eps\n");
    for (st, c) in &configs {
        let _ = writeln!(cfg_csv, "{st},{},{},{},{},{},{}", c.k, c.max_steps, c.j0, c.j_m, c.alpha, c.eps);
    }
    std::fs::write(out.join("configs.csv"), cfg_csv)?;
    let report = aggregate(&traces, base.max_steps)?;
    emit_report(&report, &out)?;
    tracing::info!(sessions = traces.len(), dir = %out.display(), "simulation written");
    Ok(SimulateSummary { out, report, configs })
}

/// Builds the service state for `cmd_serve` and tests.
pub fn service_state(params: &Params, args: &ServeArgs) -> CliResult<AppState> {
    let s = Settings::load(params)?;
    let data = data_dir(&s, params)?;
    let ckpt = checkpoint_path(&s, params, &data)?;
    let session = session_config(&s, params)?;
    let default_strategy = match s.opt::<String>("strategy", params.strategy.clone())? {
        None => Strategy::Bcie,
        Some(raw) => raw.parse()?,
    };
    let d = ServiceConfig::default();
    let config = ServiceConfig {
        session,
        default_strategy,
        ttl: s.opt::<u64>("ttl_secs", args.ttl_secs)?.map_or(d.ttl, Duration::from_secs),
        traces_dir: s.opt("traces", args.traces.clone())?,
    };
    let (dataset, emb) = load_model(&data, &ckpt)?;
    Ok(AppState::new(dataset, emb, config)?)
}

pub fn cmd_serve(params: &Params, args: &ServeArgs) -> CliResult<()> {
    let s = Settings::load(params)?;
    let port = s.or("port", params.port, 8080u16)?;
    let host = s.or("host", None, "127.0.0.1".to_string())?;
    let static_dir: Option<PathBuf> = s.opt("static", args.static_dir.clone())?;
    let static_dir = match static_dir {
        Some(d) if d.is_dir() => Some(d),
        Some(d) => {
            tracing::warn!(dir = %d.display(), "static bundle not found; serving the API only");
            None
        }
        None => None,
    };
    let app = Arc::new(service_state(params, args)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::data(format!("cannot bind {host}:{port}: {e}")))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        bcie_service::serve(listener, app, static_dir.as_deref(), bcie_service::shutdown_signal()).await?;
        Ok(())
    })
}
