use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smoothdate_core::datastore::{
    feedback_load, generate_synthetic, load_dataset, partition, save_dataset, DatasetFormat,
    SplitOutcome,
};
use smoothdate_core::model::{EvalSnapshot, Trainer};
use smoothdate_core::pipeline::{build_index, evaluate, project_year_centers, projection_csv};
use smoothdate_core::{
    Error as CoreError, ProjectionModel, RankedHit, RelevanceMatrix, RelevanceSpec, RetrievalIndex,
    SyntheticSpec, TrainingConfig, TrainingReport, YearEstimate,
};
use smoothdate_service::config::{Config, ConfigBuilder, Origin};
use smoothdate_service::{AppState, Resolved};

use crate::{Cli, CliError, Command, DataArgs};

type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = ConfigBuilder::new().file(cli.config.as_deref());
    if let Some(dir) = &cli.data_dir {
        builder = builder.flag("data.data_dir", dir)?;
    }
    match cli.command {
        Command::Synth(args) => {
            if let Some(path) = &args.spec {
                let spec: SyntheticSpec = read_json(path)?;
                builder = builder.section("synth", spec, Origin::File)?;
            }
            builder = set(builder, "synth.year_lo", args.year_lo)?;
            builder = set(builder, "synth.year_hi", args.year_hi)?;
            builder = set(builder, "synth.docs_per_year", args.docs_per_year)?;
            builder = set(builder, "synth.feature_dim", args.feature_dim)?;
            builder = set(builder, "synth.noise_sigma", args.noise_sigma)?;
            builder = set(builder, "synth.mixing_seed", args.seed)?;
            let cfg = finish(builder, cli.verbose)?;
            synth(&cfg, &args.out)
        }
        Command::Train(args) => {
            builder = data_flags(builder, &args.data)?;
            builder = set(builder, "data.matrix", args.matrix.as_ref())?;
            if let Some(spec) = &args.matrix_spec {
                builder = builder.section("relevance", parse_spec(spec)?, Origin::Flag)?;
            }
            builder = set(builder, "training.max_iterations", args.iters)?;
            builder = set(builder, "training.tau", args.tau)?;
            builder = set(builder, "training.eta", args.eta)?;
            builder = set(builder, "training.batch_size", args.batch_size)?;
            builder = set(builder, "training.momentum", args.momentum)?;
            builder = set(builder, "training.seed", args.seed)?;
            builder = set(builder, "model.seed", args.model_seed)?;
            builder = set(builder, "model.hidden", args.hidden.as_ref())?;
            builder = set(builder, "model.embedding_dim", args.embedding_dim)?;
            builder = set(builder, "model.activation", args.activation.as_ref())?;
            let cfg = finish(builder, cli.verbose)?;
            let out = cfg.data.resolve(&args.out);
            let report = match &args.report {
                Some(p) => cfg.data.resolve(p),
                None => with_suffix(&out, ".report.json"),
            };
            train(&cfg, &out, &report, args.timings)
        }
        Command::Eval(args) => {
            builder = data_flags(builder, &args.data)?;
            builder = set(builder, "retrieval.k", args.k)?;
            let cfg = finish(builder, cli.verbose)?;
            let metrics = eval(&cfg, &cfg.data.resolve(&args.checkpoint))?;
            println!(
                "{}",
                serde_json::to_string(&metrics).expect("metrics serialize")
            );
            Ok(())
        }
        Command::Index(args) => {
            builder = data_flags(builder, &args.data)?;
            builder = set(builder, "data.feedback", args.feedback.as_ref())?;
            let cfg = finish(builder, cli.verbose)?;
            index(
                &cfg,
                &cfg.data.resolve(&args.checkpoint),
                &cfg.data.resolve(&args.out),
            )
        }
        Command::Query(args) => {
            builder = set(builder, "retrieval.top_k", args.top_k)?;
            builder = set(builder, "retrieval.k", args.k)?;
            let cfg = finish(builder, cli.verbose)?;
            let explicit_k = args.k.is_some();
            let d = &cfg.data;
            query(
                &cfg,
                &d.resolve(&args.checkpoint),
                &d.resolve(&args.index),
                &d.resolve(&args.features_file),
                explicit_k,
                args.json,
            )
        }
        Command::Project(args) => {
            let cfg = finish(builder, cli.verbose)?;
            let d = &cfg.data;
            project(
                &d.resolve(&args.checkpoint),
                &d.resolve(&args.index),
                &d.resolve(&args.out),
            )
        }
        Command::Serve(args) => {
            builder = builder.process_env();
            builder = set(builder, "server.host", args.host.as_ref())?;
            builder = set(builder, "server.port", args.port)?;
            builder = data_flags(builder, &args.data)?;
            builder = set(builder, "data.checkpoint", args.checkpoint.as_ref())?;
            builder = set(builder, "data.matrix", args.matrix.as_ref())?;
            let cfg = finish(builder, cli.verbose)?;
            serve(cfg)
        }
    }
}

fn set<T: Serialize>(b: ConfigBuilder, key: &str, value: Option<T>) -> Result<ConfigBuilder> {
    Ok(match value {
        Some(v) => b.flag(key, v)?,
        None => b,
    })
}

fn data_flags(mut b: ConfigBuilder, args: &DataArgs) -> Result<ConfigBuilder> {
    b = set(b, "data.dataset", args.data.as_ref())?;
    b = set(b, "data.test_fraction", args.test_fraction)?;
    set(b, "data.split_seed", args.split_seed)
}

fn finish(builder: ConfigBuilder, verbose: bool) -> Result<Config> {
    let resolved: Resolved = builder.build()?;
    if verbose {
        eprint!("{}", resolved.describe());
    }
    Ok(resolved.config)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Inline JSON when it looks like an object, otherwise a JSON file.
fn parse_spec(arg: &str) -> Result<RelevanceSpec> {
    let spec: RelevanceSpec = if arg.trim_start().starts_with('{') {
        serde_json::from_str(arg).map_err(|e| CliError::Usage(format!("--matrix-spec: {e}")))?
    } else {
        read_json(Path::new(arg))?
    };
    spec.validate()?;
    Ok(spec)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source,
    })
}

fn synth(cfg: &Config, out: &Path) -> Result<()> {
    let out = cfg.data.resolve(out);
    let spec = SyntheticSpec::from(&cfg.synth);
    let records = generate_synthetic(&spec)?;
    save_dataset(&out, &records, DatasetFormat::from_path(&out))?;
    let echo = serde_json::to_string_pretty(&spec).expect("spec serializes");
    write_file(&with_suffix(&out, ".spec.json"), echo.as_bytes())?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn load_split(cfg: &Config) -> Result<SplitOutcome> {
    let path = cfg
        .data
        .dataset
        .as_ref()
        .map(|p| cfg.data.resolve(p))
        .ok_or_else(|| CliError::Usage("no dataset given (use --data)".into()))?;
    let (records, report) = load_dataset(&path, DatasetFormat::from_path(&path), false)?;
    for w in &report.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(partition(
        &records,
        cfg.data.test_fraction,
        cfg.data.split_seed,
    )?)
}

fn load_matrix(cfg: &Config, split: &SplitOutcome) -> Result<RelevanceMatrix> {
    if let Some(p) = &cfg.data.matrix {
        return Ok(RelevanceMatrix::load(cfg.data.resolve(p))?);
    }
    let mut years: Vec<i32> = split
        .train
        .iter()
        .chain(&split.test)
        .filter_map(|r| r.year)
        .collect();
    years.sort_unstable();
    years.dedup();
    Ok(RelevanceMatrix::build(&years, &cfg.relevance)?)
}

fn load_model(path: &Path) -> Result<ProjectionModel> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(ProjectionModel::load(path)?)
}

fn check_dims(model: &ProjectionModel, split: &SplitOutcome) -> Result<()> {
    if let Some(r) = split.train.iter().chain(&split.test).next() {
        if r.features.len() != model.input_dim() {
            return Err(CliError::Usage(format!(
                "checkpoint expects {} features, dataset has {}",
                model.input_dim(),
                r.features.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Failure {
    iteration: usize,
    message: String,
}

/// Training report as written to disk.
#[derive(Debug, Serialize)]
struct RunReport<'a> {
    config: &'a TrainingConfig,
    tau: f64,
    layer_dims: &'a [usize],
    #[serde(flatten)]
    report: &'a TrainingReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<Failure>,
}

fn train(cfg: &Config, out: &Path, report_path: &Path, timings: bool) -> Result<()> {
    let split = load_split(cfg)?;
    let matrix = load_matrix(cfg, &split)?;
    let input_dim = split
        .train
        .first()
        .map(|r| r.features.len())
        .ok_or_else(|| CliError::Usage("training split is empty".into()))?;
    let dims = cfg.model.layer_dims(input_dim);
    let model = ProjectionModel::init(&dims, cfg.model.activation, cfg.model.seed)?;
    let tcfg = cfg.training.training_config();
    let lcfg = cfg.training.loss_config();

    let mut trainer = Trainer::new(model, &split.train, &matrix, tcfg.clone(), lcfg)?;
    let mut failure = None;
    while !trainer.is_finished() {
        if let Err(e) = trainer.step() {
            failure = Some(e);
            break;
        }
    }
    let (model, mut report) = trainer.finish();
    if !timings {
        report.iteration_seconds.clear();
    }
    let write_report = |report: &TrainingReport, failure: Option<Failure>| -> Result<()> {
        let run = RunReport {
            config: &tcfg,
            tau: lcfg.tau,
            layer_dims: &dims,
            report,
            failure,
        };
        let text = serde_json::to_string_pretty(&run).expect("report serializes");
        write_file(report_path, text.as_bytes())
    };
    if let Some(e) = failure {
        let iteration = match &e {
            CoreError::NumericFailure { iteration, .. } => *iteration,
            _ => report.losses.len(),
        };
        write_report(
            &report,
            Some(Failure {
                iteration,
                message: e.to_string(),
            }),
        )?;
        return Err(e.into());
    }
    if !split.test.is_empty() {
        let index = build_index(&model, &split.train, &[])?;
        let k = cfg.retrieval.k.min(index.len());
        report.final_eval = Some(evaluate(
            &model,
            &index,
            &split.test,
            k,
            cfg.retrieval.weighting,
        )?);
    }
    write_file(out, model.to_json()?.as_bytes())?;
    write_report(&report, None)?;
    eprintln!(
        "trained {} iterations; final loss {:.6}; checkpoint {}",
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Metrics printed by `eval`.
#[derive(Debug, Serialize)]
struct Metrics {
    mae: f64,
    map: f64,
    n: usize,
}

fn eval(cfg: &Config, checkpoint: &Path) -> Result<Metrics> {
    let model = load_model(checkpoint)?;
    let split = load_split(cfg)?;
    check_dims(&model, &split)?;
    if split.test.is_empty() {
        return Err(CliError::Usage("test split is empty".into()));
    }
    let index = build_index(&model, &split.train, &[])?;
    let EvalSnapshot { mae, map, n } = evaluate(
        &model,
        &index,
        &split.test,
        cfg.retrieval.k,
        cfg.retrieval.weighting,
    )?;
    Ok(Metrics { mae, map, n })
}

fn index(cfg: &Config, checkpoint: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let split = load_split(cfg)?;
    check_dims(&model, &split)?;
    let journal = cfg.data.resolve(&cfg.data.feedback);
    let feedback = feedback_load(&journal)?.records;
    let index = build_index(&model, &split.train, &feedback)?;
    index.save_snapshot(out)?;
    eprintln!("indexed {} documents into {}", index.len(), out.display());
    Ok(())
}

fn load_index(path: &Path) -> Result<RetrievalIndex> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "index {} does not exist",
            path.display()
        )));
    }
    Ok(RetrievalIndex::load_snapshot(path)?)
}

#[derive(Debug, Serialize)]
struct QueryOutput {
    query: String,
    hits: Vec<RankedHit>,
    estimate: YearEstimate,
}

fn query(
    cfg: &Config,
    checkpoint: &Path,
    index_path: &Path,
    features: &Path,
    explicit_k: bool,
    json: bool,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let index = load_index(index_path)?;
    if index.is_empty() {
        return Err(CoreError::EmptyIndex.into());
    }
    if !features.exists() {
        return Err(CliError::Usage(format!(
            "{} does not exist",
            features.display()
        )));
    }
    let (queries, _) = load_dataset(features, DatasetFormat::from_path(features), false)?;
    let top_k = cfg.retrieval.top_k.min(index.len());
    let k = if explicit_k {
        cfg.retrieval.k
    } else {
        cfg.retrieval.k.min(index.len())
    };
    let mut outputs = Vec::with_capacity(queries.len());
    for q in &queries {
        if q.features.len() != model.input_dim() {
            return Err(CliError::Usage(format!(
                "query {}: expected {} features, found {}",
                q.doc_id,
                model.input_dim(),
                q.features.len()
            )));
        }
        let e = model.embed(&q.features)?;
        outputs.push(QueryOutput {
            query: q.doc_id.clone(),
            hits: index.query(&e, top_k)?,
            estimate: index.estimate_year(&e, k, cfg.retrieval.weighting)?,
        });
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let io = |source| CliError::Io {
        context: "cannot write to stdout".into(),
        source,
    };
    if json {
        let text = serde_json::to_string(&outputs).expect("output serializes");
        writeln!(w, "{text}").map_err(io)?;
        return Ok(());
    }
    for o in &outputs {
        writeln!(w, "query {}", o.query).map_err(io)?;
        writeln!(
            w,
            "{:>6}  {:<24} {:>6}  {:>10}",
            "rank", "doc_id", "year", "similarity"
        )
        .map_err(io)?;
        for (i, h) in o.hits.iter().enumerate() {
            writeln!(
                w,
                "{:>6}  {:<24} {:>6}  {:>10.6}",
                i + 1,
                h.doc_id,
                h.year,
                h.similarity
            )
            .map_err(io)?;
        }
        writeln!(
            w,
            "estimate {:.2} from {} neighbors\n",
            o.estimate.predicted_year,
            o.estimate.neighbor_ids.len()
        )
        .map_err(io)?;
    }
    Ok(())
}

fn project(checkpoint: &Path, index_path: &Path, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let index = load_index(index_path)?;
    if let Some(dim) = index.dim() {
        if dim != model.embedding_dim() {
            return Err(CliError::Usage(format!(
                "index embeddings have dimension {dim}, checkpoint produces {}",
                model.embedding_dim()
            )));
        }
    }
    let projection = project_year_centers(&index)?;
    if !projection.excluded_years.is_empty() {
        log::warn!(
            "years without a usable center: {:?}",
            projection.excluded_years
        );
    }
    write_file(out, projection_csv(&projection).as_bytes())
}

fn serve(cfg: Config) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            context: "cannot start runtime".into(),
            source,
        })?;
    runtime.block_on(async move {
        let listener = smoothdate_service::bind(&cfg).await?;
        let state = AppState::load(cfg)?;
        if let Ok(addr) = listener.local_addr() {
            println!("listening on {addr}");
            let _ = std::io::stdout().flush();
        }
        smoothdate_service::serve(listener, state, shutdown_signal()).await?;
        eprintln!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
