use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use ccmtune_core::ccm::{self, parse_matrix_json, CcmMatrix, MatrixFile};
use ccmtune_core::embedding::EmbeddingBackend;
use ccmtune_core::image::{decode_image, encode_display, read_image, RgbImage};
use ccmtune_core::metrics::{colorfulness, vibrant_dull_experiment, CorpusImage, ExperimentError, ExperimentFailure};
use ccmtune_core::objective::{ObjectiveSpec, PromptSpec, Template, TwoPromptSpec};
use ccmtune_core::optimizer::{tune_with_observer, IterationRecord, TuneObserver};
use ccmtune_core::{TuneConfig, TuneResult};
use ccmtune_service::{serve as serve_router, JobStore, Service, ServiceConfig};
use serde_json::json;

use crate::args::{ApplyArgs, Command, ExperimentArgs, PurgeArgs, ServeArgs, TuneArgs, TuningFlags};
use crate::{backend, Cli, CliError};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tune(a) => tune(a),
        Command::Apply(a) => apply(a),
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve(a),
        Command::Purge(a) => purge(a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    read_image(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Full-resolution render as written by both `tune` and `apply`.
pub fn render_png(matrix: &CcmMatrix, img: &RgbImage) -> Result<Vec<u8>, CliError> {
    encode_display(&ccm::apply(matrix, img)).map_err(CliError::usage)
}

fn load_tune_config(path: &Path) -> Result<TuneConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn set_prompt_style(objective: &mut ObjectiveSpec, template: Option<Template>, content: Option<&String>) {
    let prompts: Vec<&mut PromptSpec> = match objective {
        ObjectiveSpec::Single { prompt } => vec![prompt],
        ObjectiveSpec::TwoPrompt(t) => vec![&mut t.prompt_a, &mut t.prompt_b],
    };
    for p in prompts {
        if let Some(t) = template {
            p.template = t;
        }
        if let Some(c) = content {
            p.content = Some(c.clone());
        }
    }
}

/// Applies flag overrides on top of `cfg`, resolves the backend and
/// records its name in the config.
fn finish_config(
    mut cfg: TuneConfig,
    flags: &TuningFlags,
) -> Result<(TuneConfig, std::sync::Arc<dyn EmbeddingBackend>), CliError> {
    set_prompt_style(&mut cfg.objective, flags.template, flags.content.as_ref());
    if let Some(v) = flags.tau {
        cfg.tau = v;
    }
    if let Some(v) = flags.iters {
        cfg.iterations = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.optimizer {
        cfg.optimizer = v;
    }
    if let Some(v) = flags.grad {
        cfg.gradient = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.snapshot_every {
        cfg.snapshot_every = v;
    }
    cfg.early_stop |= flags.early_stop;
    let selector = flags
        .backend
        .clone()
        .or_else(|| cfg.backend.clone())
        .unwrap_or_else(|| "synthetic".into());
    cfg.validate()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    let backend = backend::load(&selector)?;
    cfg.backend = Some(backend.descriptor().name);
    Ok((cfg, backend))
}

fn tune_objective(a: &TuneArgs, from_file: Option<ObjectiveSpec>) -> Result<ObjectiveSpec, CliError> {
    let template = a.tuning.template.unwrap_or(Template::B);
    match (&a.prompt, &a.prompt_b, from_file) {
        (Some(p), None, _) => Ok(ObjectiveSpec::single(PromptSpec::new(template, p.as_str()))),
        (Some(p), Some(q), _) => Ok(ObjectiveSpec::TwoPrompt(TwoPromptSpec {
            prompt_a: PromptSpec::new(template, p.as_str()),
            prompt_b: PromptSpec::new(template, q.as_str()),
            alpha: a.alpha,
            temperature: 1.0,
        })),
        (None, Some(_), _) => Err(CliError::Usage("--prompt-b needs --prompt".into())),
        (None, None, Some(obj)) => Ok(obj),
        (None, None, None) => Err(CliError::Usage("--prompt is required (or a --config with an objective)".into())),
    }
}

struct Progress {
    every: usize,
    total: usize,
    quiet: bool,
}

impl TuneObserver for Progress {
    fn on_record(&mut self, r: &IterationRecord) -> ControlFlow<()> {
        if !self.quiet && r.iter > 0 && (r.iter % self.every == 0 || r.iter == self.total) {
            eprintln!("iter {:>5}/{}  loss {:+.6}", r.iter, self.total, r.loss);
        }
        ControlFlow::Continue(())
    }
}

fn record_json(r: Option<&IterationRecord>) -> serde_json::Value {
    serde_json::to_value(r).expect("record serializes")
}

fn tune(a: TuneArgs) -> Result<(), CliError> {
    let file_cfg = a.tuning.config.as_deref().map(load_tune_config).transpose()?;
    let objective = tune_objective(&a, file_cfg.as_ref().map(|c| c.objective.clone()))?;
    let base = match file_cfg {
        Some(c) => TuneConfig { objective, ..c },
        None => TuneConfig::new(objective),
    };
    let (cfg, backend) = finish_config(base, &a.tuning)?;
    let img = load_image(&a.image)?;

    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let out = |name: &str| a.out_dir.join(name);
    let config_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    write_file(&out("config.json"), &config_json)?;

    let mut progress = Progress {
        every: cfg.snapshot_every,
        total: cfg.iterations,
        quiet: a.quiet,
    };
    let result = match tune_with_observer(&img, &cfg, backend.as_ref(), &mut progress) {
        Ok(r) => r,
        Err(failure) => {
            // Keep the partial history for diagnosis.
            let mut buf = Vec::new();
            failure.trajectory.write_jsonl(&mut buf).map_err(CliError::usage)?;
            write_file(&out("trajectory.jsonl"), buf)?;
            return Err(failure.error.into());
        }
    };

    let output = render_png(&result.final_matrix, &img)?;
    let c_in = colorfulness(&img.quantized());
    let c_out = colorfulness(&decode_image(&output).map_err(CliError::usage)?);

    write_file(&out("matrix.json"), MatrixFile::from_params(&result.final_params).to_json())?;
    write_file(&out("output.png"), &output)?;
    let mut traj = Vec::new();
    result.trajectory.write_jsonl(&mut traj).map_err(CliError::usage)?;
    write_file(&out("trajectory.jsonl"), traj)?;
    write_file(&out("snapshots.json"), result.trajectory.snapshots_json())?;
    write_file(&out("result.json"), result_summary(&result, c_in, c_out))?;

    print_summary(&result, c_in, c_out);
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn result_summary(r: &TuneResult, c_in: f64, c_out: f64) -> String {
    let doc = json!({
        "config": r.config,
        "prompts": r.config.objective.prompts(),
        "backend": r.backend,
        "gradient": r.gradient,
        "iterations_run": r.trajectory.records.len().saturating_sub(1),
        "initial": record_json(r.trajectory.initial()),
        "final": record_json(r.trajectory.last()),
        "out_of_range_iterations": r.trajectory.out_of_range_iterations,
        "colorfulness_input": c_in,
        "colorfulness_output": c_out,
        "delta_C": c_out - c_in,
        "matrix": MatrixFile::from_params(&r.final_params),
        "wall_time_s": r.wall_time_s,
    });
    serde_json::to_string_pretty(&doc).expect("summary serializes")
}

fn print_summary(r: &TuneResult, c_in: f64, c_out: f64) {
    let (first, last) = match (r.trajectory.initial(), r.trajectory.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return,
    };
    let prompts = r.config.objective.prompts();
    println!("similarity  \"{}\": {:.4} -> {:.4}", prompts[0], first.sim_a, last.sim_a);
    if let (ObjectiveSpec::TwoPrompt(t), Some(b0), Some(b1)) = (&r.config.objective, first.sim_b, last.sim_b) {
        println!("similarity  \"{}\": {:.4} -> {:.4}", prompts[1], b0, b1);
        if let (Some(p0), Some(p1)) = (first.p_a, last.p_a) {
            println!("p_A: {p0:.4} -> {p1:.4} (alpha {})", t.alpha);
        }
    }
    println!("colorfulness: {c_in:.2} -> {c_out:.2} (dC {:+.2})", c_out - c_in);
    println!("loss: {:.6} -> {:.6} over {} iterations", first.loss, last.loss, last.iter);
}

fn apply(a: ApplyArgs) -> Result<(), CliError> {
    let img = load_image(&a.image)?;
    let text = fs::read_to_string(&a.matrix).map_err(io_err(&a.matrix))?;
    let matrix = parse_matrix_json(&text)?;
    write_file(&a.out, render_png(&matrix, &img)?)
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Images in `dir` sorted by file name, plus the ones that failed to load.
pub fn read_corpus(dir: &Path) -> Result<(Vec<CorpusImage>, Vec<ExperimentFailure>), CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for p in paths {
        let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match read_image(&p) {
            Ok(image) => images.push(CorpusImage { id, image }),
            Err(e) => failures.push(ExperimentFailure {
                image_id: id,
                error: e.to_string(),
            }),
        }
    }
    Ok((images, failures))
}

fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let base = match &a.tuning.config {
        Some(p) => load_tune_config(p)?,
        None => TuneConfig::for_keyword("vibrant"),
    };
    let (base, backend) = finish_config(base, &a.tuning)?;
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let (images, unreadable) = read_corpus(&a.corpus)?;
    if images.is_empty() {
        return Err(CliError::Usage(format!("no readable images in {}", a.corpus.display())));
    }
    for f in &unreadable {
        eprintln!("skipping {}: {}", f.image_id, f.error);
    }

    let sweep = !a.sweep_tau.is_empty();
    let taus = if sweep { a.sweep_tau.clone() } else { vec![base.tau] };
    let mut rows = Vec::new();
    for tau in taus {
        let cfg = TuneConfig { tau, ..base.clone() };
        let mut report = match vibrant_dull_experiment(&images, &cfg, backend.as_ref(), a.jobs) {
            Ok(r) => r,
            Err(ExperimentError::AllFailed(failures)) => {
                for f in &failures {
                    eprintln!("{}: {}", f.image_id, f.error);
                }
                return Err(CliError::Backend(format!("all {} images failed at tau {tau}", failures.len())));
            }
            Err(ExperimentError::Tune(e)) => return Err(e.into()),
            Err(e) => return Err(CliError::usage(e)),
        };
        report.failures.extend(unreadable.iter().cloned());
        let dir = if sweep { a.out_dir.join(format!("tau-{tau}")) } else { a.out_dir.clone() };
        report.save(&dir).map_err(CliError::usage)?;
        for f in &report.failures {
            eprintln!("failed {}: {}", f.image_id, f.error);
        }
        println!(
            "tau {tau}: dC {:+.3}  dCLIP-IQA {:+.4}  ({} ok, {} failed) -> {}",
            report.delta_c,
            report.delta_clip_iqa,
            report.per_image.len(),
            report.failures.len(),
            dir.display()
        );
        rows.push(json!({
            "tau": tau,
            "delta_C": report.delta_c,
            "delta_clip_iqa": report.delta_clip_iqa,
            "images": report.per_image.len(),
            "failures": report.failures.len(),
        }));
    }
    if sweep {
        let deltas: Vec<f64> = rows.iter().map(|r| r["delta_C"].as_f64().unwrap_or(f64::NAN)).collect();
        let monotone = deltas.windows(2).all(|w| w[1] >= w[0]);
        println!("dC non-decreasing over tau: {monotone}");
        let doc = json!({ "sweep": rows, "delta_C_non_decreasing": monotone });
        write_file(
            &a.out_dir.join("sweep.json"),
            serde_json::to_string_pretty(&doc).expect("sweep serializes"),
        )?;
    }
    Ok(())
}

fn service_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    ServiceConfig::resolve(path, |k| std::env::var(k).ok()).map_err(CliError::usage)
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = ctrl_c => {},
                    _ = term.recv() => {},
                }
            }
            Err(_) => {
                let _ = ctrl_c.await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let cfg = service_config(a.config.as_deref())?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let rt = tokio::runtime::Runtime::new().map_err(CliError::usage)?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(&a.listen))
        .map_err(|source| CliError::Bind {
            addr: a.listen.clone(),
            source,
        })?;
    let addr = listener.local_addr().map_err(CliError::usage)?;
    let service = Service::start(&cfg).map_err(CliError::usage)?;
    println!("listening on http://{addr}");
    let _ = std::io::stdout().flush();
    let served = rt.block_on(serve_router(listener, service.router(), shutdown_signal()));
    service.shutdown();
    served.map_err(CliError::usage)
}

fn purge(a: PurgeArgs) -> Result<(), CliError> {
    let cfg = service_config(a.config.as_deref())?;
    let store = JobStore::open(&cfg.data_dir, cfg.queue_limit).map_err(CliError::usage)?;
    let removed = store.purge(a.include_done).map_err(CliError::usage)?;
    for id in &removed {
        println!("{id}");
    }
    eprintln!("removed {} jobs from {}", removed.len(), cfg.data_dir.display());
    Ok(())
}
