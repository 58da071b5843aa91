use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use evfusion::evalbench::{
    collect_pca_vectors, cosine_table, export_features, load_manifest, load_responses, parse_manifest, pca_csv,
    pca_export, read_report, run_ablation, score_responses, write_report, AblationTable, CosineTable, EvalReport,
    FeatureSource, FileSource, LoadedSample, ReportMeta, StubSource,
};
use evfusion::events::{accumulate, parse_event_csv, render_event_frame, simulate_events, SensorSize};
use evfusion::fusion::checkpoint::{loss_history_csv, Checkpoint};
use evfusion::fusion::{lora_merge, train_stage1, train_stage2_lora, AdaptedModel, FusionModel};
use evfusion::illumination::{degrade, pnm, ratio_ladder};
use evfusion::numerics::evmf;
use evfusion::synth::{generate, mock_responses, write_corpus};

use crate::config::{EncoderKind, RunConfig};
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "evfusion", version, about = "Event-guided illumination-aware feature fusion toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the seeded synthetic triplet corpus.
    Synth(SynthArgs),
    /// Scale an image's brightness and re-quantize to 8 bits.
    Degrade(DegradeArgs),
    /// Parse, accumulate and render an event stream, or simulate one.
    Events(EventsArgs),
    /// Stage 1: train the fusion network.
    Train(TrainArgs),
    /// Stage 2: train LoRA adapters on a stage-1 checkpoint.
    Lora(LoraArgs),
    /// Cosine-similarity table across the brightness ladder plus PCA export.
    EvalFeatures(EvalFeaturesArgs),
    /// Score free-text answers into a per-ratio report.
    Score(ScoreArgs),
    /// Compare pre-fusion, post-fusion and the full model.
    Ablate(AblateArgs),
    /// Summarize report files in a directory as Markdown.
    Report(ReportArgs),
    /// Write encoder features in the file-backed layout.
    ExportFeatures(ExportFeaturesArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write `responses.jsonl` from a deterministic mock answerer.
    #[arg(long)]
    with_responses: bool,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EventsArgs {
    /// Event CSV (`t,x,y,p`) to read.
    #[arg(long, required_unless_present = "simulate", conflicts_with = "simulate")]
    csv: Option<PathBuf>,
    /// Image to simulate events from.
    #[arg(long)]
    simulate: Option<PathBuf>,
    /// Sensor width; defaults to the `<csv>.json` sidecar.
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long, default_value_t = 0)]
    t0: u64,
    #[arg(long, default_value_t = u64::MAX)]
    t1: u64,
    /// Contrast threshold for simulation.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Pixel shift for simulation.
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    shift: i64,
    /// Where to write simulated events.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Rendered event image (PPM).
    #[arg(long)]
    render: Option<PathBuf>,
    /// Raw H x W x 2 polarity counts (EVMF).
    #[arg(long)]
    frame: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV; defaults to `loss_history.csv` beside the checkpoint.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct LoraArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Stage-1 checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalFeaturesArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Fusion checkpoint; without it only the no-fusion column is filled.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding report JSON files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Markdown file; defaults to `<in>/report.md`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportFeaturesArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::usage(format!("missing --{name} (flag or config paths.{name})")))
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn ensure_parent(file: &Path) -> CliResult {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn feature_source(cfg: &RunConfig) -> CliResult<Box<dyn FeatureSource>> {
    Ok(match cfg.encoder.kind {
        EncoderKind::Stub => Box::new(StubSource::new(&cfg.encoder.stub)?),
        EncoderKind::File => {
            let dir = cfg
                .encoder
                .features_dir
                .clone()
                .ok_or_else(|| CliError::usage("encoder.kind \"file\" needs encoder.features_dir"))?;
            Box::new(FileSource::new(dir))
        }
    })
}

fn meta(cfg: &RunConfig) -> CliResult<ReportMeta> {
    Ok(ReportMeta::new(cfg, cfg.seed_map())?)
}

fn load_samples(path: &Path) -> CliResult<Vec<LoadedSample>> {
    let samples = load_manifest(path)?;
    if samples.is_empty() {
        return Err(CliError::data(format!("{}: manifest has no samples", path.display())));
    }
    Ok(samples)
}

pub(crate) fn execute(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Degrade(a) => degrade_cmd(a),
        Command::Events(a) => events(a),
        Command::Train(a) => train(cfg, a),
        Command::Lora(a) => lora(cfg, a),
        Command::EvalFeatures(a) => eval_features(cfg, a),
        Command::Score(a) => score(cfg, a),
        Command::Ablate(a) => ablate(cfg, a),
        Command::Report(a) => report(a),
        Command::ExportFeatures(a) => export(cfg, a),
    }
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> CliResult {
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(n) = a.n {
        cfg.synth.n = n;
    }
    if let Some(s) = a.seed {
        cfg.seeds.data = s;
    }
    let samples = generate(&cfg.synth_config())?;
    ensure_dir(&out)?;
    write_corpus(&samples, &out)?;
    if a.with_responses {
        let manifest = parse_manifest(
            &std::fs::read_to_string(out.join("manifest.jsonl"))
                .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?,
        )?;
        let mut text = String::new();
        for r in mock_responses(&manifest, ratio_ladder().ratios(), cfg.seeds.data) {
            text.push_str(&serde_json::to_string(&r).map_err(|e| CliError::data(e.to_string()))?);
            text.push('\n');
        }
        write(&out.join("responses.jsonl"), text)?;
    }
    eprintln!("synth: {} samples (seed {})", samples.len(), cfg.seeds.data);
    println!("{}", out.join("manifest.jsonl").display());
    Ok(())
}

fn degrade_cmd(a: DegradeArgs) -> CliResult {
    let img = pnm::load(&a.input)?;
    let out = degrade(&img, a.ratio)?;
    ensure_parent(&a.out)?;
    pnm::save(&a.out, &out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn events(a: EventsArgs) -> CliResult {
    let stream = if let Some(csv) = &a.csv {
        let size = match (a.width, a.height) {
            (Some(width), Some(height)) => SensorSize { width, height },
            (None, None) => evfusion::evalbench::read_sensor_size(csv)?.ok_or_else(|| {
                CliError::usage(format!(
                    "{}: no sensor sidecar; pass --width and --height",
                    csv.display()
                ))
            })?,
            _ => return Err(CliError::usage("--width and --height go together")),
        };
        let text = std::fs::read_to_string(csv).map_err(|e| CliError::data(format!("{}: {e}", csv.display())))?;
        parse_event_csv(&text, size.width, size.height)?
    } else {
        let path = a.simulate.as_ref().expect("clap enforces one source");
        let img = pnm::load(path)?;
        let stream = simulate_events(&img.to_gray(), a.shift, a.threshold)?;
        if let Some(out) = &a.out_csv {
            write(out, stream.to_csv())?;
            let mut side = out.as_os_str().to_owned();
            side.push(".json");
            write(
                Path::new(&side),
                serde_json::to_string(&stream.size()).map_err(|e| CliError::data(e.to_string()))? + "\n",
            )?;
        }
        stream
    };
    let frame = accumulate(&stream, a.t0, a.t1)?;
    if let Some(p) = &a.render {
        ensure_parent(p)?;
        pnm::save(p, &render_event_frame(&frame))?;
    }
    if let Some(p) = &a.frame {
        ensure_parent(p)?;
        evmf::save(p, frame.counts())?;
    }
    let (pos, neg) = frame
        .counts()
        .data()
        .chunks_exact(2)
        .fold((0.0, 0.0), |(p, n), c| (p + c[0], n + c[1]));
    println!(
        "{}",
        serde_json::json!({
            "width": stream.width(),
            "height": stream.height(),
            "events": stream.len(),
            "window_positive": pos as u64,
            "window_negative": neg as u64,
        })
    );
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.checkpoint, "out")?;
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.init_seed {
        cfg.seeds.init = v;
    }
    if let Some(v) = a.shuffle_seed {
        cfg.seeds.shuffle = v;
    }
    let samples = load_samples(&manifest)?;
    let source = feature_source(&cfg)?;
    let corpus = evfusion::evalbench::build_corpus(source.as_ref(), &samples, ratio_ladder().ratios())?;
    let tc = cfg.train_config();
    let (model, history) = train_stage1(&corpus, &tc, &cfg.fusion_config())?;
    ensure_parent(&out)?;
    Checkpoint::stage1(model, Some(tc.shuffle_seed)).save(&out)?;
    let hist_path = a
        .history
        .unwrap_or_else(|| out.parent().unwrap_or(Path::new("")).join("loss_history.csv"));
    write(&hist_path, loss_history_csv(&history))?;
    if let (Some(f), Some(l)) = (history.first(), history.last()) {
        eprintln!(
            "train: {} triplets, {} epochs, loss {f:.6e} -> {l:.6e}",
            corpus.len(),
            history.len()
        );
    }
    println!("{}", out.display());
    Ok(())
}

fn lora(mut cfg: RunConfig, a: LoraArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(v) = a.rank {
        cfg.lora.rank = v;
    }
    if let Some(v) = a.alpha {
        cfg.lora.alpha = v;
    }
    if let Some(v) = a.epochs {
        cfg.lora.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seeds.lora = v;
    }
    let base = Checkpoint::load(&ckpt)?;
    if base.lora.is_some() {
        return Err(CliError::usage(format!("{} already carries LoRA adapters", ckpt.display())));
    }
    let samples = load_samples(&manifest)?;
    let source = feature_source(&cfg)?;
    let corpus = evfusion::evalbench::build_corpus(source.as_ref(), &samples, ratio_ladder().ratios())?;
    let tc = cfg.train_config();
    let lc = cfg.lora_config();
    let before = base.model.mean_loss(&corpus)?;
    let (set, _) = train_stage2_lora(&base.model, &corpus, &tc, &lc)?;
    let after = lora_merge(&AdaptedModel {
        base: base.model.clone(),
        lora: set.clone(),
    })
    .mean_loss(&corpus)?;
    eprintln!("lora: rank {} alpha {}, mean loss {before:.6e} -> {after:.6e}", lc.rank, lc.alpha);
    ensure_parent(&out)?;
    Checkpoint::stage2(base.model, set, lc.seed, Some(tc.shuffle_seed)).save(&out)?;
    println!("{}", out.display());
    Ok(())
}

/// The model a checkpoint describes, with any adapters merged in.
fn effective_model(path: &Path) -> CliResult<FusionModel> {
    let ck = Checkpoint::load(path)?;
    Ok(match ck.lora {
        Some(lora) => lora_merge(&AdaptedModel { base: ck.model, lora }),
        None => ck.model,
    })
}

fn eval_features(cfg: RunConfig, a: EvalFeaturesArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let model = match a.checkpoint.or_else(|| cfg.paths.checkpoint.clone()) {
        Some(p) => Some(effective_model(&p)?),
        None => None,
    };
    let samples = load_samples(&manifest)?;
    let source = feature_source(&cfg)?;
    let ladder = ratio_ladder();
    let mut table = cosine_table(source.as_ref(), model.as_ref(), &samples, &ladder)?;
    table.meta = meta(&cfg)?;
    ensure_dir(&out)?;
    let (csv, json) = write_report(&table, &out)?;
    let vectors = collect_pca_vectors(source.as_ref(), model.as_ref(), &samples, ladder.ratios())?;
    let pca_path = out.join("pca.csv");
    write(&pca_path, pca_csv(&pca_export(&vectors)?))?;
    for p in [csv, json, pca_path] {
        println!("{}", p.display());
    }
    Ok(())
}

fn score(cfg: RunConfig, a: ScoreArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let responses = required(a.responses, &cfg.paths.responses, "responses")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let text =
        std::fs::read_to_string(&manifest).map_err(|e| CliError::data(format!("{}: {e}", manifest.display())))?;
    let samples = parse_manifest(&text)?;
    let responses = load_responses(&responses)?;
    let mut rep = score_responses(&samples, &responses, &ratio_ladder())?;
    rep.meta = meta(&cfg)?;
    ensure_dir(&out)?;
    let (csv, json) = write_report(&rep, &out)?;
    println!("{}\n{}", csv.display(), json.display());
    Ok(())
}

fn ablate(cfg: RunConfig, a: AblateArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let samples = load_samples(&manifest)?;
    let source = feature_source(&cfg)?;
    let mut table = run_ablation(
        source.as_ref(),
        &samples,
        ratio_ladder().ratios(),
        &cfg.train_config(),
        &cfg.fusion_config(),
    )?;
    table.meta = meta(&cfg)?;
    ensure_dir(&out)?;
    let (csv, json) = write_report(&table, &out)?;
    println!("{}\n{}", csv.display(), json.display());
    Ok(())
}

fn export(cfg: RunConfig, a: ExportFeaturesArgs) -> CliResult {
    let manifest = required(a.manifest, &cfg.paths.manifest, "manifest")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let samples = load_samples(&manifest)?;
    let source = StubSource::new(&cfg.encoder.stub)?;
    export_features(&source, &samples, ratio_ladder().ratios(), &out, "stub")?;
    println!("{}", out.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn load_if<T: evfusion::evalbench::Tabular>(dir: &Path, name: &str) -> CliResult<Option<T>> {
    let p = dir.join(name);
    if p.exists() {
        Ok(Some(read_report(&p)?))
    } else {
        Ok(None)
    }
}

/// Markdown summary of whichever report JSON files exist in the directory.
fn report(a: ReportArgs) -> CliResult {
    let dir = &a.input;
    if !dir.is_dir() {
        return Err(CliError::data(format!("{}: not a directory", dir.display())));
    }
    let cos: Option<CosineTable> = load_if(dir, "cosine_table.json")?;
    let eval: Option<EvalReport> = load_if(dir, "eval_report.json")?;
    let abl: Option<AblationTable> = load_if(dir, "ablation.json")?;
    if cos.is_none() && eval.is_none() && abl.is_none() {
        return Err(CliError::data(format!("{}: no report files found", dir.display())));
    }
    let mut md = String::from("# evfusion report\n");
    let mut metas = Vec::new();
    if let Some(t) = &cos {
        md.push_str("\n## Feature alignment (pooled cosine to normal-light features)\n\n");
        md.push_str("| ratio | no fusion | fusion |\n|---:|---:|---:|\n");
        for r in &t.rows {
            let _ = writeln!(md, "| {} | {:.4} | {} |", r.ratio, r.no_fusion, opt(r.fusion));
        }
        let _ = writeln!(md, "| avg | {:.4} | {} |", t.average.no_fusion, opt(t.average.fusion));
        metas.push(("feature alignment", &t.meta));
    }
    if let Some(t) = &eval {
        md.push_str("\n## QA scores\n\n");
        md.push_str("| ratio | MC acc | MC micro-F1 | count acc | count MAE | items | unparsed |\n");
        md.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
        let line = |label: String, m: &evfusion::evalbench::Metrics| {
            format!(
                "| {label} | {} | {} | {} | {} | {} | {:.4} |\n",
                opt(m.mc_accuracy),
                opt(m.mc_micro_f1),
                opt(m.cnt_accuracy),
                opt(m.cnt_mae),
                m.n_items,
                m.unparsed_rate
            )
        };
        for r in &t.rows {
            md.push_str(&line(r.ratio.to_string(), &r.metrics));
        }
        md.push_str(&line("avg".into(), &t.average));
        metas.push(("QA scores", &t.meta));
    }
    if let Some(t) = &abl {
        md.push_str("\n## Fusion strategy ablation (mean alignment at ratios 0.05, 0.1, 10, 20)\n\n");
        md.push_str("| strategy | alignment |\n|---|---:|\n");
        for r in &t.rows {
            let _ = writeln!(md, "| {} | {:.4} |", r.strategy.name(), r.alignment);
        }
        metas.push(("ablation", &t.meta));
    }
    md.push_str("\n## Provenance\n\n");
    for (name, m) in metas {
        let seeds: Vec<String> = m.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            md,
            "- {name}: config {}, seeds {}, brightness {}, F1 {}, ratio averaging {}",
            &m.config_hash[..12.min(m.config_hash.len())],
            seeds.join(" "),
            m.brightness_model,
            m.f1_averaging,
            m.ratio_averaging
        );
    }
    let out = a.out.unwrap_or_else(|| dir.join("report.md"));
    write(&out, md)?;
    println!("{}", out.display());
    Ok(())
}
