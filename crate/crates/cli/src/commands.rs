//! One function per subcommand. Each reads normalized FAM CSVs and model
//! files, runs one pipeline stage and writes its artifacts to the output
//! directory with a header line naming the config digest and seed.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use fededge::data::csv_io::{fam_to_csv, parse_csv};
use fededge::data::*;
use fededge::federated::*;
use fededge::models::*;
use fededge::pruning::*;
use fededge::xai::*;
use fededge::{Error, Result};

use crate::config::{require_file, Resolved};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `# header` followed by `body`.
fn with_header(header: &str, body: &str) -> String {
    format!("# {header}\n{body}")
}

pub struct Ctx {
    pub run: Resolved,
    command: &'static str,
}

impl Ctx {
    pub fn new(run: Resolved, command: &'static str) -> Result<Self> {
        let dir = &run.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(Self { run, command })
    }

    fn header(&self) -> String {
        self.run.header(self.command)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.run.config.output_dir.join(name)
    }

    /// Write a text artifact under the output directory.
    fn emit(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out(name);
        write_file(&path, with_header(&self.header(), body))?;
        Ok(path)
    }

    fn emit_fam(&self, name: &str, fam: &Fam) -> Result<PathBuf> {
        let path = self.out(name);
        write_file(&path, fam_to_csv(fam, Some(&self.header())))?;
        Ok(path)
    }

    fn emit_model(
        &self,
        name: &str,
        descriptor: &ModelDescriptor,
        params: &fededge::nn::ParameterSet,
    ) -> Result<PathBuf> {
        let path = self.out(name);
        write_model(&path, descriptor, params, Some(&self.header()))?;
        Ok(path)
    }

    /// An explicit path, else the configured one, else `default` in the
    /// output directory.
    fn input(
        &self,
        explicit: Option<PathBuf>,
        configured: Option<&PathBuf>,
        default: &str,
    ) -> PathBuf {
        explicit
            .or_else(|| configured.cloned())
            .unwrap_or_else(|| self.out(default))
    }
}

/// Read a FAM CSV; files written by this tool declare their classes in a
/// comment and carry a `label` column.
pub fn read_fam(path: &Path) -> Result<Fam> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let labeled = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .any(|l| l.trim_start_matches('#').trim().starts_with("classes:"));
    let options = if labeled {
        CsvOptions::labeled("label")
    } else {
        CsvOptions::default()
    };
    let (fam, _) = parse_csv(&text, &options).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(fam)
}

fn read_fams(paths: &[PathBuf]) -> Result<Fam> {
    let mut iter = paths.iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Config("no input FAM given".into()))?;
    let mut fam = strip_labels(&read_fam(first)?);
    for p in iter {
        fam = fam.concat(&strip_labels(&read_fam(p)?))?;
    }
    Ok(fam)
}

fn read_labeled(path: &Path) -> Result<Fam> {
    let fam = read_fam(path)?;
    fam.require_labels("this command")?;
    Ok(fam)
}

fn read_classifier(path: &Path) -> Result<(SemiSupervisedModel, String)> {
    require_file(path)?;
    let (descriptor, params) = read_model(path)?;
    Ok((
        SemiSupervisedModel::from_descriptor(&descriptor, &params)?,
        descriptor.schema_id,
    ))
}

fn read_vae(path: &Path) -> Result<(VaeModel, String)> {
    require_file(path)?;
    let (descriptor, params) = read_model(path)?;
    Ok((
        VaeModel::from_descriptor(&descriptor, &params)?,
        descriptor.schema_id,
    ))
}

fn check_schema(model_schema: &str, fam: &Fam) -> Result<()> {
    if model_schema != fam.schema_id() {
        return Err(Error::Data(format!(
            "model expects schema {model_schema:?}, data has {:?}",
            fam.schema_id()
        )));
    }
    Ok(())
}

/// The VAE configuration for data of width `width`.
fn vae_config(ctx: &Ctx, width: usize) -> VaeConfig {
    let mut cfg = ctx.run.config.vae.clone();
    if cfg.input_dim != width {
        log::info!(
            "vae.input_dim {} replaced by the data width {width}",
            cfg.input_dim
        );
        cfg.input_dim = width;
    }
    cfg
}

// --- extract ---------------------------------------------------------------

pub struct ExtractArgs {
    pub packets: Option<PathBuf>,
    pub csv: Vec<PathBuf>,
    pub label_column: Option<String>,
    pub stats: Option<PathBuf>,
    pub name: String,
}

pub fn extract(ctx: &Ctx, args: ExtractArgs) -> Result<()> {
    let data = &ctx.run.config.data;
    let packets = args.packets.or_else(|| data.packet_log.clone());
    let csvs = if args.csv.is_empty() {
        data.csv.clone()
    } else {
        args.csv
    };
    let raw = match (packets, csvs.is_empty()) {
        (Some(_), false) => {
            return Err(Error::Config(
                "give either a packet log or flow CSVs, not both".into(),
            ))
        }
        (Some(log_path), true) => {
            require_file(&log_path)?;
            let text = std::fs::read_to_string(&log_path).map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            let log = parse_packet_log(&text);
            let flows = assemble_flows(&log.events, data.idle_timeout);
            let schema = FeatureSchema::default_flow();
            let rows = flows
                .flows
                .iter()
                .map(|f| compute_features(f, &schema).map(|v| v.values))
                .collect::<Result<Vec<_>>>()?;
            println!(
                "packets {} (malformed {}, skipped {}), flows {}",
                log.events.len(),
                log.malformed,
                flows.skipped,
                rows.len()
            );
            if rows.is_empty() {
                return Err(Error::Empty("no flows in the packet log"));
            }
            Fam::unlabeled(schema.id.clone(), schema.columns.clone(), rows)?
        }
        (None, false) => {
            let label = args.label_column.or_else(|| data.label_column.clone());
            let options = CsvOptions {
                label_column: label,
                ..CsvOptions::default()
            };
            let mut merged: Option<Fam> = None;
            for p in &csvs {
                require_file(p)?;
                let (fam, report) = load_csv(p, &options)?;
                println!(
                    "{}: rows kept {}, dropped {}",
                    p.display(),
                    report.rows_kept,
                    report.rows_dropped
                );
                merged = Some(match merged {
                    None => fam,
                    Some(m) if m.is_labeled() => m.concat_merging_classes(&fam)?,
                    Some(m) => m.concat(&fam)?,
                });
            }
            merged.expect("at least one CSV")
        }
        (None, true) => {
            return Err(Error::Config(
                "extract needs --packets or --csv (or data.packet_log / data.csv)".into(),
            ))
        }
    };
    let fam = match &args.stats {
        Some(p) => {
            require_file(p)?;
            raw.apply_normalization(&NormalizationStats::load(p)?)?
        }
        None => normalize(&raw)?,
    };
    let stats = fam.normalization().expect("normalized above");
    let csv = ctx.emit_fam(&format!("{}.csv", args.name), &fam)?;
    ctx.emit(&format!("{}.norm", args.name), &stats.to_sidecar())?;
    println!(
        "rows {}, columns {}, written to {}",
        fam.len(),
        fam.width(),
        csv.display()
    );
    Ok(())
}

// --- pretrain --------------------------------------------------------------

fn loss_csv(history: &VaeHistory) -> String {
    let mut out = String::from("epoch,reconstruction,kl,total\n");
    for (i, e) in history.epochs.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", i + 1, e.reconstruction, e.kl, e.total);
    }
    out
}

pub fn pretrain(ctx: &Ctx, data: Vec<PathBuf>, name: &str) -> Result<()> {
    let paths = if data.is_empty() {
        ctx.run.config.data.unlabeled.clone()
    } else {
        data
    };
    let fam = read_fams(&paths)?;
    let cfg = vae_config(ctx, fam.width());
    let (model, history) = train_vae(&fam, &cfg)?;
    ctx.emit_model(
        &format!("{name}.fetc"),
        &model.descriptor(fam.schema_id()),
        &model.parameters(),
    )?;
    ctx.emit(&format!("{name}_loss.csv"), &loss_csv(&history))?;
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        println!(
            "epochs {}, loss {:.6} -> {:.6}",
            history.epochs.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

// --- federate --------------------------------------------------------------

pub struct FederateArgs {
    pub shards: Vec<PathBuf>,
    pub join: Option<String>,
    pub client_id: Option<String>,
    pub name: String,
}

fn client_id_for(path: &Path, index: usize) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{index:03}-{stem}")
}

pub fn federate(ctx: &Ctx, args: FederateArgs) -> Result<()> {
    let shards = if args.shards.is_empty() {
        ctx.run.config.data.unlabeled.clone()
    } else {
        args.shards
    };
    let fed = &ctx.run.config.federation;

    if let Some(address) = args.join {
        let [shard] = shards.as_slice() else {
            return Err(Error::Config(
                "a joining client takes exactly one shard".into(),
            ));
        };
        let data = strip_labels(&read_fam(shard)?);
        let id = args.client_id.unwrap_or_else(|| client_id_for(shard, 0));
        let mut client = ClientState::new(id, data.clone(), &vae_config(ctx, data.width()))?;
        let timeout = match &fed.transport {
            Transport::Socket { timeout_secs, .. } => Duration::from_secs_f64(*timeout_secs),
            Transport::InProcess => Duration::from_secs(60),
        };
        let rounds = transport_connect(&mut client, address.as_str(), timeout)?;
        println!("served {rounds} rounds");
        return Ok(());
    }

    let fams = shards
        .iter()
        .map(|p| read_fam(p).map(|f| strip_labels(&f)))
        .collect::<Result<Vec<_>>>()?;
    // A socket server holds no client data; a shard, if given, only fixes
    // the width and schema.
    let (width, schema) = match fams.first() {
        Some(f) => (f.width(), f.schema_id().to_string()),
        None if matches!(fed.transport, Transport::Socket { .. }) => {
            (ctx.run.config.vae.input_dim, DEFAULT_SCHEMA_ID.to_string())
        }
        None => {
            return Err(Error::Config(
                "federate needs client shards (--shard or data.unlabeled)".into(),
            ))
        }
    };
    let cfg = vae_config(ctx, width);
    let mut server = ServerState::new(VaeModel::new(&cfg)?, None);
    let history = match &fed.transport {
        Transport::InProcess => {
            let mut clients = shards
                .iter()
                .zip(fams)
                .enumerate()
                .map(|(i, (p, f))| ClientState::new(client_id_for(p, i), f, &cfg))
                .collect::<Result<Vec<_>>>()?;
            run_federation(fed, &mut clients, &mut server)?.1
        }
        Transport::Socket { address, .. } => {
            let listener = TcpListener::bind(address.as_str())?;
            log::info!("waiting for clients on {}", listener.local_addr()?);
            serve_federation(&mut server, &listener, fed)?
        }
    };
    ctx.emit_model(
        &format!("{}.fetc", args.name),
        &server.global_model.descriptor(&schema),
        &server.global_model.parameters(),
    )?;
    ctx.emit("rounds.csv", &history_to_csv(&history))?;
    if let Some(last) = history.last() {
        println!(
            "rounds {}, final loss {:.6}, digest {}",
            history.len(),
            last.aggregated_loss,
            last.global_params_digest
        );
    }
    Ok(())
}

// --- finetune / evaluate ---------------------------------------------------

fn emit_report(ctx: &Ctx, prefix: &str, report: &EvaluationReport) -> Result<()> {
    ctx.emit(&format!("{prefix}.txt"), &report.to_text())?;
    ctx.emit(&format!("{prefix}.csv"), &report.to_csv())?;
    ctx.emit(&format!("{prefix}_confusion.csv"), &report.confusion_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

/// The labeled set and the held-out set: an explicit test FAM, or a split.
fn train_test(
    ctx: &Ctx,
    labeled: Option<PathBuf>,
    test: Option<PathBuf>,
) -> Result<(Fam, Fam, bool)> {
    let data = &ctx.run.config.data;
    let labeled_path = labeled
        .or_else(|| data.labeled.clone())
        .ok_or_else(|| Error::Config("no labeled FAM (--labeled or data.labeled)".into()))?;
    let labeled = read_labeled(&labeled_path)?;
    match test.or_else(|| data.test.clone()) {
        Some(p) => Ok((labeled, read_labeled(&p)?, false)),
        None => {
            let (train, test) = split(&labeled, data.partition_ratio, ctx.run.config.seed)?;
            Ok((train, test, true))
        }
    }
}

pub struct FinetuneArgs {
    pub vae: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub name: String,
}

fn default_vae(ctx: &Ctx) -> PathBuf {
    let global = ctx.out("global_vae.fetc");
    if global.is_file() {
        global
    } else {
        ctx.out("vae.fetc")
    }
}

pub fn finetune(ctx: &Ctx, args: FinetuneArgs) -> Result<()> {
    let vae_path = args.vae.unwrap_or_else(|| default_vae(ctx));
    let (vae, schema) = read_vae(&vae_path)?;
    let (train, test, was_split) = train_test(ctx, args.labeled, args.test)?;
    check_schema(&schema, &train)?;
    let c = &ctx.run.config.classifier;
    let mut model = build_classifier(
        &vae,
        train.class_names().to_vec(),
        c.freeze_encoder,
        &c.cnn,
        ctx.run.config.seed,
    )?;
    let losses = fine_tune(&mut model, &train, &c.fine_tune)?;
    ctx.emit_model(
        &format!("{}.fetc", args.name),
        &model.descriptor(&schema),
        &model.parameters(),
    )?;
    let mut loss_csv = String::from("epoch,cross_entropy\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(loss_csv, "{},{l}", i + 1);
    }
    ctx.emit(&format!("{}_loss.csv", args.name), &loss_csv)?;
    if was_split {
        ctx.emit_fam("train.csv", &train)?;
        ctx.emit_fam("test.csv", &test)?;
    }
    emit_report(ctx, "evaluation", &evaluate(&model, &test)?)
}

pub fn evaluate_cmd(
    ctx: &Ctx,
    model: Option<PathBuf>,
    test: Option<PathBuf>,
    name: &str,
) -> Result<()> {
    let (model, schema) = read_classifier(&ctx.input(model, None, "classifier.fetc"))?;
    let test = read_labeled(&ctx.input(test, ctx.run.config.data.test.as_ref(), "test.csv"))?;
    check_schema(&schema, &test)?;
    emit_report(ctx, name, &evaluate(&model, &test)?)
}

// --- sweep -----------------------------------------------------------------

pub fn sweep(ctx: &Ctx, vae: Option<PathBuf>, labeled: Option<PathBuf>) -> Result<()> {
    let (vae, schema) = read_vae(&vae.unwrap_or_else(|| default_vae(ctx)))?;
    let data = &ctx.run.config.data;
    let labeled_path = labeled
        .or_else(|| data.labeled.clone())
        .ok_or_else(|| Error::Config("no labeled FAM (--labeled or data.labeled)".into()))?;
    let labeled = read_labeled(&labeled_path)?;
    check_schema(&schema, &labeled)?;
    let cfg = &ctx.run.config;
    let names = labeled.class_names().to_vec();
    let mut rows: Vec<(f64, &str, u64, f64)> = Vec::new();
    for &ratio in &cfg.sweep.ratios {
        for s in 0..cfg.sweep.seeds as u64 {
            let seed = cfg.seed + s;
            let (train, test) = split(&labeled, ratio, seed)?;
            let ft = FineTuneConfig {
                seed,
                ..cfg.classifier.fine_tune
            };
            let mut ecnn = build_classifier(
                &vae,
                names.clone(),
                cfg.classifier.freeze_encoder,
                &cfg.classifier.cnn,
                seed,
            )?;
            fine_tune(&mut ecnn, &train, &ft)?;
            let mut cnn =
                SemiSupervisedModel::init(vae.config(), names.clone(), &cfg.classifier.cnn, seed)?;
            fine_tune(&mut cnn, &train, &ft)?;
            rows.push((ratio, "e_cnn", seed, evaluate(&ecnn, &test)?.accuracy));
            rows.push((ratio, "cnn", seed, evaluate(&cnn, &test)?.accuracy));
        }
    }
    let mut out = String::from("ratio,model,seed,accuracy,mean_accuracy\n");
    for &(ratio, model, seed, acc) in &rows {
        let same: Vec<f64> = rows
            .iter()
            .filter(|r| r.0 == ratio && r.1 == model)
            .map(|r| r.3)
            .collect();
        let mean = same.iter().sum::<f64>() / same.len() as f64;
        let _ = writeln!(out, "{ratio},{model},{seed},{acc},{mean}");
    }
    ctx.emit("sweep.csv", &out)?;
    for &ratio in &cfg.sweep.ratios {
        let mean = |m: &str| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.0 == ratio && r.1 == m)
                .map(|r| r.3)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        println!(
            "ratio {ratio}: e_cnn {:.4}, cnn {:.4}",
            mean("e_cnn"),
            mean("cnn")
        );
    }
    Ok(())
}

// --- explain ---------------------------------------------------------------

pub fn explain(
    ctx: &Ctx,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    background: Option<PathBuf>,
) -> Result<()> {
    let (model, schema) = read_classifier(&ctx.input(model, None, "classifier.fetc"))?;
    let fam = read_fam(&ctx.input(data, ctx.run.config.data.test.as_ref(), "test.csv"))?;
    check_schema(&schema, &fam)?;
    let bg_fam = match background {
        Some(p) => read_fam(&p)?,
        None => fam.clone(),
    };
    let s = &ctx.run.config.shap;
    let seed = ctx.run.config.seed;
    let config = ShapConfig {
        mode: s.mode,
        num_permutations: s.num_permutations,
        target: s.target,
        seed,
        ..ShapConfig::new(Background::sample(&bg_fam, s.background_size, seed)?)
    };
    let samples = fam.select(&(0..fam.len().min(s.max_samples)).collect::<Vec<_>>());
    let (global, matrix) = global_importance(&model, &samples, &config, s.rank_by)?;
    let records: String = matrix
        .explanations
        .iter()
        .map(|e| e.to_record() + "\n")
        .collect();
    ctx.emit("explanations.txt", &records)?;
    ctx.emit(
        "shap_summary.csv",
        &summary_csv(&global, &matrix, model.class_names(), s.top_n),
    )?;
    println!("explained {} rows; top features:", samples.len());
    for &j in global.ranking.iter().take(5.min(s.top_n)) {
        println!("  {} {:.6}", global.feature_names[j], global.statistic(j));
    }
    Ok(())
}

// --- prune -----------------------------------------------------------------

pub fn prune_cmd(
    ctx: &Ctx,
    model: Option<PathBuf>,
    validation: Option<PathBuf>,
    test: Option<PathBuf>,
) -> Result<()> {
    let (model, schema) = read_classifier(&ctx.input(model, None, "classifier.fetc"))?;
    let validation = read_labeled(&ctx.input(
        validation,
        ctx.run.config.data.labeled.as_ref(),
        "train.csv",
    ))?;
    let test = read_labeled(&ctx.input(test, ctx.run.config.data.test.as_ref(), "test.csv"))?;
    check_schema(&schema, &validation)?;
    check_schema(&schema, &test)?;
    let scores = kernel_importance(&model, &validation)?;
    let cfg = &ctx.run.config;
    let (pruned, summary) = prune_and_tune(
        &model,
        &scores,
        &cfg.pruning,
        &validation,
        &cfg.classifier.fine_tune,
    )?;
    let report = compare(&measure(&model, &test)?, &measure(&pruned, &test)?)?;

    let mut kernels = String::from("layer,kernel,score,kept\n");
    for s in &scores.scores {
        let kept = summary
            .iter()
            .any(|l| l.layer_index == s.layer_index && l.kept.contains(&s.kernel));
        let _ = writeln!(kernels, "{},{},{},{kept}", s.layer_index, s.kernel, s.score);
    }
    ctx.emit("kernel_importance.csv", &kernels)?;
    ctx.emit_model(
        "pruned.fetc",
        &pruned.descriptor(&schema),
        &pruned.parameters(),
    )?;
    let note = "inference_time_seconds is wall-clock and differs between runs\n";
    ctx.emit("pruning.csv", &format!("# {note}{}", report.to_csv()))?;
    ctx.emit("pruning.txt", &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}
