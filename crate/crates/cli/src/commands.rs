use std::fmt;
use std::path::{Path, PathBuf};

use aawm::attacks::{apply, AttackSpec};
use aawm::metrics::VerificationReport;
use aawm::models::{identity_host, SurrogateKind};
use aawm::nn::FlipAxis;
use aawm::pipeline::checkpoint::write_atomic;
use aawm::pipeline::{
    evaluate, extraction_report, load_archive, load_checkpoint, load_pairs, load_split, marked_pairs, prepare_splits,
    save_archive, save_checkpoint, single_network_archive, synth_dataset, train_adversarial, train_host, train_initial,
    train_surrogate, Checkpoint, EpochRecord, RunConfig, Seeds, Split, Stage, SurrogateLoss, Task, Watermarks,
};
use aawm::spectral::{image_hf_energy_ratio, spectrum_heatmap};
use aawm::{Error, ImageArray};
use sha2::{Digest, Sha256};

use crate::args::{AttackKindArg, AxisArg, Cli, Command, Common, LossArg, SurrogateArg};
use crate::manifest::{artifact, manifest_path, now_ms, relative, Artifact, RunManifest, Timestamps};

type F = f32;

const INFER_CHUNK: usize = 16;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(_) | Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// State of one invocation, turned into the manifest at the end.
struct Run {
    out_dir: PathBuf,
    deterministic: bool,
    master_seed: Option<u64>,
    config: Option<RunConfig>,
    inputs: Vec<String>,
    artifacts: Vec<PathBuf>,
    trees: Vec<PathBuf>,
}

impl Run {
    fn new(common: &Common) -> Self {
        // Free-running mode without an explicit seed draws a fresh one.
        let master_seed = match common.seed {
            Some(s) => Some(s),
            None if common.deterministic => None,
            None => Some(rand::random()),
        };
        Run {
            out_dir: common.out_dir.clone(),
            deterministic: common.deterministic,
            master_seed,
            config: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            trees: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    fn seeded(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(s) = self.master_seed {
            cfg.seeds = Seeds::from_master(s);
        }
        cfg
    }

    fn seeds(&self) -> Seeds {
        match &self.config {
            Some(cfg) => cfg.seeds,
            None => Seeds::from_master(self.master_seed.unwrap_or(0)),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn wrote(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    fn digest_artifacts(&self) -> CliResult<Vec<Artifact>> {
        let mut out = Vec::new();
        for p in &self.artifacts {
            out.push(artifact(p, &self.out_dir).map_err(|e| io_err(p, e))?);
        }
        for dir in &self.trees {
            out.push(tree_artifact(dir, &self.out_dir)?);
        }
        Ok(out)
    }
}

/// One digest over every file below `dir`, in sorted path order.
fn tree_artifact(dir: &Path, base: &Path) -> CliResult<Artifact> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        h.update(relative(f, dir).as_bytes());
        h.update([0u8]);
        h.update(std::fs::read(f).map_err(|e| io_err(f, e))?);
    }
    Ok(Artifact {
        path: format!("{}/", relative(dir, base)),
        sha256: hex::encode(h.finalize()),
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Runs the command and writes its manifest; returns the artifact paths.
pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let started = now_ms();
    let command = cli.command;
    let common = command.common().clone();
    let mut run = Run::new(&common);
    if let Some(path) = &common.config {
        let cfg = RunConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        run.input(path);
        run.config = Some(run.seeded(cfg));
    }
    std::fs::create_dir_all(&run.out_dir).map_err(|e| io_err(&run.out_dir, e))?;
    let result = dispatch(&command, &mut run);
    if let Err(CliError::Usage(_)) = result {
        return result.map(|_| Vec::new());
    }
    let (exit_code, error) = match &result {
        Ok(()) => (0, None),
        Err(e) => (2, Some(e.to_string())),
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        library_version: aawm::VERSION.to_string(),
        deterministic: run.deterministic,
        master_seed: run.master_seed,
        config_digest: run.config.as_ref().map(|c| c.digest()),
        seeds: run.config.as_ref().map(|c| c.seeds),
        inputs: run.inputs.clone(),
        artifacts: if result.is_ok() { run.digest_artifacts()? } else { Vec::new() },
        exit_code,
        error,
        timestamps: Timestamps {
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        },
    };
    let path = manifest_path(&run.out_dir, command.name());
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    write_atomic(&path, text.as_bytes())?;
    result?;
    let mut paths = run.artifacts;
    paths.extend(run.trees);
    paths.push(path);
    Ok(paths)
}

fn dispatch(command: &Command, run: &mut Run) -> CliResult<()> {
    match command {
        Command::Prepare { source, .. } => prepare(run, source.as_deref()),
        Command::TrainHost { data, .. } => cmd_train_host(run, data),
        Command::Train { data, host, .. } => cmd_train(run, data, host.as_deref()),
        Command::FinetuneAdv { data, checkpoint, .. } => cmd_finetune(run, data, checkpoint),
        Command::TrainSurrogate {
            data,
            checkpoint,
            kind,
            losses,
            ..
        } => cmd_train_surrogate(run, data, checkpoint, *kind, losses.as_deref()),
        Command::Embed {
            checkpoint,
            input,
            output,
            ..
        } => cmd_embed(run, checkpoint, input, output.as_deref()),
        Command::Extract {
            checkpoint,
            input,
            label,
            ..
        } => cmd_extract(run, checkpoint, input, label.as_deref()),
        Command::Attack {
            kind,
            input,
            output,
            sigma,
            quality,
            side,
            axis,
            ..
        } => {
            let spec = match kind {
                AttackKindArg::Identity => AttackSpec::Identity,
                AttackKindArg::Noise => AttackSpec::GaussianNoise {
                    sigma: *sigma,
                    seed: run.seeds().attack,
                },
                AttackKindArg::Resize => AttackSpec::Resize { target_side: *side },
                AttackKindArg::Jpeg => AttackSpec::Jpeg { quality: *quality },
                AttackKindArg::Flip => AttackSpec::Flip {
                    axis: match axis {
                        AxisArg::Horizontal => FlipAxis::Horizontal,
                        AxisArg::Vertical => FlipAxis::Vertical,
                    },
                },
            };
            cmd_attack(run, spec, input, output.as_deref())
        }
        Command::Evaluate { data, checkpoint, .. } => cmd_evaluate(run, data, checkpoint),
        Command::Spectrum { images, cutoff, .. } => cmd_spectrum(run, images, *cutoff),
    }
}

fn require_config(run: &Run) -> CliResult<RunConfig> {
    run.config
        .clone()
        .ok_or_else(|| usage("this command needs --config <FILE>"))
}

/// Loads a checkpoint; `--config` (when given) replaces its embedded config.
fn checkpoint(run: &mut Run, path: &Path) -> CliResult<Checkpoint<F>> {
    run.input(path);
    let mut ckpt = load_checkpoint::<F>(path)?;
    match &run.config {
        Some(cfg) => ckpt.config = cfg.clone(),
        None => {
            ckpt.config = run.seeded(ckpt.config.clone());
            run.config = Some(ckpt.config.clone());
        }
    }
    Ok(ckpt)
}

fn split(run: &mut Run, root: &Path, which: Split) -> CliResult<aawm::pipeline::PairedDataset<F>> {
    let data = load_split::<F>(root, which)?;
    run.input(&root.join(which.name()));
    Ok(data)
}

fn write_history(run: &mut Run, name: &str, history: &[EpochRecord]) -> CliResult<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r).map_err(Error::from)?);
        text.push('\n');
    }
    let path = run.out(name);
    write_atomic(&path, text.as_bytes())?;
    run.wrote(path);
    Ok(())
}

fn write_report(run: &mut Run, name: &str, report: &VerificationReport) -> CliResult<()> {
    let path = run.out(name);
    write_atomic(&path, report.to_jsonl()?.as_bytes())?;
    run.wrote(path);
    Ok(())
}

fn prepare(run: &mut Run, source: Option<&Path>) -> CliResult<()> {
    let cfg = require_config(run)?;
    let corpus = match source {
        Some(dir) => {
            run.input(dir);
            load_pairs::<F>(dir)?
        }
        None if cfg.task == Task::Synthetic => synth_dataset::<F>(cfg.splits.total(), cfg.image_side, cfg.seeds.data)?,
        None => return Err(usage(format!("task {:?} needs --source <DIR>", cfg.task))),
    };
    let splits = prepare_splits(&corpus, &cfg.splits, cfg.seeds.split)?;
    let root = run.out("data");
    splits.save(&root)?;
    run.trees.push(root);
    let wm = Watermarks::<F>::from_config(&cfg)?;
    let path = run.out("watermark.png");
    wm.w.save_png(&path)?;
    run.wrote(path);
    Ok(())
}

fn cmd_train_host(run: &mut Run, data: &Path) -> CliResult<()> {
    let cfg = require_config(run)?;
    let host_split = split(run, data, Split::Host)?;
    let (host, history) = train_host(&cfg, &host_split)?;
    let path = run.out("host.ckpt");
    save_archive(&path, &single_network_archive("host", &host, &cfg, Stage::Host, history.clone()))?;
    run.wrote(path);
    write_history(run, "host_history.jsonl", &history)
}

fn cmd_train(run: &mut Run, data: &Path, host: Option<&Path>) -> CliResult<()> {
    let cfg = require_config(run)?;
    let host = match host {
        Some(p) => {
            run.input(p);
            load_archive::<F>(p)?.network("host")?.clone()
        }
        None => identity_host::<F>(cfg.image_side),
    };
    let train = split(run, data, Split::Train)?;
    let val = split(run, data, Split::Val)?;
    let ckpt = train_initial(&cfg, &host, &train, &val)?;
    let path = run.out("initial.ckpt");
    save_checkpoint(&path, &ckpt)?;
    run.wrote(path);
    write_history(run, "initial_history.jsonl", &ckpt.history)
}

fn cmd_finetune(run: &mut Run, data: &Path, ckpt_path: &Path) -> CliResult<()> {
    let ckpt = checkpoint(run, ckpt_path)?;
    let train = split(run, data, Split::Train)?;
    let val = split(run, data, Split::Val)?;
    let tuned = train_adversarial(&ckpt, &train, &val)?;
    let path = run.out("adversarial.ckpt");
    save_checkpoint(&path, &tuned)?;
    run.wrote(path);
    let fresh: Vec<EpochRecord> = tuned
        .history
        .iter()
        .filter(|r| r.stage == Stage::Adversarial)
        .cloned()
        .collect();
    write_history(run, "adversarial_history.jsonl", &fresh)
}

fn cmd_train_surrogate(
    run: &mut Run,
    data: &Path,
    ckpt_path: &Path,
    kind: Option<SurrogateArg>,
    losses: Option<&[LossArg]>,
) -> CliResult<()> {
    let ckpt = checkpoint(run, ckpt_path)?;
    let cfg = ckpt.config.clone();
    let kind = match kind {
        Some(SurrogateArg::Conv) => SurrogateKind::Conv,
        Some(SurrogateArg::Res) => SurrogateKind::Res,
        Some(SurrogateArg::Unet) => SurrogateKind::Unet,
        None => cfg.surrogate.kind,
    };
    let losses: Vec<SurrogateLoss> = match losses {
        Some(list) => list
            .iter()
            .map(|l| match l {
                LossArg::L1 => SurrogateLoss::L1,
                LossArg::L2 => SurrogateLoss::L2,
                LossArg::Perceptual => SurrogateLoss::Perceptual,
                LossArg::Adversarial => SurrogateLoss::Adversarial,
            })
            .collect(),
        None => cfg.surrogate.losses.clone(),
    };
    let queries = split(run, data, Split::Surrogate)?;
    let test = split(run, data, Split::Test)?;
    let pairs = marked_pairs(&ckpt, &queries.inputs)?;
    let (net, history) = train_surrogate(&cfg, kind, &losses, &pairs, cfg.seeds.surrogate)?;
    let path = run.out("surrogate.ckpt");
    save_archive(&path, &single_network_archive("surrogate", &net, &cfg, Stage::Surrogate, history.clone()))?;
    run.wrote(path);
    write_history(run, "surrogate_history.jsonl", &history)?;
    let imitated = net.infer_images(&test.inputs, INFER_CHUNK)?;
    let label = format!("surrogate_{kind:?}").to_lowercase();
    let report = extraction_report(&ckpt.extractor, &imitated, &ckpt.watermarks, &cfg.thresholds, &label)?;
    print_summary(&report)?;
    write_report(run, "surrogate_report.jsonl", &report)
}

/// PNG files of a directory in name order, or the single file given.
fn image_paths(input: &Path) -> CliResult<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(input).map_err(|e| io_err(input, e))? {
        let path = entry.map_err(|e| io_err(input, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Runtime(Error::InsufficientData(format!(
            "no PNG images in {}",
            input.display()
        ))));
    }
    Ok(out)
}

fn load_images(run: &mut Run, input: &Path) -> CliResult<(Vec<PathBuf>, Vec<ImageArray<F>>)> {
    run.input(input);
    let paths = image_paths(input)?;
    let images = paths.iter().map(ImageArray::<F>::load).collect::<Result<Vec<_>, _>>()?;
    Ok((paths, images))
}

/// Output path for each input: inside `output` for a directory input (or
/// several images), `output` itself for a single file.
fn output_paths(input: &Path, inputs: &[PathBuf], output: &Path) -> CliResult<Vec<PathBuf>> {
    let outs: Vec<PathBuf> = if input.is_dir() {
        inputs.iter().map(|p| output.join(p.file_name().unwrap_or_default())).collect()
    } else {
        vec![output.to_path_buf()]
    };
    for (i, o) in inputs.iter().zip(&outs) {
        if same_file(i, o) {
            return Err(usage(format!("refusing to overwrite input {}", i.display())));
        }
    }
    Ok(outs)
}

fn same_file(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| -> Option<PathBuf> {
        let parent = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.canonicalize().ok()?,
            _ => std::env::current_dir().ok()?,
        };
        Some(parent.join(p.file_name()?))
    };
    match (canon(a), canon(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

fn default_output(run: &Run, input: &Path, dir: &str) -> PathBuf {
    if input.is_dir() {
        run.out(dir)
    } else {
        run.out(dir).join(input.file_name().unwrap_or_default())
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn cmd_embed(run: &mut Run, ckpt_path: &Path, input: &Path, output: Option<&Path>) -> CliResult<()> {
    let ckpt = checkpoint(run, ckpt_path)?;
    let (paths, images) = load_images(run, input)?;
    let output = output.map_or_else(|| default_output(run, input, "marked"), Path::to_path_buf);
    let outs = output_paths(input, &paths, &output)?;
    let marked = ckpt.embedder.infer_images(&images, INFER_CHUNK)?;
    for (img, path) in marked.iter().zip(outs) {
        ensure_parent(&path)?;
        img.save_png(&path)?;
        run.wrote(path);
    }
    Ok(())
}

/// Sidecar recording the attack applied to an image or directory.
fn attack_sidecar(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("attack.json")
    } else {
        path.with_extension("attack.json")
    }
}

fn cmd_attack(run: &mut Run, spec: AttackSpec, input: &Path, output: Option<&Path>) -> CliResult<()> {
    spec.validate()?;
    let (paths, images) = load_images(run, input)?;
    let output = output.map_or_else(|| default_output(run, input, "attacked"), Path::to_path_buf);
    let outs = output_paths(input, &paths, &output)?;
    for (img, path) in images.iter().zip(outs) {
        let attacked = apply(&spec, img)?;
        ensure_parent(&path)?;
        attacked.save_png(&path)?;
        run.wrote(path);
    }
    if input.is_dir() {
        std::fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
    }
    let sidecar = attack_sidecar(&output);
    write_atomic(&sidecar, serde_json::to_string(&spec).map_err(Error::from)?.as_bytes())?;
    run.wrote(sidecar);
    Ok(())
}

fn cmd_extract(run: &mut Run, ckpt_path: &Path, input: &Path, label: Option<&str>) -> CliResult<()> {
    let ckpt = checkpoint(run, ckpt_path)?;
    let (paths, images) = load_images(run, input)?;
    let label = match label {
        Some(l) => l.to_string(),
        None => {
            let sidecar = attack_sidecar(input);
            match std::fs::read_to_string(&sidecar) {
                Ok(text) => serde_json::from_str::<AttackSpec>(&text).map_err(Error::from)?.label(),
                Err(_) => "unattacked".to_string(),
            }
        }
    };
    let extracted = ckpt.extractor.infer_images(&images, INFER_CHUNK)?;
    let dir = run.out("extracted");
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (img, src) in extracted.iter().zip(&paths) {
        let path = dir.join(src.file_name().unwrap_or_default());
        img.save_png(&path)?;
        run.wrote(path);
    }
    let report = extraction_report(&ckpt.extractor, &images, &ckpt.watermarks, &ckpt.config.thresholds, &label)?;
    print_summary(&report)?;
    write_report(run, &format!("extract_{label}.jsonl"), &report)
}

fn print_summary(report: &VerificationReport) -> CliResult<()> {
    let s = report.summary()?;
    eprintln!(
        "{:<14} n={:<4} sr={:.3} psnr_w={:.2} ber={:.5}",
        s.attack, s.samples, s.sr, s.mean_psnr_w, s.mean_ber
    );
    Ok(())
}

fn cmd_evaluate(run: &mut Run, data: &Path, ckpt_path: &Path) -> CliResult<()> {
    let ckpt = checkpoint(run, ckpt_path)?;
    let test = split(run, data, Split::Test)?;
    let grid = ckpt.config.eval_grid.specs(ckpt.config.seeds.attack);
    let eval = evaluate(&ckpt, &test, &grid)?;
    let dir = run.out("reports");
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for path in eval.write(&dir)? {
        run.wrote(path);
    }
    let mut text = String::new();
    for r in eval.cells.iter().chain(std::iter::once(&eval.non_marked)) {
        print_summary(r)?;
        text.push_str(&serde_json::to_string(&r.summary()?).map_err(Error::from)?);
        text.push('\n');
    }
    let path = run.out("summary.jsonl");
    write_atomic(&path, text.as_bytes())?;
    run.wrote(path);
    Ok(())
}

fn cmd_spectrum(run: &mut Run, images_dir: &Path, cutoff: f64) -> CliResult<()> {
    if !images_dir.is_dir() {
        return Err(usage(format!("{} is not a directory", images_dir.display())));
    }
    let (paths, images) = load_images(run, images_dir)?;
    let heat = spectrum_heatmap(&images)?;
    let png = run.out("heatmap.png");
    heat.save_png(&png)?;
    run.wrote(png);
    let mut bytes = Vec::new();
    heat.write_binary(&mut bytes).map_err(|e| io_err(images_dir, e))?;
    let matrix = run.out("heatmap.hm1");
    write_atomic(&matrix, &bytes)?;
    run.wrote(matrix);
    let mut table = format!("image\thf_energy_ratio_{cutoff}\n");
    let mut sum = 0.0;
    for (path, img) in paths.iter().zip(&images) {
        let r = image_hf_energy_ratio(img, cutoff)?;
        sum += r;
        table.push_str(&format!("{}\t{r:.6}\n", path.file_name().unwrap_or_default().to_string_lossy()));
    }
    table.push_str(&format!("mean\t{:.6}\n", sum / images.len() as f64));
    let path = run.out("hf_energy.tsv");
    write_atomic(&path, table.as_bytes())?;
    run.wrote(path);
    Ok(())
}
