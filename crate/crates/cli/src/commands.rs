use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use crossview::checkpoint::read_checkpoint_meta;
use crossview::data::transform::resize_image;
use crossview::data::{make_synthetic_dataset_split, DatasetManifest, Image};
use crossview::metrics::{evaluate_outputs, ground_truth_outputs, train_classifier_oracle};
use crossview::model::Direction;
use crossview::montage::montage;
use crossview::retrieval::{retrieval_montage, retrieve_all};
use crossview::trainer::{checkpoint_direction, generate, load_samples_at, train_with, GeneratedSet, TrainConfig};

use crate::Command;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<crossview::Error> for CliError {
    fn from(e: crossview::Error) -> Self {
        match e {
            crossview::Error::InvalidSize(_) | crossview::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_manifest(dir: &Path) -> CliResult<DatasetManifest> {
    require(&dir.join(crossview::data::dataset::MANIFEST_FILE), "manifest")?;
    Ok(DatasetManifest::load(dir)?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::SynthData { n, seed, size, out, split } => {
            if size != 64 && size != 256 {
                return Err(usage(format!("invalid --size {size}; expected 64 or 256")));
            }
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let m = make_synthetic_dataset_split(n, seed, size, &out, split)?;
            println!("{}", m.path().display());
            Ok(())
        }
        Command::Train { config, manifest, eval_manifest, out_dir } => {
            train_cmd(&config, manifest, eval_manifest, out_dir)
        }
        Command::Evaluate { checkpoint, generated, ground_truth, manifest, out, classifier_manifest, direction, seed } => {
            evaluate_cmd(checkpoint, generated, ground_truth, &manifest, &out, classifier_manifest, direction, seed)
        }
        Command::Grid { inputs, out, ids } => grid_cmd(&inputs, &out, ids),
        Command::Knn { checkpoint, manifest, train_manifest, k, downsample, out, montage_rows } => {
            knn_cmd(&checkpoint, &manifest, train_manifest, k, downsample, &out, montage_rows)
        }
    }
}

fn train_cmd(
    config_path: &Path,
    manifest: Option<PathBuf>,
    eval_manifest: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> CliResult {
    require(config_path, "config")?;
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let mut config = TrainConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", config_path.display())))?;
    if let Some(m) = manifest {
        config.train_manifest = Some(m);
    }
    if let Some(m) = eval_manifest {
        config.eval_manifest = Some(m);
    }
    if let Some(d) = out_dir {
        config.out_dir = d;
    }
    let train_dir = config
        .train_manifest
        .clone()
        .ok_or_else(|| usage("no training manifest: pass --manifest or set train_manifest in the config"))?;
    let train = load_manifest(&train_dir)?;
    if let Some(eval) = &config.eval_manifest {
        require(&eval.join(crossview::data::dataset::MANIFEST_FILE), "eval manifest")?;
    }
    let mut print_err = None;
    let summary = train_with(&config, &train, &mut |epoch| match serde_json::to_string(epoch) {
        Ok(line) => println!("{line}"),
        Err(e) => print_err = Some(e),
    })?;
    if let Some(e) = print_err {
        return Err(anyhow::Error::from(e).into());
    }
    let done = serde_json::json!({
        "kind": "done",
        "out_dir": summary.out_dir,
        "final_checkpoint": summary.final_checkpoint,
        "checksum": summary.checksum,
        "initial_heldout_l1": summary.initial_heldout_l1,
    });
    println!("{done}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    checkpoint: Option<PathBuf>,
    generated: Option<PathBuf>,
    ground_truth: bool,
    manifest_dir: &Path,
    out: &Path,
    classifier_manifest: Option<PathBuf>,
    direction: Option<Direction>,
    seed: u64,
) -> CliResult {
    let manifest = load_manifest(manifest_dir)?;
    let classifier_manifest = match &classifier_manifest {
        Some(dir) => load_manifest(dir)?,
        None => manifest.clone(),
    };
    let real = load_samples_at(&manifest, manifest.resolution)?;
    let (direction, outputs) = match (checkpoint, generated, ground_truth) {
        (Some(ck), None, false) => {
            require(&ck, "checkpoint")?;
            let meta = read_checkpoint_meta(&ck)?;
            let d = match (direction, checkpoint_direction(&meta.config)) {
                (Some(flag), Some(stored)) if flag != stored => {
                    return Err(usage(format!("--direction {flag} but the checkpoint was trained for {stored}")))
                }
                (Some(d), _) | (None, Some(d)) => d,
                (None, None) => Direction::A2g,
            };
            let set = generate(&ck, &manifest, d, &out.join("generated"))?;
            (d, set.load_samples()?)
        }
        (None, Some(dir), false) => {
            require(&dir.join(crossview::trainer::GENERATED_FILE), "generated set")?;
            let set = GeneratedSet::load(&dir)?;
            if direction.is_some_and(|d| d != set.direction) {
                return Err(usage(format!("generated set holds {} outputs", set.direction)));
            }
            (set.direction, set.load_samples()?)
        }
        (None, None, true) => {
            let d = direction.unwrap_or(Direction::A2g);
            (d, ground_truth_outputs(&real, d.target()))
        }
        _ => return Err(usage("pass exactly one of --checkpoint, --generated or --ground-truth")),
    };
    let view = direction.target();
    let oracle = train_classifier_oracle(&classifier_manifest, view, seed)?;
    let evaluation = evaluate_outputs(&real, &outputs, view, &oracle)?;
    evaluation.write(out)?;
    print!("{}", evaluation.report_json()?);
    Ok(())
}

struct Column {
    label: Option<String>,
    path: PathBuf,
}

fn parse_column(spec: &str) -> Column {
    let whole = PathBuf::from(spec);
    match spec.split_once('=') {
        Some((label, path)) if !whole.exists() && !label.is_empty() => {
            Column { label: Some(label.to_string()), path: PathBuf::from(path) }
        }
        _ => Column { label: None, path: whole },
    }
}

fn default_label(index: usize, path: &Path) -> String {
    match index {
        0 => "input".into(),
        1 => "ground truth".into(),
        _ => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    }
}

fn png_stems(dir: &Path) -> CliResult<Vec<String>> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "png").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    ids.sort();
    Ok(ids)
}

fn grid_cmd(inputs: &[String], out: &Path, ids: Option<Vec<String>>) -> CliResult {
    let columns: Vec<Column> = inputs.iter().map(|s| parse_column(s)).collect();
    for c in &columns {
        require(&c.path, "input")?;
    }
    let dirs = columns.iter().filter(|c| c.path.is_dir()).count();
    if dirs != 0 && dirs != columns.len() {
        return Err(usage("--inputs must be all directories or all files"));
    }
    if columns.len() == 1 && dirs == 0 {
        Image::load(&columns[0].path)?.save_png(out)?;
        println!("{}", out.display());
        return Ok(());
    }
    let paths: Vec<Vec<PathBuf>> = if dirs == 0 {
        vec![columns.iter().map(|c| c.path.clone()).collect()]
    } else {
        let ids = match ids {
            Some(ids) => ids,
            None => png_stems(&columns[0].path)?,
        };
        if ids.is_empty() {
            return Err(usage(format!("no PNG images in {}", columns[0].path.display())));
        }
        ids.iter().map(|id| columns.iter().map(|c| c.path.join(format!("{id}.png"))).collect()).collect()
    };
    let mut rows = Vec::with_capacity(paths.len());
    let mut tile = None;
    for row in &paths {
        let mut tiles = Vec::with_capacity(row.len());
        for p in row {
            require(p, "image")?;
            let img = Image::load(p)?;
            let (h, w) = *tile.get_or_insert((img.height, img.width));
            tiles.push(if (img.height, img.width) == (h, w) { img } else { resize_image(&img, h, w) });
        }
        rows.push(tiles);
    }
    let headers: Vec<String> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| c.label.clone().unwrap_or_else(|| default_label(i, &c.path)))
        .collect();
    montage(&rows, Some(&headers))?.save_png(out)?;
    println!("{}", out.display());
    Ok(())
}

fn knn_cmd(
    checkpoint: &Path,
    manifest_dir: &Path,
    train_manifest: Option<PathBuf>,
    k: usize,
    factor: usize,
    out: &Path,
    montage_rows: usize,
) -> CliResult {
    require(checkpoint, "checkpoint")?;
    let manifest = load_manifest(manifest_dir)?;
    let meta = read_checkpoint_meta(checkpoint)?;
    let train_dir = train_manifest
        .or_else(|| meta.config.get("train_manifest").and_then(|v| v.as_str()).map(PathBuf::from))
        .ok_or_else(|| usage("no training manifest: pass --train-manifest"))?;
    let train = load_manifest(&train_dir)?;
    let direction = checkpoint_direction(&meta.config).unwrap_or(Direction::A2g);
    let view = direction.target();

    let set = generate(checkpoint, &manifest, direction, &out.join("generated"))?;
    let generated = set.load_samples()?;
    let training: Vec<(String, Image)> = load_samples_at(&train, manifest.resolution)?
        .into_iter()
        .map(|s| {
            let img = s.image(view).clone();
            (s.id, img)
        })
        .collect();
    let queries: Vec<(String, Image)> = generated.iter().map(|g| (g.id.clone(), g.image.clone())).collect();
    let records = retrieve_all(&queries, &training, k, factor)?;

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).context("serializing retrieval record")?);
        lines.push('\n');
    }
    write_text(&out.join("knn.jsonl"), &lines)?;

    if montage_rows > 0 {
        let real = load_samples_at(&manifest, manifest.resolution)?;
        let shown = records.len().min(montage_rows);
        let inputs: Vec<&Image> = real.iter().take(shown).map(|s| s.image(direction.source())).collect();
        let gens: Vec<&Image> = generated.iter().take(shown).map(|g| &g.image).collect();
        retrieval_montage(&records[..shown], &inputs, &gens, &training)?.save_png(&out.join("knn.png"))?;
    }
    println!("{}", out.join("knn.jsonl").display());
    Ok(())
}
