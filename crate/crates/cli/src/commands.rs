//! Subcommand implementations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use factoformer::checkpoint::{load_encoder, load_model, save_model, save_pretrain, Meta};
use factoformer::data::synthetic::{class_scene, SceneConfig};
use factoformer::data::{extract_sample, save_cube, save_labels, HsiCube, LabeledPixel, Pixel, SplitFile};
use factoformer::encoder::{attention_cost, count_params, EncoderState, MacCount};
use factoformer::metrics::{evaluate, export_map, Palette, Report};
use factoformer::model::{finetune, FactoFormer, JointBaseline, JointConfig, Trainable};
use factoformer::pretrain::{pretrain, sample_mask, sample_tokens, PretrainModel, PretrainOutcome};
use factoformer::rng::{stream, Purpose};
use factoformer::tokenizer::TokenMode;
use serde::Serialize;

use crate::config::RunConfig;
use crate::run::{
    checkpoint_files, invalid, load_scene, write_file, write_json, write_manifest, CliResult, Layout, NdjsonLog,
    Scene,
};

fn init_index(mode: TokenMode) -> u64 {
    match mode {
        TokenMode::Spectral => 0,
        TokenMode::Spatial => 1,
        TokenMode::Joint => 2,
    }
}

fn meta(config: &RunConfig, epoch: usize) -> Meta {
    Meta {
        seed: config.seed,
        epoch,
        dataset: Some(config.dataset.name.clone()),
    }
}

/// Pre-trains one encoder on the unlabeled pixels, logging each epoch to `log`.
fn train_encoder(config: &RunConfig, mode: TokenMode, scene: &Scene, log: &Path) -> CliResult<PretrainOutcome> {
    let arch = config.pretrain_arch(mode, scene.cube.bands())?;
    let settings = config.pretrain_config(mode);
    let model = PretrainModel::init(arch, &mut stream(config.seed, Purpose::Init, 1, init_index(mode)))?;
    let mut records = NdjsonLog::create(log)?;
    let outcome = pretrain(model, &scene.cube, &scene.split.pretrain, &settings, |e| {
        records.record(e);
        eprintln!("pretrain {mode} epoch {}/{} loss {:.6} lr {:.3e}", e.epoch, settings.epochs, e.loss, e.lr);
    })?;
    records.finish()?;
    Ok(outcome)
}

/// Fine-tunes a classifier end to end, starting from pre-trained encoders when given.
fn train_classifier(
    config: &RunConfig,
    scene: &Scene,
    train: &[LabeledPixel],
    encoders: Option<(&EncoderState<f32>, &EncoderState<f32>)>,
    log: &Path,
) -> CliResult<FactoFormer<f32>> {
    let model_config = config.model_config(scene.cube.bands(), scene.labels.num_classes())?;
    let mut rng = stream(config.seed, Purpose::Init, 2, 0);
    let model = match encoders {
        Some((spe, spa)) => FactoFormer::from_pretrained(model_config, spe, spa, &mut rng)?,
        None => FactoFormer::init(model_config, &mut rng)?,
    };
    let settings = config.finetune_config();
    let mut records = NdjsonLog::create(log)?;
    let (model, _) = finetune(model, &scene.cube, train, &settings, |e| {
        records.record(e);
        eprintln!(
            "finetune epoch {}/{} loss {:.6} train acc {:.4} lr {:.3e}",
            e.epoch, settings.epochs, e.loss, e.accuracy, e.lr
        );
    })?;
    records.finish()?;
    Ok(model)
}

fn test_report(model: &FactoFormer<f32>, scene: &Scene, seed: u64, hash: &str) -> CliResult<Report> {
    if scene.split.test.is_empty() {
        return Err(invalid("the split leaves no labeled test pixels"));
    }
    let (_, mut report) = evaluate(model, &scene.cube, &scene.split.test, &scene.labels.class_names)?;
    report.seed = Some(seed);
    report.config_hash = Some(hash.to_string());
    Ok(report)
}

fn write_report(layout: &Layout, name: &str, report: &Report) -> CliResult<()> {
    write_file(&layout.report(&format!("{name}.txt"))?, report.to_text().as_bytes())?;
    write_json(&layout.report(&format!("{name}.json"))?, report)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_pretrain(config: &RunConfig, mode: TokenMode) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let scene = load_scene(config)?;
    config.pretrain_arch(mode, scene.cube.bands())?;
    let name = format!("pretrain-{mode}");
    write_manifest(&layout, &name, config, &scene.files)?;
    let outcome = train_encoder(config, mode, &scene, &layout.log(&format!("{name}.ndjson"))?)?;
    // The lowest-loss epoch is the one handed to fine-tuning.
    let path = layout.checkpoint(&format!("{mode}.ckpt"))?;
    save_pretrain(&path, &outcome.best, &meta(config, outcome.best_epoch))?;
    let last = layout.checkpoint(&format!("{mode}-last.ckpt"))?;
    save_pretrain(&last, &outcome.last, &meta(config, config.pretrain.epochs))?;
    println!("{mode} checkpoint (epoch {}): {}", outcome.best_epoch, path.display());
    Ok(())
}

/// Initialization of `finetune`.
pub enum Init {
    Scratch,
    Pretrained { spectral: PathBuf, spatial: PathBuf },
}

fn load_mode_encoder(path: &Path, expected: TokenMode) -> CliResult<EncoderState<f32>> {
    if !path.exists() {
        return Err(invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let (state, manifest) = load_encoder(path)?;
    if let Some(mode) = manifest.mode {
        if mode != expected {
            return Err(invalid(format!(
                "{} holds a {mode} encoder where a {expected} encoder is required",
                path.display()
            )));
        }
    }
    Ok(state)
}

pub fn cmd_finetune(config: &RunConfig, init: &Init) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let encoders = match init {
        Init::Scratch => None,
        Init::Pretrained { spectral, spatial } => Some((
            load_mode_encoder(spectral, TokenMode::Spectral)?,
            load_mode_encoder(spatial, TokenMode::Spatial)?,
        )),
    };
    let scene = load_scene(config)?;
    let mut inputs = scene.files.clone();
    if let Init::Pretrained { spectral, spatial } = init {
        inputs.extend(checkpoint_files(spectral));
        inputs.extend(checkpoint_files(spatial));
    }
    let hash = write_manifest(&layout, "finetune", config, &inputs)?;
    let model = train_classifier(
        config,
        &scene,
        &scene.split.train,
        encoders.as_ref().map(|(a, b)| (a, b)),
        &layout.log("finetune.ndjson")?,
    )?;
    let path = layout.checkpoint("model.ckpt")?;
    save_model(&path, &model, &meta(config, config.finetune_config().epochs))?;
    eprintln!("model checkpoint: {}", path.display());
    write_report(&layout, "finetune", &test_report(&model, &scene, config.seed, &hash)?)
}

fn load_checked_model(path: &Path, config: &RunConfig, scene: &Scene) -> CliResult<FactoFormer<f32>> {
    if !path.exists() {
        return Err(invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let (model, manifest) = load_model(path)?;
    if let Some(name) = &manifest.dataset {
        if *name != config.dataset.name {
            return Err(invalid(format!(
                "{} was trained on {name:?}, not {:?}",
                path.display(),
                config.dataset.name
            )));
        }
    }
    let (bands, classes) = (scene.cube.bands(), scene.labels.num_classes());
    if model.config.bands != bands || model.config.classes != classes {
        return Err(invalid(format!(
            "{} expects {} bands and {} classes; the scene has {bands} and {classes}",
            path.display(),
            model.config.bands,
            model.config.classes
        )));
    }
    Ok(model)
}

fn default_model(layout: &Layout, model: &Option<PathBuf>) -> PathBuf {
    model.clone().unwrap_or_else(|| layout.root.join("checkpoints").join("model.ckpt"))
}

pub fn cmd_evaluate(config: &RunConfig, model: &Option<PathBuf>) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let path = default_model(&layout, model);
    let scene = load_scene(config)?;
    let net = load_checked_model(&path, config, &scene)?;
    let mut inputs = scene.files.clone();
    inputs.extend(checkpoint_files(&path));
    let hash = write_manifest(&layout, "evaluate", config, &inputs)?;
    write_report(&layout, "evaluate", &test_report(&net, &scene, config.seed, &hash)?)
}

pub fn cmd_export_map(config: &RunConfig, model: &Option<PathBuf>, all_pixels: bool) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let path = default_model(&layout, model);
    let scene = load_scene(config)?;
    let net = load_checked_model(&path, config, &scene)?;
    let mut inputs = scene.files.clone();
    inputs.extend(checkpoint_files(&path));
    write_manifest(&layout, "export-map", config, &inputs)?;
    let out = layout.map(&format!("{}.ppm", scene.name))?;
    let palette = Palette::standard(scene.labels.num_classes());
    export_map(&net, &scene.cube, &scene.labels, &palette, all_pixels, &out)?;
    println!("map: {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Timing {
    finetune_ms_per_sample: f64,
    pretrain_spectral_ms_per_sample: f64,
    pretrain_spatial_ms_per_sample: f64,
    /// Single-thread estimates from the per-sample times and the split sizes.
    pretrain_epoch_s: Option<f64>,
    finetune_epoch_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Profile {
    dataset: String,
    bands: usize,
    classes: usize,
    patch_size: usize,
    joint_k: usize,
    spectral_tokens: usize,
    spatial_tokens: usize,
    token_pairs_factorized: u64,
    token_pairs_joint: u64,
    macs_factorized: MacCount,
    macs_joint: MacCount,
    params_spectral_pretrain: usize,
    params_spatial_pretrain: usize,
    params_model: usize,
    params_joint: usize,
    timing: Timing,
}

fn mean_ms(samples: usize, mut f: impl FnMut(usize) -> CliResult<()>) -> CliResult<f64> {
    let start = Instant::now();
    for i in 0..samples {
        f(i)?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / samples as f64)
}

pub fn cmd_profile(config: &RunConfig, samples: usize, bands: usize, classes: usize) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let scene = config
        .dataset
        .resolve()
        .ok()
        .filter(|p| p.cube.exists() && p.labels.exists())
        .map(|_| load_scene(config))
        .transpose()?;
    let (bands, classes) = scene
        .as_ref()
        .map_or((bands, classes), |s| (s.cube.bands(), s.labels.num_classes()));
    let inputs = scene.as_ref().map(|s| s.files.clone()).unwrap_or_default();
    write_manifest(&layout, "profile", config, &inputs)?;

    let model_config = config.model_config(bands, classes)?;
    let mut joint_config = JointConfig::standard(config.patch_size, bands, classes, config.joint_k)?;
    joint_config.encoder = config.encoders.joint.apply(joint_config.encoder);
    joint_config.validate()?;
    let spe_arch = config.pretrain_arch(TokenMode::Spectral, bands)?;
    let spa_arch = config.pretrain_arch(TokenMode::Spatial, bands)?;
    let mut rng = stream(config.seed, Purpose::Init, 3, 0);
    let model = FactoFormer::<f32>::init(model_config, &mut rng)?;
    let joint = JointBaseline::<f32>::init(joint_config, &mut rng)?;
    let spe = PretrainModel::<f32>::init(spe_arch, &mut rng)?;
    let spa = PretrainModel::<f32>::init(spa_arch, &mut rng)?;

    // Timing runs on real pixels when a scene is available.
    let side = (config.patch_size * 2).max(8);
    let cube: HsiCube = match &scene {
        Some(s) => s.cube.clone(),
        None => {
            let synthetic = SceneConfig {
                height: side,
                width: side,
                bands,
                classes: classes.max(1),
                ..SceneConfig::default()
            };
            class_scene(&synthetic).cube.normalize()
        }
    };
    let pixel = |i: usize| Pixel::new(i % cube.height(), (i * 7) % cube.width());
    let samples = samples.max(1);
    let finetune_ms = mean_ms(samples, |i| {
        let sample = extract_sample(&cube, pixel(i), config.patch_size)?;
        model.sample_step(&sample, 1)?;
        Ok(())
    })?;
    let pretrain_ms = |m: &PretrainModel<f32>, ratio: f64| {
        mean_ms(samples, |i| {
            let raw = sample_tokens(&cube, pixel(i), &m.arch)?;
            let plan = sample_mask(raw.len(), ratio, &mut stream(config.seed, Purpose::Mask, 0, i as u64))?;
            m.loss_and_grads(&raw, &plan)?;
            Ok(())
        })
    };
    let spe_ms = pretrain_ms(&spe, config.mask_ratio.spectral)?;
    let spa_ms = pretrain_ms(&spa, config.mask_ratio.spatial)?;

    let (pairs_joint, pairs_fact) = attention_cost(model_config.spectral.tokens as u64, model_config.spatial.tokens as u64);
    let profile = Profile {
        dataset: config.dataset.name.clone(),
        bands,
        classes,
        patch_size: config.patch_size,
        joint_k: config.joint_k,
        spectral_tokens: model_config.spectral.tokens,
        spatial_tokens: model_config.spatial.tokens,
        token_pairs_factorized: pairs_fact,
        token_pairs_joint: pairs_joint,
        macs_factorized: model_config.macs(),
        macs_joint: joint_config.macs(),
        params_spectral_pretrain: count_params(&spe.arch.encoder, true),
        params_spatial_pretrain: count_params(&spa.arch.encoder, true),
        params_model: model.num_params(),
        params_joint: joint.num_params(),
        timing: Timing {
            finetune_ms_per_sample: finetune_ms,
            pretrain_spectral_ms_per_sample: spe_ms,
            pretrain_spatial_ms_per_sample: spa_ms,
            pretrain_epoch_s: scene
                .as_ref()
                .map(|s| s.split.pretrain.len() as f64 * (spe_ms + spa_ms) / 1e3),
            finetune_epoch_s: scene.as_ref().map(|s| s.split.train.len() as f64 * finetune_ms / 1e3),
        },
    };
    write_json(&layout.report("profile.json")?, &profile)?;
    let text = profile_text(&profile);
    write_file(&layout.report("profile.txt")?, text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn profile_text(p: &Profile) -> String {
    let m = |c: &MacCount, dense: bool| (if dense { c.dense() } else { c.total() }) as f64 / 1e6;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} bands, {} classes, {}x{} patches",
        p.dataset, p.bands, p.classes, p.patch_size, p.patch_size
    );
    let _ = writeln!(
        s,
        "token pairs per attention layer: factorized {} ({} spectral, {} spatial tokens), joint {}",
        p.token_pairs_factorized, p.spectral_tokens, p.spatial_tokens, p.token_pairs_joint
    );
    let _ = writeln!(
        s,
        "MFLOPs per sample, weighted layers (multiply-adds): factorized {:.2}, joint k={} {:.2}",
        m(&p.macs_factorized, true),
        p.joint_k,
        m(&p.macs_joint, true)
    );
    let _ = writeln!(
        s,
        "MFLOPs per sample, with attention products: factorized {:.2}, joint k={} {:.2}",
        m(&p.macs_factorized, false),
        p.joint_k,
        m(&p.macs_joint, false)
    );
    let _ = writeln!(
        s,
        "parameters: spectral pre-training network {}, spatial pre-training network {}, classifier {}, joint baseline {}",
        p.params_spectral_pretrain, p.params_spatial_pretrain, p.params_model, p.params_joint
    );
    let t = &p.timing;
    let _ = writeln!(
        s,
        "ms per sample (forward + backward, one thread): finetune {:.2}, pretrain spectral {:.2}, pretrain spatial {:.2}",
        t.finetune_ms_per_sample, t.pretrain_spectral_ms_per_sample, t.pretrain_spatial_ms_per_sample
    );
    if let (Some(pre), Some(fine)) = (t.pretrain_epoch_s, t.finetune_epoch_s) {
        let _ = writeln!(s, "estimated seconds per epoch (one thread): pretrain {pre:.1}, finetune {fine:.1}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    Ratio,
    Patch,
    Group,
    DataFraction,
}

impl Grid {
    fn name(self) -> &'static str {
        match self {
            Grid::Ratio => "ratio",
            Grid::Patch => "patch",
            Grid::Group => "group",
            Grid::DataFraction => "data-fraction",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Grid::Ratio => vec![0.5, 0.6, 0.7, 0.8],
            Grid::Patch => vec![3.0, 5.0, 7.0, 9.0],
            Grid::Group => vec![1.0, 3.0, 5.0, 7.0],
            Grid::DataFraction => vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

struct Cell {
    setting: String,
    config: RunConfig,
    fraction: f64,
}

fn integer(v: f64, what: &str) -> CliResult<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(invalid(format!("{what} values must be positive integers, got {v}")))
    }
}

fn cells(config: &RunConfig, grid: Grid, values: &[f64]) -> CliResult<Vec<Cell>> {
    let mut out = Vec::new();
    let mut push = |setting: String, config: RunConfig, fraction: f64| -> CliResult<()> {
        config.validate()?;
        out.push(Cell {
            setting,
            config,
            fraction,
        });
        Ok(())
    };
    match grid {
        Grid::Ratio => {
            for &spe in values {
                for &spa in values {
                    let mut c = config.clone();
                    c.mask_ratio.spectral = spe;
                    c.mask_ratio.spatial = spa;
                    push(format!("spectral={spe} spatial={spa}"), c, 1.0)?;
                }
            }
        }
        Grid::Patch => {
            for &v in values {
                let s = integer(v, "patch")?;
                push(format!("{s}x{s}"), RunConfig { patch_size: s, ..config.clone() }, 1.0)?;
            }
        }
        Grid::Group => {
            for &v in values {
                let g = integer(v, "group")?;
                push(format!("group={g}"), RunConfig { band_group: g, ..config.clone() }, 1.0)?;
            }
        }
        Grid::DataFraction => {
            for &f in values {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(invalid(format!("data fractions must be in (0, 1], got {f}")));
                }
                push(format!("fraction={f}"), config.clone(), f)?;
            }
        }
    }
    Ok(out)
}

fn slug(setting: &str) -> String {
    setting
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Runs every cell of a grid and writes `reports/ablate-<grid>.csv`.
pub fn cmd_ablate(config: &RunConfig, grid: Grid, values: &[f64], scratch: bool) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    let values = if values.is_empty() { grid.default_values() } else { values.to_vec() };
    let cells = cells(config, grid, &values)?;
    let scene = load_scene(config)?;
    let name = format!("ablate-{}", grid.name());
    let hash = write_manifest(&layout, &name, config, &scene.files)?;
    let logs = layout.log(&name)?;

    // Encoders depend only on mode, its ratio, patch size and band group.
    let mut encoders: HashMap<String, EncoderState<f32>> = HashMap::new();
    let mut csv = String::from("setting,oa_percent,aa_percent,kappa\n");
    for cell in &cells {
        eprintln!("ablate {}: {}", grid.name(), cell.setting);
        let c = &cell.config;
        let train = if cell.fraction < 1.0 {
            scene.split.subsample_train(cell.fraction, c.seed)?.train
        } else {
            scene.split.train.clone()
        };
        let mut states = Vec::new();
        if !scratch {
            for mode in [TokenMode::Spectral, TokenMode::Spatial] {
                let key = format!("{mode} r={} s={} g={}", c.mask_ratio.get(mode), c.patch_size, c.band_group);
                if !encoders.contains_key(&key) {
                    let log = logs.join(format!("pretrain-{}.ndjson", slug(&key)));
                    let outcome = train_encoder(c, mode, &scene, &log)?;
                    encoders.insert(key.clone(), outcome.best.encoder_state());
                }
                states.push(encoders[&key].clone());
            }
        }
        let log = logs.join(format!("finetune-{}.ndjson", slug(&cell.setting)));
        let init = (!scratch).then(|| (&states[0], &states[1]));
        let model = train_classifier(c, &scene, &train, init, &log)?;
        let report = test_report(&model, &scene, c.seed, &hash)?;
        let m = &report.metrics;
        let _ = writeln!(
            csv,
            "{},{:.2},{:.2},{:.4}",
            cell.setting,
            m.overall_accuracy * 100.0,
            m.average_accuracy * 100.0,
            m.kappa
        );
        write_file(&layout.report(&format!("{name}.csv"))?, csv.as_bytes())?;
    }
    print!("{csv}");
    Ok(())
}

/// Writes a generated scene as `<dir>/<name>/{cube,labels,split}.json`.
pub fn cmd_synth(dir: &Path, name: &str, scene: &SceneConfig, per_class: usize) -> CliResult<()> {
    let generated = class_scene(scene);
    let root = dir.join(name);
    std::fs::create_dir_all(&root).map_err(|e| invalid(format!("{}: {e}", root.display())))?;
    save_cube(&generated.cube, root.join("cube.json"))?;
    save_labels(&generated.labels, root.join("labels.json"))?;
    SplitFile::random_per_class(&generated.labels, per_class, scene.seed).save(root.join("split.json"))?;
    println!("scene: {}", root.display());
    Ok(())
}
