use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use shadowheight_core::datapipe::{assemble_input, build_catalog, input_tensor, split_catalog, PatchCatalog};
use shadowheight_core::grids::RasterGrid;
use shadowheight_core::infer::{evaluate, predict_full};
use shadowheight_core::io::{read_raster, read_rgb, write_heatmap_png, write_raster, write_raster_tiff, write_shadow_png};
use shadowheight_core::net::{build_model, Model};
use shadowheight_core::probe::{sensitivity_sweep, summarize};
use shadowheight_core::shadow::compute_shadow_map;
use shadowheight_core::synth::generate_dataset;
use shadowheight_core::train::{load_checkpoint, save_checkpoint, EpochRecord, Trainer};

use crate::config::{AppConfig, ModeName};
use crate::{Cli, CliError, Command, GlobalArgs, ModeArg};

pub const HISTORY_SCHEMA_VERSION: u32 = 1;

type Result<T> = std::result::Result<T, CliError>;
type CoreResult<T> = shadowheight_core::Result<T>;

/// Wall-clock facts kept apart from the reproducible payload.
#[derive(Serialize)]
struct RunInfo {
    finished_unix_s: u64,
    elapsed_s: f64,
    version: &'static str,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    #[serde(flatten)]
    body: &'a T,
    run_info: RunInfo,
}

#[derive(Serialize)]
struct TrainHistory<'a> {
    schema_version: u32,
    preset: &'a str,
    seed: u64,
    used_shadow_channel: bool,
    best_epoch: Option<usize>,
    best_val_mae: Option<f64>,
    history: &'a [EpochRecord],
}

struct Ctx {
    config: AppConfig,
    global: GlobalArgs,
    started: Instant,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, path: &Path, body: &T) -> CoreResult<()> {
        let run_info = RunInfo {
            finished_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_s: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION"),
        };
        let mut text = serde_json::to_string_pretty(&Envelope { body, run_info })?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    fn use_shadow(&self) -> bool {
        self.config.train.use_shadow_channel && !self.global.no_shadow_channel
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CoreResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> shadowheight_core::Error {
    shadowheight_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("no {what} given on the command line or in the config")))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path)?.model()?)
}

fn open_catalog(dir: &Path) -> Result<PatchCatalog> {
    let mut catalog = PatchCatalog::open(dir)?;
    catalog.preload()?;
    Ok(catalog)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.global.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(mode) = cli.global.mode {
        config.mode = match mode {
            ModeArg::Manchester => ModeName::Manchester,
            ModeArg::Dfc => ModeName::Dfc,
            ModeArg::Synthetic => ModeName::Synthetic,
        };
    }
    if let Some(p) = cli.global.preset {
        config.preset = Some(p.into());
    }
    let config = config.resolve(cli.global.seed)?;
    let ctx = Ctx {
        config,
        global: cli.global,
        started: Instant::now(),
    };
    match cli.command {
        Command::Shadowmap { input, out } => {
            let rgb = read_rgb(&input)?;
            let map = compute_shadow_map(&rgb, &ctx.config.shadow);
            write_shadow_png(&out, &map)?;
            println!("{} shadow pixels of {}", map.count(), rgb.height() * rgb.width());
            Ok(())
        }
        Command::Prepare {
            rgb,
            dsm,
            dtm,
            stride,
            out,
        } => prepare(&ctx, &rgb, &dsm, &dtm, stride, out),
        Command::Synth { scenes, out } => {
            let out = required(out, &ctx.config.paths.catalog, "catalog directory")?;
            let mut catalog = generate_dataset(&ctx.config.synth, scenes, &ctx.config.synthetic_mode())?;
            catalog.save(&out)?;
            print_counts(&catalog);
            Ok(())
        }
        Command::Train {
            catalog,
            out,
            epochs,
            resume,
        } => train(&ctx, catalog, out, epochs, resume),
        Command::Evaluate {
            checkpoint,
            catalog,
            split,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let catalog = open_catalog(&required(catalog, &ctx.config.paths.catalog, "catalog directory")?)?;
            let report = evaluate(&model, &catalog, split.into(), &ctx.config.shadow)?;
            ctx.write_json(&out, &report)?;
            println!("MAE {:.4} m, RMSE {:.4} m over {} pixels", report.mae, report.rmse, report.n_pixels);
            Ok(())
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            heatmap,
            gsd,
        } => {
            let model = load_model(&checkpoint)?;
            let rgb = read_rgb(&input)?;
            let gsd = gsd.unwrap_or(ctx.config.dataset_mode().rgb_gsd);
            let grid = predict_full(&model, &rgb, &ctx.config.shadow, gsd)?;
            write_raster(&out, &grid)?;
            if let Some(path) = heatmap {
                write_heatmap_png(&path, &grid)?;
            }
            println!("{}x{} heightmap at {} m/px", grid.height(), grid.width(), grid.gsd());
            Ok(())
        }
        Command::Probe {
            checkpoint,
            input,
            out,
            mask_size,
            stride,
            target,
            all_deltas,
        } => {
            let mut cfg = ctx.config.probe;
            cfg.mask_size = mask_size.unwrap_or(cfg.mask_size);
            cfg.stride = stride.unwrap_or(cfg.stride);
            if let Some(t) = target {
                cfg.target = t.into();
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            probe(&ctx, &checkpoint, &input, &out, &cfg, all_deltas)
        }
    }
}

fn print_counts(catalog: &PatchCatalog) {
    use shadowheight_core::grids::Split;
    println!(
        "{} patches ({} valid): {} train, {} val, {} test",
        catalog.len(),
        catalog.valid_count(),
        catalog.count(Split::Train),
        catalog.count(Split::Val),
        catalog.count(Split::Test)
    );
}

fn prepare(
    ctx: &Ctx,
    rgb: &[PathBuf],
    dsm: &[PathBuf],
    dtm: &[PathBuf],
    stride: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    if rgb.len() != dsm.len() || rgb.len() != dtm.len() {
        return Err(CliError::Usage("give one --dsm and one --dtm per --rgb".into()));
    }
    let out = required(out, &ctx.config.paths.catalog, "catalog directory")?;
    let mode = ctx.config.dataset_mode();
    let stride = stride.unwrap_or(mode.patch_rgb);
    let root = ctx.config.paths.data_root.as_deref();
    let resolve = |p: &PathBuf| match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.clone(),
    };
    let mut parts = Vec::with_capacity(rgb.len());
    for ((r, s), t) in rgb.iter().zip(dsm).zip(dtm) {
        let r = resolve(r);
        let id = r
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Usage(format!("cannot name a source after {}", r.display())))?
            .to_string();
        let image = read_rgb(&r)?;
        parts.push(build_catalog(&id, &image, &read_raster(&resolve(s))?, &read_raster(&resolve(t))?, &mode, stride)?);
    }
    let mut catalog = split_catalog(&PatchCatalog::concat(parts)?, ctx.config.seed)?;
    catalog.save(&out)?;
    print_counts(&catalog);
    Ok(())
}

fn train(ctx: &Ctx, catalog: Option<PathBuf>, out: Option<PathBuf>, epochs: Option<usize>, resume: bool) -> Result<()> {
    let catalog = open_catalog(&required(catalog, &ctx.config.paths.catalog, "catalog directory")?)?;
    let out = required(out, &ctx.config.paths.checkpoints, "checkpoint directory")?;
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let mut config = ctx.config.train.clone();
    config.use_shadow_channel = ctx.use_shadow();
    if let Some(n) = epochs {
        config.max_epochs = n;
    }
    let preset = ctx.config.preset();
    let spec = preset.spec(config.use_shadow_channel);
    let (last_path, best_path) = (out.join("last.ckpt"), out.join("best.ckpt"));
    let mut trainer = if resume && last_path.exists() {
        let last = load_checkpoint(&last_path)?;
        if last.architecture != spec {
            return Err(CliError::Usage(format!(
                "{} holds a `{}` network, not the requested `{}`",
                last_path.display(),
                last.architecture.name,
                spec.name
            )));
        }
        let best = best_path.exists().then(|| load_checkpoint(&best_path)).transpose()?;
        Trainer::resume(&last, best, config)?
    } else {
        Trainer::new(build_model(&spec, config.seed)?, config)?
    };
    let history_path = out.join("history.json");
    let write_history = |t: &Trainer| {
        let best = &t.best().meta;
        ctx.write_json(
            &history_path,
            &TrainHistory {
                schema_version: HISTORY_SCHEMA_VERSION,
                preset: preset.name(),
                seed: t.config().seed,
                used_shadow_channel: t.config().use_shadow_channel,
                best_epoch: best.best_epoch,
                best_val_mae: best.best_val_mae,
                history: t.history(),
            },
        )
    };
    let every = trainer.config().checkpoint_every;
    trainer.run(&catalog, &ctx.config.shadow, |t, rec| {
        println!(
            "epoch {:>3}: train MAE {:.4}, val MAE {:.4}, lr {:.2e}",
            rec.epoch, rec.train_mae, rec.val_mae, rec.lr
        );
        if t.best().meta.best_epoch == Some(rec.epoch) {
            save_checkpoint(t.best(), &best_path)?;
        }
        if every > 0 && (rec.epoch % every == 0 || t.finished()) {
            save_checkpoint(&t.checkpoint(), &last_path)?;
        }
        write_history(t)
    })?;
    write_history(&trainer)?;
    if !best_path.exists() {
        save_checkpoint(trainer.best(), &best_path)?;
    }
    Ok(())
}

fn probe(
    ctx: &Ctx,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    cfg: &shadowheight_core::probe::ProbeConfig,
    all_deltas: bool,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let rgb = read_rgb(input)?;
    let spec = model.spec();
    if rgb.height() != spec.input_size || rgb.width() != spec.input_size {
        return Err(CliError::Core(shadowheight_core::Error::InvalidArgument(format!(
            "probe patch is {}x{}, the `{}` network takes {}x{}",
            rgb.height(),
            rgb.width(),
            spec.name,
            spec.input_size,
            spec.input_size
        ))));
    }
    let x = if spec.uses_shadow_channel() {
        assemble_input(&rgb, &ctx.config.shadow)
    } else {
        input_tensor(&rgb, None)?
    };
    let sweep = sensitivity_sweep(&model, &x, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let summary = summarize(&sweep, cfg);
    let (h, w) = summary.output_size;
    let gsd = ctx.config.dataset_mode().rgb_gsd * spec.ratio() as f64;
    let aggregate = RasterGrid::from_values(h, w, sweep.aggregate.clone(), gsd)?;
    write_raster_tiff(&out.join("aggregate.tif"), &aggregate)?;
    write_heatmap_png(&out.join("aggregate.png"), &aggregate)?;
    if all_deltas {
        for (&(top, left), d) in sweep.positions.iter().zip(&sweep.deltas) {
            let grid = RasterGrid::from_values(h, w, d.data().to_vec(), gsd)?;
            write_raster_tiff(&out.join(format!("delta_{top}_{left}.tif")), &grid)?;
        }
    }
    ctx.write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} mask positions, max |delta| {:.4} m at {:?}",
        summary.positions.len(),
        summary.max_abs_delta,
        summary.argmax
    );
    Ok(())
}
