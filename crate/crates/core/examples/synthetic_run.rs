//! Trains a preset on a synthetic catalog and reports test metrics against the constant oracle.
//!
//! `cargo run --release -p shadowheight-core --example synthetic_run -- [epochs] [lr] [seed] [shadow 0|1] [scenes] [preset]`

use std::time::Instant;

use shadowheight_core::datapipe::DatasetMode;
use shadowheight_core::grids::Split;
use shadowheight_core::infer::{evaluate, evaluate_constant, train_median};
use shadowheight_core::net::{build_model, Preset};
use shadowheight_core::shadow::ShadowParams;
use shadowheight_core::synth::{generate_dataset, SceneParams};
use shadowheight_core::train::{TrainConfig, Trainer};

fn main() -> shadowheight_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let epochs: usize = arg(0, "10").parse().unwrap();
    let lr: f64 = arg(1, "1e-4").parse().unwrap();
    let seed: u64 = arg(2, "0").parse().unwrap();
    let shadow = arg(3, "1") == "1";
    let scenes: usize = arg(4, "125").parse().unwrap();
    let preset: Preset = arg(5, "reduced").parse()?;

    let scene = SceneParams { seed, ..SceneParams::default() };
    let catalog = generate_dataset(&scene, scenes, &DatasetMode::synthetic(scene.rgb_gsd))?;
    let params = ShadowParams::default();
    let median = train_median(&catalog)?;
    let oracle = evaluate_constant(&catalog, Split::Test, &params, median)?;
    println!(
        "catalog {}/{}/{}; median {median}; oracle test MAE {:.4} RMSE {:.4}",
        catalog.count(Split::Train),
        catalog.count(Split::Val),
        catalog.count(Split::Test),
        oracle.mae,
        oracle.rmse
    );
    let config = TrainConfig {
        lr0: lr,
        max_epochs: epochs,
        seed,
        use_shadow_channel: shadow,
        ..TrainConfig::for_preset(preset)
    };
    let model = build_model(&preset.spec(shadow), seed)?;
    let mut trainer = Trainer::new(model, config)?;
    let start = Instant::now();
    trainer.run(&catalog, &params, |_, r| {
        println!(
            "epoch {:>3} train {:.4} val {:.4} lr {:.1e} [{:.0?}]",
            r.epoch,
            r.train_mae,
            r.val_mae,
            r.lr,
            start.elapsed()
        );
        Ok(())
    })?;
    let best = trainer.best().model()?;
    let test = evaluate(&best, &catalog, Split::Test, &params)?;
    println!(
        "test MAE {:.4} RMSE {:.4}; ratio to oracle {:.3}",
        test.mae,
        test.rmse,
        test.mae / oracle.mae
    );
    Ok(())
}
