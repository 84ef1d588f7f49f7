//! Times training steps of the small presets on synthetic patches.
//!
//! `cargo run --release -p shadowheight-core --example train_timing`

use std::time::Instant;

use shadowheight_core::datapipe::{assemble_batch, DatasetMode};
use shadowheight_core::grids::Split;
use shadowheight_core::net::{build_model, Mode, Preset};
use shadowheight_core::shadow::ShadowParams;
use shadowheight_core::synth::{generate_dataset, SceneParams};
use shadowheight_core::train::{train_step, Adam};

fn main() -> shadowheight_core::Result<()> {
    let scene = SceneParams::default();
    let t0 = Instant::now();
    let catalog = generate_dataset(&scene, 4, &DatasetMode::synthetic(scene.rgb_gsd))?;
    println!("generated {} patches in {:.2?}", catalog.len(), t0.elapsed());
    let params = ShadowParams::default();
    let train = catalog.indices(Split::Train);
    for (preset, batch) in [(Preset::Micro, 8), (Preset::Micro, 32), (Preset::Reduced, 16)] {
        let mut model = build_model(&preset.spec(true), 0)?;
        model.set_mode(Mode::Train);
        let mut adam = Adam::new(&model);
        let b = assemble_batch(&catalog, &train[..batch], None, &params, true)?;
        let t = Instant::now();
        let steps = 5;
        let mut loss = 0.0;
        for _ in 0..steps {
            loss = train_step(&mut model, &b, &mut adam, 1e-4)?;
        }
        let per = t.elapsed() / steps;
        println!(
            "{:>8} batch {batch:>2}: {per:>9.2?}/step ({:.2?}/sample), loss {loss:.3}",
            preset.name(),
            per / batch as u32
        );
    }
    Ok(())
}
