//! Times one eval-mode forward pass of each preset on a zero input.
//!
//! `cargo run --release -p shadowheight-core --example forward_timing [preset...]`

use std::time::Instant;

use shadowheight_core::net::{build_model, Preset, Tensor};

fn main() -> shadowheight_core::Result<()> {
    let presets: Vec<Preset> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let presets = if presets.is_empty() {
        vec![Preset::Micro, Preset::Reduced, Preset::Manchester, Preset::Dfc]
    } else {
        presets
    };
    for preset in presets {
        let t0 = Instant::now();
        let model = build_model(&preset.spec(true), 0)?;
        let built = t0.elapsed();
        let x = Tensor::zeros(model.input_shape(1));
        let t1 = Instant::now();
        let y = model.forward_eval(&x)?;
        println!(
            "{:>10}: {:>11} params, build {:>6.2?}, forward {:>8.2?}, output {:?}",
            preset.name(),
            model.count_parameters(),
            built,
            t1.elapsed(),
            y.shape()
        );
    }
    Ok(())
}
