//! Central-difference gradient check of a whole network in 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowheight_core::net::{build_model, Mode, Model, Preset, Tensor};

/// Below this absolute gap a coordinate passes regardless of relative error;
/// it sits above the rounding noise of a 1e-5 step on O(1..100) losses.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Coordinate {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Coordinate {
    pub fn rel_err(&self) -> f64 {
        let gap = (self.analytic - self.numeric).abs();
        gap / self.analytic.abs().max(self.numeric.abs()).max(f64::MIN_POSITIVE)
    }

    pub fn passes(&self, tol: f64) -> bool {
        (self.analytic - self.numeric).abs() <= ABS_FLOOR || self.rel_err() <= tol
    }
}

fn loss(model: &mut Model<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let y = model.forward_train(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks `n_params` parameter and `n_inputs` input coordinates of the micro
/// network under the scalar loss `sum(r * y)` in training mode.
pub fn micro_gradcheck(seed: u64, n_params: usize, n_inputs: usize, step: f64) -> Vec<Coordinate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f64> = build_model(&Preset::Micro.spec(true), seed).unwrap().cast();
    model.set_mode(Mode::Train);
    let (n, s) = (2, model.spec().input_size);
    let q = model.spec().output_size;
    let x_data: Vec<f64> = (0..n * s * s)
        .flat_map(|_| {
            let px: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
            let shadow = f64::from(rng.random_bool(0.3) as u8);
            [px[0], px[1], px[2], shadow]
        })
        .collect();
    let mut x = Tensor::from_vec([n, s, s, 4], x_data).unwrap();
    let r = Tensor::from_vec([n, q, q, 1], (0..n * q * q).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    model.zero_grad();
    model.forward_train(&x).unwrap();
    let dx = model.backward(&r).unwrap();

    let mut out = Vec::with_capacity(n_params + n_inputs);
    let n_tensors = model.params().len();
    for _ in 0..n_params {
        let t = rng.random_range(0..n_tensors);
        let (name, len) = {
            let p = &model.params()[t];
            (p.0.clone(), p.1.len())
        };
        let i = rng.random_range(0..len);
        let analytic = model.params()[t].1.grad[i];
        let orig = model.params()[t].1.value[i];
        let set = |m: &mut Model<f64>, v: f64| m.params_mut()[t].1.value[i] = v;
        set(&mut model, orig + step);
        let up = loss(&mut model, &x, &r);
        set(&mut model, orig - step);
        let down = loss(&mut model, &x, &r);
        set(&mut model, orig);
        out.push(Coordinate {
            name: format!("{name}[{i}]"),
            analytic,
            numeric: (up - down) / (2.0 * step),
        });
    }
    for _ in 0..n_inputs {
        let i = rng.random_range(0..x.len());
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let up = loss(&mut model, &x, &r);
        x.data_mut()[i] = orig - step;
        let down = loss(&mut model, &x, &r);
        x.data_mut()[i] = orig;
        out.push(Coordinate {
            name: format!("input[{i}]"),
            analytic: dx.data()[i],
            numeric: (up - down) / (2.0 * step),
        });
    }
    out
}
