//! AdamW with a warmup-plus-cosine schedule and an EMA of the weights on a
//! noisy least-squares problem.

use std::collections::BTreeMap;

use rand::Rng;
use vgt::numerics::{ParamStore, Tensor};
use vgt::rng::stream;
use vgt::train::{adamw_step, cosine_lr, AdamW, Ema, OptimizerState};

fn main() -> vgt::Result<()> {
    let truth = [1.5f32, -0.5, 2.0];
    let mut params = ParamStore::new();
    params.insert("w", Tensor::zeros(&[3]));
    let mut opt = OptimizerState::new();
    let mut ema = Ema::new(&params, 0.95);
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let total = 400;
    let mut rng = stream(&[7]);
    for step in 0..total {
        let w = params.get("w")?.data().to_vec();
        // gradient of ½‖w − truth‖² observed with noise
        let g: Vec<f32> = w.iter().zip(&truth).map(|(a, b)| a - b + rng.gen_range(-0.5..0.5)).collect();
        let grads = BTreeMap::from([("w".to_string(), Tensor::new(&[3], g)?)]);
        let lr = cosine_lr(step, total, 0.05, 20);
        adamw_step(&mut params, &grads, &mut opt, lr, &hp)?;
        ema.update(&params)?;
        if step % 100 == 0 || step + 1 == total {
            println!("step {step:>3}  lr {lr:.4}  w {:?}", params.get("w")?.data());
        }
    }
    println!("ema weights {:?}", ema.store(&params)?.get("w")?.data());
    Ok(())
}
