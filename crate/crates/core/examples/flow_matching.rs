//! Flow matching on a point mass: the analytic straight-path velocity lands on
//! the target for any step count, and a small head learns the same field.

use vgt::flowhead::{
    flow_sample, fm_loss, shift_timestep, FlowHead, FlowHeadConfig, FmDraw, LinearPathOracle, TimestepSchedule,
    REFERENCE_DIM,
};
use vgt::numerics::{Graph, ParamStore, Tensor};
use vgt::rng::stream;
use vgt::train::{adamw_step, AdamW, OptimizerState};

fn main() -> vgt::Result<()> {
    let target = [0.8f32, -1.2, 0.3, 2.0];
    let d = target.len();
    let h = Tensor::zeros(&[256, 1]);

    for (m, label) in [(REFERENCE_DIM, "unshifted"), (64.0, "shifted for 64 dims")] {
        let schedule = TimestepSchedule::new(m, REFERENCE_DIM);
        println!("{label}: t = 0.5 maps to {:.4}", shift_timestep(0.5, m, REFERENCE_DIM)?);
        for steps in [1, 4, 32] {
            let oracle = LinearPathOracle { target: target.to_vec() };
            let z = flow_sample(&oracle, &h, d, steps, &mut stream(&[1]), &schedule)?;
            let err = z.data().iter().enumerate().map(|(i, &v)| (v - target[i % d]).abs()).fold(0.0f32, f32::max);
            println!("  oracle, {steps:>2} steps: max error {err:.2e}");
        }
    }

    let head = FlowHead::new(FlowHeadConfig { latent_dim: d, cond_dim: 1, width: 64, hidden_layers: 2, time_dim: 16 }, "head")?;
    let mut store = ParamStore::new();
    head.init(&mut store, &mut stream(&[2]));
    let schedule = TimestepSchedule::identity();
    let rows = 64;
    let z_target = Tensor::new(&[rows, d], (0..rows * d).map(|i| target[i % d]).collect())?;
    let cond = Tensor::zeros(&[rows, 1]);
    let mut opt = OptimizerState::new();
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    for step in 0..2000u64 {
        let draw = FmDraw::sample(rows, d, &schedule, &mut stream(&[3, step]));
        let mut g = Graph::new();
        let hv = g.constant(cond.clone());
        let loss = fm_loss(&mut g, &head, &store, &z_target, hv, &draw, true)?;
        let grads = g.backward(loss)?.into_params(&g);
        adamw_step(&mut store, &grads, &mut opt, 2e-3, &hp)?;
        if step % 500 == 0 {
            println!("step {step:>4}  fm loss {:.4}", g.value(loss).item());
        }
    }
    let z = flow_sample(&head.field(&store), &h, d, 50, &mut stream(&[4]), &schedule)?;
    let mae = z.data().iter().enumerate().map(|(i, &v)| (v - target[i % d]).abs()).sum::<f32>() / z.len() as f32;
    println!("trained head, 50 Euler steps: mean absolute error {mae:.4}");
    Ok(())
}
