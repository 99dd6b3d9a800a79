//! A two-layer network on the tape: forward, backward, and a finite-difference
//! check of its gradients in 64-bit precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgt::nn;
use vgt::numerics::{grad_check, CoordSelection, Graph, ParamStore, Tensor};

fn main() -> vgt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    nn::init_linear(&mut store, "fc1", 5, 16, &mut rng);
    nn::init_layer_norm(&mut store, "ln", 16);
    nn::init_linear(&mut store, "fc2", 16, 3, &mut rng);
    let x = Tensor::<f64>::randn(&[8, 5], 1.0, &mut rng);
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];

    let objective = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = nn::linear(&mut g, s, "fc1", xv, true)?;
        let h = nn::layer_norm(&mut g, s, "ln", h, true)?;
        let h = g.gelu(h)?;
        let logits = nn::linear(&mut g, s, "fc2", h, true)?;
        let loss = g.cross_entropy(logits, &labels)?;
        Ok((g.value(loss).item(), g.backward(loss)?.into_params(&g)))
    };

    let (loss, grads) = objective(&store)?;
    println!("loss {loss:.5}");
    for (name, grad) in &grads {
        let norm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  |d loss / d {name}| = {norm:.4e}");
    }
    let report = grad_check(&store, 1e-5, CoordSelection::All, objective)?;
    println!("checked {} coordinates, max relative error {:.2e}", report.checked, report.max_rel_err);
    Ok(())
}
