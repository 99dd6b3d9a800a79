//! Position-query autoregression: latents are generated in a random order,
//! each preceded by a learnable query naming the spatial index to produce
//! next. Group decoding emits `m` latents per backbone pass.

mod decode;
mod model;
mod plan;

pub use decode::{decode_mask, DecodeState, SampleSpec, DECODE_CHUNK};
pub use model::{build_training_sequence, ArConfig, QueryAr, SequenceBatch};
pub use plan::{check_permutation, plan_parallel_groups, sample_permutation, PermutationPlan};

use rand::Rng;

use crate::flowhead::{fm_loss, FlowHead, FmDraw, TimestepSchedule};
use crate::nn;
use crate::numerics::{Float, Graph, ParamStore, Tensor, Var};

/// Flow-matching loss of the head at every query slot, with each slot's
/// state and target repeated `repeats` times under independent `(t, ε)`.
#[allow(clippy::too_many_arguments)]
pub fn ar_flow_loss<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    ar: &QueryAr,
    head: &FlowHead,
    store: &ParamStore<T>,
    seq: &SequenceBatch,
    repeats: usize,
    schedule: &TimestepSchedule,
    rng: &mut R,
    trainable: bool,
) -> crate::Result<Var> {
    let h = ar.ar_forward(g, store, seq, trainable)?;
    let hq = ar.query_states(g, h, seq)?;
    let rows = g.shape(hq)[0];
    let width = g.shape(hq)[1];
    let (hq, target) = if repeats > 1 {
        let hr = g.gather(hq, nn::tile_index(rows, width, repeats), &[rows * repeats, width])?;
        let z = seq.latents.cast::<T>();
        let mut data = Vec::with_capacity(z.len() * repeats);
        for _ in 0..repeats {
            data.extend_from_slice(z.data());
        }
        (hr, Tensor::new(&[rows * repeats, z.cols()], data)?)
    } else {
        (hq, seq.latents.cast::<T>())
    };
    let draw = FmDraw::sample(target.rows(), target.cols(), schedule, rng);
    fm_loss(g, head, store, &target, hq, &draw, trainable)
}
