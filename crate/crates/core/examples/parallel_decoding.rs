//! Group-parallel decoding with position queries on an untrained generator:
//! larger groups need fewer backbone passes, and groups of one reproduce the
//! token-by-token reference exactly.

use vgt::data::ClassId;
use vgt::flowhead::{FlowHead, FlowHeadConfig, TimestepSchedule};
use vgt::numerics::ParamStore;
use vgt::queryar::{plan_parallel_groups, sample_permutation, ArConfig, QueryAr, SampleSpec};
use vgt::rng::stream;

fn main() -> vgt::Result<()> {
    let cfg = ArConfig { d_model: 32, layers: 2, heads: 2, mlp_ratio: 2, ..ArConfig::default() };
    let ar = QueryAr::new(cfg)?;
    let head = FlowHead::new(FlowHeadConfig::new(cfg.latent_dim, cfg.d_model), "head")?;
    let mut store = ParamStore::new();
    ar.init(&mut store, &mut stream(&[0]));
    head.init(&mut store, &mut stream(&[1]));

    let order = sample_permutation(cfg.tokens, &mut stream(&[2]))?;
    let plan = plan_parallel_groups(cfg.tokens, 4, &order)?;
    println!("first groups of 4: {:?} {:?}", plan.group(0), plan.group(1));

    let classes = [ClassId(3), ClassId(41)];
    let spec = |group_size| SampleSpec { group_size, steps: 8, seed: 5, schedule: TimestepSchedule::identity(), raster: false };
    for m in [1, 4, 16, 64] {
        ar.reset_passes();
        let z = ar.generate(&store, &head, &classes, &spec(m))?;
        println!("group size {m:>2}: {:>2} backbone passes, first latent {:?}", ar.forward_passes(), &z[0].token(0)[..3]);
    }
    let parallel = ar.generate(&store, &head, &classes, &spec(1))?;
    let sequential = ar.generate_sequential(&store, &head, &classes, &spec(1))?;
    println!("group size 1 equals sequential reference: {}", parallel == sequential);
    Ok(())
}
