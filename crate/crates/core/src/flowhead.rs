//! Flow-matching head: conditional velocity MLP, training objective on the
//! linear path `z_t = t·z + (1 − t)·ε`, the dimension-adaptive timestep
//! shift, and the Euler sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Float, Graph, ParamStore, Tensor, Var};

/// Reference dimension of the timestep shift.
pub const REFERENCE_DIM: f64 = 4096.0;

/// `t_m = α·t_n / (1 + (α − 1)·t_n)` with `α = √(m/n)`.
pub fn shift_timestep(t_n: f64, m: f64, n: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t_n) {
        return Err(Error::invalid(format!("timestep {t_n} outside [0, 1]")));
    }
    if !(m >= 1.0 && n >= 1.0) {
        return Err(Error::invalid(format!("shift dimensions must be ≥ 1, got m={m}, n={n}")));
    }
    Ok(TimestepSchedule::new(m, n).shift(t_n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimestepSchedule {
    pub alpha: f64,
}

impl TimestepSchedule {
    pub fn new(m: f64, n: f64) -> Self {
        Self { alpha: (m / n).sqrt() }
    }

    pub fn identity() -> Self {
        Self { alpha: 1.0 }
    }

    pub fn shift(&self, t: f64) -> f64 {
        let a = self.alpha;
        if a == 1.0 {
            return t;
        }
        // (1 − t) + α·t equals 1 + (α − 1)·t and is exactly α at t = 1
        a * t / ((1.0 - t) + a * t)
    }

    /// `steps + 1` shifted times from 0 to 1.
    pub fn grid(&self, steps: usize) -> Vec<f64> {
        (0..=steps).map(|k| if k == steps { 1.0 } else { self.shift(k as f64 / steps as f64) }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowHeadConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub time_dim: usize,
}

impl FlowHeadConfig {
    pub fn new(latent_dim: usize, cond_dim: usize) -> Self {
        Self { latent_dim, cond_dim, width: 256, hidden_layers: 3, time_dim: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.cond_dim == 0 || self.width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("flow head dimensions must be ≥ 1".into()));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("time embedding dim {} must be even", self.time_dim)));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of `1000·t`, `[sin | cos]` halves.
pub fn time_embedding<T: Float>(t: &[f64], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &tv in t {
        let x = 1000.0 * tv;
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((x * f).sin(), (x * f).cos())).unzip();
        data.extend(s.into_iter().chain(c).map(T::of));
    }
    Tensor::new(&[t.len(), dim], data).expect("consistent size")
}

/// `v_θ(z_t, t, H)`: the first layer sums projections of `z_t`, the time
/// embedding and `H`; then SiLU hidden layers and a linear output.
#[derive(Clone, Debug)]
pub struct FlowHead {
    pub cfg: FlowHeadConfig,
    pub prefix: String,
}

impl FlowHead {
    pub fn new(cfg: FlowHeadConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, prefix: prefix.into() })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let c = &self.cfg;
        let w = c.width;
        // three input projections share one bias, so each gets a third of the variance
        let gain = (1.0f64 / 3.0).sqrt();
        nn::init_linear_scaled(store, &self.name("in_z"), c.latent_dim, w, gain, rng);
        nn::init_linear_scaled(store, &self.name("in_h"), c.cond_dim, w, gain, rng);
        store.insert(self.name("in_t.w"), Tensor::randn(&[c.time_dim, w], gain / (c.time_dim as f64).sqrt(), rng));
        for l in 1..c.hidden_layers {
            nn::init_linear_scaled(store, &self.name(&format!("fc{l}")), w, w, 1.6, rng);
        }
        nn::init_linear_scaled(store, &self.name("out"), w, c.latent_dim, 0.1, rng);
    }

    /// `z_t: [R, d_z]`, one timestep per row, `h: [R, d_model]` → `[R, d_z]`.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z_t: Var,
        t: &[f64],
        h: Var,
        trainable: bool,
    ) -> Result<Var> {
        let rows = g.shape(z_t)[0];
        if t.len() != rows || g.shape(h)[0] != rows {
            return Err(Error::Shape(format!(
                "flow head: {rows} latent rows, {} timesteps, {} conditioning rows",
                t.len(),
                g.shape(h)[0]
            )));
        }
        let a = nn::linear(g, store, &self.name("in_z"), z_t, trainable)?;
        let b = nn::linear(g, store, &self.name("in_h"), h, trainable)?;
        let emb = g.constant(time_embedding(t, self.cfg.time_dim));
        let wt = g.param(store, &self.name("in_t.w"), trainable)?;
        let c = g.matmul(emb, wt)?;
        let x = g.add(a, b)?;
        let x = g.add(x, c)?;
        let mut x = g.silu(x)?;
        for l in 1..self.cfg.hidden_layers {
            x = nn::linear(g, store, &self.name(&format!("fc{l}")), x, trainable)?;
            x = g.silu(x)?;
        }
        nn::linear(g, store, &self.name("out"), x, trainable)
    }

    /// Binds parameters for sampling.
    pub fn field<'a>(&'a self, store: &'a ParamStore) -> HeadField<'a> {
        HeadField { head: self, store }
    }
}

/// A velocity field evaluated on a batch of rows sharing one timestep.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f64, h: &Tensor) -> Result<Tensor>;
}

pub struct HeadField<'a> {
    head: &'a FlowHead,
    store: &'a ParamStore,
}

impl VelocityField for HeadField<'_> {
    fn velocity(&self, z: &Tensor, t: f64, h: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let hv = g.constant(h.clone());
        let ts = vec![t; z.rows()];
        let v = self.head.forward(&mut g, self.store, zv, &ts, hv, false)?;
        Ok(g.value(v).clone())
    }
}

/// Exact velocity of the straight path from the start point to `target`:
/// `v(z, t) = (c − z) / (1 − t)`.
pub struct LinearPathOracle {
    pub target: Vec<f32>,
}

impl VelocityField for LinearPathOracle {
    fn velocity(&self, z: &Tensor, t: f64, _h: &Tensor) -> Result<Tensor> {
        let d = self.target.len();
        let inv = 1.0 / (1.0 - t);
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| ((self.target[i % d] as f64 - v as f64) * inv) as f32)
            .collect();
        Tensor::new(z.shape(), data)
    }
}

/// Euler integration from `eps` (t = 0) to t = 1 on the shifted grid.
pub fn flow_sample_from(
    field: &impl VelocityField,
    h: &Tensor,
    eps: Tensor,
    steps: usize,
    schedule: &TimestepSchedule,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("sampling needs ≥ 1 step"));
    }
    if eps.rows() != h.rows() {
        return Err(Error::Shape(format!("{} noise rows for {} conditioning rows", eps.rows(), h.rows())));
    }
    let grid = schedule.grid(steps);
    let mut z = eps;
    for k in 0..steps {
        let v = field.velocity(&z, grid[k], h)?;
        let dt = (grid[k + 1] - grid[k]) as f32;
        for (zi, &vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi += dt * vi;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { op: format!("flow_sample step {k} (t = {:.4})", grid[k]) });
        }
    }
    Ok(z)
}

/// [`flow_sample_from`] with `ε ~ N(0, I)` drawn from `rng`, `[rows, dim]`.
pub fn flow_sample<R: Rng + ?Sized>(
    field: &impl VelocityField,
    h: &Tensor,
    dim: usize,
    steps: usize,
    rng: &mut R,
    schedule: &TimestepSchedule,
) -> Result<Tensor> {
    flow_sample_from(field, h, standard_normal(&[h.rows(), dim], rng), steps, schedule)
}

pub fn standard_normal<T: Float, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape, data).expect("consistent size")
}

/// Timesteps and noise for one flow-matching evaluation.
#[derive(Clone, Debug)]
pub struct FmDraw<T: Float = f32> {
    pub t: Vec<f64>,
    pub eps: Tensor<T>,
}

impl<T: Float> FmDraw<T> {
    /// Uniform base times pushed through the shift, standard normal noise.
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, schedule: &TimestepSchedule, rng: &mut R) -> Self {
        let t = (0..rows).map(|_| schedule.shift(rng.gen::<f64>())).collect();
        Self { t, eps: standard_normal(&[rows, dim], rng) }
    }
}

/// Mean over rows of `‖(z − ε) − v_θ(z_t, t, H)‖²`, `z_t = t·z + (1 − t)·ε`.
pub fn fm_loss<T: Float>(
    g: &mut Graph<T>,
    head: &FlowHead,
    store: &ParamStore<T>,
    z_target: &Tensor<T>,
    h: Var,
    draw: &FmDraw<T>,
    trainable: bool,
) -> Result<Var> {
    let d = head.cfg.latent_dim;
    if z_target.shape() != draw.eps.shape() || z_target.cols() != d || draw.t.len() != z_target.rows() {
        return Err(Error::Shape(format!(
            "fm_loss: target {:?}, noise {:?}, {} timesteps",
            z_target.shape(),
            draw.eps.shape(),
            draw.t.len()
        )));
    }
    let mut z_t = Vec::with_capacity(z_target.len());
    let mut u = Vec::with_capacity(z_target.len());
    for (r, &t) in draw.t.iter().enumerate() {
        let t = T::of(t);
        for (&z, &e) in z_target.row(r).iter().zip(draw.eps.row(r)) {
            z_t.push(t * z + (T::one() - t) * e);
            u.push(z - e);
        }
    }
    let z_t = g.constant(Tensor::new(z_target.shape(), z_t)?);
    let u = g.constant(Tensor::new(z_target.shape(), u)?);
    let v = head.forward(g, store, z_t, &draw.t, h, trainable)?;
    let mse = g.mse(v, u)?;
    g.scale(mse, T::of(d as f64))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{grad_check, CoordSelection};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn shift_identity_when_dims_match() {
        for t in [0.0, 0.1, 0.5, 0.77, 1.0] {
            assert_eq!(shift_timestep(t, 4096.0, 4096.0).unwrap(), t);
        }
    }

    #[test]
    fn shift_keeps_endpoints() {
        for (m, n) in [(1.0, 4096.0), (512.0, 4096.0), (9000.0, 3.0)] {
            assert_eq!(shift_timestep(0.0, m, n).unwrap(), 0.0);
            assert_eq!(shift_timestep(1.0, m, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn shift_hand_value() {
        let t = shift_timestep(0.5, 1024.0, 4096.0).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_rejects_out_of_range() {
        assert!(shift_timestep(1.5, 8.0, 4096.0).is_err());
        assert!(shift_timestep(-0.1, 8.0, 4096.0).is_err());
        assert!(shift_timestep(0.5, 0.0, 4096.0).is_err());
    }

    proptest! {
        #[test]
        fn shift_is_increasing_into_unit_interval(m in 1.0f64..1e5, n in 1.0f64..1e5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (sl, sh) = (shift_timestep(lo, m, n).unwrap(), shift_timestep(hi, m, n).unwrap());
            prop_assert!((0.0..=1.0).contains(&sl) && (0.0..=1.0).contains(&sh));
            if hi > lo {
                prop_assert!(sh > sl);
            }
        }
    }

    fn head(d: usize, c: usize, width: usize) -> FlowHead {
        FlowHead::new(FlowHeadConfig { latent_dim: d, cond_dim: c, width, hidden_layers: 3, time_dim: 8 }, "head")
            .unwrap()
    }

    #[test]
    fn oracle_recovers_target_for_any_step_count() {
        let target = vec![0.7f32, -1.3, 2.5];
        let oracle = LinearPathOracle { target: target.clone() };
        let h = Tensor::zeros(&[4, 1]);
        for steps in [1, 2, 7, 50] {
            for schedule in [TimestepSchedule::identity(), TimestepSchedule::new(8.0, 4096.0)] {
                let z = flow_sample(&oracle, &h, 3, steps, &mut rng(steps as u64), &schedule).unwrap();
                for r in 0..4 {
                    for (a, b) in z.row(r).iter().zip(&target) {
                        assert!((a - b).abs() < 1e-6, "{steps}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_step_is_one_euler_increment() {
        let hd = head(3, 2, 16);
        let mut store = ParamStore::new();
        hd.init(&mut store, &mut rng(1));
        let h = Tensor::randn(&[2, 2], 1.0, &mut rng(2));
        let eps: Tensor = Tensor::randn(&[2, 3], 1.0, &mut rng(3));
        let field = hd.field(&store);
        let z = flow_sample_from(&field, &h, eps.clone(), 1, &TimestepSchedule::identity()).unwrap();
        let v = field.velocity(&eps, 0.0, &h).unwrap();
        for i in 0..6 {
            assert_eq!(z.data()[i], eps.data()[i] + v.data()[i]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let hd = head(3, 2, 16);
        let mut store = ParamStore::new();
        hd.init(&mut store, &mut rng(4));
        let h = Tensor::randn(&[5, 2], 1.0, &mut rng(5));
        let s = TimestepSchedule::new(24.0, REFERENCE_DIM);
        let a = flow_sample(&hd.field(&store), &h, 3, 20, &mut rng(6), &s).unwrap();
        let b = flow_sample(&hd.field(&store), &h, 3, 20, &mut rng(6), &s).unwrap();
        assert_eq!(a, b);
        assert!(flow_sample(&hd.field(&store), &h, 3, 0, &mut rng(6), &s).is_err());
    }

    struct Exploding;

    impl VelocityField for Exploding {
        fn velocity(&self, z: &Tensor, _t: f64, _h: &Tensor) -> Result<Tensor> {
            Ok(z.map(|v| v * 1e30 + 1e30))
        }
    }

    #[test]
    fn non_finite_state_aborts() {
        let h = Tensor::zeros(&[1, 1]);
        let err = flow_sample(&Exploding, &h, 2, 10, &mut rng(7), &TimestepSchedule::identity());
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn loss_vanishes_for_exact_velocity() {
        // zero the network and inject the exact velocity through the output bias
        let hd = head(2, 1, 8);
        let mut store = ParamStore::<f64>::new();
        hd.init(&mut store, &mut rng(8));
        store.insert("head.out.w", Tensor::zeros(&[8, 2]));
        let z = Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap();
        let draw = FmDraw::<f64>::sample(1, 2, &TimestepSchedule::identity(), &mut rng(9));
        let u: Vec<f64> = z.data().iter().zip(draw.eps.data()).map(|(a, b)| a - b).collect();
        store.insert("head.out.b", Tensor::new(&[2], u).unwrap());
        let mut g = Graph::new();
        let h = g.constant(Tensor::zeros(&[1, 1]));
        let loss = fm_loss(&mut g, &hd, &store, &z, h, &draw, false).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn zero_velocity_loss_expectation_is_dim() {
        let d = 4;
        let hd = head(d, 1, 8);
        let mut store = ParamStore::<f64>::new();
        hd.init(&mut store, &mut rng(10));
        store.insert("head.out.w", Tensor::zeros(&[8, d]));
        let rows = 100_000;
        let draw = FmDraw::<f64>::sample(rows, d, &TimestepSchedule::new(64.0, REFERENCE_DIM), &mut rng(11));
        let mut g = Graph::new();
        let h = g.constant(Tensor::zeros(&[rows, 1]));
        let loss = fm_loss(&mut g, &hd, &store, &Tensor::zeros(&[rows, d]), h, &draw, false).unwrap();
        let mean = g.value(loss).item();
        assert!((mean / d as f64 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn fm_loss_gradient_check() {
        let hd = head(3, 4, 12);
        let mut store = ParamStore::<f64>::new();
        hd.init(&mut store, &mut rng(12));
        let rows = 5;
        let z = Tensor::<f64>::randn(&[rows, 3], 1.0, &mut rng(13));
        let hcond = Tensor::<f64>::randn(&[rows, 4], 1.0, &mut rng(14));
        let draw = FmDraw::<f64>::sample(rows, 3, &TimestepSchedule::new(24.0, REFERENCE_DIM), &mut rng(15));
        let report = grad_check(&store, 1e-5, CoordSelection::All, |s| {
            let mut g = Graph::new();
            let h = g.constant(hcond.clone());
            let loss = fm_loss(&mut g, &hd, s, &z, h, &draw, true)?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).item(), grads.into_params(&g)))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn time_embedding_shape_and_origin() {
        let e = time_embedding::<f64>(&[0.0, 0.5], 8);
        assert_eq!(e.shape(), &[2, 8]);
        assert_eq!(&e.row(0)[..4], &[0.0; 4]);
        assert_eq!(&e.row(0)[4..], &[1.0; 4]);
    }

    #[test]
    fn grid_spans_unit_interval() {
        let g = TimestepSchedule::new(512.0, REFERENCE_DIM).grid(10);
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10]), (0.0, 1.0));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
