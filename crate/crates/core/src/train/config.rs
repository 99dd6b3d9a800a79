use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flowhead::{FlowHeadConfig, TimestepSchedule, REFERENCE_DIM};
use crate::queryar::ArConfig;
use crate::train::optim::AdamW;
use crate::vgtae::{AeConfig, EncoderConfig};

macro_rules! train_config {
    ($($(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr),+ $(,)?) => {
        /// Every hyperparameter of the pipeline, as flat `key = value` pairs.
        #[derive(Clone, Debug, PartialEq)]
        pub struct TrainConfig {
            $($(#[doc = $doc])* pub $key: $ty,)+
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $($key: $default,)+ }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),+];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => self.$key = parse_value(key, value)?,)+
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Resolved configuration, one `key = value` line per field.
            pub fn render(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($key), self.$key).unwrap();)+
                s
            }
        }
    };
}

train_config! {
    seed: u64 = 0,
    train_size: usize = 512,
    val_size: usize = 256,
    enc_dim: usize = 64,
    enc_layers: usize = 4,
    enc_heads: usize = 4,
    enc_mlp_ratio: usize = 4,
    latent_dim: usize = 8,
    decoder_channels: usize = 32,
    teacher_steps: usize = 2000,
    teacher_batch: usize = 32,
    teacher_lr: f64 = 1e-3,
    ae_steps: usize = 2000,
    ae_batch: usize = 32,
    ae_lr: f64 = 1e-3,
    lambda_distill: f64 = 1.0,
    stage2_steps: usize = 1000,
    stage2_batch: usize = 32,
    stage2_lr: f64 = 1e-3,
    sigma_noise: f64 = 0.1,
    /// Also fit the projection in stage 2 (statistics stay frozen).
    stage2_train_projection: bool = false,
    ar_steps: usize = 5000,
    ar_batch: usize = 32,
    ar_lr: f64 = 1e-3,
    ar_dim: usize = 128,
    ar_layers: usize = 4,
    ar_heads: usize = 4,
    ar_mlp_ratio: usize = 4,
    head_width: usize = 256,
    head_layers: usize = 3,
    time_dim: usize = 64,
    /// Independent `(t, ε)` draws per query state in the flow loss.
    fm_repeats: usize = 4,
    /// Dimensionality `m` of the timestep shift; 0 means `latent_dim · N`.
    shift_dim: usize = 0,
    finetune_steps: usize = 500,
    finetune_lr: f64 = 5e-5,
    sample_steps: usize = 50,
    group_size: usize = 1,
    /// Identity generation order instead of random permutations.
    raster_order: bool = false,
    beta1: f64 = 0.9,
    beta2: f64 = 0.95,
    weight_decay: f64 = 0.05,
    adam_eps: f64 = 1e-8,
    warmup: usize = 100,
    ema_decay: f64 = 0.99,
    log_every: usize = 50,
    /// Record elapsed milliseconds in metric logs; off keeps logs byte-stable.
    log_wall_time: bool = false,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    /// Reduced widths and depths for single-core runs. Step counts are
    /// unchanged; the validation split is doubled so a 5-fold probe sees
    /// every class in every fold.
    pub fn quick() -> Self {
        Self {
            val_size: 512,
            enc_dim: 32,
            enc_layers: 2,
            enc_heads: 4,
            enc_mlp_ratio: 2,
            decoder_channels: 16,
            teacher_batch: 16,
            ae_batch: 16,
            stage2_batch: 16,
            ar_batch: 16,
            ar_dim: 64,
            ar_layers: 2,
            ar_mlp_ratio: 2,
            head_width: 128,
            head_layers: 2,
            time_dim: 32,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "quick" => Ok(Self::quick()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected default or quick)"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.enc_dim,
            layers: self.enc_layers,
            heads: self.enc_heads,
            mlp_ratio: self.enc_mlp_ratio,
            ..EncoderConfig::default()
        }
    }

    pub fn ae(&self) -> AeConfig {
        AeConfig { encoder: self.encoder(), latent_dim: self.latent_dim, decoder_channels: self.decoder_channels }
    }

    pub fn ar(&self) -> ArConfig {
        ArConfig {
            d_model: self.ar_dim,
            layers: self.ar_layers,
            heads: self.ar_heads,
            mlp_ratio: self.ar_mlp_ratio,
            tokens: self.encoder().tokens(),
            latent_dim: self.latent_dim,
            ..ArConfig::default()
        }
    }

    pub fn head(&self) -> FlowHeadConfig {
        FlowHeadConfig {
            latent_dim: self.latent_dim,
            cond_dim: self.ar_dim,
            width: self.head_width,
            hidden_layers: self.head_layers,
            time_dim: self.time_dim,
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW { beta1: self.beta1, beta2: self.beta2, weight_decay: self.weight_decay, eps: self.adam_eps }
    }

    pub fn schedule(&self) -> TimestepSchedule {
        let m = if self.shift_dim == 0 { self.latent_dim * self.encoder().tokens() } else { self.shift_dim };
        TimestepSchedule::new(m as f64, REFERENCE_DIM)
    }

    pub fn validate(&self) -> Result<()> {
        self.ae().validate()?;
        self.ar().validate()?;
        self.head().validate()?;
        let positive = [
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("teacher_batch", self.teacher_batch),
            ("ae_batch", self.ae_batch),
            ("stage2_batch", self.stage2_batch),
            ("ar_batch", self.ar_batch),
            ("fm_repeats", self.fm_repeats),
            ("sample_steps", self.sample_steps),
            ("log_every", self.log_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be ≥ 1")));
        }
        let n = self.encoder().tokens();
        if self.group_size == 0 || self.group_size > n {
            return Err(Error::Config(format!("group_size must be in 1..={n}")));
        }
        if self.sigma_noise < 0.0 || !self.sigma_noise.is_finite() {
            return Err(Error::Config("sigma_noise must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = TrainConfig::quick();
        c.seed = 17;
        c.sigma_noise = 0.35;
        c.stage2_train_projection = true;
        assert_eq!(TrainConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(c.render().lines().count(), TrainConfig::KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::parse("# header\n\nseed = 3   # trailing\n  ae_lr=5e-4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.ae_lr, 5e-4);
        assert_eq!(c.ae_steps, TrainConfig::default().ae_steps);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let e = TrainConfig::parse("seed = 1\nlearning_rate = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("learning_rate"), "{e}");
        assert!(TrainConfig::parse("seed 1").is_err());
        assert!(TrainConfig::parse("seed = -1").is_err());
        assert!(TrainConfig::parse("raster_order = maybe").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(TrainConfig::parse("group_size = 65").is_err());
        assert!(TrainConfig::parse("group_size = 0").is_err());
        assert!(TrainConfig::parse("enc_heads = 3").is_err());
        assert!(TrainConfig::parse("sigma_noise = -0.1").is_err());
        assert!(TrainConfig::parse("ema_decay = 1.5").is_err());
    }

    #[test]
    fn derived_configs() {
        let c = TrainConfig::default();
        assert_eq!(c.ar().tokens, 64);
        assert_eq!(c.head().cond_dim, c.ar_dim);
        assert!((c.schedule().alpha - (512.0f64 / 4096.0).sqrt()).abs() < 1e-15);
        let c = TrainConfig { shift_dim: 4096, ..c };
        assert_eq!(c.schedule().alpha, 1.0);
        assert!(TrainConfig::preset("quick").unwrap().validate().is_ok());
        assert!(TrainConfig::preset("huge").is_err());
    }
}
