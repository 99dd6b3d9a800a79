use rand::Rng;

use super::{patchify, EncoderConfig, Encoder};
use crate::data::{ClassId, ColorClass, Image, PositionBin, ShapeClass, NUM_COLORS, NUM_POSITIONS, NUM_SHAPES};
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Float, Graph, ParamStore, Tensor, Var};

const HEADS: [(&str, usize); 3] = [("shape", NUM_SHAPES), ("color", NUM_COLORS), ("position", NUM_POSITIONS)];

/// Frozen semantic reference: an encoder with the tokenizer's architecture
/// plus three linear classification heads on mean-pooled features. After
/// pretraining it supplies distillation targets, the perceptual loss, sample
/// grading and the features for the Fréchet distance.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub encoder: Encoder,
}

/// Per-head logits `[B, classes]`.
pub struct TeacherLogits {
    pub shape: Var,
    pub color: Var,
    pub position: Var,
}

impl Teacher {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { encoder: Encoder::new(cfg, "teacher") })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.encoder.cfg
    }

    fn head_name(kind: &str) -> String {
        format!("teacher.head.{kind}")
    }

    pub fn init<T: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, rng);
        for (kind, k) in HEADS {
            nn::init_linear(&mut store, &Self::head_name(kind), self.cfg().dim, k, rng);
        }
        store
    }

    /// Copies the teacher's encoder weights into a store under `prefix.`.
    pub fn export_encoder<T: Float>(&self, store: &ParamStore<T>, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in store.iter() {
            if let Some(rest) = name.strip_prefix("teacher.") {
                if !rest.starts_with("head.") {
                    out.insert(format!("{prefix}.{rest}"), t.clone());
                }
            }
        }
        out
    }

    pub fn logits<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        patches: Var,
        batch: usize,
        trainable: bool,
    ) -> Result<TeacherLogits> {
        let f = self.encoder.forward(g, store, patches, batch, trainable)?;
        let pooled = g.group_mean(f, self.cfg().tokens())?;
        let mut heads = HEADS.iter().map(|(kind, _)| nn::linear(g, store, &Self::head_name(kind), pooled, trainable));
        Ok(TeacherLogits {
            shape: heads.next().unwrap()?,
            color: heads.next().unwrap()?,
            position: heads.next().unwrap()?,
        })
    }

    /// Summed cross-entropy of the three heads.
    pub fn classification_loss<T: Float>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        patches: Var,
        labels: &[ClassId],
        trainable: bool,
    ) -> Result<Var> {
        let logits = self.logits(g, store, patches, labels.len(), trainable)?;
        let parts = labels.iter().map(|c| c.parts()).collect::<Result<Vec<_>>>()?;
        let shape: Vec<usize> = parts.iter().map(|p| p.0.index()).collect();
        let color: Vec<usize> = parts.iter().map(|p| p.1.index()).collect();
        let position: Vec<usize> = parts.iter().map(|p| p.2.index()).collect();
        let a = g.cross_entropy(logits.shape, &shape)?;
        let b = g.cross_entropy(logits.color, &color)?;
        let c = g.cross_entropy(logits.position, &position)?;
        let ab = g.add(a, b)?;
        g.add(ab, c)
    }

    /// Token features `[B·N, d]`.
    pub fn token_features(&self, store: &ParamStore, images: &[&Image]) -> Result<Tensor> {
        super::chunked(images, self.cfg().dim, |chunk| {
            let mut g = Graph::new();
            let p = g.constant(patchify(chunk, self.cfg())?);
            let f = self.encoder.forward(&mut g, store, p, chunk.len(), false)?;
            Ok(g.value(f).clone())
        })
    }

    /// Mean-pooled features `[B, d]`.
    pub fn pooled_features(&self, store: &ParamStore, images: &[&Image]) -> Result<Tensor> {
        super::chunked(images, self.cfg().dim, |chunk| {
            let mut g = Graph::new();
            let p = g.constant(patchify(chunk, self.cfg())?);
            let f = self.encoder.forward(&mut g, store, p, chunk.len(), false)?;
            let pooled = g.group_mean(f, self.cfg().tokens())?;
            Ok(g.value(pooled).clone())
        })
    }

    /// Arg-max (shape, color, position) per image.
    pub fn classify(&self, store: &ParamStore, images: &[&Image]) -> Result<Vec<ClassId>> {
        if images.is_empty() {
            return Err(Error::invalid("no images given"));
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut g = Graph::new();
            let p = g.constant(patchify(chunk, self.cfg())?);
            let l = self.logits(&mut g, store, p, chunk.len(), false)?;
            let (s, c, q) = (argmax_rows(g.value(l.shape)), argmax_rows(g.value(l.color)), argmax_rows(g.value(l.position)));
            for i in 0..chunk.len() {
                out.push(ClassId::new(
                    ShapeClass::from_index(s[i]).unwrap(),
                    ColorClass::from_index(c[i]).unwrap(),
                    PositionBin::from_index(q[i]).unwrap(),
                ));
            }
        }
        Ok(out)
    }
}

pub(crate) fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0)
        })
        .collect()
}
