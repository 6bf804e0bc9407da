//! The five model heads assembled from `nn` primitives.
//!
//! Parameters are created in a fixed order (image extractor, meteorological
//! extractor, projection, fused stack, unimodal heads, α/β) from one seeded
//! generator, so a hybrid and a concat model built with the same seed start
//! with identical concat-pathway weights, and the names line up for
//! [`ParamStore::copy_matching`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Combiner, ImageExtractorConfig, LearnableMode, ModelConfig, MsmeConfig, Variant};
use crate::data::sample::Batch;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Dense, Graph, NodeId, ParamId, ParamStore, Parameter, Tensor};

/// Conv stages, each followed by ReLU, then global average pooling.
#[derive(Debug, Clone)]
pub struct ImageExtractor {
    convs: Vec<Conv2d>,
    input_size: usize,
    output_dim: usize,
}

impl ImageExtractor {
    fn new(store: &mut ParamStore, cfg: &ImageExtractorConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut in_c = 3;
        let convs = cfg
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = Conv2d::new(store, &format!("image.conv{i}"), in_c, s.out_channels, s.kernel, s.stride, rng);
                in_c = s.out_channels;
                c
            })
            .collect();
        Self {
            convs,
            input_size: cfg.input_size,
            output_dim: cfg.output_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `[B, 3, H, W]` → `[B, n]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let expected = [shape.first().copied().unwrap_or(0), 3, self.input_size, self.input_size];
        if shape != expected {
            return Err(Error::dim("image_extractor", &expected, &shape));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.relu(h);
        }
        g.global_avg_pool(h)
    }
}

/// Dense blocks: dense → batch norm (optional) → ReLU → dropout.
#[derive(Debug, Clone)]
pub struct MsmeExtractor {
    blocks: Vec<(Dense, Option<BatchNorm>)>,
    dropout: f64,
    output_dim: usize,
}

impl MsmeExtractor {
    fn new(store: &mut ParamStore, cfg: &MsmeConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut input = cfg.input_dim;
        let blocks = cfg
            .widths()
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let dense = Dense::new(store, &format!("meteo.block{i}.dense"), input, w, rng);
                let bn = cfg
                    .batchnorm
                    .then(|| BatchNorm::new(store, &format!("meteo.block{i}.bn"), w));
                input = w;
                (dense, bn)
            })
            .collect();
        Self {
            blocks,
            dropout: cfg.dropout,
            output_dim: cfg.output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `[B, k]` → `[B, m]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (dense, bn) in &self.blocks {
            h = dense.forward(g, store, h)?;
            if let Some(bn) = bn {
                h = bn.forward(g, store, h)?;
            }
            h = g.relu(h);
            h = g.dropout(h, self.dropout)?;
        }
        Ok(h)
    }
}

/// Projects image features to width `m`:
/// dense → BN → ReLU → dropout → dense → BN → ReLU.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    first: (Dense, BatchNorm),
    second: (Dense, BatchNorm),
    dropout: f64,
}

impl ProjectionHead {
    fn new(store: &mut ParamStore, n: usize, hidden: usize, m: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let first = (
            Dense::new(store, "fusion.proj.dense0", n, hidden, rng),
            BatchNorm::new(store, "fusion.proj.bn0", hidden),
        );
        let second = (
            Dense::new(store, "fusion.proj.dense1", hidden, m, rng),
            BatchNorm::new(store, "fusion.proj.bn1", m),
        );
        Self {
            first,
            second,
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.first.0.forward(g, store, x)?;
        let h = self.first.1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout)?;
        let h = self.second.0.forward(g, store, h)?;
        let h = self.second.1.forward(g, store, h)?;
        Ok(g.relu(h))
    }

    /// Batch norm of the final block; zero scale and shift silence the head.
    pub fn last_batchnorm(&self) -> &BatchNorm {
        &self.second.1
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Deployed prediction `[B]`: cO for hybrid, ŷ for learnable.
    pub prediction: NodeId,
    /// Meteorological predictor output `[B]` (hybrid mO, learnable P_meteo).
    pub meteo: Option<NodeId>,
    /// Image predictor output `[B]` (hybrid iO, learnable P_image).
    pub image: Option<NodeId>,
    /// Effective modality weights (learnable variant).
    pub alpha: Option<NodeId>,
    pub beta: Option<NodeId>,
}

/// Per-sample predictions of the three hybrid predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutputs {
    pub combined: Vec<f64>,
    pub meteo: Vec<f64>,
    pub image: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    config: ModelConfig,
    pub store: ParamStore,
    image: Option<ImageExtractor>,
    meteo: Option<MsmeExtractor>,
    projection: Option<ProjectionHead>,
    fusion_bn: Option<BatchNorm>,
    post: Vec<Dense>,
    head: Option<Dense>,
    meteo_head: Option<Dense>,
    image_head: Option<Dense>,
    alpha: Option<ParamId>,
    beta: Option<ParamId>,
}

const EVAL_CHUNK: usize = 128;

impl FusionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let v = config.fusion.variant;
        let image = v
            .uses_image()
            .then(|| ImageExtractor::new(&mut store, &config.image, &mut rng));
        let meteo = v
            .uses_meteo()
            .then(|| MsmeExtractor::new(&mut store, &config.meteo, &mut rng));

        let (mut projection, mut fusion_bn, mut post, mut head) = (None, None, Vec::new(), None);
        if v.fuses_features() {
            let (n, m) = (config.image.output_dim(), config.meteo.output_dim);
            if config.fusion.combiner != Combiner::Concatenate {
                projection = Some(ProjectionHead::new(
                    &mut store,
                    n,
                    config.fusion.projection_hidden,
                    m,
                    config.fusion.projection_dropout,
                    &mut rng,
                ));
            }
            let fused = config.fused_dim();
            fusion_bn = Some(BatchNorm::new(&mut store, "fusion.bn", fused));
            let mut input = fused;
            for (i, &w) in config.fusion.post_fusion.iter().enumerate() {
                post.push(Dense::new(&mut store, &format!("fusion.dense{i}"), input, w, &mut rng));
                input = w;
            }
            head = Some(Dense::new(&mut store, "fusion.head", input, 1, &mut rng));
        }

        let wants_meteo_head = matches!(v, Variant::MeteoOnly | Variant::Hybrid | Variant::LearnableParam);
        let wants_image_head = matches!(v, Variant::ImageOnly | Variant::Hybrid | Variant::LearnableParam);
        let meteo_head = wants_meteo_head
            .then(|| Dense::new(&mut store, "meteo_head", config.meteo.output_dim, 1, &mut rng));
        let image_head = wants_image_head
            .then(|| Dense::new(&mut store, "image_head", config.image.output_dim(), 1, &mut rng));

        let (mut alpha, mut beta) = (None, None);
        if v == Variant::LearnableParam {
            alpha = Some(store.add(Parameter::new("alpha", Tensor::from_vec(vec![config.fusion.alpha_init]))));
            if config.fusion.learnable_mode == LearnableMode::Dual {
                beta = Some(store.add(Parameter::new("beta", Tensor::from_vec(vec![config.fusion.beta_init]))));
            }
        }

        Ok(Self {
            config,
            store,
            image,
            meteo,
            projection,
            fusion_bn,
            post,
            head,
            meteo_head,
            image_head,
            alpha,
            beta,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.fusion.variant
    }

    pub fn image_extractor(&self) -> Option<&ImageExtractor> {
        self.image.as_ref()
    }

    pub fn meteo_extractor(&self) -> Option<&MsmeExtractor> {
        self.meteo.as_ref()
    }

    pub fn projection(&self) -> Option<&ProjectionHead> {
        self.projection.as_ref()
    }

    pub fn meteo_head(&self) -> Option<&Dense> {
        self.meteo_head.as_ref()
    }

    pub fn image_head(&self) -> Option<&Dense> {
        self.image_head.as_ref()
    }

    pub fn alpha_id(&self) -> Option<ParamId> {
        self.alpha
    }

    pub fn beta_id(&self) -> Option<ParamId> {
        self.beta
    }

    /// Effective (α, β); in single-complementary mode β = 1 − α.
    pub fn modality_weights(&self) -> Option<(f64, f64)> {
        let a = self.store.value(self.alpha?).data()[0];
        let b = match self.beta {
            Some(id) => self.store.value(id).data()[0],
            None => 1.0 - a,
        };
        Some((a, b))
    }

    /// Sets α (and β in dual mode).
    pub fn set_modality_weights(&mut self, alpha: f64, beta: f64) -> Result<()> {
        let a = self
            .alpha
            .ok_or_else(|| Error::Contract("model has no learnable modality weights".into()))?;
        self.store.get_mut(a).value.data_mut()[0] = alpha;
        if let Some(b) = self.beta {
            self.store.get_mut(b).value.data_mut()[0] = beta;
        }
        Ok(())
    }

    /// Single dense layer `[B, d]` → `[B]`.
    pub fn unimodal_head(&self, g: &mut Graph, head: &Dense, features: NodeId) -> Result<NodeId> {
        let out = head.forward(g, &self.store, features)?;
        let b = g.value(out).batch();
        g.reshape(out, vec![b])
    }

    /// Fuses extractor outputs: concatenation, or add/multiply after
    /// projecting image features to width `m`.
    pub fn combine(&self, g: &mut Graph, image: NodeId, meteo: NodeId) -> Result<NodeId> {
        match (self.config.fusion.combiner, &self.projection) {
            (Combiner::Concatenate, _) => g.concat(image, meteo),
            (c, Some(proj)) => {
                let p = proj.forward(g, &self.store, image)?;
                if c == Combiner::Add {
                    g.add(p, meteo)
                } else {
                    g.mul(p, meteo)
                }
            }
            (c, None) => Err(Error::Contract(format!("combiner {c} requires the projection head"))),
        }
    }

    fn fused_predictor(&self, g: &mut Graph, image: NodeId, meteo: NodeId) -> Result<NodeId> {
        let fusion_bn = self
            .fusion_bn
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no fused predictor".into()))?;
        let fused = self.combine(g, image, meteo)?;
        let mut h = fusion_bn.forward(g, &self.store, fused)?;
        for d in &self.post {
            h = d.forward(g, &self.store, h)?;
            h = g.relu(h);
        }
        let head = self.head.as_ref().expect("fused predictor has a head");
        self.unimodal_head(g, head, h)
    }

    /// Records one forward pass on `g`.
    pub fn forward(&self, g: &mut Graph, patches: &Tensor, features: &Tensor) -> Result<Outputs> {
        let image_feats = match &self.image {
            Some(ex) => {
                let x = g.input(patches.clone());
                Some(ex.forward(g, &self.store, x)?)
            }
            None => None,
        };
        let meteo_feats = match &self.meteo {
            Some(ex) => {
                let x = g.input(features.clone());
                Some(ex.forward(g, &self.store, x)?)
            }
            None => None,
        };
        let mut out = Outputs {
            prediction: image_feats.or(meteo_feats).expect("at least one modality"),
            meteo: None,
            image: None,
            alpha: None,
            beta: None,
        };
        if let (Some(i), Some(m)) = (image_feats, meteo_feats) {
            if self.variant().fuses_features() {
                out.prediction = self.fused_predictor(g, i, m)?;
            }
        }
        if let (Some(head), Some(m)) = (&self.meteo_head, meteo_feats) {
            out.meteo = Some(self.unimodal_head(g, head, m)?);
        }
        if let (Some(head), Some(i)) = (&self.image_head, image_feats) {
            out.image = Some(self.unimodal_head(g, head, i)?);
        }
        match self.variant() {
            Variant::MeteoOnly => out.prediction = out.meteo.expect("meteo head"),
            Variant::ImageOnly => out.prediction = out.image.expect("image head"),
            Variant::LearnableParam => {
                let pm = out.meteo.expect("meteo head");
                let pi = out.image.expect("image head");
                let a = g.param(&self.store, self.alpha.expect("alpha"));
                let b = match self.beta {
                    Some(id) => g.param(&self.store, id),
                    None => g.one_minus(a),
                };
                let wm = g.scale_by(pm, a)?;
                let wi = g.scale_by(pi, b)?;
                out.prediction = g.add(wm, wi)?;
                out.alpha = Some(a);
                out.beta = Some(b);
            }
            Variant::Concat | Variant::Hybrid => {}
        }
        Ok(out)
    }

    fn eval_chunks(&self, batch: &Batch, mut take: impl FnMut(&Graph, &Outputs)) -> Result<()> {
        let n = batch.len();
        let mut start = 0;
        while start < n || (n == 0 && start == 0) {
            let end = (start + EVAL_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::eval();
            let out = self.forward(&mut g, &batch.patches.gather_rows(&idx), &batch.features.gather_rows(&idx))?;
            take(&g, &out);
            if n == 0 {
                break;
            }
            start = end;
        }
        Ok(())
    }

    /// Eval-mode deployed predictions.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut preds = Vec::with_capacity(batch.len());
        self.eval_chunks(batch, |g, out| preds.extend_from_slice(g.value(out.prediction).data()))?;
        Ok(preds)
    }

    /// Eval-mode (cO, mO, iO) of a hybrid model.
    pub fn hybrid_outputs(&self, batch: &Batch) -> Result<HybridOutputs> {
        if self.variant() != Variant::Hybrid {
            return Err(Error::Contract(format!("{} model has no hybrid outputs", self.variant())));
        }
        let mut h = HybridOutputs {
            combined: Vec::new(),
            meteo: Vec::new(),
            image: Vec::new(),
        };
        self.eval_chunks(batch, |g, out| {
            h.combined.extend_from_slice(g.value(out.prediction).data());
            h.meteo.extend_from_slice(g.value(out.meteo.expect("mO")).data());
            h.image.extend_from_slice(g.value(out.image.expect("iO")).data());
        })?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::{FeatureVector, Patch, Sample};
    use crate::data::meteo::{parse_timestamp, StationId};

    fn batch(b: usize, size: usize, k: usize, pixel: f64) -> Batch {
        let samples: Vec<Sample> = (0..b)
            .map(|i| Sample {
                patch: Patch::filled(size, size, pixel),
                features: FeatureVector::raw((0..k).map(|j| ((i * k + j) as f64 * 0.37).sin()).collect()),
                target_vwc: 0.3,
                station_id: StationId::Station1,
                timestamp: parse_timestamp("2021-01-01").unwrap(),
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        Batch::from_samples(&refs).unwrap()
    }

    #[test]
    fn prediction_shapes_for_every_variant() {
        for v in Variant::ALL {
            let m = FusionModel::new(ModelConfig::small(v), 1).unwrap();
            assert_eq!(m.predict(&batch(5, 8, 4, 0.5)).unwrap().len(), 5, "{v}");
        }
    }

    #[test]
    fn concat_width_and_small_dims() {
        let c = ModelConfig::small(Variant::Concat);
        assert_eq!(c.fused_dim(), 12);
        let mut add = c.clone();
        add.fusion.combiner = Combiner::Add;
        assert_eq!(add.fused_dim(), 4);
    }

    #[test]
    fn resolution_mismatch_is_dimension_error() {
        let m = FusionModel::new(ModelConfig::small(Variant::ImageOnly), 1).unwrap();
        assert!(matches!(m.predict(&batch(2, 9, 4, 0.5)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn meteo_width_mismatch_is_dimension_error() {
        let m = FusionModel::new(ModelConfig::small(Variant::MeteoOnly), 1).unwrap();
        assert!(matches!(m.predict(&batch(2, 8, 5, 0.5)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eval_is_deterministic() {
        let m = FusionModel::new(ModelConfig::small(Variant::Hybrid), 3).unwrap();
        let b = batch(4, 8, 4, 0.2);
        assert_eq!(m.predict(&b).unwrap(), m.predict(&b).unwrap());
    }

    #[test]
    fn single_complementary_has_one_weight() {
        let mut c = ModelConfig::small(Variant::LearnableParam);
        c.fusion.learnable_mode = LearnableMode::SingleComplementary;
        let m = FusionModel::new(c, 0).unwrap();
        assert!(m.beta_id().is_none());
        assert_eq!(m.modality_weights(), Some((1.0, 0.0)));
    }

    #[test]
    fn empty_batch_yields_empty_predictions() {
        for v in Variant::ALL {
            let m = FusionModel::new(ModelConfig::small(v), 0).unwrap();
            let empty = Batch {
                patches: Tensor::zeros(&[0, 3, 8, 8]),
                features: Tensor::zeros(&[0, 4]),
                targets: Tensor::zeros(&[0]),
            };
            assert!(m.predict(&empty).unwrap().is_empty(), "{v}");
        }
    }
}
