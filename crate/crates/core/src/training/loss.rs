use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{HybridOutputs, Outputs};
use crate::nn::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

/// Weights of the combined, meteorological and image loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridCoefficients {
    pub delta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for HybridCoefficients {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

impl HybridCoefficients {
    pub const fn new(delta: f64, gamma: f64, lambda: f64) -> Self {
        Self {
            delta,
            gamma,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.delta, self.gamma, self.lambda];
        if all.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config(format!("coefficients {all:?} must be finite and non-negative")));
        }
        if all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("at least one loss coefficient must be positive".into()));
        }
        Ok(())
    }
}

pub fn base_loss(predictions: &[f64], targets: &[f64], kind: LossKind) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::dim("base_loss", &[predictions.len()], &[targets.len()]));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    let n = predictions.len() as f64;
    let pairs = predictions.iter().zip(targets);
    Ok(match kind {
        LossKind::Mse => pairs.map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
        LossKind::Mae => pairs.map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
    })
}

/// Weighted total with its three unweighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridLoss {
    pub total: f64,
    pub concat: f64,
    pub meteo: f64,
    pub image: f64,
}

impl HybridLoss {
    pub fn from_terms(concat: f64, meteo: f64, image: f64, c: HybridCoefficients) -> Result<Self> {
        c.validate()?;
        Ok(Self {
            total: c.delta * concat + c.gamma * meteo + c.lambda * image,
            concat,
            meteo,
            image,
        })
    }
}

pub fn hybrid_loss(
    outputs: &HybridOutputs,
    targets: &[f64],
    coeffs: HybridCoefficients,
    kind: LossKind,
) -> Result<HybridLoss> {
    HybridLoss::from_terms(
        base_loss(&outputs.combined, targets, kind)?,
        base_loss(&outputs.meteo, targets, kind)?,
        base_loss(&outputs.image, targets, kind)?,
        coeffs,
    )
}

pub fn loss_node(g: &mut Graph, pred: NodeId, targets: &Tensor, kind: LossKind) -> Result<NodeId> {
    match kind {
        LossKind::Mse => g.mse(pred, targets),
        LossKind::Mae => g.mae(pred, targets),
    }
}

/// Hybrid loss on the tape: `(total, [concat, meteo, image])`.
pub fn hybrid_loss_node(
    g: &mut Graph,
    outputs: &Outputs,
    targets: &Tensor,
    coeffs: HybridCoefficients,
    kind: LossKind,
) -> Result<(NodeId, [NodeId; 3])> {
    coeffs.validate()?;
    let missing = || Error::Contract("hybrid loss needs meteo and image predictor outputs".into());
    let lc = loss_node(g, outputs.prediction, targets, kind)?;
    let lm = loss_node(g, outputs.meteo.ok_or_else(missing)?, targets, kind)?;
    let li = loss_node(g, outputs.image.ok_or_else(missing)?, targets, kind)?;
    let total = g.weighted_sum(&[(lc, coeffs.delta), (lm, coeffs.gamma), (li, coeffs.lambda)])?;
    Ok((total, [lc, lm, li]))
}
