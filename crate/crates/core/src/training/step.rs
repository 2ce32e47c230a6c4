use rayon::prelude::*;

use super::{Stage, TrainConfig, TripletSample};
use crate::error::{Error, Result};
use crate::model::{GraphiteModel, OutputGrads, Parameters};
use crate::nn::{mse_loss, triplet_ratio_loss, Adam, Reduction, Tensor};

/// Batch-mean loss components; `total` is the weighted sum that is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub descriptor: f64,
    pub values: f64,
    pub score: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.descriptor += o.descriptor;
        self.values += o.values;
        self.score += o.score;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.descriptor *= s;
        self.values *= s;
        self.score *= s;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub losses: LossParts,
    /// Checksum of the parameters every forward pass of the step used.
    pub checksum: u64,
}

struct SampleGrad {
    losses: LossParts,
    grads: Parameters,
    checksum: u64,
}

fn row(v: &[f64]) -> Tensor {
    Tensor::row_vector(v.to_vec())
}

fn init_sample(model: &GraphiteModel, s: &TripletSample, cfg: &TrainConfig) -> Result<SampleGrad> {
    let labels = s
        .labels
        .as_ref()
        .ok_or_else(|| Error::Dataset("stage-1 sample has no labels".into()))?;
    let checksum = model.params.checksum();
    let (oa, ta) = model.forward_trace(&s.reference)?;
    let (op, tp) = model.forward_trace(&s.positive)?;
    let (on, tn) = model.forward_trace(&s.negative)?;

    let trip = triplet_ratio_loss(&row(&oa.descriptor), &row(&op.descriptor), &row(&on.descriptor), cfg.margin);
    let (lva, gva) = mse_loss(&row(&oa.values), &row(&labels.reference.values), None, Reduction::Mean);
    let (lvp, gvp) = mse_loss(&row(&op.values), &row(&labels.positive.values), None, Reduction::Mean);
    let values = 0.5 * (lva + lvp);
    let (ea, ep) = (oa.score - labels.score, op.score - labels.score);
    let score = 0.5 * (ea * ea + ep * ep);
    let losses = LossParts {
        total: cfg.lambda_descriptor * trip.value + cfg.lambda_values * values + cfg.lambda_score * score,
        descriptor: trip.value,
        values,
        score,
    };

    let scaled = |t: &Tensor, s: f64| t.data().iter().map(|v| v * s).collect::<Vec<f64>>();
    let (va, vp) = (scaled(&gva, 0.5 * cfg.lambda_values), scaled(&gvp, 0.5 * cfg.lambda_values));
    let da = scaled(&trip.grad_anchor, cfg.lambda_descriptor);
    let dp = scaled(&trip.grad_positive, cfg.lambda_descriptor);
    let dn = scaled(&trip.grad_negative, cfg.lambda_descriptor);
    let mut grads = model.backward(
        &ta,
        &OutputGrads {
            values: Some(&va),
            descriptor: Some(&da),
            score: Some(cfg.lambda_score * ea),
        },
    )?;
    grads.add_assign(&model.backward(
        &tp,
        &OutputGrads {
            values: Some(&vp),
            descriptor: Some(&dp),
            score: Some(cfg.lambda_score * ep),
        },
    )?);
    grads.add_assign(&model.backward(
        &tn,
        &OutputGrads {
            descriptor: Some(&dn),
            ..Default::default()
        },
    )?);
    Ok(SampleGrad {
        losses,
        grads,
        checksum,
    })
}

fn pose_sample(
    model: &GraphiteModel,
    teacher: Option<&GraphiteModel>,
    s: &TripletSample,
    cfg: &TrainConfig,
) -> Result<SampleGrad> {
    let warp = s
        .warp
        .as_ref()
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::Dataset("stage-2 sample has no correspondence".into()))?;
    let checksum = model.params.checksum();
    let (oa, ta) = model.forward_trace(&s.reference)?;
    let (op, tp) = model.forward_trace(&s.positive)?;
    let (on, tn) = model.forward_trace(&s.negative)?;

    let trip = triplet_ratio_loss(&row(&oa.descriptor), &row(&op.descriptor), &row(&on.descriptor), cfg.margin);
    let (values, score, va, vp, ea, ep) = match teacher {
        Some(t) => {
            // both views pulled toward the teacher's reference map, carried
            // into the positive view by the warp
            let tr = t.forward(&s.reference)?;
            let target_q = warp.apply(&tr.values);
            let n = oa.values.len() as f64;
            let m = target_q.len() as f64;
            let da: Vec<f64> = oa.values.iter().zip(&tr.values).map(|(y, t)| y - t).collect();
            let dq: Vec<f64> = warp
                .rows
                .iter()
                .zip(&target_q)
                .map(|(r, t)| op.values[r.target] - t)
                .collect();
            let values = 0.5 * (da.iter().map(|d| d * d).sum::<f64>() / n + dq.iter().map(|d| d * d).sum::<f64>() / m);
            let va: Vec<f64> = da.iter().map(|d| cfg.lambda_values * d / n).collect();
            let mut vp = vec![0.0; op.values.len()];
            for (r, d) in warp.rows.iter().zip(&dq) {
                vp[r.target] += cfg.lambda_values * d / m;
            }
            let (ea, ep) = (oa.score - tr.score, op.score - tr.score);
            (values, 0.5 * (ea * ea + ep * ep), va, vp, Some(cfg.lambda_score * ea), Some(cfg.lambda_score * ep))
        }
        None => {
            // reference values carried into the positive view, compared where
            // the two patches overlap
            let warped = warp.apply(&oa.values);
            let m = warped.len() as f64;
            let diffs: Vec<f64> = warp
                .rows
                .iter()
                .zip(&warped)
                .map(|(r, w)| op.values[r.target] - w)
                .collect();
            let values = diffs.iter().map(|d| d * d).sum::<f64>() / m;
            let k = 2.0 * cfg.lambda_values / m;
            let mut vp = vec![0.0; op.values.len()];
            for (r, d) in warp.rows.iter().zip(&diffs) {
                vp[r.target] += k * d;
            }
            let up: Vec<f64> = diffs.iter().map(|d| -k * d).collect();
            let va = warp.backward(&up, oa.values.len());
            (values, 0.0, va, vp, None, None)
        }
    };
    let losses = LossParts {
        total: cfg.lambda_descriptor * trip.value + cfg.lambda_values * values + cfg.lambda_score * score,
        descriptor: trip.value,
        values,
        score,
    };

    let scaled = |t: &Tensor| t.data().iter().map(|v| v * cfg.lambda_descriptor).collect::<Vec<f64>>();
    let (da, dp, dn) = (scaled(&trip.grad_anchor), scaled(&trip.grad_positive), scaled(&trip.grad_negative));
    let mut grads = model.backward(
        &ta,
        &OutputGrads {
            values: Some(&va),
            descriptor: Some(&da),
            score: ea,
        },
    )?;
    grads.add_assign(&model.backward(
        &tp,
        &OutputGrads {
            values: Some(&vp),
            descriptor: Some(&dp),
            score: ep,
        },
    )?);
    grads.add_assign(&model.backward(
        &tn,
        &OutputGrads {
            descriptor: Some(&dn),
            ..Default::default()
        },
    )?);
    Ok(SampleGrad {
        losses,
        grads,
        checksum,
    })
}

/// Batch-mean losses and parameter gradients. Samples are processed in
/// parallel and reduced in batch order, so the result does not depend on the
/// number of worker threads. `teacher` anchors stage-2 values and scores and is ignored
/// in stage 1.
pub fn batch_gradient(
    model: &GraphiteModel,
    teacher: Option<&GraphiteModel>,
    batch: &[&TripletSample],
    stage: Stage,
    cfg: &TrainConfig,
) -> Result<(LossParts, Parameters, u64)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let per_sample: Vec<Result<SampleGrad>> = batch
        .par_iter()
        .map(|s| match stage {
            Stage::Init => init_sample(model, s, cfg),
            Stage::Pose => pose_sample(model, teacher, s, cfg),
        })
        .collect();
    let mut losses = LossParts::default();
    let mut grads = model.params.zeros_like();
    let mut checksum = None;
    for r in per_sample {
        let r = r?;
        if *checksum.get_or_insert(r.checksum) != r.checksum {
            return Err(Error::Degenerate("parameters changed during a batch".into()));
        }
        losses.add(&r.losses);
        grads.add_assign(&r.grads);
    }
    let inv = 1.0 / batch.len() as f64;
    losses.scale(inv);
    grads.scale(inv);
    Ok((losses, grads, checksum.unwrap_or_default()))
}

fn apply_step(
    model: &mut GraphiteModel,
    teacher: Option<&GraphiteModel>,
    optimizer: &mut Adam,
    batch: &[&TripletSample],
    stage: Stage,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let (losses, grads, checksum) = batch_gradient(model, teacher, batch, stage, cfg)?;
    if !losses.total.is_finite() || !grads.is_finite() {
        return Err(Error::Degenerate("non-finite loss or gradient".into()));
    }
    optimizer.step(model.params.tensors_mut(), grads.tensors());
    Ok(StepReport { losses, checksum })
}

/// One optimizer step on weighted descriptor, value and score losses over
/// labeled corner triplets.
pub fn stage1_step(
    model: &mut GraphiteModel,
    optimizer: &mut Adam,
    batch: &[&TripletSample],
    cfg: &TrainConfig,
) -> Result<StepReport> {
    apply_step(model, None, optimizer, batch, Stage::Init, cfg)
}

/// One optimizer step on the descriptor triplet loss plus value consistency
/// between warped views. Without a teacher the positive view's values are
/// matched to the warped reference values. With one, both views are matched
/// to the teacher's reference values (warped for the positive view) and both
/// scores to the teacher's reference score.
pub fn stage2_step(
    model: &mut GraphiteModel,
    teacher: Option<&GraphiteModel>,
    optimizer: &mut Adam,
    batch: &[&TripletSample],
    cfg: &TrainConfig,
) -> Result<StepReport> {
    apply_step(model, teacher, optimizer, batch, Stage::Pose, cfg)
}
