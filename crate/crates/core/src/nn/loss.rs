use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Squared error between `pred` and `target`, restricted to `mask` when given.
/// Returns the loss and `dL/dpred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor, mask: Option<&[bool]>, reduction: Reduction) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "mse shapes");
    if let Some(m) = mask {
        assert_eq!(m.len(), pred.len(), "mask length");
    }
    let active = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..pred.len()).filter(|&i| active(i)).count();
    let mut grad = pred.zeros_like();
    if count == 0 {
        return (0.0, grad);
    }
    let norm = match reduction {
        Reduction::Mean => count as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    for i in 0..pred.len() {
        if !active(i) {
            continue;
        }
        let d = pred.data()[i] - target.data()[i];
        total += d * d;
        grad.data_mut()[i] = 2.0 * d / norm;
    }
    (total / norm, grad)
}

pub const TRIPLET_EPS: f64 = 1e-12;

/// Ratio triplet loss `a / (a + m b + eps)` with `a = |r - p|`, `b = |r - n|`.
#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub value: f64,
    pub grad_anchor: Tensor,
    pub grad_positive: Tensor,
    pub grad_negative: Tensor,
}

pub fn triplet_ratio_loss(anchor: &Tensor, positive: &Tensor, negative: &Tensor, margin: f64) -> TripletLoss {
    let diff = |x: &Tensor, y: &Tensor| -> (Vec<f64>, f64) {
        let d: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        (d, n)
    };
    let (dp, a) = diff(anchor, positive);
    let (dn, b) = diff(anchor, negative);
    let den = a + margin * b + TRIPLET_EPS;
    let value = a / den;
    let dl_da = (margin * b + TRIPLET_EPS) / (den * den);
    let dl_db = -a * margin / (den * den);
    // d|u|/du = u/|u|, zero at the origin.
    let unit = |d: &[f64], n: f64, s: f64| -> Vec<f64> {
        if n > 0.0 {
            d.iter().map(|v| s * v / n).collect()
        } else {
            vec![0.0; d.len()]
        }
    };
    let gp = unit(&dp, a, dl_da);
    let gn = unit(&dn, b, dl_db);
    let grad_anchor = Tensor::row_vector(gp.iter().zip(&gn).map(|(x, y)| x + y).collect());
    let grad_positive = Tensor::row_vector(gp.iter().map(|v| -v).collect());
    let grad_negative = Tensor::row_vector(gn.iter().map(|v| -v).collect());
    TripletLoss {
        value,
        grad_anchor,
        grad_positive,
        grad_negative,
    }
}
