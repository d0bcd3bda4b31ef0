use super::graph::{check_finite, Var};
use super::{Tensor, TensorError};

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// `logits` is B×2 and every label must be 0 or 1.
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Result<Var, TensorError> {
    check_finite("cross_entropy", &[logits])?;
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape.to_vec(),
            rhs: vec![labels.len(), 2],
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
        return Err(TensorError::InvalidLabel { index, label });
    }
    let batch = labels.len();
    let x = logits.data();
    let mut probs = vec![0.0; batch * 2];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &x[b * 2..b * 2 + 2];
        let max = row[0].max(row[1]);
        let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        loss += lse - row[label];
        probs[b * 2] = (row[0] - lse).exp();
        probs[b * 2 + 1] = (row[1] - lse).exp();
    }
    loss /= batch as f64;
    let labels = labels.to_vec();
    Ok(Var::from_op(
        Tensor::scalar(loss),
        &[logits],
        Box::new(move |_, g| {
            let scale = g[0] / batch as f64;
            let mut gx = probs.clone();
            for (b, &label) in labels.iter().enumerate() {
                gx[b * 2 + label] -= 1.0;
            }
            gx.iter_mut().for_each(|v| *v *= scale);
            vec![Some(gx)]
        }),
    ))
}
