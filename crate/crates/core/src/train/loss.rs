use crate::error::{check_finite, DsmError, Result};

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax - target) / B`. `label_smoothing` spreads that much
/// target mass uniformly over all classes.
pub fn cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
    label_smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || logits.len() != labels.len() * classes || labels.is_empty() {
        return Err(DsmError::Shape(format!(
            "{} logits for {} labels and {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(DsmError::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if !(0.0..1.0).contains(&label_smoothing) {
        return Err(DsmError::InvalidArgument("label smoothing must be in [0, 1)".into()));
    }
    check_finite(logits, "logits")?;
    let batch = labels.len() as f64;
    let off = label_smoothing / classes as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &label) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (k, (&z, gk)) in row.iter().zip(g.iter_mut()).enumerate() {
            let target = off + if k == label { 1.0 - label_smoothing } else { 0.0 };
            let log_p = z - lse;
            if target > 0.0 {
                loss -= target * log_p;
            }
            *gk = (log_p.exp() - target) / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let correct = logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, _) = cross_entropy(&[0.0; 20], 10, &[3, 7], 0.0).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut logits = vec![0.0; 10];
        logits[4] = 50.0;
        let (loss, _) = cross_entropy(&logits, 10, &[4], 0.0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(matches!(
            cross_entropy(&[0.0; 4], 2, &[0, 2], 0.0),
            Err(DsmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = [0.3, -1.0, 2.0, 0.5, 0.5, -3.0];
        let (_, g) = cross_entropy(&logits, 3, &[2, 0], 0.1).unwrap();
        for row in g.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits = [0.1, 0.9, 0.8, 0.2, 0.5, 0.4];
        assert!((accuracy(&logits, 2, &[1, 0, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
