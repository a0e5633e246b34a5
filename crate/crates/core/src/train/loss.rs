//! Mean-squared-error loss over image entries.

use crate::error::{Error, Result};
use crate::image::HoiImage;

/// Mean of squared entry differences over all 2HW entries, plus the gradient
/// at the prediction: `2 (pred - target) / (2HW)`.
pub fn mse_loss(pred: &HoiImage, target: &HoiImage) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.shape().h,
            pred.shape().w,
            target.shape().h,
            target.shape().w
        )));
    }
    let n = pred.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.data().len()];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let diff = p - t;
        loss += diff * diff;
        grad[i] = 2.0 * diff / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{compose, InteractionMatrix, ObjectDist};

    #[test]
    fn identical_images_have_zero_loss() {
        let img = compose(&ObjectDist::uniform(4), &InteractionMatrix::undecided(3)).unwrap();
        let (loss, grad) = mse_loss(&img, &img).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_vs_one_hot_matches_direct_summation() {
        let h = 4;
        let w = 3;
        let pred = compose(&ObjectDist::uniform(h), &InteractionMatrix::undecided(w)).unwrap();
        let target = compose(
            &ObjectDist::one_hot(h, 1).unwrap(),
            &InteractionMatrix::from_present(w, &[0]).unwrap(),
        )
        .unwrap();
        let (loss, _) = mse_loss(&pred, &target).unwrap();
        // Direct summation oracle over every entry.
        let mut direct = 0.0;
        for (p, t) in pred.data().iter().zip(target.data()) {
            direct += (p - t) * (p - t);
        }
        direct /= (2 * h * w) as f64;
        assert!((loss - direct).abs() < 1e-15);
        assert!(loss > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = compose(
            &ObjectDist::new(vec![0.4, 0.3, 0.3]).unwrap(),
            &InteractionMatrix::new(vec![[0.7, 0.3], [0.2, 0.8]]).unwrap(),
        )
        .unwrap();
        let target = compose(
            &ObjectDist::one_hot(3, 0).unwrap(),
            &InteractionMatrix::from_present(2, &[1]).unwrap(),
        )
        .unwrap();
        let (_, grad) = mse_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..pred.data().len() {
            let mut plus = pred.data().to_vec();
            plus[i] += h;
            let mut minus = pred.data().to_vec();
            minus[i] -= h;
            let lp = {
                let img = HoiImage::from_data_unchecked(pred.shape(), plus);
                mse_loss(&img, &target).unwrap().0
            };
            let lm = {
                let img = HoiImage::from_data_unchecked(pred.shape(), minus);
                mse_loss(&img, &target).unwrap().0
            };
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-8, "entry {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = compose(&ObjectDist::uniform(3), &InteractionMatrix::undecided(2)).unwrap();
        let b = compose(&ObjectDist::uniform(2), &InteractionMatrix::undecided(2)).unwrap();
        assert!(mse_loss(&a, &b).is_err());
    }
}
