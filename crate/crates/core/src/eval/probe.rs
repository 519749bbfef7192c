use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 0.1,
            epochs: 500,
        }
    }
}

/// Logistic-regression head on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearProbe {
    pub fn logit(&self, row: &[f64]) -> f64 {
        let mut z = self.bias;
        for j in 0..self.weights.len() {
            z += self.weights[j] * (row[j] - self.mean[j]) / self.std[j];
        }
        z
    }

    pub fn scores(&self, x: &Tensor, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.logit(x.row(r))).collect()
    }

    /// Mean logistic loss on the given rows.
    pub fn loss(&self, x: &Tensor, rows: &[usize], labels: &[bool]) -> f64 {
        rows.iter()
            .map(|&r| {
                let z = self.logit(x.row(r));
                let m = if labels[r] { z } else { -z };
                // -log sigmoid(m)
                if m >= 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() }
            })
            .sum::<f64>()
            / rows.len() as f64
    }
}

/// Full-batch gradient descent on the mean logistic loss over `rows` of `x`,
/// starting from zero weights. Features are standardized with the statistics
/// of the training rows.
pub fn fit_linear_probe(x: &Tensor, labels: &[bool], rows: &[usize], cfg: &ProbeConfig) -> Result<LinearProbe> {
    let pos = rows.iter().filter(|&&r| labels[r]).count();
    if pos == 0 || pos == rows.len() {
        return Err(Error::InvalidInput(
            "linear probe needs at least one example of each class".into(),
        ));
    }
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; d];
    for &r in rows {
        for j in 0..d {
            let c = x.row(r)[j] - mean[j];
            std[j] += c * c;
        }
    }
    let std: Vec<f64> = std
        .into_iter()
        .map(|s| {
            let s = (s / n).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| (0..d).map(|j| (x.row(r)[j] - mean[j]) / std[j]).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|&r| f64::from(u8::from(labels[r]))).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (zi, yi) in z.iter().zip(&y) {
            let p = sigmoid(zi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
            let e = p - yi;
            gb += e;
            for (g, a) in gw.iter_mut().zip(zi) {
                *g += e * a;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= cfg.learning_rate * g / n;
        }
        b -= cfg.learning_rate * gb / n;
    }
    if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
        return Err(Error::NonFinite { op: "fit_linear_probe" });
    }
    Ok(LinearProbe {
        mean,
        std,
        weights: w,
        bias: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc_auc;
    use rand::{Rng, SeedableRng};
    use rand::seq::SliceRandom;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_pair() {
        let x = Tensor::matrix(&[vec![-1.0], vec![1.0]]).unwrap();
        let labels = [false, true];
        let cfg = ProbeConfig { learning_rate: 0.5, epochs: 5000 };
        let p = fit_linear_probe(&x, &labels, &[0, 1], &cfg).unwrap();
        assert!(p.loss(&x, &[0, 1], &labels) < 1e-3);
        assert_eq!(roc_auc(&p.scores(&x, &[0, 1]), &labels).unwrap(), 1.0);
        // more epochs keep pushing the loss down
        let longer = fit_linear_probe(&x, &labels, &[0, 1], &ProbeConfig { epochs: 20000, ..cfg }).unwrap();
        assert!(longer.loss(&x, &[0, 1], &labels) < p.loss(&x, &[0, 1], &labels));
    }

    #[test]
    fn single_class_is_an_error() {
        let x = Tensor::matrix(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit_linear_probe(&x, &[true, true], &[0, 1], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn duplicated_rows_give_same_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.6).collect();
        let x = Tensor::matrix(&rows).unwrap();
        let idx: Vec<usize> = (0..40).collect();
        let twice: Vec<usize> = idx.iter().flat_map(|&i| [i, i]).collect();
        let a = fit_linear_probe(&x, &labels, &idx, &ProbeConfig::default()).unwrap();
        let b = fit_linear_probe(&x, &labels, &twice, &ProbeConfig::default()).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights).chain([(&a.bias, &b.bias)]) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let mut aucs = Vec::new();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
            let mut labels: Vec<bool> = (0..400).map(|i| i % 2 == 0).collect();
            labels.shuffle(&mut rng);
            let x = Tensor::matrix(&rows).unwrap();
            let train: Vec<usize> = (0..300).collect();
            let test: Vec<usize> = (300..400).collect();
            let p = fit_linear_probe(&x, &labels, &train, &ProbeConfig::default()).unwrap();
            let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
            aucs.push(roc_auc(&p.scores(&x, &test), &test_labels).unwrap());
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((0.4..=0.6).contains(&mean), "{aucs:?}");
    }
}
