use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Root mean square error of one prediction.
pub fn rmse<T: Scalar>(pred: &[T], label: &[T]) -> Result<T> {
    if pred.is_empty() {
        return Err(Error::Empty);
    }
    if pred.len() != label.len() {
        return Err(Error::ShapeMismatch(format!("prediction {} vs label {}", pred.len(), label.len())));
    }
    let n = T::from_usize(pred.len()).unwrap();
    let sq: T = pred.iter().zip(label).map(|(&p, &l)| (p - l) * (p - l)).sum();
    Ok((sq / n).sqrt())
}

/// Mean over samples of the per-sample RMSE, and its gradient with respect
/// to `pred`. Both slices hold `rows` samples back to back.
pub fn rmse_loss<T: Scalar>(pred: &[T], label: &[T], rows: usize) -> Result<(T, Vec<T>)> {
    if rows == 0 || pred.is_empty() {
        return Err(Error::Empty);
    }
    if pred.len() != label.len() || pred.len() % rows != 0 {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} vs label {} over {rows} samples",
            pred.len(),
            label.len()
        )));
    }
    let d = pred.len() / rows;
    let (bf, df) = (T::from_usize(rows).unwrap(), T::from_usize(d).unwrap());
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for ((p, l), g) in pred.chunks(d).zip(label.chunks(d)).zip(grad.chunks_mut(d)) {
        let r = rmse(p, l)?;
        loss += r;
        // The gradient is undefined at r = 0; zero is a subgradient.
        if r > T::zero() {
            let scale = T::one() / (bf * df * r);
            for ((gi, &pi), &li) in g.iter_mut().zip(p).zip(l) {
                *gi = (pi - li) * scale;
            }
        }
    }
    Ok((loss / bf, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are laid out like the parameter
/// groups passed to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, group_sizes: &[usize]) -> Result<Self> {
        let ok = cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0 && cfg.eps > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("adam constants {cfg:?}")));
        }
        Ok(Self {
            cfg,
            t: 0,
            m: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one update. Nothing changes if any gradient entry is not
    /// finite.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter groups, {} gradients, optimizer has {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::ShapeMismatch(format!("parameter group {i}")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let eps = T::lit(self.cfg.eps);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
