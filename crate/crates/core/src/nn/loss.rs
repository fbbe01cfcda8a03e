use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl LossKind {
    pub fn eval(self, pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            LossKind::Mae => mae_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::InvalidInput(format!("unknown loss {other:?}"))),
        }
    }
}

fn check(pred: &Matrix, target: &Matrix, op: &'static str) -> Result<()> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    Ok(())
}

/// Mean absolute error and its subgradient `sign(p - t) / n`, `sign(0) = 0`.
pub fn mae_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check(pred, target, "mae_loss")?;
    let n = pred.len() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}

/// Mean squared error and its gradient `2 (p - t) / n`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check(pred, target, "mse_loss")?;
    let n = pred.len() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::seeded_rng;
    use rand::Rng;

    #[test]
    fn equal_inputs_zero_loss() {
        let p = Matrix::filled(3, 2, 0.4);
        let (l, g) = mae_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn unit_offset() {
        let t = Matrix::zeros(3, 2);
        let p = Matrix::filled(3, 2, 1.0);
        let (l, g) = mae_loss(&p, &t).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.data().iter().all(|x| *x == 1.0 / 6.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(mae_loss(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
        assert!(mse_loss(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = seeded_rng(5, 0);
        let rand_m = |rng: &mut _| {
            let data = (0..6).map(|_| Rng::random_range(rng, -1.0..1.0)).collect();
            Matrix::from_vec(3, 2, data).unwrap()
        };
        let p = rand_m(&mut rng);
        let t = rand_m(&mut rng);
        for kind in [LossKind::Mae, LossKind::Mse] {
            let (_, g) = kind.eval(&p, &t).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.data_mut()[i] += h;
                let mut minus = p.clone();
                minus.data_mut()[i] -= h;
                let fd = (kind.eval(&plus, &t).unwrap().0 - kind.eval(&minus, &t).unwrap().0) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-6, "{kind} coord {i}: {fd} vs {}", g.data()[i]);
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("MAE".parse::<LossKind>().unwrap(), LossKind::Mae);
        assert!("huber".parse::<LossKind>().is_err());
    }
}
