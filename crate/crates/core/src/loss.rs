//! The three-term distillation objective and its gradient with respect to
//! the student output.
//!
//! All three terms are means over elements, so the weight triple keeps its
//! meaning when the training crop size changes.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Weights of the objective. The derived `alpha` is the share of the MSE
/// mass assigned to the teacher term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_gt: f64,
    pub lambda_distill: f64,
    pub lambda_l1: f64,
}

impl LossWeights {
    /// The distillation configuration: 100 / 900 / 50, alpha = 0.9.
    pub fn distill_default() -> Self {
        LossWeights {
            lambda_gt: 100.0,
            lambda_distill: 900.0,
            lambda_l1: 50.0,
        }
    }

    /// Supervised-only configuration (no teacher term).
    pub fn supervised_default() -> Self {
        LossWeights {
            lambda_gt: 100.0,
            lambda_distill: 0.0,
            lambda_l1: 50.0,
        }
    }

    /// alpha = lambda_distill / (lambda_distill + lambda_gt).
    pub fn alpha(&self) -> f64 {
        self.lambda_distill / (self.lambda_distill + self.lambda_gt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_gt < 0.0 || self.lambda_distill < 0.0 || self.lambda_l1 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Scalar values of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean squared error against the ground truth.
    pub l_gt: f64,
    /// Mean squared error against the frozen teacher output.
    pub l_distill: f64,
    /// Mean absolute error against the ground truth.
    pub l_l1: f64,
    pub l_total: f64,
}

fn check_dims(student: &Tensor4, teacher: &Tensor4, gt: &Tensor4) -> Result<()> {
    if student.dims() != gt.dims() || student.dims() != teacher.dims() {
        return Err(Error::DimMismatch(format!(
            "loss inputs: student {:?}, teacher {:?}, gt {:?}",
            student.dims(),
            teacher.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Evaluate all three terms and their weighted total.
pub fn loss_total(
    student: &Tensor4,
    teacher: &Tensor4,
    gt: &Tensor4,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    check_dims(student, teacher, gt)?;
    let n = student.len() as f64;
    let mut sq_gt = 0.0f64;
    let mut sq_t = 0.0f64;
    let mut abs_gt = 0.0f64;
    for ((s, t), g) in student.data().iter().zip(teacher.data()).zip(gt.data()) {
        let dg = f64::from(*s) - f64::from(*g);
        let dt = f64::from(*s) - f64::from(*t);
        sq_gt += dg * dg;
        sq_t += dt * dt;
        abs_gt += dg.abs();
    }
    let l_gt = sq_gt / n;
    let l_distill = sq_t / n;
    let l_l1 = abs_gt / n;
    Ok(LossReport {
        l_gt,
        l_distill,
        l_l1,
        l_total: weights.lambda_gt * l_gt
            + weights.lambda_distill * l_distill
            + weights.lambda_l1 * l_l1,
    })
}

/// Gradient of the total loss with respect to the student output:
/// `2*lambda_gt*(s-gt)/N + 2*lambda_distill*(s-t)/N + lambda_l1*sign(s-gt)/N`
/// with sign(0) = 0.
pub fn loss_backward(
    student: &Tensor4,
    teacher: &Tensor4,
    gt: &Tensor4,
    weights: &LossWeights,
) -> Result<Tensor4> {
    weights.validate()?;
    check_dims(student, teacher, gt)?;
    let n = student.len() as f64;
    let mut grad = Tensor4::zeros(student.dims());
    let gd = grad.data_mut();
    for (i, ((s, t), g)) in student
        .data()
        .iter()
        .zip(teacher.data())
        .zip(gt.data())
        .enumerate()
    {
        let dg = f64::from(*s) - f64::from(*g);
        let dt = f64::from(*s) - f64::from(*t);
        let sign = if dg > 0.0 {
            1.0
        } else if dg < 0.0 {
            -1.0
        } else {
            0.0
        };
        gd[i] = ((2.0 * weights.lambda_gt * dg
            + 2.0 * weights.lambda_distill * dt
            + weights.lambda_l1 * sign)
            / n) as f32;
    }
    Ok(grad)
}
