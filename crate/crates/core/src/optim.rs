//! First-order optimizers over dense parameter matrices.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Optimizer state for one parameter matrix.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Option<DenseMatrix<T>>,
    v: Option<DenseMatrix<T>>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: T) -> Self {
        Self { kind, lr, beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8), m: None, v: None, t: 0 }
    }

    pub fn sgd(lr: T) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: T) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn step(&mut self, param: &mut DenseMatrix<T>, grad: &DenseMatrix<T>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape("Optimizer::step", format!("{:?} vs {:?}", param.shape(), grad.shape())));
        }
        match self.kind {
            OptimizerKind::Sgd => param.axpy(-self.lr, grad),
            OptimizerKind::Adam => {
                let (r, c) = grad.shape();
                let m = self.m.get_or_insert_with(|| DenseMatrix::zeros(r, c));
                let v = self.v.get_or_insert_with(|| DenseMatrix::zeros(r, c));
                self.t += 1;
                let bc1 = T::one() - self.beta1.powi(self.t);
                let bc2 = T::one() - self.beta2.powi(self.t);
                let (b1, b2) = (self.beta1, self.beta2);
                for (((p, &g), mi), vi) in param
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(m.as_mut_slice())
                    .zip(v.as_mut_slice())
                {
                    *mi = b1 * *mi + (T::one() - b1) * g;
                    *vi = b2 * *vi + (T::one() - b2) * g * g;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
                Ok(())
            }
        }
    }
}
