//! Fully connected layer, with a vector form for classifier heads and a
//! matrix form for token sequences.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Arc<Array2<T>>, // (out, in)
    pub bias: Option<Arc<Array1<T>>>,
}

#[derive(Debug, Clone)]
pub struct LinearCtx1<T> {
    pub input: Arc<Array1<T>>,
}

#[derive(Debug, Clone)]
pub struct LinearCtx2<T> {
    pub input: Arc<Array2<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Array2<T>, bias: Option<Array1<T>>) -> Self {
        Linear {
            weight: Arc::new(weight),
            bias: bias.map(Arc::new),
        }
    }

    pub fn forward1(&self, x: &Array1<T>) -> (Array1<T>, LinearCtx1<T>) {
        let mut y = self.weight.dot(x);
        if let Some(b) = &self.bias {
            y += b.as_ref();
        }
        (
            y,
            LinearCtx1 {
                input: Arc::new(x.clone()),
            },
        )
    }

    pub fn backward1(&self, gy: &Array1<T>) -> Array1<T> {
        self.weight.t().dot(gy)
    }

    pub fn grad_params1(&self, ctx: &LinearCtx1<T>, gy: &Array1<T>) -> (Array2<T>, Array1<T>) {
        let x = ctx.input.view().insert_axis(ndarray::Axis(0)); // (1, in)
        let g = gy.view().insert_axis(ndarray::Axis(1)); // (out, 1)
        (g.dot(&x), gy.clone())
    }

    /// Rows are positions: Y = X W^T + b, X is (rows, in).
    pub fn forward2(&self, x: &Array2<T>) -> (Array2<T>, LinearCtx2<T>) {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            for mut row in y.outer_iter_mut() {
                row += b.as_ref();
            }
        }
        (
            y,
            LinearCtx2 {
                input: Arc::new(x.clone()),
            },
        )
    }

    pub fn backward2(&self, gy: &Array2<T>) -> Array2<T> {
        gy.dot(self.weight.as_ref())
    }
}
