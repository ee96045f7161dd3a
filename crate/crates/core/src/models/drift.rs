use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// A signal drift `x -> A(x)` with its Jacobian.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);
    fn jacobian_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>);

    /// `Some(J)` when the Jacobian does not depend on the state.
    fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        None
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, &mut out);
        out
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        self.jacobian_into(x, &mut out);
        out
    }
}

impl fmt::Debug for dyn Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Drift(dim = {})", self.dim())
    }
}

/// `A(x) = M x + c`.
#[derive(Debug, Clone)]
pub struct AffineDrift {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineDrift {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        assert!(matrix.is_square() && matrix.nrows() == offset.len(), "affine drift shape");
        Self { matrix, offset }
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let n = matrix.nrows();
        Self::new(matrix, DVector::zeros(n))
    }
}

impl Drift for AffineDrift {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.offset);
        out.gemv(1.0, &self.matrix, x, 1.0);
    }

    fn jacobian_into(&self, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.matrix);
    }

    fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// User-supplied drift. Its stability constants must be supplied by the caller.
#[derive(Clone)]
pub struct ClosureDrift {
    dim: usize,
    drift: Arc<VecFn>,
    jacobian: Arc<MatFn>,
}

impl ClosureDrift {
    pub fn new(
        dim: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, drift: Arc::new(drift), jacobian: Arc::new(jacobian) }
    }
}

impl Drift for ClosureDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&(self.drift)(x));
    }

    fn jacobian_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&(self.jacobian)(x));
    }
}
