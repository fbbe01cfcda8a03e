//! Comparison models operating on the flattened input window: a
//! multi-output linear regressor fit in closed form and a two-hidden-layer
//! ReLU perceptron.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    finite_difference_gradient, init_he, init_xavier, matvec_acc, matvec_t_acc, outer_acc,
    seeded_rng, GradientCheck, Gradients, LossKind, Matrix, ParamId, ParamStore,
};
use crate::windowing::WindowSample;

pub const LINEAR_DAMPING: f64 = 1e-8;
pub const DEFAULT_MLP_HIDDEN: usize = 512;

/// Shape shared by the flattened-input models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatShape {
    pub ell: usize,
    pub h: usize,
    pub d: usize,
    pub patterns: usize,
    pub labeled: bool,
}

impl FlatShape {
    pub fn input_dim(&self) -> usize {
        self.ell * self.d + if self.labeled { self.patterns } else { 0 }
    }

    pub fn output_dim(&self) -> usize {
        self.h * self.d
    }

    /// Row-major window followed by the descriptor for labeled models.
    pub fn flatten(&self, x: &Matrix, psi: Option<&[f64]>) -> Result<Vec<f64>> {
        if x.shape() != (self.ell, self.d) {
            return Err(Error::ShapeMismatch {
                op: "flatten_input",
                lhs: (self.ell, self.d),
                rhs: x.shape(),
            });
        }
        let mut v = x.data().to_vec();
        if self.labeled {
            let p = psi.ok_or_else(|| {
                Error::ConfigMismatch("labeled model requires a journey descriptor".into())
            })?;
            if p.len() != self.patterns {
                return Err(Error::ShapeMismatch {
                    op: "flatten_psi",
                    lhs: (self.patterns, 1),
                    rhs: (p.len(), 1),
                });
            }
            v.extend_from_slice(p);
        }
        Ok(v)
    }

    fn reshape(&self, y: Vec<f64>) -> Matrix {
        Matrix::from_vec(self.h, self.d, y).expect("output size")
    }
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub shape: FlatShape,
    pub store: ParamStore,
    /// `(h d) x n_in`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearModel {
    pub fn zeros(shape: FlatShape) -> Result<Self> {
        let mut store = ParamStore::new();
        let weight = store.add(
            "lin.w",
            Matrix::zeros(shape.output_dim(), shape.input_dim()),
        )?;
        let bias = store.add("lin.b", Matrix::zeros(shape.output_dim(), 1))?;
        Ok(LinearModel {
            shape,
            store,
            weight,
            bias,
        })
    }

    /// Ordinary least squares for every output coordinate at once, from the
    /// damped normal equations `(AᵀA + λI) W = AᵀY` with `A = [X 1]`.
    pub fn fit(shape: FlatShape, samples: &[WindowSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("linear fit needs samples".into()));
        }
        let n = shape.input_dim() + 1;
        let m = shape.output_dim();
        let mut ata = vec![0.0; n * n];
        let mut aty = vec![0.0; n * m];
        for s in samples {
            let mut a = shape.flatten(&s.input, s.psi_for(shape.labeled)?)?;
            a.push(1.0);
            if s.target.shape() != (shape.h, shape.d) {
                return Err(Error::ShapeMismatch {
                    op: "linear_fit_target",
                    lhs: (shape.h, shape.d),
                    rhs: s.target.shape(),
                });
            }
            let y = s.target.data();
            for i in 0..n {
                let ai = a[i];
                for j in i..n {
                    ata[i * n + j] += ai * a[j];
                }
                for k in 0..m {
                    aty[i * m + k] += ai * y[k];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                ata[i * n + j] = ata[j * n + i];
            }
            ata[i * n + i] += LINEAR_DAMPING;
        }
        let l = cholesky(&ata, n)?;
        let mut model = LinearModel::zeros(shape)?;
        let mut rhs = vec![0.0; n];
        for k in 0..m {
            for i in 0..n {
                rhs[i] = aty[i * m + k];
            }
            let sol = cholesky_solve(&l, n, &rhs);
            let w = model.store.value_mut(model.weight);
            for i in 0..n - 1 {
                w.set(k, i, sol[i]);
            }
            model.store.value_mut(model.bias).set(k, 0, sol[n - 1]);
        }
        Ok(model)
    }

    pub fn predict(&self, x: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        let psi = if self.shape.labeled { psi } else { None };
        let v = self.shape.flatten(x, psi)?;
        let mut y = self.store.value(self.bias).data().to_vec();
        matvec_acc(self.store.value(self.weight), &v, &mut y);
        Ok(self.shape.reshape(y))
    }
}

/// Lower-triangular factor of a symmetric positive definite `n x n` matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::DegenerateData(format!(
                        "normal equations not positive definite at pivot {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub shape: FlatShape,
    pub hidden: usize,
    pub store: ParamStore,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrace {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub yhat: Matrix,
}

impl MlpModel {
    /// He-initialized hidden layers, Xavier head, zero biases.
    pub fn new(shape: FlatShape, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidInput("MLP hidden width must be positive".into()));
        }
        let mut store = ParamStore::new();
        let n = shape.input_dim();
        let w1 = store.add("mlp.w1", init_he(hidden, n, rng))?;
        let b1 = store.add("mlp.b1", Matrix::zeros(hidden, 1))?;
        let w2 = store.add("mlp.w2", init_he(hidden, hidden, rng))?;
        let b2 = store.add("mlp.b2", Matrix::zeros(hidden, 1))?;
        let w3 = store.add("mlp.w3", init_xavier(shape.output_dim(), hidden, rng))?;
        let b3 = store.add("mlp.b3", Matrix::zeros(shape.output_dim(), 1))?;
        Ok(MlpModel {
            shape,
            hidden,
            store,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }

    fn layer(store: &ParamStore, w: ParamId, b: ParamId, x: &[f64], relu: bool) -> Vec<f64> {
        let mut y = store.value(b).data().to_vec();
        matvec_acc(store.value(w), x, &mut y);
        if relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        y
    }

    pub fn forward_with(
        &self,
        store: &ParamStore,
        x: &Matrix,
        psi: Option<&[f64]>,
    ) -> Result<MlpTrace> {
        let x = self.shape.flatten(x, psi)?;
        let a1 = Self::layer(store, self.w1, self.b1, &x, true);
        let a2 = Self::layer(store, self.w2, self.b2, &a1, true);
        let y = Self::layer(store, self.w3, self.b3, &a2, false);
        Ok(MlpTrace {
            x,
            a1,
            a2,
            yhat: self.shape.reshape(y),
        })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &MlpTrace,
        dyhat: &Matrix,
        grads: &mut Gradients,
    ) {
        let dy = dyhat.data();
        let add = |g: &mut Matrix, d: &[f64]| {
            g.data_mut().iter_mut().zip(d).for_each(|(a, b)| *a += b);
        };
        outer_acc(grads.get_mut(self.w3), dy, &trace.a2);
        add(grads.get_mut(self.b3), dy);
        let mut d2 = vec![0.0; self.hidden];
        matvec_t_acc(store.value(self.w3), dy, &mut d2);
        d2.iter_mut()
            .zip(&trace.a2)
            .for_each(|(g, a)| if *a <= 0.0 { *g = 0.0 });
        outer_acc(grads.get_mut(self.w2), &d2, &trace.a1);
        add(grads.get_mut(self.b2), &d2);
        let mut d1 = vec![0.0; self.hidden];
        matvec_t_acc(store.value(self.w2), &d2, &mut d1);
        d1.iter_mut()
            .zip(&trace.a1)
            .for_each(|(g, a)| if *a <= 0.0 { *g = 0.0 });
        outer_acc(grads.get_mut(self.w1), &d1, &trace.x);
        add(grads.get_mut(self.b1), &d1);
    }

    pub fn predict(&self, x: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        let psi = if self.shape.labeled { psi } else { None };
        Ok(self.forward_with(&self.store, x, psi)?.yhat)
    }
}

/// Checks the MLP backward pass against central differences on one random
/// instance under MSE loss. Hidden biases are drawn from [-0.5, 0.5] so no
/// ReLU sits on its kink inside the stencil.
pub fn mlp_gradient_check(
    shape: FlatShape,
    hidden: usize,
    seed: u64,
    step: f64,
) -> Result<GradientCheck> {
    let m = MlpModel::new(shape, hidden, &mut seeded_rng(seed, 0))?;
    let mut rng = seeded_rng(seed, 1);
    let mut rm = |r: usize, k: usize| {
        Matrix::from_vec(r, k, (0..r * k).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let x = rm(shape.ell, shape.d)?;
    let target = rm(shape.h, shape.d)?;
    let mut psi = vec![0.0; shape.patterns];
    if let Some(first) = psi.first_mut() {
        *first = 1.0;
    }
    let psi = shape.labeled.then_some(&psi[..]);
    let mut store = m.store.clone();
    for id in [m.b1, m.b2] {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let tr = m.forward_with(&store, &x, psi)?;
    let (_, dy) = LossKind::Mse.eval(&tr.yhat, &target)?;
    let mut analytic = store.zero_gradients();
    m.backward(&store, &tr, &dy, &mut analytic);
    let f = |st: &ParamStore| {
        m.forward_with(st, &x, psi)
            .and_then(|t| LossKind::Mse.eval(&t.yhat, &target))
            .map_or(f64::NAN, |(v, _)| v)
    };
    let numeric = finite_difference_gradient(f, &store, step);
    Ok(GradientCheck {
        params: store,
        analytic,
        numeric,
    })
}
