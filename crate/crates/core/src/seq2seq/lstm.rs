use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    init_orthogonal, init_xavier, matvec_acc, matvec_t_acc, outer_acc, sigmoid, Gradients,
    Matrix, ParamId, ParamStore,
};

/// LSTM cell whose four gate blocks are stacked row-wise in the order
/// input, forget, output, cell candidate. `u` is `4q x m`, `w` is `4q x q`
/// and `b` is `4q x 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub u: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

/// Values kept from one forward step for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, o, c~]`, each of length q.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    /// Registers the cell's parameters: Xavier input weights, orthogonal
    /// recurrent weights per gate, forget-gate bias 1 and other biases 0.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let q = hidden;
        let mut u = Matrix::zeros(4 * q, input);
        let mut w = Matrix::zeros(4 * q, q);
        for g in 0..4 {
            let ug = init_xavier(q, input, rng);
            let wg = init_orthogonal(q, q, rng);
            for r in 0..q {
                u.row_mut(g * q + r).copy_from_slice(ug.row(r));
                w.row_mut(g * q + r).copy_from_slice(wg.row(r));
            }
        }
        let mut b = Matrix::zeros(4 * q, 1);
        for r in q..2 * q {
            b.set(r, 0, 1.0);
        }
        Ok(LstmCell {
            input,
            hidden,
            u: store.add(format!("{prefix}.u"), u)?,
            w: store.add(format!("{prefix}.w"), w)?,
            b: store.add(format!("{prefix}.b"), b)?,
        })
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<LstmStep> {
        let q = self.hidden;
        if x.len() != self.input || h_prev.len() != q || c_prev.len() != q {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell_forward",
                lhs: (self.input, q),
                rhs: (x.len(), h_prev.len()),
            });
        }
        let mut pre = store.value(self.b).data().to_vec();
        matvec_acc(store.value(self.u), x, &mut pre);
        matvec_acc(store.value(self.w), h_prev, &mut pre);
        let mut gates = pre;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if k < 3 * q { sigmoid(*v) } else { v.tanh() };
        }
        let mut c = vec![0.0; q];
        let mut tanh_c = vec![0.0; q];
        let mut h = vec![0.0; q];
        for r in 0..q {
            let (i, f, o, g) = (gates[r], gates[q + r], gates[2 * q + r], gates[3 * q + r]);
            c[r] = f * c_prev[r] + i * g;
            tanh_c[r] = c[r].tanh();
            h[r] = o * tanh_c[r];
        }
        Ok(LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        })
    }

    /// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs),
    /// accumulating parameter gradients. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        grads: &mut Gradients,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let q = self.hidden;
        let g = &step.gates;
        let mut dpre = vec![0.0; 4 * q];
        let mut dc_prev = vec![0.0; q];
        for r in 0..q {
            let (i, f, o, cand) = (g[r], g[q + r], g[2 * q + r], g[3 * q + r]);
            let tc = step.tanh_c[r];
            let dct = dc[r] + dh[r] * o * (1.0 - tc * tc);
            dpre[r] = dct * cand * i * (1.0 - i);
            dpre[q + r] = dct * step.c_prev[r] * f * (1.0 - f);
            dpre[2 * q + r] = dh[r] * tc * o * (1.0 - o);
            dpre[3 * q + r] = dct * i * (1.0 - cand * cand);
            dc_prev[r] = dct * f;
        }
        outer_acc(grads.get_mut(self.u), &dpre, &step.x);
        outer_acc(grads.get_mut(self.w), &dpre, &step.h_prev);
        grads
            .get_mut(self.b)
            .data_mut()
            .iter_mut()
            .zip(&dpre)
            .for_each(|(b, d)| *b += d);
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(store.value(self.u), &dpre, &mut dx);
        let mut dh_prev = vec![0.0; q];
        matvec_t_acc(store.value(self.w), &dpre, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}
