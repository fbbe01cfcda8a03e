use rand::Rng;

use super::{Aggregation, LstmCell, LstmStep};
use crate::error::{Error, Result};
use crate::nn::{
    dot, finite_difference_gradient, init_xavier, matvec_acc, matvec_t_acc, outer_acc,
    seeded_rng, softmax, GradientCheck, Gradients, LossKind, Matrix, ParamId, ParamStore,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EncDecConfig {
    pub q: usize,
    pub ell: usize,
    pub h: usize,
    pub d: usize,
    pub patterns: usize,
    pub labeled: bool,
    pub aggregation: Aggregation,
    /// Feed ground-truth positions back into the decoder during training.
    pub teacher_forcing: bool,
}

impl Default for EncDecConfig {
    fn default() -> Self {
        EncDecConfig {
            q: 64,
            ell: 12,
            h: 12,
            d: 2,
            patterns: 0,
            labeled: false,
            aggregation: Aggregation::Attn,
            teacher_forcing: false,
        }
    }
}

impl EncDecConfig {
    /// Size of the context vector seen by the decoder.
    pub fn z_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Attn => self.q,
            _ => 2 * self.q,
        }
    }

    pub fn decoder_input(&self) -> usize {
        self.d + self.z_dim() + if self.labeled { self.patterns } else { 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.q == 0 || self.ell == 0 || self.h == 0 || self.d == 0 {
            return Err(Error::InvalidInput(format!(
                "q, ell, h and d must be positive (got q={}, ell={}, h={}, d={})",
                self.q, self.ell, self.h, self.d
            )));
        }
        if self.labeled && self.patterns == 0 {
            return Err(Error::ConfigMismatch(
                "labeled model needs at least one pattern".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams {
    /// `q x 2q`
    pub w_h: ParamId,
    /// `q x q`
    pub w_u: ParamId,
    /// `1 x q`
    pub v_a: ParamId,
    /// `q x 2q`
    pub w_z: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `h[t] = [h_fwd_t ; h_bwd_t]`, each of length 2q.
    pub h: Vec<Vec<f64>>,
    pub h_fwd_last: Vec<f64>,
    pub fwd_steps: Vec<LstmStep>,
    /// Indexed by time, not by processing order.
    pub bwd_steps: Vec<LstmStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStep {
    pub u_prev: Vec<f64>,
    /// `tanh(W_h h_t + W_u u_prev)` per time step.
    pub act: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// `h x d`
    pub yhat: Matrix,
    pub steps: Vec<LstmStep>,
    pub attention: Vec<AttentionStep>,
    pub u0: Vec<f64>,
}

impl DecoderOutput {
    /// Attention weights as an `h x ell` matrix; empty for static aggregations.
    pub fn alphas(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.attention.iter().map(|a| a.alpha.clone()).collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, 0))
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncDecTrace {
    pub enc: EncoderOutput,
    pub static_z: Option<(Vec<f64>, Vec<usize>)>,
    pub dec: DecoderOutput,
}

impl EncDecTrace {
    pub fn yhat(&self) -> &Matrix {
        &self.dec.yhat
    }
}

/// Per-unit maximum over time plus the time index that attains it
/// (lowest index on ties).
pub fn aggregate_max(h: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let n = h.first().map_or(0, |r| r.len());
    let mut z = vec![f64::NEG_INFINITY; n];
    let mut arg = vec![0; n];
    for (t, row) in h.iter().enumerate() {
        for k in 0..n {
            if row[k] > z[k] {
                z[k] = row[k];
                arg[k] = t;
            }
        }
    }
    (z, arg)
}

pub fn aggregate_avg(h: &[Vec<f64>]) -> Vec<f64> {
    let n = h.first().map_or(0, |r| r.len());
    let mut z = vec![0.0; n];
    for row in h {
        z.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let l = h.len() as f64;
    z.iter_mut().for_each(|v| *v /= l);
    z
}

#[derive(Debug, Clone)]
pub struct EncDecModel {
    pub config: EncDecConfig,
    pub store: ParamStore,
    pub enc_fwd: LstmCell,
    pub enc_bwd: LstmCell,
    pub dec: LstmCell,
    pub attn: Option<AttentionParams>,
    pub w_y: ParamId,
    pub b_y: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
}

impl EncDecModel {
    pub fn new(config: EncDecConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (q, d) = (config.q, config.d);
        let mut store = ParamStore::new();
        let enc_fwd = LstmCell::register(&mut store, "enc_fwd", d, q, rng)?;
        let enc_bwd = LstmCell::register(&mut store, "enc_bwd", d, q, rng)?;
        let dec = LstmCell::register(&mut store, "dec", config.decoder_input(), q, rng)?;
        let attn = match config.aggregation {
            Aggregation::Attn => Some(AttentionParams {
                w_h: store.add("attn.w_h", init_xavier(q, 2 * q, rng))?,
                w_u: store.add("attn.w_u", init_xavier(q, q, rng))?,
                v_a: store.add("attn.v_a", init_xavier(1, q, rng))?,
                w_z: store.add("attn.w_z", init_xavier(q, 2 * q, rng))?,
            }),
            _ => None,
        };
        let w_y = store.add("out.w_y", init_xavier(d, q, rng))?;
        let b_y = store.add("out.b_y", Matrix::zeros(d, 1))?;
        let w_k = store.add("init.w_k", init_xavier(q, q, rng))?;
        let b_k = store.add("init.b_k", Matrix::zeros(q, 1))?;
        Ok(EncDecModel {
            config,
            store,
            enc_fwd,
            enc_bwd,
            dec,
            attn,
            w_y,
            b_y,
            w_k,
            b_k,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() == 0 || x.cols() != self.config.d {
            return Err(Error::ShapeMismatch {
                op: "encdec_input",
                lhs: (self.config.ell, self.config.d),
                rhs: x.shape(),
            });
        }
        Ok(())
    }

    pub fn bilstm_encode(&self, store: &ParamStore, x: &Matrix) -> Result<EncoderOutput> {
        self.check_input(x)?;
        let (q, ell) = (self.config.q, x.rows());
        let mut fwd_steps = Vec::with_capacity(ell);
        let (mut h, mut c) = (vec![0.0; q], vec![0.0; q]);
        for t in 0..ell {
            let s = self.enc_fwd.forward(store, x.row(t), &h, &c)?;
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            fwd_steps.push(s);
        }
        let mut bwd_rev = Vec::with_capacity(ell);
        let (mut h, mut c) = (vec![0.0; q], vec![0.0; q]);
        for t in (0..ell).rev() {
            let s = self.enc_bwd.forward(store, x.row(t), &h, &c)?;
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            bwd_rev.push(s);
        }
        bwd_rev.reverse();
        let hs = (0..ell)
            .map(|t| {
                let mut r = fwd_steps[t].h.clone();
                r.extend_from_slice(&bwd_rev[t].h);
                r
            })
            .collect();
        Ok(EncoderOutput {
            h: hs,
            h_fwd_last: fwd_steps[ell - 1].h.clone(),
            fwd_steps,
            bwd_steps: bwd_rev,
        })
    }

    pub fn attention_context(
        &self,
        store: &ParamStore,
        h: &[Vec<f64>],
        proj: &[Vec<f64>],
        u_prev: &[f64],
    ) -> Result<AttentionStep> {
        let a = self
            .attn
            .ok_or_else(|| Error::ConfigMismatch("model has no attention layer".into()))?;
        let q = self.config.q;
        if u_prev.len() != q || h.iter().any(|r| r.len() != 2 * q) {
            return Err(Error::ShapeMismatch {
                op: "attention_context",
                lhs: (h.len(), 2 * q),
                rhs: (u_prev.len(), 1),
            });
        }
        let mut s = vec![0.0; q];
        matvec_acc(store.value(a.w_u), u_prev, &mut s);
        let v = store.value(a.v_a).data();
        let mut act = Vec::with_capacity(h.len());
        let mut e = Vec::with_capacity(h.len());
        for p in proj {
            let r: Vec<f64> = p.iter().zip(&s).map(|(x, y)| (x + y).tanh()).collect();
            e.push(dot(v, &r));
            act.push(r);
        }
        let alpha = softmax(&e);
        let mut context = vec![0.0; 2 * q];
        for (w, row) in alpha.iter().zip(h) {
            context.iter_mut().zip(row).for_each(|(c, x)| *c += w * x);
        }
        let mut z = vec![0.0; q];
        matvec_acc(store.value(a.w_z), &context, &mut z);
        Ok(AttentionStep {
            u_prev: u_prev.to_vec(),
            act,
            alpha,
            context,
            z,
        })
    }

    /// `W_h h_t` for every encoder state; reused by every decoder step.
    fn project_states(&self, store: &ParamStore, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let a = self.attn.expect("attention params");
        h.iter()
            .map(|row| {
                let mut p = vec![0.0; self.config.q];
                matvec_acc(store.value(a.w_h), row, &mut p);
                p
            })
            .collect()
    }

    pub fn decoder_init(&self, store: &ParamStore, h_fwd_last: &[f64]) -> Vec<f64> {
        let mut u = store.value(self.b_k).data().to_vec();
        matvec_acc(store.value(self.w_k), h_fwd_last, &mut u);
        u.iter_mut().for_each(|v| *v = v.tanh());
        u
    }

    /// Runs the decoder for `h` steps. `teacher` supplies ground-truth
    /// positions to feed back instead of the model's own predictions.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_sequence(
        &self,
        store: &ParamStore,
        enc: &EncoderOutput,
        static_z: Option<&[f64]>,
        x_last: &[f64],
        psi: Option<&[f64]>,
        h: usize,
        teacher: Option<&Matrix>,
    ) -> Result<DecoderOutput> {
        let cfg = &self.config;
        match (cfg.labeled, psi) {
            (true, None) => {
                return Err(Error::ConfigMismatch(
                    "labeled model requires a journey descriptor".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::ConfigMismatch(
                    "unlabeled model was given a journey descriptor".into(),
                ))
            }
            (true, Some(p)) if p.len() != cfg.patterns => {
                return Err(Error::ShapeMismatch {
                    op: "decode_sequence_psi",
                    lhs: (cfg.patterns, 1),
                    rhs: (p.len(), 1),
                })
            }
            _ => {}
        }
        if x_last.len() != cfg.d {
            return Err(Error::ShapeMismatch {
                op: "decode_sequence",
                lhs: (cfg.d, 1),
                rhs: (x_last.len(), 1),
            });
        }
        let proj = self.attn.map(|_| self.project_states(store, &enc.h));
        let u0 = self.decoder_init(store, &enc.h_fwd_last);
        let (mut u, mut c) = (u0.clone(), vec![0.0; cfg.q]);
        let mut prev = x_last.to_vec();
        let mut yhat = Matrix::zeros(h, cfg.d);
        let mut steps = Vec::with_capacity(h);
        let mut attention = Vec::new();
        for j in 0..h {
            let mut mu = prev.clone();
            match &proj {
                Some(p) => {
                    let a = self.attention_context(store, &enc.h, p, &u)?;
                    mu.extend_from_slice(&a.z);
                    attention.push(a);
                }
                None => mu.extend_from_slice(static_z.ok_or_else(|| {
                    Error::ConfigMismatch("static aggregation needs a context vector".into())
                })?),
            }
            if let Some(p) = psi {
                mu.extend_from_slice(p);
            }
            let s = self.dec.forward(store, &mu, &u, &c)?;
            let out = yhat.row_mut(j);
            out.copy_from_slice(store.value(self.b_y).data());
            matvec_acc(store.value(self.w_y), &s.h, out);
            prev = match teacher {
                Some(t) => t.row(j).to_vec(),
                None => out.to_vec(),
            };
            u.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        Ok(DecoderOutput {
            yhat,
            steps,
            attention,
            u0,
        })
    }

    pub fn encdec_forward_with(
        &self,
        store: &ParamStore,
        x: &Matrix,
        psi: Option<&[f64]>,
        teacher: Option<&Matrix>,
    ) -> Result<EncDecTrace> {
        let enc = self.bilstm_encode(store, x)?;
        let static_z = match self.config.aggregation {
            Aggregation::Max => Some(aggregate_max(&enc.h)),
            Aggregation::Avg => Some((aggregate_avg(&enc.h), Vec::new())),
            Aggregation::Attn => None,
        };
        let dec = self.decode_sequence(
            store,
            &enc,
            static_z.as_ref().map(|(z, _)| z.as_slice()),
            x.row(x.rows() - 1),
            psi,
            self.config.h,
            teacher,
        )?;
        Ok(EncDecTrace { enc, static_z, dec })
    }

    pub fn encdec_forward(&self, x: &Matrix, psi: Option<&[f64]>) -> Result<EncDecTrace> {
        self.encdec_forward_with(&self.store, x, psi, None)
    }

    /// Accumulates `dLoss/dθ` into `grads` given `dyhat = dLoss/dYhat`.
    pub fn encdec_backward(
        &self,
        store: &ParamStore,
        trace: &EncDecTrace,
        dyhat: &Matrix,
        grads: &mut Gradients,
    ) {
        let cfg = &self.config;
        let (q, d) = (cfg.q, cfg.d);
        let zdim = cfg.z_dim();
        let ell = trace.enc.h.len();
        let steps = &trace.dec.steps;
        let mut dh_enc = vec![vec![0.0; 2 * q]; ell];
        let mut dproj = vec![vec![0.0; q]; ell];
        let mut dz_static = vec![0.0; zdim];
        let mut du = vec![0.0; q];
        let mut dc = vec![0.0; q];
        let mut dy_fb = vec![0.0; d];
        let w_y = store.value(self.w_y);
        for j in (0..steps.len()).rev() {
            let mut dy = dyhat.row(j).to_vec();
            dy.iter_mut().zip(&dy_fb).for_each(|(a, b)| *a += b);
            outer_acc(grads.get_mut(self.w_y), &dy, &steps[j].h);
            grads
                .get_mut(self.b_y)
                .data_mut()
                .iter_mut()
                .zip(&dy)
                .for_each(|(g, v)| *g += v);
            matvec_t_acc(w_y, &dy, &mut du);
            let (dmu, mut dh_prev, dc_prev) = self.dec.backward(store, &steps[j], &du, &dc, grads);
            dy_fb = if j > 0 && !cfg.teacher_forcing {
                dmu[..d].to_vec()
            } else {
                vec![0.0; d]
            };
            let dz = &dmu[d..d + zdim];
            match self.attn {
                Some(a) => self.attention_backward(
                    store,
                    a,
                    &trace.enc.h,
                    &trace.dec.attention[j],
                    dz,
                    &mut dh_enc,
                    &mut dproj,
                    &mut dh_prev,
                    grads,
                ),
                None => dz_static.iter_mut().zip(dz).for_each(|(a, b)| *a += b),
            }
            du = dh_prev;
            dc = dc_prev;
        }

        // u_0 = tanh(W_k h_fwd_last + b_k)
        let dpre: Vec<f64> = du
            .iter()
            .zip(&trace.dec.u0)
            .map(|(g, u)| g * (1.0 - u * u))
            .collect();
        outer_acc(grads.get_mut(self.w_k), &dpre, &trace.enc.h_fwd_last);
        grads
            .get_mut(self.b_k)
            .data_mut()
            .iter_mut()
            .zip(&dpre)
            .for_each(|(g, v)| *g += v);
        let mut dh_fwd_last = vec![0.0; q];
        matvec_t_acc(store.value(self.w_k), &dpre, &mut dh_fwd_last);

        if let Some((_, arg)) = &trace.static_z {
            match cfg.aggregation {
                Aggregation::Max => {
                    for (k, t) in arg.iter().enumerate() {
                        dh_enc[*t][k] += dz_static[k];
                    }
                }
                Aggregation::Avg => {
                    let inv = 1.0 / ell as f64;
                    for row in dh_enc.iter_mut() {
                        row.iter_mut()
                            .zip(&dz_static)
                            .for_each(|(a, b)| *a += b * inv);
                    }
                }
                Aggregation::Attn => {}
            }
        }
        if let Some(a) = self.attn {
            let w_h = store.value(a.w_h);
            for t in 0..ell {
                outer_acc(grads.get_mut(a.w_h), &dproj[t], &trace.enc.h[t]);
                matvec_t_acc(w_h, &dproj[t], &mut dh_enc[t]);
            }
        }

        // forward direction, BPTT from t = ell-1 down to 0
        let (mut dh, mut dc) = (dh_fwd_last, vec![0.0; q]);
        for t in (0..ell).rev() {
            dh.iter_mut()
                .zip(&dh_enc[t][..q])
                .for_each(|(a, b)| *a += b);
            let (_, dhp, dcp) = self
                .enc_fwd
                .backward(store, &trace.enc.fwd_steps[t], &dh, &dc, grads);
            dh = dhp;
            dc = dcp;
        }
        // backward direction ran t = ell-1 .. 0, so BPTT runs 0 .. ell-1
        let (mut dh, mut dc) = (vec![0.0; q], vec![0.0; q]);
        for t in 0..ell {
            dh.iter_mut()
                .zip(&dh_enc[t][q..])
                .for_each(|(a, b)| *a += b);
            let (_, dhp, dcp) = self
                .enc_bwd
                .backward(store, &trace.enc.bwd_steps[t], &dh, &dc, grads);
            dh = dhp;
            dc = dcp;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        store: &ParamStore,
        a: AttentionParams,
        h: &[Vec<f64>],
        step: &AttentionStep,
        dz: &[f64],
        dh_enc: &mut [Vec<f64>],
        dproj: &mut [Vec<f64>],
        du_prev: &mut [f64],
        grads: &mut Gradients,
    ) {
        let q = self.config.q;
        outer_acc(grads.get_mut(a.w_z), dz, &step.context);
        let mut dctx = vec![0.0; 2 * q];
        matvec_t_acc(store.value(a.w_z), dz, &mut dctx);
        let dalpha: Vec<f64> = h.iter().map(|row| dot(row, &dctx)).collect();
        for (t, row) in dh_enc.iter_mut().enumerate() {
            let w = step.alpha[t];
            row.iter_mut().zip(&dctx).for_each(|(g, v)| *g += w * v);
        }
        // softmax Jacobian
        let mean = dot(&step.alpha, &dalpha);
        let v = store.value(a.v_a).data();
        let mut ds = vec![0.0; q];
        for t in 0..h.len() {
            let de = step.alpha[t] * (dalpha[t] - mean);
            let act = &step.act[t];
            grads
                .get_mut(a.v_a)
                .data_mut()
                .iter_mut()
                .zip(act)
                .for_each(|(g, r)| *g += de * r);
            for k in 0..q {
                let dp = de * v[k] * (1.0 - act[k] * act[k]);
                dproj[t][k] += dp;
                ds[k] += dp;
            }
        }
        outer_acc(grads.get_mut(a.w_u), &ds, &step.u_prev);
        matvec_t_acc(store.value(a.w_u), &ds, du_prev);
    }

    /// Inference: no teacher forcing, and ψ is dropped for unlabeled models.
    pub fn predict(&self, x: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        let psi = if self.config.labeled { psi } else { None };
        Ok(self.encdec_forward(x, psi)?.dec.yhat)
    }
}

/// Checks `encdec_backward` against central differences with step `step`
/// on one random instance: input, target and a readout `w` drawn uniformly
/// from [-1, 1], objective `<w, yhat>` or, when `mae`, the MAE to the target.
pub fn encdec_gradient_check(
    config: &EncDecConfig,
    seed: u64,
    step: f64,
    mae: bool,
) -> Result<GradientCheck> {
    let model = EncDecModel::new(config.clone(), &mut seeded_rng(seed, 0))?;
    let mut rng = seeded_rng(seed, 1);
    let mut rm = |r: usize, k: usize| {
        Matrix::from_vec(r, k, (0..r * k).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let x = rm(config.ell, config.d)?;
    let target = rm(config.h, config.d)?;
    let weights = rm(config.h, config.d)?;
    let mut psi = vec![0.0; config.patterns];
    if let Some(last) = psi.last_mut() {
        *last = 1.0;
    }
    let psi = config.labeled.then_some(&psi[..]);
    let teacher = config.teacher_forcing.then_some(&target);
    let objective = |y: &Matrix| -> Result<(f64, Matrix)> {
        if mae {
            LossKind::Mae.eval(y, &target)
        } else {
            Ok((dot(y.data(), weights.data()), weights.clone()))
        }
    };
    let tr = model.encdec_forward_with(&model.store, &x, psi, teacher)?;
    let mut analytic = model.store.zero_gradients();
    model.encdec_backward(&model.store, &tr, &objective(tr.yhat())?.1, &mut analytic);
    let f = |s: &ParamStore| {
        model
            .encdec_forward_with(s, &x, psi, teacher)
            .and_then(|t| objective(t.yhat()))
            .map_or(f64::NAN, |(v, _)| v)
    };
    let numeric = finite_difference_gradient(f, &model.store, step);
    Ok(GradientCheck {
        params: model.store,
        analytic,
        numeric,
    })
}

/// Fixed gradient-check instances: (aggregation, labeled, teacher forcing, seed).
pub const GRADCHECK_CASES: [(Aggregation, bool, bool, u64); 9] = [
    (Aggregation::Max, false, false, 1),
    (Aggregation::Max, true, false, 6),
    (Aggregation::Max, true, true, 7),
    (Aggregation::Avg, false, false, 1),
    (Aggregation::Avg, true, false, 1),
    (Aggregation::Avg, true, true, 1),
    (Aggregation::Attn, false, false, 1),
    (Aggregation::Attn, true, false, 1),
    (Aggregation::Attn, true, true, 2),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_relative_error, sigmoid};

    fn cfg(agg: Aggregation, labeled: bool) -> EncDecConfig {
        EncDecConfig {
            q: 3,
            ell: 4,
            h: 3,
            d: 2,
            patterns: 2,
            labeled,
            aggregation: agg,
            teacher_forcing: false,
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed, 9);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    const AGGS: [Aggregation; 3] = [Aggregation::Max, Aggregation::Avg, Aggregation::Attn];

    /// Analytic and central-difference gradients on one random instance.
    /// The loss is a random linear functional of the outputs, or MAE.
    fn gradient_pair(c: &EncDecConfig, seed: u64, mae: bool) -> (ParamStore, Gradients, Gradients) {
        let g = encdec_gradient_check(c, seed, 1e-6, mae).unwrap();
        (g.params, g.analytic, g.numeric)
    }


    #[test]
    fn full_gradient_check_all_variants() {
        for (agg, labeled, tf, seed) in GRADCHECK_CASES {
            let c = EncDecConfig {
                teacher_forcing: tf,
                ..cfg(agg, labeled)
            };
            let (store, a, n) = gradient_pair(&c, seed, false);
            let (err, name) = max_relative_error(&store, &a, &n);
            assert!(err < 1e-5, "{c:?}: {name} rel err {err}");
        }
    }

    /// Relative error below 1e-5, or absolute error below the
    /// central-difference noise floor for entries that nearly cancel.
    fn mixed_mismatch(store: &ParamStore, a: &Gradients, n: &Gradients) -> Option<String> {
        for id in store.ids() {
            for (x, y) in a.get(id).data().iter().zip(n.get(id).data()) {
                let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-8);
                if !(rel < 1e-5 || (x - y).abs() < 1e-9) {
                    return Some(format!("{}: analytic {x:e} numeric {y:e}", store.name(id)));
                }
            }
        }
        None
    }

    #[test]
    fn gradient_check_mae_loss() {
        for agg in AGGS {
            let (store, a, n) = gradient_pair(&cfg(agg, true), 3, true);
            assert_eq!(mixed_mismatch(&store, &a, &n), None);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn gradients_match_on_random_instances(seed in 0u64..10_000, agg in 0usize..3, labeled: bool) {
            let c = cfg(AGGS[agg], labeled);
            let (store, a, n) = gradient_pair(&c, seed, false);
            let bad = mixed_mismatch(&store, &a, &n);
            proptest::prop_assert!(bad.is_none(), "{:?}", bad);
        }
    }

    #[test]
    fn aggregation_hand_case() {
        // H has time along columns: h_1 = (1, 4), h_2 = (3, 2)
        let h = vec![vec![1.0, 4.0], vec![3.0, 2.0]];
        let (z, arg) = aggregate_max(&h);
        assert_eq!(z, vec![3.0, 4.0]);
        assert_eq!(arg, vec![1, 0]);
        assert_eq!(aggregate_avg(&h), vec![2.0, 3.0]);
    }

    #[test]
    fn aggregation_single_step_and_ties() {
        let h = vec![vec![0.5, -2.0]];
        assert_eq!(aggregate_max(&h).0, h[0]);
        assert_eq!(aggregate_avg(&h), h[0]);
        let tie = vec![vec![1.0], vec![1.0], vec![0.0]];
        assert_eq!(aggregate_max(&tie).1, vec![0]);
    }

    #[test]
    fn aggregation_permutation_invariant() {
        let h = vec![vec![1.0, -1.0], vec![0.25, 3.0], vec![-2.0, 0.5]];
        let p = vec![h[2].clone(), h[0].clone(), h[1].clone()];
        assert_eq!(aggregate_max(&h).0, aggregate_max(&p).0);
        let (a, b) = (aggregate_avg(&h), aggregate_avg(&p));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn encoder_single_step() {
        let c = EncDecConfig {
            ell: 1,
            ..cfg(Aggregation::Max, false)
        };
        let m = EncDecModel::new(c, &mut seeded_rng(1, 0)).unwrap();
        let x = random_matrix(1, 2, 3);
        let enc = m.bilstm_encode(&m.store, &x).unwrap();
        assert_eq!(enc.h.len(), 1);
        let f = m.enc_fwd.forward(&m.store, x.row(0), &[0.0; 3], &[0.0; 3]).unwrap();
        let b = m.enc_bwd.forward(&m.store, x.row(0), &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(&enc.h[0][..3], &f.h[..]);
        assert_eq!(&enc.h[0][3..], &b.h[..]);
    }

    /// Straight-line LSTM written out gate by gate.
    fn ref_lstm(s: &ParamStore, prefix: &str, xs: &[Vec<f64>], q: usize) -> Vec<Vec<f64>> {
        let u = s.value(s.id(&format!("{prefix}.u")).unwrap());
        let w = s.value(s.id(&format!("{prefix}.w")).unwrap());
        let b = s.value(s.id(&format!("{prefix}.b")).unwrap());
        let (mut h, mut c) = (vec![0.0; q], vec![0.0; q]);
        let mut out = Vec::new();
        for x in xs {
            let pre = |g: usize, r: usize| {
                let row = g * q + r;
                let mut v = b.get(row, 0);
                for k in 0..x.len() {
                    v += u.get(row, k) * x[k];
                }
                for k in 0..q {
                    v += w.get(row, k) * h[k];
                }
                v
            };
            let mut hn = vec![0.0; q];
            let mut cn = vec![0.0; q];
            for r in 0..q {
                let i = sigmoid(pre(0, r));
                let f = sigmoid(pre(1, r));
                let o = sigmoid(pre(2, r));
                let g = pre(3, r).tanh();
                cn[r] = f * c[r] + i * g;
                hn[r] = o * cn[r].tanh();
            }
            h = hn;
            c = cn;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn encoder_matches_reference() {
        let c = EncDecConfig {
            q: 2,
            ell: 3,
            ..cfg(Aggregation::Avg, false)
        };
        let m = EncDecModel::new(c, &mut seeded_rng(4, 0)).unwrap();
        let x = random_matrix(3, 2, 5);
        let xs: Vec<Vec<f64>> = (0..3).map(|t| x.row(t).to_vec()).collect();
        let fwd = ref_lstm(&m.store, "enc_fwd", &xs, 2);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bwd = ref_lstm(&m.store, "enc_bwd", &rev, 2);
        bwd.reverse();
        let enc = m.bilstm_encode(&m.store, &x).unwrap();
        for t in 0..3 {
            for k in 0..2 {
                assert!((enc.h[t][k] - fwd[t][k]).abs() < 1e-14);
                assert!((enc.h[t][2 + k] - bwd[t][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reversed_input_swaps_directions() {
        let c = cfg(Aggregation::Avg, false);
        let m = EncDecModel::new(c, &mut seeded_rng(6, 0)).unwrap();
        let mut swapped = m.clone();
        for (a, b) in [
            (m.enc_fwd.u, m.enc_bwd.u),
            (m.enc_fwd.w, m.enc_bwd.w),
            (m.enc_fwd.b, m.enc_bwd.b),
        ] {
            *swapped.store.value_mut(a) = m.store.value(b).clone();
            *swapped.store.value_mut(b) = m.store.value(a).clone();
        }
        let x = random_matrix(4, 2, 8);
        let rows: Vec<Vec<f64>> = (0..4).rev().map(|t| x.row(t).to_vec()).collect();
        let xr = Matrix::from_rows(&rows).unwrap();
        let e = m.bilstm_encode(&m.store, &x).unwrap();
        let er = swapped.bilstm_encode(&swapped.store, &xr).unwrap();
        for t in 0..4 {
            assert_eq!(&er.h[t][..3], &e.h[3 - t][3..]);
            assert_eq!(&er.h[t][3..], &e.h[3 - t][..3]);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let c = cfg(Aggregation::Attn, false);
        let m = EncDecModel::new(c, &mut seeded_rng(9, 0)).unwrap();
        let x = random_matrix(4, 2, 10);
        let tr = m.encdec_forward(&x, None).unwrap();
        assert_eq!(tr.dec.attention.len(), 3);
        for a in &tr.dec.attention {
            assert!(a.alpha.iter().all(|v| *v >= 0.0));
            assert!((a.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut ctx = [0.0; 6];
            for (t, row) in tr.enc.h.iter().enumerate() {
                for k in 0..6 {
                    ctx[k] += a.alpha[t] * row[k];
                }
            }
            assert!(ctx.iter().zip(&a.context).all(|(p, q)| (p - q).abs() < 1e-14));
        }
        assert_eq!(tr.dec.alphas().shape(), (3, 4));
    }

    #[test]
    fn attention_single_step_and_uniform() {
        let c = cfg(Aggregation::Attn, false);
        let m = EncDecModel::new(c, &mut seeded_rng(2, 0)).unwrap();
        let a = m.attn.unwrap();
        let h1 = vec![vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]];
        let proj = m.project_states(&m.store, &h1);
        let s = m.attention_context(&m.store, &h1, &proj, &[0.2; 3]).unwrap();
        assert_eq!(s.alpha, vec![1.0]);
        let mut wz = vec![0.0; 3];
        matvec_acc(m.store.value(a.w_z), &h1[0], &mut wz);
        assert!(wz.iter().zip(&s.z).all(|(p, q)| (p - q).abs() < 1e-15));

        let same = vec![h1[0].clone(); 5];
        let proj = m.project_states(&m.store, &same);
        let s = m.attention_context(&m.store, &same, &proj, &[0.7; 3]).unwrap();
        assert!(s.alpha.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let avg = aggregate_avg(&same);
        assert!(avg.iter().zip(&s.context).all(|(p, q)| (p - q).abs() < 1e-15));
    }

    #[test]
    fn decoder_init_formula() {
        let c = cfg(Aggregation::Max, false);
        let mut m = EncDecModel::new(c, &mut seeded_rng(3, 0)).unwrap();
        let hf = [0.3, -0.1, 0.8];
        let u = m.decoder_init(&m.store, &hf);
        let wk = m.store.value(m.w_k);
        for r in 0..3 {
            let v = (0..3).map(|k| wk.get(r, k) * hf[k]).sum::<f64>();
            assert!((u[r] - v.tanh()).abs() < 1e-15);
        }
        m.store.value_mut(m.w_k).fill(0.0);
        assert_eq!(m.decoder_init(&m.store, &hf), vec![0.0; 3]);
        m.store.value_mut(m.b_k).fill(30.0);
        assert!(m.decoder_init(&m.store, &hf).iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_head_gives_zero_predictions() {
        for agg in AGGS {
            let mut m = EncDecModel::new(cfg(agg, true), &mut seeded_rng(4, 0)).unwrap();
            m.store.value_mut(m.w_y).fill(0.0);
            m.store.value_mut(m.b_y).fill(0.0);
            let y = m.predict(&random_matrix(4, 2, 1), Some(&[1.0, 0.0])).unwrap();
            assert_eq!(y.shape(), (3, 2));
            assert!(y.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn descriptor_changes_labeled_output_only() {
        let x = random_matrix(4, 2, 12);
        let m = EncDecModel::new(cfg(Aggregation::Attn, true), &mut seeded_rng(5, 0)).unwrap();
        let a = m.predict(&x, Some(&[1.0, 0.0])).unwrap();
        let b = m.predict(&x, Some(&[0.0, 1.0])).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() > 1e-6);

        let u = EncDecModel::new(cfg(Aggregation::Attn, false), &mut seeded_rng(5, 0)).unwrap();
        let a = u.predict(&x, Some(&[1.0, 0.0])).unwrap();
        let b = u.predict(&x, Some(&[0.0, 1.0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, u.predict(&x, None).unwrap());
    }

    #[test]
    fn descriptor_presence_must_match_flag() {
        let x = random_matrix(4, 2, 13);
        let l = EncDecModel::new(cfg(Aggregation::Max, true), &mut seeded_rng(5, 0)).unwrap();
        assert!(matches!(l.encdec_forward(&x, None), Err(Error::ConfigMismatch(_))));
        let u = EncDecModel::new(cfg(Aggregation::Max, false), &mut seeded_rng(5, 0)).unwrap();
        assert!(matches!(
            u.encdec_forward(&x, Some(&[1.0, 0.0])),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn output_length_is_horizon_for_any_input_length() {
        let m = EncDecModel::new(cfg(Aggregation::Attn, false), &mut seeded_rng(6, 0)).unwrap();
        for ell in [1, 2, 7, 20] {
            assert_eq!(m.predict(&random_matrix(ell, 2, ell as u64), None).unwrap().rows(), 3);
        }
        assert!(m.predict(&Matrix::zeros(0, 2), None).is_err());
        assert!(m.predict(&Matrix::zeros(4, 3), None).is_err());
    }

    #[test]
    fn horizon_one_is_one_cell_plus_head() {
        let c = EncDecConfig {
            h: 1,
            ..cfg(Aggregation::Avg, false)
        };
        let m = EncDecModel::new(c, &mut seeded_rng(7, 0)).unwrap();
        let x = random_matrix(4, 2, 14);
        let enc = m.bilstm_encode(&m.store, &x).unwrap();
        let mut mu = x.row(3).to_vec();
        mu.extend(aggregate_avg(&enc.h));
        let u0 = m.decoder_init(&m.store, &enc.h_fwd_last);
        let s = m.dec.forward(&m.store, &mu, &u0, &[0.0; 3]).unwrap();
        let mut y = m.store.value(m.b_y).data().to_vec();
        matvec_acc(m.store.value(m.w_y), &s.h, &mut y);
        assert_eq!(m.predict(&x, None).unwrap().row(0), &y[..]);
    }
}
