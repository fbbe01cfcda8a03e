//! Uniform handle over the trainable models, plus their checkpoint metadata.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{FlatShape, LinearModel, MlpModel, DEFAULT_MLP_HIDDEN};
use crate::error::{Error, Result};
use crate::geo::Standardizer;
use crate::nn::{
    outer_acc, seeded_rng, AdamConfig, Checkpoint, Gradients, LossKind, Matrix,
    ParamStore,
};
use crate::seq2seq::{Aggregation, EncDecConfig, EncDecModel};
use crate::windowing::{WindowSample, DEFAULT_ELL, DEFAULT_H, STATE_DIM};

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    Mlp,
    EncDec,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
            ModelKind::EncDec => "encdec",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(ModelKind::Linear),
            "mlp" => Ok(ModelKind::Mlp),
            "encdec" | "seq2seq" => Ok(ModelKind::EncDec),
            other => Err(Error::InvalidInput(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub labeled: bool,
    pub ell: usize,
    pub h: usize,
    pub d: usize,
    pub patterns: usize,
    /// LSTM hidden size.
    pub q: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub aggregation: Aggregation,
    pub teacher_forcing: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::EncDec,
            labeled: false,
            ell: DEFAULT_ELL,
            h: DEFAULT_H,
            d: STATE_DIM,
            patterns: 0,
            q: 64,
            hidden: DEFAULT_MLP_HIDDEN,
            aggregation: Aggregation::Attn,
            teacher_forcing: false,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, labeled: bool, patterns: usize) -> Self {
        ModelSpec {
            kind,
            labeled,
            patterns,
            ..Default::default()
        }
    }

    pub fn with_aggregation(mut self, agg: Aggregation) -> Self {
        self.aggregation = agg;
        self
    }

    /// Table row label, e.g. `EncDec-ATTN (labeled)`.
    pub fn display_name(&self) -> String {
        let base = match self.kind {
            ModelKind::Linear => "Linear".to_string(),
            ModelKind::Mlp => "MLP".to_string(),
            ModelKind::EncDec => format!("EncDec-{}", self.aggregation.to_string().to_uppercase()),
        };
        let tag = if self.labeled { "labeled" } else { "unlabeled" };
        format!("{base} ({tag})")
    }

    fn flat_shape(&self) -> FlatShape {
        FlatShape {
            ell: self.ell,
            h: self.h,
            d: self.d,
            patterns: self.patterns,
            labeled: self.labeled,
        }
    }

    fn encdec_config(&self) -> EncDecConfig {
        EncDecConfig {
            q: self.q,
            ell: self.ell,
            h: self.h,
            d: self.d,
            patterns: self.patterns,
            labeled: self.labeled,
            aggregation: self.aggregation,
            teacher_forcing: self.teacher_forcing,
        }
    }

    /// Fresh model with seeded initial weights.
    pub fn build(&self, seed: u64) -> Result<AnyModel> {
        let mut rng = seeded_rng(seed, INIT_STREAM);
        Ok(match self.kind {
            ModelKind::Linear => AnyModel::Linear(LinearModel::zeros(self.flat_shape())?),
            ModelKind::Mlp => {
                AnyModel::Mlp(MlpModel::new(self.flat_shape(), self.hidden, &mut rng)?)
            }
            ModelKind::EncDec => {
                AnyModel::EncDec(EncDecModel::new(self.encdec_config(), &mut rng)?)
            }
        })
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        [
            ("model.kind", self.kind.to_string()),
            ("model.labeled", self.labeled.to_string()),
            ("model.ell", self.ell.to_string()),
            ("model.h", self.h.to_string()),
            ("model.d", self.d.to_string()),
            ("model.patterns", self.patterns.to_string()),
            ("model.q", self.q.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.agg", self.aggregation.to_string()),
            ("model.teacher_forcing", self.teacher_forcing.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        fn get<T: FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
            let v = ck.meta_require(key)?;
            v.parse()
                .map_err(|_| Error::InvalidInput(format!("bad checkpoint value {key}={v}")))
        }
        Ok(ModelSpec {
            kind: ck.meta_require("model.kind")?.parse()?,
            labeled: get(ck, "model.labeled")?,
            ell: get(ck, "model.ell")?,
            h: get(ck, "model.h")?,
            d: get(ck, "model.d")?,
            patterns: get(ck, "model.patterns")?,
            q: get(ck, "model.q")?,
            hidden: get(ck, "model.hidden")?,
            aggregation: ck.meta_require("model.agg")?.parse()?,
            teacher_forcing: get(ck, "model.teacher_forcing")?,
        })
    }
}

/// Operations the training loop needs from a model.
pub trait Trainable: Send + Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn labeled(&self) -> bool;
    /// Forecast `h x d` standardized states; unlabeled models ignore `psi`.
    fn predict(&self, input: &Matrix, psi: Option<&[f64]>) -> Result<Matrix>;
    /// Adds `scale * dL/dθ` for one sample into `grads` and returns the
    /// sample's (unscaled) loss.
    fn sample_gradient(
        &self,
        sample: &WindowSample,
        loss: LossKind,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub enum AnyModel {
    Linear(LinearModel),
    Mlp(MlpModel),
    EncDec(EncDecModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Linear(_) => ModelKind::Linear,
            AnyModel::Mlp(_) => ModelKind::Mlp,
            AnyModel::EncDec(_) => ModelKind::EncDec,
        }
    }

    pub fn to_checkpoint(
        &self,
        spec: &ModelSpec,
        standardizer: &Standardizer,
        adam: AdamConfig,
    ) -> Checkpoint {
        let mut meta = spec.to_meta();
        meta.push((
            "std.mean".into(),
            format!("{},{}", standardizer.mean[0], standardizer.mean[1]),
        ));
        meta.push((
            "std.std".into(),
            format!("{},{}", standardizer.std[0], standardizer.std[1]),
        ));
        Checkpoint {
            meta,
            adam,
            params: self.params().clone(),
        }
    }

    /// Rebuilds the architecture from metadata and installs the stored
    /// parameters, checking names and shapes.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(ModelSpec, Standardizer, AnyModel)> {
        let spec = ModelSpec::from_checkpoint(ck)?;
        let mut model = spec.build(0)?;
        let fresh = model.params();
        let stored = &ck.params;
        if fresh.len() != stored.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} parameter tensors, architecture expects {}",
                stored.len(),
                fresh.len()
            )));
        }
        for (a, b) in fresh.slots().iter().zip(stored.slots()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {} {:?} does not match checkpoint {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        *model.params_mut() = stored.clone();
        let pair = |key: &str| -> Result<[f64; 2]> {
            let v = ck.meta_require(key)?;
            let parts: Vec<f64> = v
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad checkpoint value {key}={v}")))?;
            match parts[..] {
                [a, b] => Ok([a, b]),
                _ => Err(Error::InvalidInput(format!("bad checkpoint value {key}={v}"))),
            }
        };
        let standardizer = Standardizer::new(pair("std.mean")?, pair("std.std")?)?;
        Ok((spec, standardizer, model))
    }

    fn inner(&self) -> &dyn Trainable {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::EncDec(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Trainable {
        match self {
            AnyModel::Linear(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::EncDec(m) => m,
        }
    }
}

impl Trainable for AnyModel {
    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn labeled(&self) -> bool {
        self.inner().labeled()
    }

    fn predict(&self, input: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        self.inner().predict(input, psi)
    }

    fn sample_gradient(
        &self,
        sample: &WindowSample,
        loss: LossKind,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.inner().sample_gradient(sample, loss, scale, grads)
    }
}

fn scaled_loss(loss: LossKind, pred: &Matrix, target: &Matrix, scale: f64) -> Result<(f64, Matrix)> {
    let (l, mut d) = loss.eval(pred, target)?;
    d.scale(scale);
    Ok((l, d))
}

impl Trainable for LinearModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn labeled(&self) -> bool {
        self.shape.labeled
    }

    fn predict(&self, input: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        LinearModel::predict(self, input, psi)
    }

    fn sample_gradient(
        &self,
        sample: &WindowSample,
        loss: LossKind,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let psi = sample.psi_for(self.shape.labeled)?;
        let x = self.shape.flatten(&sample.input, psi)?;
        let pred = LinearModel::predict(self, &sample.input, psi)?;
        let (l, dy) = scaled_loss(loss, &pred, &sample.target, scale)?;
        outer_acc(grads.get_mut(self.weight), dy.data(), &x);
        grads
            .get_mut(self.bias)
            .data_mut()
            .iter_mut()
            .zip(dy.data())
            .for_each(|(g, v)| *g += v);
        Ok(l)
    }
}

impl Trainable for MlpModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn labeled(&self) -> bool {
        self.shape.labeled
    }

    fn predict(&self, input: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        MlpModel::predict(self, input, psi)
    }

    fn sample_gradient(
        &self,
        sample: &WindowSample,
        loss: LossKind,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let psi = sample.psi_for(self.shape.labeled)?;
        let tr = self.forward_with(&self.store, &sample.input, psi)?;
        let (l, dy) = scaled_loss(loss, &tr.yhat, &sample.target, scale)?;
        self.backward(&self.store, &tr, &dy, grads);
        Ok(l)
    }
}

impl Trainable for EncDecModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn labeled(&self) -> bool {
        self.config.labeled
    }

    fn predict(&self, input: &Matrix, psi: Option<&[f64]>) -> Result<Matrix> {
        EncDecModel::predict(self, input, psi)
    }

    fn sample_gradient(
        &self,
        sample: &WindowSample,
        loss: LossKind,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let psi = sample.psi_for(self.config.labeled)?;
        let teacher = self.config.teacher_forcing.then_some(&sample.target);
        let tr = self.encdec_forward_with(&self.store, &sample.input, psi, teacher)?;
        let (l, dy) = scaled_loss(loss, tr.yhat(), &sample.target, scale)?;
        self.encdec_backward(&self.store, &tr, &dy, grads);
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_gradient, max_relative_error};

    fn sample(labeled: bool) -> WindowSample {
        let input = Matrix::from_vec(12, 2, (0..24).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let target = Matrix::from_vec(12, 2, (0..24).map(|i| (i as f64 * 0.11).cos()).collect())
            .unwrap();
        WindowSample {
            input,
            target,
            psi: labeled.then(|| vec![0.0, 1.0]),
            source_traj: 3,
            k: 11,
        }
    }

    #[test]
    fn kind_round_trip() {
        for k in [ModelKind::Linear, ModelKind::Mlp, ModelKind::EncDec] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("rnn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn display_names() {
        let s = ModelSpec::new(ModelKind::EncDec, true, 2).with_aggregation(Aggregation::Max);
        assert_eq!(s.display_name(), "EncDec-MAX (labeled)");
        assert_eq!(ModelSpec::new(ModelKind::Mlp, false, 2).display_name(), "MLP (unlabeled)");
    }

    #[test]
    fn checkpoint_round_trip_all_kinds() {
        let st = Standardizer::new([11.123456789, 55.5], [0.3, 0.1]).unwrap();
        for kind in [ModelKind::Linear, ModelKind::Mlp, ModelKind::EncDec] {
            let spec = ModelSpec {
                q: 4,
                hidden: 6,
                ..ModelSpec::new(kind, true, 2)
            };
            let m = spec.build(9).unwrap();
            let ck = m.to_checkpoint(&spec, &st, AdamConfig::default());
            let back = Checkpoint::read_from(&ck.to_bytes()[..]).unwrap();
            let (spec2, st2, m2) = AnyModel::from_checkpoint(&back).unwrap();
            assert_eq!(spec2, spec);
            assert_eq!(st2, st);
            let s = sample(true);
            assert_eq!(
                m.predict(&s.input, s.psi.as_deref()).unwrap(),
                m2.predict(&s.input, s.psi.as_deref()).unwrap()
            );
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let spec = ModelSpec {
            q: 4,
            ..ModelSpec::new(ModelKind::EncDec, false, 0)
        };
        let m = spec.build(1).unwrap();
        let mut ck = m.to_checkpoint(&spec, &Standardizer::identity(), AdamConfig::default());
        for (k, v) in ck.meta.iter_mut() {
            if k == "model.q" {
                *v = "5".into();
            }
        }
        assert!(matches!(
            AnyModel::from_checkpoint(&ck),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn linear_sample_gradient_matches_fd() {
        let spec = ModelSpec::new(ModelKind::Linear, true, 2);
        let AnyModel::Linear(mut m) = spec.build(0).unwrap() else {
            unreachable!()
        };
        let mut rng = seeded_rng(4, 0);
        for v in m.store.value_mut(m.weight).data_mut() {
            *v = rand::Rng::random_range(&mut rng, -0.2..0.2);
        }
        let s = sample(true);
        let mut g = m.store.zero_gradients();
        m.sample_gradient(&s, LossKind::Mse, 1.0, &mut g).unwrap();
        let f = |st: &ParamStore| {
            let mut c = m.clone();
            c.store = st.clone();
            LossKind::Mse
                .eval(&c.predict(&s.input, s.psi.as_deref()).unwrap(), &s.target)
                .unwrap()
                .0
        };
        let n = finite_difference_gradient(f, &m.store, 1e-6);
        let (err, name) = max_relative_error(&m.store, &g, &n);
        assert!(err < 1e-5, "{name}: {err}");
    }

    #[test]
    fn gradient_scale_is_linear() {
        let spec = ModelSpec {
            q: 4,
            ..ModelSpec::new(ModelKind::EncDec, false, 0)
        };
        let m = spec.build(2).unwrap();
        let s = sample(false);
        let mut g1 = m.params().zero_gradients();
        let mut g2 = m.params().zero_gradients();
        let l1 = m.sample_gradient(&s, LossKind::Mae, 1.0, &mut g1).unwrap();
        let l2 = m.sample_gradient(&s, LossKind::Mae, 0.25, &mut g2).unwrap();
        assert_eq!(l1, l2);
        g1.scale(0.25);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!(a.sub(b).unwrap().max_abs() < 1e-15);
        }
    }
}
