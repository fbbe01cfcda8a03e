//! Mini-batch Adam training with early stopping, and the K-fold driver.
//!
//! Per-sample gradients are summed in fixed-size chunks that are reduced in
//! order, so results do not depend on the number of worker threads.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::ais::Trajectory;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, ReportEntry};
use crate::geo::{fit_standardizer, GeoPoint, Standardizer};
use crate::models::{AnyModel, ModelSpec, Trainable};
use crate::nn::{seeded_rng, AdamConfig, Gradients, LossKind};
use crate::windowing::{kfold_split, segment_all, WindowSample, DEFAULT_VAL_FRACTION};

/// Samples per gradient chunk; the unit of parallel work.
const CHUNK: usize = 8;
const SHUFFLE_STREAM: u64 = 0x7a1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 3000,
            batch_size: 200,
            adam: AdamConfig::default(),
            patience: 50,
            seed: 0,
            loss: LossKind::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidInput(format!(
                "epochs, batch and patience must be positive (got {}, {}, {})",
                self.max_epochs, self.batch_size, self.patience
            )));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidInput(format!(
                "patience {} must be smaller than max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        self.adam.validate()
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("train.epochs", self.max_epochs.to_string()),
            ("train.batch", self.batch_size.to_string()),
            ("train.lr", self.adam.lr.to_string()),
            ("train.beta1", self.adam.beta1.to_string()),
            ("train.beta2", self.adam.beta2.to_string()),
            ("train.epsilon", self.adam.epsilon.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.loss", self.loss.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    /// Index into `val_loss` of the restored snapshot.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub wall_time_sec: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }

    /// Per-epoch losses as `epoch train val` lines (no timing, so reruns
    /// compare equal).
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# epoch train_loss val_loss\n# initial_val_loss={}\n# best_epoch={} best_val_loss={}\n",
            self.initial_val_loss, self.best_epoch, self.best_val_loss
        );
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            s.push_str(&format!("{i} {t} {v}\n"));
        }
        s
    }
}

/// Worker pool sized by `SEATRACK_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SEATRACK_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidInput(format!("SEATRACK_THREADS={v:?}")))?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

/// Summed `scale`-weighted gradient and summed loss over `samples`.
pub fn batch_gradient(
    model: &dyn Trainable,
    samples: &[&WindowSample],
    loss: LossKind,
    scale: f64,
) -> Result<(Gradients, f64)> {
    let parts: Vec<Result<(Gradients, f64)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params().zero_gradients();
            let mut l = 0.0;
            for s in chunk {
                l += model.sample_gradient(s, loss, scale, &mut g)?;
            }
            Ok((g, l))
        })
        .collect();
    let mut total = model.params().zero_gradients();
    let mut l = 0.0;
    for p in parts {
        let (g, pl) = p?;
        total.add_assign(&g);
        l += pl;
    }
    Ok((total, l))
}

/// Mean loss over `samples` with chunked, ordered summation.
pub fn mean_loss(model: &dyn Trainable, samples: &[WindowSample], loss: LossKind) -> Result<f64> {
    let labeled = model.labeled();
    let parts: Vec<Result<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut l = 0.0;
            for s in chunk {
                let y = model.predict(&s.input, s.psi_for(labeled)?)?;
                l += loss.eval(&y, &s.target)?.0;
            }
            Ok(l)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / samples.len() as f64)
}

fn check_inputs(model: &AnyModel, train: &[WindowSample], val: &[WindowSample]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(format!(
            "training needs nonempty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    if model.labeled() {
        if let Some(s) = train.iter().chain(val).find(|s| s.psi.is_none()) {
            return Err(Error::ConfigMismatch(format!(
                "labeled model but trajectory {} is unlabeled",
                s.source_traj
            )));
        }
    }
    Ok(())
}

/// Trains in place and leaves the best-validation parameters in `model`.
/// The linear model is fit in closed form instead.
pub fn train(
    model: &mut AnyModel,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_inputs(model, train, val)?;
    let pool = thread_pool()?;
    pool.install(|| train_inner(model, train, val, cfg))
}

fn train_inner(
    model: &mut AnyModel,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    let initial_val_loss = mean_loss(model, val, cfg.loss)?;
    if let AnyModel::Linear(m) = model {
        *m = crate::baselines::LinearModel::fit(m.shape, train)?;
        let t = mean_loss(m, train, cfg.loss)?;
        let v = mean_loss(m, val, cfg.loss)?;
        return Ok(TrainReport {
            train_loss: vec![t],
            val_loss: vec![v],
            initial_val_loss,
            best_epoch: 0,
            best_val_loss: v,
            stopped_early: false,
            wall_time_sec: start.elapsed().as_secs_f64(),
        });
    }

    let mut rng = seeded_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        initial_val_loss,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        wall_time_sec: 0.0,
    };
    let mut best = model.params().snapshot();
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = idx.iter().map(|i| &train[*i]).collect();
            let scale = 1.0 / batch.len() as f64;
            let (grads, loss) = batch_gradient(model, &batch, cfg.loss, scale)?;
            if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    norms: model.params().norms_summary(),
                });
            }
            epoch_loss += loss;
            let store = model.params_mut();
            store.accumulate(&grads)?;
            store.adam_update(&cfg.adam);
        }
        let val_loss = mean_loss(model, val, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                norms: model.params().norms_summary(),
            });
        }
        report.train_loss.push(epoch_loss / train.len() as f64);
        report.val_loss.push(val_loss);
        log::debug!(
            "epoch {epoch}: train {:.6} val {val_loss:.6}",
            report.train_loss[epoch]
        );
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.params().snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().restore(&best);
    report.wall_time_sec = start.elapsed().as_secs_f64();
    log::info!(
        "trained {} epochs, best epoch {} (val {:.6})",
        report.epochs_run(),
        report.best_epoch,
        report.best_val_loss
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValConfig {
    pub folds: usize,
    /// Subset of folds to run; all when `None`.
    pub only_folds: Option<Vec<usize>>,
    pub ell: usize,
    pub h: usize,
    pub patterns: usize,
    pub val_fraction: f64,
    pub train: TrainConfig,
}

impl CrossValConfig {
    pub fn new(folds: usize, ell: usize, h: usize, patterns: usize, train: TrainConfig) -> Self {
        CrossValConfig {
            folds,
            only_folds: None,
            ell,
            h,
            patterns,
            val_fraction: DEFAULT_VAL_FRACTION,
            train,
        }
    }
}

/// One trained model on one fold.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub spec_index: usize,
    pub train_report: TrainReport,
    pub eval: EvalReport,
}

#[derive(Debug, Clone)]
pub struct CrossValResult {
    pub entries: Vec<ReportEntry>,
    pub runs: Vec<FoldRun>,
    /// Mean of the trajectory start points, the default distance origin.
    pub start_centroid: GeoPoint,
}

pub fn standardizer_for(trajs: &[&Trajectory]) -> Result<Standardizer> {
    let pts: Vec<GeoPoint> = trajs.iter().flat_map(|t| t.states.iter().copied()).collect();
    fit_standardizer(&pts)
}

pub fn start_centroid(trajs: &[Trajectory]) -> GeoPoint {
    let n = trajs.len().max(1) as f64;
    let (lat, lon) = trajs
        .iter()
        .filter_map(|t| t.states.first())
        .fold((0.0, 0.0), |(a, b), p| (a + p.lat, b + p.lon));
    GeoPoint {
        lat: lat / n,
        lon: lon / n,
    }
}

/// Trajectory-level K-fold study: for each fold the standardizer is fit on
/// the training trajectories only, every model is trained with early
/// stopping on the validation trajectories, and errors are measured on the
/// held-out fold. A failing model/fold is recorded and the rest continue.
pub fn cross_validate(
    trajs: &[Trajectory],
    specs: &[ModelSpec],
    cfg: &CrossValConfig,
) -> Result<CrossValResult> {
    cfg.train.validate()?;
    if specs.iter().any(|s| s.labeled) {
        if let Some(t) = trajs.iter().find(|t| t.label.is_none()) {
            return Err(Error::ConfigMismatch(format!(
                "labeled models requested but trajectory {} is unlabeled",
                t.id
            )));
        }
    }
    let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
    let plan = kfold_split(&ids, cfg.folds, cfg.train.seed)?;
    let folds: Vec<usize> = match &cfg.only_folds {
        Some(f) => {
            if let Some(bad) = f.iter().find(|k| **k >= cfg.folds) {
                return Err(Error::Index {
                    index: *bad,
                    len: cfg.folds,
                });
            }
            f.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
        }
        None => (0..cfg.folds).collect(),
    };
    let mut entries: Vec<ReportEntry> = specs
        .iter()
        .map(|s| ReportEntry {
            base: s.display_name().split(" (").next().unwrap_or_default().to_string(),
            labeled: s.labeled,
            folds: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    let mut runs = Vec::new();
    for fold in folds {
        let split = plan.split(fold, cfg.val_fraction)?;
        let pick = |ids: &[u64]| -> Vec<&Trajectory> {
            let set: BTreeSet<u64> = ids.iter().copied().collect();
            trajs.iter().filter(|t| set.contains(&t.id)).collect()
        };
        let (tr, va, te) = (pick(&split.train), pick(&split.val), pick(&split.test));
        let st = standardizer_for(&tr)?;
        let train_s = segment_all(tr.iter().copied(), cfg.ell, cfg.h, &st, cfg.patterns)?;
        let val_s = segment_all(va.iter().copied(), cfg.ell, cfg.h, &st, cfg.patterns)?;
        let test_s = segment_all(te.iter().copied(), cfg.ell, cfg.h, &st, cfg.patterns)?;
        log::info!(
            "fold {fold}: {} train, {} val, {} test windows",
            train_s.len(),
            val_s.len(),
            test_s.len()
        );
        for (i, spec) in specs.iter().enumerate() {
            let outcome = (|| -> Result<FoldRun> {
                let mut model = spec.build(cfg.train.seed.wrapping_add(fold as u64))?;
                let rep = train(&mut model, &train_s, &val_s, &cfg.train)?;
                let eval = evaluate(&model, &test_s, &st, &spec.display_name(), Some(fold))?;
                Ok(FoldRun {
                    fold,
                    spec_index: i,
                    train_report: rep,
                    eval,
                })
            })();
            match outcome {
                Ok(run) => {
                    entries[i].folds.push(run.eval.clone());
                    runs.push(run);
                }
                Err(e) => {
                    log::warn!("{} fold {fold} failed: {e}", spec.display_name());
                    entries[i].failures.push((fold, format!("{}: {e}", e.kind())));
                }
            }
        }
    }
    Ok(CrossValResult {
        entries,
        runs,
        start_centroid: start_centroid(trajs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::nn::Matrix;
    use rand::Rng;

    fn linear_data(n: usize, seed: u64) -> Vec<WindowSample> {
        let mut rng = seeded_rng(seed, 0);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                // each target is a fixed linear map of the input
                let y: Vec<f64> = (0..4)
                    .map(|j| 0.5 * x[j] - 0.3 * x[j + 4] + 0.2 * x[(j + 1) % 8])
                    .collect();
                WindowSample {
                    input: Matrix::from_vec(4, 2, x).unwrap(),
                    target: Matrix::from_vec(2, 2, y).unwrap(),
                    psi: None,
                    source_traj: i as u64,
                    k: 3,
                }
            })
            .collect()
    }

    fn small_spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            ell: 4,
            h: 2,
            q: 4,
            hidden: 32,
            ..ModelSpec::new(kind, false, 0)
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 3000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mlp_learns_linear_targets() {
        let data = linear_data(240, 1);
        let (tr, va) = data.split_at(200);
        let mut m = small_spec(ModelKind::Mlp).build(3).unwrap();
        let cfg = TrainConfig {
            max_epochs: 200,
            batch_size: 20,
            adam: AdamConfig::with_lr(3e-3),
            patience: 199,
            seed: 5,
            loss: LossKind::Mae,
        };
        let r = train(&mut m, tr, va, &cfg).unwrap();
        assert!(
            r.best_val_loss <= 0.1 * r.initial_val_loss,
            "{} -> {}",
            r.initial_val_loss,
            r.best_val_loss
        );
    }

    #[test]
    fn frozen_model_stops_after_two_epochs() {
        let data = linear_data(40, 2);
        let (tr, va) = data.split_at(30);
        let mut m = small_spec(ModelKind::EncDec).build(1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 100,
            batch_size: 8,
            adam: AdamConfig::with_lr(0.0),
            patience: 1,
            ..Default::default()
        };
        let r = train(&mut m, tr, va, &cfg).unwrap();
        assert_eq!(r.epochs_run(), 2);
        assert!(r.stopped_early);
        assert_eq!(r.best_epoch, 0);
    }

    #[test]
    fn same_seed_same_losses() {
        let data = linear_data(50, 3);
        let (tr, va) = data.split_at(40);
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 16,
            adam: AdamConfig::with_lr(1e-2),
            patience: 4,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let mut m = small_spec(ModelKind::EncDec).build(7).unwrap();
            let r = train(&mut m, tr, va, &cfg).unwrap();
            (r.train_loss, r.val_loss, m.params().snapshot())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn best_snapshot_is_restored() {
        let data = linear_data(50, 4);
        let (tr, va) = data.split_at(40);
        // a huge step size makes validation loss bounce around
        let cfg = TrainConfig {
            max_epochs: 12,
            batch_size: 10,
            adam: AdamConfig::with_lr(0.3),
            patience: 11,
            seed: 1,
            ..Default::default()
        };
        let mut m = small_spec(ModelKind::Mlp).build(2).unwrap();
        let r = train(&mut m, tr, va, &cfg).unwrap();
        let min = r.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert!(r.val_loss[r.best_epoch..].iter().all(|v| *v >= r.best_val_loss));
        let now = mean_loss(&m, va, LossKind::Mae).unwrap();
        assert_eq!(now, r.best_val_loss);
    }

    #[test]
    fn batch_gradient_order_invariant() {
        let data = linear_data(37, 5);
        let m = small_spec(ModelKind::EncDec).build(3).unwrap();
        let fwd: Vec<&WindowSample> = data.iter().collect();
        let rev: Vec<&WindowSample> = data.iter().rev().collect();
        let (a, la) = batch_gradient(&m, &fwd, LossKind::Mae, 1.0).unwrap();
        let (b, lb) = batch_gradient(&m, &rev, LossKind::Mae, 1.0).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(x.sub(y).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let data = linear_data(45, 6);
        let m = small_spec(ModelKind::Mlp).build(3).unwrap();
        let refs: Vec<&WindowSample> = data.iter().collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| batch_gradient(&m, &refs, LossKind::Mae, 0.1).unwrap());
        let b = four.install(|| batch_gradient(&m, &refs, LossKind::Mae, 0.1).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn labeled_model_on_unlabeled_data_is_rejected() {
        let data = linear_data(20, 7);
        let mut spec = small_spec(ModelKind::Mlp);
        spec.labeled = true;
        spec.patterns = 2;
        let mut m = spec.build(0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&mut m, &data[..10], &data[10..], &cfg),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = linear_data(20, 8);
        data[3].target.set(0, 0, f64::NAN);
        let mut m = small_spec(ModelKind::Mlp).build(0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 5,
            patience: 2,
            ..Default::default()
        };
        let err = train(&mut m, &data[..15], &data[15..], &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn linear_is_fit_in_closed_form() {
        let data = linear_data(60, 9);
        let mut m = small_spec(ModelKind::Linear).build(0).unwrap();
        let r = train(&mut m, &data[..50], &data[50..], &TrainConfig::default()).unwrap();
        assert!(r.best_val_loss < 1e-6);
    }
}
