//! Sliding-window segmentation of regular trajectories and trajectory-level
//! fold assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;

use crate::ais::Trajectory;
use crate::error::{Error, Result};
use crate::geo::Standardizer;
use crate::nn::{seeded_rng, Matrix};

/// State dimension: (lon, lat).
pub const STATE_DIM: usize = 2;
pub const DEFAULT_ELL: usize = 12;
pub const DEFAULT_H: usize = 12;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

const FOLD_STREAM: u64 = 0x5f01d;
const VAL_STREAM: u64 = 0x5f02d;

/// One supervised input/output pair cut from a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `ell x 2` standardized (lon, lat) states ending at the anchor.
    pub input: Matrix,
    /// `h x 2` standardized states following the anchor.
    pub target: Matrix,
    /// One-hot pattern descriptor; `None` for unlabeled trajectories.
    pub psi: Option<Vec<f64>>,
    pub source_traj: u64,
    /// Index of the last input state within the source trajectory.
    pub k: usize,
}

impl WindowSample {
    /// Descriptor as seen by a model: labeled models require it, unlabeled
    /// models never receive it.
    pub fn psi_for(&self, labeled: bool) -> Result<Option<&[f64]>> {
        match (labeled, &self.psi) {
            (true, Some(p)) => Ok(Some(p)),
            (true, None) => Err(Error::ConfigMismatch(format!(
                "labeled model but sample from trajectory {} has no label",
                self.source_traj
            ))),
            (false, _) => Ok(None),
        }
    }
}

/// Number of windows `max(0, T - (ell + h) + 1)`.
pub fn window_count(len: usize, ell: usize, h: usize) -> usize {
    (len + 1).saturating_sub(ell + h)
}

pub fn one_hot(label: usize, patterns: usize) -> Result<Vec<f64>> {
    if label >= patterns {
        return Err(Error::Index {
            index: label,
            len: patterns,
        });
    }
    let mut v = vec![0.0; patterns];
    v[label] = 1.0;
    Ok(v)
}

/// Cuts every window with step one. The descriptor is attached when the
/// trajectory has a label; `patterns` is its length.
pub fn segment(
    traj: &Trajectory,
    ell: usize,
    h: usize,
    standardizer: &Standardizer,
    patterns: usize,
) -> Result<Vec<WindowSample>> {
    if ell == 0 || h == 0 {
        return Err(Error::InvalidInput(format!(
            "window lengths must be positive (ell={ell}, h={h})"
        )));
    }
    let n = window_count(traj.len(), ell, h);
    if n == 0 {
        return Ok(Vec::new());
    }
    let psi = traj.label.map(|l| one_hot(l, patterns)).transpose()?;
    let states: Vec<[f64; 2]> = traj.states.iter().map(|p| standardizer.apply(*p)).collect();
    let block = |from: usize, len: usize| {
        let data = states[from..from + len].iter().flatten().copied().collect();
        Matrix::from_vec(len, STATE_DIM, data).expect("shape")
    };
    Ok((0..n)
        .map(|i| {
            let k = i + ell - 1;
            WindowSample {
                input: block(k + 1 - ell, ell),
                target: block(k + 1, h),
                psi: psi.clone(),
                source_traj: traj.id,
                k,
            }
        })
        .collect())
}

/// Segments many trajectories, keeping trajectory order.
pub fn segment_all<'a>(
    trajs: impl IntoIterator<Item = &'a Trajectory>,
    ell: usize,
    h: usize,
    standardizer: &Standardizer,
    patterns: usize,
) -> Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for t in trajs {
        out.extend(segment(t, ell, h, standardizer, patterns)?);
    }
    Ok(out)
}

/// Trajectory-to-fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: usize,
    pub seed: u64,
    pub assignment: BTreeMap<u64, usize>,
}

/// Train/validation/test trajectory ids for one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Seeded shuffle of the (sorted, deduplicated) ids followed by round-robin
/// assignment, so fold sizes differ by at most one.
pub fn kfold_split(traj_ids: &[u64], folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    let mut ids = traj_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < folds {
        return Err(Error::TooFewTrajectories {
            have: ids.len(),
            folds,
        });
    }
    ids.shuffle(&mut seeded_rng(seed, FOLD_STREAM));
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i % folds))
        .collect();
    Ok(FoldPlan {
        folds,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn fold_members(&self, fold: usize) -> Vec<u64> {
        self.assignment
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for f in self.assignment.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Holds out `fold` for testing and moves a seeded `val_fraction` of the
    /// remaining trajectories (at least one) to validation.
    pub fn split(&self, fold: usize, val_fraction: f64) -> Result<FoldSplit> {
        if fold >= self.folds {
            return Err(Error::Index {
                index: fold,
                len: self.folds,
            });
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidInput(format!(
                "validation fraction must be in [0, 1), got {val_fraction}"
            )));
        }
        let test = self.fold_members(fold);
        let rest: Vec<u64> = self
            .assignment
            .iter()
            .filter(|(_, f)| **f != fold)
            .map(|(id, _)| *id)
            .collect();
        if rest.len() < 2 {
            return Err(Error::TooFewTrajectories {
                have: self.assignment.len(),
                folds: self.folds,
            });
        }
        let (train, val) = holdout(rest, val_fraction, self.seed, VAL_STREAM + fold as u64);
        Ok(FoldSplit {
            fold,
            train,
            val,
            test,
        })
    }
}

fn holdout(mut ids: Vec<u64>, val_fraction: f64, seed: u64, stream: u64) -> (Vec<u64>, Vec<u64>) {
    ids.sort_unstable();
    ids.shuffle(&mut seeded_rng(seed, stream));
    let n_val = ((ids.len() as f64 * val_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut val = ids.split_off(ids.len() - n_val);
    ids.sort_unstable();
    val.sort_unstable();
    (ids, val)
}

/// Seeded trajectory-level train/validation split for single-model training.
/// Validation gets `val_fraction` of the ids, at least one, never all.
pub fn validation_split(ids: &[u64], val_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidInput(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let unique: BTreeSet<u64> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate trajectory ids".into()));
    }
    if ids.len() < 2 {
        return Err(Error::TooFewTrajectories {
            have: ids.len(),
            folds: 1,
        });
    }
    Ok(holdout(ids.to_vec(), val_fraction, seed, VAL_STREAM - 1))
}

pub const SAMPLE_FILE_MAGIC: &[u8; 8] = b"SEATWIN1";

/// Windowed dataset with the parameters needed to interpret it.
///
/// Binary layout, little-endian:
///
/// ```text
/// magic "SEATWIN1"
/// u32 ell, u32 h, u32 d, u32 patterns
/// f64 mean_lon, mean_lat, std_lon, std_lat
/// u64 sample_count
/// per sample:
///   u64 source_traj, u64 k, u8 has_psi
///   [patterns x f64 psi]   only when has_psi == 1
///   ell*d f64 input, h*d f64 target   (row-major, standardized)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub ell: usize,
    pub h: usize,
    pub patterns: usize,
    pub standardizer: Standardizer,
    pub samples: Vec<WindowSample>,
}

impl SampleSet {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(SAMPLE_FILE_MAGIC)?;
        for v in [self.ell, self.h, STATE_DIM, self.patterns] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let s = &self.standardizer;
        for v in [s.mean[0], s.mean[1], s.std[0], s.std[1]] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for smp in &self.samples {
            w.write_all(&smp.source_traj.to_le_bytes())?;
            w.write_all(&(smp.k as u64).to_le_bytes())?;
            match &smp.psi {
                Some(p) => {
                    w.write_all(&[1])?;
                    for v in p {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                None => w.write_all(&[0])?,
            }
            for v in smp.input.data().iter().chain(smp.target.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("corrupt sample file: {m}"));
        let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| bad(e.to_string()));
        let mut magic = [0u8; 8];
        read(&mut magic)?;
        if &magic != SAMPLE_FILE_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut u32s = [0usize; 4];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            read(&mut b)?;
            *v = u32::from_le_bytes(b) as usize;
        }
        let [ell, h, d, patterns] = u32s;
        if d != STATE_DIM {
            return Err(bad(format!("state dimension {d}, expected {STATE_DIM}")));
        }
        let f = |read: &mut dyn FnMut(&mut [u8]) -> Result<()>| -> Result<f64> {
            let mut b = [0u8; 8];
            read(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mean = [f(&mut read)?, f(&mut read)?];
        let std = [f(&mut read)?, f(&mut read)?];
        let standardizer = Standardizer::new(mean, std)?;
        let mut b8 = [0u8; 8];
        read(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            read(&mut b8)?;
            let source_traj = u64::from_le_bytes(b8);
            read(&mut b8)?;
            let k = u64::from_le_bytes(b8) as usize;
            let mut flag = [0u8; 1];
            read(&mut flag)?;
            let psi = match flag[0] {
                0 => None,
                1 => Some(
                    (0..patterns)
                        .map(|_| f(&mut read))
                        .collect::<Result<Vec<_>>>()?,
                ),
                x => return Err(bad(format!("bad descriptor flag {x}"))),
            };
            let input = (0..ell * d).map(|_| f(&mut read)).collect::<Result<Vec<_>>>()?;
            let target = (0..h * d).map(|_| f(&mut read)).collect::<Result<Vec<_>>>()?;
            samples.push(WindowSample {
                input: Matrix::from_vec(ell, d, input)?,
                target: Matrix::from_vec(h, d, target)?,
                psi,
                source_traj,
                k,
            });
        }
        Ok(SampleSet {
            ell,
            h,
            patterns,
            standardizer,
            samples,
        })
    }
}
