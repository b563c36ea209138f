//! Combined-CCA with prototype responses pooled across training subjects.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cca::{argmax_class, cca_max_corr, pearson, project, ReferenceBank};
use crate::dataset::Trial;
use crate::error::{Error, Result};

/// Mean training response per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub class_ids: Vec<usize>,
    pub prototypes: Vec<DMatrix<f64>>,
    pub counts: Vec<usize>,
}

impl PrototypeBank {
    pub fn prototype(&self, class_id: usize) -> Option<&DMatrix<f64>> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .map(|i| &self.prototypes[i])
    }
}

/// How the four correlations are merged into one score per class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `sum sign(r) r^2`
    #[default]
    SignedSquare,
    /// Plain mean of the correlations.
    Mean,
}

impl Fusion {
    fn fuse(self, r: &[f64; 4]) -> f64 {
        match self {
            Fusion::SignedSquare => r.iter().map(|v| v.signum() * v * v).sum(),
            Fusion::Mean => r.iter().sum::<f64>() / 4.0,
        }
    }
}

/// Averages the training windows of each class in `class_ids`.
pub fn build_prototypes<'a, I>(train: I, class_ids: &[usize]) -> Result<PrototypeBank>
where
    I: IntoIterator<Item = &'a Trial>,
{
    let mut sums: Vec<Option<DMatrix<f64>>> = alloc::vec![None; class_ids.len()];
    let mut counts = alloc::vec![0usize; class_ids.len()];
    for trial in train {
        let Some(slot) = class_ids.iter().position(|&c| c == trial.class_id) else {
            return Err(Error::UnknownClass(trial.class_id));
        };
        let m = trial.matrix();
        match &mut sums[slot] {
            Some(acc) => {
                if acc.shape() != m.shape() {
                    return Err(Error::Shape("training windows differ in shape".into()));
                }
                *acc += m;
            }
            empty => *empty = Some(m),
        }
        counts[slot] += 1;
    }
    let mut prototypes = Vec::with_capacity(class_ids.len());
    for (i, sum) in sums.into_iter().enumerate() {
        let sum = sum.ok_or(Error::MissingClass(class_ids[i]))?;
        prototypes.push(sum / counts[i] as f64);
    }
    Ok(PrototypeBank {
        class_ids: class_ids.to_vec(),
        prototypes,
        counts,
    })
}

/// Outcome for one window. `scores[i]` is `None` for excluded classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedDecision {
    pub class_id: usize,
    pub scores: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// The four correlations between `x`, prototype `proto` and references `y`.
pub fn correlation_set(x: &DMatrix<f64>, proto: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<[f64; 4]> {
    let xy = cca_max_corr(x, y)?;
    let xp = cca_max_corr(x, proto)?;
    let py = cca_max_corr(proto, y)?;
    let paired = |w| pearson(&project(w, x), &project(w, proto));
    Ok([xy.rho, paired(&xp.w_x), paired(&xy.w_x), paired(&py.w_x)])
}

pub fn combined_cca_classify(
    x: &DMatrix<f64>,
    prototypes: &PrototypeBank,
    bank: &ReferenceBank,
    fusion: Fusion,
) -> Result<CombinedDecision> {
    if x.ncols() != bank.samples {
        return Err(Error::Shape(alloc::format!(
            "segment has {} samples, bank expects {}",
            x.ncols(),
            bank.samples
        )));
    }
    let mut scores = Vec::with_capacity(bank.len());
    let mut excluded = Vec::new();
    for (&class_id, y) in bank.class_ids.iter().zip(&bank.references) {
        let proto = prototypes
            .prototype(class_id)
            .ok_or(Error::MissingClass(class_id))?;
        if proto.shape() != x.shape() {
            return Err(Error::Shape(alloc::format!(
                "prototype {:?} vs segment {:?}",
                proto.shape(),
                x.shape()
            )));
        }
        if proto.iter().all(|v| *v == 0.0) {
            excluded.push(class_id);
            scores.push(None);
            continue;
        }
        match correlation_set(x, proto, y) {
            Ok(r) => scores.push(Some(fusion.fuse(&r))),
            Err(Error::Degenerate(_)) => {
                excluded.push(class_id);
                scores.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if excluded.len() == bank.len() {
        return Err(Error::Degenerate("every prototype is degenerate".into()));
    }
    let flat: Vec<f64> = scores.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect();
    Ok(CombinedDecision {
        class_id: argmax_class(&bank.class_ids, &flat),
        scores,
        excluded,
    })
}
