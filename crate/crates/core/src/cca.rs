//! Calibration-free CCA frequency detection against sinusoidal references.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::StimulusTable;
use crate::error::{Error, Result};

/// Eigenvalue floor for whitening, relative to the covariance trace.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Sin/cos references per class. Rows alternate sin, cos in ascending
/// harmonic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank {
    pub n_harmonics: usize,
    pub sample_rate_hz: f64,
    pub samples: usize,
    pub class_ids: Vec<usize>,
    pub references: Vec<DMatrix<f64>>,
}

impl ReferenceBank {
    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    pub fn reference(&self, class_id: usize) -> Option<&DMatrix<f64>> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .map(|i| &self.references[i])
    }
}

pub fn build_reference_bank(
    stimulus: &StimulusTable,
    n_harmonics: usize,
    samples: usize,
    sample_rate_hz: f64,
) -> Result<ReferenceBank> {
    if n_harmonics == 0 {
        return Err(Error::Config("need at least one harmonic".into()));
    }
    let mut class_ids = Vec::with_capacity(stimulus.len());
    let mut references = Vec::with_capacity(stimulus.len());
    for s in &stimulus.entries {
        if n_harmonics as f64 * s.frequency_hz >= sample_rate_hz / 2.0 {
            return Err(Error::AliasedReference {
                frequency_hz: s.frequency_hz,
                harmonic: n_harmonics,
            });
        }
        let y = DMatrix::from_fn(2 * n_harmonics, samples, |r, n| {
            let h = (r / 2 + 1) as f64;
            let arg = 2.0 * PI * h * s.frequency_hz * n as f64 / sample_rate_hz;
            if r % 2 == 0 {
                libm::sin(arg)
            } else {
                libm::cos(arg)
            }
        });
        class_ids.push(s.class_id);
        references.push(y);
    }
    Ok(ReferenceBank {
        n_harmonics,
        sample_rate_hz,
        samples,
        class_ids,
        references,
    })
}

/// Largest canonical correlation and its projection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    pub rho: f64,
    pub w_x: DVector<f64>,
    pub w_y: DVector<f64>,
}

pub(crate) fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

/// Symmetric inverse square root with an eigenvalue floor.
fn inverse_sqrt(cov: DMatrix<f64>) -> DMatrix<f64> {
    let floor = EIGEN_FLOOR * cov.trace().max(f64::MIN_POSITIVE);
    let eig = cov.symmetric_eigen();
    let scaled = eig
        .eigenvalues
        .map(|l| 1.0 / libm::sqrt(l.max(floor)));
    &eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose()
}

/// Pearson correlation of two equal-length series; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Projection `w^T M` as a time series.
pub fn project(w: &DVector<f64>, m: &DMatrix<f64>) -> Vec<f64> {
    (w.transpose() * m).iter().copied().collect()
}

/// Maximal canonical correlation between the rows of `x` and `y`
/// (variables x samples). Rows are mean-centered internally; both covariance
/// blocks are whitened and the whitened cross-covariance is decomposed by SVD.
pub fn cca_max_corr(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<CcaResult> {
    let t = x.ncols();
    if y.ncols() != t {
        return Err(Error::Shape(alloc::format!(
            "x has {} samples, y has {}",
            t,
            y.ncols()
        )));
    }
    if t <= x.nrows() || t <= y.nrows() {
        return Err(Error::Shape(alloc::format!(
            "need more samples ({t}) than variables ({} and {})",
            x.nrows(),
            y.nrows()
        )));
    }
    let xc = center_rows(x);
    let yc = center_rows(y);
    if xc.iter().all(|v| *v == 0.0) || yc.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("all-constant input to CCA".into()));
    }
    let wx = inverse_sqrt(&xc * xc.transpose());
    let wy = inverse_sqrt(&yc * yc.transpose());
    let k = &wx * (&xc * yc.transpose()) * &wy;
    let svd = k.svd(true, true);
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let u = svd.u.as_ref().map(|u| u.column(idx).into_owned());
    let v = svd.v_t.as_ref().map(|vt| vt.row(idx).transpose());
    let (Some(u), Some(v)) = (u, v) else {
        return Err(Error::Degenerate("SVD did not converge".into()));
    };
    Ok(CcaResult {
        rho: sigma.clamp(0.0, 1.0),
        w_x: wx * u,
        w_y: wy * v,
    })
}

/// Index of the maximum score; ties go to the lowest class id.
pub(crate) fn argmax_class(class_ids: &[usize], scores: &[f64]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (&c, &s) in class_ids.iter().zip(scores) {
        best = match best {
            Some((bc, bs)) if s < bs || (s == bs && bc < c) || s.is_nan() => Some((bc, bs)),
            _ => Some((c, s)),
        };
    }
    best.map_or(0, |b| b.0)
}

/// Picks the class whose references give the largest canonical correlation.
/// Returns the chosen class and the correlation per bank entry.
pub fn cca_classify(x: &DMatrix<f64>, bank: &ReferenceBank) -> Result<(usize, Vec<f64>)> {
    if x.ncols() != bank.samples {
        return Err(Error::Shape(alloc::format!(
            "segment has {} samples, bank expects {}",
            x.ncols(),
            bank.samples
        )));
    }
    let rhos = bank
        .references
        .iter()
        .map(|y| cca_max_corr(x, y).map(|r| r.rho))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmax_class(&bank.class_ids, &rhos), rhos))
}
