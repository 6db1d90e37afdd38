//! Verification over an attack grid.

use std::path::{Path, PathBuf};

use crate::attacks::{apply, AttackSpec};
use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::metrics::{ber, ms_ssim, psnr, ssim, vif, Thresholds, VerificationReport};
use crate::models::NetworkHandle;
use crate::pipeline::checkpoint::{write_atomic, Checkpoint};
use crate::pipeline::data::PairedDataset;
use crate::pipeline::train::{Watermarks, INFER_CHUNK};
use crate::scalar::Scalar;

/// Image quality of one marked image against its host output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
    pub vif: Option<f64>,
}

pub fn quality<T: Scalar>(host_out: &ImageArray<T>, marked: &ImageArray<T>) -> Result<Quality> {
    Ok(Quality {
        psnr: psnr(marked, host_out)?,
        ssim: ssim(host_out, marked)?,
        ms_ssim: ms_ssim(host_out, marked).ok(),
        vif: vif(host_out, marked).ok(),
    })
}

/// Extracts from each image and scores the result against `w`.
pub fn extraction_report<T: Scalar>(
    extractor: &NetworkHandle<T>,
    images: &[ImageArray<T>],
    wm: &Watermarks<T>,
    thresholds: &Thresholds,
    label: &str,
) -> Result<VerificationReport> {
    let extracted = extractor.infer_images(images, INFER_CHUNK)?;
    let mut report = VerificationReport::new(label, wm.kind, *thresholds);
    for (i, e) in extracted.iter().enumerate() {
        report.push(i, psnr(e, &wm.w)?, ber(e, &wm.w)?);
    }
    Ok(report)
}

/// Reports of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// One report per grid cell, in grid order.
    pub cells: Vec<VerificationReport>,
    /// Extraction from unmarked host outputs; here a "success" means the
    /// watermark was wrongly found.
    pub non_marked: VerificationReport,
}

impl Evaluation {
    pub fn cell(&self, label: &str) -> Option<&VerificationReport> {
        self.cells.iter().find(|r| r.attack == label)
    }

    /// One JSONL file per report: `NN_<label>.jsonl` and `non_marked.jsonl`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut out = Vec::new();
        for (i, r) in self.cells.iter().enumerate() {
            let path = dir.join(format!("{i:02}_{}.jsonl", r.attack));
            write_atomic(&path, r.to_jsonl()?.as_bytes())?;
            out.push(path);
        }
        let path = dir.join("non_marked.jsonl");
        write_atomic(&path, self.non_marked.to_jsonl()?.as_bytes())?;
        out.push(path);
        Ok(out)
    }
}

/// Marks every test output, applies each grid attack, extracts, and
/// scores. Every sample row carries the marked-vs-host quality metrics.
pub fn evaluate<T: Scalar>(ckpt: &Checkpoint<T>, test: &PairedDataset<T>, grid: &[AttackSpec]) -> Result<Evaluation> {
    ensure(!test.is_empty(), || Error::InsufficientData("empty test set".into()))?;
    ensure(!grid.is_empty(), || Error::Argument("empty attack grid".into()))?;
    let thresholds = &ckpt.config.thresholds;
    let wm = &ckpt.watermarks;
    let host_out = ckpt.host.infer_images(&test.inputs, INFER_CHUNK)?;
    let marked = ckpt.embedder.infer_images(&host_out, INFER_CHUNK)?;
    let qualities = host_out
        .iter()
        .zip(&marked)
        .map(|(h, m)| quality(h, m))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(grid.len());
    for spec in grid {
        let attacked = marked.iter().map(|m| apply(spec, m)).collect::<Result<Vec<_>>>()?;
        let mut report = extraction_report(&ckpt.extractor, &attacked, wm, thresholds, &spec.label())?;
        for (row, q) in report.samples.iter_mut().zip(&qualities) {
            row.psnr_marked = Some(q.psnr);
            row.ssim_marked = Some(q.ssim);
            row.ms_ssim_marked = q.ms_ssim;
            row.vif_marked = q.vif;
        }
        cells.push(report);
    }
    let non_marked = extraction_report(&ckpt.extractor, &host_out, wm, thresholds, "non_marked")?;
    Ok(Evaluation { cells, non_marked })
}
