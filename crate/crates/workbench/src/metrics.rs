//! Per-frame photometric metrics and their CSV table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surfel_core::objectives::ssim;
use surfel_core::Image;

use crate::error::{WbResult, WorkbenchError};
use crate::fsutil::write_atomic;

/// Reported when the MSE is exactly zero.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check(a: &Image<f64>, b: &Image<f64>) -> WbResult<()> {
    if !a.same_shape(b) {
        return Err(WorkbenchError::Dimension(format!(
            "render {}×{}×{} vs target {}×{}×{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

/// Peak 1.0; capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image<f64>, b: &Image<f64>) -> WbResult<f64> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 { PSNR_CAP_DB } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB) })
}

pub fn mean_l1(a: &Image<f64>, b: &Image<f64>) -> WbResult<f64> {
    check(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

pub fn frame_metrics(name: impl Into<String>, render: &Image<f64>, target: &Image<f64>) -> WbResult<MetricRow> {
    Ok(MetricRow {
        frame: name.into(),
        psnr: psnr(render, target)?,
        ssim: ssim(render, target)?,
        l1: mean_l1(render, target)?,
    })
}

/// Arithmetic mean of each column, labelled `mean`.
pub fn summary(rows: &[MetricRow]) -> MetricRow {
    let n = rows.len().max(1) as f64;
    MetricRow {
        frame: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        l1: rows.iter().map(|r| r.l1).sum::<f64>() / n,
    }
}

/// One row per frame, then the summary row.
pub fn to_csv(rows: &[MetricRow]) -> WbResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows.iter().cloned().chain(std::iter::once(summary(rows))) {
        w.serialize(r).map_err(|e| WorkbenchError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| WorkbenchError::Format(e.to_string()))
}

pub fn write_csv(rows: &[MetricRow], path: &Path) -> WbResult<()> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_csv(bytes: &[u8]) -> WbResult<Vec<MetricRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| WorkbenchError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: Vec<f64>) -> Image<f64> {
        Image { height: 1, width: v.len() / 3, channels: 3, data: v }
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = img(vec![0.2; 12]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_matches_hand_calculation() {
        let a = img(vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]);
        let b = img(vec![0.1, 0.5, 0.8, 0.25, 0.70, 0.1]);
        let mse: f64 = (0.01 + 0.04 + 0.0025) / 6.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_gives_that_l1() {
        let a = img(vec![0.3; 12]);
        let b = img(vec![0.4; 12]);
        assert!((mean_l1(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!(psnr(&a, &img(vec![0.3; 6])).is_err());
    }

    #[test]
    fn csv_has_a_row_per_frame_and_a_summary() {
        let rows = vec![
            MetricRow { frame: "a".into(), psnr: 30.0, ssim: 0.9, l1: 0.02 },
            MetricRow { frame: "b".into(), psnr: 20.0, ssim: 0.7, l1: 0.04 },
        ];
        let back = read_csv(&to_csv(&rows).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[..2], rows[..]);
        assert_eq!(back[2].frame, "mean");
        assert!((back[2].psnr - 25.0).abs() < 1e-12);
    }
}
