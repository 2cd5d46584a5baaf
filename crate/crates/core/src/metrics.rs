//! Reduced-resolution fusion quality metrics.
//!
//! * SAM: mean per-pixel spectral angle in degrees. Pixels where either
//!   spectrum has norm below 1e-8 count as angle 0 (or error in strict mode).
//! * ERGAS: `100 / ratio * sqrt(mean_c (RMSE_c / mu_c)^2)`, `mu_c` the
//!   ground-truth band mean.
//! * SCC: Pearson correlation of 3x3 Laplacian responses
//!   (`[-1 -1 -1; -1 8 -1; -1 -1 -1]`, replicate padding), averaged over
//!   bands. A band whose response is constant contributes 0.
//! * PSNR: `10 log10(1 / MSE)` with peak 1; `+inf` when the images match.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub sam_deg: f64,
    pub ergas: f64,
    pub scc: f64,
    pub psnr_db: f64,
}

impl MetricReport {
    pub fn compute(pred: &ImageTensor, gt: &ImageTensor, ratio: f64) -> Result<Self> {
        Ok(Self {
            sam_deg: sam(pred, gt)?,
            ergas: ergas(pred, gt, ratio)?,
            scc: scc(pred, gt)?,
            psnr_db: psnr(pred, gt)?,
        })
    }
}

pub fn sam(pred: &ImageTensor, gt: &ImageTensor) -> Result<f64> {
    sam_with(pred, gt, false)
}

/// SAM; with `strict`, a zero-norm spectrum is an error instead of angle 0.
pub fn sam_with(pred: &ImageTensor, gt: &ImageTensor, strict: bool) -> Result<f64> {
    pred.check_same(gt, "sam")?;
    if gt.bands() < 2 {
        return Err(Error::Metric("sam needs at least 2 bands".into()));
    }
    let n = gt.pixels();
    let mut total = 0.0;
    for i in 0..n {
        let (mut dot, mut pp, mut gg) = (0.0f64, 0.0f64, 0.0f64);
        for c in 0..gt.bands() {
            let p = pred.data()[c * n + i] as f64;
            let g = gt.data()[c * n + i] as f64;
            dot += p * g;
            pp += p * p;
            gg += g * g;
        }
        let (np, ng) = (pp.sqrt(), gg.sqrt());
        if np < NORM_EPS || ng < NORM_EPS {
            if strict {
                return Err(Error::Metric(format!("sam: zero spectrum at pixel {i}")));
            }
            continue;
        }
        total += (dot / (np * ng)).clamp(-1.0, 1.0).acos();
    }
    Ok((total / n as f64).to_degrees())
}

pub fn ergas(pred: &ImageTensor, gt: &ImageTensor, ratio: f64) -> Result<f64> {
    pred.check_same(gt, "ergas")?;
    if !(ratio > 0.0) {
        return Err(Error::Metric(format!(
            "ergas ratio must be > 0, got {ratio}"
        )));
    }
    let n = gt.pixels() as f64;
    let mut acc = 0.0;
    for c in 0..gt.bands() {
        let (p, g) = (pred.band(c), gt.band(c));
        let mu = g.iter().map(|&v| v as f64).sum::<f64>() / n;
        if mu == 0.0 {
            return Err(Error::Metric(format!("ergas: band {c} has zero mean")));
        }
        let mse = p
            .iter()
            .zip(g)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / n;
        acc += mse / (mu * mu);
    }
    Ok(100.0 / ratio * (acc / gt.bands() as f64).sqrt())
}

/// 3x3 Laplacian high-pass with replicate padding, in f64.
pub fn laplacian(band: &[f32], height: usize, width: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, height as isize - 1) as usize;
        let x = x.clamp(0, width as isize - 1) as usize;
        band[y * width + x] as f64
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s -= at(y + dy, x + dx);
                }
            }
            out.push(s + 9.0 * at(y, x));
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if denom <= f64::MIN_POSITIVE || saa < 1e-24 || sbb < 1e-24 {
        return None;
    }
    Some((sab / denom).clamp(-1.0, 1.0))
}

pub fn scc(pred: &ImageTensor, gt: &ImageTensor) -> Result<f64> {
    pred.check_same(gt, "scc")?;
    let (c, h, w) = gt.shape();
    if h < 3 || w < 3 {
        return Err(Error::Metric(format!("scc needs H, W >= 3, got {h}x{w}")));
    }
    let mut total = 0.0;
    for band in 0..c {
        let hp = laplacian(pred.band(band), h, w);
        let hg = laplacian(gt.band(band), h, w);
        match pearson(&hp, &hg) {
            Some(r) => total += r,
            None => eprintln!("warning: scc band {band} has a constant high-pass response"),
        }
    }
    Ok(total / c as f64)
}

pub fn psnr(pred: &ImageTensor, gt: &ImageTensor) -> Result<f64> {
    let mse = pred.mse(gt)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Writes `image,sam_deg,ergas,scc,psnr_db` rows and a final
/// `mean±std` row.
pub fn write_report_csv(
    rows: &[(String, MetricReport)],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "image,sam_deg,ergas,scc,psnr_db")?;
    for (name, m) in rows {
        writeln!(
            out,
            "{name},{:.6},{:.6},{:.6},{:.6}",
            m.sam_deg, m.ergas, m.scc, m.psnr_db
        )?;
    }
    if !rows.is_empty() {
        let col = |f: fn(&MetricReport) -> f64| {
            let (m, s) = mean_std(rows.iter().map(move |(_, r)| f(r)));
            format!("{m:.6}±{s:.6}")
        };
        writeln!(
            out,
            "mean±std,{},{},{},{}",
            col(|r| r.sam_deg),
            col(|r| r.ergas),
            col(|r| r.scc),
            col(|r| r.psnr_db)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededGaussian;
    use crate::tensor::gaussian_field;

    fn random(seed: u64, shape: (usize, usize, usize)) -> ImageTensor {
        gaussian_field(&mut SeededGaussian::new(seed), shape, 0.5, 0.2).unwrap()
    }

    #[test]
    fn sam_basics() {
        let g = random(1, (4, 6, 6));
        assert!(sam(&g, &g).unwrap() < 1e-3);
        assert!(sam(&g.scale(2.0), &g).unwrap() < 1e-3);
        let a = ImageTensor::new(4, 1, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = ImageTensor::new(4, 1, 1, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn sam_degenerate_pixels() {
        let z = ImageTensor::zeros(2, 1, 2);
        let g = ImageTensor::filled(2, 1, 2, 1.0);
        assert_eq!(sam(&z, &g).unwrap(), 0.0);
        assert!(sam_with(&z, &g, true).is_err());
        assert!(sam(&ImageTensor::zeros(1, 2, 2), &ImageTensor::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn ergas_values() {
        let g = ImageTensor::filled(1, 3, 3, 0.5);
        let p = ImageTensor::filled(1, 3, 3, 0.6);
        assert!((ergas(&p, &g, 4.0).unwrap() - 5.0).abs() < 1e-5);
        assert_eq!(ergas(&g, &g, 4.0).unwrap(), 0.0);
        let a = random(2, (3, 5, 5));
        let b = random(3, (3, 5, 5));
        let e1 = ergas(&a, &b, 4.0).unwrap();
        let e2 = ergas(&a.scale(2.0), &b.scale(2.0), 4.0).unwrap();
        assert!((e1 - e2).abs() < 1e-9 * e1);
        let zero_band = ImageTensor::zeros(1, 3, 3);
        let err = ergas(&p, &zero_band, 4.0).unwrap_err();
        assert!(err.to_string().contains("band 0"));
    }

    #[test]
    fn scc_values() {
        let g = random(4, (2, 8, 8));
        assert!((scc(&g, &g).unwrap() - 1.0).abs() < 1e-9);
        let shifted = g.map(|v| v + 0.25);
        assert!((scc(&shifted, &g).unwrap() - 1.0).abs() < 1e-6);
        assert!(scc(&ImageTensor::zeros(1, 2, 8), &ImageTensor::zeros(1, 2, 8)).is_err());
    }

    #[test]
    fn psnr_values() {
        let g = ImageTensor::filled(2, 4, 4, 0.5);
        assert_eq!(psnr(&g, &g).unwrap(), f64::INFINITY);
        let p = g.map(|v| v + 0.1);
        assert!((psnr(&p, &g).unwrap() - 20.0).abs() < 1e-5);
        let p = g.map(|v| v + 0.01);
        assert!((psnr(&p, &g).unwrap() - 40.0).abs() < 1e-3);
    }

    #[test]
    fn report_csv_has_summary() {
        let g = random(5, (2, 4, 4));
        let m = MetricReport::compute(&g.map(|v| v + 0.01), &g, 4.0).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&[("a".into(), m), ("b".into(), m)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean±std,"));
    }
}
