//! One-level Haar (DB1) analysis and the predictor's condition stack.
//!
//! Each 2x2 block `[a b; c d]` maps through the orthonormal matrix
//! `0.5 * [[1,1,1,1],[1,1,-1,-1],[1,-1,1,-1],[1,-1,-1,1]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
//! ```
//!
//! The matrix is its own inverse, so synthesis applies the same formulas.
//! A constant image `v` gives `ll = 2v` and zero details. Odd heights or
//! widths are replicate-padded by one row/column and cropped on inverse.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mbif::write_mbif;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletQuad {
    pub ll: ImageTensor,
    pub lh: ImageTensor,
    pub hl: ImageTensor,
    pub hh: ImageTensor,
    /// Size of the analysed image before padding.
    pub height: usize,
    pub width: usize,
}

pub fn db1_decompose(img: &ImageTensor) -> Result<WaveletQuad> {
    let (c, h, w) = img.shape();
    let (hp, wp) = (h.div_ceil(2), w.div_ceil(2));
    let mut out: [Vec<f32>; 4] = std::array::from_fn(|_| Vec::with_capacity(c * hp * wp));
    for band in 0..c {
        let px = |y: usize, x: usize| img.get(band, y.min(h - 1), x.min(w - 1));
        for by in 0..hp {
            for bx in 0..wp {
                let (y, x) = (2 * by, 2 * bx);
                let (a, b, cc, d) = (px(y, x), px(y, x + 1), px(y + 1, x), px(y + 1, x + 1));
                out[0].push((a + b + cc + d) * 0.5);
                out[1].push((a + b - cc - d) * 0.5);
                out[2].push((a - b + cc - d) * 0.5);
                out[3].push((a - b - cc + d) * 0.5);
            }
        }
    }
    let [ll, lh, hl, hh] = out.map(|v| ImageTensor::new(c, hp, wp, v));
    Ok(WaveletQuad {
        ll: ll?,
        lh: lh?,
        hl: hl?,
        hh: hh?,
        height: h,
        width: w,
    })
}

impl WaveletQuad {
    /// Exact synthesis, cropped back to the analysed size.
    pub fn inverse(&self) -> Result<ImageTensor> {
        let (c, hp, wp) = self.ll.shape();
        for q in [&self.lh, &self.hl, &self.hh] {
            self.ll.check_same(q, "db1 inverse")?;
        }
        if self.height > 2 * hp || self.width > 2 * wp {
            return Err(Error::config("wavelet", "quad smaller than recorded size"));
        }
        let (h, w) = (self.height, self.width);
        let mut data = vec![0f32; c * h * w];
        for band in 0..c {
            for by in 0..hp {
                for bx in 0..wp {
                    let (ll, lh, hl, hh) = (
                        self.ll.get(band, by, bx),
                        self.lh.get(band, by, bx),
                        self.hl.get(band, by, bx),
                        self.hh.get(band, by, bx),
                    );
                    let vals = [
                        (ll + lh + hl + hh) * 0.5,
                        (ll + lh - hl - hh) * 0.5,
                        (ll - lh + hl - hh) * 0.5,
                        (ll - lh - hl + hh) * 0.5,
                    ];
                    for (k, v) in vals.into_iter().enumerate() {
                        let (y, x) = (2 * by + k / 2, 2 * bx + k % 2);
                        if y < h && x < w {
                            data[(band * h + y) * w + x] = v;
                        }
                    }
                }
            }
        }
        ImageTensor::new(c, h, w, data)
    }

    pub fn components(&self) -> [(&'static str, &ImageTensor); 4] {
        [
            ("ll", &self.ll),
            ("lh", &self.lh),
            ("hl", &self.hl),
            ("hh", &self.hh),
        ]
    }
}

/// Nearest-neighbour upsampling by an integer factor, cropped to `height x width`.
pub fn upsample_nearest(
    img: &ImageTensor,
    factor: usize,
    height: usize,
    width: usize,
) -> ImageTensor {
    assert!(factor > 0 && height <= img.height() * factor && width <= img.width() * factor);
    ImageTensor::from_fn(img.bands(), height, width, |c, y, x| {
        img.get(c, y / factor, x / factor)
    })
}

/// PAN, LRMS and the Haar components of both, all at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub pan: ImageTensor,
    pub lrms: ImageTensor,
    pub lrms_quad: WaveletQuad,
    pub pan_quad: WaveletQuad,
    stack: ImageTensor,
}

impl ConditionSet {
    /// `lrms` is the pre-upsampled multispectral image (`C x H x W`), `pan`
    /// is `1 x H x W`.
    pub fn build(lrms: &ImageTensor, pan: &ImageTensor) -> Result<Self> {
        let (_, h, w) = lrms.shape();
        if pan.shape() != (1, h, w) {
            return Err(Error::Shape {
                op: "build_condition",
                expected: (1, h, w),
                got: pan.shape(),
            });
        }
        let lrms_quad = db1_decompose(lrms)?;
        let pan_quad = db1_decompose(pan)?;
        let up = |q: &WaveletQuad| -> Vec<ImageTensor> {
            q.components()
                .iter()
                .map(|(_, t)| upsample_nearest(t, 2, h, w))
                .collect()
        };
        let lrms_up = up(&lrms_quad);
        let pan_up = up(&pan_quad);
        let mut parts: Vec<&ImageTensor> = vec![pan, lrms];
        parts.extend(lrms_up.iter());
        parts.extend(pan_up.iter());
        let stack = ImageTensor::concat_bands(&parts)?;
        Ok(Self {
            pan: pan.clone(),
            lrms: lrms.clone(),
            lrms_quad,
            pan_quad,
            stack,
        })
    }

    /// Channel count of the stack for `bands` multispectral bands.
    pub fn channels_for(bands: usize) -> usize {
        1 + bands + 4 * (bands + 1)
    }

    /// `[pan, lrms, LL/LH/HL/HH(lrms), LL/LH/HL/HH(pan)]`, upsampled to `H x W`.
    pub fn stack(&self) -> &ImageTensor {
        &self.stack
    }

    pub fn channels(&self) -> usize {
        self.stack.bands()
    }

    /// Writes every component as `<dir>/<name>.mbif`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        let mut put = |name: String, t: &ImageTensor| -> Result<()> {
            write_mbif(t, dir.join(format!("{name}.mbif")))?;
            names.push(name);
            Ok(())
        };
        put("pan".into(), &self.pan)?;
        put("lrms".into(), &self.lrms)?;
        for (n, t) in self.lrms_quad.components() {
            put(format!("lrms_{n}"), t)?;
        }
        for (n, t) in self.pan_quad.components() {
            put(format!("pan_{n}"), t)?;
        }
        put("stack".into(), &self.stack)?;
        Ok(names)
    }
}
