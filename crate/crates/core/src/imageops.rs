//! Grid stitching and bilinear resizing of `[H, W, C]` images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `rows × cols` arrangement of a competition group. Group members fill the
/// grid in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(format!("layout {rows}x{cols} has an empty side")));
        }
        Ok(GridLayout { rows, cols })
    }

    pub fn group_size(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for GridLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| Error::Invalid(format!("layout `{s}` is not RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("layout `{s}` is not RxC")))
        };
        GridLayout::new(parse(r)?, parse(c)?)
    }
}

impl TryFrom<String> for GridLayout {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridLayout> for String {
    fn from(l: GridLayout) -> String {
        l.to_string()
    }
}

fn hwc(img: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match img.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(Error::shape(op, format!("expected [H, W, C], got {s:?}"))),
    }
}

/// Tiles `images` into a `(rows·H) × (cols·W)` composite. Image `r·cols + c`
/// lands in grid cell `(r, c)`.
pub fn stitch(images: &[&Tensor], layout: GridLayout) -> Result<Tensor> {
    if images.len() != layout.group_size() {
        return Err(Error::shape(
            "stitch",
            format!("{} images for layout {layout}", images.len()),
        ));
    }
    let (h, w, c) = hwc(images[0], "stitch")?;
    if images.iter().any(|im| im.shape() != images[0].shape()) {
        return Err(Error::shape("stitch", "images differ in shape"));
    }
    let (oh, ow) = (layout.rows * h, layout.cols * w);
    let mut out = vec![0.0; oh * ow * c];
    for (g, img) in images.iter().enumerate() {
        let (r, col) = (g / layout.cols, g % layout.cols);
        for i in 0..h {
            let dst = ((r * h + i) * ow + col * w) * c;
            let src = i * w * c;
            out[dst..dst + w * c].copy_from_slice(&img.data()[src..src + w * c]);
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Cuts grid cell `(row, col)` of size `h × w` back out of a stitched image.
pub fn crop_cell(stitched: &Tensor, layout: GridLayout, row: usize, col: usize) -> Result<Tensor> {
    let (sh, sw, c) = hwc(stitched, "crop_cell")?;
    if row >= layout.rows || col >= layout.cols || sh % layout.rows != 0 || sw % layout.cols != 0 {
        return Err(Error::shape("crop_cell", format!("cell ({row},{col}) of {layout}")));
    }
    let (h, w) = (sh / layout.rows, sw / layout.cols);
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        let src = ((row * h + i) * sw + col * w) * c;
        out.extend_from_slice(&stitched.data()[src..src + w * c]);
    }
    Tensor::new(vec![h, w, c], out)
}

/// Source coordinate and blend weight along one axis, half-pixel centers,
/// clamped to the image edge.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize to `(height, width)` using half-pixel-center sampling with
/// edge clamping. Resizing to the same size returns the input unchanged.
pub fn bilinear_resize(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w, c) = hwc(img, "bilinear_resize")?;
    if height == 0 || width == 0 || h == 0 || w == 0 {
        return Err(Error::Invalid(format!(
            "cannot resize {h}x{w} to {height}x{width}"
        )));
    }
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let ys = taps(height, h);
    let xs = taps(width, w);
    let src = img.data();
    let px = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(height * width * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = px(y0, x0, ch) * (1.0 - fx) + px(y0, x1, ch) * fx;
                let bottom = px(y1, x0, ch) * (1.0 - fx) + px(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![height, width, c], out)
}

/// Per-channel standardization of an `[H, W, C]` image (or any tensor whose
/// last axis is the channel axis).
pub fn channel_normalize(img: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let c = *img.shape().last().unwrap_or(&0);
    if mean.len() != c || std.len() != c {
        return Err(Error::shape(
            "channel_normalize",
            format!("{c} channels, {} means, {} stds", mean.len(), std.len()),
        ));
    }
    if let Some(s) = std.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Invalid(format!("channel std {s} must be positive")));
    }
    let data = img
        .data()
        .chunks(c)
        .flat_map(|px| px.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s))
        .collect();
    Tensor::new(img.shape().to_vec(), data)
}
