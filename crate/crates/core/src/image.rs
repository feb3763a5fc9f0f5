//! Grayscale images as `[height, width]` tensors, binary PGM (P5) I/O, and a
//! few synthetic image generators used for training and tests.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::tensor::Tensor;

pub fn image_dims(img: &Tensor) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w] => Ok((*w, *h)),
        s => Err(Error::dim(format!("expected a [height, width] image, got {s:?}"))),
    }
}

/// Parses a binary PGM. Samples are returned in `[0, maxval]` units.
pub fn read_pgm_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format("PGM", "only binary P5 images are supported"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse().map_err(|_| Error::format("PGM", format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("bad header values {w}x{h} max {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    if bytes.len() < start + need {
        return Err(Error::format("PGM", format!("raster needs {need} bytes")));
    }
    let raster = &bytes[start..start + need];
    let data = if bpp == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Tensor::new(vec![h, w], data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    read_pgm_bytes(&fs::read(path)?)
}

/// Writes an 8-bit P5 image, rounding and clamping samples to `[0, 255]`.
pub fn pgm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let (w, h) = image_dims(img)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    fs::write(path, pgm_bytes(img)?)?;
    Ok(())
}

/// Smooth random texture in `[0, 255]`: a sum of box-blurred noise octaves.
pub fn textured_image(width: usize, height: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; width * height];
    for (radius, weight) in [(0usize, 0.35), (1, 0.5), (3, 1.0), (6, 0.8)] {
        let noise: Vec<f64> = (0..width * height).map(|_| rng.random_range(-1.0..1.0)).collect();
        let blurred = box_blur(&noise, width, height, radius);
        let (_, sd) = crate::tensor::mean_std(&blurred).expect("non-empty");
        for (a, b) in acc.iter_mut().zip(&blurred) {
            *a += weight * b / sd.max(1e-12);
        }
    }
    let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = acc.iter().map(|v| 255.0 * (v - lo) / (hi - lo).max(1e-12)).collect();
    Tensor::new(vec![height, width], data).expect("shape matches")
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for d in -(r as isize)..=(r as isize) {
                    let (xx, yy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        s += src[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
                out[y * w + x] = s / n;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Cyclically shifts content so that `out(x + dx, y + dy) = img(x, y)`.
pub fn roll(img: &Tensor, dx: isize, dy: isize) -> Tensor {
    let (w, h) = image_dims(img).expect("rank-2 image");
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let tx = (x as isize + dx).rem_euclid(w as isize) as usize;
            let ty = (y as isize + dy).rem_euclid(h as isize) as usize;
            out[ty * w + tx] = img.data()[y * w + x];
        }
    }
    Tensor::new(vec![h, w], out).expect("shape matches")
}

/// A textured image and its copy rolled by `(dx, dy)`, with ground truth that
/// is valid only where the displaced pixel stays inside (no wrap-around).
pub fn synthetic_pair(width: usize, height: usize, dx: isize, dy: isize, seed: u64) -> (Tensor, Tensor, FlowMap) {
    let a = textured_image(width, height, seed);
    let b = roll(&a, dx, dy);
    let mut gt = FlowMap::uniform(width, height, dx as f64, dy as f64);
    for y in 0..height {
        for x in 0..width {
            let (tx, ty) = (x as isize + dx, y as isize + dy);
            gt.valid[y * width + x] = tx >= 0 && ty >= 0 && (tx as usize) < width && (ty as usize) < height;
        }
    }
    (a, b, gt)
}
