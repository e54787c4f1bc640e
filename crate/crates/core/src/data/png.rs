use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use mbp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Decodes an image file to a frame with values `v / 255` (or `/ 65535`).
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let px = rgb.as_raw();
    Frame::new(Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        px[(i % (h * w)) * 3 + c]
    }))
}

/// Writes an 8-bit RGB PNG, clamping to `[0, 1]` and rounding to the nearest level.
pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let data = frame.data();
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = data[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// All `.png` files of a directory in file-name order.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<(PathBuf, Frame)>> {
    let mut paths = png_files(dir)?;
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let f = read_frame(&p)?;
            Ok((p, f))
        })
        .collect()
}

pub(crate) fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    Ok(out)
}
