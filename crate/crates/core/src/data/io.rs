//! Dataset directories: `root/images/<subject>_<slice>.<ext>` with a matching
//! `root/masks/<subject>_<slice>.<ext>`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{io as tensor_io, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// 16-bit grayscale images, 8-bit masks with 0 and 255.
    Png,
    /// Raw `(1, 1, h, w)` tensors; masks hold 0.0 and 1.0.
    Raw,
}

impl Layout {
    pub fn extension(self) -> &'static str {
        match self {
            Layout::Png => "png",
            Layout::Raw => "clct",
        }
    }

    /// Raw when `images/` holds any `.clct` file, PNG otherwise.
    pub fn detect(root: &Path) -> Layout {
        let raw = fs::read_dir(root.join("images"))
            .map(|it| it.flatten().any(|e| e.path().extension().is_some_and(|x| x == "clct")))
            .unwrap_or(false);
        if raw {
            Layout::Raw
        } else {
            Layout::Png
        }
    }
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// `"sub_01_7"` → `("sub_01", 7)`.
fn parse_stem(path: &Path) -> Result<(String, usize)> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let (subject, slice) = stem
        .rsplit_once('_')
        .ok_or_else(|| data_err(path, "file name is not <subject>_<slice>"))?;
    let slice = slice.parse().map_err(|_| data_err(path, format!("slice `{slice}` is not an integer")))?;
    if subject.is_empty() {
        return Err(data_err(path, "empty subject id"));
    }
    Ok((subject.to_string(), slice))
}

fn read_image(path: &Path, layout: Layout) -> Result<Tensor<f32>> {
    match layout {
        Layout::Raw => {
            let t = tensor_io::load::<f32>(path).map_err(|e| data_err(path, e.to_string()))?;
            let s = t.shape();
            if s.n != 1 || s.c != 1 {
                return Err(data_err(path, format!("expected a 1x1xHxW tensor, got {s}")));
            }
            Ok(t)
        }
        Layout::Png => {
            let img = image::open(path).map_err(|e| data_err(path, e.to_string()))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data: Vec<f32> = match img {
                image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
                image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
                other => other.into_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
            };
            Tensor::new(Shape::new(1, 1, h, w), data)
        }
    }
}

fn read_mask(path: &Path, layout: Layout) -> Result<BinaryMask> {
    match layout {
        Layout::Raw => {
            let t = read_image(path, layout)?;
            BinaryMask::from_tensor_plane(&t, 0, 0).map_err(|e| data_err(path, e.to_string()))
        }
        Layout::Png => {
            let img = image::open(path).map_err(|e| data_err(path, e.to_string()))?;
            let image::DynamicImage::ImageLuma8(b) = img else {
                return Err(data_err(path, "mask must be an 8-bit grayscale PNG"));
            };
            let (w, h) = (b.width() as usize, b.height() as usize);
            let data = b
                .into_raw()
                .into_iter()
                .map(|v| match v {
                    0 => Ok(0),
                    255 => Ok(1),
                    _ => Err(data_err(path, format!("mask value {v} is neither 0 nor 255"))),
                })
                .collect::<Result<_>>()?;
            BinaryMask::new(h, w, data)
        }
    }
}

/// Every image with its mask, ordered by `(subject, slice)`. A missing or empty
/// `images/` directory gives an empty list.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<SamplePair>> {
    if !root.is_dir() {
        return Err(data_err(root, "dataset directory does not exist"));
    }
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Ok(Vec::new());
    }
    let ext = layout.extension();
    let mut paths: Vec<PathBuf> = fs::read_dir(&images_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == ext));
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let (subject, slice) = parse_stem(&path)?;
        let mask_path = root.join("masks").join(path.file_name().expect("listed file"));
        if !mask_path.is_file() {
            return Err(data_err(&path, format!("no mask at {}", mask_path.display())));
        }
        let image = read_image(&path, layout)?;
        let mask = read_mask(&mask_path, layout)?;
        let (ih, iw) = (image.shape().h, image.shape().w);
        if (ih, iw) != mask.dims() {
            let (mh, mw) = mask.dims();
            return Err(data_err(&mask_path, format!("mask is {mh}x{mw}, image is {ih}x{iw}")));
        }
        out.push(SamplePair::new(image, mask, subject, slice)?);
    }
    out.sort_by(|a, b| (&a.subject_id, a.slice_index).cmp(&(&b.subject_id, b.slice_index)));
    Ok(out)
}

/// Writes `samples` under `root`. PNG images store `round(v·65535)` of the
/// intensity clamped to `[0, 1]`.
pub fn save_dataset(root: &Path, samples: &[SamplePair], layout: Layout) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for s in samples {
        let name = format!("{}.{}", s.stem(), layout.extension());
        let (h, w) = s.dims();
        match layout {
            Layout::Raw => {
                tensor_io::save(&images.join(&name), &s.image)?;
                tensor_io::save(&masks.join(&name), &s.mask.to_tensor::<f32>())?;
            }
            Layout::Png => {
                let px: Vec<u16> = s
                    .image
                    .data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
                    .collect();
                let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(w as u32, h as u32, px).expect("buffer matches dims");
                img.save(images.join(&name))?;
                let mpx: Vec<u8> = s.mask.data().iter().map(|&v| v * 255).collect();
                let m: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w as u32, h as u32, mpx).expect("buffer matches dims");
                m.save(masks.join(&name))?;
            }
        }
    }
    Ok(())
}
