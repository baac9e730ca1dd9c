use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, ImageReader, RgbImage};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Files skipped while loading, with the reason.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
}

/// Decodes a PNG or binary PPM into a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| fail(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::new([3, h, w], (0..3 * h * w).map(|i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    }).collect())
}

/// Encodes a `[3, H, W]` tensor in `[0, 1]` as 8-bit PNG.
pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("write_png", s, &[3]));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let buf: Vec<u8> = (0..h * w)
        .flat_map(|p| (0..3).map(move |c| (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from shape");
    img.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// One subdirectory per class; class ids follow lexicographic folder order.
/// Undecodable files are skipped and reported; a class folder without any
/// readable image is an error.
pub fn load_folder_dataset(root: &Path) -> Result<(Dataset, LoadReport)> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} contains no class folders", root.display())));
    }
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_supported(p)) {
            match read_image(&file) {
                Ok(image) => samples.push(Sample { image, label }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    report.skipped.push((file, e.to_string()));
                }
            }
        }
        if samples.len() == before {
            return Err(Error::Data(format!("class folder {} has no readable images", dir.display())));
        }
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    Ok((Dataset::new(samples, names)?, report))
}

/// Loads images listed in a manifest of `relative-path<TAB>class-name` lines
/// (paths relative to `root`). Class ids follow sorted class names.
pub fn load_manifest_dataset(root: &Path, manifest: &Path) -> Result<(Dataset, LoadReport)> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (path, label) = line.split_once('\t').ok_or_else(|| Error::Format {
            path: manifest.to_path_buf(),
            reason: format!("line {}: expected path<TAB>label", n + 1),
        })?;
        entries.push((root.join(path), label.trim().to_string()));
    }
    let names: Vec<String> = entries.iter().map(|e| e.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if names.is_empty() {
        return Err(Error::Data(format!("manifest {} lists no images", manifest.display())));
    }
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for (path, label) in entries {
        let id = names.binary_search(&label).expect("label collected above");
        match read_image(&path) {
            Ok(image) => samples.push(Sample { image, label: id }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path, e.to_string()));
            }
        }
    }
    let ds = Dataset::new(samples, names)?;
    if let Some(c) = ds.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {} has no readable images", ds.class_names[c])));
    }
    Ok((ds, report))
}

/// Writes `root/<class>/<index>.png` for every sample.
pub fn write_folder_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for name in &ds.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut next = vec![0usize; ds.num_classes()];
    for s in &ds.samples {
        let path = root.join(&ds.class_names[s.label]).join(format!("{:05}.png", next[s.label]));
        next[s.label] += 1;
        write_png(&path, &s.image)?;
    }
    Ok(())
}
