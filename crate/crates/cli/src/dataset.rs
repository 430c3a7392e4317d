//! `<root>/JPEGImages/<video>/<frame>.{jpg,png}` plus
//! `<root>/Annotations/<video>/<first frame>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use vos_core::Tensor;

use crate::masks::{read_label_png, LabelMap};

const FRAME_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// One video as laid out on disk; nothing is decoded yet.
#[derive(Debug, Clone)]
pub struct VideoEntry {
    pub id: String,
    /// Sorted lexicographically by file name.
    pub frames: Vec<PathBuf>,
    pub annotation: PathBuf,
}

impl VideoEntry {
    /// File stem of each frame, used to name outputs.
    pub fn stems(&self) -> Vec<String> {
        self.frames.iter().map(|p| stem(p)).collect()
    }
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Sorted sub-directory names of `dir`.
pub fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Sorted files in `dir` whose extension (case-insensitive) is listed.
pub fn files_with_ext(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| exts.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// `(video id, reason)` for a video that cannot be processed.
pub type Problem = (String, String);

/// Lists every video under `root/JPEGImages`. Per-video problems (no frames,
/// missing annotation) are returned separately so other videos can proceed.
pub fn scan(root: &Path) -> Result<(Vec<VideoEntry>, Vec<Problem>)> {
    let images = root.join("JPEGImages");
    ensure!(
        images.is_dir(),
        "{} has no JPEGImages directory",
        root.display()
    );
    let mut videos = Vec::new();
    let mut problems = Vec::new();
    for id in subdirs(&images)? {
        let frames = files_with_ext(&images.join(&id), &FRAME_EXTENSIONS)?;
        let Some(first) = frames.first() else {
            problems.push((id, "no frames".to_owned()));
            continue;
        };
        let annotation = root
            .join("Annotations")
            .join(&id)
            .join(format!("{}.png", stem(first)));
        if !annotation.is_file() {
            problems.push((
                id,
                format!("missing first-frame annotation {}", annotation.display()),
            ));
            continue;
        }
        videos.push(VideoEntry {
            id,
            frames,
            annotation,
        });
    }
    Ok((videos, problems))
}

/// Decodes an image as `H x W x 3` RGB in `[0, 1]`.
pub fn load_frame(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok(Tensor::new(vec![h as usize, w as usize, 3], data)?)
}

/// Loads frames and annotation, checking that extents agree.
pub fn load_video(entry: &VideoEntry) -> Result<(Vec<Tensor>, LabelMap)> {
    let frames = entry
        .frames
        .iter()
        .map(|p| load_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let annotation = read_label_png(&entry.annotation)?;
    let (h, w, _) = frames[0].dims3()?;
    for (p, f) in entry.frames.iter().zip(&frames) {
        if f.shape()[..2] != [h, w] {
            bail!(
                "frame {} is {}x{}, expected {h}x{w}",
                p.display(),
                f.shape()[0],
                f.shape()[1]
            );
        }
    }
    ensure!(
        (annotation.height, annotation.width) == (h, w),
        "annotation is {}x{}, frames are {h}x{w}",
        annotation.height,
        annotation.width
    );
    Ok((frames, annotation))
}
