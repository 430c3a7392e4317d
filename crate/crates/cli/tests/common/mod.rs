#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use sha2::{Digest, Sha256};
use vos_cli::masks::{write_label_png, LabelMap};

pub fn vos() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vos"))
}

pub fn run(args: &[&str]) -> Output {
    vos().args(args).output().expect("spawn vos")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Square of `side` pixels at `(y0 + t, x0 + t)` on a dark background.
pub fn square_labels(h: usize, w: usize, t: usize, side: usize) -> Vec<u8> {
    let (y0, x0) = (h / 4 + t, w / 4 + t);
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            u8::from((y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
        })
        .collect()
}

pub fn write_rgb(path: &Path, h: usize, w: usize, labels: &[u8]) {
    let colours = [[20u8, 25, 30], [240, 230, 215], [30, 160, 60]];
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(colours[labels[y as usize * w + x as usize] as usize % 3])
    });
    img.save(path).unwrap();
}

/// A video with a moving square; frames are PNG so decoding is exact.
pub fn write_video(root: &Path, id: &str, frames: usize, h: usize, w: usize, annotate: bool) {
    let img_dir = root.join("JPEGImages").join(id);
    let ann_dir = root.join("Annotations").join(id);
    fs::create_dir_all(&img_dir).unwrap();
    fs::create_dir_all(&ann_dir).unwrap();
    for t in 0..frames {
        let labels = square_labels(h, w, t, 8);
        write_rgb(&img_dir.join(format!("{t:05}.png")), h, w, &labels);
        if annotate && t == 0 {
            write_label_png(
                &ann_dir.join(format!("{t:05}.png")),
                &LabelMap { height: h, width: w, labels },
            )
            .unwrap();
        }
    }
}

/// Ground truth for every frame, in the prediction layout.
pub fn write_ground_truth(root: &Path, id: &str, frames: usize, h: usize, w: usize) {
    let dir = root.join(id);
    fs::create_dir_all(&dir).unwrap();
    for t in 0..frames {
        write_label_png(
            &dir.join(format!("{t:05}.png")),
            &LabelMap { height: h, width: w, labels: square_labels(h, w, t, 8) },
        )
        .unwrap();
    }
}

/// SHA-256 of every file under `root`, keyed by relative path.
pub fn tree_hash(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), hex);
            }
        }
    }
    out
}
