//! Procedural exemplars, contexts and manifests for integration tests.
#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use logosynth::dataset::{Annotation, DatasetManifest, ImageEntry, Source};
use logosynth::geometry::PixelBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn class_name(i: usize) -> String {
    format!("brand_{i:03}")
}

/// A logo on a transparent canvas: a few coloured bands inside a shape,
/// with some pure-black pixels.
pub fn exemplar(seed: u64) -> RgbaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.gen_range(80..160u32), rng.gen_range(48..120u32));
    let pad = 4;
    let mut img = RgbaImage::new(w + 2 * pad, h + 2 * pad);
    let bands: Vec<[u8; 3]> = (0..rng.gen_range(2..5)).map(|_| rng.gen()).collect();
    let ellipse = rng.gen_bool(0.5);
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = (
                2.0 * (x as f64 + 0.5) / w as f64 - 1.0,
                2.0 * (y as f64 + 0.5) / h as f64 - 1.0,
            );
            if ellipse && nx * nx + ny * ny > 1.0 {
                continue;
            }
            let c = if (x + y) % 23 == 0 {
                [0, 0, 0]
            } else {
                bands[(x * bands.len() as u32 / w) as usize]
            };
            img.put_pixel(x + pad, y + pad, Rgba([c[0], c[1], c[2], 255]));
        }
    }
    img
}

/// A fully opaque rectangle with transparent padding.
pub fn rect_exemplar(rng: &mut impl Rng, w: u32, h: u32) -> RgbaImage {
    let pad = rng.gen_range(0..4);
    let mut img = RgbaImage::new(w + 2 * pad, h + 2 * pad);
    let base: [u8; 3] = rng.gen();
    for y in 0..h {
        for x in 0..w {
            let v = ((x * 7 + y * 3) % 64) as u8;
            img.put_pixel(
                x + pad,
                y + pad,
                Rgba([base[0].wrapping_add(v), base[1], base[2].wrapping_sub(v), 255]),
            );
        }
    }
    img
}

/// Smooth, logo-free background.
pub fn context(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.005..0.05));
    RgbImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let ch = |a: f64, b: f64| (128.0 + 100.0 * (a * x + b * y).sin()) as u8;
        Rgb([ch(f[0], f[1]), ch(f[2], f[3]), ch(f[4], f[5])])
    })
}

pub fn write_exemplars(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        exemplar(i as u64)
            .save(dir.join(format!("{}.png", class_name(i))))
            .unwrap();
    }
}

pub fn write_contexts(dir: &Path, n: usize, w: u32, h: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        context(1000 + i as u64, w, h)
            .save(dir.join(format!("scene_{i:03}.png")))
            .unwrap();
    }
}

/// `classes × per_class` images, one annotation each.
pub fn grid_manifest(classes: usize, per_class: usize) -> DatasetManifest {
    let mut m = DatasetManifest {
        name: "real".into(),
        classes: (0..classes).map(class_name).collect(),
        images: Vec::new(),
        annotations: Vec::new(),
        seed: 0,
        config_digest: String::new(),
    };
    for c in 0..classes {
        for k in 0..per_class {
            let id = format!("{}_{k:03}", class_name(c));
            m.images.push(ImageEntry {
                image_id: id.clone(),
                path: format!("img/{id}.jpg"),
                width: 640,
                height: 480,
            });
            m.annotations.push(Annotation {
                image_id: id,
                class_name: class_name(c),
                bbox: PixelBox::new(10, 20, 110, 90),
                source: Source::Real,
                difficult: false,
            });
        }
    }
    m
}

/// Runs the CLI in-process.
pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["logosynth"];
    argv.extend_from_slice(args);
    logosynth::cli::run(argv)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
