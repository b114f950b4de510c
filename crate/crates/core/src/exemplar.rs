//! Logo exemplars (RGBA on a transparent background) and logo-free context
//! images, indexed into a deterministic [`Registry`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{RgbImage, RgbaImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PixelBox;
use crate::raster::tight_bbox;

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub class_name: String,
    pub class_id: u32,
    pub pixels: RgbaImage,
    /// Tight box over pixels with alpha above the load threshold.
    pub opaque_bbox: PixelBox,
    pub path: PathBuf,
}

impl Exemplar {
    /// Wraps an in-memory raster, computing its opaque box.
    pub fn from_pixels(class_name: impl Into<String>, pixels: RgbaImage, alpha_threshold: u8) -> Result<Self> {
        let opaque_bbox = tight_bbox(&pixels, alpha_threshold)?;
        Ok(Exemplar {
            class_name: class_name.into(),
            class_id: 0,
            pixels,
            opaque_bbox,
            path: PathBuf::new(),
        })
    }
}

/// Reads a PNG exemplar. The raster is kept whole; only the box is computed.
pub fn load_exemplar(path: &Path, class_name: &str, alpha_threshold: u8) -> Result<Exemplar> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_owned(),
        source,
    })?;
    if !img.color().has_alpha() {
        return Err(Error::NoAlpha { path: path.to_owned() });
    }
    let mut ex = Exemplar::from_pixels(class_name, img.into_rgba8(), alpha_threshold).map_err(|e| e.in_file(path))?;
    ex.path = path.to_owned();
    Ok(ex)
}

/// A logo-free background. Directory-loaded contexts are decoded on demand
/// so large pools do not have to sit in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextImage {
    /// Path relative to the context root, `/`-separated.
    pub name: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    /// First directory component under the context root, if nested.
    pub tag: Option<String>,
    pixels: Option<Arc<RgbImage>>,
}

impl ContextImage {
    pub fn in_memory(name: impl Into<String>, pixels: RgbImage) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::InvalidConfig("context image must be at least 1x1".into()));
        }
        Ok(ContextImage {
            name: name.into(),
            path: PathBuf::new(),
            width: pixels.width(),
            height: pixels.height(),
            tag: None,
            pixels: Some(Arc::new(pixels)),
        })
    }

    pub fn load(&self) -> Result<RgbImage> {
        if let Some(p) = &self.pixels {
            return Ok(RgbImage::clone(p));
        }
        decode_rgb(&self.path)
    }
}

fn decode_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.into_rgb8())
        .map_err(|source| Error::Decode {
            path: path.to_owned(),
            source,
        })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    pub exemplars: Vec<Exemplar>,
    pub contexts: Vec<ContextImage>,
}

impl Registry {
    /// Builds a registry from in-memory exemplars, sorting by class name and
    /// assigning consecutive ids.
    pub fn new(mut exemplars: Vec<Exemplar>, contexts: Vec<ContextImage>) -> Result<Self> {
        exemplars.sort_by(|a, b| a.class_name.cmp(&b.class_name));
        for pair in exemplars.windows(2) {
            if pair[0].class_name == pair[1].class_name {
                return Err(Error::DuplicateClass {
                    class: pair[0].class_name.clone(),
                    first: pair[0].path.clone(),
                    second: pair[1].path.clone(),
                });
            }
        }
        for (id, ex) in exemplars.iter_mut().enumerate() {
            ex.class_id = id as u32;
        }
        Ok(Registry { exemplars, contexts })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.exemplars.iter().map(|e| e.class_name.clone()).collect()
    }

    pub fn class(&self, name: &str) -> Option<&Exemplar> {
        self.exemplars
            .binary_search_by(|e| e.class_name.as_str().cmp(name))
            .ok()
            .map(|i| &self.exemplars[i])
    }
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Recursively lists files under `dir` with one of `exts`, sorted.
fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            let ft = entry.file_type().map_err(|e| Error::io(&path, e))?;
            if ft.is_dir() {
                stack.push(path);
            } else if has_extension(&path, exts) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn relative_name(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Loads `exemplar_dir/**/<class>.png` and `context_dir/**/*.{png,jpg,jpeg}`.
pub fn load_registry(exemplar_dir: &Path, context_dir: Option<&Path>, alpha_threshold: u8) -> Result<Registry> {
    let files = list_files(exemplar_dir, &["png"])?;
    let mut by_class: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in files {
        let class = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(first) = by_class.get(&class) {
            return Err(Error::DuplicateClass {
                class,
                first: first.clone(),
                second: path,
            });
        }
        by_class.insert(class, path);
    }
    if by_class.is_empty() {
        return Err(Error::NoClasses {
            dir: exemplar_dir.to_owned(),
        });
    }
    let exemplars = by_class
        .into_par_iter()
        .map(|(class, path)| load_exemplar(&path, &class, alpha_threshold))
        .collect::<Result<Vec<_>>>()?;

    let contexts = match context_dir {
        None => Vec::new(),
        Some(dir) => list_files(dir, &["png", "jpg", "jpeg"])?
            .into_par_iter()
            .map(|path| {
                let img = decode_rgb(&path)?;
                let name = relative_name(dir, &path);
                let tag = name.split_once('/').map(|(t, _)| t.to_owned());
                Ok(ContextImage {
                    name,
                    width: img.width(),
                    height: img.height(),
                    path,
                    tag,
                    pixels: None,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Registry::new(exemplars, contexts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgba;

    fn write_png(path: &Path, img: &RgbaImage) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        img.save(path).unwrap();
    }

    #[test]
    fn exemplar_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("full.png");
        write_png(&p, &RgbaImage::from_pixel(64, 64, Rgba([5, 5, 5, 255])));
        assert_eq!(
            load_exemplar(&p, "full", 0).unwrap().opaque_bbox,
            PixelBox::new(0, 0, 63, 63)
        );

        let mut one = RgbaImage::new(64, 64);
        one.put_pixel(10, 20, Rgba([1, 2, 3, 200]));
        let p = dir.path().join("one.png");
        write_png(&p, &one);
        let ex = load_exemplar(&p, "one", 0).unwrap();
        assert_eq!(ex.opaque_bbox, PixelBox::new(10, 20, 10, 20));
        assert_eq!((ex.pixels.width(), ex.pixels.height()), (64, 64), "never cropped");

        let p = dir.path().join("empty.png");
        write_png(&p, &RgbaImage::new(64, 64));
        assert!(matches!(
            load_exemplar(&p, "empty", 0).unwrap_err().root(),
            Error::EmptyLogo
        ));
    }

    #[test]
    fn exemplar_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        RgbImage::new(4, 4).save(&p).unwrap();
        assert!(matches!(load_exemplar(&p, "rgb", 0), Err(Error::NoAlpha { .. })));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(load_exemplar(&p, "junk", 0), Err(Error::Decode { .. })));
    }

    #[test]
    fn registry_ordering_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ex, ctx) = (dir.path().join("ex"), dir.path().join("ctx"));
        std::fs::create_dir_all(&ex).unwrap();
        assert!(matches!(load_registry(&ex, None, 0), Err(Error::NoClasses { .. })));

        let logo = RgbaImage::from_pixel(3, 3, Rgba([9, 9, 9, 255]));
        for name in ["zeta", "adidas", "nike"] {
            write_png(&ex.join(format!("{name}.png")), &logo);
        }
        std::fs::create_dir_all(ctx.join("street")).unwrap();
        RgbImage::new(8, 6).save(ctx.join("street/b.jpg")).unwrap();
        RgbImage::new(5, 5).save(ctx.join("a.png")).unwrap();
        let reg = load_registry(&ex, Some(&ctx), 0).unwrap();
        assert_eq!(reg.class_names(), ["adidas", "nike", "zeta"]);
        assert_eq!(reg.exemplars.iter().map(|e| e.class_id).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(reg.contexts.len(), 2);
        assert_eq!(reg.contexts[0].name, "a.png");
        assert_eq!(reg.contexts[1].tag.as_deref(), Some("street"));
        assert_eq!(reg.contexts[1].load().unwrap().dimensions(), (8, 6));
        assert_eq!(reg.class("nike").unwrap().class_id, 1);

        assert_eq!(load_registry(&ex, Some(&ctx), 0).unwrap(), reg);

        write_png(&ex.join("nested/nike.png"), &logo);
        assert!(matches!(load_registry(&ex, None, 0), Err(Error::DuplicateClass { class, .. }) if class == "nike"));
    }
}
