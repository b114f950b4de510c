//! Contact sheet of sampled composites with their ground-truth boxes drawn.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::exemplar::Registry;
use crate::geometry::PixelBox;
use crate::synth::{render_indexed, SynthConfig, SynthRecord};

pub const BOX_COLOUR: Rgb<u8> = Rgb([0, 255, 0]);

#[derive(Debug, Clone)]
pub struct ContactSheet {
    pub image: RgbImage,
    pub records: Vec<SynthRecord>,
    /// Top-left corner of each record's cell.
    pub cells: Vec<(u32, u32)>,
}

/// Draws a one-pixel outline exactly on the box's border pixels.
pub fn draw_box(img: &mut RgbImage, b: &PixelBox, colour: Rgb<u8>) {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, colour);
        }
    };
    for x in b.xmin..=b.xmax {
        put(x, b.ymin);
        put(x, b.ymax);
    }
    for y in b.ymin..=b.ymax {
        put(b.xmin, y);
        put(b.xmax, y);
    }
}

/// Renders `n` records, cycling through classes, onto a near-square grid.
/// Cells are sized to the largest image; unused cell area stays black.
pub fn preview(registry: &Registry, config: &SynthConfig, n: usize) -> Result<ContactSheet> {
    if n == 0 {
        return Err(Error::EmptyGrid);
    }
    config.validate()?;
    let classes = registry.exemplars.len();
    if classes == 0 {
        return Err(Error::InvalidConfig("registry has no exemplar classes".into()));
    }
    let mut images = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let ex = &registry.exemplars[i % classes];
        let mut rendered = render_indexed(registry, ex, config, (i / classes) as u32)?;
        draw_box(&mut rendered.image, &rendered.record.bbox, BOX_COLOUR);
        images.push(rendered.image);
        records.push(rendered.record);
    }
    let cols = (n as f64).sqrt().ceil() as u32;
    let rows = (n as u32).div_ceil(cols);
    let cell_w = images.iter().map(RgbImage::width).max().unwrap_or(1);
    let cell_h = images.iter().map(RgbImage::height).max().unwrap_or(1);
    let mut sheet = RgbImage::new(cols * cell_w, rows * cell_h);
    let mut cells = Vec::with_capacity(n);
    for (i, img) in images.iter().enumerate() {
        let (cx, cy) = ((i as u32 % cols) * cell_w, (i as u32 / cols) * cell_h);
        image::imageops::replace(&mut sheet, img, i64::from(cx), i64::from(cy));
        cells.push((cx, cy));
    }
    Ok(ContactSheet {
        image: sheet,
        records,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::Exemplar;
    use crate::synth::ContextMode;
    use image::{Rgba, RgbaImage};

    fn registry() -> Registry {
        let logos = [("alpha", [250, 30, 30, 255]), ("beta", [30, 30, 250, 255])]
            .into_iter()
            .map(|(name, px)| {
                let mut img = RgbaImage::new(24, 16);
                for y in 3..13 {
                    for x in 2..22 {
                        img.put_pixel(x, y, Rgba(px));
                    }
                }
                Exemplar::from_pixels(name, img, 0).unwrap()
            })
            .collect();
        Registry::new(logos, Vec::new()).unwrap()
    }

    fn clean() -> SynthConfig {
        SynthConfig {
            context_mode: ContextMode::CleanBlack,
            clean_canvas_size: [96, 64],
            master_seed: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn grid_is_deterministic_with_boxes_on_annotations() {
        let reg = registry();
        let a = preview(&reg, &clean(), 4).unwrap();
        let b = preview(&reg, &clean(), 4).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.image.dimensions(), (2 * 96, 2 * 64));
        assert_eq!(a.cells, [(0, 0), (96, 0), (0, 64), (96, 64)]);
        for (rec, &(cx, cy)) in a.records.iter().zip(&a.cells) {
            let bb = rec.bbox;
            for (x, y) in [
                (bb.xmin, bb.ymin),
                (bb.xmax, bb.ymin),
                (bb.xmin, bb.ymax),
                (bb.xmax, bb.ymax),
            ] {
                assert_eq!(*a.image.get_pixel(cx + x as u32, cy + y as u32), BOX_COLOUR);
            }
        }
        assert_eq!(a.records[0].class_name, "alpha");
        assert_eq!(a.records[1].class_name, "beta");
        assert_eq!(a.records[2].index, 1);
    }

    #[test]
    fn clean_background_stays_black() {
        let reg = registry();
        let sheet = preview(&reg, &clean(), 5).unwrap();
        for (x, y, p) in sheet.image.enumerate_pixels() {
            let inside = sheet.records.iter().zip(&sheet.cells).any(|(r, &(cx, cy))| {
                r.bbox
                    .translated(i64::from(cx), i64::from(cy))
                    .contains(i64::from(x), i64::from(y))
            });
            if !inside {
                assert_eq!(p.0, [0, 0, 0], "at ({x}, {y})");
            }
        }
    }

    #[test]
    fn zero_images_is_an_error() {
        assert!(matches!(preview(&registry(), &clean(), 0), Err(Error::EmptyGrid)));
    }
}
