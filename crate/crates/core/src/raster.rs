//! Pixel operations on 8-bit rasters: colour scaling, inverse-mapped
//! warping, tight alpha boxes and source-over compositing.
//!
//! All 8-bit quantisation rounds half up.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PixelBox, PlanarMap};

/// `floor(x + 0.5)`.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[inline]
fn quantize(x: f64) -> u8 {
    round_half_up(x).clamp(0.0, 255.0) as u8
}

/// Parameters of the per-channel colour scaling `c* = r·c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColourParams {
    pub r: f64,
    /// Value written into every channel of a pure-black pixel before scaling,
    /// since scaling zero would leave it unchanged.
    pub black_substitute: u8,
}

impl ColourParams {
    pub const DEFAULT_BLACK_SUBSTITUTE: u8 = 100;

    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&r) {
            return Err(Error::InvalidConfig(format!("colour factor {r} outside [0, 2]")));
        }
        Ok(ColourParams {
            r,
            black_substitute: Self::DEFAULT_BLACK_SUBSTITUTE,
        })
    }
}

/// Scales one channel value and clamps it to `[0, 255]`.
#[inline]
pub fn scale_channel(c: u8, r: f64) -> u8 {
    quantize(r * f64::from(c))
}

/// Applies the colour transform to every pixel with non-zero alpha.
pub fn apply_colour(img: &RgbaImage, params: &ColourParams) -> RgbaImage {
    let mut out = img.clone();
    for px in out.pixels_mut() {
        let [r, g, b, a] = px.0;
        if a == 0 {
            continue;
        }
        let rgb = if r == 0 && g == 0 && b == 0 {
            [params.black_substitute; 3]
        } else {
            [r, g, b]
        };
        px.0 = [
            scale_channel(rgb[0], params.r),
            scale_channel(rgb[1], params.r),
            scale_channel(rgb[2], params.r),
            a,
        ];
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            _ => Err(Error::InvalidConfig(format!("unknown interpolation `{s}`"))),
        }
    }
}

const TRANSPARENT: Rgba<u8> = Rgba([0, 0, 0, 0]);

/// Renders `src` under `map` onto a fresh `out_w × out_h` canvas.
///
/// Each output pixel samples `src` at the inverse image of its centre.
/// Samples falling outside `src`, or behind the projection plane, are fully
/// transparent. Bilinear sampling blends alpha-premultiplied values, with
/// transparent padding past the edge, so edges fade inside the mapped
/// source rectangle and never bleed beyond it.
pub fn warp_rgba(src: &RgbaImage, map: &PlanarMap, out_w: u32, out_h: u32, interp: Interpolation) -> Result<RgbaImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidConfig("warp output must be at least 1x1".into()));
    }
    let inv = map.inverse()?;
    let (sw, sh) = (i64::from(src.width()), i64::from(src.height()));
    let fetch = |x: i64, y: i64| -> Rgba<u8> {
        if x < 0 || y < 0 || x >= sw || y >= sh {
            TRANSPARENT
        } else {
            *src.get_pixel(x as u32, y as u32)
        }
    };

    let mut out = RgbaImage::new(out_w, out_h);
    for (qx, qy, px) in out.enumerate_pixels_mut() {
        let Some((u, v)) = inv.apply(f64::from(qx) + 0.5, f64::from(qy) + 0.5) else {
            continue;
        };
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        *px = match interp {
            Interpolation::Nearest => fetch(u.floor() as i64, v.floor() as i64),
            Interpolation::Bilinear => {
                if !(u >= 0.0 && v >= 0.0 && u < sw as f64 && v < sh as f64) {
                    continue;
                }
                // centre-index coordinates
                let (cx, cy) = (u - 0.5, v - 0.5);
                let (x0, y0) = (cx.floor(), cy.floor());
                let (fx, fy) = (cx - x0, cy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                if fx == 0.0 && fy == 0.0 {
                    fetch(x0, y0)
                } else {
                    bilinear(&fetch, x0, y0, fx, fy)
                }
            }
        };
    }
    Ok(out)
}

#[inline]
fn bilinear(fetch: &impl Fn(i64, i64) -> Rgba<u8>, x0: i64, y0: i64, fx: f64, fy: f64) -> Rgba<u8> {
    let taps = [
        (fetch(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (fetch(x0 + 1, y0), fx * (1.0 - fy)),
        (fetch(x0, y0 + 1), (1.0 - fx) * fy),
        (fetch(x0 + 1, y0 + 1), fx * fy),
    ];
    let mut acc = [0.0f64; 4];
    for (p, w) in taps {
        if w == 0.0 || p.0[3] == 0 {
            continue;
        }
        let wa = w * f64::from(p.0[3]);
        acc[0] += wa * f64::from(p.0[0]);
        acc[1] += wa * f64::from(p.0[1]);
        acc[2] += wa * f64::from(p.0[2]);
        acc[3] += wa;
    }
    let alpha = quantize(acc[3]);
    if alpha == 0 {
        return TRANSPARENT;
    }
    Rgba([
        quantize(acc[0] / acc[3]),
        quantize(acc[1] / acc[3]),
        quantize(acc[2] / acc[3]),
        alpha,
    ])
}

/// Tight box over pixels whose alpha exceeds `alpha_threshold`.
pub fn tight_bbox(img: &RgbaImage, alpha_threshold: u8) -> Result<PixelBox> {
    let mut b: Option<PixelBox> = None;
    for (x, y, px) in img.enumerate_pixels() {
        if px.0[3] <= alpha_threshold {
            continue;
        }
        let (x, y) = (i64::from(x), i64::from(y));
        b = Some(match b {
            None => PixelBox::new(x, y, x, y),
            Some(b) => PixelBox::new(b.xmin.min(x), b.ymin.min(y), b.xmax.max(x), b.ymax.max(y)),
        });
    }
    b.ok_or(Error::EmptyLogo)
}

/// Blends one channel: `round(logo·a + ctx·(1 − a))` with `a = alpha / 255`.
#[inline]
pub fn blend_channel(logo: u8, ctx: u8, alpha: u8) -> u8 {
    let num = u32::from(logo) * u32::from(alpha) + u32::from(ctx) * (255 - u32::from(alpha));
    ((2 * num + 255) / 510) as u8
}

/// Source-over composites `logo` onto `context` with the logo canvas's
/// top-left corner at `top_left`, returning the placed tight box.
///
/// Only pixels with non-zero alpha are touched. The context is left
/// unmodified on error.
pub fn composite(context: &mut RgbImage, logo: &RgbaImage, top_left: (i64, i64)) -> Result<PixelBox> {
    let tight = tight_bbox(logo, 0)?;
    let placed = tight.translated(top_left.0, top_left.1);
    if !placed.inside(context.width(), context.height()) {
        return Err(Error::OutOfBounds {
            bbox: placed,
            width: context.width(),
            height: context.height(),
        });
    }
    for y in tight.ymin..=tight.ymax {
        for x in tight.xmin..=tight.xmax {
            let l = logo.get_pixel(x as u32, y as u32).0;
            if l[3] == 0 {
                continue;
            }
            let c = context.get_pixel_mut((x + top_left.0) as u32, (y + top_left.1) as u32);
            let a = l[3];
            *c = Rgb([
                blend_channel(l[0], c.0[0], a),
                blend_channel(l[1], c.0[1], a),
                blend_channel(l[2], c.0[2], a),
            ]);
        }
    }
    Ok(placed)
}
