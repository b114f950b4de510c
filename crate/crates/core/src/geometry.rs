//! Planar transform math for exemplar warping.
//!
//! Maps are 3×3 homogeneous matrices acting on column vectors `(x, y, 1)`.
//! Geometric variation of a logo is built from three ordered steps, scale,
//! shear and in-plane rotation, optionally followed by an out-of-plane tilt
//! realised as a pinhole-projected rotation of the logo plane. All
//! constructors act about the origin; callers centre the exemplar first.
//!
//! Pixel convention: pixel `(i, j)` covers the unit square `[i, i+1) × [j, j+1)`
//! and its centre sits at `(i + 0.5, j + 0.5)`. An inclusive [`PixelBox`]
//! therefore corresponds to the real [`Rect`] `[xmin, xmax + 1] × [ymin, ymax + 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest determinant magnitude accepted for an invertible map.
pub const MIN_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Affine,
    Homography,
}

/// An invertible projective map of the plane, stored with `m[2][2] = 1`
/// whenever that entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarMap {
    m: [[f64; 3]; 3],
    kind: MapKind,
}

impl PlanarMap {
    pub const IDENTITY: PlanarMap = PlanarMap {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        kind: MapKind::Affine,
    };

    /// Builds a map from a row-major matrix, normalising `m[2][2]` to one and
    /// classifying it as affine when the last row is exactly `(0, 0, 1)`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularMap);
        }
        let mut m = m;
        let s = m[2][2];
        if s != 0.0 && s != 1.0 {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        let kind = if m[2] == [0.0, 0.0, 1.0] {
            MapKind::Affine
        } else {
            MapKind::Homography
        };
        let map = PlanarMap { m, kind };
        if map.det().abs() <= MIN_DET {
            return Err(Error::SingularMap);
        }
        Ok(map)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        PlanarMap {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
            kind: MapKind::Affine,
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn is_affine(&self) -> bool {
        self.kind == MapKind::Affine
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `next ∘ self`: apply `self` first, then `next`.
    pub fn then(&self, next: &PlanarMap) -> PlanarMap {
        let (a, b) = (&next.m, &self.m);
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        if self.is_affine() && next.is_affine() {
            m[2] = [0.0, 0.0, 1.0];
            return PlanarMap {
                m,
                kind: MapKind::Affine,
            };
        }
        let s = m[2][2];
        if s != 0.0 {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        PlanarMap {
            m,
            kind: MapKind::Homography,
        }
    }

    pub fn inverse(&self) -> Result<PlanarMap> {
        let det = self.det();
        if det.abs() <= MIN_DET || !det.is_finite() {
            return Err(Error::SingularMap);
        }
        let m = &self.m;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = adj[i][j] / det;
            }
        }
        if self.is_affine() {
            inv[2] = [0.0, 0.0, 1.0];
            return Ok(PlanarMap {
                m: inv,
                kind: MapKind::Affine,
            });
        }
        PlanarMap::from_matrix(inv)
    }

    /// Homogeneous image of `(x, y)` as `(X, Y, W)`.
    #[inline]
    pub fn apply_homogeneous(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
            m[2][0] * x + m[2][1] * y + m[2][2],
        )
    }

    /// Maps a point; `None` when it lands on or behind the projection plane.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let (px, py, w) = self.apply_homogeneous(x, y);
        if self.is_affine() {
            return Some((px, py));
        }
        (w > 0.0).then(|| (px / w, py / w))
    }
}

/// Axis scaling `(x, y) → (sx·x, sy·y)`.
pub fn make_scale(sx: f64, sy: f64) -> Result<PlanarMap> {
    if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
        return Err(Error::NonPositiveScale { sx, sy });
    }
    Ok(PlanarMap {
        m: [[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]],
        kind: MapKind::Affine,
    })
}

/// Shear `(x, y) → (x + kx·y, y + ky·x)`.
pub fn make_shear(kx: f64, ky: f64) -> Result<PlanarMap> {
    let det = 1.0 - kx * ky;
    if det.abs() <= MIN_DET || !det.is_finite() {
        return Err(Error::SingularShear { kx, ky });
    }
    Ok(PlanarMap {
        m: [[1.0, kx, 0.0], [ky, 1.0, 0.0], [0.0, 0.0, 1.0]],
        kind: MapKind::Affine,
    })
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Counter-clockwise (in a y-up frame) rotation about the origin.
pub fn make_rotation(theta: f64) -> PlanarMap {
    let (s, c) = sin_cos_deg(theta);
    PlanarMap {
        m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        kind: MapKind::Affine,
    }
}

/// Out-of-plane tilt: rotates the logo plane by `tilt_x` about its x axis,
/// then by `tilt_y` about its y axis, and projects it through a pinhole
/// camera at distance `focal` looking at the origin. The origin is fixed.
pub fn make_tilt(tilt_x: f64, tilt_y: f64, focal: f64) -> Result<PlanarMap> {
    if !(focal > 0.0 && focal.is_finite() && tilt_x.abs() < 90.0 && tilt_y.abs() < 90.0) {
        return Err(Error::InvalidTilt { tilt_x, tilt_y, focal });
    }
    if tilt_x == 0.0 && tilt_y == 0.0 {
        return Ok(PlanarMap::IDENTITY);
    }
    let r = tilt_rotation(tilt_x, tilt_y);
    // (x, y, 0) → R·(x, y, 0) + (0, 0, f) → f·(X, Y) / Z, divided through by f.
    PlanarMap::from_matrix([
        [r[0][0], r[0][1], 0.0],
        [r[1][0], r[1][1], 0.0],
        [r[2][0] / focal, r[2][1] / focal, 1.0],
    ])
}

/// The 3D rotation `Ry(tilt_y) · Rx(tilt_x)`.
pub fn tilt_rotation(tilt_x: f64, tilt_y: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = sin_cos_deg(tilt_x);
    let (sy, cy) = sin_cos_deg(tilt_y);
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| ry[i][k] * rx[k][j]).sum();
        }
    }
    r
}

/// Sampled parameters of one geometric and colour transform.
///
/// `sx`/`sy` are pixel scale factors once resolved against a context; see
/// `synth` for how they are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub sx: f64,
    pub sy: f64,
    pub kx: f64,
    pub ky: f64,
    /// In-plane rotation, degrees in `[0, 360)`.
    pub theta: f64,
    pub tilt_x: f64,
    pub tilt_y: f64,
    /// Pinhole focal length in pixels; only used when a tilt is present.
    pub focal: f64,
    pub colour_r: f64,
}

impl TransformSpec {
    pub const IDENTITY: TransformSpec = TransformSpec {
        sx: 1.0,
        sy: 1.0,
        kx: 0.0,
        ky: 0.0,
        theta: 0.0,
        tilt_x: 0.0,
        tilt_y: 0.0,
        focal: 1000.0,
        colour_r: 1.0,
    };

    pub fn has_tilt(&self) -> bool {
        self.tilt_x != 0.0 || self.tilt_y != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("transform spec: {m}")));
        if !(self.sx > 0.0 && self.sy > 0.0) {
            return fail("scale factors must be positive");
        }
        if !(0.0..=2.0).contains(&self.colour_r) {
            return fail("colour factor outside [0, 2]");
        }
        if !(0.0..360.0).contains(&self.theta) {
            return fail("rotation outside [0, 360)");
        }
        if self.focal.is_nan() || self.focal <= 0.0 {
            return fail("focal length must be positive");
        }
        Ok(())
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// `tilt ∘ rotate ∘ shear ∘ scale`, all about the origin.
pub fn compose(spec: &TransformSpec) -> Result<PlanarMap> {
    let map = make_scale(spec.sx, spec.sy)?
        .then(&make_shear(spec.kx, spec.ky)?)
        .then(&make_rotation(spec.theta));
    if spec.has_tilt() {
        Ok(map.then(&make_tilt(spec.tilt_x, spec.tilt_y, spec.focal)?))
    } else {
        Ok(map)
    }
}

/// Axis-aligned real rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x1, self.y1),
            (self.x0, self.y1),
        ]
    }

    fn hull_of(points: &[(f64, f64)]) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            r.x0 = r.x0.min(x);
            r.y0 = r.y0.min(y);
            r.x1 = r.x1.max(x);
            r.y1 = r.y1.max(y);
        }
        r
    }
}

/// Four corners in the winding order of the source rectangle's corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [(f64, f64); 4]);

impl Quad {
    /// Signed shoelace area; the sign tracks winding.
    pub fn signed_area(&self) -> f64 {
        let p = &self.0;
        (0..4)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % 4]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn hull(&self) -> Rect {
        Rect::hull_of(&self.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Quad {
        Quad(self.0.map(|(x, y)| (x + dx, y + dy)))
    }

    /// True when no two non-adjacent edges cross.
    pub fn is_simple(&self) -> bool {
        let p = &self.0;
        !segments_cross(p[0], p[1], p[2], p[3]) && !segments_cross(p[1], p[2], p[3], p[0])
    }
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Maps the corners of `rect` and returns them with their tight hull.
pub fn transform_quad(map: &PlanarMap, rect: &Rect) -> Result<(Quad, Rect)> {
    if !(rect.width() > 0.0 && rect.height() > 0.0) {
        return Err(Error::InvalidConfig(format!("rectangle {rect:?} has no area")));
    }
    let mut corners = [(0.0, 0.0); 4];
    for (out, (x, y)) in corners.iter_mut().zip(rect.corners()) {
        *out = map.apply(x, y).ok_or(Error::BackFacing)?;
    }
    let quad = Quad(corners);
    Ok((quad, quad.hull()))
}

/// Inclusive integer pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct PixelBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl From<[i64; 4]> for PixelBox {
    fn from([xmin, ymin, xmax, ymax]: [i64; 4]) -> Self {
        PixelBox { xmin, ymin, xmax, ymax }
    }
}

impl From<PixelBox> for [i64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

impl PixelBox {
    pub fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Self {
        PixelBox { xmin, ymin, xmax, ymax }
    }

    pub fn is_well_ordered(&self) -> bool {
        self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    pub fn width(&self) -> i64 {
        self.xmax - self.xmin + 1
    }

    pub fn height(&self) -> i64 {
        self.ymax - self.ymin + 1
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    pub fn translated(&self, dx: i64, dy: i64) -> PixelBox {
        PixelBox::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    pub fn inside(&self, width: u32, height: u32) -> bool {
        self.is_well_ordered()
            && self.xmin >= 0
            && self.ymin >= 0
            && self.xmax < i64::from(width)
            && self.ymax < i64::from(height)
    }

    /// The real rectangle covered by the box's pixels.
    pub fn to_rect(&self) -> Rect {
        Rect::new(
            self.xmin as f64,
            self.ymin as f64,
            (self.xmax + 1) as f64,
            (self.ymax + 1) as f64,
        )
    }

    /// Pixels whose centres fall in the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn from_covered_rect(r: &Rect) -> Option<PixelBox> {
        let b = PixelBox::new(
            (r.x0 - 0.5).ceil() as i64,
            (r.y0 - 0.5).ceil() as i64,
            (r.x1 - 0.5).ceil() as i64 - 1,
            (r.y1 - 0.5).ceil() as i64 - 1,
        );
        b.is_well_ordered().then_some(b)
    }
}
