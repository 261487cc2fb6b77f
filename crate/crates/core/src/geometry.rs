//! Planar geometry shared by the distortion and rectification stages.
//!
//! Pixel centres sit on integer coordinates, so the corners of a `w`×`h`
//! raster are `(0,0)`, `(w-1,0)`, `(w-1,h-1)` and `(0,h-1)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point { x, y })
    }
}

/// `(b - a) × (c - a)`; positive when a→b→c turns clockwise on screen (y down).
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Shoelace area, positive for clockwise (y-down) vertex order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

/// Convex hull by monotone chain, returned clockwise on screen with
/// collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    // Build with counter-clockwise turns in y-up terms, then reverse.
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    // orient > 0 retained means clockwise on screen already
    lower
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Four corners in TL, TR, BR, BL order. Serialised as `[[x,y],…]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    /// Corners of a `width`×`height` raster, on pixel centres.
    pub fn from_dims(width: u32, height: u32) -> Self {
        let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
        Quad([
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(w, h),
            Point::new(0.0, h),
        ])
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.0
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.0)
    }

    /// Strictly convex with clockwise (screen) winding.
    pub fn is_convex_clockwise(&self) -> bool {
        (0..4).all(|i| orient(self.0[i], self.0[(i + 1) % 4], self.0[(i + 2) % 4]) > 0.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        Quad(self.0.map(|p| Point::new(p.x + dx, p.y + dy)))
    }

    pub fn centroid(&self) -> Point {
        let s = self.0.iter().fold(Point::default(), |acc, &p| acc + p);
        s * 0.25
    }

    /// Root-mean-square distance between corresponding corners.
    pub fn rmse(&self, other: &Quad) -> f64 {
        let ss: f64 = self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| {
                let d = *a - *b;
                d.dot(d)
            })
            .sum();
        (ss / 4.0).sqrt()
    }

    /// Orders four points TL, TR, BR, BL: clockwise angular sort around the
    /// centroid, rotated so the vertex with the smallest `x + y` comes first.
    pub fn from_unordered(points: [Point; 4]) -> Quad {
        let c = points.iter().fold(Point::default(), |acc, &p| acc + p) * 0.25;
        let mut pts = points;
        pts.sort_by(|a, b| {
            let ta = (a.y - c.y).atan2(a.x - c.x);
            let tb = (b.y - c.y).atan2(b.x - c.x);
            ta.total_cmp(&tb)
        });
        let start = (0..4)
            .min_by(|&i, &j| (pts[i].x + pts[i].y).total_cmp(&(pts[j].x + pts[j].y)))
            .expect("four points");
        pts.rotate_left(start);
        Quad(pts)
    }
}

impl Serialize for Quad {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Quad {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Quad(<[Point; 4]>::deserialize(d)?))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("singular homography (|det| = {0:e})")]
    Singular(f64),
    #[error("singular correspondence system")]
    SingularSystem,
}

/// Projective map of the plane, stored with `h[2][2] = 1` whenever that
/// entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

const DET_EPS: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians (clockwise on screen) about `centre`.
    pub fn rotation_about(angle: f64, centre: Point) -> Self {
        let (s, c) = angle.sin_cos();
        let m = Matrix3::new(
            c,
            -s,
            centre.x - c * centre.x + s * centre.y,
            s,
            c,
            centre.y - s * centre.x - c * centre.y,
            0.0,
            0.0,
            1.0,
        );
        Homography(m)
    }

    /// Normalises and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        let m = normalise(m);
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(HomographyError::Singular(det));
        }
        Ok(Homography(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x / v.z, v.y / v.z)
    }

    pub fn apply_quad(&self, q: &Quad) -> Quad {
        Quad(q.0.map(|p| self.apply(p)))
    }

    pub fn inverse(&self) -> Result<Self, HomographyError> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(HomographyError::Singular(self.0.determinant()))?;
        Self::from_matrix(inv)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Homography) -> Result<Self, HomographyError> {
        Self::from_matrix(self.0 * first.0)
    }
}

fn normalise(m: Matrix3<f64>) -> Matrix3<f64> {
    let h22 = m[(2, 2)];
    if h22.abs() > f64::EPSILON * m.abs().max() {
        m / h22
    } else {
        let n = m.norm();
        if n > 0.0 {
            m / n
        } else {
            m
        }
    }
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        // Stored matrices are already normalised; keep the exact values.
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(serde::de::Error::custom(format!(
                "singular homography (det {det:e})"
            )));
        }
        Ok(Homography(m))
    }
}

/// Similarity transform taking the points to zero mean and mean distance √2.
fn hartley_normaliser(pts: &[Point; 4]) -> Matrix3<f64> {
    let c = pts.iter().fold(Point::default(), |acc, &p| acc + p) * 0.25;
    let mean_dist = pts.iter().map(|p| p.dist(c)).sum::<f64>() / 4.0;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Homography taking each `src` corner onto the matching `dst` corner:
/// four-point direct linear transform on Hartley-normalised coordinates.
pub fn solve_homography(src: &Quad, dst: &Quad) -> Result<Homography, HomographyError> {
    let ts = hartley_normaliser(&src.0);
    let td = hartley_normaliser(&dst.0);
    let norm = |t: &Matrix3<f64>, p: Point| {
        let v = t * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x, v.y)
    };

    // Eight equations, padded with a zero row so the SVD yields all of V.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let s = norm(&ts, src.0[i]);
        let d = norm(&td, dst.0[i]);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -s.x;
        a[(r0, 1)] = -s.y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = d.x * s.x;
        a[(r0, 7)] = d.x * s.y;
        a[(r0, 8)] = d.x;
        a[(r1, 3)] = -s.x;
        a[(r1, 4)] = -s.y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = d.y * s.x;
        a[(r1, 7)] = d.y * s.y;
        a[(r1, 8)] = d.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(HomographyError::SingularSystem)?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    // A unique solution needs rank 8: the second-smallest singular value
    // must be clearly non-zero.
    if !(largest > 0.0) || sv[order[7]] <= 1e-10 * largest {
        return Err(HomographyError::SingularSystem);
    }
    let null = order[8];
    let h: SVector<f64, 9> = v_t.row(null).transpose();
    let hn = Matrix3::from_fn(|r, c| h[3 * r + c]);

    let td_inv = td.try_inverse().ok_or(HomographyError::SingularSystem)?;
    let m = td_inv * hn * ts;
    Homography::from_matrix(m).map_err(|_| HomographyError::SingularSystem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(pts: [(f64, f64); 4]) -> Quad {
        Quad(pts.map(|(x, y)| Point::new(x, y)))
    }

    #[test]
    fn identity_from_equal_quads() {
        let q = quad([(3.0, 4.0), (200.0, 10.0), (190.0, 120.0), (5.0, 100.0)]);
        let h = solve_homography(&q, &q).unwrap();
        let m = h.matrix();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((m[(r, c)] - expect).abs() < 1e-10, "{m}");
            }
        }
    }

    #[test]
    fn translation_recovered() {
        let q = quad([(0.0, 0.0), (100.0, 0.0), (100.0, 50.0), (0.0, 50.0)]);
        let h = solve_homography(&q, &q.translate(10.0, 5.0)).unwrap();
        let r = h.rows();
        assert!((r[0][2] - 10.0).abs() < 1e-9);
        assert!((r[1][2] - 5.0).abs() < 1e-9);
        assert!((r[0][0] - 1.0).abs() < 1e-12 && r[0][1].abs() < 1e-12);
    }

    #[test]
    fn residual_is_tiny() {
        let src = quad([(12.0, 7.0), (1900.0, 40.0), (1850.0, 760.0), (30.0, 800.0)]);
        let dst = Quad::from_dims(2000, 800);
        let h = solve_homography(&src, &dst).unwrap();
        for (s, d) in src.0.iter().zip(dst.0.iter()) {
            assert!(h.apply(*s).dist(*d) < 1e-8);
        }
    }

    #[test]
    fn collinear_points_are_singular() {
        let src = quad([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.0, 1.0)]);
        let dst = Quad::from_dims(10, 10);
        assert_eq!(
            solve_homography(&src, &dst),
            Err(HomographyError::SingularSystem)
        );
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let mut pts = vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(0.0, 4.0),
            Point::new(2.0, 0.0),
        ];
        pts.extend((1..4).map(|i| Point::new(i as f64, 2.0)));
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(signed_area(&hull) > 0.0);
        assert_eq!(signed_area(&hull), 16.0);
    }

    #[test]
    fn ordering_of_corners() {
        let q = Quad::from_unordered([
            Point::new(100.0, 90.0),
            Point::new(2.0, 1.0),
            Point::new(0.0, 95.0),
            Point::new(98.0, 3.0),
        ]);
        assert_eq!(q.0[0], Point::new(2.0, 1.0));
        assert_eq!(q.0[1], Point::new(98.0, 3.0));
        assert_eq!(q.0[2], Point::new(100.0, 90.0));
        assert_eq!(q.0[3], Point::new(0.0, 95.0));
        assert!(q.is_convex_clockwise());
    }

    #[test]
    fn point_in_polygon_basic() {
        let sq = [
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        assert!(point_in_polygon(Point::new(5.0, 5.0), &sq));
        assert!(!point_in_polygon(Point::new(11.0, 5.0), &sq));
    }
}
