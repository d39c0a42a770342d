//! Planar polygon handling for contiguity detection.
//!
//! Coordinates are snapped to a regular grid before any topological test so
//! that boundary points written with slightly different floating-point values
//! still compare equal. All shared-boundary tests then run in exact integer
//! arithmetic on the snapped coordinates.

use crate::error::{CoreError, Result};

/// Default snap tolerance in map units.
pub const DEFAULT_SNAP_TOLERANCE: f64 = 1e-9;

/// A single polygon ring, stored open (first vertex not repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    pub points: Vec<(f64, f64)>,
}

/// One polygon: an exterior ring plus optional interior rings (holes).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

/// The geometry attached to one areal unit (Polygon or MultiPolygon).
#[derive(Debug, Clone, PartialEq)]
pub struct AreaShape {
    pub polygons: Vec<Polygon>,
}

impl AreaShape {
    pub fn single(exterior: Vec<(f64, f64)>) -> Self {
        AreaShape {
            polygons: vec![Polygon {
                exterior: Ring { points: exterior },
                holes: Vec::new(),
            }],
        }
    }

    /// All rings of all member polygons.
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.polygons
            .iter()
            .flat_map(|p| std::iter::once(&p.exterior).chain(p.holes.iter()))
    }
}

pub(crate) type SnappedPoint = (i64, i64);

/// A ring after snapping: consecutive duplicates removed, stored open.
#[derive(Debug, Clone)]
pub(crate) struct SnappedRing {
    pub points: Vec<SnappedPoint>,
}

impl SnappedRing {
    pub fn segments(&self) -> impl Iterator<Item = (SnappedPoint, SnappedPoint)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

pub(crate) fn snap_coord(x: f64, tol: f64) -> Result<i64> {
    let q = (x / tol).round();
    if !q.is_finite() || q.abs() > 4.0e18 {
        return Err(CoreError::InvalidParameter(format!(
            "coordinate {x} does not fit the snap grid with tolerance {tol}"
        )));
    }
    Ok(q as i64)
}

fn snap_ring(ring: &Ring, tol: f64) -> Result<Vec<SnappedPoint>> {
    let mut pts: Vec<SnappedPoint> = Vec::with_capacity(ring.points.len());
    for &(x, y) in &ring.points {
        if !x.is_finite() || !y.is_finite() {
            return Err(CoreError::InvalidParameter(
                "non-finite coordinate in ring".into(),
            ));
        }
        let p = (snap_coord(x, tol)?, snap_coord(y, tol)?);
        if pts.last() == Some(&p) {
            continue;
        }
        pts.push(p);
    }
    // Drop an explicit closing vertex.
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    Ok(pts)
}

fn i128_pt(p: SnappedPoint) -> (i128, i128) {
    (p.0 as i128, p.1 as i128)
}

fn cross(o: SnappedPoint, a: SnappedPoint, b: SnappedPoint) -> i128 {
    let (ox, oy) = i128_pt(o);
    let (ax, ay) = i128_pt(a);
    let (bx, by) = i128_pt(b);
    (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)
}

fn dot(o: SnappedPoint, a: SnappedPoint, b: SnappedPoint) -> i128 {
    let (ox, oy) = i128_pt(o);
    let (ax, ay) = i128_pt(a);
    let (bx, by) = i128_pt(b);
    (ax - ox) * (bx - ox) + (ay - oy) * (by - oy)
}

/// Whether point `p` lies on the closed segment [a, b] (endpoints included).
pub(crate) fn point_on_segment(p: SnappedPoint, a: SnappedPoint, b: SnappedPoint) -> bool {
    if cross(a, b, p) != 0 {
        return false;
    }
    let d = dot(a, b, p);
    d >= 0 && d <= dot(a, b, b)
}

fn on_segment_strict_bbox(p: SnappedPoint, a: SnappedPoint, b: SnappedPoint) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Whether two closed segments intersect at any point.
fn segments_intersect(a: SnappedPoint, b: SnappedPoint, c: SnappedPoint, d: SnappedPoint) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)) {
        return true;
    }
    (d1 == 0 && on_segment_strict_bbox(a, c, d))
        || (d2 == 0 && on_segment_strict_bbox(b, c, d))
        || (d3 == 0 && on_segment_strict_bbox(c, a, b))
        || (d4 == 0 && on_segment_strict_bbox(d, a, b))
}

/// Snap every ring of a shape and check ring validity.
///
/// A ring is rejected when it degenerates under snapping (fewer than three
/// distinct vertices) or when two non-adjacent edges cross or overlap.
/// Rings that merely touch themselves at a shared vertex are accepted, since
/// weakly simple rings are common in real areal data.
pub(crate) fn snap_and_validate(shape: &AreaShape, area_id: &str, tol: f64) -> Result<Vec<SnappedRing>> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "snap tolerance must be positive and finite, got {tol}"
        )));
    }
    let mut out = Vec::new();
    let reject = |reason: String| CoreError::InvalidGeometry {
        area_id: area_id.to_string(),
        reason,
    };
    if shape.polygons.is_empty() {
        return Err(reject("empty geometry".into()));
    }
    for ring in shape.rings() {
        let pts = snap_ring(ring, tol).map_err(|e| reject(e.to_string()))?;
        if pts.len() < 3 {
            return Err(reject(format!(
                "ring degenerates to {} distinct vertices after snapping",
                pts.len()
            )));
        }
        let n = pts.len();
        let seg = |i: usize| (pts[i], pts[(i + 1) % n]);
        for i in 0..n {
            let (a, b) = seg(i);
            if a == b {
                return Err(reject("zero-length edge".into()));
            }
            for j in (i + 1)..n {
                // Skip edges adjacent to edge i (they legitimately share a vertex).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = seg(j);
                if segments_intersect(a, b, c, d) {
                    // Shared single vertex between non-adjacent edges: weakly
                    // simple, accepted. Anything else is a crossing/overlap.
                    let shared_vertex = (a == c || a == d || b == c || b == d)
                        && !point_on_segment(if a == c || a == d { b } else { a }, c, d);
                    if !shared_vertex {
                        return Err(reject(format!(
                            "self-intersection between edges {i} and {j}"
                        )));
                    }
                }
            }
        }
        out.push(SnappedRing { points: pts });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64) -> AreaShape {
        AreaShape::single(vec![(x0, y0), (x0 + 1.0, y0), (x0 + 1.0, y0 + 1.0), (x0, y0 + 1.0)])
    }

    #[test]
    fn snapping_merges_nearby_coordinates() {
        let tol = 1e-9;
        assert_eq!(snap_coord(1.0, tol).unwrap(), snap_coord(1.0 + 2e-10, tol).unwrap());
        assert_ne!(snap_coord(1.0, tol).unwrap(), snap_coord(1.0 + 2e-9, tol).unwrap());
    }

    #[test]
    fn valid_square_passes() {
        let rings = snap_and_validate(&square(0.0, 0.0), "a", DEFAULT_SNAP_TOLERANCE).unwrap();
        assert_eq!(rings.len(), 1);
        assert_eq!(rings[0].points.len(), 4);
    }

    #[test]
    fn closed_ring_duplicate_endpoint_dropped() {
        let shape = AreaShape::single(vec![
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.0, 1.0),
            (0.0, 0.0),
        ]);
        let rings = snap_and_validate(&shape, "a", DEFAULT_SNAP_TOLERANCE).unwrap();
        assert_eq!(rings[0].points.len(), 4);
    }

    #[test]
    fn bowtie_rejected_with_area_id() {
        let shape = AreaShape::single(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        let err = snap_and_validate(&shape, "bow", DEFAULT_SNAP_TOLERANCE).unwrap_err();
        match err {
            CoreError::InvalidGeometry { area_id, .. } => assert_eq!(area_id, "bow"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn degenerate_ring_rejected() {
        let shape = AreaShape::single(vec![(0.0, 0.0), (1e-12, 0.0), (0.0, 1e-12)]);
        assert!(snap_and_validate(&shape, "tiny", DEFAULT_SNAP_TOLERANCE).is_err());
    }

    #[test]
    fn point_on_segment_detects_interior_points() {
        assert!(point_on_segment((5, 0), (0, 0), (10, 0)));
        assert!(point_on_segment((0, 0), (0, 0), (10, 0)));
        assert!(!point_on_segment((5, 1), (0, 0), (10, 0)));
        assert!(!point_on_segment((11, 0), (0, 0), (10, 0)));
    }
}
