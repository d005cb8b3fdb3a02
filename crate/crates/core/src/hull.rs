//! Convex hulls of small point sets in up to three dimensions, with
//! rank-deficient inputs (points, segments, planar polygons) handled in their
//! affine span.

use std::collections::HashSet;

type P3 = [f64; 3];

fn sub(a: &P3, b: &P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot(a: &P3, b: &P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: &P3, b: &P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: &P3) -> f64 {
    dot(a, a).sqrt()
}
fn scale(a: &P3, s: f64) -> P3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn unit(a: &P3) -> P3 {
    scale(a, 1.0 / norm(a))
}

/// Oriented plane `normal · x = offset` with unit normal pointing outward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: P3,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &P3) -> f64 {
        dot(&self.normal, p) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Point(P3),
    Segment {
        origin: P3,
        dir: P3,
        t_min: f64,
        t_max: f64,
    },
    Polygon {
        origin: P3,
        normal: P3,
        axes: [P3; 2],
        /// Outward edge lines in plane coordinates: `n · (x, y) ≤ c`.
        edges: Vec<([f64; 2], f64)>,
    },
    Polytope {
        facets: Vec<Plane>,
    },
}

/// Convex hull of a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    /// Affine dimension of the input (0..=3).
    pub rank: usize,
    /// Input indices of the hull's extreme points.
    pub vertices: Vec<usize>,
    shape: Shape,
}

impl Hull {
    /// Triangular supporting planes of a full-rank hull (empty otherwise).
    pub fn facets(&self) -> &[Plane] {
        match &self.shape {
            Shape::Polytope { facets } => facets,
            _ => &[],
        }
    }

    /// Whether `p` lies in the hull, allowing `tol` of slack in every
    /// supporting constraint (and off the affine span for degenerate hulls).
    pub fn contains(&self, p: &P3, tol: f64) -> bool {
        match &self.shape {
            Shape::Point(q) => norm(&sub(p, q)) <= tol,
            Shape::Segment {
                origin,
                dir,
                t_min,
                t_max,
            } => {
                let d = sub(p, origin);
                let t = dot(&d, dir);
                let off = sub(&d, &scale(dir, t));
                norm(&off) <= tol && t >= t_min - tol && t <= t_max + tol
            }
            Shape::Polygon {
                origin,
                normal,
                axes,
                edges,
            } => {
                let d = sub(p, origin);
                if dot(&d, normal).abs() > tol {
                    return false;
                }
                let xy = [dot(&d, &axes[0]), dot(&d, &axes[1])];
                edges.iter().all(|(n, c)| n[0] * xy[0] + n[1] * xy[1] - c <= tol)
            }
            Shape::Polytope { facets } => facets.iter().all(|f| f.signed_distance(p) <= tol),
        }
    }
}

fn farthest(points: &[P3], dist: impl Fn(&P3) -> f64) -> (usize, f64) {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dist(p)))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
}

fn point_scale(points: &[P3]) -> f64 {
    let mut s: f64 = 0.0;
    for d in 0..3 {
        let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
        s = s.max(hi - lo);
    }
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Hull with the rank/visibility tolerance set to `1e-7` of the points' extent.
pub fn convex_hull(points: &[P3]) -> Hull {
    convex_hull_with_tol(points, 1e-7 * point_scale(points))
}

/// Hull where points within `eps` of an affine span or supporting plane are
/// treated as lying on it.
///
/// # Panics
/// If `points` is empty.
pub fn convex_hull_with_tol(points: &[P3], eps: f64) -> Hull {
    assert!(!points.is_empty(), "hull of an empty set");
    let p0 = points
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p < &points[b] { i } else { b });
    let (i1, d1) = farthest(points, |p| norm(&sub(p, &points[p0])));
    if d1 <= eps {
        return Hull {
            rank: 0,
            vertices: vec![p0],
            shape: Shape::Point(points[p0]),
        };
    }
    let dir = unit(&sub(&points[i1], &points[p0]));
    let line_dist = |p: &P3| {
        let d = sub(p, &points[p0]);
        norm(&sub(&d, &scale(&dir, dot(&d, &dir))))
    };
    let (i2, d2) = farthest(points, line_dist);
    if d2 <= eps {
        let ts: Vec<f64> = points.iter().map(|p| dot(&sub(p, &points[p0]), &dir)).collect();
        let (lo, hi) = ts.iter().enumerate().fold((0, 0), |(lo, hi), (i, &t)| {
            (if t < ts[lo] { i } else { lo }, if t > ts[hi] { i } else { hi })
        });
        return Hull {
            rank: 1,
            vertices: vec![lo, hi],
            shape: Shape::Segment {
                origin: points[p0],
                dir,
                t_min: ts[lo],
                t_max: ts[hi],
            },
        };
    }
    let normal = unit(&cross(&dir, &sub(&points[i2], &points[p0])));
    let (i3, d3) = farthest(points, |p| dot(&sub(p, &points[p0]), &normal).abs());
    if d3 <= eps {
        return planar_hull(points, p0, dir, normal);
    }
    polytope(points, [p0, i1, i2, i3], eps)
}

fn planar_hull(points: &[P3], p0: usize, dir: P3, normal: P3) -> Hull {
    let origin = points[p0];
    let axes = [dir, cross(&normal, &dir)];
    let xy: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let d = sub(p, &origin);
            [dot(&d, &axes[0]), dot(&d, &axes[1])]
        })
        .collect();
    // Andrew's monotone chain, counter-clockwise, collinear points dropped.
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| xy[a].partial_cmp(&xy[b]).unwrap());
    idx.dedup_by(|a, b| xy[*a] == xy[*b]);
    let turn = |o: usize, a: usize, b: usize| {
        (xy[a][0] - xy[o][0]) * (xy[b][1] - xy[o][1]) - (xy[a][1] - xy[o][1]) * (xy[b][0] - xy[o][0])
    };
    let mut hull: Vec<usize> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    let m = hull.len();
    let edges = (0..m)
        .map(|e| {
            let a = xy[hull[e]];
            let b = xy[hull[(e + 1) % m]];
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = (ex * ex + ey * ey).sqrt();
            let n = [ey / len, -ex / len];
            (n, n[0] * a[0] + n[1] * a[1])
        })
        .collect();
    Hull {
        rank: 2,
        vertices: hull,
        shape: Shape::Polygon {
            origin,
            normal,
            axes,
            edges,
        },
    }
}

#[derive(Clone, Copy)]
struct Face {
    v: [usize; 3],
    plane: Plane,
}

fn make_face(points: &[P3], v: [usize; 3], inside: &P3) -> Face {
    let [a, b, c] = v;
    let n = cross(&sub(&points[b], &points[a]), &sub(&points[c], &points[a]));
    let len = norm(&n);
    let mut normal = if len > 0.0 { scale(&n, 1.0 / len) } else { [0.0; 3] };
    let mut verts = v;
    if dot(&normal, &sub(inside, &points[a])) > 0.0 {
        normal = scale(&normal, -1.0);
        verts = [a, c, b];
    }
    Face {
        v: verts,
        plane: Plane {
            normal,
            offset: dot(&normal, &points[a]),
        },
    }
}

/// Incremental hull from an initial tetrahedron, inserting remaining points
/// farthest-first.
fn polytope(points: &[P3], simplex: [usize; 4], eps: f64) -> Hull {
    let inside = scale(
        &simplex
            .iter()
            .fold([0.0; 3], |acc, &i| [acc[0] + points[i][0], acc[1] + points[i][1], acc[2] + points[i][2]]),
        0.25,
    );
    let [a, b, c, d] = simplex;
    let mut faces: Vec<Face> = [[a, b, c], [a, b, d], [a, c, d], [b, c, d]]
        .iter()
        .map(|&v| make_face(points, v, &inside))
        .collect();

    let mut order: Vec<usize> = (0..points.len()).filter(|i| !simplex.contains(i)).collect();
    order.sort_by(|&x, &y| {
        let dx = norm(&sub(&points[x], &inside));
        let dy = norm(&sub(&points[y], &inside));
        dy.partial_cmp(&dx).unwrap().then(x.cmp(&y))
    });

    for &p in &order {
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| f.plane.signed_distance(&points[p]) > eps)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
            for e in 0..3 {
                edges.insert((f.v[e], f.v[(e + 1) % 3]));
            }
        }
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(x, y)| !edges.contains(&(y, x)))
            .collect();
        horizon.sort_unstable();
        let mut kept: Vec<Face> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| *f)
            .collect();
        for (x, y) in horizon {
            kept.push(make_face(points, [x, y, p], &inside));
        }
        faces = kept;
    }

    let mut vertices: Vec<usize> = faces.iter().flat_map(|f| f.v).collect();
    vertices.sort_unstable();
    vertices.dedup();
    Hull {
        rank: 3,
        vertices,
        shape: Shape::Polytope {
            facets: faces.iter().map(|f| f.plane).collect(),
        },
    }
}
