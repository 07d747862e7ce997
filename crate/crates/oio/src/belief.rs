//! RSSI-inspired belief maps: olfaction-to-RSSI conversion, probabilistic
//! spheres centered on the sensor, sphere intersections (circle, point pair,
//! Voronoi vertex) and the sliding five-sphere window that produces the
//! navigation target.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::plume::DETECTION_FLOOR;
use crate::{Error, Result};

/// Residual tolerance (m) within which a candidate point is accepted as
/// lying on a sphere surface.
pub const DEFAULT_RESIDUAL_TOL: f64 = 0.05;

/// Signal strength in the RSSI convention: negative, increasing toward zero
/// as the olfaction value grows.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Rssi(f64);

impl Rssi {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Invert and negate the olfaction value. Non-positive inputs are clamped
/// to the detection floor.
pub fn to_rssi(olfaction_value: f64) -> Rssi {
    let v = if olfaction_value < DETECTION_FLOOR {
        log::warn!("olfaction value {olfaction_value} clamped to detection floor");
        DETECTION_FLOOR
    } else {
        olfaction_value
    };
    Rssi(-1.0 / v)
}

/// Maps a normalized olfaction value to a sphere radius in meters. Must be
/// monotone decreasing: a stronger signal means a smaller radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RadiusCalib {
    /// r = k / value
    Inverse { k: f64 },
    /// piecewise-linear interpolation of a calibration run:
    /// `values` ascending, `distances` descending, same length
    Profile { values: Vec<f64>, distances: Vec<f64> },
}

impl Default for RadiusCalib {
    fn default() -> Self {
        RadiusCalib::Inverse { k: 0.1 }
    }
}

impl RadiusCalib {
    pub fn profile(values: Vec<f64>, distances: Vec<f64>) -> Result<Self> {
        if values.len() != distances.len() || values.len() < 2 {
            return Err(Error::Config("calibration profile needs >= 2 matched points".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("calibration values must be strictly ascending".into()));
        }
        if distances.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("calibration distances must be strictly descending".into()));
        }
        Ok(RadiusCalib::Profile { values, distances })
    }

    pub fn radius_for(&self, value: f64) -> f64 {
        let v = value.max(DETECTION_FLOOR);
        match self {
            RadiusCalib::Inverse { k } => k / v,
            RadiusCalib::Profile { values, distances } => {
                if v <= values[0] {
                    return distances[0];
                }
                if v >= *values.last().unwrap() {
                    return *distances.last().unwrap();
                }
                let idx = values.partition_point(|x| *x < v);
                let (v0, v1) = (values[idx - 1], values[idx]);
                let (d0, d1) = (distances[idx - 1], distances[idx]);
                d0 + (d1 - d0) * (v - v0) / (v1 - v0)
            }
        }
    }
}

/// A probabilistic sphere: the source lies with equal probability anywhere
/// on its surface. Bounds come from the two rig sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefSphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub radius_lower: f64,
    pub radius_upper: f64,
    pub timestamp: f64,
}

impl BeliefSphere {
    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn residual(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center_vec()).norm() - self.radius
    }
}

/// Build a belief sphere from one dual-sensor aggregate. The stronger upper
/// reading gives the smaller radius bound.
pub fn sphere_from_reading(
    position: &Vector3<f64>,
    mean: f64,
    lower: f64,
    upper: f64,
    calib: &RadiusCalib,
    timestamp: f64,
) -> Result<BeliefSphere> {
    if mean <= DETECTION_FLOOR {
        return Err(Error::Estimation(format!(
            "sphere rejected: value {mean} below detection floor"
        )));
    }
    let radius = calib.radius_for(mean);
    let radius_lower = calib.radius_for(upper.max(mean));
    let radius_upper = calib.radius_for(lower.min(mean).max(DETECTION_FLOOR));
    Ok(BeliefSphere {
        center: [position.x, position.y, position.z],
        radius,
        radius_lower,
        radius_upper,
        timestamp,
    })
}

/// The candidate-source point set produced by intersecting belief spheres.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSet {
    Circle { center: Vector3<f64>, normal: Vector3<f64>, radius: f64 },
    PointPair(Vector3<f64>, Vector3<f64>),
    Point(Vector3<f64>),
    Empty,
}

/// Intersect two spheres: a circle in the general case, one point at
/// tangency, empty when disjoint or contained.
pub fn intersect_two(s1: &BeliefSphere, s2: &BeliefSphere) -> Result<SigmaSet> {
    let c1 = s1.center_vec();
    let c2 = s2.center_vec();
    let axis = c2 - c1;
    let d = axis.norm();
    if d < 1e-12 {
        return Err(Error::Degenerate("coincident sphere centers".into()));
    }
    let u = axis / d;
    let a = (d * d + s1.radius * s1.radius - s2.radius * s2.radius) / (2.0 * d);
    let h2 = s1.radius * s1.radius - a * a;
    let scale = s1.radius.max(s2.radius).max(d);
    let tol2 = (1e-9 * scale) * (1e-9 * scale);
    if h2 < -tol2 {
        return Ok(SigmaSet::Empty);
    }
    if h2 <= tol2 {
        return Ok(SigmaSet::Point(c1 + u * a));
    }
    Ok(SigmaSet::Circle { center: c1 + u * a, normal: u, radius: h2.sqrt() })
}

/// Trilateration: the circle of the first two spheres cut by the third,
/// yielding a point pair (one point at tangency, empty when inconsistent).
pub fn intersect_three(s1: &BeliefSphere, s2: &BeliefSphere, s3: &BeliefSphere) -> Result<SigmaSet> {
    let (cc, normal, rc) = match intersect_two(s1, s2)? {
        SigmaSet::Circle { center, normal, radius } => (center, normal, radius),
        SigmaSet::Point(p) => {
            return Ok(if s3.residual(&p).abs() <= DEFAULT_RESIDUAL_TOL {
                SigmaSet::Point(p)
            } else {
                SigmaSet::Empty
            });
        }
        _ => return Ok(SigmaSet::Empty),
    };

    let b = s3.center_vec() - cc;
    let b_plane = b - normal * b.dot(&normal);
    let bp_norm = b_plane.norm();
    let scale = rc.max(s3.radius).max(b.norm()).max(1e-6);
    if bp_norm < 1e-9 * scale {
        // third center on the first circle's axis: every circle point is
        // equidistant from it, an ambiguity ring
        return Err(Error::Degenerate("collinear sphere centers".into()));
    }
    let u = b_plane / bp_norm;
    let w = normal.cross(&u);
    let rhs = (rc * rc + b.norm_squared() - s3.radius * s3.radius) / 2.0;
    let qu = rhs / bp_norm;
    let qw2 = rc * rc - qu * qu;
    let tol2 = (1e-9 * scale) * (1e-9 * scale);
    if qw2 < -tol2 {
        return Ok(SigmaSet::Empty);
    }
    if qw2 <= tol2 {
        return Ok(SigmaSet::Point(cc + u * qu));
    }
    let qw = qw2.sqrt();
    Ok(SigmaSet::PointPair(cc + u * qu + w * qw, cc + u * qu - w * qw))
}

/// Least-squares common point of four spheres (Gauss-Newton seeded from the
/// three-sphere pair). Returns the point only when every residual is within
/// `tol`; `None` otherwise.
pub fn voronoi_vertex(spheres: &[BeliefSphere; 4], tol: f64) -> Option<Vector3<f64>> {
    let seed = match intersect_three(&spheres[0], &spheres[1], &spheres[2]) {
        Ok(SigmaSet::PointPair(p1, p2)) => {
            if spheres[3].residual(&p1).abs() <= spheres[3].residual(&p2).abs() {
                p1
            } else {
                p2
            }
        }
        Ok(SigmaSet::Point(p)) => p,
        _ => {
            let mut c = Vector3::zeros();
            for s in spheres {
                c += s.center_vec();
            }
            c / 4.0
        }
    };

    let mut p = seed;
    let mut converged = false;
    for _ in 0..50 {
        let mut jtj = Matrix3::zeros();
        let mut jtf = Vector3::zeros();
        for s in spheres {
            let diff = p - s.center_vec();
            let dist = diff.norm();
            if dist < 1e-12 {
                return None;
            }
            let grad = diff / dist;
            let f = dist - s.radius;
            jtj += grad * grad.transpose();
            jtf += grad * f;
        }
        // light damping keeps near-degenerate geometry solvable
        jtj += Matrix3::identity() * 1e-12;
        let Some(delta) = jtj.lu().solve(&(-jtf)) else {
            log::debug!("voronoi_vertex: normal equations singular");
            return None;
        };
        p += delta;
        if delta.norm() < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("voronoi_vertex: no convergence in 50 iterations");
        return None;
    }
    let worst = spheres.iter().map(|s| s.residual(&p).abs()).fold(0.0, f64::max);
    if worst < tol {
        Some(p)
    } else {
        None
    }
}

/// Nearest point on a circle to a reference point.
fn nearest_point_on_circle(
    center: &Vector3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
    reference: &Vector3<f64>,
) -> Vector3<f64> {
    let d = reference - center;
    let in_plane = d - normal * d.dot(normal);
    let n = in_plane.norm();
    if n < 1e-12 {
        // reference on the axis: any circle point is nearest; pick a
        // deterministic in-plane basis vector
        let seed = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = (seed - normal * seed.dot(normal)).normalize();
        return center + u * radius;
    }
    center + in_plane / n * radius
}

/// Sliding window of the most recent belief spheres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereWindow {
    spheres: VecDeque<BeliefSphere>,
    cap: usize,
}

impl Default for SphereWindow {
    fn default() -> Self {
        SphereWindow::new(5)
    }
}

impl SphereWindow {
    pub fn new(cap: usize) -> Self {
        SphereWindow { spheres: VecDeque::new(), cap: cap.max(2) }
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    pub fn spheres(&self) -> impl Iterator<Item = &BeliefSphere> {
        self.spheres.iter()
    }

    pub fn clear(&mut self) {
        self.spheres.clear();
    }

    /// Push a sphere, evicting the oldest beyond the cap. Timestamps must
    /// strictly increase.
    pub fn push(&mut self, sphere: BeliefSphere) -> Result<()> {
        if let Some(last) = self.spheres.back() {
            if sphere.timestamp <= last.timestamp {
                return Err(Error::Domain(format!(
                    "sphere timestamps must increase: {} after {}",
                    sphere.timestamp, last.timestamp
                )));
            }
        }
        self.spheres.push_back(sphere);
        while self.spheres.len() > self.cap {
            self.spheres.pop_front();
        }
        Ok(())
    }

    fn get(&self, idx: usize) -> &BeliefSphere {
        &self.spheres[idx]
    }
}

/// What geometry produced the current target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Vertex,
    PointPair,
    Circle,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetUpdate {
    pub target: Option<Vector3<f64>>,
    /// true when a decreasing RSSI trend flipped the pair choice
    pub switched: bool,
    pub source: SigmaSource,
}

/// Push a new sphere and recompute the navigation target from the best
/// available sigma set: a four-sphere vertex if one exists, else the
/// freshest three-sphere point pair (selecting a member at random when
/// there is no current target, and switching members when the RSSI trend
/// says the current one is wrong), else the nearest point of the freshest
/// two-sphere circle.
pub fn update_window_and_target<R: Rng + ?Sized>(
    window: &mut SphereWindow,
    new_sphere: BeliefSphere,
    rssi_decreasing: bool,
    current_target: Option<Vector3<f64>>,
    tol: f64,
    rng: &mut R,
) -> Result<TargetUpdate> {
    window.push(new_sphere)?;
    let n = window.len();
    if n < 2 {
        return Ok(TargetUpdate { target: None, switched: false, source: SigmaSource::None });
    }

    // four-sphere vertex, freshest subsets first
    if n >= 4 {
        for subset in subsets_desc(n, 4) {
            let quad = [
                *window.get(subset[0]),
                *window.get(subset[1]),
                *window.get(subset[2]),
                *window.get(subset[3]),
            ];
            if let Some(v) = voronoi_vertex(&quad, tol) {
                return Ok(TargetUpdate {
                    target: Some(v),
                    switched: false,
                    source: SigmaSource::Vertex,
                });
            }
        }
    }

    // freshest three-sphere pair
    if n >= 3 {
        for subset in subsets_desc(n, 3) {
            let res = intersect_three(
                window.get(subset[0]),
                window.get(subset[1]),
                window.get(subset[2]),
            );
            match res {
                Ok(SigmaSet::PointPair(p1, p2)) => {
                    let match_tol = tol.max(0.05);
                    let (chosen, switched) = match current_target {
                        Some(t) if (t - p1).norm() <= match_tol => {
                            if rssi_decreasing {
                                (p2, true)
                            } else {
                                (p1, false)
                            }
                        }
                        Some(t) if (t - p2).norm() <= match_tol => {
                            if rssi_decreasing {
                                (p1, true)
                            } else {
                                (p2, false)
                            }
                        }
                        _ => {
                            if rng.random::<bool>() {
                                (p1, false)
                            } else {
                                (p2, false)
                            }
                        }
                    };
                    return Ok(TargetUpdate {
                        target: Some(chosen),
                        switched,
                        source: SigmaSource::PointPair,
                    });
                }
                Ok(SigmaSet::Point(p)) => {
                    return Ok(TargetUpdate {
                        target: Some(p),
                        switched: false,
                        source: SigmaSource::PointPair,
                    });
                }
                _ => continue,
            }
        }
    }

    // freshest two-sphere circle
    for subset in subsets_desc(n, 2) {
        if let Ok(SigmaSet::Circle { center, normal, radius }) =
            intersect_two(window.get(subset[0]), window.get(subset[1]))
        {
            let reference = current_target.unwrap_or_else(|| window.get(n - 1).center_vec());
            let p = nearest_point_on_circle(&center, &normal, radius, &reference);
            return Ok(TargetUpdate { target: Some(p), switched: false, source: SigmaSource::Circle });
        }
    }

    Ok(TargetUpdate { target: None, switched: false, source: SigmaSource::None })
}

/// Index subsets of {0..n} of size k, ordered freshest-first (subsets using
/// the most recent indices come before older ones).
fn subsets_desc(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        all.push(idx.clone());
        // advance to the next combination in lexicographic order
        let mut i = k;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if idx[i] != i + n - k {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    all.sort_by(|a, b| {
        let sa: usize = a.iter().sum();
        let sb: usize = b.iter().sum();
        sb.cmp(&sa).then_with(|| b.cmp(a))
    });
    all
}
