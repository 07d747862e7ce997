//! Extended Kalman filter over the effector pose and a bank of candidate
//! source locations (landmarks). Pose is predicted from commanded motion
//! increments; encoder pose, range/bearing observations and landmark
//! position pseudo-measurements correct it. Landmarks are ranked by the
//! trace of their covariance blocks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{normalize_deg, EffectorPose, PoseDelta};
use crate::{Error, Result};

const POSE_DIM: usize = 5;
const LM_DIM: usize = 3;

/// chi-square 99% quantiles by measurement dimension (1-based index).
const CHI2_99: [f64; 6] = [
    0.0,
    6.634896601021213,
    9.21034037197618,
    11.344866730144373,
    13.276704135987622,
    15.08627246938899,
];

/// Additive per-step pose process noise, derived from the encoder drift
/// table: drift rates are integrated twice over the step into angle
/// uncertainty, and angles couple into position through the arm reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    /// m, per 1 s step
    pub position_std: f64,
    /// deg, per 1 s step
    pub azimuth_std: f64,
    /// deg, per 1 s step
    pub elevation_std: f64,
}

impl ProcessNoise {
    pub fn from_drift_rates(rates: &[f64; 5], reach_m: f64, dt: f64) -> Self {
        let angle_std: Vec<f64> = rates.iter().map(|r| r * dt * dt / 2.0).collect();
        let azimuth = angle_std[0];
        let elevation = angle_std[1] + angle_std[2] + angle_std[3];
        let total: f64 = angle_std.iter().sum();
        let position = reach_m * total.to_radians();
        ProcessNoise {
            position_std: position.max(1e-6),
            azimuth_std: azimuth.max(1e-6),
            elevation_std: elevation.max(1e-6),
        }
    }

    fn diagonal(&self, dt_scale: f64) -> [f64; POSE_DIM] {
        let p = self.position_std * self.position_std * dt_scale;
        let a = self.azimuth_std * self.azimuth_std * dt_scale;
        let e = self.elevation_std * self.elevation_std * dt_scale;
        [p, p, p, a, e]
    }
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise::from_drift_rates(&[2e-2, 1e-2, 3e-3, 1e-3, 1e-3], 0.9, 1.0)
    }
}

/// One candidate source location extracted from the filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// trace of the covariance block
    pub uncertainty_score: f64,
    /// monotone insertion id, used to break uncertainty ties
    pub id: u64,
    /// current index into the filter state
    pub index: usize,
}

/// Observations the filter can ingest.
#[derive(Debug, Clone)]
pub enum Measurement {
    /// full pose from the joint encoders; stds: (m, m, m, deg, deg)
    EncoderPose { pose: EffectorPose, std: [f64; 5] },
    /// distance from the effector to landmark `index`
    RangeToLandmark { index: usize, range: f64, std: f64 },
    /// azimuth/elevation (deg) of landmark `index` as seen from the effector
    BearingToLandmark { index: usize, azimuth: f64, elevation: f64, std_deg: f64 },
    /// direct position pseudo-measurement of landmark `index`
    LandmarkPosition { index: usize, position: Vector3<f64>, covariance: Matrix3<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied,
    /// innovation failed the chi-square gate; state unchanged
    Rejected { mahalanobis_sq: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpsertOutcome {
    Fused { index: usize },
    Inserted { index: usize },
    /// inserted after evicting the most uncertain landmark
    InsertedWithEviction { index: usize, evicted_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    /// [x, y, z, azimuth, elevation, lm0.xyz, lm1.xyz, ...]
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    landmark_ids: Vec<u64>,
    next_id: u64,
    pub process_noise: ProcessNoise,
    /// merge radius for landmark candidates, m
    pub merge_radius: f64,
    pub landmark_cap: usize,
    rejection_count: u64,
}

impl EkfState {
    pub fn new(initial: &EffectorPose, initial_std: [f64; 5], process_noise: ProcessNoise) -> Self {
        let mut mean = DVector::zeros(POSE_DIM);
        mean[0] = initial.x;
        mean[1] = initial.y;
        mean[2] = initial.z;
        mean[3] = initial.azimuth;
        mean[4] = initial.elevation;
        let mut cov = DMatrix::zeros(POSE_DIM, POSE_DIM);
        for i in 0..POSE_DIM {
            cov[(i, i)] = initial_std[i] * initial_std[i];
        }
        EkfState {
            mean,
            cov,
            landmark_ids: Vec::new(),
            next_id: 0,
            process_noise,
            merge_radius: 0.15,
            landmark_cap: 16,
            rejection_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        POSE_DIM + LM_DIM * self.landmark_ids.len()
    }

    pub fn pose(&self) -> EffectorPose {
        EffectorPose {
            x: self.mean[0],
            y: self.mean[1],
            z: self.mean[2],
            azimuth: normalize_deg(self.mean[3]),
            elevation: self.mean[4],
        }
    }

    pub fn pose_covariance_trace(&self) -> f64 {
        (0..POSE_DIM).map(|i| self.cov[(i, i)]).sum()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn rejection_count(&self) -> u64 {
        self.rejection_count
    }

    pub fn landmark_count(&self) -> usize {
        self.landmark_ids.len()
    }

    pub fn landmark(&self, index: usize) -> Result<Landmark> {
        if index >= self.landmark_ids.len() {
            return Err(Error::Domain(format!("landmark index {index} out of range")));
        }
        let base = POSE_DIM + LM_DIM * index;
        let position = Vector3::new(self.mean[base], self.mean[base + 1], self.mean[base + 2]);
        let mut covariance = Matrix3::zeros();
        for i in 0..LM_DIM {
            for j in 0..LM_DIM {
                covariance[(i, j)] = self.cov[(base + i, base + j)];
            }
        }
        Ok(Landmark {
            position,
            covariance,
            uncertainty_score: covariance.trace(),
            id: self.landmark_ids[index],
            index,
        })
    }

    /// The landmark bank: every landmark, sorted ascending by uncertainty,
    /// ties broken by earliest insertion.
    pub fn landmark_bank(&self) -> Vec<Landmark> {
        let mut bank: Vec<Landmark> =
            (0..self.landmark_ids.len()).map(|i| self.landmark(i).unwrap()).collect();
        bank.sort_by(|a, b| {
            a.uncertainty_score
                .partial_cmp(&b.uncertainty_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.id.cmp(&b.id))
        });
        bank
    }

    /// Minimum-uncertainty landmark; earliest-inserted wins ties.
    pub fn best_landmark(&self) -> Result<Landmark> {
        self.landmark_bank().into_iter().next().ok_or(Error::NoLandmark)
    }

    /// Propagate the pose through a commanded motion increment. Landmarks
    /// are static; only the pose block gains process noise.
    pub fn predict(&mut self, control: &PoseDelta, dt: f64) -> Result<()> {
        if dt <= 0.0 {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        self.mean[0] += control.dx;
        self.mean[1] += control.dy;
        self.mean[2] += control.dz;
        self.mean[3] = normalize_deg(self.mean[3] + control.dazimuth);
        self.mean[4] += control.delevation;
        let q = self.process_noise.diagonal(dt);
        for i in 0..POSE_DIM {
            self.cov[(i, i)] += q[i];
        }
        self.symmetrize();
        Ok(())
    }

    /// Standard gated EKF update in Joseph form.
    pub fn update(&mut self, measurement: &Measurement) -> Result<UpdateOutcome> {
        let (innovation, jacobian, noise) = self.linearize(measurement)?;
        let m = innovation.len();
        let s = &jacobian * &self.cov * jacobian.transpose() + &noise;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Estimation("innovation covariance singular".into()))?;
        let mahal = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
        let gate = CHI2_99[m.min(5)];
        if mahal > gate {
            self.rejection_count += 1;
            log::debug!("measurement rejected: mahalanobis^2 {mahal:.2} > {gate:.2}");
            return Ok(UpdateOutcome::Rejected { mahalanobis_sq: mahal });
        }

        let n = self.dim();
        let gain = &self.cov * jacobian.transpose() * &s_inv;
        self.mean += &gain * &innovation;
        self.mean[3] = normalize_deg(self.mean[3]);
        let i_kh = DMatrix::identity(n, n) - &gain * &jacobian;
        self.cov = &i_kh * &self.cov * i_kh.transpose() + &gain * noise * gain.transpose();
        self.symmetrize();
        Ok(UpdateOutcome::Applied)
    }

    fn linearize(&self, measurement: &Measurement) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        match measurement {
            Measurement::EncoderPose { pose, std } => {
                let mut y = DVector::zeros(POSE_DIM);
                y[0] = pose.x - self.mean[0];
                y[1] = pose.y - self.mean[1];
                y[2] = pose.z - self.mean[2];
                y[3] = normalize_deg(pose.azimuth - self.mean[3]);
                y[4] = pose.elevation - self.mean[4];
                let mut h = DMatrix::zeros(POSE_DIM, n);
                let mut r = DMatrix::zeros(POSE_DIM, POSE_DIM);
                for i in 0..POSE_DIM {
                    h[(i, i)] = 1.0;
                    r[(i, i)] = std[i] * std[i];
                }
                Ok((y, h, r))
            }
            Measurement::RangeToLandmark { index, range, std } => {
                let lm = self.landmark(*index)?;
                let eff = Vector3::new(self.mean[0], self.mean[1], self.mean[2]);
                let diff = eff - lm.position;
                let dist = diff.norm().max(1e-9);
                let mut y = DVector::zeros(1);
                y[0] = range - dist;
                let grad = diff / dist;
                let mut h = DMatrix::zeros(1, n);
                let base = POSE_DIM + LM_DIM * index;
                for i in 0..3 {
                    h[(0, i)] = grad[i];
                    h[(0, base + i)] = -grad[i];
                }
                let mut r = DMatrix::zeros(1, 1);
                r[(0, 0)] = std * std;
                Ok((y, h, r))
            }
            Measurement::BearingToLandmark { index, azimuth, elevation, std_deg } => {
                let lm = self.landmark(*index)?;
                let eff = Vector3::new(self.mean[0], self.mean[1], self.mean[2]);
                let d = lm.position - eff;
                let horiz_sq = d.x * d.x + d.y * d.y;
                let horiz = horiz_sq.sqrt().max(1e-9);
                let dist_sq = (horiz_sq + d.z * d.z).max(1e-12);
                let pred_az = d.y.atan2(d.x).to_degrees();
                let pred_el = d.z.atan2(horiz).to_degrees();
                let mut y = DVector::zeros(2);
                y[0] = normalize_deg(azimuth - pred_az);
                y[1] = elevation - pred_el;

                let deg = 180.0 / std::f64::consts::PI;
                // d(az)/d(effector) = -d(az)/d(landmark)
                let daz_dl = [-d.y / horiz_sq * deg, d.x / horiz_sq * deg, 0.0];
                let del_dl = [
                    -d.x * d.z / (horiz * dist_sq) * deg,
                    -d.y * d.z / (horiz * dist_sq) * deg,
                    horiz / dist_sq * deg,
                ];
                let mut h = DMatrix::zeros(2, n);
                let base = POSE_DIM + LM_DIM * index;
                for i in 0..3 {
                    h[(0, base + i)] = daz_dl[i];
                    h[(0, i)] = -daz_dl[i];
                    h[(1, base + i)] = del_dl[i];
                    h[(1, i)] = -del_dl[i];
                }
                let mut r = DMatrix::zeros(2, 2);
                r[(0, 0)] = std_deg * std_deg;
                r[(1, 1)] = std_deg * std_deg;
                Ok((y, h, r))
            }
            Measurement::LandmarkPosition { index, position, covariance } => {
                let lm = self.landmark(*index)?;
                let mut y = DVector::zeros(3);
                for i in 0..3 {
                    y[i] = position[i] - lm.position[i];
                }
                let mut h = DMatrix::zeros(3, n);
                let base = POSE_DIM + LM_DIM * index;
                for i in 0..3 {
                    h[(i, base + i)] = 1.0;
                }
                let mut r = DMatrix::zeros(3, 3);
                for i in 0..3 {
                    for j in 0..3 {
                        r[(i, j)] = covariance[(i, j)];
                    }
                }
                Ok((y, h, r))
            }
        }
    }

    /// Append a new landmark with the given prior; no cross-correlation.
    pub fn add_landmark(&mut self, position: &Vector3<f64>, covariance: &Matrix3<f64>) -> Result<usize> {
        if !is_psd(covariance) {
            return Err(Error::Domain("landmark covariance must be PSD".into()));
        }
        let old = self.dim();
        let new = old + LM_DIM;
        let mut mean = DVector::zeros(new);
        mean.rows_mut(0, old).copy_from(&self.mean);
        for i in 0..3 {
            mean[old + i] = position[i];
        }
        let mut cov = DMatrix::zeros(new, new);
        cov.view_mut((0, 0), (old, old)).copy_from(&self.cov);
        for i in 0..3 {
            for j in 0..3 {
                cov[(old + i, old + j)] = covariance[(i, j)];
            }
        }
        self.mean = mean;
        self.cov = cov;
        self.landmark_ids.push(self.next_id);
        self.next_id += 1;
        Ok(self.landmark_ids.len() - 1)
    }

    fn remove_landmark(&mut self, index: usize) {
        let base = POSE_DIM + LM_DIM * index;
        let old = self.dim();
        let new = old - LM_DIM;
        let mut mean = DVector::zeros(new);
        let mut cov = DMatrix::zeros(new, new);
        let keep: Vec<usize> = (0..old).filter(|&i| i < base || i >= base + LM_DIM).collect();
        for (ni, &oi) in keep.iter().enumerate() {
            mean[ni] = self.mean[oi];
            for (nj, &oj) in keep.iter().enumerate() {
                cov[(ni, nj)] = self.cov[(oi, oj)];
            }
        }
        self.mean = mean;
        self.cov = cov;
        self.landmark_ids.remove(index);
    }

    /// Merge a candidate source position into the bank: fuse with the
    /// nearest landmark when within the merge radius (covariance-weighted,
    /// via a position pseudo-measurement), otherwise append, evicting the
    /// most uncertain landmark if the bank is full.
    pub fn upsert_landmark(
        &mut self,
        candidate: &Vector3<f64>,
        covariance: &Matrix3<f64>,
    ) -> Result<UpsertOutcome> {
        if !is_psd(covariance) {
            return Err(Error::Domain("candidate covariance must be PSD".into()));
        }
        let mut nearest: Option<(usize, f64)> = None;
        for i in 0..self.landmark_ids.len() {
            let lm = self.landmark(i)?;
            let d = (lm.position - candidate).norm();
            if nearest.map_or(true, |(_, best)| d < best) {
                nearest = Some((i, d));
            }
        }
        if let Some((index, d)) = nearest {
            if d <= self.merge_radius {
                let m = Measurement::LandmarkPosition {
                    index,
                    position: *candidate,
                    covariance: *covariance,
                };
                if matches!(self.update(&m)?, UpdateOutcome::Applied) {
                    return Ok(UpsertOutcome::Fused { index });
                }
                // gate rejected the fuse: fall through and insert separately
            }
        }
        if self.landmark_ids.len() >= self.landmark_cap {
            let worst = self
                .landmark_bank()
                .last()
                .map(|lm| (lm.index, lm.id))
                .ok_or(Error::NoLandmark)?;
            log::debug!("landmark bank full: evicting id {}", worst.1);
            self.remove_landmark(worst.0);
            let index = self.add_landmark(candidate, covariance)?;
            return Ok(UpsertOutcome::InsertedWithEviction { index, evicted_id: worst.1 });
        }
        let index = self.add_landmark(candidate, covariance)?;
        Ok(UpsertOutcome::Inserted { index })
    }

    fn symmetrize(&mut self) {
        let t = self.cov.transpose();
        self.cov = (&self.cov + t) * 0.5;
    }

    /// Largest absolute asymmetry, for invariant checks.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn min_cov_eigenvalue(&self) -> f64 {
        self.cov.clone().symmetric_eigen().eigenvalues.min()
    }
}

fn is_psd(m: &Matrix3<f64>) -> bool {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-12)
}
