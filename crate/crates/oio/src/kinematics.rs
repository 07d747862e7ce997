//! 5-DoF arm simulation: jerk-limited joint dynamics, encoder drift,
//! forward kinematics, damped least-squares Cartesian stepping and dead
//! reckoning.
//!
//! The chain is base (azimuth) and shoulder (elevation) co-located at the
//! origin, then elbow tilt, wrist tilt and wrist roll, with four link
//! segments between the pitch joints and the effector. All angles are in
//! degrees, rates in deg/s, deg/s^2 and deg/s^3.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The five joints, in fixed chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointId {
    Base,
    Shoulder,
    Elbow,
    WristTilt,
    WristRoll,
}

impl JointId {
    pub const ALL: [JointId; 5] = [
        JointId::Base,
        JointId::Shoulder,
        JointId::Elbow,
        JointId::WristTilt,
        JointId::WristRoll,
    ];

    pub fn index(self) -> usize {
        match self {
            JointId::Base => 0,
            JointId::Shoulder => 1,
            JointId::Elbow => 2,
            JointId::WristTilt => 3,
            JointId::WristRoll => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Base => "base",
            JointId::Shoulder => "shoulder",
            JointId::Elbow => "elbow",
            JointId::WristTilt => "wrist_tilt",
            JointId::WristRoll => "wrist_roll",
        }
    }
}

/// Per-joint kinematic state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// deg
    pub angle: f64,
    /// deg/s
    pub velocity: f64,
    /// deg/s^2
    pub acceleration: f64,
    /// deg/s^3
    pub jerk: f64,
}

/// Saturation limits shared by all joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// deg/s
    pub velocity: f64,
    /// deg/s^2
    pub acceleration: f64,
    /// deg/s^3
    pub jerk: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        MotionLimits { velocity: 10.0, acceleration: 700.0, jerk: 300.0 }
    }
}

/// Per-joint encoder drift rates (deg/s^2) with a global noise scale.
///
/// The reported (encoder) angle is driven by a Gaussian random walk at the
/// acceleration level, integrated twice into angle, so the true and the
/// reported angle diverge over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderDriftModel {
    /// deg/s^2 per joint, chain order
    pub rates: [f64; 5],
    /// multiplier on every drawn increment; 0 disables drift
    pub noise_scale: f64,
}

impl Default for EncoderDriftModel {
    fn default() -> Self {
        EncoderDriftModel { rates: [2e-2, 1e-2, 3e-3, 1e-3, 1e-3], noise_scale: 1.0 }
    }
}

impl EncoderDriftModel {
    pub fn disabled() -> Self {
        EncoderDriftModel { noise_scale: 0.0, ..Default::default() }
    }
}

/// Effector position plus pointing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// deg, normalized to [-180, 180)
    pub azimuth: f64,
    /// deg, in [-90, 90]
    pub elevation: f64,
}

impl EffectorPose {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Unit vector along the tool axis.
    pub fn direction(&self) -> Vector3<f64> {
        let az = self.azimuth.to_radians();
        let el = self.elevation.to_radians();
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Wrap an angle in degrees to [-180, 180).
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a >= 180.0 {
        a -= 360.0;
    }
    a
}

/// One of the six Cartesian step directions, or staying still.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDirection {
    Left,
    Right,
    Up,
    Down,
    Forward,
    Backward,
    Stay,
}

impl StepDirection {
    pub fn axis(self) -> Vector3<f64> {
        match self {
            StepDirection::Forward => Vector3::new(1.0, 0.0, 0.0),
            StepDirection::Backward => Vector3::new(-1.0, 0.0, 0.0),
            StepDirection::Left => Vector3::new(0.0, 1.0, 0.0),
            StepDirection::Right => Vector3::new(0.0, -1.0, 0.0),
            StepDirection::Up => Vector3::new(0.0, 0.0, 1.0),
            StepDirection::Down => Vector3::new(0.0, 0.0, -1.0),
            StepDirection::Stay => Vector3::zeros(),
        }
    }

    pub fn opposite(self) -> StepDirection {
        match self {
            StepDirection::Left => StepDirection::Right,
            StepDirection::Right => StepDirection::Left,
            StepDirection::Up => StepDirection::Down,
            StepDirection::Down => StepDirection::Up,
            StepDirection::Forward => StepDirection::Backward,
            StepDirection::Backward => StepDirection::Forward,
            StepDirection::Stay => StepDirection::Stay,
        }
    }
}

/// Joint acceleration command resolved from a Cartesian step request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianCommand {
    /// deg/s^2 per joint
    pub accel: [f64; 5],
    /// true when the requested step was clamped to the workspace envelope
    pub at_envelope: bool,
}

impl CartesianCommand {
    pub fn zero() -> Self {
        CartesianCommand { accel: [0.0; 5], at_envelope: false }
    }
}

/// Outcome of one integration step: which joints had their command clamped.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub command_clamped: [bool; 5],
}

impl StepReport {
    pub fn any_clamped(&self) -> bool {
        self.command_clamped.iter().any(|&c| c)
    }
}

/// A recorded pose increment, the unit dead reckoning integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dazimuth: f64,
    pub delevation: f64,
}

impl PoseDelta {
    pub fn between(from: &EffectorPose, to: &EffectorPose) -> Self {
        PoseDelta {
            dx: to.x - from.x,
            dy: to.y - from.y,
            dz: to.z - from.z,
            dazimuth: normalize_deg(to.azimuth - from.azimuth),
            delevation: to.elevation - from.elevation,
        }
    }
}

/// Full arm state: true joint dynamics plus the drifting encoder image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    joints: [JointState; 5],
    /// encoder-reported angles, deg
    reported: [f64; 5],
    drift_pos: [f64; 5],
    drift_vel: [f64; 5],
    drift_acc: [f64; 5],
    /// meters: shoulder->elbow, elbow->wrist tilt, wrist tilt->wrist roll,
    /// wrist roll->effector
    pub link_lengths: [f64; 4],
    pub limits: MotionLimits,
    /// DoF mask for the reduced configurations; disabled joints stay frozen
    pub enabled: [bool; 5],
    effector: EffectorPose,
}

pub const DEFAULT_LINK_LENGTHS: [f64; 4] = [0.2, 0.3, 0.3, 0.1];

impl ArmState {
    pub fn new(link_lengths: [f64; 4], limits: MotionLimits) -> Result<Self> {
        if link_lengths.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        let joints = [JointState::default(); 5];
        let angles = [0.0; 5];
        let effector = forward_kinematics(&angles, &link_lengths)?;
        Ok(ArmState {
            joints,
            reported: angles,
            drift_pos: [0.0; 5],
            drift_vel: [0.0; 5],
            drift_acc: [0.0; 5],
            link_lengths,
            limits,
            enabled: [true; 5],
            effector,
        })
    }

    pub fn with_angles(link_lengths: [f64; 4], limits: MotionLimits, angles: [f64; 5]) -> Result<Self> {
        let mut arm = ArmState::new(link_lengths, limits)?;
        arm.set_angles(angles);
        Ok(arm)
    }

    /// Overwrite joint angles (rates reset to zero); drift state is kept.
    pub fn set_angles(&mut self, angles: [f64; 5]) {
        for (i, a) in angles.iter().enumerate() {
            self.joints[i] = JointState { angle: *a, ..JointState::default() };
            self.reported[i] = *a + self.drift_pos[i];
        }
        self.refresh_effector();
    }

    pub fn joint(&self, id: JointId) -> &JointState {
        &self.joints[id.index()]
    }

    pub fn true_angles(&self) -> [f64; 5] {
        let mut a = [0.0; 5];
        for i in 0..5 {
            a[i] = self.joints[i].angle;
        }
        a
    }

    pub fn reported_angles(&self) -> [f64; 5] {
        self.reported
    }

    pub fn total_reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Effector pose derived from the true joint angles. Kept in sync with
    /// every mutation.
    pub fn effector(&self) -> EffectorPose {
        self.effector
    }

    /// Pose the robot believes it has, from the encoder angles.
    pub fn reported_pose(&self) -> EffectorPose {
        forward_kinematics(&self.reported, &self.link_lengths)
            .expect("reported angles always complete")
    }

    fn refresh_effector(&mut self) {
        self.effector = forward_kinematics(&self.true_angles(), &self.link_lengths)
            .expect("true angles always complete");
    }

    /// Integrate one jerk-limited step toward the commanded per-joint
    /// acceleration. Commands beyond the acceleration limit are clamped and
    /// flagged in the report; saturation of jerk and velocity is normal
    /// behavior and not flagged.
    pub fn step_motion(&mut self, command: &[f64; 5], dt: f64) -> Result<StepReport> {
        if dt <= 0.0 {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let mut report = StepReport::default();
        let lim = self.limits;
        for i in 0..5 {
            if !self.enabled[i] {
                continue;
            }
            let mut cmd = command[i];
            if cmd.abs() > lim.acceleration {
                cmd = cmd.clamp(-lim.acceleration, lim.acceleration);
                report.command_clamped[i] = true;
            }
            let j = &mut self.joints[i];
            let jerk = ((cmd - j.acceleration) / dt).clamp(-lim.jerk, lim.jerk);
            let mut accel = (j.acceleration + jerk * dt).clamp(-lim.acceleration, lim.acceleration);
            let mut vel = j.velocity + 0.5 * (j.acceleration + accel) * dt;
            if vel.abs() > lim.velocity {
                // velocity saturation sheds acceleration
                vel = vel.clamp(-lim.velocity, lim.velocity);
                accel = 0.0;
            }
            let angle = j.angle + 0.5 * (j.velocity + vel) * dt;
            j.jerk = jerk;
            j.acceleration = accel;
            j.velocity = vel;
            j.angle = angle;
            self.reported[i] = angle + self.drift_pos[i];
        }
        self.refresh_effector();
        Ok(report)
    }

    /// Active stop: rates to zero, angles held. Used between 1 s actions.
    pub fn halt(&mut self) {
        for j in &mut self.joints {
            j.velocity = 0.0;
            j.acceleration = 0.0;
            j.jerk = 0.0;
        }
    }

    /// Advance the encoder drift random walk. Only the reported angles move;
    /// the true joint state is untouched.
    pub fn apply_encoder_drift<R: Rng + ?Sized>(
        &mut self,
        model: &EncoderDriftModel,
        dt: f64,
        rng: &mut R,
    ) -> Result<()> {
        if dt <= 0.0 {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        for i in 0..5 {
            let sd = model.rates[i] * dt * model.noise_scale;
            if sd > 0.0 {
                let dist = Normal::new(0.0, sd)
                    .map_err(|e| Error::Domain(format!("bad drift std: {e}")))?;
                self.drift_acc[i] += dist.sample(rng);
            }
            self.drift_vel[i] += self.drift_acc[i] * dt;
            self.drift_pos[i] += self.drift_vel[i] * dt;
            self.reported[i] = self.joints[i].angle + self.drift_pos[i];
        }
        Ok(())
    }

    /// Resolve a Cartesian step request into per-joint accelerations via
    /// damped least-squares on the position Jacobian. The returned command
    /// assumes the 1 s accelerate/cruise/brake profile of
    /// [`action_profile_accel`], which displaces each joint by 3/16 of its
    /// commanded acceleration.
    pub fn cartesian_step(&self, direction: StepDirection, step_m: f64) -> Result<CartesianCommand> {
        if step_m < 0.0 {
            return Err(Error::Domain(format!("step must be non-negative, got {step_m}")));
        }
        if direction == StepDirection::Stay {
            return Ok(CartesianCommand::zero());
        }
        let mut d = direction.axis() * step_m;
        let pos = self.effector.position();
        let reach = self.total_reach();
        let r_max = 0.97 * reach;
        let r_min = 0.12 * reach;
        let mut at_envelope = false;
        let target = pos + d;
        let r_target = target.norm();
        if r_target > r_max || r_target < r_min {
            // best effort: shrink the step until the target sits on the envelope
            let mut lo = 0.0;
            let mut hi = 1.0;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let r = (pos + d * mid).norm();
                if r > r_max || r < r_min {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            d *= lo;
            at_envelope = true;
        }

        let jac = self.position_jacobian_deg();
        let damping = 1e-3;
        let jjt = &jac * jac.transpose() + Matrix3::identity() * damping * damping;
        let rhs = jjt
            .lu()
            .solve(&d)
            .ok_or_else(|| Error::Degenerate("Jacobian normal equations singular".into()))?;
        let dq = jac.transpose() * rhs; // deg per joint

        // Norm-clamp so the profile peak velocity (4/3 dq) stays below the
        // velocity limit: saturation would truncate joints unevenly and
        // skew the realized direction. This also bounds commands near
        // singularities.
        let max_dq = dq.amax();
        let dq_cap = self.limits.velocity * 0.75;
        let scale = if max_dq > dq_cap { dq_cap / max_dq } else { 1.0 };

        let mut accel = [0.0; 5];
        for i in 0..5 {
            accel[i] = 16.0 / 3.0 * dq[i] * scale;
        }
        Ok(CartesianCommand { accel, at_envelope })
    }

    /// Geometric position Jacobian in meters per degree (3 x 5).
    fn position_jacobian_deg(&self) -> nalgebra::Matrix3x5<f64> {
        let angles = self.true_angles();
        let l = self.link_lengths;
        let az = angles[0].to_radians();
        let pitch_axis = Vector3::new(az.sin(), -az.cos(), 0.0); // Rz(az) * (0,-1,0)

        // joint origins along the chain
        let s = angles[1].to_radians();
        let e = angles[2].to_radians();
        let w = angles[3].to_radians();
        let dir1 = Vector3::new((s).cos() * az.cos(), (s).cos() * az.sin(), s.sin());
        let dir2 = Vector3::new(
            (s + e).cos() * az.cos(),
            (s + e).cos() * az.sin(),
            (s + e).sin(),
        );
        let dir3 = Vector3::new(
            (s + e + w).cos() * az.cos(),
            (s + e + w).cos() * az.sin(),
            (s + e + w).sin(),
        );
        let p_elbow = dir1 * l[0];
        let p_wrist_tilt = p_elbow + dir2 * l[1];
        let p_roll = p_wrist_tilt + dir3 * l[2];
        let p_eff = self.effector.position();

        let deg = std::f64::consts::PI / 180.0;
        let col = |axis: Vector3<f64>, origin: Vector3<f64>| (axis.cross(&(p_eff - origin))) * deg;

        let c0 = col(Vector3::z(), Vector3::zeros());
        let c1 = col(pitch_axis, Vector3::zeros());
        let c2 = col(pitch_axis, p_elbow);
        let c3 = col(pitch_axis, p_wrist_tilt);
        let c4 = col(dir3, p_roll); // roll axis: ~zero translation authority

        let mut jac = nalgebra::Matrix3x5::zeros();
        for (idx, c) in [c0, c1, c2, c3, c4].iter().enumerate() {
            if self.enabled[idx] {
                jac.set_column(idx, c);
            }
        }
        jac
    }
}

/// Acceleration schedule of the 1 s action: accelerate for the first
/// quarter, cruise for the middle half, brake for the last quarter. Peak
/// velocity is accel/4 and the net joint displacement is 3/16 accel.
pub fn action_profile_accel(accel: &[f64; 5], phase: f64) -> [f64; 5] {
    if phase < 0.25 {
        *accel
    } else if phase < 0.75 {
        [0.0; 5]
    } else {
        accel.map(|a| -a)
    }
}

/// Serial-chain forward kinematics: base azimuth and shoulder elevation at
/// the origin, then elbow, wrist tilt and wrist roll, each pitch rotating
/// about the plane normal and the roll about the link axis.
pub fn forward_kinematics(angles_deg: &[f64; 5], link_lengths: &[f64; 4]) -> Result<EffectorPose> {
    if link_lengths.iter().any(|&l| l <= 0.0) {
        return Err(Error::Config("link lengths must be positive".into()));
    }
    if angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::Config("joint angles must be finite".into()));
    }
    let [base, shoulder, elbow, wrist_tilt, wrist_roll] = angles_deg.map(f64::to_radians);

    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), base);
    let pitch = |a: f64| Rotation3::from_axis_angle(&(-Vector3::y_axis()), a);
    let roll = Rotation3::from_axis_angle(&Vector3::x_axis(), wrist_roll);

    let r1 = rz * pitch(shoulder);
    let r2 = r1 * pitch(elbow);
    let r3 = r2 * pitch(wrist_tilt);
    let r4 = r3 * roll;

    let x_axis = Vector3::x();
    let p = r1 * (x_axis * link_lengths[0])
        + r2 * (x_axis * link_lengths[1])
        + r3 * (x_axis * link_lengths[2])
        + r4 * (x_axis * link_lengths[3]);

    let dir = r4 * x_axis;
    let azimuth = normalize_deg(dir.y.atan2(dir.x).to_degrees());
    let elevation = dir.z.atan2((dir.x * dir.x + dir.y * dir.y).sqrt()).to_degrees();

    Ok(EffectorPose { x: p.x, y: p.y, z: p.z, azimuth, elevation })
}

/// Integrate recorded pose increments open loop, with no drift correction.
/// The first element of the returned trajectory is the initial pose.
pub fn dead_reckon(initial: &EffectorPose, deltas: &[PoseDelta]) -> Vec<EffectorPose> {
    let mut track = Vec::with_capacity(deltas.len() + 1);
    let mut pose = *initial;
    track.push(pose);
    for d in deltas {
        pose.x += d.dx;
        pose.y += d.dy;
        pose.z += d.dz;
        pose.azimuth = normalize_deg(pose.azimuth + d.dazimuth);
        pose.elevation = (pose.elevation + d.delevation).clamp(-90.0, 90.0);
        track.push(pose);
    }
    track
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_arm() -> ArmState {
        ArmState::new(DEFAULT_LINK_LENGTHS, MotionLimits::default()).unwrap()
    }

    // independent 4x4 homogeneous-transform oracle for the same chain
    mod mat4 {
        pub type M4 = [[f64; 4]; 4];

        pub fn identity() -> M4 {
            let mut m = [[0.0; 4]; 4];
            for i in 0..4 {
                m[i][i] = 1.0;
            }
            m
        }

        pub fn mul(a: &M4, b: &M4) -> M4 {
            let mut out = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        out[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            out
        }

        pub fn rot_z(a: f64) -> M4 {
            let (s, c) = a.sin_cos();
            let mut m = identity();
            m[0][0] = c;
            m[0][1] = -s;
            m[1][0] = s;
            m[1][1] = c;
            m
        }

        pub fn rot_neg_y(a: f64) -> M4 {
            // rotation about (0,-1,0) by a
            let (s, c) = a.sin_cos();
            let mut m = identity();
            m[0][0] = c;
            m[0][2] = -s;
            m[2][0] = s;
            m[2][2] = c;
            m
        }

        pub fn rot_x(a: f64) -> M4 {
            let (s, c) = a.sin_cos();
            let mut m = identity();
            m[1][1] = c;
            m[1][2] = -s;
            m[2][1] = s;
            m[2][2] = c;
            m
        }

        pub fn trans_x(d: f64) -> M4 {
            let mut m = identity();
            m[0][3] = d;
            m
        }
    }

    fn fk_oracle(angles_deg: &[f64; 5], links: &[f64; 4]) -> (f64, f64, f64) {
        use mat4::*;
        let a: Vec<f64> = angles_deg.iter().map(|d| d.to_radians()).collect();
        let mut t = rot_z(a[0]);
        t = mul(&t, &rot_neg_y(a[1]));
        t = mul(&t, &trans_x(links[0]));
        t = mul(&t, &rot_neg_y(a[2]));
        t = mul(&t, &trans_x(links[1]));
        t = mul(&t, &rot_neg_y(a[3]));
        t = mul(&t, &trans_x(links[2]));
        t = mul(&t, &rot_x(a[4]));
        t = mul(&t, &trans_x(links[3]));
        (t[0][3], t[1][3], t[2][3])
    }

    #[test]
    fn fk_zero_pose_full_extension() {
        let pose = forward_kinematics(&[0.0; 5], &DEFAULT_LINK_LENGTHS).unwrap();
        assert_relative_eq!(pose.x, 0.9, epsilon = 1e-12);
        assert_relative_eq!(pose.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.azimuth, 0.0, epsilon = 1e-12);
        assert_relative_eq!(pose.elevation, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fk_base_rotation_preserves_radius() {
        let pose = forward_kinematics(&[90.0, 0.0, 0.0, 0.0, 0.0], &DEFAULT_LINK_LENGTHS).unwrap();
        let radius = (pose.x * pose.x + pose.y * pose.y).sqrt();
        assert_relative_eq!(radius, 0.9, epsilon = 1e-12);
        assert_relative_eq!(pose.azimuth, 90.0, epsilon = 1e-9);
        assert_relative_eq!(pose.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_homogeneous_transform_oracle() {
        let cases = [
            [0.0, 30.0, -30.0, 0.0, 0.0],
            [45.0, 10.0, -50.0, 20.0, 90.0],
            [-120.0, 60.0, -100.0, 45.0, -30.0],
            [179.0, -20.0, 15.0, -40.0, 10.0],
        ];
        for angles in cases {
            let pose = forward_kinematics(&angles, &DEFAULT_LINK_LENGTHS).unwrap();
            let (x, y, z) = fk_oracle(&angles, &DEFAULT_LINK_LENGTHS);
            assert_relative_eq!(pose.x, x, epsilon = 1e-9);
            assert_relative_eq!(pose.y, y, epsilon = 1e-9);
            assert_relative_eq!(pose.z, z, epsilon = 1e-9);
        }
    }

    #[test]
    fn fk_base_rotation_invariance_property() {
        let base_angles = [0.0, 25.0, -40.0, 15.0, 5.0];
        let p0 = forward_kinematics(&base_angles, &DEFAULT_LINK_LENGTHS).unwrap();
        let r0 = (p0.x * p0.x + p0.y * p0.y).sqrt();
        for rot in [-170.0, -45.0, 30.0, 90.0, 160.0] {
            let mut a = base_angles;
            a[0] = rot;
            let p = forward_kinematics(&a, &DEFAULT_LINK_LENGTHS).unwrap();
            let r = (p.x * p.x + p.y * p.y).sqrt();
            assert_relative_eq!(r, r0, epsilon = 1e-9);
            assert_relative_eq!(p.z, p0.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn fk_rejects_bad_links() {
        assert!(forward_kinematics(&[0.0; 5], &[0.0, 0.3, 0.3, 0.1]).is_err());
    }

    #[test]
    fn step_motion_rest_is_fixed_point() {
        let mut arm = default_arm();
        let before = arm.clone();
        arm.step_motion(&[0.0; 5], 0.05).unwrap();
        assert_eq!(arm, before);
    }

    #[test]
    fn step_motion_velocity_plateaus_at_limit() {
        let mut arm = default_arm();
        for _ in 0..200 {
            arm.step_motion(&[700.0, 0.0, 0.0, 0.0, 0.0], 0.05).unwrap();
        }
        assert_eq!(arm.joint(JointId::Base).velocity, 10.0);
    }

    // closed-form jerk-limited ramp from rest: a(t) = j t while a < cmd
    fn ramp_velocity(cmd: f64, jerk: f64, t: f64) -> f64 {
        let t_jerk = cmd / jerk;
        if t <= t_jerk {
            0.5 * jerk * t * t
        } else {
            0.5 * jerk * t_jerk * t_jerk + cmd * (t - t_jerk)
        }
    }

    #[test]
    fn step_motion_matches_jerk_ramp_closed_form() {
        let mut arm = default_arm();
        arm.step_motion(&[700.0, 0.0, 0.0, 0.0, 0.0], 0.01).unwrap();
        let expect = ramp_velocity(700.0, 300.0, 0.01);
        assert_relative_eq!(arm.joint(JointId::Base).velocity, expect, epsilon = 1e-12);
        assert_relative_eq!(expect, 0.015, epsilon = 1e-12);

        // multi-step agreement while within the jerk phase and below the
        // velocity cap (v(0.2) = 6 deg/s)
        let mut arm = default_arm();
        for _ in 0..20 {
            arm.step_motion(&[700.0, 0.0, 0.0, 0.0, 0.0], 0.01).unwrap();
        }
        assert_relative_eq!(
            arm.joint(JointId::Base).velocity,
            ramp_velocity(700.0, 300.0, 0.2),
            epsilon = 1e-9
        );
    }

    #[test]
    fn step_motion_saturations_never_violated() {
        let mut arm = default_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..2000 {
            let mut cmd = [0.0; 5];
            for c in &mut cmd {
                *c = rng.random_range(-900.0..900.0);
            }
            let report = arm.step_motion(&cmd, 0.02).unwrap();
            if k % 37 == 0 {
                arm.halt();
            }
            for i in 0..5 {
                let j = arm.joints[i];
                assert!(j.velocity.abs() <= 10.0 + 1e-12);
                assert!(j.acceleration.abs() <= 700.0 + 1e-12);
                assert!(j.jerk.abs() <= 300.0 + 1e-12);
                if cmd[i].abs() > 700.0 {
                    assert!(report.command_clamped[i]);
                }
            }
        }
    }

    #[test]
    fn drift_zero_rates_reported_equals_true() {
        let mut arm = default_arm();
        let model = EncoderDriftModel::disabled();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            arm.step_motion(&[20.0, -15.0, 10.0, 5.0, -5.0], 0.05).unwrap();
            arm.apply_encoder_drift(&model, 0.05, &mut rng).unwrap();
        }
        for i in 0..5 {
            assert_eq!(arm.reported[i], arm.joints[i].angle);
        }
    }

    #[test]
    fn drift_rate_statistic_recovers_table_value() {
        // third differences of the reported-minus-true offset recover the
        // acceleration-level increment std (= rate for dt = 1)
        let model = EncoderDriftModel::default();
        let dt = 1.0;
        let mut diffs = Vec::new();
        for seed in 0..400u64 {
            let mut arm = default_arm();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut offsets = Vec::with_capacity(101);
            offsets.push(0.0);
            for _ in 0..100 {
                arm.apply_encoder_drift(&model, dt, &mut rng).unwrap();
                offsets.push(arm.reported[0] - arm.joints[0].angle);
            }
            for w in offsets.windows(4) {
                diffs.push(w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]);
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let rate = var.sqrt() / dt.powi(3);
        assert!(
            (rate - 2e-2).abs() / 2e-2 < 0.10,
            "estimated base drift rate {rate} not within 10% of 2e-2"
        );
    }

    #[test]
    fn drift_is_deterministic_per_seed() {
        let model = EncoderDriftModel::default();
        let run = || {
            let mut arm = default_arm();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut out = Vec::new();
            for _ in 0..50 {
                arm.step_motion(&[100.0, 0.0, 0.0, 0.0, 0.0], 0.05).unwrap();
                arm.apply_encoder_drift(&model, 0.05, &mut rng).unwrap();
                out.push(arm.reported);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fixed_point_zero_drift_zero_command() {
        let mut arm = default_arm();
        arm.set_angles([10.0, 20.0, -30.0, 5.0, 0.0]);
        let before = arm.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        arm.step_motion(&[0.0; 5], 0.1).unwrap();
        arm.apply_encoder_drift(&EncoderDriftModel::disabled(), 0.1, &mut rng).unwrap();
        assert_eq!(arm, before);
    }

    fn execute_command(arm: &mut ArmState, cmd: &CartesianCommand) {
        let dt = 0.05;
        let steps = 20;
        for i in 0..steps {
            let phase = i as f64 / steps as f64;
            let c = action_profile_accel(&cmd.accel, phase);
            arm.step_motion(&c, dt).unwrap();
        }
        arm.halt();
    }

    #[test]
    fn cartesian_stay_is_zero() {
        let arm = default_arm();
        let cmd = arm.cartesian_step(StepDirection::Stay, 0.05).unwrap();
        assert_eq!(cmd, CartesianCommand::zero());
    }

    #[test]
    fn cartesian_up_raises_z() {
        let mut arm =
            ArmState::with_angles(DEFAULT_LINK_LENGTHS, MotionLimits::default(), [0.0, 45.0, -90.0, 45.0, 0.0])
                .unwrap();
        let before = arm.effector();
        let cmd = arm.cartesian_step(StepDirection::Up, 0.04).unwrap();
        execute_command(&mut arm, &cmd);
        let after = arm.effector();
        let dz = after.z - before.z;
        let dx = (after.x - before.x).abs();
        let dy = (after.y - before.y).abs();
        assert!(dz > 0.005, "z should rise, got dz = {dz}");
        assert!(dx <= 0.2 * dz, "x leak {dx} vs dz {dz}");
        assert!(dy <= 0.2 * dz, "y leak {dy} vs dz {dz}");
    }

    #[test]
    fn cartesian_opposites_negate() {
        let arm =
            ArmState::with_angles(DEFAULT_LINK_LENGTHS, MotionLimits::default(), [30.0, 40.0, -70.0, 20.0, 0.0])
                .unwrap();
        for (a, b) in [
            (StepDirection::Up, StepDirection::Down),
            (StepDirection::Left, StepDirection::Right),
            (StepDirection::Forward, StepDirection::Backward),
        ] {
            let ca = arm.cartesian_step(a, 0.03).unwrap();
            let cb = arm.cartesian_step(b, 0.03).unwrap();
            for i in 0..5 {
                assert_relative_eq!(ca.accel[i], -cb.accel[i], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn cartesian_envelope_flag() {
        // fully extended: any outward move is already at the envelope
        let arm = default_arm();
        let cmd = arm.cartesian_step(StepDirection::Forward, 0.05).unwrap();
        assert!(cmd.at_envelope);
    }

    #[test]
    fn dead_reckon_empty_history() {
        let pose = forward_kinematics(&[0.0; 5], &DEFAULT_LINK_LENGTHS).unwrap();
        let track = dead_reckon(&pose, &[]);
        assert_eq!(track.len(), 1);
        assert_eq!(track[0], pose);
    }

    #[test]
    fn dead_reckon_no_drift_equals_true_track() {
        let mut arm =
            ArmState::with_angles(DEFAULT_LINK_LENGTHS, MotionLimits::default(), [0.0, 60.0, -100.0, 40.0, 0.0])
                .unwrap();
        let initial = arm.reported_pose();
        let mut deltas = Vec::new();
        let mut truth = vec![arm.effector()];
        let mut prev = arm.reported_pose();
        for k in 0..40 {
            let dir = if k % 2 == 0 { StepDirection::Left } else { StepDirection::Up };
            let cmd = arm.cartesian_step(dir, 0.03).unwrap();
            execute_command(&mut arm, &cmd);
            let now = arm.reported_pose();
            deltas.push(PoseDelta::between(&prev, &now));
            prev = now;
            truth.push(arm.effector());
        }
        let track = dead_reckon(&initial, &deltas);
        assert_eq!(track.len(), truth.len());
        for (a, b) in track.iter().zip(truth.iter()) {
            assert_relative_eq!(a.x, b.x, epsilon = 1e-9);
            assert_relative_eq!(a.y, b.y, epsilon = 1e-9);
            assert_relative_eq!(a.z, b.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn dead_reckon_is_pure() {
        let pose = forward_kinematics(&[10.0, 20.0, -30.0, 0.0, 0.0], &DEFAULT_LINK_LENGTHS).unwrap();
        let deltas = vec![
            PoseDelta { dx: 0.01, dy: -0.02, dz: 0.005, dazimuth: 1.5, delevation: -0.5 },
            PoseDelta { dx: -0.03, dy: 0.00, dz: 0.010, dazimuth: -2.0, delevation: 0.25 },
        ];
        let a = dead_reckon(&pose, &deltas);
        let b = dead_reckon(&pose, &deltas);
        assert_eq!(a, b);
    }
}
