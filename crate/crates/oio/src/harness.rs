//! Experiment harness: composes arm, plume, sensors, bout detection, belief
//! maps and the EKF into seeded trials following the protocol (purge and
//! develop, warm-up fast-forward, five off-plume baseline samples, a 1 s
//! sense/decide/act loop, 60 s timeout, 10 cm success radius), and
//! aggregates per-cell statistics.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    sphere_from_reading, to_rssi, update_window_and_target, BeliefSphere, RadiusCalib,
    SigmaSource, SphereWindow,
};
use crate::bout::BoutDetectorState;
use crate::config::{PolicyKind, SimConfig};
use crate::fusion::{EkfState, Measurement, ProcessNoise, UpdateOutcome, UpsertOutcome};
use crate::kinematics::{ArmState, EffectorPose, PoseDelta};
use crate::nav::{
    action_toward, discretize_state, epsilon_greedy, train, Action, Algorithm, DiscreteState,
    EnvStep, GradientPolicy, NavEnv, QTable,
};
use crate::plume::{purge_and_develop, PlumeState};
use crate::sensors::{DualSample, DualSensorRig, OlfactionSensor, SensorKind, SensorReading, SensorSlot};
use crate::{Error, Result};

/// Discrete events recorded during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CommandClamped,
    AtEnvelope,
    MeasurementRejected,
    TargetSwitched,
    LandmarkEvicted,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::CommandClamped => "command_clamped",
            EventKind::AtEnvelope => "at_envelope",
            EventKind::MeasurementRejected => "measurement_rejected",
            EventKind::TargetSwitched => "target_switched",
            EventKind::LandmarkEvicted => "landmark_evicted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Tracking,
}

/// One sense/decide/act cycle of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// dual-sensor mean value
    pub reading: f64,
    pub rssi: f64,
    pub action: Action,
    pub in_plume: bool,
    pub phase: Phase,
    pub smoothed: f64,
}

/// Per-cycle sphere log entry (belief policy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereRow {
    pub sphere: BeliefSphere,
    pub target: Option<[f64; 3]>,
    pub source: SigmaSource,
}

/// Per-cycle filter state snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub trace_p: f64,
    pub landmarks: usize,
    pub best_uncertainty: Option<f64>,
    pub rejections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub time_to_locate: f64,
    pub trajectory: Vec<TraceRow>,
    pub readings: Vec<SensorReading>,
    pub spheres: Vec<SphereRow>,
    pub ekf_trace: Vec<EkfRow>,
    pub events: Vec<Event>,
    /// max |velocity|, |acceleration|, |jerk| seen on any joint substep
    pub kinematic_maxima: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: PolicyKind,
    pub sensor: SensorKind,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// mean of time_to_locate over successful trials, s
    pub mean_time: f64,
    /// sample std (n-1) over successful trials; 0 with fewer than 2
    pub std_time: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub trials: Vec<TrialResult>,
    pub learning_curve: Option<Vec<f64>>,
    pub qtable: Option<QTable>,
}

/// The composed simulation: arm, plume, dual-sensor rig and trial clock.
pub struct SimWorld {
    pub cfg: SimConfig,
    pub arm: ArmState,
    pub plume: PlumeState,
    pub rig: DualSensorRig,
    pub time: f64,
    pub source: Vector3<f64>,
    pub drift_enabled: bool,
    /// running max of |velocity|, |acceleration|, |jerk|
    pub kinematic_maxima: [f64; 3],
}

/// What one 1 s action execution reports back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecReport {
    pub clamped: bool,
    pub at_envelope: bool,
    /// commanded-motion pose increment (the control input)
    pub control_delta: PoseDelta,
    /// encoder-derived pose increment (the odometry stream)
    pub odometry_delta: PoseDelta,
    /// first time within the action at which the sensor crossed into the
    /// success radius, if it did
    pub crossed_at: Option<f64>,
}

impl SimWorld {
    pub fn new<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut plume_params = cfg.plume;
        plume_params.source_position = cfg.source_position();
        let plume = purge_and_develop(plume_params, cfg.trial.develop_time, rng)?;
        let arm = ArmState::with_angles(cfg.arm.link_lengths, cfg.arm.limits, cfg.trial.start_angles)?;

        let make = |slot: SensorSlot| -> OlfactionSensor {
            let mut s = match cfg.trial.sensor {
                SensorKind::Mox => OlfactionSensor::mox(cfg.sensors.mox, slot),
                SensorKind::Ec => OlfactionSensor::ec(cfg.sensors.ec, slot),
            };
            s.noise_sigma = cfg.sensors.noise_sigma;
            s.correction = cfg.sensors.correction;
            s
        };
        let mut rig = DualSensorRig::new(make(SensorSlot::A), make(SensorSlot::B))?;
        // warm-up is virtual time, fast-forwarded before the trial clock
        // starts; baseline drift re-zeroes with the purge
        rig.fast_forward_warmup();
        rig.reset_drift();

        let source = Vector3::from(plume_params.source_position);
        Ok(SimWorld {
            cfg: cfg.clone(),
            arm,
            plume,
            rig,
            time: 0.0,
            source,
            drift_enabled: true,
            kinematic_maxima: [0.0; 3],
        })
    }

    /// True sensor position: effector plus the mount offset along the tool.
    pub fn sensor_position(&self) -> Vector3<f64> {
        let pose = self.arm.effector();
        pose.position() + pose.direction() * self.rig.mount_offset
    }

    /// Sensor position as the robot believes it, from an estimated pose.
    pub fn believed_sensor_position(&self, estimate: &EffectorPose) -> Vector3<f64> {
        estimate.position() + estimate.direction() * self.rig.mount_offset
    }

    pub fn distance_to_source(&self) -> f64 {
        (self.sensor_position() - self.source).norm()
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DualSample> {
        let pos = self.sensor_position();
        let c = self.plume.concentration_at(&pos);
        self.rig.dual_sample(c, &self.cfg.environment, self.time, rng)
    }

    /// Execute one action for 1 s: accelerate for the first half, decelerate
    /// for the second, stop, while the plume keeps evolving and the encoder
    /// drift random walk advances.
    pub fn execute<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<ExecReport> {
        let cmd = self.arm.cartesian_step(action.direction(), self.cfg.trial.action_step)?;
        let before_true = self.arm.effector();
        let before_reported = self.arm.reported_pose();

        let dt = self.cfg.trial.substep_dt;
        let steps = (1.0 / dt).round().max(4.0) as usize;
        let mut clamped = false;
        let mut crossed_at = None;
        for i in 0..steps {
            let phase = i as f64 / steps as f64;
            let c = crate::kinematics::action_profile_accel(&cmd.accel, phase);
            let report = self.arm.step_motion(&c, dt)?;
            clamped |= report.any_clamped();
            if self.drift_enabled {
                self.arm.apply_encoder_drift(&self.cfg.arm.drift, dt, rng)?;
            }
            self.plume.step(&self.cfg.environment, dt, rng)?;
            if crossed_at.is_none() && self.distance_to_source() <= self.cfg.trial.success_radius {
                crossed_at = Some(self.time + (i + 1) as f64 * dt);
            }
            for id in crate::kinematics::JointId::ALL {
                let j = self.arm.joint(id);
                self.kinematic_maxima[0] = self.kinematic_maxima[0].max(j.velocity.abs());
                self.kinematic_maxima[1] = self.kinematic_maxima[1].max(j.acceleration.abs());
                self.kinematic_maxima[2] = self.kinematic_maxima[2].max(j.jerk.abs());
            }
        }
        self.arm.halt();
        self.time += 1.0;

        Ok(ExecReport {
            clamped,
            at_envelope: cmd.at_envelope,
            control_delta: PoseDelta::between(&before_true, &self.arm.effector()),
            odometry_delta: PoseDelta::between(&before_reported, &self.arm.reported_pose()),
            crossed_at,
        })
    }
}

/// Build a value-to-distance radius calibration from noise-free equilibrium
/// probes along the approach corridor of the developed plume (the "prior
/// experimental calibration" of the rig).
pub fn calibrate_radius_profile(
    cfg: &SimConfig,
    plume: &PlumeState,
    start_sensor: &Vector3<f64>,
) -> RadiusCalib {
    let fallback = RadiusCalib::Inverse { k: cfg.belief.default_k };
    let source = plume.source();
    let dir = start_sensor - source;
    let n = dir.norm();
    if n < 1e-9 {
        return fallback;
    }
    let dir = dir / n;
    let probe = match cfg.trial.sensor {
        SensorKind::Mox => OlfactionSensor::mox(cfg.sensors.mox, SensorSlot::A),
        SensorKind::Ec => OlfactionSensor::ec(cfg.sensors.ec, SensorSlot::A),
    };

    let mut values = Vec::new();
    let mut distances = Vec::new();
    // walk inward so collected values ascend
    let mut d = 1.40;
    while d >= 0.05 {
        let c = plume.deterministic_concentration_at(&(source + dir * d));
        let v = probe.equilibrium_response(c);
        if v > 1e-4 && values.last().map_or(true, |last| v > last + 1e-6) {
            values.push(v);
            distances.push(d);
        }
        d -= 0.025;
    }
    RadiusCalib::profile(values, distances).unwrap_or(fallback)
}

struct PolicyState {
    gradient: GradientPolicy,
    window: SphereWindow,
    target: Option<Vector3<f64>>,
    prev_rssi: Option<f64>,
}

/// Run one seeded trial under the configured policy, with the EKF running
/// throughout. Fully reproducible from the rng state.
pub fn run_trial<R: Rng + ?Sized>(
    cfg: &SimConfig,
    qtable: Option<&QTable>,
    rng: &mut R,
) -> Result<TrialResult> {
    cfg.validate()?;
    if cfg.trial.algorithm == PolicyKind::Rl && qtable.is_none() {
        return Err(Error::Config("rl policy needs a trained q-table".into()));
    }

    let mut world = SimWorld::new(cfg, rng)?;
    let start_sensor = world.sensor_position();
    let calib = if cfg.belief.calibrate_profile {
        calibrate_radius_profile(cfg, &world.plume, &start_sensor)
    } else {
        RadiusCalib::Inverse { k: cfg.belief.default_k }
    };

    let reach: f64 = cfg.arm.link_lengths.iter().sum();
    let mut ekf = EkfState::new(
        &world.arm.reported_pose(),
        cfg.ekf.initial_std,
        ProcessNoise::from_drift_rates(&cfg.arm.drift.rates, reach, 1.0),
    );
    ekf.merge_radius = cfg.ekf.merge_radius;
    ekf.landmark_cap = cfg.ekf.landmark_cap;

    let mut trajectory = Vec::new();
    let mut readings = Vec::new();
    let mut spheres = Vec::new();
    let mut ekf_trace = Vec::new();
    let mut events = Vec::new();

    let mut baseline_vals: Vec<f64> = Vec::new();
    let mut bout: Option<BoutDetectorState> = None;
    let mut policy = PolicyState {
        gradient: GradientPolicy::new(),
        window: SphereWindow::new(cfg.belief.window_cap),
        target: None,
        prev_rssi: None,
    };

    let mut success = false;
    let mut time_to_locate = cfg.trial.timeout;

    while world.time < cfg.trial.timeout - 1e-9 {
        let ds = world.sample(rng)?;
        readings.push(ds.reading);
        let rssi = to_rssi(ds.mean).value();

        let located_at_sample = world.distance_to_source() <= cfg.trial.success_radius;

        let (action, in_plume, phase, smoothed) = if let Some(det) = bout.as_mut() {
            let sig = det.detect(ds.mean);
            let in_plume = sig.smoothed > det.baseline_threshold() * cfg.trial.in_plume_factor;
            let improving = sig.toward_source || sig.delta > 0.0;
            let rssi_decreasing = policy.prev_rssi.map_or(false, |p| rssi < p);
            let action = if located_at_sample {
                Action::Stay
            } else {
                decide_action(
                    cfg, &mut world, &mut policy, &mut ekf, &calib, qtable, &mut spheres,
                    &mut events, &ds, improving, rssi_decreasing, rng,
                )?
            };
            (action, in_plume, Phase::Tracking, sig.smoothed)
        } else {
            baseline_vals.push(ds.mean);
            if baseline_vals.len() == cfg.bout.window_len {
                bout = Some(BoutDetectorState::init_baseline_with(
                    &baseline_vals,
                    cfg.bout.window_len,
                    cfg.bout.baseline_mode,
                )?);
            }
            (Action::Stay, false, Phase::Baseline, ds.mean)
        };

        let pos = world.arm.effector();
        trajectory.push(TraceRow {
            t: world.time,
            x: pos.x,
            y: pos.y,
            z: pos.z,
            reading: ds.mean,
            rssi,
            action,
            in_plume,
            phase,
            smoothed,
        });
        policy.prev_rssi = Some(rssi);

        if located_at_sample {
            success = true;
            time_to_locate = world.time;
            break;
        }

        let report = world.execute(action, rng)?;
        if report.clamped {
            events.push(Event { time: world.time, kind: EventKind::CommandClamped });
        }
        if report.at_envelope {
            events.push(Event { time: world.time, kind: EventKind::AtEnvelope });
        }

        ekf.predict(&report.control_delta, 1.0)?;
        let encoder = Measurement::EncoderPose {
            pose: world.arm.reported_pose(),
            std: cfg.ekf.encoder_pose_std,
        };
        if let UpdateOutcome::Rejected { .. } = ekf.update(&encoder)? {
            events.push(Event { time: world.time, kind: EventKind::MeasurementRejected });
        }
        let est = ekf.pose();
        ekf_trace.push(EkfRow {
            t: world.time,
            x: est.x,
            y: est.y,
            z: est.z,
            azimuth: est.azimuth,
            elevation: est.elevation,
            trace_p: ekf.pose_covariance_trace(),
            landmarks: ekf.landmark_count(),
            best_uncertainty: ekf.best_landmark().ok().map(|lm| lm.uncertainty_score),
            rejections: ekf.rejection_count(),
        });

        if let Some(at) = report.crossed_at {
            success = true;
            time_to_locate = at.min(cfg.trial.timeout);
            break;
        }
    }

    Ok(TrialResult {
        success,
        time_to_locate,
        trajectory,
        readings,
        spheres,
        ekf_trace,
        events,
        kinematic_maxima: world.kinematic_maxima,
    })
}

#[allow(clippy::too_many_arguments)]
fn decide_action<R: Rng + ?Sized>(
    cfg: &SimConfig,
    world: &mut SimWorld,
    policy: &mut PolicyState,
    ekf: &mut EkfState,
    calib: &RadiusCalib,
    qtable: Option<&QTable>,
    spheres: &mut Vec<SphereRow>,
    events: &mut Vec<Event>,
    ds: &DualSample,
    improving: bool,
    rssi_decreasing: bool,
    rng: &mut R,
) -> Result<Action> {
    match cfg.trial.algorithm {
        PolicyKind::Gradient => Ok(policy.gradient.next_action(improving, rng)),
        PolicyKind::Belief => {
            let est_pose = ekf.pose();
            let est_sensor = world.believed_sensor_position(&est_pose);
            match sphere_from_reading(&est_sensor, ds.mean, ds.lower, ds.upper, calib, world.time) {
                Ok(sphere) => {
                    let up = update_window_and_target(
                        &mut policy.window,
                        sphere,
                        rssi_decreasing,
                        policy.target,
                        cfg.belief.residual_tol,
                        rng,
                    )?;
                    if up.switched {
                        events.push(Event { time: world.time, kind: EventKind::TargetSwitched });
                    }
                    spheres.push(SphereRow {
                        sphere,
                        target: up.target.map(|t| [t.x, t.y, t.z]),
                        source: up.source,
                    });
                    policy.target = up.target;
                    if let Some(tg) = up.target {
                        // candidate spread over the window sets the pseudo-
                        // measurement covariance
                        let mut rss = 0.0;
                        let mut n = 0.0f64;
                        for s in policy.window.spheres() {
                            let r = s.residual(&tg);
                            rss += r * r;
                            n += 1.0;
                        }
                        let sigma = (rss / n.max(1.0)).sqrt().max(0.02);
                        let cov = Matrix3::identity() * sigma * sigma;
                        match ekf.upsert_landmark(&tg, &cov)? {
                            UpsertOutcome::InsertedWithEviction { .. } => {
                                events.push(Event { time: world.time, kind: EventKind::LandmarkEvicted });
                            }
                            _ => {}
                        }
                        let nav_point = match ekf.best_landmark() {
                            Ok(best) if best.uncertainty_score < cfg.belief.landmark_commit_trace => {
                                best.position
                            }
                            _ => tg,
                        };
                        Ok(action_toward(&est_sensor, &nav_point, cfg.trial.success_radius * 0.5))
                    } else {
                        Ok(policy.gradient.next_action(improving, rng))
                    }
                }
                // below the detection floor: no information, fall back
                Err(_) => Ok(policy.gradient.next_action(improving, rng)),
            }
        }
        PolicyKind::Rl => {
            let est_pose = ekf.pose();
            let state = discretize_state(&est_pose.position(), &cfg.rl.grid);
            let q = qtable.expect("validated above");
            if q.visited(state) {
                // greedy deployment of the trained table
                Ok(epsilon_greedy(q, state, 0.0, rng))
            } else {
                Ok(policy.gradient.next_action(improving, rng))
            }
        }
    }
}

/// Training environment: the same simulator without the EKF and sphere
/// bookkeeping; resets purge and redevelop the plume and recapture the
/// baseline, so every episode starts off-plume.
pub struct TrainWorld {
    cfg: SimConfig,
    world: Option<SimWorld>,
    bout: Option<BoutDetectorState>,
    threshold: f64,
}

impl TrainWorld {
    pub fn new(cfg: &SimConfig) -> Self {
        TrainWorld { cfg: cfg.clone(), world: None, bout: None, threshold: 0.0 }
    }

    fn effector_state(&self) -> DiscreteState {
        let world = self.world.as_ref().expect("reset first");
        discretize_state(&world.arm.effector().position(), &self.cfg.rl.grid)
    }
}

impl NavEnv for TrainWorld {
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DiscreteState> {
        let mut world = SimWorld::new(&self.cfg, rng)?;
        world.drift_enabled = false;
        let mut baseline = Vec::with_capacity(self.cfg.bout.window_len);
        for _ in 0..self.cfg.bout.window_len {
            let s = world.sample(rng)?;
            baseline.push(s.mean);
            world.execute(Action::Stay, rng)?;
        }
        let bout = BoutDetectorState::init_baseline_with(
            &baseline,
            self.cfg.bout.window_len,
            self.cfg.bout.baseline_mode,
        )?;
        self.threshold = bout.baseline_threshold() * self.cfg.trial.in_plume_factor;
        self.bout = Some(bout);
        self.world = Some(world);
        Ok(self.effector_state())
    }

    fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<EnvStep> {
        let world = self.world.as_mut().ok_or_else(|| Error::Config("step before reset".into()))?;
        world.execute(action, rng)?;
        let ds = world.sample(rng)?;
        let sig = self.bout.as_mut().expect("reset first").detect(ds.mean);
        let in_plume = sig.smoothed > self.threshold;
        let located = world.distance_to_source() <= self.cfg.trial.success_radius;
        Ok(EnvStep { state: self.effector_state(), in_plume, located })
    }
}

/// Train a policy on the default environment of `cfg`.
pub fn train_policy(
    cfg: &SimConfig,
    algorithm: Algorithm,
    rng: &mut ChaCha8Rng,
) -> Result<(QTable, Vec<f64>)> {
    let mut env = TrainWorld::new(cfg);
    train(&mut env, &cfg.rl.hyperparams, algorithm, rng)
}

/// Derive the per-trial rng: one master seed, one counter-indexed stream.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(1 + trial_index);
    rng
}

/// Stream id used for RL training, separate from all trial streams.
const TRAIN_STREAM: u64 = u64::MAX;

pub fn training_rng(master_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(TRAIN_STREAM);
    rng
}

/// Run `trials` independent seeded trials with a purge and redevelop
/// between each, training the RL table first when the policy needs it.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (qtable, learning_curve) = if cfg.trial.algorithm == PolicyKind::Rl {
        let algorithm = if cfg.rl.policy_weighted {
            Algorithm::ExpectedSarsaPolicyWeighted
        } else {
            Algorithm::ExpectedSarsa
        };
        let mut rng = training_rng(cfg.trial.seed);
        let (q, curve) = train_policy(cfg, algorithm, &mut rng)?;
        (Some(q), Some(curve))
    } else {
        (None, None)
    };

    let mut trials = Vec::with_capacity(cfg.trial.trials);
    for k in 0..cfg.trial.trials {
        let mut rng = trial_rng(cfg.trial.seed, k as u64);
        trials.push(run_trial(cfg, qtable.as_ref(), &mut rng)?);
    }

    let summary = summarize(cfg, &trials);
    Ok(ExperimentOutput { summary, trials, learning_curve, qtable })
}

pub fn summarize(cfg: &SimConfig, trials: &[TrialResult]) -> ExperimentSummary {
    let times: Vec<f64> = trials.iter().filter(|t| t.success).map(|t| t.time_to_locate).collect();
    let successes = times.len();
    let mean = if successes > 0 { times.iter().sum::<f64>() / successes as f64 } else { 0.0 };
    let std = if successes > 1 {
        let var =
            times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (successes - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    ExperimentSummary {
        algorithm: cfg.trial.algorithm,
        sensor: cfg.trial.sensor,
        trials: trials.len(),
        successes,
        success_rate: if trials.is_empty() { 0.0 } else { successes as f64 / trials.len() as f64 },
        mean_time: mean,
        std_time: std,
    }
}
