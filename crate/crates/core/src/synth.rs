//! Deterministic synthetic couple motion.
//!
//! Each person is driven by forward kinematics over the 18-joint layout, so
//! bone lengths are constant by construction. Joint angles and root motion
//! are sums of low-frequency sinusoids plus smooth raised-cosine "moves"
//! whose timing differs per repetition. The follower is derived from the
//! leader according to a [`Scenario`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::CoupleSequence;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Skeleton, Vec3};
use crate::motion::MotionSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Follower repeats the mirrored leader `lag` frames later, shifted sideways.
    LaggedMirror,
    /// Follower joint angles are a damped second-order response to the leader's.
    CoupledOscillator,
    /// Follower circles the leader's hips with a phase tied to the leader's arm height.
    OrbitLift,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::LaggedMirror, Scenario::CoupledOscillator, Scenario::OrbitLift];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::LaggedMirror => "lagged-mirror",
            Scenario::CoupledOscillator => "coupled-oscillator",
            Scenario::OrbitLift => "orbit-lift",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown scenario '{s}' (expected lagged-mirror, coupled-oscillator or orbit-lift)"
                ))
            })
    }
}

/// Generator settings shared by all sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    /// Generation rate; the pipeline downsamples by 2 to 25 fps.
    pub fps: f64,
    /// Lagged-mirror delay in generated frames.
    pub lag: usize,
    /// Lagged-mirror sideways offset in mm.
    pub offset_mm: f64,
    /// Scales root translation and torso orientation; 0 keeps the body
    /// frame fixed so only the head and limbs move.
    pub root_motion: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            fps: 50.0,
            lag: 30,
            offset_mm: 1000.0,
            root_motion: 1.0,
        }
    }
}

// Degrees of freedom driving the kinematic chain.
const ROOT_X: usize = 0;
const ROOT_Y: usize = 1;
const ROOT_Z: usize = 2;
const YAW: usize = 3;
const TORSO_PITCH: usize = 4;
const TORSO_ROLL: usize = 5;
const HEAD_YAW: usize = 6;
const HEAD_PITCH: usize = 7;
/// Shoulder pitch, shoulder roll, elbow flexion for left then right.
const ARM: [usize; 2] = [8, 11];
/// Hip pitch, hip roll, knee flexion for left then right.
const LEG: [usize; 2] = [14, 17];
const DOFS: usize = 20;

/// Skeleton edges whose length is fixed by the kinematic chain.
pub const BONES: [(usize, usize); 17] = [
    (3, 0),
    (3, 1),
    (3, 2),
    (3, 4),
    (3, 5),
    (4, 6),
    (6, 8),
    (5, 7),
    (7, 9),
    (10, 11),
    (10, 12),
    (12, 14),
    (14, 16),
    (11, 13),
    (13, 15),
    (15, 17),
    (0, 1),
];

fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = h.wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9)).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

#[derive(Clone, Debug, Default)]
struct Curve {
    base: f64,
    /// `(amplitude, frequency Hz, phase)`
    sines: Vec<(f64, f64, f64)>,
    /// `(centre s, half-width s, amplitude)`
    bumps: Vec<(f64, f64, f64)>,
}

impl Curve {
    fn eval(&self, t: f64) -> f64 {
        let mut v = self.base;
        for &(a, f, p) in &self.sines {
            v += a * (std::f64::consts::TAU * f * t + p).sin();
        }
        for &(c, w, a) in &self.bumps {
            let d = (t - c) / w;
            if d.abs() < 1.0 {
                v += a * 0.5 * (1.0 + (std::f64::consts::PI * d).cos());
            }
        }
        v
    }
}

/// `(base, amplitude range, frequency range)` per degree of freedom.
fn dof_ranges(dof: usize) -> (f64, (f64, f64), (f64, f64)) {
    match dof {
        ROOT_X | ROOT_Y => (0.0, (60.0, 180.0), (0.08, 0.35)),
        ROOT_Z => (0.0, (10.0, 30.0), (0.2, 0.6)),
        YAW => (0.0, (0.15, 0.4), (0.05, 0.25)),
        TORSO_PITCH => (0.1, (0.08, 0.2), (0.2, 0.8)),
        TORSO_ROLL => (0.0, (0.04, 0.12), (0.2, 0.8)),
        HEAD_YAW | HEAD_PITCH => (0.0, (0.08, 0.25), (0.2, 0.9)),
        d if (ARM[0]..ARM[0] + 6).contains(&d) => match (d - ARM[0]) % 3 {
            0 => (0.3, (0.3, 0.7), (0.3, 1.2)),
            1 => (0.3, (0.15, 0.4), (0.3, 1.2)),
            _ => (0.7, (0.25, 0.5), (0.3, 1.2)),
        },
        d => match (d - LEG[0]) % 3 {
            0 => (0.1, (0.15, 0.35), (0.3, 1.0)),
            1 => (0.06, (0.04, 0.1), (0.3, 1.0)),
            _ => (0.4, (0.15, 0.35), (0.3, 1.0)),
        },
    }
}

/// One repeated move: amplitude per degree of freedom and duration.
#[derive(Clone, Debug)]
struct Move {
    amplitudes: Vec<(usize, f64)>,
    half_width: f64,
}

/// Per-person curves for one (aerial, couple, repetition, person).
fn person_curves(
    seed: u64,
    aerial: u32,
    couple: u32,
    rep: u32,
    person: u64,
    duration: f64,
    params: &SynthParams,
) -> Vec<Curve> {
    let aerial = aerial as u64;
    let mut template = rng(seed, &[1, aerial, person]);
    let mut style = rng(seed, &[2, couple as u64, person]);
    let mut take = rng(seed, &[3, aerial, couple as u64, rep as u64, person]);

    let mut curves = Vec::with_capacity(DOFS);
    for dof in 0..DOFS {
        let (base, (a0, a1), (f0, f1)) = dof_ranges(dof);
        let gain = style.gen_range(0.8..1.2);
        let shift = style.gen_range(-0.3..0.3);
        let mut c = Curve {
            base: base + if dof == YAW { template.gen_range(-3.0..3.0) } else { 0.0 },
            ..Curve::default()
        };
        for _ in 0..2 {
            let mut a = template.gen_range(a0..a1) * gain;
            if dof <= TORSO_ROLL {
                a *= params.root_motion;
            }
            let f = template.gen_range(f0..f1);
            let p = template.gen_range(0.0..std::f64::consts::TAU) + shift + take.gen_range(-0.2..0.2);
            c.sines.push((a, f, p));
        }
        curves.push(c);
    }

    let moves: Vec<Move> = (0..4)
        .map(|_| {
            let n = template.gen_range(3..7);
            let mut amplitudes: Vec<(usize, f64)> = (0..n)
                .map(|_| {
                    let dof = template.gen_range(TORSO_PITCH..DOFS);
                    let sign = if template.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let a = sign * template.gen_range(0.4..1.0);
                    (dof, if dof <= TORSO_ROLL { a * params.root_motion } else { a })
                })
                .collect();
            amplitudes.push((ROOT_Z, template.gen_range(60.0..160.0) * params.root_motion));
            Move {
                amplitudes,
                half_width: template.gen_range(0.25..0.6),
            }
        })
        .collect();
    let mut t = take.gen_range(0.2..1.2);
    while t < duration + 1.0 {
        let m = &moves[take.gen_range(0..moves.len())];
        let gain = style.gen_range(0.85..1.15);
        for &(dof, a) in &m.amplitudes {
            curves[dof].bumps.push((t, m.half_width, a * gain));
        }
        t += take.gen_range(0.9..2.2);
    }
    curves
}

fn rz(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vec3::z_axis(), a).matrix()
}

fn ry(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vec3::y_axis(), a).matrix()
}

fn rx(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vec3::x_axis(), a).matrix()
}

/// Forward kinematics of the 18-joint layout; `scale` sets body size.
fn forward_kinematics(q: &[f64; DOFS], scale: f64) -> Pose {
    let s = scale;
    let v = |x: f64, y: f64, z: f64| Vec3::new(x * s, y * s, z * s);
    let root = Vec3::new(q[ROOT_X], q[ROOT_Y], 910.0 * s + q[ROOT_Z]);
    let r0 = rz(q[YAW]);
    let rt = r0 * ry(q[TORSO_PITCH]) * rx(q[TORSO_ROLL]);
    let neck = root + rt * v(0.0, 0.0, 520.0);
    let rh = rt * rz(q[HEAD_YAW]) * ry(q[HEAD_PITCH]);

    let mut j = vec![Vec3::zeros(); 18];
    j[0] = neck + rh * v(90.0, 0.0, 140.0);
    j[1] = neck + rh * v(0.0, 75.0, 120.0);
    j[2] = neck + rh * v(0.0, -75.0, 120.0);
    j[3] = neck;
    for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
        let a = ARM[side];
        let shoulder = neck + rt * v(0.0, 170.0 * sign, -40.0);
        let upper = rt * ry(-q[a]) * rx(sign * q[a + 1]);
        let elbow = shoulder + upper * v(0.0, 0.0, -290.0);
        let wrist = elbow + upper * ry(-q[a + 2]) * v(0.0, 0.0, -260.0);
        j[4 + side] = shoulder;
        j[6 + side] = elbow;
        j[8 + side] = wrist;

        let l = LEG[side];
        let hip = root + r0 * v(0.0, 100.0 * sign, 0.0);
        let thigh = r0 * ry(-q[l]) * rx(sign * q[l + 1]);
        let knee = hip + thigh * v(0.0, 0.0, -430.0);
        let shank = thigh * ry(q[l + 2]);
        let heel = knee + shank * v(0.0, 0.0, -420.0);
        j[10 + side] = hip;
        j[12 + side] = knee;
        j[14 + side] = heel;
        j[16 + side] = heel + shank * v(150.0, 0.0, -30.0);
    }
    Pose::new(j)
}

fn sample(curves: &[Curve], t: f64) -> [f64; DOFS] {
    let mut q = [0.0; DOFS];
    for (v, c) in q.iter_mut().zip(curves) {
        *v = c.eval(t);
    }
    q
}

/// Reflection across the `y = 0` plane with left/right labels swapped,
/// then shifted by `offset` along `y`.
pub fn mirror_pose(pose: &Pose, skeleton: &Skeleton, offset: f64) -> Pose {
    Pose::new(
        (0..pose.len())
            .map(|j| {
                let p = pose.joints[skeleton.mirror_of(j)];
                Vec3::new(p.x, -p.y + offset, p.z)
            })
            .collect(),
    )
}

fn body_scale(seed: u64, couple: u32, person: u64) -> f64 {
    rng(seed, &[4, couple as u64, person]).gen_range(0.92..1.08)
}

/// One synthetic repetition at `params.fps`.
pub fn synthesize_sequence(
    seed: u64,
    scenario: Scenario,
    aerial: u32,
    couple: u32,
    rep: u32,
    frames: usize,
    params: &SynthParams,
) -> Result<CoupleSequence> {
    if frames == 0 {
        return Err(Error::contract("synthetic sequence needs at least one frame"));
    }
    if !(params.fps > 0.0) {
        return Err(Error::contract("synthetic fps must be positive"));
    }
    let skeleton = Skeleton::expi();
    let duration = frames as f64 / params.fps;
    let time = |n: i64| n as f64 / params.fps;
    let leader_curves = person_curves(seed, aerial, couple, rep, 0, duration, params);
    let follower_curves = person_curves(seed, aerial, couple, rep, 1, duration, params);
    let (ls, fs) = (body_scale(seed, couple, 0), body_scale(seed, couple, 1));
    let leader_at = |n: i64| forward_kinematics(&sample(&leader_curves, time(n)), ls);

    let leader: Vec<Pose> = (0..frames as i64).map(leader_at).collect();
    let follower: Vec<Pose> = match scenario {
        Scenario::LaggedMirror => (0..frames as i64)
            .map(|n| mirror_pose(&leader_at(n - params.lag as i64), &skeleton, params.offset_mm))
            .collect(),
        Scenario::CoupledOscillator => {
            let omega = std::f64::consts::TAU * 1.2;
            let zeta = 0.4;
            let substeps = 8;
            let dt = 1.0 / (params.fps * substeps as f64);
            let target = |t: f64| {
                let mut q = sample(&leader_curves, t);
                let own = sample(&follower_curves, t);
                q[ROOT_Y] += params.offset_mm;
                q[YAW] += std::f64::consts::PI;
                for d in TORSO_PITCH..DOFS {
                    q[d] = 0.7 * q[d] + 0.3 * own[d];
                }
                q
            };
            let mut state = target(0.0);
            let mut vel = [0.0; DOFS];
            let mut out = Vec::with_capacity(frames);
            for n in 0..frames {
                out.push(forward_kinematics(&state, fs));
                for k in 0..substeps {
                    let goal = target(time(n as i64) + k as f64 * dt);
                    for d in 0..DOFS {
                        let acc = omega * omega * (goal[d] - state[d]) - 2.0 * zeta * omega * vel[d];
                        vel[d] += acc * dt;
                        state[d] += vel[d] * dt;
                    }
                }
            }
            out
        }
        Scenario::OrbitLift => {
            let phase0 = rng(seed, &[5, aerial as u64, couple as u64, rep as u64]).gen_range(0.0..std::f64::consts::TAU);
            leader
                .iter()
                .enumerate()
                .map(|(n, lp)| {
                    let hip = (lp.joints[10] + lp.joints[11]) * 0.5;
                    let arm = 0.5 * (lp.joints[8].z + lp.joints[9].z) - lp.joints[3].z;
                    let t = time(n as i64);
                    let phase = phase0 + std::f64::consts::TAU * 0.15 * t + 0.8 * (arm + 300.0) / 300.0;
                    let mut q = sample(&follower_curves, t);
                    q[ROOT_X] = hip.x + 900.0 * phase.cos();
                    q[ROOT_Y] = hip.y + 900.0 * phase.sin();
                    q[ROOT_Z] += 200.0 * ((arm + 200.0) / 400.0).clamp(0.0, 1.0);
                    q[YAW] = phase + std::f64::consts::PI;
                    forward_kinematics(&q, fs)
                })
                .collect()
        }
    };
    CoupleSequence::new(
        format!("a{aerial:02}_c{couple}_r{rep}"),
        aerial,
        couple,
        rep,
        MotionSequence::from_poses(&leader, params.fps)?,
        MotionSequence::from_poses(&follower, params.fps)?,
    )
}

/// A single couple: aerial 1, couple 1, repetition 0.
pub fn synthesize_couple(seed: u64, scenario: Scenario, frames: usize) -> Result<CoupleSequence> {
    synthesize_sequence(seed, scenario, 1, 1, 0, frames, &SynthParams::default())
}

/// `(couple, aerial, rep)` labels of the recorded layout: the first couple
/// performs aerials 1-13, the second 1-7 and 14-16, five repetitions each.
/// Ordered by aerial, then couple, then repetition.
pub fn full_layout() -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for aerial in 1..=16 {
        for couple in 1..=2 {
            let performs = if couple == 1 {
                aerial <= 13
            } else {
                aerial <= 7 || aerial >= 14
            };
            if performs {
                out.extend((0..5).map(|rep| (couple, aerial, rep)));
            }
        }
    }
    out
}

pub fn synthesize_dataset(
    seed: u64,
    scenario: Scenario,
    labels: &[(u32, u32, u32)],
    frames: usize,
    params: &SynthParams,
) -> Result<Vec<CoupleSequence>> {
    labels
        .iter()
        .map(|&(couple, aerial, rep)| synthesize_sequence(seed, scenario, aerial, couple, rep, frames, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalization_transform;

    fn bone_deviation(seq: &MotionSequence) -> f64 {
        let first = seq.pose(0);
        let mut worst: f64 = 0.0;
        for pose in seq.poses() {
            for &(a, b) in &BONES {
                let l0 = (first.joints[a] - first.joints[b]).norm();
                let l = (pose.joints[a] - pose.joints[b]).norm();
                worst = worst.max((l - l0).abs());
            }
        }
        worst
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for s in Scenario::ALL {
            assert_eq!(synthesize_couple(7, s, 80).unwrap(), synthesize_couple(7, s, 80).unwrap());
        }
        assert_ne!(
            synthesize_couple(7, Scenario::LaggedMirror, 40).unwrap(),
            synthesize_couple(8, Scenario::LaggedMirror, 40).unwrap()
        );
    }

    #[test]
    fn bones_keep_their_length() {
        for s in Scenario::ALL {
            let c = synthesize_couple(3, s, 300).unwrap();
            assert!(bone_deviation(&c.leader) < 1e-9, "{s} leader");
            assert!(bone_deviation(&c.follower) < 1e-9, "{s} follower");
        }
    }

    #[test]
    fn anchors_allow_normalization() {
        let sk = Skeleton::expi();
        for s in Scenario::ALL {
            let c = synthesize_couple(5, s, 200).unwrap();
            for seq in [&c.leader, &c.follower] {
                for p in seq.poses() {
                    normalization_transform(&p, &sk).unwrap();
                }
            }
        }
    }

    #[test]
    fn mirror_follows_with_exact_lag() {
        let params = SynthParams {
            lag: 4,
            ..SynthParams::default()
        };
        let c = synthesize_sequence(11, Scenario::LaggedMirror, 2, 1, 0, 60, &params).unwrap();
        let sk = Skeleton::expi();
        for t in 4..60 {
            let expected = mirror_pose(&c.leader.pose(t - 4), &sk, params.offset_mm);
            assert_eq!(c.follower.pose(t), expected);
        }
    }

    #[test]
    fn layout_has_115_sequences() {
        let l = full_layout();
        assert_eq!(l.len(), 115);
        assert!(l.iter().all(|&(c, a, _)| (c == 1 && a <= 13) || (c == 2 && (a <= 7 || a >= 14))));
    }

    #[test]
    fn motion_is_smooth() {
        let c = synthesize_couple(2, Scenario::CoupledOscillator, 200).unwrap();
        for seq in [&c.leader, &c.follower] {
            for t in 1..seq.frames() {
                let step = seq
                    .frame(t)
                    .iter()
                    .zip(seq.frame(t - 1))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(step < 120.0, "jump of {step} mm at frame {t}");
            }
        }
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        assert!("waltz".parse::<Scenario>().is_err());
        assert_eq!("orbit-lift".parse::<Scenario>().unwrap(), Scenario::OrbitLift);
    }
}
