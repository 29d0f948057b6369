//! Parametric upper-body motions paired with template sentences.
//!
//! Axes: `x` to the person's left, `y` up, `z` forward. The rest pose has the
//! head up, shoulders level and both arms hanging down.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{normalize_joints, ActionSequence, DataError, DatasetRecord, Result, POSE_DIM};
use crate::embedding::tokenize;
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    RaiseLeftArm,
    RaiseRightArm,
    RaiseBothArms,
    WaveLeftHand,
    WaveRightHand,
    NodHead,
    LeanLeft,
    PunchForward,
}

impl MotionClass {
    pub const ALL: [MotionClass; 8] = [
        MotionClass::RaiseLeftArm,
        MotionClass::RaiseRightArm,
        MotionClass::RaiseBothArms,
        MotionClass::WaveLeftHand,
        MotionClass::WaveRightHand,
        MotionClass::NodHead,
        MotionClass::LeanLeft,
        MotionClass::PunchForward,
    ];

    pub fn sentence(self) -> &'static str {
        match self {
            MotionClass::RaiseLeftArm => "a person raises the left arm",
            MotionClass::RaiseRightArm => "a person raises the right arm",
            MotionClass::RaiseBothArms => "a person raises both arms",
            MotionClass::WaveLeftHand => "a person waves the left hand",
            MotionClass::WaveRightHand => "a person waves the right hand",
            MotionClass::NodHead => "a person nods the head",
            MotionClass::LeanLeft => "a person leans to the left",
            MotionClass::PunchForward => "a person punches forward with the right arm",
        }
    }

    /// Noise-free pose at phase `s` in `[0, 1]`.
    fn pose(self, s: f64) -> [f64; POSE_DIM] {
        let ramp = 0.5 * (1.0 - (PI * s).cos());
        let mut p = rest_pose();
        // Arm raised sideways by angle `a`: left arm swings toward +x.
        let side = |a: f64, sign: f64| [sign * a.sin(), -a.cos(), 0.0];
        let lift = 0.8 * PI * ramp;
        match self {
            MotionClass::RaiseLeftArm => {
                set(&mut p, 2, side(lift, 1.0));
                set(&mut p, 3, side(lift, 1.0));
            }
            MotionClass::RaiseRightArm => {
                set(&mut p, 5, side(lift, -1.0));
                set(&mut p, 6, side(lift, -1.0));
            }
            MotionClass::RaiseBothArms => {
                for (b, sign) in [(2, 1.0), (3, 1.0), (5, -1.0), (6, -1.0)] {
                    set(&mut p, b, side(lift, sign));
                }
            }
            MotionClass::WaveLeftHand | MotionClass::WaveRightHand => {
                let sign = if self == MotionClass::WaveLeftHand { 1.0 } else { -1.0 };
                let (upper, fore) = if sign > 0.0 { (2, 3) } else { (5, 6) };
                let swing = 0.6 * (4.0 * PI * s).sin() * ramp;
                set(&mut p, upper, side(0.5 * PI * ramp, sign));
                set(&mut p, fore, [sign * swing.sin(), swing.cos(), 0.0]);
            }
            MotionClass::NodHead => {
                let a = 0.5 * (PI * s).sin().powi(2);
                set(&mut p, 0, [0.0, a.cos(), a.sin()]);
            }
            MotionClass::LeanLeft => {
                let a = 0.4 * ramp;
                p[0] = 0.3 * ramp;
                set(&mut p, 0, [a.sin(), a.cos(), 0.0]);
                set(&mut p, 1, [a.cos(), -a.sin(), 0.0]);
                set(&mut p, 4, [-a.cos(), a.sin(), 0.0]);
            }
            MotionClass::PunchForward => {
                let a = 0.5 * PI * ramp;
                set(&mut p, 5, [0.0, -a.cos(), a.sin()]);
                set(&mut p, 6, [0.0, -a.cos(), a.sin()]);
            }
        }
        p
    }
}

fn rest_pose() -> [f64; POSE_DIM] {
    let mut p = [0.0; POSE_DIM];
    set(&mut p, 0, [0.0, 1.0, 0.0]);
    set(&mut p, 1, [1.0, 0.0, 0.0]);
    set(&mut p, 2, [0.0, -1.0, 0.0]);
    set(&mut p, 3, [0.0, -1.0, 0.0]);
    set(&mut p, 4, [-1.0, 0.0, 0.0]);
    set(&mut p, 5, [0.0, -1.0, 0.0]);
    set(&mut p, 6, [0.0, -1.0, 0.0]);
    p
}

fn set(p: &mut [f64; POSE_DIM], bone: usize, v: [f64; 3]) {
    p[3 + 3 * bone..6 + 3 * bone].copy_from_slice(&v);
}

/// What to synthesize. Classes are taken in [`MotionClass::ALL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub noise: f64,
    pub length: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 16,
            noise: 0.02,
            length: 32,
            fps: 10.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn motion_classes(&self) -> &'static [MotionClass] {
        &MotionClass::ALL[..self.classes.min(MotionClass::ALL.len())]
    }
}

/// Records `c{class}-{index}`: the class template plus per-frame Gaussian
/// jitter of scale `noise` on all 24 values, with bones renormalized.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    if spec.classes == 0 || spec.classes > MotionClass::ALL.len() {
        return Err(DataError::Input(format!(
            "classes must be in 1..={}, got {}",
            MotionClass::ALL.len(),
            spec.classes
        )));
    }
    if spec.length < 2 || !(spec.fps > 0.0) || !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(DataError::Input(format!(
            "bad synthetic spec: length {}, fps {}, noise {}",
            spec.length, spec.fps, spec.noise
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, class) in spec.motion_classes().iter().enumerate() {
        let template: Vec<[f64; POSE_DIM]> = (0..spec.length)
            .map(|t| class.pose(t as f64 / (spec.length - 1) as f64))
            .collect();
        for i in 0..spec.per_class {
            let frames = template
                .iter()
                .map(|base| {
                    let mut x = *base;
                    if spec.noise > 0.0 {
                        for v in x.iter_mut() {
                            *v += spec.noise * rng.standard_normal();
                        }
                    }
                    normalize_joints(&x)
                })
                .collect::<Result<_>>()?;
            records.push(DatasetRecord {
                id: format!("c{c}-{i:03}"),
                sentence: tokenize(class.sentence()),
                action: ActionSequence { frames, fps: spec.fps },
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NUM_BONES;

    #[test]
    fn counts_and_validity() {
        let recs = generate_synthetic_dataset(&SyntheticSpec::default()).unwrap();
        assert_eq!(recs.len(), 32);
        for r in &recs {
            assert_eq!(r.action.len(), 32);
            assert!(r.action.frames.iter().all(|f| f.unit_error() < 1e-9));
        }
        assert_eq!(recs[0].sentence_text(), "a person raises the left arm");
        assert_eq!(recs[16].sentence_text(), "a person raises the right arm");
        let three = SyntheticSpec {
            classes: 3,
            per_class: 10,
            ..Default::default()
        };
        assert_eq!(generate_synthetic_dataset(&three).unwrap().len(), 30);
        assert!(generate_synthetic_dataset(&SyntheticSpec {
            classes: 9,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn all_templates_are_valid_and_distinct() {
        let spec = SyntheticSpec {
            classes: 8,
            per_class: 1,
            noise: 0.0,
            ..Default::default()
        };
        let recs = generate_synthetic_dataset(&spec).unwrap();
        for a in 0..8 {
            for b in a + 1..8 {
                let d: f64 = recs[a]
                    .action
                    .flatten()
                    .iter()
                    .zip(recs[b].action.flatten())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                assert!(d > 1.0, "classes {a} and {b} too close: {d}");
            }
        }
    }

    #[test]
    fn zero_noise_gives_identical_samples() {
        let spec = SyntheticSpec {
            noise: 0.0,
            per_class: 4,
            ..Default::default()
        };
        let recs = generate_synthetic_dataset(&spec).unwrap();
        assert!(recs[..4].iter().all(|r| r.action == recs[0].action));
        assert!(recs[4..].iter().all(|r| r.action == recs[4].action));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(
            generate_synthetic_dataset(&spec).unwrap(),
            generate_synthetic_dataset(&spec).unwrap()
        );
        let other = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(
            generate_synthetic_dataset(&other).unwrap(),
            generate_synthetic_dataset(&SyntheticSpec::default()).unwrap()
        );
    }

    #[test]
    fn class_means_differ_in_arm_blocks() {
        let spec = SyntheticSpec::default();
        let recs = generate_synthetic_dataset(&spec).unwrap();
        let mean = |rs: &[DatasetRecord]| {
            let mut m = vec![0.0; rs[0].action.flatten().len()];
            for r in rs {
                for (a, v) in m.iter_mut().zip(r.action.flatten()) {
                    *a += v / rs.len() as f64;
                }
            }
            m
        };
        let (left, right) = (mean(&recs[..16]), mean(&recs[16..]));
        let arm_blocks = [2, 3, 5, 6];
        for &b in &arm_blocks {
            let mut d2 = 0.0;
            for t in 0..spec.length {
                for k in 0..3 {
                    let i = t * POSE_DIM + 3 + 3 * b + k;
                    d2 += (left[i] - right[i]).powi(2);
                }
            }
            assert!(d2.sqrt() > 10.0 * spec.noise, "bone {b}: {}", d2.sqrt());
        }
        assert!(arm_blocks.iter().all(|&b| b < NUM_BONES));
    }
}
