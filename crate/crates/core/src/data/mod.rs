//! Pose vectors, smoothing, resampling and datasets.
//!
//! A pose is the neck position followed by seven unit offsets along the
//! upper-body chain, flattened to 24 values.

mod dataset;
mod skeleton;
mod synthetic;

pub use dataset::{load_dataset, mean_first_pose, save_dataset, DatasetRecord};
pub use skeleton::{fit_to_skeleton, max_joint_speed, speed_limit, write_trajectory_csv, JointPositions};
pub use synthetic::{generate_synthetic_dataset, MotionClass, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const POSE_DIM: usize = 24;
pub const NUM_BONES: usize = 7;
pub const NUM_JOINTS: usize = 8;
/// Blocks shorter than this cannot be normalized.
pub const MIN_BLOCK_NORM: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("degenerate pose: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record `{id}`: {rule}")]
    Validation { id: String, rule: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Neck,
    Head,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Neck,
        Joint::Head,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Joint::Neck => "neck",
            Joint::Head => "head",
            Joint::LeftShoulder => "l_shoulder",
            Joint::LeftElbow => "l_elbow",
            Joint::LeftWrist => "l_wrist",
            Joint::RightShoulder => "r_shoulder",
            Joint::RightElbow => "r_elbow",
            Joint::RightWrist => "r_wrist",
        }
    }
}

/// `(parent, child)` for `v_1 .. v_7`.
pub const CHAIN: [(Joint, Joint); NUM_BONES] = [
    (Joint::Neck, Joint::Head),
    (Joint::Neck, Joint::LeftShoulder),
    (Joint::LeftShoulder, Joint::LeftElbow),
    (Joint::LeftElbow, Joint::LeftWrist),
    (Joint::Neck, Joint::RightShoulder),
    (Joint::RightShoulder, Joint::RightElbow),
    (Joint::RightElbow, Joint::RightWrist),
];

/// 3D keypoints of one frame, indexed by [`Joint`].
#[derive(Clone, Debug, PartialEq)]
pub struct RawKeypointFrame {
    pub timestamp: f64,
    pub joints: JointPositions,
}

impl RawKeypointFrame {
    pub fn joint(&self, j: Joint) -> [f64; 3] {
        self.joints[j as usize]
    }
}

/// Neck position plus seven unit-length bone directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseVector([f64; POSE_DIM]);

impl PoseVector {
    pub fn as_array(&self) -> &[f64; POSE_DIM] {
        &self.0
    }

    pub fn neck(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// Direction `v_{i+1}` for `i` in `0..7`.
    pub fn bone(&self, i: usize) -> [f64; 3] {
        let o = 3 + 3 * i;
        [self.0[o], self.0[o + 1], self.0[o + 2]]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.0.to_vec())
    }

    /// Largest deviation of a bone norm from 1.
    pub fn unit_error(&self) -> f64 {
        (0..NUM_BONES)
            .map(|i| (norm3(self.bone(i)) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Rescales each of the seven bone blocks to unit length; the neck is kept.
pub fn normalize_joints(x: &[f64]) -> Result<PoseVector> {
    if x.len() != POSE_DIM {
        return Err(DataError::Input(format!(
            "pose vector must have {POSE_DIM} values, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Input("pose vector has non-finite values".into()));
    }
    let mut out = [0.0; POSE_DIM];
    out[..3].copy_from_slice(&x[..3]);
    for (i, (parent, child)) in CHAIN.iter().enumerate() {
        let o = 3 + 3 * i;
        let n = norm3([x[o], x[o + 1], x[o + 2]]);
        if n <= MIN_BLOCK_NORM {
            return Err(DataError::Degenerate(format!(
                "bone {} ({}->{}) has length {n:e}",
                i + 1,
                parent.name(),
                child.name()
            )));
        }
        for k in 0..3 {
            out[o + k] = x[o + k] / n;
        }
    }
    Ok(PoseVector(out))
}

/// Neck position and normalized child-minus-parent offsets along [`CHAIN`].
pub fn build_pose_vector(frame: &RawKeypointFrame) -> Result<PoseVector> {
    let mut x = [0.0; POSE_DIM];
    x[..3].copy_from_slice(&frame.joint(Joint::Neck));
    for (i, (parent, child)) in CHAIN.iter().enumerate() {
        let (p, c) = (frame.joint(*parent), frame.joint(*child));
        let d = [c[0] - p[0], c[1] - p[1], c[2] - p[2]];
        if norm3(d) <= MIN_BLOCK_NORM {
            return Err(DataError::Degenerate(format!(
                "joints {} and {} coincide",
                parent.name(),
                child.name()
            )));
        }
        x[3 + 3 * i..6 + 3 * i].copy_from_slice(&d);
    }
    normalize_joints(&x)
}

/// Poses at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequence {
    pub frames: Vec<PoseVector>,
    pub fps: f64,
}

impl ActionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.frames.iter().map(PoseVector::to_tensor).collect()
    }

    /// Normalizes raw model outputs into a sequence.
    pub fn from_tensors(frames: &[Tensor], fps: f64) -> Result<Self> {
        let frames = frames
            .iter()
            .map(|t| normalize_joints(t.data()))
            .collect::<Result<_>>()?;
        Ok(Self { frames, fps })
    }

    /// All frames concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.0).collect()
    }
}

/// Reflect-mode index: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = i.rem_euclid(period) as usize;
    if m < len {
        m
    } else {
        2 * len - 1 - m
    }
}

/// Discrete Gaussian truncated at four sigma and normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Per-coordinate temporal Gaussian filter with reflected ends, followed by
/// bone renormalization. `sigma` is in frames; zero returns the input.
pub fn gaussian_smooth(seq: &ActionSequence, sigma: f64) -> Result<ActionSequence> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DataError::Input(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if seq.is_empty() {
        return Err(DataError::Input("cannot smooth an empty sequence".into()));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let len = seq.len();
    let frames = (0..len)
        .map(|t| {
            let mut acc = [0.0; POSE_DIM];
            for (j, w) in kernel.iter().enumerate() {
                let src = &seq.frames[reflect(t as isize + j as isize - radius, len)].0;
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += w * s;
                }
            }
            normalize_joints(&acc)
        })
        .collect::<Result<_>>()?;
    Ok(ActionSequence { frames, fps: seq.fps })
}

/// Linearly interpolates timestamped poses onto `length` frames at `fps`,
/// starting at the first timestamp, then renormalizes the bones.
///
/// The input must cover `(length - 1) / fps` seconds.
pub fn resample(frames: &[(f64, PoseVector)], fps: f64, length: usize) -> Result<ActionSequence> {
    if frames.len() < 2 {
        return Err(DataError::Input(format!(
            "need at least 2 frames, got {}",
            frames.len()
        )));
    }
    if !(fps > 0.0 && fps.is_finite()) || length == 0 {
        return Err(DataError::Input(format!("bad target grid: fps {fps}, length {length}")));
    }
    if frames.windows(2).any(|w| !(w[1].0 > w[0].0)) || frames.iter().any(|f| !f.0.is_finite()) {
        return Err(DataError::Input(
            "timestamps must be finite and strictly increasing".into(),
        ));
    }
    let t0 = frames[0].0;
    let span = frames[frames.len() - 1].0 - t0;
    let required = (length - 1) as f64 / fps;
    if span + 1e-9 < required {
        return Err(DataError::Input(format!(
            "sequence spans {span:.4} s, {required:.4} s required"
        )));
    }
    let out = (0..length)
        .map(|k| {
            let t = t0 + k as f64 / fps;
            let hi = frames.partition_point(|f| f.0 < t).clamp(1, frames.len() - 1);
            let (ta, a) = (frames[hi - 1].0, &frames[hi - 1].1 .0);
            let (tb, b) = (frames[hi].0, &frames[hi].1 .0);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            let mut x = [0.0; POSE_DIM];
            for i in 0..POSE_DIM {
                x[i] = if w == 0.0 {
                    a[i]
                } else if w == 1.0 {
                    b[i]
                } else {
                    (1.0 - w) * a[i] + w * b[i]
                };
            }
            normalize_joints(&x)
        })
        .collect::<Result<_>>()?;
    Ok(ActionSequence { frames: out, fps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn random_raw(rng: &mut SeededRng) -> [f64; POSE_DIM] {
        let mut x = [0.0; POSE_DIM];
        for v in x.iter_mut() {
            *v = rng.uniform_range(-2.0, 2.0);
        }
        x
    }

    fn unit_frame() -> RawKeypointFrame {
        let mut j = [[0.0; 3]; NUM_JOINTS];
        j[Joint::Neck as usize] = [0.0, 1.5, 0.0];
        j[Joint::Head as usize] = [0.0, 2.5, 0.0];
        j[Joint::LeftShoulder as usize] = [1.0, 1.5, 0.0];
        j[Joint::LeftElbow as usize] = [1.0, 0.5, 0.0];
        j[Joint::LeftWrist as usize] = [1.0, 0.5, 1.0];
        j[Joint::RightShoulder as usize] = [-1.0, 1.5, 0.0];
        j[Joint::RightElbow as usize] = [-1.0, 0.5, 0.0];
        j[Joint::RightWrist as usize] = [-1.0, 0.5, 1.0];
        RawKeypointFrame {
            timestamp: 0.0,
            joints: j,
        }
    }

    #[test]
    fn unit_offsets_are_kept() {
        let p = build_pose_vector(&unit_frame()).unwrap();
        assert_eq!(p.neck(), [0.0, 1.5, 0.0]);
        assert_eq!(p.bone(0), [0.0, 1.0, 0.0]);
        assert_eq!(p.bone(1), [1.0, 0.0, 0.0]);
        assert_eq!(p.bone(3), [0.0, 0.0, 1.0]);
        assert_eq!(p.bone(4), [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn offset_is_scaled_to_unit() {
        let mut f = unit_frame();
        f.joints[Joint::LeftWrist as usize] = [1.0, 0.5, 2.0];
        let p = build_pose_vector(&f).unwrap();
        assert_eq!(p.bone(3), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn coincident_joints_are_degenerate() {
        let mut f = unit_frame();
        f.joints[Joint::LeftElbow as usize] = f.joints[Joint::LeftShoulder as usize];
        let err = build_pose_vector(&f).unwrap_err();
        assert!(matches!(&err, DataError::Degenerate(m) if m.contains("l_shoulder") && m.contains("l_elbow")));
    }

    #[test]
    fn normalize_is_idempotent_and_scale_invariant() {
        let mut rng = SeededRng::new(2);
        for _ in 0..50 {
            let x = random_raw(&mut rng);
            let p = normalize_joints(&x).unwrap();
            assert_eq!(normalize_joints(p.as_array()).unwrap().as_array()[..3], x[..3]);
            let q = normalize_joints(p.as_array()).unwrap();
            for (a, b) in p.as_array().iter().zip(q.as_array()) {
                assert!((a - b).abs() < 1e-15);
            }
            let mut scaled = x;
            scaled[3..].iter_mut().for_each(|v| *v *= 3.0);
            let s = normalize_joints(&scaled).unwrap();
            for (a, b) in p.as_array().iter().zip(s.as_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_matches_blockwise_division() {
        let mut rng = SeededRng::new(5);
        let x = random_raw(&mut rng);
        let p = normalize_joints(&x).unwrap();
        for b in 0..NUM_BONES {
            let blk = &x[3 + 3 * b..6 + 3 * b];
            let n = (blk[0].powi(2) + blk[1].powi(2) + blk[2].powi(2)).sqrt();
            for k in 0..3 {
                assert!((p.as_array()[3 + 3 * b + k] - blk[k] / n).abs() < 1e-12);
            }
        }
        assert!(normalize_joints(&x[..23]).is_err());
        let mut z = x;
        z[6..9].fill(0.0);
        assert!(matches!(normalize_joints(&z), Err(DataError::Degenerate(_))));
    }

    fn seq_from(frames: Vec<[f64; POSE_DIM]>, fps: f64) -> ActionSequence {
        ActionSequence {
            frames: frames.iter().map(|f| normalize_joints(f).unwrap()).collect(),
            fps,
        }
    }

    #[test]
    fn smoothing_constant_and_zero_sigma() {
        let mut rng = SeededRng::new(8);
        let x = random_raw(&mut rng);
        let constant = seq_from(vec![x; 12], 10.0);
        let s = gaussian_smooth(&constant, 1.5).unwrap();
        for (a, b) in s.flatten().iter().zip(constant.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let varied = seq_from((0..9).map(|_| random_raw(&mut rng)).collect(), 10.0);
        assert_eq!(gaussian_smooth(&varied, 0.0).unwrap(), varied);
        assert!(gaussian_smooth(&varied, -1.0).is_err());
    }

    #[test]
    fn smoothing_impulse_matches_kernel() {
        let base = normalize_joints(&[1.0; POSE_DIM]).unwrap();
        let len = 17;
        let mut frames = vec![*base.as_array(); len];
        frames[8][0] = 1.0 + 1.0;
        let seq = seq_from(frames, 10.0);
        let out = gaussian_smooth(&seq, 1.0).unwrap();
        let z: f64 = (-4..=4).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).sum();
        for t in 0..len {
            let k = t as i32 - 8;
            let expected = if k.abs() <= 4 {
                (-(k * k) as f64 / 2.0).exp() / z
            } else {
                0.0
            };
            assert!(
                (out.frames[t].as_array()[0] - 1.0 - expected).abs() < 1e-10,
                "frame {t}"
            );
        }
    }

    #[test]
    fn reflect_boundary() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(2, 1), 0);
    }

    fn timed(seq: &ActionSequence) -> Vec<(f64, PoseVector)> {
        seq.frames
            .iter()
            .enumerate()
            .map(|(i, f)| (i as f64 / seq.fps, *f))
            .collect()
    }

    #[test]
    fn resample_aligned_grid_is_identity() {
        let mut rng = SeededRng::new(11);
        let seq = seq_from((0..32).map(|_| random_raw(&mut rng)).collect(), 10.0);
        let out = resample(&timed(&seq), 10.0, 32).unwrap();
        for (a, b) in out.flatten().iter().zip(seq.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_decimates_two_to_one() {
        let mut rng = SeededRng::new(12);
        let seq = seq_from((0..64).map(|_| random_raw(&mut rng)).collect(), 20.0);
        let out = resample(&timed(&seq), 10.0, 32).unwrap();
        for k in 0..32 {
            for (a, b) in out.frames[k].as_array().iter().zip(seq.frames[2 * k].as_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_linear_motion() {
        // The neck moves on a line; bones stay fixed.
        let bones = *normalize_joints(&[1.0; POSE_DIM]).unwrap().as_array();
        let frames: Vec<(f64, PoseVector)> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37;
                let mut x = bones;
                x[0] = 2.0 * t - 1.0;
                x[1] = -0.5 * t;
                x[2] = 3.0;
                (t, normalize_joints(&x).unwrap())
            })
            .collect();
        let out = resample(&frames, 10.0, 32).unwrap();
        for (k, f) in out.frames.iter().enumerate() {
            let t = k as f64 / 10.0;
            assert!((f.neck()[0] - (2.0 * t - 1.0)).abs() < 1e-10);
            assert!((f.neck()[1] + 0.5 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn resample_rejects_short_input() {
        let p = normalize_joints(&[1.0; POSE_DIM]).unwrap();
        let frames: Vec<_> = (0..10).map(|i| (i as f64 * 0.1, p)).collect();
        let err = resample(&frames, 10.0, 32).unwrap_err();
        assert!(matches!(&err, DataError::Input(m) if m.contains("0.9000") && m.contains("3.1000")));
        assert!(resample(&frames[..1], 10.0, 2).is_err());
    }
}
