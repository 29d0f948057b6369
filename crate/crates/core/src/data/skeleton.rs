//! Fitting poses to a skeleton, retiming for a joint-speed limit, and
//! trajectory export.

use std::io::Write;

use super::{norm3, DataError, Joint, PoseVector, Result, CHAIN, NUM_BONES, NUM_JOINTS};

/// 3D positions indexed by [`Joint`].
pub type JointPositions = [[f64; 3]; NUM_JOINTS];

/// Places the neck at `p_1` and each child at `parent + length_i * v_i`.
pub fn fit_to_skeleton(pose: &PoseVector, bone_lengths: &[f64; NUM_BONES]) -> Result<JointPositions> {
    if let Some((i, l)) = bone_lengths
        .iter()
        .enumerate()
        .find(|(_, l)| !(**l > 0.0 && l.is_finite()))
    {
        return Err(DataError::Input(format!(
            "bone length {} must be positive, got {l}",
            i + 1
        )));
    }
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    joints[Joint::Neck as usize] = pose.neck();
    for (i, (parent, child)) in CHAIN.iter().enumerate() {
        let p = joints[*parent as usize];
        let v = pose.bone(i);
        joints[*child as usize] = [
            p[0] + bone_lengths[i] * v[0],
            p[1] + bone_lengths[i] * v[1],
            p[2] + bone_lengths[i] * v[2],
        ];
    }
    Ok(joints)
}

/// Fastest joint displacement between consecutive frames, in units per second.
pub fn max_joint_speed(trajectory: &[JointPositions], fps: f64) -> f64 {
    trajectory
        .windows(2)
        .flat_map(|w| (0..NUM_JOINTS).map(move |j| distance(w[0][j], w[1][j])))
        .fold(0.0, f64::max)
        * fps
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Uniformly slows the trajectory by `k = max(1, observed / max_speed)`.
///
/// The result keeps the frame rate and covers `(frames - 1) * k / fps`
/// seconds; positions are linearly interpolated and the final frame is the
/// original end pose.
pub fn speed_limit(trajectory: &[JointPositions], max_speed: f64, fps: f64) -> Result<Vec<JointPositions>> {
    if !(max_speed > 0.0 && max_speed.is_finite()) {
        return Err(DataError::Input(format!(
            "max joint speed must be positive, got {max_speed}"
        )));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(DataError::Input(format!("fps must be positive, got {fps}")));
    }
    let observed = max_joint_speed(trajectory, fps);
    let k = (observed / max_speed).max(1.0);
    if k == 1.0 || trajectory.len() < 2 {
        return Ok(trajectory.to_vec());
    }
    let last = (trajectory.len() - 1) as f64;
    let steps = (last * k - 1e-9).ceil() as usize;
    let mut out: Vec<JointPositions> = (0..=steps)
        .map(|m| {
            let s = (m as f64 / k).min(last);
            let i = (s.floor() as usize).min(trajectory.len() - 2);
            let w = s - i as f64;
            let (a, b) = (&trajectory[i], &trajectory[i + 1]);
            let mut joints = [[0.0; 3]; NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                for c in 0..3 {
                    joints[j][c] = (1.0 - w) * a[j][c] + w * b[j][c];
                }
            }
            joints
        })
        .collect();
    out[steps] = trajectory[trajectory.len() - 1];
    Ok(out)
}

/// Writes `t,joint,x,y,z`, one row per joint per frame.
pub fn write_trajectory_csv<W: Write>(out: &mut W, trajectory: &[JointPositions], fps: f64) -> Result<()> {
    writeln!(out, "t,joint,x,y,z")?;
    for (f, joints) in trajectory.iter().enumerate() {
        let t = f as f64 / fps;
        for j in Joint::ALL {
            let [x, y, z] = joints[j as usize];
            writeln!(out, "{t},{},{x},{y},{z}", j.name())?;
        }
    }
    Ok(())
}
