use proptest::prelude::*;

use text2action::checkpoint::Checkpoint;
use text2action::data::{
    build_pose_vector, gaussian_smooth, load_dataset, max_joint_speed, resample, save_dataset, speed_limit,
    ActionSequence, DatasetRecord, JointPositions, PoseVector, RawKeypointFrame, CHAIN, NUM_JOINTS,
};
use text2action::embedding::{EmbeddingMatrix, Vocabulary};
use text2action::encoder::{attention_context, AttentionParams};
use text2action::params::{GroupDims, ParamGroup};
use text2action::tensor::{SeededRng, Tensor};

fn joints() -> impl Strategy<Value = JointPositions> {
    prop::array::uniform8(prop::array::uniform3(-2.0f64..2.0))
}

fn bones_ok_by(j: &JointPositions, min_len: f64) -> bool {
    CHAIN.iter().all(|&(p, c)| {
        let (a, b) = (j[p as usize], j[c as usize]);
        (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt() > min_len
    })
}

fn bones_ok(j: &JointPositions) -> bool {
    bones_ok_by(j, 1e-3)
}

fn pose(j: JointPositions) -> PoseVector {
    build_pose_vector(&RawKeypointFrame {
        timestamp: 0.0,
        joints: j,
    })
    .unwrap()
}

fn sequence() -> impl Strategy<Value = ActionSequence> {
    prop::collection::vec(joints(), 2..12).prop_filter_map("degenerate bone", |js| {
        js.iter().all(bones_ok).then(|| ActionSequence {
            frames: js.into_iter().map(pose).collect(),
            fps: 10.0,
        })
    })
}

/// Small per-frame steps away from a base frame, so interpolated or averaged
/// bones never cancel.
fn smooth_sequence() -> impl Strategy<Value = ActionSequence> {
    (
        joints(),
        prop::collection::vec(prop::array::uniform8(prop::array::uniform3(-0.05f64..0.05)), 1..12),
    )
        .prop_filter_map("degenerate bone", |(base, deltas)| {
            let mut frames = vec![base];
            for d in deltas {
                let mut next = *frames.last().unwrap();
                for (p, dp) in next.iter_mut().zip(d) {
                    for k in 0..3 {
                        p[k] += dp[k];
                    }
                }
                frames.push(next);
            }
            frames.iter().all(|j| bones_ok_by(j, 0.5)).then(|| ActionSequence {
                frames: frames.into_iter().map(pose).collect(),
                fps: 10.0,
            })
        })
}

proptest! {
    #[test]
    fn built_poses_have_unit_blocks(j in joints()) {
        prop_assume!(bones_ok(&j));
        prop_assert!(pose(j).unit_error() < 1e-9);
    }

    #[test]
    fn smoothing_keeps_length_and_unit_blocks(seq in smooth_sequence(), sigma in 0.0f64..3.0) {
        let out = gaussian_smooth(&seq, sigma).unwrap();
        prop_assert_eq!(out.len(), seq.len());
        prop_assert!(out.frames.iter().all(|f| f.unit_error() < 1e-9));
    }

    #[test]
    fn zero_sigma_smoothing_is_identity(seq in sequence()) {
        prop_assert_eq!(gaussian_smooth(&seq, 0.0).unwrap(), seq);
    }

    #[test]
    fn resampling_gives_requested_length(seq in smooth_sequence(), stretch in 1.0f64..3.0, length in 2usize..10) {
        let span = (length - 1) as f64 / 10.0 * stretch;
        let step = span / (seq.len() - 1) as f64;
        let timed: Vec<(f64, PoseVector)> =
            seq.frames.iter().enumerate().map(|(i, f)| (0.5 + i as f64 * step, *f)).collect();
        let out = resample(&timed, 10.0, length).unwrap();
        prop_assert_eq!(out.len(), length);
        let first = out.frames[0].as_array().iter().zip(seq.frames[0].as_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(first < 1e-12);
        prop_assert!(out.frames.iter().all(|f| f.unit_error() < 1e-9));
    }

    #[test]
    fn dataset_round_trip(seq in sequence(), words in prop::collection::vec("[a-z]{1,6}", 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let rec = DatasetRecord { id: "r0".into(), sentence: words, action: seq };
        save_dataset(std::slice::from_ref(&rec), &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].sentence, &rec.sentence);
        let err = back[0].action.flatten().iter().zip(rec.action.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn speed_limit_respects_bound(
        traj in prop::collection::vec(joints(), 2..10),
        max_speed in 0.5f64..20.0,
    ) {
        let out = speed_limit(&traj, max_speed, 10.0).unwrap();
        prop_assert_eq!(out[0], traj[0]);
        prop_assert_eq!(*out.last().unwrap(), *traj.last().unwrap());
        for w in out.windows(2) {
            for j in 0..NUM_JOINTS {
                let d: f64 = (0..3).map(|k| (w[1][j][k] - w[0][j][k]).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d * 10.0 <= max_speed * (1.0 + 1e-9) + 1e-12, "speed {}", d * 10.0);
            }
        }
        if max_joint_speed(&traj, 10.0) <= max_speed {
            prop_assert_eq!(out, traj);
        }
    }

    #[test]
    fn attention_is_a_distribution(seed in any::<u64>(), len in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let mut p = AttentionParams::zeros(GroupDims::new(5, 0, 0));
        p.init_uniform(&mut rng, 2.0);
        let h: Vec<Tensor> = (0..len).map(|_| rng.gaussian(&[5])).collect();
        let ctx = attention_context(&rng.gaussian(&[5]), &h, &p).unwrap();
        let alpha = ctx.alpha.data();
        prop_assert_eq!(alpha.len(), len);
        prop_assert!(alpha.iter().all(|a| *a >= 0.0));
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if len == 1 {
            prop_assert_eq!(alpha, &[1.0]);
        }
    }

    #[test]
    fn embedding_is_linear_in_v(seed in any::<u64>(), ids in prop::collection::vec(0usize..6, 1..5)) {
        let mut rng = SeededRng::new(seed);
        let (a, b) = (rng.gaussian(&[4, 6]), rng.gaussian(&[4, 6]));
        let sum = EmbeddingMatrix::new(a.add(&b).unwrap()).unwrap().embed(&ids).unwrap();
        let ea = EmbeddingMatrix::new(a).unwrap().embed(&ids).unwrap();
        let eb = EmbeddingMatrix::new(b).unwrap().embed(&ids).unwrap();
        for ((s, x), y) in sum.vectors.iter().zip(&ea.vectors).zip(&eb.vectors) {
            prop_assert!(s.max_abs_diff(&x.add(y).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn vocabulary_index_round_trip(words in prop::collection::vec("[a-z]{1,5}", 1..20)) {
        let vocab = Vocabulary::build(&[words], 1).unwrap();
        for i in 0..vocab.len() {
            prop_assert_eq!(vocab.index_of(vocab.word(i).unwrap()), i);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let mut ck = Checkpoint::new();
        ck.set_meta("hidden", rows);
        ck.insert("w", rng.gaussian(&[rows, cols]));
        ck.insert("s", Tensor::scalar(rng.standard_normal()));
        prop_assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }
}
