use nha_core::hybrid::{
    concat_segments, corrupt_segmentation, default_threshold, finite_difference_segment,
    read_dataset, read_dataset_str, segment_bounds, write_dataset, ModeId, Trajectory,
};
use nha_core::systems::{simulate_dataset, DatasetSpec, SystemKind};
use nha_core::Error;
use proptest::prelude::*;

/// Random trajectories with non-decreasing times, some repeated.
fn trajectory() -> impl Strategy<Value = Trajectory> {
    (2usize..40, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec((0.001f64..0.5, prop::bool::weighted(0.1)), n - 1),
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n),
            prop::option::of(prop::collection::vec(0usize..4, n)),
            "[a-z0-9_-]{1,12}",
        )
            .prop_map(|(steps, states, modes, id)| {
                let mut times = vec![0.0];
                for (dt, repeat) in steps {
                    let last = *times.last().unwrap();
                    times.push(if repeat { last } else { last + dt });
                }
                Trajectory {
                    id,
                    times,
                    states,
                    mode_labels: modes.map(|m| m.into_iter().map(ModeId).collect()),
                    event_times: None,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trip(trajs in prop::collection::vec(trajectory(), 1..5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &trajs).unwrap();
        let back = read_dataset(&path).unwrap();
        prop_assert_eq!(back, trajs);
    }

    #[test]
    fn segments_cover_every_sample_once(traj in trajectory(), threshold in 1.0f64..1000.0) {
        let segs = finite_difference_segment(&traj, threshold).unwrap();
        let bounds = segment_bounds(&segs);
        prop_assert_eq!(bounds[0].0, 0);
        prop_assert_eq!(bounds.last().unwrap().1, traj.len());
        for w in bounds.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        let back = concat_segments(&segs);
        prop_assert_eq!(&back.times, &traj.times);
        prop_assert_eq!(&back.states, &traj.states);
        // no segment straddles a repeated timestamp
        for s in &segs {
            prop_assert!(s.times.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn segmentation_is_monotone_in_threshold(traj in trajectory(), lo in 1.0f64..100.0, k in 1.0f64..10.0) {
        let fine = segment_bounds(&finite_difference_segment(&traj, lo).unwrap());
        let coarse = segment_bounds(&finite_difference_segment(&traj, lo * k).unwrap());
        prop_assert!(coarse.len() <= fine.len());
        // every coarse cut is also a fine cut
        let fine_starts: Vec<usize> = fine.iter().map(|b| b.0).collect();
        for b in &coarse {
            prop_assert!(fine_starts.contains(&b.0));
        }
    }

    #[test]
    fn corruption_preserves_coverage(traj in trajectory(), p in 0.0f64..1.0, seed in any::<u64>()) {
        let segs = finite_difference_segment(&traj, 1.0).unwrap();
        let noisy = corrupt_segmentation(&segs, p, seed);
        let back = concat_segments(&noisy);
        prop_assert_eq!(&back.times, &traj.times);
        prop_assert_eq!(&back.states, &traj.states);
        prop_assert!(noisy.len() <= segs.len());
        prop_assert_eq!(&noisy, &corrupt_segmentation(&segs, p, seed));
        prop_assert_eq!(&corrupt_segmentation(&segs, 0.0, seed), &segs);
    }

    #[test]
    fn default_threshold_is_positive(traj in trajectory()) {
        let t = default_threshold(&traj).unwrap();
        prop_assert!(t > 0.0 && t.is_finite());
    }
}

#[test]
fn corruption_moves_cuts_by_at_most_ten() {
    let spec = DatasetSpec {
        n_trajectories: 3,
        horizon: 80.0,
        seed: 1,
        ..DatasetSpec::default()
    };
    for sol in simulate_dataset(SystemKind::TcpReno, &spec).unwrap() {
        let segs = finite_difference_segment(&sol.trajectory, 1e12).unwrap();
        let clean: Vec<usize> = segment_bounds(&segs).iter().skip(1).map(|b| b.0).collect();
        for seed in 0..5 {
            let noisy = corrupt_segmentation(&segs, 1.0, seed);
            for b in segment_bounds(&noisy).iter().skip(1) {
                let nearest = clean.iter().map(|&c| c.abs_diff(b.0)).min().unwrap();
                // a moved cut may land on a neighbouring clean cut
                assert!(
                    nearest <= 10,
                    "cut {} is {nearest} from the clean cuts",
                    b.0
                );
            }
        }
    }
}

#[test]
fn schema_errors_carry_line_numbers() {
    let text = "{\"id\": 1, \"times\": [0, 1], \"states\": [[0], [1]]}\n\n{\"id\": \"b\", \"times\": [1, 0], \"states\": [[0], [1]]}\n";
    let err = read_dataset_str(text, "mem").unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Schema { .. }), "{err:?}");
    assert!(msg.contains("mem:3"), "{msg}");
    let err = read_dataset_str(
        "{\"id\": \"a\", \"times\": [0], \"states\": [[0]], \"extra\": 1}",
        "mem",
    )
    .unwrap_err();
    assert!(err.to_string().contains("mem:1"));
    // integer ids are accepted as strings
    let ok = read_dataset_str(
        "{\"id\": 7, \"times\": [0, 1], \"states\": [[0], [1]]}",
        "mem",
    )
    .unwrap();
    assert_eq!(ok[0].id, "7");
}

#[test]
fn simulated_labels_match_segments() {
    for kind in [SystemKind::TcpReno, SystemKind::Sls, SystemKind::Toy] {
        let spec = DatasetSpec {
            n_trajectories: 3,
            horizon: if kind == SystemKind::Toy { 1.0 } else { 20.0 },
            seed: 2,
            ..DatasetSpec::default()
        };
        for sol in simulate_dataset(kind, &spec).unwrap() {
            let segs = finite_difference_segment(&sol.trajectory, 1e12).unwrap();
            // cuts only at recorded jumps, one segment per mode interval
            assert_eq!(segs.len(), sol.events.len() + 1, "{kind:?}");
            for (seg, interval) in segs.iter().zip(&sol.mode_timeline) {
                assert_eq!(seg.true_mode, Some(interval.mode));
                assert!((seg.times[0] - interval.start).abs() < 1e-12);
            }
        }
    }
}
