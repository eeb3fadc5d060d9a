use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trimask::fusion::{prune_episode, RetentionMask, StepStats};
use trimask::mask_io::{read_masks, write_masks};
use trimask::simulator::{
    generate_episode, predict_speedup, CostModel, Drift, DriftKind, ScenarioSpec,
};
use trimask::stage2::{cluster_semantics, SemanticLabel};
use trimask::temporal::{EmaConfig, PrunerState, Smoothing};
use trimask::trace::{read_trace, write_trace};
use trimask::{
    CandidateSet, EpisodeTrace, PatchObservation, Pruner, PrunerConfig, Stage1Thresholds,
    StepObservation,
};

/// Wide-range finite value: random mantissa, exponent in [-300, 300].
fn wide(rng: &mut ChaCha8Rng, nonneg: bool) -> f64 {
    if rng.random_bool(0.1) {
        return 0.0;
    }
    let v = rng.random_range(0.5..1.0) * 10f64.powi(rng.random_range(-300..300));
    if !nonneg && rng.random_bool(0.5) {
        -v
    } else {
        v
    }
}

fn random_trace(seed: u64, p: usize, df: usize, da: usize, steps: u64) -> EpisodeTrace<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = EpisodeTrace::new(format!("ep-{seed}"), p, df, da);
    for t in 1..=steps {
        let patches = (0..p)
            .map(|id| {
                let f2d = (0..df).map(|_| wide(&mut rng, false)).collect();
                let f3d = (0..df).map(|_| wide(&mut rng, false)).collect();
                let a2d = (0..da).map(|_| wide(&mut rng, true)).collect();
                let a3d = (0..da).map(|_| wide(&mut rng, true)).collect();
                PatchObservation::new(id, f2d, f3d, a2d, a3d)
            })
            .collect();
        trace.steps.push(StepObservation::new(t, patches));
    }
    trace
}

fn to_text(trace: &EpisodeTrace<f64>) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn small_episode(seed: u64, noise: f64) -> EpisodeTrace<f64> {
    let spec = ScenarioSpec {
        num_patches: 25,
        steps: 10,
        feat_dim: 6,
        attn_dim: 6,
        noise_sigma: noise,
        indicator_noise: 0.05,
        drift: Drift {
            kind: DriftKind::Sinusoidal,
            amplitude: 0.3,
            period: 6.0,
        },
        seed,
        ..Default::default()
    };
    generate_episode(&spec).unwrap().0
}

fn config(tau2d: f64, tau3d: f64, beta: f64, seed: u64) -> PrunerConfig {
    PrunerConfig {
        thresholds: Stage1Thresholds::new(tau2d, tau3d).unwrap(),
        smoothing: Smoothing::Ema(EmaConfig::new(beta, 4).unwrap()),
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_save_load_is_identity(seed in any::<u64>(), p in 1usize..6, df in 1usize..5, da in 1usize..5, steps in 0u64..5) {
        let trace = random_trace(seed, p, df, da, steps);
        let back: EpisodeTrace<f64> = read_trace(to_text(&trace).as_bytes()).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn corrupted_traces_load_valid_or_fail(seed in any::<u64>(), edits in 1usize..4) {
        let trace = random_trace(seed, 3, 2, 2, 3);
        let mut bytes = to_text(&trace).into_bytes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let alphabet = b"0123456789-.,:[]{}\"eE ";
        for _ in 0..edits {
            let i = rng.random_range(0..bytes.len());
            bytes[i] = alphabet[rng.random_range(0..alphabet.len())];
        }
        if let Ok(t) = read_trace::<f64, _>(&bytes[..]) {
            prop_assert!(t.validate().is_ok());
        }
    }

    #[test]
    fn mask_file_round_trip(seed in any::<u64>(), p in 1usize..20, steps in 1u64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<(RetentionMask, StepStats)> = (1..=steps)
            .map(|t| {
                let m = RetentionMask {
                    t,
                    mask2d: (0..p).map(|_| rng.random_bool(0.5)).collect(),
                    mask3d: (0..p).map(|_| rng.random_bool(0.5)).collect(),
                };
                let mut s = StepStats::from_mask(&m);
                s.conflicts_resolved = rng.random_range(0..p);
                (m, s)
            })
            .collect();
        let mut buf = Vec::new();
        write_masks(&mut buf, "e", p, &recs).unwrap();
        let back = read_masks(&buf[..]).unwrap();
        prop_assert_eq!(back.num_patches, p);
        for ((m, s), (bm, bc)) in recs.iter().zip(back.masks.iter().zip(&back.conflicts)) {
            prop_assert_eq!(m, bm);
            prop_assert_eq!(s.conflicts_resolved, *bc);
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted(seed in 0u64..1000, cut in 1usize..9) {
        let trace = small_episode(seed, 0.2);
        let cfg = config(0.08, 0.2, 0.85, seed);
        let full = prune_episode(&trace, &cfg).unwrap();

        let mut first = Pruner::<f64>::new(cfg.clone()).unwrap();
        for obs in &trace.steps[..cut] {
            first.step(obs).unwrap();
        }
        let json = first.state().to_json();
        let state = PrunerState::<f64>::from_json(&json).unwrap();
        prop_assert_eq!(&state, first.state());
        let mut resumed = Pruner::resume(cfg, state).unwrap();
        for (obs, (mask, stats)) in trace.steps[cut..].iter().zip(&full[cut..]) {
            let out = resumed.step(obs).unwrap();
            prop_assert_eq!(&out.mask, mask);
            prop_assert_eq!(&out.stats, stats);
        }
    }

    #[test]
    fn cluster_means_are_ordered(scores in prop::collection::vec(0.0f64..100.0, 3..60)) {
        let c = cluster_semantics(&scores).unwrap();
        let mean = |l: SemanticLabel| {
            let v: Vec<f64> = scores.iter().zip(&c.labels).filter(|(_, &x)| x == l).map(|(s, _)| *s).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let means: Vec<f64> = [SemanticLabel::Obj, SemanticLabel::Rob, SemanticLabel::Bg]
            .into_iter()
            .filter_map(mean)
            .collect();
        prop_assert!(means.windows(2).all(|w| w[0] >= w[1]), "{:?}", means);
    }

    #[test]
    fn masks_follow_fused_candidates(seed in 0u64..1000, beta in 0.05f64..0.95) {
        let trace = small_episode(seed, 0.3);
        let mut pruner = Pruner::<f64>::new(config(0.08, 0.2, beta, seed)).unwrap();
        for (i, obs) in trace.steps.iter().enumerate() {
            let out = pruner.step(obs).unwrap();
            if i == 0 {
                prop_assert_eq!(&out.mask, &RetentionMask::all_ones(1, trace.num_patches));
                continue;
            }
            let mut conflicts = 0;
            for (p, d) in out.decisions.iter().enumerate() {
                prop_assert_eq!(out.mask.candidate(p), d.fused);
                if !d.stage2.is_empty() {
                    prop_assert!(!d.fused.is_empty());
                }
                let inter = d.stage2.intersect(d.stage1);
                let expected = if !d.stage2.is_empty() && inter.is_empty() { d.stage2 } else { inter };
                prop_assert_eq!(d.fused, expected);
                prop_assert!(!d.stage1.is_empty());
                conflicts += d.conflict as usize;
            }
            prop_assert_eq!(conflicts, out.stats.conflicts_resolved);
        }
    }

    #[test]
    fn wider_thresholds_never_shrink_candidates(
        seed in 0u64..1000,
        tau2d in 0.02f64..0.15,
        tau3d in 0.16f64..0.4,
        shrink in 0.0f64..1.0,
        grow in 0.0f64..1.0,
    ) {
        let trace = small_episode(seed, 0.3);
        let narrow = config(tau2d, tau3d, 0.85, seed);
        let wide = config(tau2d * shrink.max(0.01), tau3d + grow * (0.99 - tau3d), 0.85, seed);
        let mut a = Pruner::<f64>::new(narrow).unwrap();
        let mut b = Pruner::<f64>::new(wide).unwrap();
        for obs in &trace.steps {
            let (oa, ob) = (a.step(obs).unwrap(), b.step(obs).unwrap());
            for (da, db) in oa.decisions.iter().zip(&ob.decisions) {
                prop_assert!(da.stage1.is_subset_of(db.stage1));
                prop_assert!(da.fused.is_subset_of(db.fused));
            }
            for p in 0..trace.num_patches {
                prop_assert!(oa.mask.candidate(p).is_subset_of(ob.mask.candidate(p)));
            }
        }
    }

    #[test]
    fn speedup_never_drops_when_tokens_are_removed(seed in any::<u64>(), p in 1usize..40, steps in 1u64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masks: Vec<RetentionMask> = (1..=steps)
            .map(|t| RetentionMask {
                t,
                mask2d: (0..p).map(|_| rng.random_bool(0.7)).collect(),
                mask3d: (0..p).map(|_| rng.random_bool(0.7)).collect(),
            })
            .collect();
        let model = CostModel::default();
        let mut last = predict_speedup(&masks, &model, 2 * p);
        for _ in 0..10 {
            let s = rng.random_range(0..masks.len());
            let i = rng.random_range(0..p);
            if rng.random_bool(0.5) {
                masks[s].mask2d[i] = false;
            } else {
                masks[s].mask3d[i] = false;
            }
            let next = predict_speedup(&masks, &model, 2 * p);
            prop_assert!(next >= last);
            last = next;
        }
    }
}

#[test]
fn cold_start_ignores_inputs() {
    let trace = small_episode(3, 0.0);
    let mut pruner = Pruner::<f64>::new(PrunerConfig {
        budget: Some(0.7),
        ..Default::default()
    })
    .unwrap();
    let out = pruner.step(&trace.steps[0]).unwrap();
    assert_eq!(out.mask, RetentionMask::all_ones(1, 25));
    assert!(out.decisions.is_empty());
}

#[test]
fn zero_budget_target_changes_nothing() {
    let trace = small_episode(4, 0.1);
    let base = prune_episode(&trace, &PrunerConfig::default()).unwrap();
    let zero = prune_episode(
        &trace,
        &PrunerConfig {
            budget: Some(0.0),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(base, zero);
}

#[test]
fn candidate_subset_relation() {
    assert!(CandidateSet::EMPTY.is_subset_of(CandidateSet::ONLY_2D));
    assert!(CandidateSet::ONLY_3D.is_subset_of(CandidateSet::BOTH));
    assert!(!CandidateSet::ONLY_2D.is_subset_of(CandidateSet::ONLY_3D));
}
