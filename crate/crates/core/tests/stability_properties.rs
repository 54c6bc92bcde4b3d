mod common;

use assembly_engine::stability::{analyze_blocks, Block, StabilityOptions};
use proptest::prelude::*;

const OPTS: StabilityOptions = StabilityOptions { rigid_joints: false };

fn same_margins(a: &[Block], b: &[Block], tol: f64) {
    let ra = analyze_blocks(a, &[], OPTS, 1.0);
    let rb = analyze_blocks(b, &[], OPTS, 1.0);
    assert_eq!(ra.stable, rb.stable);
    for (id, m) in &ra.per_placement_margin {
        match (m, rb.per_placement_margin[id]) {
            (Some(x), Some(y)) => assert!((x - y).abs() < tol, "{x} vs {y}"),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn verdict_matches_brute_force_oracle() {
    let mut rng = common::rng(99);
    let mut unstable = 0;
    for _ in 0..250 {
        let blocks = common::random_stack(&mut rng, 8);
        let r = analyze_blocks(&blocks, &[], OPTS, 1.0);
        assert_eq!(r.stable, common::stack_is_stable(&blocks), "{blocks:?}");
        unstable += usize::from(!r.stable);
    }
    assert!(unstable > 20 && unstable < 230, "{unstable}");
}

#[test]
fn mirror_reflection_preserves_margins() {
    let mut rng = common::rng(4);
    for _ in 0..100 {
        let blocks = common::random_stack(&mut rng, 6);
        let mirrored: Vec<Block> = blocks
            .iter()
            .map(|b| Block { min: [-b.max[0], b.min[1], b.min[2]], max: [-b.min[0], b.max[1], b.max[2]], ..*b })
            .collect();
        same_margins(&blocks, &mirrored, 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn margins_are_translation_invariant(seed in any::<u64>(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let blocks = common::random_stack(&mut common::rng(seed), 8);
        same_margins(&blocks, &common::translated(&blocks, dx, dy), 1e-9);
    }

    #[test]
    fn quarter_turn_preserves_margins(seed in any::<u64>()) {
        let blocks = common::random_stack(&mut common::rng(seed), 8);
        let turned: Vec<Block> = blocks
            .iter()
            .map(|b| Block { min: [-b.max[1], b.min[0], b.min[2]], max: [-b.min[1], b.max[0], b.max[2]], ..*b })
            .collect();
        same_margins(&blocks, &turned, 1e-9);
    }

    #[test]
    fn uniform_mass_scaling_preserves_margins(seed in any::<u64>(), k in 0.01..100.0f64) {
        let blocks = common::random_stack(&mut common::rng(seed), 8);
        let scaled: Vec<Block> = blocks.iter().map(|b| Block { mass: b.mass * k, ..*b }).collect();
        same_margins(&blocks, &scaled, 1e-9);
    }

    #[test]
    fn score_stays_in_unit_interval(seed in any::<u64>(), scale in 0.1..5.0f64) {
        let blocks = common::random_stack(&mut common::rng(seed), 8);
        let r = analyze_blocks(&blocks, &[], OPTS, scale);
        prop_assert!((0.0..=1.0).contains(&r.score));
        if !r.stable {
            prop_assert_eq!(r.score, 0.0);
        }
    }
}
