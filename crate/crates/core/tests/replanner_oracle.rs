mod common;

use assembly_engine::catalog::Catalog;
use assembly_engine::replanner::{replan, Deviation, ReplanConfig, ReplanError};
use assembly_engine::stability::StabilityOptions;

fn bricks() -> Catalog {
    Catalog::from_document(assembly_engine::catalog::brick_catalog_document()).unwrap()
}

#[test]
fn top_k_matches_exhaustive_enumeration() {
    let catalog = bricks();
    let mut rng = common::rng(0x5eed_0001);
    let config = ReplanConfig::default();
    let opts = StabilityOptions::default();
    let mut compared = 0;
    for case in 0..60 {
        let (state, lattice, goals, last) = common::random_instance(&catalog, &mut rng);
        let deviation = Deviation { expected: last, actual: last, step_index: state.len() - 1 };
        let got = replan(&state, &deviation, &goals, &catalog, &lattice, &config, opts, None);
        let want = common::oracle_top_k(&state, &goals, &catalog, &lattice, config.k, opts);
        match (got, want) {
            (Ok(out), Some(want)) => {
                assert!(!out.truncated, "case {case}: truncated");
                let got_costs: Vec<u32> = out.candidates.iter().map(|c| c.edit_cost).collect();
                let want_costs: Vec<u32> = want.iter().map(|g| g.cost).collect();
                assert_eq!(got_costs, want_costs, "case {case}");
                let got_hashes: Vec<&str> = out.candidates.iter().map(|c| c.state_hash.as_str()).collect();
                let want_hashes: Vec<&str> = want.iter().map(|g| g.hash.as_str()).collect();
                assert_eq!(got_hashes, want_hashes, "case {case}");
                for c in &out.candidates {
                    common::check_candidate(&state, c, &goals, &catalog, &lattice)
                        .unwrap_or_else(|e| panic!("case {case}: {e}"));
                }
                compared += 1;
            }
            (Err(ReplanError::InfeasibleGoals), None) => {}
            (Ok(_), None) => panic!("case {case}: engine found goals the oracle could not"),
            (Err(e), Some(_)) => panic!("case {case}: engine failed with {e} but goals exist"),
            (Err(e), None) => panic!("case {case}: unexpected error {e}"),
        }
    }
    assert!(compared >= 30, "only {compared} feasible cases");
}
