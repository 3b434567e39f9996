//! Graph algorithms and the link-LB reduction against exhaustive search.

mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn steiner_within_twice_optimum((g, picks) in arb_steiner_case()) {
        check_steiner(&g, &picks)?;
    }

    #[test]
    fn betweenness_matches_path_enumeration((g, raw) in arb_betweenness_case()) {
        check_betweenness(&g, &raw)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn link_lb_reduction_is_argmin_of_max(loads in arb_loads()) {
        check_link_lb(&loads)?;
    }
}
