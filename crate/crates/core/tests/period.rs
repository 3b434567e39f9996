mod common;

use common::*;
use loader_core::app_model::InconsistencySpec;
use loader_core::embedding::{solve_replication_period, TriggerMode, TriggerModeKind};
use loader_core::Nanos;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn solution_meets_budget((spec, wpd, r_min, kind) in arb_period_case()) {
        check_period(spec, wpd, r_min, kind)?;
    }
}

#[test]
fn none_budget_has_no_period() {
    let r = solve_replication_period(
        InconsistencySpec::None,
        Nanos(1000),
        100.0,
        TriggerModeKind::Time,
    )
    .unwrap();
    assert_eq!(r, None);
}

#[test]
fn update_error_example() {
    // 10 writes at 1000 writes/s leave 10 ms; 0.5 ms go to propagation.
    let sol = solve_replication_period(
        InconsistencySpec::UpdateError {
            epsilon_r: 10,
            max_write_rate: 1000.0,
        },
        Nanos::from_micros(500),
        200.0,
        TriggerModeKind::Time,
    )
    .unwrap()
    .unwrap();
    assert_eq!(sol.d_r, Nanos::from_micros(9500));
    assert_eq!(sol.mode, TriggerMode::TimePeriod(Nanos::from_micros(4500)));
}
