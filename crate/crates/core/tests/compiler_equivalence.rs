use std::collections::BTreeMap;

use loader_core::app_model::{
    build_dag, Action, ActivitySpec, ApplicationSpec, InconsistencySpec, Predicate,
    ReductionPrimitive, ReductionSpec, ScopeFilter, StateSpec, TriggerSpec, ValueKind,
};
use loader_core::compiler::{assign_state_ids, compile, Capabilities, IdRegistry};
use loader_core::Nanos;
use proptest::prelude::*;

const PRIMS: [ReductionPrimitive; 5] = [
    ReductionPrimitive::Sum,
    ReductionPrimitive::Mean,
    ReductionPrimitive::ArgMin,
    ReductionPrimitive::ArgMax,
    ReductionPrimitive::Max,
];

#[derive(Debug, Clone)]
struct Case {
    values: Vec<u64>,
    reductions: Vec<(usize, Vec<usize>)>,
    thresholds: Vec<u64>,
    raw_trigger: Option<(usize, u64)>,
}

fn arb_case() -> impl Strategy<Value = Case> {
    (2usize..7).prop_flat_map(|n| {
        let values = prop::collection::vec(0u64..1_000_000, n);
        let red =
            (0..PRIMS.len(), prop::collection::btree_set(0..n, 1..=n)).prop_map(|(p, set)| {
                let mut inputs: Vec<usize> = set.into_iter().collect();
                if PRIMS[p] == ReductionPrimitive::Mean {
                    let k = 1 << inputs.len().ilog2();
                    inputs.truncate(k);
                }
                (p, inputs)
            });
        let reductions = prop::collection::vec(red, 1..4);
        let thresholds = prop::collection::vec(0u64..2_000_000, 4);
        let raw = prop::option::of((0..n, 0u64..1_000_000));
        (values, reductions, thresholds, raw).prop_map(
            |(values, reductions, thresholds, raw_trigger)| Case {
                values,
                reductions,
                thresholds,
                raw_trigger,
            },
        )
    })
}

fn app_of(case: &Case) -> ApplicationSpec {
    let states: Vec<StateSpec> = (0..case.values.len())
        .map(|i| StateSpec::new(format!("s{i}"), ScopeFilter::any(), ValueKind::Scalar))
        .collect();
    let reductions: Vec<ReductionSpec> = case
        .reductions
        .iter()
        .enumerate()
        .map(|(k, (p, inputs))| ReductionSpec {
            inputs: inputs.iter().map(|i| format!("s{i}")).collect(),
            primitive: PRIMS[*p],
            output_name: format!("r{k}"),
        })
        .collect();
    let budget = InconsistencySpec::TimeObsolescence {
        epsilon_t: Nanos::from_millis(5),
    };
    let mut triggers: Vec<TriggerSpec> = reductions
        .iter()
        .enumerate()
        .map(|(k, r)| TriggerSpec {
            name: format!("t{k}"),
            input: r.output_name.clone(),
            predicate: Predicate::GreaterThan(case.thresholds[k] as f64),
            inconsistency: budget,
            activity: "act".into(),
        })
        .collect();
    if let Some((s, thr)) = case.raw_trigger {
        triggers.push(TriggerSpec {
            name: "raw".into(),
            input: format!("s{s}"),
            predicate: Predicate::LessOrEqual(thr as f64),
            inconsistency: budget,
            activity: "act".into(),
        });
    }
    ApplicationSpec {
        name: "random".into(),
        states,
        reductions,
        triggers,
        activities: vec![ActivitySpec {
            name: "act".into(),
            target_class: ScopeFilter::any(),
            action: Action::DropPacket,
            sequential_group: None,
        }],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn compiled_program_matches_interpreter(case in arb_case()) {
        let app = app_of(&case);
        let dag = build_dag(&app).unwrap();
        let program = assign_state_ids(compile(&dag, &Capabilities::all(), 8).unwrap(), &mut IdRegistry::new()).unwrap();

        let named: BTreeMap<String, Vec<u64>> =
            case.values.iter().enumerate().map(|(i, &v)| (format!("s{i}"), vec![v])).collect();
        let want = app.interpret(&named);
        let got = program.evaluate(|id, buf| {
            let name = &program.state(id).unwrap().name;
            buf.extend_from_slice(&named[name]);
        });

        for (name, value) in &want.reduced {
            let slot = program.reduced_slot(name).unwrap();
            prop_assert_eq!(got.reduced[slot as usize], *value, "reduction {}", name);
        }
        let got_triggers: BTreeMap<String, _> = got
            .triggers
            .iter()
            .map(|(aid, eval)| (program.action(*aid).unwrap().name.clone(), *eval))
            .collect();
        prop_assert_eq!(got_triggers, want.triggers);
    }
}

#[test]
fn mean_via_shift_equals_exact_mean() {
    for n in [1usize, 2, 4, 8] {
        let case = Case {
            values: (0..n as u64).map(|i| i * 7 + 3).collect(),
            reductions: vec![(1, (0..n).collect())],
            thresholds: vec![0; 4],
            raw_trigger: None,
        };
        let app = app_of(&case);
        let program = assign_state_ids(
            compile(&build_dag(&app).unwrap(), &Capabilities::all(), 8).unwrap(),
            &mut IdRegistry::new(),
        )
        .unwrap();
        let eval = program.evaluate(|id, buf| buf.push(case.values[id as usize]));
        let exact = case.values.iter().sum::<u64>() / n as u64;
        assert_eq!(
            eval.reduced[program.reduced_slot("r0").unwrap() as usize],
            exact
        );
    }
}
