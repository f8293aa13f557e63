use std::collections::BTreeSet;

use debiaslens_core::probe::{effective_neurons, group_specific, rank_by_mean_activation, Provenance};
use debiaslens_core::{build_report, ActivationMatrix, AttributeTable, ProbeMode, SparseActivation};
use proptest::prelude::*;

fn instance(omega: usize, groups: usize, dense: &[Vec<f64>], labels: &[usize]) -> (ActivationMatrix, AttributeTable) {
    let rows = dense
        .iter()
        .map(|r| {
            SparseActivation::new(omega, r.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(j, &x)| (j, x)).collect())
                .unwrap()
        })
        .collect();
    let prov = Provenance {
        checkpoint: "c".into(),
        dataset: "d".into(),
    };
    let acts = ActivationMatrix::new(omega, rows, (0..dense.len()).map(|i| format!("s{i}")).collect(), prov).unwrap();
    let table = AttributeTable::new(
        "attr".into(),
        (0..groups).map(|g| format!("g{g}")).collect(),
        labels.iter().map(|&l| Some(l)).collect(),
    )
    .unwrap();
    (acts, table)
}

/// omega, groups, activations (quantized so ties occur), labels covering every group.
fn tiny() -> impl Strategy<Value = (usize, usize, Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..17, 2usize..4).prop_flat_map(|(omega, groups)| {
        let rows = prop::collection::vec(
            (prop::collection::vec(0u8..4, omega), 0..groups),
            groups..groups * 8,
        );
        rows.prop_map(move |rs| {
            let dense = rs.iter().map(|(r, _)| r.iter().map(|&x| x as f64 * 0.5).collect()).collect();
            // First `groups` rows pin one member per group.
            let labels = rs.iter().enumerate().map(|(i, (_, g))| if i < groups { i } else { *g }).collect();
            (omega, groups, dense, labels)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force((omega, groups, dense, labels) in tiny(), tau in 0.0f64..=1.0) {
        let (acts, table) = instance(omega, groups, &dense, &labels);
        let mut effective = Vec::new();
        for g in 0..groups {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            let thr = (tau * members.len() as f64).floor() as usize;
            let e: Vec<usize> = (0..omega)
                .filter(|&j| members.iter().filter(|&&i| dense[i][j] > 0.0).count() >= thr)
                .collect();
            let got = effective_neurons(&acts, &table, &format!("g{g}"), tau).unwrap();
            prop_assert_eq!(&got.neurons, &e);
            effective.push(got);
        }
        let specific = group_specific(&effective).unwrap();
        for g in 0..groups {
            let brute: Vec<usize> = effective[g]
                .neurons
                .iter()
                .copied()
                .filter(|j| (0..groups).all(|h| h == g || !effective[h].neurons.contains(j)))
                .collect();
            prop_assert_eq!(&specific[g], &brute);

            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            let mean = |j: usize| members.iter().map(|&i| dense[i][j]).sum::<f64>() / members.len() as f64;
            let ranked = rank_by_mean_activation(&acts, &table, &format!("g{g}"), &brute).unwrap();
            let mut expect = brute.clone();
            expect.sort_by(|&a, &b| mean(b).partial_cmp(&mean(a)).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(ranked.iter().map(|r| r.neuron).collect::<Vec<_>>(), expect.clone());
            let argmax = brute.iter().copied().fold(None, |best: Option<usize>, j| match best {
                Some(b) if mean(b) >= mean(j) => Some(b),
                _ => Some(j),
            });
            prop_assert_eq!(ranked.first().map(|r| r.neuron), argmax);
        }

        let report = build_report(&acts, &table, tau, ProbeMode::TopOne).unwrap();
        let top: BTreeSet<usize> = report.groups.iter().filter_map(|g| g.selected).collect();
        prop_assert_eq!(report.bias_set.iter().copied().collect::<BTreeSet<_>>(), top);
        let all = build_report(&acts, &table, tau, ProbeMode::AllEffective).unwrap();
        let union: BTreeSet<usize> = specific.iter().flatten().copied().collect();
        prop_assert_eq!(all.bias_set.iter().copied().collect::<BTreeSet<_>>(), union);
    }

    #[test]
    fn higher_tau_shrinks_effective_set((omega, groups, dense, labels) in tiny(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (acts, table) = instance(omega, groups, &dense, &labels);
        for g in 0..groups {
            let name = format!("g{g}");
            let a: BTreeSet<usize> = effective_neurons(&acts, &table, &name, lo).unwrap().neurons.into_iter().collect();
            let b: BTreeSet<usize> = effective_neurons(&acts, &table, &name, hi).unwrap().neurons.into_iter().collect();
            prop_assert!(b.is_subset(&a));
        }
    }
}
