//! Ranking exploration: randomize (part of) a ranked list so downstream
//! training data is not biased by the current ranker's ordering.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, DecisionContext};

/// An ordered result page, optionally with a `[start, end)` window marking
/// the only positions allowed to move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_window: Option<(usize, usize)>,
}

impl RankedList {
    pub fn new(items: Vec<Candidate>) -> Self {
        RankedList { items, shuffle_window: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidInput("ranked list is empty".into()));
        }
        if let Some((start, end)) = self.shuffle_window {
            if start > end || end > self.items.len() {
                return Err(Error::InvalidInput(format!(
                    "shuffle window [{start}, {end}) invalid for {} items",
                    self.items.len()
                )));
            }
        }
        Ok(())
    }
}

/// Fisher-Yates over the window (whole list by default); positions outside
/// the window never move, and the output is a permutation of the input.
pub fn shuffle_ranking(list: &RankedList, ctx: &DecisionContext) -> Result<RankedList> {
    list.validate()?;
    let (start, end) = list.shuffle_window.unwrap_or((0, list.items.len()));

    let mut out = list.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.rng_seed);
    let window = &mut out.items[start..end];
    for i in (1..window.len()).rev() {
        let j = rng.random_range(0..=i);
        window.swap(i, j);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn list_of(n: usize) -> RankedList {
        RankedList::new((0..n).map(|i| Candidate::from_id(format!("r{i}"))).collect())
    }

    fn order(list: &RankedList) -> Vec<String> {
        list.items.iter().map(|c| c.id.clone()).collect()
    }

    #[test]
    fn single_item_is_identity() {
        let list = list_of(1);
        let out = shuffle_ranking(&list, &DecisionContext::with_seed(5)).unwrap();
        assert_eq!(order(&out), order(&list));
    }

    #[test]
    fn same_seed_same_permutation() {
        let list = list_of(8);
        let a = shuffle_ranking(&list, &DecisionContext::with_seed(77)).unwrap();
        let b = shuffle_ranking(&list, &DecisionContext::with_seed(77)).unwrap();
        assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn permutations_are_uniform() {
        // n=3: each of the 6 orders should appear in ~1/6 of 60k draws.
        let list = list_of(3);
        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        for seed in 0..60_000u64 {
            let out = shuffle_ranking(&list, &DecisionContext::with_seed(seed)).unwrap();
            *counts.entry(order(&out)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            let f = c as f64 / 60_000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "permutation frequency {f}");
        }
    }

    #[test]
    fn window_pins_outside_positions() {
        let mut list = list_of(6);
        list.shuffle_window = Some((2, 5));
        let mut moved_inside = false;
        for seed in 0..50u64 {
            let out = shuffle_ranking(&list, &DecisionContext::with_seed(seed)).unwrap();
            let ids = order(&out);
            assert_eq!(&ids[..2], &["r0", "r1"]);
            assert_eq!(ids[5], "r5");
            let mut window: Vec<String> = ids[2..5].to_vec();
            moved_inside |= window != ["r2", "r3", "r4"];
            window.sort();
            assert_eq!(window, ["r2", "r3", "r4"]);
        }
        assert!(moved_inside, "window never shuffled");
    }

    #[test]
    fn windowed_uniformity() {
        let mut list = list_of(5);
        list.shuffle_window = Some((1, 4));
        let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        for seed in 0..60_000u64 {
            let out = shuffle_ranking(&list, &DecisionContext::with_seed(seed)).unwrap();
            *counts.entry(order(&out)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            assert!((c as f64 / 60_000.0 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_windows_rejected() {
        let mut list = list_of(3);
        list.shuffle_window = Some((2, 1));
        assert!(shuffle_ranking(&list, &DecisionContext::with_seed(0)).is_err());
        list.shuffle_window = Some((0, 4));
        assert!(shuffle_ranking(&list, &DecisionContext::with_seed(0)).is_err());
        assert!(shuffle_ranking(&RankedList::new(vec![]), &DecisionContext::with_seed(0)).is_err());
    }

    proptest! {
        #[test]
        fn output_is_bijection_of_input(
            n in 1usize..12,
            seed in any::<u64>(),
            use_window in any::<bool>(),
        ) {
            let mut list = list_of(n);
            if use_window && n >= 2 {
                list.shuffle_window = Some((1, n));
            }
            let out = shuffle_ranking(&list, &DecisionContext::with_seed(seed)).unwrap();
            let mut a = order(&list);
            let mut b = order(&out);
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
