//! The bounded commit table against a naive list-based model.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsi_core::{
    Capacity, CommitDecision, IsolationPolicy, OracleConfig, RowId, RowSet, StatusOracle, Timestamp,
};

#[derive(Default)]
struct Naive {
    cap: Option<usize>,
    rows: Vec<(RowId, u64)>,
    t_max: u64,
}

impl Naive {
    fn get(&self, r: &RowId) -> Option<u64> {
        self.rows.iter().find(|(x, _)| x == r).map(|e| e.1)
    }

    fn commits(&self, policy: IsolationPolicy, ts: u64, w: &RowSet, r: &RowSet) -> bool {
        let checked = match policy {
            IsolationPolicy::Si => w,
            IsolationPolicy::Wsi if w.is_empty() => return true,
            IsolationPolicy::Wsi => r,
        };
        checked.iter().all(|row| match self.get(row) {
            Some(c) => c <= ts,
            None => self.t_max <= ts,
        })
    }

    fn apply(&mut self, tc: u64, w: &RowSet) {
        for row in w {
            match self.rows.iter_mut().find(|(x, _)| x == row) {
                Some(e) => e.1 = tc,
                None => self.rows.push((row.clone(), tc)),
            }
        }
        while self.cap.is_some_and(|c| self.rows.len() > c) {
            let i = (0..self.rows.len())
                .min_by(|a, b| {
                    let (ra, ta) = &self.rows[*a];
                    let (rb, tb) = &self.rows[*b];
                    (ta, ra).cmp(&(tb, rb))
                })
                .unwrap();
            self.t_max = self.t_max.max(self.rows.remove(i).1);
        }
    }
}

fn rows(rng: &mut ChaCha8Rng, universe: u32) -> RowSet {
    (0..rng.gen_range(0..5))
        .map(|_| RowId::from(format!("k{}", rng.gen_range(0..universe))))
        .collect()
}

fn check(seed: u64, policy: IsolationPolicy, cap: Option<usize>) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = cap.map_or(Capacity::Unbounded, Capacity::bounded);
    let oracle = StatusOracle::new(OracleConfig::new(policy).with_capacity(capacity));
    let mut naive = Naive {
        cap,
        ..Naive::default()
    };
    let mut open: Vec<Timestamp> = Vec::new();
    let universe = rng.gen_range(4..60);
    let mut last_t_max = Timestamp::ZERO;
    for _ in 0..200 {
        if open.is_empty() || rng.gen_bool(0.4) {
            open.push(oracle.timestamps().next().unwrap());
            continue;
        }
        let start = open.remove(rng.gen_range(0..open.len()));
        let (w, r) = (rows(&mut rng, universe), rows(&mut rng, universe));
        let expected = naive.commits(policy, start.get(), &w, &r);
        let got = oracle.commit_bounded(start, &w, &r).unwrap();
        prop_assert_eq!(got.is_committed(), expected);
        if let CommitDecision::Committed(tc) = got {
            naive.apply(tc.get(), &w);
        }
        let table = oracle.table();
        prop_assert_eq!(table.t_max().get(), naive.t_max);
        prop_assert!(table.t_max() >= last_t_max);
        last_t_max = table.t_max();
        if let Some(c) = cap {
            prop_assert!(table.tracked_rows() <= c);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bounded_matches_naive_model(seed in any::<u64>(), cap in 1usize..40, wsi in any::<bool>()) {
        let policy = if wsi { IsolationPolicy::Wsi } else { IsolationPolicy::Si };
        check(seed, policy, Some(cap))?;
    }

    #[test]
    fn unbounded_matches_naive_model(seed in any::<u64>(), wsi in any::<bool>()) {
        let policy = if wsi { IsolationPolicy::Wsi } else { IsolationPolicy::Si };
        check(seed, policy, None)?;
    }
}

/// A pessimistic abort removes a write the unbounded table would have
/// kept, so a later transaction can commit only in the bounded run.
#[test]
fn independent_runs_can_diverge() {
    let set = |r: &str| -> RowSet { [RowId::from(r)].into_iter().collect() };
    let run = |capacity: Capacity| -> Vec<bool> {
        let o = StatusOracle::new(OracleConfig::new(IsolationPolicy::Si).with_capacity(capacity));
        let next = || o.timestamps().next().unwrap();
        let (t1, t2, t3) = (next(), next(), next());
        let mut out = vec![o
            .commit_bounded(t2, &set("x"), &RowSet::new())
            .unwrap()
            .is_committed()];
        let t4 = next();
        for (t, row) in [(t3, "y"), (t1, "z"), (t4, "z")] {
            out.push(
                o.commit_bounded(t, &set(row), &RowSet::new())
                    .unwrap()
                    .is_committed(),
            );
        }
        out
    };
    assert_eq!(run(Capacity::Unbounded), [true, true, true, false]);
    assert_eq!(run(Capacity::bounded(1)), [true, true, false, true]);
}
