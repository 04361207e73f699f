use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsi_core::history::{self, GeneratorConfig, History, HistoryEvent, Outcome};
use wsi_core::IsolationPolicy;

fn generated(seed: u64, max_txns: usize, items: usize) -> History {
    let cfg = GeneratorConfig {
        max_txns,
        items,
        max_ops: 3,
        abort_probability: 0.1,
    };
    history::random_history(&mut ChaCha8Rng::seed_from_u64(seed), &cfg)
}

fn read_only(h: &History, txn: u32) -> bool {
    !h.events()
        .iter()
        .any(|e| e.txn() == txn && matches!(e, HistoryEvent::Write { .. }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn wsi_admissible_histories_are_serializable(seed in any::<u64>(), txns in 2usize..=7, items in 1usize..=5) {
        let h = generated(seed, txns, items);
        if history::is_admissible(&h, IsolationPolicy::Wsi).unwrap() {
            let v = history::is_serializable(&h).unwrap();
            prop_assert!(v.serializable, "{h}");
            let order = history::serial_order(&history::construct_serial(&h).unwrap());
            prop_assert!(history::check_witness(&h, &order).unwrap(), "{h}");
        }
    }

    #[test]
    fn wsi_never_rejects_read_only(seed in any::<u64>(), txns in 2usize..=7) {
        let h = generated(seed, txns, 3);
        let replay = history::replay_policy(&h, IsolationPolicy::Wsi).unwrap();
        for t in replay.rejected() {
            prop_assert!(!read_only(&h, t), "{h}: read-only txn{t} rejected");
        }
    }

    #[test]
    fn serial_histories_pass_everything(seed in any::<u64>(), txns in 1usize..=6) {
        // Concatenating the committed transactions of any history gives a
        // serial history: admissible under both policies, witnessed by
        // commit order.
        let h = generated(seed, txns, 3);
        let mut events = Vec::new();
        for t in h.committed() {
            events.extend(h.events().iter().filter(|e| e.txn() == t).cloned());
        }
        let serial = History::new(events).unwrap();
        for policy in [IsolationPolicy::Si, IsolationPolicy::Wsi] {
            let replay = history::replay_policy(&serial, policy).unwrap();
            prop_assert!(replay.outcomes.values().all(|o| matches!(o, Outcome::Committed(_))));
        }
        let v = history::is_serializable(&serial).unwrap();
        prop_assert!(v.serializable);
        prop_assert!(history::check_witness(&serial, &serial.committed()).unwrap());
    }

    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let h = generated(seed, 6, 4);
        let back: History = h.to_string().parse().unwrap();
        prop_assert_eq!(back, h);
    }
}

#[test]
fn si_admits_some_non_serializable_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let found = (0..5000).any(|_| {
        let h = history::random_history(&mut rng, &GeneratorConfig::default());
        history::is_admissible(&h, IsolationPolicy::Si).unwrap()
            && !history::is_serializable(&h).unwrap().serializable
    });
    assert!(found);
}

#[test]
fn too_many_transactions_is_an_error() {
    let text: String = (1..=9).map(|t| format!("w{t}[x] c{t} ")).collect();
    let h: History = text.trim().parse().unwrap();
    assert!(matches!(
        history::is_serializable(&h),
        Err(history::HistoryError::TooManyTransactions { .. })
    ));
}
