use proptest::prelude::*;
use weakspot_core::review::{Association, AssociationKey, ReviewItem, ReviewQueue, ReviewStore, Verdict};

fn item(object: &str, class: &str) -> ReviewItem {
    ReviewItem {
        key: AssociationKey::new(object, class),
        association: Association {
            object_label: object.into(),
            predicted_class: class.into(),
            support: 1,
            mean_relevance: 0.9,
            evidence_ids: vec!["x".into()],
        },
        verdict: Verdict::Pending,
        history: Vec::new(),
    }
}

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Pending), Just(Verdict::Spurious), Just(Verdict::Benign)]
}

proptest! {
    #[test]
    fn verdict_is_replay_of_history(writes in prop::collection::vec((0usize..3, verdict()), 0..40)) {
        let keys = [("potted plant", "nurse"), ("tennis racket", "tennis player"), ("hat", "cowboy")];
        let mut q = ReviewQueue::new(keys.iter().map(|(o, c)| item(o, c)).collect());
        for (step, (k, v)) in writes.iter().enumerate() {
            let key = AssociationKey::new(keys[*k].0, keys[*k].1);
            q.set_verdict_at(&key, *v, "rev", step as u64).unwrap();
        }
        for (i, it) in q.items().iter().enumerate() {
            prop_assert_eq!(it.verdict, it.replayed_verdict());
            let expected = writes.iter().filter(|(k, _)| *k == i).count();
            prop_assert_eq!(it.history.len(), expected);
            prop_assert!(it.history.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
        let spurious = q.spurious().len();
        prop_assert_eq!(spurious, q.filter(Some(Verdict::Spurious)).len());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("review.json");
        q.save(&path).unwrap();
        prop_assert_eq!(ReviewQueue::load(&path).unwrap(), q);
    }
}

#[test]
fn store_persists_each_write() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("review.json");
    let store = ReviewStore::open(&path).unwrap();
    store.sync(vec![item("potted plant", "nurse")]).unwrap();
    let key = AssociationKey::new("potted plant", "nurse");
    store.set_verdict(&key, Verdict::Spurious, "ana").unwrap();
    store.set_verdict(&key, Verdict::Benign, "ana").unwrap();

    let reopened = ReviewStore::open(&path).unwrap().snapshot();
    let it = reopened.get(&key).unwrap();
    assert_eq!(it.verdict, Verdict::Benign);
    assert_eq!(
        it.history.iter().map(|e| e.verdict).collect::<Vec<_>>(),
        vec![Verdict::Spurious, Verdict::Benign]
    );
    assert!(store
        .set_verdict(&AssociationKey::new("cat", "nurse"), Verdict::Spurious, "ana")
        .is_err());
    // failed writes leave the file untouched
    assert_eq!(ReviewStore::open(&path).unwrap().snapshot(), reopened);
}

#[test]
fn concurrent_writers_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let store = std::sync::Arc::new(ReviewStore::open(dir.path().join("review.json")).unwrap());
    store.sync(vec![item("potted plant", "nurse")]).unwrap();
    let key = AssociationKey::new("potted plant", "nurse");
    std::thread::scope(|s| {
        for t in 0..8 {
            let store = store.clone();
            let key = key.clone();
            s.spawn(move || {
                for _ in 0..10 {
                    let v = if t % 2 == 0 { Verdict::Spurious } else { Verdict::Benign };
                    store.set_verdict(&key, v, &format!("r{t}")).unwrap();
                }
            });
        }
    });
    let snap = ReviewStore::open(dir.path().join("review.json")).unwrap().snapshot();
    let it = snap.get(&key).unwrap();
    assert_eq!(it.history.len(), 80);
    assert_eq!(it.verdict, it.replayed_verdict());
}

#[test]
fn resync_keeps_verdicts_and_appends_new_keys() {
    let mut q = ReviewQueue::new(vec![item("potted plant", "nurse")]);
    let key = AssociationKey::new("potted plant", "nurse");
    q.set_verdict_at(&key, Verdict::Spurious, "ana", 1).unwrap();
    let mut refreshed = item("potted plant", "nurse");
    refreshed.association.support = 7;
    q.sync(vec![refreshed, item("hat", "cowboy")]);
    assert_eq!(q.items().len(), 2);
    let it = q.get(&key).unwrap();
    assert_eq!((it.verdict, it.association.support), (Verdict::Spurious, 7));
    assert_eq!(q.items()[1].verdict, Verdict::Pending);
}
