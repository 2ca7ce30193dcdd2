use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use scrop_core::clock::SimClock;
use scrop_core::cloud::{ChannelConfig, CloudStore, Fields, StoreOptions, TelemetryWrite, WriteOutcome};

fn sample(v: f64) -> TelemetryWrite {
    TelemetryWrite {
        fields: Fields::from_slice(&[Some(v), Some(-v)]),
        ..Default::default()
    }
}

proptest! {
    /// Random write attempts: accepted spacing, and the feed returns every
    /// accepted write once, in order.
    #[test]
    fn feed_matches_accepted_writes(gaps in prop::collection::vec(0u64..40_000, 1..120)) {
        let clock = SimClock::new();
        let store = CloudStore::open(Arc::new(clock.clone()), StoreOptions::live(None)).unwrap();
        store.create_channel(ChannelConfig::new("c", "k")).unwrap();
        let mut accepted = Vec::new();
        for (i, gap) in gaps.iter().enumerate() {
            clock.advance_millis(*gap);
            let v = i as f64;
            if let WriteOutcome::Accepted { entry_id } = store.channel_write("c", "k", &sample(v)).unwrap() {
                accepted.push((entry_id, clock_now(&store), v));
            }
        }
        for w in accepted.windows(2) {
            prop_assert!(w[1].1 - w[0].1 >= 15_000);
        }
        let feed = store.channel_feed("c", accepted.len() + 5).unwrap();
        let got: Vec<(u64, u64, f64)> = feed
            .iter()
            .map(|r| (r.entry_id, r.server_timestamp.as_millis(), r.fields.get(1).unwrap()))
            .collect();
        prop_assert_eq!(got, accepted.clone());
        let stats = store.channel_stats("c").unwrap();
        prop_assert_eq!(stats.accepted as usize, accepted.len());
        prop_assert_eq!((stats.accepted + stats.rate_limited) as usize, gaps.len());
        if let Some(last) = accepted.last() {
            let newest = store.channel_feed("c", 1).unwrap();
            prop_assert_eq!(newest.len(), 1);
            prop_assert_eq!(newest[0].entry_id, last.0);
        }
    }
}

fn clock_now(store: &CloudStore) -> u64 {
    store.now().as_millis()
}

#[test]
fn simulated_latency_hides_fresh_records() {
    let clock = SimClock::new();
    let store = CloudStore::open(Arc::new(clock.clone()), StoreOptions::simulated()).unwrap();
    store.create_channel(ChannelConfig::new("c", "k")).unwrap();
    store.channel_write("c", "k", &sample(1.0)).unwrap();
    clock.advance_millis(14_999);
    assert!(store.channel_feed("c", 10).unwrap().is_empty());
    clock.advance_millis(1);
    assert_eq!(store.channel_feed("c", 10).unwrap().len(), 1);
}

#[test]
fn crop_selection_is_read_after_write_under_concurrent_readers() {
    let store = Arc::new(CloudStore::in_memory(Arc::new(SimClock::new())));
    let catalogue = store.catalogue();
    let valid: Vec<(f64, f64)> = catalogue.iter().map(|c| (c.threshold_sm, c.release_sm)).collect();
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let store = store.clone();
            let valid = valid.clone();
            thread::spawn(move || {
                for _ in 0..2000 {
                    let t = store.get_threshold();
                    assert!(valid.contains(&(t.threshold_sm, t.release_sm)), "torn read {t:?}");
                }
            })
        })
        .collect();
    for _ in 0..50 {
        for crop in &catalogue {
            let selected = store.select_crop(&crop.crop_name).unwrap();
            let t = store.get_threshold();
            assert_eq!(
                (t.threshold_sm, t.release_sm),
                (selected.threshold_sm, selected.release_sm)
            );
        }
    }
    for r in readers {
        r.join().unwrap();
    }
}

#[test]
fn concurrent_writers_on_one_channel_respect_rate_limit() {
    let clock = SimClock::new();
    let store = Arc::new(CloudStore::open(Arc::new(clock.clone()), StoreOptions::live(None)).unwrap());
    store.create_channel(ChannelConfig::new("c", "k")).unwrap();
    for round in 0..20 {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let store = store.clone();
                thread::spawn(move || store.channel_write("c", "k", &sample((round * 8 + i) as f64)).unwrap())
            })
            .collect();
        let accepted = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|o| matches!(o, WriteOutcome::Accepted { .. }))
            .count();
        assert_eq!(accepted, 1, "round {round}");
        clock.advance_millis(15_000);
    }
    assert_eq!(store.channel_feed("c", 100).unwrap().len(), 20);
}

#[test]
fn persisted_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let clock = SimClock::new();
    {
        let store = CloudStore::open(
            Arc::new(clock.clone()),
            StoreOptions::live(Some(dir.path().to_path_buf())),
        )
        .unwrap();
        store.create_channel(ChannelConfig::new("c", "k")).unwrap();
        store.channel_write("c", "k", &sample(1.0)).unwrap();
        clock.advance_millis(20_000);
        store.channel_write("c", "k", &sample(2.0)).unwrap();
        store.select_crop("rice").unwrap();
    }
    let store = CloudStore::open(
        Arc::new(clock.clone()),
        StoreOptions::live(Some(dir.path().to_path_buf())),
    )
    .unwrap();
    assert_eq!(store.channel_feed("c", 10).unwrap().len(), 2);
    assert_eq!(store.active_crop().crop_name, "rice");
    assert_eq!(
        store.channel_write("c", "k", &sample(3.0)).unwrap(),
        WriteOutcome::RateLimited,
        "rate limit window carries over a restart"
    );
}
