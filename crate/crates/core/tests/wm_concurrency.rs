use std::sync::{Arc, Barrier, Mutex};
use std::thread;

use atm_core::wm::{attrs, AttrValue, Edit, Filter, Graph, Node, NodeKind, Notification, Snapshot, WorkingMemory};

fn intention(id: u64, n: i64) -> Node {
    Node::new(
        id,
        NodeKind::Intention,
        attrs([("action", AttrValue::Text("move_to".into())), ("gaze_index", AttrValue::Int(n))]),
    )
}

#[test]
fn concurrent_writers_are_linearizable() {
    const WRITERS: usize = 8;
    const EACH: usize = 40;
    let wm = Arc::new(WorkingMemory::new());
    let start = Arc::new(Barrier::new(WRITERS + 1));
    let seen: Arc<Mutex<Vec<Snapshot>>> = Arc::default();

    let writers: Vec<_> = (0..WRITERS)
        .map(|w| {
            let wm = Arc::clone(&wm);
            let start = Arc::clone(&start);
            thread::spawn(move || {
                start.wait();
                let mut mine = Vec::new();
                for k in 0..EACH {
                    let id = wm.fresh_id();
                    let v = wm.transact(vec![Edit::AddNode(intention(id, (w * EACH + k) as i64))]).unwrap();
                    mine.push(v);
                    if k % 3 == 0 {
                        let update = attrs([("gaze_index", AttrValue::Int(-1))]);
                        wm.transact(vec![Edit::UpdateNode { id, attrs: update }]).unwrap();
                    }
                }
                mine
            })
        })
        .collect();
    let reader = {
        let wm = Arc::clone(&wm);
        let seen = Arc::clone(&seen);
        thread::spawn(move || {
            for _ in 0..200 {
                seen.lock().unwrap().push(wm.snapshot());
                thread::yield_now();
            }
        })
    };
    start.wait();
    let mut versions: Vec<u64> = writers.into_iter().flat_map(|h| h.join().unwrap()).collect();
    reader.join().unwrap();

    // Every commit got its own version.
    versions.sort_unstable();
    versions.dedup();
    assert_eq!(versions.len(), WRITERS * EACH);

    let log = wm.log();
    let per_writer_updates = EACH.div_ceil(3);
    assert_eq!(log.len(), WRITERS * (EACH + per_writer_updates));
    for pair in log.windows(2) {
        assert_eq!(pair[1].version, pair[0].version + 1);
        assert!(pair[1].committed_at > pair[0].committed_at);
    }

    // The final state is the serial replay of the log, and every snapshot a
    // reader took equals the replay of the log up to its version.
    let last = wm.snapshot();
    assert_eq!(Graph::replay(&log).unwrap(), *last.graph());
    for snap in seen.lock().unwrap().iter() {
        let prefix = log.iter().filter(|e| e.version <= snap.version);
        assert_eq!(Graph::replay(prefix).unwrap(), *snap.graph(), "snapshot at {}", snap.version);
    }
}

#[test]
fn failed_transactions_change_nothing() {
    let wm = WorkingMemory::new();
    let a = wm.fresh_id();
    wm.transact(vec![Edit::AddNode(intention(a, 0))]).unwrap();
    let before = wm.snapshot();
    let b = wm.fresh_id();
    // The second edit breaks the schema, so the first must not land either.
    let bad = Node::new(wm.fresh_id(), NodeKind::Intention, attrs([("gaze", AttrValue::Real(0.1))]));
    assert!(wm.transact(vec![Edit::AddNode(intention(b, 1)), Edit::AddNode(bad)]).is_err());
    let after = wm.snapshot();
    assert_eq!(after.version, before.version);
    assert!(after.same_content(&before));
    assert!(after.graph().node(b).is_none());
}

#[test]
fn subscribers_see_commits_in_version_order() {
    let wm = Arc::new(WorkingMemory::new());
    let sub = wm.subscribe(Filter::kinds([NodeKind::Intention]));
    let writers: Vec<_> = (0..4)
        .map(|_| {
            let wm = Arc::clone(&wm);
            thread::spawn(move || {
                for k in 0..25 {
                    let id = wm.fresh_id();
                    wm.transact(vec![Edit::AddNode(intention(id, k))]).unwrap();
                }
            })
        })
        .collect();
    for w in writers {
        w.join().unwrap();
    }
    let versions: Vec<u64> = sub
        .drain()
        .into_iter()
        .map(|n| match n {
            Notification::Delta(d) => d.version,
            Notification::Overflow { .. } => panic!("unexpected overflow"),
        })
        .collect();
    assert_eq!(versions.len(), 100);
    assert!(versions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn snapshots_do_not_move() {
    let wm = WorkingMemory::new();
    let id = wm.fresh_id();
    wm.transact(vec![Edit::AddNode(intention(id, 0))]).unwrap();
    let old = wm.snapshot();
    wm.transact(vec![Edit::RemoveNode { id, cascade: true }]).unwrap();
    assert!(old.graph().node(id).is_some());
    assert!(wm.snapshot().graph().node(id).is_none());
}
