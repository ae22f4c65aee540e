use std::collections::{BTreeSet, HashMap};

use miss_core::data::{build_splits, filter_infrequent, synth_generate, InteractionLog, Record, SynthSpec};

fn rec(u: &str, i: &str, t: i64) -> Record {
    Record {
        user: u.into(),
        item: i.into(),
        attrs: vec!["c".into()],
        timestamp: t,
    }
}

/// Union of all record subsets in which every present user and item occurs
/// at least `k` times.
fn brute_force_fixpoint(records: &[Record], k: usize) -> BTreeSet<usize> {
    let mut union = BTreeSet::new();
    for mask in 0u32..(1 << records.len()) {
        let chosen: Vec<usize> = (0..records.len()).filter(|i| mask >> i & 1 == 1).collect();
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for &i in &chosen {
            *users.entry(&records[i].user).or_default() += 1;
            *items.entry(&records[i].item).or_default() += 1;
        }
        if users.values().chain(items.values()).all(|&c| c >= k) {
            union.extend(chosen);
        }
    }
    union
}

#[test]
fn filtering_reaches_the_brute_force_fixpoint() {
    // removing item d drops user w below threshold, which then drops item b
    let records = vec![
        rec("u", "a", 0),
        rec("u", "b", 1),
        rec("v", "a", 0),
        rec("v", "b", 1),
        rec("v", "c", 2),
        rec("u", "c", 2),
        rec("w", "b", 0),
        rec("w", "d", 1),
        rec("x", "c", 0),
        rec("x", "a", 1),
    ];
    let log = InteractionLog::new(vec!["c".into()], records.clone()).unwrap();
    let got = filter_infrequent(&log, 2).unwrap();
    let keep = brute_force_fixpoint(&records, 2);
    let want: Vec<(String, String)> = keep.iter().map(|&i| (records[i].user.clone(), records[i].item.clone())).collect();
    let mut got_pairs: Vec<(String, String)> = got.records().iter().map(|r| (r.user.clone(), r.item.clone())).collect();
    let mut want_sorted = want.clone();
    got_pairs.sort();
    want_sorted.sort();
    assert_eq!(got_pairs, want_sorted);
    assert!(got.records().iter().all(|r| r.user != "w"));
}

#[test]
fn users_draw_from_at_most_three_clusters() {
    let spec = SynthSpec {
        users: 2000,
        items: 500,
        interests: 5,
        min_len: 8,
        max_len: 24,
    };
    let log = synth_generate(spec, 7).unwrap();
    assert_eq!(log.num_users(), 2000);
    let mut seen = BTreeSet::new();
    for user in log.users() {
        let clusters: BTreeSet<&str> = user.iter().map(|r| r.attrs[0].as_str()).collect();
        assert!((1..=3).contains(&clusters.len()), "{} uses {}", user[0].user, clusters.len());
        seen.extend(clusters);
    }
    assert_eq!(seen.len(), 5);
}

#[test]
fn single_interest_users_stay_in_one_cluster() {
    let spec = SynthSpec {
        users: 50,
        items: 40,
        interests: 1,
        min_len: 4,
        max_len: 10,
    };
    let log = synth_generate(spec, 3).unwrap();
    assert!(log.records().iter().all(|r| r.attrs[0] == log.records()[0].attrs[0]));
}

#[test]
fn split_targets_follow_the_history() {
    let spec = SynthSpec {
        users: 300,
        items: 120,
        interests: 5,
        min_len: 8,
        max_len: 24,
    };
    let log = filter_infrequent(&synth_generate(spec, 7).unwrap(), 5).unwrap();
    let (split, vocab, stats) = build_splits(&log, 30, 7).unwrap();
    let users = stats.users - stats.excluded_users;
    assert_eq!(split.valid.len(), 2 * users);
    assert_eq!(split.test.len(), 2 * users);
    for part in [&split.train, &split.valid, &split.test] {
        assert_eq!(part.iter().filter(|s| s.label == 1).count() * 2, part.len());
        for s in part {
            assert!(s.seq_len >= 1 && s.seq_len <= 30);
            assert!(s.candidate.iter().all(|&id| id >= 2));
        }
    }
    assert!(vocab.sequence_sizes().iter().all(|&n| n > 2));
}
