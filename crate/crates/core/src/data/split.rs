use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::InteractionLog;
use super::vocab::{FieldVocab, Vocabulary, PAD_ID};
use crate::error::{MissError, Result};

/// One CTR instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// One id per categorical field (user id first).
    pub categorical: Vec<usize>,
    /// One front-padded id sequence of length L per behavior field.
    pub sequences: Vec<Vec<usize>>,
    /// Number of real (non-padding) behaviors at the tail of each sequence.
    pub seq_len: usize,
    /// Candidate ids, aligned field-to-field with `sequences`.
    pub candidate: Vec<usize>,
    pub label: u8,
}

impl Sample {
    pub fn max_len(&self) -> usize {
        self.sequences.first().map_or(0, Vec::len)
    }

    /// Real behaviors of field `j`, oldest first.
    pub fn history(&self, j: usize) -> &[usize] {
        unpad(&self.sequences[j], self.seq_len)
    }
}

/// Keeps the most recent `len` ids and left-pads with zeros up to `len`.
pub fn pad_front(ids: &[usize], len: usize) -> Vec<usize> {
    let tail = &ids[ids.len().saturating_sub(len)..];
    let mut out = vec![PAD_ID; len - tail.len()];
    out.extend_from_slice(tail);
    out
}

pub fn unpad(seq: &[usize], seq_len: usize) -> &[usize] {
    &seq[seq.len() - seq_len..]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    /// I
    pub num_categorical: usize,
    /// J
    pub num_fields: usize,
    /// L
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub users: usize,
    pub excluded_users: usize,
}

/// Minimum behaviors per user for the leave-last-three protocol.
pub const MIN_BEHAVIORS: usize = 4;

struct RawSample {
    user: String,
    history: Vec<Vec<String>>,
    candidate: Vec<String>,
    label: u8,
}

/// Builds train/valid/test samples: for a user with behaviors `b_1..b_n`,
/// train predicts `b_{n-2}` from `b_1..b_{n-3}`, valid predicts `b_{n-1}` from
/// `b_1..b_{n-2}` and test predicts `b_n` from `b_1..b_{n-1}`. Every positive
/// is paired with one negative whose candidate is a uniformly drawn item the
/// user never interacted with.
pub fn build_splits(
    log: &InteractionLog,
    max_len: usize,
    seed: u64,
) -> Result<(DatasetSplit, Vocabulary, SplitStats)> {
    if max_len == 0 {
        return Err(MissError::Config("max_len must be >= 1".into()));
    }
    // item universe in order of first appearance, with its attributes
    let mut universe: Vec<Vec<String>> = Vec::new();
    let mut seen = HashSet::new();
    for r in log.records() {
        if seen.insert(r.item.as_str()) {
            let mut fields = vec![r.item.clone()];
            fields.extend(r.attrs.iter().cloned());
            universe.push(fields);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SplitStats::default();
    let mut raw: [Vec<RawSample>; 3] = Default::default();
    for records in log.users() {
        let n = records.len();
        if n < MIN_BEHAVIORS {
            stats.excluded_users += 1;
            continue;
        }
        stats.users += 1;
        let interacted: HashSet<&str> = records.iter().map(|r| r.item.as_str()).collect();
        if interacted.len() >= universe.len() {
            return Err(MissError::DegenerateDataset(format!(
                "user '{}' interacted with every item; no negative available",
                records[0].user
            )));
        }
        let behaviors: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                let mut f = vec![r.item.clone()];
                f.extend(r.attrs.iter().cloned());
                f
            })
            .collect();
        for (slot, target) in (n - 3..n).enumerate() {
            let history = behaviors[..target].to_vec();
            let negative = loop {
                let cand = &universe[rng.gen_range(0..universe.len())];
                if !interacted.contains(cand[0].as_str()) {
                    break cand.clone();
                }
            };
            let user = records[0].user.clone();
            raw[slot].push(RawSample {
                user: user.clone(),
                history: history.clone(),
                candidate: behaviors[target].clone(),
                label: 1,
            });
            raw[slot].push(RawSample {
                user,
                history,
                candidate: negative,
                label: 0,
            });
        }
    }
    if stats.excluded_users > 0 {
        log::warn!(
            "excluded {} users with fewer than {MIN_BEHAVIORS} behaviors",
            stats.excluded_users
        );
    }
    if stats.users == 0 {
        return Err(MissError::DegenerateDataset(format!(
            "no user has at least {MIN_BEHAVIORS} behaviors"
        )));
    }

    let num_fields = 1 + log.attr_names.len();
    let mut vocab = Vocabulary {
        categorical: vec![FieldVocab::new("user")],
        sequence: std::iter::once("item".to_string())
            .chain(log.attr_names.iter().cloned())
            .map(FieldVocab::new)
            .collect(),
    };
    for part in &raw {
        for s in part {
            vocab.categorical[0].insert(&s.user);
            for b in &s.history {
                for (j, tok) in b.iter().enumerate() {
                    vocab.sequence[j].insert(tok);
                }
            }
            for (j, tok) in s.candidate.iter().enumerate() {
                vocab.sequence[j].insert(tok);
            }
        }
    }

    let encode = |s: &RawSample| -> Sample {
        let tail = &s.history[s.history.len().saturating_sub(max_len)..];
        let sequences = (0..num_fields)
            .map(|j| {
                let ids: Vec<usize> = tail.iter().map(|b| vocab.sequence[j].encode(&b[j])).collect();
                pad_front(&ids, max_len)
            })
            .collect();
        Sample {
            categorical: vec![vocab.categorical[0].encode(&s.user)],
            sequences,
            seq_len: tail.len(),
            candidate: s
                .candidate
                .iter()
                .enumerate()
                .map(|(j, tok)| vocab.sequence[j].encode(tok))
                .collect(),
            label: s.label,
        }
    };
    let [train, valid, test] = raw.map(|part| part.iter().map(encode).collect::<Vec<_>>());
    let split = DatasetSplit {
        train,
        valid,
        test,
        num_categorical: 1,
        num_fields,
        max_len,
    };
    Ok((split, vocab, stats))
}

fn check_rate(name: &str, rate: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..=1.0).contains(&rate)
    } else {
        rate > 0.0 && rate <= 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(MissError::Config(format!("{name} rate {rate} out of range")))
    }
}

/// Keeps `⌊rate·|train|⌋` uniformly chosen training samples in their
/// original order. Validation and test are untouched.
pub fn downsample_train(split: &DatasetSplit, rate: f64, seed: u64) -> Result<DatasetSplit> {
    check_rate("sampling", rate, false)?;
    let n = split.train.len();
    let k = (rate * n as f64).floor() as usize;
    let mut out = split.clone();
    if k == n {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, n, k).into_vec();
    keep.sort_unstable();
    out.train = keep.into_iter().map(|i| split.train[i].clone()).collect();
    Ok(out)
}

/// Inverts the labels of `⌊rate·|train|⌋` uniformly chosen training samples.
pub fn flip_labels(split: &DatasetSplit, rate: f64, seed: u64) -> Result<DatasetSplit> {
    check_rate("flip", rate, true)?;
    let n = split.train.len();
    let k = (rate * n as f64).floor() as usize;
    let mut out = split.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in index::sample(&mut rng, n, k) {
        out.train[i].label = 1 - out.train[i].label;
    }
    Ok(out)
}

const SNAPSHOT_MAGIC: &str = "MISS-SPLITS 1";

/// Line-oriented integer snapshot of a split.
///
/// ```text
/// MISS-SPLITS 1
/// I <I> J <J> L <L>
/// VOCAB <I categorical sizes> <J sequence sizes>
/// TRAIN <count>
/// <label> <seq_len> <I ids> <J×L sequence ids> <J candidate ids>
/// ...
/// VALID <count>
/// ...
/// TEST <count>
/// ...
/// ```
pub fn write_snapshot(split: &DatasetSplit, vocab_sizes: &[usize]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SNAPSHOT_MAGIC}");
    let _ = writeln!(
        out,
        "I {} J {} L {}",
        split.num_categorical, split.num_fields, split.max_len
    );
    let sizes: Vec<String> = vocab_sizes.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "VOCAB {}", sizes.join(" "));
    for (name, part) in [("TRAIN", &split.train), ("VALID", &split.valid), ("TEST", &split.test)] {
        let _ = writeln!(out, "{name} {}", part.len());
        for s in part {
            let mut cols = vec![s.label.to_string(), s.seq_len.to_string()];
            cols.extend(s.categorical.iter().map(usize::to_string));
            for seq in &s.sequences {
                cols.extend(seq.iter().map(usize::to_string));
            }
            cols.extend(s.candidate.iter().map(usize::to_string));
            let _ = writeln!(out, "{}", cols.join(" "));
        }
    }
    out
}

pub fn read_snapshot(text: &str) -> Result<(DatasetSplit, Vec<usize>)> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| MissError::Format {
            line: 0,
            message: format!("unexpected end of snapshot, expected {what}"),
        })
    };
    let bad = |line: usize, message: String| MissError::Format { line: line + 1, message };
    let nums = |line: usize, s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(line, format!("not an integer: '{t}'"))))
            .collect()
    };

    let (ln, magic) = next("header")?;
    if magic.trim() != SNAPSHOT_MAGIC {
        return Err(bad(ln, "missing MISS-SPLITS header".into()));
    }
    let (ln, dims) = next("dimensions")?;
    let d: Vec<&str> = dims.split_whitespace().collect();
    if d.len() != 6 || d[0] != "I" || d[2] != "J" || d[4] != "L" {
        return Err(bad(ln, "expected 'I <n> J <n> L <n>'".into()));
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("bad dimension '{s}'")));
    let (i_n, j_n, l_n) = (parse_dim(d[1])?, parse_dim(d[3])?, parse_dim(d[5])?);
    let (ln, vocab_line) = next("vocab sizes")?;
    let vocab_sizes = nums(
        ln,
        vocab_line
            .strip_prefix("VOCAB")
            .ok_or_else(|| bad(ln, "expected VOCAB line".into()))?,
    )?;

    let width = 2 + i_n + j_n * l_n + j_n;
    let mut parts: Vec<Vec<Sample>> = Vec::new();
    for name in ["TRAIN", "VALID", "TEST"] {
        let (ln, head) = next(name)?;
        let count: usize = head
            .strip_prefix(name)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("expected '{name} <count>'")))?;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, row) = next("sample")?;
            let v = nums(ln, row)?;
            if v.len() != width {
                return Err(bad(ln, format!("expected {width} integers, got {}", v.len())));
            }
            let label = u8::try_from(v[0]).ok().filter(|l| *l <= 1).ok_or_else(|| bad(ln, "label must be 0 or 1".into()))?;
            let mut at = 2 + i_n;
            let sequences = (0..j_n)
                .map(|_| {
                    let s = v[at..at + l_n].to_vec();
                    at += l_n;
                    s
                })
                .collect();
            samples.push(Sample {
                categorical: v[2..2 + i_n].to_vec(),
                sequences,
                seq_len: v[1],
                candidate: v[at..at + j_n].to_vec(),
                label,
            });
        }
        parts.push(samples);
    }
    let test = parts.pop().unwrap_or_default();
    let valid = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok((
        DatasetSplit {
            train,
            valid,
            test,
            num_categorical: i_n,
            num_fields: j_n,
            max_len: l_n,
        },
        vocab_sizes,
    ))
}

pub fn save_snapshot(path: &Path, split: &DatasetSplit, vocab: &Vocabulary) -> Result<()> {
    let mut sizes = vocab.categorical_sizes();
    sizes.extend(vocab.sequence_sizes());
    std::fs::write(path, write_snapshot(split, &sizes)).map_err(|e| MissError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::log::Record;
    use proptest::prelude::*;

    fn log_of(users: &[(&str, &[&str])]) -> InteractionLog {
        let mut recs = Vec::new();
        for (u, items) in users {
            for (t, it) in items.iter().enumerate() {
                recs.push(Record {
                    user: u.to_string(),
                    item: it.to_string(),
                    attrs: vec![format!("c{}", &it[1..2])],
                    timestamp: t as i64,
                });
            }
        }
        InteractionLog::new(vec!["cat".into()], recs).unwrap()
    }

    fn toy() -> InteractionLog {
        log_of(&[
            ("u1", &["a1", "b2", "c1", "d2"]),
            ("u2", &["e1", "f2", "g1", "h2", "a1", "b2"]),
            ("u3", &["a1", "c1", "e1"]),
        ])
    }

    #[test]
    fn four_behavior_user_follows_protocol() {
        let (split, vocab, stats) = build_splits(&toy(), 30, 3).unwrap();
        assert_eq!(stats, SplitStats { users: 2, excluded_users: 1 });
        let item = |s: &Sample| vocab.sequence[0].decode(s.candidate[0]).unwrap().to_string();
        let hist = |s: &Sample| -> Vec<String> {
            s.history(0).iter().map(|&i| vocab.sequence[0].decode(i).unwrap().to_string()).collect()
        };
        // u1 is the first user: samples 0 (pos) and 1 (neg) of each part
        assert_eq!(split.train[0].seq_len, 1);
        assert_eq!(hist(&split.train[0]), ["a1"]);
        assert_eq!(item(&split.train[0]), "b2");
        assert_eq!(split.valid[0].seq_len, 2);
        assert_eq!(item(&split.valid[0]), "c1");
        assert_eq!(split.test[0].seq_len, 3);
        assert_eq!(item(&split.test[0]), "d2");
        assert_eq!(hist(&split.test[0]), ["a1", "b2", "c1"]);
    }

    #[test]
    fn negatives_pair_with_positives_and_are_never_interacted() {
        let log = toy();
        let (split, vocab, _) = build_splits(&log, 30, 11).unwrap();
        for part in [&split.train, &split.valid, &split.test] {
            for pair in part.chunks(2) {
                let (pos, neg) = (&pair[0], &pair[1]);
                assert_eq!((pos.label, neg.label), (1, 0));
                assert_eq!(pos.sequences, neg.sequences);
                assert_eq!(pos.categorical, neg.categorical);
                assert_ne!(pos.candidate, neg.candidate);
                let user = vocab.categorical[0].decode(neg.categorical[0]).unwrap();
                let neg_item = vocab.sequence[0].decode(neg.candidate[0]).unwrap();
                assert!(log.records().iter().filter(|r| r.user == user).all(|r| r.item != neg_item));
            }
        }
    }

    #[test]
    fn same_seed_same_snapshot() {
        let (a, va, _) = build_splits(&toy(), 5, 9).unwrap();
        let (b, vb, _) = build_splits(&toy(), 5, 9).unwrap();
        let mut sa = va.categorical_sizes();
        sa.extend(va.sequence_sizes());
        let mut sb = vb.categorical_sizes();
        sb.extend(vb.sequence_sizes());
        assert_eq!(write_snapshot(&a, &sa), write_snapshot(&b, &sb));
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let (split, vocab, _) = build_splits(&toy(), 2, 1).unwrap();
        let u2_test = &split.test[2];
        assert_eq!(u2_test.seq_len, 2);
        let hist: Vec<&str> = u2_test.history(0).iter().map(|&i| vocab.sequence[0].decode(i).unwrap()).collect();
        assert_eq!(hist, ["h2", "a1"]);
    }

    #[test]
    fn snapshot_round_trip() {
        let (split, vocab, _) = build_splits(&toy(), 4, 2).unwrap();
        let mut sizes = vocab.categorical_sizes();
        sizes.extend(vocab.sequence_sizes());
        let (back, back_sizes) = read_snapshot(&write_snapshot(&split, &sizes)).unwrap();
        assert_eq!(back, split);
        assert_eq!(back_sizes, sizes);
        assert!(read_snapshot("garbage").is_err());
    }

    #[test]
    fn downsample_and_flip() {
        let (split, _, _) = build_splits(&toy(), 4, 2).unwrap();
        assert_eq!(downsample_train(&split, 1.0, 5).unwrap(), split);
        assert_eq!(flip_labels(&split, 0.0, 5).unwrap(), split);
        let half = downsample_train(&split, 0.5, 5).unwrap();
        assert_eq!(half.train.len(), split.train.len() / 2);
        assert_eq!(half.valid, split.valid);
        assert!(downsample_train(&split, 0.0, 5).is_err());
        assert!(flip_labels(&split, 1.5, 5).is_err());
    }

    #[test]
    fn flip_changes_exactly_floor_rate_n_labels() {
        let mut split = build_splits(&toy(), 4, 2).unwrap().0;
        let proto = split.train[0].clone();
        split.train = (0..100)
            .map(|i| Sample {
                label: (i % 2) as u8,
                ..proto.clone()
            })
            .collect();
        let flipped = flip_labels(&split, 0.2, 8).unwrap();
        let diff = split
            .train
            .iter()
            .zip(&flipped.train)
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert_eq!(diff, 20);
        assert_eq!(flipped.test, split.test);
    }

    proptest! {
        #[test]
        fn padding_round_trips(ids in proptest::collection::vec(2usize..50, 0..12), len in 1usize..15) {
            let padded = pad_front(&ids, len);
            prop_assert_eq!(padded.len(), len);
            let real = ids.len().min(len);
            prop_assert!(padded[..len - real].iter().all(|&x| x == PAD_ID));
            prop_assert!(padded[len - real..].iter().all(|&x| x != PAD_ID));
            prop_assert_eq!(pad_front(unpad(&padded, real), len), padded);
        }
    }
}
