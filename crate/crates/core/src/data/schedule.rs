//! Cross-modality training order. One epoch visits every sequence of
//! every modality exactly once; the interleaving mode controls how
//! modalities mix within the epoch.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Alternate across modalities item by item until all are exhausted.
    #[default]
    RoundRobin,
    /// Emit each modality's full (shuffled) list as one contiguous run.
    Blocked,
}

/// One epoch's visiting order over per-modality item lists. Items are
/// shuffled within each modality by the seed, then interleaved. The same
/// seed always yields the same stream.
pub fn modality_schedule<T: Clone>(
    per_modality: &[(String, Vec<T>)],
    seed: u64,
    mode: ScheduleMode,
) -> Result<Vec<T>> {
    if per_modality.is_empty() || per_modality.iter().all(|(_, v)| v.is_empty()) {
        return Err(Error::Empty("modality schedule input".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled: Vec<Vec<T>> = per_modality
        .iter()
        .map(|(_, items)| {
            let mut v = items.clone();
            v.shuffle(&mut rng);
            v
        })
        .collect();

    let total: usize = shuffled.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    match mode {
        ScheduleMode::RoundRobin => {
            let mut cursors = vec![0usize; shuffled.len()];
            while out.len() < total {
                for (m, items) in shuffled.iter().enumerate() {
                    if cursors[m] < items.len() {
                        out.push(items[cursors[m]].clone());
                        cursors[m] += 1;
                    }
                }
            }
        }
        ScheduleMode::Blocked => {
            for items in shuffled.iter_mut() {
                out.append(items);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists() -> Vec<(String, Vec<&'static str>)> {
        vec![
            ("A".into(), vec!["a1", "a2", "a3"]),
            ("B".into(), vec!["b1", "b2"]),
            ("C".into(), vec!["c1"]),
        ]
    }

    #[test]
    fn round_robin_interleaves_until_exhausted() {
        let stream = modality_schedule(&lists(), 0, ScheduleMode::RoundRobin).unwrap();
        assert_eq!(stream.len(), 6);
        // Prefix pattern A,B,C,A,B,A regardless of shuffle within modality.
        let kinds: Vec<char> = stream.iter().map(|s| s.chars().next().unwrap()).collect();
        assert_eq!(kinds, vec!['a', 'b', 'c', 'a', 'b', 'a']);
    }

    #[test]
    fn every_item_appears_exactly_once() {
        for mode in [ScheduleMode::RoundRobin, ScheduleMode::Blocked] {
            let mut stream = modality_schedule(&lists(), 42, mode).unwrap();
            stream.sort();
            assert_eq!(stream, vec!["a1", "a2", "a3", "b1", "b2", "c1"]);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let a = modality_schedule(&lists(), 7, ScheduleMode::RoundRobin).unwrap();
        let b = modality_schedule(&lists(), 7, ScheduleMode::RoundRobin).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_modality_is_a_shuffle() {
        let one = vec![("A".to_string(), vec![1, 2, 3, 4, 5])];
        let mut stream = modality_schedule(&one, 3, ScheduleMode::RoundRobin).unwrap();
        stream.sort();
        assert_eq!(stream, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn blocked_emits_contiguous_runs() {
        let stream = modality_schedule(&lists(), 0, ScheduleMode::Blocked).unwrap();
        let kinds: Vec<char> = stream.iter().map(|s| s.chars().next().unwrap()).collect();
        assert_eq!(kinds, vec!['a', 'a', 'a', 'b', 'b', 'c']);
    }

    #[test]
    fn empty_input_is_an_error() {
        let empty: Vec<(String, Vec<u32>)> = vec![];
        assert!(modality_schedule(&empty, 0, ScheduleMode::RoundRobin).is_err());
        let all_empty = vec![("A".to_string(), Vec::<u32>::new())];
        assert!(modality_schedule(&all_empty, 0, ScheduleMode::RoundRobin).is_err());
    }
}
