use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Records are shuffled and partitioned directly.
    #[default]
    Record,
    /// Questions are partitioned; every record follows its question.
    Question,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Disjoint train/val/test record indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Sizes by rounding the first two parts; the last part takes the rest.
fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((ratios[0] * n as f64).round() as usize).min(n);
    let val = ((ratios[1] * n as f64).round() as usize).min(n - train);
    [train, val, n - train - val]
}

pub fn make_split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split> {
    make_split_with_mode(ds, ratios, seed, SplitMode::Record)
}

pub fn make_split_with_mode(ds: &Dataset, ratios: [f64; 3], seed: u64, mode: SplitMode) -> Result<Split> {
    check_ratios(ratios)?;
    let mut rng = rng::seeded(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match mode {
        SplitMode::Record => {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut rng);
            let [a, b, _] = part_sizes(order.len(), ratios);
            train.extend_from_slice(&order[..a]);
            val.extend_from_slice(&order[a..a + b]);
            test.extend_from_slice(&order[a + b..]);
        }
        SplitMode::Question => {
            let mut order: Vec<usize> = (0..ds.questions().len()).collect();
            order.shuffle(&mut rng);
            let [a, b, _] = part_sizes(order.len(), ratios);
            let mut assign = vec![SplitPart::Test; order.len()];
            for &q in &order[..a] {
                assign[q] = SplitPart::Train;
            }
            for &q in &order[a..a + b] {
                assign[q] = SplitPart::Val;
            }
            for (i, cell) in ds.cells().iter().enumerate() {
                match assign[cell.question] {
                    SplitPart::Train => train.push(i),
                    SplitPart::Val => val.push(i),
                    SplitPart::Test => test.push(i),
                }
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        seed,
        ratios,
        mode,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ResponseRecord;
    use std::collections::HashSet;

    fn dataset(models: usize, questions: usize) -> Dataset {
        let mut recs = Vec::new();
        for m in 0..models {
            for q in 0..questions {
                recs.push(ResponseRecord::new(&format!("m{m}"), &format!("q{q}"), (m + q) % 2 == 0, "b"));
            }
        }
        Dataset::from_records(recs).unwrap()
    }

    #[test]
    fn ten_records_eighty_ten_ten() {
        let ds = dataset(1, 10);
        let s = make_split(&ds, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, make_split(&ds, [0.8, 0.1, 0.1], 7).unwrap());
    }

    #[test]
    fn bad_ratio_sum_is_config_error() {
        let ds = dataset(1, 10);
        let err = make_split(&ds, [0.5, 0.5, 0.1], 7).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn partition_covers_everything_once() {
        let ds = dataset(7, 13);
        for mode in [SplitMode::Record, SplitMode::Question] {
            let s = make_split_with_mode(&ds, [0.6, 0.25, 0.15], 3, mode).unwrap();
            let all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            let set: HashSet<usize> = all.iter().copied().collect();
            assert_eq!(all.len(), ds.len());
            assert_eq!(set.len(), ds.len());
        }
    }

    #[test]
    fn question_mode_keeps_questions_together() {
        let ds = dataset(5, 20);
        let s = make_split_with_mode(&ds, [0.8, 0.1, 0.1], 11, SplitMode::Question).unwrap();
        let qs = |idx: &[usize]| -> HashSet<usize> { idx.iter().map(|&i| ds.cells()[i].question).collect() };
        assert!(qs(&s.train).is_disjoint(&qs(&s.test)));
        assert!(qs(&s.train).is_disjoint(&qs(&s.val)));
        assert_eq!(qs(&s.test).len(), 2);
    }

    #[test]
    fn sizes_within_one_of_ratio() {
        for n in [1usize, 3, 17, 101] {
            let ds = dataset(1, n);
            let s = make_split(&ds, [0.7, 0.2, 0.1], 1).unwrap();
            for (got, r) in [s.train.len(), s.val.len(), s.test.len()].iter().zip([0.7, 0.2, 0.1]) {
                assert!((*got as f64 - r * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
