use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// One source mini-batch (domain label 0) and one target mini-batch (label 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair<T> {
    pub source: Vec<T>,
    pub target: Vec<T>,
}

/// Builds one epoch of paired mini-batches.
///
/// The larger domain is shuffled and covered exactly once in
/// `⌈max(|S|, |T|) / batch_size⌉` batches; the smaller one is resampled with
/// replacement to `pairs × batch_size` items. Equal sizes are both shuffled
/// without resampling.
pub fn make_epoch_batches<T: Clone>(
    source: &[T],
    target: &[T],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<BatchPair<T>>, DataError> {
    if source.is_empty() || target.is_empty() {
        return Err(DataError::Invalid("both domains need at least one window".into()));
    }
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let larger = source.len().max(target.len());
    let pairs = larger.div_ceil(batch_size);

    let permuted = |items: &[T], rng: &mut ChaCha8Rng| -> Vec<Vec<T>> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size)
            .map(|c| c.iter().map(|&i| items[i].clone()).collect())
            .collect()
    };
    let resampled = |items: &[T], rng: &mut ChaCha8Rng| -> Vec<Vec<T>> {
        (0..pairs)
            .map(|_| {
                (0..batch_size)
                    .map(|_| items[rng.random_range(0..items.len())].clone())
                    .collect()
            })
            .collect()
    };

    let (src_batches, tgt_batches) = if source.len() == target.len() {
        let s = permuted(source, &mut rng);
        let t = permuted(target, &mut rng);
        (s, t)
    } else if source.len() > target.len() {
        let s = permuted(source, &mut rng);
        let t = resampled(target, &mut rng);
        (s, t)
    } else {
        let t = permuted(target, &mut rng);
        let s = resampled(source, &mut rng);
        (s, t)
    };
    debug_assert_eq!(src_batches.len(), pairs);
    debug_assert_eq!(tgt_batches.len(), pairs);
    Ok(src_batches
        .into_iter()
        .zip(tgt_batches)
        .map(|(source, target)| BatchPair { source, target })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_count_is_ceiling_of_larger() {
        let s: Vec<usize> = (0..1000).collect();
        let t: Vec<usize> = (0..400).collect();
        let batches = make_epoch_batches(&s, &t, 256, 1).unwrap();
        assert_eq!(batches.len(), 4);
        assert!(batches.iter().all(|b| b.target.len() == 256));
        assert_eq!(batches.iter().map(|b| b.source.len()).sum::<usize>(), 1000);
    }

    #[test]
    fn equal_sizes_need_no_resampling() {
        let s: Vec<usize> = (0..256).collect();
        let t: Vec<usize> = (1000..1256).collect();
        let batches = make_epoch_batches(&s, &t, 256, 5).unwrap();
        assert_eq!(batches.len(), 1);
        let mut src = batches[0].source.clone();
        let mut tgt = batches[0].target.clone();
        src.sort_unstable();
        tgt.sort_unstable();
        assert_eq!(src, s);
        assert_eq!(tgt, t);
    }

    #[test]
    fn larger_domain_covered_exactly_once() {
        let s: Vec<usize> = (0..777).collect();
        let t: Vec<usize> = (0..100).collect();
        let batches = make_epoch_batches(&s, &t, 64, 9).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.source.iter().copied()).collect();
        seen.sort_unstable();
        assert_eq!(seen, s);
        // The smaller side is oversampled.
        assert_eq!(batches.iter().map(|b| b.target.len()).sum::<usize>(), 13 * 64);
        assert!(batches.iter().flat_map(|b| &b.target).all(|&i| i < 100));
    }

    #[test]
    fn smaller_source_is_resampled() {
        let s: Vec<usize> = (0..10).collect();
        let t: Vec<usize> = (0..95).collect();
        let batches = make_epoch_batches(&s, &t, 32, 2).unwrap();
        assert_eq!(batches.len(), 3);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.target.iter().copied()).collect();
        seen.sort_unstable();
        assert_eq!(seen, t);
    }

    #[test]
    fn deterministic_under_seed() {
        let s: Vec<usize> = (0..300).collect();
        let t: Vec<usize> = (0..120).collect();
        assert_eq!(
            make_epoch_batches(&s, &t, 50, 77).unwrap(),
            make_epoch_batches(&s, &t, 50, 77).unwrap()
        );
        assert_ne!(
            make_epoch_batches(&s, &t, 50, 77).unwrap(),
            make_epoch_batches(&s, &t, 50, 78).unwrap()
        );
    }

    #[test]
    fn rejects_empty_domains() {
        let s: Vec<usize> = vec![1];
        assert!(make_epoch_batches(&s, &[], 4, 0).is_err());
        assert!(make_epoch_batches(&[], &s, 4, 0).is_err());
        assert!(make_epoch_batches(&s, &s, 0, 0).is_err());
    }
}
