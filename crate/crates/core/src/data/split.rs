use rand::seq::SliceRandom;

use super::fam::Fam;
use crate::error::{Error, Result};
use crate::rng;

/// Stratified train/test split; `ratio` is the fraction sent to test.
///
/// Per-class test counts use largest-remainder allocation so the total is
/// `round(ratio * eligible_rows)`, with at least one row of every class on
/// each side. Classes with fewer than two rows go entirely to train. Both
/// outputs keep the input's row order.
pub fn split(fam: &Fam, ratio: f64, seed: u64) -> Result<(Fam, Fam)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "partition ratio must be in (0, 1), got {ratio}"
        )));
    }
    let labels = fam.require_labels("split")?;
    let k = fam.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let eligible: Vec<usize> = (0..k).filter(|&c| by_class[c].len() >= 2).collect();
    for c in (0..k).filter(|&c| by_class[c].len() == 1) {
        log::warn!(
            "class {:?} has a single row; placing it in train",
            fam.class_names()[c]
        );
    }
    let total: usize = eligible.iter().map(|&c| by_class[c].len()).sum();
    let target = (ratio * total as f64).round() as usize;

    let mut take = vec![0usize; k];
    let mut remainders = Vec::new();
    for &c in &eligible {
        let n = by_class[c].len();
        let quota = ratio * n as f64;
        take[c] = (quota.floor() as usize).clamp(1, n - 1);
        remainders.push((quota - quota.floor(), c));
    }
    // Largest remainder first, ties broken by class index.
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = remainders.iter().map(|&(_, c)| c).collect();
    let mut assigned: usize = take.iter().sum();
    while assigned < target {
        let before = assigned;
        for &c in &order {
            if assigned < target && take[c] < by_class[c].len() - 1 {
                take[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    while assigned > target {
        let before = assigned;
        for &c in order.iter().rev() {
            if assigned > target && take[c] > 1 {
                take[c] -= 1;
                assigned -= 1;
            }
        }
        if assigned == before {
            break;
        }
    }

    let mut test = Vec::with_capacity(assigned);
    let mut train = Vec::with_capacity(fam.len() - assigned);
    for c in 0..k {
        let mut rows = by_class[c].clone();
        rows.shuffle(&mut rng::stream(seed, "split", c as u64));
        test.extend_from_slice(&rows[..take[c]]);
        train.extend_from_slice(&rows[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((fam.select(&train), fam.select(&test)))
}
