use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::Dataset;
use crate::numerics::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid(format!("split fractions must be >= 0: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` across classes in proportion to
/// their sizes; ties go to the lower class index.
fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if alloc[c] < sizes[c] {
            alloc[c] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Label-stratified seeded split. Part sizes are `floor(n * fraction)` for
/// validation and test with the remainder going to training; within each part
/// records keep their original order.
pub fn split(ds: &Dataset, spec: &SplitSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let n = ds.len();
    let n_val = (n as f64 * spec.val).floor() as usize;
    let n_test = (n as f64 * spec.test).floor() as usize;

    let by_class: Vec<Vec<usize>> = (0..2u8)
        .map(|c| (0..n).filter(|&i| ds.records[i].label == c).collect())
        .collect();
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    // allocating val and val+test cumulatively keeps both parts balanced
    let val_alloc = apportion(n_val, &sizes);
    let held_alloc = apportion(n_val + n_test, &sizes);

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, members) in by_class.iter().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut rng::stream(seed, &format!("split/class{c}")));
        let nv = val_alloc[c];
        let nt = held_alloc[c].saturating_sub(nv);
        let n_train = members.len() - nv - nt;
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..n_train + nv]);
        test.extend_from_slice(&members[n_train + nv..]);
    }
    for (part, frac, label) in [(&train, spec.train, "train"), (&val, spec.val, "val"), (&test, spec.test, "test")] {
        if frac > 0.0 && part.is_empty() {
            return Err(Error::invalid(format!(
                "split leaves the {label} part empty ({n} records, fraction {frac})"
            )));
        }
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok((
        ds.subset(format!("{}/train", ds.name), &train),
        ds.subset(format!("{}/val", ds.name), &val),
        ds.subset(format!("{}/test", ds.name), &test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_matches_totals() {
        assert_eq!(apportion(15, &[50, 50]), vec![8, 7]);
        assert_eq!(apportion(30, &[50, 50]), vec![15, 15]);
        assert_eq!(apportion(3, &[1, 9]), vec![0, 3]);
        assert_eq!(apportion(0, &[4, 4]), vec![0, 0]);
    }

    #[test]
    fn spec_validation() {
        assert!(SplitSpec::default().validate().is_ok());
        assert!(SplitSpec { train: 0.5, val: 0.5, test: 0.1 }.validate().is_err());
        assert!(SplitSpec { train: 1.2, val: -0.2, test: 0.0 }.validate().is_err());
    }
}
