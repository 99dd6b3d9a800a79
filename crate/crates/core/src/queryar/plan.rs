use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("permutation length must be ≥ 1"));
    }
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    Ok(p)
}

pub fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::invalid(format!("permutation of length {} for {n} tokens", order.len())));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("{order:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// A generation order and its split into consecutive decoding groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationPlan {
    pub order: Vec<usize>,
    pub groups: Vec<Range<usize>>,
}

impl PermutationPlan {
    pub fn group(&self, g: usize) -> &[usize] {
        &self.order[self.groups[g].clone()]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|r| r.len()).collect()
    }
}

/// Splits `order` into `⌈n/m⌉` groups of `m`; the last may be smaller.
pub fn plan_parallel_groups(n: usize, m: usize, order: &[usize]) -> Result<PermutationPlan> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("group size {m} outside 1..={n}")));
    }
    check_permutation(order, n)?;
    let groups = (0..n).step_by(m).map(|s| s..(s + m).min(n)).collect();
    Ok(PermutationPlan { order: order.to_vec(), groups })
}
