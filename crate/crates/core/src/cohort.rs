//! Cohort (year of birth, `t - x`) bookkeeping for models with a cohort term.
//!
//! Edge cohorts seen in fewer than `min_cells` cells cannot be estimated on
//! their own; each is merged into the nearest cohort that is seen often
//! enough, and the merged group shares a single effect.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grid::Span;

/// Cohorts seen in fewer cells than this are merged.
pub const MIN_COHORT_CELLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortIndex {
    /// Observed cohorts, oldest first: `years.first - ages.last ..= years.last - ages.first`.
    pub cohorts: Span,
    /// Group of each observed cohort.
    pub group_of: Vec<usize>,
    /// The cohort each group is anchored on (the one seen often enough).
    pub anchors: Vec<i32>,
}

impl CohortIndex {
    pub fn new(ages: Span, years: Span, min_cells: usize) -> Self {
        let cohorts = Span { first: years.first - ages.last, last: years.last - ages.first };
        let cells: Vec<usize> = cohorts.iter().map(|c| ages.iter().filter(|&x| years.contains(c + x)).count()).collect();
        let full: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] >= min_cells).collect();
        if full.is_empty() {
            // Panel too small to separate any cohort: a single shared group.
            return CohortIndex {
                cohorts,
                group_of: alloc::vec![0; cells.len()],
                anchors: alloc::vec![cohorts.at(cells.len() / 2)],
            };
        }
        let mut group_of = alloc::vec![0; cells.len()];
        let anchors: Vec<i32> = full.iter().map(|&i| cohorts.at(i)).collect();
        for (i, g) in group_of.iter_mut().enumerate() {
            // `full` is sorted, so the nearest entry is found by position; ties
            // cannot occur because edge cohorts sit outside the full block.
            let pos = full.partition_point(|&f| f < i);
            *g = if pos == 0 {
                0
            } else if pos == full.len() {
                full.len() - 1
            } else if full[pos] == i || full[pos] - i < i - full[pos - 1] {
                pos
            } else {
                pos - 1
            };
        }
        CohortIndex { cohorts, group_of, anchors }
    }

    pub fn n_groups(&self) -> usize {
        self.anchors.len()
    }

    /// Group of cohort `t - x`, or `None` for a cohort outside the fitted panel.
    pub fn group(&self, cohort: i32) -> Option<usize> {
        self.cohorts.offset(cohort).map(|i| self.group_of[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_cohorts_merge_inward() {
        let idx = CohortIndex::new(Span::new(60, 64).unwrap(), Span::new(2000, 2009).unwrap(), 3);
        // Cohorts 1936..=1949; 1936 and 1937 have 1 and 2 cells, as do 1948, 1949.
        assert_eq!(idx.cohorts, Span::new(1936, 1949).unwrap());
        assert_eq!(idx.n_groups(), 10);
        assert_eq!(idx.anchors.first(), Some(&1938));
        assert_eq!(idx.anchors.last(), Some(&1947));
        assert_eq!(idx.group(1936), Some(0));
        assert_eq!(idx.group(1937), Some(0));
        assert_eq!(idx.group(1938), Some(0));
        assert_eq!(idx.group(1939), Some(1));
        assert_eq!(idx.group(1949), Some(9));
        assert_eq!(idx.group(1950), None);
    }

    #[test]
    fn tiny_panel_is_one_group() {
        let idx = CohortIndex::new(Span::new(60, 61).unwrap(), Span::new(2000, 2001).unwrap(), 3);
        assert_eq!(idx.n_groups(), 1);
        assert!(idx.group_of.iter().all(|&g| g == 0));
    }

    #[test]
    fn every_group_has_enough_cells() {
        let (ages, years) = (Span::new(65, 89).unwrap(), Span::new(1961, 2005).unwrap());
        let idx = CohortIndex::new(ages, years, MIN_COHORT_CELLS);
        let mut counts = alloc::vec![0usize; idx.n_groups()];
        for x in ages.iter() {
            for t in years.iter() {
                counts[idx.group(t - x).unwrap()] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c >= MIN_COHORT_CELLS));
        assert_eq!(idx.n_groups(), idx.cohorts.len() - 4);
    }
}
