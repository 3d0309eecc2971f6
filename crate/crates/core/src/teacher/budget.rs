//! Epoch budgets per data setting. The sample budget is
//! `epochs x references per context x 59,305 training pairs`, which
//! reproduces every row of the reference table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training pairs in the reference corpus; scales the sample budget.
pub const REFERENCE_TRAIN_PAIRS: u64 = 59_305;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataSetting {
    pub hypotheses: usize,
    pub ground_truth: bool,
}

impl DataSetting {
    pub fn ground_truth() -> Self {
        Self { hypotheses: 0, ground_truth: true }
    }

    pub fn hypotheses(n: usize) -> Self {
        Self { hypotheses: n, ground_truth: false }
    }

    pub fn mixed(n: usize) -> Self {
        Self { hypotheses: n, ground_truth: true }
    }

    pub fn references(&self) -> usize {
        self.hypotheses + usize::from(self.ground_truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub max_epochs: usize,
    /// Training instances seen at most, in the reference corpus's units.
    pub max_samples: u64,
}

impl EpochBudget {
    /// Optimizer steps allowed for a dataset of `instances` replicated
    /// training instances at the given batch size.
    pub fn max_steps(&self, instances: usize, batch_size: usize) -> u64 {
        let per_epoch = instances.div_ceil(batch_size.max(1)) as u64;
        per_epoch * self.max_epochs as u64
    }
}

const TABLE: [(usize, bool, usize); 9] = [
    (0, true, 100),
    (1, false, 100),
    (1, true, 50),
    (5, false, 20),
    (5, true, 20),
    (20, false, 10),
    (20, true, 10),
    (100, false, 2),
    (100, true, 2),
];

/// Maximum epochs for a data setting: the tabulated value when listed,
/// otherwise `round(200 / references)` clamped to [1, 100].
pub fn epoch_budget(setting: DataSetting) -> Result<EpochBudget> {
    let refs = setting.references();
    if refs == 0 {
        return Err(Error::invalid("a data setting needs at least one reference"));
    }
    let max_epochs = TABLE
        .iter()
        .find(|(h, gt, _)| *h == setting.hypotheses && *gt == setting.ground_truth)
        .map(|(_, _, e)| *e)
        .unwrap_or_else(|| ((200.0 / refs as f64).round() as usize).clamp(1, 100));
    Ok(EpochBudget { max_epochs, max_samples: max_epochs as u64 * refs as u64 * REFERENCE_TRAIN_PAIRS })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_table_setting_scales() {
        assert_eq!(epoch_budget(DataSetting::hypotheses(10)).unwrap().max_epochs, 20);
        assert_eq!(epoch_budget(DataSetting::hypotheses(1000)).unwrap().max_epochs, 1);
        assert!(epoch_budget(DataSetting { hypotheses: 0, ground_truth: false }).is_err());
    }

    #[test]
    fn steps_from_instances() {
        let b = epoch_budget(DataSetting::hypotheses(5)).unwrap();
        assert_eq!(b.max_steps(61, 30), 3 * 20);
    }
}
