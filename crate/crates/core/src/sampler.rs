//! Class-balanced foreground proposal sampling for the RoI head.
//!
//! Foreground proposals are split into rare/common/frequent pools through a
//! [`ClassGrouping`] and each pool contributes a fixed quota. Unfilled
//! foreground slots are refilled from what remains, scarcest group first,
//! and the rest of the batch is background.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassGroup, ClassGrouping};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub index: u64,
    /// Category id, `None` for background.
    #[serde(default)]
    pub label: Option<u64>,
}

impl Proposal {
    pub fn foreground(index: u64, category_id: u64) -> Self {
        Self {
            index,
            label: Some(category_id),
        }
    }

    pub fn background(index: u64) -> Self {
        Self { index, label: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub total: usize,
    pub fg_total: usize,
    pub quota_rare: usize,
    pub quota_common: usize,
    pub quota_frequent: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total: 256,
            fg_total: 64,
            quota_rare: 24,
            quota_common: 20,
            quota_frequent: 20,
        }
    }
}

impl SamplerConfig {
    /// Config whose foreground budget is the sum of the quotas.
    pub fn with_quotas(total: usize, rare: usize, common: usize, frequent: usize) -> Result<Self> {
        let cfg = Self {
            total,
            fg_total: rare + common + frequent,
            quota_rare: rare,
            quota_common: common,
            quota_frequent: frequent,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.quota_rare + self.quota_common + self.quota_frequent != self.fg_total {
            return Err(Error::Config(format!(
                "quotas {}+{}+{} do not sum to fg_total {}",
                self.quota_rare, self.quota_common, self.quota_frequent, self.fg_total
            )));
        }
        if self.fg_total > self.total {
            return Err(Error::Config(format!(
                "fg_total {} exceeds total {}",
                self.fg_total, self.total
            )));
        }
        Ok(())
    }

    fn quota(&self, g: ClassGroup) -> usize {
        match g {
            ClassGroup::Rare => self.quota_rare,
            ClassGroup::Common => self.quota_common,
            ClassGroup::Frequent => self.quota_frequent,
        }
    }
}

/// Pool visiting order for quotas and deficit refill.
pub const GROUP_ORDER: [ClassGroup; 3] =
    [ClassGroup::Rare, ClassGroup::Common, ClassGroup::Frequent];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    /// Selected proposal indices, ascending.
    pub indices: Vec<u64>,
    pub rare: usize,
    pub common: usize,
    pub frequent: usize,
    pub background: usize,
}

impl Selection {
    pub fn foreground(&self) -> usize {
        self.rare + self.common + self.frequent
    }
}

/// Selected indices, ascending. See [`sample_with_counts`].
pub fn sample(
    proposals: &[Proposal],
    grouping: &ClassGrouping,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<u64>> {
    sample_with_counts(proposals, grouping, cfg, seed).map(|s| s.indices)
}

pub fn sample_with_counts(
    proposals: &[Proposal],
    grouping: &ClassGrouping,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Selection> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    // rare, common, frequent
    let mut pools: [Vec<u64>; 3] = Default::default();
    let mut background = Vec::new();
    for p in proposals {
        if !seen.insert(p.index) {
            return Err(Error::Integrity(format!(
                "duplicate proposal index {}",
                p.index
            )));
        }
        match p.label {
            None => background.push(p.index),
            Some(c) => {
                let g = grouping.get(c).ok_or_else(|| {
                    Error::Integrity(format!("proposal {} has ungrouped label {c}", p.index))
                })?;
                let slot = GROUP_ORDER
                    .iter()
                    .position(|&x| x == g)
                    .expect("known group");
                pools[slot].push(p.index);
            }
        }
    }
    for pool in pools.iter_mut() {
        pool.sort_unstable();
    }
    background.sort_unstable();

    let mut rng = SplitMix64::new(seed);
    let mut picked: [Vec<u64>; 3] = Default::default();
    for (slot, &g) in GROUP_ORDER.iter().enumerate() {
        picked[slot] = rng.choose_multiple(&pools[slot], cfg.quota(g));
    }

    let mut fg = picked.iter().map(Vec::len).sum::<usize>();
    for slot in 0..3 {
        if fg >= cfg.fg_total {
            break;
        }
        let taken: BTreeSet<u64> = picked[slot].iter().copied().collect();
        let rest: Vec<u64> = pools[slot]
            .iter()
            .copied()
            .filter(|i| !taken.contains(i))
            .collect();
        let extra = rng.choose_multiple(&rest, cfg.fg_total - fg);
        fg += extra.len();
        picked[slot].extend(extra);
    }

    let bg = rng.choose_multiple(&background, cfg.total - fg);
    let mut indices: Vec<u64> = picked.iter().flatten().chain(&bg).copied().collect();
    indices.sort_unstable();
    Ok(Selection {
        indices,
        rare: picked[0].len(),
        common: picked[1].len(),
        frequent: picked[2].len(),
        background: bg.len(),
    })
}
