//! Analytic parameter and multiply-add counts.
//!
//! Transforms are charged `H*W*C*ceil(log2(H*W))` per direction, the spectrum
//! modulation `H*W*C`, and dense layers their exact multiply-adds with bias
//! adds included. LayerNorm is charged 4 ops per element.

use super::config::{MaskMode, ModelConfig};
use crate::dswg::dswg_mul_adds;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCost {
    pub transform: u64,
    pub modulation: u64,
    pub dswg: u64,
    pub norms: u64,
    pub mlp: u64,
}

impl BlockCost {
    pub fn total(&self) -> u64 {
        self.transform + self.modulation + self.dswg + self.norms + self.mlp
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostEntry {
    pub name: String,
    pub params: u64,
    pub mul_adds: u64,
    /// Per-block breakdown; empty for the embedding and head entries.
    pub blocks: Vec<BlockCost>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub entries: Vec<CostEntry>,
    pub params: u64,
    pub mul_adds: u64,
}

pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

fn dense(inputs: usize, outputs: usize) -> u64 {
    (inputs * outputs + outputs) as u64
}

/// Cost of one block on an `h x w x c` grid, per image.
pub fn block_cost(hw: usize, c: usize, bands: usize, hidden: usize, ratio: usize, mode: MaskMode) -> BlockCost {
    let hwc = (hw * c) as u64;
    BlockCost {
        transform: 2 * hwc * ceil_log2(hw),
        modulation: hwc,
        dswg: match mode {
            MaskMode::Dynamic => c as u64 * dswg_mul_adds(bands, hidden),
            _ => 0,
        },
        norms: 2 * 4 * hwc,
        mlp: hw as u64 * (dense(c, ratio * c) + dense(ratio * c, c)),
    }
}

/// Per-image parameter and multiply-add counts for a configuration.
pub fn count_params_flops(cfg: &ModelConfig) -> Result<CostReport> {
    let stages = cfg.stages()?;
    let mut entries = Vec::new();
    let patch_len = cfg.in_channels * cfg.patch_size * cfg.patch_size;
    let c0 = stages[0].channels;
    entries.push(CostEntry {
        name: "embed".into(),
        params: dense(patch_len, c0),
        mul_adds: stages[0].positions() as u64 * dense(patch_len, c0),
        blocks: Vec::new(),
    });
    let mut prev = c0;
    for (s, st) in stages.iter().enumerate() {
        let (hw, c, l, k, r) = (st.positions(), st.channels, st.bands, cfg.dswg_hidden, cfg.mlp_ratio);
        let mut params = 0u64;
        let mut mul_adds = 0u64;
        if s > 0 {
            params += dense(4 * prev, c);
            mul_adds += hw as u64 * dense(4 * prev, c);
        }
        let block_params = (2 * c + (2 * l + 2 * k * l + k + l) + 2 * c) as u64
            + dense(c, r * c)
            + dense(r * c, c);
        let cost = block_cost(hw, c, l, k, r, cfg.mask_mode);
        params += st.depth as u64 * block_params;
        mul_adds += st.depth as u64 * cost.total();
        entries.push(CostEntry {
            name: format!("stage{s}"),
            params,
            mul_adds,
            blocks: vec![cost; st.depth],
        });
        prev = c;
    }
    let last = stages.last().expect("at least one stage");
    entries.push(CostEntry {
        name: "head".into(),
        params: 2 * prev as u64 + dense(prev, cfg.num_classes),
        mul_adds: (last.positions() * prev + 4 * prev) as u64 + dense(prev, cfg.num_classes),
        blocks: Vec::new(),
    });
    Ok(CostReport {
        params: entries.iter().map(|e| e.params).sum(),
        mul_adds: entries.iter().map(|e| e.mul_adds).sum(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    #[test]
    fn param_count_matches_tensors() {
        for cfg in [
            ModelConfig::tiny(),
            ModelConfig::preset("dsm-s-desk").unwrap(),
            ModelConfig::preset("dsm-l-desk").unwrap(),
        ] {
            let model = Model::new(cfg.clone()).unwrap();
            let params = model.init_params(0).unwrap();
            let report = count_params_flops(&cfg).unwrap();
            assert_eq!(report.params, params.num_trainable() as u64, "{}", cfg.variant);
        }
    }

    #[test]
    fn totals_are_sums_of_entries() {
        let r = count_params_flops(&ModelConfig::preset("dsm-m-desk").unwrap()).unwrap();
        assert_eq!(r.mul_adds, r.entries.iter().map(|e| e.mul_adds).sum::<u64>());
        assert_eq!(r.params, r.entries.iter().map(|e| e.params).sum::<u64>());
    }

    #[test]
    fn transform_and_modulation_are_linear_in_channels() {
        let a = block_cost(64, 16, 16, 32, 4, MaskMode::Dynamic);
        let b = block_cost(64, 32, 16, 32, 4, MaskMode::Dynamic);
        assert_eq!(b.transform, 2 * a.transform);
        assert_eq!(b.modulation, 2 * a.modulation);
        assert_eq!(a.transform, 2 * 64 * 16 * 6);
    }

    #[test]
    fn dswg_cost_per_channel() {
        let c = block_cost(64, 1, 16, 32, 4, MaskMode::Dynamic);
        assert_eq!(c.dswg, 2 * 32 * 16 + 32 + 16 + 4 * 16);
        assert_eq!(block_cost(64, 1, 16, 32, 4, MaskMode::AllPass).dswg, 0);
    }

    #[test]
    fn log2_rounding() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(65), 7);
    }
}
