//! Analytical prefetch-depth model.
//!
//! Prefetching layers `0..=L` during drafting loads `N = (L + 1) * k` experts.
//! The deepest admissible `L` must satisfy
//!
//! * memory: `M_peak + N * M_expert < M_GPU`
//! * overlap: `max((L - 1) * t_comp + k * t_io, N * t_io) <= L_all * t_comp`
//!
//! where `t_comp` and `L_all` describe the model whose compute hides the
//! transfers (the draft model by default).

use crate::config::{CutoffCompute, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffInput {
    /// Experts prefetched per layer.
    pub k: usize,
    pub l_all: usize,
    /// Per-layer compute in seconds.
    pub t_comp: f64,
    /// Per-expert load in seconds.
    pub t_io: f64,
    pub m_expert: u64,
    pub m_gpu: u64,
    pub m_peak: u64,
}

impl CutoffInput {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let (t_comp, l_all) = match cfg.policy.cutoff_compute {
            CutoffCompute::Draft => (cfg.timings.t_comp_draft, cfg.model.draft_layers),
            CutoffCompute::Target => (cfg.timings.t_comp_target, cfg.model.num_layers),
        };
        CutoffInput {
            k: cfg.policy.prefetch_k,
            l_all,
            t_comp,
            t_io: cfg.timings.t_io_expert,
            m_expert: cfg.model.expert_size,
            m_gpu: cfg.hardware.gpu_memory,
            m_peak: cfg.hardware.peak_non_expert_memory,
        }
    }

    pub fn n_expert(&self, l: usize) -> usize {
        (l + 1) * self.k
    }

    /// Bytes to spare under the strict memory bound; negative when violated.
    pub fn memory_slack(&self, l: usize) -> i128 {
        let used = self.m_peak as i128 + self.n_expert(l) as i128 * self.m_expert as i128;
        self.m_gpu as i128 - 1 - used
    }

    /// Seconds to spare under the overlap bound; negative when violated.
    pub fn overlap_slack(&self, l: usize) -> f64 {
        let lhs = ((l as f64 - 1.0) * self.t_comp + self.k as f64 * self.t_io)
            .max(self.n_expert(l) as f64 * self.t_io);
        self.l_all as f64 * self.t_comp - lhs
    }

    fn overlap_ok(&self, l: usize) -> bool {
        // absorb rounding when the two sides are mathematically equal
        self.overlap_slack(l) >= -1e-12 * (self.l_all as f64 * self.t_comp).max(1e-300)
    }

    fn memory_ok(&self, l: usize) -> bool {
        self.memory_slack(l) >= 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingConstraint {
    Memory,
    Overlap,
    /// The search ran out of layers before any constraint failed.
    None,
}

impl BindingConstraint {
    pub fn as_str(self) -> &'static str {
        match self {
            BindingConstraint::Memory => "memory",
            BindingConstraint::Overlap => "overlap",
            BindingConstraint::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutoffResult {
    /// Deepest prefetched layer, `None` when even layer 0 is infeasible.
    pub l: Option<usize>,
    pub n_expert: usize,
    pub binding_constraint: BindingConstraint,
    pub feasible: bool,
}

fn failing(input: &CutoffInput, l: usize) -> Option<BindingConstraint> {
    if !input.memory_ok(l) {
        Some(BindingConstraint::Memory)
    } else if !input.overlap_ok(l) {
        Some(BindingConstraint::Overlap)
    } else {
        None
    }
}

/// Largest `L` in `0..L_all` meeting both constraints.
///
/// Both constraint sides grow with `L`, so the feasible set is a prefix and
/// an upward integer scan stops at the first failure.
pub fn solve_cutoff(input: &CutoffInput) -> CutoffResult {
    let mut best = None;
    let mut binding = BindingConstraint::None;
    for l in 0..input.l_all {
        match failing(input, l) {
            Some(b) => {
                binding = b;
                break;
            }
            None => best = Some(l),
        }
    }
    CutoffResult {
        l: best,
        n_expert: best.map_or(0, |l| input.n_expert(l)),
        binding_constraint: binding,
        feasible: best.is_some(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub l: usize,
    pub n_expert: usize,
    pub memory_slack_bytes: i128,
    pub overlap_slack_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("layer {l} is outside 0..{l_all}")]
pub struct LayerOutOfRange {
    pub l: usize,
    pub l_all: usize,
}

pub fn feasibility_report(input: &CutoffInput, l: usize) -> Result<FeasibilityReport, LayerOutOfRange> {
    if l >= input.l_all {
        return Err(LayerOutOfRange {
            l,
            l_all: input.l_all,
        });
    }
    Ok(FeasibilityReport {
        l,
        n_expert: input.n_expert(l),
        memory_slack_bytes: input.memory_slack(l),
        overlap_slack_secs: input.overlap_slack(l),
    })
}
