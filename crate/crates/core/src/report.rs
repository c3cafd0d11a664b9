//! Simulation results and their text renderings.
//!
//! Every timing column is in milliseconds with three decimals; rates carry six.

use serde::Serialize;
use std::fmt::Write as _;

use crate::config::Policy;
use crate::prefetch::TransferRecord;
use crate::time::SimTime;

/// Seconds spent in each activity over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    /// Draft-model compute and gating prediction.
    pub draft: f64,
    /// Stalls waiting on expert transfers.
    pub expert_load: f64,
    /// Target-model compute.
    pub attention_and_other: f64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> f64 {
        self.draft + self.expert_load + self.attention_and_other
    }

    /// The same split as fractions summing to one.
    pub fn fractions(&self) -> LatencyBreakdown {
        let t = self.total();
        if t == 0.0 {
            return LatencyBreakdown::default();
        }
        LatencyBreakdown {
            draft: self.draft / t,
            expert_load: self.expert_load / t,
            attention_and_other: self.attention_and_other / t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Draft,
    Target,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Draft => "draft",
            Stream::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Predict,
    DraftLayer,
    TargetLayer,
}

impl SlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Predict => "predict",
            SlotKind::DraftLayer => "draft_layer",
            SlotKind::TargetLayer => "target_layer",
        }
    }
}

/// One busy interval of a compute stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComputeSlot {
    pub stream: Stream,
    pub kind: SlotKind,
    pub iteration: usize,
    pub layer: usize,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationRecord {
    pub index: usize,
    /// First verified trace position.
    pub position: usize,
    pub verified: usize,
    pub accepted: usize,
    pub emitted: usize,
    pub start: SimTime,
    pub draft_end: SimTime,
    pub end: SimTime,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    pub iterations: Vec<IterationRecord>,
    pub compute: Vec<ComputeSlot>,
    pub transfers: Vec<TransferRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub model: String,
    /// Seconds per emitted token.
    pub tpot: f64,
    /// Wall-clock seconds of the whole run.
    pub total_time: f64,
    pub emitted_tokens: usize,
    pub iterations: usize,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub eviction_rate: f64,
    pub wasted_prefetch_rate: f64,
    pub prefetch_insertions: u64,
    pub evictions: u64,
    pub transfers: usize,
    pub bytes_transferred: u64,
    /// Deepest layer prefetched while drafting, when the policy does so.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_layer: Option<usize>,
    pub cache_slots: usize,
    pub breakdown_seconds: LatencyBreakdown,
    pub breakdown: LatencyBreakdown,
    #[serde(skip)]
    pub timeline: Timeline,
}

pub const REPORT_CSV_HEADER: &str = "policy,seed,tpot_ms,total_ms,emitted_tokens,iterations,hit_rate,eviction_rate,wasted_prefetch_rate,draft_frac,expert_load_frac,attention_other_frac,cutoff_layer,cache_slots,transfers,bytes_transferred";

pub const TRANSFER_CSV_HEADER: &str = "start_ms,end_ms,bytes,kind,layer,experts";
pub const COMPUTE_CSV_HEADER: &str = "stream,kind,iteration,layer,start_ms,end_ms";
pub const ITERATION_CSV_HEADER: &str =
    "iteration,position,verified,accepted,emitted,start_ms,draft_end_ms,end_ms,hits,misses";

fn ms(t: SimTime) -> String {
    format!("{:.3}", t.as_millis_f64())
}

impl SimReport {
    /// TPOT in milliseconds.
    pub fn tpot_ms(&self) -> f64 {
        self.tpot * 1e3
    }

    pub fn csv_row(&self) -> String {
        let f = self.breakdown;
        format!(
            "{},{},{:.3},{:.3},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.policy,
            self.seed,
            self.tpot * 1e3,
            self.total_time * 1e3,
            self.emitted_tokens,
            self.iterations,
            self.hit_rate,
            self.eviction_rate,
            self.wasted_prefetch_rate,
            f.draft,
            f.expert_load,
            f.attention_and_other,
            self.cutoff_layer.map(|l| l.to_string()).unwrap_or_default(),
            self.cache_slots,
            self.transfers,
            self.bytes_transferred,
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes to TOML")
    }

    pub fn transfers_csv(&self) -> String {
        let mut out = format!("{TRANSFER_CSV_HEADER}\n");
        for t in &self.timeline.transfers {
            let experts: Vec<String> = t.experts.iter().map(|e| e.expert.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                ms(t.start),
                ms(t.end),
                t.bytes,
                t.kind.as_str(),
                t.layer,
                experts.join(";")
            );
        }
        out
    }

    pub fn compute_csv(&self) -> String {
        let mut out = format!("{COMPUTE_CSV_HEADER}\n");
        for s in &self.timeline.compute {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.stream.as_str(),
                s.kind.as_str(),
                s.iteration,
                s.layer,
                ms(s.start),
                ms(s.end)
            );
        }
        out
    }

    pub fn iterations_csv(&self) -> String {
        let mut out = format!("{ITERATION_CSV_HEADER}\n");
        for it in &self.timeline.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                it.index,
                it.position,
                it.verified,
                it.accepted,
                it.emitted,
                ms(it.start),
                ms(it.draft_end),
                ms(it.end),
                it.hits,
                it.misses
            );
        }
        out
    }
}

/// Header plus one row per report.
pub fn reports_csv(reports: &[SimReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Fixed-width table for terminals.
pub fn reports_table(reports: &[SimReport]) -> String {
    let mut out = format!(
        "{:<18} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8}\n",
        "policy", "tpot_ms", "hit_rate", "evict", "draft", "load", "other"
    );
    for r in reports {
        let f = r.breakdown;
        let _ = writeln!(
            out,
            "{:<18} {:>10.3} {:>9.4} {:>9.4} {:>8.3} {:>8.3} {:>8.3}",
            r.policy.as_str(),
            r.tpot * 1e3,
            r.hit_rate,
            r.eviction_rate,
            f.draft,
            f.expert_load,
            f.attention_and_other
        );
    }
    out
}
