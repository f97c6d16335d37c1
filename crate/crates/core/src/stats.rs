//! Per-frame counters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Where a vertex's filtered contribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Fine,
    Neighborhood,
    Coarse,
    Unfiltered,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameStats {
    pub frame: u32,
    pub vertices: usize,
    pub fine_accumulated: usize,
    pub coarse_accumulated: usize,
    /// Accumulations that found neither the voxel nor a free slot.
    pub fine_probe_failures: usize,
    pub coarse_probe_failures: usize,
    /// Accumulations that displaced an older cell.
    pub displaced: usize,
    /// `probe_histogram[k]`: fine accumulations that inspected `k` slots.
    pub probe_histogram: Vec<u64>,
    pub max_probes: u32,
    pub from_fine: usize,
    pub from_neighborhood: usize,
    pub from_coarse: usize,
    pub unfiltered: usize,
    /// Unfiltered vertices whose fine lookup hit the probe limit.
    pub unfiltered_probe_failures: usize,
    /// Unfiltered vertices whose fine voxel was missing.
    pub unfiltered_empty: usize,
    pub reevaluated: usize,
    pub evicted: usize,
    pub coarsened: usize,
    pub refined: usize,
    pub migration_dropped: usize,
    pub occupied: usize,
    pub capacity: usize,
    /// Hits on a cell whose stored key differs from the accumulated key.
    pub false_merges: u64,
    pub trace_seconds: f64,
    pub accumulate_seconds: f64,
    pub resolve_seconds: f64,
}

impl FrameStats {
    pub fn with_probe_limit(probe_limit: u32) -> Self {
        Self {
            probe_histogram: vec![0; probe_limit as usize + 1],
            ..Self::default()
        }
    }

    pub fn occupancy(&self) -> f64 {
        if self.capacity == 0 {
            0.0
        } else {
            self.occupied as f64 / self.capacity as f64
        }
    }

    pub fn record_source(&mut self, source: Source) {
        match source {
            Source::Fine => self.from_fine += 1,
            Source::Neighborhood => self.from_neighborhood += 1,
            Source::Coarse => self.from_coarse += 1,
            Source::Unfiltered => self.unfiltered += 1,
        }
    }

    pub fn unfiltered_fraction(&self) -> f64 {
        if self.vertices == 0 {
            0.0
        } else {
            self.unfiltered as f64 / self.vertices as f64
        }
    }

    /// Flat `key=value` form, one entry per line of the stats file.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let hist = self
            .probe_histogram
            .iter()
            .map(|c| format!("{c}"))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("frame", format!("{}", self.frame)),
            ("vertices", format!("{}", self.vertices)),
            ("fine_accumulated", format!("{}", self.fine_accumulated)),
            ("coarse_accumulated", format!("{}", self.coarse_accumulated)),
            ("fine_probe_failures", format!("{}", self.fine_probe_failures)),
            ("coarse_probe_failures", format!("{}", self.coarse_probe_failures)),
            ("displaced", format!("{}", self.displaced)),
            ("probe_histogram", hist),
            ("max_probes", format!("{}", self.max_probes)),
            ("source_fine", format!("{}", self.from_fine)),
            ("source_neighborhood", format!("{}", self.from_neighborhood)),
            ("source_coarse", format!("{}", self.from_coarse)),
            ("source_unfiltered", format!("{}", self.unfiltered)),
            ("unfiltered_probe_failures", format!("{}", self.unfiltered_probe_failures)),
            ("unfiltered_empty", format!("{}", self.unfiltered_empty)),
            ("reevaluated", format!("{}", self.reevaluated)),
            ("evicted", format!("{}", self.evicted)),
            ("coarsened", format!("{}", self.coarsened)),
            ("refined", format!("{}", self.refined)),
            ("migration_dropped", format!("{}", self.migration_dropped)),
            ("occupied", format!("{}", self.occupied)),
            ("capacity", format!("{}", self.capacity)),
            ("occupancy", format!("{:.6}", self.occupancy())),
            ("false_merges", format!("{}", self.false_merges)),
            ("trace_seconds", format!("{:.6}", self.trace_seconds)),
            ("accumulate_seconds", format!("{:.6}", self.accumulate_seconds)),
            ("resolve_seconds", format!("{:.6}", self.resolve_seconds)),
        ]
    }
}
