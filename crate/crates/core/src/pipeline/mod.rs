//! Track preparation, segmentation, the Adam fitting loop and run filtering.

pub mod fit;
pub mod io;
pub mod prepare;
pub mod segment;
pub mod synth;

pub use fit::{filter_run, fit, Adam, AdamConfig, FilterConfig, FitConfig, FitResult, RejectReason, Verdict};
pub use io::{read_wav, write_wav, Audio};
pub use prepare::{
    align, fold_to_mono, integrated_loudness, normalize_lufs, prepare_pair, shift, AlignConfig, Alignment,
    FoldConfig, MonoFold, PrepareConfig, TrackPair, TARGET_LUFS,
};
pub use segment::{segment, window_starts, BatchSampler, SegmentConfig, SegmentPlan};
pub use synth::synthetic_vocal;

use crate::error::Result;
use crate::grad::Objective;

/// Segments a prepared pair and fits it; pair and segmentation flags are carried into the
/// result.
pub fn fit_pair(
    pair: &TrackPair,
    init: &[f64],
    obj: &Objective,
    seg: &SegmentConfig,
    cfg: &FitConfig,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<FitResult> {
    let plan = segment(pair, seg)?;
    let mut flags = pair.flags.clone();
    if plan.padded {
        flags.push("padded_short_track".to_string());
    }
    if plan.dropped_silent > 0 {
        flags.push(format!("dropped_{}_silent_segments", plan.dropped_silent));
    }
    let mut r = fit(plan.segments, init, obj, cfg, on_step)?;
    flags.extend(r.flags);
    r.flags = flags;
    Ok(r)
}
