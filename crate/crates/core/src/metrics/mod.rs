//! Frame ranking metrics (cAP, AP, PR), event metrics, calibration and timing.
//!
//! Everything here works on `f64` probabilities and `{0, 1}` labels and is pure.

mod events;
mod ranking;
mod report;

pub use events::{
    binarize, detection_delay, ece_event, ece_event_pooled, ece_frame, event_f1, extract_events,
    extract_events_with_probs, lead_time, match_events, Event, EventEce, EventF1, EventSet,
    MatchCounts, OnsetTiming, DEFAULT_TAUS, EVENT_MATCH_TAU,
};
pub use ranking::{
    frame_ap, frame_cap, pr_curve, random_baseline_cap, PrCurve, PrPoint, ScoredFrames,
};
pub use report::{
    anticipation_cap, detection_frames, evaluate, offset_frames, AnticipationCap, EvalOptions,
    MetricReport, ScoredVideo,
};
