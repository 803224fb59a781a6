//! Tracking evaluation: overlap and precision metrics, curves, result
//! files, and plot emission.

mod bbox;
mod curves;
mod plot;
mod results;

pub use bbox::{center_error, iou};
pub use curves::{dp_at, precision_curve, success_auc, MetricCurve, CURVE_POINTS, DP_TAU};
pub use plot::{emit_plot, parse_plot_csv};
pub use results::{score_boxes, SequenceScore, TrackResult};
