//! Frame quality metrics, test-set evaluation and report tables.

mod evaluate;
mod quality;
mod report;

pub use evaluate::{
    evaluate, Aggregate, EvalOptions, Fingerprint, MetricsReport, SceneMetrics, TileInfo, PSNR_RULE, SSIM_RULE,
};
pub use quality::{psnr, psnr_values, ssim, ssim_values, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{format_comparison, format_report, parse_report, rank_by_psnr, ReportStyle};
