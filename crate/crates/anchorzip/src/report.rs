//! Machine-readable rate reports.
//!
//! JSON schema (all sizes are integers unless noted):
//!
//! ```json
//! {
//!   "anchors": 1000, "level1_anchors": 40, "level2_anchors": 960,
//!   "total_bytes": 12345, "total_bits": 98760, "bits_per_anchor": 98.76,
//!   "header_bytes": 58, "trailer_bytes": 4,
//!   "budget_bits": {"geometry": 0, "attributes": 0, "model": 0},
//!   "sections": [{"name": "geometry", "bytes": 0, "symbols": 0, "estimated_bits": 0.0}],
//!   "streams": [{"section": "level2", "kind": "features", "symbols": 0,
//!                "estimated_bits": 0.0, "actual_bits": 0}]
//! }
//! ```
//!
//! Section `bytes` include the 12-byte section header. Header, section and
//! trailer bytes add up to `total_bytes`.

use anchorzip_core::RateReport;
use serde_json::{json, Value};

pub fn to_json(report: &RateReport) -> Value {
    let [geo, attr, model] = report.budget();
    json!({
        "anchors": report.anchors,
        "level1_anchors": report.level1,
        "level2_anchors": report.level2,
        "total_bytes": report.total_bytes,
        "total_bits": report.total_bits(),
        "bits_per_anchor": report.bits_per_anchor(),
        "header_bytes": report.header_bytes,
        "trailer_bytes": report.trailer_bytes,
        "budget_bits": {"geometry": geo, "attributes": attr, "model": model},
        "sections": report.sections.iter().map(|s| json!({
            "name": s.name,
            "bytes": s.bytes,
            "symbols": s.symbols,
            "estimated_bits": s.estimated_bits,
        })).collect::<Vec<_>>(),
        "streams": report.streams.iter().map(|s| json!({
            "section": s.section,
            "kind": s.kind,
            "symbols": s.symbols,
            "estimated_bits": s.estimated_bits,
            "actual_bits": s.actual_bits,
        })).collect::<Vec<_>>(),
    })
}

/// JSON for `.json` paths, `key=value` lines otherwise.
pub fn render(report: &RateReport, json_output: bool) -> String {
    if json_output {
        let mut s = serde_json::to_string_pretty(&to_json(report)).unwrap_or_default();
        s.push('\n');
        s
    } else {
        report.to_key_values()
    }
}
