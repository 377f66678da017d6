//! Robustness aggregation and algorithm ranking.
//!
//! Per-algorithm frame scores are aggregated by a low percentile (default
//! 5%) to emphasize worst-case behavior, then ranked descending with
//! competition-style tie handling.

use crate::error::{Error, Result};
use crate::metrics::FrameEval;

/// Default robustness percentile.
pub const DEFAULT_PERCENTILE: f64 = 0.05;

/// One algorithm's row in a stage report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub mi_dsc: f64,
    pub mi_nsd: f64,
    pub rank_dsc: usize,
    pub rank_nsd: usize,
    pub frame_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_fps: Option<f64>,
}

/// Per-stage aggregate report, ordered by MI_DSC rank (ties by name).
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct StageReport {
    pub rows: Vec<ReportRow>,
}

/// Linear-interpolation quantile, h = (n−1)p + 1 on the sorted sample.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("percentile: empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!(
            "percentile: p = {p} outside [0,1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p; // zero-based position
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Percentile aggregate of one algorithm's per-frame scores.
pub fn aggregate_algorithm(frames: &[FrameEval], p: f64) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Err(Error::contract("aggregate_algorithm: no frames"));
    }
    let dsc: Vec<f64> = frames.iter().map(|f| f.mi_dsc).collect();
    let nsd: Vec<f64> = frames.iter().map(|f| f.mi_nsd).collect();
    Ok((percentile(&dsc, p)?, percentile(&nsd, p)?))
}

/// Competition ranking of (name, score) entries: descending by score, ties
/// share the minimum rank and the next rank skips; tie order by name.
pub fn rank_algorithms(entries: &[(String, f64)]) -> Result<Vec<(String, f64, usize)>> {
    let mut seen = std::collections::HashSet::new();
    for (name, _) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::contract(format!(
                "rank_algorithms: duplicate algorithm name '{name}'"
            )));
        }
    }
    let mut sorted: Vec<(String, f64)> = entries.to_vec();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut out = Vec::with_capacity(sorted.len());
    let mut rank = 1usize;
    for (i, (name, score)) in sorted.iter().enumerate() {
        if i > 0 && *score < sorted[i - 1].1 {
            rank = i + 1;
        }
        out.push((name.clone(), *score, rank));
    }
    Ok(out)
}

/// Input for building a full stage report.
pub struct AlgorithmEntry {
    pub name: String,
    pub mi_dsc: f64,
    pub mi_nsd: f64,
    pub frame_count: usize,
    pub mean_fps: Option<f64>,
}

/// Rank both metrics and assemble the report, rows ordered by MI_DSC rank.
pub fn build_report(entries: Vec<AlgorithmEntry>) -> Result<StageReport> {
    let dsc_pairs: Vec<(String, f64)> =
        entries.iter().map(|e| (e.name.clone(), e.mi_dsc)).collect();
    let nsd_pairs: Vec<(String, f64)> =
        entries.iter().map(|e| (e.name.clone(), e.mi_nsd)).collect();
    let ranked_dsc = rank_algorithms(&dsc_pairs)?;
    let ranked_nsd = rank_algorithms(&nsd_pairs)?;
    let nsd_rank: std::collections::HashMap<&str, usize> = ranked_nsd
        .iter()
        .map(|(n, _, r)| (n.as_str(), *r))
        .collect();
    let by_name: std::collections::HashMap<&str, &AlgorithmEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let rows = ranked_dsc
        .iter()
        .map(|(name, score, rank)| {
            let e = by_name[name.as_str()];
            ReportRow {
                name: name.clone(),
                mi_dsc: *score,
                mi_nsd: e.mi_nsd,
                rank_dsc: *rank,
                rank_nsd: nsd_rank[name.as_str()],
                frame_count: e.frame_count,
                mean_fps: e.mean_fps,
            }
        })
        .collect();
    Ok(StageReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    BoxplotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "boxplot-data" => Ok(ReportFormat::BoxplotData),
            other => Err(Error::config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Per-algorithm plot-ready data: sorted frame scores plus quartiles and the
/// robustness percentile marker.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BoxplotSeries {
    pub name: String,
    pub metric: String,
    pub sorted_scores: Vec<f64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p05: f64,
}

/// Render a report (csv or json). Boxplot data needs per-frame scores; use
/// [`boxplot_data`] for that format.
pub fn emit_report(report: &StageReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("name,mi_dsc,mi_nsd,rank_dsc,rank_nsd,fps\n");
            for r in &report.rows {
                let fps = r
                    .mean_fps
                    .map(|f| format!("{f:.3}"))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{:.4},{:.4},{},{},{}\n",
                    r.name, r.mi_dsc, r.mi_nsd, r.rank_dsc, r.rank_nsd, fps
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map_err(|e| Error::format(format!("report serialization: {e}"))),
        ReportFormat::BoxplotData => Err(Error::config(
            "boxplot-data requires per-frame scores; use boxplot_data()",
        )),
    }
}

/// Build the boxplot-data export for one algorithm and metric.
pub fn boxplot_data(
    name: &str,
    metric: &str,
    frame_scores: &[f64],
    p: f64,
) -> Result<BoxplotSeries> {
    if frame_scores.is_empty() {
        return Err(Error::contract("boxplot_data: no frame scores"));
    }
    let mut sorted = frame_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(BoxplotSeries {
        name: name.to_string(),
        metric: metric.to_string(),
        q1: percentile(&sorted, 0.25)?,
        median: percentile(&sorted, 0.5)?,
        q3: percentile(&sorted, 0.75)?,
        p05: percentile(&sorted, p)?,
        sorted_scores: sorted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(d: f64, n: f64) -> FrameEval {
        FrameEval {
            mi_dsc: d,
            mi_nsd: n,
            matched: Vec::new(),
            gt_count: 0,
            pred_count: 0,
            matched_count: 0,
        }
    }

    #[test]
    fn percentile_single_value() {
        assert_eq!(percentile(&[0.2], 0.0).unwrap(), 0.2);
        assert_eq!(percentile(&[0.2], 0.5).unwrap(), 0.2);
        assert_eq!(percentile(&[0.2], 1.0).unwrap(), 0.2);
    }

    #[test]
    fn percentile_closed_forms() {
        // 101 values 0.00..1.00: h = (101−1)·0.05 + 1 = 6 exactly → 0.05
        let v101: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!((percentile(&v101, 0.05).unwrap() - 0.05).abs() < 1e-12);
        // 100 values 0.01..1.00: h = 5.95 → 0.05 + 0.95·0.01 = 0.0595
        let v100: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert!((percentile(&v100, 0.05).unwrap() - 0.0595).abs() < 1e-12);
    }

    #[test]
    fn percentile_min_max_and_monotonicity() {
        let v = [0.4, 0.1, 0.9, 0.3];
        assert_eq!(percentile(&v, 0.0).unwrap(), 0.1);
        assert_eq!(percentile(&v, 1.0).unwrap(), 0.9);
        let bigger: Vec<f64> = v.iter().map(|x| x + 0.05).collect();
        for p in [0.0, 0.05, 0.25, 0.5, 0.9, 1.0] {
            assert!(percentile(&bigger, p).unwrap() >= percentile(&v, p).unwrap());
        }
    }

    #[test]
    fn percentile_empty_rejected() {
        assert!(percentile(&[], 0.05).is_err());
    }

    #[test]
    fn aggregate_constant_and_low_tail() {
        let frames: Vec<FrameEval> = (0..40).map(|_| frame(0.7, 0.6)).collect();
        let (d, n) = aggregate_algorithm(&frames, 0.05).unwrap();
        assert!((d - 0.7).abs() < 1e-12);
        assert!((n - 0.6).abs() < 1e-12);

        // more than 5% of frames at 0.0 pulls the aggregate to 0
        let mut frames: Vec<FrameEval> = (0..94).map(|_| frame(1.0, 1.0)).collect();
        frames.extend((0..6).map(|_| frame(0.0, 0.0)));
        let (d, _) = aggregate_algorithm(&frames, 0.05).unwrap();
        assert!(d < 0.1, "aggregate {d}");
    }

    #[test]
    fn ranking_competition_ties() {
        let entries = vec![
            ("a".to_string(), 0.9),
            ("b".to_string(), 0.9),
            ("c".to_string(), 0.5),
        ];
        let ranked = rank_algorithms(&entries).unwrap();
        assert_eq!(ranked[0].2, 1);
        assert_eq!(ranked[1].2, 1);
        assert_eq!(ranked[2].2, 3);
    }

    #[test]
    fn ranking_single_and_duplicates() {
        let one = vec![("solo".to_string(), 0.1)];
        assert_eq!(rank_algorithms(&one).unwrap()[0].2, 1);
        let dup = vec![("x".to_string(), 0.1), ("x".to_string(), 0.2)];
        assert!(rank_algorithms(&dup).is_err());
    }

    #[test]
    fn ranking_permutation_invariant() {
        let mut entries = vec![
            ("p".to_string(), 0.3),
            ("q".to_string(), 0.7),
            ("r".to_string(), 0.5),
        ];
        let a = rank_algorithms(&entries).unwrap();
        entries.reverse();
        let b = rank_algorithms(&entries).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ranking_invariant_under_monotone_transform() {
        let entries: Vec<(String, f64)> = [("a", 0.2), ("b", 0.8), ("c", 0.5), ("d", 0.5)]
            .iter()
            .map(|(n, s)| (n.to_string(), *s))
            .collect();
        let base = rank_algorithms(&entries).unwrap();
        let squished: Vec<(String, f64)> = entries
            .iter()
            .map(|(n, s)| (n.clone(), s.powi(3) + 1.0))
            .collect();
        let transformed = rank_algorithms(&squished).unwrap();
        for (a, b) in base.iter().zip(&transformed) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.2, b.2);
        }
    }

    /// Stage-3 aggregates as published: challenge teams plus our variants.
    pub fn published_stage3_entries() -> Vec<AlgorithmEntry> {
        let rows: [(&str, f64, f64, Option<f64>); 11] = [
            ("www", 0.31, 0.35, Some(5.0)),
            ("Uniandes", 0.26, 0.29, Some(5.0)),
            ("SQUASH", 0.22, 0.26, Some(5.0)),
            ("CASIA_SRL", 0.19, 0.27, Some(5.0)),
            ("fisensee", 0.17, 0.16, Some(18.0)),
            ("caresyntax", 0.00, 0.00, Some(5.0)),
            ("VIE", 0.00, 0.00, Some(5.0)),
            ("CCAM-Backbone", 0.313, 0.338, Some(49.0)),
            ("CCAM-Full", 0.308, 0.333, Some(45.0)),
            ("CCAM-FPN", 0.000, 0.000, Some(60.0)),
            ("Base YOLACT++", 0.000, 0.000, Some(75.0)),
        ];
        rows.iter()
            .map(|(n, d, s, f)| AlgorithmEntry {
                name: n.to_string(),
                mi_dsc: *d,
                mi_nsd: *s,
                frame_count: 2880,
                mean_fps: *f,
            })
            .collect()
    }

    #[test]
    fn published_aggregates_rank_as_reported() {
        let report = build_report(published_stage3_entries()).unwrap();
        let order: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            &order[..7],
            &[
                "CCAM-Backbone",
                "www",
                "CCAM-Full",
                "Uniandes",
                "SQUASH",
                "CASIA_SRL",
                "fisensee"
            ]
        );
        // four-way tie at rank 8
        for r in &report.rows[7..] {
            assert_eq!(r.mi_dsc, 0.0);
            assert_eq!(r.rank_dsc, 8);
        }
        assert_eq!(report.rows[0].rank_dsc, 1);
    }

    #[test]
    fn csv_report_shape() {
        let report = build_report(published_stage3_entries()).unwrap();
        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "name,mi_dsc,mi_nsd,rank_dsc,rank_nsd,fps");
        assert_eq!(lines.len(), 12);
        assert!(lines[1].starts_with("CCAM-Backbone,"));

        let empty = StageReport::default();
        let csv = emit_report(&empty, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn boxplot_marker_matches_aggregate() {
        let frames: Vec<FrameEval> = (1..=100).map(|i| frame(i as f64 / 100.0, 0.5)).collect();
        let (agg_dsc, _) = aggregate_algorithm(&frames, 0.05).unwrap();
        let scores: Vec<f64> = frames.iter().map(|f| f.mi_dsc).collect();
        let series = boxplot_data("algo", "mi_dsc", &scores, 0.05).unwrap();
        assert!((series.p05 - agg_dsc).abs() < 1e-12);
        assert_eq!(series.sorted_scores.len(), 100);
    }
}
