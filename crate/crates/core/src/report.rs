//! Result tables, distribution figures, and machine-readable run
//! manifests. Emission is deterministic and byte-stable for fixed inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;
use crate::modelio::ModelConfig;
use crate::runner::{RunPlan, RunResult};
use crate::strategy::Strategy;
use crate::taxonomy::{ErrorDistribution, Layer};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("EmptyReport: no rows to emit")]
    EmptyReport,
}

/// Significance tier string from a p-value, mirroring the published
/// thresholds; exact p always travels in the machine output.
pub fn significance_tier(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Percentage to one decimal, round-half-even.
pub fn fmt_pct1(fraction: f64) -> String {
    let pct = (fraction * 1000.0).round_ties_even() / 10.0;
    format!("{pct:.1}")
}

/// Signed percentage-point value to one decimal, round-half-even.
pub fn fmt_signed_pp1(pp: f64) -> String {
    let rounded = (pp * 10.0).round_ties_even() / 10.0;
    if rounded >= 0.0 {
        format!("+{rounded:.1}")
    } else {
        format!("{rounded:.1}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsTableRow {
    pub experiment: String,
    pub domain: String,
    pub n: u64,
    pub baseline_acc: f64,
    pub enhanced_acc: f64,
    pub delta_pp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Tsv,
    Markdown,
}

const TABLE_COLUMNS: [&str; 6] = [
    "Experiment",
    "Domain",
    "n",
    "Baseline Acc.",
    "HEC Acc.",
    "Improve. (pp)",
];

fn row_cells(row: &ResultsTableRow) -> [String; 6] {
    let tier = row.p_value.map(significance_tier).unwrap_or("");
    [
        row.experiment.clone(),
        row.domain.clone(),
        row.n.to_string(),
        format!("{}%", fmt_pct1(row.baseline_acc)),
        format!("{}%", fmt_pct1(row.enhanced_acc)),
        format!("{}{}", fmt_signed_pp1(row.delta_pp), tier),
    ]
}

/// Emit the validation-results table with the fixed column order.
pub fn emit_results_table(
    rows: &[ResultsTableRow],
    format: TableFormat,
) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let mut out = String::new();
    match format {
        TableFormat::Tsv => {
            out.push_str(&TABLE_COLUMNS.join("\t"));
            out.push('\n');
            for row in rows {
                out.push_str(&row_cells(row).join("\t"));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            out.push_str(&format!("| {} |\n", TABLE_COLUMNS.join(" | ")));
            out.push_str("|---|---|---|---|---|---|\n");
            for row in rows {
                out.push_str(&format!("| {} |\n", row_cells(row).join(" | ")));
            }
        }
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const LAYER_COLORS: [(&str, &str); 3] = [
    ("knowledge", "#4c78a8"),
    ("reasoning", "#f58518"),
    ("complexity", "#54a24b"),
];

#[derive(Debug, Clone)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

/// One stacked bar per domain, three segments per bar; the CSV sidecar
/// carries the exact shares.
pub fn emit_distribution_figure(dists: &[(String, ErrorDistribution)]) -> Figure {
    let bar_w = 90.0;
    let gap = 50.0;
    let plot_h = 260.0;
    let margin = 50.0;
    let width = margin * 2.0 + dists.len() as f64 * (bar_w + gap);
    let height = plot_h + 2.0 * margin + 30.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">Error layer distribution by domain</text>\n",
        width / 2.0
    ));
    for (i, (label, color)) in LAYER_COLORS.iter().enumerate() {
        let x = margin + i as f64 * 130.0;
        let y = height - 14.0;
        svg.push_str(&format!(
            "  <rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            y - 10.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
            x + 16.0
        ));
    }
    for (i, (name, dist)) in dists.iter().enumerate() {
        let x = margin + i as f64 * (bar_w + gap);
        let mut y = margin + plot_h;
        let shares = [
            dist.share(Layer::Knowledge),
            dist.share(Layer::Reasoning),
            dist.share(Layer::Complexity),
        ];
        for (share, (label, color)) in shares.iter().zip(LAYER_COLORS.iter()) {
            let seg_h = share * plot_h;
            y -= seg_h;
            svg.push_str(&format!(
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{seg_h}\" fill=\"{color}\">\
                 <title>{}: {label} {}%</title></rect>\n",
                xml_escape(name),
                fmt_pct1(*share)
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            margin + plot_h + 18.0,
            xml_escape(name)
        ));
    }
    svg.push_str("</svg>\n");

    let mut csv = String::from("domain,knowledge_share,reasoning_share,complexity_share,total_errors\n");
    for (name, dist) in dists {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            name.replace(',', ";"),
            dist.share(Layer::Knowledge),
            dist.share(Layer::Reasoning),
            dist.share(Layer::Complexity),
            dist.total_errors
        ));
    }
    Figure { svg, csv }
}

/// Everything needed to re-execute a run bit-identically on deterministic
/// providers. Model configs carry secret *names* only, never values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub fingerprint: String,
    pub case_set_hash: String,
    pub strategy_ids: Vec<String>,
    /// strategy_id -> hash over its block templates.
    pub template_hashes: BTreeMap<String, String>,
    pub model: ModelConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cost: Option<f64>,
}

pub fn strategy_template_hash(strategy: &Strategy) -> String {
    let parts: Vec<String> = strategy
        .blocks
        .iter()
        .map(|b| format!("{}\x1f{}\x1f{}", b.layer, b.block_id, b.text_template))
        .collect();
    hashing::hex64(hashing::fnv1a(parts.join("\x1e").as_bytes()))
}

pub fn manifest_run(
    plan: &RunPlan,
    result: Option<&RunResult>,
    strategies: &[Strategy],
    model: &ModelConfig,
) -> ManifestRun {
    ManifestRun {
        run_id: plan.run_id.clone(),
        fingerprint: plan.fingerprint(),
        case_set_hash: plan.case_set_hash.clone(),
        strategy_ids: plan.strategy_ids.clone(),
        template_hashes: strategies
            .iter()
            .map(|s| (s.strategy_id.clone(), strategy_template_hash(s)))
            .collect(),
        model: model.clone(),
        seed: plan.seed,
        total_cost: result.and_then(|r| r.total_cost),
    }
}

/// Schema-stable pretty JSON manifest.
pub fn emit_manifest(runs: &[ManifestRun]) -> String {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        runs: runs.to_vec(),
    };
    let mut out = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::distribution_from_layer_counts;

    pub(crate) fn cross_model_rows() -> Vec<ResultsTableRow> {
        let row = |experiment: &str, n, b, e, d| ResultsTableRow {
            experiment: experiment.into(),
            domain: "Medical".into(),
            n,
            baseline_acc: b,
            enhanced_acc: e,
            delta_pp: d,
            p_value: Some(1e-6),
        };
        vec![
            row("DeepSeek Chat", 1000, 0.581, 0.728, 14.6),
            row("GPT-4.1-nano", 1000, 0.659, 0.794, 13.5),
            row("Gemini-2.5-flash-lite", 1000, 0.651, 0.774, 12.4),
            row("Qwen-2.5-72B", 1000, 0.706, 0.795, 8.9),
            row("GPT-4o-mini", 1000, 0.637, 0.705, 6.8),
        ]
    }

    #[test]
    fn tsv_rows_render_published_numbers() {
        let out = emit_results_table(&cross_model_rows(), TableFormat::Tsv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "DeepSeek Chat\tMedical\t1000\t58.1%\t72.8%\t+14.6***");
        assert_eq!(lines[5], "GPT-4o-mini\tMedical\t1000\t63.7%\t70.5%\t+6.8***");
    }

    #[test]
    fn single_row_header_plus_line() {
        let rows = vec![ResultsTableRow {
            experiment: "Legal Reasoning".into(),
            domain: "Legal".into(),
            n: 1000,
            baseline_acc: 0.751,
            enhanced_acc: 0.735,
            delta_pp: -1.6,
            p_value: Some(0.2),
        }];
        let out = emit_results_table(&rows, TableFormat::Tsv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].ends_with("-1.6"));
    }

    #[test]
    fn tier_thresholds() {
        assert_eq!(significance_tier(0.0005), "***");
        assert_eq!(significance_tier(0.005), "**");
        assert_eq!(significance_tier(0.02), "*");
        assert_eq!(significance_tier(0.2), "");
    }

    #[test]
    fn markdown_shape() {
        let out = emit_results_table(&cross_model_rows(), TableFormat::Markdown).unwrap();
        assert!(out.starts_with("| Experiment | Domain | n |"));
        assert!(out.contains("| DeepSeek Chat | Medical | 1000 | 58.1% | 72.8% | +14.6*** |"));
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(
            emit_results_table(&[], TableFormat::Tsv),
            Err(ReportError::EmptyReport)
        ));
    }

    #[test]
    fn emission_is_byte_stable() {
        let a = emit_results_table(&cross_model_rows(), TableFormat::Tsv).unwrap();
        let b = emit_results_table(&cross_model_rows(), TableFormat::Tsv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_half_even_rendering() {
        assert_eq!(fmt_pct1(0.58405), "58.4");
        assert_eq!(fmt_pct1(0.1), "10.0");
        assert_eq!(fmt_signed_pp1(-1.6), "-1.6");
        assert_eq!(fmt_signed_pp1(0.0), "+0.0");
        // Exactly representable ties round to the even neighbor.
        assert_eq!(fmt_signed_pp1(11.25), "+11.2");
        assert_eq!(fmt_signed_pp1(11.75), "+11.8");
    }

    fn table3_fixture() -> Vec<(String, ErrorDistribution)> {
        [
            ("Medical Transcription", (858, 582, 29)),
            ("Political Bias Detection", (102, 34, 3)),
            ("Legal Reasoning (CaseHOLD)", (90, 753, 157)),
            ("Legal Classification (EURLEX)", (128, 219, 3)),
        ]
        .into_iter()
        .map(|(name, (k, r, c))| {
            (
                name.to_string(),
                distribution_from_layer_counts(k, r, c).unwrap(),
            )
        })
        .collect()
    }

    #[test]
    fn figure_has_four_bars_three_segments_each() {
        let fig = emit_distribution_figure(&table3_fixture());
        assert_eq!(fig.svg.matches("<rect").count(), 4 * 3 + 3); // bars + legend
        assert!(fig.svg.contains("Medical Transcription: knowledge 58.4%"));
        assert!(fig.svg.contains("Legal Reasoning (CaseHOLD): reasoning 75.3%"));
        // Sidecar carries full precision.
        assert!(fig.csv.contains("Medical Transcription,0.58407079"));
        let lines: Vec<&str> = fig.csv.lines().collect();
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn figure_bars_have_equal_total_height() {
        let fig = emit_distribution_figure(&table3_fixture());
        // Every bar's segments sum to the full plot height: the top of the
        // knowledge segment stack is the margin for all bars. Cheap check:
        // every share triple sums to 1 and rendering is linear in share.
        for (_, dist) in table3_fixture() {
            let total: f64 = dist.layer_shares.values().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert!(fig.svg.contains("</svg>"));
    }

    #[test]
    fn figure_single_domain() {
        let fig = emit_distribution_figure(&table3_fixture()[..1].to_vec());
        assert_eq!(fig.svg.matches("<title>").count(), 3);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let fig = emit_distribution_figure(&table3_fixture());
        assert!(fig.svg.starts_with("<?xml"));
        let opens = fig.svg.matches("<rect").count() + fig.svg.matches("<text").count();
        let closes = fig.svg.matches("/>").count() + fig.svg.matches("</rect>").count()
            + fig.svg.matches("</text>").count();
        assert_eq!(opens, closes);
        assert_eq!(fig.svg.matches("<svg").count(), fig.svg.matches("</svg>").count());
    }

    #[test]
    fn manifest_redacts_secret_values() {
        let cfg = ModelConfig {
            provider: crate::modelio::ProviderKind::HttpOpenaiCompatible,
            model_id: "demo".into(),
            endpoint_url: Some("https://example.invalid/v1/chat/completions".into()),
            api_key_env: Some("HEC_TEST_TOKEN".into()),
            temperature: 0.0,
            max_tokens: 64,
            timeout_ms: 1000,
            retry: Default::default(),
            price: None,
            synthetic: None,
            mock_script: None,
        };
        std::env::set_var("HEC_TEST_TOKEN", "super-secret-value-1234");
        let plan = RunPlan {
            run_id: "r1".into(),
            case_set_hash: "h".into(),
            strategy_ids: vec!["baseline".into()],
            model_id: "demo".into(),
            seed: 7,
            created_at_ms: 0,
        };
        let strategies = vec![Strategy::baseline(crate::corpus::Domain::Medical)];
        let manifest = emit_manifest(&[manifest_run(&plan, None, &strategies, &cfg)]);
        assert!(manifest.contains("HEC_TEST_TOKEN"));
        assert!(!manifest.contains("super-secret-value-1234"));
    }

    #[test]
    fn empty_manifest_has_version() {
        let manifest = emit_manifest(&[]);
        let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        assert!(parsed["tool_version"].is_string());
        assert_eq!(parsed["runs"].as_array().unwrap().len(), 0);
    }
}
