//! Tab-separated plot data.

use super::{CurveSet, EcrReport};
use crate::error::Result;
use crate::nn::SizeConfig;
use crate::sweep::{format_sig6, summarize, RunRecord};

/// Seed-averaged test error of every (size, precision, method) cell:
/// error against network size for float, direct and retrained networks.
pub fn size_sweep_tsv(records: &[RunRecord]) -> Result<String> {
    let mut out = String::from(
        "family\tsize_label\tlayer_size\tsize_param_count\tbits\tmethod\tseeds\ttest_error\ttest_std_error\tvalid_error\n",
    );
    let mut rows = Vec::new();
    for (k, s) in summarize(records) {
        let layer = SizeConfig::parse(k.family, &k.size_label)?.layer_size();
        rows.push((layer, k, s));
    }
    rows.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.bits.cmp(&b.1.bits))
            .then_with(|| a.1.method.cmp(&b.1.method))
    });
    for (layer, k, s) in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            k.family,
            k.size_label,
            format_sig6(layer),
            s.size_param_count,
            k.bits,
            k.method,
            s.seeds,
            format_sig6(s.test_mean),
            format_sig6(s.test_std_error),
            format_sig6(s.valid_mean),
        ));
    }
    Ok(out)
}

/// Knots of every fitted curve, raw and after the isotonic fit.
pub fn curve_tsv(curves: &CurveSet) -> String {
    let mut out = String::from("bits\tlayer_size\tmean_error\tfitted_error\n");
    let all = std::iter::once(&curves.float).chain(curves.quantized.values());
    for c in all {
        for i in 0..c.sizes().len() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.bits(),
                format_sig6(c.sizes()[i]),
                format_sig6(c.raw_errors()[i]),
                format_sig6(c.errors()[i]),
            ));
        }
    }
    out
}

/// ECR against reference layer size, one row per (reference, bits).
pub fn ecr_tsv(reports: &[EcrReport]) -> String {
    let mut out = String::from(
        "reference_size\treference_params\treference_error\tbits\tequivalent_size\tecr\textrapolated\tparam_model\n",
    );
    for r in reports {
        for e in &r.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                format_sig6(r.reference_size),
                format_sig6(r.reference_params),
                format_sig6(r.reference_error),
                e.bits,
                format_sig6(e.equivalent_size),
                format_sig6(e.ecr),
                e.extrapolated,
                r.param_model.name(),
            ));
        }
    }
    out
}
