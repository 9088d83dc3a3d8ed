//! Effective compression ratio: compares a float network against the
//! quantized network size that reaches the same error.

mod isotonic;
mod plot;

pub use isotonic::isotonic_non_increasing;
pub use plot::{curve_tsv, ecr_tsv, size_sweep_tsv};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Family, SizeConfig, CNN_FC_UNITS, CNN_INPUT, CNN_OUTPUTS, FCDNN_HIDDEN_LAYERS};
use crate::sweep::{format_sig6, Method, Precision, RunRecord};

/// Word length of the floating-point reference.
pub const FLOAT_BITS: u32 = 32;

/// Header of the ECR report CSV.
pub const ECR_HEADER: &str = "reference_size,reference_error,bits,equivalent_size,ecr,extrapolated";

/// Error as a function of layer size for one precision: knots with
/// strictly increasing size and non-increasing error, linear in log2(size)
/// between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceCurve {
    bits: Precision,
    sizes: Vec<f64>,
    errors: Vec<f64>,
    raw_errors: Vec<f64>,
}

impl PerformanceCurve {
    /// Builds a curve from (size, error) observations. Repeated sizes are
    /// averaged, then a non-increasing isotonic fit is applied.
    pub fn from_points(bits: Precision, points: &[(f64, f64)]) -> Result<Self> {
        let mut by_size: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for &(size, err) in points {
            if !(size > 0.0 && size.is_finite()) {
                return Err(Error::InvalidArgument(format!("size {size} is not positive")));
            }
            if !(0.0..=1.0).contains(&err) {
                return Err(Error::InvalidArgument(format!("error {err} outside [0, 1]")));
            }
            let e = by_size.entry(size.to_bits()).or_insert((0.0, 0));
            e.0 += err;
            e.1 += 1;
        }
        if by_size.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a {bits} curve needs at least 2 distinct sizes, got {}",
                by_size.len()
            )));
        }
        let mut knots: Vec<(f64, f64)> = by_size
            .into_iter()
            .map(|(s, (sum, n))| (f64::from_bits(s), sum / n as f64))
            .collect();
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sizes: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let raw_errors: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let errors = isotonic_non_increasing(&raw_errors, &vec![1.0; raw_errors.len()]);
        Ok(Self {
            bits,
            sizes,
            errors,
            raw_errors,
        })
    }

    pub fn bits(&self) -> Precision {
        self.bits
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    /// Fitted (non-increasing) errors at the knots.
    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Seed-averaged errors at the knots before the isotonic fit.
    pub fn raw_errors(&self) -> &[f64] {
        &self.raw_errors
    }

    pub fn min_size(&self) -> f64 {
        self.sizes[0]
    }

    pub fn max_size(&self) -> f64 {
        *self.sizes.last().expect("at least 2 knots")
    }

    /// Interpolated error at `size`, or `None` outside the observed range.
    pub fn error_at(&self, size: f64) -> Option<f64> {
        if !(size >= self.min_size() && size <= self.max_size()) {
            return None;
        }
        let i = self.sizes.partition_point(|&s| s < size);
        if self.sizes[i] == size {
            return Some(self.errors[i]);
        }
        let (x0, x1) = (self.sizes[i - 1].log2(), self.sizes[i].log2());
        let t = (size.log2() - x0) / (x1 - x0);
        Some(self.errors[i - 1] + t * (self.errors[i] - self.errors[i - 1]))
    }

    /// Smallest size whose interpolated error is at most `target`. Targets
    /// outside the curve's error range clamp to the nearest end of the size
    /// range and set the extrapolated flag.
    pub fn equivalent_size(&self, target: f64) -> Result<(f64, bool)> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::InvalidArgument(format!("target error {target} outside [0, 1]")));
        }
        let last = self.errors.len() - 1;
        if target < self.errors[last] {
            return Ok((self.max_size(), true));
        }
        if target > self.errors[0] {
            return Ok((self.min_size(), true));
        }
        let i = self.errors.iter().position(|&e| e <= target).expect("target >= last error");
        if i == 0 {
            return Ok((self.min_size(), false));
        }
        let (e0, e1) = (self.errors[i - 1], self.errors[i]);
        let (x0, x1) = (self.sizes[i - 1].log2(), self.sizes[i].log2());
        let x = x0 + (e0 - target) / (e0 - e1) * (x1 - x0);
        Ok((x.exp2(), false))
    }
}

/// Seed-averaged curve from the records of one family, method and precision.
/// Sizes are layer sizes (hidden width or last-stage map count). Test error
/// is used.
pub fn fit_monotone_curve(records: &[RunRecord]) -> Result<PerformanceCurve> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no records to fit".into()))?;
    let mut points = Vec::with_capacity(records.len());
    for r in records {
        if r.bits != first.bits || r.family != first.family {
            return Err(Error::InvalidArgument(
                "records for one curve must share family and precision".into(),
            ));
        }
        let size = SizeConfig::parse(r.family, &r.size_label)?.layer_size();
        points.push((size, r.test_error));
    }
    PerformanceCurve::from_points(first.bits, &points)
}

/// Exact parameter count as a function of layer size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamCounter {
    /// `FCDNN_HIDDEN_LAYERS` hidden layers of width N.
    Fcdnn { inputs: usize, outputs: usize },
    /// Feature maps (N/2, N/2, N) on `channels × side × side` inputs.
    Cnn {
        channels: usize,
        side: usize,
        fc_units: usize,
        outputs: usize,
    },
}

impl ParamCounter {
    /// The CIFAR-10 CNN.
    pub fn cifar_cnn() -> Self {
        ParamCounter::Cnn {
            channels: CNN_INPUT[0],
            side: CNN_INPUT[1],
            fc_units: CNN_FC_UNITS,
            outputs: CNN_OUTPUTS,
        }
    }

    /// Weights plus biases at layer size `n`. Fractional sizes are allowed.
    pub fn count(&self, n: f64) -> f64 {
        match *self {
            ParamCounter::Fcdnn { inputs, outputs } => {
                let (i, o) = (inputs as f64, outputs as f64);
                let inner = (FCDNN_HIDDEN_LAYERS - 1) as f64;
                (i + 1.0) * n + inner * (n + 1.0) * n + (n + 1.0) * o
            }
            ParamCounter::Cnn {
                channels,
                side,
                fc_units,
                outputs,
            } => {
                let (m1, m2, m3) = (n / 2.0, n / 2.0, n);
                let k = 25.0;
                let flat = (side / 8).pow(2) as f64 * m3;
                let fc = fc_units as f64;
                (k * channels as f64 + 1.0) * m1
                    + (k * m1 + 1.0) * m2
                    + (k * m2 + 1.0) * m3
                    + (flat + 1.0) * fc
                    + (fc + 1.0) * outputs as f64
            }
        }
    }

    /// Infers the counter from sweep records. For FCDNNs the input and
    /// output widths are solved from two records of different size; CNNs
    /// are assumed to use the CIFAR-10 input.
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let family = records
            .first()
            .ok_or_else(|| Error::InvalidArgument("no records".into()))?
            .family;
        match family {
            Family::Cnn => Ok(Self::cifar_cnn()),
            Family::Fcdnn => {
                let mut seen: BTreeMap<u64, u64> = BTreeMap::new();
                for r in records.iter().filter(|r| r.family == Family::Fcdnn) {
                    let n = SizeConfig::parse(r.family, &r.size_label)?.layer_size() as u64;
                    seen.insert(n, r.size_param_count);
                }
                let mut it = seen.iter();
                let (Some((&n1, &p1)), Some((&n2, &p2))) = (it.next(), it.next()) else {
                    return Err(Error::InvalidArgument(
                        "need two FCDNN sizes to infer layer widths".into(),
                    ));
                };
                // P(N) = h N^2 + a N + b with a = inputs + outputs + h + 1 and b = outputs.
                let h = (FCDNN_HIDDEN_LAYERS - 1) as i128;
                let (n1, n2, p1, p2) = (n1 as i128, n2 as i128, p1 as i128, p2 as i128);
                let r1 = p1 - h * n1 * n1;
                let r2 = p2 - h * n2 * n2;
                let bad = || Error::InvalidArgument("parameter counts do not fit an FCDNN".into());
                if (r2 - r1) % (n2 - n1) != 0 {
                    return Err(bad());
                }
                let a = (r2 - r1) / (n2 - n1);
                let b = r1 - a * n1;
                let inputs = a - b - h - 1;
                if b <= 0 || inputs <= 0 {
                    return Err(bad());
                }
                let counter = ParamCounter::Fcdnn {
                    inputs: inputs as usize,
                    outputs: b as usize,
                };
                for (&n, &p) in &seen {
                    if counter.count(n as f64) != p as f64 {
                        return Err(bad());
                    }
                }
                Ok(counter)
            }
        }
    }
}

/// How the parameter count P(N) of a layer size is modeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamModel {
    Exact(ParamCounter),
    /// P(N) = N².
    SquareApprox,
}

impl ParamModel {
    pub fn count(&self, n: f64) -> f64 {
        match self {
            ParamModel::Exact(c) => c.count(n),
            ParamModel::SquareApprox => n * n,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamModel::Exact(_) => "exact",
            ParamModel::SquareApprox => "square_approx",
        }
    }
}

/// ECR = (float_bits · P(float_size)) / (quant_bits · P(equivalent_size)).
pub fn compute_ecr(
    float_bits: u32,
    float_size: f64,
    quant_bits: u32,
    equivalent_size: f64,
    model: &ParamModel,
) -> f64 {
    (float_bits as f64 * model.count(float_size))
        / (quant_bits as f64 * model.count(equivalent_size))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcrEntry {
    pub bits: u32,
    pub equivalent_size: f64,
    pub ecr: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcrReport {
    pub reference_size: f64,
    pub reference_params: f64,
    pub reference_error: f64,
    pub param_model: ParamModel,
    pub entries: Vec<EcrEntry>,
}

/// Fitted curves for one family: the float curve and one per bit width.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub float: PerformanceCurve,
    pub quantized: BTreeMap<u32, PerformanceCurve>,
}

/// Fits the float curve and, for each bit width, the curve of `method`.
pub fn fit_curves(records: &[RunRecord], method: Method) -> Result<CurveSet> {
    let float: Vec<RunRecord> = records
        .iter()
        .filter(|r| r.method == Method::Float)
        .cloned()
        .collect();
    if float.is_empty() {
        return Err(Error::InvalidArgument("records contain no float32 curve".into()));
    }
    let float = fit_monotone_curve(&float)?;
    let mut by_bits: BTreeMap<u32, Vec<RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == method) {
        if let Precision::Bits(b) = r.bits {
            by_bits.entry(b).or_default().push(r.clone());
        }
    }
    if by_bits.is_empty() {
        return Err(Error::InvalidArgument(format!("records contain no {method} curve")));
    }
    let quantized = by_bits
        .into_iter()
        .map(|(b, rs)| Ok((b, fit_monotone_curve(&rs)?)))
        .collect::<Result<_>>()?;
    Ok(CurveSet { float, quantized })
}

/// One report per reference size: the target is the float curve's error at
/// that size, and each bit width's curve is solved for its equivalent size.
pub fn build_ecr_report(
    curves: &CurveSet,
    reference_sizes: &[f64],
    model: &ParamModel,
) -> Result<Vec<EcrReport>> {
    reference_sizes
        .iter()
        .map(|&reference_size| {
            let reference_error = curves.float.error_at(reference_size).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "reference size {reference_size} outside the float curve [{}, {}]",
                    curves.float.min_size(),
                    curves.float.max_size()
                ))
            })?;
            let entries = curves
                .quantized
                .iter()
                .map(|(&bits, curve)| {
                    let (equivalent_size, extrapolated) = curve.equivalent_size(reference_error)?;
                    Ok(EcrEntry {
                        bits,
                        equivalent_size,
                        ecr: compute_ecr(FLOAT_BITS, reference_size, bits, equivalent_size, model),
                        extrapolated,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EcrReport {
                reference_size,
                reference_params: model.count(reference_size),
                reference_error,
                param_model: *model,
                entries,
            })
        })
        .collect()
}

/// Renders reports in the ECR CSV format.
pub fn ecr_csv(reports: &[EcrReport]) -> String {
    let mut out = format!("{ECR_HEADER}\n");
    for r in reports {
        for e in &r.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_sig6(r.reference_size),
                format_sig6(r.reference_error),
                e.bits,
                format_sig6(e.equivalent_size),
                format_sig6(e.ecr),
                e.extrapolated
            ));
        }
    }
    out
}

pub fn write_ecr_csv(reports: &[EcrReport], path: &Path) -> Result<()> {
    fs::write(path, ecr_csv(reports)).map_err(|e| Error::io(path, e))
}
