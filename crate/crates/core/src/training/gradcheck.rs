use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, Result, Sample};
use crate::model::{param_schema, Graph, ModelConfig, ModelParams, ParamRole};

/// Lower bound on the denominator of the relative error, so entries whose
/// true gradient is near zero are judged on absolute error instead.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
const MIN_ENTRIES: usize = 50;
const BIAS_JITTER: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Scalar entries compared.
    pub checked: usize,
    /// Tensor names with at least one compared entry.
    pub tensors: BTreeSet<String>,
    /// `(name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss_only(sample: &Sample, params: &ModelParams, cfg: &ModelConfig, dropout_seed: u64) -> Result<f64> {
    let mut g = Graph::new(params, cfg, true, dropout_seed);
    let out = g.forward(&sample.char_ids, Some(&sample.mel))?;
    let a = g.tape.l1_mean(out.mel, sample.mel.clone());
    let b = g.tape.l1_mean(out.linear, sample.linear.clone());
    let total = g.tape.add(a, b);
    Ok(g.value(total)[[0, 0]])
}

/// Compares reverse-mode gradients with central differences.
///
/// Every trainable tensor contributes at least one entry, and random extra
/// entries bring the total to at least 50. Zero-initialized biases are
/// first jittered by up to 0.05 so that no ReLU input sits exactly on its
/// kink (the zero `<GO>` frame would otherwise put decoder pre-net units
/// there, where the one-sided slopes differ). Relative error is
/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn finite_difference_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    sample: &Sample,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = param_schema(cfg);
    let mut base = params.clone();
    for spec in schema.iter().filter(|s| s.role == ParamRole::Bias) {
        if let Some(t) = base.get_mut(&spec.name) {
            t.mapv_inplace(|v| v + rng.gen_range(-BIAS_JITTER..BIAS_JITTER));
        }
    }
    let dropout_seed = rng.gen();
    let analytic = backward(sample, &base, cfg, dropout_seed)?.gradients;

    let trainable: Vec<&crate::model::ParamSpec> = schema.iter().filter(|s| s.role.trainable()).collect();
    let pick = |spec: &crate::model::ParamSpec, rng: &mut ChaCha8Rng| -> usize {
        if spec.name == "encoder.embedding" {
            let row = sample.char_ids[rng.gen_range(0..sample.char_ids.len())];
            row * spec.cols + rng.gen_range(0..spec.cols)
        } else {
            rng.gen_range(0..spec.rows * spec.cols)
        }
    };
    let mut entries: Vec<(String, usize)> = trainable.iter().map(|s| (s.name.clone(), pick(s, &mut rng))).collect();
    while entries.len() < MIN_ENTRIES {
        let spec = trainable[rng.gen_range(0..trainable.len())];
        entries.push((spec.name.clone(), pick(spec, &mut rng)));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        tensors: BTreeSet::new(),
        worst: None,
    };
    for (name, flat) in entries {
        let cols = base.get(&name).map_or(1, |t| t.ncols());
        let (r, c) = (flat / cols, flat % cols);
        let mut shifted = base.clone();
        let original = base.get(&name).map(|t| t[[r, c]]).unwrap_or_default();
        shifted.get_mut(&name).expect("schema name")[[r, c]] = original + epsilon;
        let plus = loss_only(sample, &shifted, cfg, dropout_seed)?;
        shifted.get_mut(&name).expect("schema name")[[r, c]] = original - epsilon;
        let minus = loss_only(sample, &shifted, cfg, dropout_seed)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.get(&name).map(|t| t[[r, c]]).unwrap_or_default();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), flat, a, numeric));
        }
        report.checked += 1;
        report.tensors.insert(name);
    }
    Ok(report)
}
