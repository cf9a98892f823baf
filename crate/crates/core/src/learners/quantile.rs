use crate::data::QuantileLevel;
use crate::error::{invalid, Result};

/// Index (1-based) of the lower empirical quantile, `ceil(alpha * n)`,
/// computed exactly for the binary value of `alpha`.
pub(crate) fn lower_quantile_rank(alpha: f64, n: usize) -> usize {
    let nf = n as f64;
    let p = alpha * nf;
    // exact residual of the rounded product
    let err = alpha.mul_add(nf, -p);
    let rank = if p.fract() == 0.0 {
        if err > 0.0 {
            p + 1.0
        } else {
            p
        }
    } else {
        p.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Lower empirical `alpha`-quantile: the `ceil(alpha * n)`-th order statistic.
///
/// Always one of the input values and always a minimiser of the empirical
/// pinball loss over constants.
pub fn empirical_quantile(values: &[f64], alpha: QuantileLevel) -> Result<f64> {
    if values.is_empty() {
        return invalid("empirical quantile of an empty sample");
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("empirical quantile of a sample containing NaN");
    }
    let mut buf = values.to_vec();
    Ok(select_lower_quantile(&mut buf, alpha.value()))
}

/// In-place variant for hot paths; `values` must be nonempty and NaN-free.
pub(crate) fn select_lower_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let rank = lower_quantile_rank(alpha, values.len());
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

/// Per-column z-scoring fitted on training covariates. Columns with zero
/// spread are only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut constant = vec![false; dim];
        let scale = var
            .iter()
            .zip(constant.iter_mut())
            .map(|(s, c)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    *c = true;
                    1.0
                }
            })
            .collect();
        Standardizer {
            mean,
            scale,
            constant,
        }
    }

    #[inline]
    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.transform_into(x, &mut out);
        out
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.constant[j]
    }

    pub(crate) fn hash_into(&self, h: &mut crate::numeric::Fnv1a) {
        for (m, s) in self.mean.iter().zip(&self.scale) {
            h.write_f64(*m);
            h.write_f64(*s);
        }
    }
}
