use crate::error::{Error, Result};
use crate::network::NetworkSnapshot;

fn mean_abs_diff(a: &[f64], b: &[f64], acc: &mut (f64, usize)) {
    for (x, y) in a.iter().zip(b) {
        acc.0 += (y - x).abs();
        acc.1 += 1;
    }
}

/// Mean |Δθ| per layer (weights and biases together), input to output.
pub fn weight_change(prev: &NetworkSnapshot, new: &NetworkSnapshot) -> Result<Vec<f64>> {
    if prev.layer_sizes != new.layer_sizes {
        return Err(Error::contract(format!(
            "cannot compare architectures {:?} and {:?}",
            prev.layer_sizes, new.layer_sizes
        )));
    }
    weight_change_aligned(prev, new)
}

/// Like [`weight_change`], but the output layers may differ in width: only
/// the leading units present in both are compared (new units have no
/// previous value). A layer with nothing to compare reads 0.
pub fn weight_change_aligned(prev: &NetworkSnapshot, new: &NetworkSnapshot) -> Result<Vec<f64>> {
    let depth = prev.layers.len();
    let (ps, ns) = (&prev.layer_sizes, &new.layer_sizes);
    if new.layers.len() != depth || ps.len() != ns.len() || ps[..ps.len() - 1] != ns[..ns.len() - 1] {
        return Err(Error::contract(format!("cannot compare architectures {ps:?} and {ns:?}")));
    }
    Ok((0..depth)
        .map(|l| {
            let (a, b) = (&prev.layers[l], &new.layers[l]);
            let mut acc = (0.0, 0usize);
            if l + 1 == depth {
                let units = ps[l + 1].min(ns[l + 1]);
                let fan_in = ps[l];
                mean_abs_diff(&a.weights[..units * fan_in], &b.weights[..units * fan_in], &mut acc);
                mean_abs_diff(&a.bias[..units], &b.bias[..units], &mut acc);
            } else {
                mean_abs_diff(&a.weights, &b.weights, &mut acc);
                mean_abs_diff(&a.bias, &b.bias, &mut acc);
            }
            if acc.1 == 0 {
                0.0
            } else {
                acc.0 / acc.1 as f64
            }
        })
        .collect())
}
