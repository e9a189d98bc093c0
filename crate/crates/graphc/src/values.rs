//! Input values given on the command line, and default inputs.

use graphc_core::{DType, Dim, Graph, Tensor, TensorType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn flatten(v: &Value, depth: usize, shape: &mut Vec<usize>, data: &mut Vec<f64>) -> Result<(), String> {
    match v {
        Value::Number(n) => {
            if depth != shape.len() {
                return Err("ragged array".into());
            }
            data.push(n.as_f64().ok_or("number out of range")?);
        }
        Value::Array(items) => {
            if depth == shape.len() && data.is_empty() {
                shape.push(items.len());
            } else if depth >= shape.len() || shape[depth] != items.len() {
                return Err("ragged array".into());
            }
            for it in items {
                flatten(it, depth + 1, shape, data)?;
            }
        }
        _ => return Err("expected a number or an array of numbers".into()),
    }
    Ok(())
}

/// Parses a JSON number or nested array as a value of type `ty`.
pub fn parse_value(text: &str, ty: &TensorType) -> Result<Tensor, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let (mut shape, mut data) = (Vec::new(), Vec::new());
    flatten(&v, 0, &mut shape, &mut data)?;
    if !ty.dtype.is_float() && data.iter().any(|x| x.fract() != 0.0) {
        return Err(format!("{} values must be integers", ty.dtype.name()));
    }
    if !ty.admits_shape(&shape) {
        return Err(format!("shape {shape:?} does not fit {ty}"));
    }
    Tensor::new(ty.dtype, shape, data).map_err(|e| e.to_string())
}

/// Values for the inputs of `g`: `given` entries by name, the rest seeded
/// random (floats in [-1, 1), integers 0). Unknown extents become 3.
pub fn inputs_for(g: &Graph, given: &[(String, String)], seed: u64) -> Result<Vec<Tensor>, String> {
    for (name, _) in given {
        if !g.inputs.iter().any(|v| v.name() == Some(name)) {
            return Err(format!("the function has no input `{name}`"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.inputs
        .iter()
        .map(|v| {
            let name = v.name().unwrap_or("?");
            if let Some((_, text)) = given.iter().find(|(n, _)| n == name) {
                return parse_value(text, v.ty()).map_err(|e| format!("input `{name}`: {e}"));
            }
            let shape: Vec<usize> = v.ty().dims.iter().map(|d| if let Dim::Known(n) = d { *n } else { 3 }).collect();
            let n = shape.iter().product();
            let data = match v.ty().dtype {
                DType::F64 | DType::F32 => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                _ => vec![0.0; n],
            };
            Tensor::new(v.ty().dtype, shape, data).map_err(|e| e.to_string())
        })
        .collect()
}
