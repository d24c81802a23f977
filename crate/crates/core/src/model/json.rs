use super::{Affine, FormatError, Layer, Network};
use serde_json::{json, Value};

pub const MODEL_SCHEMA_VERSION: u64 = 1;

/// Reads the JSON model format:
/// `{"input_dim": m, "layers": [{"type": "dense", "W": [[..]], "b": [..]}, {"type": "relu"}, ...]}`.
pub fn from_json_str(text: &str) -> Result<Network, FormatError> {
    let root: Value = serde_json::from_str(text).map_err(|e| FormatError::Syntax(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| FormatError::Syntax("top level must be an object".into()))?;
    let input_dim = obj
        .get("input_dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| FormatError::Syntax("missing or invalid `input_dim`".into()))?
        as usize;
    let layers = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| FormatError::Syntax("missing `layers` array".into()))?;
    let mut out = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let kind = layer
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| FormatError::Syntax(format!("layer {k} has no `type`")))?;
        out.push(match kind {
            "dense" | "affine" => {
                let weights = layer
                    .get("W")
                    .and_then(Value::as_array)
                    .ok_or_else(|| FormatError::Syntax(format!("layer {k}: missing `W`")))?
                    .iter()
                    .map(|row| numbers(row, k, "W"))
                    .collect::<Result<Vec<_>, _>>()?;
                let bias = numbers(
                    layer
                        .get("b")
                        .ok_or_else(|| FormatError::Syntax(format!("layer {k}: missing `b`")))?,
                    k,
                    "b",
                )?;
                Layer::Affine(Affine::new(weights, bias))
            }
            "relu" => Layer::Relu,
            "softmax" => Layer::Softmax,
            other => return Err(FormatError::UnknownLayer(other.to_string())),
        });
    }
    Network::new(input_dim, out)
}

fn numbers(v: &Value, layer: usize, field: &str) -> Result<Vec<f64>, FormatError> {
    let arr = v
        .as_array()
        .ok_or_else(|| FormatError::Syntax(format!("layer {layer}: `{field}` must be an array")))?;
    arr.iter()
        .map(|x| {
            x.as_f64().ok_or_else(|| {
                FormatError::Syntax(format!("layer {layer}: `{field}` holds a non-number"))
            })
        })
        .collect()
}

/// Serializes a network; `f64` values are written in shortest round-trip form.
pub fn to_json_string(net: &Network) -> String {
    let layers: Vec<Value> = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Affine(a) => json!({"type": "dense", "W": a.weights, "b": a.bias}),
            Layer::Relu => json!({"type": "relu"}),
            Layer::Softmax => json!({"type": "softmax"}),
        })
        .collect();
    let doc = json!({
        "schema_version": MODEL_SCHEMA_VERSION,
        "input_dim": net.input_dim(),
        "layers": layers,
    });
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let net =
            from_json_str(r#"{"input_dim":2,"layers":[{"type":"dense","W":[[1.0,-1.0]],"b":[0.0]}]}"#)
                .unwrap();
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 1);
    }

    #[test]
    fn broken_chain() {
        let err = from_json_str(
            r#"{"input_dim":2,"layers":[{"type":"dense","W":[[1.0,-1.0,3.0]],"b":[0.0]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::DimensionChain { .. }));
    }

    #[test]
    fn unknown_layer() {
        let err = from_json_str(r#"{"input_dim":2,"layers":[{"type":"conv"}]}"#).unwrap_err();
        assert!(matches!(err, FormatError::UnknownLayer(k) if k == "conv"));
    }

    #[test]
    fn written_weights_reload_bit_exactly() {
        let w = 0.1f64 + 0.2;
        let net = Network::new(
            1,
            vec![Layer::Affine(Affine::new(vec![vec![w]], vec![-1e-300]))],
        )
        .unwrap();
        let back = from_json_str(&to_json_string(&net)).unwrap();
        assert_eq!(back, net);
    }
}
