//! Reader and writer for the NNet text format used by ACAS-style networks.
//!
//! Layout: `//` comment lines, then a header line
//! `numLayers, inputSize, outputSize, maxLayerSize`, the layer sizes, an
//! unused flag line, four normalisation lines (min, max, mean, range), then
//! for every layer its weight rows followed by one bias per line. Hidden
//! layers are followed by ReLU; the last layer is linear.

use super::{Affine, FormatError, Layer, Network, Normalization};
use std::fmt::Write;

pub fn from_nnet_str(text: &str) -> Result<Network, FormatError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"));
    let mut next_row = |what: &str| -> Result<Vec<f64>, FormatError> {
        let line = lines
            .next()
            .ok_or_else(|| FormatError::Syntax(format!("unexpected end of file reading {what}")))?;
        line.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| FormatError::Syntax(format!("bad number `{s}` in {what}")))
            })
            .collect()
    };

    let header = next_row("header")?;
    if header.len() < 3 {
        return Err(FormatError::Syntax("header needs at least 3 fields".into()));
    }
    let num_layers = as_count(header[0], "numLayers")?;
    let input_size = as_count(header[1], "inputSize")?;
    let output_size = as_count(header[2], "outputSize")?;
    let sizes = next_row("layer sizes")?
        .into_iter()
        .map(|v| as_count(v, "layer size"))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.len() != num_layers + 1 {
        return Err(FormatError::Syntax(format!(
            "expected {} layer sizes, found {}",
            num_layers + 1,
            sizes.len()
        )));
    }
    if sizes[0] != input_size || sizes[num_layers] != output_size {
        return Err(FormatError::Syntax(
            "layer sizes disagree with input/output size".into(),
        ));
    }
    let _symmetric = next_row("flag line")?;
    let normalization = Normalization {
        input_min: next_row("input minimums")?,
        input_max: next_row("input maximums")?,
        means: next_row("means")?,
        ranges: next_row("ranges")?,
    };

    let mut layers = Vec::new();
    for k in 0..num_layers {
        let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
        let mut weights = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let row = next_row(&format!("layer {k} weight row {r}"))?;
            if row.len() != fan_in {
                return Err(FormatError::DimensionChain {
                    layer: k,
                    detail: format!("weight row {r} has {} entries, expected {fan_in}", row.len()),
                });
            }
            weights.push(row);
        }
        let mut bias = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let b = next_row(&format!("layer {k} bias {r}"))?;
            if b.len() != 1 {
                return Err(FormatError::Syntax(format!(
                    "layer {k} bias {r}: expected one value per line"
                )));
            }
            bias.push(b[0]);
        }
        layers.push(Layer::Affine(Affine::new(weights, bias)));
        if k + 1 < num_layers {
            layers.push(Layer::Relu);
        }
    }
    let mut net = Network::new(input_size, layers)?;
    net.normalization = Some(normalization);
    Ok(net)
}

fn as_count(v: f64, what: &str) -> Result<usize, FormatError> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(FormatError::Syntax(format!("{what} must be a positive integer")))
    }
}

/// Writes a network in NNet layout. Only alternating affine/ReLU stacks ending
/// in an affine layer are representable.
pub fn to_nnet_string(net: &Network) -> Result<String, FormatError> {
    let mut affine = Vec::new();
    for (k, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Affine(a) => affine.push(a),
            Layer::Relu if k % 2 == 1 && k + 1 < net.layers().len() => {}
            _ => {
                return Err(FormatError::Syntax(format!(
                    "layer {k} cannot be expressed in NNet (need affine/relu alternation)"
                )))
            }
        }
    }
    let mut sizes = vec![net.input_dim()];
    sizes.extend(affine.iter().map(|a| a.out_dim()));
    let mut out = String::from("// written by nnspec\n");
    let max = sizes.iter().max().copied().unwrap_or(0);
    let _ = writeln!(out, "{},{},{},{},", affine.len(), net.input_dim(), net.output_dim(), max);
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",") + ",";
    let _ = writeln!(out, "{}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",") + ",");
    out.push_str("0,\n");
    let norm = net.normalization.clone().unwrap_or_else(|| Normalization {
        input_min: vec![f64::MIN; net.input_dim()],
        input_max: vec![f64::MAX; net.input_dim()],
        means: vec![0.0; net.input_dim() + 1],
        ranges: vec![1.0; net.input_dim() + 1],
    });
    for row in [&norm.input_min, &norm.input_max, &norm.means, &norm.ranges] {
        let _ = writeln!(out, "{}", join(row));
    }
    for a in affine {
        for row in &a.weights {
            let _ = writeln!(out, "{}", join(row));
        }
        for b in &a.bias {
            let _ = writeln!(out, "{b:?},");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acas_like() -> String {
        // 5 inputs, one hidden layer of 3, 5 outputs
        let mut s = String::from("// ACAS-style test network\n// second comment\n");
        s.push_str("2,5,5,5,\n5,3,5,\n0,\n");
        s.push_str("0.0,-3.14,-3.14,100.0,0.0,\n60760.0,3.14,3.14,1200.0,1200.0,\n");
        s.push_str("19791.0,0.0,0.0,650.0,600.0,7.5,\n60261.0,6.28,6.28,1100.0,1200.0,373.9,\n");
        for r in 0..3 {
            s.push_str(&format!("{}.5,0.1,-0.2,0.3,0.0,\n", r));
        }
        for _ in 0..3 {
            s.push_str("0.25,\n");
        }
        for r in 0..5 {
            s.push_str(&format!("1.0,{}.0,-1.0,\n", r));
        }
        for _ in 0..5 {
            s.push_str("-0.5,\n");
        }
        s
    }

    #[test]
    fn reads_acas_style_file() {
        let net = from_nnet_str(&acas_like()).unwrap();
        assert_eq!(net.input_dim(), 5);
        assert_eq!(net.output_dim(), 5);
        assert_eq!(net.layers().len(), 3);
        let norm = net.normalization.as_ref().unwrap();
        assert_eq!(norm.means.len(), 6);
        assert_eq!(norm.input_max[0], 60760.0);
    }

    #[test]
    fn round_trip_through_writer() {
        let net = from_nnet_str(&acas_like()).unwrap();
        let back = from_nnet_str(&to_nnet_string(&net).unwrap()).unwrap();
        assert_eq!(back.layers(), net.layers());
        assert_eq!(back.normalization, net.normalization);
    }

    #[test]
    fn short_weight_row_is_rejected() {
        let text = acas_like().replacen("0.5,0.1,-0.2,0.3,0.0,", "0.5,0.1,", 1);
        assert!(matches!(
            from_nnet_str(&text),
            Err(FormatError::DimensionChain { .. })
        ));
    }
}
