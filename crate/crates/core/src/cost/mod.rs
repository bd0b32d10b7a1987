//! Analytic parameter, MAC and communication-time accounting.

mod fusion;

pub use fusion::{
    fusion_cost, scalability_sweep, write_sweep_csv, write_sweep_json, CostReport, EncoderTemplate, Fusion, FusionCostSpec,
    FusionHeadSpec, ImputerSpec, SweepConfig, SweepRow, SweepStrategy,
};

use crate::error::{Result, SimError};
use crate::nn::{ActShape, ArchSpec, Layer};

/// Trainable parameters of one layer.
pub fn layer_params(layer: &Layer) -> u64 {
    match *layer {
        Layer::Conv1d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => (out_channels * in_channels * kernel + out_channels) as u64,
        Layer::Dense { in_dim, out_dim } => (out_dim * in_dim + out_dim) as u64,
        _ => 0,
    }
}

/// Multiply-accumulates of one layer for one sample, and its output shape.
pub fn layer_macs(layer: &Layer, input: ActShape) -> Result<(u64, ActShape)> {
    let out = layer.output_shape(input)?;
    let macs = match (*layer, out) {
        (
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            },
            ActShape::Seq { len, .. },
        ) => (len * out_channels * in_channels * kernel) as u64,
        (Layer::Dense { in_dim, out_dim }, _) => (in_dim * out_dim) as u64,
        _ => 0,
    };
    Ok((macs, out))
}

pub fn sum_params(layers: &[Layer]) -> u64 {
    layers.iter().map(layer_params).sum()
}

/// MACs of a layer chain on one sample with the given input shape.
pub fn sum_macs(layers: &[Layer], input: ActShape) -> Result<(u64, ActShape)> {
    let mut total = 0;
    let mut shape = input;
    for l in layers {
        let (m, s) = layer_macs(l, shape)?;
        total += m;
        shape = s;
    }
    Ok((total, shape))
}

/// Encoder layers only.
pub fn encoder_params(arch: &ArchSpec) -> u64 {
    sum_params(&arch.layers)
}

/// Every trainable parameter: encoder, projection head and classifier.
pub fn count_params(arch: &ArchSpec) -> u64 {
    encoder_params(arch) + layer_params(&arch.projection_layer()) + layer_params(&arch.classifier_layer())
}

fn input_shape(arch: &ArchSpec, input_len: usize) -> Result<ActShape> {
    match arch.layers.first() {
        Some(Layer::Conv1d { in_channels, .. }) => Ok(ActShape::Seq {
            channels: *in_channels,
            len: input_len,
        }),
        Some(Layer::Dense { in_dim, .. }) => Ok(ActShape::Flat(*in_dim)),
        _ => Err(SimError::config("arch.layers", "first layer must be Conv1d or Dense")),
    }
}

/// Encoder MACs per sample for a window of `input_len` steps.
pub fn encoder_macs(arch: &ArchSpec, input_len: usize) -> Result<u64> {
    Ok(sum_macs(&arch.layers, input_shape(arch, input_len)?)?.0)
}

/// Per-sample MACs of the encoder plus both heads.
pub fn count_macs(arch: &ArchSpec, input_len: usize) -> Result<u64> {
    let heads = (arch.encoder_output_dim * (arch.projection_dim + arch.num_classes)) as u64;
    Ok(encoder_macs(arch, input_len)? + heads)
}

/// Returns `arch` with its first convolution reading `channels` inputs.
pub fn with_input_channels(arch: &ArchSpec, channels: usize) -> Result<ArchSpec> {
    let mut out = arch.clone();
    match out.layers.first_mut() {
        Some(Layer::Conv1d { in_channels, .. }) => *in_channels = channels,
        _ => return Err(SimError::config("encoder.layers[0]", "template must start with Conv1d")),
    }
    Ok(out)
}

fn check_speed(up: f64, down: f64) -> Result<()> {
    if !(up > 0.0 && down > 0.0 && up.is_finite() && down.is_finite()) {
        return Err(SimError::config("speeds", format!("link speeds must be positive, got up={up} down={down}")));
    }
    Ok(())
}

/// Download plus upload time of `bytes` for one client, in seconds.
pub fn client_comm_seconds(bytes: f64, upload_bps: f64, download_bps: f64) -> Result<f64> {
    check_speed(upload_bps, download_bps)?;
    let bits = bytes * 8.0;
    Ok(bits / download_bps + bits / upload_bps)
}

/// Synchronous round time: the slowest selected client's exchange time.
/// `speeds` holds `(upload_bps, download_bps)` per selected client.
pub fn round_comm_seconds(bytes: f64, speeds: &[(f64, f64)]) -> Result<f64> {
    speeds
        .iter()
        .try_fold(0.0f64, |acc, &(up, down)| Ok(acc.max(client_comm_seconds(bytes, up, down)?)))
}

/// Total exchange time over rounds; `selections[t]` indexes into `speeds`.
pub fn simulate_comm(bytes_per_round: f64, speeds: &[(f64, f64)], selections: &[Vec<usize>]) -> Result<f64> {
    for &(up, down) in speeds {
        check_speed(up, down)?;
    }
    let mut total = 0.0;
    for sel in selections {
        let chosen: Vec<(f64, f64)> = sel
            .iter()
            .map(|&i| speeds.get(i).copied().ok_or_else(|| SimError::dim("selected client", format!("< {}", speeds.len()), i)))
            .collect::<Result<_>>()?;
        total += round_comm_seconds(bytes_per_round, &chosen)?;
    }
    Ok(total)
}
