//! Declarative architecture description shared by the trainable network and
//! the analytic cost counters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool1d {
        kernel: usize,
    },
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv1d { .. } | Layer::Dense { .. })
    }

    /// Shapes of (weight, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel], vec![out_channels])),
            Layer::Dense { in_dim, out_dim } => Some((vec![out_dim, in_dim], vec![out_dim])),
            _ => None,
        }
    }

    /// Propagates an activation shape through this layer.
    pub fn output_shape(&self, input: ActShape) -> Result<ActShape> {
        match (*self, input) {
            (
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                ActShape::Seq { channels, len },
            ) => {
                if channels != in_channels {
                    return Err(SimError::dim("Conv1d input channels", in_channels, channels));
                }
                if kernel == 0 || stride == 0 {
                    return Err(SimError::config("layers.conv1d", "kernel and stride must be positive"));
                }
                if len < kernel {
                    return Err(SimError::dim("Conv1d input length", format!(">= {kernel}"), len));
                }
                Ok(ActShape::Seq {
                    channels: out_channels,
                    len: (len - kernel) / stride + 1,
                })
            }
            (Layer::Conv1d { .. }, ActShape::Flat(d)) => {
                Err(SimError::dim("Conv1d input", "sequence", format!("flat({d})")))
            }
            (Layer::Relu, s) => Ok(s),
            (Layer::MaxPool1d { kernel }, ActShape::Seq { channels, len }) => {
                if kernel == 0 || len < kernel {
                    return Err(SimError::dim("MaxPool1d input length", format!(">= {kernel}"), len));
                }
                Ok(ActShape::Seq {
                    channels,
                    len: len / kernel,
                })
            }
            (Layer::MaxPool1d { .. }, ActShape::Flat(d)) => {
                Err(SimError::dim("MaxPool1d input", "sequence", format!("flat({d})")))
            }
            (Layer::Flatten, s) => Ok(ActShape::Flat(s.numel())),
            (Layer::Dense { in_dim, out_dim }, s) => {
                if s.numel() != in_dim {
                    return Err(SimError::dim("Dense input dim", in_dim, s.numel()));
                }
                Ok(ActShape::Flat(out_dim))
            }
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Seq { channels, len } => channels * len,
            ActShape::Flat(d) => d,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Seq { channels, len } => vec![channels, len],
            ActShape::Flat(d) => vec![d],
        }
    }

    /// Interprets a per-sample array shape (without the batch axis).
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            [d] => Ok(ActShape::Flat(*d)),
            [c, l] => Ok(ActShape::Seq { channels: *c, len: *l }),
            other => Err(SimError::dim("input rank", "[B, C, L] or [B, D]", format!("{other:?}"))),
        }
    }
}

/// Encoder layer list plus the projection and classifier heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<Layer>,
    pub encoder_output_dim: usize,
    pub projection_dim: usize,
    pub num_classes: usize,
}

impl ArchSpec {
    /// The default 1D-CNN encoder: two conv/ReLU/pool stages then a dense
    /// layer to `d_enc = 128`, with a 64-wide projection head.
    pub fn default_cnn(total_channels: usize, window_len: usize, num_classes: usize) -> Result<Self> {
        Self::cnn(total_channels, window_len, num_classes, [32, 64], 8, 128, 64)
    }

    pub fn cnn(
        total_channels: usize,
        window_len: usize,
        num_classes: usize,
        conv_channels: [usize; 2],
        kernel: usize,
        d_enc: usize,
        d_proj: usize,
    ) -> Result<Self> {
        let mut layers = vec![
            Layer::Conv1d {
                in_channels: total_channels,
                out_channels: conv_channels[0],
                kernel,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool1d { kernel: 2 },
            Layer::Conv1d {
                in_channels: conv_channels[0],
                out_channels: conv_channels[1],
                kernel,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool1d { kernel: 2 },
            Layer::Flatten,
        ];
        let mut shape = ActShape::Seq {
            channels: total_channels,
            len: window_len,
        };
        for layer in &layers {
            shape = layer.output_shape(shape)?;
        }
        layers.push(Layer::Dense {
            in_dim: shape.numel(),
            out_dim: d_enc,
        });
        let arch = Self {
            layers,
            encoder_output_dim: d_enc,
            projection_dim: d_proj,
            num_classes,
        };
        arch.validate_for_input(ActShape::Seq {
            channels: total_channels,
            len: window_len,
        })?;
        Ok(arch)
    }

    pub fn validate_heads(&self) -> Result<()> {
        if self.encoder_output_dim == 0 {
            return Err(SimError::config("arch.encoder_output_dim", "must be > 0"));
        }
        if self.projection_dim == 0 {
            return Err(SimError::config("arch.projection_dim", "must be > 0"));
        }
        if self.num_classes < 2 {
            return Err(SimError::config("arch.num_classes", "must be >= 2"));
        }
        Ok(())
    }

    /// Checks that the layer chain accepts `input` and ends in `d_enc` features.
    pub fn validate_for_input(&self, input: ActShape) -> Result<Vec<ActShape>> {
        self.validate_heads()?;
        let shapes = self.activation_shapes(input)?;
        let last = *shapes.last().expect("input shape is always present");
        if last != ActShape::Flat(self.encoder_output_dim) {
            return Err(SimError::dim(
                "encoder output",
                format!("flat({})", self.encoder_output_dim),
                format!("{last:?}"),
            ));
        }
        Ok(shapes)
    }

    /// Activation shapes before the first layer and after every layer.
    pub fn activation_shapes(&self, input: ActShape) -> Result<Vec<ActShape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push(input);
        let mut s = input;
        for layer in &self.layers {
            s = layer.output_shape(s)?;
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Input channel count expected by the first layer, if it is a convolution.
    pub fn input_channels(&self) -> Option<usize> {
        match self.layers.first() {
            Some(Layer::Conv1d { in_channels, .. }) => Some(*in_channels),
            _ => None,
        }
    }

    pub fn projection_layer(&self) -> Layer {
        Layer::Dense {
            in_dim: self.encoder_output_dim,
            out_dim: self.projection_dim,
        }
    }

    pub fn classifier_layer(&self) -> Layer {
        Layer::Dense {
            in_dim: self.encoder_output_dim,
            out_dim: self.num_classes,
        }
    }
}
