use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::conv::{conv_out_extent, conv_transpose_out_extent};
use crate::nn::pool::{pool_out_extent, OddExtent};

/// Per-sample shape `(C, H, W)`.
pub type SampleShape = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    Conv2dTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        odd: OddExtent,
    },
    Dense {
        in_features: usize,
        units: usize,
    },
    Activation(Activation),
    BatchNorm {
        channels: usize,
    },
    Flatten,
    Reshape {
        shape: SampleShape,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv2dTranspose { .. } => "conv2d_transpose",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::Conv2dTranspose { .. } | LayerSpec::Dense { .. } | LayerSpec::BatchNorm { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let op = self.kind();
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if kernel[0] == 0 || kernel[1] == 0 {
                    return Err(Error::invalid(op, "kernel extents must be >= 1"));
                }
                if stride == 0 {
                    return Err(Error::invalid(op, "stride must be >= 1"));
                }
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::invalid(op, "channel counts must be >= 1"));
                }
            }
            LayerSpec::MaxPool2d { window: 0, .. } => {
                return Err(Error::invalid(op, "window must be >= 1"));
            }
            LayerSpec::Dense { in_features, units } if in_features == 0 || units == 0 => {
                return Err(Error::invalid(op, "feature counts must be >= 1"));
            }
            LayerSpec::BatchNorm { channels: 0 } => {
                return Err(Error::invalid(op, "channel count must be >= 1"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape, or the reason they are incompatible.
    pub fn output_shape(&self, input: SampleShape) -> Result<SampleShape> {
        self.validate()?;
        let op = self.kind();
        let [c, h, w] = input;
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if c != in_channels {
                    return Err(Error::shape(op, "input channels", in_channels, c));
                }
                let oh = conv_out_extent(h, kernel[0], stride, padding)
                    .ok_or_else(|| Error::shape(op, "height (kernel larger than padded input)", kernel[0], h + 2 * padding))?;
                let ow = conv_out_extent(w, kernel[1], stride, padding)
                    .ok_or_else(|| Error::shape(op, "width (kernel larger than padded input)", kernel[1], w + 2 * padding))?;
                Ok([out_channels, oh, ow])
            }
            LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if c != in_channels {
                    return Err(Error::shape(op, "input channels", in_channels, c));
                }
                let oh = conv_transpose_out_extent(h, kernel[0], stride, padding)
                    .ok_or_else(|| Error::invalid(op, format!("padding {padding} too large for height {h}")))?;
                let ow = conv_transpose_out_extent(w, kernel[1], stride, padding)
                    .ok_or_else(|| Error::invalid(op, format!("padding {padding} too large for width {w}")))?;
                Ok([out_channels, oh, ow])
            }
            LayerSpec::MaxPool2d { window, odd } => {
                let oh = pool_out_extent(h, window, odd)
                    .ok_or_else(|| Error::invalid(op, format!("height {h} incompatible with window {window}")))?;
                let ow = pool_out_extent(w, window, odd)
                    .ok_or_else(|| Error::invalid(op, format!("width {w} incompatible with window {window}")))?;
                Ok([c, oh, ow])
            }
            LayerSpec::Dense { in_features, units } => {
                if c * h * w != in_features {
                    return Err(Error::shape(op, "input features", in_features, c * h * w));
                }
                Ok([units, 1, 1])
            }
            LayerSpec::Activation(_) => Ok(input),
            LayerSpec::BatchNorm { channels } => {
                if c != channels {
                    return Err(Error::shape(op, "channels", channels, c));
                }
                Ok(input)
            }
            LayerSpec::Flatten => Ok([c * h * w, 1, 1]),
            LayerSpec::Reshape { shape } => {
                let n: usize = shape.iter().product();
                if n != c * h * w {
                    return Err(Error::shape(op, "element count", c * h * w, n));
                }
                Ok(shape)
            }
        }
    }

    /// Shapes of `(weight, bias)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<([usize; 4], [usize; 4])> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(([out_channels, in_channels, kernel[0], kernel[1]], [1, out_channels, 1, 1])),
            LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(([in_channels, out_channels, kernel[0], kernel[1]], [1, out_channels, 1, 1])),
            LayerSpec::Dense { in_features, units } => Some(([units, in_features, 1, 1], [1, units, 1, 1])),
            LayerSpec::BatchNorm { channels } => Some(([1, channels, 1, 1], [1, channels, 1, 1])),
            _ => None,
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }
}

/// Chains layer specs while tracking the running shape, so channel and
/// feature counts never have to be spelled out twice.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    input: SampleShape,
    current: SampleShape,
    layers: Vec<LayerSpec>,
    latent: Option<usize>,
}

impl GraphBuilder {
    pub fn new(input: SampleShape) -> Self {
        Self {
            input,
            current: input,
            layers: Vec::new(),
            latent: None,
        }
    }

    pub fn shape(&self) -> SampleShape {
        self.current
    }

    pub fn push(mut self, layer: LayerSpec) -> Result<Self> {
        let index = self.layers.len();
        let kind = layer.kind();
        self.current = layer.output_shape(self.current).map_err(|e| Error::Layer {
            index,
            kind,
            source: Box::new(e),
        })?;
        self.layers.push(layer);
        Ok(self)
    }

    pub fn conv(self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let in_channels = self.current[0];
        self.push(LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: [kernel, kernel],
            stride,
            padding,
        })
    }

    pub fn conv_transpose(self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let in_channels = self.current[0];
        self.push(LayerSpec::Conv2dTranspose {
            in_channels,
            out_channels,
            kernel: [kernel, kernel],
            stride,
            padding,
        })
    }

    pub fn maxpool(self, window: usize, odd: OddExtent) -> Result<Self> {
        self.push(LayerSpec::MaxPool2d { window, odd })
    }

    pub fn dense(self, units: usize) -> Result<Self> {
        let in_features = self.current.iter().product();
        self.push(LayerSpec::Dense { in_features, units })
    }

    pub fn act(self, a: Activation) -> Result<Self> {
        self.push(LayerSpec::Activation(a))
    }

    pub fn batchnorm(self) -> Result<Self> {
        let channels = self.current[0];
        self.push(LayerSpec::BatchNorm { channels })
    }

    pub fn flatten(self) -> Result<Self> {
        self.push(LayerSpec::Flatten)
    }

    pub fn reshape(self, shape: SampleShape) -> Result<Self> {
        self.push(LayerSpec::Reshape { shape })
    }

    /// Marks the most recently pushed layer's output as the latent code.
    pub fn mark_latent(mut self) -> Self {
        self.latent = self.layers.len().checked_sub(1);
        self
    }

    pub fn finish(self) -> (SampleShape, Vec<LayerSpec>, Option<usize>) {
        (self.input, self.layers, self.latent)
    }
}

/// Output shape of a whole layer list; errors carry the failing layer's index.
pub fn infer_shapes(input: SampleShape, layers: &[LayerSpec]) -> Result<Vec<SampleShape>> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input);
    let mut cur = input;
    for (index, layer) in layers.iter().enumerate() {
        cur = layer.output_shape(cur).map_err(|e| Error::Layer {
            index,
            kind: layer.kind(),
            source: Box::new(e),
        })?;
        shapes.push(cur);
    }
    Ok(shapes)
}
