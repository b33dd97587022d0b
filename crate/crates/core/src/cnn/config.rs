use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Zero padding that preserves spatial size (odd kernels only).
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub padding: Padding,
    /// 2x2 stride-2 max pooling after the ReLU.
    pub pool: bool,
}

impl ConvSpec {
    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => self.kernel / 2,
            Padding::Valid => 0,
        }
    }
}

/// Channels x height x width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub outputs: usize,
}

/// Stage-by-stage activation shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: Shape,
    /// Post-ReLU output of each convolution.
    pub conv: Vec<Shape>,
    /// Output of each stage (pooled when the stage pools).
    pub stage: Vec<Shape>,
    pub flatten: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl NetConfig {
    /// Four conv stages (16 3x3 same, then 32/64/128 2x2 valid), each followed
    /// by 2x2 max pooling, a 100-unit ReLU layer and a 2-unit sigmoid head.
    pub fn standard() -> Self {
        let conv = |filters, kernel, padding| ConvSpec {
            filters,
            kernel,
            padding,
            pool: true,
        };
        NetConfig {
            input_size: 128,
            input_channels: 1,
            convs: vec![
                conv(16, 3, Padding::Same),
                conv(32, 2, Padding::Valid),
                conv(64, 2, Padding::Valid),
                conv(128, 2, Padding::Valid),
            ],
            hidden: 100,
            outputs: 2,
        }
    }

    /// Miniature network on 16x16 inputs with the same layer types, small
    /// enough for exhaustive finite-difference checks. The last two stages
    /// skip pooling because a 16x16 input cannot survive four halvings.
    pub fn reduced() -> Self {
        NetConfig {
            input_size: 16,
            input_channels: 1,
            convs: vec![
                ConvSpec {
                    filters: 2,
                    kernel: 3,
                    padding: Padding::Same,
                    pool: true,
                },
                ConvSpec {
                    filters: 3,
                    kernel: 2,
                    padding: Padding::Valid,
                    pool: true,
                },
                ConvSpec {
                    filters: 3,
                    kernel: 2,
                    padding: Padding::Valid,
                    pool: false,
                },
                ConvSpec {
                    filters: 4,
                    kernel: 2,
                    padding: Padding::Valid,
                    pool: false,
                },
            ],
            hidden: 5,
            outputs: 2,
        }
    }

    pub fn shapes(&self) -> Result<LayerShapes, CnnError> {
        let input = Shape::new(self.input_channels, self.input_size, self.input_size);
        let mut current = input;
        let mut conv = Vec::new();
        let mut stage = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel == 0 || c.filters == 0 {
                return Err(CnnError::Config(format!("conv {} has an empty kernel", i + 1)));
            }
            if c.padding == Padding::Same && c.kernel % 2 == 0 {
                return Err(CnnError::Config(format!(
                    "conv {}: same padding needs an odd kernel",
                    i + 1
                )));
            }
            let padded = current.height + 2 * c.pad();
            if padded < c.kernel {
                return Err(CnnError::Config(format!(
                    "conv {}: {}x{} input is smaller than its {}x{} kernel",
                    i + 1,
                    current.height,
                    current.width,
                    c.kernel,
                    c.kernel
                )));
            }
            let side = padded - c.kernel + 1;
            let out = Shape::new(c.filters, side, side);
            conv.push(out);
            current = if c.pool {
                if side < 2 {
                    return Err(CnnError::Config(format!("conv {}: nothing left to pool", i + 1)));
                }
                Shape::new(c.filters, side / 2, side / 2)
            } else {
                out
            };
            stage.push(current);
        }
        if self.hidden == 0 || self.outputs == 0 {
            return Err(CnnError::Config("dense layers must be non-empty".into()));
        }
        Ok(LayerShapes {
            input,
            conv,
            stage,
            flatten: current.len(),
            hidden: self.hidden,
            outputs: self.outputs,
        })
    }

    /// Tensor lengths in declaration order: per conv (weights, bias), then
    /// hidden (weights, bias) and output (weights, bias).
    pub fn tensor_lengths(&self) -> Result<Vec<usize>, CnnError> {
        let shapes = self.shapes()?;
        let mut lens = Vec::new();
        let mut in_ch = self.input_channels;
        for c in &self.convs {
            lens.push(c.filters * in_ch * c.kernel * c.kernel);
            lens.push(c.filters);
            in_ch = c.filters;
        }
        lens.push(self.hidden * shapes.flatten);
        lens.push(self.hidden);
        lens.push(self.outputs * self.hidden);
        lens.push(self.outputs);
        Ok(lens)
    }

    pub fn param_count(&self) -> Result<usize, CnnError> {
        Ok(self.tensor_lengths()?.iter().sum())
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
        }
        names.extend(
            ["dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }

    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}
