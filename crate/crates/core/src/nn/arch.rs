use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    MnistCnn,
    MnistCnnConditional,
    Mlp,
    MlpConditional,
}

impl ArchitectureKind {
    pub fn is_conditional(self) -> bool {
        matches!(self, Self::MnistCnnConditional | Self::MlpConditional)
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Self::MnistCnn | Self::MnistCnnConditional)
    }

    /// The same backbone with the conditioning input switched on or off.
    pub fn with_conditioning(self, conditional: bool) -> Self {
        match (self.is_cnn(), conditional) {
            (true, true) => Self::MnistCnnConditional,
            (true, false) => Self::MnistCnn,
            (false, true) => Self::MlpConditional,
            (false, false) => Self::Mlp,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MnistCnn => "mnist_cnn",
            Self::MnistCnnConditional => "mnist_cnn_conditional",
            Self::Mlp => "mlp",
            Self::MlpConditional => "mlp_conditional",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist_cnn" | "cnn" => Ok(Self::MnistCnn),
            "mnist_cnn_conditional" | "cnn_conditional" => Ok(Self::MnistCnnConditional),
            "mlp" => Ok(Self::Mlp),
            "mlp_conditional" => Ok(Self::MlpConditional),
            other => Err(NnError::InvalidArchitecture(format!("unknown kind {other:?}"))),
        }
    }
}

/// A concrete network shape.
///
/// MLP: `flatten -> [f || s] -> FC(F + l -> H) -> ReLU -> FC(H -> C)`.
///
/// CNN: `Conv(ch -> c1, 3x3, pad 1) -> ReLU -> MaxPool(2) -> Conv(c1 -> c2)
/// -> ReLU -> MaxPool(2) -> flatten -> [f || s] -> FC -> ReLU -> FC`, with
/// `c1 = 32, c2 = 64` for the full-size network (3136 flattened features on
/// 28x28 inputs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchitectureKind,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub hidden_dim: usize,
    pub stats_dim: usize,
    pub conv_channels: [usize; 2],
}

impl Architecture {
    pub fn new(
        kind: ArchitectureKind,
        input_shape: Vec<usize>,
        class_count: usize,
        hidden_dim: usize,
        stats_dim: usize,
    ) -> Result<Self> {
        let arch = Self {
            kind,
            input_shape,
            class_count,
            hidden_dim,
            stats_dim: if kind.is_conditional() { stats_dim } else { 0 },
            conv_channels: [32, 64],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn mlp(input_dim: usize, class_count: usize, hidden_dim: usize) -> Result<Self> {
        Self::new(ArchitectureKind::Mlp, vec![input_dim], class_count, hidden_dim, 0)
    }

    pub fn mlp_conditional(
        input_dim: usize,
        class_count: usize,
        hidden_dim: usize,
        stats_dim: usize,
    ) -> Result<Self> {
        Self::new(
            ArchitectureKind::MlpConditional,
            vec![input_dim],
            class_count,
            hidden_dim,
            stats_dim,
        )
    }

    pub fn mnist_cnn(class_count: usize, stats_dim: Option<usize>) -> Result<Self> {
        let kind = ArchitectureKind::MnistCnn.with_conditioning(stats_dim.is_some());
        Self::new(kind, vec![1, 28, 28], class_count, 128, stats_dim.unwrap_or(0))
    }

    /// Shrinks or grows the CNN's channel counts.
    pub fn with_conv_channels(mut self, c1: usize, c2: usize) -> Result<Self> {
        self.conv_channels = [c1, c2];
        self.validate()?;
        Ok(self)
    }

    /// Same backbone and head, with or without the statistics input.
    pub fn conditioned(&self, stats_dim: Option<usize>) -> Result<Self> {
        let mut arch = self.clone();
        arch.kind = self.kind.with_conditioning(stats_dim.is_some());
        arch.stats_dim = stats_dim.unwrap_or(0);
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidArchitecture(msg));
        if self.class_count < 1 || self.hidden_dim < 1 {
            return bad("class_count and hidden_dim must be >= 1".into());
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return bad(format!("bad input shape {:?}", self.input_shape));
        }
        if self.kind.is_conditional() && self.stats_dim == 0 {
            return bad(format!("{} needs stats_dim > 0", self.kind));
        }
        if self.kind.is_cnn() {
            let (_, h, w) = self.image_dims()?;
            if h % 4 != 0 || w % 4 != 0 {
                return bad(format!("CNN input {h}x{w} must be divisible by 4"));
            }
            if self.conv_channels.contains(&0) {
                return bad("conv channels must be >= 1".into());
            }
        }
        Ok(())
    }

    /// (channels, height, width) of a CNN input.
    pub(crate) fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.input_shape.as_slice() {
            &[h, w] => Ok((1, h, w)),
            &[c, h, w] => Ok((c, h, w)),
            other => Err(NnError::InvalidArchitecture(format!(
                "CNN expects [H, W] or [C, H, W] input, got {other:?}"
            ))),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Width of the feature vector that meets the statistics vector.
    pub fn flatten_width(&self) -> usize {
        if self.kind.is_cnn() {
            let (_, h, w) = self.image_dims().expect("validated");
            self.conv_channels[1] * (h / 4) * (w / 4)
        } else {
            self.input_len()
        }
    }

    /// Input width of the first dense layer: flattened features plus `l`.
    pub fn fc1_input_width(&self) -> usize {
        self.flatten_width() + self.stats_dim
    }

    /// Stable identifier; parameters are interchangeable iff ids are equal.
    pub fn id(&self) -> String {
        let shape: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        let mut id = format!(
            "{}[in={};c={};h={}",
            self.kind,
            shape.join("x"),
            self.class_count,
            self.hidden_dim
        );
        if self.kind.is_cnn() {
            id.push_str(&format!(";conv={}-{}", self.conv_channels[0], self.conv_channels[1]));
        }
        if self.stats_dim > 0 {
            id.push_str(&format!(";l={}", self.stats_dim));
        }
        id.push(']');
        id
    }

    pub fn layout(&self) -> ParamLayout {
        let mut slots = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, fan_in: usize| {
            let offset = slots.last().map_or(0, |s: &ParamSlot| s.offset + s.len);
            let len = shape.iter().product();
            slots.push(ParamSlot {
                name: name.to_string(),
                shape,
                offset,
                len,
                fan_in,
            });
        };
        if self.kind.is_cnn() {
            let (ch, _, _) = self.image_dims().expect("validated");
            let [c1, c2] = self.conv_channels;
            push("conv1.weight", vec![c1, ch, 3, 3], ch * 9);
            push("conv1.bias", vec![c1], 0);
            push("conv2.weight", vec![c2, c1, 3, 3], c1 * 9);
            push("conv2.bias", vec![c2], 0);
        }
        let f = self.flatten_width();
        let fan_in = self.fc1_input_width();
        push("fc1.weight", vec![self.hidden_dim, f], fan_in);
        if self.stats_dim > 0 {
            push("fc1.stats_weight", vec![self.hidden_dim, self.stats_dim], fan_in);
        }
        push("fc1.bias", vec![self.hidden_dim], 0);
        push("fc2.weight", vec![self.class_count, self.hidden_dim], self.hidden_dim);
        push("fc2.bias", vec![self.class_count], 0);
        ParamLayout { slots }
    }
}

/// One named parameter tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used for initialization; 0 marks a bias (initialized to zero).
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub(crate) fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}
