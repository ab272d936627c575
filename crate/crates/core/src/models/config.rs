use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};

/// Version of the architecture document schema.
pub const SCHEMA_VERSION: u32 = 1;

/// One convolution stage: kernel width and filter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub width: usize,
    pub filters: usize,
}

/// A sub-network reading the shared embedding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubnetConfig {
    /// Stacked convolution blocks followed by global max pooling. No
    /// intermediate pooling.
    Textcnn { layers: Vec<ConvSpec> },
    /// Unidirectional LSTM; the feature is the final hidden state.
    Lstm { hidden: usize },
    /// Bidirectional LSTM; the feature is both final states side by side.
    Bilstm { hidden: usize },
    /// Deep CNN with windowed max pooling after every `pool_every` blocks,
    /// then global max pooling.
    Vgg {
        layers: Vec<ConvSpec>,
        pool_every: usize,
        pool_window: usize,
        pool_stride: usize,
    },
}

impl SubnetConfig {
    /// Width of the feature vector this sub-network contributes.
    pub fn output_width(&self) -> usize {
        match self {
            SubnetConfig::Textcnn { layers } | SubnetConfig::Vgg { layers, .. } => {
                layers.last().map_or(0, |l| l.filters)
            }
            SubnetConfig::Lstm { hidden } => *hidden,
            SubnetConfig::Bilstm { hidden } => 2 * hidden,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SubnetConfig::Textcnn { .. } => "textcnn",
            SubnetConfig::Lstm { .. } => "lstm",
            SubnetConfig::Bilstm { .. } => "bilstm",
            SubnetConfig::Vgg { .. } => "vgg",
        }
    }

    /// Largest kernel width in a convolutional sub-network.
    pub fn max_kernel_width(&self) -> usize {
        match self {
            SubnetConfig::Textcnn { layers } | SubnetConfig::Vgg { layers, .. } => {
                layers.iter().map(|l| l.width).max().unwrap_or(1)
            }
            _ => 1,
        }
    }

    /// Time extent after each convolution and pooling stage for an input of
    /// length `time`, or `None` when some stage would be shorter than its
    /// window. Recurrent sub-networks report `[time]`.
    pub fn stage_extents(&self, time: usize) -> Option<Vec<usize>> {
        let mut t = time;
        let mut extents = vec![t];
        match self {
            SubnetConfig::Textcnn { layers } => {
                for l in layers {
                    t = t.checked_sub(l.width)? + 1;
                    extents.push(t);
                }
            }
            SubnetConfig::Vgg {
                layers,
                pool_every,
                pool_window,
                pool_stride,
            } => {
                for (i, l) in layers.iter().enumerate() {
                    t = t.checked_sub(l.width)? + 1;
                    extents.push(t);
                    if (i + 1) % pool_every == 0 {
                        t = t.checked_sub(*pool_window)? / pool_stride + 1;
                        extents.push(t);
                    }
                }
            }
            SubnetConfig::Lstm { .. } | SubnetConfig::Bilstm { .. } => {
                if t == 0 {
                    return None;
                }
            }
        }
        Some(extents)
    }

    /// Shortest input whose every stage is non-empty.
    pub fn min_time(&self) -> usize {
        (1..).find(|&t| self.stage_extents(t).is_some()).expect("some length works")
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TensorError::Invalid(format!("{} sub-network: {msg}", self.kind_name())));
        match self {
            SubnetConfig::Textcnn { layers } | SubnetConfig::Vgg { layers, .. } => {
                if layers.is_empty() {
                    return bad("needs at least one convolution layer");
                }
                if layers.iter().any(|l| l.width == 0 || l.filters == 0) {
                    return bad("kernel widths and filter counts must be positive");
                }
                if let SubnetConfig::Vgg {
                    pool_every,
                    pool_window,
                    pool_stride,
                    ..
                } = self
                {
                    if *pool_every == 0 || *pool_window == 0 || *pool_stride == 0 {
                        return bad("pooling parameters must be positive");
                    }
                }
            }
            SubnetConfig::Lstm { hidden } | SubnetConfig::Bilstm { hidden } => {
                if *hidden == 0 {
                    return bad("hidden size must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Widths used to instantiate the standard architectures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embed_dim: usize,
    /// Filters per TextCNN convolution layer.
    pub filters: usize,
    /// LSTM and Bi-LSTM hidden size.
    pub hidden: usize,
    /// Hidden dense width of the fusion head (and the VGG head).
    pub head_hidden: usize,
    /// Kernel widths of the concatenation model's three TextCNN branches.
    pub branch_widths: [usize; 3],
    /// Conv layers per TextCNN branch.
    pub branch_depth: usize,
    /// Filters of the eight VGG convolution layers.
    pub vgg_filters: [usize; 8],
}

impl Dims {
    /// Full-size widths: 128-wide embedding and filters, 250 hidden units.
    pub fn full() -> Self {
        Self {
            embed_dim: 128,
            filters: 128,
            hidden: 250,
            head_hidden: 256,
            branch_widths: [2, 3, 4],
            branch_depth: 2,
            vgg_filters: [64, 64, 96, 96, 128, 128, 128, 128],
        }
    }

    /// Small widths for quick runs on one CPU core.
    pub fn desk() -> Self {
        Self {
            embed_dim: 24,
            filters: 32,
            hidden: 32,
            head_hidden: 64,
            branch_widths: [2, 3, 4],
            branch_depth: 2,
            vgg_filters: [16, 16, 24, 24, 32, 32, 32, 32],
        }
    }
}

/// Complete description of a single network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Order matters: features are joined in this order.
    pub subnets: Vec<SubnetConfig>,
    /// Hidden relu layers between the joined features and the output layer.
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Enforce three TextCNN, one LSTM and one Bi-LSTM branch and 25 classes.
    #[serde(default)]
    pub strict: bool,
}

/// Number of classes strict mode requires.
pub const STRICT_CLASSES: usize = 25;

impl NetworkConfig {
    /// Three TextCNN branches, an LSTM and a Bi-LSTM over one embedding,
    /// joined and fed to a relu hidden layer and the output layer.
    pub fn concat(vocab_size: usize, num_classes: usize, dims: &Dims) -> Self {
        let mut subnets: Vec<SubnetConfig> = dims
            .branch_widths
            .iter()
            .map(|&width| SubnetConfig::Textcnn {
                layers: vec![
                    ConvSpec {
                        width,
                        filters: dims.filters
                    };
                    dims.branch_depth
                ],
            })
            .collect();
        subnets.push(SubnetConfig::Lstm { hidden: dims.hidden });
        subnets.push(SubnetConfig::Bilstm { hidden: dims.hidden });
        Self {
            vocab_size,
            embed_dim: dims.embed_dim,
            subnets,
            head_hidden: vec![dims.head_hidden],
            num_classes,
            strict: false,
        }
    }

    /// Two conv layers of the given kernel width, global max pool, output layer.
    pub fn textcnn(vocab_size: usize, num_classes: usize, dims: &Dims, width: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: dims.embed_dim,
            subnets: vec![SubnetConfig::Textcnn {
                layers: vec![
                    ConvSpec {
                        width,
                        filters: dims.filters
                    };
                    2
                ],
            }],
            head_hidden: Vec::new(),
            num_classes,
            strict: false,
        }
    }

    pub fn bilstm(vocab_size: usize, num_classes: usize, dims: &Dims) -> Self {
        Self {
            vocab_size,
            embed_dim: dims.embed_dim,
            subnets: vec![SubnetConfig::Bilstm { hidden: dims.hidden }],
            head_hidden: Vec::new(),
            num_classes,
            strict: false,
        }
    }

    /// Eight width-3 conv blocks with 2/2 max pooling after every second
    /// block, global max pool, then two dense layers (ten weight layers).
    pub fn vgg(vocab_size: usize, num_classes: usize, dims: &Dims) -> Self {
        Self {
            vocab_size,
            embed_dim: dims.embed_dim,
            subnets: vec![SubnetConfig::Vgg {
                layers: dims.vgg_filters.iter().map(|&filters| ConvSpec { width: 3, filters }).collect(),
                pool_every: 2,
                pool_window: 2,
                pool_stride: 2,
            }],
            head_hidden: vec![dims.head_hidden],
            num_classes,
            strict: false,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.subnets.iter().map(SubnetConfig::output_width).sum()
    }

    /// Largest kernel width over the TextCNN branches (1 if there are none).
    pub fn max_textcnn_width(&self) -> usize {
        self.subnets
            .iter()
            .filter(|s| matches!(s, SubnetConfig::Textcnn { .. }))
            .map(SubnetConfig::max_kernel_width)
            .max()
            .unwrap_or(1)
    }

    /// Shortest batch time extent accepted by the forward pass.
    pub fn min_input_len(&self) -> usize {
        let vgg = self
            .subnets
            .iter()
            .filter(|s| matches!(s, SubnetConfig::Vgg { .. }))
            .map(SubnetConfig::min_time)
            .max()
            .unwrap_or(1);
        vgg.max(self.max_textcnn_width())
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(TensorError::Invalid("vocabulary must hold at least PAD and UNK".into()));
        }
        if self.embed_dim == 0 || self.num_classes == 0 || self.head_hidden.contains(&0) {
            return Err(TensorError::Invalid("widths and class count must be positive".into()));
        }
        if self.subnets.is_empty() {
            return Err(TensorError::Invalid("at least one sub-network is required".into()));
        }
        for s in &self.subnets {
            s.validate()?;
        }
        if self.strict {
            let count = |k: &str| self.subnets.iter().filter(|s| s.kind_name() == k).count();
            let mix = (count("textcnn"), count("lstm"), count("bilstm"), count("vgg"));
            if mix != (3, 1, 1, 0) {
                return Err(TensorError::Invalid(format!(
                    "strict mode needs 3 textcnn + 1 lstm + 1 bilstm sub-networks, got {} + {} + {} (+{} vgg)",
                    mix.0, mix.1, mix.2, mix.3
                )));
            }
            if self.num_classes != STRICT_CLASSES {
                return Err(TensorError::Invalid(format!(
                    "strict mode needs {STRICT_CLASSES} classes, got {}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// How ensemble members' outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Weighted average of member probabilities.
    Soft,
    /// Weighted count of member argmax votes.
    Hard,
}

impl FromStr for VoteMode {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(VoteMode::Soft),
            "hard" => Ok(VoteMode::Hard),
            other => Err(TensorError::Invalid(format!("unknown vote mode `{other}`"))),
        }
    }
}

/// Serializable architecture: one network or a voting ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Architecture {
    Network(NetworkConfig),
    Ensemble {
        members: Vec<NetworkConfig>,
        weights: Vec<f64>,
        mode: VoteMode,
    },
}

/// Versioned wrapper written to config files and checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDoc {
    pub schema_version: u32,
    pub architecture: Architecture,
}

impl ArchitectureDoc {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            architecture,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| TensorError::Invalid(format!("architecture document: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(TensorError::Invalid(format!(
                "architecture schema version {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }
}

/// The model families compared in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Textcnn,
    Bilstm,
    Vgg,
    Ensemble,
    Concat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Textcnn,
        ModelKind::Bilstm,
        ModelKind::Vgg,
        ModelKind::Ensemble,
        ModelKind::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Textcnn => "textcnn",
            ModelKind::Bilstm => "bilstm",
            ModelKind::Vgg => "vgg",
            ModelKind::Ensemble => "ensemble",
            ModelKind::Concat => "concat",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Textcnn => "Text CNN",
            ModelKind::Bilstm => "Bi-LSTM",
            ModelKind::Vgg => "VGG",
            ModelKind::Ensemble => "Ensemble Learning",
            ModelKind::Concat => "Concatenation model",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::Invalid(format!("unknown model kind `{s}`")))
    }
}
