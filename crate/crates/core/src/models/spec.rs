use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, RunningStats};
use crate::error::{Error, Result};
use crate::ingest::NUM_FEATURES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Gcn,
    Sage,
    Gat,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Gat => "gat",
        }
    }

    /// Rounds of message passing, i.e. the receptive-field radius.
    pub fn hops(self, layers: usize) -> usize {
        match self {
            ModelKind::Mlp => 0,
            _ => layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Hidden blocks for mlp/sage/gat, graph convolutions for gcn.
    pub layers: usize,
    /// Attention heads; gat only.
    pub heads: usize,
    pub head_classes: usize,
    pub dropout: f64,
    /// Dropout on attention coefficients; gat only.
    pub attention_dropout: f64,
    /// LeakyReLU slope inside attention scores; gat only.
    pub negative_slope: f64,
}

impl ModelSpec {
    pub fn reference(kind: ModelKind) -> Self {
        let (hidden_dim, layers) = match kind {
            ModelKind::Mlp => (128, 3),
            ModelKind::Gcn => (128, 2),
            ModelKind::Sage | ModelKind::Gat => (256, 3),
        };
        Self {
            kind,
            input_dim: NUM_FEATURES,
            hidden_dim,
            layers,
            heads: if kind == ModelKind::Gat { 4 } else { 1 },
            head_classes: 3,
            dropout: 0.5,
            attention_dropout: 0.2,
            negative_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !matches!(self.head_classes, 2 | 3) {
            return Err(Error::Config(format!(
                "head_classes must be 2 or 3, got {}",
                self.head_classes
            )));
        }
        if self.kind == ModelKind::Gcn && self.layers < 2 {
            return Err(Error::Config("gcn needs at least two convolutions".into()));
        }
        if self.kind == ModelKind::Gat && self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "gat hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Name, shape and initialiser of every trainable tensor, in the order
    /// the forward pass consumes them.
    pub fn layout(&self) -> Vec<ParamSlot> {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.head_classes);
        let mut out = Vec::new();
        let linear = |out: &mut Vec<ParamSlot>, name: &str, i: usize, o: usize, bias: bool| {
            out.push(ParamSlot::new(
                format!("{name}.weight"),
                i,
                o,
                Init::FanIn(i),
            ));
            if bias {
                out.push(ParamSlot::new(format!("{name}.bias"), 1, o, Init::Zeros));
            }
        };
        let bn = |out: &mut Vec<ParamSlot>, name: &str, w: usize| {
            out.push(ParamSlot::new(format!("{name}.gamma"), 1, w, Init::Ones));
            out.push(ParamSlot::new(format!("{name}.beta"), 1, w, Init::Zeros));
        };
        match self.kind {
            ModelKind::Mlp => {
                for l in 0..self.layers {
                    linear(
                        &mut out,
                        &format!("mlp.{l}"),
                        if l == 0 { d } else { h },
                        h,
                        true,
                    );
                    bn(&mut out, &format!("mlp.{l}.bn"), h);
                }
                linear(&mut out, "head", h, c, true);
            }
            ModelKind::Gcn => {
                for l in 0..self.layers {
                    let i = if l == 0 { d } else { h };
                    let o = if l + 1 == self.layers { c } else { h };
                    linear(&mut out, &format!("gcn.{l}"), i, o, true);
                }
            }
            ModelKind::Sage => {
                linear(&mut out, "input", d, h, true);
                for l in 0..self.layers {
                    linear(&mut out, &format!("sage.{l}.neigh"), h, h, true);
                    linear(&mut out, &format!("sage.{l}.root"), h, h, false);
                    bn(&mut out, &format!("sage.{l}.bn"), h);
                }
                linear(&mut out, "head", h, c, true);
            }
            ModelKind::Gat => {
                let f = h / self.heads;
                linear(&mut out, "input", d, h, true);
                for l in 0..self.layers {
                    linear(&mut out, &format!("gat.{l}"), h, h, false);
                    out.push(ParamSlot::new(
                        format!("gat.{l}.att_src"),
                        1,
                        h,
                        Init::FanIn(f),
                    ));
                    out.push(ParamSlot::new(
                        format!("gat.{l}.att_dst"),
                        1,
                        h,
                        Init::FanIn(f),
                    ));
                    out.push(ParamSlot::new(format!("gat.{l}.bias"), 1, h, Init::Zeros));
                    bn(&mut out, &format!("gat.{l}.bn"), h);
                }
                linear(&mut out, "head", h, c, true);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|s| s.rows * s.cols).sum()
    }

    /// Widths of the batch-norm layers in forward order.
    pub fn bn_widths(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Gcn => Vec::new(),
            _ => vec![self.hidden_dim; self.layers],
        }
    }

    /// Width of the activations fed to the classification head.
    pub fn embedding_dim(&self) -> usize {
        self.hidden_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on ±1/sqrt(fan_in).
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSlot {
    fn new(name: String, rows: usize, cols: usize, init: Init) -> Self {
        Self {
            name,
            rows,
            cols,
            init,
        }
    }
}

/// Trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix<f64>>,
    pub bn: Vec<RunningStats>,
}

impl Params {
    /// Deterministic initialisation from the seed alone.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for slot in spec.layout() {
            let m = match slot.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Matrix::from_fn(slot.rows, slot.cols, |_, _| rng.random_range(-bound..bound))
                }
                Init::Zeros => Matrix::zeros(slot.rows, slot.cols),
                Init::Ones => Matrix::filled(slot.rows, slot.cols, 1.0),
            };
            names.push(slot.name);
            tensors.push(m);
        }
        Ok(Self {
            names,
            tensors,
            bn: spec
                .bn_widths()
                .into_iter()
                .map(RunningStats::new)
                .collect(),
        })
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Checks that tensor names and shapes match `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.layout();
        if layout.len() != self.tensors.len() || self.names.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "{} tensors for a layout of {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        for ((slot, name), t) in layout.iter().zip(&self.names).zip(&self.tensors) {
            if slot.name != *name || t.shape() != (slot.rows, slot.cols) {
                return Err(Error::Dimension(format!(
                    "tensor `{name}` {:?} where `{}` {:?} was expected",
                    t.shape(),
                    slot.name,
                    (slot.rows, slot.cols)
                )));
            }
        }
        let widths = spec.bn_widths();
        if widths.len() != self.bn.len()
            || widths.iter().zip(&self.bn).any(|(&w, s)| s.mean.len() != w)
        {
            return Err(Error::Dimension(
                "batch-norm statistics do not match the spec".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::reference(ModelKind::Sage).param_count(), 438_787);
        assert_eq!(ModelSpec::reference(ModelKind::Gat).param_count(), 243_715);
        assert_eq!(ModelSpec::reference(ModelKind::Mlp).param_count(), 55_427);
        assert_eq!(ModelSpec::reference(ModelKind::Gcn).param_count(), 21_635);
    }

    #[test]
    fn binary_head_drops_one_output_column() {
        let mut s = ModelSpec::reference(ModelKind::Sage);
        s.head_classes = 2;
        assert_eq!(s.param_count(), 438_787 - 257);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = ModelSpec::reference(ModelKind::Gcn);
        let a = Params::init(&s, 7).unwrap();
        assert_eq!(a, Params::init(&s, 7).unwrap());
        assert_ne!(a, Params::init(&s, 8).unwrap());
        let bound = 1.0 / (165f64).sqrt();
        assert!(a.tensors[0].data().iter().all(|v| v.abs() <= bound));
        assert!(a.tensors[1].data().iter().all(|&v| v == 0.0));
        a.check_against(&s).unwrap();
        assert!(a
            .check_against(&ModelSpec::reference(ModelKind::Mlp))
            .is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = ModelSpec::reference(ModelKind::Gat);
        s.heads = 3;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::reference(ModelKind::Mlp);
        s.head_classes = 4;
        assert!(s.validate().is_err());
        s.head_classes = 3;
        s.dropout = 1.0;
        assert!(s.validate().is_err());
    }
}
