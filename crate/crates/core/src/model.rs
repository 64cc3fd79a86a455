//! Small classifier: an optional valid-padding convolution stage followed by
//! a ReLU MLP. No dropout and no normalization layers, so training-mode and
//! inference-mode forward passes are the same function.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor, UnaryOp};

/// Probability floor applied before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub kernel: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
    pub classes: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.height < 2 || self.width < 2 || self.channels == 0 {
            return Err(Error::Invalid(format!(
                "input {}x{}x{} too small",
                self.height, self.width, self.channels
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        if let Some(c) = self.conv {
            if c.kernel == 0 || c.kernel > self.height || c.kernel > self.width || c.out_channels == 0 {
                return Err(Error::Invalid(format!("bad conv stage {c:?}")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// `(rows, cols)` of every parameter tensor, in storage order.
    fn layer_shapes(&self) -> Vec<(Vec<usize>, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim();
        if let Some(c) = self.conv {
            let fan_in = c.kernel * c.kernel * self.channels;
            shapes.push((vec![fan_in, c.out_channels], fan_in));
            shapes.push((vec![c.out_channels], fan_in));
            width = (self.height - c.kernel + 1) * (self.width - c.kernel + 1) * c.out_channels;
        }
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            shapes.push((vec![width, h], width));
            shapes.push((vec![h], width));
            width = h;
        }
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    params: Vec<Tensor>,
}

/// Forward primitives the network needs, implemented both eagerly and on a tape
/// so the two paths cannot drift apart.
trait Backend {
    type V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add_bias(&mut self, x: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn im2col(&mut self, x: &Self::V, k: usize) -> Result<Self::V>;
}

struct Eager;

impl Backend for Eager {
    type V = Tensor;
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }
    fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::add_bias(x, b)
    }
    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::relu(x)
    }
    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        x.reshape(shape)
    }
    fn im2col(&mut self, x: &Tensor, k: usize) -> Result<Tensor> {
        tensor::im2col(x, k)
    }
}

impl Backend for Tape {
    type V = Var;
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul(self, *a, *b)
    }
    fn add_bias(&mut self, x: &Var, b: &Var) -> Result<Var> {
        Tape::add_bias(self, *x, *b)
    }
    fn relu(&mut self, x: &Var) -> Result<Var> {
        Tape::relu(self, *x)
    }
    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        Tape::reshape(self, *x, shape)
    }
    fn im2col(&mut self, x: &Var, k: usize) -> Result<Var> {
        Tape::im2col(self, *x, k)
    }
}

impl Classifier {
    /// Builds a classifier with weights drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` using the config's init seed.
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.init_seed, Stream::Init, 0);
        let params = config
            .layer_shapes()
            .into_iter()
            .map(|(shape, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<_>>()?;
        Ok(Classifier { config, params })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Replaces all parameters; shapes must match the current layout.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("set_params", "parameter layout differs"));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Sets the output layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn param_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    fn run<B: Backend>(&self, be: &mut B, params: &[B::V], x: &B::V, batch: usize) -> Result<B::V> {
        let cfg = &self.config;
        let mut h;
        let mut rest = params;
        if let Some(c) = cfg.conv {
            let img = be.reshape(x, &[batch, cfg.height, cfg.width, cfg.channels])?;
            let cols = be.im2col(&img, c.kernel)?;
            let z = be.matmul(&cols, &rest[0])?;
            let z = be.add_bias(&z, &rest[1])?;
            let z = be.relu(&z)?;
            let out = (cfg.height - c.kernel + 1) * (cfg.width - c.kernel + 1) * c.out_channels;
            h = be.reshape(&z, &[batch, out])?;
            rest = &rest[2..];
        } else {
            h = be.reshape(x, &[batch, cfg.input_dim()])?;
        }
        let layers = rest.len() / 2;
        for (l, pair) in rest.chunks(2).enumerate() {
            let z = be.matmul(&h, &pair[0])?;
            h = be.add_bias(&z, &pair[1])?;
            if l + 1 < layers {
                h = be.relu(&h)?;
            }
        }
        Ok(h)
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let d = self.config.input_dim();
        match x.shape() {
            [b, n] if *n == d => Ok(*b),
            s => Err(Error::shape("forward", format!("expected [B, {d}], got {s:?}"))),
        }
    }

    /// Untaped logits for a `[B × H·W·C]` batch of flattened HWC images.
    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(x)?;
        self.run(&mut Eager, &self.params, x, b)
    }

    /// Untaped logits `[K]` for one `[H, W, C]` image.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.config.input_shape() {
            return Err(Error::shape(
                "forward",
                format!("expected {:?}, got {:?}", self.config.input_shape(), x.shape()),
            ));
        }
        let flat = x.reshape(&[1, self.config.input_dim()])?;
        let z = self.logits_batch(&flat)?;
        z.reshape(&[self.config.classes])
    }

    /// Registers every parameter on `tape`, in storage order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Taped logits `[B × K]`.
    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], x: &Tensor) -> Result<Var> {
        let b = self.check_batch(x)?;
        if params.len() != self.params.len() {
            return Err(Error::shape("forward_taped", "parameter handles do not match model"));
        }
        let xv = tape.constant(x.clone());
        self.run(tape, params, &xv, b)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        let hidden: Vec<String> = c.hidden.iter().map(usize::to_string).collect();
        writeln!(w, "natsel-checkpoint 1")?;
        writeln!(w, "height {}", c.height)?;
        writeln!(w, "width {}", c.width)?;
        writeln!(w, "channels {}", c.channels)?;
        writeln!(w, "hidden {}", if hidden.is_empty() { "-".to_string() } else { hidden.join(",") })?;
        match c.conv {
            Some(cv) => writeln!(w, "conv {} {}", cv.kernel, cv.out_channels)?,
            None => writeln!(w, "conv none")?,
        }
        writeln!(w, "classes {}", c.classes)?;
        writeln!(w, "init_seed {}", c.init_seed)?;
        writeln!(w, "params {}", self.param_count())?;
        writeln!(w, "end")?;
        for p in &self.params {
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut line = String::new();
        let mut next = |r: &mut R, key: &str| -> Result<String> {
            line.clear();
            r.read_line(&mut line)?;
            let rest = line
                .trim_end_matches('\n')
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` line")))?;
            Ok(rest.to_string())
        };
        if next(&mut r, "natsel-checkpoint")? != "1" {
            return Err(bad("unsupported version"));
        }
        let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let height = num(next(&mut r, "height")?)?;
        let width = num(next(&mut r, "width")?)?;
        let channels = num(next(&mut r, "channels")?)?;
        let hidden_s = next(&mut r, "hidden")?;
        let hidden = if hidden_s == "-" {
            Vec::new()
        } else {
            hidden_s.split(',').map(|s| num(s.to_string())).collect::<Result<_>>()?
        };
        let conv_s = next(&mut r, "conv")?;
        let conv = if conv_s == "none" {
            None
        } else {
            let parts: Vec<&str> = conv_s.split(' ').collect();
            if parts.len() != 2 {
                return Err(bad("bad conv line"));
            }
            Some(ConvConfig {
                kernel: num(parts[0].to_string())?,
                out_channels: num(parts[1].to_string())?,
            })
        };
        let classes = num(next(&mut r, "classes")?)?;
        let init_seed = next(&mut r, "init_seed")?
            .parse::<u64>()
            .map_err(|_| bad("bad init seed"))?;
        let count = num(next(&mut r, "params")?)?;
        line.clear();
        r.read_line(&mut line)?;
        if line != "end\n" {
            return Err(bad("missing end of header"));
        }
        let mut model = Classifier::new(ClassifierConfig {
            height,
            width,
            channels,
            hidden,
            conv,
            classes,
            init_seed,
        })?;
        if model.param_count() != count {
            return Err(bad("parameter count does not match architecture"));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad("truncated parameter block"))?;
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let params = model
            .params
            .iter()
            .map(|p| Tensor::new(p.shape().to_vec(), values.by_ref().take(p.len()).collect()))
            .collect::<Result<_>>()?;
        model.params = params;
        Ok(model)
    }
}

/// Softmax of a logit vector, with max subtraction.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.is_empty() {
        return Err(Error::Invalid("softmax of empty vector".into()));
    }
    z.check_finite("softmax")?;
    let row = z.reshape(&[1, z.len()])?;
    tensor::softmax_rows(&row)?.reshape(z.shape())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
    LabelSmoothing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: f64,
}

fn default_gamma() -> f64 {
    2.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::CrossEntropy,
            gamma: default_gamma(),
            epsilon: 0.0,
        }
    }
}

impl LossConfig {
    pub fn cross_entropy() -> Self {
        Self::default()
    }

    pub fn focal(gamma: f64) -> Self {
        LossConfig {
            kind: LossKind::Focal,
            gamma,
            ..Self::default()
        }
    }

    pub fn label_smoothing(epsilon: f64) -> Self {
        LossConfig {
            kind: LossKind::LabelSmoothing,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Invalid(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Invalid(format!("smoothing epsilon {} not in [0,1)", self.epsilon)));
        }
        Ok(())
    }
}

/// Loss of one prediction given its probability vector.
pub fn per_sample_loss(p: &Tensor, y: usize, cfg: &LossConfig) -> Result<f64> {
    let k = p.len();
    if y >= k {
        return Err(Error::LabelOutOfRange { label: y, classes: k });
    }
    p.check_finite("per_sample_loss")?;
    let py = p.data()[y];
    let nll = |q: f64| -q.max(PROB_FLOOR).ln();
    Ok(match cfg.kind {
        LossKind::CrossEntropy => nll(py),
        LossKind::Focal => {
            if cfg.gamma == 0.0 {
                nll(py)
            } else {
                (1.0 - py).max(PROB_FLOOR).powf(cfg.gamma) * nll(py)
            }
        }
        LossKind::LabelSmoothing => {
            let eps = cfg.epsilon;
            let uniform: f64 = p.data().iter().map(|&q| nll(q)).sum::<f64>() / k as f64;
            (1.0 - eps) * nll(py) + eps * uniform
        }
    })
}

/// Taped per-sample losses `[B]` from logits `[B × K]`.
///
/// Works from the log-softmax directly, so the target log-probability is
/// always finite and cross-entropy gradients are never clipped.
pub fn batch_losses(tape: &mut Tape, logits: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    let k = tape.value(logits)?.shape()[1];
    let lp = tape.log_softmax_rows(logits)?;
    let lpy = tape.gather_rows(lp, labels)?;
    let nll = tape.scale(lpy, -1.0)?;
    match cfg.kind {
        LossKind::CrossEntropy => Ok(nll),
        LossKind::Focal => {
            if cfg.gamma == 0.0 {
                return Ok(nll);
            }
            let py = tape.exp(lpy)?;
            let one_minus = tape.unary(UnaryOp::Scale(-1.0), py)?;
            let one_minus = tape.unary(UnaryOp::AddScalar(1.0), one_minus)?;
            let base = tape.unary(UnaryOp::ClampMin(PROB_FLOOR), one_minus)?;
            let modulator = tape.unary(UnaryOp::Pow(cfg.gamma), base)?;
            tape.mul(modulator, nll)
        }
        LossKind::LabelSmoothing => {
            let eps = cfg.epsilon;
            let hard = tape.scale(nll, 1.0 - eps)?;
            let total = tape.row_sum(lp)?;
            let soft = tape.scale(total, -eps / k as f64)?;
            tape.add(hard, soft)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg(hidden: Vec<usize>, conv: Option<ConvConfig>) -> ClassifierConfig {
        ClassifierConfig {
            height: 4,
            width: 3,
            channels: 2,
            hidden,
            conv,
            classes: 3,
            init_seed: 11,
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_logits() {
        let mut m = Classifier::new(cfg(vec![5], None)).unwrap();
        m.zero_output_layer();
        let x = Tensor::full(&[4, 3, 2], 0.7);
        assert_eq!(m.forward(&x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_linear_model() {
        let c = ClassifierConfig {
            height: 2,
            width: 2,
            channels: 1,
            hidden: vec![],
            conv: None,
            classes: 2,
            init_seed: 0,
        };
        let mut m = Classifier::new(c).unwrap();
        // Picks pixel 0 and pixel 1 as the two logits.
        let w = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        m.set_params(vec![w, Tensor::zeros(&[2])]).unwrap();
        let x = Tensor::new(vec![2, 2, 1], vec![0.3, -1.5, 9.0, 9.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), &[0.3, -1.5]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Classifier::new(cfg(vec![4, 3], Some(ConvConfig { kernel: 2, out_channels: 2 }))).unwrap();
        let b = Classifier::new(cfg(vec![4, 3], Some(ConvConfig { kernel: 2, out_channels: 2 }))).unwrap();
        assert_eq!(a, b);
        let mut c2 = cfg(vec![4, 3], None);
        c2.init_seed = 12;
        assert_ne!(Classifier::new(c2).unwrap().param_hash(), Classifier::new(cfg(vec![4, 3], None)).unwrap().param_hash());
    }

    #[test]
    fn init_within_fan_in_bound() {
        let m = Classifier::new(cfg(vec![6], None)).unwrap();
        let bound = 1.0 / (24f64).sqrt();
        assert!(m.params()[0].data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = cfg(vec![], None);
        c.classes = 1;
        assert!(Classifier::new(c).is_err());
        let mut c = cfg(vec![], None);
        c.height = 1;
        assert!(Classifier::new(c).is_err());
    }

    #[test]
    fn forward_shape_mismatch() {
        let m = Classifier::new(cfg(vec![], None)).unwrap();
        assert!(m.forward(&Tensor::zeros(&[3, 3, 2])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::zeros(&[4])).unwrap();
        assert_eq!(p.data(), &[0.25; 4]);
        let z = Tensor::from_vec(vec![1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]).unwrap();
        let p = softmax(&z).unwrap();
        for (a, b) in p.data().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let one_hot = Tensor::from_vec(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(per_sample_loss(&one_hot, 1, &LossConfig::cross_entropy()).unwrap(), 0.0);
        let uniform = Tensor::full(&[10], 0.1);
        let l = per_sample_loss(&uniform, 7, &LossConfig::cross_entropy()).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        let half = Tensor::from_vec(vec![0.5, 0.5]).unwrap();
        let f = per_sample_loss(&half, 0, &LossConfig::focal(2.0)).unwrap();
        assert!((f - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((f - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn loss_label_out_of_range() {
        let p = Tensor::full(&[2], 0.5);
        assert!(matches!(
            per_sample_loss(&p, 2, &LossConfig::cross_entropy()),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = Classifier::new(cfg(vec![5], Some(ConvConfig { kernel: 2, out_channels: 3 }))).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = Classifier::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
        let header_len = buf.len() - 8 * m.param_count();
        let truncated = &buf[..header_len + 8];
        assert!(Classifier::read_checkpoint(truncated).is_err());
    }
}
