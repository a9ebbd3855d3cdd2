use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::stream::{Example, TaskKind};

use super::config::{ArchSpec, Augmentation};
use super::metrics::{sigmoid, softmax_rows, task_error};
use super::network::{check_layers, forward, infer_shapes, init_layers, Head, LayerParams, Shape};
use super::preprocess::{batch_matrix, Mode};

const MAGIC: &[u8; 4] = b"SBPS";
const VERSION: u32 = 1;
const EVAL_CHUNK: usize = 256;

/// Backbone parameters plus one classification head per trained task.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    arch: ArchSpec,
    shapes: Vec<Shape>,
    layers: Vec<LayerParams>,
    heads: BTreeMap<String, Head>,
}

impl PredictorState {
    /// Freshly initialized backbone without heads.
    pub fn random(arch: &ArchSpec, input: Shape, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(arch, input)?;
        let layers = init_layers(arch, &shapes, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { arch: arch.clone(), shapes, layers, heads: BTreeMap::new() })
    }

    pub fn from_parts(
        arch: ArchSpec,
        input: Shape,
        layers: Vec<LayerParams>,
        heads: BTreeMap<String, Head>,
    ) -> Result<Self> {
        let shapes = infer_shapes(&arch, input)?;
        check_layers(&arch, &shapes, &layers)?;
        let features = shapes.last().expect("input shape present").size();
        for (id, h) in &heads {
            if h.w.nrows() != features || h.w.ncols() != h.b.len() {
                return Err(Error::Shape(format!("head `{id}` does not fit {features} features")));
            }
        }
        Ok(Self { arch, shapes, layers, heads })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub(crate) fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes.last().expect("input shape present").size()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn heads(&self) -> &BTreeMap<String, Head> {
        &self.heads
    }

    pub(crate) fn heads_mut(&mut self) -> &mut BTreeMap<String, Head> {
        &mut self.heads
    }

    pub fn head(&self, task: &str) -> Result<&Head> {
        self.heads.get(task).ok_or_else(|| Error::MissingHead(task.to_string()))
    }

    pub fn insert_head(&mut self, task: impl Into<String>, head: Head) -> Result<()> {
        if head.w.nrows() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "head has {} inputs, backbone gives {}",
                head.w.nrows(),
                self.feature_dim()
            )));
        }
        self.heads.insert(task.into(), head);
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        let backbone: usize = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Stateless => 0,
                LayerParams::Affine { w, b } => w.len() + b.len(),
                LayerParams::Norm { gamma, beta, .. } => gamma.len() + beta.len(),
            })
            .sum();
        backbone + self.heads.values().map(|h| h.w.len() + h.b.len()).sum::<usize>()
    }

    /// Trainable parameters flattened: backbone layers in order, then heads
    /// by task id, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            match l {
                LayerParams::Affine { w, b } => {
                    v.extend(w.iter());
                    v.extend(b.iter());
                }
                LayerParams::Norm { gamma, beta, .. } => {
                    v.extend(gamma.iter());
                    v.extend(beta.iter());
                }
                LayerParams::Stateless => {}
            }
        }
        for h in self.heads.values() {
            v.extend(h.w.iter());
            v.extend(h.b.iter());
        }
        v
    }

    /// Overwrites the trainable parameters from a vector laid out as in
    /// [`Self::parameters`].
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::Shape(format!("{} values for {} parameters", values.len(), self.num_parameters())));
        }
        let mut it = values.iter().copied();
        let mut put = |x: &mut f64| *x = it.next().expect("length checked");
        for l in &mut self.layers {
            match l {
                LayerParams::Affine { w, b } => {
                    w.iter_mut().for_each(&mut put);
                    b.iter_mut().for_each(&mut put);
                }
                LayerParams::Norm { gamma, beta, .. } => {
                    gamma.iter_mut().for_each(&mut put);
                    beta.iter_mut().for_each(&mut put);
                }
                LayerParams::Stateless => {}
            }
        }
        for h in self.heads.values_mut() {
            h.w.iter_mut().for_each(&mut put);
            h.b.iter_mut().for_each(&mut put);
        }
        Ok(())
    }

    /// True when both backbones hold bit-identical parameters and buffers.
    pub fn same_backbone(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.shapes == other.shapes
            && self.to_bytes_parts(false) == other.to_bytes_parts(false)
    }

    /// Penultimate (backbone output) activations of preprocessed inputs.
    pub fn features_of(&self, x: Array2<f64>) -> Array2<f64> {
        forward(&self.arch, &self.shapes, &self.layers, x, false).out
    }

    /// Eval-mode features of examples.
    pub fn extract_features(&self, examples: &[Example]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((examples.len(), self.feature_dim()));
        for (i, chunk) in examples.chunks(EVAL_CHUNK).enumerate() {
            let x = self.eval_inputs(chunk)?;
            let f = self.features_of(x);
            out.slice_mut(ndarray::s![i * EVAL_CHUNK..i * EVAL_CHUNK + chunk.len(), ..]).assign(&f);
        }
        Ok(out)
    }

    pub(crate) fn eval_inputs(&self, examples: &[Example]) -> Result<Array2<f64>> {
        // eval preprocessing draws no randomness
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        batch_matrix(examples.iter(), self.input_shape(), Mode::Eval, Augmentation::default(), &mut rng)
    }

    /// Class probabilities: softmax for single-label tasks, per-class
    /// sigmoid for multi-label tasks.
    pub fn predict(&self, task: &str, kind: TaskKind, examples: &[Example]) -> Result<Array2<f64>> {
        let head = self.head(task)?;
        let mut out = Array2::zeros((examples.len(), head.num_classes()));
        for (i, chunk) in examples.chunks(EVAL_CHUNK).enumerate() {
            let logits = head.logits(&self.features_of(self.eval_inputs(chunk)?));
            let probs = match kind {
                TaskKind::SingleLabel => softmax_rows(&logits),
                TaskKind::MultiLabel => logits.mapv(sigmoid),
            };
            out.slice_mut(ndarray::s![i * EVAL_CHUNK..i * EVAL_CHUNK + chunk.len(), ..]).assign(&probs);
        }
        Ok(out)
    }

    /// Task error of the head for `task` on `examples`.
    pub fn evaluate(&self, task: &str, kind: TaskKind, examples: &[Example]) -> Result<f64> {
        let probs = self.predict(task, kind, examples)?;
        let labels: Vec<_> = examples.iter().map(|e| e.label.clone()).collect();
        Ok(task_error(&probs, &labels, kind))
    }

    fn to_bytes_parts(&self, with_heads: bool) -> Vec<u8> {
        let mut w = Writer::with_header(MAGIC, VERSION);
        w.str(&serde_json::to_string(&self.arch).expect("arch serializes"));
        let s = self.input_shape();
        w.usizes(&[s.c, s.h, s.w]);
        w.u64(self.layers.len() as u64);
        for l in &self.layers {
            match l {
                LayerParams::Stateless => w.u8(0),
                LayerParams::Affine { w: m, b } => {
                    w.u8(1);
                    put_matrix(&mut w, m);
                    w.f64s(b.as_slice().unwrap());
                }
                LayerParams::Norm { gamma, beta, running_mean, running_var } => {
                    w.u8(2);
                    for v in [gamma, beta, running_mean, running_var] {
                        w.f64s(v.as_slice().unwrap());
                    }
                }
            }
        }
        if with_heads {
            w.u64(self.heads.len() as u64);
            for (id, h) in &self.heads {
                w.str(id);
                put_matrix(&mut w, &h.w);
                w.f64s(h.b.as_slice().unwrap());
            }
        }
        w.into_bytes()
    }

    /// Deterministic binary encoding: arch echo, input shape, per-layer
    /// arrays, then heads in task-id order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_parts(true)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::header(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::Schema { found: version.to_string(), supported: VERSION });
        }
        let arch: ArchSpec =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Corrupt(format!("predictor arch: {e}")))?;
        let s = r.usizes()?;
        if s.len() != 3 {
            return Err(Error::Corrupt("predictor input shape".into()));
        }
        let input = Shape { c: s[0], h: s[1], w: s[2] };
        let n = r.u64()? as usize;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            layers.push(match r.u8()? {
                0 => LayerParams::Stateless,
                1 => LayerParams::Affine { w: get_matrix(&mut r)?, b: Array1::from(r.f64s()?) },
                2 => LayerParams::Norm {
                    gamma: Array1::from(r.f64s()?),
                    beta: Array1::from(r.f64s()?),
                    running_mean: Array1::from(r.f64s()?),
                    running_var: Array1::from(r.f64s()?),
                },
                t => return Err(Error::Corrupt(format!("unknown layer tag {t}"))),
            });
        }
        let nh = r.u64()? as usize;
        let mut heads = BTreeMap::new();
        for _ in 0..nh {
            let id = r.str()?;
            let w = get_matrix(&mut r)?;
            let b = Array1::from(r.f64s()?);
            heads.insert(id, Head { w, b });
        }
        if !r.is_empty() {
            return Err(Error::Corrupt("trailing bytes after predictor state".into()));
        }
        Self::from_parts(arch, input, layers, heads).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn put_matrix(w: &mut Writer, m: &Array2<f64>) {
    w.usizes(&[m.nrows(), m.ncols()]);
    w.f64s(m.as_standard_layout().as_slice().unwrap());
}

fn get_matrix(r: &mut Reader<'_>) -> Result<Array2<f64>> {
    let dims = r.usizes()?;
    let data = r.f64s()?;
    if dims.len() != 2 {
        return Err(Error::Corrupt("matrix header".into()));
    }
    Array2::from_shape_vec((dims[0], dims[1]), data).map_err(|e| Error::Corrupt(format!("matrix: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> PredictorState {
        let mut s = PredictorState::random(&ArchSpec::small_conv(2), Shape { c: 3, h: 6, w: 6 }, 7).unwrap();
        let head = Head::init(s.feature_dim(), 3, &mut ChaCha8Rng::seed_from_u64(1));
        s.insert_head("a", head).unwrap();
        s
    }

    #[test]
    fn bytes_round_trip() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = PredictorState::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(PredictorState::from_bytes(&bytes), Err(Error::Corrupt(_))));
        let mut bad = sample().to_bytes();
        bad[0] = b'X';
        assert!(PredictorState::from_bytes(&bad).is_err());
    }

    #[test]
    fn same_seed_same_state() {
        assert_eq!(sample(), sample());
        let other = PredictorState::random(&ArchSpec::small_conv(2), Shape { c: 3, h: 6, w: 6 }, 8).unwrap();
        assert!(!sample().same_backbone(&other));
    }

    #[test]
    fn missing_head_reported() {
        let s = sample();
        assert!(matches!(s.evaluate("b", TaskKind::SingleLabel, &[]), Err(Error::MissingHead(_))));
    }
}
