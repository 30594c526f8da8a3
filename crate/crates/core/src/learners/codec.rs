//! `UAUD` binary envelope for trained models.
//!
//! ```text
//! "UAUD" | version u16 | kind u8 | num_classes u32 | feature_dim u32 | seed u64 | payload
//! ```
//!
//! All integers and floats are little-endian. Tree leaves store class counts;
//! smoothed probabilities are recomputed on load with the same arithmetic,
//! so predictions round-trip bit-exactly.

use ndarray::{Array1, Array2};

use super::forest::RandomForest;
use super::logistic::LogisticRegression;
use super::mlp::Mlp;
use super::tree::{DecisionTree, Node};
use super::{Model, ModelKind, TrainedClassifier};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UAUD";
pub const FORMAT_VERSION: u16 = 1;

const NODE_SPLIT: u8 = 0;
const NODE_LEAF: u8 = 1;

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Malformed("unexpected end of input".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Bounded element count: each element needs at least `min_bytes`.
    pub fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(min_bytes) > self.buf.len() {
            return Err(Error::Malformed(format!("count {n} exceeds remaining input")));
        }
        Ok(n)
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.saturating_mul(8) > self.buf.len() {
            return Err(Error::Malformed("unexpected end of input".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Malformed(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) fn write_header(w: &mut Writer, magic: &[u8; 4]) {
    w.0.extend_from_slice(magic);
    w.u16(FORMAT_VERSION);
}

pub(crate) fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    if r.take(4)? != magic {
        return Err(Error::Malformed("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn write_tree(w: &mut Writer, tree: &DecisionTree) {
    w.u32(tree.nodes().len());
    for node in tree.nodes() {
        match node {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                w.u8(NODE_SPLIT);
                w.u32(*feature);
                w.f64(*threshold);
                w.u32(*left);
                w.u32(*right);
            }
            Node::Leaf { counts, .. } => {
                w.u8(NODE_LEAF);
                for &c in counts {
                    w.u64(c);
                }
            }
        }
    }
}

fn read_tree(r: &mut Reader<'_>, num_classes: usize, feature_dim: usize) -> Result<DecisionTree> {
    let count = r.count(1)?;
    if count == 0 {
        return Err(Error::Malformed("tree without nodes".into()));
    }
    let mut nodes = Vec::with_capacity(count);
    for i in 0..count {
        match r.u8()? {
            NODE_SPLIT => {
                let feature = r.u32()?;
                let threshold = r.f64()?;
                let (left, right) = (r.u32()?, r.u32()?);
                // Children always follow their parent, which rules out cycles.
                if feature >= feature_dim
                    || left <= i
                    || right <= i
                    || left >= count
                    || right >= count
                {
                    return Err(Error::Malformed(format!("invalid split node {i}")));
                }
                nodes.push(Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                });
            }
            NODE_LEAF => {
                let counts = (0..num_classes).map(|_| r.u64()).collect::<Result<_>>()?;
                nodes.push(Node::leaf(counts));
            }
            tag => return Err(Error::Malformed(format!("unknown node tag {tag}"))),
        }
    }
    Ok(DecisionTree::from_nodes(nodes, num_classes))
}

pub(crate) fn encode(model: &TrainedClassifier) -> Vec<u8> {
    let mut w = Writer::default();
    write_header(&mut w, MAGIC);
    w.u8(model.kind.tag());
    w.u32(model.num_classes);
    w.u32(model.feature_dim);
    w.u64(model.train_seed);
    match &model.model {
        Model::Logistic(m) => {
            w.f64s(m.weights.iter());
            w.f64s(m.bias.iter());
        }
        Model::Tree(t) => write_tree(&mut w, t),
        Model::Forest(f) => {
            w.u32(f.trees().len());
            for t in f.trees() {
                write_tree(&mut w, t);
            }
        }
        Model::Mlp(m) => {
            w.u32(m.hidden_size());
            w.f64s(m.w1.iter());
            w.f64s(m.b1.iter());
            w.f64s(m.w2.iter());
            w.f64s(m.b2.iter());
        }
    }
    w.0
}

pub(crate) fn decode(bytes: &[u8]) -> Result<TrainedClassifier> {
    let mut r = Reader::new(bytes);
    read_header(&mut r, MAGIC)?;
    let tag = r.u8()?;
    let kind = ModelKind::from_tag(tag)
        .ok_or_else(|| Error::Malformed(format!("unknown model kind tag {tag}")))?;
    let num_classes = r.u32()?;
    let feature_dim = r.u32()?;
    let train_seed = r.u64()?;
    if num_classes < 2 || feature_dim == 0 {
        return Err(Error::Malformed("invalid model dimensions".into()));
    }
    let shape_err = |e: ndarray::ShapeError| Error::Malformed(e.to_string());
    let model = match kind {
        ModelKind::LogisticRegression => {
            let weights = r.f64_vec(num_classes * feature_dim)?;
            let bias = r.f64_vec(num_classes)?;
            Model::Logistic(LogisticRegression {
                weights: Array2::from_shape_vec((num_classes, feature_dim), weights)
                    .map_err(shape_err)?,
                bias: Array1::from(bias),
            })
        }
        ModelKind::DecisionTree => Model::Tree(read_tree(&mut r, num_classes, feature_dim)?),
        ModelKind::RandomForest => {
            let n = r.count(6)?;
            if n == 0 {
                return Err(Error::Malformed("forest without trees".into()));
            }
            let trees = (0..n)
                .map(|_| read_tree(&mut r, num_classes, feature_dim))
                .collect::<Result<_>>()?;
            Model::Forest(RandomForest::from_trees(trees, num_classes))
        }
        ModelKind::MultiLayerPerceptron => {
            let hidden = r.count(8)?;
            if hidden == 0 {
                return Err(Error::Malformed("empty hidden layer".into()));
            }
            let w1 = r.f64_vec(feature_dim * hidden)?;
            let b1 = r.f64_vec(hidden)?;
            let w2 = r.f64_vec(hidden * num_classes)?;
            let b2 = r.f64_vec(num_classes)?;
            Model::Mlp(Mlp {
                w1: Array2::from_shape_vec((feature_dim, hidden), w1).map_err(shape_err)?,
                b1: Array1::from(b1),
                w2: Array2::from_shape_vec((hidden, num_classes), w2).map_err(shape_err)?,
                b2: Array1::from(b2),
            })
        }
    };
    r.finish()?;
    Ok(TrainedClassifier {
        kind,
        num_classes,
        feature_dim,
        train_seed,
        model,
    })
}
