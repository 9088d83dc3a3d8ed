//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "QBNET1"                       magic and format version
//! u8   kind                      0 = float, 1 = quantized
//! u64  seed
//! u32  rank, u32 × rank          per-sample input shape
//! u32  layer count, then per layer a u8 tag and its u32 dims
//! per parameterized layer:       f32 weights, f32 biases (float master)
//! quantized only:
//!   u32 bits
//!   per parameterized layer:     f64 step size, then one level index per
//!                                weight (i8 when bits <= 8, else i16)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::nn::{LayerSpec, Network};
use crate::quant::{apply_quantizer, level_indices, QuantizerSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"QBNET1";

/// A quantized network together with the float master it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub master: Network<f32>,
    pub spec: QuantizerSpec,
    pub network: Network<f32>,
}

impl QuantizedModel {
    pub fn new(master: Network<f32>, spec: QuantizerSpec) -> Result<Self> {
        let network = apply_quantizer(&master, &spec)?;
        Ok(Self {
            master,
            spec,
            network,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Float(Network<f32>),
    Quantized(QuantizedModel),
}

impl Checkpoint {
    /// The network used for inference: the quantized view when present.
    pub fn network(&self) -> &Network<f32> {
        match self {
            Checkpoint::Float(n) => n,
            Checkpoint::Quantized(q) => &q.network,
        }
    }

    pub fn master(&self) -> &Network<f32> {
        match self {
            Checkpoint::Float(n) => n,
            Checkpoint::Quantized(q) => &q.master,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u8(matches!(self, Checkpoint::Quantized(_)) as u8);
        let master = self.master();
        w.u64(master.seed());
        w.u32(master.input_shape().len() as u32);
        for &d in master.input_shape() {
            w.u32(d as u32);
        }
        w.u32(master.layers().len() as u32);
        for l in master.layers() {
            encode_layer(&mut w, l);
        }
        for (wt, b) in master.weights().iter().zip(master.biases()) {
            for &v in wt.data().iter().chain(b.data()) {
                w.bytes(&v.to_le_bytes());
            }
        }
        if let Checkpoint::Quantized(q) = self {
            w.u32(q.spec.bits());
            let wide = q.spec.bits() > 8;
            for (wt, &step) in q.network.weights().iter().zip(q.spec.step_sizes()) {
                w.bytes(&step.to_le_bytes());
                for k in level_indices(wt, step, q.spec.levels())? {
                    if wide {
                        w.bytes(&(k as i16).to_le_bytes());
                    } else {
                        w.bytes(&(k as i8).to_le_bytes());
                    }
                }
            }
        }
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err("missing QBNET1 header".into());
        }
        let kind = r.u8()?;
        if kind > 1 {
            return Err(format!("unknown checkpoint kind {kind}"));
        }
        let seed = r.u64()?;
        let rank = r.u32()? as usize;
        let input_shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let n_layers = r.u32()? as usize;
        let layers = (0..n_layers).map(|_| decode_layer(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let shell = Network::<f32>::new(input_shape.clone(), layers.clone(), seed)
            .map_err(|e| e.to_string())?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (wt, b) in shell.weights().iter().zip(shell.biases()) {
            weights.push(r.f32_tensor(wt.shape().to_vec())?);
            biases.push(r.f32_tensor(b.shape().to_vec())?);
        }
        let master = Network::from_parts(input_shape, layers, weights, biases, seed)
            .map_err(|e| e.to_string())?;
        if kind == 0 {
            r.finish()?;
            return Ok(Checkpoint::Float(master));
        }
        let bits = r.u32()?;
        let mut steps = Vec::new();
        let mut network = master.clone();
        for i in 0..master.num_param_layers() {
            let step = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            steps.push(step);
            let len = master.weights()[i].len();
            let half = ((1i64 << bits.min(30)) - 2) / 2;
            for v in network.weight_mut(i).iter_mut().take(len) {
                let k = if bits > 8 {
                    i16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as i64
                } else {
                    r.take(1)?[0] as i8 as i64
                };
                if k.abs() > half {
                    return Err(format!("level index {k} outside the {bits}-bit range"));
                }
                *v = (step * k as f64) as f32;
            }
        }
        r.finish()?;
        let spec = QuantizerSpec::new(bits, steps).map_err(|e| e.to_string())?;
        Ok(Checkpoint::Quantized(QuantizedModel {
            master,
            spec,
            network,
        }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}

/// FNV-1a over the bit patterns of every weight and bias.
pub fn parameter_hash(net: &Network<f32>) -> u64 {
    let mut h = Fnv1a::default();
    for t in net.weights().iter().chain(net.biases()) {
        for v in t.data() {
            h.write(&v.to_bits().to_le_bytes());
        }
    }
    h.finish()
}

fn encode_layer(w: &mut Writer, l: &LayerSpec) {
    match *l {
        LayerSpec::Dense { inputs, outputs } => {
            w.u8(0);
            w.u32(inputs as u32);
            w.u32(outputs as u32);
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            height,
            width,
        } => {
            w.u8(1);
            for d in [in_channels, out_channels, height, width] {
                w.u32(d as u32);
            }
        }
        LayerSpec::MaxPool2x2 {
            channels,
            height,
            width,
        } => {
            w.u8(2);
            for d in [channels, height, width] {
                w.u32(d as u32);
            }
        }
        LayerSpec::Relu => w.u8(3),
        LayerSpec::Sigmoid => w.u8(4),
        LayerSpec::Softmax => w.u8(5),
    }
}

fn decode_layer(r: &mut Reader) -> std::result::Result<LayerSpec, String> {
    let tag = r.u8()?;
    let mut d = || r.u32().map(|v| v as usize);
    Ok(match tag {
        0 => LayerSpec::Dense {
            inputs: d()?,
            outputs: d()?,
        },
        1 => LayerSpec::Conv2d {
            in_channels: d()?,
            out_channels: d()?,
            height: d()?,
            width: d()?,
        },
        2 => LayerSpec::MaxPool2x2 {
            channels: d()?,
            height: d()?,
            width: d()?,
        },
        3 => LayerSpec::Relu,
        4 => LayerSpec::Sigmoid,
        5 => LayerSpec::Softmax,
        t => return Err(format!("unknown layer tag {t}")),
    })
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated checkpoint at byte {}", self.pos)),
        }
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32_tensor(&mut self, shape: Vec<usize>) -> std::result::Result<Tensor<f32>, String> {
        let len: usize = shape.iter().product();
        let raw = self.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.bytes.len() - self.pos))
        }
    }
}
