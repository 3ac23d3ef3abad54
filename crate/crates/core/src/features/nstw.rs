//! `NSTW` weight files and seeded initialization of the default network.
//!
//! Layout (little-endian): magic `NSTW`, u32 version, u32 conv count; per
//! conv a u16-prefixed utf-8 name, u32 `kh kw cin cout stride`, then
//! `kh*kw*cin*cout` f32 weights indexed `[co][ci][ky][kx]` and `cout` f32
//! biases; finally f32 input mean and scale.
//!
//! Only convs are stored. The layer chain is rebuilt as conv + relu per
//! entry, with a 2x2 max pool after every conv except the first and last.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ConvWeights, FeatureNetwork, LayerKind, LayerSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NSTW";
const VERSION: u32 = 1;

/// Shape of the default conv chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniNetSpec {
    pub in_channels: usize,
    pub kernel: usize,
    pub channels: Vec<usize>,
}

impl Default for MiniNetSpec {
    fn default() -> Self {
        MiniNetSpec {
            in_channels: 1,
            kernel: 3,
            channels: vec![16, 32, 64, 128],
        }
    }
}

fn conv_name(i: usize) -> String {
    format!("L{}", i + 1)
}

/// Expands stored convs into the full layer chain.
fn chain(convs: Vec<(String, LayerKind, ConvWeights)>, mean: f64, scale: f64) -> Result<FeatureNetwork> {
    let n = convs.len();
    let mut layers = Vec::with_capacity(3 * n);
    let mut weights = Vec::with_capacity(n);
    for (i, (name, kind, w)) in convs.into_iter().enumerate() {
        layers.push(LayerSpec {
            name: name.clone(),
            kind,
        });
        layers.push(LayerSpec::relu(format!("{name}.relu")));
        if i >= 1 && i + 1 < n {
            layers.push(LayerSpec::max_pool(format!("{name}.pool"), 2, 2));
        }
        weights.push(w);
    }
    FeatureNetwork::new(layers, weights, mean, scale)
}

/// Orthogonal initialization (gain sqrt 2, zero bias), rounded to f32 so that
/// a save/load round trip is lossless.
pub fn init_random(spec: &MiniNetSpec, seed: u64) -> Result<FeatureNetwork> {
    if spec.channels.is_empty() || spec.kernel == 0 || spec.in_channels == 0 {
        return Err(Error::invalid("network spec needs at least one conv with nonzero extents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cin = spec.in_channels;
    let k = spec.kernel;
    let mut convs = Vec::with_capacity(spec.channels.len());
    for (i, &cout) in spec.channels.iter().enumerate() {
        let weights = orthogonal(cout, cin * k * k, 2f64.sqrt(), &mut rng)
            .into_iter()
            .map(|v| v as f32 as f64)
            .collect();
        let kind = LayerSpec::conv("", k, cin, cout, 1).kind;
        convs.push((
            conv_name(i),
            kind,
            ConvWeights {
                weights,
                bias: vec![0.0; cout],
            },
        ));
        cin = cout;
    }
    chain(convs, 0.0, 1.0)
}

/// `rows x cols` matrix with orthonormal rows (or columns, whichever is
/// shorter), scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (short, long) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(short);
    while vecs.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        // Two passes of Gram-Schmidt for stability.
        for _ in 0..2 {
            for u in &vecs {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for (s, v) in vecs.iter().enumerate() {
        for (l, &x) in v.iter().enumerate() {
            let (r, c) = if rows <= cols { (s, l) } else { (l, s) };
            m[r * cols + c] = gain * x;
        }
    }
    m
}

pub fn encode_nstw(net: &FeatureNetwork) -> Result<Vec<u8>> {
    let convs: Vec<_> = net.conv_weights().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(convs.len() as u32).to_le_bytes());
    for (layer, w) in convs {
        let LayerKind::Conv {
            kh,
            kw,
            cin,
            cout,
            stride,
            ..
        } = layer.kind
        else {
            unreachable!("conv_weights yields convs only")
        };
        let name = layer.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("layer name too long: {}", layer.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        for v in [kh, kw, cin, cout, stride] {
            let v = u32::try_from(v).map_err(|_| Error::invalid("layer extent exceeds u32"))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in w.weights.iter().chain(&w.bias) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(net.mean() as f32).to_le_bytes());
    out.extend_from_slice(&(net.scale() as f32).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format("NSTW", format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("NSTW", "tensor size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_nstw(buf: &[u8]) -> Result<FeatureNetwork> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("NSTW", "bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format("NSTW", format!("unsupported version {version}")));
    }
    let count = r.u32("layer count")?;
    if count == 0 {
        return Err(Error::format("NSTW", "file holds no layers"));
    }
    let mut convs = Vec::new();
    for i in 0..count {
        let len = r.u16("layer name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "layer name")?)
            .map_err(|_| Error::format("NSTW", format!("layer {i} name is not utf-8")))?
            .to_owned();
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32("layer header")?;
        }
        let [kh, kw, cin, cout, stride] = dims;
        let n = kh
            .checked_mul(kw)
            .and_then(|v| v.checked_mul(cin))
            .and_then(|v| v.checked_mul(cout))
            .ok_or_else(|| Error::format("NSTW", format!("layer `{name}` is too large")))?;
        let weights = r.f32s(n, &format!("weights of `{name}`"))?;
        let bias = r.f32s(cout, &format!("biases of `{name}`"))?;
        let kind = LayerKind::Conv {
            kh,
            kw,
            cin,
            cout,
            stride,
            same_pad: true,
        };
        convs.push((name, kind, ConvWeights { weights, bias }));
    }
    let norm = r.f32s(2, "input normalization")?;
    if r.pos != buf.len() {
        return Err(Error::format("NSTW", format!("{} trailing bytes", buf.len() - r.pos)));
    }
    chain(convs, norm[0], norm[1])
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<FeatureNetwork> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nstw(&buf)
}

pub fn save_weights(path: impl AsRef<Path>, net: &FeatureNetwork) -> Result<()> {
    crate::write_atomic(path.as_ref(), &encode_nstw(net)?)
}
