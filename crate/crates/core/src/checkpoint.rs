//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "GNET"
//! version  u32      currently 1
//! arch     7 x u32  input_len, channels, kernel1, kernel2, kernel3,
//!                   stride, classes
//! tensors  20 blobs in fixed order:
//!          conv1 w, conv1 b, bn1 gamma, bn1 beta, bn1 mean, bn1 var,
//!          conv2 ..., conv3 ..., dense w, dense b
//! ```
//!
//! Each tensor blob is `rank: u32`, `dims: rank x u32`, then the row-major
//! elements as 64-bit little-endian floats. Round-trips are bit-exact.

use crate::net::{Architecture, GenreNet, NetError};
use crate::tensor::{Tensor, TensorError};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GNET";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}, expected \"GNET\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0}, expected {VERSION}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint declares infeasible architecture: {0}")]
    BadArchitecture(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0} trailing bytes after the final tensor")]
    TrailingBytes(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

const TENSOR_NAMES: [&str; 20] = [
    "conv1.weights",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "bn1.running_mean",
    "bn1.running_var",
    "conv2.weights",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "bn2.running_mean",
    "bn2.running_var",
    "conv3.weights",
    "conv3.bias",
    "bn3.gamma",
    "bn3.beta",
    "bn3.running_mean",
    "bn3.running_var",
    "dense.weights",
    "dense.bias",
];

fn ordered_tensors(net: &GenreNet) -> [&Tensor; 20] {
    [
        &net.conv1.weights,
        &net.conv1.bias,
        &net.bn1.gamma,
        &net.bn1.beta,
        &net.bn1.running_mean,
        &net.bn1.running_var,
        &net.conv2.weights,
        &net.conv2.bias,
        &net.bn2.gamma,
        &net.bn2.beta,
        &net.bn2.running_mean,
        &net.bn2.running_var,
        &net.conv3.weights,
        &net.conv3.bias,
        &net.bn3.gamma,
        &net.bn3.beta,
        &net.bn3.running_mean,
        &net.bn3.running_var,
        &net.dense.weights,
        &net.dense.bias,
    ]
}

/// Expected tensor shapes for an architecture, in checkpoint order.
fn expected_shapes(arch: &Architecture) -> Result<[Vec<usize>; 20], CheckpointError> {
    let width = arch
        .flattened_width()
        .map_err(|e| CheckpointError::BadArchitecture(e.to_string()))?;
    let ch = arch.channels;
    let bn = |shapes: &mut Vec<Vec<usize>>| {
        for _ in 0..4 {
            shapes.push(vec![ch]);
        }
    };
    let mut shapes = Vec::with_capacity(20);
    shapes.push(vec![ch, 1, arch.kernels[0]]);
    shapes.push(vec![ch]);
    bn(&mut shapes);
    shapes.push(vec![ch, ch, arch.kernels[1]]);
    shapes.push(vec![ch]);
    bn(&mut shapes);
    shapes.push(vec![ch, ch, arch.kernels[2]]);
    shapes.push(vec![ch]);
    bn(&mut shapes);
    shapes.push(vec![arch.classes, width]);
    shapes.push(vec![arch.classes]);
    Ok(shapes.try_into().expect("exactly 20 shapes"))
}

/// Serializes a network; the same network always yields the same bytes.
pub fn checkpoint_to_bytes(net: &GenreNet) -> Vec<u8> {
    let arch = &net.arch;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for value in [
        arch.input_len,
        arch.channels,
        arch.kernels[0],
        arch.kernels[1],
        arch.kernels[2],
        arch.stride,
        arch.classes,
    ] {
        out.extend_from_slice(&(value as u32).to_le_bytes());
    }
    for tensor in ordered_tensors(net) {
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reconstructs a network, validating magic, version, architecture
/// feasibility, and every tensor shape. No partial network is ever returned.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<GenreNet, CheckpointError> {
    let mut cursor = Cursor { bytes, at: 0 };
    let magic = cursor.take::<4>("magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let version = cursor.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let arch = Architecture {
        input_len: cursor.u32("input_len")? as usize,
        channels: cursor.u32("channels")? as usize,
        kernels: [
            cursor.u32("kernel1")? as usize,
            cursor.u32("kernel2")? as usize,
            cursor.u32("kernel3")? as usize,
        ],
        stride: cursor.u32("stride")? as usize,
        classes: cursor.u32("classes")? as usize,
    };
    let expected = expected_shapes(&arch)?;

    let mut tensors = Vec::with_capacity(20);
    for (name, want) in TENSOR_NAMES.iter().zip(&expected) {
        let rank = cursor.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u32("tensor dimension")? as usize);
        }
        if &shape != want {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: want.clone(),
                got: shape,
            });
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(cursor.take::<8>("tensor data")?));
        }
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if cursor.at != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - cursor.at));
    }

    // Assemble via a seeded skeleton, then overwrite every tensor.
    let mut net = GenreNet::init(arch, 0)
        .map_err(|e: NetError| CheckpointError::BadArchitecture(e.to_string()))?;
    let mut it = tensors.into_iter();
    for conv_bn in [
        (&mut net.conv1, &mut net.bn1),
        (&mut net.conv2, &mut net.bn2),
        (&mut net.conv3, &mut net.bn3),
    ] {
        let (conv, bn) = conv_bn;
        conv.weights = it.next().unwrap();
        conv.bias = it.next().unwrap();
        bn.gamma = it.next().unwrap();
        bn.beta = it.next().unwrap();
        bn.running_mean = it.next().unwrap();
        bn.running_var = it.next().unwrap();
    }
    net.dense.weights = it.next().unwrap();
    net.dense.bias = it.next().unwrap();
    Ok(net)
}

pub fn checkpoint_save(net: &GenreNet, path: &Path) -> Result<(), CheckpointError> {
    Ok(fs::write(path, checkpoint_to_bytes(net))?)
}

pub fn checkpoint_load(path: &Path) -> Result<GenreNet, CheckpointError> {
    checkpoint_from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        if self.at + N > self.bytes.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let out = self.bytes[self.at..self.at + N].try_into().unwrap();
        self.at += N;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }
}
