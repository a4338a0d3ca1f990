//! Self-describing checkpoint container.
//!
//! Layout: magic `LFCK`, format version (u32 LE), JSON header length
//! (u32 LE), JSON header, then raw little-endian f32 tensor data in header
//! order (trainable tensors first, running-stat buffers after). The header
//! carries the network config, loss weights, fusion mode, and training
//! counters, so loading needs no out-of-band information. Any name, shape,
//! or length mismatch on load is an error, never a silent reinterpretation.

use std::io::{Read, Write};
use std::path::Path;

use lapfuse_core::net::{Activation, Norm};
use lapfuse_core::{FuseMode, GuidanceNet, LossWeights, NetConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolsError};

const MAGIC: &[u8; 4] = b"LFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfigRepr {
    pub base_width: usize,
    pub depth: usize,
    pub growth: usize,
    pub norm: String,
    pub activation: String,
}

impl From<&NetConfig> for NetConfigRepr {
    fn from(c: &NetConfig) -> Self {
        Self {
            base_width: c.base_width,
            depth: c.depth,
            growth: c.growth,
            norm: match c.norm {
                Norm::None => "none",
                Norm::BatchStyle => "batch-style",
                Norm::InstanceStyle => "instance-style",
            }
            .into(),
            activation: match c.activation {
                Activation::ReluLike => "relu-like",
                Activation::Leaky => "leaky",
            }
            .into(),
        }
    }
}

impl NetConfigRepr {
    pub fn to_config(&self) -> Result<NetConfig> {
        Ok(NetConfig {
            base_width: self.base_width,
            depth: self.depth,
            growth: self.growth,
            norm: match self.norm.as_str() {
                "none" => Norm::None,
                "batch-style" => Norm::BatchStyle,
                "instance-style" => Norm::InstanceStyle,
                other => {
                    return Err(ToolsError::Checkpoint(format!(
                        "unknown norm flavor '{other}'"
                    )))
                }
            },
            activation: match self.activation.as_str() {
                "relu-like" => Activation::ReluLike,
                "leaky" => Activation::Leaky,
                other => {
                    return Err(ToolsError::Checkpoint(format!(
                        "unknown activation '{other}'"
                    )))
                }
            },
        })
    }
}

pub fn mode_name(mode: FuseMode) -> &'static str {
    match mode {
        FuseMode::Guided => "guided",
        FuseMode::Direct => "direct",
    }
}

pub fn mode_from_name(name: &str) -> Result<FuseMode> {
    match name {
        "guided" => Ok(FuseMode::Guided),
        "direct" => Ok(FuseMode::Direct),
        other => Err(ToolsError::Checkpoint(format!("unknown mode '{other}'"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: NetConfigRepr,
    loss_weights: [f32; 4],
    mode: String,
    epochs_seen: u64,
    optimizer_steps: u64,
    tensors: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

/// In-memory checkpoint: the network plus everything needed to resume or to
/// reproduce an inference run.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub net: GuidanceNet,
    pub loss_weights: LossWeights,
    pub mode: FuseMode,
    pub epochs_seen: u64,
    pub optimizer_steps: u64,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<TensorEntry> = self
            .net
            .param_names()
            .into_iter()
            .zip(self.net.param_shapes())
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect();
        let buffers: Vec<TensorEntry> = self
            .net
            .buffer_names()
            .into_iter()
            .zip(self.net.buffers().iter().map(|b| vec![b.len()]))
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect();
        let header = Header {
            config: NetConfigRepr::from(self.net.config()),
            loss_weights: [
                self.loss_weights.lambda_max,
                self.loss_weights.lambda_grad,
                self.loss_weights.lambda_ssim,
                self.loss_weights.lambda_consist,
            ],
            mode: mode_name(self.mode).into(),
            epochs_seen: self.epochs_seen,
            optimizer_steps: self.optimizer_steps,
            tensors,
            buffers,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| ToolsError::Checkpoint(format!("header encode: {e}")))?;

        let mut file = std::fs::File::create(path).map_err(ToolsError::io(path))?;
        let mut out = std::io::BufWriter::new(&mut file);
        let werr = ToolsError::io(path);
        (|| -> std::io::Result<()> {
            out.write_all(MAGIC)?;
            out.write_all(&VERSION.to_le_bytes())?;
            out.write_all(&(header_json.len() as u32).to_le_bytes())?;
            out.write_all(&header_json)?;
            for tensor in self.net.params() {
                for v in tensor.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            for buf in self.net.buffers() {
                for v in buf.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            out.flush()
        })()
        .map_err(werr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(ToolsError::io(path))?;
        let fail = |msg: String| ToolsError::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fail("missing LFCK magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + hlen {
            return Err(fail("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])
            .map_err(|e| fail(format!("header decode: {e}")))?;

        let config = header.config.to_config()?;
        let mut net = GuidanceNet::init(config, 0)?;

        // strict structural match against the freshly built skeleton
        let names = net.param_names();
        let shapes = net.param_shapes();
        if names.len() != header.tensors.len() {
            return Err(fail(format!(
                "tensor count mismatch: file has {}, config implies {}",
                header.tensors.len(),
                names.len()
            )));
        }
        for ((name, shape), entry) in names.iter().zip(&shapes).zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(fail(format!(
                    "tensor mismatch: file has {} {:?}, config implies {} {:?}",
                    entry.name, entry.shape, name, shape
                )));
            }
        }
        let buf_names = net.buffer_names();
        if buf_names.len() != header.buffers.len() {
            return Err(fail("buffer count mismatch".into()));
        }

        let mut cursor = std::io::Cursor::new(&bytes[12 + hlen..]);
        let mut read_into = |tensor: &mut Vec<f32>| -> Result<()> {
            let mut chunk = vec![0u8; tensor.len() * 4];
            cursor
                .read_exact(&mut chunk)
                .map_err(|_| fail("truncated tensor data".into()))?;
            for (i, v) in tensor.iter_mut().enumerate() {
                *v = f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
            }
            Ok(())
        };
        for tensor in net.params_mut() {
            read_into(tensor)?;
        }
        for buf in net.buffers_mut() {
            read_into(buf)?;
        }

        Ok(Self {
            net,
            loss_weights: LossWeights {
                lambda_max: header.loss_weights[0],
                lambda_grad: header.loss_weights[1],
                lambda_ssim: header.loss_weights[2],
                lambda_consist: header.loss_weights[3],
            },
            mode: mode_from_name(&header.mode)?,
            epochs_seen: header.epochs_seen,
            optimizer_steps: header.optimizer_steps,
        })
    }
}
