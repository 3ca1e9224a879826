//! Model files: the line `SGM1`, one JSON header line describing the
//! architecture, then every parameter tensor as SGT1 in layer order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Network;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::tensor::{read_tensor, write_tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"SGM1";
const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    name: String,
    task: Task,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    frozen: Vec<bool>,
    tensor_count: usize,
}

pub fn write_model<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        name: net.name.clone(),
        task: net.task,
        input_shape: net.input_shape().to_vec(),
        layers: net.specs(),
        frozen: net.layers().iter().map(|l| l.is_frozen()).collect(),
        tensor_count: net.layers().iter().map(|l| l.params().len()).sum(),
    };
    w.write_all(MODEL_MAGIC)?;
    w.write_all(b"\n")?;
    let json = serde_json::to_string(&header).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    for layer in net.layers() {
        for p in layer.params() {
            write_tensor(&mut w, p)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<Network> {
    read_model_from(&mut BufReader::new(r))
}

/// Reads the magic line and the JSON header line of a model file.
pub(crate) fn read_header_line<R: BufRead>(r: &mut R) -> Result<Vec<u8>> {
    let mut magic = [0u8; 5];
    let mut got = 0;
    while got < magic.len() {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < magic.len() || &magic[..4] != MODEL_MAGIC || magic[4] != b'\n' {
        return Err(Error::Magic {
            expected: String::from_utf8_lossy(MODEL_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic[..got.min(4)]).into_owned(),
        });
    }
    let mut line = Vec::new();
    r.take(MAX_HEADER as u64).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Truncated("model header line is incomplete".into()));
    }
    Ok(line)
}

/// Reads one model from a buffered stream, consuming exactly its bytes, so
/// models can be embedded back to back in a larger file.
pub fn read_model_from<R: BufRead>(r: &mut R) -> Result<Network> {
    let line = read_header_line(r)?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Manifest(format!("bad model header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported model format version {}",
            header.format_version
        )));
    }
    if header.frozen.len() != header.layers.len() {
        return Err(Error::Manifest(format!(
            "{} frozen flags for {} layers",
            header.frozen.len(),
            header.layers.len()
        )));
    }
    let mut net = Network::new(
        header.name,
        header.task,
        header.input_shape,
        &header.layers,
        0,
    )
    .map_err(|e| Error::Manifest(format!("header describes an invalid network: {e}")))?;
    let expected: usize = net.layers().iter().map(|l| l.params().len()).sum();
    if expected != header.tensor_count {
        return Err(Error::Manifest(format!(
            "header declares {} tensors, architecture needs {expected}",
            header.tensor_count
        )));
    }
    let mut problems = Vec::new();
    for (li, frozen) in header.frozen.iter().enumerate() {
        let layer = &mut net.layers[li];
        for (pi, p) in layer.params_mut().into_iter().enumerate() {
            let t = read_tensor(r)?;
            if t.shape() == p.shape() {
                *p = t;
            } else {
                problems.push(format!(
                    "layer {li} param {pi}: file {:?}, architecture {:?}",
                    t.shape(),
                    p.shape()
                ));
            }
        }
        layer.set_frozen(*frozen);
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    Ok(net)
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_model(net, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    read_model(File::open(path)?)
}
