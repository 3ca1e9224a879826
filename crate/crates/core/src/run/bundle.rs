//! Composite model files. They share the `SGM1` magic line with plain model
//! files but their JSON header names a `bundle` kind; the parts follow as
//! complete embedded model files, then any recurrent cell tensors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{AutoencoderPair, GanPair};
use crate::network::{read_header_line, read_model_from, write_model, MODEL_MAGIC};
use crate::recurrent::{CellSpec, OutputHead, SequenceModel};
use crate::rng::rng_from_seed;
use crate::tensor::{read_tensor, write_tensor};

const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Bundle {
    Recurrent(SequenceModel),
    Gan(GanPair),
    Autoencoder(AutoencoderPair),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "bundle", rename_all = "snake_case", deny_unknown_fields)]
enum BundleHeader {
    Recurrent {
        format_version: u32,
        cell: CellSpec,
        head: OutputHead,
        has_features: bool,
        cell_tensors: usize,
    },
    Gan {
        format_version: u32,
    },
    Autoencoder {
        format_version: u32,
        variational: bool,
        beta: f64,
    },
}

impl BundleHeader {
    fn version(&self) -> u32 {
        match self {
            BundleHeader::Recurrent { format_version, .. }
            | BundleHeader::Gan { format_version }
            | BundleHeader::Autoencoder { format_version, .. } => *format_version,
        }
    }
}

pub fn write_bundle<W: Write>(bundle: &Bundle, mut w: W) -> Result<()> {
    let header = match bundle {
        Bundle::Recurrent(m) => BundleHeader::Recurrent {
            format_version: BUNDLE_VERSION,
            cell: m.cell.spec(),
            head: m.head,
            has_features: m.features.is_some(),
            cell_tensors: m.cell.params().len(),
        },
        Bundle::Gan(_) => BundleHeader::Gan {
            format_version: BUNDLE_VERSION,
        },
        Bundle::Autoencoder(p) => BundleHeader::Autoencoder {
            format_version: BUNDLE_VERSION,
            variational: p.variational,
            beta: p.beta,
        },
    };
    w.write_all(MODEL_MAGIC)?;
    w.write_all(b"\n")?;
    let json = serde_json::to_string(&header).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    match bundle {
        Bundle::Recurrent(m) => {
            if let Some(f) = &m.features {
                write_model(f, &mut w)?;
            }
            for t in m.cell.params() {
                write_tensor(&mut w, t)?;
            }
        }
        Bundle::Gan(p) => {
            write_model(&p.generator, &mut w)?;
            write_model(&p.discriminator, &mut w)?;
        }
        Bundle::Autoencoder(p) => {
            write_model(&p.encoder, &mut w)?;
            write_model(&p.decoder, &mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_bundle_from<R: BufRead>(r: &mut R) -> Result<Bundle> {
    let line = read_header_line(r)?;
    let header: BundleHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Manifest(format!("bad bundle header: {e}")))?;
    if header.version() != BUNDLE_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported bundle version {}",
            header.version()
        )));
    }
    let bundle = match header {
        BundleHeader::Recurrent {
            cell,
            head,
            has_features,
            cell_tensors,
            ..
        } => {
            let features = if has_features {
                Some(read_model_from(r)?)
            } else {
                None
            };
            let mut built = cell.build(&mut rng_from_seed(0))?;
            let slots = built.params_mut();
            if slots.len() != cell_tensors {
                return Err(Error::Manifest(format!(
                    "cell needs {} tensors, header lists {cell_tensors}",
                    slots.len()
                )));
            }
            for (i, slot) in slots.into_iter().enumerate() {
                let t = read_tensor(r)?;
                if t.shape() != slot.shape() {
                    return Err(Error::Load(vec![format!(
                        "cell tensor {i}: expected {:?}, found {:?}",
                        slot.shape(),
                        t.shape()
                    )]));
                }
                *slot = t;
            }
            Bundle::Recurrent(SequenceModel::new(features, built, head)?)
        }
        BundleHeader::Gan { .. } => {
            let generator = read_model_from(r)?;
            let discriminator = read_model_from(r)?;
            Bundle::Gan(GanPair::new(generator, discriminator)?)
        }
        BundleHeader::Autoencoder {
            variational, beta, ..
        } => {
            let encoder = read_model_from(r)?;
            let decoder = read_model_from(r)?;
            Bundle::Autoencoder(AutoencoderPair::diagnostic(
                encoder,
                decoder,
                variational,
                beta,
            )?)
        }
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Manifest(
            "trailing bytes after the last bundle part".into(),
        ));
    }
    Ok(bundle)
}

pub fn read_bundle<R: Read>(r: R) -> Result<Bundle> {
    read_bundle_from(&mut BufReader::new(r))
}

pub fn save_bundle(bundle: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    write_bundle(bundle, BufWriter::new(File::create(path)?))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    read_bundle(File::open(path)?)
}
