//! Dataset container files and CSV ingestion.
//!
//! Container layout:
//!
//! ```text
//! SGD1 {"format_version":1,"task":...,"count":N,"input_shape":[...],"target_shape":[...],"note":...}\n
//! SGT1 inputs  [N, ...input_shape]
//! SGT1 targets [N, ...target_shape]
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Task};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"SGD1";
const FORMAT_VERSION: u32 = 1;
const MAX_MANIFEST: u64 = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    task: Task,
    count: usize,
    input_shape: Vec<usize>,
    target_shape: Vec<usize>,
    #[serde(default)]
    note: String,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let (Some(input_shape), Some(target_shape)) = (ds.input_shape(), ds.target_shape()) else {
        return Err(Error::config("cannot save an empty dataset"));
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        task: ds.task,
        count: ds.len(),
        input_shape: input_shape.to_vec(),
        target_shape: target_shape.to_vec(),
        note: ds.note.clone(),
    };
    let json = serde_json::to_string(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(b" ")?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    let inputs: Vec<Tensor> = ds.examples.iter().map(|e| e.input.clone()).collect();
    let targets: Vec<Tensor> = ds.examples.iter().map(|e| e.target.clone()).collect();
    write_tensor(&mut w, &Tensor::stack(&inputs)?)?;
    write_tensor(&mut w, &Tensor::stack(&targets)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    (&mut r).take(MAX_MANIFEST).read_until(b'\n', &mut line)?;
    if line.len() < 5 || &line[..4] != DATASET_MAGIC || line[4] != b' ' {
        return Err(Error::Magic {
            expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&line[..line.len().min(4)]).into_owned(),
        });
    }
    if line.last() != Some(&b'\n') {
        return Err(Error::Truncated(
            "dataset manifest line is incomplete".into(),
        ));
    }
    let m: Manifest = serde_json::from_slice(&line[5..])
        .map_err(|e| Error::Manifest(format!("bad dataset manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported dataset format version {}",
            m.format_version
        )));
    }
    let inputs = read_tensor(&mut r)?;
    let targets = read_tensor(&mut r)?;
    let expect = |what: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
        let mut want = vec![m.count];
        want.extend_from_slice(shape);
        if t.shape() == want.as_slice() {
            Ok(())
        } else {
            Err(Error::Manifest(format!(
                "manifest declares {what} {want:?}, file holds {:?}",
                t.shape()
            )))
        }
    };
    expect("inputs", &inputs, &m.input_shape)?;
    expect("targets", &targets, &m.target_shape)?;
    let examples = inputs
        .unstack()
        .into_iter()
        .zip(targets.unstack())
        .map(|(input, target)| Example { input, target })
        .collect();
    Dataset::new(m.task, examples, m.note)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

/// Reads one example per CSV row. Columns whose header ends in `:target`
/// form the target vector; all other columns form the input, reshaped to
/// `input_shape` when given (for example `[T, n]` for sequences).
pub fn load_csv(
    path: impl AsRef<Path>,
    task: Task,
    input_shape: Option<&[usize]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let is_target: Vec<bool> = headers
        .iter()
        .map(|h| h.trim().ends_with(":target"))
        .collect();
    let n_targets = is_target.iter().filter(|&&t| t).count();
    if n_targets == 0 || n_targets == is_target.len() {
        return Err(Error::config(format!(
            "{}: need at least one input column and one ':target' column",
            path.display()
        )));
    }
    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let (mut input, mut target) = (Vec::new(), Vec::new());
        for (col, (field, &t)) in record.iter().zip(&is_target).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::config(format!(
                    "{}: row {}, column '{}': '{field}' is not a number",
                    path.display(),
                    row + 2,
                    &headers[col]
                ))
            })?;
            if t {
                target.push(v);
            } else {
                input.push(v);
            }
        }
        let mut input = Tensor::vector(&input);
        if let Some(shape) = input_shape {
            input = input
                .into_reshaped(shape.to_vec())
                .map_err(|e| Error::config(format!("{}: row {}: {e}", path.display(), row + 2)))?;
        }
        examples.push(Example {
            input,
            target: Tensor::vector(&target),
        });
    }
    if examples.is_empty() {
        return Err(Error::config(format!("{}: no data rows", path.display())));
    }
    Dataset::new(task, examples, format!("csv:{}", path.display()))
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::config(format!("{other:?}")),
        }
    } else {
        Error::config(format!("csv: {e}"))
    }
}
