//! `QIP1` checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "QIP1"
//! u32 count of layer dims, then the dims [d_in, hidden.., d]
//! u32 n_classes, u32 encoder (0 amplitude, 1 phase, 2 u3), u32 n_qubits
//! u32 count of observable passes, then one u32 per pass (0 X, 1 Y, 2 Z)
//! u32 parameter count P
//! f64 x P  parameters: per MLP layer weights (row-major) then bias,
//!          classifier W (d x C, row-major), encoder parameters
//! f64 x P  first moments
//! f64 x P  second moments
//! u64 step, u64 total_steps, u64 seed
//! ```

use std::path::Path;

use qip_core::encode::{EncodingKind, EncodingSpec};
use qip_core::observe::ObservableSpec;
use qip_core::qsim::PauliAxis;
use qip_core::train::{ClassifierHead, Layer, Mlp, ModelSpec, TrainConfig, TrainState};
use qip_core::Matrix;

use crate::error::{FormatError, QipError, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QIP1";

fn encoder_code(k: EncodingKind) -> u32 {
    match k {
        EncodingKind::Amplitude => 0,
        EncodingKind::Phase => 1,
        EncodingKind::U3 => 2,
    }
}

fn axis_code(a: PauliAxis) -> u32 {
    match a {
        PauliAxis::X => 0,
        PauliAxis::Y => 1,
        PauliAxis::Z => 2,
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut u = Vec::new();
    let dims = state.mlp.dims();
    u.push(dims.len() as u32);
    u.extend(dims.iter().map(|&d| d as u32));
    u.push(state.head.n_classes() as u32);
    u.push(encoder_code(state.enc.kind()));
    u.push(state.enc.n_qubits() as u32);
    u.push(state.obs.passes().len() as u32);
    u.extend(state.obs.passes().iter().map(|&a| axis_code(a)));
    u.push(state.n_params() as u32);

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for x in u {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for block in [state.params_flat(), state.moment1.clone(), state.moment2.clone()] {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for x in [state.step, state.total_steps, state.seed] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(QipError::format(
                self.path,
                FormatError::Truncated { needed: (self.at + n) as u64, actual: self.bytes.len() as u64 },
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.invalid("parameter count"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn invalid(&self, what: &str) -> QipError {
        QipError::format(self.path, FormatError::Invalid(what.to_string()))
    }
}

/// Model architecture recorded in a checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub layer_dims: Vec<usize>,
    pub n_classes: usize,
    pub encoder: EncodingKind,
    pub n_qubits: usize,
    pub observable: ObservableSpec,
}

impl CheckpointHeader {
    /// Checks the architecture against a model spec.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let mut problems = Vec::new();
        if self.layer_dims != spec.layer_dims() {
            problems.push(format!("layer dims {:?} vs {:?}", self.layer_dims, spec.layer_dims()));
        }
        if self.n_classes != spec.n_classes {
            problems.push(format!("{} classes vs {}", self.n_classes, spec.n_classes));
        }
        if self.encoder != spec.encoder {
            problems.push(format!("encoder {} vs {}", self.encoder, spec.encoder));
        }
        if self.encoder != EncodingKind::Amplitude && self.n_qubits != spec.n_qubits {
            problems.push(format!("{} qubits vs {}", self.n_qubits, spec.n_qubits));
        }
        if self.observable != spec.observable {
            problems.push(format!("observable {} vs {}", self.observable, spec.observable));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(QipError::Mismatch(problems.join("; ")))
        }
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8], config: TrainConfig) -> Result<(CheckpointHeader, TrainState)> {
    let mut r = Reader { path, bytes, at: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(QipError::format(
            path,
            FormatError::BadMagic { expected: CHECKPOINT_MAGIC.to_vec(), found: magic.to_vec() },
        ));
    }
    let n_dims = r.u32()?;
    if !(2..=64).contains(&n_dims) {
        return Err(r.invalid("layer count"));
    }
    let layer_dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n_classes = r.u32()?;
    let encoder = match r.u32()? {
        0 => EncodingKind::Amplitude,
        1 => EncodingKind::Phase,
        2 => EncodingKind::U3,
        _ => return Err(r.invalid("encoder code")),
    };
    let n_qubits = r.u32()?;
    let n_passes = r.u32()?;
    if n_passes > 16 {
        return Err(r.invalid("observable pass count"));
    }
    let mut passes = Vec::with_capacity(n_passes);
    for _ in 0..n_passes {
        passes.push(match r.u32()? {
            0 => PauliAxis::X,
            1 => PauliAxis::Y,
            2 => PauliAxis::Z,
            _ => return Err(r.invalid("observable axis")),
        });
    }
    let observable = ObservableSpec::new(passes)?;
    let n_params = r.u32()?;
    let params = r.f64s(n_params)?;
    let m1 = r.f64s(n_params)?;
    let m2 = r.f64s(n_params)?;
    let (step, total_steps, seed) = (r.u64()?, r.u64()?, r.u64()?);
    if r.at != bytes.len() {
        return Err(QipError::format(path, FormatError::Trailing { trailing: (bytes.len() - r.at) as u64 }));
    }

    let layers = layer_dims
        .windows(2)
        .map(|w| Layer { weights: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]] })
        .collect();
    let mlp = Mlp::from_layers(layers)?;
    let d = *layer_dims.last().expect("at least two dims");
    let head = ClassifierHead::new(Matrix::zeros(d, n_classes));
    let enc = match encoder {
        EncodingKind::Amplitude => EncodingSpec::amplitude(d)?,
        EncodingKind::Phase => EncodingSpec::phase(d, n_qubits)?,
        EncodingKind::U3 => {
            let template = EncodingSpec::phase(d, n_qubits)?;
            EncodingSpec::u3(d, n_qubits, vec![0.0; template.layers() * n_qubits * 3])?
        }
    };
    if enc.n_qubits() != n_qubits {
        return Err(r.invalid("qubit count"));
    }
    let mut state = TrainState::from_parts(mlp, head, enc, observable.clone(), config, seed)?;
    if state.n_params() != n_params {
        return Err(r.invalid("parameter count does not match the architecture"));
    }
    state.set_params_flat(&params)?;
    state.moment1 = m1;
    state.moment2 = m2;
    state.step = step;
    state.total_steps = total_steps;
    let header = CheckpointHeader { layer_dims, n_classes, encoder, n_qubits, observable };
    Ok((header, state))
}

pub fn load_checkpoint(path: &Path, config: TrainConfig) -> Result<(CheckpointHeader, TrainState)> {
    let bytes = std::fs::read(path).map_err(|e| QipError::io(path, e))?;
    decode_checkpoint(path, &bytes, config)
}
