//! Subprocess denoiser.
//!
//! Wire format, all little-endian, one request frame answered by one response
//! frame:
//!
//! ```text
//! request:  u64 count = d + 1 | f64 eta | f64 z[0] … f64 z[d-1]
//! response: u64 count = d     | f64 x[0] … f64 x[d-1]
//! ```
//!
//! The child reads frames from stdin until EOF and writes each answer to
//! stdout, flushing after every frame.

use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use nalgebra::DVector;

use super::{check_input, Denoiser};
use crate::{Error, Result};

/// Largest frame accepted from a child, in values.
const MAX_FRAME: u64 = 1 << 28;

/// Writes one length-prefixed `f64` record.
pub fn write_record<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one length-prefixed `f64` record. Returns `None` on a clean EOF
/// before the length prefix.
pub fn read_record<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<f64>>> {
    let mut len = [0u8; 8];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u64::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {n} values exceeds limit"),
        ));
    }
    let mut out = Vec::with_capacity(n as usize);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(Some(out))
}

struct Pipes {
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// A denoiser served by a child process speaking the record protocol.
pub struct ExternalDenoiser {
    dim: usize,
    eta_range: (f64, f64),
    pipes: Mutex<Option<Pipes>>,
    child: Mutex<Child>,
}

impl ExternalDenoiser {
    pub fn spawn(program: &str, args: &[String], dim: usize) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self {
            dim,
            eta_range: (0.0, f64::INFINITY),
            pipes: Mutex::new(Some(Pipes {
                stdin: BufWriter::new(stdin),
                stdout: BufReader::new(stdout),
            })),
            child: Mutex::new(child),
        })
    }

    /// Declares the noise range the external model was trained on.
    pub fn with_eta_range(mut self, lo: f64, hi: f64) -> Self {
        self.eta_range = (lo, hi);
        self
    }
}

impl Denoiser for ExternalDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eta_range(&self) -> (f64, f64) {
        self.eta_range
    }

    fn denoise(&self, z: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        check_input(self.dim, z, eta)?;
        let mut guard = self
            .pipes
            .lock()
            .map_err(|_| Error::Denoiser("external denoiser lock poisoned".into()))?;
        let pipes = guard
            .as_mut()
            .ok_or_else(|| Error::Denoiser("external denoiser is closed".into()))?;
        let mut frame = Vec::with_capacity(self.dim + 1);
        frame.push(eta);
        frame.extend(z.iter());
        write_record(&mut pipes.stdin, &frame)?;
        pipes.stdin.flush()?;
        let reply = read_record(&mut pipes.stdout)?
            .ok_or_else(|| Error::Denoiser("external denoiser closed its output".into()))?;
        if reply.len() != self.dim {
            return Err(Error::Denoiser(format!(
                "external denoiser returned {} values, expected {}",
                reply.len(),
                self.dim
            )));
        }
        if reply.iter().any(|v| !v.is_finite()) {
            return Err(Error::Denoiser("external denoiser returned non-finite values".into()));
        }
        Ok(DVector::from_vec(reply))
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(mut p) = self.pipes.lock() {
            p.take();
        }
        if let Ok(mut c) = self.child.lock() {
            let _ = c.wait();
        }
    }
}
