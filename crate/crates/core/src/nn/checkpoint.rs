//! Weight files: `SGNN1` magic, then for each tensor a little-endian `u32`
//! name length, the UTF-8 name, a `u32` rank, `u64` dims and the raw `f64`
//! values. Tensors run to end of file.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Network, NetworkSpec, NnError, Tensor};

pub const MAGIC: &[u8; 5] = b"SGNN1";

pub fn write_tensors<W: Write>(mut out: W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            out.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn read_tensors<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::Checkpoint("missing SGNN1 magic".into()));
    }
    let mut cur = &bytes[MAGIC.len()..];
    let mut out = Vec::new();
    while !cur.is_empty() {
        let name_len = take_u32(&mut cur)? as usize;
        let name = std::str::from_utf8(take(&mut cur, name_len)?)
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take_u32(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let raw = take(&mut cur, 8)?;
            shape.push(u64::from_le_bytes(raw.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut cur, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(shape, data)));
    }
    Ok(out)
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8], NnError> {
    if cur.len() < n {
        return Err(NnError::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn take_u32(cur: &mut &[u8]) -> Result<u32, NnError> {
    Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
}

impl Network {
    pub fn write_weights<W: Write>(&self, out: W) -> std::io::Result<()> {
        let named: Vec<(String, Tensor)> = self
            .names()
            .iter()
            .cloned()
            .zip(self.params().iter().cloned())
            .collect();
        write_tensors(out, &named)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = std::fs::File::create(path)?;
        self.write_weights(std::io::BufWriter::new(file))?;
        Ok(())
    }

    /// Loads weights for `spec`; names and shapes must match exactly.
    pub fn load(spec: NetworkSpec, path: &Path) -> Result<Network, NnError> {
        let file = std::fs::File::open(path)?;
        Network::read_weights(spec, std::io::BufReader::new(file))
    }

    pub fn read_weights<R: Read>(spec: NetworkSpec, input: R) -> Result<Network, NnError> {
        let named = read_tensors(input)?;
        let layout = spec.param_layout()?;
        if named.len() != layout.len()
            || named.iter().zip(&layout).any(|((n, t), (ln, ls, _))| n != ln || t.shape() != ls.as_slice())
        {
            return Err(NnError::Checkpoint("checkpoint tensors do not match the network spec".into()));
        }
        Network::from_params(spec, named.into_iter().map(|(_, t)| t).collect())
    }

    /// SHA-256 over the serialized weights.
    pub fn checksum(&self) -> String {
        let mut buf = Vec::new();
        self.write_weights(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}
