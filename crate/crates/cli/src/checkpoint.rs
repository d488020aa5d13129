//! `MRCK` checkpoints: architecture, parameters and optional Adam moments.
//!
//! Layout (little-endian): magic, `u32` version, architecture descriptor,
//! tensor table, then a one-byte flag followed by the optional optimizer
//! section (step count, hyperparameters, first- and second-moment tables).
//! Tensors are stored as 32-bit floats.

use std::path::Path;
use std::sync::Arc;

use metareg::model::{ArchSpec, EncoderLevel, RegistrationNet};
use metareg::optim::AdamState;
use metareg::params::{ParamLayout, ParamVector};
use metareg::{Error, Real, Result};

pub const MAGIC: &[u8; 4] = b"MRCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub params: ParamVector<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new<T: Real>(arch: &ArchSpec, params: &ParamVector<T>) -> Self {
        Self { arch: arch.clone(), params: params.cast(), adam: None }
    }

    pub fn with_adam<T: Real>(mut self, adam: &AdamState<T>) -> Self {
        self.adam = Some(AdamState {
            m: adam.m.cast(),
            v: adam.v.cast(),
            t: adam.t,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        });
        self
    }

    /// Parameters at precision `T` (exact for `f32`).
    pub fn params_as<T: Real>(&self) -> ParamVector<T> {
        self.params.cast()
    }

    /// Fails with a compatibility error unless the stored architecture is `arch`.
    pub fn ensure_arch(&self, arch: &ArchSpec) -> Result<()> {
        if &self.arch != arch {
            return Err(Error::Compat(format!(
                "checkpoint architecture {} does not match configured {}",
                describe(&self.arch),
                describe(arch)
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.arch(&self.arch);
        w.table(&self.params, "");
        match &self.adam {
            None => w.0.push(0),
            Some(a) => {
                w.0.push(1);
                w.0.extend_from_slice(&a.t.to_le_bytes());
                for h in [a.lr, a.beta1, a.beta2, a.eps] {
                    w.0.extend_from_slice(&h.to_le_bytes());
                }
                w.table(&a.m, "adam.m.");
                w.table(&a.v, "adam.v.");
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad checkpoint magic {magic:?}, expected MRCK")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let arch = r.arch()?;
        let net = RegistrationNet::new(arch.clone()).map_err(|e| Error::format(8, format!("invalid architecture: {e}")))?;
        let layout = net.layout().clone();
        let params = r.table(&layout, "")?;
        let flag_at = r.pos as u64;
        let adam = match r.take(1, "optimizer flag")?[0] {
            0 => None,
            1 => {
                let t = u64::from_le_bytes(r.take(8, "optimizer step")?.try_into().unwrap());
                let mut h = [0.0f64; 4];
                for v in &mut h {
                    *v = f64::from_le_bytes(r.take(8, "optimizer hyperparameter")?.try_into().unwrap());
                }
                let m = r.table(&layout, "adam.m.")?;
                let v = r.table(&layout, "adam.v.")?;
                Some(AdamState { m, v, t, lr: h[0], beta1: h[1], beta2: h[2], eps: h[3] })
            }
            other => return Err(Error::format(flag_at, format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { arch, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| e.in_file(path))
    }
}

fn describe(arch: &ArchSpec) -> String {
    let enc: Vec<String> = arch.encoder.iter().map(|l| format!("{}s{}", l.channels, l.stride)).collect();
    let dec: Vec<String> = arch.decoder.iter().map(|c| c.to_string()).collect();
    format!("[{}]/[{}]", enc.join(","), dec.join(","))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn arch(&mut self, arch: &ArchSpec) {
        self.u32(arch.encoder.len() as u32);
        for l in &arch.encoder {
            self.u32(l.channels as u32);
            self.u32(l.stride as u32);
        }
        self.u32(arch.decoder.len() as u32);
        for &c in &arch.decoder {
            self.u32(c as u32);
        }
        self.0.extend_from_slice(&arch.leaky_slope.to_le_bytes());
        self.0.push(arch.final_zero_init as u8);
    }

    fn table(&mut self, params: &ParamVector<f32>, prefix: &str) {
        let entries = params.layout().entries();
        self.u32(entries.len() as u32);
        for (i, e) in entries.iter().enumerate() {
            let name = format!("{prefix}{}", e.name);
            self.u32(name.len() as u32);
            self.0.extend_from_slice(name.as_bytes());
            self.u32(e.shape.len() as u32);
            for &d in &e.shape {
                self.u32(d as u32);
            }
            for v in params.tensor(i) {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str, max: usize) -> Result<usize> {
        let at = self.pos as u64;
        let n = self.u32(what)? as usize;
        if n > max {
            return Err(Error::format(at, format!("{what} {n} exceeds limit {max}")));
        }
        Ok(n)
    }

    fn arch(&mut self) -> Result<ArchSpec> {
        let n_enc = self.count("encoder depth", 64)?;
        let mut encoder = Vec::with_capacity(n_enc);
        for _ in 0..n_enc {
            let channels = self.u32("encoder channels")? as usize;
            let stride = self.u32("encoder stride")? as usize;
            encoder.push(EncoderLevel::new(channels, stride));
        }
        let n_dec = self.count("decoder depth", 64)?;
        let decoder = (0..n_dec)
            .map(|_| self.u32("decoder channels").map(|c| c as usize))
            .collect::<Result<Vec<_>>>()?;
        let leaky_slope = f64::from_le_bytes(self.take(8, "leaky slope")?.try_into().unwrap());
        let at = self.pos as u64;
        let final_zero_init = match self.take(1, "final layer flag")?[0] {
            0 => false,
            1 => true,
            other => return Err(Error::format(at, format!("bad final layer flag {other}"))),
        };
        Ok(ArchSpec { encoder, decoder, leaky_slope, final_zero_init })
    }

    fn table(&mut self, layout: &Arc<ParamLayout>, prefix: &str) -> Result<ParamVector<f32>> {
        let at = self.pos as u64;
        let n = self.u32("tensor count")? as usize;
        if n != layout.entries().len() {
            return Err(Error::format(
                at,
                format!("tensor table has {n} entries, architecture needs {}", layout.entries().len()),
            ));
        }
        let mut data = Vec::with_capacity(layout.total_len());
        for e in layout.entries() {
            let at = self.pos as u64;
            let len = self.count("tensor name length", 4096)?;
            let name = String::from_utf8_lossy(self.take(len, "tensor name")?).into_owned();
            let expected = format!("{prefix}{}", e.name);
            if name != expected {
                return Err(Error::format(at, format!("expected tensor {expected:?}, found {name:?}")));
            }
            let at = self.pos as u64;
            let nd = self.count("tensor rank", 8)?;
            let dims = (0..nd)
                .map(|_| self.u32("tensor dim").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != e.shape {
                return Err(Error::format(at, format!("tensor {name} has shape {dims:?}, expected {:?}", e.shape)));
            }
            let raw = self.take(e.len() * 4, "tensor data")?;
            data.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        }
        ParamVector::from_vec(layout.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let arch = ArchSpec::tiny();
        let net = RegistrationNet::new(arch.clone()).unwrap();
        let params: ParamVector<f32> = net.init_params(3);
        Checkpoint::new(&arch, &params)
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.encode();
        assert_eq!(&bytes[..4], b"MRCK");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let ck = sample();
        let mut adam = AdamState::new(&ck.params, 1e-3);
        let mut p = ck.params.clone();
        let g = ParamVector::from_vec(p.layout().clone(), p.data().iter().map(|v| v + 0.5).collect()).unwrap();
        adam.step(&mut p, &g).unwrap();
        let ck = Checkpoint::new(&ck.arch, &p).with_adam(&adam);
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.adam.unwrap().t, 1);
    }

    #[test]
    fn f64_parameters_round_trip_within_single_precision() {
        let arch = ArchSpec::tiny();
        let net = RegistrationNet::new(arch.clone()).unwrap();
        let params: ParamVector<f64> = net.init_params(5);
        let back = Checkpoint::decode(&Checkpoint::new(&arch, &params).encode()).unwrap().params_as::<f64>();
        for (a, b) in params.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-30));
        }
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let bytes = sample().encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 4, .. })));
        let cut = bytes.len() - 10;
        match Checkpoint::decode(&bytes[..cut]) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset as usize <= cut, "{offset}");
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::decode(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn architecture_mismatch_is_a_compat_error() {
        let ck = sample();
        assert!(ck.ensure_arch(&ArchSpec::tiny()).is_ok());
        assert!(matches!(ck.ensure_arch(&ArchSpec::compact()), Err(Error::Compat(_))));
    }
}
