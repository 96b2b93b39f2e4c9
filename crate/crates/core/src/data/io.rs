//! Binary dataset files and their JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{build_dataset, DatasetConfig, Normalizer};
use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SDKNDS01";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_seq: u32,
    pub d_in: u32,
    pub d_out: u32,
    pub n_train: u32,
    pub n_val: u32,
    pub n_test: u32,
}

impl DatasetHeader {
    fn sample_len(&self) -> usize {
        (self.n_seq * self.d_in + self.d_out) as usize
    }
}

/// Final-time span `[first, last]` of one split, in simulation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub first: f64,
    pub last: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dataset_id: String,
    pub config: DatasetConfig,
    pub n_seq: usize,
    pub dt_seq: f64,
    pub samples: [usize; 3],
    pub final_times: [Option<TimeSpan>; 3],
    pub normalizer: Normalizer,
}

/// Raw (unnormalized) samples of all three splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub train: SampleSet,
    pub val: Option<SampleSet>,
    pub test: Option<SampleSet>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::config(format!("{what} = {v} does not fit the dataset header")))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Dataset {
    pub fn new(train: SampleSet, val: Option<SampleSet>, test: Option<SampleSet>) -> Result<Self> {
        let shape = train.inputs.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::config("dataset inputs must be samples x N_seq x d_in"));
        }
        for s in val.iter().chain(test.iter()) {
            if s.inputs.shape()[1..] != shape[1..] || s.d_out() != train.d_out() {
                return Err(Error::config("dataset splits disagree in shape"));
            }
        }
        let header = DatasetHeader {
            version: DATASET_VERSION,
            n_seq: to_u32(shape[1], "N_seq")?,
            d_in: to_u32(shape[2], "d_in")?,
            d_out: to_u32(train.d_out(), "d_out")?,
            n_train: to_u32(train.len(), "train samples")?,
            n_val: to_u32(val.as_ref().map_or(0, |s| s.len()), "val samples")?,
            n_test: to_u32(test.as_ref().map_or(0, |s| s.len()), "test samples")?,
        };
        Ok(Self { header, train, val, test })
    }

    pub fn split(&self, split: Split) -> Result<&SampleSet> {
        match split {
            Split::Train => Some(&self.train),
            Split::Val => self.val.as_ref(),
            Split::Test => self.test.as_ref(),
        }
        .ok_or_else(|| Error::usage(format!("the {} split is empty", split.name())))
    }

    pub fn n_seq(&self) -> usize {
        self.header.n_seq as usize
    }

    pub fn d_in(&self) -> usize {
        self.header.d_in as usize
    }

    pub fn d_out(&self) -> usize {
        self.header.d_out as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let total = (h.n_train + h.n_val + h.n_test) as usize * h.sample_len();
        let mut out = Vec::with_capacity(8 + 28 + 8 * total);
        out.extend_from_slice(DATASET_MAGIC);
        for v in [h.version, h.n_seq, h.d_in, h.d_out, h.n_train, h.n_val, h.n_test] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let per_in = (h.n_seq * h.d_in) as usize;
        let per_out = h.d_out as usize;
        for set in [Some(&self.train), self.val.as_ref(), self.test.as_ref()].into_iter().flatten() {
            for (x, y) in set.inputs.data().chunks(per_in).zip(set.targets.data().chunks(per_out)) {
                for v in x.iter().chain(y) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 36 || &bytes[..8] != DATASET_MAGIC {
            return Err(Error::format("not a dataset file (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let header = DatasetHeader {
            version: word(0),
            n_seq: word(1),
            d_in: word(2),
            d_out: word(3),
            n_train: word(4),
            n_val: word(5),
            n_test: word(6),
        };
        if header.version != DATASET_VERSION {
            return Err(Error::format(format!("unsupported dataset version {}", header.version)));
        }
        if header.n_seq == 0 || header.d_in == 0 || header.d_out == 0 || header.n_train == 0 {
            return Err(Error::format("dataset header has a zero dimension or an empty train split"));
        }
        let per = header.sample_len();
        let total = (header.n_train as usize + header.n_val as usize + header.n_test as usize) * per;
        let payload = &bytes[36..];
        if payload.len() != 8 * total {
            return Err(Error::format(format!(
                "dataset payload has {} bytes, header implies {}",
                payload.len(),
                8 * total
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let per_in = (header.n_seq * header.d_in) as usize;
        let mut offset = 0;
        let mut read = |count: u32| -> Result<Option<SampleSet>> {
            if count == 0 {
                return Ok(None);
            }
            let count = count as usize;
            let mut x = Vec::with_capacity(count * per_in);
            let mut y = Vec::with_capacity(count * (per - per_in));
            for sample in values[offset..offset + count * per].chunks(per) {
                x.extend_from_slice(&sample[..per_in]);
                y.extend_from_slice(&sample[per_in..]);
            }
            offset += count * per;
            Ok(Some(SampleSet::new(
                Tensor::new(vec![count, header.n_seq as usize, header.d_in as usize], x)?,
                Tensor::new(vec![count, header.d_out as usize], y)?,
            )?))
        };
        let train = read(header.n_train)?.expect("non-empty train split");
        let val = read(header.n_val)?;
        let test = read(header.n_test)?;
        Ok(Self { header, train, val, test })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
        let text = fs::read_to_string(sidecar_path(path))?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad dataset sidecar: {e}")))
    }

    /// Writes `path` and `path.json`.
    pub fn write(&self, path: &Path, sidecar: &Sidecar) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::format(e.to_string()))?;
        fs::write(sidecar_path(path), json + "\n")?;
        Ok(())
    }
}

/// Hex prefix of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Builds the dataset and its sidecar in memory.
pub fn generate(config: &DatasetConfig) -> Result<(Dataset, Sidecar)> {
    let built = build_dataset(config)?;
    let normalizer = Normalizer::fit(&built.train)?;
    let dataset = Dataset::new(built.train, built.val, built.test)?;
    let dt = config.dns.dt;
    let span = |f: &Vec<usize>| {
        f.first().map(|&a| TimeSpan {
            first: a as f64 * dt,
            last: *f.last().expect("non-empty") as f64 * dt,
            count: f.len(),
        })
    };
    let h = dataset.header;
    let sidecar = Sidecar {
        dataset_id: content_id(&dataset.to_bytes()),
        config: config.clone(),
        n_seq: config.strategy.n_seq(),
        dt_seq: config.strategy.dt_seq(),
        samples: [h.n_train as usize, h.n_val as usize, h.n_test as usize],
        final_times: [span(&built.finals[0]), span(&built.finals[1]), span(&built.finals[2])],
        normalizer,
    };
    Ok((dataset, sidecar))
}
