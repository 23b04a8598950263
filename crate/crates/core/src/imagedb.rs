//! In-memory image dataset with label-balanced and boosted sampling.
//!
//! On disk a dataset is a plain-text index, one `id,label,boost,path` record
//! per line, where `path` (relative to the index file) names a raw tensor
//! file: three little-endian u32 dims (C, H, W) followed by C·H·W
//! little-endian f32 values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub id: i64,
    pub label: i64,
    pub boost: f64,
    /// (C, H, W)
    pub dims: [u32; 3],
    pub tensor: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    Uniform,
    LabelBalanced,
}

impl std::str::FromStr for SampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SampleMethod::Uniform),
            "label_balanced" => Ok(SampleMethod::LabelBalanced),
            other => invalid(format!("unknown sampling method '{other}'")),
        }
    }
}

/// Entries keyed by id, plus the label → ids partition.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    entries: BTreeMap<i64, ImageEntry>,
    groups: BTreeMap<i64, Vec<i64>>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: ImageEntry) -> Result<()> {
        if self.entries.contains_key(&entry.id) {
            return invalid(format!("duplicate image id {}", entry.id));
        }
        if !(entry.boost >= 1.0) {
            return invalid(format!("boost must be at least 1, got {}", entry.boost));
        }
        self.groups.entry(entry.label).or_default().push(entry.id);
        self.entries.insert(entry.id, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: i64) -> Option<&ImageEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ImageEntry> {
        self.entries.values()
    }

    /// Label → entry ids, in load order within each label.
    pub fn groups(&self) -> &BTreeMap<i64, Vec<i64>> {
        &self.groups
    }

    pub fn label_counts(&self) -> BTreeMap<i64, usize> {
        self.groups.iter().map(|(l, ids)| (*l, ids.len())).collect()
    }

    pub fn set_boost(&mut self, id: i64, boost: f64) -> Result<()> {
        if !(boost >= 1.0) || !boost.is_finite() {
            return invalid(format!("boost must be a finite value of at least 1, got {boost}"));
        }
        let entry = self
            .entries
            .get_mut(&id)
            .ok_or_else(|| Error::NotFound(format!("image id {id}")))?;
        entry.boost = boost;
        Ok(())
    }

    fn pick<'a, R: Rng + ?Sized>(&'a self, ids: &[i64], use_boost: bool, rng: &mut R) -> &'a ImageEntry {
        let idx = if use_boost {
            let weights = ids.iter().map(|id| self.entries[id].boost);
            WeightedIndex::new(weights)
                .expect("boosts are finite and at least 1")
                .sample(rng)
        } else {
            rng.gen_range(0..ids.len())
        };
        &self.entries[&ids[idx]]
    }

    /// Draws one entry.
    ///
    /// `Uniform` picks among all entries; `LabelBalanced` first picks a label
    /// uniformly, then an entry within it. With `use_boost`, the final pick
    /// is weighted by each entry's boost.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        method: SampleMethod,
        use_boost: bool,
        rng: &mut R,
    ) -> Result<&ImageEntry> {
        if self.entries.is_empty() {
            return Err(Error::InvalidState("cannot sample from an empty dataset".into()));
        }
        Ok(match method {
            SampleMethod::Uniform => {
                let ids: Vec<i64> = self.entries.keys().copied().collect();
                self.pick(&ids, use_boost, rng)
            }
            SampleMethod::LabelBalanced => {
                let group = rng.gen_range(0..self.groups.len());
                let ids = self.groups.values().nth(group).expect("index in range");
                self.pick(ids, use_boost, rng)
            }
        })
    }
}

/// Reads one raw tensor file.
pub fn read_tensor(bytes: &[u8]) -> Result<([u32; 3], Vec<f32>)> {
    let mut cur = Cursor::new(bytes);
    let short = |_| Error::Format("tensor file is truncated".into());
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = cur.read_u32::<LittleEndian>().map_err(short)?;
    }
    let count = dims.iter().map(|&d| d as usize).product::<usize>();
    let mut values = vec![0f32; count];
    cur.read_f32_into::<LittleEndian>(&mut values).map_err(short)?;
    let mut rest = Vec::new();
    cur.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in tensor file", rest.len())));
    }
    Ok((dims, values))
}

pub fn encode_tensor(dims: [u32; 3], values: &[f32]) -> Result<Vec<u8>> {
    let count = dims.iter().map(|&d| d as usize).product::<usize>();
    if count != values.len() {
        return invalid(format!("dims {dims:?} need {count} values, got {}", values.len()));
    }
    let mut out = Vec::with_capacity(12 + 4 * count);
    for d in dims {
        out.write_u32::<LittleEndian>(d)?;
    }
    for &v in values {
        out.write_f32::<LittleEndian>(v)?;
    }
    Ok(out)
}

fn load_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Load {
        line,
        message: message.into(),
    })
}

/// Loads every record of an index file into memory. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_dataset(index_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(index_path)?;
    let base = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut ds = Dataset::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let record = raw.trim();
        if record.is_empty() || record.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = record.splitn(4, ',').map(str::trim).collect();
        if fields.len() != 4 {
            return load_err(line, "expected 'id,label,boost,path'");
        }
        let id: i64 = match fields[0].parse() {
            Ok(v) => v,
            Err(_) => return load_err(line, format!("id '{}' is not an integer", fields[0])),
        };
        let label: i64 = match fields[1].parse() {
            Ok(v) => v,
            Err(_) => return load_err(line, format!("label '{}' is not an integer", fields[1])),
        };
        let boost: f64 = match fields[2].parse() {
            Ok(v) if v >= 1.0 && f64::is_finite(v) => v,
            _ => return load_err(line, format!("boost '{}' must be a number >= 1", fields[2])),
        };
        let path: PathBuf = base.join(fields[3]);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => return load_err(line, format!("cannot read tensor '{}': {e}", path.display())),
        };
        let (dims, tensor) = match read_tensor(&bytes) {
            Ok(t) => t,
            Err(e) => return load_err(line, format!("{}: {e}", path.display())),
        };
        if let Err(e) = ds.insert(ImageEntry {
            id,
            label,
            boost,
            dims,
            tensor,
        }) {
            return load_err(line, e.to_string());
        }
    }
    Ok(ds)
}

/// Writes `ds` as an index file plus one tensor file per entry, next to the
/// index.
pub fn save_dataset(ds: &Dataset, index_path: &Path) -> Result<()> {
    let base = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut index = String::new();
    for e in ds.entries() {
        let file = format!("{}.tensor", e.id);
        fs::write(base.join(&file), encode_tensor(e.dims, &e.tensor)?)?;
        index.push_str(&format!("{},{},{},{}\n", e.id, e.label, e.boost, file));
    }
    fs::write(index_path, index)?;
    Ok(())
}
