//! Binary model file: little-endian, magic "FARF", version u32, then
//! length-prefixed sections (config as canonical key-value text, the
//! projection, the forest with trees in preorder and leaf matrices as f64
//! row-major), and a trailing SHA-256 over everything before it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{FarfError, Result};
use crate::forest::{ForestModel, LeafNode, SplitNode, Tree, TreeNode};
use crate::pipeline::{SRConfig, TrainedModel};
use crate::projection::{ProjectionKind, ProjectionModel};
use crate::regression::LeafRegressor;

const MAGIC: &[u8; 4] = b"FARF";
const VERSION: u32 = 1;

const SECTION_CONFIG: u8 = 1;
const SECTION_PROJECTION: u8 = 2;
const SECTION_FOREST: u8 = 3;

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    fn put_u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    fn put_u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        // One pass through a byte buffer keeps large matrices fast.
        let mut buf = Vec::with_capacity(vs.len() * 8);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }
}

fn projection_len(p: &ProjectionModel) -> u64 {
    (1 + 4 + 4 + 8 + 4) as u64 + 8 * (p.d_in() as u64) + 8 * (p.d_out() as u64 * p.d_in() as u64)
}

fn node_len(node: &TreeNode, d_target: usize, d_leaf_input: usize) -> u64 {
    match node {
        TreeNode::Split(_) => 1 + 4 + 8 + 4 + 4,
        TreeNode::Leaf(_) => {
            (1 + 8 + 8 + 1) as u64 + 8 * d_target as u64 + 8 * (d_target as u64 * d_leaf_input as u64)
        }
    }
}

fn forest_len(f: &ForestModel) -> u64 {
    let mut len = (4 + 4 + 4 + 4) as u64;
    for tree in &f.trees {
        len += 8;
        for node in &tree.nodes {
            len += node_len(node, f.d_target, f.d_leaf_input);
        }
    }
    len
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = HashingWriter {
        inner: BufWriter::new(File::create(path)?),
        hasher: Sha256::new(),
    };
    w.put(MAGIC)?;
    w.put_u32(VERSION)?;

    let config_text = model.config.to_kv();
    w.put_u8(SECTION_CONFIG)?;
    w.put_u64(config_text.len() as u64)?;
    w.put(config_text.as_bytes())?;

    let p = &model.projection;
    w.put_u8(SECTION_PROJECTION)?;
    w.put_u64(projection_len(p))?;
    w.put_u8(match p.kind {
        ProjectionKind::Pca => 0,
        ProjectionKind::Lsh => 1,
    })?;
    w.put_u32(p.d_in() as u32)?;
    w.put_u32(p.d_out() as u32)?;
    w.put_u64(p.seed)?;
    w.put_u32(p.padded_rows as u32)?;
    w.put_f64_slice(&p.mean)?;
    for r in 0..p.d_out() {
        for c in 0..p.d_in() {
            w.put_f64(p.matrix[(r, c)])?;
        }
    }

    let f = &model.forest;
    w.put_u8(SECTION_FOREST)?;
    w.put_u64(forest_len(f))?;
    w.put_u32(f.d_compressed as u32)?;
    w.put_u32(f.d_leaf_input as u32)?;
    w.put_u32(f.d_target as u32)?;
    w.put_u32(f.trees.len() as u32)?;
    for tree in &f.trees {
        w.put_u64(tree.nodes.len() as u64)?;
        for node in &tree.nodes {
            match node {
                TreeNode::Split(s) => {
                    w.put_u8(0)?;
                    w.put_u32(s.feat_index as u32)?;
                    w.put_f64(s.threshold)?;
                    w.put_u32(s.left as u32)?;
                    w.put_u32(s.right as u32)?;
                }
                TreeNode::Leaf(l) => {
                    w.put_u8(1)?;
                    w.put_u64(l.n_samples as u64)?;
                    w.put_f64(l.regressor.lambda_used)?;
                    w.put_u8(l.regressor.weighted as u8)?;
                    w.put_f64_slice(&l.mean_target)?;
                    let mut row = vec![0.0f64; f.d_leaf_input];
                    for r in 0..f.d_target {
                        for (c, rv) in row.iter_mut().enumerate() {
                            *rv = l.regressor.p[(r, c)];
                        }
                        w.put_f64_slice(&row)?;
                    }
                }
            }
        }
    }

    let digest = w.hasher.finalize();
    w.inner.write_all(&digest)?;
    w.inner.flush()?;
    Ok(())
}

struct SectionReader<R: Read> {
    inner: R,
}

impl<R: Read> SectionReader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| FarfError::ModelFormat("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Verifies the trailing checksum by streaming the file once.
fn verify_checksum(path: &Path) -> Result<u64> {
    let len = std::fs::metadata(path)?.len();
    if len < 40 {
        return Err(FarfError::ModelFormat("file too short".into()));
    }
    let body_len = len - 32;
    let mut f = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut remaining = body_len;
    let mut buf = [0u8; 65536];
    while remaining > 0 {
        let take = remaining.min(buf.len() as u64) as usize;
        f.read_exact(&mut buf[..take])?;
        hasher.update(&buf[..take]);
        remaining -= take as u64;
    }
    let mut stored = [0u8; 32];
    f.read_exact(&mut stored)?;
    if hasher.finalize().as_slice() != stored {
        return Err(FarfError::ModelFormat(
            "checksum mismatch: model file is corrupt".into(),
        ));
    }
    Ok(body_len)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    verify_checksum(path)?;
    let mut r = SectionReader {
        inner: BufReader::new(File::open(path)?),
    };
    if r.bytes(4)? != MAGIC {
        return Err(FarfError::ModelFormat("bad magic, not a model file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FarfError::ModelFormat(format!(
            "unsupported model version {version}, expected {VERSION}"
        )));
    }

    let mut config: Option<SRConfig> = None;
    let mut projection: Option<ProjectionModel> = None;
    let mut forest: Option<ForestModel> = None;

    for _ in 0..3 {
        let tag = r.u8()?;
        let len = r.u64()?;
        match tag {
            SECTION_CONFIG => {
                let text = String::from_utf8(r.bytes(len as usize)?)
                    .map_err(|_| FarfError::ModelFormat("config not valid UTF-8".into()))?;
                config = Some(SRConfig::from_kv(&text)?);
            }
            SECTION_PROJECTION => {
                let kind = match r.u8()? {
                    0 => ProjectionKind::Pca,
                    1 => ProjectionKind::Lsh,
                    other => {
                        return Err(FarfError::ModelFormat(format!(
                            "unknown projection kind {other}"
                        )))
                    }
                };
                let d_in = r.u32()? as usize;
                let d_out = r.u32()? as usize;
                let seed = r.u64()?;
                let padded_rows = r.u32()? as usize;
                let mean = r.f64_vec(d_in)?;
                let flat = r.f64_vec(d_out * d_in)?;
                let matrix = DMatrix::from_row_slice(d_out, d_in, &flat);
                projection = Some(ProjectionModel {
                    kind,
                    matrix,
                    mean,
                    seed,
                    padded_rows,
                });
            }
            SECTION_FOREST => {
                let cfg = config.as_ref().ok_or_else(|| {
                    FarfError::ModelFormat("forest section before config".into())
                })?;
                let d_compressed = r.u32()? as usize;
                let d_leaf_input = r.u32()? as usize;
                let d_target = r.u32()? as usize;
                let n_trees = r.u32()? as usize;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes = r.u64()? as usize;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        match r.u8()? {
                            0 => {
                                nodes.push(TreeNode::Split(SplitNode {
                                    feat_index: r.u32()? as usize,
                                    threshold: r.f64()?,
                                    left: r.u32()? as usize,
                                    right: r.u32()? as usize,
                                }));
                            }
                            1 => {
                                let n_samples = r.u64()? as usize;
                                let lambda_used = r.f64()?;
                                let weighted = r.u8()? != 0;
                                let mean_target = r.f64_vec(d_target)?;
                                let flat = r.f64_vec(d_target * d_leaf_input)?;
                                let p = DMatrix::from_row_slice(d_target, d_leaf_input, &flat);
                                nodes.push(TreeNode::Leaf(LeafNode {
                                    regressor: LeafRegressor {
                                        p,
                                        n_samples,
                                        lambda_used,
                                        weighted,
                                    },
                                    n_samples,
                                    mean_target,
                                }));
                            }
                            other => {
                                return Err(FarfError::ModelFormat(format!(
                                    "unknown node tag {other}"
                                )))
                            }
                        }
                    }
                    trees.push(Tree { nodes });
                }
                forest = Some(ForestModel {
                    params: cfg.forest_params(),
                    d_compressed,
                    d_leaf_input,
                    d_target,
                    trees,
                });
            }
            other => return Err(FarfError::ModelFormat(format!("unknown section {other}"))),
        }
    }

    match (config, projection, forest) {
        (Some(config), Some(projection), Some(forest)) => Ok(TrainedModel {
            config,
            projection,
            forest,
        }),
        _ => Err(FarfError::ModelFormat("missing sections".into())),
    }
}
