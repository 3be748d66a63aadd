use std::io::{Read, Write};

use rand::Rng;

use crate::{EntityId, Error, RelationId, Result};

const MAGIC: &[u8; 8] = b"BCIESMPL";
const VERSION: u32 = 1;

/// `⟨v, w, x⟩ = Σ_k v_k w_k x_k`.
pub fn triple_product(v: &[f64], w: &[f64], x: &[f64]) -> Result<f64> {
    if w.len() != v.len() {
        return Err(Error::Dimension {
            expected: v.len(),
            got: w.len(),
        });
    }
    if x.len() != v.len() {
        return Err(Error::Dimension {
            expected: v.len(),
            got: x.len(),
        });
    }
    Ok(dot3(v, w, x))
}

#[inline]
pub(crate) fn dot3(v: &[f64], w: &[f64], x: &[f64]) -> f64 {
    v.iter()
        .zip(w)
        .zip(x)
        .map(|((a, b), c)| a * b * c)
        .sum()
}

/// SimplE parameters: a head and a tail vector per entity, a forward and an
/// inverse vector per relation. All matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entities: usize,
    relations: usize,
    pub(crate) entity_head: Vec<f64>,
    pub(crate) entity_tail: Vec<f64>,
    pub(crate) relation_fwd: Vec<f64>,
    pub(crate) relation_inv: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(dim: usize, entities: usize, relations: usize) -> Self {
        Self {
            dim,
            entities,
            relations,
            entity_head: vec![0.0; entities * dim],
            entity_tail: vec![0.0; entities * dim],
            relation_fwd: vec![0.0; relations * dim],
            relation_inv: vec![0.0; relations * dim],
        }
    }

    /// Every parameter drawn uniformly from `[-scale, scale]`.
    pub fn random_uniform<R: Rng>(dim: usize, entities: usize, relations: usize, scale: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(dim, entities, relations);
        for m in t.matrices_mut() {
            for x in m.iter_mut() {
                *x = rng.gen_range(-scale..=scale);
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities
    }

    pub fn relation_count(&self) -> usize {
        self.relations
    }

    pub fn head(&self, e: EntityId) -> &[f64] {
        row(&self.entity_head, e as usize, self.dim)
    }

    pub fn tail(&self, e: EntityId) -> &[f64] {
        row(&self.entity_tail, e as usize, self.dim)
    }

    pub fn fwd(&self, r: RelationId) -> &[f64] {
        row(&self.relation_fwd, r as usize, self.dim)
    }

    pub fn inv(&self, r: RelationId) -> &[f64] {
        row(&self.relation_inv, r as usize, self.dim)
    }

    pub fn head_mut(&mut self, e: EntityId) -> &mut [f64] {
        row_mut(&mut self.entity_head, e as usize, self.dim)
    }

    pub fn tail_mut(&mut self, e: EntityId) -> &mut [f64] {
        row_mut(&mut self.entity_tail, e as usize, self.dim)
    }

    pub fn fwd_mut(&mut self, r: RelationId) -> &mut [f64] {
        row_mut(&mut self.relation_fwd, r as usize, self.dim)
    }

    pub fn inv_mut(&mut self, r: RelationId) -> &mut [f64] {
        row_mut(&mut self.relation_inv, r as usize, self.dim)
    }

    /// The four matrices in checkpoint order.
    pub fn matrices(&self) -> [&[f64]; 4] {
        [
            &self.entity_head,
            &self.entity_tail,
            &self.relation_fwd,
            &self.relation_inv,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.entity_head,
            &mut self.entity_tail,
            &mut self.relation_fwd,
            &mut self.relation_inv,
        ]
    }

    pub fn check_ids(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<()> {
        for e in [h, t] {
            if e as usize >= self.entities {
                return Err(Error::IdOutOfRange {
                    kind: "entity",
                    id: e,
                    count: self.entities,
                });
            }
        }
        if r as usize >= self.relations {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: r,
                count: self.relations,
            });
        }
        Ok(())
    }

    /// `Φ(h, r, t) = ½(⟨h_h, v_r, t_t⟩ + ⟨h_t, v_r⁻¹, t_h⟩)`.
    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        self.check_ids(h, r, t)?;
        Ok(self.score_unchecked(h, r, t))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        0.5 * (dot3(self.head(h), self.fwd(r), self.tail(t)) + dot3(self.head(t), self.inv(r), self.tail(h)))
    }

    pub fn all_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.matrices().iter().flat_map(|m| m.iter()).map(|x| x * x).sum()
    }

    /// Writes the little-endian checkpoint: magic, version, dim, |E|, |R|,
    /// then the four matrices as `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for n in [self.dim, self.entities, self.relations] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for m in self.matrices() {
            let mut buf = Vec::with_capacity(m.len() * 8);
            for x in m {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".to_string()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut read_u64 = || -> Result<usize> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Checkpoint("size overflow".to_string()))
        };
        let dim = read_u64()?;
        let entities = read_u64()?;
        let relations = read_u64()?;
        let mut t = Self::zeros(dim, entities, relations);
        for m in t.matrices_mut() {
            let mut buf = vec![0u8; m.len() * 8];
            r.read_exact(&mut buf)?;
            for (x, chunk) in m.iter_mut().zip(buf.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".to_string()));
        }
        Ok(t)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[inline]
fn row(m: &[f64], i: usize, dim: usize) -> &[f64] {
    &m[i * dim..(i + 1) * dim]
}

#[inline]
fn row_mut(m: &mut [f64], i: usize, dim: usize) -> &mut [f64] {
    &mut m[i * dim..(i + 1) * dim]
}
