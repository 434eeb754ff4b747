//! Closed-form "data first" estimator: the weighted least-distance
//! projection of the prior onto {P u = c}, clipped at zero.
//!
//! F = A P^T (P A P^T)^-1 does not depend on the scale of a = C alpha, so the
//! operator stores F and g1 = (F P - I) alpha once; for counts with total C
//! the offset is g = C g1.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::{check_counts, check_prior};
use crate::error::{Error, Result};
use crate::grid::{
    AssignmentMatrix, CountVector, DensityEstimate, Diagnostics, Method, PriorVector, RowGroups, SparseMatrix,
};

const ROW_MERGE_TOL: f64 = 1e-12;
const RIGHT_INVERSE_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-8;
/// Singular values below this fraction of ||G|| are treated as zero.
const PINV_RCOND: f64 = 1e-12;
/// Refined entries below this share of the total are round-off and set to zero.
const SNAP_TOL: f64 = 1e-12;
const CACHE_MAGIC: &[u8; 8] = b"CDDFOP01";

#[derive(Debug, Clone)]
pub struct DfOperator {
    /// J x I' (I' = rows after merging duplicates).
    f: DMatrix<f64>,
    g_unit: Vec<f64>,
    alpha: Vec<f64>,
    merged: AssignmentMatrix,
    groups: RowGroups,
    fingerprint: String,
}

/// Hex SHA-256 over the matrix entries and the prior, bit-exact.
fn fingerprint(p: &AssignmentMatrix, prior: &PriorVector) -> String {
    let mut h = Sha256::new();
    h.update((p.rows() as u64).to_le_bytes());
    h.update((p.cols() as u64).to_le_bytes());
    for (i, j, v) in p.matrix().triplets() {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
        h.update(v.to_bits().to_le_bytes());
    }
    for a in prior.alpha() {
        h.update(a.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// G = P diag(w) P^T, accumulated column by column.
fn gram(p: &SparseMatrix, w: &[f64]) -> DMatrix<f64> {
    let n = p.nrows();
    let mut g = DMatrix::zeros(n, n);
    for (j, &wj) in w.iter().enumerate() {
        let (rows, vals) = p.col_entries(j);
        for (&a, &va) in rows.iter().zip(vals) {
            for (&b, &vb) in rows.iter().zip(vals) {
                g[(a, b)] += va * wj * vb;
            }
        }
    }
    g
}

/// F = diag(w) P^T G^-1 as a J x I matrix, or None when G is not
/// numerically positive definite.
fn right_inverse(p: &SparseMatrix, w: &[f64]) -> Option<DMatrix<f64>> {
    let chol = gram(p, w).cholesky()?;
    let mut pa = DMatrix::zeros(p.nrows(), p.ncols());
    for (i, j, v) in p.triplets() {
        pa[(i, j)] = v * w[j];
    }
    let y = chol.solve(&pa);
    Some(y.transpose())
}

/// max |P F - I| entrywise.
fn right_inverse_error(p: &AssignmentMatrix, f: &DMatrix<f64>) -> f64 {
    let n = p.rows();
    let mut pf = DMatrix::<f64>::zeros(n, n);
    for (i, j, v) in p.matrix().triplets() {
        for k in 0..n {
            pf[(i, k)] += v * f[(j, k)];
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in 0..n {
            let target = if i == k { 1.0 } else { 0.0 };
            worst = worst.max((pf[(i, k)] - target).abs());
        }
    }
    worst
}

/// Builds the operator for `p` and `prior`. Duplicate rows of `p` are merged
/// first; their counts are summed at estimation time.
pub fn df_precompute(p: &AssignmentMatrix, prior: &PriorVector) -> Result<DfOperator> {
    check_prior(p, prior)?;
    let (merged, groups) = p.merge_duplicate_rows(ROW_MERGE_TOL);
    if !groups.is_identity() {
        log::info!("DF: merged {} duplicate cells", groups.map.len() - groups.groups);
    }
    let alpha = prior.alpha().to_vec();
    let f = right_inverse(merged.matrix(), &alpha).ok_or(Error::SingularGram)?;
    let err = right_inverse_error(&merged, &f);
    if !(err <= RIGHT_INVERSE_TOL) {
        log::warn!("DF: ||P F - I|| = {err:.3e}");
        return Err(Error::SingularGram);
    }
    DfOperator::assemble(f, alpha, merged, groups, fingerprint(p, prior))
}

impl DfOperator {
    fn assemble(
        f: DMatrix<f64>,
        alpha: Vec<f64>,
        merged: AssignmentMatrix,
        groups: RowGroups,
        fingerprint: String,
    ) -> Result<Self> {
        let pa = DVector::from_vec(merged.matrix().mul_vec(&alpha));
        let fpa = &f * pa;
        let g_unit: Vec<f64> = fpa.iter().zip(&alpha).map(|(x, a)| x - a).collect();
        // F (P a) - g = a, up to roundoff.
        let worst = fpa
            .iter()
            .zip(&g_unit)
            .zip(&alpha)
            .map(|((x, g), a)| ((x - g) - a).abs() / a.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if worst > IDENTITY_TOL {
            return Err(Error::SingularGram);
        }
        Ok(Self { f, g_unit, alpha, merged, groups, fingerprint })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// (F P - I) a for counts summing to `total`.
    pub fn g(&self, total: f64) -> Vec<f64> {
        self.g_unit.iter().map(|g| g * total).collect()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn cols(&self) -> usize {
        self.f.nrows()
    }

    /// Number of cells of the original (unmerged) matrix.
    pub fn cells(&self) -> usize {
        self.groups.map.len()
    }

    fn merged_counts(&self, c: &CountVector) -> Result<CountVector> {
        if c.len() != self.cells() {
            return Err(Error::DimensionMismatch { expected: self.cells(), found: c.len() });
        }
        if self.groups.is_identity() {
            Ok(c.clone())
        } else {
            c.aggregate(&self.groups.map, self.groups.groups)
        }
    }

    fn unclipped(&self, c: &CountVector) -> Vec<f64> {
        let fc = &self.f * DVector::from_column_slice(c.counts());
        fc.iter().zip(&self.g_unit).map(|(x, g)| x - g * c.total()).collect()
    }

    fn finish(&self, c: &CountVector, u: Vec<f64>, clipped: usize, iterations: usize) -> Result<DensityEstimate> {
        let diagnostics = Diagnostics {
            iterations,
            converged: true,
            ml_residual: super::ml_optimality_residual(&self.merged, c, &u).ok(),
            constraint_residual: Some(super::constraint_residual(&self.merged, c, &u)),
            gradient_norm: None,
            clipped,
        };
        if clipped > 0 {
            log::info!(
                "DF: clipped {clipped} negative entries, ||P u - c|| = {:.3e}",
                diagnostics.constraint_residual.unwrap_or(0.0)
            );
        }
        Ok(DensityEstimate::new(u, Method::Df)?.with_diagnostics(diagnostics))
    }

    /// Writes the operator to `path` in a little-endian binary layout.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(self.fingerprint.as_bytes())?;
        w.write_all(&(self.f.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.f.ncols() as u64).to_le_bytes())?;
        for v in self.f.iter().chain(&self.g_unit) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cached operator for (`p`, `prior`). Returns `None` when the
    /// file belongs to different inputs.
    pub fn load(path: &Path, p: &AssignmentMatrix, prior: &PriorVector) -> Result<Option<Self>> {
        let fp = fingerprint(p, prior);
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        let mut stored = vec![0u8; fp.len()];
        r.read_exact(&mut stored)?;
        if &magic != CACHE_MAGIC || stored != fp.as_bytes() {
            return Ok(None);
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut BufReader<fs::File>| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let (nr, nc) = (next_u64(&mut r)? as usize, next_u64(&mut r)? as usize);
        let (merged, groups) = p.merge_duplicate_rows(ROW_MERGE_TOL);
        if nr != p.cols() || nc != groups.groups {
            return Ok(None);
        }
        let mut buf = vec![0u8; 8 * (nr * nc + nr)];
        r.read_exact(&mut buf)?;
        let mut vals = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
        let f = DMatrix::from_iterator(nr, nc, vals.by_ref().take(nr * nc));
        let g_unit: Vec<f64> = vals.collect();
        Ok(Some(Self { f, g_unit, alpha: prior.alpha().to_vec(), merged, groups, fingerprint: fp }))
    }

    /// Loads the operator from `dir` if a matching cache file exists,
    /// otherwise builds it and stores it there. The flag reports a cache hit.
    pub fn cached(dir: &Path, p: &AssignmentMatrix, prior: &PriorVector) -> Result<(Self, bool)> {
        let fp = fingerprint(p, prior);
        let path: PathBuf = dir.join(format!("df_{}.bin", &fp[..16]));
        if path.exists() {
            match Self::load(&path, p, prior) {
                Ok(Some(op)) => {
                    log::info!("DF: operator loaded from cache {}", path.display());
                    return Ok((op, true));
                }
                Ok(None) => log::info!("DF: cache {} is stale, rebuilding", path.display()),
                Err(e) => log::warn!("DF: unreadable cache {}: {e}", path.display()),
            }
        }
        let op = df_precompute(p, prior)?;
        fs::create_dir_all(dir)?;
        op.save(&path)?;
        Ok((op, false))
    }
}

/// u = max(F c - g, 0) with g = (F P - I) C alpha.
pub fn df_estimate(op: &DfOperator, c: &CountVector) -> Result<DensityEstimate> {
    let c = op.merged_counts(c)?;
    let mut u = op.unclipped(&c);
    let mut clipped = 0;
    for v in u.iter_mut().filter(|v| **v < 0.0) {
        *v = 0.0;
        clipped += 1;
    }
    op.finish(&c, u, clipped, 1)
}

/// Like [`df_estimate`], but after clipping the weighted projection is
/// re-solved on the remaining tiles, repeating until no new negative
/// entries appear. Each round solves the normal equations with a
/// pseudo-inverse, so cells left without support or counts that no
/// nonnegative map reproduces exactly yield the least-squares compromise
/// instead of an error.
pub fn df_estimate_refined(op: &DfOperator, c: &CountVector) -> Result<DensityEstimate> {
    let c = op.merged_counts(c)?;
    check_counts(&op.merged, &c)?;
    let mut u = op.unclipped(&c);
    let mut active: Vec<bool> = u.iter().map(|&v| v < 0.0).collect();
    let mut rounds = 1;
    while active.iter().any(|&z| z) {
        let free: Vec<usize> = (0..u.len()).filter(|&j| !active[j]).collect();
        if free.is_empty() {
            break;
        }
        let (sub, rows) = supported_rows(&op.merged.matrix().select_columns(&free));
        let a: Vec<f64> = free.iter().map(|&j| op.alpha[j] * c.total()).collect();
        let pa = sub.mul_vec(&a);
        let resid = DVector::from_iterator(pa.len(), rows.iter().zip(&pa).map(|(&i, x)| c.counts()[i] - x));
        // lambda = G^+ r with G = P_f A_f P_f^T; u_f = a_f + A_f P_f^T lambda.
        let g = gram(&sub, &a);
        let gnorm = g.norm();
        let lambda = g
            .svd(true, true)
            .solve(&resid, PINV_RCOND * gnorm)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let back = sub.tmul_vec(lambda.as_slice());
        let mut fresh = false;
        u.iter_mut().for_each(|v| *v = 0.0);
        for (k, &j) in free.iter().enumerate() {
            let v = a[k] + a[k] * back[k];
            if v < 0.0 {
                active[j] = true;
                fresh = true;
            } else if v > SNAP_TOL * c.total() {
                u[j] = v;
            }
        }
        rounds += 1;
        if !fresh {
            break;
        }
    }
    let clipped = active.iter().filter(|&&z| z).count();
    op.finish(&c, u, clipped, rounds)
}

/// Drops rows left without support by a column selection; returns the
/// reduced matrix and the original indices of the kept rows.
fn supported_rows(sub: &SparseMatrix) -> (SparseMatrix, Vec<usize>) {
    let mut keep = vec![usize::MAX; sub.nrows()];
    let mut rows = Vec::new();
    for i in 0..sub.nrows() {
        if sub.row(i).next().is_some() {
            keep[i] = rows.len();
            rows.push(i);
        }
    }
    let triplets = sub.triplets().map(|(i, j, v)| (keep[i], j, v));
    let m = SparseMatrix::from_triplets(rows.len(), sub.ncols(), triplets).expect("indices stay in range");
    (m, rows)
}
