//! Top-k sparse autoencoder forward maps.
//!
//! Encoding is `relu(W_enc^T (v - b1))` followed by top-k selection;
//! decoding is `W_dec^T z + b2`. Within a fixed active set the whole
//! round trip is affine, see [`effective_linear_map`].

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `d x omega`
    pub w_enc: Array2<f64>,
    /// `omega x d`
    pub w_dec: Array2<f64>,
    /// Pre-encoder bias, length `d`.
    pub b1: Array1<f64>,
    /// Decoder bias, length `d`.
    pub b2: Array1<f64>,
    /// Matryoshka prefix depths, strictly increasing and ending at `omega`.
    pub prefix_schedule: Vec<usize>,
}

impl SaeParams {
    pub fn new(
        w_enc: Array2<f64>,
        w_dec: Array2<f64>,
        b1: Array1<f64>,
        b2: Array1<f64>,
        prefix_schedule: Vec<usize>,
    ) -> Result<Self> {
        let p = Self {
            w_enc: w_enc.as_standard_layout().into_owned(),
            w_dec: w_dec.as_standard_layout().into_owned(),
            b1,
            b2,
            prefix_schedule,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn omega(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, omega) = self.w_enc.dim();
        if d == 0 {
            return Err(Error::Validation("input dimension must be >= 1".into()));
        }
        if omega < d {
            return Err(Error::Validation(format!(
                "dictionary size {omega} smaller than input dimension {d}"
            )));
        }
        if self.w_dec.dim() != (omega, d) {
            return Err(Error::Validation(format!(
                "decoder is {:?}, expected ({omega}, {d})",
                self.w_dec.dim()
            )));
        }
        for (name, b) in [("b1", &self.b1), ("b2", &self.b2)] {
            if b.len() != d {
                return Err(Error::Validation(format!(
                    "{name} has length {}, expected {d}",
                    b.len()
                )));
            }
        }
        validate_prefix_schedule(&self.prefix_schedule, omega)?;
        let finite = self.w_enc.iter().all(|x| x.is_finite())
            && self.w_dec.iter().all(|x| x.is_finite())
            && self.b1.iter().all(|x| x.is_finite())
            && self.b2.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite parameter entry".into()));
        }
        Ok(())
    }

    /// Little-endian f32 payload in the order W_enc, W_dec, b1, b2.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let total = self.w_enc.len() + self.w_dec.len() + 2 * self.b1.len();
        let mut out = Vec::with_capacity(total * 4);
        for x in self
            .w_enc
            .iter()
            .chain(self.w_dec.iter())
            .chain(self.b1.iter())
            .chain(self.b2.iter())
        {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out
    }

    /// Hex SHA-256 of [`Self::payload_bytes`].
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.payload_bytes()))
    }

    /// Pre-activations `W_enc^T (v - b1)`, length `omega`.
    pub fn pre_activations(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.d(), v.len())?;
        let mut pre = vec![0.0; self.omega()];
        for (i, row) in self.w_enc.outer_iter().enumerate() {
            let u = v[i] - self.b1[i];
            if u == 0.0 {
                continue;
            }
            for (p, w) in pre.iter_mut().zip(row.iter()) {
                *p += u * w;
            }
        }
        Ok(pre)
    }

    /// Adds `scale * W_dec[j, :]` into `out`.
    pub(crate) fn add_decoder_row(&self, j: usize, scale: f64, out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(self.w_dec.row(j).iter()) {
            *o += scale * w;
        }
    }
}

pub(crate) fn validate_prefix_schedule(m: &[usize], omega: usize) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Validation("prefix schedule is empty".into()));
    }
    if m[0] == 0 || m.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(format!(
            "prefix schedule {m:?} must be strictly increasing and start at >= 1"
        )));
    }
    if *m.last().unwrap() != omega {
        return Err(Error::Validation(format!(
            "prefix schedule {m:?} must end at omega = {omega}"
        )));
    }
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

/// Sparse latent code: strictly positive values at strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseActivation {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseActivation {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Validation("activation indices not strictly increasing".into()));
            }
        }
        for &(j, x) in &entries {
            if j >= dim {
                return Err(Error::Range {
                    what: "latent index",
                    value: j,
                    lo: 0,
                    hi: dim.saturating_sub(1),
                });
            }
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Validation(format!("activation {x} at latent {j} is not positive")));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(j, x) in &self.entries {
            out[j] = x;
        }
        out
    }
}

/// Sorted indices of the latents that fire for an input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ActiveSet(pub Vec<usize>);

impl ActiveSet {
    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&SparseActivation> for ActiveSet {
    fn from(z: &SparseActivation) -> Self {
        ActiveSet(z.indices().collect())
    }
}

/// Indices of the `k` largest strictly positive values, ties to the lower
/// index, returned in increasing index order.
pub(crate) fn top_k_positive(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&j| values[j] > 0.0).collect();
    let by_rank = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if idx.len() > k {
        idx.select_nth_unstable_by(k, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

fn check_k(k: usize, omega: usize) -> Result<()> {
    if k == 0 || k > omega {
        return Err(Error::Range {
            what: "k",
            value: k,
            lo: 1,
            hi: omega,
        });
    }
    Ok(())
}

/// Rectified pre-activations reduced to the top `k` positive entries.
pub fn encode(v: &[f64], params: &SaeParams, k: usize) -> Result<SparseActivation> {
    check_k(k, params.omega())?;
    let pre = params.pre_activations(v)?;
    let entries = top_k_positive(&pre, k).into_iter().map(|j| (j, pre[j])).collect();
    Ok(SparseActivation {
        dim: params.omega(),
        entries,
    })
}

fn decode_entries<'a>(
    entries: impl Iterator<Item = &'a (usize, f64)>,
    params: &SaeParams,
) -> Vec<f64> {
    let mut out = params.b2.to_vec();
    for &(j, x) in entries {
        params.add_decoder_row(j, x, &mut out);
    }
    out
}

/// `W_dec^T z + b2`.
pub fn decode(z: &SparseActivation, params: &SaeParams) -> Result<Vec<f64>> {
    check_len(params.omega(), z.dim())?;
    Ok(decode_entries(z.entries.iter(), params))
}

/// Decodes using only latents with index `< m`.
pub fn prefix_decode(z: &SparseActivation, params: &SaeParams, m: usize) -> Result<Vec<f64>> {
    check_len(params.omega(), z.dim())?;
    if m == 0 || m > params.omega() {
        return Err(Error::Range {
            what: "prefix depth",
            value: m,
            lo: 1,
            hi: params.omega(),
        });
    }
    Ok(decode_entries(z.entries.iter().take_while(|e| e.0 < m), params))
}

/// Decodes an arbitrary (possibly negative-valued) sparse latent list.
pub(crate) fn decode_signed(entries: &[(usize, f64)], params: &SaeParams) -> Vec<f64> {
    decode_entries(entries.iter(), params)
}

pub fn active_set(v: &[f64], params: &SaeParams, k: usize) -> Result<ActiveSet> {
    Ok(ActiveSet::from(&encode(v, params, k)?))
}

/// The affine map `v -> M_A v + c_A` that `decode(encode(v))` equals for
/// every `v` whose active set is `A`.
///
/// `M_A = W_dec^T D_A W_enc^T` and `c_A = b2 - M_A b1`.
pub fn effective_linear_map(set: &ActiveSet, params: &SaeParams) -> Result<(Array2<f64>, Array1<f64>)> {
    let d = params.d();
    let omega = params.omega();
    let mut m = Array2::<f64>::zeros((d, d));
    for &j in &set.0 {
        if j >= omega {
            return Err(Error::Range {
                what: "latent index",
                value: j,
                lo: 0,
                hi: omega - 1,
            });
        }
        let dec = params.w_dec.row(j);
        let enc = params.w_enc.column(j);
        for r in 0..d {
            let a = dec[r];
            if a == 0.0 {
                continue;
            }
            for c in 0..d {
                m[[r, c]] += a * enc[c];
            }
        }
    }
    let c = &params.b2 - &m.dot(&params.b1);
    Ok((m, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_params(d: usize) -> SaeParams {
        SaeParams::new(
            Array2::eye(d),
            Array2::eye(d),
            Array1::zeros(d),
            Array1::zeros(d),
            vec![d],
        )
        .unwrap()
    }

    #[test]
    fn rectifier_zeroes_negatives() {
        let p = identity_params(2);
        let z = encode(&[3.0, -1.0], &p, 2).unwrap();
        assert_eq!(z.entries(), &[(0, 3.0)]);
    }

    #[test]
    fn input_at_b1_is_empty() {
        let mut p = identity_params(2);
        p.b1 = array![0.5, -2.0];
        assert!(encode(&[0.5, -2.0], &p, 2).unwrap().is_empty());
        assert!(active_set(&[0.5, -2.0], &p, 2).unwrap().is_empty());
    }

    #[test]
    fn top_k_tie_goes_to_lower_index() {
        // Columns chosen so that v = (1, 1) gives pre-activations (5, 2, 2, 1).
        let w_enc = array![[5.0, 1.0, 2.0, 0.5], [0.0, 1.0, 0.0, 0.5]];
        let p = SaeParams::new(
            w_enc,
            Array2::zeros((4, 2)),
            Array1::zeros(2),
            Array1::zeros(2),
            vec![4],
        )
        .unwrap();
        let z = encode(&[1.0, 1.0], &p, 2).unwrap();
        assert_eq!(z.entries(), &[(0, 5.0), (1, 2.0)]);
    }

    #[test]
    fn encode_rejects_bad_shapes() {
        let p = identity_params(2);
        assert!(matches!(encode(&[1.0], &p, 1), Err(Error::Shape { .. })));
        assert!(matches!(encode(&[1.0, 1.0], &p, 3), Err(Error::Range { .. })));
        assert!(matches!(encode(&[1.0, 1.0], &p, 0), Err(Error::Range { .. })));
    }

    #[test]
    fn decode_of_empty_is_b2() {
        let mut p = identity_params(3);
        p.b2 = array![1.0, -2.0, 0.25];
        assert_eq!(decode(&SparseActivation::empty(3), &p).unwrap(), vec![1.0, -2.0, 0.25]);
    }

    #[test]
    fn decode_single_entry_is_row_plus_b2() {
        let p = SaeParams::new(
            Array2::zeros((2, 3)),
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            Array1::zeros(2),
            array![0.5, 0.5],
            vec![3],
        )
        .unwrap();
        let z = SparseActivation::new(3, vec![(1, 1.0)]).unwrap();
        assert_eq!(decode(&z, &p).unwrap(), vec![3.5, 4.5]);
    }

    #[test]
    fn prefix_masks_tail_entries() {
        let mut p = SaeParams::new(
            Array2::zeros((2, 6)),
            Array2::from_shape_fn((6, 2), |(j, c)| (j * 2 + c) as f64),
            Array1::zeros(2),
            array![1.0, 1.0],
            vec![6],
        )
        .unwrap();
        let z = SparseActivation::new(6, vec![(5, 2.0)]).unwrap();
        assert_eq!(prefix_decode(&z, &p, 1).unwrap(), vec![1.0, 1.0]);
        assert_eq!(prefix_decode(&z, &p, 6).unwrap(), decode(&z, &p).unwrap());
        assert!(matches!(prefix_decode(&z, &p, 0), Err(Error::Range { .. })));
        assert!(matches!(prefix_decode(&z, &p, 7), Err(Error::Range { .. })));

        p.b2 = array![0.0, 0.0];
        let z = SparseActivation::new(6, vec![(0, 1.5), (3, 2.0)]).unwrap();
        // Dense masked oracle: only latent 0 survives m = 2.
        let dense = z.to_dense();
        let mut expect = [0.0; 2];
        for j in 0..2 {
            for c in 0..2 {
                expect[c] += dense[j] * p.w_dec[[j, c]];
            }
        }
        assert_eq!(prefix_decode(&z, &p, 2).unwrap(), expect.to_vec());
    }

    #[test]
    fn effective_map_identity_toy() {
        let p = identity_params(2);
        let (m, c) = effective_linear_map(&ActiveSet(vec![0]), &p).unwrap();
        assert_eq!(m, array![[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(c, array![0.0, 0.0]);
        let (m, c) = effective_linear_map(&ActiveSet(vec![]), &p).unwrap();
        assert_eq!(m, Array2::<f64>::zeros((2, 2)));
        assert_eq!(c, p.b2);
        assert!(matches!(
            effective_linear_map(&ActiveSet(vec![2]), &p),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn sparse_activation_invariants() {
        assert!(SparseActivation::new(4, vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseActivation::new(4, vec![(4, 1.0)]).is_err());
        assert!(SparseActivation::new(4, vec![(0, -1.0)]).is_err());
        assert!(SparseActivation::new(4, vec![(0, 0.0)]).is_err());
    }

    #[test]
    fn params_invariants() {
        let r = SaeParams::new(
            Array2::zeros((3, 2)),
            Array2::zeros((2, 3)),
            Array1::zeros(3),
            Array1::zeros(3),
            vec![2],
        );
        assert!(r.is_err(), "omega < d must be rejected");
        let r = SaeParams::new(
            Array2::zeros((2, 4)),
            Array2::zeros((4, 2)),
            Array1::zeros(2),
            Array1::zeros(2),
            vec![2, 2, 4],
        );
        assert!(r.is_err());
        let r = SaeParams::new(
            Array2::zeros((2, 4)),
            Array2::zeros((4, 2)),
            Array1::zeros(2),
            Array1::zeros(2),
            vec![1, 3],
        );
        assert!(r.is_err());
    }
}
