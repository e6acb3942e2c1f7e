//! Term-importance encoder.
//!
//! A desk-scale stand-in for a masked-language-model head: token embeddings,
//! one single-head scaled dot-product mixing layer, and a linear projection
//! onto the output vocabulary. Per-position logits `w[i][j]` are pooled with
//! log-saturation into a non-negative term-weight vector:
//!
//! * [`PoolingMode::Max`]: `w_j = max_i ln(1 + relu(w[i][j]))`
//! * [`PoolingMode::Sum`]: `w_j = Σ_i ln(1 + relu(w[i][j]))`
//!
//! Queries and documents share one parameter set.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::math;
use crate::sparse::{self, SparseVec};
use crate::types::TokenId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolingMode {
    #[default]
    Max,
    Sum,
}

/// Encoder weights. Matrices are row-major.
///
/// * `embed`: `input_vocab × hidden`
/// * `attn_q`, `attn_k`: `hidden × hidden`, applied as `q = A_q x`
/// * `proj`: `hidden × vocab`
/// * `bias`: `vocab`
///
/// The same struct doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub input_vocab: usize,
    pub vocab: usize,
    pub hidden: usize,
    pub embed: Vec<f64>,
    pub attn_q: Vec<f64>,
    pub attn_k: Vec<f64>,
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(input_vocab: usize, vocab: usize, hidden: usize) -> Self {
        Self {
            input_vocab,
            vocab,
            hidden,
            embed: vec![0.0; input_vocab * hidden],
            attn_q: vec![0.0; hidden * hidden],
            attn_k: vec![0.0; hidden * hidden],
            proj: vec![0.0; hidden * vocab],
            bias: vec![0.0; vocab],
        }
    }

    /// Uniform(-0.5/√h, 0.5/√h) for every matrix, zero bias.
    pub fn init(input_vocab: usize, vocab: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_vocab == 0 || vocab < 2 || hidden == 0 {
            return Err(invalid("encoder dimensions must be positive (vocab >= 2)"));
        }
        let mut p = Self::zeros(input_vocab, vocab, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / math::sqrt(hidden as f64);
        for block in [&mut p.embed, &mut p.attn_q, &mut p.attn_k, &mut p.proj] {
            for v in block.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_vocab, self.vocab, self.hidden)
    }

    /// Checks dimensions agree with the stored sizes and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (v_in, v, h) = (self.input_vocab, self.vocab, self.hidden);
        let shapes = [
            ("embed", self.embed.len(), v_in * h),
            ("attn_q", self.attn_q.len(), h * h),
            ("attn_k", self.attn_k.len(), h * h),
            ("proj", self.proj.len(), h * v),
            ("bias", self.bias.len(), v),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(invalid(alloc::format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.blocks().any(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(invalid("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        [&self.embed[..], &self.attn_q, &self.attn_k, &self.proj, &self.bias].into_iter()
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        [&mut self.embed, &mut self.attn_q, &mut self.attn_k, &mut self.proj, &mut self.bias].into_iter()
    }

    pub fn num_params(&self) -> usize {
        self.blocks().map(<[f64]>::len).sum()
    }

    /// Flat view in block order `embed, attn_q, attn_k, proj, bias`.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for b in self.blocks() {
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for b in self.blocks_mut() {
            if index < b.len() {
                b[index] = value;
                return;
            }
            index -= b.len();
        }
        panic!("flat parameter index out of range")
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &EncoderParams) {
        for (dst, src) in self.blocks_mut().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// SHA-256 over dimensions and little-endian weights.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for d in [self.input_vocab, self.vocab, self.hidden] {
            h.update((d as u64).to_le_bytes());
        }
        for b in self.blocks() {
            for x in b {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut s = alloc::string::String::with_capacity(64);
        for b in self.digest() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(invalid("token sequence is empty"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.input_vocab) {
            return Err(invalid(alloc::format!(
                "token {bad} outside input vocabulary of {}",
                self.input_vocab
            )));
        }
        Ok(())
    }

    /// Runs the forward pass, keeping every intermediate needed for backprop.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Forward> {
        self.check_tokens(tokens)?;
        let h = self.hidden;
        let v = self.vocab;
        let len = tokens.len();

        let mut x = vec![0.0; len * h];
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            x[i * h..(i + 1) * h].copy_from_slice(&self.embed[t * h..(t + 1) * h]);
        }
        let q = mat_vecs(&self.attn_q, &x, h, len);
        let k = mat_vecs(&self.attn_k, &x, h, len);

        let scale = 1.0 / math::sqrt(h as f64);
        let mut attn = vec![0.0; len * len];
        let mut row_scores = vec![0.0; len];
        for i in 0..len {
            let qi = &q[i * h..(i + 1) * h];
            for (m, s) in row_scores.iter_mut().enumerate() {
                *s = dot_dense(qi, &k[m * h..(m + 1) * h]) * scale;
            }
            let max = row_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in row_scores.iter_mut() {
                *s = math::exp(*s - max);
                total += *s;
            }
            for (m, s) in row_scores.iter().enumerate() {
                attn[i * len + m] = s / total;
            }
        }

        let mut ctx = vec![0.0; len * h];
        for i in 0..len {
            let ci = &mut ctx[i * h..(i + 1) * h];
            for m in 0..len {
                let a = attn[i * len + m];
                for (c, xm) in ci.iter_mut().zip(&x[m * h..(m + 1) * h]) {
                    *c += a * xm;
                }
            }
        }

        let mut logits = vec![0.0; len * v];
        for i in 0..len {
            let row = &mut logits[i * v..(i + 1) * v];
            row.copy_from_slice(&self.bias);
            for r in 0..h {
                let c = ctx[i * h + r];
                for (w, p) in row.iter_mut().zip(&self.proj[r * v..(r + 1) * v]) {
                    *w += c * p;
                }
            }
        }

        Ok(Forward { tokens: tokens.to_vec(), hidden: h, vocab: v, x, q, k, attn, ctx, logits })
    }

    /// Per-position vocabulary logits `w[i][j]`.
    pub fn importance_logits(&self, tokens: &[TokenId]) -> Result<ImportanceMatrix> {
        let f = self.forward(tokens)?;
        Ok(ImportanceMatrix { rows: tokens.len(), vocab: self.vocab, values: f.logits })
    }

    /// Pooled representation before pruning (length `vocab`, all ≥ 0).
    pub fn encode_dense(&self, tokens: &[TokenId], mode: PoolingMode) -> Result<Vec<f64>> {
        Ok(self.forward(tokens)?.pooled(mode))
    }

    pub fn encode(&self, tokens: &[TokenId], mode: PoolingMode) -> Result<SparseVec> {
        SparseVec::prune(&self.encode_dense(tokens, mode)?)
    }

    /// Ranking score of a query against an already encoded document.
    pub fn score(&self, query: &[TokenId], doc: &SparseVec, mode: PoolingMode) -> Result<f64> {
        Ok(sparse::dot(&self.encode(query, mode)?, doc))
    }

    /// Gradient of `⟨upstream, pooled(tokens)⟩` with respect to every parameter.
    pub fn encode_backward(
        &self,
        tokens: &[TokenId],
        mode: PoolingMode,
        upstream: &[f64],
    ) -> Result<EncoderParams> {
        let f = self.forward(tokens)?;
        let mut grads = self.zeros_like();
        self.backward(&f, mode, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates (`+=`) the gradient of `⟨upstream, pooled⟩` into `grads`.
    ///
    /// Max pooling routes each term's gradient to its argmax position only,
    /// lowest position on ties. Terms whose logits are all ≤ 0 get nothing.
    pub fn backward(
        &self,
        f: &Forward,
        mode: PoolingMode,
        upstream: &[f64],
        grads: &mut EncoderParams,
    ) -> Result<()> {
        let h = self.hidden;
        let v = self.vocab;
        let len = f.tokens.len();
        if upstream.len() != v {
            return Err(invalid("upstream gradient length differs from vocabulary size"));
        }
        if upstream.iter().any(|g| !g.is_finite()) {
            return Err(invalid("upstream gradient is not finite"));
        }

        // d loss / d logits, kept sparse as (position, term, value).
        let mut dctx = vec![0.0; len * h];
        let mut push = |i: usize, j: usize, g: f64, grads: &mut EncoderParams| {
            grads.bias[j] += g;
            for r in 0..h {
                grads.proj[r * v + j] += f.ctx[i * h + r] * g;
                dctx[i * h + r] += self.proj[r * v + j] * g;
            }
        };
        match mode {
            PoolingMode::Max => {
                for (j, &up) in upstream.iter().enumerate() {
                    if up == 0.0 {
                        continue;
                    }
                    let (best, w) = f.argmax(j);
                    if w > 0.0 {
                        push(best, j, up / (1.0 + w), grads);
                    }
                }
            }
            PoolingMode::Sum => {
                for i in 0..len {
                    let row = &f.logits[i * v..(i + 1) * v];
                    for (j, (&w, &up)) in row.iter().zip(upstream).enumerate() {
                        if w > 0.0 && up != 0.0 {
                            push(i, j, up / (1.0 + w), grads);
                        }
                    }
                }
            }
        }

        // ctx_i = Σ_m a_im x_m ; a_i = softmax_m(q_i·k_m · scale)
        let scale = 1.0 / math::sqrt(h as f64);
        let mut dx = vec![0.0; len * h];
        let mut dq = vec![0.0; len * h];
        let mut dk = vec![0.0; len * h];
        let mut da = vec![0.0; len];
        for i in 0..len {
            let dci = &dctx[i * h..(i + 1) * h];
            if dci.iter().all(|&g| g == 0.0) {
                continue;
            }
            let a = &f.attn[i * len..(i + 1) * len];
            let mut weighted = 0.0;
            for m in 0..len {
                let xm = &f.x[m * h..(m + 1) * h];
                da[m] = dot_dense(dci, xm);
                weighted += a[m] * da[m];
                for (d, g) in dx[m * h..(m + 1) * h].iter_mut().zip(dci) {
                    *d += a[m] * g;
                }
            }
            for m in 0..len {
                let ds = a[m] * (da[m] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for r in 0..h {
                    dq[i * h + r] += ds * f.k[m * h + r];
                    dk[m * h + r] += ds * f.q[i * h + r];
                }
            }
        }

        // q_i = A_q x_i, k_i = A_k x_i
        for i in 0..len {
            let xi = &f.x[i * h..(i + 1) * h];
            for r in 0..h {
                let gq = dq[i * h + r];
                let gk = dk[i * h + r];
                if gq == 0.0 && gk == 0.0 {
                    continue;
                }
                for c in 0..h {
                    grads.attn_q[r * h + c] += gq * xi[c];
                    grads.attn_k[r * h + c] += gk * xi[c];
                    dx[i * h + c] += self.attn_q[r * h + c] * gq + self.attn_k[r * h + c] * gk;
                }
            }
        }

        for (i, &t) in f.tokens.iter().enumerate() {
            let t = t as usize;
            for (e, g) in grads.embed[t * h..(t + 1) * h].iter_mut().zip(&dx[i * h..(i + 1) * h]) {
                *e += g;
            }
        }
        Ok(())
    }
}

/// `out_i = M x_i` for each of `n` row vectors of width `h`.
fn mat_vecs(m: &[f64], xs: &[f64], h: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        let xi = &xs[i * h..(i + 1) * h];
        for r in 0..h {
            out[i * h + r] = dot_dense(&m[r * h..(r + 1) * h], xi);
        }
    }
    out
}

#[inline]
fn dot_dense(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `rows × vocab` importance logits; entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub rows: usize,
    pub vocab: usize,
    pub values: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != vocab) {
            return Err(invalid("importance rows must be non-empty and equally long"));
        }
        Ok(Self { rows: rows.len(), vocab, values: rows.concat() })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.vocab + j]
    }

    /// Log-saturated pooling over positions.
    pub fn pool(&self, mode: PoolingMode) -> Vec<f64> {
        pool_logits(&self.values, self.rows, self.vocab, mode)
    }
}

fn pool_logits(logits: &[f64], rows: usize, vocab: usize, mode: PoolingMode) -> Vec<f64> {
    match mode {
        PoolingMode::Max => {
            // ln(1 + relu(.)) is monotone, so pool the raw logits first.
            let mut best = vec![0.0f64; vocab];
            for i in 0..rows {
                for (b, &w) in best.iter_mut().zip(&logits[i * vocab..(i + 1) * vocab]) {
                    if w > *b {
                        *b = w;
                    }
                }
            }
            best.iter().map(|&w| math::ln_1p(w)).collect()
        }
        PoolingMode::Sum => {
            let mut out = vec![0.0; vocab];
            for i in 0..rows {
                for (o, &w) in out.iter_mut().zip(&logits[i * vocab..(i + 1) * vocab]) {
                    if w > 0.0 {
                        *o += math::ln_1p(w);
                    }
                }
            }
            out
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    tokens: Vec<TokenId>,
    hidden: usize,
    vocab: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    logits: Vec<f64>,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.ctx[i * self.hidden..(i + 1) * self.hidden]
    }

    pub fn pooled(&self, mode: PoolingMode) -> Vec<f64> {
        pool_logits(&self.logits, self.tokens.len(), self.vocab, mode)
    }

    /// Position with the largest logit for term `j` (lowest index on ties).
    fn argmax(&self, j: usize) -> (usize, f64) {
        let mut best = (0, self.logits[j]);
        for i in 1..self.tokens.len() {
            let w = self.logits[i * self.vocab + j];
            if w > best.1 {
                best = (i, w);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> EncoderParams {
        EncoderParams::init(5, 3, 2, seed).unwrap()
    }

    #[test]
    fn single_token_zero_attention_is_linear_head() {
        let mut p = small(1);
        p.attn_q.iter_mut().for_each(|x| *x = 0.0);
        p.attn_k.iter_mut().for_each(|x| *x = 0.0);
        p.bias = vec![0.1, -0.2, 0.3];
        let m = p.importance_logits(&[3]).unwrap();
        for j in 0..3 {
            let want = p.embed[6] * p.proj[j] + p.embed[7] * p.proj[3 + j] + p.bias[j];
            assert!((m.get(0, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_projection_gives_bias_rows() {
        let mut p = small(2);
        p.proj.iter_mut().for_each(|x| *x = 0.0);
        p.bias = vec![0.5, -1.0, 2.0];
        let m = p.importance_logits(&[0, 4, 2]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), p.bias[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_tokens() {
        let p = small(3);
        assert!(p.forward(&[]).is_err());
        assert!(p.forward(&[5]).is_err());
    }

    #[test]
    fn pooling_examples() {
        let m = ImportanceMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.3]]).unwrap();
        let max = m.pool(PoolingMode::Max);
        assert!((max[0] - 3.0f64.ln()).abs() < 1e-12);
        assert!((max[1] - 1.3f64.ln()).abs() < 1e-12);
        assert!((max[0] - 1.098612).abs() < 1e-6 && (max[1] - 0.262364).abs() < 1e-6);

        let neg = ImportanceMatrix::from_rows(&[vec![-0.5, 0.0], vec![-2.0, -0.3]]).unwrap();
        assert!(neg.pool(PoolingMode::Max).iter().all(|&w| w == 0.0));
        assert!(neg.pool(PoolingMode::Sum).iter().all(|&w| w == 0.0));

        let one = ImportanceMatrix::from_rows(&[vec![0.7, -0.1, 3.0]]).unwrap();
        assert_eq!(one.pool(PoolingMode::Max), one.pool(PoolingMode::Sum));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let p = EncoderParams::init(6, 4, 3, 9).unwrap();
        let g = p.encode_backward(&[1, 2, 5], PoolingMode::Max, &[0.0; 4]).unwrap();
        assert!(g.blocks().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn dead_term_gets_no_gradient() {
        let mut p = EncoderParams::init(6, 4, 3, 9).unwrap();
        // term 2 can never activate
        for r in 0..3 {
            p.proj[r * 4 + 2] = 0.0;
        }
        p.bias[2] = -1.0;
        let mut up = [0.0; 4];
        up[2] = 1.0;
        for mode in [PoolingMode::Max, PoolingMode::Sum] {
            let g = p.encode_backward(&[0, 3], mode, &up).unwrap();
            assert!(g.blocks().all(|b| b.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn digest_changes_with_weights() {
        let mut p = small(4);
        let d = p.digest();
        assert_eq!(d, p.clone().digest());
        p.bias[0] += 1e-12;
        assert_ne!(d, p.digest());
        assert_eq!(small(4).digest_hex().len(), 64);
    }
}
