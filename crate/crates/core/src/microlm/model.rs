use super::{LayerOffsets, ModelParams};
use crate::kdloss::{self, LogitsMatrix, LossBreakdown, Reduction};
use crate::supervision::SupervisionMask;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

// out(n×m) = a(n×k) · b(k×m)
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

// dw(k×m) += a(n×k)ᵀ · dy(n×m)
fn matmul_tn_acc(a: &[f64], dy: &[f64], n: usize, k: usize, m: usize, dw: &mut [f64]) {
    for i in 0..n {
        let dyrow = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (w, &g) in dw[p * m..(p + 1) * m].iter_mut().zip(dyrow) {
                *w += av * g;
            }
        }
    }
}

// dx(n×k) += dy(n×m) · w(k×m)ᵀ
fn matmul_nt_acc(dy: &[f64], w: &[f64], n: usize, k: usize, m: usize, dx: &mut [f64]) {
    for i in 0..n {
        let dyrow = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let wrow = &w[p * m..(p + 1) * m];
            dx[i * k + p] += dyrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_exact_mut(b.len()) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn colsum_acc(dy: &[f64], m: usize, db: &mut [f64]) {
    for row in dy.chunks_exact(m) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mu) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

// Accumulates into dx, dg, db.
fn layer_norm_back(dy: &[f64], cache: &LnCache, g: &[f64], d: usize, dx: &mut [f64], dg: &mut [f64], db: &mut [f64]) {
    let n = dy.len() / d;
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[i * d + j] += cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    // n_heads blocks of n×n attention weights (upper triangle zero)
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    c: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct Trunk {
    n: usize,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    f: Vec<f64>,
}

fn input_len(params: &ModelParams, tokens: &[u32]) -> Result<usize> {
    let c = params.config();
    if tokens.len() > c.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: c.max_seq_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            vocab: c.vocab_size,
        });
    }
    Ok(tokens.len().saturating_sub(1))
}

fn run_trunk(params: &ModelParams, inputs: &[u32]) -> Trunk {
    let c = params.config();
    let lay = params.layout();
    let w = &params.data;
    let (n, d, nh, dh, ff) = (inputs.len(), c.d_model, c.n_heads, c.head_dim(), c.ff_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut h = vec![0.0; n * d];
    for (t, &tok) in inputs.iter().enumerate() {
        let te = &w[lay.tok_emb + tok as usize * d..][..d];
        let pe = &w[lay.pos_emb + t * d..][..d];
        for j in 0..d {
            h[t * d + j] = te[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for lo in &lay.layers {
        let x = h;
        let (a, ln1) = layer_norm(&x, &w[lo.ln1_g..][..d], &w[lo.ln1_b..][..d], d);
        let q = matmul(&a, &w[lo.wq..][..d * d], n, d, d);
        let k = matmul(&a, &w[lo.wk..][..d * d], n, d, d);
        let v = matmul(&a, &w[lo.wv..][..d * d], n, d, d);
        let mut probs = vec![0.0; nh * n * n];
        let mut o = vec![0.0; n * d];
        for head in 0..nh {
            let col = head * dh;
            let p = &mut probs[head * n * n..(head + 1) * n * n];
            for i in 0..n {
                let qi = &q[i * d + col..][..dh];
                let row = &mut p[i * n..i * n + i + 1];
                let mut mx = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + col..][..dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    mx = mx.max(*s);
                }
                let mut total = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    total += *s;
                }
                for s in row.iter_mut() {
                    *s /= total;
                }
                let oi = &mut o[i * d + col..][..dh];
                for (j, &pij) in row.iter().enumerate() {
                    for (ov, &vv) in oi.iter_mut().zip(&v[j * d + col..][..dh]) {
                        *ov += pij * vv;
                    }
                }
            }
        }
        let attn = matmul(&o, &w[lo.wo..][..d * d], n, d, d);
        let mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let (cn, ln2) = layer_norm(&mid, &w[lo.ln2_g..][..d], &w[lo.ln2_b..][..d], d);
        let mut u = matmul(&cn, &w[lo.w1..][..d * ff], n, d, ff);
        add_bias(&mut u, &w[lo.b1..][..ff]);
        let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let mut out = matmul(&g, &w[lo.w2..][..ff * d], n, ff, d);
        add_bias(&mut out, &w[lo.b2..][..d]);
        for (o2, m) in out.iter_mut().zip(&mid) {
            *o2 += m;
        }
        h = out;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            c: cn,
            u,
            g,
        });
    }
    let (f, lnf) = layer_norm(&h, &w[lay.lnf_g..][..d], &w[lay.lnf_b..][..d], d);
    Trunk { n, layers, lnf, f }
}

fn gather_rows(x: &[f64], rows: &[usize], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

fn project(params: &ModelParams, trunk: &Trunk, rows: &[usize]) -> Vec<f64> {
    let c = params.config();
    let lay = params.layout();
    let fsel = gather_rows(&trunk.f, rows, c.d_model);
    matmul(&fsel, &params.data[lay.w_out..][..c.d_model * c.vocab_size], rows.len(), c.d_model, c.vocab_size)
}

/// Teacher-forced logits: one row per label position (T−1 rows).
pub fn forward(params: &ModelParams, token_ids: &[u32]) -> Result<LogitsMatrix> {
    let n = input_len(params, token_ids)?;
    let rows: Vec<usize> = (0..n).collect();
    forward_rows(params, token_ids, &rows)
}

/// Logits for the selected label rows only, in the order given.
pub fn forward_rows(params: &ModelParams, token_ids: &[u32], rows: &[usize]) -> Result<LogitsMatrix> {
    let n = input_len(params, token_ids)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::ShapeMismatch(format!("row {r} of {n} label rows")));
    }
    let trunk = run_trunk(params, &token_ids[..n]);
    let data = project(params, &trunk, rows);
    Ok(LogitsMatrix::from_raw(rows.len(), params.config().vocab_size, data))
}

/// Combined loss over the masked label rows and its exact gradient with
/// respect to every parameter (same layout as `params.data`).
///
/// Labels are `token_ids[1..]`. A teacher is required when `lambda > 0`;
/// without one the soft term is reported as 0.
pub fn loss_and_grads(
    params: &ModelParams,
    token_ids: &[u32],
    mask: &SupervisionMask,
    lambda: f64,
    teacher: Option<&LogitsMatrix>,
    reduction: Reduction,
) -> Result<(LossBreakdown, Vec<f64>)> {
    kdloss::check_lambda(lambda)?;
    let n = input_len(params, token_ids)?;
    let c = params.config();
    let vsz = c.vocab_size;
    if mask.len() != n {
        return Err(Error::ShapeMismatch(format!("mask has {} bits for {n} label rows", mask.len())));
    }
    if let Some(t) = teacher {
        if t.rows() != n || t.vocab() != vsz {
            return Err(Error::ShapeMismatch(format!(
                "teacher {}x{} vs student {n}x{vsz}",
                t.rows(),
                t.vocab()
            )));
        }
    } else if lambda > 0.0 {
        return Err(Error::TeacherUnavailable(format!("lambda {lambda} needs teacher logits")));
    }
    let rows: Vec<usize> = (0..n).filter(|&t| mask.bits[t]).collect();
    let mut grads = vec![0.0; params.len()];
    if rows.is_empty() {
        if reduction == Reduction::Mean {
            return Err(Error::EmptyMask);
        }
        return Ok((kdloss::blend(0.0, 0.0, lambda, 0, reduction), grads));
    }

    let trunk = run_trunk(params, &token_ids[..n]);
    let logits = project(params, &trunk, &rows);
    let weight = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / rows.len() as f64,
    };
    let (mut soft, mut hard) = (0.0, 0.0);
    let mut dlogits = vec![0.0; logits.len()];
    for (r, &t) in rows.iter().enumerate() {
        let row = &logits[r * vsz..(r + 1) * vsz];
        let label = token_ids[t + 1] as usize;
        let ls = kdloss::log_softmax(row);
        hard -= ls[label];
        let dl = &mut dlogits[r * vsz..(r + 1) * vsz];
        for (g, &l) in dl.iter_mut().zip(&ls) {
            *g = l.exp();
        }
        dl[label] -= 1.0 - lambda;
        if let Some(tm) = teacher {
            let trow = tm.row(t);
            soft += kdloss::kl_row(trow, row);
            for (g, pt) in dl.iter_mut().zip(kdloss::softmax(trow)) {
                *g -= lambda * pt;
            }
        }
        for g in dl.iter_mut() {
            *g *= weight;
        }
    }
    let breakdown = kdloss::blend(soft * weight, hard * weight, lambda, rows.len(), reduction);

    backward(params, &trunk, &token_ids[..n], &rows, &dlogits, &mut grads);
    Ok((breakdown, grads))
}

fn backward(params: &ModelParams, trunk: &Trunk, inputs: &[u32], rows: &[usize], dlogits: &[f64], grads: &mut [f64]) {
    let c = params.config();
    let lay = params.layout();
    let w = &params.data;
    let (n, d, nh, dh, ff, vsz) = (trunk.n, c.d_model, c.n_heads, c.head_dim(), c.ff_dim(), c.vocab_size);
    let scale = 1.0 / (dh as f64).sqrt();

    let fsel = gather_rows(&trunk.f, rows, d);
    matmul_tn_acc(&fsel, dlogits, rows.len(), d, vsz, &mut grads[lay.w_out..][..d * vsz]);
    let mut dfsel = vec![0.0; rows.len() * d];
    matmul_nt_acc(dlogits, &w[lay.w_out..][..d * vsz], rows.len(), d, vsz, &mut dfsel);
    let mut df = vec![0.0; n * d];
    for (r, &t) in rows.iter().enumerate() {
        df[t * d..(t + 1) * d].copy_from_slice(&dfsel[r * d..(r + 1) * d]);
    }
    let mut dh_ = vec![0.0; n * d];
    {
        let (gpart, bpart) = grads[lay.lnf_g..lay.lnf_b + d].split_at_mut(d);
        layer_norm_back(&df, &trunk.lnf, &w[lay.lnf_g..][..d], d, &mut dh_, gpart, bpart);
    }

    for (lo, cache) in lay.layers.iter().zip(&trunk.layers).rev() {
        let LayerOffsets {
            ln1_g,
            wq,
            wk,
            wv,
            wo,
            ln2_g,
            w1,
            b1,
            w2,
            b2,
            ..
        } = *lo;
        let dout = dh_;
        // MLP branch
        matmul_tn_acc(&cache.g, &dout, n, ff, d, &mut grads[w2..][..ff * d]);
        colsum_acc(&dout, d, &mut grads[b2..][..d]);
        let mut dg = vec![0.0; n * ff];
        matmul_nt_acc(&dout, &w[w2..][..ff * d], n, ff, d, &mut dg);
        for (g, &u) in dg.iter_mut().zip(&cache.u) {
            *g *= gelu_grad(u);
        }
        let du = dg;
        matmul_tn_acc(&cache.c, &du, n, d, ff, &mut grads[w1..][..d * ff]);
        colsum_acc(&du, ff, &mut grads[b1..][..ff]);
        let mut dc = vec![0.0; n * d];
        matmul_nt_acc(&du, &w[w1..][..d * ff], n, d, ff, &mut dc);
        let mut dmid = dout;
        {
            let (gpart, bpart) = grads[ln2_g..ln2_g + 2 * d].split_at_mut(d);
            layer_norm_back(&dc, &cache.ln2, &w[ln2_g..][..d], d, &mut dmid, gpart, bpart);
        }

        // attention branch
        matmul_tn_acc(&cache.o, &dmid, n, d, d, &mut grads[wo..][..d * d]);
        let mut do_ = vec![0.0; n * d];
        matmul_nt_acc(&dmid, &w[wo..][..d * d], n, d, d, &mut do_);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for head in 0..nh {
            let col = head * dh;
            let p = &cache.probs[head * n * n..(head + 1) * n * n];
            for i in 0..n {
                let doi = &do_[i * d + col..][..dh];
                let prow = &p[i * n..i * n + i + 1];
                // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                let mut dot = 0.0;
                for (j, &pij) in prow.iter().enumerate() {
                    let vj = &cache.v[j * d + col..][..dh];
                    dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += pij * dp[j];
                    for (g, &x) in dv[j * d + col..][..dh].iter_mut().zip(doi) {
                        *g += pij * x;
                    }
                }
                let qi = &cache.q[i * d + col..][..dh];
                for (j, &pij) in prow.iter().enumerate() {
                    let ds = pij * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j * d + col..][..dh];
                    for (g, &x) in dq[i * d + col..][..dh].iter_mut().zip(kj) {
                        *g += ds * x;
                    }
                    for (g, &x) in dk[j * d + col..][..dh].iter_mut().zip(qi) {
                        *g += ds * x;
                    }
                }
            }
        }
        matmul_tn_acc(&cache.a, &dq, n, d, d, &mut grads[wq..][..d * d]);
        matmul_tn_acc(&cache.a, &dk, n, d, d, &mut grads[wk..][..d * d]);
        matmul_tn_acc(&cache.a, &dv, n, d, d, &mut grads[wv..][..d * d]);
        let mut da = vec![0.0; n * d];
        matmul_nt_acc(&dq, &w[wq..][..d * d], n, d, d, &mut da);
        matmul_nt_acc(&dk, &w[wk..][..d * d], n, d, d, &mut da);
        matmul_nt_acc(&dv, &w[wv..][..d * d], n, d, d, &mut da);
        let mut dx = dmid;
        {
            let (gpart, bpart) = grads[ln1_g..ln1_g + 2 * d].split_at_mut(d);
            layer_norm_back(&da, &cache.ln1, &w[ln1_g..][..d], d, &mut dx, gpart, bpart);
        }
        dh_ = dx;
    }

    for (t, &tok) in inputs.iter().enumerate() {
        let src = &dh_[t * d..(t + 1) * d];
        for (g, &x) in grads[lay.tok_emb + tok as usize * d..][..d].iter_mut().zip(src) {
            *g += x;
        }
        for (g, &x) in grads[lay.pos_emb + t * d..][..d].iter_mut().zip(src) {
            *g += x;
        }
    }
}
