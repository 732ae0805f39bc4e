//! Raw numeric kernels on flat f32 slices. Shape checking and gradient
//! bookkeeping live in the tape; these functions only compute.

use crate::error::{Result, SnnError};

/// Resolve the output shape of a (possibly batched) matrix product
/// `[..,m,k] x [..,k,n] -> [..,m,n]`. Leading extents broadcast where equal
/// or where one side is 1 (or missing, aligning right).
pub fn matmul_shapes(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    if lhs.len() < 2 || rhs.len() < 2 {
        return Err(SnnError::Dimension(format!(
            "matmul needs rank >= 2 on both sides, got {lhs:?} x {rhs:?}"
        )));
    }
    let (m, k1) = (lhs[lhs.len() - 2], lhs[lhs.len() - 1]);
    let (k2, n) = (rhs[rhs.len() - 2], rhs[rhs.len() - 1]);
    if k1 != k2 {
        return Err(SnnError::Dimension(format!(
            "matmul inner extents differ: {lhs:?} x {rhs:?}"
        )));
    }
    let la = &lhs[..lhs.len() - 2];
    let lb = &rhs[..rhs.len() - 2];
    let rank = la.len().max(lb.len());
    let mut lead = Vec::with_capacity(rank);
    for i in 0..rank {
        let a = if i + la.len() >= rank { la[i + la.len() - rank] } else { 1 };
        let b = if i + lb.len() >= rank { lb[i + lb.len() - rank] } else { 1 };
        if a != b && a != 1 && b != 1 {
            return Err(SnnError::Dimension(format!(
                "matmul batch extents incompatible: {lhs:?} x {rhs:?}"
            )));
        }
        lead.push(a.max(b));
    }
    let mut out = lead;
    out.push(m);
    out.push(n);
    Ok(out)
}

/// Map a flat batch index in the broadcast output to the flat batch index of
/// an operand whose leading shape is `shape` (right-aligned against `out`).
fn batch_offset(out_lead: &[usize], shape: &[usize], mut flat: usize) -> usize {
    let rank = out_lead.len();
    let mut coords = vec![0usize; rank];
    for d in (0..rank).rev() {
        coords[d] = flat % out_lead[d];
        flat /= out_lead[d];
    }
    let mut off = 0;
    let mut stride = 1;
    for d in (0..shape.len()).rev() {
        let od = rank - shape.len() + d;
        let c = if shape[d] == 1 { 0 } else { coords[od] };
        off += c * stride;
        stride *= shape[d];
    }
    off
}

/// C[m,n] += A[m,k] * B[k,n]
fn gemm_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

pub struct BatchedDims {
    pub lead: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lhs_lead: Vec<usize>,
    pub rhs_lead: Vec<usize>,
}

pub fn batched_dims(lhs: &[usize], rhs: &[usize]) -> Result<BatchedDims> {
    let out = matmul_shapes(lhs, rhs)?;
    Ok(BatchedDims {
        lead: out[..out.len() - 2].to_vec(),
        m: lhs[lhs.len() - 2],
        k: lhs[lhs.len() - 1],
        n: rhs[rhs.len() - 1],
        lhs_lead: lhs[..lhs.len() - 2].to_vec(),
        rhs_lead: rhs[..rhs.len() - 2].to_vec(),
    })
}

pub fn matmul_forward(a: &[f32], b: &[f32], d: &BatchedDims) -> Vec<f32> {
    let batches: usize = d.lead.iter().product();
    let mut out = vec![0.0; batches * d.m * d.n];
    let (am, bm) = (d.m * d.k, d.k * d.n);
    for bi in 0..batches {
        let ao = batch_offset(&d.lead, &d.lhs_lead, bi) * am;
        let bo = batch_offset(&d.lead, &d.rhs_lead, bi) * bm;
        gemm_acc(
            &a[ao..ao + am],
            &b[bo..bo + bm],
            &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
            d.m,
            d.k,
            d.n,
        );
    }
    out
}

/// dA += dC * B^T, dB += A^T * dC, summing over broadcast batch extents.
pub fn matmul_backward(
    a: &[f32],
    b: &[f32],
    dc: &[f32],
    d: &BatchedDims,
    da: &mut [f32],
    db: &mut [f32],
) {
    let batches: usize = d.lead.iter().product();
    let (am, bm, cm) = (d.m * d.k, d.k * d.n, d.m * d.n);
    for bi in 0..batches {
        let ao = batch_offset(&d.lead, &d.lhs_lead, bi) * am;
        let bo = batch_offset(&d.lead, &d.rhs_lead, bi) * bm;
        let dc_b = &dc[bi * cm..(bi + 1) * cm];
        // dA[i,p] += sum_j dC[i,j] B[p,j]
        let b_b = &b[bo..bo + bm];
        let da_b = &mut da[ao..ao + am];
        for i in 0..d.m {
            let dc_row = &dc_b[i * d.n..(i + 1) * d.n];
            for p in 0..d.k {
                let b_row = &b_b[p * d.n..(p + 1) * d.n];
                let mut s = 0.0;
                for j in 0..d.n {
                    s += dc_row[j] * b_row[j];
                }
                da_b[i * d.k + p] += s;
            }
        }
        // dB[p,j] += sum_i A[i,p] dC[i,j]
        let a_b = &a[ao..ao + am];
        let db_b = &mut db[bo..bo + bm];
        for i in 0..d.m {
            let dc_row = &dc_b[i * d.n..(i + 1) * d.n];
            for p in 0..d.k {
                let av = a_b[i * d.k + p];
                if av == 0.0 {
                    continue;
                }
                let db_row = &mut db_b[p * d.n..(p + 1) * d.n];
                for j in 0..d.n {
                    db_row[j] += av * dc_row[j];
                }
            }
        }
    }
}

/// Zero-padded "same" cross-correlation geometry: output spatial size equals
/// input; for even kernels the extra padding sits on the bottom/right.
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvDims {
    pub fn same(x_shape: &[usize], w_shape: &[usize]) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(SnnError::Dimension(format!(
                "conv2d expects x[B,Cin,H,W] and w[Cout,Cin,kh,kw], got {x_shape:?} and {w_shape:?}"
            )));
        }
        let (kh, kw) = (w_shape[2], w_shape[3]);
        if kh == 0 || kw == 0 {
            return Err(SnnError::Config("non-positive conv kernel extents".into()));
        }
        if x_shape[1] != w_shape[1] {
            return Err(SnnError::Dimension(format!(
                "conv2d channel mismatch: input {x_shape:?} vs kernel {w_shape:?}"
            )));
        }
        Ok(ConvDims {
            batch: x_shape[0],
            c_in: x_shape[1],
            c_out: w_shape[0],
            h: x_shape[2],
            w: x_shape[3],
            kh,
            kw,
            ph: (kh - 1) / 2,
            pw: (kw - 1) / 2,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

/// Unfold one sample into a (c_in*kh*kw, h*w) patch matrix.
pub fn im2col(x: &[f32], d: &ConvDims, col: &mut [f32]) {
    let hw = d.spatial();
    debug_assert_eq!(col.len(), d.col_rows() * hw);
    let mut row = 0;
    for ci in 0..d.c_in {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for dy in 0..d.kh {
            for dx in 0..d.kw {
                let out_row = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..d.h {
                    let iy = oy as isize + dy as isize - d.ph as isize;
                    let dst = &mut out_row[oy * d.w..(oy + 1) * d.w];
                    if iy < 0 || iy >= d.h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.w {
                        let ix = ox as isize + dx as isize - d.pw as isize;
                        dst[ox] = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a (c_in*kh*kw, h*w) patch-gradient matrix back onto dx.
pub fn col2im_acc(col: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let hw = d.spatial();
    let mut row = 0;
    for ci in 0..d.c_in {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for dy in 0..d.kh {
            for dx_k in 0..d.kw {
                let src_row = &col[row * hw..(row + 1) * hw];
                for oy in 0..d.h {
                    let iy = oy as isize + dy as isize - d.ph as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.w {
                        let ix = ox as isize + dx_k as isize - d.pw as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        plane[iy as usize * d.w + ix as usize] += src_row[oy * d.w + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_same_forward(x: &[f32], w: &[f32], bias: &[f32], d: &ConvDims) -> Vec<f32> {
    let hw = d.spatial();
    let rows = d.col_rows();
    let mut out = vec![0.0; d.batch * d.c_out * hw];
    let mut col = vec![0.0; rows * hw];
    for b in 0..d.batch {
        im2col(&x[b * d.c_in * hw..(b + 1) * d.c_in * hw], d, &mut col);
        let out_b = &mut out[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        for (co, ob) in out_b.chunks_mut(hw).enumerate() {
            ob.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm_acc(w, &col, out_b, d.c_out, rows, hw);
    }
    out
}

pub fn conv2d_same_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    d: &ConvDims,
    dx: &mut [f32],
    dw: &mut [f32],
    db: &mut [f32],
) {
    let hw = d.spatial();
    let rows = d.col_rows();
    let mut col = vec![0.0; rows * hw];
    let mut dcol = vec![0.0; rows * hw];
    for b in 0..d.batch {
        let dy_b = &dy[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        im2col(&x[b * d.c_in * hw..(b + 1) * d.c_in * hw], d, &mut col);
        // dW[co, r] += sum_s dY[co, s] col[r, s]
        for co in 0..d.c_out {
            let dy_row = &dy_b[co * hw..(co + 1) * hw];
            let dw_row = &mut dw[co * rows..(co + 1) * rows];
            for r in 0..rows {
                let col_row = &col[r * hw..(r + 1) * hw];
                let mut s = 0.0;
                for j in 0..hw {
                    s += dy_row[j] * col_row[j];
                }
                dw_row[r] += s;
            }
            db[co] += dy_row.iter().sum::<f32>();
        }
        // dcol = W^T * dY, then scatter back
        dcol.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..d.c_out {
            let dy_row = &dy_b[co * hw..(co + 1) * hw];
            let w_row = &w[co * rows..(co + 1) * rows];
            for r in 0..rows {
                let wv = w_row[r];
                if wv == 0.0 {
                    continue;
                }
                let dcol_row = &mut dcol[r * hw..(r + 1) * hw];
                for j in 0..hw {
                    dcol_row[j] += wv * dy_row[j];
                }
            }
        }
        col2im_acc(&dcol, d, &mut dx[b * d.c_in * hw..(b + 1) * d.c_in * hw]);
    }
}

/// Numerically-stabilized softmax over the last axis, in place over `out`.
/// Row-max subtraction plus double-precision intermediates, rounded once.
pub fn softmax_rows(x: &[f32], out: &mut [f32], row_len: usize) {
    let mut row = vec![0.0f64; row_len];
    for (xr, or) in x.chunks(row_len).zip(out.chunks_mut(row_len)) {
        let mx = xr.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for (e, &v) in row.iter_mut().zip(xr) {
            *e = (v as f64 - mx).exp();
            sum += *e;
        }
        for (o, &e) in or.iter_mut().zip(row.iter()) {
            *o = (e / sum) as f32;
        }
    }
}
