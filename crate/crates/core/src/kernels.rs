//! Inner loops of the 3x3 convolution.
//!
//! Inputs are zero-padded planes whose rows are `round_up(w, X_BLOCK) + 2`
//! wide, so every kernel works on whole blocks of `X_BLOCK` pixels. Weights
//! are packed `C x 9 x O_pad` (see `tensor::pack_weights`). AVX-512 or
//! AVX2/FMA paths are selected at runtime; the portable path computes the
//! same sums without fused multiply-add. Each path is deterministic, but the
//! paths differ from each other in the last bits.

pub(crate) const X_BLOCK: usize = 16;
pub(crate) const O_BLOCK: usize = 4;

pub(crate) fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

pub(crate) fn padded_row(w: usize) -> usize {
    round_up(w, X_BLOCK) + 2
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn isa() -> Isa {
    use std::sync::OnceLock;
    static DETECTED: OnceLock<Isa> = OnceLock::new();
    *DETECTED.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f") {
                return Isa::Avx512;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return Isa::Avx2;
            }
        }
        Isa::Portable
    })
}

/// Same-size 3x3 correlation of padded `src` (`cin` planes of `h x w`) with
/// packed weights, writing the first `o_real` output planes into `out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn correlate3x3(
    src: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    packed: &[f64],
    opad: usize,
    bias: &[f64],
    out: &mut [f64],
    o_real: usize,
) {
    assert_eq!(src.len(), cin * (h + 2) * padded_row(w));
    assert_eq!(packed.len(), cin * 9 * opad);
    assert_eq!(opad % O_BLOCK, 0);
    assert!(out.len() >= o_real * h * w && o_real <= opad);
    // SAFETY: the instruction set was detected at runtime and the slice
    // bounds used by the kernels are asserted above.
    match isa() {
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { avx512::correlate3x3(src, cin, h, w, packed, opad, bias, out, o_real) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { avx::correlate3x3(src, cin, h, w, packed, opad, bias, out, o_real) },
        Isa::Portable => portable::correlate3x3(src, cin, h, w, packed, opad, bias, out, o_real),
    }
}

/// `grads[o][c][t] = sum_{y,x} g[o][y][x] * src[c][y + ky][x + kx]` where `g`
/// rows are widened with zeros to `round_up(w, X_BLOCK)`.
pub(crate) fn kernel_grads(g: &[f64], o: usize, src: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let wr = round_up(w, X_BLOCK);
    assert_eq!(g.len(), o * h * wr);
    assert_eq!(src.len(), cin * (h + 2) * padded_row(w));
    // SAFETY: as in `correlate3x3`.
    match isa() {
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { avx512::kernel_grads(g, o, src, cin, h, w) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { avx::kernel_grads(g, o, src, cin, h, w) },
        Isa::Portable => portable::kernel_grads(g, o, src, cin, h, w),
    }
}

mod portable {
    use super::*;

    #[allow(clippy::too_many_arguments)]
    pub(super) fn correlate3x3(
        src: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        packed: &[f64],
        opad: usize,
        bias: &[f64],
        out: &mut [f64],
        o_real: usize,
    ) {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        for ob in (0..opad).step_by(O_BLOCK) {
            for y in 0..h {
                for xb in (0..wr).step_by(X_BLOCK) {
                    let mut acc = [[0.0; X_BLOCK]; O_BLOCK];
                    for (j, a) in acc.iter_mut().enumerate() {
                        *a = [bias.get(ob + j).copied().unwrap_or(0.0); X_BLOCK];
                    }
                    for c in 0..cin {
                        for ky in 0..3 {
                            let base = c * plane + (y + ky) * pw + xb;
                            for kx in 0..3 {
                                let s = &src[base + kx..base + kx + X_BLOCK];
                                let kk = &packed[(c * 9 + ky * 3 + kx) * opad + ob..][..O_BLOCK];
                                for j in 0..O_BLOCK {
                                    for i in 0..X_BLOCK {
                                        acc[j][i] += kk[j] * s[i];
                                    }
                                }
                            }
                        }
                    }
                    let n = (w - xb.min(w)).min(X_BLOCK);
                    for (j, a) in acc.iter().enumerate() {
                        if ob + j >= o_real || n == 0 {
                            break;
                        }
                        out[((ob + j) * h + y) * w + xb..][..n].copy_from_slice(&a[..n]);
                    }
                }
            }
        }
    }

    pub(super) fn kernel_grads(g: &[f64], o: usize, src: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        let mut out = vec![0.0; o * cin * 9];
        for oc in 0..o {
            for c in 0..cin {
                for ky in 0..3 {
                    let mut acc = [[0.0; 4]; 3];
                    for y in 0..h {
                        let grow = &g[(oc * h + y) * wr..][..wr];
                        let base = c * plane + (y + ky) * pw;
                        for xb in (0..wr).step_by(4) {
                            for (kx, a) in acc.iter_mut().enumerate() {
                                let s = &src[base + xb + kx..][..4];
                                for i in 0..4 {
                                    a[i] += grow[xb + i] * s[i];
                                }
                            }
                        }
                    }
                    for (kx, a) in acc.iter().enumerate() {
                        out[(oc * cin + c) * 9 + ky * 3 + kx] = (a[0] + a[1]) + (a[2] + a[3]);
                    }
                }
            }
        }
        out
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use std::arch::x86_64::*;

    use super::*;

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn hsum(v: __m256d) -> f64 {
        let mut t = [0.0; 4];
        _mm256_storeu_pd(t.as_mut_ptr(), v);
        (t[0] + t[1]) + (t[2] + t[3])
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn correlate3x3(
        src: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        packed: &[f64],
        opad: usize,
        bias: &[f64],
        out: &mut [f64],
        o_real: usize,
    ) {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        let sp = src.as_ptr();
        let kp = packed.as_ptr();
        let mut tmp = [0.0f64; X_BLOCK];
        for ob in (0..opad).step_by(O_BLOCK) {
            let b: [f64; O_BLOCK] = std::array::from_fn(|j| bias.get(ob + j).copied().unwrap_or(0.0));
            for y in 0..h {
                for xb in (0..wr).step_by(X_BLOCK) {
                    let (b0, b1, b2, b3) = (
                        _mm256_set1_pd(b[0]),
                        _mm256_set1_pd(b[1]),
                        _mm256_set1_pd(b[2]),
                        _mm256_set1_pd(b[3]),
                    );
                    let (mut a00, mut a01, mut a02, mut a03) = (b0, b0, b0, b0);
                    let (mut a10, mut a11, mut a12, mut a13) = (b1, b1, b1, b1);
                    let (mut a20, mut a21, mut a22, mut a23) = (b2, b2, b2, b2);
                    let (mut a30, mut a31, mut a32, mut a33) = (b3, b3, b3, b3);
                    for c in 0..cin {
                        for ky in 0..3 {
                            let row = sp.add(c * plane + (y + ky) * pw + xb);
                            let kk_row = kp.add((c * 9 + ky * 3) * opad + ob);
                            for kx in 0..3 {
                                let s0 = _mm256_loadu_pd(row.add(kx));
                                let s1 = _mm256_loadu_pd(row.add(kx + 4));
                                let s2 = _mm256_loadu_pd(row.add(kx + 8));
                                let s3 = _mm256_loadu_pd(row.add(kx + 12));
                                let kk = kk_row.add(kx * opad);
                                let k0 = _mm256_broadcast_sd(&*kk);
                                a00 = _mm256_fmadd_pd(k0, s0, a00);
                                a01 = _mm256_fmadd_pd(k0, s1, a01);
                                a02 = _mm256_fmadd_pd(k0, s2, a02);
                                a03 = _mm256_fmadd_pd(k0, s3, a03);
                                let k1 = _mm256_broadcast_sd(&*kk.add(1));
                                a10 = _mm256_fmadd_pd(k1, s0, a10);
                                a11 = _mm256_fmadd_pd(k1, s1, a11);
                                a12 = _mm256_fmadd_pd(k1, s2, a12);
                                a13 = _mm256_fmadd_pd(k1, s3, a13);
                                let k2 = _mm256_broadcast_sd(&*kk.add(2));
                                a20 = _mm256_fmadd_pd(k2, s0, a20);
                                a21 = _mm256_fmadd_pd(k2, s1, a21);
                                a22 = _mm256_fmadd_pd(k2, s2, a22);
                                a23 = _mm256_fmadd_pd(k2, s3, a23);
                                let k3 = _mm256_broadcast_sd(&*kk.add(3));
                                a30 = _mm256_fmadd_pd(k3, s0, a30);
                                a31 = _mm256_fmadd_pd(k3, s1, a31);
                                a32 = _mm256_fmadd_pd(k3, s2, a32);
                                a33 = _mm256_fmadd_pd(k3, s3, a33);
                            }
                        }
                    }
                    let acc = [[a00, a01, a02, a03], [a10, a11, a12, a13], [a20, a21, a22, a23], [a30, a31, a32, a33]];
                    let n = (w - xb.min(w)).min(X_BLOCK);
                    for (j, a) in acc.iter().enumerate() {
                        if ob + j >= o_real || n == 0 {
                            break;
                        }
                        for (q, v) in a.iter().enumerate() {
                            _mm256_storeu_pd(tmp.as_mut_ptr().add(4 * q), *v);
                        }
                        out[((ob + j) * h + y) * w + xb..][..n].copy_from_slice(&tmp[..n]);
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn kernel_grads(g: &[f64], o: usize, src: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        let mut out = vec![0.0; o * cin * 9];
        let gp = g.as_ptr();
        let sp = src.as_ptr();
        for ob in (0..o).step_by(O_BLOCK) {
            let nb = (o - ob).min(O_BLOCK);
            for c in 0..cin {
                for ky in 0..3 {
                    // acc[j][kx] for output ob + j and tap (ky, kx)
                    let mut acc = [[_mm256_setzero_pd(); 3]; O_BLOCK];
                    for y in 0..h {
                        let row = sp.add(c * plane + (y + ky) * pw);
                        for xb in (0..wr).step_by(4) {
                            let s0 = _mm256_loadu_pd(row.add(xb));
                            let s1 = _mm256_loadu_pd(row.add(xb + 1));
                            let s2 = _mm256_loadu_pd(row.add(xb + 2));
                            for (j, a) in acc.iter_mut().enumerate().take(nb) {
                                let gv = _mm256_loadu_pd(gp.add(((ob + j) * h + y) * wr + xb));
                                a[0] = _mm256_fmadd_pd(gv, s0, a[0]);
                                a[1] = _mm256_fmadd_pd(gv, s1, a[1]);
                                a[2] = _mm256_fmadd_pd(gv, s2, a[2]);
                            }
                        }
                    }
                    for (j, a) in acc.iter().enumerate().take(nb) {
                        for (kx, v) in a.iter().enumerate() {
                            out[((ob + j) * cin + c) * 9 + ky * 3 + kx] = hsum(*v);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::*;

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn correlate3x3(
        src: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        packed: &[f64],
        opad: usize,
        bias: &[f64],
        out: &mut [f64],
        o_real: usize,
    ) {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        let sp = src.as_ptr();
        let kp = packed.as_ptr();
        let mut tmp = [0.0f64; X_BLOCK];
        for ob in (0..opad).step_by(O_BLOCK) {
            let b: [f64; O_BLOCK] = std::array::from_fn(|j| bias.get(ob + j).copied().unwrap_or(0.0));
            for y in 0..h {
                for xb in (0..wr).step_by(X_BLOCK) {
                    let (b0, b1, b2, b3) = (
                        _mm512_set1_pd(b[0]),
                        _mm512_set1_pd(b[1]),
                        _mm512_set1_pd(b[2]),
                        _mm512_set1_pd(b[3]),
                    );
                    let (mut a00, mut a01) = (b0, b0);
                    let (mut a10, mut a11) = (b1, b1);
                    let (mut a20, mut a21) = (b2, b2);
                    let (mut a30, mut a31) = (b3, b3);
                    for c in 0..cin {
                        for ky in 0..3 {
                            let row = sp.add(c * plane + (y + ky) * pw + xb);
                            let kk_row = kp.add((c * 9 + ky * 3) * opad + ob);
                            for kx in 0..3 {
                                let s0 = _mm512_loadu_pd(row.add(kx));
                                let s1 = _mm512_loadu_pd(row.add(kx + 8));
                                let kk = kk_row.add(kx * opad);
                                let k0 = _mm512_set1_pd(*kk);
                                a00 = _mm512_fmadd_pd(k0, s0, a00);
                                a01 = _mm512_fmadd_pd(k0, s1, a01);
                                let k1 = _mm512_set1_pd(*kk.add(1));
                                a10 = _mm512_fmadd_pd(k1, s0, a10);
                                a11 = _mm512_fmadd_pd(k1, s1, a11);
                                let k2 = _mm512_set1_pd(*kk.add(2));
                                a20 = _mm512_fmadd_pd(k2, s0, a20);
                                a21 = _mm512_fmadd_pd(k2, s1, a21);
                                let k3 = _mm512_set1_pd(*kk.add(3));
                                a30 = _mm512_fmadd_pd(k3, s0, a30);
                                a31 = _mm512_fmadd_pd(k3, s1, a31);
                            }
                        }
                    }
                    let acc = [[a00, a01], [a10, a11], [a20, a21], [a30, a31]];
                    let n = (w - xb.min(w)).min(X_BLOCK);
                    for (j, a) in acc.iter().enumerate() {
                        if ob + j >= o_real || n == 0 {
                            break;
                        }
                        _mm512_storeu_pd(tmp.as_mut_ptr(), a[0]);
                        _mm512_storeu_pd(tmp.as_mut_ptr().add(8), a[1]);
                        out[((ob + j) * h + y) * w + xb..][..n].copy_from_slice(&tmp[..n]);
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn kernel_grads(g: &[f64], o: usize, src: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
        let wr = round_up(w, X_BLOCK);
        let pw = wr + 2;
        let plane = (h + 2) * pw;
        let mut out = vec![0.0; o * cin * 9];
        let gp = g.as_ptr();
        let sp = src.as_ptr();
        let mut t = [0.0f64; 8];
        for ob in (0..o).step_by(O_BLOCK) {
            let nb = (o - ob).min(O_BLOCK);
            for c in 0..cin {
                for ky in 0..3 {
                    let mut acc = [[_mm512_setzero_pd(); 3]; O_BLOCK];
                    for y in 0..h {
                        let row = sp.add(c * plane + (y + ky) * pw);
                        for xb in (0..wr).step_by(8) {
                            let s0 = _mm512_loadu_pd(row.add(xb));
                            let s1 = _mm512_loadu_pd(row.add(xb + 1));
                            let s2 = _mm512_loadu_pd(row.add(xb + 2));
                            for (j, a) in acc.iter_mut().enumerate().take(nb) {
                                let gv = _mm512_loadu_pd(gp.add(((ob + j) * h + y) * wr + xb));
                                a[0] = _mm512_fmadd_pd(gv, s0, a[0]);
                                a[1] = _mm512_fmadd_pd(gv, s1, a[1]);
                                a[2] = _mm512_fmadd_pd(gv, s2, a[2]);
                            }
                        }
                    }
                    for (j, a) in acc.iter().enumerate().take(nb) {
                        for (kx, v) in a.iter().enumerate() {
                            _mm512_storeu_pd(t.as_mut_ptr(), *v);
                            let sum = ((t[0] + t[1]) + (t[2] + t[3])) + ((t[4] + t[5]) + (t[6] + t[7]));
                            out[((ob + j) * cin + c) * 9 + ky * 3 + kx] = sum;
                        }
                    }
                }
            }
        }
        out
    }
}
