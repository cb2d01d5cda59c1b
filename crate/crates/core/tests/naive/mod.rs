//! Sliding-window kernels written the slow way: pad the input explicitly,
//! then read every window of the padded copy. Shared with the acceptance
//! run of the std crate, so it depends on nothing but `std`.

#![allow(dead_code)]

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad {
    Valid,
    Same,
}

/// Output length and padding before the first element, or `None` when a
/// valid window does not fit.
pub fn geometry(len: usize, k: usize, s: usize, pad: Pad) -> Option<(usize, usize)> {
    match pad {
        Pad::Valid if k > len => None,
        Pad::Valid => Some(((len - k) / s + 1, 0)),
        Pad::Same => {
            let out = len.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(len);
            Some((out, total / 2))
        }
    }
}

/// `[n, h, w, c]` tensor with `None` in the padding ring.
struct Padded {
    dims: [usize; 4],
    cells: Vec<Option<f64>>,
}

impl Padded {
    fn new(x: &[f64], [n, h, w, c]: [usize; 4], before: [usize; 2], after: [usize; 2]) -> Self {
        let (ph, pw) = (h + before[0] + after[0], w + before[1] + after[1]);
        let mut cells = vec![None; n * ph * pw * c];
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let src = ((b * h + i) * w + j) * c + ch;
                        let dst = ((b * ph + i + before[0]) * pw + j + before[1]) * c + ch;
                        cells[dst] = Some(x[src]);
                    }
                }
            }
        }
        Padded { dims: [n, ph, pw, c], cells }
    }

    fn at(&self, b: usize, i: usize, j: usize, ch: usize) -> Option<f64> {
        let [_, h, w, c] = self.dims;
        self.cells[((b * h + i) * w + j) * c + ch]
    }
}

fn padded_for(
    x: &[f64],
    dims: [usize; 4],
    k: [usize; 2],
    s: [usize; 2],
    pad: Pad,
) -> Option<(Padded, [usize; 2])> {
    let (oh, bh) = geometry(dims[1], k[0], s[0], pad)?;
    let (ow, bw) = geometry(dims[2], k[1], s[1], pad)?;
    // enough room after the input for the last window
    let ah = ((oh - 1) * s[0] + k[0]).saturating_sub(dims[1] + bh);
    let aw = ((ow - 1) * s[1] + k[1]).saturating_sub(dims[2] + bw);
    Some((Padded::new(x, dims, [bh, bw], [ah, aw]), [oh, ow]))
}

/// `kernel` is `[kh, kw, c, f]`; the result is `[n, oh, ow, f]`.
pub fn conv2d(
    x: &[f64],
    dims: [usize; 4],
    kernel: &[f64],
    k: [usize; 2],
    bias: &[f64],
    s: [usize; 2],
    pad: Pad,
) -> Option<(Vec<usize>, Vec<f64>)> {
    let (p, [oh, ow]) = padded_for(x, dims, k, s, pad)?;
    let (n, c, f) = (dims[0], dims[3], bias.len());
    let mut out = Vec::new();
    for b in 0..n {
        for y in 0..oh {
            for z in 0..ow {
                for o in 0..f {
                    let mut acc = bias[o];
                    for di in 0..k[0] {
                        for dj in 0..k[1] {
                            for ch in 0..c {
                                let v = p.at(b, y * s[0] + di, z * s[1] + dj, ch).unwrap_or(0.0);
                                acc += v * kernel[((di * k[1] + dj) * c + ch) * f + o];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Some((vec![n, oh, ow, f], out))
}

/// `kernel` is `[k, c, f]` over `[n, steps, c]`.
pub fn conv1d(
    x: &[f64],
    [n, steps, c]: [usize; 3],
    kernel: &[f64],
    k: usize,
    bias: &[f64],
    s: usize,
    pad: Pad,
) -> Option<(Vec<usize>, Vec<f64>)> {
    let (out_len, before) = geometry(steps, k, s, pad)?;
    let f = bias.len();
    let read = |b: usize, t: isize, ch: usize| {
        if t < 0 || t as usize >= steps {
            0.0
        } else {
            x[(b * steps + t as usize) * c + ch]
        }
    };
    let mut out = Vec::new();
    for b in 0..n {
        for t in 0..out_len {
            for o in 0..f {
                let mut acc = bias[o];
                for dk in 0..k {
                    let pos = (t * s + dk) as isize - before as isize;
                    for ch in 0..c {
                        acc += read(b, pos, ch) * kernel[(dk * c + ch) * f + o];
                    }
                }
                out.push(acc);
            }
        }
    }
    Some((vec![n, out_len, f], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Max,
    Avg,
}

/// Pooling over `[n, h, w, c]`. Padding cells are skipped, so averages
/// count only real elements.
pub fn pool2d(x: &[f64], dims: [usize; 4], k: [usize; 2], s: [usize; 2], pad: Pad, mode: Reduce) -> Option<(Vec<usize>, Vec<f64>)> {
    let (p, [oh, ow]) = padded_for(x, dims, k, s, pad)?;
    let (n, c) = (dims[0], dims[3]);
    let mut out = Vec::new();
    for b in 0..n {
        for y in 0..oh {
            for z in 0..ow {
                for ch in 0..c {
                    let vals: Vec<f64> = (0..k[0])
                        .flat_map(|di| (0..k[1]).map(move |dj| (di, dj)))
                        .filter_map(|(di, dj)| p.at(b, y * s[0] + di, z * s[1] + dj, ch))
                        .collect();
                    out.push(match mode {
                        Reduce::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        Reduce::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                    });
                }
            }
        }
    }
    Some((vec![n, oh, ow, c], out))
}

/// One-axis pooling over `[n, steps, c]`.
pub fn pool1d(x: &[f64], [n, steps, c]: [usize; 3], k: usize, s: usize, pad: Pad, mode: Reduce) -> Option<(Vec<usize>, Vec<f64>)> {
    let (dims, data) = pool2d(x, [n, steps, 1, c], [k, 1], [s, 1], pad, mode)?;
    Some((vec![dims[0], dims[1], dims[3]], data))
}
