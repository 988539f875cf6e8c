use super::conv::Pad2d;
use super::real::Real;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mirror index without repeating the edge sample (`reflect` mode).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

impl<T: Real> Tape<T> {
    /// Mirror padding; each amount must be smaller than the matching extent.
    pub fn reflection_pad(&self, input: &Tensor<T>, pads: Pad2d) -> Result<Tensor<T>> {
        let [n, c, h, w] = input.dims4()?;
        if pads.top >= h || pads.bottom >= h || pads.left >= w || pads.right >= w {
            return Err(Error::invalid(format!(
                "reflection pad {pads:?} too large for {h}x{w} plane"
            )));
        }
        let oh = h + pads.top + pads.bottom;
        let ow = w + pads.left + pads.right;
        let rows: Vec<usize> = (0..oh)
            .map(|y| reflect_index(y as isize - pads.top as isize, h))
            .collect();
        let cols: Vec<usize> = (0..ow)
            .map(|x| reflect_index(x as isize - pads.left as isize, w))
            .collect();
        let x = input.data();
        let mut y = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for &r in &rows {
                y.extend(cols.iter().map(|&cc| plane[r * w + cc]));
            }
        }
        self.record(
            &[input],
            vec![n, c, oh, ow],
            y,
            Box::new(move |g, _| {
                let mut gx = vec![T::ZERO; n * c * h * w];
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &r) in rows.iter().enumerate() {
                        for (ox, &cc) in cols.iter().enumerate() {
                            dst[r * w + cc] += gp[oy * ow + ox];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let [n, _, h, w] = first.dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        for p in parts {
            let [pn, pc, ph, pw] = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!(
                    "concat: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut y = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for (p, &pc) in parts.iter().zip(&chans) {
                y.extend_from_slice(&p.data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        let chans_b = chans.clone();
        self.record(
            parts,
            vec![n, total, h, w],
            y,
            Box::new(move |g, need| {
                let mut offset = 0;
                chans_b
                    .iter()
                    .zip(need)
                    .map(|(&pc, &needed)| {
                        let start = offset;
                        offset += pc;
                        needed.then(|| {
                            let mut out = Vec::with_capacity(n * pc * hw);
                            for s in 0..n {
                                let base = (s * total + start) * hw;
                                out.extend_from_slice(&g[base..base + pc * hw]);
                            }
                            out
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Non-overlapping `k×k` max pooling (floor on ragged edges).
    pub fn max_pool2d(&self, input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = input.dims4()?;
        if k == 0 || h < k || w < k {
            return Err(Error::shape(format!("max_pool2d({k}) on {h}x{w} plane")));
        }
        let (oh, ow) = (h / k, w / k);
        let x = input.data();
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oy * k + i) * w + ox * k + j;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(x[best]);
                    arg.push(best);
                }
            }
        }
        let len = x.len();
        self.record(
            &[input],
            vec![n, c, oh, ow],
            y,
            Box::new(move |g, _| {
                let mut gx = vec![T::ZERO; len];
                for (&a, &gv) in arg.iter().zip(g) {
                    gx[a] += gv;
                }
                vec![Some(gx)]
            }),
        )
    }
}
