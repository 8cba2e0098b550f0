//! Data-order conversion, bit-plane packing and address-run analysis.
//!
//! Packed tensors are depth-innermost: every `(h, w)` position owns a D-bar of
//! `ceil(depth / 32)` words per plane, bit `b` of word `k` holding depth index
//! `32 * k + b`. Bits past `depth` are zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model_ir::{BlobData, BlobError, DType, Layout, Shape, TensorBlob, TensorDesc};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("tensor is already depth-innermost")]
    AlreadyDepthInnermost,
    #[error("tensor is already height-innermost")]
    AlreadyHeightInnermost,
    #[error("expected a depth-innermost tensor")]
    WrongLayout,
    #[error("cannot bit-pack dtype {0:?}")]
    WrongDtype(DType),
    #[error("pad bit set in plane {plane}, word {word}")]
    NonZeroPadBits { plane: usize, word: usize },
    #[error("kernel depth {kernel} differs from input depth {input}")]
    KernelDepthMismatch { kernel: usize, input: usize },
    #[error("packed tensor has {found} planes of {words} words, expected {expected_planes} of {expected_words}")]
    BadPlanes {
        found: usize,
        words: usize,
        expected_planes: usize,
        expected_words: usize,
    },
    #[error(transparent)]
    Blob(#[from] BlobError),
}

fn permute<T: Copy>(src: &[T], from: TensorDesc, to: TensorDesc, count: usize) -> Vec<T> {
    let n = from.elements();
    let mut out = Vec::with_capacity(src.len());
    // walk destination order so writes are sequential
    for k in 0..count {
        let base = k * n;
        let (h_n, w_n, d_n) = (to.height, to.width, to.depth);
        match to.layout {
            Layout::DepthInnermost => {
                for h in 0..h_n {
                    for w in 0..w_n {
                        for d in 0..d_n {
                            out.push(src[base + from.index(h, w, d)]);
                        }
                    }
                }
            }
            Layout::HeightInnermost => {
                for d in 0..d_n {
                    for w in 0..w_n {
                        for h in 0..h_n {
                            out.push(src[base + from.index(h, w, d)]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn relayout(t: &TensorBlob, layout: Layout) -> TensorBlob {
    let to = t.desc.with_layout(layout);
    let data = match &t.data {
        BlobData::F32(v) => BlobData::F32(permute(v, t.desc, to, t.count)),
        BlobData::U2(v) => BlobData::U2(permute(v, t.desc, to, t.count)),
        BlobData::Bin1(v) => BlobData::Bin1(permute(v, t.desc, to, t.count)),
        BlobData::I32(v) => BlobData::I32(permute(v, t.desc, to, t.count)),
    };
    TensorBlob {
        desc: to,
        count: t.count,
        data,
    }
}

/// Reorders a height-innermost tensor (or kernel stack) to depth-innermost.
pub fn to_depth_innermost(t: &TensorBlob) -> Result<TensorBlob, LayoutError> {
    if t.desc.layout == Layout::DepthInnermost {
        return Err(LayoutError::AlreadyDepthInnermost);
    }
    Ok(relayout(t, Layout::DepthInnermost))
}

/// Inverse of [`to_depth_innermost`].
pub fn to_height_innermost(t: &TensorBlob) -> Result<TensorBlob, LayoutError> {
    if t.desc.layout == Layout::HeightInnermost {
        return Err(LayoutError::AlreadyHeightInnermost);
    }
    Ok(relayout(t, Layout::HeightInnermost))
}

/// Bit-plane packed, depth-innermost tensor or kernel stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    pub desc: TensorDesc,
    pub count: usize,
    pub words_per_dbar: usize,
    /// One word array per plane; each holds `count * height * width * words_per_dbar` words.
    pub planes: Vec<Vec<u32>>,
}

impl PackedTensor {
    pub fn from_planes(desc: TensorDesc, count: usize, planes: Vec<Vec<u32>>) -> Result<Self, LayoutError> {
        if desc.layout != Layout::DepthInnermost {
            return Err(LayoutError::WrongLayout);
        }
        let expected_planes = desc.dtype.planes().ok_or(LayoutError::WrongDtype(desc.dtype))?;
        let words_per_dbar = desc.depth.div_ceil(32);
        let expected_words = count * desc.height * desc.width * words_per_dbar;
        if planes.len() != expected_planes || planes.iter().any(|p| p.len() != expected_words) {
            return Err(LayoutError::BadPlanes {
                found: planes.len(),
                words: planes.first().map_or(0, Vec::len),
                expected_planes,
                expected_words,
            });
        }
        Ok(Self {
            desc,
            count,
            words_per_dbar,
            planes,
        })
    }

    /// Words per plane for one stacked tensor.
    pub fn tensor_words(&self) -> usize {
        self.desc.height * self.desc.width * self.words_per_dbar
    }

    /// Word offset of the D-bar at `(h, w)` of stacked tensor `k`.
    #[inline]
    pub fn dbar_offset(&self, k: usize, h: usize, w: usize) -> usize {
        k * self.tensor_words() + (h * self.desc.width + w) * self.words_per_dbar
    }

    pub fn dbar(&self, plane: usize, k: usize, h: usize, w: usize) -> &[u32] {
        let o = self.dbar_offset(k, h, w);
        &self.planes[plane][o..o + self.words_per_dbar]
    }

    pub fn byte_len(&self) -> usize {
        self.planes.iter().map(|p| p.len() * 4).sum()
    }

    /// Mask of valid bits in the last word of a D-bar.
    pub fn tail_mask(&self) -> u32 {
        match self.desc.depth % 32 {
            0 => u32::MAX,
            r => (1u32 << r) - 1,
        }
    }
}

/// Packs a depth-innermost u2 or bin1 tensor into 32-bit words.
pub fn bitpack(t: &TensorBlob) -> Result<PackedTensor, LayoutError> {
    if t.desc.layout != Layout::DepthInnermost {
        return Err(LayoutError::WrongLayout);
    }
    let depth = t.desc.depth;
    let wpd = depth.div_ceil(32);
    let dbars = t.count * t.desc.height * t.desc.width;
    let planes = match &t.data {
        BlobData::Bin1(v) => {
            let mut p0 = vec![0u32; dbars * wpd];
            for (i, dbar) in v.chunks_exact(depth).enumerate() {
                for (d, &x) in dbar.iter().enumerate() {
                    if x > 0 {
                        p0[i * wpd + d / 32] |= 1 << (d % 32);
                    }
                }
            }
            vec![p0]
        }
        BlobData::U2(v) => {
            let mut p0 = vec![0u32; dbars * wpd];
            let mut p1 = vec![0u32; dbars * wpd];
            for (i, dbar) in v.chunks_exact(depth).enumerate() {
                for (d, &x) in dbar.iter().enumerate() {
                    let (word, bit) = (i * wpd + d / 32, d % 32);
                    p0[word] |= ((x & 1) as u32) << bit;
                    p1[word] |= (((x >> 1) & 1) as u32) << bit;
                }
            }
            vec![p0, p1]
        }
        other => return Err(LayoutError::WrongDtype(other.dtype())),
    };
    Ok(PackedTensor {
        desc: t.desc,
        count: t.count,
        words_per_dbar: wpd,
        planes,
    })
}

/// Inverse of [`bitpack`]. With `strict`, set pad bits are an error; otherwise ignored.
pub fn unpack(p: &PackedTensor, strict: bool) -> Result<TensorBlob, LayoutError> {
    let depth = p.desc.depth;
    let wpd = p.words_per_dbar;
    if strict && depth % 32 != 0 {
        let pad_mask = !p.tail_mask();
        for (plane, words) in p.planes.iter().enumerate() {
            for word in (wpd - 1..words.len()).step_by(wpd) {
                if words[word] & pad_mask != 0 {
                    return Err(LayoutError::NonZeroPadBits { plane, word });
                }
            }
        }
    }
    let dbars = p.count * p.desc.height * p.desc.width;
    let bit = |plane: &[u32], i: usize, d: usize| (plane[i * wpd + d / 32] >> (d % 32)) & 1;
    let data = match p.desc.dtype {
        DType::Bin1 => {
            let mut v = Vec::with_capacity(dbars * depth);
            for i in 0..dbars {
                for d in 0..depth {
                    v.push(if bit(&p.planes[0], i, d) == 1 { 1 } else { -1 });
                }
            }
            BlobData::Bin1(v)
        }
        DType::U2 => {
            let mut v = Vec::with_capacity(dbars * depth);
            for i in 0..dbars {
                for d in 0..depth {
                    v.push((bit(&p.planes[0], i, d) | (bit(&p.planes[1], i, d) << 1)) as u8);
                }
            }
            BlobData::U2(v)
        }
        other => return Err(LayoutError::WrongDtype(other)),
    };
    Ok(TensorBlob::new(p.desc, p.count, data)?)
}

/// Flat element order used for the external-memory trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressOrder {
    /// Height x Width x Depth, depth fastest (the packed engine layout).
    DepthInnermost,
    /// Depth x Height x Width, width fastest: the W-bar baseline.
    WidthInnermost,
    /// Depth x Width x Height, height fastest.
    HeightInnermost,
}

impl AddressOrder {
    #[inline]
    pub fn address(self, s: Shape, h: usize, w: usize, d: usize) -> usize {
        match self {
            AddressOrder::DepthInnermost => (h * s.width + w) * s.depth + d,
            AddressOrder::WidthInnermost => (d * s.height + h) * s.width + w,
            AddressOrder::HeightInnermost => (d * s.width + w) * s.height + h,
        }
    }

    /// Length of the innermost line (the dimension packed into words).
    pub fn line_len(self, s: Shape) -> usize {
        match self {
            AddressOrder::DepthInnermost => s.depth,
            AddressOrder::WidthInnermost => s.width,
            AddressOrder::HeightInnermost => s.height,
        }
    }

    /// Word address holding element `addr` when each line is padded to whole words.
    #[inline]
    pub fn word_of(self, s: Shape, addr: usize) -> usize {
        let line = self.line_len(s);
        (addr / line) * line.div_ceil(32) + (addr % line) / 32
    }
}

/// Maximal contiguous interval of element addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub len: usize,
}

impl Run {
    /// Number of packed words the run touches in one plane.
    pub fn words(&self, order: AddressOrder, s: Shape) -> usize {
        order.word_of(s, self.start + self.len - 1) - order.word_of(s, self.start) + 1
    }
}

/// Convolution window geometry over an input of shape `input` (kernel depth = input depth).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub input: Shape,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub pad: usize,
}

impl WindowGeometry {
    pub fn output_hw(&self) -> (usize, usize) {
        let oh = (self.input.height + 2 * self.pad).saturating_sub(self.kernel[0]) / self.stride + 1;
        let ow = (self.input.width + 2 * self.pad).saturating_sub(self.kernel[1]) / self.stride + 1;
        (oh, ow)
    }

    /// Valid (unpadded) row and column ranges of window `(oy, ox)`.
    pub fn clip(&self, oy: usize, ox: usize) -> ((usize, usize), (usize, usize)) {
        let clip1 = |o: usize, k: usize, n: usize| {
            let start = (o * self.stride) as isize - self.pad as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + k as isize).min(n as isize)).max(0) as usize;
            (lo, hi.max(lo))
        };
        (
            clip1(oy, self.kernel[0], self.input.height),
            clip1(ox, self.kernel[1], self.input.width),
        )
    }

    /// A window with no padded taps, or the central one when none exists.
    pub fn interior_window(&self) -> (usize, usize) {
        let (oh, ow) = self.output_hw();
        let first = |k: usize, n: usize, o_n: usize| {
            let o = self.pad.div_ceil(self.stride);
            if o < o_n && o * self.stride + k <= n + self.pad {
                o
            } else {
                o_n / 2
            }
        };
        (
            first(self.kernel[0], self.input.height, oh),
            first(self.kernel[1], self.input.width, ow),
        )
    }

    /// Appends the sorted, merged runs read by window `(oy, ox)` under `order`.
    pub fn window_runs(&self, order: AddressOrder, oy: usize, ox: usize, out: &mut Vec<Run>) {
        out.clear();
        let s = self.input;
        let ((r0, r1), (c0, c1)) = self.clip(oy, ox);
        if r0 == r1 || c0 == c1 {
            return;
        }
        let mut push = |start: usize, len: usize| {
            if let Some(last) = out.last_mut() {
                if last.start + last.len == start {
                    last.len += len;
                    return;
                }
            }
            out.push(Run { start, len });
        };
        match order {
            AddressOrder::DepthInnermost => {
                for r in r0..r1 {
                    push(order.address(s, r, c0, 0), (c1 - c0) * s.depth);
                }
            }
            AddressOrder::WidthInnermost => {
                for d in 0..s.depth {
                    for r in r0..r1 {
                        push(order.address(s, r, c0, d), c1 - c0);
                    }
                }
            }
            AddressOrder::HeightInnermost => {
                for d in 0..s.depth {
                    for c in c0..c1 {
                        push(order.address(s, r0, c, d), r1 - r0);
                    }
                }
            }
        }
    }

    /// Calls `f` with the runs of every output window, row-major.
    pub fn for_each_window(&self, order: AddressOrder, mut f: impl FnMut(&[Run])) {
        let (oh, ow) = self.output_hw();
        let mut runs = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                self.window_runs(order, oy, ox, &mut runs);
                f(&runs);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunStats {
    /// Runs touched by one interior kernel window.
    pub runs_per_window: usize,
    /// Run length (elements) -> count, for that interior window.
    pub run_lengths: BTreeMap<usize, usize>,
    /// Runs summed over every output window.
    pub total_runs: u64,
    pub windows: u64,
    /// Elements read, summed over every output window.
    pub total_elements: u64,
}

/// Address-run statistics of a convolution's input reads under `order`.
///
/// Padded taps are not part of the trace. A run is counted once per entry,
/// so a window reading `n` disjoint intervals reports `n`.
pub fn address_runs(
    input: &TensorDesc,
    kernel: &TensorDesc,
    order: AddressOrder,
    stride: usize,
    pad: usize,
) -> Result<RunStats, LayoutError> {
    if kernel.depth != input.depth {
        return Err(LayoutError::KernelDepthMismatch {
            kernel: kernel.depth,
            input: input.depth,
        });
    }
    let geom = WindowGeometry {
        input: input.shape(),
        kernel: [kernel.height, kernel.width],
        stride: stride.max(1),
        pad,
    };
    let (iy, ix) = geom.interior_window();
    let mut runs = Vec::new();
    geom.window_runs(order, iy, ix, &mut runs);
    let mut run_lengths = BTreeMap::new();
    for r in &runs {
        *run_lengths.entry(r.len).or_insert(0) += 1;
    }
    let mut stats = RunStats {
        runs_per_window: runs.len(),
        run_lengths,
        total_runs: 0,
        windows: 0,
        total_elements: 0,
    };
    geom.for_each_window(order, |runs| {
        stats.windows += 1;
        stats.total_runs += runs.len() as u64;
        stats.total_elements += runs.iter().map(|r| r.len as u64).sum::<u64>();
    });
    Ok(stats)
}
