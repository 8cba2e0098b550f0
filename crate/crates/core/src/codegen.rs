//! Self-contained C99 emission of a lowered graph.
//!
//! The unit exposes `int bqnn_infer(const float *image, float *out)`; the
//! image and the output are depth-innermost f32, code-valued outputs are
//! written as `delta * code`. Every constant is emitted as the hex of its
//! 32-bit pattern, so the compiled unit reproduces the engine bit for bit when
//! built without floating-point contraction (`-ffp-contract=off`).

use std::fmt::Write as _;

use crate::layout::PackedTensor;
use crate::transform::{ChannelOp, Direction, LBlob, LOp, LoweredGraph, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodegenError {
    #[error("node `{node}` cannot be emitted: {reason}")]
    UnsupportedNode { node: String, reason: String },
}

/// Characters per byte of a word array: `0x%08xu,` plus a separator, eight
/// words per 108-character line.
pub const HEX_EXPANSION: f64 = 108.0 / 32.0;

const RUNTIME: &str = r#"#include <math.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#ifdef __GNUC__
#define BQ_FN static __attribute__((unused))
#else
#define BQ_FN static
#endif

BQ_FN float bq_f32(uint32_t u) {
    float f;
    memcpy(&f, &u, sizeof f);
    return f;
}

BQ_FN int32_t bq_i32(uint32_t u) {
    return u <= 0x7fffffffu ? (int32_t)u : -(int32_t)(~u) - 1;
}

BQ_FN int bq_popcount(uint32_t x) {
    x = x - ((x >> 1) & 0x55555555u);
    x = (x & 0x33333333u) + ((x >> 2) & 0x33333333u);
    x = (x + (x >> 4)) & 0x0f0f0f0fu;
    return (int)((x * 0x01010101u) >> 24);
}

enum { BQ_BATCHNORM, BQ_SCALE, BQ_BIAS, BQ_LEAKY };

typedef struct {
    int kind;
    const uint32_t *a, *b, *c, *d;
    uint32_t scalar;
} bq_op;

BQ_FN float bq_chain1(const bq_op *ops, int nops, size_t ch, float v) {
    int i;
    for (i = 0; i < nops; i++) {
        const bq_op *op = &ops[i];
        double x = (double)v;
        switch (op->kind) {
        case BQ_BATCHNORM: {
            double g = (double)bq_f32(op->a[ch]);
            double sd = sqrt((double)bq_f32(op->d[ch]) + (double)bq_f32(op->scalar));
            v = (float)(g * (x - (double)bq_f32(op->c[ch])) / sd + (double)bq_f32(op->b[ch]));
            break;
        }
        case BQ_SCALE:
            v = (float)(x * (double)bq_f32(op->a[ch]));
            break;
        case BQ_BIAS:
            v = (float)(x + (double)bq_f32(op->a[ch]));
            break;
        default:
            if (!(x >= 0.0)) v = (float)((double)bq_f32(op->scalar) * x);
            break;
        }
    }
    return v;
}

BQ_FN void bq_chain(float *v, size_t n, size_t c, const bq_op *ops, int nops) {
    size_t i;
    for (i = 0; i < n; i++) v[i] = bq_chain1(ops, nops, i % c, v[i]);
}

BQ_FN uint8_t bq_quant1(float x, float delta) {
    double v = floor((double)x / (double)delta + 0.5);
    if (!(v > 0.0)) return 0;
    if (v >= 3.0) return 3;
    return (uint8_t)v;
}

BQ_FN void bq_quantize(const float *in, size_t n, float delta, uint8_t *out) {
    size_t i;
    for (i = 0; i < n; i++) out[i] = bq_quant1(in[i], delta);
}

BQ_FN void bq_pack(const uint8_t *codes, size_t pixels, int d, int wpd, uint32_t *p0, uint32_t *p1) {
    size_t p;
    int k;
    memset(p0, 0, pixels * wpd * sizeof *p0);
    memset(p1, 0, pixels * wpd * sizeof *p1);
    for (p = 0; p < pixels; p++) {
        for (k = 0; k < d; k++) {
            uint8_t c = codes[p * d + k];
            size_t w = p * wpd + k / 32;
            uint32_t bit = 1u << (k % 32);
            if (c & 1) p0[w] |= bit;
            if (c & 2) p1[w] |= bit;
        }
    }
}

BQ_FN int bq_binconv(const uint8_t *codes, int ih, int iw, int id, const uint32_t *w, int kh, int kw, int od,
                      int stride, int pad, int oh, int ow, int32_t *out) {
    int wpd = (id + 31) / 32;
    size_t klen = (size_t)kh * kw * wpd;
    size_t pixels = (size_t)ih * iw;
    uint32_t *p0 = malloc(pixels * wpd * sizeof *p0);
    uint32_t *p1 = malloc(pixels * wpd * sizeof *p1);
    uint32_t *b0 = malloc(klen * sizeof *b0);
    uint32_t *b1 = malloc(klen * sizeof *b1);
    int oy, ox, ky, kx, o;
    size_t k;
    if (!p0 || !p1 || !b0 || !b1) {
        free(p0);
        free(p1);
        free(b0);
        free(b1);
        return -1;
    }
    bq_pack(codes, pixels, id, wpd, p0, p1);
    for (oy = 0; oy < oh; oy++) {
        for (ox = 0; ox < ow; ox++) {
            int s = 0;
            memset(b0, 0, klen * sizeof *b0);
            memset(b1, 0, klen * sizeof *b1);
            for (ky = 0; ky < kh; ky++) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= ih) continue;
                for (kx = 0; kx < kw; kx++) {
                    int ix = ox * stride + kx - pad;
                    size_t src, dst;
                    if (ix < 0 || ix >= iw) continue;
                    src = ((size_t)iy * iw + ix) * wpd;
                    dst = ((size_t)ky * kw + kx) * wpd;
                    memcpy(b0 + dst, p0 + src, wpd * sizeof *b0);
                    memcpy(b1 + dst, p1 + src, wpd * sizeof *b1);
                }
            }
            for (k = 0; k < klen; k++) s += bq_popcount(b0[k]) + 2 * bq_popcount(b1[k]);
            for (o = 0; o < od; o++) {
                const uint32_t *wk = w + (size_t)o * klen;
                int q0 = 0, q1 = 0;
                for (k = 0; k < klen; k++) {
                    q0 += bq_popcount(b0[k] & wk[k]);
                    q1 += bq_popcount(b1[k] & wk[k]);
                }
                out[((size_t)oy * ow + ox) * od + o] = 2 * (q0 + 2 * q1) - s;
            }
        }
    }
    free(p0);
    free(p1);
    free(b0);
    free(b1);
    return 0;
}

BQ_FN void bq_threshold(const int32_t *acc, size_t n, size_t c, const uint32_t *t, const uint32_t *dir, uint8_t *out) {
    size_t i;
    for (i = 0; i < n; i++) {
        size_t ch = i % c;
        int32_t a = acc[i];
        int32_t t0 = bq_i32(t[3 * ch]), t1 = bq_i32(t[3 * ch + 1]), t2 = bq_i32(t[3 * ch + 2]);
        if ((dir[ch / 32] >> (ch % 32)) & 1u)
            out[i] = (uint8_t)((a <= t0) + (a <= t1) + (a <= t2));
        else
            out[i] = (uint8_t)((a >= t0) + (a >= t1) + (a >= t2));
    }
}

BQ_FN void bq_dequant(const int32_t *acc, size_t n, size_t c, float delta, const bq_op *ops, int nops, float *out) {
    size_t i;
    for (i = 0; i < n; i++) out[i] = bq_chain1(ops, nops, i % c, (float)((double)delta * (double)acc[i]));
}

BQ_FN int bq_conv(const float *inf, const uint8_t *inc, float delta, int ih, int iw, int id, const uint32_t *wbits,
                   int kh, int kw, int od, int stride, int pad, int oh, int ow, float *out) {
    size_t n = (size_t)ih * iw * id, klen = (size_t)kh * kw * id, i;
    double *x = malloc(n * sizeof *x);
    double *k = malloc(klen * od * sizeof *k);
    int oy, ox, ky, kx, o, d;
    if (!x || !k) {
        free(x);
        free(k);
        return -1;
    }
    for (i = 0; i < n; i++) x[i] = inc ? (double)delta * (double)inc[i] : (double)inf[i];
    for (i = 0; i < klen * od; i++) k[i] = (double)bq_f32(wbits[i]);
    for (oy = 0; oy < oh; oy++) {
        for (ox = 0; ox < ow; ox++) {
            for (o = 0; o < od; o++) {
                const double *ko = k + (size_t)o * klen;
                double acc = 0.0;
                for (ky = 0; ky < kh; ky++) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= ih) continue;
                    for (kx = 0; kx < kw; kx++) {
                        int ix = ox * stride + kx - pad;
                        const double *a, *kk;
                        if (ix < 0 || ix >= iw) continue;
                        a = x + ((size_t)iy * iw + ix) * id;
                        kk = ko + ((size_t)ky * kw + kx) * id;
                        for (d = 0; d < id; d++) acc += a[d] * kk[d];
                    }
                }
                out[((size_t)oy * ow + ox) * od + o] = (float)acc;
            }
        }
    }
    free(x);
    free(k);
    return 0;
}

#define BQ_MAXPOOL(NAME, T)                                                                           \
    BQ_FN void NAME(const T *in, int ih, int iw, int d, int size, int stride, int oh, int ow, T *out) { \
        int oy, ox, ky, kx, c;                                                                        \
        (void)ih;                                                                                     \
        for (oy = 0; oy < oh; oy++)                                                                   \
            for (ox = 0; ox < ow; ox++) {                                                             \
                T *o = out + ((size_t)oy * ow + ox) * d;                                              \
                memcpy(o, in + ((size_t)(oy * stride) * iw + ox * stride) * d, d * sizeof(T));        \
                for (ky = 0; ky < size; ky++)                                                         \
                    for (kx = 0; kx < size; kx++) {                                                   \
                        const T *s = in + ((size_t)(oy * stride + ky) * iw + ox * stride + kx) * d;   \
                        for (c = 0; c < d; c++)                                                       \
                            if (s[c] > o[c]) o[c] = s[c];                                             \
                    }                                                                                 \
            }                                                                                         \
    }
BQ_MAXPOOL(bq_maxpool_u8, uint8_t)
BQ_MAXPOOL(bq_maxpool_f32, float)

BQ_FN void bq_reorg(const void *in, size_t esz, int h, int w, int d, int s, void *out) {
    const unsigned char *src = in;
    unsigned char *dst = out;
    size_t bar = (size_t)d * esz;
    int y, x, dy, dx;
    for (y = 0; y < h / s; y++)
        for (x = 0; x < w / s; x++)
            for (dy = 0; dy < s; dy++)
                for (dx = 0; dx < s; dx++) {
                    memcpy(dst, src + ((size_t)(y * s + dy) * w + x * s + dx) * bar, bar);
                    dst += bar;
                }
}

BQ_FN void bq_concat_part(const void *in, size_t esz, size_t pixels, int d, int total, int offset, void *out) {
    const unsigned char *src = in;
    unsigned char *dst = out;
    size_t p;
    for (p = 0; p < pixels; p++)
        memcpy(dst + (p * total + offset) * esz, src + p * d * esz, d * esz);
}
"#;

const STANDALONE: &str = r#"
#ifdef BQNN_STANDALONE
int main(int argc, char **argv) {
    FILE *f;
    float *image, *out;
    int rc;
    if (argc != 3) {
        fprintf(stderr, "usage: %s IMAGE.f32 OUT.f32\n", argv[0]);
        return 2;
    }
    image = malloc(BQNN_INPUT_LEN * sizeof *image);
    out = malloc(BQNN_OUTPUT_LEN * sizeof *out);
    if (!image || !out) return 1;
    f = fopen(argv[1], "rb");
    if (!f || fread(image, sizeof *image, BQNN_INPUT_LEN, f) != BQNN_INPUT_LEN) return 1;
    fclose(f);
    rc = bqnn_infer(image, out);
    if (rc) return 1;
    f = fopen(argv[2], "wb");
    if (!f || fwrite(out, sizeof *out, BQNN_OUTPUT_LEN, f) != BQNN_OUTPUT_LEN) return 1;
    fclose(f);
    free(image);
    free(out);
    return 0;
}
#endif
"#;

fn hex_words(out: &mut String, name: &str, words: &[u32]) {
    let _ = writeln!(out, "static const uint32_t {name}[{}] = {{", words.len().max(1));
    if words.is_empty() {
        out.push_str("    0x00000000u,\n");
    }
    for line in words.chunks(8) {
        out.push_str("   ");
        for w in line {
            let _ = write!(out, " 0x{w:08x}u,");
        }
        out.push('\n');
    }
    out.push_str("};\n");
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn comment(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn ops_arrays(out: &mut String, prefix: &str, ops: &[ChannelOp]) {
    for (j, op) in ops.iter().enumerate() {
        match op {
            ChannelOp::BatchNorm {
                gamma, beta, mean, var, ..
            } => {
                hex_words(out, &format!("{prefix}_op{j}_a"), &bits(gamma));
                hex_words(out, &format!("{prefix}_op{j}_b"), &bits(beta));
                hex_words(out, &format!("{prefix}_op{j}_c"), &bits(mean));
                hex_words(out, &format!("{prefix}_op{j}_d"), &bits(var));
            }
            ChannelOp::Scale { values } | ChannelOp::Bias { values } => {
                hex_words(out, &format!("{prefix}_op{j}_a"), &bits(values));
            }
            ChannelOp::LeakyRelu { .. } => {}
        }
    }
    if ops.is_empty() {
        return;
    }
    let _ = writeln!(out, "static const bq_op {prefix}_ops[{}] = {{", ops.len());
    for (j, op) in ops.iter().enumerate() {
        let arr = |s: &str| format!("{prefix}_op{j}_{s}");
        let line = match op {
            ChannelOp::BatchNorm { eps, .. } => format!(
                "BQ_BATCHNORM, {}, {}, {}, {}, 0x{:08x}u",
                arr("a"),
                arr("b"),
                arr("c"),
                arr("d"),
                eps.to_bits()
            ),
            ChannelOp::Scale { .. } => format!("BQ_SCALE, {}, 0, 0, 0, 0u", arr("a")),
            ChannelOp::Bias { .. } => format!("BQ_BIAS, {}, 0, 0, 0, 0u", arr("a")),
            ChannelOp::LeakyRelu { slope } => format!("BQ_LEAKY, 0, 0, 0, 0, 0x{:08x}u", slope.to_bits()),
        };
        let _ = writeln!(out, "    {{{line}}},");
    }
    out.push_str("};\n");
}

fn ops_ref(prefix: &str, ops: &[ChannelOp]) -> String {
    if ops.is_empty() {
        "0, 0".to_string()
    } else {
        format!("{prefix}_ops, {}", ops.len())
    }
}

/// Word arrays for packed tensors, in the given order. Multi-plane tensors
/// get one array per plane, suffixed `_p0`, `_p1`.
pub fn emit_weight_arrays(tensors: &[(&str, &PackedTensor)]) -> String {
    let mut out = String::new();
    for (name, p) in tensors {
        let _ = writeln!(
            out,
            "/* {}: packed {}x{}x{} x{} */",
            comment(name),
            p.desc.height,
            p.desc.width,
            p.desc.depth,
            p.count
        );
        if p.planes.len() == 1 {
            hex_words(&mut out, name, &p.planes[0]);
        } else {
            for (k, plane) in p.planes.iter().enumerate() {
                hex_words(&mut out, &format!("{name}_p{k}"), plane);
            }
        }
    }
    out
}

/// All constants of `lg`: weight blobs, channel-op parameters and threshold tables.
pub fn emit_constants(lg: &LoweredGraph) -> String {
    let mut out = String::new();
    for (i, blob) in lg.blobs.iter().enumerate() {
        match blob {
            LBlob::Dense(t) => {
                let _ = writeln!(
                    out,
                    "/* blob {i}: f32 {}x{}x{} x{} */",
                    t.desc.height, t.desc.width, t.desc.depth, t.count
                );
                hex_words(&mut out, &format!("bq_blob{i}"), &bits(t.as_f32().unwrap_or(&[])));
            }
            LBlob::Packed(p) => out.push_str(&emit_weight_arrays(&[(&format!("bq_blob{i}"), p)])),
        }
    }
    for (i, node) in lg.nodes.iter().enumerate() {
        let prefix = format!("bq_n{i}");
        match &node.op {
            LOp::ConvF32 { post, .. } | LOp::Dequant { post, .. } => ops_arrays(&mut out, &prefix, post),
            LOp::Threshold { unit, .. } => {
                let t: Vec<u32> = unit.t.iter().flat_map(|t| t.map(|v| v as u32)).collect();
                hex_words(&mut out, &format!("{prefix}_t"), &t);
                let mut dir = vec![0u32; unit.direction.len().div_ceil(32)];
                for (c, d) in unit.direction.iter().enumerate() {
                    if *d == Direction::Decreasing {
                        dir[c / 32] |= 1 << (c % 32);
                    }
                }
                hex_words(&mut out, &format!("{prefix}_dir"), &dir);
            }
            _ => {}
        }
    }
    out
}

fn c_type(v: Value) -> &'static str {
    match v {
        Value::Real => "float",
        Value::Codes { .. } => "uint8_t",
        Value::Accumulator => "int32_t",
    }
}

/// Complete translation unit for `lg`.
pub fn emit_inference_source(lg: &LoweredGraph) -> Result<String, CodegenError> {
    let unsupported = |i: usize, reason: &str| CodegenError::UnsupportedNode {
        node: lg.nodes[i].id.clone(),
        reason: reason.to_string(),
    };
    let input_shape = lg.input_shape();
    let output = lg.output();
    if output.value == Value::Accumulator {
        return Err(unsupported(lg.nodes.len() - 1, "raw accumulators cannot be returned"));
    }

    let mut last_use = vec![0usize; lg.nodes.len()];
    for (i, n) in lg.nodes.iter().enumerate() {
        for &j in &n.inputs {
            last_use[j] = i;
        }
    }

    let mut body = String::new();
    let n_nodes = lg.nodes.len();
    let _ = writeln!(body, "int bqnn_infer(const float *image, float *out) {{");
    let _ = writeln!(body, "    void *v[{n_nodes}] = {{0}};");
    body.push_str("    size_t i;\n    int rc = -1;\n");
    for (i, node) in lg.nodes.iter().enumerate() {
        let s = node.shape;
        let len = s.elements();
        let _ = writeln!(body, "    /* {i}: {} {} */", node.op.kind(), comment(&node.id));
        let arg = |k: usize| format!("v[{}]", node.inputs[k]);
        let in_shape = |k: usize| lg.nodes[node.inputs[k]].shape;
        let in_value = |k: usize| lg.nodes[node.inputs[k]].value;
        if !matches!(node.op, LOp::Input | LOp::Output) {
            let _ = writeln!(
                body,
                "    v[{i}] = malloc({len}u * sizeof({}));\n    if (!v[{i}]) goto done;",
                c_type(node.value)
            );
        }
        let prefix = format!("bq_n{i}");
        match &node.op {
            LOp::Input => {
                let _ = writeln!(body, "    v[{i}] = (void *)image;");
            }
            LOp::ConvF32 {
                weights,
                kernel,
                filters,
                stride,
                pad,
                input_delta,
                post,
            } => {
                let is = in_shape(0);
                let (inf, inc, delta) = match (in_value(0), input_delta) {
                    (Value::Real, None) => (arg(0), "0".to_string(), 0f32),
                    (Value::Codes { .. }, Some(d)) => ("0".to_string(), arg(0), *d),
                    _ => return Err(unsupported(i, "conv input kind does not match its step")),
                };
                let _ = writeln!(
                    body,
                    "    if (bq_conv({inf}, {inc}, bq_f32(0x{:08x}u), {}, {}, {}, bq_blob{weights}, {}, {}, {filters}, {stride}, {pad}, {}, {}, v[{i}])) goto done;",
                    delta.to_bits(),
                    is.height,
                    is.width,
                    is.depth,
                    kernel[0],
                    kernel[1],
                    s.height,
                    s.width
                );
                if !post.is_empty() {
                    let _ = writeln!(
                        body,
                        "    bq_chain(v[{i}], {len}u, {}u, {});",
                        s.depth,
                        ops_ref(&prefix, post)
                    );
                }
            }
            LOp::Quantize { delta } => {
                let _ = writeln!(
                    body,
                    "    bq_quantize({}, {len}u, bq_f32(0x{:08x}u), v[{i}]);",
                    arg(0),
                    delta.to_bits()
                );
            }
            LOp::BinConv {
                weights,
                kernel,
                filters,
                stride,
                pad,
            } => {
                let is = in_shape(0);
                let _ = writeln!(
                    body,
                    "    if (bq_binconv({}, {}, {}, {}, bq_blob{weights}, {}, {}, {filters}, {stride}, {pad}, {}, {}, v[{i}])) goto done;",
                    arg(0),
                    is.height,
                    is.width,
                    is.depth,
                    kernel[0],
                    kernel[1],
                    s.height,
                    s.width
                );
            }
            LOp::Threshold { .. } => {
                let _ = writeln!(
                    body,
                    "    bq_threshold({}, {len}u, {}u, {prefix}_t, {prefix}_dir, v[{i}]);",
                    arg(0),
                    s.depth
                );
            }
            LOp::Dequant { input_delta, post } => {
                let _ = writeln!(
                    body,
                    "    bq_dequant({}, {len}u, {}u, bq_f32(0x{:08x}u), {}, v[{i}]);",
                    arg(0),
                    s.depth,
                    input_delta.to_bits(),
                    ops_ref(&prefix, post)
                );
            }
            LOp::MaxPool { size, stride } => {
                let is = in_shape(0);
                let f = match node.value {
                    Value::Real => "bq_maxpool_f32",
                    Value::Codes { .. } => "bq_maxpool_u8",
                    Value::Accumulator => return Err(unsupported(i, "max-pool over accumulators")),
                };
                let _ = writeln!(
                    body,
                    "    {f}({}, {}, {}, {}, {size}, {stride}, {}, {}, v[{i}]);",
                    arg(0),
                    is.height,
                    is.width,
                    is.depth,
                    s.height,
                    s.width
                );
            }
            LOp::Reorg { stride } => {
                let is = in_shape(0);
                let _ = writeln!(
                    body,
                    "    bq_reorg({}, sizeof({}), {}, {}, {}, {stride}, v[{i}]);",
                    arg(0),
                    c_type(node.value),
                    is.height,
                    is.width,
                    is.depth
                );
            }
            LOp::Concat => {
                let mut offset = 0;
                for k in 0..node.inputs.len() {
                    let d = in_shape(k).depth;
                    let _ = writeln!(
                        body,
                        "    bq_concat_part({}, sizeof({}), {}u, {d}, {}, {offset}, v[{i}]);",
                        arg(k),
                        c_type(node.value),
                        s.height * s.width,
                        s.depth
                    );
                    offset += d;
                }
            }
            LOp::Output => match in_value(0) {
                Value::Real => {
                    let _ = writeln!(body, "    memcpy(out, {}, {len}u * sizeof(float));", arg(0));
                }
                Value::Codes { delta } => {
                    let _ = writeln!(
                        body,
                        "    for (i = 0; i < {len}u; i++) out[i] = (float)((double)bq_f32(0x{:08x}u) * (double)((const uint8_t *){})[i]);",
                        delta.to_bits(),
                        arg(0)
                    );
                }
                Value::Accumulator => return Err(unsupported(i, "raw accumulators cannot be returned")),
            },
        }
        for (j, n) in lg.nodes.iter().enumerate().take(i + 1) {
            if last_use[j] == i && !matches!(n.op, LOp::Input) && j != i {
                let _ = writeln!(body, "    free(v[{j}]);\n    v[{j}] = 0;");
            }
        }
    }
    let input_idx = lg.nodes.iter().position(|n| matches!(n.op, LOp::Input)).unwrap_or(0);
    body.push_str("    rc = 0;\ndone:\n");
    let _ = writeln!(
        body,
        "    for (i = 0; i < {n_nodes}u; i++)\n        if (i != {input_idx}u) free(v[i]);\n    return rc;\n}}"
    );

    let mut src = String::new();
    let _ = writeln!(
        src,
        "/* bqnn inference unit: {} nodes, {} blobs */",
        lg.nodes.len(),
        lg.blobs.len()
    );
    let _ = writeln!(
        src,
        "#define BQNN_INPUT_H {}\n#define BQNN_INPUT_W {}\n#define BQNN_INPUT_D {}",
        input_shape.height, input_shape.width, input_shape.depth
    );
    let _ = writeln!(src, "#define BQNN_INPUT_LEN {}u", input_shape.elements());
    let _ = writeln!(
        src,
        "#define BQNN_OUTPUT_H {}\n#define BQNN_OUTPUT_W {}\n#define BQNN_OUTPUT_D {}",
        output.shape.height, output.shape.width, output.shape.depth
    );
    let _ = writeln!(src, "#define BQNN_OUTPUT_LEN {}u\n", output.shape.elements());
    src.push_str(RUNTIME);
    src.push('\n');
    src.push_str(&emit_constants(lg));
    src.push('\n');
    src.push_str("int bqnn_infer(const float *image, float *out);\n\n");
    src.push_str(&body);
    src.push_str(STANDALONE);
    Ok(src)
}
