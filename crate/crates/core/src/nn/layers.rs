//! Forward and backward passes over a fixed layer plan.
//!
//! Activations are row-major `rows x width` matrices; CNN activations keep a
//! per-sample `channels x height x width` layout. The statistics vector
//! enters at the first dense layer, which computes
//! `W_f f + W_s s + b`: a dense layer over the concatenation `[f || s]` with
//! its weight matrix stored as two column blocks.

use super::arch::Architecture;
use super::linalg::{matmul, matmul_nt, matmul_tn};
use super::params::ModelParams;
use super::tensor::{argmax, Tensor};
use super::{NnError, Result};

/// One training or evaluation example, borrowed from its shard.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub stats: Option<&'a [f64]>,
    pub y: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        name: &'static str,
        weight: usize,
        bias: usize,
        in_ch: usize,
        out_ch: usize,
        h: usize,
        w: usize,
    },
    Relu {
        name: &'static str,
    },
    Pool {
        name: &'static str,
        ch: usize,
        h: usize,
        w: usize,
    },
    Flatten,
    Dense {
        name: &'static str,
        weight: usize,
        stats_weight: Option<usize>,
        bias: usize,
        inputs: usize,
        outputs: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Conv { name, .. } | Op::Relu { name } | Op::Pool { name, .. } | Op::Dense { name, .. } => name,
            Op::Flatten => "flatten",
        }
    }
}

fn offset(params: &ModelParams, name: &str) -> usize {
    params.layout().slot(name).expect("layout built from the same architecture").offset
}

fn plan(arch: &Architecture, params: &ModelParams) -> Vec<Op> {
    let mut ops = Vec::new();
    if arch.kind.is_cnn() {
        let (ch, h, w) = arch.image_dims().expect("validated");
        let [c1, c2] = arch.conv_channels;
        ops.push(Op::Conv {
            name: "conv1",
            weight: offset(params, "conv1.weight"),
            bias: offset(params, "conv1.bias"),
            in_ch: ch,
            out_ch: c1,
            h,
            w,
        });
        ops.push(Op::Relu { name: "relu1" });
        ops.push(Op::Pool { name: "pool1", ch: c1, h, w });
        ops.push(Op::Conv {
            name: "conv2",
            weight: offset(params, "conv2.weight"),
            bias: offset(params, "conv2.bias"),
            in_ch: c1,
            out_ch: c2,
            h: h / 2,
            w: w / 2,
        });
        ops.push(Op::Relu { name: "relu2" });
        ops.push(Op::Pool { name: "pool2", ch: c2, h: h / 2, w: w / 2 });
    }
    ops.push(Op::Flatten);
    ops.push(Op::Dense {
        name: "fc1",
        weight: offset(params, "fc1.weight"),
        stats_weight: (arch.stats_dim > 0).then(|| offset(params, "fc1.stats_weight")),
        bias: offset(params, "fc1.bias"),
        inputs: arch.flatten_width(),
        outputs: arch.hidden_dim,
    });
    ops.push(Op::Relu { name: "relu_fc1" });
    ops.push(Op::Dense {
        name: "fc2",
        weight: offset(params, "fc2.weight"),
        stats_weight: None,
        bias: offset(params, "fc2.bias"),
        inputs: arch.hidden_dim,
        outputs: arch.class_count,
    });
    ops
}

enum Aux {
    None,
    /// im2col buffers, one per sample.
    Cols(Vec<f64>),
    /// Input index of each pooled maximum.
    Argmax(Vec<usize>),
}

struct Trace {
    /// Input activation of every op.
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

fn im2col(input: &[f64], ch: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..ch {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        row[y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for c in 0..ch {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            out[c * hw + sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite(name.to_string()))
    }
}

fn check_inputs(
    arch: &Architecture,
    params: &ModelParams,
    x: &[f64],
    stats: Option<&[f64]>,
    rows: usize,
) -> Result<()> {
    let id = arch.id();
    if params.architecture_id() != id {
        return Err(NnError::ArchitectureMismatch(params.architecture_id().to_string(), id));
    }
    if rows == 0 {
        return Err(NnError::EmptyBatch);
    }
    if x.len() != rows * arch.input_len() {
        return Err(NnError::Shape {
            layer: "input".into(),
            expected: format!("{rows} x {:?}", arch.input_shape),
            actual: format!("{} values", x.len()),
        });
    }
    match (arch.kind.is_conditional(), stats) {
        (true, None) => return Err(NnError::MissingStats(arch.kind.to_string())),
        (false, Some(_)) => return Err(NnError::UnexpectedStats(arch.kind.to_string())),
        (true, Some(s)) if s.len() != rows * arch.stats_dim => {
            return Err(NnError::Shape {
                layer: "fc1.stats".into(),
                expected: format!("{rows} x {}", arch.stats_dim),
                actual: format!("{} values", s.len()),
            })
        }
        _ => {}
    }
    Ok(())
}

fn run_forward(
    arch: &Architecture,
    params: &ModelParams,
    x: &[f64],
    stats: Option<&[f64]>,
    rows: usize,
    keep: bool,
) -> Result<(Vec<f64>, Option<Trace>)> {
    check_inputs(arch, params, x, stats, rows)?;
    let theta = params.as_slice();
    let ops = plan(arch, params);
    let mut trace = keep.then(|| Trace {
        inputs: Vec::with_capacity(ops.len()),
        aux: Vec::with_capacity(ops.len()),
    });
    let mut act = x.to_vec();
    for op in &ops {
        let mut aux = Aux::None;
        let out = match *op {
            Op::Conv { weight, bias, in_ch, out_ch, h, w, .. } => {
                let hw = h * w;
                let k = in_ch * 9;
                let mut out = vec![0.0; rows * out_ch * hw];
                let mut all_cols = if keep { vec![0.0; rows * k * hw] } else { Vec::new() };
                let mut scratch = if keep { Vec::new() } else { vec![0.0; k * hw] };
                for b in 0..rows {
                    let cols: &mut [f64] = if keep {
                        &mut all_cols[b * k * hw..(b + 1) * k * hw]
                    } else {
                        &mut scratch
                    };
                    im2col(&act[b * in_ch * hw..(b + 1) * in_ch * hw], in_ch, h, w, cols);
                    let ob = &mut out[b * out_ch * hw..(b + 1) * out_ch * hw];
                    matmul(out_ch, k, hw, &theta[weight..weight + out_ch * k], cols, ob, 0.0);
                    for (c, plane) in ob.chunks_mut(hw).enumerate() {
                        let bc = theta[bias + c];
                        plane.iter_mut().for_each(|v| *v += bc);
                    }
                }
                if keep {
                    aux = Aux::Cols(all_cols);
                }
                out
            }
            Op::Relu { .. } => act.iter().map(|v| v.max(0.0)).collect(),
            Op::Pool { ch, h, w, .. } => {
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; rows * ch * oh * ow];
                let mut idx = vec![0usize; out.len()];
                for b in 0..rows {
                    for c in 0..ch {
                        let base = (b * ch + c) * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = base + (2 * oy) * w + 2 * ox;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let cand = base + (2 * oy + dy) * w + 2 * ox + dx;
                                    if act[cand] > act[best] {
                                        best = cand;
                                    }
                                }
                                let o = ((b * ch + c) * oh + oy) * ow + ox;
                                out[o] = act[best];
                                idx[o] = best;
                            }
                        }
                    }
                }
                aux = Aux::Argmax(idx);
                out
            }
            Op::Flatten => act.clone(),
            Op::Dense { weight, stats_weight, bias, inputs, outputs, .. } => {
                let mut out = vec![0.0; rows * outputs];
                matmul_nt(rows, inputs, outputs, &act, &theta[weight..weight + outputs * inputs], &mut out, 0.0);
                if let (Some(sw), Some(s)) = (stats_weight, stats) {
                    let l = arch.stats_dim;
                    matmul_nt(rows, l, outputs, s, &theta[sw..sw + outputs * l], &mut out, 1.0);
                }
                for row in out.chunks_mut(outputs) {
                    for (v, b) in row.iter_mut().zip(&theta[bias..bias + outputs]) {
                        *v += b;
                    }
                }
                out
            }
        };
        check_finite(op.name(), &out)?;
        if let Some(t) = trace.as_mut() {
            t.inputs.push(std::mem::replace(&mut act, out));
            t.aux.push(aux);
        } else {
            act = out;
        }
    }
    Ok((act, trace))
}

/// Logits for a single example. `x` must hold `arch.input_len()` values.
pub fn forward(
    params: &ModelParams,
    arch: &Architecture,
    x: &Tensor,
    stats: Option<&[f64]>,
) -> Result<Tensor> {
    let (logits, _) = run_forward(arch, params, x.data(), stats, 1, false)?;
    Ok(Tensor::vector(logits))
}

/// Logits for `rows` examples stored row-major in `x` (and `stats`).
pub fn forward_batch(
    params: &ModelParams,
    arch: &Architecture,
    x: &[f64],
    stats: Option<&[f64]>,
    rows: usize,
) -> Result<Vec<f64>> {
    Ok(run_forward(arch, params, x, stats, rows, false)?.0)
}

struct Gathered {
    x: Vec<f64>,
    stats: Option<Vec<f64>>,
    labels: Vec<usize>,
}

fn gather(arch: &Architecture, batch: &[Example]) -> Result<Gathered> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let width = arch.input_len();
    let mut x = Vec::with_capacity(batch.len() * width);
    let conditional = batch[0].stats.is_some();
    let mut stats = conditional.then(|| Vec::with_capacity(batch.len() * arch.stats_dim));
    let mut labels = Vec::with_capacity(batch.len());
    for ex in batch {
        if ex.x.len() != width {
            return Err(NnError::Shape {
                layer: "input".into(),
                expected: format!("{:?}", arch.input_shape),
                actual: format!("{} values", ex.x.len()),
            });
        }
        if ex.y >= arch.class_count {
            return Err(NnError::LabelOutOfRange {
                label: ex.y,
                classes: arch.class_count,
            });
        }
        x.extend_from_slice(ex.x);
        match (stats.as_mut(), ex.stats) {
            (Some(buf), Some(s)) => buf.extend_from_slice(s),
            (None, None) => {}
            _ => {
                return Err(NnError::Shape {
                    layer: "fc1.stats".into(),
                    expected: "statistics on every example or on none".into(),
                    actual: "a mixed batch".into(),
                })
            }
        }
        labels.push(ex.y);
    }
    Ok(Gathered { x, stats, labels })
}

/// Mean cross-entropy over `labels` and its gradient w.r.t. the logits.
fn softmax_xent(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let rows = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[y];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (gi, zi) in g.iter_mut().zip(z) {
            *gi = (zi - log_sum).exp() / rows as f64;
        }
        g[y] -= 1.0 / rows as f64;
    }
    (loss / rows as f64, grad)
}

/// Mean cross-entropy loss of a batch and its gradient w.r.t. every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    arch: &Architecture,
    batch: &[Example],
) -> Result<(f64, ModelParams)> {
    let g = gather(arch, batch)?;
    let rows = g.labels.len();
    let (logits, trace) = run_forward(arch, params, &g.x, g.stats.as_deref(), rows, true)?;
    let trace = trace.expect("trace requested");
    let (loss, mut delta) = softmax_xent(&logits, &g.labels, arch.class_count);
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss".into()));
    }

    let theta = params.as_slice();
    let mut grad = params.zeros_like();
    let ops = plan(arch, params);
    let first_param_op = ops
        .iter()
        .position(|op| matches!(op, Op::Conv { .. } | Op::Dense { .. }))
        .expect("every plan has a dense layer");

    for (i, op) in ops.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        let need_input_grad = i > first_param_op;
        let gdata = grad.as_mut_slice();
        delta = match *op {
            Op::Dense { weight, stats_weight, bias, inputs, outputs, .. } => {
                matmul_tn(outputs, rows, inputs, &delta, input, &mut gdata[weight..weight + outputs * inputs], 0.0);
                if let (Some(sw), Some(s)) = (stats_weight, g.stats.as_deref()) {
                    let l = arch.stats_dim;
                    matmul_tn(outputs, rows, l, &delta, s, &mut gdata[sw..sw + outputs * l], 0.0);
                }
                for row in delta.chunks(outputs) {
                    for (gb, d) in gdata[bias..bias + outputs].iter_mut().zip(row) {
                        *gb += d;
                    }
                }
                if need_input_grad {
                    let mut dx = vec![0.0; rows * inputs];
                    matmul(rows, outputs, inputs, &delta, &theta[weight..weight + outputs * inputs], &mut dx, 0.0);
                    dx
                } else {
                    Vec::new()
                }
            }
            Op::Relu { .. } => delta
                .iter()
                .zip(input)
                .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                .collect(),
            Op::Pool { .. } => {
                let Aux::Argmax(idx) = &trace.aux[i] else {
                    unreachable!("pool records argmax")
                };
                let mut dx = vec![0.0; input.len()];
                for (d, &j) in delta.iter().zip(idx) {
                    dx[j] += d;
                }
                dx
            }
            Op::Flatten => delta,
            Op::Conv { weight, bias, in_ch, out_ch, h, w, .. } => {
                let Aux::Cols(cols) = &trace.aux[i] else {
                    unreachable!("conv records im2col buffers")
                };
                let hw = h * w;
                let k = in_ch * 9;
                let mut dx = if need_input_grad { vec![0.0; rows * in_ch * hw] } else { Vec::new() };
                let mut dcols = vec![0.0; if need_input_grad { k * hw } else { 0 }];
                for b in 0..rows {
                    let db = &delta[b * out_ch * hw..(b + 1) * out_ch * hw];
                    let cb = &cols[b * k * hw..(b + 1) * k * hw];
                    matmul_nt(out_ch, hw, k, db, cb, &mut gdata[weight..weight + out_ch * k], 1.0);
                    for (c, plane) in db.chunks(hw).enumerate() {
                        gdata[bias + c] += plane.iter().sum::<f64>();
                    }
                    if need_input_grad {
                        matmul_tn(k, out_ch, hw, &theta[weight..weight + out_ch * k], db, &mut dcols, 0.0);
                        col2im(&dcols, in_ch, h, w, &mut dx[b * in_ch * hw..(b + 1) * in_ch * hw]);
                    }
                }
                dx
            }
        };
        if i == first_param_op {
            break;
        }
    }
    Ok((loss, grad))
}

/// Mean cross-entropy over `examples`, evaluated in chunks without gradients.
pub fn mean_loss(params: &ModelParams, arch: &Architecture, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(256) {
        let g = gather(arch, chunk)?;
        let logits = forward_batch(params, arch, &g.x, g.stats.as_deref(), chunk.len())?;
        let (loss, _) = softmax_xent(&logits, &g.labels, arch.class_count);
        total += loss * chunk.len() as f64;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Argmax class per example.
pub fn predict(params: &ModelParams, arch: &Architecture, examples: &[Example]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(256) {
        let g = gather(arch, chunk)?;
        let logits = forward_batch(params, arch, &g.x, g.stats.as_deref(), chunk.len())?;
        out.extend(logits.chunks(arch.class_count).map(argmax));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ex<'a>(x: &'a [f64], stats: Option<&'a [f64]>, y: usize) -> Example<'a> {
        Example { x, stats, y }
    }

    #[test]
    fn zero_weights_emit_the_output_bias() {
        let arch = Architecture::mlp(4, 3, 5).unwrap();
        let mut p = ModelParams::zeros(&arch);
        p.layer_mut("fc2.bias").unwrap().copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = Tensor::vector(vec![0.3, -2.0, 7.0, 1.0]);
        let logits = forward(&p, &arch, &x, None).unwrap();
        assert_eq!(logits.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn zeroed_stats_path_reproduces_unconditioned_logits() {
        let plain = Architecture::mlp(6, 4, 8).unwrap();
        let cond = Architecture::mlp_conditional(6, 4, 8, 3).unwrap();
        let base = ModelParams::init(&plain, 1);
        let mut p = ModelParams::zeros(&cond);
        for (name, _, values) in base.layers() {
            p.layer_mut(name).unwrap().copy_from_slice(values);
        }
        let mut rng = crate::seed::rng(4);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..5.0)).collect();
            let a = forward(&base, &plain, &Tensor::vector(x.clone()), None).unwrap();
            let b = forward(&p, &cond, &Tensor::vector(x), Some(&s)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn two_layer_mlp_matches_straight_line_oracle() {
        let arch = Architecture::mlp(4, 3, 5).unwrap();
        let p = ModelParams::init(&arch, 2024);
        let x = [0.25, -0.5, 0.75, 1.0];
        let w1 = p.layer("fc1.weight").unwrap();
        let b1 = p.layer("fc1.bias").unwrap();
        let w2 = p.layer("fc2.weight").unwrap();
        let b2 = p.layer("fc2.bias").unwrap();
        let mut hidden = [0.0; 5];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut acc = b1[j];
            for i in 0..4 {
                acc += w1[j * 4 + i] * x[i];
            }
            *h = if acc > 0.0 { acc } else { 0.0 };
        }
        let mut want = [0.0; 3];
        for (c, out) in want.iter_mut().enumerate() {
            let mut acc = b2[c];
            for j in 0..5 {
                acc += w2[c * 5 + j] * hidden[j];
            }
            *out = acc;
        }
        let got = forward(&p, &arch, &Tensor::vector(x.to_vec()), None).unwrap();
        for (g, w) in got.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let arch = Architecture::mlp(4, 10, 3).unwrap();
        let p = ModelParams::zeros(&arch);
        let x = [0.1, 0.2, 0.3, 0.4];
        let (loss, _) = loss_and_grad(&p, &arch, &[ex(&x, None, 7), ex(&x, None, 2)]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_falls_as_the_correct_logit_rises() {
        let arch = Architecture::mlp(1, 3, 1).unwrap();
        let mut p = ModelParams::zeros(&arch);
        let x = [1.0];
        let mut last = f64::INFINITY;
        for step in 0..20 {
            p.layer_mut("fc2.bias").unwrap()[1] = step as f64 * 0.75;
            let (loss, _) = loss_and_grad(&p, &arch, &[ex(&x, None, 1)]).unwrap();
            assert!(loss < last);
            last = loss;
        }
    }

    #[test]
    fn argument_errors_are_structured() {
        let arch = Architecture::mlp(2, 2, 2).unwrap();
        let cond = Architecture::mlp_conditional(2, 2, 2, 1).unwrap();
        let p = ModelParams::zeros(&arch);
        let pc = ModelParams::zeros(&cond);
        let x = [0.0, 1.0];
        assert!(matches!(loss_and_grad(&p, &arch, &[ex(&x, None, 2)]), Err(NnError::LabelOutOfRange { .. })));
        assert!(matches!(loss_and_grad(&p, &arch, &[]), Err(NnError::EmptyBatch)));
        assert!(matches!(
            forward(&pc, &cond, &Tensor::vector(x.to_vec()), None),
            Err(NnError::MissingStats(_))
        ));
        assert!(matches!(
            forward(&p, &arch, &Tensor::vector(vec![1.0; 3]), None),
            Err(NnError::Shape { .. })
        ));
        assert!(matches!(
            forward(&pc, &cond, &Tensor::vector(x.to_vec()), Some(&[1.0, 2.0])),
            Err(NnError::Shape { .. })
        ));
        assert!(matches!(
            forward(&p, &cond, &Tensor::vector(x.to_vec()), Some(&[1.0])),
            Err(NnError::ArchitectureMismatch(..))
        ));
    }

    #[test]
    fn non_finite_activations_name_the_layer() {
        let arch = Architecture::mlp(2, 2, 2).unwrap();
        let mut p = ModelParams::zeros(&arch);
        p.layer_mut("fc1.weight").unwrap()[0] = f64::INFINITY;
        let x = [1.0, 0.0];
        let err = forward(&p, &arch, &Tensor::vector(x.to_vec()), None).unwrap_err();
        assert_eq!(err, NnError::NonFinite("fc1".into()));
    }

    #[test]
    fn pooling_and_conv_shapes_line_up() {
        let arch = Architecture::mnist_cnn(10, Some(4)).unwrap().with_conv_channels(2, 3).unwrap();
        let p = ModelParams::init(&arch, 1);
        let x = Tensor::zeros(vec![1, 28, 28]);
        let logits = forward(&p, &arch, &x, Some(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(logits.len(), 10);
    }
}
