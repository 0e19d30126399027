//! Shared fixtures and a scalar-loop reference of the forward pass.
//!
//! The reference works on nested `Vec`s with explicit index loops and shares
//! no code with the tape.

#![allow(dead_code)]

use dmn_core::encoder::{synthetic_token, Vocabulary};
use dmn_core::interface::MultiChoiceExample;
use dmn_core::matching::{AttentionNorm, Direction, Fusion, MatchConfig, Mode, PairParameters};
use dmn_core::model::{Inputs, PreparedExample};
use dmn_core::numerics::{Matrix, ParamId};
use dmn_core::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(m: &Matrix) -> Mat {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn relu_proj(e: &Mat, w: &Mat) -> Mat {
    matmul(e, w)
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
        .collect()
}

fn maxpool(s: &Mat) -> Vec<f64> {
    (0..s[0].len())
        .map(|k| s.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// `(S^u, S^v)` for one pair.
pub fn reference_match(
    hu: &Mat,
    hv: &Mat,
    pp: &PairParameters,
    cfg: &MatchConfig,
) -> (Mat, Option<Mat>) {
    let w = to_mat(&pp.w);
    let scores = matmul(&matmul(hu, &w), &transpose(hv));
    let g: Mat = scores.iter().map(|r| softmax(r)).collect();
    let e_u = matmul(&g, hv);
    let s_u = relu_proj(&e_u, &to_mat(&pp.w1));
    if cfg.direction == Direction::Unidirectional {
        return (s_u, None);
    }
    let e_v = match cfg.attention {
        AttentionNorm::Dual => {
            let g_v: Mat = transpose(&scores).iter().map(|r| softmax(r)).collect();
            matmul(&g_v, hu)
        }
        AttentionNorm::Literal => matmul(&transpose(&g), hu),
    };
    (s_u, Some(relu_proj(&e_v, &to_mat(&pp.w2))))
}

pub fn reference_fuse(
    s_u: &Mat,
    s_v: Option<&Mat>,
    pp: &PairParameters,
    cfg: &MatchConfig,
) -> Vec<f64> {
    let m_u = maxpool(s_u);
    let Some(s_v) = s_v else { return m_u };
    let m_v = maxpool(s_v);
    if cfg.fusion == Fusion::Concat {
        return m_u.into_iter().chain(m_v).collect();
    }
    let l = m_u.len();
    let (w3, w4) = (to_mat(&pp.w3), to_mat(&pp.w4));
    let mut out = vec![0.0; l];
    for j in 0..l {
        let mut z = pp.b[j];
        for i in 0..l {
            z += m_u[i] * w3[i][j] + m_v[i] * w4[i][j];
        }
        let g = 1.0 / (1.0 + (-z).exp());
        out[j] = g * m_u[j] + (1.0 - g) * m_v[j];
    }
    out
}

pub struct Reference {
    pub c: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: f64,
}

fn lookup(model: &Model, ids: &[usize]) -> Mat {
    let table = &model.embeddings.as_ref().expect("lookup model").weights;
    ids.iter().map(|&i| table.row(i).to_vec()).collect()
}

/// End-to-end reference: embeddings, three pairs, `C`, `V·C_i`, softmax, NLL.
pub fn reference_forward(model: &Model, ex: &PreparedExample) -> Reference {
    let cfg = &model.config.matching;
    let (hp, hq, has): (Mat, Mat, Vec<Mat>) = match &ex.inputs {
        Inputs::Tokens {
            passage,
            question,
            candidates,
        } => (
            lookup(model, &passage.ids),
            lookup(model, &question.ids),
            candidates.iter().map(|c| lookup(model, &c.ids)).collect(),
        ),
        Inputs::Hidden {
            passage,
            question,
            candidates,
        } => (
            to_mat(passage),
            to_mat(question),
            candidates.iter().map(to_mat).collect(),
        ),
    };
    let params = &model.params;
    let pick = |p: &'static str| -> &PairParameters {
        if cfg.share_pair_params {
            return &params.pq;
        }
        match p {
            "pq" => &params.pq,
            "pa" => &params.pa,
            _ => &params.qa,
        }
    };
    let pair = |hu: &Mat, hv: &Mat, name: &'static str| {
        let pp = pick(name);
        let (su, sv) = reference_match(hu, hv, pp, cfg);
        reference_fuse(&su, sv.as_ref(), pp, cfg)
    };
    let pq = pair(&hp, &hq, "pq");
    let mut c = Vec::new();
    for ha in &has {
        let mut ci = pq.clone();
        ci.extend(pair(&hp, ha, "pa"));
        if cfg.use_qa_pair {
            ci.extend(pair(&hq, ha, "qa"));
        }
        c.push(ci);
    }
    let v = params.v.as_slice();
    let logits: Vec<f64> = c
        .iter()
        .map(|ci| ci.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    let probs = softmax(&logits);
    let loss = -probs[ex.gold].ln();
    Reference {
        c,
        logits,
        probs,
        loss,
    }
}

/// Dual and literal attention crossed with the four ablation variants.
pub fn all_configs() -> Vec<MatchConfig> {
    let mut out = Vec::new();
    for attention in [AttentionNorm::Dual, AttentionNorm::Literal] {
        let full = MatchConfig {
            attention,
            matching_dropout: 0.0,
            ..Default::default()
        };
        out.push(full);
        out.push(MatchConfig {
            direction: Direction::Unidirectional,
            ..full
        });
        out.push(MatchConfig {
            fusion: Fusion::Concat,
            ..full
        });
        out.push(MatchConfig {
            use_qa_pair: false,
            ..full
        });
    }
    out
}

fn random_text(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> String {
    let n = rng.gen_range(1..=max_len);
    (0..n)
        .map(|_| synthetic_token(rng.gen_range(2..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random example with 2 or 4 candidates and spans of 1..=max_len tokens.
pub fn random_example(
    rng: &mut ChaCha8Rng,
    vocab: usize,
    max_len: usize,
    id: &str,
) -> MultiChoiceExample {
    let n = if rng.gen_bool(0.5) { 2 } else { 4 };
    MultiChoiceExample {
        id: id.to_string(),
        passage: random_text(rng, vocab, max_len),
        question: random_text(rng, vocab, max_len),
        candidates: (0..n).map(|_| random_text(rng, vocab, max_len)).collect(),
        gold: rng.gen_range(0..n),
    }
}

/// Model with hidden size 1..=8 and every parameter (V included) drawn from
/// U(-1, 1), plus one prepared example with spans of at most 8 tokens.
pub fn random_instance(seed: u64, matching: MatchConfig) -> (Model, PreparedExample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = rng.gen_range(1..=8);
    let vocab = 16;
    let config = ModelConfig {
        hidden,
        max_len: 8,
        matching,
        ..Default::default()
    };
    let mut model = Model::new(config, Vocabulary::synthetic(vocab), rng.gen()).unwrap();
    randomize(&mut model, &mut rng, 1.0);
    let ex = random_example(&mut rng, vocab, 8, &format!("instance-{seed}"));
    let prepared = model.prepare(&ex).unwrap();
    (model, prepared)
}

pub fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, bound: f64) {
    for id in model.param_ids() {
        for x in model.param_slice_mut(id).unwrap() {
            *x = rng.gen_range(-bound..bound);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Bit patterns of every trained tensor, in id order.
pub fn param_bits(model: &Model) -> Vec<u64> {
    model
        .param_ids()
        .into_iter()
        .flat_map(|id| {
            model
                .param_slice(id)
                .unwrap()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn analytic_entry(model: &Model, ex: &PreparedExample, id: ParamId, index: usize) -> f64 {
    let (_, _, grads) = model.loss_and_grads(ex, &mut Mode::Eval).unwrap();
    grads.get(id).map_or(0.0, |g| g.data()[index])
}

fn with_entry(model: &Model, id: ParamId, index: usize, value: f64) -> Model {
    let mut m = model.clone();
    m.param_slice_mut(id).unwrap()[index] = value;
    m
}

/// Central difference of the loss in one entry, with the loss at the centre.
pub fn central_difference(
    model: &Model,
    ex: &PreparedExample,
    id: ParamId,
    index: usize,
    h: f64,
) -> (f64, f64) {
    let x = model.param_slice(id).unwrap()[index];
    let loss = |v: f64| {
        with_entry(model, id, index, v)
            .evaluate_example(ex)
            .unwrap()
            .0
    };
    ((loss(x + h) - loss(x - h)) / (2.0 * h), loss(x))
}

/// Rounding noise of a central difference with step `h` around loss `f`.
pub fn difference_noise(f: f64, h: f64) -> f64 {
    10.0 * f64::EPSILON * f.abs().max(1.0) / h
}

pub fn agrees(analytic: f64, numeric: f64, f: f64, h: f64, tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff / analytic.abs().max(numeric.abs()).max(1e-8) <= tol || diff <= difference_noise(f, h)
}

/// True when the loss has a kink (a ReLU or max-pool switch) inside
/// `[x - h, x + h]` for this entry: the analytic gradient changes across the
/// stencil, and a stencil 100 times narrower agrees with the analytic value.
pub fn kink_within_step(
    model: &Model,
    ex: &PreparedExample,
    id: ParamId,
    index: usize,
    h: f64,
    tol: f64,
) -> bool {
    let x = model.param_slice(id).unwrap()[index];
    let at = analytic_entry(model, ex, id, index);
    let moved = [x - h, x + h].iter().any(|&v| {
        let g = analytic_entry(&with_entry(model, id, index, v), ex, id, index);
        (g - at).abs() / g.abs().max(at.abs()).max(1e-8) > tol
    });
    let fine = h / 100.0;
    let (numeric, f) = central_difference(model, ex, id, index, fine);
    moved && agrees(at, numeric, f, fine, tol)
}
