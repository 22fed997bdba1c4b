//! Top-K candidate selection and the grounding head.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::dense::{expect_finite, expect_shape, uniform, uniform_vec};
use crate::{LsadError, Result};

pub const PROJ_DIM: usize = 64;
pub const BOX_PARAMS: usize = 6;

/// Affine scorer `x . w + b` for visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWeights {
    pub w: Array1<f64>,
    pub b: f64,
}

/// Keeps the K highest-scoring rows. Ties go to the lower index; the
/// returned indices follow descending score.
pub fn encode_select_topk(visual: ArrayView2<f64>, scorer: &ScoreWeights, k: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = visual.nrows();
    if k > n {
        return Err(LsadError::TopK { k, n });
    }
    expect_shape("score weights", &scorer.w, &[visual.ncols()])?;
    expect_finite("visual tokens", &visual)?;
    let scores = visual.dot(&scorer.w) + scorer.b;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok((visual.select(Axis(0), &order), order))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingHeadParams {
    /// Box MLP `d -> d -> 7`: three center values, three pre-size values
    /// and one confidence.
    pub box_w1: Array2<f64>,
    pub box_b1: Array1<f64>,
    pub box_w2: Array2<f64>,
    pub box_b2: Array1<f64>,
    pub visual_proj: Array2<f64>,
    pub visual_bias: Array1<f64>,
    pub text_proj: Array2<f64>,
    pub text_bias: Array1<f64>,
}

impl GroundingHeadParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            box_w1: Array2::zeros((d, d)),
            box_b1: Array1::zeros(d),
            box_w2: Array2::zeros((d, BOX_PARAMS + 1)),
            box_b2: Array1::zeros(BOX_PARAMS + 1),
            visual_proj: Array2::zeros((d, PROJ_DIM)),
            visual_bias: Array1::zeros(PROJ_DIM),
            text_proj: Array2::zeros((d, PROJ_DIM)),
            text_bias: Array1::zeros(PROJ_DIM),
        }
    }

    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        Self {
            box_w1: uniform(rng, d, d, d),
            box_b1: uniform_vec(rng, d, d),
            box_w2: uniform(rng, d, BOX_PARAMS + 1, d),
            box_b2: uniform_vec(rng, BOX_PARAMS + 1, d),
            visual_proj: uniform(rng, d, PROJ_DIM, d),
            visual_bias: uniform_vec(rng, PROJ_DIM, d),
            text_proj: uniform(rng, d, PROJ_DIM, d),
            text_bias: uniform_vec(rng, PROJ_DIM, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingOutput {
    /// Center then size, K x 6; sizes are non-negative.
    pub boxes: Array2<f64>,
    pub confidence: Array1<f64>,
    pub visual_proj: Array2<f64>,
    pub text_proj: Array2<f64>,
    pub best_index: usize,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn grounding_head(objects: ArrayView2<f64>, text: ArrayView2<f64>, p: &GroundingHeadParams) -> Result<GroundingOutput> {
    let d = p.box_w1.nrows();
    expect_shape("object features", &objects, &[objects.nrows(), d])?;
    expect_shape("text features", &text, &[text.nrows(), d])?;
    if objects.nrows() == 0 {
        return Err(LsadError::Config("grounding head needs at least one object".into()));
    }
    let hidden = (objects.dot(&p.box_w1) + &p.box_b1).mapv(|v| v.max(0.0));
    let raw = hidden.dot(&p.box_w2) + &p.box_b2;
    let mut boxes = raw.slice(s![.., ..BOX_PARAMS]).to_owned();
    boxes.slice_mut(s![.., 3..]).mapv_inplace(softplus);
    let confidence = raw.column(BOX_PARAMS).to_owned();
    let best_index = confidence
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > confidence[best] { i } else { best });
    Ok(GroundingOutput {
        boxes,
        confidence,
        visual_proj: objects.dot(&p.visual_proj) + &p.visual_bias,
        text_proj: text.dot(&p.text_proj) + &p.text_bias,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::features;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn increasing_scores_select_tail() {
        let visual = Array2::from_shape_fn((10, 2), |(i, c)| if c == 0 { i as f64 } else { 0.0 });
        let scorer = ScoreWeights { w: ndarray::array![1.0, 0.0], b: 0.0 };
        let (rows, idx) = encode_select_topk(visual.view(), &scorer, 3).unwrap();
        assert_eq!(idx, vec![9, 8, 7]);
        assert_eq!(rows[[0, 0]], 9.0);
        assert_eq!(encode_select_topk(visual.view(), &scorer, 11).unwrap_err(), LsadError::TopK { k: 11, n: 10 });
    }

    #[test]
    fn ties_prefer_lower_index() {
        let visual = Array2::zeros((5, 3));
        let scorer = ScoreWeights { w: Array1::ones(3), b: 0.0 };
        assert_eq!(encode_select_topk(visual.view(), &scorer, 5).unwrap().1, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_head_gives_identical_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = grounding_head(features(&mut rng, 5, 8).view(), features(&mut rng, 3, 8).view(), &GroundingHeadParams::zeros(8)).unwrap();
        assert_eq!(out.best_index, 0);
        for row in out.boxes.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 0.0, 2f64.ln(), 2f64.ln(), 2f64.ln()]);
        }
        assert_eq!(out.visual_proj.dim(), (5, PROJ_DIM));
        assert_eq!(out.text_proj.dim(), (3, PROJ_DIM));
    }

    #[test]
    fn positive_confidence_scaling_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = GroundingHeadParams::random(8, &mut rng);
        let objects = features(&mut rng, 12, 8);
        let text = features(&mut rng, 2, 8);
        let best = grounding_head(objects.view(), text.view(), &p).unwrap().best_index;
        for lambda in [0.01, 3.0, 1e4] {
            p.box_w2.column_mut(BOX_PARAMS).mapv_inplace(|v| v * lambda);
            p.box_b2[BOX_PARAMS] *= lambda;
            assert_eq!(grounding_head(objects.view(), text.view(), &p).unwrap().best_index, best);
        }
        let out = grounding_head(objects.view(), text.view(), &p).unwrap();
        assert!(out.boxes.slice(s![.., 3..]).iter().all(|&v| v >= 0.0));
    }
}
