use groundaug_core::relations::{GLOBAL_DIM, PAIR_DIM};
use groundaug_lsad::dense::features;
use groundaug_lsad::head::{BOX_PARAMS, PROJ_DIM};
use groundaug_lsad::{
    decoder_stack, encode_select_topk, grounding_head, DecoderConfig, DecoderLayerParams, GroundingHeadParams, ScoreWeights,
};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reference_sized_decoder_is_deterministic() {
    let cfg = DecoderConfig::default();
    let n_text = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let layers: Vec<DecoderLayerParams> = (0..cfg.n_layers).map(|_| DecoderLayerParams::random(&cfg, &mut rng)).collect();
    let visual_all = features(&mut rng, cfg.n_points, cfg.d);
    let scorer = ScoreWeights { w: features(&mut rng, 1, cfg.d).remove_axis(Axis(0)), b: 0.0 };
    let (f_o, idx) = encode_select_topk(visual_all.view(), &scorer, cfg.k).unwrap();
    assert_eq!(idx.len(), cfg.k);
    let text = features(&mut rng, n_text, cfg.d);
    let r_p = Array3::from_shape_fn((cfg.k, cfg.k, PAIR_DIM), |_| rng.gen_range(-1.0..1.0));
    let r_g = Array2::from_shape_fn((cfg.k, GLOBAL_DIM), |_| rng.gen_range(0.0..1.0));

    let run = || decoder_stack(f_o.view(), text.view(), visual_all.view(), r_p.view(), r_g.view(), &layers, &cfg).unwrap();
    let a = run();
    assert_eq!(a.dim(), (256, 288));
    assert!(a.iter().all(|v| v.is_finite()));
    let b = run();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let head = GroundingHeadParams::random(cfg.d, &mut rng);
    let out = grounding_head(a.view(), text.view(), &head).unwrap();
    assert_eq!(out.boxes.dim(), (cfg.k, BOX_PARAMS));
    assert_eq!(out.visual_proj.dim(), (cfg.k, PROJ_DIM));
    assert_eq!(out.text_proj.dim(), (n_text, PROJ_DIM));
    assert!(out.best_index < cfg.k);
}
