mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumorseg::metrics::{lesion_wise, surface_voxels, volumetric_dice, volumetric_hd95, LesionParams, DEFAULT_PENALTY};

fn spacing(rng: &mut ChaCha8Rng) -> [f64; 3] {
    if rng.random_bool(0.5) {
        [1.0; 3]
    } else {
        [0, 1, 2].map(|_| rng.random_range(0.5..2.5))
    }
}

#[test]
fn surface_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let dims = oracle::random_dims(&mut rng, 10);
        let data = oracle::random_mask(&mut rng, dims, 4, 0.05);
        let got: Vec<[i64; 3]> = surface_voxels(&oracle::to_mask(dims, [1.0; 3], &data))
            .into_iter()
            .map(|c| c.map(|v| v as i64))
            .collect();
        assert_eq!(got, oracle::surface(&data, dims));
    }
}

#[test]
fn volumetric_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let dims = oracle::random_dims(&mut rng, 12);
        let s = spacing(&mut rng);
        let a = oracle::random_mask(&mut rng, dims, 4, 0.03);
        let b = oracle::random_mask(&mut rng, dims, 4, 0.03);
        let (ma, mb) = (oracle::to_mask(dims, s, &a), oracle::to_mask(dims, s, &b));
        assert_eq!(volumetric_dice(&ma, &mb).unwrap(), oracle::dice(&a, &b), "case {case}");
        let got = volumetric_hd95(&ma, &mb, s, DEFAULT_PENALTY).unwrap();
        let want = oracle::hd95(&a, &b, dims, s, DEFAULT_PENALTY);
        assert!((got - want).abs() <= 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn lesion_wise_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = LesionParams::default();
    for case in 0..500 {
        let dims = oracle::random_dims(&mut rng, 12);
        let s = spacing(&mut rng);
        let gt = oracle::random_mask(&mut rng, dims, 4, 0.01);
        let pred = if rng.random_bool(0.7) {
            // perturbed copy so most lesions overlap
            gt.iter().map(|&v| if rng.random_bool(0.1) { !v } else { v }).collect()
        } else {
            oracle::random_mask(&mut rng, dims, 4, 0.01)
        };
        let got = lesion_wise(&oracle::to_mask(dims, s, &gt), &oracle::to_mask(dims, s, &pred), s, &params).unwrap();
        let (dice, hd) = oracle::lesion_wise(&gt, &pred, dims, s, DEFAULT_PENALTY);
        assert!((got.dice - dice).abs() <= 1e-12, "case {case}: dice {} vs {dice}", got.dice);
        assert!((got.hd95 - hd).abs() <= 1e-9, "case {case}: hd95 {} vs {hd}", got.hd95);
    }
}
