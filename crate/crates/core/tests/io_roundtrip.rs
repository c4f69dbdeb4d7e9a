use mrf_core::io::{
    decode_cost_volume, denoise_unaries, encode_cost_volume, load_pgm, save_pgm, stereo_unaries, Image,
};
use mrf_core::synth::rng;
use mrf_core::UnaryVolume;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pgm_file_roundtrip(h in 1usize..9, w in 1usize..9, maxval in 1u16..=65535, seed in any::<u64>()) {
        let mut r = rng(seed);
        let img = Image { height: h, width: w, maxval, data: (0..h * w).map(|_| r.gen_range(0..=maxval)).collect() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        save_pgm(&p, &img).unwrap();
        prop_assert_eq!(load_pgm(&p).unwrap(), img);
    }

    #[test]
    fn cost_volume_bits_survive(h in 1usize..6, w in 1usize..6, l in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let data: Vec<f32> = (0..h * w * l).map(|_| f32::from_bits(r.gen::<u32>() & 0xbf7f_ffff)).collect();
        let vol = UnaryVolume::new(h, w, l, data).unwrap();
        let back = decode_cost_volume(&encode_cost_volume(&vol).unwrap()).unwrap();
        prop_assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            vol.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn pgm_comments_and_ascii() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.pgm");
    std::fs::write(&p, "P2\n# made by hand\n3 1\n# max\n10\n1 2\n10\n").unwrap();
    assert_eq!(load_pgm(&p).unwrap().data, vec![1, 2, 10]);
}

#[test]
fn stereo_unaries_match_recomputation() {
    let mut r = rng(21);
    let (h, w, d) = (5, 9, 4);
    let mk = |r: &mut rand_chacha::ChaCha8Rng| Image {
        height: h,
        width: w,
        maxval: 255,
        data: (0..h * w).map(|_| r.gen_range(0..=255)).collect(),
    };
    let (left, right) = (mk(&mut r), mk(&mut r));
    let u = stereo_unaries::<f64>(&left, &right, d).unwrap();
    for y in 0..h {
        for x in 0..w {
            for l in 0..d {
                let xr = x.saturating_sub(l);
                let want = (left.data[y * w + x] as f64 - right.data[y * w + xr] as f64).abs();
                assert_eq!(u.data[(y * w + x) * d + l], want);
            }
        }
    }
    let small = Image { height: 2, width: 2, maxval: 255, data: vec![0; 4] };
    assert!(stereo_unaries::<f32>(&left, &small, d).is_err());
}

#[test]
fn denoise_matches_recomputation() {
    let mut r = rng(8);
    let img = Image { height: 4, width: 4, maxval: 15, data: (0..16).map(|_| r.gen_range(0..16)).collect() };
    let u = denoise_unaries::<f64>(&img, 16, 2, 20.0).unwrap();
    for (i, &v) in img.data.iter().enumerate() {
        for l in 0..16 {
            let d = v as f64 - l as f64;
            assert_eq!(u.data[i * 16 + l], (d * d).min(20.0));
        }
    }
}
