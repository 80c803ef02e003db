//! Sliding-window fine features.
//!
//! The image is cut into interiors of side `window - 2 * overlap`; each is
//! encoded inside a window that extends `overlap` pixels past it (clamped to
//! the image), and only the interior features are kept. With an overlap of
//! at least the receptive-field radius every kept feature sees exactly the
//! pixels it would see in a single full-image pass.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::pifu::FineModel;

/// Smallest admissible overlap: the receptive-field radius, rounded up to
/// keep window offsets even.
pub fn min_overlap(model: &FineModel<f32>) -> usize {
    let radius = model.receptive_field().div_ceil(2);
    radius + radius % 2
}

/// Window origins and the interior each contributes, along one axis.
fn tiles(full: usize, window: usize, overlap: usize) -> Vec<(usize, usize, usize)> {
    let stride = window - 2 * overlap;
    let mut out = Vec::new();
    let mut s = 0;
    while s < full {
        let e = (s + stride).min(full);
        let t = s.saturating_sub(overlap).min(full - window);
        out.push((t, s, e));
        s = e;
    }
    out
}

/// Full-image fine feature plane `[C, H/2, W/2]`, computed window by window.
/// `window == 0` or `window >= H` encodes the image in one pass.
pub fn stitch_fine_features(model: &FineModel<f32>, image: &Tensor<f32>, window: usize, overlap: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = image.chw()?;
    if window == 0 || (window >= h && window >= w) {
        return model.encode(image);
    }
    if h != w {
        return Err(Error::Config(format!("stitching expects a square image, got {h}x{w}")));
    }
    let need = min_overlap(model);
    if overlap < need {
        return Err(Error::Config(format!(
            "overlap {overlap} is below the receptive-field radius bound {need}"
        )));
    }
    if window % 2 != 0 || overlap % 2 != 0 || h % 2 != 0 {
        return Err(Error::Config(format!(
            "window {window}, overlap {overlap} and image {h} must be even"
        )));
    }
    if window <= 2 * overlap {
        return Err(Error::Config(format!("window {window} leaves no interior with overlap {overlap}")));
    }
    let axis = tiles(h, window, overlap);
    let mut out: Option<Tensor<f32>> = None;
    for &(ty, sy, ey) in &axis {
        for &(tx, sx, ex) in &axis {
            let feats = model.encode(&image.crop(ty, tx, window, window)?)?;
            let (c, fh, fw) = feats.chw()?;
            let plane = out.get_or_insert_with(|| Tensor::zeros(&[c, h / 2, w / 2]));
            let (ph, pw) = (h / 2, w / 2);
            let dst = plane.data_mut();
            let src = feats.data();
            for ch in 0..c {
                for y in sy / 2..ey / 2 {
                    let ly = y - ty / 2;
                    let row = &src[(ch * fh + ly) * fw..(ch * fh + ly + 1) * fw];
                    let d = &mut dst[(ch * ph + y) * pw..(ch * ph + y + 1) * pw];
                    d[sx / 2..ex / 2].copy_from_slice(&row[sx / 2 - tx / 2..ex / 2 - tx / 2]);
                }
            }
        }
    }
    out.ok_or_else(|| Error::Config("empty image".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pifu::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> FineModel<f32> {
        FineModel::new(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn noise(h: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[9, h, h], (0..9 * h * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tiles_cover_the_axis() {
        let t = tiles(128, 80, 8);
        assert_eq!(t, vec![(0, 0, 64), (48, 64, 128)]);
        let t = tiles(128, 40, 6);
        assert_eq!(t.first().unwrap().1, 0);
        assert_eq!(t.last().unwrap().2, 128);
        assert!(t.windows(2).all(|w| w[0].2 == w[1].1));
    }

    #[test]
    fn full_window_is_direct_encoding() {
        let m = model();
        let img = noise(32, 1);
        assert_eq!(stitch_fine_features(&m, &img, 32, 8).unwrap(), m.encode(&img).unwrap());
        assert_eq!(stitch_fine_features(&m, &img, 0, 0).unwrap(), m.encode(&img).unwrap());
    }

    #[test]
    fn tiling_matches_single_pass() {
        let m = model();
        let img = noise(64, 2);
        let direct = m.encode(&img).unwrap();
        for (window, overlap) in [(48, 8), (24, 6), (40, min_overlap(&m))] {
            let stitched = stitch_fine_features(&m, &img, window, overlap).unwrap();
            let dev = direct
                .data()
                .iter()
                .zip(stitched.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(dev < 1e-5, "window {window}: {dev}");
        }
    }

    #[test]
    fn small_overlap_is_rejected() {
        let m = model();
        let img = noise(64, 3);
        assert!(matches!(stitch_fine_features(&m, &img, 40, 2), Err(Error::Config(_))));
        assert!(matches!(stitch_fine_features(&m, &img, 12, 6), Err(Error::Config(_))));
    }
}
