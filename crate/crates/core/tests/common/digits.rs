//! Procedural 28x28 "0" (rings) and "1" (slanted strokes) in IDX form.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 28;

fn ink(dist: f64, thickness: f64) -> f64 {
    (1.0 - dist / thickness).clamp(0.0, 1.0)
}

fn ring(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cx = 13.5 + rng.gen_range(-1.5..1.5);
    let cy = 13.5 + rng.gen_range(-1.5..1.5);
    let rx = rng.gen_range(5.0..8.0);
    let ry = rng.gen_range(7.0..10.0);
    let th = rng.gen_range(1.5..3.0);
    let mut img = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let (dx, dy) = ((c as f64 - cx) / rx, (r as f64 - cy) / ry);
            let rho = (dx * dx + dy * dy).sqrt();
            img[r * SIDE + c] = ink((rho - 1.0).abs() * rx.min(ry), th);
        }
    }
    img
}

fn stroke(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cx = 13.5 + rng.gen_range(-2.0..2.0);
    let slant = rng.gen_range(-0.35..0.35);
    let half = rng.gen_range(8.0..11.0);
    let th = rng.gen_range(1.5..3.0);
    let mut img = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let t = r as f64 - 13.5;
            if t.abs() > half + th {
                continue;
            }
            let x = cx + slant * t;
            let along = (t.abs() - half).max(0.0);
            let dist = ((c as f64 - x).powi(2) + along * along).sqrt();
            img[r * SIDE + c] = ink(dist, th);
        }
    }
    img
}

fn quantize(img: &[f64], rng: &mut ChaCha8Rng) -> Vec<u8> {
    img.iter()
        .map(|&v| (255.0 * (v + rng.gen_range(0.0..0.04)).min(1.0)).round() as u8)
        .collect()
}

/// Writes `per_class` images of each class (labels 0 and 1, interleaved) and
/// returns the image and label paths.
pub fn write_digit_fixture(dir: &Path, per_class: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let zero = ring(&mut rng);
        images.push(quantize(&zero, &mut rng));
        labels.push(0u8);
        let one = stroke(&mut rng);
        images.push(quantize(&one, &mut rng));
        labels.push(1u8);
    }
    let (img_path, lbl_path) = (
        dir.join("digits-images.idx3-ubyte"),
        dir.join("digits-labels.idx1-ubyte"),
    );
    deq_core::data::write_idx_images(&img_path, SIDE, SIDE, &images).expect("write images");
    deq_core::data::write_idx_labels(&lbl_path, &labels).expect("write labels");
    (img_path, lbl_path)
}
