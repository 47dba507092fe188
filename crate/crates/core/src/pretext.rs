//! Rotation pretext task: lossless quarter-turn rotations and pseudo-labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ImageTensor;

pub use crate::loss::rotation_loss;

/// Counterclockwise quarter turns; the class index is the number of turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationAngle {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl RotationAngle {
    pub const ALL: [RotationAngle; 4] = [
        RotationAngle::Deg0,
        RotationAngle::Deg90,
        RotationAngle::Deg180,
        RotationAngle::Deg270,
    ];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn degrees(self) -> u32 {
        90 * self as u32
    }

    pub fn from_degrees(degrees: u32) -> Option<Self> {
        (degrees % 90 == 0).then(|| Self::ALL[((degrees / 90) % 4) as usize])
    }

    /// Group composition: `(a + b) mod 360`.
    pub fn compose(self, other: Self) -> Self {
        Self::ALL[(self as usize + other as usize) % 4]
    }

    pub fn inverse(self) -> Self {
        Self::ALL[(4 - self as usize) % 4]
    }
}

/// Exact counterclockwise rotation of a square image. A source pixel at
/// `(row i, col j)` lands at `(W-1-j, i)` for a quarter turn.
pub fn rotate(img: &ImageTensor, angle: RotationAngle) -> Result<ImageTensor> {
    if !img.is_square() {
        return Err(Error::NonSquare {
            height: img.height,
            width: img.width,
        });
    }
    let n = img.width;
    if angle == RotationAngle::Deg0 {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(img.data.len());
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = match angle {
                RotationAngle::Deg0 => (r, c),
                RotationAngle::Deg90 => (c, n - 1 - r),
                RotationAngle::Deg180 => (n - 1 - r, n - 1 - c),
                RotationAngle::Deg270 => (n - 1 - c, r),
            };
            data.extend_from_slice(&img.pixel(sr, sc));
        }
    }
    Ok(ImageTensor {
        height: n,
        width: n,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// Every image under all four rotations.
    #[default]
    AllFour,
    /// Every image once, under a uniformly drawn rotation.
    RandomOne,
}

impl Expansion {
    /// Number of batch instances produced per source image.
    pub fn multiplicity(self) -> usize {
        match self {
            Expansion::AllFour => 4,
            Expansion::RandomOne => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationBatch {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub expansion: Expansion,
}

/// Draws the rotation for each source image (empty for all-four mode).
pub fn draw_angles<R: Rng + ?Sized>(n: usize, expansion: Expansion, rng: &mut R) -> Vec<Vec<RotationAngle>> {
    (0..n)
        .map(|_| match expansion {
            Expansion::AllFour => RotationAngle::ALL.to_vec(),
            Expansion::RandomOne => vec![RotationAngle::ALL[rng.random_range(0..4)]],
        })
        .collect()
}

pub fn make_rotation_batch<R: Rng + ?Sized>(
    imgs: &[ImageTensor],
    expansion: Expansion,
    rng: &mut R,
) -> Result<RotationBatch> {
    if imgs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let angles = draw_angles(imgs.len(), expansion, rng);
    let mut images = Vec::with_capacity(imgs.len() * expansion.multiplicity());
    let mut labels = Vec::with_capacity(images.capacity());
    for (img, angles) in imgs.iter().zip(angles) {
        for angle in angles {
            images.push(rotate(img, angle)?);
            labels.push(angle.class_index());
        }
    }
    Ok(RotationBatch {
        images,
        labels,
        expansion,
    })
}

/// A label-free auxiliary task: turns unlabeled images into a pseudo-labeled batch.
pub trait PretextTask {
    fn n_classes(&self) -> usize;
    fn name(&self) -> &'static str;
    fn make_batch(&self, imgs: &[ImageTensor], rng: &mut crate::rng::Stream) -> Result<RotationBatch>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationTask {
    pub expansion: Expansion,
}

impl PretextTask for RotationTask {
    fn n_classes(&self) -> usize {
        4
    }

    fn name(&self) -> &'static str {
        "rotation"
    }

    fn make_batch(&self, imgs: &[ImageTensor], rng: &mut crate::rng::Stream) -> Result<RotationBatch> {
        make_rotation_batch(imgs, self.expansion, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    fn indexed(n: usize) -> ImageTensor {
        let data = (0..n * n * 3).map(|i| i as f32).collect();
        ImageTensor::new(n, n, data).unwrap()
    }

    #[test]
    fn quarter_turn_matches_index_map() {
        let img = indexed(3);
        let out = rotate(&img, RotationAngle::Deg90).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(out.pixel(3 - 1 - j, i), img.pixel(i, j));
            }
        }
    }

    #[test]
    fn identity_and_inverse() {
        let img = indexed(5);
        assert_eq!(rotate(&img, RotationAngle::Deg0).unwrap(), img);
        let there = rotate(&img, RotationAngle::Deg90).unwrap();
        assert_eq!(rotate(&there, RotationAngle::Deg270).unwrap(), img);
    }

    #[test]
    fn non_square_rejected() {
        let img = ImageTensor::filled(3, 4, [0.0; 3]);
        assert!(matches!(
            rotate(&img, RotationAngle::Deg90),
            Err(Error::NonSquare { .. })
        ));
    }

    #[test]
    fn all_four_batch() {
        let imgs: Vec<_> = (0..20).map(|_| indexed(4)).collect();
        let batch = make_rotation_batch(&imgs, Expansion::AllFour, &mut stream_from_seed(0)).unwrap();
        assert_eq!(batch.images.len(), 80);
        for class in 0..4 {
            assert_eq!(batch.labels.iter().filter(|&&l| l == class).count(), 20);
        }
    }

    #[test]
    fn random_one_is_reproducible() {
        let imgs = vec![indexed(4)];
        let a = make_rotation_batch(&imgs, Expansion::RandomOne, &mut stream_from_seed(9)).unwrap();
        let b = make_rotation_batch(&imgs, Expansion::RandomOne, &mut stream_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images.len(), 1);
    }

    #[test]
    fn random_one_angle_frequencies() {
        let mut rng = stream_from_seed(77);
        let draws = draw_angles(10_000, Expansion::RandomOne, &mut rng);
        let mut counts = [0usize; 4];
        for d in draws {
            counts[d[0].class_index()] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.24..=0.26).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn empty_batch() {
        assert!(matches!(
            make_rotation_batch(&[], Expansion::AllFour, &mut stream_from_seed(0)),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn angle_algebra() {
        use RotationAngle::*;
        assert_eq!(Deg90.compose(Deg270), Deg0);
        assert_eq!(Deg180.compose(Deg270), Deg90);
        assert_eq!(Deg90.inverse(), Deg270);
        assert_eq!(RotationAngle::from_degrees(450), Some(Deg90));
        assert_eq!(RotationAngle::from_degrees(45), None);
    }
}
