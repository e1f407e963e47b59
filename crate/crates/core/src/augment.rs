//! Deterministic weak augmentation for scoring and stochastic strong
//! augmentation for training pairs.
//!
//! The weak view is a pure flip: no randomness, an involution, and the
//! same output on every call, which keeps contrast scores consistent
//! across invocations. Strong views draw their parameters from a
//! substream keyed by (iteration, arrival index, view index).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeding;
use crate::stream::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataLayout {
    Vector {
        len: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl DataLayout {
    pub fn numel(&self) -> usize {
        match *self {
            DataLayout::Vector { len } => len,
            DataLayout::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentorConfig {
    pub layout: DataLayout,
    /// Additive Gaussian noise for vector data.
    pub noise_sigma: f64,
    /// Fraction of contiguous coordinates zeroed for vector data.
    pub mask_fraction: f64,
    /// Crop fraction range for image data; [1, 1] disables cropping.
    pub crop_min: f64,
    pub crop_max: f64,
    pub seed: u64,
}

pub struct Augmentor {
    cfg: AugmentorConfig,
}

impl Augmentor {
    pub fn new(cfg: AugmentorConfig) -> Result<Self> {
        if !(cfg.crop_min > 0.0 && cfg.crop_min <= cfg.crop_max && cfg.crop_max <= 1.0) {
            return Err(Error::Config(format!(
                "crop fraction range ({}, {}) must lie within (0, 1]",
                cfg.crop_min, cfg.crop_max
            )));
        }
        if cfg.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise sigma must be non-negative, got {}",
                cfg.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&cfg.mask_fraction) {
            return Err(Error::Config(format!(
                "mask fraction must be in [0, 1), got {}",
                cfg.mask_fraction
            )));
        }
        Ok(Augmentor { cfg })
    }

    pub fn layout(&self) -> &DataLayout {
        &self.cfg.layout
    }

    /// Deterministic flipped view: width reversal for images, index
    /// reversal for vectors. Consumes no random state.
    pub fn weak_view(&self, x: &Sample) -> Sample {
        let features = match self.cfg.layout {
            DataLayout::Vector { .. } => {
                let mut f = x.features.clone();
                f.reverse();
                f
            }
            DataLayout::Image {
                channels,
                height,
                width,
            } => {
                let mut f = x.features.clone();
                for c in 0..channels {
                    for h in 0..height {
                        let row = (c * height + h) * width;
                        f[row..row + width].reverse();
                    }
                }
                f
            }
        };
        Sample::new(x.id, features, x.label_raw(), x.arrival_index)
    }

    /// Two independently augmented views of one sample. Each view draws
    /// its parameters from its own substream, so evaluation order has no
    /// effect on any other draw in the run.
    pub fn strong_pair(&self, x: &Sample, iteration: u64) -> (Sample, Sample) {
        let a = self.strong_view(x, iteration, 0);
        let b = self.strong_view(x, iteration, 1);
        (a, b)
    }

    fn strong_view(&self, x: &Sample, iteration: u64, view: u64) -> Sample {
        let mut rng = seeding::substream(self.cfg.seed, &[iteration, x.arrival_index, view]);
        let features = match self.cfg.layout {
            DataLayout::Vector { .. } => self.strong_vector(&x.features, &mut rng),
            DataLayout::Image {
                channels,
                height,
                width,
            } => self.strong_image(&x.features, channels, height, width, &mut rng),
        };
        Sample::new(x.id, features, x.label_raw(), x.arrival_index)
    }

    fn strong_vector(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = features.to_vec();
        if self.cfg.noise_sigma > 0.0 {
            for v in out.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v += self.cfg.noise_sigma * n;
            }
        }
        let mask_len = (self.cfg.mask_fraction * out.len() as f64).round() as usize;
        if mask_len > 0 {
            let start = rng.random_range(0..=out.len() - mask_len);
            for v in &mut out[start..start + mask_len] {
                *v = 0.0;
            }
        }
        out
    }

    fn strong_image(
        &self,
        features: &[f64],
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let frac = if self.cfg.crop_min == self.cfg.crop_max {
            self.cfg.crop_min
        } else {
            rng.random_range(self.cfg.crop_min..=self.cfg.crop_max)
        };
        let crop_h = ((height as f64 * frac).round() as usize).clamp(1, height);
        let crop_w = ((width as f64 * frac).round() as usize).clamp(1, width);
        if crop_h == height && crop_w == width {
            return features.to_vec();
        }
        let off_h = rng.random_range(0..=height - crop_h);
        let off_w = rng.random_range(0..=width - crop_w);
        // Crop then nearest-neighbor resize back to the original size.
        let mut out = Vec::with_capacity(features.len());
        for c in 0..channels {
            for i in 0..height {
                let src_i = off_h + i * crop_h / height;
                for j in 0..width {
                    let src_j = off_w + j * crop_w / width;
                    out.push(features[(c * height + src_i) * width + src_j]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector_augmentor(len: usize, sigma: f64, mask: f64) -> Augmentor {
        Augmentor::new(AugmentorConfig {
            layout: DataLayout::Vector { len },
            noise_sigma: sigma,
            mask_fraction: mask,
            crop_min: 1.0,
            crop_max: 1.0,
            seed: 77,
        })
        .unwrap()
    }

    fn sample(features: Vec<f64>) -> Sample {
        Sample::new(1, features, 0, 42)
    }

    #[test]
    fn weak_view_reverses_vectors() {
        let aug = vector_augmentor(3, 0.0, 0.0);
        let v = aug.weak_view(&sample(vec![1.0, 2.0, 3.0]));
        assert_eq!(v.features, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn weak_view_flips_image_rows() {
        let aug = Augmentor::new(AugmentorConfig {
            layout: DataLayout::Image {
                channels: 1,
                height: 2,
                width: 3,
            },
            noise_sigma: 0.0,
            mask_fraction: 0.0,
            crop_min: 1.0,
            crop_max: 1.0,
            seed: 0,
        })
        .unwrap();
        let v = aug.weak_view(&sample(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(v.features, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }

    #[test]
    fn weak_view_is_deterministic() {
        let aug = vector_augmentor(4, 0.0, 0.0);
        let x = sample(vec![0.5, -1.0, 2.0, 7.0]);
        assert_eq!(aug.weak_view(&x).features, aug.weak_view(&x).features);
    }

    #[test]
    fn disabled_strong_ops_return_the_input() {
        let aug = vector_augmentor(3, 0.0, 0.0);
        let x = sample(vec![1.0, 2.0, 3.0]);
        let (a, b) = aug.strong_pair(&x, 5);
        assert_eq!(a.features, x.features);
        assert_eq!(b.features, x.features);
    }

    #[test]
    fn strong_pair_is_deterministic_per_seed_and_counter() {
        let aug = vector_augmentor(6, 0.3, 0.2);
        let x = sample(vec![1.0, -2.0, 3.0, 0.0, 4.0, -1.0]);
        let (a1, b1) = aug.strong_pair(&x, 9);
        let (a2, b2) = aug.strong_pair(&x, 9);
        assert_eq!(a1.features, a2.features);
        assert_eq!(b1.features, b2.features);
        // The two views draw independently.
        assert_ne!(a1.features, b1.features);
        // A different iteration produces different draws.
        let (a3, _) = aug.strong_pair(&x, 10);
        assert_ne!(a1.features, a3.features);
    }

    #[test]
    fn strong_pair_does_not_mutate_the_source() {
        let aug = vector_augmentor(4, 0.5, 0.25);
        let x = sample(vec![1.0, 2.0, 3.0, 4.0]);
        let before = x.features.clone();
        let _ = aug.strong_pair(&x, 0);
        assert_eq!(x.features, before);
    }

    #[test]
    fn image_crop_preserves_shape() {
        let aug = Augmentor::new(AugmentorConfig {
            layout: DataLayout::Image {
                channels: 2,
                height: 4,
                width: 5,
            },
            noise_sigma: 0.0,
            mask_fraction: 0.0,
            crop_min: 0.5,
            crop_max: 0.9,
            seed: 3,
        })
        .unwrap();
        let x = sample((0..40).map(f64::from).collect());
        let (a, b) = aug.strong_pair(&x, 1);
        assert_eq!(a.features.len(), 40);
        assert_eq!(b.features.len(), 40);
    }

    #[test]
    fn invalid_config_is_rejected() {
        for (crop_min, crop_max, sigma, mask) in [
            (0.0, 1.0, 0.1, 0.1),
            (0.5, 1.2, 0.1, 0.1),
            (0.8, 0.5, 0.1, 0.1),
            (1.0, 1.0, -0.1, 0.1),
            (1.0, 1.0, 0.1, 1.0),
        ] {
            let r = Augmentor::new(AugmentorConfig {
                layout: DataLayout::Vector { len: 4 },
                noise_sigma: sigma,
                mask_fraction: mask,
                crop_min,
                crop_max,
                seed: 0,
            });
            assert!(r.is_err(), "{crop_min} {crop_max} {sigma} {mask}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weak_view_is_an_involution_on_vectors(
                v in proptest::collection::vec(-10.0f64..10.0, 1..24)
            ) {
                let aug = vector_augmentor(v.len(), 0.0, 0.0);
                let x = sample(v.clone());
                let twice = aug.weak_view(&aug.weak_view(&x));
                prop_assert_eq!(twice.features, v);
            }

            #[test]
            fn weak_view_is_an_involution_on_images(
                c in 1usize..3, h in 1usize..5, w in 1usize..6,
            ) {
                let n = c * h * w;
                let v: Vec<f64> = (0..n).map(|i| i as f64).collect();
                let aug = Augmentor::new(AugmentorConfig {
                    layout: DataLayout::Image { channels: c, height: h, width: w },
                    noise_sigma: 0.0,
                    mask_fraction: 0.0,
                    crop_min: 1.0,
                    crop_max: 1.0,
                    seed: 0,
                }).unwrap();
                let x = sample(v.clone());
                let once = aug.weak_view(&x);
                prop_assert_eq!(once.features.len(), n);
                let twice = aug.weak_view(&once);
                prop_assert_eq!(twice.features, v);
            }

            #[test]
            fn strong_views_preserve_shape(
                v in proptest::collection::vec(-10.0f64..10.0, 2..24),
                iter in 0u64..100
            ) {
                let aug = vector_augmentor(v.len(), 0.2, 0.3);
                let x = sample(v.clone());
                let (a, b) = aug.strong_pair(&x, iter);
                prop_assert_eq!(a.features.len(), v.len());
                prop_assert_eq!(b.features.len(), v.len());
            }
        }
    }
}
