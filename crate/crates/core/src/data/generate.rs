use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{glyph, load_idx, BiasedDataset, DataSource, DatasetSpec, IdxDigits, ImageSize, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed;

/// Conflict ratio of the validation and test splits; with ten classes this
/// makes colour independent of the label.
pub const UNBIASED_RHO: f64 = 0.9;

/// Background tint strength for the second bias attribute.
const BACKGROUND_LEVEL: f64 = 0.5;

pub fn generate_biased_dataset(spec: &DatasetSpec) -> Result<BiasedDataset> {
    spec.validate()?;
    let mut color_rng = seed::stream(spec.seed, seed::COLORS);
    let palettes: Vec<Vec<[f64; 3]>> = (0..spec.n_bias_attributes)
        .map(|_| {
            (0..spec.n_classes)
                .map(|_| [color_rng.random(), color_rng.random(), color_rng.random()])
                .collect()
        })
        .collect();

    let (train, val, test) = match &spec.source {
        DataSource::Procedural => {
            let make = |tag, n, rho| -> Vec<LabeledSample> {
                (0..n)
                    .map(|i| procedural_sample(spec, &palettes, tag, i, rho))
                    .collect()
            };
            (
                make(seed::SPLIT_TRAIN, spec.n_train, spec.rho),
                make(seed::SPLIT_VAL, spec.n_val, UNBIASED_RHO),
                make(seed::SPLIT_TEST, spec.n_test, UNBIASED_RHO),
            )
        }
        DataSource::ExternalIdx { dir } => {
            let train_src = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test_src = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            if train_src.images.len() < spec.n_train + spec.n_val || test_src.images.len() < spec.n_test {
                return Err(Error::Config(format!(
                    "IDX corpus too small: {} train / {} test images available",
                    train_src.images.len(),
                    test_src.images.len()
                )));
            }
            let colorize = |src: &IdxDigits, tag, range: std::ops::Range<usize>, rho| {
                range
                    .enumerate()
                    .map(|(i, j)| external_sample(spec, &palettes, src, j, tag, i, rho))
                    .collect::<Result<Vec<_>>>()
            };
            (
                colorize(&train_src, seed::SPLIT_TRAIN, 0..spec.n_train, spec.rho)?,
                colorize(
                    &train_src,
                    seed::SPLIT_VAL,
                    spec.n_train..spec.n_train + spec.n_val,
                    UNBIASED_RHO,
                )?,
                colorize(&test_src, seed::SPLIT_TEST, 0..spec.n_test, UNBIASED_RHO)?,
            )
        }
    };
    Ok(BiasedDataset {
        spec: spec.clone(),
        palettes,
        train,
        val,
        test,
    })
}

/// Bias value per attribute and its alignment flag.
fn draw_bias<R: Rng>(
    rng: &mut R,
    target: usize,
    n_classes: usize,
    n_attrs: usize,
    rho: f64,
) -> (Vec<usize>, Vec<bool>) {
    (0..n_attrs)
        .map(|_| {
            let u: f64 = rng.random();
            if u < rho {
                // Uniform over the other classes.
                let k = rng.random_range(0..n_classes - 1);
                (if k >= target { k + 1 } else { k }, false)
            } else {
                (target, true)
            }
        })
        .unzip()
}

fn jittered_color<R: Rng>(rng: &mut R, base: [f64; 3], sigma: f64) -> [f64; 3] {
    base.map(|c| {
        let n: f64 = StandardNormal.sample(rng);
        (c + sigma * n).clamp(0.0, 1.0)
    })
}

fn paint<R: Rng>(
    rng: &mut R,
    intensity: &[f64],
    size: ImageSize,
    spec: &DatasetSpec,
    palettes: &[Vec<[f64; 3]>],
    bias_values: &[usize],
) -> Tensor {
    let fg = jittered_color(rng, palettes[0][bias_values[0]], spec.color_sigma);
    let bg = if bias_values.len() > 1 {
        jittered_color(rng, palettes[1][bias_values[1]], spec.color_sigma).map(|c| c * BACKGROUND_LEVEL)
    } else {
        [0.0; 3]
    };
    let plane = size.height * size.width;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        for (p, &m) in intensity.iter().enumerate() {
            data[c * plane + p] = m * fg[c] + (1.0 - m) * bg[c];
        }
    }
    Tensor::new(vec![3, size.height, size.width], data).expect("sized above")
}

fn procedural_sample(
    spec: &DatasetSpec,
    palettes: &[Vec<[f64; 3]>],
    tag: u64,
    index: usize,
    rho: f64,
) -> LabeledSample {
    let mut rng = seed::indexed(spec.seed, tag, index as u64);
    let target = rng.random_range(0..spec.n_classes);
    let (bias_values, aligned) = draw_bias(&mut rng, target, spec.n_classes, spec.n_bias_attributes, rho);
    let size = spec.image_size;
    let intensity = glyph::render(target, size.height, size.width, &mut rng);
    let image = paint(&mut rng, &intensity, size, spec, palettes, &bias_values);
    LabeledSample {
        image,
        target,
        bias_values,
        aligned,
    }
}

fn external_sample(
    spec: &DatasetSpec,
    palettes: &[Vec<[f64; 3]>],
    src: &IdxDigits,
    source_index: usize,
    tag: u64,
    index: usize,
    rho: f64,
) -> Result<LabeledSample> {
    let target = src.labels[source_index] as usize;
    if target >= spec.n_classes {
        return Err(Error::Config(format!(
            "label {target} out of range for {} classes",
            spec.n_classes
        )));
    }
    let mut rng = seed::indexed(spec.seed, tag, index as u64);
    let (bias_values, aligned) = draw_bias(&mut rng, target, spec.n_classes, spec.n_bias_attributes, rho);
    let gray = &src.images[source_index];
    let size = ImageSize {
        height: gray.shape()[0],
        width: gray.shape()[1],
        channels: 3,
    };
    let image = paint(&mut rng, gray.data(), size, spec, palettes, &bias_values);
    Ok(LabeledSample {
        image,
        target,
        bias_values,
        aligned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_by_alignment;

    fn small(rho: f64, n: usize) -> DatasetSpec {
        DatasetSpec {
            n_train: n,
            n_val: 10,
            n_test: 50,
            rho,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn rho_one_conflicts_everywhere() {
        let spec = DatasetSpec {
            n_bias_attributes: 2,
            ..small(1.0, 300)
        };
        let ds = generate_biased_dataset(&spec).unwrap();
        for s in &ds.train {
            assert!(s.aligned.iter().all(|&a| !a));
            assert!(s.bias_values.iter().all(|&b| b != s.target));
        }
    }

    #[test]
    fn aligned_flag_matches_bias_value() {
        let ds = generate_biased_dataset(&small(0.3, 500)).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            assert_eq!(s.aligned[0], s.bias_values[0] == s.target);
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let a = generate_biased_dataset(&small(0.05, 200)).unwrap();
        let b = generate_biased_dataset(&small(0.05, 200)).unwrap();
        assert_eq!(a, b);
        let c = generate_biased_dataset(&DatasetSpec {
            seed: 6,
            ..small(0.05, 200)
        })
        .unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn aligned_samples_use_class_color() {
        let spec = DatasetSpec {
            color_sigma: 0.0,
            ..small(0.01, 100)
        };
        let ds = generate_biased_dataset(&spec).unwrap();
        let plane = 16 * 16;
        for s in ds.train.iter().filter(|s| s.is_aligned()) {
            let color = ds.palettes[0][s.target];
            // Any fully lit pixel is intensity * colour; ratios between channels match the palette.
            let k = (0..3).max_by(|&a, &b| color[a].total_cmp(&color[b])).unwrap();
            let px = |p: usize| s.image.data()[k * plane + p];
            let p = (0..plane).max_by(|&a, &b| px(a).total_cmp(&px(b))).unwrap();
            let m = px(p) / color[k];
            for (c, &col) in color.iter().enumerate() {
                assert!((s.image.data()[c * plane + p] - m * col).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conflicting_fraction_tracks_rho() {
        let n = 4000;
        let ds = generate_biased_dataset(&small(0.5, n)).unwrap();
        let (_, conflicting) = split_by_alignment(&ds.train);
        let frac = conflicting.len() as f64 / n as f64;
        let sd = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * sd, "fraction {frac}");
    }

    #[test]
    fn test_split_is_unbiased() {
        let spec = DatasetSpec {
            n_test: 3000,
            ..small(0.01, 10)
        };
        let ds = generate_biased_dataset(&spec).unwrap();
        let aligned = ds.test.iter().filter(|s| s.is_aligned()).count() as f64;
        let n = ds.test.len() as f64;
        let p = 1.0 - UNBIASED_RHO;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!((aligned / n - p).abs() < 3.0 * sd);
    }

    #[test]
    fn missing_external_files_name_the_path() {
        let spec = DatasetSpec {
            source: DataSource::ExternalIdx {
                dir: "/definitely/not/here".into(),
            },
            ..small(0.01, 10)
        };
        let err = generate_biased_dataset(&spec).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here/train-images-idx3-ubyte"));
    }
}
