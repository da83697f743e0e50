//! Procedural class glyphs: seven-segment strokes with per-sample jitter.

use rand::Rng;

// Segment bits: a=0 (top), b=1 (upper right), c=2 (lower right), d=3 (bottom),
// e=4 (lower left), f=5 (upper left), g=6 (middle).
const DIGITS: [u8; 10] = [
    0b011_1111, // 0
    0b000_0110, // 1
    0b101_1011, // 2
    0b100_1111, // 3
    0b110_0110, // 4
    0b110_1101, // 5
    0b111_1101, // 6
    0b000_0111, // 7
    0b111_1111, // 8
    0b110_1111, // 9
];

const STROKE_DROPOUT: f64 = 0.08;
const SPECKLE_RATE: f64 = 0.02;

/// Segment bitmask for a class. Classes 0..10 use digit shapes; further classes
/// take the remaining non-empty masks in increasing order.
pub fn segment_mask(class: usize) -> u8 {
    if class < DIGITS.len() {
        return DIGITS[class];
    }
    let mut extra = (1u8..0x80).filter(|m| !DIGITS.contains(m));
    extra
        .nth(class - DIGITS.len())
        .expect("at most 127 distinct glyph classes")
}

/// Row-major `height × width` stroke intensity in `[0, 1]`.
pub(crate) fn render<R: Rng>(class: usize, height: usize, width: usize, rng: &mut R) -> Vec<f64> {
    let mask = segment_mask(class);
    let bw = (width / 2).max(4);
    let bh = (height * 3 / 4).max(6);
    let t = (height / 8).max(1);
    let max_dx = (width / 8) as i64;
    let max_dy = (height / 16) as i64;
    let dx = rng.random_range(-max_dx..=max_dx);
    let dy = rng.random_range(-max_dy..=max_dy);
    let x0 = (width - bw) as i64 / 2 + dx;
    let y0 = (height - bh) as i64 / 2 + dy;
    let mid = y0 + bh as i64 / 2;
    let (bw, bh, t) = (bw as i64, bh as i64, t as i64);

    // (x range, y range) per segment.
    let segs: [((i64, i64), (i64, i64)); 7] = [
        ((x0, x0 + bw), (y0, y0 + t)),
        ((x0 + bw - t, x0 + bw), (y0, mid)),
        ((x0 + bw - t, x0 + bw), (mid, y0 + bh)),
        ((x0, x0 + bw), (y0 + bh - t, y0 + bh)),
        ((x0, x0 + t), (mid, y0 + bh)),
        ((x0, x0 + t), (y0, mid)),
        ((x0, x0 + bw), (mid - t / 2, mid - t / 2 + t)),
    ];
    let mut on = vec![false; height * width];
    for (bit, ((xa, xb), (ya, yb))) in segs.iter().enumerate() {
        if mask & (1 << bit) == 0 {
            continue;
        }
        for y in (*ya).max(0)..(*yb).min(height as i64) {
            for x in (*xa).max(0)..(*xb).min(width as i64) {
                on[y as usize * width + x as usize] = true;
            }
        }
    }
    on.into_iter()
        .map(|lit| {
            if lit {
                if rng.random::<f64>() < STROKE_DROPOUT {
                    0.0
                } else {
                    rng.random_range(0.75..=1.0)
                }
            } else if rng.random::<f64>() < SPECKLE_RATE {
                rng.random_range(0.2..=0.6)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_are_distinct() {
        let masks: Vec<u8> = (0..40).map(segment_mask).collect();
        for i in 0..masks.len() {
            assert_ne!(masks[i], 0);
            for j in 0..i {
                assert_ne!(masks[i], masks[j], "classes {i} and {j} share a glyph");
            }
        }
    }

    #[test]
    fn eight_lights_more_than_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lit = |c| {
            render(c, 16, 16, &mut ChaCha8Rng::seed_from_u64(0))
                .iter()
                .filter(|&&v| v > 0.7)
                .count()
        };
        assert!(lit(8) > 2 * lit(1));
        let img = render(3, 16, 16, &mut rng);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
