use rand::Rng;

use super::rng::{stream_rng, Stream};
use super::MutantError;
use crate::imaging::Rect;

/// A rectangle split at one interior point into four tiles:
/// top-left, top-right, bottom-left, bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub parent: Rect,
    pub parts: [Rect; 4],
}

/// Splits `rect` at a uniformly drawn interior point so that all four tiles
/// are at least one pixel on each side.
pub fn rex_partition(rect: Rect, seed: u64) -> Result<Partition, MutantError> {
    if rect.height() < 2 || rect.width() < 2 {
        return Err(MutantError::RectTooSmall {
            height: rect.height(),
            width: rect.width(),
        });
    }
    let mut rng = stream_rng(seed, Stream::RexPartition, 0);
    let row = rng.random_range(rect.row0 + 1..rect.row1);
    let col = rng.random_range(rect.col0 + 1..rect.col1);
    Ok(Partition {
        parent: rect,
        parts: [
            Rect::new(rect.row0, rect.col0, row, col),
            Rect::new(rect.row0, col, row, rect.col1),
            Rect::new(row, rect.col0, rect.row1, col),
            Rect::new(row, col, rect.row1, rect.col1),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_has_one_split() {
        let p = rex_partition(Rect::new(3, 5, 5, 7), 123).unwrap();
        assert_eq!(
            p.parts,
            [
                Rect::new(3, 5, 4, 6),
                Rect::new(3, 6, 4, 7),
                Rect::new(4, 5, 5, 6),
                Rect::new(4, 6, 5, 7),
            ]
        );
    }

    #[test]
    fn deterministic_for_seed() {
        let r = Rect::full(256, 256);
        assert_eq!(rex_partition(r, 77).unwrap(), rex_partition(r, 77).unwrap());
    }

    #[test]
    fn too_small() {
        assert_eq!(
            rex_partition(Rect::new(0, 0, 1, 5), 0),
            Err(MutantError::RectTooSmall { height: 1, width: 5 })
        );
    }

    proptest! {
        #[test]
        fn tiles_cover_parent_exactly(r0 in 0usize..20, c0 in 0usize..20, h in 2usize..40, w in 2usize..40, seed in any::<u64>()) {
            let rect = Rect::new(r0, c0, r0 + h, c0 + w);
            let p = rex_partition(rect, seed).unwrap();
            prop_assert_eq!(p.parts.iter().map(Rect::area).sum::<usize>(), rect.area());
            for (i, a) in p.parts.iter().enumerate() {
                prop_assert!(a.area() >= 1);
                for b in &p.parts[i + 1..] {
                    prop_assert!(!a.intersects(b));
                }
            }
        }
    }
}
