use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, ImagingError};

/// Pixel adjacency used when grouping set pixels into regions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    /// Diagonal neighbours join regions.
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// A maximal connected set of mask pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Member pixels as `(row, col)`, in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
}

impl Region {
    fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable();
        let n = pixels.len() as f64;
        let (sr, sc) = pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        Self {
            centroid: (sr / n, sc / n),
            pixels,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn to_mask(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_pixels(height, width, &self.pixels)
    }
}

/// Labels the set pixels of `mask` into maximal connected regions.
///
/// Regions are returned ordered by their smallest row-major pixel index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Region> {
    let (h, w) = mask.shape();
    let bits = mask.bits();
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..h * w {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            pixels.push((r, c));
            for &(dr, dc) in connectivity.offsets() {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if bits[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        regions.push(Region::from_pixels(pixels));
    }
    regions
}

/// Arithmetic mean `(row, col)` of the set pixels.
pub fn centroid(mask: &BinaryMask) -> Result<(f64, f64), ImagingError> {
    let mut n = 0usize;
    let (mut sr, mut sc) = (0.0, 0.0);
    for (r, c) in mask.set_pixels() {
        n += 1;
        sr += r as f64;
        sc += c as f64;
    }
    if n == 0 {
        return Err(ImagingError::EmptyMask);
    }
    Ok((sr / n as f64, sc / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(connected_components(&BinaryMask::empty(8, 8), Connectivity::Eight).is_empty());
    }

    #[test]
    fn full_mask_is_one_region() {
        let regions = connected_components(&BinaryMask::full(8, 8), Connectivity::Four);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area(), 64);
        assert_eq!(regions[0].centroid, (3.5, 3.5));
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let mask = BinaryMask::from_pixels(4, 4, &[(0, 0), (1, 1)]);
        assert_eq!(connected_components(&mask, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&mask, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn regions_ordered_by_first_pixel() {
        // Isolated pixels; the one on row 0 sits furthest right.
        let mask = BinaryMask::from_pixels(3, 5, &[(0, 4), (1, 0), (2, 2)]);
        let regions = connected_components(&mask, Connectivity::Four);
        let firsts: Vec<_> = regions.iter().map(|r| r.pixels[0]).collect();
        assert_eq!(firsts, vec![(0, 4), (1, 0), (2, 2)]);
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&BinaryMask::from_pixels(8, 8, &[(3, 4)])).unwrap(), (3.0, 4.0));
        let block = BinaryMask::from_pixels(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(centroid(&block).unwrap(), (0.5, 0.5));
        let corners = BinaryMask::from_pixels(3, 3, &[(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(centroid(&corners).unwrap(), (1.0, 1.0));
        assert_eq!(centroid(&BinaryMask::empty(2, 2)), Err(ImagingError::EmptyMask));
    }

    #[test]
    fn connectivity_parses_from_number() {
        assert_eq!(Connectivity::try_from(4u8), Ok(Connectivity::Four));
        assert!(Connectivity::try_from(6u8).is_err());
        assert_eq!(Connectivity::default(), Connectivity::Eight);
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |bits| BinaryMask::new(h, w, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn components_partition_the_mask(mask in mask_strategy(), eight in any::<bool>()) {
            let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
            let regions = connected_components(&mask, conn);
            let total: usize = regions.iter().map(Region::area).sum();
            prop_assert_eq!(total, mask.count());
            let mut cover = BinaryMask::empty(mask.height(), mask.width());
            for region in &regions {
                for &(r, c) in &region.pixels {
                    prop_assert!(!cover.get(r, c), "regions overlap");
                    cover.set(r, c, true);
                }
            }
            prop_assert_eq!(cover, mask);
        }

        #[test]
        fn component_count_is_translation_invariant(mask in mask_strategy(), dr in 0usize..4, dc in 0usize..4) {
            let (h, w) = mask.shape();
            let shifted = BinaryMask::from_fn(h + dr, w + dc, |r, c| {
                r >= dr && c >= dc && mask.get(r - dr, c - dc)
            });
            for conn in [Connectivity::Four, Connectivity::Eight] {
                prop_assert_eq!(
                    connected_components(&mask, conn).len(),
                    connected_components(&shifted, conn).len()
                );
            }
        }

        #[test]
        fn union_centroid_is_area_weighted(mask in mask_strategy()) {
            let regions = connected_components(&mask, Connectivity::Four);
            if regions.len() >= 2 {
                let (a, b) = (&regions[0], &regions[1]);
                let union = a.to_mask(mask.height(), mask.width()).union(&b.to_mask(mask.height(), mask.width()));
                let (ur, uc) = centroid(&union).unwrap();
                let (na, nb) = (a.area() as f64, b.area() as f64);
                let er = (a.centroid.0 * na + b.centroid.0 * nb) / (na + nb);
                let ec = (a.centroid.1 * na + b.centroid.1 * nb) / (na + nb);
                prop_assert!((ur - er).abs() < 1e-9 && (uc - ec).abs() < 1e-9);
            }
        }
    }
}
