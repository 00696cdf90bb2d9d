use std::collections::VecDeque;

use super::MutantError;
use crate::imaging::Image;

/// Superpixel labelling: every pixel carries a segment id in `0..k`, every
/// segment is non-empty and 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    count: usize,
}

impl Segmentation {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self, MutantError> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(MutantError::InvalidParams(format!(
                "expected {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let count = labels.iter().max().map_or(0, |&m| m + 1);
        let mut sizes = vec![0usize; count];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(MutantError::InvalidParams(format!("segment {empty} is empty")));
        }
        let seg = Self {
            height,
            width,
            labels,
            count,
        };
        let (_, pieces) = seg.label_components();
        if pieces != count {
            return Err(MutantError::InvalidParams(
                "every segment must be 4-connected".into(),
            ));
        }
        Ok(seg)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.count
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// 4-connected components of equal-label pixels: per-pixel component id
    /// (numbered in row-major order of first pixel) and the component count.
    fn label_components(&self) -> (Vec<usize>, usize) {
        components_of(&self.labels, self.height, self.width)
    }
}

fn components_of(labels: &[usize], h: usize, w: usize) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; h * w];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let mut visit = |n: usize| {
                if comp[n] == usize::MAX && labels[n] == labels[i] {
                    comp[n] = next;
                    queue.push_back(n);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        next += 1;
    }
    (comp, next)
}

const ITERATIONS: usize = 10;
const COMPACTNESS: f64 = 0.1;

/// SLIC-style superpixels: k-means over (intensity, position) seeded on a
/// regular grid of roughly `target_k` tiles, followed by a connectivity pass
/// that merges stray fragments into the adjacent segment of closest mean
/// intensity. A constant image yields the seeding grid unchanged.
///
/// The result never has more than `target_k` segments.
pub fn segment_image(image: &Image, target_k: usize) -> Result<Segmentation, MutantError> {
    let (h, w) = image.shape();
    if target_k == 0 || target_k > h * w {
        return Err(MutantError::InvalidParams(format!(
            "target segment count {target_k} must be in 1..={}",
            h * w
        )));
    }
    let (rows, cols) = grid_shape(h, w, target_k);
    let grid: Vec<usize> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            (r * rows / h) * cols + c * cols / w
        })
        .collect();

    let first = image.pixel(0);
    let constant = (0..h * w).all(|i| image.pixel(i) == first);
    let labels = if constant {
        grid
    } else {
        let clustered = kmeans(image, grid, rows * cols, (h * w) as f64 / (rows * cols) as f64);
        enforce_connectivity(image, &clustered)
    };
    let seg = Segmentation::new(h, w, labels)?;
    debug_assert!(seg.segment_count() <= target_k);
    Ok(seg)
}

/// Tile rows × cols with `rows·cols ≤ target_k`, aspect-matched to the image.
fn grid_shape(h: usize, w: usize, target_k: usize) -> (usize, usize) {
    let rows = ((target_k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(target_k));
    let cols = (target_k / rows).clamp(1, w);
    (rows, cols)
}

struct Center {
    color: Vec<f64>,
    row: f64,
    col: f64,
}

fn kmeans(image: &Image, mut labels: Vec<usize>, k: usize, area_per_cluster: f64) -> Vec<usize> {
    let (h, w) = image.shape();
    let ch = image.channels();
    let step = area_per_cluster.sqrt();
    let spatial_weight = (COMPACTNESS / step).powi(2);
    let reach = (2.0 * step).ceil() as isize;

    for _ in 0..ITERATIONS {
        let centers = cluster_centers(image, &labels, k);
        let mut best = vec![f64::INFINITY; h * w];
        let mut next = labels.clone();
        for (id, center) in centers.iter().enumerate() {
            let Some(center) = center else { continue };
            let r0 = (center.row.round() as isize - reach).max(0) as usize;
            let r1 = ((center.row.round() as isize + reach + 1).max(0) as usize).min(h);
            let c0 = (center.col.round() as isize - reach).max(0) as usize;
            let c1 = ((center.col.round() as isize + reach + 1).max(0) as usize).min(w);
            for r in r0..r1 {
                for c in c0..c1 {
                    let idx = r * w + c;
                    let color: f64 = image
                        .pixel(idx)
                        .iter()
                        .zip(&center.color)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        / ch as f64;
                    let spatial = (r as f64 - center.row).powi(2) + (c as f64 - center.col).powi(2);
                    let d = color + spatial * spatial_weight;
                    if d < best[idx] {
                        best[idx] = d;
                        next[idx] = id;
                    }
                }
            }
        }
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn cluster_centers(image: &Image, labels: &[usize], k: usize) -> Vec<Option<Center>> {
    let w = image.width();
    let ch = image.channels();
    let mut sums = vec![(vec![0.0; ch], 0.0, 0.0, 0usize); k];
    for (idx, &l) in labels.iter().enumerate() {
        let entry = &mut sums[l];
        for (s, v) in entry.0.iter_mut().zip(image.pixel(idx)) {
            *s += v;
        }
        entry.1 += (idx / w) as f64;
        entry.2 += (idx % w) as f64;
        entry.3 += 1;
    }
    sums.into_iter()
        .map(|(color, sr, sc, n)| {
            (n > 0).then(|| {
                let n = n as f64;
                Center {
                    color: color.into_iter().map(|v| v / n).collect(),
                    row: sr / n,
                    col: sc / n,
                }
            })
        })
        .collect()
}

/// Keeps the largest 4-connected piece of each label and merges every other
/// piece into the neighbouring group whose mean intensity is closest.
fn enforce_connectivity(image: &Image, labels: &[usize]) -> Vec<usize> {
    let (h, w) = image.shape();
    let intensity = image.intensities();
    let (comp, n) = components_of(labels, h, w);

    let mut size = vec![0usize; n];
    let mut sum = vec![0.0; n];
    let mut comp_label = vec![0usize; n];
    for i in 0..h * w {
        size[comp[i]] += 1;
        sum[comp[i]] += intensity[i];
        comp_label[comp[i]] = labels[i];
    }
    let label_count = labels.iter().max().map_or(0, |&m| m + 1);
    let mut largest: Vec<Option<usize>> = vec![None; label_count];
    for c in 0..n {
        let slot = &mut largest[comp_label[c]];
        if slot.is_none_or(|best| size[c] > size[best]) {
            *slot = Some(c);
        }
    }
    let mut anchored = vec![false; n];
    for c in largest.into_iter().flatten() {
        anchored[c] = true;
    }

    let mut neighbours = vec![Vec::new(); n];
    for i in 0..h * w {
        let (r, c) = (i / w, i % w);
        for j in [(c + 1 < w).then(|| i + 1), (r + 1 < h).then(|| i + w)].into_iter().flatten() {
            if comp[i] != comp[j] {
                neighbours[comp[i]].push(comp[j]);
                neighbours[comp[j]].push(comp[i]);
            }
        }
    }
    for list in &mut neighbours {
        list.sort_unstable();
        list.dedup();
    }

    // Union-find over components; a root is "anchored" once it holds the
    // largest piece of some label.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    loop {
        let mut merged_any = false;
        let mut pending = false;
        for c in 0..n {
            let root = find(&mut parent, c);
            if anchored[root] || root != c {
                continue;
            }
            pending = true;
            let mut candidates: Vec<usize> = neighbours[root]
                .clone()
                .into_iter()
                .map(|nb| find(&mut parent, nb))
                .filter(|&r| r != root)
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            let own_mean = sum[root] / size[root] as f64;
            let pick = candidates
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let key = |x: usize| {
                        (
                            !anchored[x],
                            ((sum[x] / size[x] as f64) - own_mean).abs(),
                        )
                    };
                    let (ka, kb) = (key(a), key(b));
                    ka.0.cmp(&kb.0)
                        .then(ka.1.total_cmp(&kb.1))
                        .then(a.cmp(&b))
                });
            if let Some(target) = pick {
                parent[root] = target;
                size[target] += size[root];
                sum[target] += sum[root];
                let moved = std::mem::take(&mut neighbours[root]);
                neighbours[target].extend(moved);
                merged_any = true;
            }
        }
        if !pending || !merged_any {
            break;
        }
    }

    // Relabel roots by order of first appearance.
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = Vec::with_capacity(h * w);
    for &c in &comp {
        let root = find(&mut parent, c);
        if ids[root] == usize::MAX {
            ids[root] = next;
            next += 1;
        }
        out.push(ids[root]);
    }
    out
}
