//! Causal-responsibility explainer.
//!
//! Phase 1 refines random quadrant partitions of the image, crediting each
//! minimal sufficient set of parts. Phase 2 searches for a small square box,
//! centred on the responsibility peak, that still yields the target label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Budget, ExplainError, ExplainerConfig, Target};
use crate::imaging::{BinaryMask, Image, Occluder, OcclusionStrategy, Rect, SaliencyMap};
use crate::mutants::rng::{derive_seed, Stream};
use crate::mutants::rex_partition;
use crate::oracle::Oracle;

/// Responsibility credited to each part of a minimal sufficient set `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Award {
    /// `1/|S|`
    #[default]
    InverseSize,
    /// `1` regardless of `|S|`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RexParams {
    /// Refinement passes, each starting again from the whole image.
    pub iterations: usize,
    /// Refinement stops once a part's area is at most `min_part_side²`.
    pub min_part_side: usize,
    /// Grow/shrink/move step of the box search, in pixels.
    pub box_step: usize,
    pub min_box: usize,
    pub award: Award,
    /// Report accumulated responsibility instead of the per-visit average.
    pub landscape_sum: bool,
}

impl Default for RexParams {
    fn default() -> Self {
        Self {
            iterations: 20,
            min_part_side: 4,
            box_step: 4,
            min_box: 4,
            award: Award::InverseSize,
            landscape_sum: false,
        }
    }
}

/// Accumulated responsibility and per-pixel visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityLandscape {
    height: usize,
    width: usize,
    accumulated: Vec<f64>,
    visits: Vec<u32>,
}

impl ResponsibilityLandscape {
    fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            accumulated: vec![0.0; height * width],
            visits: vec![0; height * width],
        }
    }

    pub fn accumulated(&self) -> &[f64] {
        &self.accumulated
    }

    pub fn visits(&self) -> &[u32] {
        &self.visits
    }

    /// Responsibility divided by visit count; unvisited pixels are 0.
    pub fn averaged(&self) -> SaliencyMap {
        let values = self
            .accumulated
            .iter()
            .zip(&self.visits)
            .map(|(&a, &v)| if v == 0 { 0.0 } else { a / f64::from(v) })
            .collect();
        SaliencyMap::new(self.height, self.width, values).expect("finite responsibility")
    }

    pub fn saliency(&self, sum: bool) -> SaliencyMap {
        if sum {
            SaliencyMap::new(self.height, self.width, self.accumulated.clone())
                .expect("finite responsibility")
        } else {
            self.averaged()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RexOutput {
    pub landscape: ResponsibilityLandscape,
    pub mask: BinaryMask,
    /// The box behind `mask`; `None` when the search fell back to the whole
    /// image.
    pub box_rect: Option<Rect>,
    pub target: String,
    pub occlusion: OcclusionStrategy,
    pub queries: usize,
}

const SUBSETS: usize = 14;

/// Finds a passing box and the responsibility landscape behind it.
///
/// The first query is the unmodified image; if it does not carry the target
/// label there is nothing to explain. A quarter of the budget is held back
/// for the box search. The returned mask always passes: it is either a box
/// the oracle accepted or the whole image.
pub fn explain_rex(
    image: &Image,
    oracle: &dyn Oracle,
    cfg: &ExplainerConfig,
    params: &RexParams,
) -> Result<RexOutput, ExplainError> {
    cfg.validate()?;
    let (h, w) = image.shape();
    if h < 2 || w < 2 {
        return Err(ExplainError::InvalidParams(format!("image {h}x{w} is smaller than 2x2")));
    }
    if params.box_step == 0 || params.min_box == 0 {
        return Err(ExplainError::InvalidParams("box step and minimum box must be positive".into()));
    }
    let occlusion = cfg.occlusion.unwrap_or(OcclusionStrategy::Zero);
    let occluder = Occluder::new(image, occlusion, None)?;
    let mut budget = Budget::new(oracle, cfg.budget);

    let original = budget.query_one(image)?;
    let target = match &cfg.target {
        Target::OriginalLabel => original.label,
        Target::Label(l) if *l == original.label => l.clone(),
        Target::Label(l) => {
            return Err(ExplainError::NoExplanation(format!(
                "unmodified image is classified {}, not {l}",
                original.label
            )))
        }
    };

    let phase1_limit = cfg.budget - cfg.budget / 4;
    let mut landscape = ResponsibilityLandscape::new(h, w);
    let top_part = refine(&occluder, &mut budget, &target, cfg.seed, params, phase1_limit, &mut landscape)?;

    let averaged = landscape.saliency(params.landscape_sum);
    let centre = plateau_centre(&averaged);
    let side = top_part
        .map(|p| (p.area() as f64).sqrt().ceil() as usize)
        .unwrap_or(params.min_box)
        .max(params.min_box);
    let mut search = BoxSearch {
        occluder: &occluder,
        budget: &mut budget,
        target: &target,
        cache: HashMap::new(),
        shape: (h, w),
    };
    let box_rect = search.run(centre, side, params)?;
    let mask = match box_rect {
        Some(r) => BinaryMask::from_rect(h, w, r),
        None => BinaryMask::full(h, w),
    };
    Ok(RexOutput {
        landscape,
        mask,
        box_rect,
        target,
        occlusion,
        queries: budget.used(),
    })
}

/// Phase 1. Returns the part that received the largest single award.
fn refine(
    occluder: &Occluder<'_>,
    budget: &mut Budget<'_>,
    target: &str,
    seed: u64,
    params: &RexParams,
    limit: usize,
    landscape: &mut ResponsibilityLandscape,
) -> Result<Option<Rect>, ExplainError> {
    let (h, w) = occluder.image().shape();
    let min_area = params.min_part_side * params.min_part_side;
    // (award, part); higher award wins, then larger area, then first seen.
    let mut top: Option<(f64, Rect)> = None;
    let mut owner = vec![usize::MAX; h * w];

    'passes: for iteration in 0..params.iterations {
        let mut rect = Rect::full(h, w);
        let mut context = vec![false; h * w];
        for depth in 0u64.. {
            if rect.height() < 2 || rect.width() < 2 {
                break;
            }
            if budget.used() + SUBSETS > limit {
                break 'passes;
            }
            let part_seed = derive_seed(seed, Stream::RexPartition, ((iteration as u64) << 20) | depth);
            let parts = rex_partition(rect, part_seed)?.parts;
            for (p, part) in parts.iter().enumerate() {
                for r in part.row0..part.row1 {
                    for c in part.col0..part.col1 {
                        owner[r * w + c] = p;
                    }
                }
            }
            let mutants: Vec<Image> = (1..=SUBSETS)
                .map(|s| {
                    occluder.apply_with(|idx| {
                        context[idx] || (owner[idx] != usize::MAX && s & (1 << owner[idx]) != 0)
                    })
                })
                .collect();
            let preds = budget.query(&mutants)?;
            let mut sufficient = [false; SUBSETS + 1];
            for (s, p) in (1..=SUBSETS).zip(&preds) {
                sufficient[s] = p.label == target;
            }
            let minimal: Vec<usize> = (1..=SUBSETS)
                .filter(|&s| sufficient[s] && !(1..s).any(|t| t & s == t && sufficient[t]))
                .collect();

            for r in rect.row0..rect.row1 {
                for c in rect.col0..rect.col1 {
                    landscape.visits[r * w + c] += 1;
                }
            }
            // Reset ownership before any early exit.
            for part in &parts {
                for r in part.row0..part.row1 {
                    for c in part.col0..part.col1 {
                        owner[r * w + c] = usize::MAX;
                    }
                }
            }
            if minimal.is_empty() {
                break;
            }

            let mut awards = [0.0; 4];
            for &s in &minimal {
                let size = s.count_ones() as f64;
                let credit = match params.award {
                    Award::InverseSize => 1.0 / size,
                    Award::Unit => 1.0,
                };
                for (p, a) in awards.iter_mut().enumerate() {
                    if s & (1 << p) != 0 {
                        *a += credit;
                    }
                }
            }
            for (part, &a) in parts.iter().zip(&awards) {
                if a == 0.0 {
                    continue;
                }
                for r in part.row0..part.row1 {
                    for c in part.col0..part.col1 {
                        landscape.accumulated[r * w + c] += a;
                    }
                }
                let better = match top {
                    None => true,
                    Some((ta, tp)) => a > ta || (a == ta && part.area() > tp.area()),
                };
                if better {
                    top = Some((a, *part));
                }
            }

            // Highest award; ties go to the smallest row-major origin.
            let star = (0..4)
                .filter(|&p| awards[p] > 0.0)
                .min_by(|&a, &b| {
                    awards[b]
                        .total_cmp(&awards[a])
                        .then((parts[a].row0, parts[a].col0).cmp(&(parts[b].row0, parts[b].col0)))
                })
                .expect("some part is in a minimal set");
            let star_set = minimal
                .iter()
                .copied()
                .filter(|s| s & (1 << star) != 0)
                .min_by_key(|s| (s.count_ones(), *s))
                .expect("star belongs to a minimal set");
            for (q, part) in parts.iter().enumerate() {
                if q != star && star_set & (1 << q) != 0 {
                    for r in part.row0..part.row1 {
                        for c in part.col0..part.col1 {
                            context[r * w + c] = true;
                        }
                    }
                }
            }
            rect = parts[star];
            if rect.area() <= min_area {
                break;
            }
        }
    }
    Ok(top.map(|(_, r)| r))
}

/// Centroid of the pixels attaining the maximum, rounded to the nearest
/// pixel. Plain argmax would pick the first pixel of a flat peak.
fn plateau_centre(map: &SaliencyMap) -> (usize, usize) {
    let (_, hi) = map.min_max();
    let w = map.width();
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for (idx, &v) in map.values().iter().enumerate() {
        if v == hi {
            sr += (idx / w) as f64;
            sc += (idx % w) as f64;
            n += 1.0;
        }
    }
    ((sr / n).round() as usize, (sc / n).round() as usize)
}

struct BoxSearch<'a, 'b> {
    occluder: &'a Occluder<'a>,
    budget: &'a mut Budget<'b>,
    target: &'a str,
    cache: HashMap<Rect, bool>,
    shape: (usize, usize),
}

impl BoxSearch<'_, '_> {
    /// `None` once the budget is spent.
    fn passes(&mut self, rect: Rect) -> Result<Option<bool>, ExplainError> {
        if let Some(&p) = self.cache.get(&rect) {
            return Ok(Some(p));
        }
        if self.budget.remaining() == 0 {
            return Ok(None);
        }
        let (h, w) = self.shape;
        let mutant = self.occluder.apply(&BinaryMask::from_rect(h, w, rect))?;
        let pass = self.budget.query_one(&mutant)?.label == self.target;
        self.cache.insert(rect, pass);
        Ok(Some(pass))
    }

    /// A `side`-square box around `centre`, shifted to lie inside the image.
    fn centred(&self, centre: (usize, usize), side: usize) -> Rect {
        let (h, w) = self.shape;
        let (sh, sw) = (side.min(h), side.min(w));
        let r0 = centre.0.saturating_sub(sh / 2).min(h - sh);
        let c0 = centre.1.saturating_sub(sw / 2).min(w - sw);
        Rect::new(r0, c0, r0 + sh, c0 + sw)
    }

    fn moves(&self, rect: Rect, step: usize) -> Vec<Rect> {
        let (h, w) = self.shape;
        let (rh, rw) = (rect.height(), rect.width());
        let shift = |r0: usize, c0: usize| Rect::new(r0, c0, r0 + rh, c0 + rw);
        let mut out = vec![
            shift(rect.row0.saturating_sub(step), rect.col0),
            shift((rect.row0 + step).min(h - rh), rect.col0),
            shift(rect.row0, rect.col0.saturating_sub(step)),
            shift(rect.row0, (rect.col0 + step).min(w - rw)),
        ];
        out.retain(|r| *r != rect);
        out.dedup();
        out
    }

    /// Boxes of side `side − step` inside `rect`, centred one first.
    fn shrinks(&self, rect: Rect, side: usize) -> Vec<Rect> {
        let (h, w) = self.shape;
        let (sh, sw) = (side.min(h).min(rect.height()), side.min(w).min(rect.width()));
        let (dr, dc) = (rect.height() - sh, rect.width() - sw);
        let offsets = |d: usize| [d / 2, 0, d];
        let mut out: Vec<Rect> = Vec::new();
        for or in offsets(dr) {
            for oc in offsets(dc) {
                let r = Rect::new(rect.row0 + or, rect.col0 + oc, rect.row0 + or + sh, rect.col0 + oc + sw);
                if !out.contains(&r) {
                    out.push(r);
                }
            }
        }
        out
    }

    fn run(
        &mut self,
        centre: (usize, usize),
        side: usize,
        params: &RexParams,
    ) -> Result<Option<Rect>, ExplainError> {
        let (h, w) = self.shape;
        let step = params.box_step;
        let mut side = side;
        let mut cur = self.centred(centre, side);

        // Grow or move until some box passes.
        let mut best = loop {
            match self.passes(cur)? {
                None => return Ok(None),
                Some(true) => break cur,
                Some(false) => {}
            }
            let mut found = None;
            for cand in self.moves(cur, step) {
                match self.passes(cand)? {
                    None => return Ok(None),
                    Some(true) => {
                        found = Some(cand);
                        break;
                    }
                    Some(false) => {}
                }
            }
            if let Some(f) = found {
                break f;
            }
            if cur.height() == h && cur.width() == w {
                return Ok(None);
            }
            side += step;
            let mid = ((cur.row0 + cur.row1) / 2, (cur.col0 + cur.col1) / 2);
            cur = self.centred(mid, side);
        };

        // Shrink while a smaller neighbour still passes.
        side = best.height().max(best.width());
        while side > params.min_box {
            let next_side = side.saturating_sub(step).max(params.min_box);
            let mut next = None;
            for cand in self.shrinks(best, next_side) {
                match self.passes(cand)? {
                    None => return Ok(Some(best)),
                    Some(true) => {
                        next = Some(cand);
                        break;
                    }
                    Some(false) => {}
                }
            }
            match next {
                Some(n) if n != best => {
                    best = n;
                    side = next_side;
                }
                _ => break,
            }
        }
        Ok(Some(best))
    }
}
