//! 8-connected region growing on row-major grids.

use std::collections::VecDeque;

/// In-bounds 8-neighbours of `index` on an `height x width` grid.
pub fn neighbors8(index: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((index / width) as isize, (index % width) as isize);
    (-1isize..=1)
        .flat_map(move |dr| (-1isize..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dr, dc)| {
            let (nr, nc) = (r + dr, c + dc);
            (nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width)
                .then(|| nr as usize * width + nc as usize)
        })
}

/// Pixels reachable from `seed` through pixels satisfying `inside`, sorted.
///
/// Returns an empty set when the seed itself fails `inside`.
pub fn flood_fill(
    height: usize,
    width: usize,
    seed: usize,
    inside: impl Fn(usize) -> bool,
) -> Vec<usize> {
    if !inside(seed) {
        return Vec::new();
    }
    let mut seen = vec![false; height * width];
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    let mut region = Vec::new();
    while let Some(p) = queue.pop_front() {
        region.push(p);
        for q in neighbors8(p, height, width) {
            if !seen[q] && inside(q) {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    region.sort_unstable();
    region
}

/// Connected components of `mask`, ordered by their first pixel in raster order.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), height * width);
    let mut assigned = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || assigned[start] {
            continue;
        }
        let region = flood_fill(height, width, start, |q| mask[q]);
        for &p in &region {
            assigned[p] = true;
        }
        out.push(region);
    }
    out
}
